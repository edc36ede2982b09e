use super::SimulatorError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SpeedElement {
    Hold { speed: f64, duration: f64 },
    Ramp { from: f64, to: f64, duration: f64 },
}

impl SpeedElement {
    fn duration(&self) -> f64 {
        match *self {
            SpeedElement::Hold { duration, .. } | SpeedElement::Ramp { duration, .. } => duration,
        }
    }

    fn start_speed(&self) -> f64 {
        match *self {
            SpeedElement::Hold { speed, .. } => speed,
            SpeedElement::Ramp { from, .. } => from,
        }
    }

    fn end_speed(&self) -> f64 {
        match *self {
            SpeedElement::Hold { speed, .. } => speed,
            SpeedElement::Ramp { to, .. } => to,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SpeedProfileSpec {
    pub elements: Vec<SpeedElement>,
}

impl SpeedProfileSpec {
    pub fn hold(mut self, speed: f64, duration: f64) -> Self {
        self.elements.push(SpeedElement::Hold { speed, duration });
        self
    }

    pub fn ramp(mut self, from: f64, to: f64, duration: f64) -> Self {
        self.elements.push(SpeedElement::Ramp { from, to, duration });
        self
    }

    pub fn validate(&self) -> Result<(), SimulatorError> {
        if self.elements.is_empty() {
            return Err(SimulatorError::InvalidProfile("profile has no elements".into()));
        }
        for (i, e) in self.elements.iter().enumerate() {
            if !(e.duration() > 0.0) || !e.duration().is_finite() {
                return Err(SimulatorError::InvalidProfile(format!("element {i}: duration must be > 0")));
            }
            if !(e.start_speed() >= 0.0) || !(e.end_speed() >= 0.0) {
                return Err(SimulatorError::InvalidProfile(format!("element {i}: negative speed")));
            }
        }
        for (i, w) in self.elements.windows(2).enumerate() {
            if (w[0].end_speed() - w[1].start_speed()).abs() > 1e-9 {
                return Err(SimulatorError::InvalidProfile(format!(
                    "speed jumps from {} to {} between elements {i} and {}",
                    w[0].end_speed(),
                    w[1].start_speed(),
                    i + 1
                )));
            }
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.elements.iter().map(SpeedElement::duration).sum()
    }

    pub fn total_distance(&self) -> f64 {
        self.elements.iter().map(|e| 0.5 * (e.start_speed() + e.end_speed()) * e.duration()).sum()
    }

    /// (distance, speed, tangential acceleration) at time `t`, clamped to
    /// the profile's duration.
    pub fn state_at(&self, t: f64) -> (f64, f64, f64) {
        let mut t0 = 0.0;
        let mut s0 = 0.0;
        let last = self.elements.len() - 1;
        for (i, e) in self.elements.iter().enumerate() {
            let d = e.duration();
            if t <= t0 + d || i == last {
                let u = (t - t0).clamp(0.0, d);
                return match *e {
                    SpeedElement::Hold { speed, .. } => (s0 + speed * u, speed, 0.0),
                    SpeedElement::Ramp { from, to, duration } => {
                        let a = (to - from) / duration;
                        (s0 + from * u + 0.5 * a * u * u, from + a * u, a)
                    }
                };
            }
            s0 += 0.5 * (e.start_speed() + e.end_speed()) * d;
            t0 += d;
        }
        unreachable!("profile validated non-empty")
    }
}
