use std::fmt::Write;

use super::{EvalReport, SegmentError, Statistics};

/// One table row: the evaluation of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub run: String,
    pub mode: String,
    /// Stereo baseline in meters.
    pub baseline: Option<f64>,
    /// `None` when the run failed.
    pub report: Option<EvalReport>,
    pub segments: Vec<SegmentError>,
}

fn cell(distance: Option<Statistics>, heading: Option<Statistics>, pick: fn(&Statistics) -> f64, skipped: usize) -> String {
    match (distance, heading) {
        (Some(d), Some(h)) => format!("{:.3} / {:.4}", pick(&d), pick(&h)),
        _ => format!("n/a ({skipped} skipped)"),
    }
}

/// Renders an aligned text table (one row per entry of `rows`, a median and
/// an RMSE column per segment length, cells "distance % / heading deg/m")
/// and a per-segment CSV. Failed rows show "failed" in every cell.
pub fn render_report(rows: &[ReportRow]) -> (String, String) {
    let mut lengths: Vec<f64> = Vec::new();
    for r in rows.iter().filter_map(|r| r.report.as_ref()) {
        for l in &r.lengths {
            if !lengths.iter().any(|x| (x - l.length).abs() < 1e-9) {
                lengths.push(l.length);
            }
        }
    }
    let mut header = vec!["mode".to_string(), "baseline".to_string()];
    for l in &lengths {
        header.push(format!("{l}m median"));
        header.push(format!("{l}m RMSE"));
    }
    let mut table: Vec<Vec<String>> = vec![header];
    for r in rows {
        let mut line = vec![r.mode.clone(), r.baseline.map_or("-".into(), |b| format!("{b:.2}"))];
        for l in &lengths {
            let Some(report) = &r.report else {
                line.extend(["failed".to_string(), "failed".to_string()]);
                continue;
            };
            match report.lengths.iter().find(|x| (x.length - l).abs() < 1e-9) {
                Some(x) => {
                    line.push(cell(x.distance, x.heading, |s| s.median, x.skipped));
                    line.push(cell(x.distance, x.heading, |s| s.rmse, x.skipped));
                }
                None => line.extend(["-".to_string(), "-".to_string()]),
            }
        }
        table.push(line);
    }
    let widths: Vec<usize> =
        (0..table[0].len()).map(|c| table.iter().map(|row| row[c].len()).max().unwrap_or(0)).collect();
    let mut text = String::new();
    for row in &table {
        let cells: Vec<String> = row.iter().zip(&widths).map(|(v, w)| format!("{v:<w$}")).collect();
        let _ = writeln!(text, "{}", cells.join("  ").trim_end());
    }

    let mut csv = String::from("run,mode,baseline,L,start_arclength,dist_pct,head_degpm\n");
    for r in rows {
        for s in &r.segments {
            let baseline = r.baseline.map_or(String::new(), |b| b.to_string());
            let _ = writeln!(
                csv,
                "{},{},{},{},{:.3},{:.6},{:.8}",
                r.run, r.mode, baseline, s.length, s.start_arclength, s.distance_pct, s.heading_degpm
            );
        }
    }
    (text, csv)
}
