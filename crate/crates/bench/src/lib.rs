//! Criterion benchmarks for the odometry pipeline; see `benches/`.
