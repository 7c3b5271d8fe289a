//! Criterion benchmarks for the monitor and the simulator; see `benches/`.
