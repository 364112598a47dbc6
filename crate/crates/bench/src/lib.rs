//! Criterion benchmarks for kpz-core live under `benches/`.
