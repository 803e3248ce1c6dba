//! Criterion benchmarks for the idblend kernels; see `benches/`.
