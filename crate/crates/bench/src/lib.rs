//! Criterion benchmarks for the hot kernels of `forrelation-core`; see `benches/`.
