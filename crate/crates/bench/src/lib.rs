//! Criterion benchmarks for the hot kernels of `sno-core`.
