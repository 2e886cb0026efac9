//! Criterion benchmarks for the dsfq kernels live under `benches/`.
