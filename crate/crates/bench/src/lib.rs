//! Criterion benchmarks for the toolkit's hot kernels; see `benches/`.
