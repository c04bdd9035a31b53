//! Criterion benchmarks for roadsense-core live under `benches/`.
