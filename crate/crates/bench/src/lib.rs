//! Criterion benchmarks for `domexp-core`; run with `cargo bench -p domexp-bench`.
