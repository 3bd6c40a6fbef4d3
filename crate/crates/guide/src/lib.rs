//! The book's chapters as rustdoc modules, so `cargo test` compiles and runs
//! every listing in `book/src`. mdbook cannot resolve crate dependencies in
//! its own test runner, hence this crate.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/quickstart.md")]
pub mod quickstart {}
#[doc = include_str!("../../../book/src/grid-files.md")]
pub mod grid_files {}
#[doc = include_str!("../../../book/src/measurements.md")]
pub mod measurements {}
#[doc = include_str!("../../../book/src/estimators.md")]
pub mod estimators {}
#[doc = include_str!("../../../book/src/injection-model.md")]
pub mod injection_model {}
#[doc = include_str!("../../../book/src/benchmarks.md")]
pub mod benchmarks {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
