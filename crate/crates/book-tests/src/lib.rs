//! Compiles and runs every Rust block in the guide under `book/` as a
//! doc-test, so the book cannot drift from the library.
//!
//! Each module below carries one chapter as its documentation; the modules
//! are otherwise empty. `cargo test -p book-tests --doc` executes the
//! chapters' examples.

#[doc = include_str!("../../../book/src/overview.md")]
pub mod overview {}

#[doc = include_str!("../../../book/src/scripts.md")]
pub mod scripts {}

#[doc = include_str!("../../../book/src/segmentation.md")]
pub mod segmentation {}

#[doc = include_str!("../../../book/src/corruption.md")]
pub mod corruption {}

#[doc = include_str!("../../../book/src/statistics.md")]
pub mod statistics {}

#[doc = include_str!("../../../book/src/bleu.md")]
pub mod bleu {}

#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}

#[doc = include_str!("../../../book/src/pipeline.md")]
pub mod pipeline {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
