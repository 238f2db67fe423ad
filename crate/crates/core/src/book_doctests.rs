//! Doctest anchors for the book chapters: every fenced Rust block in
//! `book/src/*.md` compiles and runs under `cargo test --doc`.

#[doc = include_str!("../../../book/src/introduction.md")]
mod introduction {}

#[doc = include_str!("../../../book/src/construction.md")]
mod construction {}

#[doc = include_str!("../../../book/src/truncation.md")]
mod truncation {}

#[doc = include_str!("../../../book/src/model.md")]
mod model {}

#[doc = include_str!("../../../book/src/variational.md")]
mod variational {}

#[doc = include_str!("../../../book/src/sampler.md")]
mod sampler {}

#[doc = include_str!("../../../book/src/files-and-cli.md")]
mod files_and_cli {}
