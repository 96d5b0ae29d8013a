// mdbook cannot run listings that depend on an external crate, so every
// chapter is pulled in as the docs of an empty module and `cargo test --doc`
// checks the snippets. One module per chapter keeps failures traceable to a
// file.

#[doc = include_str!("../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../book/src/tensors.md")]
pub mod tensors {}
#[doc = include_str!("../../book/src/convlstm.md")]
pub mod convlstm {}
#[doc = include_str!("../../book/src/training.md")]
pub mod training {}
#[doc = include_str!("../../book/src/synthetic-data.md")]
pub mod synthetic_data {}
#[doc = include_str!("../../book/src/anomaly.md")]
pub mod anomaly {}
#[doc = include_str!("../../book/src/cli.md")]
pub mod cli {}
