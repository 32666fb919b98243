// mdbook cannot run listings that need a dependency, so every chapter is
// pulled in as a module doc and `cargo test --doc` runs them. One module per
// chapter keeps failures traceable to their file.

#[doc = include_str!("src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("src/data.md")]
pub mod data {}
#[doc = include_str!("src/nn.md")]
pub mod nn {}
#[doc = include_str!("src/federation.md")]
pub mod federation {}
#[doc = include_str!("src/generators.md")]
pub mod generators {}
#[doc = include_str!("src/diffusion.md")]
pub mod diffusion {}
#[doc = include_str!("src/metrics.md")]
pub mod metrics {}
#[doc = include_str!("src/formats.md")]
pub mod formats {}
#[doc = include_str!("src/cli.md")]
pub mod cli {}
