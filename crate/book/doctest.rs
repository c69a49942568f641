// mdbook can't run the listings, so every chapter becomes a module here and
// `cargo test --doc -p enet-book` runs them.

#[doc = include_str!("src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("src/channels.md")]
pub mod channels {}
#[doc = include_str!("src/angular_delay.md")]
pub mod angular_delay {}
#[doc = include_str!("src/correlation.md")]
pub mod correlation {}
#[doc = include_str!("src/network.md")]
pub mod network {}
#[doc = include_str!("src/training.md")]
pub mod training {}
#[doc = include_str!("src/cli.md")]
pub mod cli {}
