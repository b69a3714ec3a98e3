//! Every chapter of the guide is included as module documentation, so
//! `cargo test` compiles and runs its code blocks.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/numerics.md")]
pub mod numerics {}
#[doc = include_str!("../../../book/src/controller.md")]
pub mod controller {}
#[doc = include_str!("../../../book/src/policy.md")]
pub mod policy {}
#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}
#[doc = include_str!("../../../book/src/baselines.md")]
pub mod baselines {}
#[doc = include_str!("../../../book/src/benchmark.md")]
pub mod benchmark {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
