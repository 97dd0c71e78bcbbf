//! Toolkit for evaluating text-completion models as general pattern
//! machines: sequence-transformation benchmarks (PCFG, ARC), sequence
//! completion with DTW scoring, and return-conditioned trajectory
//! improvement over small built-in environments.

pub mod arc;
pub mod codec;
pub mod completion;
pub mod environments;
pub mod improve;
pub mod models;
pub mod pcfg;
pub mod util;

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/tokens.md")]
    mod tokens {}
    #[doc = include_str!("../../../book/src/pcfg.md")]
    mod pcfg {}
    #[doc = include_str!("../../../book/src/arc.md")]
    mod arc {}
    #[doc = include_str!("../../../book/src/completion.md")]
    mod completion {}
    #[doc = include_str!("../../../book/src/environments.md")]
    mod environments {}
    #[doc = include_str!("../../../book/src/improvement.md")]
    mod improvement {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
}
