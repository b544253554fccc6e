pub mod attribution;
pub mod csvout;
pub mod engine;
pub mod error;
pub mod faithfulness;
pub mod graph;
pub mod ops;
pub mod sanity;
pub mod seed;
pub mod simmetrics;
pub mod tensor;
pub mod theory;
pub mod zoo;

pub use error::{Error, Result};
pub use tensor::Tensor;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/graphs.md")]
    mod graphs {}
    #[doc = include_str!("../../../book/src/attribution.md")]
    mod attribution {}
    #[doc = include_str!("../../../book/src/similarity.md")]
    mod similarity {}
    #[doc = include_str!("../../../book/src/sanity.md")]
    mod sanity {}
    #[doc = include_str!("../../../book/src/faithfulness.md")]
    mod faithfulness {}
    #[doc = include_str!("../../../book/src/theory.md")]
    mod theory {}
    #[doc = include_str!("../../../book/src/seeds.md")]
    mod seeds {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
