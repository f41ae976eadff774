//! Runs the guide's code samples as doctests so the book cannot drift
//! from the library. Each chapter of `book/src` is attached to a hidden
//! module; `cargo test --doc` compiles and executes every Rust block.

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/collaborative-filtering.md")]
    mod collaborative_filtering {}
    #[doc = include_str!("../../../book/src/survival-features.md")]
    mod survival_features {}
    #[doc = include_str!("../../../book/src/survival-models.md")]
    mod survival_models {}
    #[doc = include_str!("../../../book/src/reranking.md")]
    mod reranking {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/tuning.md")]
    mod tuning {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
}
