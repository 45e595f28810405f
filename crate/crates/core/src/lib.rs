//! Relevance-aware mixture of domain experts.

pub mod autodiff;
pub mod cli;
pub mod inference;
pub mod losses;
pub mod meta;
pub mod model;
pub mod synthdata;
