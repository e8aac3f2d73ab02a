//! The guide's chapters as doc comments, so `cargo test` runs every snippet.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/integrands.md")]
pub mod integrands {}

#[doc = include_str!("../../../book/src/random-fields.md")]
pub mod random_fields {}

#[doc = include_str!("../../../book/src/cell-problems.md")]
pub mod cell_problems {}

#[doc = include_str!("../../../book/src/structure.md")]
pub mod structure {}

#[doc = include_str!("../../../book/src/boundary-value-problems.md")]
pub mod boundary_value_problems {}

#[doc = include_str!("../../../book/src/cutoffs.md")]
pub mod cutoffs {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
