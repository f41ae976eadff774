//! Course recommendations re-ranked by time-to-event risk.
//!
//! `survrec` trains collaborative-filtering recommenders on a binary
//! enrollment matrix, trains survival models on time-to-dropout and
//! time-to-completion, and re-orders each user's most probable enrollments
//! by survival-risk rank aggregation. The pipeline has three steps:
//!
//! 1. fit a collaborative-filtering model on the enrollment matrix and keep
//!    each user's `l` highest-scored unseen courses;
//! 2. fit one survival model per event definition (completion, dropout) on
//!    the observed interactions and rank every unseen course by predicted
//!    risk (descending for completion, ascending for dropout), optionally
//!    aggregating the two rankings by average position;
//! 3. re-order the `l` candidates by the survival ranking and keep the
//!    top `k`.
//!
//! The [`pipeline`] module runs all three steps from a config file; the
//! other modules expose the pieces individually. The `book/` directory of
//! the repository walks through the concepts chapter by chapter.
//!
//! ```
//! use survrec::data::{self, EventKind};
//!
//! let csv = "user_id,item_id,elapsed_days,event\n\
//!            ada,rust-101,3.0,c\n\
//!            ada,calc-2,10.0,d\n\
//!            grace,rust-101,5.0,c\n";
//! let records = data::load_interactions(csv.as_bytes())?;
//! let matrix = data::normalize_times(&records)?;
//! assert_eq!(matrix.n_users(), 2);
//! assert_eq!(matrix.n_courses(), 2);
//! let enrollment = data::binarize(&matrix);
//! assert_eq!(enrollment.n_cells(), 3);
//! # Ok::<(), survrec::Error>(())
//! ```

#![allow(clippy::needless_range_loop)]

pub mod cf;
pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod pipeline;
pub mod rerank;
pub mod survival;
pub mod tuning;

mod book;
mod linalg;

pub use error::{Error, Result};
