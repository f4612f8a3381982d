//! Joint segmentation and inter-slice linking of anisotropic image stacks.
//!
//! Each slice is segmented at a decreasing series of foreground prior weights;
//! the connected components of those segmentations nest into per-slice
//! component trees whose nodes are competing segmentation hypotheses. Every
//! admissible continuation, split, merge, appearance and disappearance between
//! hypotheses of adjacent slices becomes a binary variable, and a single 0-1
//! integer linear program over the whole stack selects a consistent subset of
//! hypotheses together with their links.

pub mod assignment_model;
pub mod component_forest;
pub mod error;
pub mod evaluation;
pub mod ilp_solver;
pub mod image_model;
pub mod pipeline;
pub mod segmentation;
pub mod synthetic_data;

pub use error::{Error, ErrorKind, Result};
