//! The managed sensing pipeline: payload types, the surrogate segmentation
//! model, and the lifecycle-managed processing nodes.

pub mod frames;
pub mod model;
pub mod nodes;
