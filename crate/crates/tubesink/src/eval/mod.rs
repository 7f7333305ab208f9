//! Frozen-feature evaluations: linear probing and unsupervised video object
//! segmentation.

pub mod hungarian;
pub mod kmeans;
pub mod probe;
pub mod segmentation;
