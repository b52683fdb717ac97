//! Multi-model baselines: sequential RANSAC and T-Linkage.

pub mod ransac;
pub mod tlinkage;

pub use ransac::{ransac_single, sequential_ransac, RansacConfig, RansacModel};
pub use tlinkage::{tanimoto_distance, tlinkage_cluster, tlinkage_preference, TLinkageConfig};
