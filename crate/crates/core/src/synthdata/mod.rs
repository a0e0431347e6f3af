//! Synthetic scenes of coloured objects made of parts, with exact ground
//! truth, a region-proposal generator and a binary dataset format.

mod dataset;
mod proposals;
mod scene;

pub use dataset::{
    dataset_from_bytes, dataset_to_bytes, read_dataset, write_dataset, DATASET_MAGIC,
    DATASET_VERSION,
};
pub use proposals::{propose_regions, propose_regions_with, ProposalConfig, RegionSet};
pub use scene::{generate_scene, generate_scenes, Object, Part, Scene, SceneSpec, MIN_BOX_SIDE};
