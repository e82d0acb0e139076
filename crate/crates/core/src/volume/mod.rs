//! Dense volumes and the voxel-level operations built on them.

mod edt;
mod grid;
mod marching_cubes;
mod mesh;
mod morphology;
pub mod nvol;
mod sample;

pub use edt::{edt, squared_edt_bits};
pub use grid::{center_crop, window_normalize, VolumeGrid, VolumeKind};
pub use marching_cubes::{case_triangle_counts, marching_cubes};
pub use mesh::{MeshFormat, TriangleMesh};
pub use morphology::{
    boundary_bits, closing_bits, connected_components, dilate, dilate_bits, erode, erode_bits,
    filter_components_bits, label_components, morphological_close, Keep,
};
pub use sample::{
    continuous_index, jitter, meshgrid, nearest_label, trilinear_sample, voxel_coord, NormalizedPoint, Stencil,
};
