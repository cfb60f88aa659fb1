//! Embodied question answering over simulated indoor rooms: scene graphs,
//! semantic voxel memory, grid navigation, a template question grammar,
//! referring-expression comprehension and an end-to-end episode pipeline.

pub mod comprehension;
pub mod dataset;
pub mod geometry;
pub mod language;
pub mod navigation;
pub mod pipeline;
pub mod scene_graph;
pub mod semantic_memory;
pub mod vocab;
pub mod world;

pub use geometry::{iou3d, Box3, Vec3};
pub use vocab::{ObjType, Relation, RoomType};
pub use world::{Cell, FreeMask, Heading, ObjectId, World};
