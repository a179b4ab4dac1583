//! Persistence: scene point files, camera sets, PNG images and point clouds.

mod cameras;
mod dataset;
pub mod ply;
mod png;
mod points;
mod scene;

pub use cameras::{load_cameras, load_colmap, parse_cameras_json, save_cameras_json, CameraEntry, Split, COLMAP_TEST_EVERY};
pub use dataset::{find_initial_model, load_any_model, load_dataset, model_kind, Dataset, ModelKind};
pub use png::{quantize, read_image, write_image};
pub use points::{
    init_from_points, load_point_cloud, mean_neighbor_distance, points_from_table, ColoredPoint, INITIAL_OPACITY,
    MIN_INITIAL_SCALE,
};
pub use scene::{
    export_3dgs, import_3dgs, import_3dgs_table, load_scene, property_names, sample_normal, save_scene,
    scene_from_table, scene_to_bytes, NormalInit,
};
