//! Dataset directories: a camera set, its images and an optional initial
//! model (`points.ply`).

use std::path::{Path, PathBuf};

use super::cameras::{load_cameras, Split};
use super::ply::{read_points, PointTable};
use super::png::read_image;
use super::points::{init_from_points, points_from_table};
use super::scene::{import_3dgs_table, scene_from_table, NormalInit};
use crate::error::{HgsError, Result};
use crate::geometry::Scene;
use crate::trainer::TrainView;

#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub train: Vec<TrainView>,
    pub test: Vec<TrainView>,
}

/// The conventional initial model next to a camera set, if present.
pub fn find_initial_model(data: &Path) -> Option<PathBuf> {
    let dir = if data.is_dir() { data } else { data.parent()? };
    ["points.ply", "sparse/0/points3D.ply"]
        .into_iter()
        .map(|n| dir.join(n))
        .find(|p| p.is_file())
}

/// Loads every camera of the set and its image. Image and camera sizes must
/// agree.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let entries = load_cameras(path)?;
    let mut ds = Dataset {
        root: path.to_path_buf(),
        train: Vec::new(),
        test: Vec::new(),
    };
    for e in entries {
        let image = read_image(&e.image)?;
        if image.width != e.camera.width as usize || image.height != e.camera.height as usize {
            return Err(HgsError::ShapeMismatch(format!(
                "{}: image is {}x{} but the camera is {}x{}",
                e.image.display(),
                image.width,
                image.height,
                e.camera.width,
                e.camera.height
            )));
        }
        let view = TrainView {
            name: e.name(),
            camera: e.camera,
            image,
        };
        match e.split {
            Split::Train => ds.train.push(view),
            Split::Test => ds.test.push(view),
        }
    }
    Ok(ds)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    /// Plain colored points.
    Points,
    /// Gaussian model with a single opacity.
    Gaussian,
    HalfGaussian,
}

pub fn model_kind(table: &PointTable) -> ModelKind {
    let h = &table.header;
    if h.index_of("opacity_2").is_some() {
        ModelKind::HalfGaussian
    } else if h.index_of("opacity").is_some() {
        ModelKind::Gaussian
    } else {
        ModelKind::Points
    }
}

/// Reads any of the three model kinds. Points are turned into primitives of
/// the given SH degree; Gaussian models get fresh normals.
pub fn load_any_model(path: &Path, sh_degree: usize, normal_init: NormalInit, seed: u64) -> Result<(Scene, ModelKind)> {
    let table = read_points(path)?;
    let kind = model_kind(&table);
    let scene = match kind {
        ModelKind::HalfGaussian => scene_from_table(&table)?,
        ModelKind::Gaussian => import_3dgs_table(&table, normal_init, seed)?,
        ModelKind::Points => init_from_points(&points_from_table(&table)?, sh_degree, seed)?,
    };
    Ok((scene, kind))
}
