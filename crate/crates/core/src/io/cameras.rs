//! Camera sets: a small JSON schema, or a COLMAP text model.
//!
//! JSON layout (image paths relative to the JSON file):
//!
//! ```json
//! { "cameras": [ { "image": "images/v0.png", "width": 64, "height": 64,
//!                  "fx": 80.0, "fy": 80.0, "cx": 32.0, "cy": 32.0,
//!                  "rotation": [[1,0,0],[0,1,0],[0,0,1]],
//!                  "translation": [0,0,4], "split": "train" } ] }
//! ```
//!
//! `rotation` and `translation` map world to camera coordinates (x right,
//! y down, z forward). `split` is `train` or `test` and defaults to `train`;
//! `near_clip` is optional.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{HgsError, Result};
use crate::geometry::{quat_to_rotation, CameraModel};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CameraEntry {
    /// Image path, resolved against the camera file's location.
    pub image: PathBuf,
    pub camera: CameraModel,
    pub split: Split,
}

impl CameraEntry {
    /// File stem of the image, used as the view name.
    pub fn name(&self) -> String {
        self.image
            .file_stem()
            .map_or_else(|| self.image.display().to_string(), |s| s.to_string_lossy().into_owned())
    }
}

#[derive(Serialize, Deserialize)]
struct JsonCamera {
    image: String,
    width: u32,
    height: u32,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
    #[serde(default)]
    split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    near_clip: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct JsonCameraSet {
    cameras: Vec<JsonCamera>,
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> HgsError {
    HgsError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| HgsError::io(path, e))
}

/// 1-based line of the `n`-th occurrence of `needle`, or 0.
fn line_of_occurrence(text: &str, needle: &str, n: usize) -> usize {
    text.match_indices(needle)
        .nth(n)
        .map_or(0, |(at, _)| text[..at].matches('\n').count() + 1)
}

pub fn parse_cameras_json(text: &str, path: &Path) -> Result<Vec<CameraEntry>> {
    let set: JsonCameraSet =
        serde_json::from_str(text).map_err(|e| parse_error(path, e.line(), e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut out = Vec::with_capacity(set.cameras.len());
    for c in set.cameras {
        let needle = format!("\"{}\"", c.image);
        let k = seen.entry(c.image.clone()).or_insert(0);
        *k += 1;
        let line = line_of_occurrence(text, &needle, *k - 1);
        if *k > 1 {
            return Err(parse_error(path, line, format!("duplicate image `{}`", c.image)));
        }
        let rot = Matrix3::from_fn(|r, col| c.rotation[r][col]);
        let mut cam = CameraModel::new(
            rot,
            Vector3::from(c.translation),
            c.fx,
            c.fy,
            c.cx,
            c.cy,
            c.width,
            c.height,
        )
        .map_err(|e| parse_error(path, line, e.to_string()))?;
        if let Some(n) = c.near_clip {
            if !(n > 0.0) {
                return Err(parse_error(path, line, "near_clip must be positive"));
            }
            cam.near_clip = n;
        }
        out.push(CameraEntry {
            image: base.join(&c.image),
            camera: cam,
            split: c.split,
        });
    }
    out.sort_by(|a, b| a.image.cmp(&b.image));
    Ok(out)
}

/// Writes `entries` in the JSON schema; image paths are stored relative to
/// the directory of `path` when possible.
pub fn save_cameras_json(entries: &[CameraEntry], path: &Path) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new(""));
    let cameras = entries
        .iter()
        .map(|e| {
            let rel = e.image.strip_prefix(base).unwrap_or(&e.image);
            let r = e.camera.rotation;
            JsonCamera {
                image: rel.to_string_lossy().replace('\\', "/"),
                width: e.camera.width,
                height: e.camera.height,
                fx: e.camera.fx,
                fy: e.camera.fy,
                cx: e.camera.cx,
                cy: e.camera.cy,
                rotation: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]),
                translation: [e.camera.translation.x, e.camera.translation.y, e.camera.translation.z],
                split: e.split,
                near_clip: (e.camera.near_clip != crate::geometry::DEFAULT_NEAR_CLIP).then_some(e.camera.near_clip),
            }
        })
        .collect();
    let text = serde_json::to_string_pretty(&JsonCameraSet { cameras }).expect("camera set serializes");
    std::fs::write(path, text + "\n").map_err(|e| HgsError::io(path, e))
}

struct ColmapIntrinsics {
    width: u32,
    height: u32,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
}

fn numbers<T: std::str::FromStr>(tok: &[&str], path: &Path, line: usize) -> Result<Vec<T>> {
    tok.iter()
        .map(|t| t.parse::<T>().map_err(|_| parse_error(path, line, format!("cannot parse `{t}`"))))
        .collect()
}

fn parse_colmap_cameras(text: &str, path: &Path) -> Result<HashMap<u32, ColmapIntrinsics>> {
    let mut out = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let tok: Vec<&str> = l.split_whitespace().collect();
        if tok.len() < 4 {
            return Err(parse_error(path, line, "expected CAMERA_ID MODEL WIDTH HEIGHT PARAMS"));
        }
        let id: u32 = numbers(&tok[..1], path, line)?[0];
        let size: Vec<u32> = numbers(&tok[2..4], path, line)?;
        let params: Vec<f64> = numbers(&tok[4..], path, line)?;
        let (fx, fy, cx, cy) = match (tok[1], params.len()) {
            ("SIMPLE_PINHOLE", 3) => (params[0], params[0], params[1], params[2]),
            ("PINHOLE", 4) => (params[0], params[1], params[2], params[3]),
            ("SIMPLE_PINHOLE" | "PINHOLE", n) => {
                return Err(parse_error(path, line, format!("{} takes a different parameter count than {n}", tok[1])))
            }
            (other, _) => return Err(HgsError::UnsupportedCameraModel(other.to_string())),
        };
        if out.contains_key(&id) {
            return Err(parse_error(path, line, format!("duplicate camera id {id}")));
        }
        out.insert(
            id,
            ColmapIntrinsics {
                width: size[0],
                height: size[1],
                fx,
                fy,
                cx,
                cy,
            },
        );
    }
    Ok(out)
}

/// Every eighth view (by sorted image name) is held out for testing.
pub const COLMAP_TEST_EVERY: usize = 8;

/// Reads `cameras.txt` and `images.txt` from a COLMAP text model directory.
/// Images are looked up in an `images` directory next to the model, or one
/// or two levels up (the usual `sparse/0` layout).
pub fn load_colmap(dir: &Path) -> Result<Vec<CameraEntry>> {
    let cam_path = dir.join("cameras.txt");
    let img_path = dir.join("images.txt");
    let intr = parse_colmap_cameras(&read_text(&cam_path)?, &cam_path)?;
    let text = read_text(&img_path)?;
    let image_root = [dir.join("images"), dir.join("../images"), dir.join("../../images")]
        .into_iter()
        .find(|p| p.is_dir())
        .unwrap_or_else(|| dir.join("images"));

    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut out = Vec::new();
    let mut expect_points = false;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim_start().starts_with('#') {
            continue;
        }
        // every image line is followed by a (possibly empty) keypoint line
        if expect_points {
            expect_points = false;
            continue;
        }
        let l = raw.trim();
        if l.is_empty() {
            continue;
        }
        let tok: Vec<&str> = l.split_whitespace().collect();
        if tok.len() < 10 {
            return Err(parse_error(
                &img_path,
                line,
                "expected IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME",
            ));
        }
        let q: Vec<f64> = numbers(&tok[1..5], &img_path, line)?;
        let t: Vec<f64> = numbers(&tok[5..8], &img_path, line)?;
        let cam_id: u32 = numbers(&tok[8..9], &img_path, line)?[0];
        let name = tok[9..].join(" ");
        if let Some(first) = seen.insert(name.clone(), line) {
            return Err(parse_error(
                &img_path,
                line,
                format!("image `{name}` already listed on line {first}"),
            ));
        }
        let k = intr
            .get(&cam_id)
            .ok_or_else(|| parse_error(&img_path, line, format!("unknown camera id {cam_id}")))?;
        let quat = Vector4::new(q[0], q[1], q[2], q[3]);
        if quat.norm() == 0.0 {
            return Err(parse_error(&img_path, line, "zero quaternion"));
        }
        let cam = CameraModel::new(
            quat_to_rotation(&quat),
            Vector3::new(t[0], t[1], t[2]),
            k.fx,
            k.fy,
            k.cx,
            k.cy,
            k.width,
            k.height,
        )
        .map_err(|e| parse_error(&img_path, line, e.to_string()))?;
        out.push((name, cam));
        expect_points = true;
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out
        .into_iter()
        .enumerate()
        .map(|(i, (name, camera))| CameraEntry {
            image: image_root.join(name),
            camera,
            split: if i % COLMAP_TEST_EVERY == 0 { Split::Test } else { Split::Train },
        })
        .collect())
}

/// Loads a camera set from a JSON file, a COLMAP model directory, or a
/// dataset directory containing `cameras.json` or `sparse/0`.
pub fn load_cameras(path: &Path) -> Result<Vec<CameraEntry>> {
    if path.is_dir() {
        if path.join("cameras.json").is_file() {
            return load_cameras(&path.join("cameras.json"));
        }
        for model in [path.to_path_buf(), path.join("sparse/0"), path.join("sparse")] {
            if model.join("cameras.txt").is_file() && model.join("images.txt").is_file() {
                return load_colmap(&model);
            }
        }
        return Err(HgsError::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no cameras.json or COLMAP text model"),
        ));
    }
    parse_cameras_json(&read_text(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) {
        std::fs::write(dir.join(name), text).unwrap();
    }

    #[test]
    fn colmap_simple_pinhole() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "cameras.txt", "# comment\n1 SIMPLE_PINHOLE 64 64 100 32 32\n");
        write(
            dir.path(),
            "images.txt",
            "# IMAGE_ID ...\n# POINTS2D ...\n1 1 0 0 0 0 0 0 1 a.png\n\n2 1 0 0 0 0 0 1 1 b.png\n10 20 -1\n",
        );
        let cams = load_cameras(dir.path()).unwrap();
        assert_eq!(cams.len(), 2);
        let c = &cams[0].camera;
        assert_eq!((c.fx, c.fy, c.cx, c.cy, c.width, c.height), (100.0, 100.0, 32.0, 32.0, 64, 64));
        assert_eq!(c.world_to_cam(), nalgebra::Matrix4::identity());
        assert_eq!(cams[0].split, Split::Test);
        assert_eq!(cams[1].split, Split::Train);
        assert_eq!(cams[1].camera.translation, Vector3::new(0.0, 0.0, 1.0));
        assert_eq!(cams[0].name(), "a");
    }

    #[test]
    fn colmap_rejects_radial_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "cameras.txt", "1 RADIAL 64 64 100 32 32 0 0\n");
        write(dir.path(), "images.txt", "1 1 0 0 0 0 0 0 1 a.png\n\n");
        assert!(matches!(load_colmap(dir.path()), Err(HgsError::UnsupportedCameraModel(m)) if m == "RADIAL"));

        write(dir.path(), "cameras.txt", "1 PINHOLE 64 64 100 90 32 32\n");
        write(
            dir.path(),
            "images.txt",
            "1 1 0 0 0 0 0 0 1 a.png\n\n2 1 0 0 0 0 0 0 1 a.png\n\n",
        );
        match load_colmap(dir.path()) {
            Err(HgsError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn json_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let cam = CameraModel::look_at(
            Vector3::new(1.0, -0.5, -4.0),
            Vector3::zeros(),
            Vector3::new(0.0, -1.0, 0.0),
            70.0,
            48,
            40,
        )
        .unwrap();
        let entries = vec![
            CameraEntry {
                image: dir.path().join("images/b.png"),
                camera: cam.clone(),
                split: Split::Test,
            },
            CameraEntry {
                image: dir.path().join("images/a.png"),
                camera: cam,
                split: Split::Train,
            },
        ];
        let path = dir.path().join("cameras.json");
        save_cameras_json(&entries, &path).unwrap();
        let back = load_cameras(dir.path()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0], entries[1]);
        assert_eq!(back[1], entries[0]);

        let text = std::fs::read_to_string(&path).unwrap().replace("images/b.png", "images/a.png");
        match parse_cameras_json(&text, &path) {
            Err(HgsError::Parse { line, message, .. }) => {
                assert!(line > 1);
                assert!(message.contains("duplicate"));
            }
            other => panic!("{other:?}"),
        }
        match parse_cameras_json("{\n \"cameras\": [\n  { \"image\": 3 }\n ]\n}", &path) {
            Err(HgsError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }
}
