//! Dataset directories (`view_###.png`, `mask_###.png`, `cameras.json`,
//! optional `caption.txt`) and the bundled synthetic toy scenes.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::degrade::MultiViewBatch;
use crate::image::{Image, Mask};
use crate::mvgeom::{cameras_to_json, parse_cameras_json, CameraPose, GeometryError, Intrinsics, OrbitParams};
use crate::optim3d::{render_with, RenderSettings, VoxelScene};
use crate::rng::keyed_rng;

/// Background threshold for synthesized masks: a pixel is background iff
/// every channel exceeds it.
pub const WHITE_THRESHOLD: f64 = 252.0 / 255.0;

pub const TOY_IMAGE_SIZE: usize = 64;
pub const TOY_VIEWS: usize = 4;
pub const TOY_GRID: usize = 32;
pub const TOY_RADIUS: f64 = 3.0;
pub const TOY_FOV_DEG: f64 = 40.0;
pub const TOY_ELEVATION_DEG: (f64, f64) = (-5.0, 30.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("missing cameras file {0}")]
    MissingCameras(PathBuf),
    #[error("{file}: {images} views but {cameras} camera entries")]
    CountMismatch { file: PathBuf, images: usize, cameras: usize },
    #[error("{file}: malformed JSON: {message}")]
    MalformedJson { file: PathBuf, message: String },
    #[error("{file}: invalid pose: {message}")]
    InvalidPose { file: PathBuf, message: String },
    #[error("{file}: {message}")]
    Image { file: PathBuf, message: String },
    #[error("{file}: {message}")]
    Io { file: PathBuf, message: String },
    #[error("no view_###.png files in {0}")]
    NoViews(PathBuf),
}

fn io_err(file: &Path, e: impl ToString) -> DatasetError {
    DatasetError::Io {
        file: file.to_path_buf(),
        message: e.to_string(),
    }
}

fn read_png(path: &Path) -> Result<Image, DatasetError> {
    let img = image::open(path)
        .map_err(|e| DatasetError::Image {
            file: path.to_path_buf(),
            message: e.to_string(),
        })?
        .to_rgb8();
    Ok(Image::from_rgb8(img.width() as usize, img.height() as usize, img.as_raw()))
}

fn read_mask(path: &Path, w: usize, h: usize) -> Result<Mask, DatasetError> {
    let m = image::open(path)
        .map_err(|e| DatasetError::Image {
            file: path.to_path_buf(),
            message: e.to_string(),
        })?
        .to_luma8();
    if (m.width() as usize, m.height() as usize) != (w, h) {
        return Err(DatasetError::Image {
            file: path.to_path_buf(),
            message: format!("mask is {}x{}, view is {w}x{h}", m.width(), m.height()),
        });
    }
    Ok(Mask::new(w, h, m.as_raw().iter().map(|&v| v >= 128).collect()))
}

pub fn write_png(path: &Path, img: &Image) -> Result<(), DatasetError> {
    image::RgbImage::from_raw(img.width as u32, img.height as u32, img.to_rgb8())
        .expect("buffer size matches")
        .save(path)
        .map_err(|e| io_err(path, e))
}

pub fn write_mask_png(path: &Path, mask: &Mask) -> Result<(), DatasetError> {
    let bytes = mask.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
    image::GrayImage::from_raw(mask.width as u32, mask.height as u32, bytes)
        .expect("buffer size matches")
        .save(path)
        .map_err(|e| io_err(path, e))
}

/// Indices of `view_###.png` files, ascending.
fn view_indices(dir: &Path) -> Result<Vec<usize>, DatasetError> {
    let mut idx = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let name = entry.map_err(|e| io_err(dir, e))?.file_name();
        let name = name.to_string_lossy();
        if let Some(num) = name.strip_prefix("view_").and_then(|s| s.strip_suffix(".png")) {
            if let Ok(i) = num.parse::<usize>() {
                idx.push(i);
            }
        }
    }
    idx.sort_unstable();
    Ok(idx)
}

/// Loads a dataset directory; views are returned in ascending azimuth order.
pub fn load_dataset(dir: &Path) -> Result<MultiViewBatch, DatasetError> {
    let cam_path = dir.join("cameras.json");
    if !cam_path.is_file() {
        return Err(DatasetError::MissingCameras(cam_path));
    }
    let text = fs::read_to_string(&cam_path).map_err(|e| io_err(&cam_path, e))?;
    let poses = parse_cameras_json(&text).map_err(|e| match e {
        GeometryError::MalformedCameras(m) => DatasetError::MalformedJson {
            file: cam_path.clone(),
            message: m,
        },
        other => DatasetError::InvalidPose {
            file: cam_path.clone(),
            message: other.to_string(),
        },
    })?;
    let indices = view_indices(dir)?;
    if indices.is_empty() {
        return Err(DatasetError::NoViews(dir.to_path_buf()));
    }
    if indices.len() != poses.len() {
        return Err(DatasetError::CountMismatch {
            file: cam_path,
            images: indices.len(),
            cameras: poses.len(),
        });
    }
    let mut views = Vec::with_capacity(indices.len());
    for (k, &i) in indices.iter().enumerate() {
        let vp = dir.join(format!("view_{i:03}.png"));
        let img = read_png(&vp)?;
        let mp = dir.join(format!("mask_{i:03}.png"));
        let mask = if mp.is_file() {
            read_mask(&mp, img.width, img.height)?
        } else {
            Mask::from_white_background(&img, WHITE_THRESHOLD)
        };
        views.push((img, poses[k].clone(), mask));
    }
    views.sort_by(|a, b| a.1.azimuth().total_cmp(&b.1.azimuth()));
    let cap_path = dir.join("caption.txt");
    let text = if cap_path.is_file() {
        Some(fs::read_to_string(&cap_path).map_err(|e| io_err(&cap_path, e))?.trim_end().to_string())
    } else {
        None
    };
    let mut batch = MultiViewBatch {
        images: Vec::new(),
        poses: Vec::new(),
        masks: Vec::new(),
        text,
        noise_level: 0,
    };
    for (img, pose, mask) in views {
        batch.images.push(img);
        batch.poses.push(pose);
        batch.masks.push(mask);
    }
    batch.validate().map_err(|e| DatasetError::Image {
        file: dir.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(batch)
}

/// Writes the batch in the directory layout read by [`load_dataset`].
pub fn save_dataset(batch: &MultiViewBatch, dir: &Path) -> Result<(), DatasetError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for (i, (img, mask)) in batch.images.iter().zip(&batch.masks).enumerate() {
        write_png(&dir.join(format!("view_{i:03}.png")), img)?;
        write_mask_png(&dir.join(format!("mask_{i:03}.png")), mask)?;
    }
    let cam_path = dir.join("cameras.json");
    fs::write(&cam_path, cameras_to_json(&batch.poses)).map_err(|e| io_err(&cam_path, e))?;
    if let Some(t) = &batch.text {
        let p = dir.join("caption.txt");
        fs::write(&p, format!("{t}\n")).map_err(|e| io_err(&p, e))?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ToySceneKind {
    CheckerCube,
    StripedSphere,
}

impl ToySceneKind {
    pub fn name(self) -> &'static str {
        match self {
            ToySceneKind::CheckerCube => "checker-cube",
            ToySceneKind::StripedSphere => "striped-sphere",
        }
    }

    pub fn caption(self) -> &'static str {
        match self {
            ToySceneKind::CheckerCube => "a red and blue checkered cube",
            ToySceneKind::StripedSphere => "a yellow and green striped ball",
        }
    }
}

impl FromStr for ToySceneKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "checker-cube" => Ok(ToySceneKind::CheckerCube),
            "striped-sphere" => Ok(ToySceneKind::StripedSphere),
            other => Err(format!("unknown toy scene '{other}', expected checker-cube or striped-sphere")),
        }
    }
}

const TOY_DENSITY: f64 = 40.0;

/// The voxel scene behind a toy kind; `seed` only varies the palette phase.
pub fn toy_voxels(kind: ToySceneKind, seed: u64) -> VoxelScene {
    let mut s = VoxelScene::empty(TOY_GRID, [-1.0; 3], [1.0; 3]);
    let flip = keyed_rng(seed, 0, "toy/palette").gen::<bool>();
    for z in 0..TOY_GRID {
        for y in 0..TOY_GRID {
            for x in 0..TOY_GRID {
                let [px, py, pz] = s.cell_center(x, y, z);
                let i = s.index(x, y, z);
                let (inside, parity, a, b) = match kind {
                    ToySceneKind::CheckerCube => {
                        let h = 0.6;
                        let cell = |v: f64| ((v + h) / 0.3).floor() as i64;
                        (
                            px.abs() <= h && py.abs() <= h && pz.abs() <= h,
                            (cell(px) + cell(py) + cell(pz)).rem_euclid(2) == 0,
                            [0.85, 0.25, 0.2],
                            [0.2, 0.35, 0.8],
                        )
                    }
                    ToySceneKind::StripedSphere => (
                        px * px + py * py + pz * pz <= 0.7 * 0.7,
                        ((py + 1.0) / 0.2).floor() as i64 % 2 == 0,
                        [0.9, 0.8, 0.2],
                        [0.2, 0.6, 0.3],
                    ),
                };
                if inside {
                    s.density[i] = TOY_DENSITY;
                }
                let rgb = if parity != flip { a } else { b };
                s.color[3 * i..3 * i + 3].copy_from_slice(&rgb);
            }
        }
    }
    s
}

/// Renders a posed view and its opacity mask (alpha > 0).
pub fn render_view(scene: &VoxelScene, pose: &CameraPose, size: usize, settings: RenderSettings) -> (Image, Mask) {
    let (img, alpha) = render_with(scene, pose, size, size, settings);
    let mask = Mask::new(size, size, alpha.iter().map(|&a| a > 0.0).collect());
    (img, mask)
}

/// A textured toy object with four views at seeded azimuths in `[0°, 360°)`
/// and elevations in `[−5°, 30°]`, sorted by azimuth.
pub fn make_toy_scene(kind: ToySceneKind, seed: u64) -> (VoxelScene, MultiViewBatch) {
    let scene = toy_voxels(kind, seed);
    let mut rng = keyed_rng(seed, 0, "toy/views");
    let mut orbits: Vec<(f64, f64)> = (0..TOY_VIEWS)
        .map(|_| {
            (
                rng.gen_range(0.0..360.0f64),
                rng.gen_range(TOY_ELEVATION_DEG.0..=TOY_ELEVATION_DEG.1),
            )
        })
        .collect();
    orbits.sort_by(|a, b| a.0.total_cmp(&b.0));
    let intr = Intrinsics::from_fov(TOY_IMAGE_SIZE, TOY_IMAGE_SIZE, TOY_FOV_DEG);
    let mut batch = MultiViewBatch {
        images: Vec::new(),
        poses: Vec::new(),
        masks: Vec::new(),
        text: Some(kind.caption().to_string()),
        noise_level: 0,
    };
    for (az, el) in orbits {
        let pose = CameraPose::orbit(
            intr,
            &OrbitParams {
                azimuth: az.to_radians(),
                elevation: el.to_radians(),
                radius: TOY_RADIUS,
                target: [0.0; 3],
            },
        )
        .expect("toy orbit is valid");
        let (img, mask) = render_view(&scene, &pose, TOY_IMAGE_SIZE, RenderSettings::default());
        batch.images.push(img);
        batch.poses.push(pose);
        batch.masks.push(mask);
    }
    (scene, batch)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_scene_is_deterministic_with_white_background() {
        let (s1, b1) = make_toy_scene(ToySceneKind::CheckerCube, 3);
        let (s2, b2) = make_toy_scene(ToySceneKind::CheckerCube, 3);
        assert_eq!(s1, s2);
        assert_eq!(b1, b2);
        for (img, m) in b1.images.iter().zip(&b1.masks) {
            assert!(m.count() > 100);
            for y in 0..img.height {
                for x in 0..img.width {
                    if !m.get(x, y) {
                        assert_eq!(img.pixel(x, y), [1.0; 3]);
                    }
                }
            }
        }
        for p in &b1.poses {
            let el = p.orbit_params().elevation.to_degrees();
            assert!((-5.0 - 1e-9..=30.0 + 1e-9).contains(&el));
        }
    }
}
