//! Dataset directory layout and ingestion.
//!
//! ```text
//! root/
//!   images/<name>.png      captured (possibly in-medium) frames
//!   depth/<stem>.fmap      ground-truth depth (synthetic scenes)
//!   truth/<name>.png       ground-truth true color (synthetic scenes)
//!   truth/medium.txt       ground-truth medium parameters
//!   sparse/cameras.txt, images.txt, points3D.txt
//!   split.txt              "<index> train|test" per frame
//! ```
//!
//! Frames are ordered by image name; without a split file every 8th frame
//! (index 0, 8, 16, …) is assigned to the test split.

use std::path::{Path, PathBuf};

use uwsplat_core::camera::CameraView;
use uwsplat_core::medium::MediumParams;
use uwsplat_core::train::{SeedPoint, TrainFrame};

use crate::colmap::{load_colmap_text, ColmapPoint};
use crate::io::{load_image, load_medium_text, load_scalar_map};
use crate::{AppError, AppResult};

pub const SPLIT_FILE: &str = "split.txt";

/// A frame's on-disk locations plus its camera.
#[derive(Debug, Clone)]
pub struct FrameRef {
    pub name: String,
    pub camera: CameraView,
    pub image_path: PathBuf,
    pub depth_path: Option<PathBuf>,
    pub truth_color_path: Option<PathBuf>,
}

/// A loaded dataset: frame references, sparse points, and the train/test
/// split.
#[derive(Debug, Clone)]
pub struct SceneDataset {
    pub root: PathBuf,
    pub frames: Vec<FrameRef>,
    pub points: Vec<ColmapPoint>,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub gt_medium: Option<MediumParams>,
}

/// Deterministic, seed-independent split: every 8th frame is held out.
pub fn default_split(n: usize) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for i in 0..n {
        if i % 8 == 0 {
            test.push(i);
        } else {
            train.push(i);
        }
    }
    (train, test)
}

fn parse_split(path: &Path, n: usize) -> AppResult<(Vec<usize>, Vec<usize>)> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    let mut assignment: Vec<Option<bool>> = vec![None; n];
    for (ln0, line) in text.lines().enumerate() {
        let ln = ln0 + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let idx: usize = it
            .next()
            .ok_or_else(|| AppError::parse(path, ln, "missing index"))?
            .parse()
            .map_err(|e| AppError::parse(path, ln, format!("bad index: {e}")))?;
        let tag = it
            .next()
            .ok_or_else(|| AppError::parse(path, ln, "missing train/test tag"))?;
        if idx >= n {
            return Err(AppError::parse(path, ln, format!("index {idx} out of range")));
        }
        let is_test = match tag {
            "train" => false,
            "test" => true,
            other => {
                return Err(AppError::parse(path, ln, format!("unknown tag `{other}`")))
            }
        };
        if assignment[idx].is_some() {
            return Err(AppError::parse(path, ln, format!("duplicate index {idx}")));
        }
        assignment[idx] = Some(is_test);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, a) in assignment.iter().enumerate() {
        match a {
            Some(true) => test.push(i),
            Some(false) => train.push(i),
            None => {
                return Err(AppError::format(
                    path,
                    format!("split does not cover frame {i}"),
                ))
            }
        }
    }
    Ok((train, test))
}

impl SceneDataset {
    /// Load a dataset directory; every referenced file must exist.
    pub fn load(root: &Path) -> AppResult<Self> {
        let scene = load_colmap_text(&root.join("sparse"))?;
        let images_dir = root.join("images");
        let depth_dir = root.join("depth");
        let truth_dir = root.join("truth");

        let mut frames = Vec::with_capacity(scene.images.len());
        for img in &scene.images {
            let cam = scene
                .cameras
                .get(&img.camera_id)
                .ok_or_else(|| {
                    AppError::Dataset(format!(
                        "image {} references unknown camera {}",
                        img.name, img.camera_id
                    ))
                })?;
            let camera = img.camera_view(cam)?;
            let image_path = images_dir.join(&img.name);
            if !image_path.exists() {
                return Err(AppError::Dataset(format!(
                    "missing image file {}",
                    image_path.display()
                )));
            }
            let stem = img.name.trim_end_matches(".png");
            let depth_path = {
                let p = depth_dir.join(format!("{stem}.fmap"));
                p.exists().then_some(p)
            };
            let truth_color_path = {
                let p = truth_dir.join(&img.name);
                p.exists().then_some(p)
            };
            frames.push(FrameRef {
                name: img.name.clone(),
                camera,
                image_path,
                depth_path,
                truth_color_path,
            });
        }

        let split_path = root.join(SPLIT_FILE);
        let (train_indices, test_indices) = if split_path.exists() {
            parse_split(&split_path, frames.len())?
        } else {
            default_split(frames.len())
        };

        let medium_path = truth_dir.join("medium.txt");
        let gt_medium = if medium_path.exists() {
            Some(load_medium_text(&medium_path)?)
        } else {
            None
        };

        Ok(Self {
            root: root.to_path_buf(),
            frames,
            points: scene.points,
            train_indices,
            test_indices,
            gt_medium,
        })
    }

    pub fn seed_points(&self) -> Vec<SeedPoint> {
        self.points
            .iter()
            .map(|p| SeedPoint {
                position: p.position,
                color: p.color,
            })
            .collect()
    }

    /// Load one frame's pixels (and ground truth when present) into memory.
    pub fn load_frame(&self, index: usize) -> AppResult<TrainFrame> {
        let fr = &self.frames[index];
        let image = load_image(&fr.image_path)?;
        let gt_depth = fr
            .depth_path
            .as_ref()
            .map(|p| load_scalar_map(p))
            .transpose()?;
        let gt_color = fr
            .truth_color_path
            .as_ref()
            .map(|p| load_image(p))
            .transpose()?;
        Ok(TrainFrame {
            image,
            camera: fr.camera.clone(),
            gt_depth,
            gt_color,
        })
    }

    pub fn load_frames(&self, indices: &[usize]) -> AppResult<Vec<TrainFrame>> {
        indices.iter().map(|&i| self.load_frame(i)).collect()
    }
}
