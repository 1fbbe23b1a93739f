//! Synthetic scene generation: textured fronto-parallel planes rendered by
//! analytic ray casting, giving pixel-exact ground-truth color and depth
//! that are fully independent of the splat renderer.
//!
//! Depth follows the renderer's convention (camera-frame z, not Euclidean
//! range): rays are parameterized so the ray parameter *is* camera depth,
//! which makes a fronto-parallel plane at z = d read exactly d everywhere.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use uwsplat_core::camera::CameraView;
use uwsplat_core::image::{RgbImage, ScalarMap};
use uwsplat_core::medium::{self, MediumParams};

use crate::colmap::{write_colmap_text, ColmapPoint};
use crate::dataset::{default_split, SPLIT_FILE};
use crate::io::{save_image, save_medium_text, save_scalar_map};
use crate::{AppError, AppResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TextureKind {
    Checker,
    Noise,
}

/// Knobs of the generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub num_planes: usize,
    pub num_views: usize,
    pub texture: TextureKind,
    pub num_points: usize,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            num_planes: 3,
            num_views: 24,
            texture: TextureKind::Checker,
            num_points: 900,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> AppResult<()> {
        if self.width == 0 || self.height == 0 || self.num_planes == 0 || self.num_views == 0 {
            return Err(AppError::Dataset(
                "scene spec must have nonzero size, planes, and views".into(),
            ));
        }
        Ok(())
    }
}

/// One textured plane at constant world z.
struct Plane {
    z: f64,
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    color_a: [f64; 3],
    color_b: [f64; 3],
    cell: f64,
    /// Noise-texture grid, per channel (empty for checker).
    noise: Vec<[f64; 3]>,
    noise_res: usize,
}

/// Palette pairs whose means sit near mid-gray per channel, keeping the
/// gray-world prior honest on the true colors.
const PALETTES: [([f64; 3], [f64; 3]); 4] = [
    ([0.80, 0.45, 0.30], [0.25, 0.55, 0.70]),
    ([0.60, 0.75, 0.35], [0.40, 0.25, 0.65]),
    ([0.70, 0.60, 0.45], [0.30, 0.40, 0.55]),
    ([0.55, 0.70, 0.60], [0.45, 0.30, 0.40]),
];

impl Plane {
    fn texture(&self, x: f64, y: f64) -> [f64; 3] {
        if self.noise.is_empty() {
            let cx = (x / self.cell).floor() as i64;
            let cy = (y / self.cell).floor() as i64;
            if (cx + cy).rem_euclid(2) == 0 {
                self.color_a
            } else {
                self.color_b
            }
        } else {
            // Bilinear value noise over the plane rectangle.
            let res = self.noise_res;
            let u = ((x - self.x0) / (self.x1 - self.x0)).clamp(0.0, 1.0) * (res - 1) as f64;
            let v = ((y - self.y0) / (self.y1 - self.y0)).clamp(0.0, 1.0) * (res - 1) as f64;
            let (i, j) = (u.floor() as usize, v.floor() as usize);
            let (i1, j1) = ((i + 1).min(res - 1), (j + 1).min(res - 1));
            let (fu, fv) = (u - i as f64, v - j as f64);
            let mut out = [0.0; 3];
            for c in 0..3 {
                let g00 = self.noise[j * res + i][c];
                let g10 = self.noise[j * res + i1][c];
                let g01 = self.noise[j1 * res + i][c];
                let g11 = self.noise[j1 * res + i1][c];
                out[c] = g00 * (1.0 - fu) * (1.0 - fv)
                    + g10 * fu * (1.0 - fv)
                    + g01 * (1.0 - fu) * fv
                    + g11 * fu * fv;
            }
            out
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }
}

fn build_planes(spec: &SceneSpec) -> Vec<Plane> {
    let n = spec.num_planes;
    let depths: Vec<f64> = if n == 1 {
        vec![2.0]
    } else {
        (0..n).map(|k| 1.0 + 3.0 * k as f64 / (n - 1) as f64).collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(31).wrapping_add(17));
    depths
        .iter()
        .enumerate()
        .map(|(k, &z)| {
            let (color_a, color_b) = PALETTES[k % PALETTES.len()];
            let last = k == n - 1;
            // The farthest plane backs the whole frustum; nearer planes are
            // staggered partial rectangles so every depth stays visible.
            let (x0, x1, y0, y1) = if last {
                (-8.0, 8.0, -8.0, 8.0)
            } else if k % 2 == 0 {
                (-0.62 * z, 0.05 * z, -0.55 * z, 0.12 * z)
            } else {
                (-0.05 * z, 0.60 * z, -0.52 * z, 0.36 * z)
            };
            let (noise, noise_res) = if spec.texture == TextureKind::Noise {
                let res = 6;
                let grid: Vec<[f64; 3]> = (0..res * res)
                    .map(|_| {
                        [
                            rng.gen_range(0.2..0.8),
                            rng.gen_range(0.2..0.8),
                            rng.gen_range(0.2..0.8),
                        ]
                    })
                    .collect();
                (grid, res)
            } else {
                (Vec::new(), 0)
            };
            Plane {
                z,
                x0,
                x1,
                y0,
                y1,
                color_a,
                color_b,
                cell: 0.16 * z,
                noise,
                noise_res,
            }
        })
        .collect()
}

fn arc_cameras(spec: &SceneSpec) -> Vec<CameraView> {
    let n = spec.num_views;
    let f = spec.width as f64;
    (0..n)
        .map(|i| {
            let t = if n == 1 {
                0.0
            } else {
                i as f64 / (n - 1) as f64 * 2.0 - 1.0
            };
            let psi = 0.18 * t;
            let eye = [3.0 * psi.sin(), 0.10 * (3.0 * psi).sin(), 3.0 * (1.0 - psi.cos())];
            CameraView::look_at(
                f,
                f,
                spec.width as f64 / 2.0,
                spec.height as f64 / 2.0,
                spec.width,
                spec.height,
                eye,
                [0.0, 0.0, 2.2],
                [0.0, 1.0, 0.0],
            )
            .expect("arc cameras are valid")
        })
        .collect()
}

/// One generated view with exact ground truth.
pub struct SynthView {
    pub name: String,
    pub camera: CameraView,
    pub image: RgbImage,
    pub depth: ScalarMap,
}

/// A generated scene held in memory.
pub struct SynthScene {
    pub views: Vec<SynthView>,
    pub points: Vec<ColmapPoint>,
}

/// Ray-cast ground truth for every view and sample sparse surface points.
pub fn generate_synthetic_scene(spec: &SceneSpec) -> AppResult<SynthScene> {
    spec.validate()?;
    let planes = build_planes(spec);
    let cameras = arc_cameras(spec);

    let mut views = Vec::with_capacity(cameras.len());
    for (i, cam) in cameras.into_iter().enumerate() {
        let mut image = RgbImage::new(spec.width, spec.height);
        let mut depth = ScalarMap::new(spec.width, spec.height);
        let origin = cam.center();
        for y in 0..spec.height {
            for x in 0..spec.width {
                let dir = cam.pixel_ray(x, y);
                let mut best: Option<(f64, [f64; 3])> = None;
                for plane in &planes {
                    // Ray parameter equals camera-frame depth by the
                    // pixel_ray normalization.
                    let t = (plane.z - origin[2]) / dir[2];
                    if t <= uwsplat_core::render::NEAR_PLANE {
                        continue;
                    }
                    let px = origin[0] + t * dir[0];
                    let py = origin[1] + t * dir[1];
                    if !plane.contains(px, py) {
                        continue;
                    }
                    if best.map_or(true, |(bt, _)| t < bt) {
                        best = Some((t, plane.texture(px, py)));
                    }
                }
                if let Some((t, color)) = best {
                    image.set_pixel(x, y, color);
                    depth.set(x, y, t as f32);
                }
            }
        }
        views.push(SynthView {
            name: format!("view_{i:03}.png"),
            camera: cam,
            image,
            depth,
        });
    }

    // Sparse points sampled on the plane surfaces, colored by the texture.
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let per_plane = (spec.num_points / planes.len()).max(1);
    let mut points = Vec::with_capacity(per_plane * planes.len());
    for plane in &planes {
        // Clip the huge background plane to the visible region.
        let halfwidth = 0.52 * plane.z + 0.55;
        let (x0, x1) = (plane.x0.max(-halfwidth), plane.x1.min(halfwidth));
        let (y0, y1) = (plane.y0.max(-halfwidth), plane.y1.min(halfwidth));
        for _ in 0..per_plane {
            let x = rng.gen_range(x0..x1);
            let y = rng.gen_range(y0..y1);
            points.push(ColmapPoint {
                position: [x, y, plane.z],
                color: plane.texture(x, y),
            });
        }
    }
    Ok(SynthScene { views, points })
}

/// Write a scene as a dataset directory: images/, depth/, sparse/, split.txt.
pub fn write_dataset(scene: &SynthScene, dir: &Path) -> AppResult<()> {
    let images_dir = dir.join("images");
    let depth_dir = dir.join("depth");
    std::fs::create_dir_all(&images_dir).map_err(|e| AppError::io(&images_dir, e))?;
    std::fs::create_dir_all(&depth_dir).map_err(|e| AppError::io(&depth_dir, e))?;

    let mut colmap_views = Vec::new();
    for view in &scene.views {
        save_image(&view.image, &images_dir.join(&view.name))?;
        let stem = view.name.trim_end_matches(".png");
        save_scalar_map(&view.depth, &depth_dir.join(format!("{stem}.fmap")))?;
        colmap_views.push((view.camera.clone(), view.name.clone()));
    }
    write_colmap_text(&dir.join("sparse"), &colmap_views, &scene.points)?;

    let (train, test) = default_split(scene.views.len());
    let mut split = String::new();
    for i in 0..scene.views.len() {
        let tag = if test.contains(&i) { "test" } else { "train" };
        split.push_str(&format!("{i} {tag}\n"));
    }
    let _ = &train;
    std::fs::write(dir.join(SPLIT_FILE), split)
        .map_err(|e| AppError::io(dir.join(SPLIT_FILE), e))?;
    Ok(())
}

/// Degrade a dataset in place: originals move to truth/, images/ get the
/// medium-composed versions, and the parameters are recorded alongside.
pub fn apply_medium_to_dataset(dir: &Path, params: &MediumParams) -> AppResult<()> {
    let images_dir = dir.join("images");
    let depth_dir = dir.join("depth");
    let truth_dir = dir.join("truth");
    std::fs::create_dir_all(&truth_dir).map_err(|e| AppError::io(&truth_dir, e))?;

    let mut names: Vec<String> = std::fs::read_dir(&images_dir)
        .map_err(|e| AppError::io(&images_dir, e))?
        .filter_map(|entry| {
            let entry = entry.ok()?;
            let name = entry.file_name().into_string().ok()?;
            name.ends_with(".png").then_some(name)
        })
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(AppError::Dataset(format!(
            "no PNG images under {}",
            images_dir.display()
        )));
    }

    for name in &names {
        let stem = name.trim_end_matches(".png");
        let depth_path = depth_dir.join(format!("{stem}.fmap"));
        if !depth_path.exists() {
            return Err(AppError::Dataset(format!(
                "cannot apply medium: missing ground-truth depth {}",
                depth_path.display()
            )));
        }
        let img = crate::io::load_image(&images_dir.join(name))?;
        let depth = crate::io::load_scalar_map(&depth_path)?;
        let composed = medium::compose(&img, &depth, params)?;
        std::fs::rename(images_dir.join(name), truth_dir.join(name))
            .map_err(|e| AppError::io(truth_dir.join(name), e))?;
        save_image(&composed, &images_dir.join(name))?;
    }
    save_medium_text(params, &truth_dir.join("medium.txt"))?;
    Ok(())
}
