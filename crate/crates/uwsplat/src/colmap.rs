//! COLMAP text-format ingestion (cameras.txt, images.txt, points3D.txt) and
//! the matching writer used by the synthetic scene generator.
//!
//! Only PINHOLE and SIMPLE_PINHOLE camera models are supported; quaternions
//! are COLMAP's (w, x, y, z) world-to-camera convention, which matches the
//! renderer's camera directly.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use uwsplat_core::camera::CameraView;

use crate::{AppError, AppResult};

#[derive(Debug, Clone, PartialEq)]
pub struct ColmapCamera {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColmapImage {
    pub id: u64,
    pub quat_wxyz: [f64; 4],
    pub trans: [f64; 3],
    pub camera_id: u32,
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColmapPoint {
    pub position: [f64; 3],
    /// Color scaled to [0, 1].
    pub color: [f64; 3],
}

#[derive(Debug, Clone, Default)]
pub struct ColmapScene {
    pub cameras: BTreeMap<u32, ColmapCamera>,
    pub images: Vec<ColmapImage>,
    pub points: Vec<ColmapPoint>,
}

impl ColmapImage {
    /// Build the render camera by pairing this pose with its intrinsics.
    pub fn camera_view(&self, cam: &ColmapCamera) -> AppResult<CameraView> {
        CameraView::from_quaternion(
            cam.fx,
            cam.fy,
            cam.cx,
            cam.cy,
            cam.width,
            cam.height,
            self.quat_wxyz,
            self.trans,
        )
        .map_err(AppError::Core)
    }
}

fn parse_floats(tokens: &[&str], path: &Path, ln: usize) -> AppResult<Vec<f64>> {
    tokens
        .iter()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|e| AppError::parse(path, ln, format!("bad number `{t}`: {e}")))
        })
        .collect()
}

pub fn load_cameras(path: &Path) -> AppResult<BTreeMap<u32, ColmapCamera>> {
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    let mut cameras = BTreeMap::new();
    for (ln0, line) in text.lines().enumerate() {
        let ln = ln0 + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() < 4 {
            return Err(AppError::parse(path, ln, "expected ID MODEL W H PARAMS..."));
        }
        let id: u32 = tokens[0]
            .parse()
            .map_err(|e| AppError::parse(path, ln, format!("bad camera id: {e}")))?;
        let model = tokens[1];
        let dims = parse_floats(&tokens[2..4], path, ln)?;
        let params = parse_floats(&tokens[4..], path, ln)?;
        let (fx, fy, cx, cy) = match model {
            "PINHOLE" => {
                if params.len() != 4 {
                    return Err(AppError::parse(path, ln, "PINHOLE needs fx fy cx cy"));
                }
                (params[0], params[1], params[2], params[3])
            }
            "SIMPLE_PINHOLE" => {
                if params.len() != 3 {
                    return Err(AppError::parse(path, ln, "SIMPLE_PINHOLE needs f cx cy"));
                }
                (params[0], params[0], params[1], params[2])
            }
            other => {
                return Err(AppError::UnsupportedCameraModel {
                    model: other.to_string(),
                })
            }
        };
        cameras.insert(
            id,
            ColmapCamera {
                width: dims[0] as usize,
                height: dims[1] as usize,
                fx,
                fy,
                cx,
                cy,
            },
        );
    }
    Ok(cameras)
}

pub fn load_images(path: &Path) -> AppResult<Vec<ColmapImage>> {
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    let mut images = Vec::new();
    // Images come as pairs of lines (pose line, 2D-point line); the second
    // line may be empty but still occupies a slot.
    let mut expect_points_line = false;
    for (ln0, raw) in text.lines().enumerate() {
        let ln = ln0 + 1;
        let line = raw.trim();
        if line.starts_with('#') {
            continue;
        }
        if expect_points_line {
            expect_points_line = false;
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() < 10 {
            return Err(AppError::parse(
                path,
                ln,
                "expected ID QW QX QY QZ TX TY TZ CAM_ID NAME",
            ));
        }
        let id: u64 = tokens[0]
            .parse()
            .map_err(|e| AppError::parse(path, ln, format!("bad image id: {e}")))?;
        let nums = parse_floats(&tokens[1..8], path, ln)?;
        let camera_id: u32 = tokens[8]
            .parse()
            .map_err(|e| AppError::parse(path, ln, format!("bad camera id: {e}")))?;
        // NAME is the final field; COLMAP's exporter never writes names
        // containing spaces.
        let name = tokens[9].to_string();
        images.push(ColmapImage {
            id,
            quat_wxyz: [nums[0], nums[1], nums[2], nums[3]],
            trans: [nums[4], nums[5], nums[6]],
            camera_id,
            name,
        });
        expect_points_line = true;
    }
    Ok(images)
}

pub fn load_points(path: &Path) -> AppResult<Vec<ColmapPoint>> {
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    let mut points = Vec::new();
    for (ln0, raw) in text.lines().enumerate() {
        let ln = ln0 + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() < 8 {
            return Err(AppError::parse(
                path,
                ln,
                "expected ID X Y Z R G B ERROR TRACK...",
            ));
        }
        let xyz = parse_floats(&tokens[1..4], path, ln)?;
        let rgb = parse_floats(&tokens[4..7], path, ln)?;
        points.push(ColmapPoint {
            position: [xyz[0], xyz[1], xyz[2]],
            color: [rgb[0] / 255.0, rgb[1] / 255.0, rgb[2] / 255.0],
        });
    }
    Ok(points)
}

/// Load a full sparse export (cameras.txt, images.txt, points3D.txt) from a
/// directory. Images are sorted by name for a deterministic frame order.
pub fn load_colmap_text(dir: &Path) -> AppResult<ColmapScene> {
    let cameras = load_cameras(&dir.join("cameras.txt"))?;
    let mut images = load_images(&dir.join("images.txt"))?;
    let points = load_points(&dir.join("points3D.txt"))?;
    images.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(ColmapScene {
        cameras,
        images,
        points,
    })
}

/// Rotation matrix → unit quaternion (w, x, y, z), Shepperd's method.
pub fn rot_to_quat(r: &[[f64; 3]; 3]) -> [f64; 4] {
    let trace = r[0][0] + r[1][1] + r[2][2];
    let (w, x, y, z);
    if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        w = 0.25 * s;
        x = (r[2][1] - r[1][2]) / s;
        y = (r[0][2] - r[2][0]) / s;
        z = (r[1][0] - r[0][1]) / s;
    } else if r[0][0] > r[1][1] && r[0][0] > r[2][2] {
        let s = (1.0 + r[0][0] - r[1][1] - r[2][2]).sqrt() * 2.0;
        w = (r[2][1] - r[1][2]) / s;
        x = 0.25 * s;
        y = (r[0][1] + r[1][0]) / s;
        z = (r[0][2] + r[2][0]) / s;
    } else if r[1][1] > r[2][2] {
        let s = (1.0 + r[1][1] - r[0][0] - r[2][2]).sqrt() * 2.0;
        w = (r[0][2] - r[2][0]) / s;
        x = (r[0][1] + r[1][0]) / s;
        y = 0.25 * s;
        z = (r[1][2] + r[2][1]) / s;
    } else {
        let s = (1.0 + r[2][2] - r[0][0] - r[1][1]).sqrt() * 2.0;
        w = (r[1][0] - r[0][1]) / s;
        x = (r[0][2] + r[2][0]) / s;
        y = (r[1][2] + r[2][1]) / s;
        z = 0.25 * s;
    }
    let n = (w * w + x * x + y * y + z * z).sqrt();
    [w / n, x / n, y / n, z / n]
}

/// Write a sparse export for the given views and points.
pub fn write_colmap_text(
    dir: &Path,
    views: &[(CameraView, String)],
    points: &[ColmapPoint],
) -> AppResult<()> {
    fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;

    // Intrinsics are shared in our generator; emit one camera per distinct
    // intrinsic tuple.
    let mut cam_lines = String::from("# CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n");
    let mut cam_ids: Vec<(u32, &CameraView)> = Vec::new();
    for (view, _) in views {
        if !cam_ids.iter().any(|(_, c)| {
            c.fx == view.fx
                && c.fy == view.fy
                && c.cx == view.cx
                && c.cy == view.cy
                && c.width == view.width
                && c.height == view.height
        }) {
            let id = cam_ids.len() as u32 + 1;
            cam_ids.push((id, view));
            cam_lines.push_str(&format!(
                "{id} PINHOLE {} {} {} {} {} {}\n",
                view.width, view.height, view.fx, view.fy, view.cx, view.cy
            ));
        }
    }
    fs::write(dir.join("cameras.txt"), cam_lines)
        .map_err(|e| AppError::io(dir.join("cameras.txt"), e))?;

    let mut img_out = Vec::new();
    writeln!(
        img_out,
        "# IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME"
    )
    .expect("vec write");
    for (i, (view, name)) in views.iter().enumerate() {
        let cam_id = cam_ids
            .iter()
            .find(|(_, c)| {
                c.fx == view.fx
                    && c.fy == view.fy
                    && c.cx == view.cx
                    && c.cy == view.cy
                    && c.width == view.width
                    && c.height == view.height
            })
            .map(|(id, _)| *id)
            .expect("registered above");
        let q = rot_to_quat(&view.rot);
        writeln!(
            img_out,
            "{} {} {} {} {} {} {} {} {} {}",
            i + 1,
            q[0],
            q[1],
            q[2],
            q[3],
            view.trans[0],
            view.trans[1],
            view.trans[2],
            cam_id,
            name
        )
        .expect("vec write");
        // Empty 2D-observations line.
        writeln!(img_out).expect("vec write");
    }
    fs::write(dir.join("images.txt"), img_out)
        .map_err(|e| AppError::io(dir.join("images.txt"), e))?;

    let mut pts_out = Vec::new();
    writeln!(
        pts_out,
        "# POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)"
    )
    .expect("vec write");
    for (i, p) in points.iter().enumerate() {
        let rgb = p.color.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8);
        writeln!(
            pts_out,
            "{} {} {} {} {} {} {} 0",
            i + 1,
            p.position[0],
            p.position[1],
            p.position[2],
            rgb[0],
            rgb[1],
            rgb[2]
        )
        .expect("vec write");
    }
    fs::write(dir.join("points3D.txt"), pts_out)
        .map_err(|e| AppError::io(dir.join("points3D.txt"), e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn write(dir: &Path, name: &str, text: &str) {
        fs::write(dir.join(name), text).unwrap();
    }

    #[test]
    fn minimal_fixture_loads_exact_values() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            "cameras.txt",
            "# comment\n1 PINHOLE 64 48 60.0 61.0 32.0 24.0\n",
        );
        write(
            dir.path(),
            "images.txt",
            "# comment\n\
             2 1 0 0 0 0.5 -0.25 3 1 b.png\n\n\
             1 0.7071067811865476 0 0.7071067811865476 0 0 0 1 1 a.png\n\n",
        );
        write(
            dir.path(),
            "points3D.txt",
            "# comment\n\
             1 0.1 0.2 0.3 255 0 0 0.5\n\
             2 1 2 3 0 255 0 0.1 1 0 2 1\n\
             3 -1 -2 -3 0 0 255 0.2\n",
        );
        let scene = load_colmap_text(dir.path()).unwrap();
        assert_eq!(scene.cameras.len(), 1);
        let cam = &scene.cameras[&1];
        assert_eq!((cam.width, cam.height), (64, 48));
        assert_eq!((cam.fx, cam.fy), (60.0, 61.0));
        // Sorted by name: a.png first.
        assert_eq!(scene.images[0].name, "a.png");
        assert_eq!(scene.images[1].name, "b.png");
        assert_eq!(scene.images[1].trans, [0.5, -0.25, 3.0]);
        assert_eq!(scene.points.len(), 3);
        assert_abs_diff_eq!(scene.points[0].color[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(scene.points[1].position[2], 3.0);
    }

    #[test]
    fn simple_pinhole_duplicates_focal() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "cameras.txt", "1 SIMPLE_PINHOLE 10 10 5.5 5 5\n");
        let cams = load_cameras(&dir.path().join("cameras.txt")).unwrap();
        assert_eq!(cams[&1].fx, 5.5);
        assert_eq!(cams[&1].fy, 5.5);
    }

    #[test]
    fn radial_model_is_rejected_by_name() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            "cameras.txt",
            "1 RADIAL 10 10 5 5 5 0.01\n",
        );
        let err = load_cameras(&dir.path().join("cameras.txt")).unwrap_err();
        assert!(err.to_string().contains("RADIAL"), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            "points3D.txt",
            "# header\n1 0.1 0.2 0.3 255 0 0 0.5\n2 oops 2 3 0 255 0 0.1\n",
        );
        let err = load_points(&dir.path().join("points3D.txt")).unwrap_err();
        assert!(err.to_string().contains(":3:"), "{err}");
    }

    #[test]
    fn quaternion_roundtrip_through_writer() {
        use uwsplat_core::camera::CameraView;
        let cam = CameraView::look_at(
            64.0,
            64.0,
            32.0,
            32.0,
            64,
            64,
            [0.4, -0.2, -0.5],
            [0.0, 0.0, 2.5],
            [0.0, 1.0, 0.0],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_colmap_text(
            dir.path(),
            &[(cam.clone(), "v0.png".to_string())],
            &[ColmapPoint {
                position: [0.0, 0.0, 2.0],
                color: [0.5; 3],
            }],
        )
        .unwrap();
        let scene = load_colmap_text(dir.path()).unwrap();
        let restored = scene.images[0]
            .camera_view(&scene.cameras[&1])
            .unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(restored.rot[i][j], cam.rot[i][j], epsilon = 1e-12);
            }
            assert_abs_diff_eq!(restored.trans[i], cam.trans[i], epsilon = 1e-12);
        }
    }
}
