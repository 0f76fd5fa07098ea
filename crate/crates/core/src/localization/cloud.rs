//! Synthetic depth captures of the board and ASCII PLY persistence.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::frames::{FrameTransform, CAMERA_FRAME, ROBOT_FRAME};
use crate::error::LocalizationError;
use crate::pose::Pose;
use crate::world::BoardWorld;
use nalgebra::UnitQuaternion;

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub frame: String,
    pub points: Vec<Vector3<f64>>,
    pub normals: Option<Vec<Vector3<f64>>>,
}

impl PointCloud {
    pub fn new(frame: &str, points: Vec<Vector3<f64>>) -> Self {
        Self {
            frame: frame.to_string(),
            points,
            normals: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vector3<f64> {
        let n = self.points.len().max(1) as f64;
        self.points.iter().fold(Vector3::zeros(), |a, p| a + p) / n
    }

    /// Singular values of the centred scatter matrix, descending.
    pub fn spread(&self) -> Vector3<f64> {
        let c = self.centroid();
        let mut cov = Matrix3::zeros();
        for p in &self.points {
            let d = p - c;
            cov += d * d.transpose();
        }
        let mut s = cov.singular_values();
        s.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
        s
    }

    /// Registration needs a named frame and at least three non-collinear
    /// finite points.
    pub fn validate(&self) -> Result<(), LocalizationError> {
        if self.frame.is_empty() {
            return Err(LocalizationError::Parameter("point cloud frame is unnamed".into()));
        }
        if self.points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(LocalizationError::Parameter("point cloud has non-finite points".into()));
        }
        if self.points.len() < 3 {
            return Err(LocalizationError::DegenerateCloud);
        }
        let s = self.spread();
        if !(s[0] > 0.0) || s[1] <= 1e-12 * s[0] {
            return Err(LocalizationError::DegenerateCloud);
        }
        Ok(())
    }

    pub fn transformed(&self, t: &FrameTransform) -> Result<PointCloud, LocalizationError> {
        if t.source != self.frame {
            return Err(LocalizationError::FrameMismatch {
                left_from: t.source.clone(),
                right_to: self.frame.clone(),
            });
        }
        Ok(PointCloud {
            frame: t.target.clone(),
            points: self.points.iter().map(|p| t.apply_point(p)).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| t.pose.orientation * n).collect()),
        })
    }

    pub fn to_ply(&self) -> String {
        let mut out = String::new();
        out.push_str("ply\nformat ascii 1.0\n");
        let _ = writeln!(out, "comment frame {}", self.frame);
        let _ = writeln!(out, "element vertex {}", self.points.len());
        out.push_str("property double x\nproperty double y\nproperty double z\n");
        if self.normals.is_some() {
            out.push_str("property double nx\nproperty double ny\nproperty double nz\n");
        }
        out.push_str("end_header\n");
        for (i, p) in self.points.iter().enumerate() {
            let _ = write!(out, "{} {} {}", p.x, p.y, p.z);
            if let Some(ns) = &self.normals {
                let n = ns[i];
                let _ = write!(out, " {} {} {}", n.x, n.y, n.z);
            }
            out.push('\n');
        }
        out
    }

    pub fn from_ply(text: &str) -> Result<PointCloud, LocalizationError> {
        let bad = |m: &str| LocalizationError::Ply(m.to_string());
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("ply") {
            return Err(bad("missing magic"));
        }
        let mut frame = String::new();
        let mut count = None;
        let mut props = Vec::new();
        let mut ascii = false;
        for line in lines.by_ref() {
            let words: Vec<&str> = line.split_whitespace().collect();
            match words.as_slice() {
                ["format", "ascii", _] => ascii = true,
                ["format", ..] => return Err(bad("only ascii PLY is supported")),
                ["comment", "frame", name] => frame = name.to_string(),
                ["comment", ..] => {}
                ["element", "vertex", n] => count = Some(n.parse::<usize>().map_err(|_| bad("vertex count"))?),
                ["element", ..] => return Err(bad("only vertex elements are supported")),
                ["property", _, name] => props.push(name.to_string()),
                ["end_header"] => break,
                _ => return Err(bad(&format!("unexpected header line `{line}`"))),
            }
        }
        if !ascii {
            return Err(bad("missing format line"));
        }
        let count = count.ok_or_else(|| bad("missing vertex element"))?;
        let col = |name: &str| props.iter().position(|p| p == name);
        let (x, y, z) = match (col("x"), col("y"), col("z")) {
            (Some(x), Some(y), Some(z)) => (x, y, z),
            _ => return Err(bad("x/y/z properties required")),
        };
        let normal_cols = match (col("nx"), col("ny"), col("nz")) {
            (Some(a), Some(b), Some(c)) => Some((a, b, c)),
            _ => None,
        };
        let mut points = Vec::with_capacity(count);
        let mut normals = normal_cols.map(|_| Vec::with_capacity(count));
        for _ in 0..count {
            let line = lines.next().ok_or_else(|| bad("truncated vertex list"))?;
            let vals = line
                .split_whitespace()
                .map(|w| w.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| bad("non-numeric vertex"))?;
            if vals.len() != props.len() {
                return Err(bad("vertex arity mismatch"));
            }
            points.push(Vector3::new(vals[x], vals[y], vals[z]));
            if let (Some(ns), Some((a, b, c))) = (normals.as_mut(), normal_cols) {
                ns.push(Vector3::new(vals[a], vals[b], vals[c]));
            }
        }
        Ok(PointCloud { frame, points, normals })
    }

    pub fn save_ply(&self, path: &Path) -> Result<(), LocalizationError> {
        std::fs::write(path, self.to_ply()).map_err(|e| LocalizationError::Io(e.to_string()))
    }

    pub fn load_ply(path: &Path) -> Result<PointCloud, LocalizationError> {
        let text = std::fs::read_to_string(path).map_err(|e| LocalizationError::Io(e.to_string()))?;
        Self::from_ply(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    /// Expected samples per square metre of visible surface.
    pub density_per_m2: f64,
    /// Standard deviation of a per-capture depth scale error: every point
    /// of one capture is scaled along its ray by the same `1 + ε`.
    pub depth_scale_sigma: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            density_per_m2: 40_000.0,
            depth_scale_sigma: 0.0,
        }
    }
}

/// Default depth camera: above and in front of the board, off to the
/// right so two side faces are visible.
pub fn default_camera() -> FrameTransform {
    camera_looking_at(Vector3::new(0.15, -0.35, 0.7), Vector3::new(0.5, 0.0, 0.03))
}

/// Camera pose with its optical (+z) axis through `target`.
pub fn camera_looking_at(eye: Vector3<f64>, target: Vector3<f64>) -> FrameTransform {
    let dir = target - eye;
    let up = if dir.cross(&Vector3::z()).norm() > 1e-9 * dir.norm() {
        Vector3::z()
    } else {
        Vector3::x()
    };
    let orientation = UnitQuaternion::face_towards(&dir, &up);
    FrameTransform::camera_in_robot(Pose::new(eye, orientation))
}

struct Face {
    /// Board-frame corner and the two spanning edges.
    origin: Vector3<f64>,
    u: Vector3<f64>,
    v: Vector3<f64>,
    normal: Vector3<f64>,
    top: bool,
}

fn board_faces(world: &BoardWorld) -> Vec<Face> {
    let [lx, ly, lz] = world.extents_m;
    let (hx, hy) = (lx / 2.0, ly / 2.0);
    vec![
        Face { origin: Vector3::new(-hx, -hy, 0.0), u: Vector3::new(lx, 0.0, 0.0), v: Vector3::new(0.0, ly, 0.0), normal: Vector3::z(), top: true },
        Face { origin: Vector3::new(hx, -hy, -lz), u: Vector3::new(0.0, ly, 0.0), v: Vector3::new(0.0, 0.0, lz), normal: Vector3::x(), top: false },
        Face { origin: Vector3::new(-hx, -hy, -lz), u: Vector3::new(0.0, ly, 0.0), v: Vector3::new(0.0, 0.0, lz), normal: -Vector3::x(), top: false },
        Face { origin: Vector3::new(-hx, hy, -lz), u: Vector3::new(lx, 0.0, 0.0), v: Vector3::new(0.0, 0.0, lz), normal: Vector3::y(), top: false },
        Face { origin: Vector3::new(-hx, -hy, -lz), u: Vector3::new(lx, 0.0, 0.0), v: Vector3::new(0.0, 0.0, lz), normal: -Vector3::y(), top: false },
    ]
}

pub fn render_cloud(
    world: &BoardWorld,
    camera: &FrameTransform,
    noise_sigma_m: f64,
    seed: u64,
) -> Result<PointCloud, LocalizationError> {
    render_cloud_with(world, camera, noise_sigma_m, seed, &RenderConfig::default())
}

/// Samples the board faces that face the camera, drops hole openings on
/// the top face, and returns the points in the camera frame with
/// per-coordinate Gaussian noise.
pub fn render_cloud_with(
    world: &BoardWorld,
    camera: &FrameTransform,
    noise_sigma_m: f64,
    seed: u64,
    config: &RenderConfig,
) -> Result<PointCloud, LocalizationError> {
    if !(noise_sigma_m >= 0.0) || !noise_sigma_m.is_finite() {
        return Err(LocalizationError::Parameter(format!("noise sigma {noise_sigma_m} must be >= 0")));
    }
    if !(config.density_per_m2 > 0.0) || !(config.depth_scale_sigma >= 0.0) {
        return Err(LocalizationError::Parameter("render density must be positive and depth sigma >= 0".into()));
    }
    camera.expect_frames(CAMERA_FRAME, ROBOT_FRAME)?;
    let to_camera = camera.inverse();
    let eye = camera.pose.position;
    let board = world.board_pose;
    let noise = Normal::new(0.0, noise_sigma_m.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = if config.depth_scale_sigma > 0.0 {
        1.0 + Normal::new(0.0, config.depth_scale_sigma).expect("finite sigma").sample(&mut rng)
    } else {
        1.0
    };

    let mut points = Vec::new();
    let mut normals = Vec::new();
    for face in board_faces(world) {
        let normal_r = board.orientation * face.normal;
        let centre_r = board.transform_point(&(face.origin + 0.5 * (face.u + face.v)));
        if normal_r.dot(&(eye - centre_r)) <= 0.0 {
            continue;
        }
        let area = face.u.norm() * face.v.norm();
        let count = (area * config.density_per_m2).round() as usize;
        let normal_c = to_camera.pose.orientation * normal_r;
        for _ in 0..count {
            let a: f64 = rng.random();
            let b: f64 = rng.random();
            let local = face.origin + a * face.u + b * face.v;
            if face.top && in_hole_opening(world, &local) {
                continue;
            }
            let mut p = to_camera.apply_point(&board.transform_point(&local));
            if p.z <= 0.0 {
                continue;
            }
            p *= scale;
            if noise_sigma_m > 0.0 {
                p += Vector3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
            }
            points.push(p);
            normals.push(normal_c);
        }
    }
    if points.is_empty() {
        return Err(LocalizationError::EmptyCloud);
    }
    Ok(PointCloud {
        frame: CAMERA_FRAME.to_string(),
        points,
        normals: Some(normals),
    })
}

fn in_hole_opening(world: &BoardWorld, local: &Vector3<f64>) -> bool {
    world.holes.iter().any(|h| {
        (Vector2::new(local.x, local.y) - Vector2::from(h.center_m)).norm() < h.radius_m
    })
}
