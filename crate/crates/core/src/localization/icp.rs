//! Point-to-point ICP with closed-form (SVD) rigid alignment.

use kiddo::immutable::float::kdtree::ImmutableKdTree;
use kiddo::SquaredEuclidean;
use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

use super::cloud::PointCloud;
use super::frames::FrameTransform;
use crate::error::LocalizationError;
use crate::pose::Pose;

pub const DEFAULT_MAX_ITERATIONS: usize = 60;
/// Stop once the mean squared correspondence error improves by less than
/// this (m²).
pub const DEFAULT_TOLERANCE_M2: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    /// Maps source-cloud coordinates onto the target cloud.
    pub transform: FrameTransform,
    pub rms_m: f64,
    pub iterations: usize,
    /// False when the iteration cap was hit first; the estimate is still
    /// the best one found.
    pub converged: bool,
    /// Correspondence RMS at each evaluated transform.
    pub rms_history: Vec<f64>,
}

type Tree = ImmutableKdTree<f64, u32, 3, 32>;

pub fn icp_register(
    source: &PointCloud,
    target: &PointCloud,
    init: &FrameTransform,
    max_iterations: usize,
    tolerance_m2: f64,
) -> Result<IcpResult, LocalizationError> {
    source.validate()?;
    target.validate()?;
    init.expect_frames(&source.frame, &target.frame)?;
    if max_iterations == 0 || !(tolerance_m2 >= 0.0) {
        return Err(LocalizationError::Parameter("icp needs max_iterations > 0 and tol >= 0".into()));
    }
    let coords: Vec<[f64; 3]> = target.points.iter().map(|p| [p.x, p.y, p.z]).collect();
    let tree: Tree = ImmutableKdTree::new_from_slice(&coords);

    let mut pose = init.pose;
    let mut history = Vec::new();
    let mut matched = vec![Vector3::zeros(); source.points.len()];
    let mut prev_mse = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    loop {
        let mse = correspond(&tree, &target.points, source, &pose, &mut matched);
        history.push(mse.sqrt());
        if prev_mse - mse < tolerance_m2 {
            converged = true;
            break;
        }
        if iterations == max_iterations {
            break;
        }
        prev_mse = mse;
        pose = kabsch(&source.points, &matched)?;
        iterations += 1;
    }
    Ok(IcpResult {
        transform: FrameTransform::new(&source.frame, &target.frame, pose),
        rms_m: *history.last().expect("at least one evaluation"),
        iterations,
        converged,
        rms_history: history,
    })
}

/// Nearest target point for every transformed source point; returns the
/// mean squared distance.
fn correspond(tree: &Tree, target: &[Vector3<f64>], source: &PointCloud, pose: &Pose, matched: &mut [Vector3<f64>]) -> f64 {
    let mut sum = 0.0;
    for (m, p) in matched.iter_mut().zip(&source.points) {
        let q = pose.transform_point(p);
        let nn = tree.nearest_one::<SquaredEuclidean>(&[q.x, q.y, q.z]);
        *m = target[nn.item as usize];
        sum += (q - *m).norm_squared();
    }
    sum / source.points.len() as f64
}

/// Least-squares rigid transform taking `from[i]` onto `to[i]`.
pub fn kabsch(from: &[Vector3<f64>], to: &[Vector3<f64>]) -> Result<Pose, LocalizationError> {
    if from.len() != to.len() || from.len() < 3 {
        return Err(LocalizationError::DegenerateCloud);
    }
    let n = from.len() as f64;
    let cf = from.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let ct = to.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let mut h = Matrix3::zeros();
    for (a, b) in from.iter().zip(to) {
        h += (a - cf) * (b - ct).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(LocalizationError::DegenerateCloud),
    };
    let mut s = svd.singular_values.as_slice().to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    if !(s[0] > 0.0) || s[1] <= 1e-12 * s[0] {
        return Err(LocalizationError::DegenerateCloud);
    }
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    Ok(Pose::new(ct - rotation * cf, rotation))
}
