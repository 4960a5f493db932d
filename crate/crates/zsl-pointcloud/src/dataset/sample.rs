//! Surface sampling and unit-sphere normalization.

use ndarray::Array2;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::mesh::TriangleMesh;

/// Fixed-size point set for one object. Coordinates are stored in single
/// precision, matching the on-disk cache format.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Array2<f32>,
    normalized: bool,
}

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("mesh has no face with nonzero area")]
    ZeroAreaMesh,
    #[error("point cloud must contain at least one point")]
    Empty,
    #[error("point cloud contains a non-finite coordinate")]
    NonFinite,
    #[error("all points coincide; unit-sphere scale is degenerate")]
    DegenerateScale,
}

impl PointCloud {
    /// Wraps an `n x 3` coordinate matrix, validating finiteness.
    pub fn new(points: Array2<f32>, normalized: bool) -> Result<Self, SampleError> {
        if points.nrows() == 0 {
            return Err(SampleError::Empty);
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(SampleError::NonFinite);
        }
        Ok(PointCloud { points, normalized })
    }

    pub fn n(&self) -> usize {
        self.points.nrows()
    }

    pub fn points(&self) -> &Array2<f32> {
        &self.points
    }

    pub fn normalized(&self) -> bool {
        self.normalized
    }

    /// Converts coordinates to the requested float precision.
    pub fn points_as<F: num_traits::Float>(&self) -> Array2<F> {
        self.points.mapv(|v| F::from(v).unwrap())
    }

    /// Centroid (computed in double precision) and maximum point norm.
    pub fn centroid_and_max_norm(&self) -> ([f64; 3], f64) {
        let n = self.n() as f64;
        let mut c = [0.0f64; 3];
        for row in self.points.rows() {
            for k in 0..3 {
                c[k] += f64::from(row[k]);
            }
        }
        for item in &mut c {
            *item /= n;
        }
        let mut max_norm: f64 = 0.0;
        for row in self.points.rows() {
            let norm = (0..3)
                .map(|k| f64::from(row[k]))
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            max_norm = max_norm.max(norm);
        }
        (c, max_norm)
    }
}

/// Area-weighted uniform surface sampling, deterministic given `seed`.
pub fn sample_points(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<PointCloud, SampleError> {
    if n == 0 {
        return Err(SampleError::Empty);
    }
    let mut cumulative = Vec::with_capacity(mesh.faces.len() + 1);
    cumulative.push(0.0f64);
    for f in 0..mesh.faces.len() {
        let a = mesh.face_area(f);
        cumulative.push(cumulative[f] + a);
    }
    let total = *cumulative.last().unwrap();
    if total <= 0.0 || !total.is_finite() {
        return Err(SampleError::ZeroAreaMesh);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Array2::<f32>::zeros((n, 3));
    for i in 0..n {
        let target = rng.random_range(0.0..total);
        // First face whose cumulative upper bound exceeds the draw; zero-area
        // faces occupy empty intervals and are never selected.
        let face = cumulative.partition_point(|&c| c <= target).saturating_sub(1);
        let face = face.min(mesh.faces.len() - 1);
        let [ia, ib, ic] = mesh.faces[face];
        let (a, b, c) = (mesh.vertices[ia], mesh.vertices[ib], mesh.vertices[ic]);
        // Square-root warp gives the uniform distribution over the triangle.
        let r1 = rng.random_range(0.0f64..1.0).sqrt();
        let r2 = rng.random_range(0.0f64..1.0);
        let (w0, w1, w2) = (1.0 - r1, r1 * (1.0 - r2), r1 * r2);
        for k in 0..3 {
            points[[i, k]] = (w0 * a[k] + w1 * b[k] + w2 * c[k]) as f32;
        }
    }
    PointCloud::new(points, false)
}

/// Margin below 1.0 chosen so the maximum norm stays at most 1 after the
/// double-to-single rounding of the output coordinates.
const UNIT_SPHERE_MARGIN: f64 = 1e-6;

/// Centers the cloud at its centroid and scales so the farthest point sits
/// on the unit sphere.
pub fn normalize_unit_sphere(cloud: &PointCloud) -> Result<PointCloud, SampleError> {
    let n = cloud.n();
    let pts = cloud.points();
    let mut centroid = [0.0f64; 3];
    for row in pts.rows() {
        for k in 0..3 {
            centroid[k] += f64::from(row[k]);
        }
    }
    for item in &mut centroid {
        *item /= n as f64;
    }
    let mut max_norm: f64 = 0.0;
    for row in pts.rows() {
        let norm = (0..3)
            .map(|k| f64::from(row[k]) - centroid[k])
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        max_norm = max_norm.max(norm);
    }
    if max_norm < 1e-12 {
        return Err(SampleError::DegenerateScale);
    }
    let scale = (1.0 - UNIT_SPHERE_MARGIN) / max_norm;
    let mut out = Array2::<f32>::zeros((n, 3));
    for (i, row) in pts.rows().into_iter().enumerate() {
        for k in 0..3 {
            out[[i, k]] = ((f64::from(row[k]) - centroid[k]) * scale) as f32;
        }
    }
    PointCloud::new(out, true)
}
