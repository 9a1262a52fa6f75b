//! Circle fitting over a sliding window of trajectory points.
//!
//! Both fitters work on the algebraic residual
//!
//! ```text
//! L_t = (x_t − x0)² + (y_t − y0)² − r²
//!     = x_t² + y_t² − 2 x_t x0 − 2 y_t y0 + z,        z = x0² + y0² − r²
//! ```
//!
//! which is linear in `(x0, y0, z)`. [`kasa_fit`] minimises `Σ L_t²` with one
//! 3×3 solve. [`resilient_fit`] adds a per-point offset `a_t` and minimises
//! `Σ (L_t + a_t)² + λ Σ |a_t|`, which is jointly convex in `(x0, y0, z, a)`;
//! it alternates the exact 3×3 solve with closed-form soft-thresholding of
//! `a`, so a few grossly wrong points end up carried by their `a_t`.
//!
//! Internally the points are shifted to their centroid and scaled by their RMS
//! spread, which makes the fit translation equivariant to rounding and the
//! conditioning test independent of units.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use nalgebra::{Matrix3, Vector3};
#[allow(unused_imports)] // resolved to inherent methods when std is linked
use num_traits::Float;

use crate::{Error, Result, Vec2};

/// Default sliding-window length.
pub const DEFAULT_WINDOW: usize = 40;
/// Default convergence tolerance on parameter change (metres / m²).
pub const DEFAULT_TOL: f64 = 1e-8;
/// Default iteration cap for the block-coordinate solver.
pub const DEFAULT_MAX_ITER: usize = 200;
/// Normal matrices worse conditioned than this are treated as collinear data.
pub const MAX_CONDITION: f64 = 1e12;

/// Fitted circle and solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CircleFit {
    pub x0: f64,
    pub y0: f64,
    pub r: f64,
    /// Per-point offsets `a_t` in m², all zero for the plain KASA fit.
    pub offsets: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value at the returned parameters.
    pub residual: f64,
    /// ℓ1 weight used (0 for KASA).
    pub lambda: f64,
}

impl CircleFit {
    pub fn center(&self) -> Vec2 {
        Vec2::new(self.x0, self.y0)
    }
}

/// Knobs for [`FitSettings::fit`]; `lambda: None` selects [`default_lambda`].
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct FitSettings {
    pub window: usize,
    pub lambda: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            window: DEFAULT_WINDOW,
            lambda: None,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

impl FitSettings {
    pub fn fit(&self, points: &[Vec2]) -> Result<CircleFit> {
        let lambda = match self.lambda {
            Some(l) => l,
            None => default_lambda(points)?,
        };
        resilient_fit(points, lambda, self.tol, self.max_iter)
    }
}

/// Fixed-capacity FIFO of the most recent trajectory points.
#[derive(Debug, Clone)]
pub struct PointWindow {
    capacity: usize,
    points: VecDeque<Vec2>,
}

impl PointWindow {
    pub fn new(capacity: usize) -> Self {
        PointWindow {
            capacity,
            points: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, p: Vec2) {
        if self.points.len() == self.capacity {
            self.points.pop_front();
        }
        self.points.push_back(p);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.points.len() == self.capacity
    }

    pub fn clear(&mut self) {
        self.points.clear();
    }

    /// Oldest-first copy of the window contents.
    pub fn to_vec(&self) -> Vec<Vec2> {
        self.points.iter().copied().collect()
    }
}

/// Centred and scaled copy of the data together with the factored normal
/// equations of the linear block.
struct Problem {
    centroid: Vec2,
    scale: f64,
    rows: Vec<Vector3<f64>>,
    targets: Vec<f64>,
    normal: nalgebra::Cholesky<f64, nalgebra::U3>,
}

impl Problem {
    fn new(points: &[Vec2]) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::Fit("need at least three points"));
        }
        if points.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(Error::Fit("non-finite point"));
        }
        let n = points.len() as f64;
        let centroid = points.iter().fold(Vec2::zeros(), |acc, p| acc + p) / n;
        let spread = points.iter().map(|p| (p - centroid).norm_squared()).sum::<f64>() / n;
        if !(spread > 0.0) {
            return Err(Error::Fit("points coincide"));
        }
        let scale = spread.sqrt();

        let mut rows = Vec::with_capacity(points.len());
        let mut targets = Vec::with_capacity(points.len());
        let mut m = Matrix3::zeros();
        for p in points {
            let u = (p - centroid) / scale;
            let row = Vector3::new(-2.0 * u.x, -2.0 * u.y, 1.0);
            m += row * row.transpose();
            rows.push(row);
            targets.push(-u.norm_squared());
        }

        let eig = m.symmetric_eigenvalues();
        let (lo, hi) = (eig.min(), eig.max());
        if !(lo > 0.0) || hi / lo > MAX_CONDITION {
            return Err(Error::Fit("ill-conditioned normal equations (collinear points)"));
        }
        let normal = m
            .cholesky()
            .ok_or(Error::Fit("ill-conditioned normal equations (collinear points)"))?;

        Ok(Problem {
            centroid,
            scale,
            rows,
            targets,
            normal,
        })
    }

    /// Least-squares `(x0, y0, z)` in scaled coordinates for offsets `a`.
    fn solve(&self, offsets: &[f64]) -> Vector3<f64> {
        let mut rhs = Vector3::zeros();
        for ((row, b), a) in self.rows.iter().zip(&self.targets).zip(offsets) {
            rhs += row * (b - a);
        }
        self.normal.solve(&rhs)
    }

    fn residuals(&self, q: &Vector3<f64>, out: &mut [f64]) {
        for ((l, row), b) in out.iter_mut().zip(&self.rows).zip(&self.targets) {
            *l = row.dot(q) - b;
        }
    }

    /// Objective in scaled units for scaled `lambda`.
    fn objective(&self, q: &Vector3<f64>, offsets: &[f64], lambda: f64) -> f64 {
        let mut sq = 0.0;
        let mut l1 = 0.0;
        for ((row, b), a) in self.rows.iter().zip(&self.targets).zip(offsets) {
            let l = row.dot(q) - b + a;
            sq += l * l;
            l1 += a.abs();
        }
        sq + lambda * l1
    }

    fn finish(
        &self,
        q: &Vector3<f64>,
        offsets: &[f64],
        lambda_scaled: f64,
        lambda: f64,
        iterations: usize,
        converged: bool,
    ) -> Result<CircleFit> {
        let r2 = q.x * q.x + q.y * q.y - q.z;
        if !(r2 > 0.0) {
            return Err(Error::Fit("non-positive squared radius"));
        }
        let s2 = self.scale * self.scale;
        Ok(CircleFit {
            x0: self.centroid.x + self.scale * q.x,
            y0: self.centroid.y + self.scale * q.y,
            r: self.scale * r2.sqrt(),
            offsets: offsets.iter().map(|a| a * s2).collect(),
            iterations,
            converged,
            residual: self.objective(q, offsets, lambda_scaled) * s2 * s2,
            lambda,
        })
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Plain algebraic (KASA) circle fit.
pub fn kasa_fit(points: &[Vec2]) -> Result<CircleFit> {
    let problem = Problem::new(points)?;
    let zeros = alloc::vec![0.0; points.len()];
    let q = problem.solve(&zeros);
    problem.finish(&q, &zeros, 0.0, 0.0, 1, true)
}

/// Default ℓ1 weight: twice the median absolute algebraic residual of a plain
/// KASA fit (m²).
pub fn default_lambda(points: &[Vec2]) -> Result<f64> {
    let problem = Problem::new(points)?;
    let zeros = alloc::vec![0.0; points.len()];
    let q = problem.solve(&zeros);
    let mut l = alloc::vec![0.0; points.len()];
    problem.residuals(&q, &mut l);
    let mut abs: Vec<f64> = l.iter().map(|v| v.abs()).collect();
    abs.sort_by(|a, b| a.total_cmp(b));
    let n = abs.len();
    let median = if n % 2 == 1 {
        abs[n / 2]
    } else {
        0.5 * (abs[n / 2 - 1] + abs[n / 2])
    };
    let s2 = problem.scale * problem.scale;
    // exact-circle data has zero residuals; keep λ strictly positive
    Ok((2.0 * median * s2).max(f64::EPSILON * s2))
}

/// ℓ1-resilient circle fit by block coordinate descent.
///
/// Stops once no parameter (centre, `z`, any `a_t`) moves by more than `tol`
/// in one sweep; otherwise returns the last iterate with `converged = false`
/// after `max_iter` sweeps.
pub fn resilient_fit(points: &[Vec2], lambda: f64, tol: f64, max_iter: usize) -> Result<CircleFit> {
    resilient_fit_traced(points, lambda, tol, max_iter, |_| {})
}

/// [`resilient_fit`] reporting the objective (original units) after each sweep.
pub fn resilient_fit_traced(
    points: &[Vec2],
    lambda: f64,
    tol: f64,
    max_iter: usize,
    mut on_sweep: impl FnMut(f64),
) -> Result<CircleFit> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::InvalidParameter(
            "lambda must be positive: with lambda = 0 every circle reaches zero cost",
        ));
    }
    if !(tol > 0.0) || max_iter == 0 {
        return Err(Error::InvalidParameter("tol must be positive and max_iter at least 1"));
    }
    let problem = Problem::new(points)?;
    let n = points.len();
    let s = problem.scale;
    let s2 = s * s;
    let lambda_scaled = lambda / s2;
    let threshold = 0.5 * lambda_scaled;

    let mut offsets = alloc::vec![0.0; n];
    let mut next = alloc::vec![0.0; n];
    let mut resid = alloc::vec![0.0; n];
    let mut q = problem.solve(&offsets);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iter {
        iterations += 1;
        problem.residuals(&q, &mut resid);
        let mut change: f64 = 0.0;
        for ((a_new, a_old), l) in next.iter_mut().zip(&offsets).zip(&resid) {
            *a_new = soft_threshold(-l, threshold);
            change = change.max((*a_new - a_old).abs() * s2);
        }
        core::mem::swap(&mut offsets, &mut next);
        let q_new = problem.solve(&offsets);
        let dq = q_new - q;
        change = change
            .max(dq.x.abs() * s)
            .max(dq.y.abs() * s)
            .max(dq.z.abs() * s2);
        q = q_new;
        on_sweep(problem.objective(&q, &offsets, lambda_scaled) * s2 * s2);
        if change < tol {
            converged = true;
            break;
        }
    }

    problem.finish(&q, &offsets, lambda_scaled, lambda, iterations, converged)
}

/// Objective `Σ ((x_t−x0)² + (y_t−y0)² + a_t − r²)² + λ Σ |a_t|` in original units.
pub fn objective(points: &[Vec2], fit: &CircleFit) -> f64 {
    let c = fit.center();
    let r2 = fit.r * fit.r;
    let mut sq = 0.0;
    let mut l1 = 0.0;
    for (p, a) in points.iter().zip(&fit.offsets) {
        let l = (p - c).norm_squared() + a - r2;
        sq += l * l;
        l1 += a.abs();
    }
    sq + fit.lambda * l1
}

/// Reference point lists: an arc of clean samples and the same arc with two
/// corrupted samples.
pub mod fixtures {
    use super::Vec2;
    use alloc::vec::Vec;

    /// Clean samples on a quarter-turn arc of radius ≈ 1.37.
    pub const ARC_CLEAN: [(f64, f64); 39] = [
        (1.31695, 0.438211),
        (1.29153, 0.495296),
        (1.28114, 0.528689),
        (1.28807, 0.591908),
        (1.30889, 0.613455),
        (1.24189, 0.664643),
        (1.20623, 0.69341),
        (1.17255, 0.707302),
        (1.15439, 0.795177),
        (1.18347, 0.794302),
        (1.0894, 0.812338),
        (1.09144, 0.868753),
        (1.04591, 0.926538),
        (1.02975, 0.990549),
        (0.993186, 0.994385),
        (0.913429, 1.03749),
        (0.890262, 1.08594),
        (0.845472, 1.09054),
        (0.810598, 1.09581),
        (0.802965, 1.14723),
        (0.760609, 1.18292),
        (0.71729, 1.18491),
        (0.688754, 1.19627),
        (0.636218, 1.24694),
        (0.591107, 1.24367),
        (0.580389, 1.28852),
        (0.502455, 1.27997),
        (0.475983, 1.25609),
        (0.453809, 1.28383),
        (0.389016, 1.36384),
        (0.359735, 1.35976),
        (0.336149, 1.3196),
        (0.286739, 1.38282),
        (0.248569, 1.38608),
        (0.210623, 1.42145),
        (0.145579, 1.41073),
        (0.135016, 1.3774),
        (0.0516843, 1.41288),
        (0.0255824, 1.37071),
    ];

    /// The same arc with the samples at indices 5 and 8 displaced outwards.
    pub const ARC_CORRUPTED: [(f64, f64); 39] = [
        (1.29153, 0.495296),
        (1.28114, 0.528689),
        (1.28807, 0.591908),
        (1.30889, 0.613455),
        (1.24189, 0.664643),
        (1.70623, 0.69341),
        (1.17255, 0.707302),
        (1.15439, 0.795177),
        (1.88347, 0.794302),
        (1.0894, 0.812338),
        (1.09144, 0.868753),
        (1.02091, 0.909914),
        (1.04591, 0.926538),
        (1.02975, 0.990549),
        (0.993186, 0.994385),
        (0.913429, 1.03749),
        (0.890262, 1.08594),
        (0.845472, 1.09054),
        (0.810598, 1.09581),
        (0.802965, 1.14723),
        (0.760609, 1.18292),
        (0.71729, 1.18491),
        (0.688754, 1.19627),
        (0.636218, 1.24694),
        (0.591107, 1.24367),
        (0.580389, 1.28852),
        (0.502455, 1.27997),
        (0.475983, 1.25609),
        (0.453809, 1.28383),
        (0.389016, 1.36384),
        (0.359735, 1.35976),
        (0.336149, 1.3196),
        (0.286739, 1.38282),
        (0.248569, 1.38608),
        (0.210623, 1.42145),
        (0.145579, 1.41073),
        (0.135016, 1.3774),
        (0.0516843, 1.41288),
        (0.0255824, 1.37071),
    ];

    pub const CORRUPTED_INDICES: [usize; 2] = [5, 8];

    pub fn points(list: &[(f64, f64)]) -> Vec<Vec2> {
        list.iter().map(|&(x, y)| Vec2::new(x, y)).collect()
    }
}
