//! Random vector field estimation: the expected Moran-space movement at a
//! point is the kernel-weighted average of the observed transitions, with
//! weights given by each transition's share of the adaptive density of the
//! start points.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Bounds, Vec2};
use crate::kde::{AdaptiveDensity, Covariance, Kernel, NormalizerRule};
use crate::moran::Transition;
use crate::par;

pub const DEFAULT_RESOLUTION: usize = 50;

/// Regular lattice of evaluation points, stored row-major
/// (`index = iy * nx + ix`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalGrid {
    pub bounds: Bounds,
    pub nx: usize,
    pub ny: usize,
}

impl EvalGrid {
    pub fn new(bounds: Bounds, nx: usize, ny: usize) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::invalid(format!("grid needs at least 2 nodes per axis, got {nx}x{ny}")));
        }
        if !(bounds.width() > 0.0 && bounds.height() > 0.0) {
            return Err(Error::invalid("grid bounds have zero extent"));
        }
        Ok(EvalGrid { bounds, nx, ny })
    }

    /// Grid over the bounding box of `points`, expanded on each axis by `h`
    /// sample standard deviations of the first `n_scale` points.
    pub fn covering(points: &[Vec2], n_scale: usize, h: f64, nx: usize, ny: usize) -> Result<Self> {
        let bounds = Bounds::of_points(points).ok_or_else(|| Error::invalid("no points to cover"))?;
        let cov = Covariance::sample(&points[..n_scale.min(points.len())])?;
        EvalGrid::new(bounds.expand(h * cov.xx.sqrt(), h * cov.yy.sqrt()), nx, ny)
    }

    /// Grid covering the start and end points of `transitions`, expanded by
    /// one bandwidth in the scale of the start points.
    pub fn for_transitions(transitions: &[Transition], h: f64, nx: usize, ny: usize) -> Result<Self> {
        let mut pts: Vec<Vec2> = transitions.iter().map(|t| t.start).collect();
        let n = pts.len();
        pts.extend(transitions.iter().map(|t| t.end));
        EvalGrid::covering(&pts, n, h, nx, ny)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dx(&self) -> f64 {
        self.bounds.width() / (self.nx - 1) as f64
    }

    pub fn dy(&self) -> f64 {
        self.bounds.height() / (self.ny - 1) as f64
    }

    pub fn x(&self, ix: usize) -> f64 {
        if ix == self.nx - 1 {
            self.bounds.max.x
        } else {
            self.bounds.min.x + ix as f64 * self.dx()
        }
    }

    pub fn y(&self, iy: usize) -> f64 {
        if iy == self.ny - 1 {
            self.bounds.max.y
        } else {
            self.bounds.min.y + iy as f64 * self.dy()
        }
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    pub fn node(&self, k: usize) -> Vec2 {
        Vec2::new(self.x(k % self.nx), self.y(k / self.nx))
    }

    pub fn nodes(&self) -> impl Iterator<Item = Vec2> + '_ {
        (0..self.len()).map(|k| self.node(k))
    }
}

/// Estimated field on a grid. `None` arrows mark nodes with zero kernel
/// mass; they carry no estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorFieldGrid {
    pub grid: EvalGrid,
    /// Expected displacement over `tau` years.
    pub arrows: Vec<Option<Vec2>>,
    /// Kernel mass in transition equivalents (see [`AdaptiveDensity::mass_scale`]).
    pub mass: Vec<f64>,
    /// Circular variance of bootstrap arrow directions, when computed.
    pub direction_variance: Vec<Option<f64>>,
    pub significant: Vec<bool>,
    /// Years spanned by the transitions behind the field.
    pub tau: f64,
}

impl VectorFieldGrid {
    pub fn arrow(&self, ix: usize, iy: usize) -> Option<Vec2> {
        self.arrows[self.grid.index(ix, iy)]
    }

    pub fn n_nonempty(&self) -> usize {
        self.arrows.iter().filter(|a| a.is_some()).count()
    }

    /// A field with the given arrows everywhere (no mass bookkeeping).
    pub fn from_fn(grid: EvalGrid, tau: f64, f: impl Fn(Vec2) -> Option<Vec2>) -> Self {
        let arrows: Vec<Option<Vec2>> = grid.nodes().map(f).collect();
        let mass = arrows.iter().map(|a| if a.is_some() { 1.0 } else { 0.0 }).collect();
        VectorFieldGrid {
            grid,
            mass,
            direction_variance: vec![None; grid.len()],
            significant: vec![false; grid.len()],
            arrows,
            tau,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RvfParams {
    pub h: f64,
    pub alpha: f64,
    pub kernel: Kernel,
    pub rule: NormalizerRule,
}

impl RvfParams {
    pub fn new(h: f64, alpha: f64) -> Self {
        RvfParams { h, alpha, kernel: Kernel::Epanechnikov, rule: NormalizerRule::default() }
    }
}

/// Estimate at one evaluation point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeEstimate {
    pub arrow: Option<Vec2>,
    pub mass: f64,
}

/// Field estimator over a fixed set of transitions.
#[derive(Debug, Clone)]
pub struct RvfEstimator {
    density: AdaptiveDensity,
    deltas: Vec<Vec2>,
    mass_scale: f64,
    tau: f64,
}

impl RvfEstimator {
    pub fn new(starts: &[Vec2], deltas: &[Vec2], tau: f64, params: &RvfParams) -> Result<Self> {
        if starts.len() != deltas.len() {
            return Err(Error::invalid("starts and deltas differ in length"));
        }
        if deltas.iter().any(|d| !d.is_finite()) {
            return Err(Error::invalid("non-finite transition"));
        }
        let density = AdaptiveDensity::with_rule(starts, params.h, params.alpha, params.kernel, params.rule)?;
        let mass_scale = density.mass_scale();
        Ok(RvfEstimator { density, deltas: deltas.to_vec(), mass_scale, tau })
    }

    pub fn from_transitions(transitions: &[Transition], params: &RvfParams) -> Result<Self> {
        let starts: Vec<Vec2> = transitions.iter().map(|t| t.start).collect();
        let deltas: Vec<Vec2> = transitions.iter().map(|t| t.delta).collect();
        let tau = transitions.first().map_or(1.0, |t| t.horizon as f64);
        Self::new(&starts, &deltas, tau, params)
    }

    pub fn density(&self) -> &AdaptiveDensity {
        &self.density
    }

    /// Normalized weights `omega_j(z)` of the transitions with non-zero
    /// kernel at `z`. Empty when the density vanishes there.
    pub fn weights_at(&self, z: Vec2) -> Vec<(usize, f64)> {
        let mut contrib = Vec::new();
        self.density.for_each_contribution(z, |j, c| contrib.push((j, c)));
        let total: f64 = contrib.iter().map(|c| c.1).sum();
        if !(total > 0.0) {
            return Vec::new();
        }
        contrib.into_iter().map(|(j, c)| (j, c / total)).collect()
    }

    pub fn estimate_at(&self, z: Vec2) -> NodeEstimate {
        // Deviations from the first contributing delta are averaged, so a
        // constant set of deltas is reproduced bit for bit.
        let mut total = 0.0;
        let mut anchor: Option<Vec2> = None;
        let mut acc = Vec2::ZERO;
        self.density.for_each_contribution(z, |j, c| {
            let d = self.deltas[j];
            let a = *anchor.get_or_insert(d);
            total += c;
            acc += (d - a) * c;
        });
        match anchor {
            Some(a) if total > 0.0 => NodeEstimate {
                arrow: Some(a + acc * (1.0 / total)),
                mass: total * self.mass_scale,
            },
            _ => NodeEstimate { arrow: None, mass: 0.0 },
        }
    }

    /// Kish effective sample size `1 / sum_j omega_j^2` at `z`, zero where
    /// the density vanishes.
    pub fn effective_n_at(&self, z: Vec2) -> f64 {
        let w = self.weights_at(z);
        if w.is_empty() {
            return 0.0;
        }
        1.0 / w.iter().map(|(_, x)| x * x).sum::<f64>()
    }

    pub fn effective_n_on_grid(&self, grid: &EvalGrid) -> Vec<f64> {
        par::map_range(grid.len(), |k| self.effective_n_at(grid.node(k)))
    }

    /// Evaluates every grid node; the result may be entirely empty.
    pub fn on_grid(&self, grid: &EvalGrid) -> VectorFieldGrid {
        let est = par::map_range(grid.len(), |k| self.estimate_at(grid.node(k)));
        VectorFieldGrid {
            grid: *grid,
            arrows: est.iter().map(|e| e.arrow).collect(),
            mass: est.iter().map(|e| e.mass).collect(),
            direction_variance: vec![None; grid.len()],
            significant: vec![false; grid.len()],
            tau: self.tau,
        }
    }
}

/// Estimates the field on `grid`. Fails when no node has kernel mass.
pub fn estimate_rvf(transitions: &[Transition], params: &RvfParams, grid: &EvalGrid) -> Result<VectorFieldGrid> {
    if transitions.len() < 3 {
        return Err(Error::invalid(format!(
            "field estimation needs at least 3 transitions, got {}",
            transitions.len()
        )));
    }
    let field = RvfEstimator::from_transitions(transitions, params)?.on_grid(grid);
    if field.n_nonempty() == 0 {
        return Err(Error::EmptyField);
    }
    Ok(field)
}

/// Circular variance `1 - |mean of unit vectors|` of a set of arrows.
/// Zero-length and non-finite arrows carry no direction and are skipped.
pub fn direction_variance(arrows: &[Vec2]) -> Result<f64> {
    let finite: Vec<Vec2> = arrows.iter().copied().filter(|a| a.is_finite()).collect();
    if finite.len() < 2 {
        return Err(Error::invalid("direction variance needs at least 2 finite arrows"));
    }
    let mut sum = Vec2::ZERO;
    let mut n = 0usize;
    for a in finite {
        let r = a.norm();
        if r > 0.0 {
            sum += a * (1.0 / r);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Degenerate("every arrow has zero length".into()));
    }
    Ok((1.0 - sum.norm() / n as f64).clamp(0.0, 1.0))
}
