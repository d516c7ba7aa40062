//! Bivariate adaptive kernel density estimation with full sample covariance.
//!
//! Distances are Mahalanobis distances under the sample covariance `S`. A
//! fixed-bandwidth pilot estimate sets one bandwidth factor per observation,
//! `lambda_j = (pilot(z_j) / g)^(-alpha)`, widening kernels where data are
//! sparse. With the compact Epanechnikov profile each query only visits the
//! observations whose support contains it, found through a cell index built
//! in whitened coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Bounds, Vec2};
use crate::par;

/// Radial kernel profile `k(u)` with `K(z) = k(|z|^2)` integrating to one
/// over the plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    /// `K(z) = (2 / pi) (1 - |z|^2)` on the unit disc.
    #[default]
    Epanechnikov,
    /// Standard bivariate normal.
    Gaussian,
}

impl Kernel {
    /// Profile at squared radius `u`.
    #[inline]
    pub fn profile(self, u: f64) -> f64 {
        match self {
            Kernel::Epanechnikov => {
                if u < 1.0 {
                    std::f64::consts::FRAC_2_PI * (1.0 - u)
                } else {
                    0.0
                }
            }
            Kernel::Gaussian => (-0.5 * u).exp() / (2.0 * std::f64::consts::PI),
        }
    }

    /// Support radius in Mahalanobis units, `None` for unbounded kernels.
    pub fn support(self) -> Option<f64> {
        match self {
            Kernel::Epanechnikov => Some(1.0),
            Kernel::Gaussian => None,
        }
    }

    pub fn peak(self) -> f64 {
        self.profile(0.0)
    }
}

/// Symmetric positive-definite 2x2 covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Covariance {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Covariance {
    pub fn new(xx: f64, xy: f64, yy: f64) -> Result<Self> {
        let c = Covariance { xx, xy, yy };
        if !(xx > 0.0 && yy > 0.0) || !c.det().is_finite() || c.det() <= 1e-12 * xx * yy {
            return Err(Error::SingularCovariance);
        }
        Ok(c)
    }

    /// Unbiased sample covariance.
    pub fn sample(points: &[Vec2]) -> Result<Self> {
        let n = points.len() as f64;
        if points.len() < 2 {
            return Err(Error::SingularCovariance);
        }
        let mx = points.iter().map(|p| p.x).sum::<f64>() / n;
        let my = points.iter().map(|p| p.y).sum::<f64>() / n;
        let (mut xx, mut xy, mut yy) = (0.0, 0.0, 0.0);
        for p in points {
            let dx = p.x - mx;
            let dy = p.y - my;
            xx += dx * dx;
            xy += dx * dy;
            yy += dy * dy;
        }
        Covariance::new(xx / (n - 1.0), xy / (n - 1.0), yy / (n - 1.0))
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    /// `d^T S^-1 d`.
    pub fn mahalanobis_sq(&self, d: Vec2) -> f64 {
        (self.yy * d.x * d.x - 2.0 * self.xy * d.x * d.y + self.xx * d.y * d.y) / self.det()
    }

    fn whitener(&self) -> Whitener {
        let l11 = self.xx.sqrt();
        let l21 = self.xy / l11;
        let l22 = (self.yy - l21 * l21).sqrt();
        Whitener { l11, l21, l22 }
    }
}

/// Applies `L^-1` where `S = L L^T`, so squared Euclidean distances of
/// whitened points are Mahalanobis distances.
#[derive(Debug, Clone, Copy)]
struct Whitener {
    l11: f64,
    l21: f64,
    l22: f64,
}

impl Whitener {
    #[inline]
    fn apply(&self, z: Vec2) -> Vec2 {
        let u = z.x / self.l11;
        Vec2::new(u, (z.y - self.l21 * u) / self.l22)
    }
}

/// How the normalizer `g` of the local bandwidth factors aggregates pilot
/// values at the sample points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizerRule {
    /// `g = exp(mean(ln f))`.
    GeometricMean,
    /// `g = exp(mean(f))`.
    ExpOfMean,
}

impl Default for NormalizerRule {
    fn default() -> Self {
        if cfg!(feature = "literal-geomean") {
            NormalizerRule::ExpOfMean
        } else {
            NormalizerRule::GeometricMean
        }
    }
}

/// Points whose support is wider than this many base radii skip the cell
/// index and are checked on every query.
const WIDE_SUPPORT: f64 = 8.0;
const MAX_CELLS: usize = 1 << 22;

/// Cell index over whitened kernel supports. Each cell lists every point
/// whose support box overlaps it.
#[derive(Debug, Clone)]
struct CellIndex {
    origin: Vec2,
    cell: f64,
    nx: usize,
    ny: usize,
    starts: Vec<usize>,
    items: Vec<u32>,
    wide: Vec<u32>,
}

impl CellIndex {
    fn build(centers: &[Vec2], radii: &[f64], base: f64) -> CellIndex {
        let (narrow, wide): (Vec<usize>, Vec<usize>) =
            (0..centers.len()).partition(|&j| radii[j] <= WIDE_SUPPORT * base);
        let wide: Vec<u32> = wide.into_iter().map(|j| j as u32).collect();
        let Some(bounds) = support_bounds(narrow.iter().map(|&j| (centers[j], radii[j]))) else {
            return CellIndex {
                origin: Vec2::ZERO,
                cell: 1.0,
                nx: 0,
                ny: 0,
                starts: vec![0],
                items: Vec::new(),
                wide,
            };
        };
        let mut cell = base;
        let dims = |cell: f64| {
            (
                ((bounds.width() / cell).floor() as usize + 1),
                ((bounds.height() / cell).floor() as usize + 1),
            )
        };
        while {
            let (nx, ny) = dims(cell);
            nx.saturating_mul(ny) > MAX_CELLS
        } {
            cell *= 2.0;
        }
        let (nx, ny) = dims(cell);
        let origin = bounds.min;
        let span = |c: Vec2, r: f64| {
            let ix0 = (((c.x - r - origin.x) / cell).floor().max(0.0) as usize).min(nx - 1);
            let ix1 = (((c.x + r - origin.x) / cell).floor().max(0.0) as usize).min(nx - 1);
            let iy0 = (((c.y - r - origin.y) / cell).floor().max(0.0) as usize).min(ny - 1);
            let iy1 = (((c.y + r - origin.y) / cell).floor().max(0.0) as usize).min(ny - 1);
            (ix0, ix1, iy0, iy1)
        };
        let mut counts = vec![0usize; nx * ny + 1];
        for &j in &narrow {
            let (ix0, ix1, iy0, iy1) = span(centers[j], radii[j]);
            for iy in iy0..=iy1 {
                for ix in ix0..=ix1 {
                    counts[iy * nx + ix + 1] += 1;
                }
            }
        }
        for k in 1..counts.len() {
            counts[k] += counts[k - 1];
        }
        let starts = counts.clone();
        let mut fill = counts;
        let mut items = vec![0u32; *starts.last().unwrap()];
        for &j in &narrow {
            let (ix0, ix1, iy0, iy1) = span(centers[j], radii[j]);
            for iy in iy0..=iy1 {
                for ix in ix0..=ix1 {
                    let c = iy * nx + ix;
                    items[fill[c]] = j as u32;
                    fill[c] += 1;
                }
            }
        }
        CellIndex { origin, cell, nx, ny, starts, items, wide }
    }

    /// Candidate points for a whitened query, in ascending index order
    /// within the cell followed by the wide-support points.
    fn candidates(&self, u: Vec2) -> impl Iterator<Item = usize> + '_ {
        let fx = ((u.x - self.origin.x) / self.cell).floor();
        let fy = ((u.y - self.origin.y) / self.cell).floor();
        let cell_items: &[u32] = if self.nx > 0
            && fx >= 0.0
            && fy >= 0.0
            && (fx as usize) < self.nx
            && (fy as usize) < self.ny
        {
            let c = fy as usize * self.nx + fx as usize;
            &self.items[self.starts[c]..self.starts[c + 1]]
        } else {
            &[]
        };
        cell_items.iter().chain(self.wide.iter()).map(|&j| j as usize)
    }
}

fn support_bounds(supports: impl Iterator<Item = (Vec2, f64)>) -> Option<Bounds> {
    let mut b: Option<Bounds> = None;
    for (c, r) in supports {
        let lo = Vec2::new(c.x - r, c.y - r);
        let hi = Vec2::new(c.x + r, c.y + r);
        b = Some(match b {
            None => Bounds { min: lo, max: hi },
            Some(b) => Bounds {
                min: Vec2::new(b.min.x.min(lo.x), b.min.y.min(lo.y)),
                max: Vec2::new(b.max.x.max(hi.x), b.max.y.max(hi.y)),
            },
        });
    }
    b
}

/// Sum of per-observation kernels `c_j(z) = norm / b_j * k(|w(z) - w_j|^2 / b_j)`
/// with `b_j = (h lambda_j)^2` and `norm = det(S)^(-1/2) / N`.
#[derive(Debug, Clone)]
struct KernelSum {
    kernel: Kernel,
    whitener: Whitener,
    centers: Vec<Vec2>,
    inv_bw2: Vec<f64>,
    norm: f64,
    index: Option<CellIndex>,
}

impl KernelSum {
    fn new(kernel: Kernel, cov: &Covariance, points: &[Vec2], h: f64, lambdas: Option<&[f64]>) -> Self {
        let whitener = cov.whitener();
        let centers: Vec<Vec2> = points.iter().map(|&p| whitener.apply(p)).collect();
        let bw: Vec<f64> = match lambdas {
            Some(l) => l.iter().map(|l| h * l).collect(),
            None => vec![h; points.len()],
        };
        let inv_bw2 = bw.iter().map(|b| 1.0 / (b * b)).collect();
        let index = kernel.support().map(|r| {
            let radii: Vec<f64> = bw.iter().map(|b| b * r).collect();
            CellIndex::build(&centers, &radii, h * r)
        });
        KernelSum {
            kernel,
            whitener,
            centers,
            inv_bw2,
            norm: 1.0 / (cov.det().sqrt() * points.len() as f64),
            index,
        }
    }

    /// Calls `f(j, c_j(z))` for every observation with a non-zero kernel at `z`.
    #[inline]
    fn for_each(&self, z: Vec2, mut f: impl FnMut(usize, f64)) {
        let u = self.whitener.apply(z);
        let mut visit = |j: usize| {
            let ib = self.inv_bw2[j];
            let k = self.kernel.profile((u - self.centers[j]).norm_sq() * ib);
            if k > 0.0 {
                f(j, self.norm * ib * k);
            }
        };
        match &self.index {
            Some(index) => index.candidates(u).for_each(&mut visit),
            None => (0..self.centers.len()).for_each(visit),
        }
    }

    fn density(&self, z: Vec2) -> f64 {
        let mut s = 0.0;
        self.for_each(z, |_, c| s += c);
        s
    }
}

fn check_sample(points: &[Vec2], h: f64) -> Result<Covariance> {
    if points.len() < 3 {
        return Err(Error::invalid(format!(
            "density estimation needs at least 3 points, got {}",
            points.len()
        )));
    }
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::invalid(format!("bandwidth must be positive, got {h}")));
    }
    if points.iter().any(|p| !p.is_finite()) {
        return Err(Error::invalid("sample contains non-finite coordinates"));
    }
    Covariance::sample(points)
}

/// Fixed-bandwidth estimate
/// `f(z) = det(S)^(-1/2) / (N h^2) sum_j k((z - z_j)^T S^-1 (z - z_j) / h^2)`.
#[derive(Debug, Clone)]
pub struct PilotDensity {
    sum: KernelSum,
    cov: Covariance,
    h: f64,
}

impl PilotDensity {
    pub fn new(points: &[Vec2], h: f64, kernel: Kernel) -> Result<Self> {
        let cov = check_sample(points, h)?;
        Ok(PilotDensity { sum: KernelSum::new(kernel, &cov, points, h, None), cov, h })
    }

    pub fn eval(&self, z: Vec2) -> f64 {
        self.sum.density(z)
    }

    pub fn covariance(&self) -> &Covariance {
        &self.cov
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }
}

/// Local bandwidth factors `lambda_j = (f_j / g)^(-alpha)` and the
/// normalizer `g`.
pub fn local_factors(pilot_values: &[f64], alpha: f64, rule: NormalizerRule) -> Result<(Vec<f64>, f64)> {
    if let Some(j) = pilot_values.iter().position(|&f| !(f > 0.0)) {
        return Err(Error::ZeroPilot(j));
    }
    let n = pilot_values.len() as f64;
    let g = match rule {
        NormalizerRule::GeometricMean => (pilot_values.iter().map(|f| f.ln()).sum::<f64>() / n).exp(),
        NormalizerRule::ExpOfMean => (pilot_values.iter().sum::<f64>() / n).exp(),
    };
    let lambdas = if alpha == 0.0 {
        vec![1.0; pilot_values.len()]
    } else {
        pilot_values.iter().map(|f| (f / g).powf(-alpha)).collect()
    };
    Ok((lambdas, g))
}

/// Adaptive estimate
/// `f(z) = det(S)^(-1/2) / N sum_j 1/(h lambda_j)^2 k(d_j(z)^2 / (h lambda_j)^2)`.
#[derive(Debug, Clone)]
pub struct AdaptiveDensity {
    sum: KernelSum,
    cov: Covariance,
    h: f64,
    alpha: f64,
    lambdas: Vec<f64>,
    g: f64,
    kernel: Kernel,
}

impl AdaptiveDensity {
    pub fn new(points: &[Vec2], h: f64, alpha: f64, kernel: Kernel) -> Result<Self> {
        Self::with_rule(points, h, alpha, kernel, NormalizerRule::default())
    }

    pub fn with_rule(
        points: &[Vec2],
        h: f64,
        alpha: f64,
        kernel: Kernel,
        rule: NormalizerRule,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::invalid(format!("alpha must lie in [0, 1), got {alpha}")));
        }
        let pilot = PilotDensity::new(points, h, kernel)?;
        let values = par::map_slice(points, |&p| pilot.eval(p));
        let (lambdas, g) = local_factors(&values, alpha, rule)?;
        let sum = KernelSum::new(kernel, &pilot.cov, points, h, Some(&lambdas));
        Ok(AdaptiveDensity { sum, cov: pilot.cov, h, alpha, lambdas, g, kernel })
    }

    pub fn eval(&self, z: Vec2) -> f64 {
        self.sum.density(z)
    }

    /// Calls `f(j, c_j(z))` for each observation with a non-zero kernel at
    /// `z`; the contributions sum to `eval(z)`.
    pub fn for_each_contribution(&self, z: Vec2, f: impl FnMut(usize, f64)) {
        self.sum.for_each(z, f)
    }

    pub fn covariance(&self) -> &Covariance {
        &self.cov
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn normalizer(&self) -> f64 {
        self.g
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn n(&self) -> usize {
        self.lambdas.len()
    }

    /// Converts a density value to kernel-mass units: one observation with
    /// `lambda = 1` sitting exactly at the query contributes 1.
    pub fn mass_scale(&self) -> f64 {
        self.n() as f64 * self.h * self.h * self.cov.det().sqrt() / self.kernel.peak()
    }

    /// Box containing every kernel support, in original coordinates.
    /// `None` for unbounded kernels.
    pub fn support_box(&self, points: &[Vec2]) -> Option<Bounds> {
        let r = self.kernel.support()?;
        let sx = self.cov.xx.sqrt();
        let sy = self.cov.yy.sqrt();
        let max_bw = self.lambdas.iter().fold(0.0f64, |m, l| m.max(l * self.h * r));
        Bounds::of_points(points).map(|b| b.expand(max_bw * sx, max_bw * sy))
    }
}
