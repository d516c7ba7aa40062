//! Continuous-time forecasting through an estimated field: bilinear
//! interpolation of grid arrows and fixed-step RK4 trajectories.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Bounds, Vec2};
use crate::par;
use crate::rvf::VectorFieldGrid;

/// Interpolated arrow at a query point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interpolation {
    pub value: Vec2,
    /// The query lay outside the grid and was moved to its boundary.
    pub clamped: bool,
    /// At least one enclosing corner had no estimate.
    pub hole: bool,
    /// No corner with positive weight had an estimate; `value` is zero.
    pub empty: bool,
}

/// Node coordinates of a grid along one axis.
#[derive(Debug, Clone)]
struct Axis {
    coords: Vec<f64>,
    inv_step: f64,
}

impl Axis {
    fn new(n: usize, step: f64, coord: impl Fn(usize) -> f64) -> Self {
        Axis { coords: (0..n).map(coord).collect(), inv_step: 1.0 / step }
    }

    /// Cell `[i, i + 1]` containing `v` and the local coordinate in `[0, 1]`.
    fn locate(&self, v: f64) -> (usize, f64) {
        let c = &self.coords;
        let n = c.len();
        let mut i = (((v - c[0]) * self.inv_step).floor().max(0.0) as usize).min(n - 2);
        while i > 0 && v < c[i] {
            i -= 1;
        }
        while i + 2 < n && v >= c[i + 1] {
            i += 1;
        }
        let t = ((v - c[i]) / (c[i + 1] - c[i])).clamp(0.0, 1.0);
        (i, t)
    }
}

#[derive(Debug, Clone)]
struct Locator {
    x: Axis,
    y: Axis,
}

impl Locator {
    fn new(field: &VectorFieldGrid) -> Self {
        let g = &field.grid;
        Locator { x: Axis::new(g.nx, g.dx(), |i| g.x(i)), y: Axis::new(g.ny, g.dy(), |i| g.y(i)) }
    }

    fn interpolate(&self, field: &VectorFieldGrid, z: Vec2) -> Interpolation {
        let q = field.grid.bounds.clamp(z);
        let clamped = q != z;
        let (ix, tx) = self.x.locate(q.x);
        let (iy, ty) = self.y.locate(q.y);
        let mut out = bilinear_in_cell(field, ix, iy, tx, ty);
        out.clamped = clamped;
        out
    }
}

/// Bilinear blend inside cell `(ix, iy)` at local coordinates `(tx, ty)`.
/// Empty corners are dropped and the remaining weights renormalized.
pub fn bilinear_in_cell(field: &VectorFieldGrid, ix: usize, iy: usize, tx: f64, ty: f64) -> Interpolation {
    let corners = [
        (field.arrow(ix, iy), (1.0 - tx) * (1.0 - ty)),
        (field.arrow(ix + 1, iy), tx * (1.0 - ty)),
        (field.arrow(ix, iy + 1), (1.0 - tx) * ty),
        (field.arrow(ix + 1, iy + 1), tx * ty),
    ];
    if corners.iter().all(|c| c.0.is_some()) {
        let mut v = Vec2::ZERO;
        for (a, w) in corners {
            v += a.unwrap() * w;
        }
        return Interpolation { value: v, clamped: false, hole: false, empty: false };
    }
    let mut v = Vec2::ZERO;
    let mut wsum = 0.0;
    for (a, w) in corners {
        if let Some(a) = a {
            v += a * w;
            wsum += w;
        }
    }
    if wsum > 0.0 {
        Interpolation { value: v * (1.0 / wsum), clamped: false, hole: true, empty: false }
    } else {
        Interpolation { value: Vec2::ZERO, clamped: false, hole: true, empty: true }
    }
}

/// Bilinear interpolation of the grid arrows at `z`. Queries outside the
/// grid are clamped to its boundary and flagged.
pub fn interpolate_field(field: &VectorFieldGrid, z: Vec2) -> Interpolation {
    Locator::new(field).interpolate(field, z)
}

/// Velocity sample used by the integrator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    /// Displacement per year.
    pub velocity: Vec2,
    pub clamped: bool,
    pub hole: bool,
    pub empty: bool,
}

impl FieldSample {
    pub fn plain(velocity: Vec2) -> Self {
        FieldSample { velocity, clamped: false, hole: false, empty: false }
    }
}

/// A velocity field the integrator can follow.
pub trait VelocityField: Sync {
    fn sample(&self, z: Vec2) -> FieldSample;

    /// States are kept inside these bounds, if any.
    fn bounds(&self) -> Option<Bounds> {
        None
    }
}

/// Closure-backed field, mainly for analytic test fields.
pub struct FnField<F>(pub F);

impl<F: Fn(Vec2) -> Vec2 + Sync> VelocityField for FnField<F> {
    fn sample(&self, z: Vec2) -> FieldSample {
        FieldSample::plain((self.0)(z))
    }
}

/// The interpolated grid field as a rate: arrows are displacements over
/// `tau` years, so the velocity is `arrow / tau` per year.
pub struct GridFlow<'a> {
    field: &'a VectorFieldGrid,
    locator: Locator,
    inv_tau: f64,
}

impl<'a> GridFlow<'a> {
    pub fn new(field: &'a VectorFieldGrid) -> Self {
        GridFlow { field, locator: Locator::new(field), inv_tau: 1.0 / field.tau }
    }
}

impl VelocityField for GridFlow<'_> {
    fn sample(&self, z: Vec2) -> FieldSample {
        let i = self.locator.interpolate(self.field, z);
        FieldSample {
            velocity: if self.inv_tau == 1.0 { i.value } else { i.value * self.inv_tau },
            clamped: i.clamped,
            hole: i.hole,
            empty: i.empty,
        }
    }

    fn bounds(&self) -> Option<Bounds> {
        Some(self.field.grid.bounds)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrateOptions {
    /// Maximum step in years; the horizon is split into equal steps.
    pub step: f64,
    /// Stop early once a step moves less than this.
    pub converge_tol: Option<f64>,
    /// Record every `record_every`-th state (the first and last always).
    pub record_every: usize,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        IntegrateOptions { step: 0.1, converge_tol: None, record_every: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub unit: Option<usize>,
    pub times: Vec<f64>,
    pub positions: Vec<Vec2>,
    pub terminal: Vec2,
    /// Some state left the field bounds and was clamped back.
    pub clamped: bool,
    /// Some evaluation touched a cell with an empty corner.
    pub hole: bool,
    /// Some evaluation fell where no estimate exists (zero velocity).
    pub stalled: bool,
    pub converged: bool,
    /// Set when integration stopped on a non-finite state; `terminal` is
    /// the last finite position.
    pub failed: bool,
}

/// Neumaier-compensated running position.
#[derive(Debug, Clone, Copy)]
struct Compensated {
    sum: Vec2,
    comp: Vec2,
}

impl Compensated {
    fn add(&mut self, inc: Vec2) {
        fn one(s: &mut f64, c: &mut f64, x: f64) {
            let t = *s + x;
            if s.abs() >= x.abs() {
                *c += (*s - t) + x;
            } else {
                *c += (x - t) + *s;
            }
            *s = t;
        }
        one(&mut self.sum.x, &mut self.comp.x, inc.x);
        one(&mut self.sum.y, &mut self.comp.y, inc.y);
    }

    /// Adds a term too small to disturb the running sum.
    fn add_tail(&mut self, tail: Vec2) {
        self.comp += tail;
    }

    fn value(&self) -> Vec2 {
        self.sum + self.comp
    }

    fn reset(&mut self, p: Vec2) {
        self.sum = p;
        self.comp = Vec2::ZERO;
    }
}

/// `a * b` as an unevaluated sum `hi + lo` (Dekker).
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    const SPLIT: f64 = 134217729.0;
    let hi = a * b;
    if !hi.is_finite() {
        return (hi, 0.0);
    }
    let split = |x: f64| {
        let c = SPLIT * x;
        let h = c - (c - x);
        (h, x - h)
    };
    let (ah, al) = split(a);
    let (bh, bl) = split(b);
    let lo = ((ah * bh - hi) + ah * bl + al * bh) + al * bl;
    (hi, lo)
}

/// Integrates `dp/dt = F(p)`, `p(0) = z0` over `horizon` years with
/// classical RK4.
pub fn integrate(
    field: &impl VelocityField,
    z0: Vec2,
    horizon: f64,
    opts: &IntegrateOptions,
) -> Result<Trajectory> {
    let traj = integrate_lenient(field, z0, horizon, opts)?;
    if traj.failed {
        let last = traj.terminal;
        return Err(Error::invalid(format!(
            "non-finite state; last valid position ({}, {}) at t = {}",
            last.x,
            last.y,
            traj.times.last().copied().unwrap_or(0.0)
        )));
    }
    Ok(traj)
}

/// Like [`integrate`] but reports a non-finite state through
/// [`Trajectory::failed`] instead of an error.
pub fn integrate_lenient(
    field: &impl VelocityField,
    z0: Vec2,
    horizon: f64,
    opts: &IntegrateOptions,
) -> Result<Trajectory> {
    if !(opts.step > 0.0) {
        return Err(Error::invalid("integration step must be positive"));
    }
    if !(horizon >= 0.0) || !z0.is_finite() {
        return Err(Error::invalid("horizon must be non-negative and the start finite"));
    }
    let bounds = field.bounds();
    let mut traj = Trajectory {
        unit: None,
        times: vec![0.0],
        positions: vec![z0],
        terminal: z0,
        clamped: false,
        hole: false,
        stalled: false,
        converged: false,
        failed: false,
    };
    let mut p = z0;
    if let Some(b) = bounds {
        if !b.contains(p) {
            p = b.clamp(p);
            traj.clamped = true;
        }
    }
    let n_steps = if horizon == 0.0 { 0 } else { ((horizon / opts.step) - 1e-9).ceil().max(1.0) as usize };
    let dt = if n_steps > 0 { horizon / n_steps as f64 } else { 0.0 };
    let stride = opts.record_every.max(1);
    let mut state = Compensated { sum: p, comp: Vec2::ZERO };
    let mut t_prev = 0.0;

    let eval = |q: Vec2, traj: &mut Trajectory| {
        let s = field.sample(q);
        traj.clamped |= s.clamped;
        traj.hole |= s.hole;
        traj.stalled |= s.empty;
        s.velocity
    };

    for k in 1..=n_steps {
        let k1 = eval(p, &mut traj);
        let k2 = eval(p + k1 * (0.5 * dt), &mut traj);
        let k3 = eval(p + k2 * (0.5 * dt), &mut traj);
        let k4 = eval(p + k3 * dt, &mut traj);
        let slope = if k1 == k2 && k2 == k3 && k3 == k4 { k1 } else { (k1 + (k2 + k3) * 2.0 + k4) * (1.0 / 6.0) };
        let t = if k == n_steps { horizon } else { k as f64 * dt };
        let h = t - t_prev;
        t_prev = t;
        let (ix, ex) = two_prod(slope.x, h);
        let (iy, ey) = two_prod(slope.y, h);
        let inc = Vec2::new(ix, iy);
        if !inc.is_finite() {
            traj.failed = true;
            break;
        }
        state.add(inc);
        state.add_tail(Vec2::new(ex, ey));
        let mut next = state.value();
        if let Some(b) = bounds {
            if !b.contains(next) {
                next = b.clamp(next);
                state.reset(next);
                traj.clamped = true;
            }
        }
        let moved = (next - p).norm();
        p = next;
        let done = opts.converge_tol.is_some_and(|tol| moved < tol);
        if k % stride == 0 || k == n_steps || done {
            traj.times.push(t);
            traj.positions.push(p);
        }
        if done {
            traj.converged = true;
            break;
        }
    }
    traj.terminal = p;
    Ok(traj)
}

/// Integrates every start point; trajectories carry their own flags.
pub fn forecast_all(
    field: &impl VelocityField,
    starts: &[(usize, Vec2)],
    horizon: f64,
    opts: &IntegrateOptions,
) -> Result<Vec<Trajectory>> {
    if !(opts.step > 0.0) || !(horizon >= 0.0) {
        return Err(Error::invalid("step must be positive and horizon non-negative"));
    }
    par::map_slice(starts, |&(unit, z)| {
        integrate_lenient(field, z, horizon, opts).map(|mut t| {
            t.unit = Some(unit);
            t
        })
    })
    .into_iter()
    .collect()
}
