//! Damage evolution `d' = (1 − d)^{-α} y` integrated nodewise.
//!
//! Each step applies the trapezoidal rule to the integral form of the ODE and
//! solves the resulting scalar equation for the new value with a bracketed
//! Newton iteration. For admissible sources the root lies in `[d_m, ω1]`.

use crate::error::{Error, Result};
use crate::exec::Exec;

/// Uniform time grid `t_m = m Δt`, `m = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub horizon: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Config(format!("time horizon must be positive, got {horizon}")));
        }
        if steps < 1 {
            return Err(Error::Config("time grid needs at least one step".into()));
        }
        Ok(Self { horizon, steps })
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn time(&self, m: usize) -> f64 {
        m as f64 * self.dt()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|m| self.time(m)).collect()
    }

    /// Trapezoidal quadrature weights on the grid.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let dt = self.dt();
        (0..self.len())
            .map(|m| if m == 0 || m == self.steps { dt / 2.0 } else { dt })
            .collect()
    }
}

/// Bounds shared by damage fields and sources.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DamageLaw {
    pub alpha: f64,
    pub omega0: f64,
    pub omega1: f64,
    /// Largest admissible source value `T⁻¹(ω1 − ω0)(1 − ω1)^α`.
    pub source_bound: f64,
}

impl DamageLaw {
    pub fn from_material(mat: &crate::fem::MaterialModel) -> Self {
        Self { alpha: mat.alpha, omega0: mat.omega0, omega1: mat.omega1, source_bound: mat.source_bound() }
    }
}

/// Nodal damage on the space–time grid, indexed `[m][node]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DamageField {
    pub values: Vec<Vec<f64>>,
}

impl DamageField {
    pub fn constant_in_time(d0: &[f64], times: usize) -> Self {
        Self { values: vec![d0.to_vec(); times] }
    }

    pub fn initial(&self) -> &[f64] {
        &self.values[0]
    }

    pub fn sup_distance(&self, other: &DamageField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}

/// Right-hand side `(1 − d)^{-α} y` of the damage ODE.
pub fn damage_rhs(d: f64, y: f64, alpha: f64) -> Result<f64> {
    if !(d < 1.0) {
        return Err(Error::Domain(format!("damage {d} >= 1 makes the evolution singular")));
    }
    Ok((1.0 - d).powf(-alpha) * y)
}

const NEWTON_TOL: f64 = 1e-13;
const NEWTON_MAX_ITER: usize = 50;
const SOURCE_SLACK: f64 = 1e-12;

/// Integrates the damage ODE at every node for given source samples `source[m][node]`.
pub fn integrate_damage(grid: &TimeGrid, law: &DamageLaw, d0: &[f64], source: &[Vec<f64>], exec: Exec) -> Result<DamageField> {
    if source.len() != grid.len() {
        return Err(Error::Shape(format!("source has {} time slices, grid has {}", source.len(), grid.len())));
    }
    let nodes = d0.len();
    if let Some((j, &v)) = d0.iter().enumerate().find(|(_, &v)| !(v >= 0.0 && v <= law.omega0 + SOURCE_SLACK)) {
        return Err(Error::Domain(format!("initial damage {v} at node {j} outside [0, {}]", law.omega0)));
    }
    let ymax = law.source_bound * (1.0 + SOURCE_SLACK) + SOURCE_SLACK;
    for (m, s) in source.iter().enumerate() {
        if s.len() != nodes {
            return Err(Error::Shape(format!("source slice {m} has {} entries, expected {nodes}", s.len())));
        }
        if let Some((j, &v)) = s.iter().enumerate().find(|(_, &v)| !(v >= -SOURCE_SLACK && v <= ymax)) {
            return Err(Error::Domain(format!(
                "source {v} at step {m}, node {j} outside [0, {}]",
                law.source_bound
            )));
        }
    }

    let dt = grid.dt();
    let columns = exec.try_map(nodes, |j| {
        let mut col = Vec::with_capacity(grid.len());
        let mut d = d0[j];
        col.push(d);
        for m in 0..grid.steps {
            let known = d + 0.5 * dt * (1.0 - d).powf(-law.alpha) * source[m][j];
            d = trapezoid_step(known, d, source[m + 1][j], dt, law).map_err(|e| match e {
                Error::Numerical(msg) => Error::Numerical(format!("{msg} (node {j}, step {m})")),
                other => other,
            })?;
            col.push(d);
        }
        Ok(col)
    })?;

    let values = (0..grid.len()).map(|m| columns.iter().map(|c| c[m]).collect()).collect();
    Ok(DamageField { values })
}

/// Solves `x − (Δt/2)(1 − x)^{-α} y = known` for `x` in `[lower, ω1]`.
fn trapezoid_step(known: f64, lower: f64, y: f64, dt: f64, law: &DamageLaw) -> Result<f64> {
    let a = law.alpha;
    let f = |x: f64| x - 0.5 * dt * (1.0 - x).powf(-a) * y - known;
    if y <= 0.0 {
        return Ok(known);
    }
    let (mut lo, mut hi) = (lower, law.omega1.max(lower));
    if f(hi) < 0.0 {
        // can only happen for step sizes too coarse for the Lipschitz bound
        hi = 0.5 * (1.0 + hi);
        if f(hi) < 0.0 {
            return Err(Error::Numerical("damage step has no root below one".into()));
        }
    }
    let mut x = known.clamp(lo, hi);
    for _ in 0..NEWTON_MAX_ITER {
        let r = f(x);
        if r.abs() <= NEWTON_TOL {
            return Ok(x);
        }
        if r > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let slope = 1.0 - 0.5 * dt * a * (1.0 - x).powf(-a - 1.0) * y;
        let mut next = x - r / slope;
        if !(slope > 0.0) || !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        x = next;
    }
    Err(Error::Numerical(format!("Newton iteration did not converge in {NEWTON_MAX_ITER} iterations")))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ViolationKind {
    BelowZero,
    AboveUpperBound,
    DecreasingInTime,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub step: usize,
    pub node: usize,
    pub value: f64,
}

/// Violations of `0 <= d <= ω1` and of time monotonicity. Empty means pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoundsReport {
    pub violations: Vec<Violation>,
}

impl BoundsReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn check_bounds(field: &DamageField, omega1: f64) -> BoundsReport {
    let mut violations = Vec::new();
    for (m, slice) in field.values.iter().enumerate() {
        for (j, &v) in slice.iter().enumerate() {
            if v < 0.0 {
                violations.push(Violation { kind: ViolationKind::BelowZero, step: m, node: j, value: v });
            } else if v > omega1 {
                violations.push(Violation { kind: ViolationKind::AboveUpperBound, step: m, node: j, value: v });
            }
            if m > 0 && v < field.values[m - 1][j] {
                violations.push(Violation { kind: ViolationKind::DecreasingInTime, step: m, node: j, value: v });
            }
        }
    }
    BoundsReport { violations }
}
