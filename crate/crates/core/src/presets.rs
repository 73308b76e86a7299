//! Reference configurations shared by tests, benches and the command line.

use crate::damage::TimeGrid;
use crate::error::Result;
use crate::exec::Exec;
use crate::fem::{build_mesh, DomainSpec, LoadSet, MaterialModel, Side};
use crate::forward::ForwardProblem;
use crate::mollifier::{MollifierSpec, MollifierVariant};
use crate::process::{AnalyticLaw, DamageProcess, ProcessBasis, StrainFeature};
use std::sync::Arc;

/// Mollifier radius of the bar presets.
pub fn twin_mollifier() -> MollifierSpec {
    MollifierSpec { radius: 0.125, variant: MollifierVariant::Difference }
}

/// Unit bar, clamped at `x = 0`, unit traction at `x = 1`, no body force,
/// `E = 1`, `α = 1`, `ω0 = 0`, `ω1 = 0.5`, `T = 1`, `d0 = 0`.
pub fn twin_bar(elements: usize, steps: usize, exec: Exec) -> Result<ForwardProblem> {
    let mesh = build_mesh(&DomainSpec::interval(1.0, elements))?;
    let material = MaterialModel::bar(1.0);
    let grid = TimeGrid::new(1.0, steps)?;
    let loads = LoadSet::from_fn(&mesh, &grid.times(), |_, _| [0.0, 0.0], |_, _| [1.0, 0.0]);
    let d0 = vec![0.0; mesh.node_count()];
    ForwardProblem::new(mesh, material, &twin_mollifier(), StrainFeature::Gradient, grid, loads, d0, exec)
}

/// `g(y) = min(g_max, y²/8)`.
pub fn twin_law(material: &MaterialModel) -> AnalyticLaw {
    let gmax = material.source_bound();
    AnalyticLaw::new(
        move |_, _, y: f64| (y * y / 8.0).min(gmax),
        move |_, _, y: f64| if y * y / 8.0 < gmax { y / 4.0 } else { 0.0 },
    )
}

/// A forward problem together with a spline basis, a ground truth and a start.
#[derive(Debug, Clone)]
pub struct InversionSetup {
    pub problem: ForwardProblem,
    pub basis: Arc<ProcessBasis>,
    pub truth: DamageProcess,
    pub start: DamageProcess,
    /// Gram exponent.
    pub s: f64,
}

/// Sizes of an inversion setup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InversionSize {
    pub elements: usize,
    pub steps: usize,
    pub time_cells: usize,
    pub space_cells: usize,
    pub splines: usize,
}

impl InversionSize {
    /// 64 elements, 32 time steps, 12 splines in the strain argument.
    pub const TWIN: InversionSize = InversionSize { elements: 64, steps: 32, time_cells: 2, space_cells: 2, splines: 12 };
    pub const SMALL: InversionSize = InversionSize { elements: 16, steps: 8, time_cells: 2, space_cells: 2, splines: 6 };
}

/// Bar with unit body force and ramped end traction `τ(t) = 0.5 + 0.5t`,
/// so the strain argument sweeps a wide range in space and time.
pub fn twin_inversion(size: InversionSize, exec: Exec) -> Result<InversionSetup> {
    let mesh = build_mesh(&DomainSpec::interval(1.0, size.elements))?;
    let material = MaterialModel { omega0: 0.1, omega1: 0.6, y_bar: 3.0, ..MaterialModel::bar(1.0) };
    let grid = TimeGrid::new(1.0, size.steps)?;
    let loads = LoadSet::from_fn(&mesh, &grid.times(), |_, _| [1.0, 0.0], |t, _| [0.5 + 0.5 * t, 0.0]);
    let d0 = mesh.nodes().iter().map(|x| 0.05 + 0.03 * x[0]).collect();
    let radius = 2.0 / size.elements as f64;
    let spec = MollifierSpec { radius, variant: MollifierVariant::Difference };
    let basis = Arc::new(ProcessBasis::new(1, [1.0, 0.0], 1.0, size.time_cells, [size.space_cells, 1], size.splines, material.y_bar)?);
    let gmax = material.source_bound();
    let truth = DamageProcess::from_fn(basis.clone(), gmax, move |t, x, y| {
        let ramp = 1.0 / (1.0 + (-3.0 * (y - 1.0)).exp());
        gmax * (0.3 + 0.65 * ramp) * (1.0 - 0.1 * x[0] + 0.05 * t)
    });
    let start = DamageProcess::constant(basis.clone(), gmax, 0.5 * gmax);
    let problem = ForwardProblem::new(mesh, material, &spec, StrainFeature::Gradient, grid, loads, d0, exec)?;
    Ok(InversionSetup { problem, basis, truth, start, s: 3.0 })
}

/// Plane-strain square, clamped on the left, pulled on the right.
pub fn plate(cells: usize, steps: usize, exec: Exec) -> Result<InversionSetup> {
    let domain = DomainSpec { extent: vec![1.0, 1.0], elements: vec![cells, cells], clamped: vec![Side::Left, Side::Bottom, Side::Top] };
    let mesh = build_mesh(&domain)?;
    let material = MaterialModel { omega0: 0.1, omega1: 0.6, y_bar: 3.0, ..MaterialModel::isotropic(1.0, 1.0) };
    let grid = TimeGrid::new(1.0, steps)?;
    let loads = LoadSet::from_fn(&mesh, &grid.times(), |_, x| [0.5, 0.2 * x[0]], |t, x| [1.0 + t + 0.3 * x[1], 0.0]);
    let d0 = mesh.nodes().iter().map(|x| 0.02 + 0.05 * x[0] * x[1]).collect();
    let spec = MollifierSpec { radius: 1.0 / cells as f64, variant: MollifierVariant::Difference };
    let basis = Arc::new(ProcessBasis::new(2, [1.0, 1.0], 1.0, 2, [2, 2], 5, material.y_bar)?);
    let gmax = material.source_bound();
    let truth = DamageProcess::from_fn(basis.clone(), gmax, move |_, x, y| gmax * (0.2 + 0.6 * (y / 3.0).min(1.0).powi(2)) * (1.0 - 0.2 * x[1]));
    let start = DamageProcess::constant(basis.clone(), gmax, 0.5 * gmax);
    let problem = ForwardProblem::new(mesh, material, &spec, StrainFeature::StrainNorm, grid, loads, d0, exec)?;
    Ok(InversionSetup { problem, basis, truth, start, s: 5.0 })
}
