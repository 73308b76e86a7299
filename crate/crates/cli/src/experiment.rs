//! Turns a parsed configuration into solver objects.

use crate::config::{ExperimentConfig, TruthSpec};
use damageid_core::damage::TimeGrid;
use damageid_core::fem::{build_mesh, LoadSet};
use damageid_core::forward::ForwardProblem;
use damageid_core::presets::InversionSetup;
use damageid_core::process::{DamageProcess, ProcessBasis};
use damageid_core::{Exec, Result};
use std::sync::Arc;

pub fn exec_for(cfg: &ExperimentConfig) -> Exec {
    if cfg.run.parallel {
        Exec::Parallel
    } else {
        Exec::Serial
    }
}

/// Forward problem, coefficient basis, reference process and initial guess.
pub fn build(cfg: &ExperimentConfig) -> Result<InversionSetup> {
    let mesh = build_mesh(&cfg.domain)?;
    let grid = TimeGrid::new(cfg.material.horizon, cfg.steps)?;
    let loads = LoadSet::from_fn(&mesh, &grid.times(), |t, _| cfg.body.at(t), |t, _| cfg.traction.at(t));
    let (value, slope) = cfg.initial;
    let d0: Vec<f64> = mesh.nodes().iter().map(|x| (value + slope * x[0]).clamp(0.0, cfg.material.omega0)).collect();
    let dim = cfg.dim();
    let extent = [cfg.domain.extent[0], if dim == 2 { cfg.domain.extent[1] } else { 0.0 }];
    let p = &cfg.process;
    let basis = Arc::new(ProcessBasis::new(dim, extent, cfg.material.horizon, p.time_cells, p.space_cells, p.splines, cfg.material.y_bar)?);
    let gmax = cfg.material.source_bound();
    let truth = match &cfg.truth {
        TruthSpec::Constant { level } => DamageProcess::constant(basis.clone(), gmax, level * gmax),
        TruthSpec::Quadratic { coef } => {
            let coef = *coef;
            DamageProcess::from_fn(basis.clone(), gmax, move |_, _, y| (coef * y * y).min(gmax))
        }
        TruthSpec::Sigmoid { low, high, center, width, x_slope, t_slope } => {
            let (low, high, center, width, sx, st) = (*low, *high, *center, *width, *x_slope, *t_slope);
            DamageProcess::from_fn(basis.clone(), gmax, move |t, x, y| {
                let level = gmax * (low + (high - low) / (1.0 + (-(y - center) / width).exp()));
                (level * (1.0 + sx * x[0] + st * t)).clamp(0.0, gmax)
            })
        }
        TruthSpec::Coefficients(c) => DamageProcess { basis: basis.clone(), coeffs: c.clone(), bound: gmax },
    };
    let start = DamageProcess::constant(basis.clone(), gmax, cfg.landweber.start * gmax);
    let problem = ForwardProblem::new(mesh, cfg.material.clone(), &cfg.mollifier, cfg.feature, grid, loads, d0, exec_for(cfg))?;
    Ok(InversionSetup { problem, basis, truth, start, s: cfg.process.gram_s })
}
