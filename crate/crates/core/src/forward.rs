//! Parameter-to-state map by global Picard iteration on the damage trajectory.
//!
//! One sweep applies `Ψ = O_D ∘ G ∘ ∇^μ ∘ O_E`: equilibrium solves at every
//! time point for the current damage trajectory, mollified gradients, the
//! Nemytskii operator of the process, and nodewise damage integration.
//! Equilibria at distinct times are independent and solved through [`Exec`].

use crate::damage::{integrate_damage, DamageField, DamageLaw, TimeGrid};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::fem::{Equilibrium, LoadSet, MaterialModel, Mesh};
use crate::linalg::SymBand;
use crate::mollifier::{MollifiedGradient, MollifierSpec};
use crate::process::{SourceLaw, StrainFeature};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Everything that stays fixed while the damage process varies.
#[derive(Debug, Clone)]
pub struct ForwardProblem {
    pub mesh: Mesh,
    pub material: MaterialModel,
    pub mollifier: MollifiedGradient,
    pub feature: StrainFeature,
    pub grid: TimeGrid,
    pub loads: LoadSet,
    pub d0: Vec<f64>,
    pub exec: Exec,
    mass: SymBand,
    rhs: Vec<Vec<f64>>,
}

impl ForwardProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mesh: Mesh,
        material: MaterialModel,
        mollifier: &MollifierSpec,
        feature: StrainFeature,
        grid: TimeGrid,
        loads: LoadSet,
        d0: Vec<f64>,
        exec: Exec,
    ) -> Result<Self> {
        material.validate()?;
        if material.dim() != mesh.dim() {
            return Err(Error::Config(format!("material is {}D, mesh is {}D", material.dim(), mesh.dim())));
        }
        if (grid.horizon - material.horizon).abs() > 1e-12 * material.horizon {
            return Err(Error::Config(format!("time grid horizon {} differs from material horizon {}", grid.horizon, material.horizon)));
        }
        if let Some(f) = &material.modulus_field {
            if f.len() != mesh.element_count() {
                return Err(Error::Shape(format!("modulus field has {} entries, mesh has {} elements", f.len(), mesh.element_count())));
            }
        }
        if d0.len() != mesh.node_count() {
            return Err(Error::Shape(format!("initial damage has {} entries, mesh has {} nodes", d0.len(), mesh.node_count())));
        }
        if let Some(v) = d0.iter().find(|&&v| !(v >= 0.0 && v <= material.omega0)) {
            return Err(Error::Domain(format!("initial damage {v} outside [0, {}]", material.omega0)));
        }
        if feature == StrainFeature::Gradient && mesh.dim() != 1 {
            return Err(Error::Config("the raw gradient feature is only defined in 1D".into()));
        }
        loads.validate(&mesh, grid.len())?;
        let mollifier = MollifiedGradient::new(mollifier, &mesh)?;
        let mass = mesh.mass_matrix();
        let rhs = (0..grid.len()).map(|m| loads.load_vector(&mesh, &mass, m)).collect();
        Ok(Self { mesh, material, mollifier, feature, grid, loads, d0, exec, mass, rhs })
    }

    pub fn law(&self) -> DamageLaw {
        DamageLaw::from_material(&self.material)
    }

    pub fn mass(&self) -> &SymBand {
        &self.mass
    }

    pub fn load_vector(&self, m: usize) -> &[f64] {
        &self.rhs[m]
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    /// Length of a data vector (all dofs at all time points).
    pub fn data_len(&self) -> usize {
        self.grid.len() * self.mesh.dof_count()
    }

    /// Mollified gradient samples and the scalar strain argument per node.
    pub fn strain_argument(&self, u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let grad = self.mollifier.apply(u);
        let n2 = self.mesh.dim() * self.mesh.dim();
        let y = grad.chunks(n2).map(|g| self.feature.eval(self.mesh.dim(), g).0).collect();
        (grad, y)
    }

    /// Displacements, strain arguments and sources for a damage trajectory.
    fn respond(&self, law: &dyn SourceLaw, d: &DamageField) -> Result<Vec<SliceResponse>> {
        let nodes = self.mesh.nodes();
        self.exec.try_map(self.grid.len(), |m| {
            let eq = Equilibrium::new(&self.mesh, &self.material, &d.values[m])?;
            let u = eq.solve(&self.mesh, &self.rhs[m]);
            let (gradient, argument) = self.strain_argument(&u);
            let t = self.grid.time(m);
            let source = argument.iter().zip(nodes).map(|(&y, &x)| law.value(t, x, y)).collect();
            Ok(SliceResponse { u, gradient, argument, source })
        })
    }

    /// One application of `Ψ` to an arbitrary damage trajectory.
    pub fn psi(&self, law: &dyn SourceLaw, d: &DamageField) -> Result<DamageField> {
        let resp = self.respond(law, d)?;
        let sources: Vec<Vec<f64>> = resp.into_iter().map(|r| r.source).collect();
        integrate_damage(&self.grid, &self.law(), &self.d0, &sources, self.exec)
    }

    /// L² inner product of two data vectors: trapezoid in time, consistent mass in space.
    pub fn data_inner(&self, a: &[f64], b: &[f64]) -> f64 {
        let ma = self.data_riesz(a);
        crate::linalg::dot(&ma, b)
    }

    pub fn data_norm(&self, a: &[f64]) -> f64 {
        self.data_inner(a, a).max(0.0).sqrt()
    }

    /// Applies the data Gram matrix (`w_m M` on each time slice).
    pub fn data_riesz(&self, a: &[f64]) -> Vec<f64> {
        let nd = self.mesh.dof_count();
        assert_eq!(a.len(), self.data_len());
        let w = self.grid.trapezoid_weights();
        let mut out = Vec::with_capacity(a.len());
        for (m, slice) in a.chunks(nd).enumerate() {
            out.extend(self.mesh.mass_apply(&self.mass, slice).into_iter().map(|v| w[m] * v));
        }
        out
    }
}

struct SliceResponse {
    u: Vec<f64>,
    gradient: Vec<f64>,
    argument: Vec<f64>,
    source: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardConfig {
    /// Sup-norm tolerance on the damage update.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Weight of the exponentially weighted norm used by the contraction diagnostic.
    pub lambda: f64,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        Self { tol: 1e-10, max_sweeps: 100, lambda: 10.0 }
    }
}

/// Converged solution of the coupled problem.
#[derive(Debug, Clone)]
pub struct StateTrajectory {
    /// Displacement dof vectors per time point.
    pub displacements: Vec<Vec<f64>>,
    pub damage: DamageField,
    /// Mollified gradients `[m][node · N² + k·N + i]`.
    pub gradients: Vec<Vec<f64>>,
    /// Scalar strain arguments `[m][node]`.
    pub arguments: Vec<Vec<f64>>,
    /// Sources `G(∇^μu)` `[m][node]`.
    pub sources: Vec<Vec<f64>>,
    pub sweeps: usize,
    /// Sup-norm damage update per sweep.
    pub history: Vec<f64>,
}

impl StateTrajectory {
    /// Flattened displacement trajectory (the forward operator output).
    pub fn data(&self) -> Vec<f64> {
        self.displacements.concat()
    }
}

/// Solves the coupled problem by Picard iteration starting from `d ≡ d0`.
pub fn picard_forward_solve(problem: &ForwardProblem, law: &dyn SourceLaw, cfg: &ForwardConfig) -> Result<StateTrajectory> {
    if !(cfg.tol > 0.0) {
        return Err(Error::Config(format!("Picard tolerance must be positive, got {}", cfg.tol)));
    }
    let mut d = DamageField::constant_in_time(&problem.d0, problem.grid.len());
    let mut history = Vec::new();
    for sweep in 1..=cfg.max_sweeps {
        let resp = problem.respond(law, &d)?;
        let sources: Vec<Vec<f64>> = resp.iter().map(|r| r.source.clone()).collect();
        let next = integrate_damage(&problem.grid, &problem.law(), &problem.d0, &sources, problem.exec)?;
        let update = next.sup_distance(&d);
        history.push(update);
        d = next;
        if !update.is_finite() {
            break;
        }
        if update <= cfg.tol {
            let resp = problem.respond(law, &d)?;
            let mut state = StateTrajectory {
                displacements: Vec::with_capacity(resp.len()),
                damage: d,
                gradients: Vec::with_capacity(resp.len()),
                arguments: Vec::with_capacity(resp.len()),
                sources: Vec::with_capacity(resp.len()),
                sweeps: sweep,
                history,
            };
            for r in resp {
                state.displacements.push(r.u);
                state.gradients.push(r.gradient);
                state.arguments.push(r.argument);
                state.sources.push(r.source);
            }
            return Ok(state);
        }
    }
    let last = history.last().copied().unwrap_or(f64::NAN);
    Err(Error::Convergence { sweeps: cfg.max_sweeps, last, history })
}

/// `Φ(g)`: the displacement trajectory as a flat data vector, with the state.
pub fn forward_operator(problem: &ForwardProblem, law: &dyn SourceLaw, cfg: &ForwardConfig) -> Result<(Vec<f64>, StateTrajectory)> {
    let state = picard_forward_solve(problem, law, cfg)?;
    Ok((state.data(), state))
}

/// Exponentially weighted sup norm `max_m e^{−λ t_m} max_j |f(t_m, x_j)|`.
pub fn weighted_norm(grid: &TimeGrid, lambda: f64, f: &[Vec<f64>]) -> f64 {
    f.iter()
        .enumerate()
        .map(|(m, s)| (-lambda * grid.time(m)).exp() * crate::linalg::max_abs(s))
        .fold(0.0, f64::max)
}

/// Random damage trajectory with `d(0) = d0` and values in `[0, ω1]`.
pub fn random_damage(problem: &ForwardProblem, rng: &mut impl Rng) -> DamageField {
    let omega1 = problem.material.omega1;
    let mut values = vec![problem.d0.clone()];
    for _ in 1..problem.grid.len() {
        values.push((0..problem.mesh.node_count()).map(|_| rng.random_range(0.0..=omega1)).collect());
    }
    DamageField { values }
}

/// Empirical Lipschitz quotient of `Ψ²` in the weighted norm, for each `λ`.
///
/// The same random pairs are used for every `λ`. Returns `(λ, q(λ))`.
pub fn contraction_estimate(
    problem: &ForwardProblem,
    law: &dyn SourceLaw,
    lambdas: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    if trials < 1 {
        return Err(Error::Config("contraction estimate needs at least one trial".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(trials);
    for _ in 0..trials {
        let d1 = random_damage(problem, &mut rng);
        let d2 = random_damage(problem, &mut rng);
        let p1 = problem.psi(law, &problem.psi(law, &d1)?)?;
        let p2 = problem.psi(law, &problem.psi(law, &d2)?)?;
        let diff_in: Vec<Vec<f64>> = d1.values.iter().zip(&d2.values).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect()).collect();
        let diff_out: Vec<Vec<f64>> = p1.values.iter().zip(&p2.values).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect()).collect();
        pairs.push((diff_in, diff_out));
    }
    Ok(lambdas
        .iter()
        .map(|&lambda| {
            let q = pairs
                .iter()
                .map(|(din, dout)| {
                    let den = weighted_norm(&problem.grid, lambda, din);
                    if den == 0.0 {
                        0.0
                    } else {
                        weighted_norm(&problem.grid, lambda, dout) / den
                    }
                })
                .fold(0.0, f64::max);
            (lambda, q)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use crate::process::AnalyticLaw;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_process_keeps_initial_damage() {
        let problem = presets::twin_bar(16, 8, Exec::Serial).unwrap();
        let state = picard_forward_solve(&problem, &AnalyticLaw::zero(), &ForwardConfig::default()).unwrap();
        assert_eq!(state.sweeps, 1);
        for slice in &state.damage.values {
            assert_eq!(slice, &problem.d0);
        }
        // u(t) = O_E(d0) applied to the loads at t
        for (m, u) in state.displacements.iter().enumerate() {
            let expected = crate::fem::solve_equilibrium(&problem.mesh, &problem.material, &problem.d0, problem.load_vector(m)).unwrap();
            for (a, b) in u.iter().zip(&expected.values) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn unloaded_body_stays_at_rest() {
        let mut problem = presets::twin_bar(16, 8, Exec::Serial).unwrap();
        problem = ForwardProblem::new(
            problem.mesh.clone(),
            problem.material.clone(),
            &presets::twin_mollifier(),
            problem.feature,
            problem.grid,
            LoadSet::zero(&problem.mesh, problem.grid.len()),
            problem.d0.clone(),
            Exec::Serial,
        )
        .unwrap();
        // g(·,·,0) = 0
        let law = AnalyticLaw::new(|_, _, y: f64| (y * y / 8.0).min(0.25), |_, _, y: f64| if y * y / 8.0 < 0.25 { y / 4.0 } else { 0.0 });
        let state = picard_forward_solve(&problem, &law, &ForwardConfig::default()).unwrap();
        assert!(state.displacements.iter().all(|u| u.iter().all(|&v| v == 0.0)));
        assert!(state.damage.values.iter().all(|s| s == &problem.d0));
    }

    #[test]
    fn fixed_point_residual_below_tolerance() {
        let problem = presets::twin_bar(16, 16, Exec::Serial).unwrap();
        let law = presets::twin_law(&problem.material);
        let cfg = ForwardConfig::default();
        let state = picard_forward_solve(&problem, &law, &cfg).unwrap();
        let again = problem.psi(&law, &state.damage).unwrap();
        assert!(again.sup_distance(&state.damage) <= cfg.tol);
    }

    #[test]
    fn serial_and_parallel_agree_bitwise() {
        let a = presets::twin_bar(32, 16, Exec::Serial).unwrap();
        let b = presets::twin_bar(32, 16, Exec::Parallel).unwrap();
        let law = presets::twin_law(&a.material);
        let sa = picard_forward_solve(&a, &law, &ForwardConfig::default()).unwrap();
        let sb = picard_forward_solve(&b, &law, &ForwardConfig::default()).unwrap();
        assert_eq!(sa.data(), sb.data());
        assert_eq!(sa.damage, sb.damage);
    }

    #[test]
    fn nonconvergence_reports_history() {
        let problem = presets::twin_bar(16, 16, Exec::Serial).unwrap();
        let law = presets::twin_law(&problem.material);
        let cfg = ForwardConfig { tol: 1e-14, max_sweeps: 2, ..Default::default() };
        match picard_forward_solve(&problem, &law, &cfg) {
            Err(Error::Convergence { sweeps, history, .. }) => {
                assert_eq!(sweeps, 2);
                assert_eq!(history.len(), 2);
            }
            other => panic!("expected convergence error, got {other:?}"),
        }
    }

    #[test]
    fn zero_process_has_zero_contraction() {
        let problem = presets::twin_bar(8, 8, Exec::Serial).unwrap();
        let q = contraction_estimate(&problem, &AnalyticLaw::zero(), &[1.0, 10.0], 3, 1).unwrap();
        assert!(q.iter().all(|&(_, v)| v == 0.0));
    }

    #[test]
    fn weighted_norm_discounts_late_times() {
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let f = vec![vec![0.0], vec![0.0], vec![1.0]];
        assert_abs_diff_eq!(weighted_norm(&grid, 2.0, &f), (-2.0f64).exp());
        assert_abs_diff_eq!(weighted_norm(&grid, 0.0, &f), 1.0);
    }
}
