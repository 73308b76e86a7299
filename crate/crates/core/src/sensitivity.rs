//! Derivative of the discrete forward map and its exact transpose.
//!
//! At a converged state the discrete problem reads, per time level `m`,
//!
//! * `K(d_m) u_m = F_m`,
//! * `s_m = g(t_m, x, y(D u_m))` with `D` the mollified gradient,
//! * `d_{m+1} = d_m + Δt/2 (c_m s_m + c_{m+1} s_{m+1})`, `c = (1 − d)^{-α}`.
//!
//! Differentiating gives `δu_m = S_m δd_m` with `S_m = K_m⁻¹ C_m`,
//! `C_m[:, j] = K_{φ_j} u_m`, and the linear recursion
//!
//! `(I − Δt/2 A_{m+1}) δd_{m+1} = (I + Δt/2 A_m) δd_m + Δt/2 (c_m q_m + c_{m+1} q_{m+1})`,
//!
//! where `A_m = diag(α(1 − d_m)^{-α-1} s_m) + diag(c_m ∂_y g) Y_m D S_m`, `Y_m` the
//! feature derivative and `q_m` the process perturbation sampled along the
//! state. The adjoint runs the transposed recursion backward in time.

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::fem::{energy_pairing, weighted_stiffness_apply, Equilibrium};
use crate::forward::{ForwardProblem, StateTrajectory};
use crate::gram::ParameterGram;
use crate::process::{DamageProcess, SourceLaw, Support};
use nalgebra::{DMatrix, DVector, Dyn, LU};

/// Per-time linear data of the derivative at a fixed state.
#[derive(Debug, Clone)]
struct Level {
    equilibrium: Equilibrium,
    /// `S_m`: dof × node.
    s: DMatrix<f64>,
    /// `c_m = (1 − d_m)^{-α}`.
    c: Vec<f64>,
    a: DMatrix<f64>,
    supports: Vec<Support>,
}

type DenseLu = LU<f64, Dyn, Dyn>;

/// Linearization workspace of the forward map at `(g, state)`.
#[derive(Debug, Clone)]
pub struct Linearization<'a> {
    problem: &'a ForwardProblem,
    state: &'a StateTrajectory,
    levels: Vec<Level>,
    /// LU factors of `I − Δt/2 A_m` and of its transpose.
    lhs: Vec<(DenseLu, DenseLu)>,
    params: usize,
}

/// Linearized damage `d_h` and displacement `δu` per time level.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedState {
    pub damage: Vec<Vec<f64>>,
    pub displacement: Vec<Vec<f64>>,
}

/// Adjoint fields for one data-space residual.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointState {
    /// Adjoint displacements `K_m⁻¹ (w_m M r_m)`.
    pub u_f: Vec<Vec<f64>>,
    /// Energy pairings `∫φ_j 𝔼ε(u_m):ε(u_f,m)`.
    pub e: Vec<Vec<f64>>,
    /// Backward damage multipliers; entry `m` couples the steps `m → m+1`,
    /// the last entry is the terminal value and vanishes.
    pub w_e: Vec<Vec<f64>>,
    /// Unpreconditioned gradient `∂J/∂h`.
    pub raw: Vec<f64>,
}

impl<'a> Linearization<'a> {
    /// Precomputes everything needed for repeated applications of `∂Φ(g)` and `∂Φ(g)*`.
    pub fn new(problem: &'a ForwardProblem, process: &DamageProcess, state: &'a StateTrajectory) -> Result<Self> {
        let mesh = &problem.mesh;
        let (n_nodes, n_dofs) = (mesh.node_count(), mesh.dof_count());
        let dim = mesh.dim();
        let n2 = dim * dim;
        if state.displacements.len() != problem.grid.len() || state.displacements[0].len() != n_dofs {
            return Err(Error::Shape("state does not match the forward problem".into()));
        }
        let alpha = problem.material.alpha;
        let dense_grad = problem.mollifier.to_dense();
        let basis = &process.basis;
        let levels = problem.exec.try_map(problem.grid.len(), |m| -> Result<Level> {
            let d = &state.damage.values[m];
            let u = &state.displacements[m];
            let equilibrium = Equilibrium::new(mesh, &problem.material, d)?;
            let mut s = DMatrix::zeros(n_dofs, n_nodes);
            let mut unit = vec![0.0; n_nodes];
            for j in 0..n_nodes {
                unit[j] = 1.0;
                let col = equilibrium.solve(mesh, &weighted_stiffness_apply(mesh, &problem.material, &unit, u));
                s.set_column(j, &DVector::from_vec(col));
                unit[j] = 0.0;
            }
            let ds = &dense_grad * &s;
            let t = problem.grid.time(m);
            let c: Vec<f64> = d.iter().map(|&v| (1.0 - v).powf(-alpha)).collect();
            let mut a = DMatrix::zeros(n_nodes, n_nodes);
            let mut supports = Vec::with_capacity(n_nodes);
            for (j, &x) in mesh.nodes().iter().enumerate() {
                let y = state.arguments[m][j];
                let (_, fgrad) = problem.feature.eval(dim, &state.gradients[m][j * n2..(j + 1) * n2]);
                let weight = c[j] * process.dy(t, x, y);
                if weight != 0.0 {
                    for (k, &fk) in fgrad.iter().enumerate().take(n2) {
                        if fk != 0.0 {
                            let row = ds.row(j * n2 + k);
                            for (i, v) in row.iter().enumerate() {
                                a[(j, i)] += weight * fk * v;
                            }
                        }
                    }
                }
                a[(j, j)] += alpha * (1.0 - d[j]).powf(-alpha - 1.0) * state.sources[m][j];
                supports.push(basis.support(t, x, y));
            }
            Ok(Level { equilibrium, s, c, a, supports })
        })?;
        let half = 0.5 * problem.grid.dt();
        let lhs = problem.exec.try_map(levels.len(), |m| {
            let l = DMatrix::identity(n_nodes, n_nodes) - &levels[m].a * half;
            let lt = l.transpose();
            let (lu, lut) = (l.lu(), lt.lu());
            if !lu.is_invertible() {
                return Err(Error::Numerical(format!("linearized damage step {m} is singular")));
            }
            Ok((lu, lut))
        })?;
        Ok(Self { problem, state, levels, lhs, params: process.coeffs.len() })
    }

    pub fn param_len(&self) -> usize {
        self.params
    }

    fn half_dt(&self) -> f64 {
        0.5 * self.problem.grid.dt()
    }

    /// `q_m = Σ_b h_b B_b(t_m, x, y_m)` per level.
    fn sample_perturbation(&self, h: &[f64]) -> Vec<Vec<f64>> {
        self.problem.exec.map(self.levels.len(), |m| {
            self.levels[m].supports.iter().map(|s| (0..4).map(|k| h[s.first + k] * s.values[k]).sum()).collect()
        })
    }

    /// `(I + Δt/2 A_m) v`.
    fn explicit_part(&self, m: usize, v: &DVector<f64>) -> DVector<f64> {
        v + &self.levels[m].a * v * self.half_dt()
    }

    /// `δu_m = K_m⁻¹ K_{d_h} u_m` for one damage perturbation slice.
    pub fn oe_derivative(&self, m: usize, d_h: &[f64]) -> Vec<f64> {
        let rhs = weighted_stiffness_apply(&self.problem.mesh, &self.problem.material, d_h, &self.state.displacements[m]);
        self.levels[m].equilibrium.solve(&self.problem.mesh, &rhs)
    }

    /// Runs the linearized recursion for a coefficient perturbation `h`.
    pub fn linearized_state(&self, h: &[f64]) -> Result<LinearizedState> {
        if h.len() != self.params {
            return Err(Error::Shape(format!("perturbation has {} coefficients, expected {}", h.len(), self.params)));
        }
        let q = self.sample_perturbation(h);
        let n = self.problem.mesh.node_count();
        let half = self.half_dt();
        let mut damage = vec![vec![0.0; n]];
        let mut dh = DVector::zeros(n);
        for m in 0..self.levels.len() - 1 {
            let mut rhs = self.explicit_part(m, &dh);
            for j in 0..n {
                rhs[j] += half * (self.levels[m].c[j] * q[m][j] + self.levels[m + 1].c[j] * q[m + 1][j]);
            }
            dh = self.lhs[m + 1].0.solve(&rhs).ok_or_else(|| Error::Numerical("linearized damage solve failed".into()))?;
            damage.push(dh.as_slice().to_vec());
        }
        let displacement = self
            .problem
            .exec
            .map(self.levels.len(), |m| (&self.levels[m].s * DVector::from_column_slice(&damage[m])).as_slice().to_vec());
        Ok(LinearizedState { damage, displacement })
    }

    /// `∂Φ(g)h` as a flat data vector.
    pub fn apply(&self, h: &[f64]) -> Result<Vec<f64>> {
        Ok(self.linearized_state(h)?.displacement.concat())
    }

    /// Adjoint displacement for one time level: `K_m u_f = rhs` (rhs already a dual vector).
    pub fn adjoint_elasticity(&self, m: usize, rhs: &[f64]) -> Vec<f64> {
        self.levels[m].equilibrium.solve(&self.problem.mesh, rhs)
    }

    /// Backward recursion for the damage multipliers given pairings `e[m]`.
    pub fn adjoint_damage(&self, e: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let levels = self.levels.len();
        if e.len() != levels {
            return Err(Error::Shape(format!("adjoint source has {} levels, expected {levels}", e.len())));
        }
        let n = self.problem.mesh.node_count();
        let half = self.half_dt();
        let mut w = vec![vec![0.0; n]; levels];
        let mut next = DVector::<f64>::zeros(n);
        for m in (1..levels).rev() {
            let mut g = DVector::from_column_slice(&e[m]);
            if m + 1 < levels {
                g += &next + self.levels[m].a.tr_mul(&next) * half;
            }
            next = self.lhs[m].1.solve(&g).ok_or_else(|| Error::Numerical("adjoint damage solve failed".into()))?;
            w[m - 1] = next.as_slice().to_vec();
        }
        Ok(w)
    }

    /// Full adjoint chain for a data-space residual `r` (not yet Riesz-mapped).
    pub fn adjoint_state(&self, r: &[f64]) -> Result<AdjointState> {
        let problem = self.problem;
        if r.len() != problem.data_len() {
            return Err(Error::Shape(format!("residual has {} entries, expected {}", r.len(), problem.data_len())));
        }
        let rho = problem.data_riesz(r);
        let nd = problem.mesh.dof_count();
        let fields = problem.exec.map(self.levels.len(), |m| {
            let u_f = self.adjoint_elasticity(m, &rho[m * nd..(m + 1) * nd]);
            let e = energy_pairing(&problem.mesh, &problem.material, &self.state.displacements[m], &u_f);
            (u_f, e)
        });
        let (u_f, e): (Vec<_>, Vec<_>) = fields.into_iter().unzip();
        let w_e = self.adjoint_damage(&e)?;
        let half = self.half_dt();
        let parts = problem.exec.map(self.levels.len(), |m| {
            let level = &self.levels[m];
            let mut contrib = Vec::with_capacity(level.supports.len());
            for j in 0..level.supports.len() {
                let before = if m > 0 { w_e[m - 1][j] } else { 0.0 };
                contrib.push(half * level.c[j] * (before + w_e[m][j]));
            }
            contrib
        });
        let mut raw = vec![0.0; self.params];
        for (level, contrib) in self.levels.iter().zip(&parts) {
            for (s, &v) in level.supports.iter().zip(contrib) {
                for k in 0..4 {
                    raw[s.first + k] += v * s.values[k];
                }
            }
        }
        Ok(AdjointState { u_f, e, w_e, raw })
    }

    /// `∂Φ(g)ᵀ W r`: the gradient of `⟨∂Φ(g)h, r⟩` with respect to the coefficients.
    pub fn adjoint_raw(&self, r: &[f64]) -> Result<Vec<f64>> {
        Ok(self.adjoint_state(r)?.raw)
    }

    /// `∂Φ(g)* r = M_s⁻¹ ∂Φ(g)ᵀ W r`.
    pub fn adjoint(&self, gram: &ParameterGram, r: &[f64]) -> Result<Vec<f64>> {
        Ok(gram.apply_inverse(&self.adjoint_raw(r)?))
    }

    /// `∂Φ(g)* ∂Φ(g) h`.
    pub fn normal(&self, gram: &ParameterGram, h: &[f64]) -> Result<Vec<f64>> {
        self.adjoint(gram, &self.apply(h)?)
    }

    pub fn exec(&self) -> Exec {
        self.problem.exec
    }
}

/// Solves `K(d_m) w = K_{d_h} u_m`, the derivative of the equilibrium map in direction `d_h`.
pub fn apply_oe_derivative(problem: &ForwardProblem, state: &StateTrajectory, m: usize, d_h: &[f64]) -> Result<Vec<f64>> {
    let eq = Equilibrium::new(&problem.mesh, &problem.material, &state.damage.values[m])?;
    let rhs = weighted_stiffness_apply(&problem.mesh, &problem.material, d_h, &state.displacements[m]);
    Ok(eq.solve(&problem.mesh, &rhs))
}

/// `∂Φ(g)h` at a converged state.
pub fn linearized_apply(problem: &ForwardProblem, process: &DamageProcess, state: &StateTrajectory, h: &[f64]) -> Result<Vec<f64>> {
    Linearization::new(problem, process, state)?.apply(h)
}

/// `K(d_m) u_f = M w` for one data slice `w`.
pub fn adjoint_elasticity_solve(problem: &ForwardProblem, state: &StateTrajectory, m: usize, w: &[f64]) -> Result<Vec<f64>> {
    let eq = Equilibrium::new(&problem.mesh, &problem.material, &state.damage.values[m])?;
    Ok(eq.solve(&problem.mesh, &problem.mesh.mass_apply(problem.mass(), w)))
}

/// Backward multipliers for pairings `e`.
pub fn adjoint_damage_solve(problem: &ForwardProblem, process: &DamageProcess, state: &StateTrajectory, e: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    Linearization::new(problem, process, state)?.adjoint_damage(e)
}

/// `∂Φ(g)* r` in the `M_s` geometry.
pub fn adjoint_apply(problem: &ForwardProblem, process: &DamageProcess, state: &StateTrajectory, gram: &ParameterGram, r: &[f64]) -> Result<Vec<f64>> {
    Linearization::new(problem, process, state)?.adjoint(gram, r)
}
