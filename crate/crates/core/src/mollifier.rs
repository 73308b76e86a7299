//! Mollified gradient `∇^μ` on nodal displacement fields and its exact transpose.
//!
//! The operator is assembled once per mesh as a sparse matrix from nodal
//! values to per-node gradient samples `G[k][i] = D_i u_k` (row-major, `N²`
//! per node). Stencil points that are not nodes are evaluated through the
//! finite element interpolant. Near the boundary the stencil is shifted
//! inward, so the operator stays linear and its transpose is exact.

use crate::error::{Error, Result};
use crate::fem::Mesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MollifierVariant {
    /// Forward difference quotient `μ⁻¹(u(x + μe_i) − u(x))`.
    Difference,
    /// Average of `∂_i u` over a window of half-width `μ`, i.e. the central
    /// difference `(2μ)⁻¹(u(x + μe_i) − u(x − μe_i))`; in 2D additionally
    /// averaged over transverse offsets `{−μ, 0, μ}` with weights `(¼, ½, ¼)`.
    Average,
}

impl MollifierVariant {
    pub fn name(self) -> &'static str {
        match self {
            MollifierVariant::Difference => "difference",
            MollifierVariant::Average => "average",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "difference" => Some(MollifierVariant::Difference),
            "average" => Some(MollifierVariant::Average),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MollifierSpec {
    pub radius: f64,
    pub variant: MollifierVariant,
}

/// Sparse linear map from dof vectors to per-node gradient samples.
#[derive(Debug, Clone)]
pub struct MollifiedGradient {
    dim: usize,
    dofs: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

const TOL: f64 = 1e-12;

impl MollifiedGradient {
    pub fn new(spec: &MollifierSpec, mesh: &Mesh) -> Result<Self> {
        let dim = mesh.dim();
        let mu = spec.radius;
        let h = mesh.spacing();
        let l = mesh.extent();
        let min_h = if dim == 1 { h[0] } else { h[0].min(h[1]) };
        if !(mu >= min_h * (1.0 - TOL)) {
            return Err(Error::Config(format!("mollifier radius {mu} below mesh spacing {min_h}")));
        }
        let reach = match spec.variant {
            MollifierVariant::Difference => mu,
            MollifierVariant::Average => 2.0 * mu,
        };
        for (axis, &len) in l.iter().take(dim).enumerate() {
            if reach > len * (1.0 + TOL) {
                return Err(Error::Config(format!(
                    "mollifier stencil of width {reach} exceeds the domain along axis {axis} (length {len})"
                )));
            }
        }

        let mut rows = Vec::with_capacity(mesh.node_count() * dim * dim);
        for x in mesh.nodes() {
            for k in 0..dim {
                for i in 0..dim {
                    let mut row = Vec::new();
                    match spec.variant {
                        MollifierVariant::Difference => {
                            let mut fwd = *x;
                            fwd[i] += mu;
                            let (a, b) = if fwd[i] <= l[i] * (1.0 + TOL) {
                                (*x, fwd)
                            } else {
                                let mut back = *x;
                                back[i] -= mu;
                                (back, *x)
                            };
                            push_interp(mesh, b, k, 1.0 / mu, &mut row);
                            push_interp(mesh, a, k, -1.0 / mu, &mut row);
                        }
                        MollifierVariant::Average => {
                            let start = (x[i] - mu).clamp(0.0, l[i] - 2.0 * mu);
                            let offsets: &[(f64, f64)] = if dim == 1 {
                                &[(0.0, 1.0)]
                            } else {
                                &[(-1.0, 0.25), (0.0, 0.5), (1.0, 0.25)]
                            };
                            let j = 1 - i;
                            for &(off, w) in offsets {
                                let mut a = *x;
                                a[i] = start;
                                if dim == 2 {
                                    a[j] = x[j].clamp(mu, l[j] - mu) + off * mu;
                                }
                                let mut b = a;
                                b[i] = start + 2.0 * mu;
                                push_interp(mesh, b, k, w / (2.0 * mu), &mut row);
                                push_interp(mesh, a, k, -w / (2.0 * mu), &mut row);
                            }
                        }
                    }
                    rows.push(merge(row));
                }
            }
        }
        Ok(Self { dim, dofs: mesh.dof_count(), rows })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of gradient samples (`nodes · N²`).
    pub fn output_len(&self) -> usize {
        self.rows.len()
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.dofs);
        self.rows.iter().map(|r| r.iter().map(|&(c, w)| w * u[c]).sum()).collect()
    }

    /// Exact transpose of [`MollifiedGradient::apply`].
    pub fn transpose(&self, w: &[f64]) -> Vec<f64> {
        assert_eq!(w.len(), self.rows.len());
        let mut out = vec![0.0; self.dofs];
        for (r, &wr) in self.rows.iter().zip(w) {
            if wr != 0.0 {
                for &(c, a) in r {
                    out[c] += a * wr;
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.rows.len(), self.dofs);
        for (i, r) in self.rows.iter().enumerate() {
            for &(c, w) in r {
                m[(i, c)] += w;
            }
        }
        m
    }

    /// Operator norm induced by the max-norm (largest absolute row sum).
    pub fn max_norm(&self) -> f64 {
        self.rows.iter().map(|r| r.iter().map(|(_, w)| w.abs()).sum::<f64>()).fold(0.0, f64::max)
    }
}

/// Adds `scale · u_k(p)` to `row` through the element interpolant.
fn push_interp(mesh: &Mesh, p: [f64; 2], k: usize, scale: f64, row: &mut Vec<(usize, f64)>) {
    let dim = mesh.dim();
    let h = mesh.spacing();
    let cells = mesh.cells();
    let locate = |v: f64, h: f64, n: usize| {
        let s = v / h;
        let mut i = (s + TOL).floor().max(0.0) as usize;
        if i >= n {
            i = n - 1;
        }
        (i, (s - i as f64).clamp(0.0, 1.0))
    };
    let (ix, xi) = locate(p[0], h[0], cells[0]);
    if dim == 1 {
        row.push((mesh.node_at(ix, 0), scale * (1.0 - xi)));
        row.push((mesh.node_at(ix + 1, 0), scale * xi));
    } else {
        let (iy, eta) = locate(p[1], h[1], cells[1]);
        for (dx, dy, w) in [(0, 0, (1.0 - xi) * (1.0 - eta)), (1, 0, xi * (1.0 - eta)), (1, 1, xi * eta), (0, 1, (1.0 - xi) * eta)] {
            row.push((mesh.node_at(ix + dx, iy + dy) * 2 + k, scale * w));
        }
    }
}

fn merge(mut row: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    row.sort_by_key(|&(c, _)| c);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(row.len());
    for (c, w) in row {
        match out.last_mut() {
            Some(last) if last.0 == c => last.1 += w,
            _ => out.push((c, w)),
        }
    }
    out.retain(|&(_, w)| w != 0.0);
    out
}

/// Applies `∇^μ` to a nodal field.
pub fn mollified_gradient(op: &MollifiedGradient, u: &[f64]) -> Vec<f64> {
    op.apply(u)
}

/// Applies `(∇^μ)ᵀ` to per-node gradient samples.
pub fn mollified_transpose(op: &MollifiedGradient, w: &[f64]) -> Vec<f64> {
    op.transpose(w)
}
