//! Discrete Sobolev inner product on process coefficients.
//!
//! Each coefficient axis `[t, x2, x1, y]` carries a mass Gram `M_a` and a
//! derivative Gram `K_a`. Piecewise-constant axes use the cell volumes and the
//! graph Laplacian scaled by the cell width; the spline axis uses the exact
//! integrals of products of B-splines and their derivatives. With generalized
//! eigenvectors `V_a` (`V_aᵀM_aV_a = I`, `V_aᵀK_aV_a = Λ_a`) the Gram is
//!
//! `M_s = M V (I + Σ_a Λ_a)^s Vᵀ M`, with inverse `V (I + Σ_a Λ_a)^{-s} Vᵀ`,
//!
//! where `M` and `V` are the Kronecker products of the per-axis factors.

use crate::error::{Error, Result};
use crate::process::ProcessBasis;
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
struct Axis {
    mass: DMatrix<f64>,
    lap: DMatrix<f64>,
    vectors: DMatrix<f64>,
    values: Vec<f64>,
}

impl Axis {
    fn new(mass: DMatrix<f64>, lap: DMatrix<f64>, name: &str) -> Result<Self> {
        let chol = mass
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical(format!("{name}-axis mass Gram is not positive definite")))?;
        let l = chol.l();
        let linv = l
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Numerical(format!("{name}-axis Cholesky factor is singular")))?;
        let mut c = &linv * &lap * linv.transpose();
        c = (&c + c.transpose()) * 0.5;
        let eig = c.symmetric_eigen();
        let vectors = linv.transpose() * eig.eigenvectors;
        // Round-off can push the null eigenvalue slightly negative.
        let values = eig.eigenvalues.iter().map(|&v| v.max(0.0)).collect();
        Ok(Self { mass, lap, vectors, values })
    }

    fn cells(n: usize, width: f64, name: &str) -> Result<Self> {
        let h = width / n as f64;
        let mass = DMatrix::from_diagonal_element(n, n, h);
        let mut lap = DMatrix::zeros(n, n);
        for i in 0..n.saturating_sub(1) {
            lap[(i, i)] += 1.0 / h;
            lap[(i + 1, i + 1)] += 1.0 / h;
            lap[(i, i + 1)] -= 1.0 / h;
            lap[(i + 1, i)] -= 1.0 / h;
        }
        Self::new(mass, lap, name)
    }
}

/// Applies `a` along one axis of a row-major 4-tensor.
fn mode_product(v: &[f64], shape: [usize; 4], axis: usize, a: &DMatrix<f64>) -> Vec<f64> {
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = vec![0.0; v.len()];
    let mut fibre = vec![0.0; n];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * n * inner + i;
            for (k, f) in fibre.iter_mut().enumerate() {
                *f = v[base + k * inner];
            }
            for r in 0..n {
                let mut acc = 0.0;
                for (k, f) in fibre.iter().enumerate() {
                    acc += a[(r, k)] * f;
                }
                out[base + r * inner] = acc;
            }
        }
    }
    out
}

/// SPD Gram `M_s` realizing the `H^s` inner product on coefficients.
#[derive(Debug, Clone)]
pub struct ParameterGram {
    axes: Vec<Axis>,
    shape: [usize; 4],
    /// `(1 + Σ_a λ_a)^s` per joint eigenvector, row-major.
    spectrum: Vec<f64>,
    pub s: f64,
}

/// Builds the Gram for coefficients of `basis` with Sobolev exponent `s`.
pub fn build_parameter_gram(basis: &ProcessBasis, s: f64) -> Result<ParameterGram> {
    if !(s >= 0.0 && s.is_finite()) {
        return Err(Error::Config(format!("Gram exponent must be >= 0, got {s}")));
    }
    let shape = basis.axis_sizes();
    let (sm, sl) = basis.spline.gram_matrices();
    let x2 = if basis.dim == 2 { Axis::cells(shape[1], basis.extent[1], "x2")? } else { Axis::cells(1, 1.0, "x2")? };
    let axes = vec![
        Axis::cells(shape[0], basis.horizon, "t")?,
        x2,
        Axis::cells(shape[2], basis.extent[0], "x1")?,
        Axis::new(sm, sl, "y")?,
    ];
    let mut spectrum = Vec::with_capacity(basis.len());
    for a in &axes[0].values {
        for b in &axes[1].values {
            for c in &axes[2].values {
                for d in &axes[3].values {
                    spectrum.push((1.0 + a + b + c + d).powf(s));
                }
            }
        }
    }
    Ok(ParameterGram { axes, shape, spectrum, s })
}

impl ParameterGram {
    pub fn len(&self) -> usize {
        self.spectrum.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spectrum.is_empty()
    }

    fn kron(&self, v: &[f64], pick: impl Fn(&Axis) -> DMatrix<f64>) -> Vec<f64> {
        assert_eq!(v.len(), self.len(), "coefficient vector has wrong length");
        let mut out = v.to_vec();
        for (k, axis) in self.axes.iter().enumerate() {
            out = mode_product(&out, self.shape, k, &pick(axis));
        }
        out
    }

    fn scaled(&self, v: &[f64], power: f64) -> Vec<f64> {
        v.iter().zip(&self.spectrum).map(|(x, l)| x * l.powf(power)).collect()
    }

    /// Coordinates `Vᵀv` in the joint eigenbasis.
    pub fn to_spectral(&self, v: &[f64]) -> Vec<f64> {
        self.kron(v, |a| a.vectors.transpose())
    }

    pub fn from_spectral(&self, c: &[f64]) -> Vec<f64> {
        self.kron(c, |a| a.vectors.clone())
    }

    /// `M v` (Kronecker mass, the `s = 0` Gram).
    pub fn mass_apply(&self, v: &[f64]) -> Vec<f64> {
        self.kron(v, |a| a.mass.clone())
    }

    /// `K v` with `K = Σ_a M ⊗ … ⊗ K_a ⊗ … ⊗ M`.
    pub fn laplace_apply(&self, v: &[f64]) -> Vec<f64> {
        let mut total = vec![0.0; v.len()];
        for k in 0..4 {
            let mut out = v.to_vec();
            for (j, axis) in self.axes.iter().enumerate() {
                let mat = if j == k { &axis.lap } else { &axis.mass };
                out = mode_product(&out, self.shape, j, mat);
            }
            crate::linalg::axpy(1.0, &out, &mut total);
        }
        total
    }

    /// `M_s v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let c = self.to_spectral(&self.mass_apply(v));
        self.mass_apply(&self.from_spectral(&self.scaled(&c, 1.0)))
    }

    /// `M_s⁻¹ v`.
    pub fn apply_inverse(&self, v: &[f64]) -> Vec<f64> {
        self.from_spectral(&self.scaled(&self.to_spectral(v), -1.0))
    }

    /// `⟨a, b⟩_{M_s}` evaluated as `Σ_k σ_k (VᵀMa)_k (VᵀMb)_k`.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        let ca = self.to_spectral(&self.mass_apply(a));
        let cb = self.to_spectral(&self.mass_apply(b));
        ca.iter().zip(&cb).zip(&self.spectrum).map(|((x, y), l)| x * y * l).sum()
    }

    pub fn norm(&self, a: &[f64]) -> f64 {
        self.inner(a, a).max(0.0).sqrt()
    }

    /// Dense `M_s`, assembled column by column.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut out = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            out.set_column(j, &DVector::from_vec(self.apply(&e)));
            e[j] = 0.0;
        }
        out
    }

    /// Smallest and largest entries of `(1 + Σλ)^s`.
    pub fn spectral_range(&self) -> (f64, f64) {
        let lo = self.spectrum.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.spectrum.iter().copied().fold(0.0, f64::max);
        (lo, hi)
    }
}
