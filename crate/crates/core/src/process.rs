//! Finite-dimensional damage processes `g(t, x, y)` and their Nemytskii operators.
//!
//! A process is piecewise constant on a grid of time cells and space cells and
//! a clamped cubic B-spline expansion in the strain argument `y ∈ [-ȳ, ȳ]`.
//! Since the splines form a partition of unity, coefficients in
//! `[0, g_max]` keep the process itself in `[0, g_max]`.

use crate::error::{Error, Result};
use std::sync::Arc;

/// Pointwise damage-source law: anything that can be evaluated and
/// differentiated in the strain argument.
pub trait SourceLaw: Send + Sync {
    fn value(&self, t: f64, x: [f64; 2], y: f64) -> f64;
    /// Derivative with respect to the strain argument.
    fn dy(&self, t: f64, x: [f64; 2], y: f64) -> f64;
}

/// Clamped cubic B-spline basis on `[-ȳ, ȳ]` with uniform interior knots.
#[derive(Debug, Clone, PartialEq)]
pub struct BSplineBasis {
    count: usize,
    radius: f64,
    knots: Vec<f64>,
}

pub const SPLINE_DEGREE: usize = 3;

impl BSplineBasis {
    pub fn new(count: usize, radius: f64) -> Result<Self> {
        if count < SPLINE_DEGREE + 1 {
            return Err(Error::Config(format!("need at least {} cubic splines, got {count}", SPLINE_DEGREE + 1)));
        }
        if !(radius > 0.0) {
            return Err(Error::Config(format!("strain radius must be positive, got {radius}")));
        }
        let spans = count - SPLINE_DEGREE;
        let mut knots = vec![-radius; SPLINE_DEGREE];
        knots.extend((0..=spans).map(|i| -radius + 2.0 * radius * i as f64 / spans as f64));
        knots.extend(std::iter::repeat_n(radius, SPLINE_DEGREE));
        Ok(Self { count, radius, knots })
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Greville abscissa (knot average) of basis function `i`.
    pub fn greville(&self, i: usize) -> f64 {
        self.knots[i + 1..=i + SPLINE_DEGREE].iter().sum::<f64>() / SPLINE_DEGREE as f64
    }

    /// Knot span index `k` with `knots[k] <= y < knots[k+1]`, for clamped `y`.
    pub fn span(&self, y: f64) -> usize {
        let last = self.count - 1;
        if y >= self.knots[last + 1] {
            return last;
        }
        let (mut lo, mut hi) = (SPLINE_DEGREE, last + 1);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if y < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Values and first two derivatives of the four basis functions that are
    /// nonzero on `span`, evaluated at `y` (Cox–de Boor recursion).
    pub fn local_basis(&self, span: usize, y: f64) -> [[f64; 4]; 3] {
        const P: usize = SPLINE_DEGREE;
        let k = &self.knots;
        let mut ndu = [[0.0f64; P + 1]; P + 1];
        let mut left = [0.0; P + 1];
        let mut right = [0.0; P + 1];
        ndu[0][0] = 1.0;
        for j in 1..=P {
            left[j] = y - k[span + 1 - j];
            right[j] = k[span + j] - y;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        let mut ders = [[0.0; 4]; 3];
        for j in 0..=P {
            ders[0][j] = ndu[j][P];
        }
        let mut a = [[0.0f64; P + 1]; 2];
        for r in 0..=P {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for kk in 1..=2usize {
                let mut d = 0.0;
                let rk = r as isize - kk as isize;
                let pk = P - kk;
                if r >= kk {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if (r as isize - 1) <= pk as isize { kk - 1 } else { P - r };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][kk] = -a[s1][kk - 1] / ndu[pk + 1][r];
                    d += a[s2][kk] * ndu[r][pk];
                }
                ders[kk][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut fac = P as f64;
        for row in ders.iter_mut().skip(1) {
            for v in row.iter_mut() {
                *v *= fac;
            }
            fac *= (P - 1) as f64;
        }
        ders
    }

    /// Mass and stiffness (derivative) Gram matrices `∫B_iB_j`, `∫B_i'B_j'`.
    pub fn gram_matrices(&self) -> (nalgebra::DMatrix<f64>, nalgebra::DMatrix<f64>) {
        const GL4: [(f64, f64); 4] = [
            (-0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
            (-0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
            (0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
            (0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
        ];
        let n = self.count;
        let mut mass = nalgebra::DMatrix::zeros(n, n);
        let mut lap = nalgebra::DMatrix::zeros(n, n);
        for span in SPLINE_DEGREE..n {
            let (a, b) = (self.knots[span], self.knots[span + 1]);
            if b <= a {
                continue;
            }
            for &(xi, w) in &GL4 {
                let y = 0.5 * (a + b) + 0.5 * (b - a) * xi;
                let wq = 0.5 * (b - a) * w;
                let ders = self.local_basis(span, y);
                for p in 0..4 {
                    for q in 0..4 {
                        let (i, j) = (span - SPLINE_DEGREE + p, span - SPLINE_DEGREE + q);
                        mass[(i, j)] += wq * ders[0][p] * ders[0][q];
                        lap[(i, j)] += wq * ders[1][p] * ders[1][q];
                    }
                }
            }
        }
        (mass, lap)
    }
}

/// Scalar strain argument fed to the process, computed from the per-node
/// mollified displacement gradient `G[k][i] = D_i u_k` (row-major, `N²` entries).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrainFeature {
    /// The gradient itself; only meaningful in 1D.
    Gradient,
    /// Norm `√(ε:ε)` of the symmetric part.
    StrainNorm,
}

impl StrainFeature {
    pub fn default_for(dim: usize) -> Self {
        if dim == 1 {
            StrainFeature::Gradient
        } else {
            StrainFeature::StrainNorm
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StrainFeature::Gradient => "gradient",
            StrainFeature::StrainNorm => "strain_norm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gradient" => Some(StrainFeature::Gradient),
            "strain_norm" => Some(StrainFeature::StrainNorm),
            _ => None,
        }
    }

    /// Feature value and its gradient with respect to the `N²` entries.
    pub fn eval(self, dim: usize, g: &[f64]) -> (f64, [f64; 4]) {
        match (self, dim) {
            (StrainFeature::Gradient, _) => (g[0], [1.0, 0.0, 0.0, 0.0]),
            (StrainFeature::StrainNorm, 1) => (g[0].abs(), [g[0].signum() * (g[0] != 0.0) as u8 as f64, 0.0, 0.0, 0.0]),
            (StrainFeature::StrainNorm, _) => {
                let (exx, eyy, exy) = (g[0], g[3], 0.5 * (g[1] + g[2]));
                let y = (exx * exx + eyy * eyy + 2.0 * exy * exy).sqrt();
                if y == 0.0 {
                    (0.0, [0.0; 4])
                } else {
                    (y, [exx / y, exy / y, exy / y, eyy / y])
                }
            }
        }
    }
}

/// Tensor-product discretization of the process argument space.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessBasis {
    pub time_cells: usize,
    /// Cells per spatial axis (second entry 1 in 1D).
    pub space_cells: [usize; 2],
    pub horizon: f64,
    pub extent: [f64; 2],
    pub spline: BSplineBasis,
    pub dim: usize,
}

/// The four coefficients touched by one evaluation and their weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Support {
    pub first: usize,
    pub values: [f64; 4],
    pub slopes: [f64; 4],
}

impl ProcessBasis {
    pub fn new(dim: usize, extent: [f64; 2], horizon: f64, time_cells: usize, space_cells: [usize; 2], splines: usize, radius: f64) -> Result<Self> {
        if time_cells < 1 || space_cells[0] < 1 || space_cells[1] < 1 {
            return Err(Error::Config("process cell counts must be >= 1".into()));
        }
        let space_cells = if dim == 1 { [space_cells[0], 1] } else { space_cells };
        Ok(Self { time_cells, space_cells, horizon, extent, spline: BSplineBasis::new(splines, radius)?, dim })
    }

    pub fn len(&self) -> usize {
        self.time_cells * self.space_cells[0] * self.space_cells[1] * self.spline.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Axis sizes in row-major coefficient order: `[t, x2, x1, y]`.
    pub fn axis_sizes(&self) -> [usize; 4] {
        [self.time_cells, self.space_cells[1], self.space_cells[0], self.spline.len()]
    }

    pub fn index(&self, it: usize, ix: [usize; 2], iy: usize) -> usize {
        ((it * self.space_cells[1] + ix[1]) * self.space_cells[0] + ix[0]) * self.spline.len() + iy
    }

    /// Inverse of [`ProcessBasis::index`]: `(i_t, i_x flattened, i_y)`.
    pub fn unravel(&self, k: usize) -> (usize, usize, usize) {
        let ny = self.spline.len();
        let nx = self.space_cells[0] * self.space_cells[1];
        (k / (ny * nx), (k / ny) % nx, k % ny)
    }

    fn cell(v: f64, len: f64, n: usize) -> usize {
        (((v / len) * n as f64 + 1e-9).floor().max(0.0) as usize).min(n - 1)
    }

    pub fn cell_of(&self, t: f64, x: [f64; 2]) -> (usize, [usize; 2]) {
        let it = Self::cell(t, self.horizon, self.time_cells);
        let ix0 = Self::cell(x[0], self.extent[0], self.space_cells[0]);
        let ix1 = if self.dim == 2 { Self::cell(x[1], self.extent[1], self.space_cells[1]) } else { 0 };
        (it, [ix0, ix1])
    }

    /// Center of time cell `it` and spatial cell `ix`.
    pub fn cell_center(&self, it: usize, ix: [usize; 2]) -> (f64, [f64; 2]) {
        let t = (it as f64 + 0.5) * self.horizon / self.time_cells as f64;
        let x0 = (ix[0] as f64 + 0.5) * self.extent[0] / self.space_cells[0] as f64;
        let x1 = if self.dim == 2 { (ix[1] as f64 + 0.5) * self.extent[1] / self.space_cells[1] as f64 } else { 0.0 };
        (t, [x0, x1])
    }

    /// Coefficients and weights entering `g(t, x, y)` and `∂_y g(t, x, y)`.
    /// Arguments outside `[-ȳ, ȳ]` are clamped; the slope there is zero.
    pub fn support(&self, t: f64, x: [f64; 2], y: f64) -> Support {
        let (it, ix) = self.cell_of(t, x);
        let r = self.spline.radius();
        let yc = y.clamp(-r, r);
        let span = self.spline.span(yc);
        let ders = self.spline.local_basis(span, yc);
        let inside = y > -r && y < r;
        Support {
            first: self.index(it, ix, span - SPLINE_DEGREE),
            values: ders[0],
            slopes: if inside { ders[1] } else { [0.0; 4] },
        }
    }
}

/// Spline-based damage process with coefficients in `[0, g_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DamageProcess {
    pub basis: Arc<ProcessBasis>,
    pub coeffs: Vec<f64>,
    /// Upper bound `g_max` of the admissible box.
    pub bound: f64,
}

impl DamageProcess {
    pub fn constant(basis: Arc<ProcessBasis>, bound: f64, value: f64) -> Self {
        let n = basis.len();
        Self { basis, coeffs: vec![value; n], bound }
    }

    /// Samples `f` at cell centers and Greville abscissae (variation-diminishing
    /// spline approximation). Values of `f` inside `[0, g_max]` give an admissible process.
    pub fn from_fn(basis: Arc<ProcessBasis>, bound: f64, f: impl Fn(f64, [f64; 2], f64) -> f64) -> Self {
        let mut coeffs = vec![0.0; basis.len()];
        for it in 0..basis.time_cells {
            for i1 in 0..basis.space_cells[1] {
                for i0 in 0..basis.space_cells[0] {
                    let (t, x) = basis.cell_center(it, [i0, i1]);
                    for iy in 0..basis.spline.len() {
                        coeffs[basis.index(it, [i0, i1], iy)] = f(t, x, basis.spline.greville(iy));
                    }
                }
            }
        }
        Self { basis, coeffs, bound }
    }

    pub fn with_coeffs(&self, coeffs: Vec<f64>) -> Self {
        assert_eq!(coeffs.len(), self.coeffs.len());
        Self { basis: self.basis.clone(), coeffs, bound: self.bound }
    }

    pub fn is_admissible(&self) -> bool {
        self.coeffs.iter().all(|&c| (0.0..=self.bound).contains(&c))
    }
}

impl SourceLaw for DamageProcess {
    fn value(&self, t: f64, x: [f64; 2], y: f64) -> f64 {
        let s = self.basis.support(t, x, y);
        (0..4).map(|k| self.coeffs[s.first + k] * s.values[k]).sum()
    }

    fn dy(&self, t: f64, x: [f64; 2], y: f64) -> f64 {
        let s = self.basis.support(t, x, y);
        (0..4).map(|k| self.coeffs[s.first + k] * s.slopes[k]).sum()
    }
}

/// Closed-form source law, used for reference problems.
pub struct AnalyticLaw {
    value: Box<dyn Fn(f64, [f64; 2], f64) -> f64 + Send + Sync>,
    dy: Box<dyn Fn(f64, [f64; 2], f64) -> f64 + Send + Sync>,
}

impl AnalyticLaw {
    pub fn new(
        value: impl Fn(f64, [f64; 2], f64) -> f64 + Send + Sync + 'static,
        dy: impl Fn(f64, [f64; 2], f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { value: Box::new(value), dy: Box::new(dy) }
    }

    pub fn zero() -> Self {
        Self::new(|_, _, _| 0.0, |_, _, _| 0.0)
    }
}

impl std::fmt::Debug for AnalyticLaw {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("AnalyticLaw")
    }
}

impl SourceLaw for AnalyticLaw {
    fn value(&self, t: f64, x: [f64; 2], y: f64) -> f64 {
        (self.value)(t, x, y)
    }

    fn dy(&self, t: f64, x: [f64; 2], y: f64) -> f64 {
        (self.dy)(t, x, y)
    }
}

/// `G(f)(t_m, x_j) = g(t_m, x_j, f(t_m, x_j))` for samples indexed `[m][j]`.
pub fn apply_nemytskii(law: &dyn SourceLaw, times: &[f64], points: &[[f64; 2]], field: &[Vec<f64>]) -> Vec<Vec<f64>> {
    field
        .iter()
        .zip(times)
        .map(|(slice, &t)| slice.iter().zip(points).map(|(&y, &x)| law.value(t, x, y)).collect())
        .collect()
}

/// Entrywise clamp of the coefficients to `[0, g_max]`.
pub fn project_admissible(p: &DamageProcess) -> DamageProcess {
    p.with_coeffs(p.coeffs.iter().map(|c| c.clamp(0.0, p.bound)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn basis_1d(ny: usize) -> Arc<ProcessBasis> {
        Arc::new(ProcessBasis::new(1, [1.0, 0.0], 1.0, 2, [3, 1], ny, 2.0).unwrap())
    }

    /// de Boor's algorithm on the control polygon, independent of the basis recursion.
    fn de_boor(knots: &[f64], coeffs: &[f64], y: f64) -> f64 {
        let p = SPLINE_DEGREE;
        let n = coeffs.len();
        let mut k = p;
        while k < n - 1 && y >= knots[k + 1] {
            k += 1;
        }
        let mut d: Vec<f64> = (0..=p).map(|j| coeffs[j + k - p]).collect();
        for r in 1..=p {
            for j in (r..=p).rev() {
                let i = j + k - p;
                let alpha = (y - knots[i]) / (knots[i + p + 1 - r] - knots[i]);
                d[j] = (1.0 - alpha) * d[j - 1] + alpha * d[j];
            }
        }
        d[p]
    }

    #[test]
    fn partition_of_unity() {
        let b = BSplineBasis::new(9, 1.5).unwrap();
        for i in 0..=60 {
            let y = -1.5 + 3.0 * i as f64 / 60.0;
            let ders = b.local_basis(b.span(y), y);
            assert_abs_diff_eq!(ders[0].iter().sum::<f64>(), 1.0, epsilon = 1e-14);
            assert_abs_diff_eq!(ders[1].iter().sum::<f64>(), 0.0, epsilon = 1e-12);
            assert!(ders[0].iter().all(|&v| v >= -1e-15));
        }
    }

    #[test]
    fn constant_coefficients() {
        let b = basis_1d(8);
        let zero = DamageProcess::constant(b.clone(), 0.2, 0.0);
        let full = DamageProcess::constant(b, 0.2, 0.2);
        for &(t, x, y) in &[(0.1, 0.2, -1.9), (0.7, 0.9, 0.3), (0.5, 0.5, 5.0)] {
            assert_eq!(zero.value(t, [x, 0.0], y), 0.0);
            assert_abs_diff_eq!(full.value(t, [x, 0.0], y), 0.2, epsilon = 1e-15);
            assert_abs_diff_eq!(full.dy(t, [x, 0.0], y), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn single_coefficient_matches_de_boor() {
        let b = basis_1d(10);
        let mut p = DamageProcess::constant(b.clone(), 0.3, 0.0);
        let iy = 5;
        p.coeffs[b.index(1, [2, 0], iy)] = 0.3;
        let knots = b.spline.knots();
        let mut local = vec![0.0; 10];
        local[iy] = 0.3;
        let y = 0.5 * (knots[iy + 1] + knots[iy + 2]);
        let v = p.value(0.8, [0.9, 0.0], y);
        assert_abs_diff_eq!(v, de_boor(knots, &local, y), epsilon = 1e-15);
        assert!(v > 0.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let c: Vec<f64> = (0..10).map(|_| rng.random_range(0.0..1.0)).collect();
        let q = DamageProcess { basis: b.clone(), coeffs: vec![c.clone(); 6].concat(), bound: 1.0 };
        for _ in 0..50 {
            let y = rng.random_range(-2.0..2.0);
            assert_abs_diff_eq!(q.value(0.0, [0.0, 0.0], y), de_boor(knots, &c, y), epsilon = 1e-14);
        }
    }

    #[test]
    fn derivative_matches_central_differences() {
        let b = basis_1d(12);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let p = DamageProcess { basis: b.clone(), coeffs: (0..b.len()).map(|_| rng.random_range(0.0..0.2)).collect(), bound: 0.2 };
        let mut errs = Vec::new();
        for eps in [1e-2, 5e-3] {
            let mut worst = 0.0f64;
            for _ in 0..40 {
                let (t, x, y) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(-1.9..1.9));
                let fd = (p.value(t, [x, 0.0], y + eps) - p.value(t, [x, 0.0], y - eps)) / (2.0 * eps);
                worst = worst.max((fd - p.dy(t, [x, 0.0], y)).abs());
            }
            errs.push(worst);
        }
        assert!(errs[0] < 1e-3);
        // O(ε²): halving ε shrinks the error by about four
        assert!(errs[1] < errs[0] / 3.0, "{errs:?}");
    }

    #[test]
    fn clamped_region_has_zero_slope() {
        let b = basis_1d(8);
        let p = DamageProcess::from_fn(b, 0.2, |_, _, y| 0.1 + 0.04 * y);
        for y in [-2.0, 2.0, 3.0, -7.0] {
            assert_eq!(p.dy(0.5, [0.5, 0.0], y), 0.0);
        }
        assert_abs_diff_eq!(p.value(0.5, [0.5, 0.0], 3.0), p.value(0.5, [0.5, 0.0], 2.0));
        // Greville sampling reproduces linear functions
        assert_abs_diff_eq!(p.value(0.5, [0.5, 0.0], 0.7), 0.1 + 0.04 * 0.7, epsilon = 1e-14);
    }

    #[test]
    fn projection() {
        let b = basis_1d(4);
        let mut p = DamageProcess::constant(b, 0.25, 0.1);
        assert_eq!(project_admissible(&p), p);
        p.coeffs[0] = -0.1;
        p.coeffs[1] = 0.5;
        let q = project_admissible(&p);
        assert_eq!(q.coeffs[0], 0.0);
        assert_eq!(q.coeffs[1], 0.25);
        assert_eq!(project_admissible(&q), q);
    }

    #[test]
    fn nemytskii_entrywise() {
        let b = basis_1d(6);
        let p = DamageProcess::constant(b, 0.2, 0.2);
        let out = apply_nemytskii(&p, &[0.0, 0.5], &[[0.0, 0.0], [1.0, 0.0]], &[vec![0.1, -3.0], vec![1.0, 2.5]]);
        for row in out {
            for v in row {
                assert_abs_diff_eq!(v, 0.2, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn strain_norm_feature_gradient() {
        let g = [0.3, -0.2, 0.5, 0.1];
        let (y, dg) = StrainFeature::StrainNorm.eval(2, &g);
        for k in 0..4 {
            let mut gp = g;
            gp[k] += 1e-7;
            let mut gm = g;
            gm[k] -= 1e-7;
            let fd = (StrainFeature::StrainNorm.eval(2, &gp).0 - StrainFeature::StrainNorm.eval(2, &gm).0) / 2e-7;
            assert_abs_diff_eq!(fd, dg[k], epsilon = 1e-8);
        }
        assert!(y > 0.0);
    }

    proptest! {
        #[test]
        fn lipschitz_bound_holds(seed in 0u64..200, y1 in -2.5f64..2.5, y2 in -2.5f64..2.5) {
            let b = basis_1d(9);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let p = DamageProcess { basis: b.clone(), coeffs: (0..b.len()).map(|_| rng.random_range(0.0..0.2)).collect(), bound: 0.2 };
            // Lipschitz constant: max |g'| over a fine grid plus the curvature margin of the grid
            let (mut lmax, mut cmax) = (0.0f64, 0.0f64);
            for i in 0..=2000 {
                let y = -2.0 + 4.0 * i as f64 / 2000.0;
                let s = b.spline.span(y);
                let d = b.spline.local_basis(s, y);
                let c = &p.coeffs[b.index(0, [0, 0], s - SPLINE_DEGREE)..];
                lmax = lmax.max((0..4).map(|k| c[k] * d[1][k]).sum::<f64>().abs());
                cmax = cmax.max((0..4).map(|k| c[k] * d[2][k]).sum::<f64>().abs());
            }
            let l = lmax + cmax * 4.0 / 2000.0;
            let diff = (p.value(0.1, [0.1, 0.0], y1) - p.value(0.1, [0.1, 0.0], y2)).abs();
            prop_assert!(diff <= l * (y1 - y2).abs() + 1e-14);
        }

        #[test]
        fn nemytskii_remainder_is_second_order(seed in 0u64..100) {
            let b = basis_1d(10);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let p = DamageProcess { basis: b.clone(), coeffs: (0..b.len()).map(|_| rng.random_range(0.0..0.2)).collect(), bound: 0.2 };
            let f: Vec<f64> = (0..20).map(|_| rng.random_range(-1.5..1.5)).collect();
            let dir: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
            let rem = |s: f64| {
                f.iter().zip(&dir).map(|(&fi, &hi)| {
                    (p.value(0.0, [0.0, 0.0], fi + s * hi) - p.value(0.0, [0.0, 0.0], fi) - s * hi * p.dy(0.0, [0.0, 0.0], fi)).abs()
                }).fold(0.0, f64::max)
            };
            let mut c2 = 0.0f64;
            for i in 0..=4000 {
                let y = -2.0 + 4.0 * i as f64 / 4000.0;
                let s = b.spline.span(y);
                let d = b.spline.local_basis(s, y);
                let c = &p.coeffs[b.index(0, [0, 0], s - SPLINE_DEGREE)..];
                c2 = c2.max((0..4).map(|k| c[k] * d[2][k]).sum::<f64>().abs());
            }
            // C = sup|g''|/2, with a margin for the sampling of the sup
            let c2 = 1.05 * c2;
            for s in [1e-1, 1e-2, 1e-3] {
                prop_assert!(rem(s) <= 0.5 * c2 * s * s + 1e-15);
            }
        }
    }
}
