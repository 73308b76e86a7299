//! Structured finite elements for damage-degraded linear elasticity.
//!
//! Linear segments in 1D, bilinear quadrilaterals in 2D (plane strain). Clamped
//! boundary dofs are eliminated from the system, so the reduced stiffness is
//! symmetric positive definite and its transpose is itself.

use crate::error::{Error, Result};
use crate::linalg::{BandCholesky, SymBand};

/// Boundary side of the interval or rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

impl Side {
    fn bit(self) -> u8 {
        match self {
            Side::Left => 1,
            Side::Right => 2,
            Side::Bottom => 4,
            Side::Top => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
            Side::Bottom => "bottom",
            Side::Top => "top",
        }
    }

    pub fn parse(s: &str) -> Option<Side> {
        match s {
            "left" => Some(Side::Left),
            "right" => Some(Side::Right),
            "bottom" => Some(Side::Bottom),
            "top" => Some(Side::Top),
            _ => None,
        }
    }

    pub fn all(dim: usize) -> &'static [Side] {
        if dim == 1 {
            &[Side::Left, Side::Right]
        } else {
            &[Side::Left, Side::Right, Side::Bottom, Side::Top]
        }
    }
}

/// Domain geometry plus the split of the boundary into clamped (Γ0) and
/// traction (Γ1) sides. Every side not listed as clamped belongs to Γ1.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    /// `[L]` for an interval, `[Lx, Ly]` for a rectangle.
    pub extent: Vec<f64>,
    /// Element count per axis.
    pub elements: Vec<usize>,
    pub clamped: Vec<Side>,
}

impl DomainSpec {
    pub fn interval(length: f64, elements: usize) -> Self {
        Self { extent: vec![length], elements: vec![elements], clamped: vec![Side::Left] }
    }

    pub fn rectangle(lx: f64, ly: f64, nx: usize, ny: usize) -> Self {
        Self { extent: vec![lx, ly], elements: vec![nx, ny], clamped: vec![Side::Left] }
    }

    pub fn dim(&self) -> usize {
        self.extent.len()
    }

    pub fn traction_sides(&self) -> Vec<Side> {
        Side::all(self.dim()).iter().copied().filter(|s| !self.clamped.contains(s)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.dim();
        if !(dim == 1 || dim == 2) {
            return Err(Error::Config(format!("dimension must be 1 or 2, got {dim}")));
        }
        if self.elements.len() != dim {
            return Err(Error::Config(format!(
                "expected {dim} element counts, got {}",
                self.elements.len()
            )));
        }
        if let Some(n) = self.elements.iter().find(|&&n| n < 1) {
            return Err(Error::Config(format!("element count must be >= 1, got {n}")));
        }
        if let Some(l) = self.extent.iter().find(|&&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::Config(format!("extent must be positive, got {l}")));
        }
        if self.clamped.is_empty() {
            return Err(Error::Config("clamped boundary part is empty".into()));
        }
        for s in &self.clamped {
            if !Side::all(dim).contains(s) {
                return Err(Error::Config(format!("side {} does not exist for dimension {dim}", s.name())));
            }
        }
        if self.traction_sides().is_empty() {
            return Err(Error::Config("traction boundary part is empty".into()));
        }
        Ok(())
    }
}

/// Symmetric 2×2 (or 1×1) tensor stored as `[xx, yy, xy]`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Sym {
    pub xx: f64,
    pub yy: f64,
    pub xy: f64,
}

impl Sym {
    pub fn scalar(v: f64) -> Self {
        Sym { xx: v, yy: 0.0, xy: 0.0 }
    }

    /// Full contraction `a : b`.
    pub fn ddot(&self, o: &Sym) -> f64 {
        self.xx * o.xx + self.yy * o.yy + 2.0 * self.xy * o.xy
    }

    pub fn scaled(&self, a: f64) -> Sym {
        Sym { xx: a * self.xx, yy: a * self.yy, xy: a * self.xy }
    }
}

/// Action of the fourth-order elasticity tensor on symmetric strains.
pub trait ElasticityTensor {
    fn stress(&self, eps: &Sym) -> Sym;
    /// Largest `c` with `𝔼ε:ε >= c ε:ε`.
    fn ellipticity(&self) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Elasticity {
    /// 1D bar with Young's modulus `E`.
    Bar { young: f64 },
    /// 2D isotropic plane strain.
    Isotropic { lambda: f64, mu: f64 },
}

impl Elasticity {
    pub fn dim(&self) -> usize {
        match self {
            Elasticity::Bar { .. } => 1,
            Elasticity::Isotropic { .. } => 2,
        }
    }
}

impl ElasticityTensor for Elasticity {
    fn stress(&self, eps: &Sym) -> Sym {
        match *self {
            Elasticity::Bar { young } => Sym::scalar(young * eps.xx),
            Elasticity::Isotropic { lambda, mu } => {
                let tr = eps.xx + eps.yy;
                Sym {
                    xx: lambda * tr + 2.0 * mu * eps.xx,
                    yy: lambda * tr + 2.0 * mu * eps.yy,
                    xy: 2.0 * mu * eps.xy,
                }
            }
        }
    }

    fn ellipticity(&self) -> f64 {
        match *self {
            Elasticity::Bar { young } => young,
            Elasticity::Isotropic { lambda, mu } => (2.0 * mu).min(2.0 * mu + 2.0 * lambda),
        }
    }
}

/// Elastic coefficients together with the damage-law constants.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialModel {
    pub elasticity: Elasticity,
    /// Optional positive per-element multiplier of the elasticity tensor.
    pub modulus_field: Option<Vec<f64>>,
    /// Damage exponent `α >= 1`.
    pub alpha: f64,
    /// Upper bound of the initial damage.
    pub omega0: f64,
    /// Upper bound of the damage, strictly below one.
    pub omega1: f64,
    /// Radius of the strain-argument range `[-ȳ, ȳ]`.
    pub y_bar: f64,
    pub horizon: f64,
}

impl MaterialModel {
    pub fn bar(young: f64) -> Self {
        Self {
            elasticity: Elasticity::Bar { young },
            modulus_field: None,
            alpha: 1.0,
            omega0: 0.0,
            omega1: 0.5,
            y_bar: 2.0,
            horizon: 1.0,
        }
    }

    pub fn isotropic(lambda: f64, mu: f64) -> Self {
        Self { elasticity: Elasticity::Isotropic { lambda, mu }, ..Self::bar(1.0) }
    }

    pub fn dim(&self) -> usize {
        self.elasticity.dim()
    }

    /// Upper bound of admissible damage sources, `T⁻¹(ω1 − ω0)(1 − ω1)^α`.
    pub fn source_bound(&self) -> f64 {
        (self.omega1 - self.omega0) * (1.0 - self.omega1).powf(self.alpha) / self.horizon
    }

    pub fn modulus_multiplier(&self, element: usize) -> f64 {
        self.modulus_field.as_ref().map_or(1.0, |f| f[element])
    }

    pub fn validate(&self) -> Result<()> {
        match self.elasticity {
            Elasticity::Bar { young } if !(young > 0.0) => {
                return Err(Error::Config(format!("Young's modulus must be positive, got {young}")))
            }
            Elasticity::Isotropic { lambda, mu } if !(mu > 0.0 && lambda + mu > 0.0) => {
                return Err(Error::Config(format!(
                    "Lamé pair ({lambda}, {mu}) is not uniformly elliptic"
                )))
            }
            _ => {}
        }
        if let Some(f) = &self.modulus_field {
            if f.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::Config("modulus field must be positive".into()));
            }
        }
        if !(self.alpha >= 1.0) {
            return Err(Error::Config(format!("alpha must be >= 1, got {}", self.alpha)));
        }
        if !(0.0 <= self.omega0 && self.omega0 <= self.omega1 && self.omega1 < 1.0) {
            return Err(Error::Config(format!(
                "need 0 <= omega0 <= omega1 < 1, got omega0={} omega1={}",
                self.omega0, self.omega1
            )));
        }
        if !(self.y_bar > 0.0) {
            return Err(Error::Config(format!("y_bar must be positive, got {}", self.y_bar)));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::Config(format!("horizon must be positive, got {}", self.horizon)));
        }
        Ok(())
    }
}

/// Shape data of one quadrature point on the reference-sized element.
#[derive(Debug, Clone)]
struct QuadPoint {
    /// Shape function values per element node.
    shape: [f64; 4],
    /// Strain produced by a unit value of each element dof.
    unit_strain: [Sym; 8],
    /// Quadrature weight times Jacobian determinant.
    weight: f64,
}

/// Uniform structured mesh with lexicographic node ordering (x fastest).
#[derive(Debug, Clone)]
pub struct Mesh {
    dim: usize,
    extent: [f64; 2],
    cells: [usize; 2],
    spacing: [f64; 2],
    nodes: Vec<[f64; 2]>,
    elements: Vec<[usize; 4]>,
    node_sides: Vec<u8>,
    clamped: u8,
    constrained: Vec<bool>,
    free_dofs: Vec<usize>,
    quad: Vec<QuadPoint>,
    bandwidth: usize,
}

const GAUSS2: [f64; 2] = [-0.577_350_269_189_625_8, 0.577_350_269_189_625_8];

/// Gauss points per axis used for volume integrals.
pub const QUADRATURE_POINTS_PER_AXIS: usize = 2;

pub fn build_mesh(spec: &DomainSpec) -> Result<Mesh> {
    spec.validate()?;
    let dim = spec.dim();
    let cells = [spec.elements[0], if dim == 2 { spec.elements[1] } else { 1 }];
    let extent = [spec.extent[0], if dim == 2 { spec.extent[1] } else { 0.0 }];
    let spacing = [extent[0] / cells[0] as f64, if dim == 2 { extent[1] / cells[1] as f64 } else { 0.0 }];
    let nx = cells[0] + 1;
    let ny = if dim == 2 { cells[1] + 1 } else { 1 };

    let mut nodes = Vec::with_capacity(nx * ny);
    let mut node_sides = Vec::with_capacity(nx * ny);
    for iy in 0..ny {
        for ix in 0..nx {
            let x = ix as f64 * spacing[0];
            let y = iy as f64 * spacing[1];
            nodes.push([x, y]);
            let mut tag = 0u8;
            if ix == 0 {
                tag |= Side::Left.bit();
            }
            if ix == nx - 1 {
                tag |= Side::Right.bit();
            }
            if dim == 2 {
                if iy == 0 {
                    tag |= Side::Bottom.bit();
                }
                if iy == ny - 1 {
                    tag |= Side::Top.bit();
                }
            }
            node_sides.push(tag);
        }
    }

    let elements: Vec<[usize; 4]> = if dim == 1 {
        (0..cells[0]).map(|e| [e, e + 1, 0, 0]).collect()
    } else {
        let mut v = Vec::with_capacity(cells[0] * cells[1]);
        for ey in 0..cells[1] {
            for ex in 0..cells[0] {
                let n0 = ey * nx + ex;
                v.push([n0, n0 + 1, n0 + 1 + nx, n0 + nx]);
            }
        }
        v
    };

    let clamped = spec.clamped.iter().fold(0u8, |m, s| m | s.bit());
    let mut constrained = vec![false; nodes.len() * dim];
    for (n, &tag) in node_sides.iter().enumerate() {
        if tag & clamped != 0 {
            for c in 0..dim {
                constrained[n * dim + c] = true;
            }
        }
    }
    let free_dofs = (0..constrained.len()).filter(|&i| !constrained[i]).collect();

    let quad = reference_quadrature(dim, spacing);
    let nen = if dim == 1 { 2 } else { 4 };
    let bandwidth = elements
        .iter()
        .map(|el| {
            let lo = el[..nen].iter().min().unwrap() * dim;
            let hi = el[..nen].iter().max().unwrap() * dim + dim - 1;
            hi - lo
        })
        .max()
        .unwrap_or(0);

    Ok(Mesh {
        dim,
        extent,
        cells,
        spacing,
        nodes,
        elements,
        node_sides,
        clamped,
        constrained,
        free_dofs,
        quad,
        bandwidth,
    })
}

fn reference_quadrature(dim: usize, h: [f64; 2]) -> Vec<QuadPoint> {
    let mut out = Vec::new();
    if dim == 1 {
        for &xi in &GAUSS2 {
            let shape = [(1.0 - xi) / 2.0, (1.0 + xi) / 2.0, 0.0, 0.0];
            let dn = [-1.0 / h[0], 1.0 / h[0]];
            let mut unit_strain = [Sym::default(); 8];
            for a in 0..2 {
                unit_strain[a] = Sym::scalar(dn[a]);
            }
            out.push(QuadPoint { shape, unit_strain, weight: h[0] / 2.0 });
        }
    } else {
        // counterclockwise nodes: (-1,-1), (1,-1), (1,1), (-1,1)
        let sx = [-1.0, 1.0, 1.0, -1.0];
        let sy = [-1.0, -1.0, 1.0, 1.0];
        for &eta in &GAUSS2 {
            for &xi in &GAUSS2 {
                let mut shape = [0.0; 4];
                let mut unit_strain = [Sym::default(); 8];
                for a in 0..4 {
                    shape[a] = 0.25 * (1.0 + sx[a] * xi) * (1.0 + sy[a] * eta);
                    let dx = 0.25 * sx[a] * (1.0 + sy[a] * eta) * 2.0 / h[0];
                    let dy = 0.25 * sy[a] * (1.0 + sx[a] * xi) * 2.0 / h[1];
                    unit_strain[2 * a] = Sym { xx: dx, yy: 0.0, xy: 0.5 * dy };
                    unit_strain[2 * a + 1] = Sym { xx: 0.0, yy: dy, xy: 0.5 * dx };
                }
                out.push(QuadPoint { shape, unit_strain, weight: h[0] * h[1] / 4.0 });
            }
        }
    }
    out
}

impl Mesh {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn dof_count(&self) -> usize {
        self.nodes.len() * self.dim
    }

    pub fn element_count(&self) -> usize {
        self.elements.len()
    }

    /// Element counts per axis (the second entry is 1 in 1D).
    pub fn cells(&self) -> [usize; 2] {
        self.cells
    }

    pub fn extent(&self) -> [f64; 2] {
        self.extent
    }

    pub fn spacing(&self) -> [f64; 2] {
        self.spacing
    }

    pub fn nodes_per_element(&self) -> usize {
        if self.dim == 1 {
            2
        } else {
            4
        }
    }

    pub fn element_nodes(&self, e: usize) -> &[usize] {
        &self.elements[e][..self.nodes_per_element()]
    }

    pub fn quadrature_points_per_element(&self) -> usize {
        self.quad.len()
    }

    pub fn is_constrained(&self, dof: usize) -> bool {
        self.constrained[dof]
    }

    pub fn free_dofs(&self) -> &[usize] {
        &self.free_dofs
    }

    pub fn node_on(&self, node: usize, side: Side) -> bool {
        self.node_sides[node] & side.bit() != 0
    }

    pub fn node_is_clamped(&self, node: usize) -> bool {
        self.node_sides[node] & self.clamped != 0
    }

    /// Nodes lying on at least one traction side.
    pub fn node_on_traction(&self, node: usize) -> bool {
        let all: u8 = Side::all(self.dim).iter().fold(0, |m, s| m | s.bit());
        self.node_sides[node] & (all & !self.clamped) != 0
    }

    /// Global node index of grid position `(ix, iy)`.
    pub fn node_at(&self, ix: usize, iy: usize) -> usize {
        iy * (self.cells[0] + 1) + ix
    }

    fn element_dofs(&self, e: usize) -> ([usize; 8], usize) {
        let mut dofs = [0usize; 8];
        let nen = self.nodes_per_element();
        for (a, &n) in self.elements[e][..nen].iter().enumerate() {
            for c in 0..self.dim {
                dofs[a * self.dim + c] = n * self.dim + c;
            }
        }
        (dofs, nen * self.dim)
    }

    /// Physical coordinates of quadrature point `q` of element `e`.
    pub fn quadrature_point(&self, e: usize, q: usize) -> [f64; 2] {
        let qp = &self.quad[q];
        let mut x = [0.0; 2];
        for (a, &n) in self.element_nodes(e).iter().enumerate() {
            x[0] += qp.shape[a] * self.nodes[n][0];
            x[1] += qp.shape[a] * self.nodes[n][1];
        }
        x
    }

    fn interpolate_nodal(&self, e: usize, q: usize, field: &[f64]) -> f64 {
        let qp = &self.quad[q];
        self.element_nodes(e).iter().enumerate().map(|(a, &n)| qp.shape[a] * field[n]).sum()
    }

    fn strain_at(&self, e: usize, q: usize, u: &[f64]) -> Sym {
        let (dofs, nd) = self.element_dofs(e);
        let qp = &self.quad[q];
        let mut s = Sym::default();
        for k in 0..nd {
            let v = u[dofs[k]];
            s.xx += qp.unit_strain[k].xx * v;
            s.yy += qp.unit_strain[k].yy * v;
            s.xy += qp.unit_strain[k].xy * v;
        }
        s
    }

    /// Scalar consistent mass matrix over nodes.
    pub fn mass_matrix(&self) -> SymBand {
        let mut m = SymBand::zeros(self.node_count(), self.bandwidth / self.dim + 1);
        for e in 0..self.element_count() {
            let nodes = self.element_nodes(e);
            for qp in &self.quad {
                for (a, &na) in nodes.iter().enumerate() {
                    for (b, &nb) in nodes.iter().enumerate() {
                        if nb <= na {
                            m.add(na, nb, qp.weight * qp.shape[a] * qp.shape[b]);
                        }
                    }
                }
            }
        }
        m
    }

    /// Applies the consistent mass matrix componentwise to a dof vector.
    pub fn mass_apply(&self, mass: &SymBand, v: &[f64]) -> Vec<f64> {
        let dim = self.dim;
        let mut out = vec![0.0; v.len()];
        for c in 0..dim {
            let comp: Vec<f64> = (0..self.node_count()).map(|n| v[n * dim + c]).collect();
            let mc = mass.matvec(&comp);
            for n in 0..self.node_count() {
                out[n * dim + c] = mc[n];
            }
        }
        out
    }
}

/// Checks `0 <= d <= ω1` nodewise.
pub fn check_damage_slice(mat: &MaterialModel, d: &[f64]) -> Result<()> {
    const SLACK: f64 = 1e-12;
    if let Some((j, &v)) = d
        .iter()
        .enumerate()
        .find(|(_, &v)| !(v >= -SLACK && v <= mat.omega1 + SLACK))
    {
        return Err(Error::Domain(format!(
            "damage {v} at node {j} outside [0, {}]; coercivity is lost",
            mat.omega1
        )));
    }
    Ok(())
}

/// Assembled stiffness `K(d)` over all dofs (before eliminating clamped dofs).
#[derive(Debug, Clone)]
pub struct StiffnessMatrix {
    full: SymBand,
}

impl StiffnessMatrix {
    pub fn full(&self) -> &SymBand {
        &self.full
    }

    /// Free-dof block `K_ff`.
    pub fn reduced(&self, mesh: &Mesh) -> SymBand {
        self.full.restrict(mesh.free_dofs())
    }
}

/// Assembles `∫ w(x) 𝔼ε(u):ε(v)` for a nodal weight field `w`.
fn assemble_weighted(mesh: &Mesh, mat: &MaterialModel, weight: &[f64]) -> SymBand {
    let mut k = SymBand::zeros(mesh.dof_count(), mesh.bandwidth);
    for e in 0..mesh.element_count() {
        let (dofs, nd) = mesh.element_dofs(e);
        let scale = mat.modulus_multiplier(e);
        for (q, qp) in mesh.quad.iter().enumerate() {
            let w = qp.weight * scale * mesh.interpolate_nodal(e, q, weight);
            if w == 0.0 {
                continue;
            }
            for b in 0..nd {
                let sb = mat.elasticity.stress(&qp.unit_strain[b]);
                for a in 0..nd {
                    if dofs[a] >= dofs[b] {
                        k.add(dofs[a], dofs[b], w * sb.ddot(&qp.unit_strain[a]));
                    }
                }
            }
        }
    }
    k
}

/// Damage-degraded stiffness `∫(1 − d)𝔼ε(u):ε(v)`.
pub fn assemble_stiffness(mesh: &Mesh, mat: &MaterialModel, d: &[f64]) -> Result<StiffnessMatrix> {
    if d.len() != mesh.node_count() {
        return Err(Error::Shape(format!("damage has {} entries, mesh has {} nodes", d.len(), mesh.node_count())));
    }
    check_damage_slice(mat, d)?;
    let intact: Vec<f64> = d.iter().map(|v| 1.0 - v).collect();
    Ok(StiffnessMatrix { full: assemble_weighted(mesh, mat, &intact) })
}

/// Nodal samples of body force and boundary traction on the time grid.
///
/// Both are stored per time point as dof vectors; traction entries must
/// vanish away from the traction boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadSet {
    pub body: Vec<Vec<f64>>,
    pub traction: Vec<Vec<f64>>,
}

impl LoadSet {
    pub fn zero(mesh: &Mesh, times: usize) -> Self {
        Self { body: vec![vec![0.0; mesh.dof_count()]; times], traction: vec![vec![0.0; mesh.dof_count()]; times] }
    }

    /// Samples analytic fields `f(t, x)` and `τ(t, x)` at the nodes; the traction is
    /// only sampled on the traction boundary.
    pub fn from_fn(
        mesh: &Mesh,
        times: &[f64],
        body: impl Fn(f64, [f64; 2]) -> [f64; 2],
        traction: impl Fn(f64, [f64; 2]) -> [f64; 2],
    ) -> Self {
        let dim = mesh.dim();
        let sample = |t: f64, f: &dyn Fn(f64, [f64; 2]) -> [f64; 2], on_boundary: bool| {
            let mut v = vec![0.0; mesh.dof_count()];
            for (n, &x) in mesh.nodes().iter().enumerate() {
                if on_boundary && !mesh.node_on_traction(n) {
                    continue;
                }
                let val = f(t, x);
                for c in 0..dim {
                    v[n * dim + c] = val[c];
                }
            }
            v
        };
        Self {
            body: times.iter().map(|&t| sample(t, &body, false)).collect(),
            traction: times.iter().map(|&t| sample(t, &traction, true)).collect(),
        }
    }

    pub fn times(&self) -> usize {
        self.body.len()
    }

    pub fn validate(&self, mesh: &Mesh, times: usize) -> Result<()> {
        if self.body.len() != times || self.traction.len() != times {
            return Err(Error::Shape(format!(
                "loads defined at {}/{} time points, grid has {times}",
                self.body.len(),
                self.traction.len()
            )));
        }
        for (m, (b, t)) in self.body.iter().zip(&self.traction).enumerate() {
            if b.len() != mesh.dof_count() || t.len() != mesh.dof_count() {
                return Err(Error::Shape(format!("load slice {m} has wrong length")));
            }
            for n in 0..mesh.node_count() {
                if !mesh.node_on_traction(n) && (0..mesh.dim()).any(|c| t[n * mesh.dim() + c] != 0.0) {
                    return Err(Error::Config(format!(
                        "traction at time index {m} is nonzero at node {n}, which is not on the traction boundary"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Right-hand side `⟨f, v⟩ + ⟨τ, v⟩_{Γ1}` at time index `m`, over all dofs.
    pub fn load_vector(&self, mesh: &Mesh, mass: &SymBand, m: usize) -> Vec<f64> {
        let mut rhs = mesh.mass_apply(mass, &self.body[m]);
        let tau = &self.traction[m];
        let dim = mesh.dim();
        if dim == 1 {
            for (n, r) in rhs.iter_mut().enumerate() {
                if mesh.node_on_traction(n) {
                    *r += tau[n];
                }
            }
        } else {
            let [cx, cy] = mesh.cells();
            let [hx, hy] = mesh.spacing();
            let all_edges = [
                (Side::Bottom, (0..cx).map(|i| (mesh.node_at(i, 0), mesh.node_at(i + 1, 0))).collect::<Vec<_>>(), hx),
                (Side::Top, (0..cx).map(|i| (mesh.node_at(i, cy), mesh.node_at(i + 1, cy))).collect(), hx),
                (Side::Left, (0..cy).map(|j| (mesh.node_at(0, j), mesh.node_at(0, j + 1))).collect(), hy),
                (Side::Right, (0..cy).map(|j| (mesh.node_at(cx, j), mesh.node_at(cx, j + 1))).collect(), hy),
            ];
            for (side, edges, h) in all_edges {
                if mesh.clamped & side.bit() != 0 {
                    continue;
                }
                for (a, b) in edges {
                    for c in 0..2 {
                        let (ta, tb) = (tau[a * 2 + c], tau[b * 2 + c]);
                        rhs[a * 2 + c] += h / 6.0 * (2.0 * ta + tb);
                        rhs[b * 2 + c] += h / 6.0 * (ta + 2.0 * tb);
                    }
                }
            }
        }
        rhs
    }
}

/// Nodal displacement vector at one time, zero on clamped dofs.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    pub values: Vec<f64>,
}

/// Factorized `K(d)` for one damage slice; reusable for many right-hand sides.
#[derive(Debug, Clone)]
pub struct Equilibrium {
    stiffness: StiffnessMatrix,
    factor: BandCholesky,
}

impl Equilibrium {
    pub fn new(mesh: &Mesh, mat: &MaterialModel, d: &[f64]) -> Result<Self> {
        let stiffness = assemble_stiffness(mesh, mat, d)?;
        let factor = stiffness.reduced(mesh).cholesky().map_err(|e| {
            Error::Numerical(format!("stiffness factorization failed ({e}); damage range [{:.3e}, {:.3e}]",
                d.iter().cloned().fold(f64::INFINITY, f64::min),
                d.iter().cloned().fold(f64::NEG_INFINITY, f64::max)))
        })?;
        Ok(Self { stiffness, factor })
    }

    pub fn stiffness(&self) -> &StiffnessMatrix {
        &self.stiffness
    }

    /// Solves `K_ff u_f = rhs_f` and returns the full dof vector (zero on clamped dofs).
    /// Entries of `rhs` on clamped dofs are ignored.
    pub fn solve(&self, mesh: &Mesh, rhs: &[f64]) -> Vec<f64> {
        let free = mesh.free_dofs();
        let mut b: Vec<f64> = free.iter().map(|&i| rhs[i]).collect();
        self.factor.solve_in_place(&mut b);
        let mut u = vec![0.0; mesh.dof_count()];
        for (k, &i) in free.iter().enumerate() {
            u[i] = b[k];
        }
        u
    }

    /// Relative residual `‖K_ff u_f − b_f‖ / ‖b_f‖` (0 for zero right-hand sides).
    pub fn relative_residual(&self, mesh: &Mesh, u: &[f64], rhs: &[f64]) -> f64 {
        let ku = self.stiffness.full.matvec(u);
        let (mut num, mut den) = (0.0f64, 0.0f64);
        for &i in mesh.free_dofs() {
            num += (ku[i] - rhs[i]).powi(2);
            den += rhs[i].powi(2);
        }
        if den == 0.0 {
            num.sqrt()
        } else {
            (num / den).sqrt()
        }
    }
}

/// Solves the equilibrium problem for one damage slice and one load vector.
pub fn solve_equilibrium(mesh: &Mesh, mat: &MaterialModel, d: &[f64], rhs: &[f64]) -> Result<DisplacementField> {
    let eq = Equilibrium::new(mesh, mat, d)?;
    let u = eq.solve(mesh, rhs);
    let res = eq.relative_residual(mesh, &u, rhs);
    if !(res <= 1e-10) {
        return Err(Error::Numerical(format!("equilibrium residual {res:.3e} after direct solve")));
    }
    Ok(DisplacementField { values: u })
}

/// Strain and stress at one quadrature point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrainStress {
    pub element: usize,
    pub point: [f64; 2],
    pub strain: Sym,
    pub stress: Sym,
}

pub fn strain_stress(mesh: &Mesh, mat: &MaterialModel, d: &[f64], u: &[f64]) -> Result<Vec<StrainStress>> {
    if u.len() != mesh.dof_count() || d.len() != mesh.node_count() {
        return Err(Error::Shape("displacement or damage length does not match the mesh".into()));
    }
    let mut out = Vec::with_capacity(mesh.element_count() * mesh.quad.len());
    for e in 0..mesh.element_count() {
        for q in 0..mesh.quad.len() {
            let eps = mesh.strain_at(e, q, u);
            let dq = mesh.interpolate_nodal(e, q, d);
            let sigma = mat.elasticity.stress(&eps).scaled((1.0 - dq) * mat.modulus_multiplier(e));
            out.push(StrainStress { element: e, point: mesh.quadrature_point(e, q), strain: eps, stress: sigma });
        }
    }
    Ok(out)
}

/// `K_w u = ∫ w 𝔼ε(u):ε(·)` as a dof vector, for a nodal weight `w`.
pub fn weighted_stiffness_apply(mesh: &Mesh, mat: &MaterialModel, weight: &[f64], u: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; mesh.dof_count()];
    for e in 0..mesh.element_count() {
        let (dofs, nd) = mesh.element_dofs(e);
        let scale = mat.modulus_multiplier(e);
        for (q, qp) in mesh.quad.iter().enumerate() {
            let w = qp.weight * scale * mesh.interpolate_nodal(e, q, weight);
            if w == 0.0 {
                continue;
            }
            let sig = mat.elasticity.stress(&mesh.strain_at(e, q, u));
            for a in 0..nd {
                out[dofs[a]] += w * sig.ddot(&qp.unit_strain[a]);
            }
        }
    }
    out
}

/// Nodal pairing `e_j = ∫ φ_j 𝔼ε(u):ε(v)`; the transpose of `w ↦ ⟨K_w u, v⟩`.
pub fn energy_pairing(mesh: &Mesh, mat: &MaterialModel, u: &[f64], v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; mesh.node_count()];
    for e in 0..mesh.element_count() {
        let scale = mat.modulus_multiplier(e);
        for (q, qp) in mesh.quad.iter().enumerate() {
            let val = qp.weight * scale * mat.elasticity.stress(&mesh.strain_at(e, q, u)).ddot(&mesh.strain_at(e, q, v));
            for (a, &n) in mesh.element_nodes(e).iter().enumerate() {
                out[n] += qp.shape[a] * val;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn bar(elements: usize) -> (Mesh, MaterialModel) {
        (build_mesh(&DomainSpec::interval(1.0, elements)).unwrap(), MaterialModel::bar(1.0))
    }

    fn point_traction(mesh: &Mesh, tau: f64) -> Vec<f64> {
        let mut rhs = vec![0.0; mesh.dof_count()];
        *rhs.last_mut().unwrap() = tau;
        rhs
    }

    #[test]
    fn interval_mesh_layout() {
        let (mesh, _) = bar(2);
        let xs: Vec<f64> = mesh.nodes().iter().map(|x| x[0]).collect();
        assert_eq!(xs, vec![0.0, 0.5, 1.0]);
        assert!(mesh.node_is_clamped(0));
        assert!(mesh.node_on_traction(2) && !mesh.node_on_traction(1));
        assert_eq!(mesh.free_dofs(), &[1, 2]);
    }

    #[test]
    fn rectangle_mesh_counts() {
        let mesh = build_mesh(&DomainSpec::rectangle(1.0, 1.0, 2, 2)).unwrap();
        assert_eq!(mesh.node_count(), 9);
        assert_eq!(mesh.element_count(), 4);
        assert_eq!(mesh.node_at(2, 1), 5);
        assert_eq!(mesh.nodes()[5], [1.0, 0.5]);
    }

    #[test]
    fn invalid_domains_are_rejected() {
        assert!(matches!(build_mesh(&DomainSpec::interval(1.0, 0)), Err(Error::Config(_))));
        let mut all_clamped = DomainSpec::interval(1.0, 4);
        all_clamped.clamped = vec![Side::Left, Side::Right];
        assert!(build_mesh(&all_clamped).is_err());
        let mut none = DomainSpec::interval(1.0, 4);
        none.clamped.clear();
        assert!(build_mesh(&none).is_err());
        let mut bad_side = DomainSpec::interval(1.0, 4);
        bad_side.clamped = vec![Side::Top];
        assert!(build_mesh(&bad_side).is_err());
    }

    #[test]
    fn two_element_bar_stiffness() {
        let (mesh, mat) = bar(2);
        let k = assemble_stiffness(&mesh, &mat, &[0.0; 3]).unwrap().full().to_dense();
        let expected = [[2.0, -2.0, 0.0], [-2.0, 4.0, -2.0], [0.0, -2.0, 2.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(k[(i, j)], expected[i][j], epsilon = 1e-14);
            }
        }
        let half = assemble_stiffness(&mesh, &mat, &[0.5; 3]).unwrap().full().to_dense();
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(half[(i, j)], expected[i][j] / 2.0, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn damage_above_bound_is_a_domain_error() {
        let (mesh, mat) = bar(2);
        let d = [mat.omega1 + 0.1; 3];
        assert!(matches!(assemble_stiffness(&mesh, &mat, &d), Err(Error::Domain(_))));
        assert!(matches!(assemble_stiffness(&mesh, &mat, &[-0.1, 0.0, 0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn constant_stress_bar() {
        let (mesh, mat) = bar(8);
        let rhs = point_traction(&mesh, 1.0);
        let u = solve_equilibrium(&mesh, &mat, &[0.0; 9], &rhs).unwrap();
        for (n, x) in mesh.nodes().iter().enumerate() {
            assert_abs_diff_eq!(u.values[n], x[0], epsilon = 1e-13);
        }
        let u = solve_equilibrium(&mesh, &mat, &[0.5; 9], &rhs).unwrap();
        for (n, x) in mesh.nodes().iter().enumerate() {
            assert_abs_diff_eq!(u.values[n], 2.0 * x[0], epsilon = 1e-13);
        }
    }

    #[test]
    fn body_force_bar_is_nodally_exact() {
        let (mesh, mat) = bar(10);
        let loads = LoadSet::from_fn(&mesh, &[0.0], |_, _| [1.0, 0.0], |_, _| [0.0, 0.0]);
        let rhs = loads.load_vector(&mesh, &mesh.mass_matrix(), 0);
        let u = solve_equilibrium(&mesh, &mat, &[0.0; 11], &rhs).unwrap();
        // dense oracle on the reduced system
        let k = assemble_stiffness(&mesh, &mat, &[0.0; 11]).unwrap().reduced(&mesh).to_dense();
        let b = nalgebra::DVector::from_iterator(10, mesh.free_dofs().iter().map(|&i| rhs[i]));
        let ud = k.lu().solve(&b).unwrap();
        for (n, x) in mesh.nodes().iter().enumerate() {
            let x = x[0];
            assert_abs_diff_eq!(u.values[n], x - x * x / 2.0, epsilon = 1e-13);
            if n > 0 {
                assert_abs_diff_eq!(u.values[n], ud[n - 1], epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn strain_and_stress_of_linear_field() {
        let (mesh, mat) = bar(4);
        let u: Vec<f64> = mesh.nodes().iter().map(|x| x[0]).collect();
        for s in strain_stress(&mesh, &mat, &[0.0; 5], &u).unwrap() {
            assert_abs_diff_eq!(s.strain.xx, 1.0, epsilon = 1e-14);
            assert_abs_diff_eq!(s.stress.xx, 1.0, epsilon = 1e-14);
        }
        for s in strain_stress(&mesh, &mat, &[0.5; 5], &u).unwrap() {
            assert_abs_diff_eq!(s.stress.xx, 0.5, epsilon = 1e-14);
        }
        for s in strain_stress(&mesh, &mat, &[0.5; 5], &[0.0; 5]).unwrap() {
            assert_eq!(s.strain, Sym::default());
            assert_eq!(s.stress, Sym::default());
        }
    }

    #[test]
    fn rectangle_uniaxial_tension() {
        let mut spec = DomainSpec::rectangle(2.0, 1.0, 4, 2);
        spec.clamped = vec![Side::Left, Side::Bottom, Side::Top];
        let mesh = build_mesh(&spec).unwrap();
        let mat = MaterialModel::isotropic(1.0, 1.0);
        let d = vec![0.1; mesh.node_count()];
        let k = assemble_stiffness(&mesh, &mat, &d).unwrap();
        let dense = k.full().to_dense();
        assert!((dense.clone() - dense.transpose()).abs().max() <= 1e-14);
        let loads = LoadSet::from_fn(&mesh, &[0.0], |_, _| [0.0, 0.0], |_, x| if x[0] == 2.0 { [1.0, 0.0] } else { [0.0, 0.0] });
        loads.validate(&mesh, 1).unwrap();
        let rhs = loads.load_vector(&mesh, &mesh.mass_matrix(), 0);
        // total applied force equals traction times edge length
        let fx: f64 = (0..mesh.node_count()).map(|n| rhs[2 * n]).sum();
        assert_abs_diff_eq!(fx, 1.0, epsilon = 1e-14);
        let u = solve_equilibrium(&mesh, &mat, &d, &rhs).unwrap();
        let right = mesh.node_at(4, 1);
        assert!(u.values[2 * right] > 0.0);
    }

    #[test]
    fn traction_off_boundary_is_rejected() {
        let mesh = build_mesh(&DomainSpec::interval(1.0, 2)).unwrap();
        let mut loads = LoadSet::zero(&mesh, 1);
        loads.traction[0][1] = 1.0;
        assert!(loads.validate(&mesh, 1).is_err());
    }

    #[test]
    fn energy_pairing_is_transpose_of_weighted_apply() {
        let mesh = build_mesh(&DomainSpec::rectangle(1.0, 1.0, 3, 2)).unwrap();
        let mat = MaterialModel::isotropic(0.5, 1.0);
        let n = mesh.dof_count();
        let u: Vec<f64> = (0..n).map(|i| ((i * 7 % 11) as f64 * 0.37).sin()).collect();
        let v: Vec<f64> = (0..n).map(|i| ((i * 5 % 13) as f64 * 0.21).cos()).collect();
        let w: Vec<f64> = (0..mesh.node_count()).map(|i| 0.1 + 0.05 * i as f64).collect();
        let lhs = crate::linalg::dot(&weighted_stiffness_apply(&mesh, &mat, &w, &u), &v);
        let rhs = crate::linalg::dot(&w, &energy_pairing(&mesh, &mat, &u, &v));
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12 * lhs.abs().max(1.0));
    }
}
