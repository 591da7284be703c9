//! Lagrange finite element spaces on the curved geometry: dof management,
//! interpolation, mass/stiffness assembly, sparse direct solves and the
//! nodal lift between time levels.
//!
//! Scalar dofs are keyed by mesh entities (vertices, plus edge midpoints
//! for order 2); vector fields use the interleaved layout
//! `coeff[3*dof + component]`. Assembly walks elements in order and is
//! single-threaded, so repeated assembly of identical input is bitwise
//! identical.

use crate::geometry::{
    self, basis_gradients, basis_size, basis_values, element_dofs, CurvedGeometry,
};
use crate::mesh::LinearSurfaceMesh;
use crate::vec3::{self, Vec3};
use crate::{Error, Result};

use faer::sparse::{SparseColMat, Triplet};

// ---------------------------------------------------------------------
// Spaces
// ---------------------------------------------------------------------

/// Scalar or vector Lagrange space of order 1 or 2 on the reference mesh.
#[derive(Debug, Clone, Copy)]
pub struct FESpace<'m> {
    pub mesh: &'m LinearSurfaceMesh,
    pub order: u8,
    pub components: usize,
}

impl<'m> FESpace<'m> {
    pub fn scalar(mesh: &'m LinearSurfaceMesh, order: u8) -> Self {
        Self { mesh, order, components: 1 }
    }

    pub fn vector(mesh: &'m LinearSurfaceMesh, order: u8) -> Self {
        Self { mesh, order, components: 3 }
    }

    /// Scalar dofs (V for order 1, V + E for order 2).
    pub fn num_scalar_dofs(&self) -> usize {
        geometry::dof_count(self.mesh, self.order)
    }

    pub fn num_dofs(&self) -> usize {
        self.num_scalar_dofs() * self.components
    }

    /// Positions of the Lagrange nodes on the given curved geometry.
    pub fn node_positions(&self, geom: &CurvedGeometry) -> Vec<Vec3> {
        let nv = self.mesh.num_vertices();
        match (self.order, geom.order()) {
            (o, k) if o == k => geom.coords().to_vec(),
            (1, 2) => geom.coords()[..nv].to_vec(),
            (2, 1) => {
                let mut nodes = geom.coords().to_vec();
                for &(a, b) in self.mesh.edges() {
                    nodes.push(vec3::scale(0.5, vec3::add(geom.coords()[a], geom.coords()[b])));
                }
                nodes
            }
            (o, k) => panic!("unsupported space order {o} on geometry order {k}"),
        }
    }

    /// Nodal interpolation of an analytic function; exact at the nodes by
    /// the Lagrange property.
    pub fn interpolate(&self, geom: &CurvedGeometry, f: impl Fn(Vec3) -> f64) -> Vec<f64> {
        assert_eq!(self.components, 1);
        self.node_positions(geom).iter().map(|&x| f(x)).collect()
    }

    pub fn interpolate_vector(&self, geom: &CurvedGeometry, f: impl Fn(Vec3) -> Vec3) -> Vec<f64> {
        assert_eq!(self.components, 3);
        let mut out = Vec::with_capacity(self.num_dofs());
        for &x in &self.node_positions(geom) {
            out.extend_from_slice(&f(x));
        }
        out
    }
}

// ---------------------------------------------------------------------
// Sparse assembly containers
// ---------------------------------------------------------------------

/// Coordinate-format sparse matrix; the assembly artifact. Duplicate
/// entries are summed on conversion/solve.
#[derive(Debug, Clone)]
pub struct CooMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl CooMatrix {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, entries: Vec::new() }
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, val: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        if val != 0.0 {
            self.entries.push((row, col, val));
        }
    }

    /// y = A x.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        for &(r, c, v) in &self.entries {
            y[r] += v * x[c];
        }
        y
    }

    /// Summed, sorted (row-major) entry list; canonical form for
    /// comparisons.
    pub fn canonical_entries(&self) -> Vec<(usize, usize, f64)> {
        let mut sorted = self.entries.clone();
        sorted.sort_by_key(|&(r, c, _)| (r, c));
        let mut out: Vec<(usize, usize, f64)> = Vec::with_capacity(sorted.len());
        for (r, c, v) in sorted {
            match out.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => out.push((r, c, v)),
            }
        }
        out
    }

    /// Transposed copy.
    pub fn transposed(&self) -> CooMatrix {
        CooMatrix {
            nrows: self.ncols,
            ncols: self.nrows,
            entries: self.entries.iter().map(|&(r, c, v)| (c, r, v)).collect(),
        }
    }

    fn to_faer(&self) -> Result<SparseColMat<usize, f64>> {
        let triplets: Vec<Triplet<usize, usize, f64>> = self
            .entries
            .iter()
            .map(|&(r, c, v)| Triplet::new(r, c, v))
            .collect();
        SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &triplets)
            .map_err(|e| Error::Solver {
                system: "coo->csc".into(),
                reason: format!("{e:?}"),
            })
    }
}

/// Block layout descriptor of a monolithic system.
#[derive(Debug, Clone)]
pub struct BlockLayout {
    names: Vec<&'static str>,
    offsets: Vec<usize>,
}

impl BlockLayout {
    pub fn new(blocks: &[(&'static str, usize)]) -> Self {
        let mut offsets = vec![0];
        let mut names = Vec::new();
        for &(name, size) in blocks {
            names.push(name);
            offsets.push(offsets.last().unwrap() + size);
        }
        Self { names, offsets }
    }

    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn offset(&self, name: &str) -> usize {
        let i = self.names.iter().position(|n| *n == name).expect("unknown block");
        self.offsets[i]
    }

    pub fn range(&self, name: &str) -> std::ops::Range<usize> {
        let i = self.names.iter().position(|n| *n == name).expect("unknown block");
        self.offsets[i]..self.offsets[i + 1]
    }

    fn block_of(&self, row: usize) -> &'static str {
        for i in 0..self.names.len() {
            if row < self.offsets[i + 1] {
                return self.names[i];
            }
        }
        self.names[self.names.len() - 1]
    }
}

/// A ready-to-solve linear system with its unknown layout.
#[derive(Debug, Clone)]
pub struct AssembledSystem {
    pub matrix: CooMatrix,
    pub rhs: Vec<f64>,
    pub layout: BlockLayout,
}

// ---------------------------------------------------------------------
// Standard operators
// ---------------------------------------------------------------------

/// Scalar mass matrix; `1^T M 1` equals the surface area.
pub fn assemble_mass(space: &FESpace, geom: &CurvedGeometry) -> CooMatrix {
    assemble_weighted_mass(space, geom, |_, _| 1.0)
}

/// Scalar mass matrix with a pointwise coefficient `c(elem, qp)`.
pub fn assemble_weighted_mass(
    space: &FESpace,
    geom: &CurvedGeometry,
    coeff: impl Fn(usize, usize) -> f64,
) -> CooMatrix {
    assert_eq!(space.components, 1);
    let mesh = space.mesh;
    let n = space.num_scalar_dofs();
    let nloc = basis_size(space.order);
    let nqp = geom.rule().len();
    let mut coo = CooMatrix::new(n, n);
    for elem in 0..mesh.num_triangles() {
        let dofs = element_dofs(mesh, space.order, elem);
        let mut local = [[0.0; 6]; 6];
        for q in 0..nqp {
            let w = geom.weight(elem, q) * coeff(elem, q);
            let vals = basis_values(space.order, geom.rule().points[q]);
            for a in 0..nloc {
                for b in 0..nloc {
                    local[a][b] += w * vals[a] * vals[b];
                }
            }
        }
        for a in 0..nloc {
            for b in 0..nloc {
                coo.push(dofs[a], dofs[b], local[a][b]);
            }
        }
    }
    coo
}

/// Scalar stiffness (Laplace-Beltrami) matrix; constants span its kernel.
pub fn assemble_stiffness(space: &FESpace, geom: &CurvedGeometry) -> CooMatrix {
    assemble_weighted_stiffness(space, geom, |_, _| 1.0)
}

pub fn assemble_weighted_stiffness(
    space: &FESpace,
    geom: &CurvedGeometry,
    coeff: impl Fn(usize, usize) -> f64,
) -> CooMatrix {
    assert_eq!(space.components, 1);
    let mesh = space.mesh;
    let n = space.num_scalar_dofs();
    let nloc = basis_size(space.order);
    let nqp = geom.rule().len();
    let mut coo = CooMatrix::new(n, n);
    for elem in 0..mesh.num_triangles() {
        let dofs = element_dofs(mesh, space.order, elem);
        let mut local = [[0.0; 6]; 6];
        for q in 0..nqp {
            let w = geom.weight(elem, q) * coeff(elem, q);
            let grads = basis_gradients(space.order, geom.rule().points[q]);
            let frame = geom.frame(elem, q);
            let mut sg = [[0.0; 3]; 6];
            for a in 0..nloc {
                sg[a] = frame.surface_gradient(grads[a]);
            }
            for a in 0..nloc {
                for b in 0..nloc {
                    local[a][b] += w * vec3::dot(sg[a], sg[b]);
                }
            }
        }
        for a in 0..nloc {
            for b in 0..nloc {
                coo.push(dofs[a], dofs[b], local[a][b]);
            }
        }
    }
    coo
}

/// L2 inner product of two scalar coefficient vectors by quadrature.
pub fn scalar_l2_product(space: &FESpace, geom: &CurvedGeometry, a: &[f64], b: &[f64]) -> f64 {
    let mesh = space.mesh;
    let nqp = geom.rule().len();
    let mut s = 0.0;
    for elem in 0..mesh.num_triangles() {
        for q in 0..nqp {
            let w = geom.weight(elem, q);
            let fa = geometry::eval_scalar(mesh, geom, a, space.order, elem, q);
            let fb = geometry::eval_scalar(mesh, geom, b, space.order, elem, q);
            s += w * fa * fb;
        }
    }
    s
}

/// L2 norm of a scalar field.
pub fn scalar_l2_norm(space: &FESpace, geom: &CurvedGeometry, a: &[f64]) -> f64 {
    scalar_l2_product(space, geom, a, a).sqrt()
}

/// L2 norm of an interleaved vector field.
pub fn vector_l2_norm(space: &FESpace, geom: &CurvedGeometry, a: &[f64]) -> f64 {
    let mesh = space.mesh;
    let nqp = geom.rule().len();
    let mut s = 0.0;
    for elem in 0..mesh.num_triangles() {
        for q in 0..nqp {
            let w = geom.weight(elem, q);
            let v = geometry::eval_vector(mesh, geom, a, space.order, elem, q);
            s += w * vec3::dot(v, v);
        }
    }
    s.sqrt()
}

/// Integral of a scalar field over the surface.
pub fn scalar_integral(space: &FESpace, geom: &CurvedGeometry, a: &[f64]) -> f64 {
    let mesh = space.mesh;
    let nqp = geom.rule().len();
    let mut s = 0.0;
    for elem in 0..mesh.num_triangles() {
        for q in 0..nqp {
            s += geom.weight(elem, q) * geometry::eval_scalar(mesh, geom, a, space.order, elem, q);
        }
    }
    s
}

/// Area-weighted mean of a scalar field.
pub fn scalar_mean(space: &FESpace, geom: &CurvedGeometry, a: &[f64]) -> f64 {
    scalar_integral(space, geom, a) / geom.area()
}

// ---------------------------------------------------------------------
// Sparse direct solve
// ---------------------------------------------------------------------

fn set_sequential() {
    use std::sync::Once;
    static ONCE: Once = Once::new();
    ONCE.call_once(|| {
        faer::set_global_parallelism(faer::Par::Seq);
    });
}

/// Sparse LU solve with a residual contract of
/// `||Ax - b|| <= 1e-10 (||b|| + 1)`; deterministic for identical input.
pub fn solve_linear(system: &AssembledSystem) -> Result<Vec<f64>> {
    set_sequential();
    let n = system.layout.total();
    if system.matrix.nrows != n || system.rhs.len() != n {
        return Err(Error::Solver {
            system: "layout".into(),
            reason: format!(
                "matrix {}x{}, rhs {}, layout {}",
                system.matrix.nrows, system.matrix.ncols, system.rhs.len(), n
            ),
        });
    }
    let mat = system.matrix.to_faer()?;
    // The factorization panics on exactly singular input; report it as a
    // solver error instead.
    let solved = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
        let lu = mat.sp_lu().map_err(|e| format!("{e:?}"))?;
        let mut col = faer::Mat::<f64>::zeros(n, 1);
        for i in 0..n {
            col[(i, 0)] = system.rhs[i];
        }
        let sol = faer::linalg::solvers::Solve::solve(&lu, &col);
        Ok::<Vec<f64>, String>((0..n).map(|i| sol[(i, 0)]).collect())
    }));
    let x = match solved {
        Ok(Ok(x)) => x,
        Ok(Err(e)) => {
            return Err(Error::Solver {
                system: describe_layout(&system.layout),
                reason: format!("LU factorization failed: {e}"),
            })
        }
        Err(_) => {
            return Err(Error::Solver {
                system: describe_layout(&system.layout),
                reason: "LU factorization failed: singular matrix".into(),
            })
        }
    };

    // Residual contract, reported per unknown block on failure.
    let ax = system.matrix.apply(&x);
    let bnorm = system.rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut rnorm2 = 0.0;
    let mut worst = (0usize, 0.0f64);
    for i in 0..n {
        let r = ax[i] - system.rhs[i];
        rnorm2 += r * r;
        if r.abs() > worst.1 {
            worst = (i, r.abs());
        }
    }
    let rnorm = rnorm2.sqrt();
    if !(rnorm <= 1e-10 * (bnorm + 1.0)) {
        return Err(Error::Solver {
            system: describe_layout(&system.layout),
            reason: format!(
                "residual {rnorm:.3e} exceeds contract (|b| = {bnorm:.3e}); worst row {} in block '{}'",
                worst.0,
                system.layout.block_of(worst.0)
            ),
        });
    }
    Ok(x)
}

fn describe_layout(layout: &BlockLayout) -> String {
    layout.names.join("+")
}

// ---------------------------------------------------------------------
// Field state and lifting
// ---------------------------------------------------------------------

/// All discrete unknowns at one time level. Scalar fields are P2 except
/// the P1 pressure; vector fields are interleaved P2.
#[derive(Debug, Clone)]
pub struct FieldState {
    pub t: f64,
    /// Parametrization nodes of the curved surface (geometry dofs).
    pub x: Vec<Vec3>,
    /// Material velocity.
    pub u: Vec<f64>,
    /// Pressure (P1, zero mean gauge).
    pub p: Vec<f64>,
    /// Phase field (unconstrained in value).
    pub phi: Vec<f64>,
    /// Chemical potential.
    pub mu: Vec<f64>,
    /// Mean-curvature field (distinct from the geometric curvature).
    pub h: Vec<f64>,
    /// Last surface update X^n - X^{n-1}.
    pub y: Vec<f64>,
    /// Relative material velocity (transport field for the next step).
    pub w: Vec<f64>,
}

impl FieldState {
    /// Zero-initialized state over a curved geometry.
    pub fn zeros(mesh: &LinearSurfaceMesh, geom: &CurvedGeometry) -> Self {
        let n2 = geometry::dof_count(mesh, 2);
        let n1 = mesh.num_vertices();
        Self {
            t: 0.0,
            x: geom.coords().to_vec(),
            u: vec![0.0; 3 * n2],
            p: vec![0.0; n1],
            phi: vec![0.0; n2],
            mu: vec![0.0; n2],
            h: vec![0.0; n2],
            y: vec![0.0; 3 * n2],
            w: vec![0.0; 3 * n2],
        }
    }
}

/// Nodal lift onto a new parametrization: coefficients are reinterpreted
/// on the new surface unchanged.
pub fn lift_fields(state: &FieldState, new_x: Vec<Vec3>) -> Result<FieldState> {
    if new_x.len() != state.x.len() {
        return Err(Error::ConnectivityMismatch(format!(
            "lift: {} nodes vs {}",
            new_x.len(),
            state.x.len()
        )));
    }
    let mut lifted = state.clone();
    lifted.x = new_x;
    Ok(lifted)
}
