//! Order-k isoparametric surface geometry over the reference mesh.
//!
//! The curved surface is the image of an order-1 or order-2 vector
//! Lagrange field over the flat reference triangulation. All geometric
//! quantities (metric, normal, shape operator, curvatures) are evaluated
//! per quadrature point from the first and second fundamental forms of
//! the element parametrization. Sign convention: the shape operator is
//! `B = -Grad_P n` with outward normal, so the unit sphere has mean
//! curvature `H = -2`.

use crate::mesh::LinearSurfaceMesh;
use crate::vec3::{self, Mat3, Vec3};
use crate::{Error, Result};

// ---------------------------------------------------------------------
// Quadrature
// ---------------------------------------------------------------------

/// Symmetric triangle rule, exact for polynomials of degree 6 on the
/// reference triangle {xi, eta >= 0, xi + eta <= 1}. Weights sum to 1/2.
#[derive(Debug, Clone)]
pub struct QuadRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

impl QuadRule {
    pub fn degree6() -> Self {
        // Dunavant's 12-point degree-6 rule, barycentric orbit data.
        let w1 = 0.050844906370207;
        let a1 = 0.063089014491502;
        let w2 = 0.116786275726379;
        let a2 = 0.249286745170910;
        let w3 = 0.082851075618374;
        let a3 = 0.053145049844816;
        let b3 = 0.310352451033785;

        let mut points = Vec::with_capacity(12);
        let mut weights = Vec::with_capacity(12);
        let mut push = |l: [f64; 3], w: f64| {
            points.push([l[1], l[2]]);
            weights.push(0.5 * w);
        };
        for (a, w) in [(a1, w1), (a2, w2)] {
            let c = 1.0 - 2.0 * a;
            push([c, a, a], w);
            push([a, c, a], w);
            push([a, a, c], w);
        }
        let c3 = 1.0 - a3 - b3;
        push([c3, a3, b3], w3);
        push([c3, b3, a3], w3);
        push([a3, c3, b3], w3);
        push([b3, c3, a3], w3);
        push([a3, b3, c3], w3);
        push([b3, a3, c3], w3);
        Self { points, weights }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

// ---------------------------------------------------------------------
// Lagrange bases on the reference triangle
// ---------------------------------------------------------------------

/// Number of scalar basis functions for element order 1 or 2.
pub fn basis_size(order: u8) -> usize {
    match order {
        1 => 3,
        2 => 6,
        _ => panic!("unsupported element order {order}"),
    }
}

/// Basis values at a reference point. Local node order for P2:
/// vertices v0,v1,v2 then edge midpoints (v0,v1), (v1,v2), (v2,v0).
pub fn basis_values(order: u8, p: [f64; 2]) -> [f64; 6] {
    let [xi, eta] = p;
    let l0 = 1.0 - xi - eta;
    let (l1, l2) = (xi, eta);
    match order {
        1 => [l0, l1, l2, 0.0, 0.0, 0.0],
        2 => [
            l0 * (2.0 * l0 - 1.0),
            l1 * (2.0 * l1 - 1.0),
            l2 * (2.0 * l2 - 1.0),
            4.0 * l0 * l1,
            4.0 * l1 * l2,
            4.0 * l2 * l0,
        ],
        _ => panic!("unsupported element order {order}"),
    }
}

/// Reference gradients (d/dxi, d/deta) of the basis functions.
pub fn basis_gradients(order: u8, p: [f64; 2]) -> [[f64; 2]; 6] {
    let [xi, eta] = p;
    let l0 = 1.0 - xi - eta;
    let (l1, l2) = (xi, eta);
    match order {
        1 => [
            [-1.0, -1.0],
            [1.0, 0.0],
            [0.0, 1.0],
            [0.0, 0.0],
            [0.0, 0.0],
            [0.0, 0.0],
        ],
        2 => [
            [1.0 - 4.0 * l0, 1.0 - 4.0 * l0],
            [4.0 * l1 - 1.0, 0.0],
            [0.0, 4.0 * l2 - 1.0],
            [4.0 * (l0 - l1), -4.0 * l1],
            [4.0 * l2, 4.0 * l1],
            [-4.0 * l2, 4.0 * (l0 - l2)],
        ],
        _ => panic!("unsupported element order {order}"),
    }
}

/// Reference second derivatives (d2/dxi2, d2/dxideta, d2/deta2); constant
/// for P2, zero for P1.
pub fn basis_hessians(order: u8) -> [[f64; 3]; 6] {
    match order {
        1 => [[0.0; 3]; 6],
        2 => [
            [4.0, 4.0, 4.0],
            [4.0, 0.0, 0.0],
            [0.0, 0.0, 4.0],
            [-8.0, -4.0, 0.0],
            [0.0, 4.0, 0.0],
            [0.0, -4.0, -8.0],
        ],
        _ => panic!("unsupported element order {order}"),
    }
}

/// Reference coordinates of the Lagrange nodes of an element.
pub fn basis_nodes(order: u8) -> [[f64; 2]; 6] {
    match order {
        1 => [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0]],
        2 => [
            [0.0, 0.0],
            [1.0, 0.0],
            [0.0, 1.0],
            [0.5, 0.0],
            [0.5, 0.5],
            [0.0, 0.5],
        ],
        _ => panic!("unsupported element order {order}"),
    }
}

/// Global scalar dof ids of an element: vertex ids, then `V + edge` ids
/// for order 2. The edge numbering matches the mesh edge list, which in
/// turn matches icosphere midpoint insertion (nested hierarchy).
pub fn element_dofs(mesh: &LinearSurfaceMesh, order: u8, elem: usize) -> [usize; 6] {
    let tri = mesh.triangles()[elem];
    match order {
        1 => [tri[0], tri[1], tri[2], usize::MAX, usize::MAX, usize::MAX],
        2 => {
            let te = mesh.triangle_edges()[elem];
            let nv = mesh.num_vertices();
            [tri[0], tri[1], tri[2], nv + te[0], nv + te[1], nv + te[2]]
        }
        _ => panic!("unsupported element order {order}"),
    }
}

/// Total scalar dof count for a given order.
pub fn dof_count(mesh: &LinearSurfaceMesh, order: u8) -> usize {
    match order {
        1 => mesh.num_vertices(),
        2 => mesh.num_vertices() + mesh.num_edges(),
        _ => panic!("unsupported element order {order}"),
    }
}

// ---------------------------------------------------------------------
// Per-point geometric frame
// ---------------------------------------------------------------------

/// All pointwise geometric quantities at one surface point.
#[derive(Debug, Clone, Copy)]
pub struct Frame {
    /// Surface point.
    pub x: Vec3,
    /// Parametrization tangents d X / d xi, d X / d eta.
    pub tangents: [Vec3; 2],
    /// Dual (contravariant) tangent basis `a^k = g^{kj} dX/dxi_j`.
    pub dual: [Vec3; 2],
    /// Outward unit normal.
    pub normal: Vec3,
    /// Area element |X_xi x X_eta| (reference measure factored out).
    pub jacobian: f64,
    /// Shape operator `B = -Grad_P n` as a Cartesian 3x3 tensor.
    pub shape_op: Mat3,
    /// Mean curvature `tr B` (unit sphere: -2).
    pub mean_curv: f64,
    /// Gaussian curvature `(H^2 - |B|^2) / 2`.
    pub gauss_curv: f64,
    /// Derivatives of the unit normal along xi, eta.
    pub dnormal: [Vec3; 2],
}

impl Frame {
    /// Projection `P = I - n (x) n`.
    pub fn projection(&self) -> Mat3 {
        vec3::mat_sub(vec3::MAT3_IDENTITY, vec3::outer(self.normal, self.normal))
    }

    /// Tangential surface gradient of a scalar from its reference-space
    /// derivatives `(df/dxi, df/deta)`.
    #[inline]
    pub fn surface_gradient(&self, dref: [f64; 2]) -> Vec3 {
        vec3::axpy(dref[0], self.dual[0], vec3::scale(dref[1], self.dual[1]))
    }
}

// ---------------------------------------------------------------------
// Curved geometry
// ---------------------------------------------------------------------

/// Order-k curved surface built from parametrization coefficients, with
/// cached frames at every quadrature point. Immutable once built.
#[derive(Debug, Clone)]
pub struct CurvedGeometry {
    order: u8,
    /// Nodal positions, one per geometry dof (interleaved xyz).
    coords: Vec<Vec3>,
    rule: QuadRule,
    /// nqp frames per element, element-major.
    frames: Vec<Frame>,
}

impl CurvedGeometry {
    /// Interpolates `exact_map` (or the identity) at the order-k Lagrange
    /// nodes of the reference mesh and caches all frames.
    pub fn build(
        mesh: &LinearSurfaceMesh,
        exact_map: Option<&dyn Fn(Vec3) -> Vec3>,
        order: u8,
    ) -> Result<Self> {
        let coords = interpolation_nodes(mesh, order)
            .into_iter()
            .map(|p| exact_map.map_or(p, |m| m(p)))
            .collect();
        Self::from_coords(mesh, coords, order)
    }

    /// Builds the geometry from existing nodal positions (time stepping).
    pub fn from_coords(mesh: &LinearSurfaceMesh, coords: Vec<Vec3>, order: u8) -> Result<Self> {
        if !matches!(order, 1 | 2) {
            return Err(Error::Mesh(format!("geometry order must be 1 or 2, got {order}")));
        }
        if coords.len() != dof_count(mesh, order) {
            return Err(Error::ConnectivityMismatch(format!(
                "geometry has {} coefficients, mesh requires {}",
                coords.len(),
                dof_count(mesh, order)
            )));
        }
        let rule = QuadRule::degree6();
        let nqp = rule.len();
        let mut frames = Vec::with_capacity(mesh.num_triangles() * nqp);
        let scale = crate::mesh::mesh_size(mesh);
        for elem in 0..mesh.num_triangles() {
            let dofs = element_dofs(mesh, order, elem);
            let nloc = basis_size(order);
            let mut local = [[0.0; 3]; 6];
            for a in 0..nloc {
                local[a] = coords[dofs[a]];
            }
            for q in 0..nqp {
                let frame = frame_from_local(order, &local, rule.points[q]);
                if frame.jacobian <= 1e-14 * scale * scale {
                    return Err(Error::DegenerateElement {
                        element: elem,
                        reason: format!("area element {} at quadrature point {q}", frame.jacobian),
                    });
                }
                frames.push(frame);
            }
        }
        Ok(Self {
            order,
            coords,
            rule,
            frames,
        })
    }

    pub fn order(&self) -> u8 {
        self.order
    }

    pub fn rule(&self) -> &QuadRule {
        &self.rule
    }

    pub fn num_elements(&self) -> usize {
        self.frames.len() / self.rule.len()
    }

    /// Nodal positions of the parametrization (geometry dofs).
    pub fn coords(&self) -> &[Vec3] {
        &self.coords
    }

    #[inline]
    pub fn frame(&self, elem: usize, qp: usize) -> &Frame {
        &self.frames[elem * self.rule.len() + qp]
    }

    /// Quadrature weight times area element.
    #[inline]
    pub fn weight(&self, elem: usize, qp: usize) -> f64 {
        self.rule.weights[qp] * self.frame(elem, qp).jacobian
    }

    /// Evaluates the frame at an arbitrary reference point of an element
    /// (used for nodal curvature and post-processing).
    pub fn frame_at(&self, mesh: &LinearSurfaceMesh, elem: usize, p: [f64; 2]) -> Frame {
        let dofs = element_dofs(mesh, self.order, elem);
        let nloc = basis_size(self.order);
        let mut local = [[0.0; 3]; 6];
        for a in 0..nloc {
            local[a] = self.coords[dofs[a]];
        }
        frame_from_local(self.order, &local, p)
    }

    /// Total surface area by quadrature.
    pub fn area(&self) -> f64 {
        let nqp = self.rule.len();
        let mut a = 0.0;
        for elem in 0..self.num_elements() {
            for q in 0..nqp {
                a += self.weight(elem, q);
            }
        }
        a
    }

    /// Minimum Gaussian curvature over all quadrature points.
    pub fn min_gaussian_curvature(&self) -> f64 {
        self.frames
            .iter()
            .map(|f| f.gauss_curv)
            .fold(f64::INFINITY, f64::min)
    }

    /// Mean curvature averaged per geometry node from the incident
    /// elements (used to initialize the curvature field at t = 0).
    pub fn nodal_mean_curvature(&self, mesh: &LinearSurfaceMesh) -> Vec<f64> {
        let n = self.coords.len();
        let mut sum = vec![0.0; n];
        let mut cnt = vec![0usize; n];
        let nodes = basis_nodes(self.order);
        let nloc = basis_size(self.order);
        for elem in 0..mesh.num_triangles() {
            let dofs = element_dofs(mesh, self.order, elem);
            for a in 0..nloc {
                let f = self.frame_at(mesh, elem, nodes[a]);
                sum[dofs[a]] += f.mean_curv;
                cnt[dofs[a]] += 1;
            }
        }
        for i in 0..n {
            sum[i] /= cnt[i].max(1) as f64;
        }
        sum
    }
}

/// Positions of the order-k Lagrange nodes on the flat reference mesh.
pub fn interpolation_nodes(mesh: &LinearSurfaceMesh, order: u8) -> Vec<Vec3> {
    let mut nodes = mesh.vertices().to_vec();
    if order == 2 {
        for &(a, b) in mesh.edges() {
            nodes.push(vec3::scale(0.5, vec3::add(mesh.vertex(a), mesh.vertex(b))));
        }
    }
    nodes
}

fn frame_from_local(order: u8, local: &[[f64; 3]; 6], p: [f64; 2]) -> Frame {
    let nloc = basis_size(order);
    let vals = basis_values(order, p);
    let grads = basis_gradients(order, p);
    let hess = basis_hessians(order);

    let mut x = [0.0; 3];
    let mut t = [[0.0; 3]; 2];
    let mut xdd = [[0.0; 3]; 3]; // xi-xi, xi-eta, eta-eta
    for a in 0..nloc {
        x = vec3::axpy(vals[a], local[a], x);
        for d in 0..2 {
            t[d] = vec3::axpy(grads[a][d], local[a], t[d]);
        }
        for d in 0..3 {
            xdd[d] = vec3::axpy(hess[a][d], local[a], xdd[d]);
        }
    }

    let nvec = vec3::cross(t[0], t[1]);
    let jac = vec3::norm(nvec);
    let normal = vec3::scale(1.0 / jac, nvec);

    let g11 = vec3::dot(t[0], t[0]);
    let g12 = vec3::dot(t[0], t[1]);
    let g22 = vec3::dot(t[1], t[1]);
    let det = g11 * g22 - g12 * g12;
    let gi = [[g22 / det, -g12 / det], [-g12 / det, g11 / det]];
    let dual = [
        vec3::axpy(gi[0][0], t[0], vec3::scale(gi[0][1], t[1])),
        vec3::axpy(gi[1][0], t[0], vec3::scale(gi[1][1], t[1])),
    ];

    // Second fundamental form b_ij = n . d2X, shape operator
    // B = b_ij a^i (x) a^j (Cartesian), so the unit sphere gives B = -P.
    let b11 = vec3::dot(normal, xdd[0]);
    let b12 = vec3::dot(normal, xdd[1]);
    let b22 = vec3::dot(normal, xdd[2]);
    let mut shape_op = vec3::mat_scale(b11, vec3::outer(dual[0], dual[0]));
    shape_op = vec3::mat_add(shape_op, vec3::mat_scale(b12, vec3::outer(dual[0], dual[1])));
    shape_op = vec3::mat_add(shape_op, vec3::mat_scale(b12, vec3::outer(dual[1], dual[0])));
    shape_op = vec3::mat_add(shape_op, vec3::mat_scale(b22, vec3::outer(dual[1], dual[1])));

    let mean_curv = vec3::mat_trace(shape_op);
    let b_norm2 = vec3::mat_inner(shape_op, shape_op);
    let gauss_curv = 0.5 * (mean_curv * mean_curv - b_norm2);

    // dn/dxi_j = (I - n n^T) dN/dxi_j / |N|, N = X_xi x X_eta.
    let dn_raw = [
        vec3::add(vec3::cross(xdd[0], t[1]), vec3::cross(t[0], xdd[1])),
        vec3::add(vec3::cross(xdd[1], t[1]), vec3::cross(t[0], xdd[2])),
    ];
    let mut dnormal = [[0.0; 3]; 2];
    for d in 0..2 {
        let v = vec3::scale(1.0 / jac, dn_raw[d]);
        dnormal[d] = vec3::sub(v, vec3::scale(vec3::dot(normal, v), normal));
    }

    Frame {
        x,
        tangents: t,
        dual,
        normal,
        jacobian: jac,
        shape_op,
        mean_curv,
        gauss_curv,
        dnormal,
    }
}

// ---------------------------------------------------------------------
// Pointwise operators on FE fields
// ---------------------------------------------------------------------

/// Scalar FE field value at a quadrature point.
pub fn eval_scalar(
    mesh: &LinearSurfaceMesh,
    geom: &CurvedGeometry,
    coeffs: &[f64],
    order: u8,
    elem: usize,
    qp: usize,
) -> f64 {
    let vals = basis_values(order, geom.rule().points[qp]);
    let dofs = element_dofs(mesh, order, elem);
    let mut f = 0.0;
    for a in 0..basis_size(order) {
        f += coeffs[dofs[a]] * vals[a];
    }
    f
}

/// Tangential gradient `Grad_S f = g^{ij} d_j f d_i X` of a scalar field.
pub fn grad_scalar(
    mesh: &LinearSurfaceMesh,
    geom: &CurvedGeometry,
    coeffs: &[f64],
    order: u8,
    elem: usize,
    qp: usize,
) -> Vec3 {
    let grads = basis_gradients(order, geom.rule().points[qp]);
    let dofs = element_dofs(mesh, order, elem);
    let mut dref = [0.0; 2];
    for a in 0..basis_size(order) {
        dref[0] += coeffs[dofs[a]] * grads[a][0];
        dref[1] += coeffs[dofs[a]] * grads[a][1];
    }
    geom.frame(elem, qp).surface_gradient(dref)
}

/// Vector FE field value at a quadrature point. Coefficients are
/// interleaved `[3*dof + component]`.
pub fn eval_vector(
    mesh: &LinearSurfaceMesh,
    geom: &CurvedGeometry,
    coeffs: &[f64],
    order: u8,
    elem: usize,
    qp: usize,
) -> Vec3 {
    let vals = basis_values(order, geom.rule().points[qp]);
    let dofs = element_dofs(mesh, order, elem);
    let mut u = [0.0; 3];
    for a in 0..basis_size(order) {
        for c in 0..3 {
            u[c] += coeffs[3 * dofs[a] + c] * vals[a];
        }
    }
    u
}

/// Componentwise derivative `Grad_C u = g^{ij} d_j u (x) d_i X`
/// (right-tangential).
pub fn grad_vector_componentwise(
    mesh: &LinearSurfaceMesh,
    geom: &CurvedGeometry,
    coeffs: &[f64],
    order: u8,
    elem: usize,
    qp: usize,
) -> Mat3 {
    let grads = basis_gradients(order, geom.rule().points[qp]);
    let dofs = element_dofs(mesh, order, elem);
    let frame = geom.frame(elem, qp);
    let mut m = [[0.0; 3]; 3];
    for a in 0..basis_size(order) {
        let g = frame.surface_gradient(grads[a]);
        for c in 0..3 {
            let uc = coeffs[3 * dofs[a] + c];
            for k in 0..3 {
                m[c][k] += uc * g[k];
            }
        }
    }
    m
}

/// Tangential derivative `Grad_P u = P Grad_C u` (both-sided tangential).
pub fn grad_vector_tangential(
    mesh: &LinearSurfaceMesh,
    geom: &CurvedGeometry,
    coeffs: &[f64],
    order: u8,
    elem: usize,
    qp: usize,
) -> Mat3 {
    let gc = grad_vector_componentwise(mesh, geom, coeffs, order, elem, qp);
    vec3::mat_mul(geom.frame(elem, qp).projection(), gc)
}

/// `div_P u = tr Grad_P u` (= tr Grad_C u, since Grad_C is
/// right-tangential).
pub fn div_tangential(
    mesh: &LinearSurfaceMesh,
    geom: &CurvedGeometry,
    coeffs: &[f64],
    order: u8,
    elem: usize,
    qp: usize,
) -> f64 {
    vec3::mat_trace(grad_vector_componentwise(mesh, geom, coeffs, order, elem, qp))
}

/// Gaussian curvature at a quadrature point.
pub fn gaussian_curvature(geom: &CurvedGeometry, elem: usize, qp: usize) -> f64 {
    geom.frame(elem, qp).gauss_curv
}

// ---------------------------------------------------------------------
// Operator identity checks (used by the `identities` CLI command and the
// acceptance suite)
// ---------------------------------------------------------------------

/// Residuals of the splitting identities of the tangential calculus,
/// evaluated with analytic fields on the cached frames.
#[derive(Debug, Clone, Default)]
pub struct IdentityReport {
    /// max relative residual of `Grad_P u = Grad_S u_T - u_N B`.
    pub grad_p_split: f64,
    /// max relative residual of
    /// `Grad_C u = Grad_P u + n (x) (Grad_S u_N + B u_T)`.
    pub grad_c_split: f64,
    /// max relative residual of `div_P u = div_S u_T - u_N H`.
    pub div_split: f64,
    /// |(f, div_P u) + (Grad_S f + f H n, u)| for assembled FE pairings.
    pub adjointness: f64,
}

impl IdentityReport {
    pub fn max_split_residual(&self) -> f64 {
        self.grad_p_split.max(self.grad_c_split).max(self.div_split)
    }
}

/// Analytic vector field with analytic ambient Jacobian:
/// `u_a(x) = b_a + A_a . x + C_a . sin(x)` (componentwise sine).
#[derive(Debug, Clone)]
pub struct SmoothField {
    pub lin: Mat3,
    pub trig: Mat3,
    pub off: Vec3,
}

impl SmoothField {
    pub fn random(rng: &mut impl rand::Rng) -> Self {
        let mut r = || rng.gen_range(-1.0..1.0);
        let mut m = [[0.0; 3]; 3];
        let mut t = [[0.0; 3]; 3];
        let mut o = [0.0; 3];
        for i in 0..3 {
            o[i] = r();
            for j in 0..3 {
                m[i][j] = r();
                t[i][j] = r();
            }
        }
        Self { lin: m, trig: t, off: o }
    }

    pub fn value(&self, x: Vec3) -> Vec3 {
        let s = [x[0].sin(), x[1].sin(), x[2].sin()];
        vec3::add(
            self.off,
            vec3::add(vec3::mat_vec(self.lin, x), vec3::mat_vec(self.trig, s)),
        )
    }

    /// Ambient Jacobian J[a][b] = d u_a / d x_b.
    pub fn jacobian(&self, x: Vec3) -> Mat3 {
        let c = [x[0].cos(), x[1].cos(), x[2].cos()];
        let mut j = self.lin;
        for a in 0..3 {
            for b in 0..3 {
                j[a][b] += self.trig[a][b] * c[b];
            }
        }
        j
    }

    pub fn scalar(&self, x: Vec3) -> f64 {
        self.value(x)[0]
    }

    pub fn scalar_gradient(&self, x: Vec3) -> Vec3 {
        self.jacobian(x)[0]
    }
}

/// Evaluates the three splitting identities for one analytic field at one
/// frame; returns the relative residuals.
fn identity_residuals_at(frame: &Frame, field: &SmoothField) -> [f64; 3] {
    let x = frame.x;
    let n = frame.normal;
    let p = frame.projection();
    let b = frame.shape_op;
    let u = field.value(x);
    let ju = field.jacobian(x);

    let grad_c = vec3::mat_mul(ju, p);
    let grad_p = vec3::mat_mul(p, grad_c);
    let u_t = vec3::mat_vec(p, u);
    let u_n = vec3::dot(u, n);

    // Grad_S u_T = P Grad_C(P u); d_j(P u) = (d_j P) u + P J_u dX_j.
    let mut grad_c_pu = [[0.0; 3]; 3];
    for d in 0..2 {
        let dn = frame.dnormal[d];
        let dp_u = vec3::scale(
            -1.0,
            vec3::add(
                vec3::scale(vec3::dot(n, u), dn),
                vec3::scale(vec3::dot(dn, u), n),
            ),
        );
        let dj_pu = vec3::add(dp_u, vec3::mat_vec(p, vec3::mat_vec(ju, frame.tangents[d])));
        // accumulate d_j(Pu) (x) a^j
        let contrib = vec3::outer(dj_pu, frame.dual[d]);
        grad_c_pu = vec3::mat_add(grad_c_pu, contrib);
    }
    let grad_s_ut = vec3::mat_mul(p, grad_c_pu);

    // Grad_S u_N: scalar field f = u . n.
    let mut dref = [0.0; 2];
    for d in 0..2 {
        dref[d] = vec3::dot(vec3::mat_vec(vec3::mat_transpose(ju), n), frame.tangents[d])
            + vec3::dot(u, frame.dnormal[d]);
    }
    let grad_s_un = frame.surface_gradient(dref);

    // Residuals relative to the field scale, so identities that cancel
    // to zero (constant fields) are not penalized by 0/0 inflation.
    let scale = (vec3::norm(u) * (1.0 + vec3::mat_frob_norm(b)) + vec3::mat_frob_norm(ju))
        .max(1e-14);
    let rel = |lhs: Mat3, rhs: Mat3| -> f64 {
        vec3::mat_frob_norm(vec3::mat_sub(lhs, rhs))
            / vec3::mat_frob_norm(lhs).max(vec3::mat_frob_norm(rhs)).max(scale)
    };

    // (1) Grad_P u = Grad_S u_T - u_N B
    let r1 = rel(grad_p, vec3::mat_sub(grad_s_ut, vec3::mat_scale(u_n, b)));
    // (2) Grad_C u = Grad_P u + n (x) (Grad_S u_N + B u_T)
    let r2 = rel(
        grad_c,
        vec3::mat_add(
            grad_p,
            vec3::outer(n, vec3::add(grad_s_un, vec3::mat_vec(b, u_t))),
        ),
    );
    // (3) div_P u = div_S u_T - u_N H
    let lhs = vec3::mat_trace(grad_p);
    let rhs = vec3::mat_trace(grad_s_ut) - u_n * frame.mean_curv;
    let r3 = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(scale);
    [r1, r2, r3]
}

/// Runs the identity suite on the exact-map sphere: splitting identities
/// with `n_fields` random smooth fields at every quadrature point, and
/// the assembled integration-by-parts pairing for FE interpolants.
pub fn check_operator_identities(
    mesh: &LinearSurfaceMesh,
    order: u8,
    n_fields: usize,
    seed: u64,
) -> Result<IdentityReport> {
    use rand::SeedableRng;
    let sphere = |p: Vec3| vec3::normalize(p);
    let geom = CurvedGeometry::build(mesh, Some(&sphere), order)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);

    let mut report = IdentityReport::default();
    let nqp = geom.rule().len();
    for _ in 0..n_fields {
        let field = SmoothField::random(&mut rng);
        for elem in 0..geom.num_elements() {
            for q in 0..nqp {
                let [r1, r2, r3] = identity_residuals_at(geom.frame(elem, q), &field);
                report.grad_p_split = report.grad_p_split.max(r1);
                report.grad_c_split = report.grad_c_split.max(r2);
                report.div_split = report.div_split.max(r3);
            }
        }

        // Assembled adjointness with FE interpolants of the field.
        let f = interpolate_scalar(&geom, &|x| field.scalar(x));
        let u = interpolate_vector(&geom, &|x| field.value(x));
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        for elem in 0..geom.num_elements() {
            for q in 0..nqp {
                let w = geom.weight(elem, q);
                let frame = geom.frame(elem, q);
                let fv = eval_scalar(mesh, &geom, &f, order, elem, q);
                let gf = grad_scalar(mesh, &geom, &f, order, elem, q);
                let uv = eval_vector(mesh, &geom, &u, order, elem, q);
                let du = div_tangential(mesh, &geom, &u, order, elem, q);
                lhs += w * fv * du;
                rhs += w
                    * vec3::dot(
                        vec3::add(gf, vec3::scale(fv * frame.mean_curv, frame.normal)),
                        uv,
                    );
            }
        }
        report.adjointness = report.adjointness.max((lhs + rhs).abs());
    }
    Ok(report)
}

/// Nodal interpolation of an analytic scalar onto the geometry nodes.
pub fn interpolate_scalar(geom: &CurvedGeometry, f: &dyn Fn(Vec3) -> f64) -> Vec<f64> {
    geom.coords().iter().map(|&x| f(x)).collect()
}

/// Nodal interpolation of an analytic vector field (interleaved layout).
pub fn interpolate_vector(geom: &CurvedGeometry, f: &dyn Fn(Vec3) -> Vec3) -> Vec<f64> {
    let mut out = Vec::with_capacity(3 * geom.coords().len());
    for &x in geom.coords() {
        let v = f(x);
        out.extend_from_slice(&v);
    }
    out
}
