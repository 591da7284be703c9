//! Overdamped (friction-dominated) limit: inertia and viscosity drop out
//! and the velocity follows algebraically from the rescaled pressure and
//! the bending/line-tension forces.
//!
//! Per step: the Cahn-Hilliard stage runs with the friction-rescaled
//! parameters, the normal force `b_N` is projected onto the P2 space, the
//! rescaled pressure solves the Helmholtz-type equation
//! `-Lap_S p + p H^2 = -div_S(mu Grad_S phi) + b_N H` on the P1 space,
//! the velocity is recomposed as `u_T + u_N n`, and the mesh moves with
//! the normal velocity only.

use crate::ch_step::{step_cahn_hilliard, CHSystemSpec};
use crate::fem::{
    assemble_mass, solve_linear, AssembledSystem, BlockLayout, CooMatrix, FESpace, FieldState,
};
use crate::geometry::{
    self, basis_gradients, basis_size, basis_values, element_dofs, CurvedGeometry,
};
use crate::mesh::LinearSurfaceMesh;
use crate::physics::{double_well, ModelParams};
use crate::vec3::{self, Vec3};
use crate::Result;

/// L2 projection of a per-quadrature-point scalar onto the P2 space.
fn project_scalar(
    mesh: &LinearSurfaceMesh,
    geom: &CurvedGeometry,
    value_at: impl Fn(usize, usize) -> f64,
) -> Result<Vec<f64>> {
    let space = FESpace::scalar(mesh, 2);
    let n = space.num_scalar_dofs();
    let mass = assemble_mass(&space, geom);
    let mut rhs = vec![0.0; n];
    for elem in 0..mesh.num_triangles() {
        let dofs = element_dofs(mesh, 2, elem);
        for q in 0..geom.rule().len() {
            let w = geom.weight(elem, q) * value_at(elem, q);
            let vals = basis_values(2, geom.rule().points[q]);
            for i in 0..basis_size(2) {
                rhs[dofs[i]] += w * vals[i];
            }
        }
    }
    solve_linear(&AssembledSystem {
        matrix: mass,
        rhs,
        layout: BlockLayout::new(&[("proj", n)]),
    })
}

/// L2 projection of a per-quadrature-point vector onto the P2 space
/// (interleaved coefficients).
fn project_vector(
    mesh: &LinearSurfaceMesh,
    geom: &CurvedGeometry,
    value_at: impl Fn(usize, usize) -> Vec3,
) -> Result<Vec<f64>> {
    let space = FESpace::scalar(mesh, 2);
    let n = space.num_scalar_dofs();
    let mass = assemble_mass(&space, geom);
    let mut rhs = vec![vec![0.0; n]; 3];
    for elem in 0..mesh.num_triangles() {
        let dofs = element_dofs(mesh, 2, elem);
        for q in 0..geom.rule().len() {
            let w = geom.weight(elem, q);
            let v = value_at(elem, q);
            let vals = basis_values(2, geom.rule().points[q]);
            for i in 0..basis_size(2) {
                for c in 0..3 {
                    rhs[c][dofs[i]] += w * v[c] * vals[i];
                }
            }
        }
    }
    let mut out = vec![0.0; 3 * n];
    for c in 0..3 {
        let sol = solve_linear(&AssembledSystem {
            matrix: mass.clone(),
            rhs: rhs[c].clone(),
            layout: BlockLayout::new(&[("proj", n)]),
        })?;
        for i in 0..n {
            out[3 * i + c] = sol[i];
        }
    }
    Ok(out)
}

/// Discrete Laplace-Beltrami of a P2 field: solves `M z = -K f`.
fn discrete_laplacian(
    mesh: &LinearSurfaceMesh,
    geom: &CurvedGeometry,
    f: &[f64],
) -> Result<Vec<f64>> {
    let space = FESpace::scalar(mesh, 2);
    let n = space.num_scalar_dofs();
    let mass = assemble_mass(&space, geom);
    let stiff = crate::fem::assemble_stiffness(&space, geom);
    let rhs: Vec<f64> = stiff.apply(f).iter().map(|v| -v).collect();
    solve_linear(&AssembledSystem {
        matrix: mass,
        rhs,
        layout: BlockLayout::new(&[("lap", n)]),
    })
}

/// Normal bending/line-tension force of the overdamped system projected
/// onto P2, using friction-rescaled parameters.
pub fn normal_force(
    mesh: &LinearSurfaceMesh,
    geom: &CurvedGeometry,
    phi: &[f64],
    h: &[f64],
    scaled: &ModelParams,
) -> Result<Vec<f64>> {
    // omega = kappa(phi) (H - H0(phi)) as a P2 field, then its discrete
    // Laplacian.
    let n2 = geometry::dof_count(mesh, 2);
    let mut omega = vec![0.0; n2];
    for i in 0..n2 {
        omega[i] = scaled.kappa_of(phi[i]) * (h[i] - scaled.h0_of(phi[i]));
    }
    let lap_omega = discrete_laplacian(mesh, geom, &omega)?;

    project_scalar(mesh, geom, |elem, q| {
        let frame = geom.frame(elem, q);
        let phiv = geometry::eval_scalar(mesh, geom, phi, 2, elem, q);
        let hv = geometry::eval_scalar(mesh, geom, h, 2, elem, q);
        let gphi = geometry::grad_scalar(mesh, geom, phi, 2, elem, q);
        let lap = geometry::eval_scalar(mesh, geom, &lap_omega, 2, elem, q);
        let kap = scaled.kappa_of(phiv);
        let h0 = scaled.h0_of(phiv);
        let dh = hv - h0;
        let b2 = vec3::mat_inner(frame.shape_op, frame.shape_op);
        let (well, _) = double_well(phiv);
        let gl = scaled.sigma_tilde
            * (0.5 * scaled.epsilon * vec3::dot(gphi, gphi) + well / scaled.epsilon);
        let b_gphi = vec3::mat_vec(frame.shape_op, gphi);
        -lap - kap * dh * (b2 - 0.5 * hv * dh) + gl * hv
            - scaled.sigma_tilde * scaled.epsilon * vec3::dot(gphi, b_gphi)
    })
}

/// Rescaled pressure: `(Grad p, Grad q) + (H^2 p, q) =
/// (mu Grad_S phi, Grad q) + (b_N H, q)` over P1.
pub fn solve_pressure(
    mesh: &LinearSurfaceMesh,
    geom: &CurvedGeometry,
    phi: &[f64],
    mu: &[f64],
    h: &[f64],
    bn: &[f64],
) -> Result<Vec<f64>> {
    let n1 = mesh.num_vertices();
    let mut mat = CooMatrix::new(n1, n1);
    let mut rhs = vec![0.0; n1];
    for elem in 0..mesh.num_triangles() {
        let tri = mesh.triangles()[elem];
        for q in 0..geom.rule().len() {
            let w = geom.weight(elem, q);
            let frame = geom.frame(elem, q);
            let pts = geom.rule().points[q];
            let vals1 = basis_values(1, pts);
            let grads1 = basis_gradients(1, pts);
            let hv = geometry::eval_scalar(mesh, geom, h, 2, elem, q);
            let muv = geometry::eval_scalar(mesh, geom, mu, 2, elem, q);
            let gphi = geometry::grad_scalar(mesh, geom, phi, 2, elem, q);
            let bnv = geometry::eval_scalar(mesh, geom, bn, 2, elem, q);
            let mut sg = [[0.0; 3]; 3];
            for a in 0..3 {
                sg[a] = frame.surface_gradient(grads1[a]);
            }
            for i in 0..3 {
                for j in 0..3 {
                    mat.push(
                        tri[i],
                        tri[j],
                        w * (vec3::dot(sg[i], sg[j]) + hv * hv * vals1[i] * vals1[j]),
                    );
                }
                rhs[tri[i]] += w * (muv * vec3::dot(gphi, sg[i]) + bnv * hv * vals1[i]);
            }
        }
    }
    solve_linear(&AssembledSystem {
        matrix: mat,
        rhs,
        layout: BlockLayout::new(&[("p", n1)]),
    })
}

/// Per-node outward normals averaged from the incident elements.
fn nodal_normals(mesh: &LinearSurfaceMesh, geom: &CurvedGeometry) -> Vec<Vec3> {
    let n = geom.coords().len();
    let mut sum = vec![[0.0; 3]; n];
    let nodes = geometry::basis_nodes(2);
    for elem in 0..mesh.num_triangles() {
        let dofs = element_dofs(mesh, 2, elem);
        for a in 0..basis_size(2) {
            let f = geom.frame_at(mesh, elem, nodes[a]);
            sum[dofs[a]] = vec3::add(sum[dofs[a]], f.normal);
        }
    }
    sum.into_iter().map(vec3::normalize).collect()
}

/// One overdamped step: CH stage with rescaled parameters, algebraic
/// velocity, normal-only mesh motion.
pub fn advance_overdamped(
    mesh: &LinearSurfaceMesh,
    state: &mut FieldState,
    geom: &mut CurvedGeometry,
    tau: f64,
    params: &ModelParams,
) -> Result<()> {
    let scaled = params.overdamped_scaled();
    let n2 = geometry::dof_count(mesh, 2);

    let (phi_new, mu_new) = step_cahn_hilliard(&CHSystemSpec {
        mesh,
        geom,
        phi_old: &state.phi,
        w: &state.w,
        h_old: &state.h,
        tau,
        params: &scaled,
    })?;

    let bn = normal_force(mesh, geom, &phi_new, &state.h, &scaled)?;
    let pressure = solve_pressure(mesh, geom, &phi_new, &mu_new, &state.h, &bn)?;

    // Tangential velocity: L2 projection of -Grad p + mu Grad phi.
    let u_t = project_vector(mesh, geom, |elem, q| {
        let gp = grad_p1(mesh, geom, &pressure, elem, q);
        let muv = geometry::eval_scalar(mesh, geom, &mu_new, 2, elem, q);
        let gphi = geometry::grad_scalar(mesh, geom, &phi_new, 2, elem, q);
        vec3::axpy(muv, gphi, vec3::scale(-1.0, gp))
    })?;

    // Nodal composition u = P u_T + u_N n with u_N = -p H + b_N.
    let normals = nodal_normals(mesh, geom);
    let p_nodal = p1_at_p2_nodes(mesh, &pressure);
    let mut u = vec![0.0; 3 * n2];
    let mut x_new = state.x.clone();
    for i in 0..n2 {
        let n = normals[i];
        let ut = [u_t[3 * i], u_t[3 * i + 1], u_t[3 * i + 2]];
        let ut_tan = vec3::sub(ut, vec3::scale(vec3::dot(ut, n), n));
        let un = -p_nodal[i] * state.h[i] + bn[i];
        let uv = vec3::axpy(un, n, ut_tan);
        u[3 * i..3 * i + 3].copy_from_slice(&uv);
        // Mesh follows the normal velocity.
        x_new[i] = vec3::axpy(tau * un, n, x_new[i]);
    }

    let geom_new = CurvedGeometry::from_coords(mesh, x_new.clone(), geom.order())?;
    let mut y = vec![0.0; 3 * n2];
    for i in 0..n2 {
        for c in 0..3 {
            y[3 * i + c] = x_new[i][c] - state.x[i][c];
        }
    }

    state.t += tau;
    state.phi = phi_new;
    state.mu = mu_new;
    state.u = u.clone();
    state.p = pressure;
    state.y = y;
    state.x = x_new.clone();
    *geom = geom_new;
    // Refresh the curvature field from the moved geometry. The grid
    // follows u_N n, so the relative velocity is the tangential part of
    // u.
    state.h = geom.nodal_mean_curvature(mesh);
    state.w = u;
    for i in 0..n2 {
        let n = normals[i];
        let wv = [state.w[3 * i], state.w[3 * i + 1], state.w[3 * i + 2]];
        let wt = vec3::sub(wv, vec3::scale(vec3::dot(wv, n), n));
        state.w[3 * i..3 * i + 3].copy_from_slice(&wt);
    }
    Ok(())
}

/// Gradient of a P1 field at a quadrature point.
fn grad_p1(
    mesh: &LinearSurfaceMesh,
    geom: &CurvedGeometry,
    coeffs: &[f64],
    elem: usize,
    qp: usize,
) -> Vec3 {
    let grads = basis_gradients(1, geom.rule().points[qp]);
    let tri = mesh.triangles()[elem];
    let mut dref = [0.0; 2];
    for a in 0..3 {
        dref[0] += coeffs[tri[a]] * grads[a][0];
        dref[1] += coeffs[tri[a]] * grads[a][1];
    }
    geom.frame(elem, qp).surface_gradient(dref)
}

/// P1 coefficients evaluated at all P2 nodes (edge midpoints average the
/// endpoint values).
fn p1_at_p2_nodes(mesh: &LinearSurfaceMesh, p: &[f64]) -> Vec<f64> {
    let mut out = p.to_vec();
    for &(a, b) in mesh.edges() {
        out.push(0.5 * (p[a] + p[b]));
    }
    out
}
