//! Semi-implicit discrete surface Cahn-Hilliard step on the current
//! surface (first stage of the time step).
//!
//! The 2x2 block system in (phi, mu) treats diffusion and the convective
//! transport of phi implicitly with the explicit relative velocity, and
//! linearizes the double-well derivative around the previous phase field:
//! `W' ~ -2 phi_old^3 + (3 phi_old^2 - 1) phi`. The bending contributions
//! to the chemical potential are explicit in phi_old and the previous
//! curvature field. Both Ginzburg-Landau terms carry the rescaled line
//! tension.

use crate::fem::{AssembledSystem, BlockLayout, CooMatrix, FESpace};
use crate::geometry::{
    self, basis_gradients, basis_size, basis_values, element_dofs, CurvedGeometry,
};
use crate::mesh::LinearSurfaceMesh;
use crate::physics::ModelParams;
use crate::vec3;
use crate::Result;

/// Inputs of one Cahn-Hilliard solve; all fields live on `geom`.
pub struct CHSystemSpec<'a> {
    pub mesh: &'a LinearSurfaceMesh,
    pub geom: &'a CurvedGeometry,
    /// Previous phase field.
    pub phi_old: &'a [f64],
    /// Explicit relative material velocity (interleaved P2).
    pub w: &'a [f64],
    /// Previous mean-curvature field.
    pub h_old: &'a [f64],
    pub tau: f64,
    pub params: &'a ModelParams,
}

/// Assembles the coupled (phi, mu) system.
pub fn assemble_ch(spec: &CHSystemSpec) -> AssembledSystem {
    let mesh = spec.mesh;
    let geom = spec.geom;
    let p = spec.params;
    let n2 = geometry::dof_count(mesh, 2);
    let layout = BlockLayout::new(&[("phi", n2), ("mu", n2)]);
    let mut mat = CooMatrix::new(2 * n2, 2 * n2);
    let mut rhs = vec![0.0; 2 * n2];

    let nloc = basis_size(2);
    let nqp = geom.rule().len();
    let inv_tau = 1.0 / spec.tau;
    let sig_eps = p.sigma_tilde * p.epsilon;
    let sig_over_eps = p.sigma_tilde / p.epsilon;

    for elem in 0..mesh.num_triangles() {
        let dofs = element_dofs(mesh, 2, elem);
        let mut a_pp = [[0.0; 6]; 6];
        let mut a_pm = [[0.0; 6]; 6];
        let mut a_mp = [[0.0; 6]; 6];
        let mut a_mm = [[0.0; 6]; 6];
        let mut r_p = [0.0; 6];
        let mut r_m = [0.0; 6];

        for q in 0..nqp {
            let w = geom.weight(elem, q);
            let frame = geom.frame(elem, q);
            let vals = basis_values(2, geom.rule().points[q]);
            let grads = basis_gradients(2, geom.rule().points[q]);
            let mut sg = [[0.0; 3]; 6];
            for a in 0..nloc {
                sg[a] = frame.surface_gradient(grads[a]);
            }

            let phi_old = geometry::eval_scalar(mesh, geom, spec.phi_old, 2, elem, q);
            let h_old = geometry::eval_scalar(mesh, geom, spec.h_old, 2, elem, q);
            let wvec = geometry::eval_vector(mesh, geom, spec.w, 2, elem, q);

            let lin_well = 3.0 * phi_old * phi_old - 1.0;
            let h0 = p.h0_of(phi_old);
            let dh = h_old - h0;
            let bending = 0.5 * p.kappa_prime(phi_old) * dh * dh
                - p.kappa_of(phi_old) * p.h0_prime(phi_old) * dh;

            for i in 0..nloc {
                for j in 0..nloc {
                    let mass = vals[i] * vals[j];
                    let stiff = vec3::dot(sg[i], sg[j]);
                    let conv = vals[i] * vec3::dot(sg[j], wvec);
                    a_pp[i][j] += w * (inv_tau * mass + conv);
                    a_pm[i][j] += w * p.mobility * stiff;
                    a_mp[i][j] -= w * (sig_eps * stiff + sig_over_eps * lin_well * mass);
                    a_mm[i][j] += w * mass;
                }
                r_p[i] += w * inv_tau * phi_old * vals[i];
                r_m[i] += w * (-2.0 * sig_over_eps * phi_old.powi(3) + bending) * vals[i];
            }
        }

        for i in 0..nloc {
            for j in 0..nloc {
                mat.push(dofs[i], dofs[j], a_pp[i][j]);
                mat.push(dofs[i], n2 + dofs[j], a_pm[i][j]);
                mat.push(n2 + dofs[i], dofs[j], a_mp[i][j]);
                mat.push(n2 + dofs[i], n2 + dofs[j], a_mm[i][j]);
            }
            rhs[dofs[i]] += r_p[i];
            rhs[n2 + dofs[i]] += r_m[i];
        }
    }

    AssembledSystem { matrix: mat, rhs, layout }
}

/// Assembles and solves Problem 3; returns (phi, mu) on the current
/// surface (intermediate, pre-lift).
pub fn step_cahn_hilliard(spec: &CHSystemSpec) -> Result<(Vec<f64>, Vec<f64>)> {
    let system = assemble_ch(spec);
    let sol = crate::fem::solve_linear(&system)?;
    let n2 = geometry::dof_count(spec.mesh, 2);
    Ok((sol[..n2].to_vec(), sol[n2..].to_vec()))
}

/// Chemical potential consistent with a given phase field: solves the
/// mu-equation alone with `phi_new = phi_old = phi`, in which case the
/// linearized well reduces exactly to `W'`.
pub fn chemical_potential_of(
    mesh: &LinearSurfaceMesh,
    geom: &CurvedGeometry,
    phi: &[f64],
    h: &[f64],
    params: &ModelParams,
) -> Result<Vec<f64>> {
    let space = FESpace::scalar(mesh, 2);
    let n2 = space.num_scalar_dofs();
    let mass = crate::fem::assemble_mass(&space, geom);
    let mut rhs = vec![0.0; n2];
    let nqp = geom.rule().len();
    let nloc = basis_size(2);
    for elem in 0..mesh.num_triangles() {
        let dofs = element_dofs(mesh, 2, elem);
        for q in 0..nqp {
            let w = geom.weight(elem, q);
            let frame = geom.frame(elem, q);
            let vals = basis_values(2, geom.rule().points[q]);
            let grads = basis_gradients(2, geom.rule().points[q]);
            let phiv = geometry::eval_scalar(mesh, geom, phi, 2, elem, q);
            let gphi = geometry::grad_scalar(mesh, geom, phi, 2, elem, q);
            let hv = geometry::eval_scalar(mesh, geom, h, 2, elem, q);
            let (_, wp) = crate::physics::double_well(phiv);
            let h0 = params.h0_of(phiv);
            let dh = hv - h0;
            let bending = 0.5 * params.kappa_prime(phiv) * dh * dh
                - params.kappa_of(phiv) * params.h0_prime(phiv) * dh;
            for i in 0..nloc {
                let sgi = frame.surface_gradient(grads[i]);
                rhs[dofs[i]] += w
                    * (params.sigma_tilde * params.epsilon * vec3::dot(gphi, sgi)
                        + (params.sigma_tilde / params.epsilon * wp + bending) * vals[i]);
            }
        }
    }
    let system = AssembledSystem {
        matrix: mass,
        rhs,
        layout: BlockLayout::new(&[("mu", n2)]),
    };
    crate::fem::solve_linear(&system)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{assemble_mass, scalar_l2_norm, FESpace};
    use crate::physics::{compute_energies, initial_phase_field, InitialKind};
    use crate::vec3::Vec3;

    fn sphere_setup(level: u32) -> (LinearSurfaceMesh, CurvedGeometry) {
        let mesh = crate::mesh::generate_icosphere(level, 1.0).unwrap();
        let geom = CurvedGeometry::build(&mesh, Some(&|p: Vec3| vec3::normalize(p)), 2).unwrap();
        (mesh, geom)
    }

    #[test]
    fn uniform_phase_is_a_fixed_point() {
        let (mesh, geom) = sphere_setup(2);
        let n2 = geometry::dof_count(&mesh, 2);
        let params = ModelParams::default();
        let phi_old = vec![1.0; n2];
        let w = vec![0.0; 3 * n2];
        let h_old = vec![-2.0; n2];
        let spec = CHSystemSpec {
            mesh: &mesh,
            geom: &geom,
            phi_old: &phi_old,
            w: &w,
            h_old: &h_old,
            tau: 1e-3,
            params: &params,
        };
        let (phi, mu) = step_cahn_hilliard(&spec).unwrap();
        for v in &phi {
            assert!((v - 1.0).abs() < 1e-9, "phi = {v}");
        }
        for v in &mu {
            assert!(v.abs() < 1e-9, "mu = {v}");
        }
    }

    #[test]
    fn mass_conservation_without_and_with_transport() {
        let (mesh, geom) = sphere_setup(2);
        let n2 = geometry::dof_count(&mesh, 2);
        let params = ModelParams::default();
        let phi_old = initial_phase_field(InitialKind::Symmetric, &mesh, &geom, 0, 0);
        let h_old = vec![-2.0; n2];
        let space = FESpace::scalar(&mesh, 2);
        let mass = assemble_mass(&space, &geom);
        let total = |v: &[f64]| mass.apply(v).iter().sum::<f64>();
        let tau = 1e-4;

        // Stationary observer: exact conservation.
        let w0 = vec![0.0; 3 * n2];
        let spec = CHSystemSpec {
            mesh: &mesh,
            geom: &geom,
            phi_old: &phi_old,
            w: &w0,
            h_old: &h_old,
            tau,
            params: &params,
        };
        let (phi, _) = step_cahn_hilliard(&spec).unwrap();
        assert!((total(&phi) - total(&phi_old)).abs() < 1e-10);

        // With transport: the discrete identity includes the convection
        // integral tested against 1.
        let space_v = FESpace::vector(&mesh, 2);
        let w = space_v.interpolate_vector(&geom, |x| vec3::cross([0.2, -0.4, 0.9], x));
        let spec = CHSystemSpec { w: &w, ..spec };
        let (phi, _) = step_cahn_hilliard(&spec).unwrap();
        let mut transport = 0.0;
        for elem in 0..geom.num_elements() {
            for q in 0..geom.rule().len() {
                let wq = geom.weight(elem, q);
                let gphi = geometry::grad_scalar(&mesh, &geom, &phi, 2, elem, q);
                let wv = geometry::eval_vector(&mesh, &geom, &w, 2, elem, q);
                transport += wq * vec3::dot(gphi, wv);
            }
        }
        let residual = total(&phi) - total(&phi_old) + tau * transport;
        assert!(residual.abs() < 1e-10, "residual {residual}");
    }

    #[test]
    fn one_step_decreases_interface_energy() {
        let (mesh, geom) = sphere_setup(2);
        let n2 = geometry::dof_count(&mesh, 2);
        let params = ModelParams::default();
        let phi_old = initial_phase_field(InitialKind::Symmetric, &mesh, &geom, 0, 0);
        let h_old = vec![-2.0; n2];
        let w = vec![0.0; 3 * n2];
        let tau = 1e-4;
        let spec = CHSystemSpec {
            mesh: &mesh,
            geom: &geom,
            phi_old: &phi_old,
            w: &w,
            h_old: &h_old,
            tau,
            params: &params,
        };
        let (phi, mu) = step_cahn_hilliard(&spec).unwrap();
        let u = vec![0.0; 3 * n2];
        let before = compute_energies(&mesh, &geom, 0.0, &u, &phi_old, &mu, &h_old, &params);
        let after = compute_energies(&mesh, &geom, tau, &u, &phi, &mu, &h_old, &params);
        assert!(
            after.f_gl + after.f_h < before.f_gl + before.f_h,
            "energy before {} after {}",
            before.f_gl + before.f_h,
            after.f_gl + after.f_h
        );
    }

    #[test]
    fn reassembly_is_bitwise_identical() {
        let (mesh, geom) = sphere_setup(1);
        let n2 = geometry::dof_count(&mesh, 2);
        let params = ModelParams {
            kappa: [0.02, 0.5],
            ..Default::default()
        };
        let phi_old = initial_phase_field(InitialKind::Random, &mesh, &geom, 3, 40);
        let h_old = vec![-2.0; n2];
        let space_v = FESpace::vector(&mesh, 2);
        let w = space_v.interpolate_vector(&geom, |x| vec3::cross([1.0, 0.0, 0.0], x));
        let spec = CHSystemSpec {
            mesh: &mesh,
            geom: &geom,
            phi_old: &phi_old,
            w: &w,
            h_old: &h_old,
            tau: 1e-3,
            params: &params,
        };
        let a = assemble_ch(&spec);
        let b = assemble_ch(&spec);
        assert_eq!(a.matrix.entries.len(), b.matrix.entries.len());
        for (x, y) in a.matrix.entries.iter().zip(&b.matrix.entries) {
            assert_eq!(x.0, y.0);
            assert_eq!(x.1, y.1);
            assert_eq!(x.2.to_bits(), y.2.to_bits());
        }
        for (x, y) in a.rhs.iter().zip(&b.rhs) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn manufactured_chemical_potential_converges() {
        // phi = x0 on the unit sphere: Lap_S x0 = -2 x0, so
        // mu = sigma~ (2 eps x0 + (x0^3 - x0)/eps) with constant kappa and
        // H0 = 0.
        let params = ModelParams::default();
        let mut errs = Vec::new();
        for level in [2u32, 3] {
            let (mesh, geom) = sphere_setup(level);
            let space = FESpace::scalar(&mesh, 2);
            let phi = space.interpolate(&geom, |x| x[0]);
            let n2 = space.num_scalar_dofs();
            let h = vec![-2.0; n2];
            let mu = chemical_potential_of(&mesh, &geom, &phi, &h, &params).unwrap();
            let exact = space.interpolate(&geom, |x| {
                params.sigma_tilde
                    * (2.0 * params.epsilon * x[0] + (x[0].powi(3) - x[0]) / params.epsilon)
            });
            let diff: Vec<f64> = mu.iter().zip(&exact).map(|(a, b)| a - b).collect();
            errs.push(scalar_l2_norm(&space, &geom, &diff));
        }
        let rate = (errs[0] / errs[1]).log2();
        assert!(rate > 1.6, "manufactured mu rate {rate} ({errs:?})");
    }
}
