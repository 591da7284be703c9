//! Orchestration of the four-stage time step, the relative-velocity
//! update, pinch-off detection and the model variants.
//!
//! One advance performs: (1) the Cahn-Hilliard solve on the old surface,
//! (2) the Navier-Stokes + curvature + update solve, (3) the
//! parametrization update `X += Y` with a geometry rebuild, (4) the nodal
//! lift of all fields. The relative material velocity for the next step
//! is the new velocity minus the realized grid velocity `Y / tau`; the
//! first step starts from `w = u0`.

use crate::ch_step::{step_cahn_hilliard, CHSystemSpec};
use crate::fem::{vector_l2_norm, FESpace, FieldState};
use crate::geometry::{self, CurvedGeometry};
use crate::mesh::LinearSurfaceMesh;
use crate::nsmesh_step::{step_ns_update, NSSystemSpec};
use crate::overdamped;
use crate::physics::{
    compute_energies, initial_phase_field, initial_velocity, EnergyReport, EnergyRow,
    InitialKind, ModelParams, Variant,
};
use crate::vec3::{self, Vec3};
use crate::{Error, Result};

/// Sentinel for "pinch-off detection disabled".
pub const K0_DISABLED: f64 = f64::NEG_INFINITY;

/// Resolved run configuration (physics plus numerics).
#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub params: ModelParams,
    pub initial_kind: InitialKind,
    pub seed: u64,
    pub bump_count: usize,
    pub refinement_level: u32,
    pub geometry_order: u8,
    /// Time step tau = c_tau h^3 unless `fixed_tau` overrides it.
    pub c_tau: f64,
    pub fixed_tau: Option<f64>,
    pub t_end: f64,
    /// Gaussian-curvature bound for pinch-off (negative, or
    /// `K0_DISABLED`).
    pub k0: f64,
    /// Equilibrium tolerances for |u|_L2 and |dphi/dt|_L2; zero disables
    /// the check.
    pub equilibrium_tol_u: f64,
    pub equilibrium_tol_phi: f64,
    /// Snapshot every n-th step (0 = only first/last).
    pub output_every: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            params: ModelParams::default(),
            initial_kind: InitialKind::Symmetric,
            seed: 0,
            bump_count: 100,
            refinement_level: 3,
            geometry_order: 2,
            c_tau: 1.0,
            fixed_tau: None,
            t_end: 1.0,
            k0: -50.0,
            equilibrium_tol_u: 1e-6,
            equilibrium_tol_phi: 1e-6,
            output_every: 0,
        }
    }
}

impl SimulationConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = self.params.violations();
        if !matches!(self.geometry_order, 1 | 2) {
            v.push(format!("order must be 1 or 2, got {}", self.geometry_order));
        }
        if self.refinement_level > crate::mesh::MAX_REFINEMENT_LEVEL {
            v.push(format!(
                "refinement_level {} exceeds maximum {}",
                self.refinement_level,
                crate::mesh::MAX_REFINEMENT_LEVEL
            ));
        }
        if !(self.t_end > 0.0) {
            v.push(format!("t_end must be positive, got {}", self.t_end));
        }
        if !(self.c_tau > 0.0) {
            v.push(format!("c_tau must be positive, got {}", self.c_tau));
        }
        if let Some(tau) = self.fixed_tau {
            if !(tau > 0.0) {
                v.push(format!("tau must be positive, got {tau}"));
            }
        }
        if self.k0 != K0_DISABLED && !(self.k0 < 0.0) {
            v.push(format!("k0 must be negative, got {}", self.k0));
        }
        if self.equilibrium_tol_u < 0.0 || self.equilibrium_tol_phi < 0.0 {
            v.push("equilibrium tolerances must be non-negative".into());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v.join("; ")))
        }
    }

    /// Time step from the mesh size rule.
    pub fn tau_for(&self, h: f64) -> f64 {
        self.fixed_tau.unwrap_or(self.c_tau * h * h * h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    ReachedTMax,
    Equilibrium,
    PinchOff,
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Termination::ReachedTMax => write!(f, "reached_T_max"),
            Termination::Equilibrium => write!(f, "equilibrium"),
            Termination::PinchOff => write!(f, "pinch_off"),
        }
    }
}

/// Output of a run: final state, termination cause, energy time series
/// and stored snapshots.
pub struct RunResult {
    pub state: FieldState,
    pub termination: Termination,
    /// Critical time if terminated by pinch-off.
    pub critical_time: Option<f64>,
    pub energies: EnergyReport,
    pub snapshots: Vec<FieldState>,
    pub tau: f64,
    pub steps: usize,
    /// Error of the failed step, when one aborted the run.
    pub failure: Option<Error>,
}

/// Relative material velocity after a step: the new velocity minus the
/// realized grid velocity `(X^n - X^{n-1}) / tau`, nodewise.
pub fn compute_relative_velocity(
    u: &[f64],
    x_new: &[Vec3],
    x_old: &[Vec3],
    tau: f64,
) -> Vec<f64> {
    let mut w = u.to_vec();
    for i in 0..x_new.len() {
        for c in 0..3 {
            w[3 * i + c] -= (x_new[i][c] - x_old[i][c]) / tau;
        }
    }
    w
}

/// Flags when the minimum Gaussian curvature falls below the bound.
pub fn detect_pinch_off(geom: &CurvedGeometry, k0: f64) -> bool {
    if k0 == K0_DISABLED {
        return false;
    }
    geom.min_gaussian_curvature() < k0
}

/// A simulation in progress: owns the state and the current geometry.
pub struct Simulation<'m> {
    pub mesh: &'m LinearSurfaceMesh,
    pub config: SimulationConfig,
    pub state: FieldState,
    pub geom: CurvedGeometry,
    pub tau: f64,
}

impl<'m> Simulation<'m> {
    /// Initial state on the exact-map unit sphere: prescribed phase
    /// field, velocity at rest, curvature field from the discrete
    /// geometry.
    pub fn new(mesh: &'m LinearSurfaceMesh, config: SimulationConfig) -> Result<Self> {
        config.validate()?;
        let sphere = |p: Vec3| vec3::normalize(p);
        let geom = CurvedGeometry::build(mesh, Some(&sphere), config.geometry_order)?;
        Self::from_geometry(mesh, config, geom)
    }

    /// Initial state on an arbitrary curved geometry (file import).
    pub fn from_geometry(
        mesh: &'m LinearSurfaceMesh,
        config: SimulationConfig,
        geom: CurvedGeometry,
    ) -> Result<Self> {
        config.validate()?;
        let mut state = FieldState::zeros(mesh, &geom);
        state.u = initial_velocity(mesh);
        state.phi = match config.params.variant {
            Variant::OneComponent => vec![1.0; geometry::dof_count(mesh, 2)],
            _ => initial_phase_field(
                config.initial_kind,
                mesh,
                &geom,
                config.seed,
                config.bump_count,
            ),
        };
        state.h = geom.nodal_mean_curvature(mesh);
        // First step: no prior grid motion, w = u0.
        state.w = state.u.clone();
        let tau = config.tau_for(crate::mesh::mesh_size(mesh));
        Ok(Self {
            mesh,
            config,
            state,
            geom,
            tau,
        })
    }

    pub fn energies(&self) -> EnergyRow {
        compute_energies(
            self.mesh,
            &self.geom,
            self.state.t,
            &self.state.u,
            &self.state.phi,
            &self.state.mu,
            &self.state.h,
            &self.config.params,
        )
    }

    /// One four-stage advance; on failure the pre-step state is kept for
    /// post-mortem output.
    pub fn advance(&mut self) -> Result<()> {
        let step = (self.state.t / self.tau).round() as usize;
        self.advance_inner().map_err(|e| Error::StepFailed {
            step,
            time: self.state.t,
            source: Box::new(e),
        })
    }

    fn advance_inner(&mut self) -> Result<()> {
        let params = self.config.params.clone();
        let tau = self.tau;

        if params.variant == Variant::Overdamped {
            return overdamped::advance_overdamped(
                self.mesh,
                &mut self.state,
                &mut self.geom,
                tau,
                &params,
            );
        }

        // Stage 1: Cahn-Hilliard on the old surface (skipped for the
        // one-component model, where phi stays constant).
        let (phi_new, mu_new) = if params.variant == Variant::OneComponent {
            (self.state.phi.clone(), self.state.mu.clone())
        } else {
            step_cahn_hilliard(&CHSystemSpec {
                mesh: self.mesh,
                geom: &self.geom,
                phi_old: &self.state.phi,
                w: &self.state.w,
                h_old: &self.state.h,
                tau,
                params: &params,
            })?
        };

        // Stage 2: Navier-Stokes + curvature + surface update.
        let sol = step_ns_update(&NSSystemSpec {
            mesh: self.mesh,
            geom: &self.geom,
            u_old: &self.state.u,
            w: &self.state.w,
            phi_new: &phi_new,
            mu_new: &mu_new,
            tau,
            params: &params,
        })?;

        // Stage 3: new parametrization and geometry.
        let x_old = self.state.x.clone();
        let mut x_new = x_old.clone();
        for (i, x) in x_new.iter_mut().enumerate() {
            for c in 0..3 {
                x[c] += sol.y[3 * i + c];
            }
        }
        let geom_new = CurvedGeometry::from_coords(self.mesh, x_new.clone(), self.geom.order())?;

        // Stage 4: nodal lift (coefficients unchanged on the new surface).
        self.state = crate::fem::lift_fields(
            &FieldState {
                t: self.state.t + tau,
                x: self.state.x.clone(),
                u: sol.u,
                p: sol.p,
                phi: phi_new,
                mu: mu_new,
                h: if params.variant == Variant::StationarySurface {
                    // The curvature slot carried the normal-constraint
                    // multiplier; the surface (and its curvature field)
                    // did not move.
                    self.state.h.clone()
                } else {
                    sol.h
                },
                y: sol.y,
                w: self.state.w.clone(),
            },
            x_new.clone(),
        )?;
        self.geom = geom_new;
        self.state.w = compute_relative_velocity(&self.state.u, &x_new, &x_old, tau);
        Ok(())
    }
}

/// Runs a configuration to pinch-off, equilibrium or `t_end`.
pub fn run(mesh: &LinearSurfaceMesh, config: SimulationConfig) -> Result<RunResult> {
    let output_every = config.output_every;
    let (tol_u, tol_phi) = (config.equilibrium_tol_u, config.equilibrium_tol_phi);
    let k0 = config.k0;
    let t_end = config.t_end;
    let mut sim = Simulation::new(mesh, config)?;
    let space_v = FESpace::vector(mesh, 2);
    let space_s = FESpace::scalar(mesh, 2);

    let mut energies = EnergyReport::default();
    energies.push(sim.energies());
    let mut snapshots = vec![sim.state.clone()];
    let mut termination = Termination::ReachedTMax;
    let mut critical_time = None;
    let mut failure = None;
    let mut steps = 0usize;

    // The initial surface may already violate the curvature bound.
    if detect_pinch_off(&sim.geom, k0) {
        termination = Termination::PinchOff;
        critical_time = Some(0.0);
    } else {
        while sim.state.t < t_end - 0.5 * sim.tau {
            let phi_before = sim.state.phi.clone();
            if let Err(e) = sim.advance() {
                failure = Some(e);
                break;
            }
            steps += 1;
            energies.push(sim.energies());
            if output_every > 0 && steps % output_every == 0 {
                snapshots.push(sim.state.clone());
            }

            if detect_pinch_off(&sim.geom, k0) {
                termination = Termination::PinchOff;
                critical_time = Some(sim.state.t);
                break;
            }

            if tol_u > 0.0 && tol_phi > 0.0 {
                let unorm = vector_l2_norm(&space_v, &sim.geom, &sim.state.u);
                let dphi: Vec<f64> = sim
                    .state
                    .phi
                    .iter()
                    .zip(&phi_before)
                    .map(|(a, b)| (a - b) / sim.tau)
                    .collect();
                let phirate = crate::fem::scalar_l2_norm(&space_s, &sim.geom, &dphi);
                if unorm < tol_u && phirate < tol_phi {
                    termination = Termination::Equilibrium;
                    break;
                }
            }
        }
    }

    if snapshots.last().map(|s| s.t) != Some(sim.state.t) {
        snapshots.push(sim.state.clone());
    }
    Ok(RunResult {
        state: sim.state,
        termination,
        critical_time,
        energies,
        snapshots,
        tau: sim.tau,
        steps,
        failure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_icosphere;

    #[test]
    fn relative_velocity_cases() {
        let u = vec![1.0, 0.0, 0.0, 0.0, 2.0, 0.0];
        let x_old = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        // Stationary grid: w = u.
        let w = compute_relative_velocity(&u, &x_old, &x_old, 0.1);
        assert_eq!(w, u);
        // Grid moving with the material: w = 0.
        let x_new = vec![[0.1, 0.0, 0.0], [1.0, 0.2, 0.0]];
        let w = compute_relative_velocity(&u, &x_new, &x_old, 0.1);
        for v in w {
            assert!(v.abs() < 1e-14);
        }
    }

    #[test]
    fn pinch_off_detection() {
        let mesh = generate_icosphere(2, 1.0).unwrap();
        let sphere = CurvedGeometry::build(&mesh, Some(&|p: Vec3| vec3::normalize(p)), 2).unwrap();
        assert!(!detect_pinch_off(&sphere, -10.0));
        assert!(!detect_pinch_off(&sphere, K0_DISABLED));

        let neck = |p: Vec3| -> Vec3 {
            let s = vec3::normalize(p);
            let r = 1.0 - 0.6 * (-(s[2] / 0.3) * (s[2] / 0.3)).exp();
            [r * s[0], r * s[1], s[2]]
        };
        let mesh3 = generate_icosphere(3, 1.0).unwrap();
        let necked = CurvedGeometry::build(&mesh3, Some(&neck), 2).unwrap();
        assert!(necked.min_gaussian_curvature() < -25.0);
        assert!(detect_pinch_off(&necked, -10.0));
        assert!(!detect_pinch_off(&necked, K0_DISABLED));
    }

    #[test]
    fn t_max_zero_steps() {
        let mesh = generate_icosphere(1, 1.0).unwrap();
        let config = SimulationConfig {
            t_end: 1e-9,
            ..Default::default()
        };
        let result = run(&mesh, config).unwrap();
        assert_eq!(result.termination, Termination::ReachedTMax);
        assert_eq!(result.steps, 0);
        assert_eq!(result.snapshots.len(), 1);
    }

    #[test]
    fn config_validation_collects_all() {
        let config = SimulationConfig {
            t_end: -1.0,
            k0: 3.0,
            params: ModelParams {
                re: 0.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let v = config.violations();
        assert!(v.len() >= 3, "{v:?}");
    }
}
