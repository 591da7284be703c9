use fluidsurf::fem::{vector_l2_norm, FESpace};
use fluidsurf::mesh::generate_icosphere;
use fluidsurf::physics::{ModelParams, Variant};
use fluidsurf::timeloop::{Simulation, SimulationConfig, K0_DISABLED};

fn main() {
    let mesh = generate_icosphere(3, 1.0).unwrap();
    let config = SimulationConfig {
        params: ModelParams {
            kappa: [0.02, 0.02],
            gamma: 0.0,
            variant: Variant::OneComponent,
            ..Default::default()
        },
        t_end: 1e9,
        k0: K0_DISABLED,
        equilibrium_tol_u: 0.0,
        equilibrium_tol_phi: 0.0,
        ..Default::default()
    };
    let mut sim = Simulation::new(&mesh, config).unwrap();
    let space_v = FESpace::vector(&mesh, 2);
    let area0 = sim.geom.area();
    println!("tau = {:.3e}, area0 = {:.10}", sim.tau, area0);
    let mut max_u: f64 = 0.0;
    let mut max_da: f64 = 0.0;
    for step in 1..=1500 {
        sim.advance().unwrap();
        let unorm = vector_l2_norm(&space_v, &sim.geom, &sim.state.u);
        let da = (sim.geom.area() - area0).abs() / area0;
        max_u = max_u.max(unorm);
        max_da = max_da.max(da);
        if step % 100 == 0 || step <= 2 {
            println!("step {step:3}: |u| = {unorm:.4e}  dA/A = {da:.4e}");
        }
    }
    println!("max |u| = {max_u:.4e}, max dA/A = {max_da:.4e}");
}
