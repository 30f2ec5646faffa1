// Scratch diagnostics; not part of the library surface.
use hjb::grid::{classify_nodes, DomainDescriptor, Grid};
use hjb::solver::*;

fn main() {
    let desc = DomainDescriptor::Ball { radius: 1.0 };
    let h = 1.0 / 64.0;
    let grid = Grid::enclosing(2, &desc, h, 2).unwrap();
    let mask = classify_nodes(&grid, &desc).unwrap();
    let spec = ProblemSpec::new(desc, 2, 1.0);
    let sweep = sweep_solve(&spec, &grid, &mask, &SolverConfig::default()).unwrap();
    for tol in [1e-1, 1e-2, 1e-3, 1e-4] {
        let cfg = SolverConfig { tolerance: tol, max_sweeps: 400_000, ..SolverConfig::default() };
        let dpp_cfg = DppConfig { dt: None, directions: 16, allow_incompatible_dt: false };
        let t0 = std::time::Instant::now();
        match dpp_value_iteration(&spec, &grid, &mask, &dpp_cfg, &cfg) {
            Ok(r) => {
                let diff = mask
                    .interior()
                    .iter()
                    .map(|&i| (r.solution[i as usize] - sweep.solution[i as usize]).abs())
                    .fold(0.0f64, f64::max);
                println!(
                    "dpp tol={tol:.0e}: sweeps={} sup|dpp-sweep|={diff:.3e} [{:?}]",
                    r.sweeps_used,
                    t0.elapsed()
                );
            }
            Err(hjb::Error::NoConvergence { sweeps, residual, .. }) => {
                println!("dpp tol={tol:.0e}: NO CONV sweeps={sweeps} rate-res={residual:.3e} [{:?}]", t0.elapsed())
            }
            Err(e) => println!("dpp tol={tol:.0e}: {e}"),
        }
    }
}
