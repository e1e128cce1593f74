//! Wrap an exact denoiser so that call k is off by exactly ε_k, and watch
//! the iteration's stationarity measure under each schedule.

use prsans::priors::GmmPrior;
use prsans::theory::grad_objective;
use prsans::{pr_sans_solve, Dims, EpsilonSchedule, PriorHandle, SolveConfig, TraceLevel};

fn main() -> prsans::Result<()> {
    let gmm = GmmPrior::new(vec![0.5, 0.5], vec![vec![-1.0], vec![1.0]], vec![0.1, 0.1])?;
    let sigma = 0.4;
    let y = [0.25];
    let cfg = SolveConfig {
        gamma: 0.3,
        max_iter: 200,
        trace_level: TraceLevel::Full,
        ..SolveConfig::default()
    };
    for spec in ["zero", "pow:0.05:1", "const:0.05"] {
        let schedule: EpsilonSchedule = spec.parse()?;
        let mut prior = PriorHandle::gmm(gmm.clone(), sigma)?.inexact(schedule, 3)?;
        let (x, _) = pr_sans_solve(&y, &mut prior, &cfg, None, Dims::flat(1))?;
        let g = grad_objective(&x, &y, &gmm, sigma, cfg.tau)?;
        println!("{spec:>11}: x = {:.6}, |grad f(x)| = {:.3e}", x[0], g[0].abs());
    }
    Ok(())
}
