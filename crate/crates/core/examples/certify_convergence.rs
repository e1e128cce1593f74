//! Certify the averaged-gradient bound for an inexact denoiser on a random
//! Gaussian-mixture problem, for three error schedules.

use prsans::theory::{certify_convergence, CertifyConfig, Problem};
use prsans::EpsilonSchedule;

fn main() -> prsans::Result<()> {
    let problem = Problem::random(4, 3, 0.5, 11)?;
    let cfg = CertifyConfig {
        max_iter: 300,
        ..CertifyConfig::default()
    };
    for spec in ["zero", "pow:0.1:1", "const:0.1"] {
        let schedule: EpsilonSchedule = spec.parse()?;
        let r = certify_convergence(&problem, &schedule, &cfg)?;
        println!(
            "{spec:>10}: passed={} gamma={:.4} M={:.3} B1={:.3} B2={:.3} min|grad f|^2={:.3e}",
            r.passed(),
            r.constants.gamma,
            r.constants.m,
            r.constants.b1,
            r.constants.b2,
            r.final_min_grad_sq()
        );
    }
    Ok(())
}
