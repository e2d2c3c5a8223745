//! Optimize a perturbed 4x4 Q2 square with certified validity, in BFGS and Newton mode.

use homesh::fixtures::perturbed_square;
use homesh::solver::{optimize, SolverConfig, StepMode};
use homesh::tmop::{MetricSpec, TargetSpec};

fn main() {
    let m = perturbed_square(4, 2, 0.15, 7);
    let target = TargetSpec::from_mesh(&m);
    for (mode, metric) in [(StepMode::Bfgs, MetricSpec::Mu2), (StepMode::Newton, MetricSpec::Mu2), (StepMode::Bfgs, MetricSpec::Nu49 { gamma: 0.4 })] {
        let cfg = SolverConfig { mode, ..SolverConfig::default() };
        let r = optimize(&m, metric, target, &cfg).unwrap();
        let t = &r.trace;
        let min_alpha = t.records.iter().map(|r| r.alpha_lower).fold(f64::INFINITY, f64::min);
        println!(
            "{mode:?} {metric}: F {:.4e} -> {:.4e}, |J|/|J0| {:.2e}, {} iterations, {:?}, smallest certified det {:.4e}",
            t.records[0].f,
            t.final_f().unwrap(),
            t.relative_gradient().unwrap(),
            t.accepted(),
            t.termination.unwrap(),
            min_alpha
        );
    }
}
