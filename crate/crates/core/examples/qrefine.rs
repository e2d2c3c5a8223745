//! Paired runs on a near-singular element with and without quadrature refinement.

use homesh::fixtures::undersampled_element;
use homesh::solver::{optimize, QRefineConfig, SolverConfig};
use homesh::tmop::{objective, MetricSpec, TargetSpec};

fn main() {
    let m = undersampled_element().near_singular;
    let target = TargetSpec::from_mesh(&m);
    for enabled in [false, true] {
        let cfg = SolverConfig { qrefine: QRefineConfig { enabled, ..QRefineConfig::default() }, ..SolverConfig::default() };
        let r = optimize(&m, MetricSpec::Mu2, target, &cfg).unwrap();
        let f400 = objective(&r.mesh, &MetricSpec::Mu2, &target, &[400]).unwrap();
        println!(
            "q-refinement {}: F {:.6e} (order-400 rule {:.6e}), final orders {:?}, order history {:?}",
            if enabled { "on " } else { "off" },
            r.trace.final_f().unwrap(),
            f400,
            r.trace.quad_orders,
            r.trace.order_history.iter().map(|o| o[0]).collect::<Vec<_>>()
        );
    }
}
