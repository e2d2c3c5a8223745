//! Compare lower bounds on det(A) from piecewise-linear envelopes and from
//! Bernstein coefficients on randomly perturbed elements.

use homesh::fixtures::perturbed_square;
use homesh::validity::{bernstein_det_lower, default_control_nodes, det_degree, det_nodal_values};
use homesh::bounds::{bound_function_2d, build_bound_table};

fn main() {
    for p in 2..=4 {
        let table = build_bound_table(det_degree(p), default_control_nodes(p)).unwrap();
        let (mut wins, mut gap_lin, mut gap_bern) = (0, 0.0, 0.0);
        for seed in 0..100 {
            let m = perturbed_square(1, p, 0.4, seed);
            let vals = det_nodal_values(&m, 0);
            let lin = bound_function_2d(&table, &vals).unwrap().min_lower();
            let bern = bernstein_det_lower(&m, 0).unwrap();
            let exact = homesh::validity::dense_min_det(&m, 0, 201);
            wins += usize::from(lin > bern);
            gap_lin += exact - lin;
            gap_bern += exact - bern;
        }
        println!("p = {p}: linear bound tighter in {wins}/100, mean gap {:.3e} vs Bernstein {:.3e}", gap_lin / 100.0, gap_bern / 100.0);
    }
}
