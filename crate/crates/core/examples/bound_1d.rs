//! Piecewise-linear bounds of a degree-4 polynomial for two control-node counts.

use homesh::basis::gll_nodes;
use homesh::bounds::{bound_function_1d, build_bound_table};

fn main() {
    let u = [-1.346, -0.311, 0.063, 1.485, 1.114];
    let ns = gll_nodes(4).unwrap();
    for m in [6, 10] {
        let table = build_bound_table(4, m).unwrap();
        let b = bound_function_1d(&table, &u).unwrap();
        println!("M = {m}: certified range [{:.6}, {:.6}], mean gap {:.6}", b.min_lower(), b.max_upper(), b.mean_gap());
        for ((x, l), h) in b.control_nodes.iter().zip(&b.lower).zip(&b.upper) {
            println!("  eta {x:+.4}  lower {l:+.6}  u {:+.6}  upper {h:+.6}", ns.interpolate(&u, *x));
        }
    }
    let xs: Vec<f64> = (0..=10000).map(|k| -1.0 + 2e-4 * k as f64).collect();
    let exact = xs.iter().map(|&x| ns.interpolate(&u, x)).fold(f64::INFINITY, f64::min);
    println!("sampled min of u: {exact:.6}");
}
