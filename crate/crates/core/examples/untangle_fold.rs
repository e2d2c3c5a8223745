//! Untangle the folded L-corner meshes with the certified shifted barrier.

use homesh::fixtures::folded_l_corner;
use homesh::solver::{untangle, SolverConfig};
use homesh::validity::{certify_mesh, CertifyConfig};

fn main() {
    for p in 1..=3 {
        let m = folded_l_corner(p);
        let before = certify_mesh(&m, &vec![10; m.num_elements()], &CertifyConfig::default()).unwrap();
        match untangle(&m, &SolverConfig::default()) {
            Ok(r) => {
                let last = r.trace.records.last().unwrap();
                println!(
                    "p = {p}: lower bound {:.4e} -> {:.4e} in {} iterations, inverted before {:?}",
                    before.alpha_lower, last.alpha_lower, r.trace.accepted(), before.inverted()
                );
                for rec in &r.trace.records {
                    println!("    it {:3}  F {:.4e}  alpha_lb {:+.4e}  tau_b {:+.4e}", rec.iteration, rec.f, rec.alpha_lower, rec.tau_b);
                }
            }
            Err(e) => println!("p = {p}: {e}"),
        }
    }
}
