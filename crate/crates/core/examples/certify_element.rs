//! Certify the undersampled order-4 element: quadrature sampling says valid,
//! the certified bounds find the inverted region.

use homesh::fixtures::undersampled_element;
use homesh::solver::{check_validity, ValidityMode};
use homesh::validity::{self, CertifyConfig};

fn main() {
    let u = undersampled_element();
    let m = &u.tangled;
    println!("perturbation scale: dense crossing {:.5}, order-10 crossing {:.5}", u.scale_dense, u.scale_sampled);
    println!("min det at order-10 GLL points: {:.6e}", validity::sampled_min_det_element(m, 0, 10));
    println!("min det on a 301 x 301 grid:    {:.6e}", validity::dense_min_det(m, 0, 301));
    for mode in [ValidityMode::QuadratureSamples, ValidityMode::CertifiedBounds] {
        let ok = check_validity(m, &[10], mode, &CertifyConfig::default()).is_some();
        println!("{mode:?}: {}", if ok { "accepted" } else { "rejected" });
    }
    let c = validity::certify_element(m, 0, validity::default_control_nodes(4), 6, 10).unwrap();
    println!("verdict {:?} at depth {}, det bounded within [{:.6e}, {:.6e}] somewhere below zero", c.verdict, c.depth_used, c.lower, c.upper);
}
