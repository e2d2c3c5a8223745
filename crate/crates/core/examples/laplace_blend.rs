//! Harmonic extension of a boundary displacement into the interior.

use homesh::fixtures::unit_square;
use homesh::mesh::classify_nodes;
use homesh::tangential::laplace_blend;

fn main() {
    let m = unit_square(4, 3);
    let classes = classify_nodes(&m, &[]);
    // linear data on the boundary: the blend reproduces it everywhere
    let disp: Vec<[f64; 2]> = m.nodes.iter().map(|x| [0.1 * x[0] - 0.05 * x[1], 0.02 + 0.03 * x[0]]).collect();
    let field = laplace_blend(&m, &disp, &classes, 1e-12).unwrap();
    let err = field.displacement.iter().zip(&disp).map(|(a, b)| (a[0] - b[0]).abs().max((a[1] - b[1]).abs())).fold(0.0, f64::max);
    println!("{} nodes, {} CG iterations, max deviation from the linear field {err:.2e}", m.num_nodes(), field.iterations);
}
