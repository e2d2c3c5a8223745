//! Closest points on the arc of the plate-with-hole mesh.

use homesh::fixtures::{circle_plate, ARC_ATTR};
use homesh::mesh::extract_boundary;
use homesh::tangential::closest_point;

fn main() {
    let m = circle_plate(3, 6, 2);
    let curve = extract_boundary(&m, &[ARC_ATTR]).unwrap();
    for x in [[0.6, 0.1], [0.2, 0.2], [0.0, 0.9], [0.35355, 0.35355]] {
        let p = closest_point(&curve, x);
        let r = (p.point[0].powi(2) + p.point[1].powi(2)).sqrt();
        println!("{x:?} -> ({:.6}, {:.6}) on segment {} at t = {:+.4}, distance {:.4e}, radius {r:.6}", p.point[0], p.point[1], p.segment, p.t, p.residual.sqrt());
    }
}
