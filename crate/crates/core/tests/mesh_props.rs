//! Mesh file format, element maps and boundary extraction.

use homesh::fixtures;
use homesh::mesh::{edge_reference_point, extract_boundary, Mesh, MeshError};
use proptest::prelude::*;

#[test]
fn malformed_json_reports_location() {
    let err = Mesh::from_json_str("{\"dim\": 2,\n \"order\": 1,\n \"nodes\": [[0, 0],, ]}").unwrap_err();
    match err {
        MeshError::Json { line, .. } => assert_eq!(line, 3),
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn dangling_index_names_the_element() {
    let mut m = fixtures::unit_square(2, 1);
    m.elements[3][2] = 99;
    let text = m.to_json_string();
    let msg = Mesh::from_json_str(&text).unwrap_err().to_string();
    assert!(msg.contains("element 3") && msg.contains("99"), "{msg}");
}

#[test]
fn save_and_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = fixtures::circle_plate(3, 6, 3);
    let path = dir.path().join("plate.json");
    m.save(&path).unwrap();
    assert_eq!(Mesh::load(&path).unwrap(), m);
    assert!(matches!(Mesh::load(dir.path().join("missing.json")), Err(MeshError::Io { .. })));
}

#[test]
fn boundary_curve_is_a_frozen_copy() {
    let mut m = fixtures::circle_plate(3, 6, 2);
    let curve = extract_boundary(&m, &[fixtures::ARC_ATTR]).unwrap();
    let before = curve.clone();
    let print = curve.fingerprint();
    for x in m.nodes.iter_mut() {
        x[0] *= 1.1;
    }
    assert_eq!(curve, before);
    assert_eq!(curve.fingerprint(), print);
    assert_ne!(extract_boundary(&m, &[fixtures::ARC_ATTR]).unwrap().fingerprint(), print);
}

/// Shared edges as (element, edge, neighbour, neighbour edge, same direction).
fn shared_edges(nx: usize, ny: usize) -> Vec<(usize, usize, usize, usize)> {
    let mut out = Vec::new();
    for ey in 0..ny {
        for ex in 0..nx {
            let e = ey * nx + ex;
            if ex + 1 < nx {
                out.push((e, 1, e + 1, 3));
            }
            if ey + 1 < ny {
                out.push((e, 2, e + nx, 0));
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn json_round_trip_is_exact(p in 1usize..=5, seed in 0u64..1000) {
        let m = fixtures::perturbed_square(3, p, 0.2, seed);
        let back = Mesh::from_json_str(&m.to_json_string()).unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn shared_edges_agree(p in 1usize..=5, seed in 0u64..1000) {
        let m = fixtures::curved_square(3, p, seed);
        for (a, ea, b, eb) in shared_edges(3, 3) {
            for k in 0..20 {
                let s = -1.0 + 2.0 * k as f64 / 19.0;
                let (xa, xb) = (m.position(a, edge_reference_point(ea, s)), m.position(b, edge_reference_point(eb, s)));
                prop_assert!((xa[0] - xb[0]).abs() < 1e-12 && (xa[1] - xb[1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn jacobian_matches_position_differences(p in 1usize..=6, seed in 0u64..1000, s in -0.99f64..0.99, t in -0.99f64..0.99) {
        let m = fixtures::curved_square(2, p, seed);
        let h = 1e-6;
        for e in 0..m.num_elements() {
            let a = m.jacobian(e, [s, t]);
            let (xp, xm) = (m.position(e, [s + h, t]), m.position(e, [s - h, t]));
            let (yp, ym) = (m.position(e, [s, t + h]), m.position(e, [s, t - h]));
            let scale = a.abs().max();
            for c in 0..2 {
                prop_assert!(((xp[c] - xm[c]) / (2.0 * h) - a[(c, 0)]).abs() <= 1e-6 * scale);
                prop_assert!(((yp[c] - ym[c]) / (2.0 * h) - a[(c, 1)]).abs() <= 1e-6 * scale);
            }
        }
    }
}
