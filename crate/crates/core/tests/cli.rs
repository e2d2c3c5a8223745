//! End-to-end runs of the command-line front end, in process.

use homesh::cli::{self, EXIT_IO, EXIT_NEGATIVE, EXIT_OK, EXIT_UNDECIDED};
use homesh::fixtures::{self, ARC_ATTR};
use homesh::mesh::{classify_nodes, extract_boundary, Mesh, NodeClass};
use homesh::tangential::closest_point_on_attr;
use serde_json::Value;
use std::path::{Path, PathBuf};

struct Work {
    dir: tempfile::TempDir,
}

impl Work {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fixtures::write_all(dir.path()).unwrap();
        Work { dir }
    }
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
    fn s(&self, name: &str) -> String {
        self.path(name).to_str().unwrap().to_string()
    }
    fn run(&self, args: &[&str]) -> i32 {
        cli::run(std::iter::once("homesh").chain(args.iter().copied()))
    }
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&read(&dir.join("manifest.json"))).unwrap()
}

#[test]
fn check_exit_codes_follow_the_verdict() {
    let w = Work::new();
    for (mesh, extra, code) in [
        ("unit_square_q2.json", vec![], EXIT_OK),
        ("folded_corner_p2.json", vec![], EXIT_NEGATIVE),
        ("undersampled_p4.json", vec![], EXIT_NEGATIVE),
        ("near_singular_p4.json", vec![], EXIT_OK),
        ("near_singular_p4.json", vec!["--max-depth", "0"], EXIT_UNDECIDED),
    ] {
        let out = w.s(&format!("check-{mesh}-{}", extra.len()));
        let m = w.s(mesh);
        let mut args = vec!["check", m.as_str(), "--out", out.as_str()];
        args.extend(extra.iter().copied());
        assert_eq!(w.run(&args), code, "{mesh} {extra:?}");
        let man = manifest(Path::new(&out));
        assert_eq!(man["exit_code"], code);
        let csv = read(&Path::new(&out).join("check.csv"));
        assert!(csv.starts_with("elem,alpha_lb,alpha_qpmin,verdict,depth\n"));
    }
}

#[test]
fn unreadable_inputs_exit_with_io_code() {
    let w = Work::new();
    let out = w.s("o");
    assert_eq!(w.run(&["check", &w.s("missing.json"), "--out", &out]), EXIT_IO);
    std::fs::write(w.path("bad.json"), "{\n  \"order\": 2,\n  \"nodes\": [oops]\n}").unwrap();
    assert_eq!(w.run(&["check", &w.s("bad.json"), "--out", &out]), EXIT_IO);
    assert_eq!(w.run(&["check", &w.s("unit_square_q2.json"), "--no-such-flag"]), EXIT_IO);
    std::fs::write(w.path("cfg.json"), "{\"eps_konv\": 1}").unwrap();
    assert_eq!(w.run(&["check", &w.s("unit_square_q2.json"), "--out", &out, "--config", &w.s("cfg.json")]), EXIT_IO);
}

#[test]
fn optimize_is_reproducible_and_replayable_from_its_manifest() {
    let w = Work::new();
    let mesh = w.s("perturbed_square_q2.json");
    let (a, b, c) = (w.s("a"), w.s("b"), w.s("c"));
    assert_eq!(w.run(&["optimize", &mesh, "--out", &a, "--max-iters", "15"]), EXIT_OK);
    assert_eq!(w.run(&["optimize", &mesh, "--out", &b, "--max-iters", "15"]), EXIT_OK);
    let replay = w.s("a/manifest.json");
    assert_eq!(w.run(&["optimize", &mesh, "--out", &c, "--config", &replay]), EXIT_OK);
    for f in ["trace.csv", "check.csv", "mesh.json"] {
        let ra = read(&Path::new(&a).join(f));
        assert_eq!(ra, read(&Path::new(&b).join(f)), "{f}");
        assert_eq!(ra, read(&Path::new(&c).join(f)), "{f} replayed");
    }
    let man = manifest(Path::new(&a));
    let cfg = &man["config"];
    assert_eq!(man["subcommand"], "optimize");
    assert_eq!(cfg["max_iters"], 15);
    for key in ["metric", "validity", "mode", "eps_conv", "order_quad", "control_nodes", "max_depth", "zeta", "qrefine"] {
        assert!(!cfg[key].is_null(), "{key} not materialized");
    }
    for key in ["trace", "mesh", "report", "manifest"] {
        assert!(man["outputs"][key].is_string(), "{key}");
    }
}

#[test]
fn flags_override_the_config_file() {
    let w = Work::new();
    std::fs::write(w.path("cfg.json"), "{\"metric\": \"mu80:0.5\", \"max_iters\": 3, \"qrefine\": false}").unwrap();
    let out = w.s("o");
    let code = w.run(&[
        "optimize", &w.s("perturbed_square_q2.json"), "--out", &out, "--config", &w.s("cfg.json"),
        "--max-iters", "4", "--qrefine", "--eps-q", "5.0", "--max-quad-order", "400",
    ]);
    assert_eq!(code, EXIT_OK);
    let cfg = &manifest(Path::new(&out))["config"];
    assert_eq!(cfg["max_iters"], 4);
    assert_eq!(cfg["qrefine"], true);
    assert_eq!(cfg["eps_q"], 5.0);
    assert_eq!(cfg["max_quad_order"], 400);
    assert!(cfg["metric"].as_str().unwrap().starts_with("mu80"));
}

#[test]
fn optimizing_an_ideal_mesh_changes_nothing() {
    let w = Work::new();
    let out = w.s("o");
    assert_eq!(w.run(&["optimize", &w.s("unit_square_q2.json"), "--out", &out]), EXIT_OK);
    let trace = read(&Path::new(&out).join("trace.csv"));
    assert_eq!(trace.lines().count(), 2, "{trace}");
    let before = Mesh::load(&w.path("unit_square_q2.json")).unwrap();
    let after = Mesh::load(&Path::new(&out).join("mesh.json")).unwrap();
    assert_eq!(before, after);
}

#[test]
fn bounds_of_the_reference_polynomial_are_sound() {
    let w = Work::new();
    let out = w.s("o");
    assert_eq!(w.run(&["bounds", "--p", "4", "--coeffs", "-1.346,-0.311,0.063,1.485,1.114", "--M", "6", "--out", &out]), EXIT_OK);
    let csv = read(&Path::new(&out).join("bounds.csv"));
    let rows: Vec<Vec<f64>> = csv.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 6);
    let ns = homesh::basis::gll_nodes(4).unwrap();
    let u = [-1.346, -0.311, 0.063, 1.485, 1.114];
    for r in &rows {
        let v = ns.interpolate(&u, r[0]);
        assert!(r[1] <= v && v <= r[2], "{r:?} vs {v}");
    }
    assert!(read(&Path::new(&out).join("summary.csv")).starts_with("certified_min,certified_max,mean_gap\n"));
    assert_eq!(w.run(&["bounds", "--p", "4", "--coeffs", "1,2,3", "--out", &out]), EXIT_IO);
}

#[test]
fn projecting_curve_points_gives_zero_residual() {
    let w = Work::new();
    let m = Mesh::load(&w.path("circle_plate_q2.json")).unwrap();
    let classes = classify_nodes(&m, &[ARC_ATTR]);
    let mut pts = String::from("x,y\n");
    for (x, c) in m.nodes.iter().zip(&classes) {
        if matches!(c, NodeClass::TangentialBoundary(_)) {
            pts.push_str(&format!("{:e},{:e}\n", x[0], x[1]));
        }
    }
    std::fs::write(w.path("pts.csv"), &pts).unwrap();
    let out = w.s("o");
    assert_eq!(w.run(&["project", &w.s("circle_plate_q2.json"), &w.s("pts.csv"), "--out", &out, "--tangential-attrs", "5"]), EXIT_OK);
    let csv = read(&Path::new(&out).join("projections.csv"));
    assert_eq!(csv.lines().count(), pts.lines().count());
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[4], "5");
        assert!(f[7].parse::<f64>().unwrap() <= 1e-12, "{line}");
    }
}

#[test]
fn untangle_repairs_the_fold() {
    let w = Work::new();
    let out = w.s("u");
    assert_eq!(w.run(&["untangle", &w.s("folded_corner_p2.json"), "--out", &out]), EXIT_OK);
    let fixed = Path::new(&out).join("mesh.json");
    assert_eq!(w.run(&["check", fixed.to_str().unwrap(), "--out", &w.s("c")]), EXIT_OK);
    let out2 = w.s("ou");
    assert_eq!(w.run(&["optimize", &w.s("folded_corner_p1.json"), "--untangle-first", "--out", &out2]), EXIT_OK);
    assert!(Path::new(&out2).join("untangle_trace.csv").exists());
}

#[test]
fn sliding_nodes_stay_on_the_arc() {
    let w = Work::new();
    let out = w.s("o");
    assert_eq!(w.run(&["optimize", &w.s("circle_plate_q2.json"), "--tangential-attrs", "5", "--out", &out]), EXIT_OK);
    let before = Mesh::load(&w.path("circle_plate_q2.json")).unwrap();
    let after = Mesh::load(&Path::new(&out).join("mesh.json")).unwrap();
    let curve = extract_boundary(&before, &[ARC_ATTR]).unwrap();
    let classes = classify_nodes(&before, &[ARC_ATTR]);
    let mut slid = 0;
    for ((a, b), c) in after.nodes.iter().zip(&before.nodes).zip(&classes) {
        match c {
            NodeClass::TangentialBoundary(_) => {
                assert!(closest_point_on_attr(&curve, *a, ARC_ATTR).unwrap().residual.sqrt() <= 1e-10);
                slid += (a != b) as usize;
            }
            NodeClass::Corner | NodeClass::FixedBoundary => assert_eq!(a, b),
            NodeClass::Interior => {}
        }
    }
    assert!(slid > 0);
}
