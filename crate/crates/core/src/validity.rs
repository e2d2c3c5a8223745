//! Certified and sampled Jacobian-determinant checks.
//!
//! For an order-`p` quadrilateral the determinant of the element map is a
//! polynomial of degree `2p - 1` in each reference direction, so its values on
//! the `(2p)^2` GLL lattice of that degree represent it exactly and can be fed
//! to the piecewise-linear bounds.

use rayon::prelude::*;
use serde::Serialize;

use crate::basis;
use crate::bounds::{self, BoundsError, Verdict};
use crate::mesh::Mesh;

/// Default subdivision depth for element certification.
pub const DEFAULT_MAX_DEPTH: usize = 6;

/// Relative allowance for floating-point error in evaluated determinants.
pub const DET_ROUNDING: f64 = 64.0 * f64::EPSILON;

/// Per-direction degree of the determinant of an order-`p` map.
pub fn det_degree(p: usize) -> usize {
    2 * p - 1
}

/// Default control-node count for determinant bounds: twice the lattice size.
pub fn default_control_nodes(p: usize) -> usize {
    2 * (det_degree(p) + 1)
}

/// det(A) of element `e` at the GLL lattice of degree `2p - 1`, x fastest.
pub fn det_nodal_values(mesh: &Mesh, e: usize) -> Vec<f64> {
    let ns = basis::gll_nodes(det_degree(mesh.order)).expect("degree at least 1");
    mesh.jacobians_on_lattice(e, ns.nodes(), ns.nodes()).iter().map(|a| a.determinant()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ElementCertificate {
    pub elem: usize,
    /// certified lower bound on min det(A)
    pub lower: f64,
    /// smallest certified upper bound found at a control node
    pub upper: f64,
    pub verdict: Verdict,
    pub depth_used: usize,
    /// min det(A) over the element's quadrature points
    pub sampled_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeshCertificate {
    pub elements: Vec<ElementCertificate>,
    /// min over elements of the certified lower bound
    pub alpha_lower: f64,
    /// min of det(A) over all quadrature points
    pub sampled_min: f64,
}

impl MeshCertificate {
    pub fn all_positive(&self) -> bool {
        self.elements.iter().all(|c| c.verdict == Verdict::Positive)
    }

    pub fn inverted(&self) -> Vec<usize> {
        self.elements.iter().filter(|c| c.verdict == Verdict::Negative).map(|c| c.elem).collect()
    }

    pub fn undecided(&self) -> Vec<usize> {
        self.elements.iter().filter(|c| c.verdict == Verdict::Undecided).map(|c| c.elem).collect()
    }

    /// Negative if any element is inverted, else Undecided if any is open, else Positive.
    pub fn verdict(&self) -> Verdict {
        if self.elements.iter().any(|c| c.verdict == Verdict::Negative) {
            Verdict::Negative
        } else if self.elements.iter().any(|c| c.verdict == Verdict::Undecided) {
            Verdict::Undecided
        } else {
            Verdict::Positive
        }
    }

    pub fn lower_bounds(&self) -> Vec<f64> {
        self.elements.iter().map(|c| c.lower).collect()
    }
}

/// Settings for certification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CertifyConfig {
    /// control nodes per direction; `None` picks [`default_control_nodes`]
    pub control_nodes: Option<usize>,
    pub max_depth: usize,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        CertifyConfig { control_nodes: None, max_depth: DEFAULT_MAX_DEPTH }
    }
}

impl CertifyConfig {
    pub fn control_nodes_for(&self, p: usize) -> usize {
        self.control_nodes.unwrap_or_else(|| default_control_nodes(p)).max(det_degree(p) + 1)
    }
}

/// Minimum of det(A) over the tensor GLL rule of exactness `quad_order`.
pub fn sampled_min_det_element(mesh: &Mesh, e: usize, quad_order: usize) -> f64 {
    let rule = basis::gll_quadrature(quad_order);
    mesh.jacobians_on_lattice(e, &rule.points, &rule.points)
        .iter()
        .map(|a| a.determinant())
        .fold(f64::INFINITY, f64::min)
}

/// Minimum of det(A) over every element's quadrature points.
pub fn sampled_min_det(mesh: &Mesh, quad_orders: &[usize]) -> f64 {
    assert_eq!(quad_orders.len(), mesh.num_elements());
    let mins: Vec<f64> = (0..mesh.num_elements())
        .into_par_iter()
        .map(|e| sampled_min_det_element(mesh, e, quad_orders[e]))
        .collect();
    mins.into_iter().fold(f64::INFINITY, f64::min)
}

/// Minimum of det(A) on a uniform `n x n` sample of the reference square.
pub fn dense_min_det(mesh: &Mesh, e: usize, n: usize) -> f64 {
    let pts: Vec<f64> = (0..n).map(|k| -1.0 + 2.0 * k as f64 / (n - 1) as f64).collect();
    let ns = basis::gll_nodes(det_degree(mesh.order)).expect("degree at least 1");
    let vals = det_nodal_values(mesh, e);
    basis::tensor_resample(&ns, &vals, &pts, &pts).into_iter().fold(f64::INFINITY, f64::min)
}

/// Certify det(A) > 0 on element `e` with `m` control nodes and subdivision up to `max_depth`.
pub fn certify_element(mesh: &Mesh, e: usize, m: usize, max_depth: usize, quad_order: usize) -> Result<ElementCertificate, BoundsError> {
    let table = bounds::build_bound_table(det_degree(mesh.order), m)?;
    let vals = det_nodal_values(mesh, e);
    let cert = bounds::certify_sign(&table, &vals, max_depth)?;
    // det(A) itself carries rounding from the Jacobian evaluation; widen the
    // reported bound by that much so it stays below any sampled value.
    let slack = DET_ROUNDING * vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let lower = cert.certified_lower - slack;
    let verdict = match cert.verdict {
        Verdict::Positive if lower <= 0.0 => Verdict::Undecided,
        v => v,
    };
    Ok(ElementCertificate {
        elem: e,
        lower,
        upper: cert.certified_upper,
        verdict,
        depth_used: cert.depth_used,
        sampled_min: sampled_min_det_element(mesh, e, quad_order),
    })
}

/// Certify every element; element work runs in parallel, reductions are sequential.
pub fn certify_mesh(mesh: &Mesh, quad_orders: &[usize], cfg: &CertifyConfig) -> Result<MeshCertificate, BoundsError> {
    assert_eq!(quad_orders.len(), mesh.num_elements());
    let m = cfg.control_nodes_for(mesh.order);
    let elements = (0..mesh.num_elements())
        .into_par_iter()
        .map(|e| certify_element(mesh, e, m, cfg.max_depth, quad_orders[e]))
        .collect::<Result<Vec<_>, _>>()?;
    let alpha_lower = elements.iter().map(|c| c.lower).fold(f64::INFINITY, f64::min);
    let sampled_min = elements.iter().map(|c| c.sampled_min).fold(f64::INFINITY, f64::min);
    Ok(MeshCertificate { elements, alpha_lower, sampled_min })
}

/// Bernstein lower bound on det(A) for element `e`.
pub fn bernstein_det_lower(mesh: &Mesh, e: usize) -> Result<f64, BoundsError> {
    bounds::bernstein_lower_bound(&det_nodal_values(mesh, e), det_degree(mesh.order))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn affine_element_has_constant_det() {
        let m = Mesh::structured(1, 1, 3, [1, 1, 1, 1], |x, y| [2.0 * x + 0.5 * y, 0.3 * x + y]);
        let vals = det_nodal_values(&m, 0);
        let expect = (2.0 * 1.0 - 0.5 * 0.3) / 4.0;
        assert!(vals.iter().all(|v| (v - expect).abs() < 1e-14));
        let c = certify_element(&m, 0, default_control_nodes(3), 6, 10).unwrap();
        assert_eq!(c.verdict, Verdict::Positive);
        assert!((c.lower - expect).abs() < 1e-13);
    }

    #[test]
    fn bilinear_det_matches_corner_formula() {
        // corners (0,0), (1,0), (0,1), (1.4,1.2)
        let m = Mesh::new(1, vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.4, 1.2]], vec![vec![0, 1, 2, 3]], vec![]).unwrap();
        let vals = det_nodal_values(&m, 0);
        let (x, y) = ([0.0, 1.0, 0.0, 1.4], [0.0, 0.0, 1.0, 1.2]);
        for (k, &(s, t)) in [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)].iter().enumerate() {
            let xs = 0.25 * ((x[1] - x[0]) * (1.0 - t) + (x[3] - x[2]) * (1.0 + t));
            let ys = 0.25 * ((y[1] - y[0]) * (1.0 - t) + (y[3] - y[2]) * (1.0 + t));
            let xt = 0.25 * ((x[2] - x[0]) * (1.0 - s) + (x[3] - x[1]) * (1.0 + s));
            let yt = 0.25 * ((y[2] - y[0]) * (1.0 - s) + (y[3] - y[1]) * (1.0 + s));
            assert!((vals[k] - (xs * yt - xt * ys)).abs() < 1e-14);
        }
    }

    #[test]
    fn det_interpolant_matches_direct_evaluation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut m = Mesh::structured(1, 1, 4, [1, 1, 1, 1], |x, y| [x, y]);
        for x in m.nodes.iter_mut() {
            x[0] += rng.gen_range(-0.03..0.03);
            x[1] += rng.gen_range(-0.03..0.03);
        }
        let ns = basis::gll_nodes(det_degree(4)).unwrap();
        let vals = det_nodal_values(&m, 0);
        for _ in 0..100 {
            let (s, t) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let direct = m.jacobian(0, [s, t]).determinant();
            assert!((basis::tensor_eval(&ns, &vals, s, t) - direct).abs() < 1e-10);
        }
    }

    #[test]
    fn pulled_node_inverts_element() {
        let mut m = Mesh::structured(1, 1, 2, [1, 1, 1, 1], |x, y| [x, y]);
        // top-middle node dragged below the bottom edge
        m.nodes[7] = [0.5, -0.4];
        assert!(dense_min_det(&m, 0, 100) < 0.0);
        let c = certify_element(&m, 0, default_control_nodes(2), 6, 10).unwrap();
        assert_eq!(c.verdict, Verdict::Negative);
        assert!(c.upper < 0.0);
    }

    #[test]
    fn square_grid_samples_quarter_h_squared() {
        let m = Mesh::structured(3, 3, 2, [1, 1, 1, 1], |x, y| [x, y]);
        let h = 1.0 / 3.0;
        assert!((sampled_min_det(&m, &[10; 9]) - h * h / 4.0).abs() < 1e-15);
        let cert = certify_mesh(&m, &[10; 9], &CertifyConfig::default()).unwrap();
        assert!(cert.all_positive());
        assert!(cert.alpha_lower <= cert.sampled_min);
    }
}
