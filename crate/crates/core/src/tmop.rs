//! Target-matrix quality metrics and the global mesh objective.
//!
//! With `A` the Jacobian of the element map and `W` the target matrix, the
//! metrics act on `T = A W^-1`. The objective integrates `omega * mu(T)` over
//! the reference square with a GLL rule chosen per element.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::Matrix2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis;
use crate::mesh::{Mesh, NodeClass};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TmopError {
    #[error("det(T) = {tau:.6e} is not positive")]
    NonPositiveDet { tau: f64 },
    #[error("barrier violated: det(T) = {tau:.6e} <= tau_b = {tau_b:.6e}")]
    BarrierViolated { tau: f64, tau_b: f64 },
    #[error("degenerate skewness: Jacobian columns are parallel or vanish")]
    DegenerateSkew,
    #[error("target matrix must have positive determinant")]
    SingularTarget,
    #[error("unknown metric {0:?}")]
    UnknownMetric(String),
    #[error("metric weight gamma = {0} is outside [0, 1]")]
    BadGamma(f64),
}

/// Quality metric selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MetricSpec {
    /// shape: |T|^2 / (2 det T) - 1
    Mu2,
    /// size: (det T - 1/det T)^2 / 2
    Mu77,
    /// gamma mu2 + (1 - gamma) mu77
    Mu80 { gamma: f64 },
    /// |T|^2 - 2 det T
    Mu4NonBarrier,
    /// skewness mismatch between A and W
    Nu50,
    /// gamma mu2 + (1 - gamma) nu50
    Nu49 { gamma: f64 },
    /// (|T|^2 - 2 det T) / (2 (det T - tau_b))
    ShiftedBarrier { tau_b: f64 },
}

impl MetricSpec {
    pub fn validate(&self) -> Result<(), TmopError> {
        match *self {
            MetricSpec::Mu80 { gamma } | MetricSpec::Nu49 { gamma } if !(0.0..=1.0).contains(&gamma) => Err(TmopError::BadGamma(gamma)),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for MetricSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricSpec::Mu2 => write!(f, "mu2"),
            MetricSpec::Mu77 => write!(f, "mu77"),
            MetricSpec::Mu80 { gamma } => write!(f, "mu80:{gamma}"),
            MetricSpec::Mu4NonBarrier => write!(f, "mu4"),
            MetricSpec::Nu50 => write!(f, "nu50"),
            MetricSpec::Nu49 { gamma } => write!(f, "nu49:{gamma}"),
            MetricSpec::ShiftedBarrier { tau_b } if *tau_b == 0.0 => write!(f, "mu4sb"),
            MetricSpec::ShiftedBarrier { tau_b } => write!(f, "mu4sb:{tau_b}"),
        }
    }
}

impl FromStr for MetricSpec {
    type Err = TmopError;

    /// Accepts `mu2`, `mu77`, `mu80:g`, `mu4`, `mu4sb[:tau_b]`, `nu50`, `nu49:g`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || TmopError::UnknownMetric(s.to_string());
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a.parse::<f64>().map_err(|_| bad())?)),
            None => (s, None),
        };
        let spec = match (name, arg) {
            ("mu2", None) => MetricSpec::Mu2,
            ("mu77", None) => MetricSpec::Mu77,
            ("mu80", Some(gamma)) => MetricSpec::Mu80 { gamma },
            ("mu4", None) => MetricSpec::Mu4NonBarrier,
            ("mu4sb", tau_b) => MetricSpec::ShiftedBarrier { tau_b: tau_b.unwrap_or(0.0) },
            ("nu50", None) => MetricSpec::Nu50,
            ("nu49", Some(gamma)) => MetricSpec::Nu49 { gamma },
            _ => return Err(bad()),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Ideal-shape target `W = zeta I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub zeta: f64,
}

impl TargetSpec {
    pub fn ideal(zeta: f64) -> Self {
        TargetSpec { zeta }
    }

    /// Size chosen so that `det W` times the reference area equals the mean element area.
    pub fn from_mesh(mesh: &Mesh) -> Self {
        TargetSpec { zeta: (mesh.mean_element_area().abs() / 4.0).sqrt() }
    }

    pub fn w(&self) -> Matrix2<f64> {
        Matrix2::identity() * self.zeta
    }

    pub fn omega(&self) -> f64 {
        self.zeta * self.zeta
    }
}

/// d(det T)/dT.
fn cofactor(t: &Matrix2<f64>) -> Matrix2<f64> {
    Matrix2::new(t[(1, 1)], -t[(1, 0)], -t[(0, 1)], t[(0, 0)])
}

fn need_positive(tau: f64) -> Result<(), TmopError> {
    if tau > 0.0 {
        Ok(())
    } else {
        Err(TmopError::NonPositiveDet { tau })
    }
}

/// |T|^2 - 2 det T written without cancellation.
fn shape_defect(t: &Matrix2<f64>) -> f64 {
    (t[(0, 0)] - t[(1, 1)]).powi(2) + (t[(0, 1)] + t[(1, 0)]).powi(2)
}

fn mu2(t: &Matrix2<f64>) -> Result<(f64, Matrix2<f64>), TmopError> {
    let tau = t.determinant();
    need_positive(tau)?;
    let n2 = t.norm_squared();
    Ok((shape_defect(t) / (2.0 * tau), t / tau - cofactor(t) * (n2 / (2.0 * tau * tau))))
}

fn mu77(t: &Matrix2<f64>) -> Result<(f64, Matrix2<f64>), TmopError> {
    let tau = t.determinant();
    if tau == 0.0 {
        return Err(TmopError::NonPositiveDet { tau });
    }
    let d = tau - 1.0 / tau;
    Ok((0.5 * d * d, cofactor(t) * (d * (1.0 + 1.0 / (tau * tau)))))
}

fn mu4(t: &Matrix2<f64>) -> (f64, Matrix2<f64>) {
    (shape_defect(t), (t - cofactor(t)) * 2.0)
}

/// Skewness mismatch of `A = T W` against `W`, gradient taken with respect to `T`.
fn nu50(t: &Matrix2<f64>, w: &Matrix2<f64>) -> Result<(f64, Matrix2<f64>), TmopError> {
    let a = t * w;
    let (a1, a2) = (a.column(0).into_owned(), a.column(1).into_owned());
    let (n1, n2) = (a1.norm(), a2.norm());
    let c = a.determinant();
    if n1 == 0.0 || n2 == 0.0 || c == 0.0 {
        return Err(TmopError::DegenerateSkew);
    }
    need_positive(c)?;
    let (w1, w2) = (w.column(0), w.column(1));
    let wn = w1.norm() * w2.norm();
    let (cw, sw) = (w1.dot(&w2) / wn, w.determinant() / wn);
    let d = a1.dot(&a2);
    let num = n1 * n2 - cw * d;
    let value = num / (sw * c) - 1.0;
    // dc/da1 = (a2y, -a2x), dc/da2 = (-a1y, a1x)
    let dc1 = nalgebra::Vector2::new(a2[1], -a2[0]);
    let dc2 = nalgebra::Vector2::new(-a1[1], a1[0]);
    let g1 = ((a1 * (n2 / n1) - a2 * cw) * c - dc1 * num) / (sw * c * c);
    let g2 = ((a2 * (n1 / n2) - a1 * cw) * c - dc2 * num) / (sw * c * c);
    let ga = Matrix2::from_columns(&[g1, g2]);
    Ok((value, ga * w.transpose()))
}

/// Metric value and its derivative with respect to `T`.
pub fn metric_value_and_grad(spec: &MetricSpec, t: &Matrix2<f64>, w: &Matrix2<f64>) -> Result<(f64, Matrix2<f64>), TmopError> {
    match *spec {
        MetricSpec::Mu2 => mu2(t),
        MetricSpec::Mu77 => mu77(t),
        MetricSpec::Mu80 { gamma } => {
            need_positive(t.determinant())?;
            let (v2, g2) = mu2(t)?;
            let (v7, g7) = mu77(t)?;
            Ok((gamma * v2 + (1.0 - gamma) * v7, g2 * gamma + g7 * (1.0 - gamma)))
        }
        MetricSpec::Mu4NonBarrier => Ok(mu4(t)),
        MetricSpec::Nu50 => nu50(t, w),
        MetricSpec::Nu49 { gamma } => {
            let (v2, g2) = mu2(t)?;
            let (v5, g5) = nu50(t, w)?;
            Ok((gamma * v2 + (1.0 - gamma) * v5, g2 * gamma + g5 * (1.0 - gamma)))
        }
        MetricSpec::ShiftedBarrier { tau_b } => {
            let tau = t.determinant();
            if tau <= tau_b {
                return Err(TmopError::BarrierViolated { tau, tau_b });
            }
            let (v, g) = mu4(t);
            let den = 2.0 * (tau - tau_b);
            Ok((v / den, g / den - cofactor(t) * (2.0 * v / (den * den))))
        }
    }
}

/// Metric of `T = A W^-1`.
pub fn metric_value(spec: &MetricSpec, a: &Matrix2<f64>, w: &Matrix2<f64>) -> Result<f64, TmopError> {
    let winv = w.try_inverse().filter(|_| w.determinant() > 0.0).ok_or(TmopError::SingularTarget)?;
    Ok(metric_value_and_grad(spec, &(a * winv), w)?.0)
}

/// d mu / d T.
pub fn metric_grad_t(spec: &MetricSpec, t: &Matrix2<f64>, w: &Matrix2<f64>) -> Result<Matrix2<f64>, TmopError> {
    Ok(metric_value_and_grad(spec, t, w)?.1)
}

/// Angle between the two columns of `a`, in radians, signed by orientation.
pub fn skew_angle(a: &Matrix2<f64>) -> f64 {
    let (a1, a2) = (a.column(0), a.column(1));
    a.determinant().atan2(a1.dot(&a2))
}

/// Barrier from a certified lower bound on det(A).
pub fn barrier_from_bounds(alpha_lower: f64, omega: f64, eps: f64) -> f64 {
    if alpha_lower <= 0.0 {
        alpha_lower / omega - eps
    } else {
        0.0
    }
}

/// Barrier from the smallest sampled det(T).
pub fn barrier_from_samples(tau_min: f64, beta: f64, eps: f64) -> f64 {
    if tau_min <= 0.0 {
        beta * tau_min - eps
    } else {
        0.0
    }
}

/// 1D tables for one (degree, rule) pair.
struct QuadTables {
    weights: Vec<f64>,
    /// b[a][i] = basis i at point a
    b: Vec<Vec<f64>>,
    d: Vec<Vec<f64>>,
}

fn quad_tables(p: usize, quad_order: usize) -> Arc<QuadTables> {
    static TABLES: OnceLock<Mutex<HashMap<(usize, usize), Arc<QuadTables>>>> = OnceLock::new();
    let npts = basis::gll_points_for_order(quad_order.max(1));
    basis::cache(&TABLES, (p, npts), || {
        let ns = basis::gll_nodes(p).expect("degree at least 1");
        let rule = basis::gll_quadrature(quad_order);
        QuadTables { weights: rule.weights.clone(), b: ns.eval_matrix(&rule.points), d: ns.deriv_matrix(&rule.points) }
    })
}

/// Objective contribution of one element and, optionally, its nodal gradient.
fn element_terms(
    mesh: &Mesh,
    e: usize,
    spec: &MetricSpec,
    target: &TargetSpec,
    quad_order: usize,
    want_grad: bool,
) -> Result<(f64, Vec<[f64; 2]>), TmopError> {
    let qt = quad_tables(mesh.order, quad_order);
    let n = mesh.order + 1;
    let nq = qt.weights.len();
    let conn = &mesh.elements[e];
    let w = target.w();
    let winv = w.try_inverse().ok_or(TmopError::SingularTarget)?;
    let omega = w.determinant();

    // sum-factorized Jacobians: rows j of the lattice contracted along xi
    let mut rv = vec![[0.0; 2]; n * nq];
    let mut rd = vec![[0.0; 2]; n * nq];
    for j in 0..n {
        for a in 0..nq {
            let (mut v, mut d) = ([0.0; 2], [0.0; 2]);
            for i in 0..n {
                let x = mesh.nodes[conn[j * n + i]];
                let (bi, di) = (qt.b[a][i], qt.d[a][i]);
                v[0] += bi * x[0];
                v[1] += bi * x[1];
                d[0] += di * x[0];
                d[1] += di * x[1];
            }
            rv[j * nq + a] = v;
            rd[j * nq + a] = d;
        }
    }

    let mut value = 0.0;
    // weighted dmu/dA at every quadrature point, columns 0 and 1
    let mut h0 = if want_grad { vec![[0.0; 2]; nq * nq] } else { Vec::new() };
    let mut h1 = if want_grad { vec![[0.0; 2]; nq * nq] } else { Vec::new() };
    for b in 0..nq {
        for a in 0..nq {
            let mut am = Matrix2::<f64>::zeros();
            for j in 0..n {
                let (v, d) = (rv[j * nq + a], rd[j * nq + a]);
                let (bj, dj) = (qt.b[b][j], qt.d[b][j]);
                am[(0, 0)] += bj * d[0];
                am[(1, 0)] += bj * d[1];
                am[(0, 1)] += dj * v[0];
                am[(1, 1)] += dj * v[1];
            }
            let t = am * winv;
            let wq = qt.weights[a] * qt.weights[b] * omega;
            let (mu, g) = metric_value_and_grad(spec, &t, &w)?;
            value += wq * mu;
            if want_grad {
                let ga = g * winv.transpose() * wq;
                h0[b * nq + a] = [ga[(0, 0)], ga[(1, 0)]];
                h1[b * nq + a] = [ga[(0, 1)], ga[(1, 1)]];
            }
        }
    }
    if !want_grad {
        return Ok((value, Vec::new()));
    }

    // contract back: r0[b][i] = sum_a h0[a,b] D[a][i], r1[b][i] = sum_a h1[a,b] B[a][i]
    let mut r0 = vec![[0.0; 2]; nq * n];
    let mut r1 = vec![[0.0; 2]; nq * n];
    for b in 0..nq {
        for a in 0..nq {
            let (g0, g1) = (h0[b * nq + a], h1[b * nq + a]);
            for i in 0..n {
                let (di, bi) = (qt.d[a][i], qt.b[a][i]);
                let s0 = &mut r0[b * n + i];
                s0[0] += g0[0] * di;
                s0[1] += g0[1] * di;
                let s1 = &mut r1[b * n + i];
                s1[0] += g1[0] * bi;
                s1[1] += g1[1] * bi;
            }
        }
    }
    let mut grad = vec![[0.0; 2]; n * n];
    for j in 0..n {
        for i in 0..n {
            let mut acc = [0.0; 2];
            for b in 0..nq {
                let (bj, dj) = (qt.b[b][j], qt.d[b][j]);
                let (x0, x1) = (r0[b * n + i], r1[b * n + i]);
                acc[0] += bj * x0[0] + dj * x1[0];
                acc[1] += bj * x0[1] + dj * x1[1];
            }
            grad[j * n + i] = acc;
        }
    }
    Ok((value, grad))
}

/// Objective contribution of each element.
pub fn element_objectives(mesh: &Mesh, spec: &MetricSpec, target: &TargetSpec, quad_orders: &[usize]) -> Result<Vec<f64>, TmopError> {
    assert_eq!(quad_orders.len(), mesh.num_elements());
    (0..mesh.num_elements())
        .into_par_iter()
        .map(|e| element_terms(mesh, e, spec, target, quad_orders[e], false).map(|r| r.0))
        .collect()
}

/// Global objective: sum over elements of the quadrature of `omega * mu(T)`.
pub fn objective(mesh: &Mesh, spec: &MetricSpec, target: &TargetSpec, quad_orders: &[usize]) -> Result<f64, TmopError> {
    Ok(element_objectives(mesh, spec, target, quad_orders)?.into_iter().sum())
}

/// Objective and its gradient with respect to every node. Entries of nodes
/// that may not move according to `classes` are zeroed.
pub fn objective_and_gradient(
    mesh: &Mesh,
    spec: &MetricSpec,
    target: &TargetSpec,
    quad_orders: &[usize],
    classes: Option<&[NodeClass]>,
) -> Result<(f64, Vec<[f64; 2]>), TmopError> {
    assert_eq!(quad_orders.len(), mesh.num_elements());
    let parts = (0..mesh.num_elements())
        .into_par_iter()
        .map(|e| element_terms(mesh, e, spec, target, quad_orders[e], true))
        .collect::<Result<Vec<_>, _>>()?;
    let mut value = 0.0;
    let mut grad = vec![[0.0; 2]; mesh.num_nodes()];
    for (e, (v, g)) in parts.into_iter().enumerate() {
        value += v;
        for (&node, gl) in mesh.elements[e].iter().zip(g) {
            grad[node][0] += gl[0];
            grad[node][1] += gl[1];
        }
    }
    if let Some(classes) = classes {
        zero_constrained(&mut grad, classes);
    }
    Ok((value, grad))
}

pub fn gradient(
    mesh: &Mesh,
    spec: &MetricSpec,
    target: &TargetSpec,
    quad_orders: &[usize],
    classes: Option<&[NodeClass]>,
) -> Result<Vec<[f64; 2]>, TmopError> {
    Ok(objective_and_gradient(mesh, spec, target, quad_orders, classes)?.1)
}

/// Zero the gradient of corner and fixed boundary nodes.
pub fn zero_constrained(grad: &mut [[f64; 2]], classes: &[NodeClass]) {
    for (g, c) in grad.iter_mut().zip(classes) {
        if !c.is_free() {
            *g = [0.0; 2];
        }
    }
}

/// Smallest det(T) over all quadrature points.
pub fn tau_min(mesh: &Mesh, target: &TargetSpec, quad_orders: &[usize]) -> f64 {
    crate::validity::sampled_min_det(mesh, quad_orders) / target.omega()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(a: f64, b: f64, c: f64, d: f64) -> Matrix2<f64> {
        Matrix2::new(a, b, c, d)
    }

    const ALL: [MetricSpec; 7] = [
        MetricSpec::Mu2,
        MetricSpec::Mu77,
        MetricSpec::Mu80 { gamma: 0.5 },
        MetricSpec::Mu4NonBarrier,
        MetricSpec::Nu50,
        MetricSpec::Nu49 { gamma: 0.4 },
        MetricSpec::ShiftedBarrier { tau_b: -0.3 },
    ];

    #[test]
    fn identity_is_optimal_for_every_metric() {
        let w = Matrix2::identity() * 0.7;
        for spec in ALL {
            let (v, g) = metric_value_and_grad(&spec, &Matrix2::identity(), &w).unwrap();
            assert!(v.abs() < 1e-15, "{spec}: {v}");
            assert!(g.norm() < 1e-14, "{spec}: {g}");
        }
    }

    #[test]
    fn hand_values() {
        let w = Matrix2::identity();
        let t = m(2.0, 0.0, 0.0, 0.5);
        assert!((metric_value(&MetricSpec::Mu2, &t, &w).unwrap() - 1.125).abs() < 1e-15);
        let t = m(2.0, 0.0, 0.0, 2.0);
        assert_eq!(metric_value(&MetricSpec::Mu4NonBarrier, &t, &w).unwrap(), 0.0);
        assert_eq!(metric_value(&MetricSpec::ShiftedBarrier { tau_b: -1.0 }, &t, &w).unwrap(), 0.0);
        // nu50 for columns at 45 degrees against a square target: 1/sin - 1
        let t = m(1.0, 1.0, 0.0, 1.0);
        let v = metric_value(&MetricSpec::Nu50, &t, &w).unwrap();
        assert!((v - (2f64.sqrt() - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn mu80_with_gamma_one_is_mu2() {
        let t = m(1.3, 0.2, -0.1, 0.8);
        let w = Matrix2::identity();
        let a = metric_grad_t(&MetricSpec::Mu80 { gamma: 1.0 }, &t, &w).unwrap();
        let b = metric_grad_t(&MetricSpec::Mu2, &t, &w).unwrap();
        assert!((a - b).norm() < 1e-15);
    }

    #[test]
    fn domain_errors() {
        let w = Matrix2::identity();
        let flipped = m(-1.0, 0.0, 0.0, 1.0);
        assert!(matches!(metric_value(&MetricSpec::Mu2, &flipped, &w), Err(TmopError::NonPositiveDet { .. })));
        assert!(matches!(
            metric_value(&MetricSpec::ShiftedBarrier { tau_b: -0.5 }, &m(1.0, 0.0, 0.0, -0.6), &w),
            Err(TmopError::BarrierViolated { .. })
        ));
        assert!(matches!(metric_value(&MetricSpec::Nu50, &m(1.0, 1.0, 0.0, 0.0), &w), Err(TmopError::DegenerateSkew)));
        assert!(metric_value(&MetricSpec::Mu77, &flipped, &w).is_ok());
    }

    #[test]
    fn barrier_formulas() {
        assert!((barrier_from_bounds(-0.22, 1.0, 1e-3) + 0.221).abs() < 1e-15);
        assert_eq!(barrier_from_bounds(0.5, 1.0, 1e-3), 0.0);
        assert!((barrier_from_samples(-0.1, 1.5, 1e-2) + 0.16).abs() < 1e-15);
        assert_eq!(barrier_from_samples(0.2, 1.5, 1e-2), 0.0);
    }

    #[test]
    fn barrier_blows_up_towards_tau_b() {
        let spec = MetricSpec::ShiftedBarrier { tau_b: -0.2 };
        let w = Matrix2::identity();
        // anisotropic shape so that the numerator stays positive
        let vals: Vec<f64> = (1..=8)
            .map(|k| {
                let tau: f64 = -0.2 + 10f64.powi(-k);
                metric_value(&spec, &m(2.0, 0.0, 0.0, tau / 2.0), &w).unwrap()
            })
            .collect();
        assert!(vals.windows(2).all(|v| v[1] > v[0]));
    }

    #[test]
    fn parse_round_trip() {
        for s in ["mu2", "mu77", "mu80:0.5", "mu4", "mu4sb", "nu50", "nu49:0.4"] {
            assert_eq!(s.parse::<MetricSpec>().unwrap().to_string(), s);
        }
        assert!("mu80:1.5".parse::<MetricSpec>().is_err());
        assert!("mu9".parse::<MetricSpec>().is_err());
    }

    fn rotation(theta: f64) -> Matrix2<f64> {
        m(theta.cos(), -theta.sin(), theta.sin(), theta.cos())
    }

    proptest! {
        #[test]
        fn gradients_match_central_differences(
            a in 0.5f64..2.0, b in -0.5f64..0.5, c in -0.5f64..0.5, d in 0.5f64..2.0, which in 0usize..7
        ) {
            let spec = ALL[which];
            let w = m(1.1, 0.2, -0.1, 0.9);
            let t = m(a, b, c, d);
            let g = metric_grad_t(&spec, &t, &w).unwrap();
            let h = 1e-6;
            for k in 0..4 {
                let mut tp = t;
                let mut tm = t;
                tp[k] += h;
                tm[k] -= h;
                let fd = (metric_value_and_grad(&spec, &tp, &w).unwrap().0 - metric_value_and_grad(&spec, &tm, &w).unwrap().0) / (2.0 * h);
                prop_assert!((fd - g[k]).abs() <= 1e-6 * g.abs().max().max(1.0), "{spec} entry {k}: fd {fd} vs {}", g[k]);
            }
        }

        #[test]
        fn mu2_is_rotation_and_scale_invariant(a in 0.3f64..2.0, b in -0.5f64..0.5, c in -0.5f64..0.5, d in 0.3f64..2.0, th in 0.0f64..6.3, s in 0.1f64..10.0) {
            let t = m(a, b, c, d);
            prop_assume!(t.determinant() > 0.05);
            let w = Matrix2::identity();
            let base = metric_value(&MetricSpec::Mu2, &t, &w).unwrap();
            let rot = metric_value(&MetricSpec::Mu2, &(rotation(th) * t), &w).unwrap();
            let scaled = metric_value(&MetricSpec::Mu2, &(t * s), &w).unwrap();
            prop_assert!((base - rot).abs() < 1e-12 * base.max(1.0));
            prop_assert!((base - scaled).abs() < 1e-12 * base.max(1.0));
        }

        #[test]
        fn mu77_depends_only_on_det(a in 0.3f64..2.0, b in -0.5f64..0.5, c in -0.5f64..0.5, d in 0.3f64..2.0, th in 0.0f64..6.3) {
            let t1 = m(a, b, c, d);
            prop_assume!(t1.determinant().abs() > 0.05);
            let tau = t1.determinant();
            let t2 = rotation(th) * m(2.0, 0.7, 0.0, tau / 2.0);
            let w = Matrix2::identity();
            let v1 = metric_value(&MetricSpec::Mu77, &t1, &w).unwrap();
            let v2 = metric_value(&MetricSpec::Mu77, &t2, &w).unwrap();
            prop_assert!((v1 - v2).abs() < 1e-12 * v1.max(1.0));
        }
    }

    #[test]
    fn uniform_mesh_is_at_its_target() {
        let mesh = Mesh::structured(3, 3, 2, [1, 2, 3, 4], |x, y| [x, y]);
        let target = TargetSpec::from_mesh(&mesh);
        assert!((target.zeta - 1.0 / 6.0).abs() < 1e-14);
        let q = vec![10; 9];
        for spec in ALL {
            let (f, g) = objective_and_gradient(&mesh, &spec, &target, &q, None).unwrap();
            assert!(f.abs() < 1e-12, "{spec}: {f}");
            assert!(g.iter().all(|v| v[0].abs() < 1e-10 && v[1].abs() < 1e-10), "{spec}");
        }
        let scaled = TargetSpec::ideal(target.zeta / 2.0);
        assert!(objective(&mesh, &MetricSpec::Mu77, &scaled, &q).unwrap() > 0.0);
    }

    #[test]
    fn mesh_gradient_matches_finite_differences() {
        let mut mesh = Mesh::structured(2, 2, 2, [1, 2, 3, 4], |x, y| [x + 0.1 * (3.0 * y).sin(), y + 0.08 * (2.0 * x).cos()]);
        mesh.nodes[12][0] += 0.03;
        let target = TargetSpec::from_mesh(&mesh);
        let q = vec![6; 4];
        for spec in [MetricSpec::Mu2, MetricSpec::Nu49 { gamma: 0.4 }] {
            let g = gradient(&mesh, &spec, &target, &q, None).unwrap();
            let h = 1e-6;
            for node in [0usize, 12, 20] {
                for c in 0..2 {
                    let mut mp = mesh.clone();
                    mp.nodes[node][c] += h;
                    let mut mm = mesh.clone();
                    mm.nodes[node][c] -= h;
                    let fd = (objective(&mp, &spec, &target, &q).unwrap() - objective(&mm, &spec, &target, &q).unwrap()) / (2.0 * h);
                    assert!((fd - g[node][c]).abs() < 1e-6 * g[node][c].abs().max(1e-3), "{spec} node {node}: {fd} vs {}", g[node][c]);
                }
            }
        }
        let classes = crate::mesh::classify_nodes(&mesh, &[]);
        let g = gradient(&mesh, &MetricSpec::Mu2, &target, &q, Some(&classes)).unwrap();
        for (gi, c) in g.iter().zip(&classes) {
            if !c.is_free() {
                assert_eq!(*gi, [0.0, 0.0]);
            }
        }
    }
}
