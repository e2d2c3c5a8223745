//! One-dimensional Gauss-Lobatto-Legendre machinery.
//!
//! Node sets, barycentric Lagrange evaluation, GLL quadrature, tensor-product
//! helpers and the change of basis from GLL-nodal values to Bernstein
//! coefficients. Node sets, quadrature rules and Bernstein transforms are
//! cached per degree and shared read-only after construction.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BasisError {
    #[error("polynomial degree must be at least 1 (got {0})")]
    DegenerateDegree(usize),
    #[error("expected {expected} nodal values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("Bernstein change of basis for degree {degree} is ill-conditioned (condition number {condition:.3e})")]
    IllConditioned { degree: usize, condition: f64 },
}

/// Largest condition number accepted for the GLL-to-Bernstein solve
/// (about 10 of the 16 available digits).
pub const BERNSTEIN_MAX_CONDITION: f64 = 1e10;

/// GLL nodes of degree `order` together with their barycentric weights.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSet1D {
    order: usize,
    nodes: Vec<f64>,
    bary: Vec<f64>,
}

/// Points and weights of a one dimensional rule on [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule1D {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule1D {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Highest polynomial degree integrated exactly (2n - 3 for n GLL points).
    pub fn exactness(&self) -> usize {
        (2 * self.points.len()).saturating_sub(3)
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Legendre polynomial `P_n(x)` and its derivative via the three-term recurrence.
pub fn legendre(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p_prev, mut p) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p_next = ((2.0 * kf - 1.0) * x * p - (kf - 1.0) * p_prev) / kf;
        p_prev = p;
        p = p_next;
    }
    let nf = n as f64;
    let dp = if (1.0 - x * x).abs() < 1e-300 {
        // P_n'(±1) = (±1)^(n-1) n(n+1)/2
        let s = if x > 0.0 || n % 2 == 1 { 1.0 } else { -1.0 };
        s * nf * (nf + 1.0) / 2.0
    } else {
        nf * (p_prev - x * p) / (1.0 - x * x)
    };
    (p, dp)
}

fn compute_gll(n: usize) -> Vec<f64> {
    let mut nodes: Vec<f64> = (0..=n).map(|j| -(PI * j as f64 / n as f64).cos()).collect();
    nodes[0] = -1.0;
    nodes[n] = 1.0;
    let nn1 = (n * (n + 1)) as f64;
    for x in nodes.iter_mut().take(n).skip(1) {
        for _ in 0..100 {
            let (p, dp) = legendre(n, *x);
            // Newton on (1 - x^2) P_n'(x), whose derivative is -n(n+1) P_n(x).
            let step = (1.0 - *x * *x) * dp / (nn1 * p);
            *x += step;
            if step.abs() < 1e-15 {
                break;
            }
        }
    }
    for i in 0..(n + 1) / 2 {
        let v = 0.5 * (nodes[n - i] - nodes[i]);
        nodes[i] = -v;
        nodes[n - i] = v;
    }
    if n % 2 == 0 {
        nodes[n / 2] = 0.0;
    }
    nodes
}

fn barycentric_weights(nodes: &[f64]) -> Vec<f64> {
    (0..nodes.len())
        .map(|j| {
            let prod: f64 = nodes
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != j)
                .map(|(_, &xk)| nodes[j] - xk)
                .product();
            1.0 / prod
        })
        .collect()
}

impl NodeSet1D {
    /// GLL nodes of degree `p` (p + 1 points including ±1).
    pub fn gll(p: usize) -> Result<Self, BasisError> {
        if p == 0 {
            return Err(BasisError::DegenerateDegree(p));
        }
        let nodes = compute_gll(p);
        let bary = barycentric_weights(&nodes);
        Ok(Self { order: p, nodes, bary })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Values of all p + 1 Lagrange basis functions at `x` (barycentric form).
    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.nodes.len());
        if let Some(k) = self.nodes.iter().position(|&xk| xk == x) {
            out.iter_mut().for_each(|v| *v = 0.0);
            out[k] = 1.0;
            return;
        }
        let mut denom = 0.0;
        for ((o, &xk), &wk) in out.iter_mut().zip(&self.nodes).zip(&self.bary) {
            *o = wk / (x - xk);
            denom += *o;
        }
        out.iter_mut().for_each(|v| *v /= denom);
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.eval_into(x, &mut out);
        out
    }

    /// Derivatives of all basis functions at `x`.
    ///
    /// Uses the product rule on `w_j * prod_{k != j} (x - x_k)`, which stays
    /// accurate arbitrarily close to the nodes.
    pub fn deriv_into(&self, x: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.nodes.len());
        for (j, o) in out.iter_mut().enumerate() {
            let (mut v, mut d) = (1.0, 0.0);
            for (k, &xk) in self.nodes.iter().enumerate() {
                if k != j {
                    d = d * (x - xk) + v;
                    v *= x - xk;
                }
            }
            *o = self.bary[j] * d;
        }
    }

    pub fn deriv(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.deriv_into(x, &mut out);
        out
    }

    /// Evaluate the interpolant of nodal `values` at `x`.
    pub fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        let mut w = vec![0.0; self.len()];
        self.eval_into(x, &mut w);
        w.iter().zip(values).map(|(a, b)| a * b).sum()
    }

    /// Row-major matrix `B[k][j] = l_j(points[k])`.
    pub fn eval_matrix(&self, points: &[f64]) -> Vec<Vec<f64>> {
        points.iter().map(|&x| self.eval(x)).collect()
    }

    pub fn deriv_matrix(&self, points: &[f64]) -> Vec<Vec<f64>> {
        points.iter().map(|&x| self.deriv(x)).collect()
    }
}

/// Evaluate a tensor-product interpolant with lexicographic (x fastest)
/// nodal `values` at `(x, y)`.
pub fn tensor_eval(ns: &NodeSet1D, values: &[f64], x: f64, y: f64) -> f64 {
    let n = ns.len();
    let bx = ns.eval(x);
    let by = ns.eval(y);
    let mut acc = 0.0;
    for (j, &wy) in by.iter().enumerate() {
        let row: f64 = (0..n).map(|i| bx[i] * values[j * n + i]).sum();
        acc += wy * row;
    }
    acc
}

/// Values on the tensor lattice `xs × ys`: returns `out[b * xs.len() + a]`
/// for the point `(xs[a], ys[b])`.
pub fn tensor_resample(ns: &NodeSet1D, values: &[f64], xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = ns.len();
    let bx = ns.eval_matrix(xs);
    let by = ns.eval_matrix(ys);
    // tmp[j][a] = sum_i bx[a][i] values[j n + i]
    let mut tmp = vec![0.0; n * xs.len()];
    for j in 0..n {
        for (a, bxa) in bx.iter().enumerate() {
            tmp[j * xs.len() + a] = (0..n).map(|i| bxa[i] * values[j * n + i]).sum();
        }
    }
    let mut out = vec![0.0; xs.len() * ys.len()];
    for (b, byb) in by.iter().enumerate() {
        for a in 0..xs.len() {
            out[b * xs.len() + a] = (0..n).map(|j| byb[j] * tmp[j * xs.len() + a]).sum();
        }
    }
    out
}

pub(crate) fn cache<K: std::hash::Hash + Eq + Copy, V>(
    cell: &'static OnceLock<Mutex<HashMap<K, Arc<V>>>>,
    key: K,
    build: impl FnOnce() -> V,
) -> Arc<V> {
    let map = cell.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(v) = map.lock().unwrap().get(&key) {
        return Arc::clone(v);
    }
    let v = Arc::new(build());
    Arc::clone(map.lock().unwrap().entry(key).or_insert(v))
}

/// Cached GLL node set of degree `p`.
pub fn gll_nodes(p: usize) -> Result<Arc<NodeSet1D>, BasisError> {
    static NODES: OnceLock<Mutex<HashMap<usize, Arc<NodeSet1D>>>> = OnceLock::new();
    if p == 0 {
        return Err(BasisError::DegenerateDegree(p));
    }
    Ok(cache(&NODES, p, || NodeSet1D::gll(p).expect("degree checked")))
}

/// Number of GLL points needed to integrate degree `order` exactly.
pub fn gll_points_for_order(order: usize) -> usize {
    ((order + 3).div_ceil(2)).max(2)
}

/// The GLL rule with the fewest points whose degree of exactness is at least `order`.
pub fn gll_quadrature(order: usize) -> Arc<QuadratureRule1D> {
    static RULES: OnceLock<Mutex<HashMap<usize, Arc<QuadratureRule1D>>>> = OnceLock::new();
    let npts = gll_points_for_order(order.max(1));
    cache(&RULES, npts, || {
        let n = npts - 1;
        let points = compute_gll(n);
        let nn1 = (n * (n + 1)) as f64;
        let weights = points
            .iter()
            .map(|&x| {
                let (p, _) = legendre(n, x);
                2.0 / (nn1 * p * p)
            })
            .collect();
        QuadratureRule1D { points, weights }
    })
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Bernstein basis polynomial `B_j^p` on [-1, 1].
pub fn bernstein_basis(p: usize, j: usize, x: f64) -> f64 {
    let t = 0.5 * (x + 1.0);
    binomial(p, j) * t.powi(j as i32) * (1.0 - t).powi((p - j) as i32)
}

/// Evaluate a Bernstein expansion on [-1, 1] with de Casteljau's algorithm.
pub fn bernstein_eval(coeffs: &[f64], x: f64) -> f64 {
    let t = 0.5 * (x + 1.0);
    let mut b = coeffs.to_vec();
    for r in 1..b.len() {
        for i in 0..b.len() - r {
            b[i] = (1.0 - t) * b[i] + t * b[i + 1];
        }
    }
    b.first().copied().unwrap_or(0.0)
}

#[derive(Debug)]
struct BernsteinTransform {
    vandermonde: DMatrix<f64>,
    inverse: Option<DMatrix<f64>>,
    condition: f64,
}

fn bernstein_transform(p: usize) -> Arc<BernsteinTransform> {
    static TRANSFORMS: OnceLock<Mutex<HashMap<usize, Arc<BernsteinTransform>>>> = OnceLock::new();
    cache(&TRANSFORMS, p, || {
        let ns = gll_nodes(p).expect("degree >= 1");
        let n = p + 1;
        let v = DMatrix::from_fn(n, n, |i, j| bernstein_basis(p, j, ns.nodes()[i]));
        let inverse = v.clone().lu().try_inverse();
        let condition = match &inverse {
            Some(inv) => inf_norm(&v) * inf_norm(inv),
            None => f64::INFINITY,
        };
        BernsteinTransform { vandermonde: v, inverse, condition }
    })
}

fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Condition number (infinity norm) of the GLL-to-Bernstein matrix of degree `p`.
pub fn bernstein_condition(p: usize) -> f64 {
    bernstein_transform(p).condition
}

/// Bernstein coefficients of the degree-p polynomial given by its GLL nodal values.
pub fn to_bernstein(ns: &NodeSet1D, nodal_values: &[f64]) -> Result<Vec<f64>, BasisError> {
    let p = ns.order();
    if nodal_values.len() != p + 1 {
        return Err(BasisError::LengthMismatch { expected: p + 1, got: nodal_values.len() });
    }
    let tr = bernstein_transform(p);
    let inv = match (&tr.inverse, tr.condition) {
        (Some(inv), c) if c <= BERNSTEIN_MAX_CONDITION => inv,
        (_, c) => return Err(BasisError::IllConditioned { degree: p, condition: c }),
    };
    let u = nalgebra::DVector::from_column_slice(nodal_values);
    let c = inv * &u;
    // residual check on the solve
    let r = &tr.vandermonde * &c - &u;
    let scale = u.amax().max(f64::MIN_POSITIVE);
    if r.amax() > 1e-6 * scale {
        return Err(BasisError::IllConditioned { degree: p, condition: tr.condition });
    }
    Ok(c.iter().copied().collect())
}

/// Tensor-product Bernstein coefficients of lexicographic 2D nodal data.
pub fn to_bernstein_2d(ns: &NodeSet1D, nodal_values: &[f64]) -> Result<Vec<f64>, BasisError> {
    let n = ns.len();
    if nodal_values.len() != n * n {
        return Err(BasisError::LengthMismatch { expected: n * n, got: nodal_values.len() });
    }
    let mut tmp = vec![0.0; n * n];
    for j in 0..n {
        let row = to_bernstein(ns, &nodal_values[j * n..(j + 1) * n])?;
        tmp[j * n..(j + 1) * n].copy_from_slice(&row);
    }
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        let col: Vec<f64> = (0..n).map(|j| tmp[j * n + i]).collect();
        let c = to_bernstein(ns, &col)?;
        for j in 0..n {
            out[j * n + i] = c[j];
        }
    }
    Ok(out)
}
