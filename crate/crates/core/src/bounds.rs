//! Piecewise-linear bounds for polynomials in GLL-nodal form.
//!
//! Every Lagrange basis function `phi_i` of degree `p` gets a lower and an
//! upper continuous piecewise-linear envelope on a set of `M` control nodes.
//! A polynomial `u = sum u_i phi_i` is then bounded at the control nodes by
//! summing `min(u_i q-, u_i q+)` and `max(u_i q-, u_i q+)`; the linear
//! interpolants of those sums bracket `u` on the whole interval. The 2D
//! variant composes 1D bounds along y with the x envelopes through interval
//! products, which gives bilinear bounds on the `M x M` grid.
//!
//! Envelopes are built once per `(p, M)` and cached.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use thiserror::Error;

use crate::basis::{self, BasisError, NodeSet1D};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoundsError {
    #[error("need at least max(2, p + 1) control nodes for degree {degree}, got {control_nodes}")]
    TooFewControlNodes { degree: usize, control_nodes: usize },
    #[error("coefficient count {got} does not match degree {degree} (expected {expected})")]
    DegreeMismatch { degree: usize, expected: usize, got: usize },
    #[error(transparent)]
    Basis(#[from] BasisError),
}

/// Per-basis envelope values at the control nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundTable {
    degree: usize,
    control_nodes: Vec<f64>,
    q_minus: Vec<Vec<f64>>,
    q_plus: Vec<Vec<f64>>,
    linear_fit_removed: bool,
}

/// Linear lower/upper bounds sampled at the control nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinearBound {
    pub control_nodes: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Bilinear bounds on the `M x M` control grid, `lower[k * M + j]` at `(eta_j, eta_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseBilinearBound {
    pub control_nodes: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Verdict {
    Positive,
    Negative,
    Undecided,
}

/// Axis-aligned sub-box of the reference square `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubBox {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl SubBox {
    pub const REFERENCE: SubBox = SubBox { x0: -1.0, x1: 1.0, y0: -1.0, y1: 1.0 };

    fn map(&self, s: f64, t: f64) -> (f64, f64) {
        (
            0.5 * (self.x0 + self.x1) + 0.5 * (self.x1 - self.x0) * s,
            0.5 * (self.y0 + self.y1) + 0.5 * (self.y1 - self.y0) * t,
        )
    }

    fn children(&self) -> [SubBox; 4] {
        let xm = 0.5 * (self.x0 + self.x1);
        let ym = 0.5 * (self.y0 + self.y1);
        [
            SubBox { x0: self.x0, x1: xm, y0: self.y0, y1: ym },
            SubBox { x0: xm, x1: self.x1, y0: self.y0, y1: ym },
            SubBox { x0: self.x0, x1: xm, y0: ym, y1: self.y1 },
            SubBox { x0: xm, x1: self.x1, y0: ym, y1: self.y1 },
        ]
    }
}

/// Outcome of a sign certification.
///
/// `[certified_lower, certified_upper]` always brackets the minimum of the
/// polynomial: the lower end is a proven lower bound and the upper end is an
/// upper bound evaluated at some control node.
#[derive(Debug, Clone, PartialEq)]
pub struct SignCertificate {
    pub verdict: Verdict,
    pub certified_lower: f64,
    pub certified_upper: f64,
    pub depth_used: usize,
    /// Sub-box and point whose upper bound is negative, for `Negative`.
    pub witness: Option<(SubBox, [f64; 2])>,
}

/// Chebyshev-Lobatto control nodes on [-1, 1].
pub fn control_nodes(m: usize) -> Vec<f64> {
    let mut eta: Vec<f64> = (0..m).map(|j| -(PI * j as f64 / (m - 1) as f64).cos()).collect();
    eta[0] = -1.0;
    eta[m - 1] = 1.0;
    for i in 0..m / 2 {
        let v = 0.5 * (eta[m - 1 - i] - eta[i]);
        eta[i] = -v;
        eta[m - 1 - i] = v;
    }
    if m % 2 == 1 {
        eta[m / 2] = 0.0;
    }
    eta
}

/// Cached envelope table for degree `p` on `m` control nodes.
pub fn build_bound_table(p: usize, m: usize) -> Result<Arc<BoundTable>, BoundsError> {
    static TABLES: OnceLock<Mutex<HashMap<(usize, usize), Arc<BoundTable>>>> = OnceLock::new();
    let ns = basis::gll_nodes(p)?;
    if m < 2 || m < p + 1 {
        return Err(BoundsError::TooFewControlNodes { degree: p, control_nodes: m });
    }
    let map = TABLES.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(t) = map.lock().unwrap().get(&(p, m)) {
        return Ok(Arc::clone(t));
    }
    let table = Arc::new(BoundTable::construct(&ns, m));
    Ok(Arc::clone(map.lock().unwrap().entry((p, m)).or_insert(table)))
}

impl BoundTable {
    fn construct(ns: &NodeSet1D, m: usize) -> Self {
        let p = ns.order();
        let eta = control_nodes(m);
        let mut q_minus = Vec::with_capacity(p + 1);
        let mut q_plus = Vec::with_capacity(p + 1);
        for i in 0..=p {
            let mut unit = vec![0.0; p + 1];
            unit[i] = 1.0;
            let upper = upper_envelope(ns, &unit, &eta);
            let neg: Vec<f64> = unit.iter().map(|v| -v).collect();
            let lower: Vec<f64> = upper_envelope(ns, &neg, &eta).iter().map(|v| -v).collect();
            q_plus.push(upper);
            q_minus.push(lower);
        }
        if p > 1 {
            // absorb evaluation round-off
            for (lo, up) in q_minus.iter_mut().zip(q_plus.iter_mut()) {
                let scale = up.iter().chain(lo.iter()).fold(0.0f64, |a, v| a.max(v.abs()));
                let margin = 4.0 * f64::EPSILON * scale;
                lo.iter_mut().for_each(|v| *v -= margin);
                up.iter_mut().for_each(|v| *v += margin);
            }
        }
        Self { degree: p, control_nodes: eta, q_minus, q_plus, linear_fit_removed: true }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn control_nodes(&self) -> &[f64] {
        &self.control_nodes
    }

    pub fn num_control_nodes(&self) -> usize {
        self.control_nodes.len()
    }

    pub fn q_minus(&self) -> &[Vec<f64>] {
        &self.q_minus
    }

    pub fn q_plus(&self) -> &[Vec<f64>] {
        &self.q_plus
    }

    pub fn linear_fit_removed(&self) -> bool {
        self.linear_fit_removed
    }

    /// Copy of this table that bounds functions without removing a linear fit first.
    pub fn without_linear_fit(&self) -> Self {
        Self { linear_fit_removed: false, ..self.clone() }
    }

    fn check_len(&self, got: usize, dims: u32) -> Result<(), BoundsError> {
        let expected = (self.degree + 1).pow(dims);
        if got != expected {
            return Err(BoundsError::DegreeMismatch { degree: self.degree, expected, got });
        }
        Ok(())
    }
}

fn lerp_at(nodes: &[f64], vals: &[f64], x: f64) -> f64 {
    let j = match nodes.iter().position(|&e| e >= x) {
        Some(0) => return vals[0],
        Some(j) => j,
        None => return vals[vals.len() - 1],
    };
    let (a, b) = (nodes[j - 1], nodes[j]);
    let t = (x - a) / (b - a);
    (1.0 - t) * vals[j - 1] + t * vals[j]
}

impl PiecewiseLinearBound {
    pub fn lower_at(&self, x: f64) -> f64 {
        lerp_at(&self.control_nodes, &self.lower, x)
    }

    pub fn upper_at(&self, x: f64) -> f64 {
        lerp_at(&self.control_nodes, &self.upper, x)
    }

    pub fn min_lower(&self) -> f64 {
        self.lower.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_upper(&self) -> f64 {
        self.upper.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `(1/M) sum_j (upper_j - lower_j)`.
    pub fn mean_gap(&self) -> f64 {
        let s: f64 = self.upper.iter().zip(&self.lower).map(|(u, l)| u - l).sum();
        s / self.lower.len() as f64
    }
}

fn bilerp(nodes: &[f64], vals: &[f64], x: f64, y: f64) -> f64 {
    let m = nodes.len();
    let cell = |v: f64| -> (usize, f64) {
        let j = nodes.iter().position(|&e| e >= v).unwrap_or(m - 1).clamp(1, m - 1);
        let t = ((v - nodes[j - 1]) / (nodes[j] - nodes[j - 1])).clamp(0.0, 1.0);
        (j - 1, t)
    };
    let (i, s) = cell(x);
    let (k, t) = cell(y);
    let at = |a: usize, b: usize| vals[b * m + a];
    (1.0 - t) * ((1.0 - s) * at(i, k) + s * at(i + 1, k)) + t * ((1.0 - s) * at(i, k + 1) + s * at(i + 1, k + 1))
}

impl PiecewiseBilinearBound {
    pub fn lower_at(&self, x: f64, y: f64) -> f64 {
        bilerp(&self.control_nodes, &self.lower, x, y)
    }

    pub fn upper_at(&self, x: f64, y: f64) -> f64 {
        bilerp(&self.control_nodes, &self.upper, x, y)
    }

    pub fn min_lower(&self) -> f64 {
        self.lower.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn min_upper_with_index(&self) -> (f64, usize) {
        self.upper
            .iter()
            .enumerate()
            .fold((f64::INFINITY, 0), |acc, (k, &v)| if v < acc.0 { (v, k) } else { acc })
    }

    pub fn max_upper(&self) -> f64 {
        self.upper.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Bound a 1D polynomial given by its GLL nodal values.
pub fn bound_function_1d(table: &BoundTable, coeffs: &[f64]) -> Result<PiecewiseLinearBound, BoundsError> {
    bound_1d_with(table, coeffs, table.linear_fit_removed)
}

fn bound_1d_with(table: &BoundTable, coeffs: &[f64], remove_line: bool) -> Result<PiecewiseLinearBound, BoundsError> {
    table.check_len(coeffs.len(), 1)?;
    let p = table.degree;
    let ns = basis::gll_nodes(p)?;
    let m = table.control_nodes.len();
    let line = |x: f64| {
        if remove_line {
            0.5 * (1.0 - x) * coeffs[0] + 0.5 * (1.0 + x) * coeffs[p]
        } else {
            0.0
        }
    };
    let v: Vec<f64> = coeffs.iter().zip(ns.nodes()).map(|(&u, &x)| u - line(x)).collect();
    let mut lower = vec![0.0; m];
    let mut upper = vec![0.0; m];
    // magnitude of everything summed at each control node, for the rounding allowance
    let mut size = vec![0.0; m];
    for (i, &vi) in v.iter().enumerate() {
        if vi == 0.0 {
            continue;
        }
        let (lo, up) = if vi > 0.0 {
            (&table.q_minus[i], &table.q_plus[i])
        } else {
            (&table.q_plus[i], &table.q_minus[i])
        };
        let vi_size = coeffs[i].abs() + line(ns.nodes()[i]).abs();
        for j in 0..m {
            lower[j] += vi * lo[j];
            upper[j] += vi * up[j];
            size[j] += vi_size * lo[j].abs().max(up[j].abs());
        }
    }
    let slack = rounding_factor(p);
    for (j, &e) in table.control_nodes.iter().enumerate() {
        let l = line(e);
        let r = slack * (size[j] + l.abs());
        lower[j] += l - r;
        upper[j] += l + r;
    }
    Ok(PiecewiseLinearBound { control_nodes: table.control_nodes.clone(), lower, upper })
}

/// Relative rounding allowance for sums of about `p + 1` products.
fn rounding_factor(p: usize) -> f64 {
    (2 * p + 8) as f64 * f64::EPSILON
}

#[inline]
fn interval_product(l1: f64, u1: f64, l2: f64, u2: f64) -> (f64, f64) {
    let a = l1 * l2;
    let b = l1 * u2;
    let c = u1 * l2;
    let d = u1 * u2;
    (a.min(b).min(c).min(d), a.max(b).max(c).max(d))
}

/// Bound a tensor-product polynomial given by lexicographic (x fastest)
/// nodal values on the GLL lattice.
///
/// The bilinear interpolant of the four corner values is removed first (when
/// the table removes linear fits). Each column `y -> u(x_a, y)` is then
/// bounded in 1D, and the resulting intervals are combined with the x
/// envelopes through sign-aware interval products. All pieces are bilinear
/// on a control cell, so the grid interpolants bracket `u` everywhere.
pub fn bound_function_2d(table: &BoundTable, coeffs: &[f64]) -> Result<PiecewiseBilinearBound, BoundsError> {
    table.check_len(coeffs.len(), 2)?;
    let p = table.degree;
    let n = p + 1;
    let ns = basis::gll_nodes(p)?;
    let m = table.control_nodes.len();
    let corners = [coeffs[0], coeffs[p], coeffs[p * n], coeffs[p * n + p]];
    let bilinear = |x: f64, y: f64| {
        if table.linear_fit_removed {
            0.25 * ((1.0 - x) * (1.0 - y) * corners[0]
                + (1.0 + x) * (1.0 - y) * corners[1]
                + (1.0 - x) * (1.0 + y) * corners[2]
                + (1.0 + x) * (1.0 + y) * corners[3])
        } else {
            0.0
        }
    };
    let xs = ns.nodes();
    let mut lower = vec![0.0; m * m];
    let mut upper = vec![0.0; m * m];
    let mut column = vec![0.0; n];
    let mut size = vec![0.0; m * m];
    for a in 0..n {
        let mut column_size: f64 = 0.0;
        for b in 0..n {
            let l = bilinear(xs[a], xs[b]);
            column[b] = coeffs[b * n + a] - l;
            column_size = column_size.max(coeffs[b * n + a].abs() + l.abs());
        }
        if column.iter().all(|&v| v == 0.0) {
            continue;
        }
        let cb = bound_1d_with(table, &column, true)?;
        let (qa_lo, qa_up) = (&table.q_minus[a], &table.q_plus[a]);
        for k in 0..m {
            let (r_lo, r_up) = (cb.lower[k], cb.upper[k]);
            let r_size = r_lo.abs().max(r_up.abs()) + column_size;
            for j in 0..m {
                let (lo, up) = interval_product(r_lo, r_up, qa_lo[j], qa_up[j]);
                lower[k * m + j] += lo;
                upper[k * m + j] += up;
                size[k * m + j] += r_size * qa_lo[j].abs().max(qa_up[j].abs());
            }
        }
    }
    let eta = &table.control_nodes;
    let slack = rounding_factor(p);
    for k in 0..m {
        for j in 0..m {
            let l = bilinear(eta[j], eta[k]);
            let r = slack * (size[k * m + j] + l.abs());
            lower[k * m + j] += l - r;
            upper[k * m + j] += l + r;
        }
    }
    Ok(PiecewiseBilinearBound { control_nodes: eta.clone(), lower, upper })
}

/// Nodal values of the polynomial restricted to `b`, reparameterized to [-1, 1]^2.
fn restrict(ns: &NodeSet1D, coeffs: &[f64], b: &SubBox) -> Vec<f64> {
    let xs: Vec<f64> = ns.nodes().iter().map(|&s| b.map(s, 0.0).0).collect();
    let ys: Vec<f64> = ns.nodes().iter().map(|&t| b.map(0.0, t).1).collect();
    basis::tensor_resample(ns, coeffs, &xs, &ys)
}

/// Certify the sign of a 2D nodal polynomial on [-1, 1]^2 by recursive
/// quadrisection of sub-boxes whose bounds straddle zero.
pub fn certify_sign(table: &BoundTable, coeffs: &[f64], max_depth: usize) -> Result<SignCertificate, BoundsError> {
    table.check_len(coeffs.len(), 2)?;
    let ns = basis::gll_nodes(table.degree)?;
    let m = table.control_nodes.len();
    let mut active: Vec<(SubBox, Vec<f64>)> = vec![(SubBox::REFERENCE, coeffs.to_vec())];
    let mut settled_lower = f64::INFINITY;
    let mut best_upper = f64::INFINITY;
    let mut witness = None;
    for depth in 0..=max_depth {
        let mut straddling: Vec<(SubBox, Vec<f64>, f64)> = Vec::new();
        for (bx, vals) in active.drain(..) {
            let bound = bound_function_2d(table, &vals)?;
            let lo = bound.min_lower();
            let (up, k) = bound.min_upper_with_index();
            if up < best_upper {
                best_upper = up;
                let eta = &table.control_nodes;
                let (x, y) = bx.map(eta[k % m], eta[k / m]);
                witness = Some((bx, [x, y]));
            }
            if lo > 0.0 {
                settled_lower = settled_lower.min(lo);
            } else {
                straddling.push((bx, vals, lo));
            }
        }
        let open_lower = straddling.iter().map(|s| s.2).fold(f64::INFINITY, f64::min);
        let certified_lower = settled_lower.min(open_lower);
        let verdict = if best_upper < 0.0 {
            Some(Verdict::Negative)
        } else if straddling.is_empty() {
            Some(Verdict::Positive)
        } else if depth == max_depth {
            Some(Verdict::Undecided)
        } else {
            None
        };
        if let Some(verdict) = verdict {
            return Ok(SignCertificate {
                verdict,
                certified_lower,
                certified_upper: best_upper,
                depth_used: depth,
                witness: if verdict == Verdict::Negative { witness } else { None },
            });
        }
        for (bx, _, _) in straddling {
            for child in bx.children() {
                let vals = restrict(&ns, coeffs, &child);
                active.push((child, vals));
            }
        }
    }
    unreachable!("loop returns at max_depth")
}

/// Branch-and-bound tightening of the lower bound on the minimum.
///
/// Returns `(lower, upper)` bracketing the minimum after `depth` levels of
/// quadrisection, refining only boxes that can still contain the minimum.
pub fn refine_min_bound(table: &BoundTable, coeffs: &[f64], depth: usize) -> Result<(f64, f64), BoundsError> {
    const MAX_BOXES: usize = 4096;
    table.check_len(coeffs.len(), 2)?;
    let ns = basis::gll_nodes(table.degree)?;
    let mut active = vec![(SubBox::REFERENCE, coeffs.to_vec())];
    let mut settled_lower = f64::INFINITY;
    let mut best_upper = f64::INFINITY;
    for level in 0..=depth {
        let mut scored = Vec::with_capacity(active.len());
        for (bx, vals) in active.drain(..) {
            let b = bound_function_2d(table, &vals)?;
            best_upper = best_upper.min(b.min_upper_with_index().0);
            scored.push((bx, b.min_lower()));
        }
        scored.retain(|&(_, lo)| {
            if lo > best_upper {
                settled_lower = settled_lower.min(lo);
                false
            } else {
                true
            }
        });
        scored.sort_by(|a, b| a.1.total_cmp(&b.1));
        if level == depth || scored.len() * 4 > MAX_BOXES {
            let open = scored.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
            return Ok((settled_lower.min(open), best_upper));
        }
        for (bx, _) in scored {
            for child in bx.children() {
                active.push((child, restrict(&ns, coeffs, &child)));
            }
        }
    }
    unreachable!()
}

/// Minimum Bernstein coefficient of 1D GLL-nodal data of degree `p`.
pub fn bernstein_lower_bound_1d(coeffs: &[f64], p: usize) -> Result<f64, BoundsError> {
    let ns = basis::gll_nodes(p)?;
    if coeffs.len() != p + 1 {
        return Err(BoundsError::DegreeMismatch { degree: p, expected: p + 1, got: coeffs.len() });
    }
    Ok(basis::to_bernstein(&ns, coeffs)?.into_iter().fold(f64::INFINITY, f64::min))
}

/// Minimum tensor-product Bernstein coefficient of 2D GLL-nodal data.
pub fn bernstein_lower_bound(coeffs: &[f64], p: usize) -> Result<f64, BoundsError> {
    let ns = basis::gll_nodes(p)?;
    if coeffs.len() != (p + 1) * (p + 1) {
        return Err(BoundsError::DegreeMismatch { degree: p, expected: (p + 1) * (p + 1), got: coeffs.len() });
    }
    Ok(basis::to_bernstein_2d(&ns, coeffs)?.into_iter().fold(f64::INFINITY, f64::min))
}

/// Bernstein lower bound after uniform `depth`-level h-refinement of the square.
pub fn bernstein_lower_bound_refined(coeffs: &[f64], p: usize, depth: usize) -> Result<f64, BoundsError> {
    let ns = basis::gll_nodes(p)?;
    let cells = 1usize << depth;
    let h = 2.0 / cells as f64;
    let mut best = f64::INFINITY;
    for cy in 0..cells {
        for cx in 0..cells {
            let b = SubBox {
                x0: -1.0 + cx as f64 * h,
                x1: -1.0 + (cx + 1) as f64 * h,
                y0: -1.0 + cy as f64 * h,
                y1: -1.0 + (cy + 1) as f64 * h,
            };
            best = best.min(bernstein_lower_bound(&restrict(&ns, coeffs, &b), p)?);
        }
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// Envelope construction

fn interp(ns: &NodeSet1D, vals: &[f64], x: f64, scratch: &mut [f64]) -> f64 {
    ns.eval_into(x, scratch);
    scratch.iter().zip(vals).map(|(a, b)| a * b).sum()
}

fn derivative_values(ns: &NodeSet1D, vals: &[f64]) -> Vec<f64> {
    let mut d = vec![0.0; ns.len()];
    ns.nodes()
        .iter()
        .map(|&x| {
            ns.deriv_into(x, &mut d);
            d.iter().zip(vals).map(|(a, b)| a * b).sum()
        })
        .collect()
}

/// Bisect a sign change of `f` on `[a, b]`.
fn bisect(f: &mut impl FnMut(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let mut fa = f(a);
    for _ in 0..80 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == (fa < 0.0) {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

/// Roots of `f - shift` on `[lo, hi]`, given breakpoints between which `f` is monotone.
fn monotone_roots(
    f: &mut impl FnMut(f64) -> f64,
    shift: f64,
    lo: f64,
    hi: f64,
    breaks: &[f64],
) -> Vec<f64> {
    let mut pts = vec![lo];
    pts.extend(breaks.iter().copied().filter(|&b| b > lo && b < hi));
    pts.push(hi);
    let mut g = |x: f64| f(x) - shift;
    let vals: Vec<f64> = pts.iter().map(|&x| g(x)).collect();
    let mut roots = Vec::new();
    for k in 0..pts.len() - 1 {
        if vals[k] == 0.0 {
            roots.push(pts[k]);
        } else if vals[k + 1] != 0.0 && (vals[k] < 0.0) != (vals[k + 1] < 0.0) {
            roots.push(bisect(&mut g, pts[k], pts[k + 1]));
        }
    }
    if vals[pts.len() - 1] == 0.0 {
        roots.push(hi);
    }
    roots
}

/// Roots of `f''` in (-1, 1), found by descending the derivative chain.
fn second_derivative_roots(ns: &NodeSet1D, vals: &[f64]) -> Vec<f64> {
    let p = ns.order();
    let mut chain = vec![vals.to_vec()];
    for k in 1..=p {
        let next = derivative_values(ns, &chain[k - 1]);
        chain.push(next);
    }
    let mut scratch = vec![0.0; ns.len()];
    let mut roots: Vec<f64> = Vec::new();
    for k in (2..p).rev() {
        let scale = chain[k].iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if scale == 0.0 || scale < 1e-13 * chain[k + 1].iter().fold(0.0f64, |a, v| a.max(v.abs())) {
            roots.clear();
            continue;
        }
        let dk = &chain[k];
        let mut f = |x: f64| interp(ns, dk, x, &mut scratch);
        roots = monotone_roots(&mut f, 0.0, -1.0, 1.0, &roots);
    }
    roots
}

/// Minimum of `chord - f` on `[a, b]` where the chord joins `(a, qa)` and
/// `(b, qb)`, with the location of the minimum.
fn piece_min(
    ns: &NodeSet1D,
    vals: &[f64],
    dvals: &[f64],
    crit: &[f64],
    (a, qa): (f64, f64),
    (b, qb): (f64, f64),
    scratch: &mut [f64],
) -> (f64, f64) {
    let slope = (qb - qa) / (b - a);
    let mut fd = |x: f64| interp(ns, dvals, x, scratch);
    let mut cands = monotone_roots(&mut fd, slope, a, b, crit);
    cands.extend(crit.iter().copied().filter(|&c| c > a && c < b));
    cands.push(a);
    cands.push(b);
    cands
        .into_iter()
        .map(|x| {
            let t = (x - a) / (b - a);
            ((1.0 - t) * qa + t * qb - interp(ns, vals, x, scratch), x)
        })
        .fold((f64::INFINITY, a), |acc, c| if c.0 < acc.0 { c } else { acc })
}

struct Piece {
    a: f64,
    b: f64,
    ts: Vec<f64>,
    fs: Vec<f64>,
    /// integral of f (1 - t) over the piece
    moment_left: f64,
    /// integral of f t over the piece
    moment_right: f64,
}

/// Approximately L2-optimal upper envelope of the polynomial with nodal `vals`.
fn upper_envelope(ns: &NodeSet1D, vals: &[f64], eta: &[f64]) -> Vec<f64> {
    let p = ns.order();
    let m = eta.len();
    let mut scratch = vec![0.0; ns.len()];
    let f = |x: f64, s: &mut [f64]| interp(ns, vals, x, s);
    let mut q: Vec<f64> = eta.iter().map(|&e| f(e, &mut scratch)).collect();
    if p == 1 {
        return q;
    }

    let quad = basis::gll_quadrature(p + 2);
    let samples = (8 * (p + 1)).max(32);
    let pieces: Vec<Piece> = eta
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let len = b - a;
            let mut ts: Vec<f64> = (0..=samples).map(|k| k as f64 / samples as f64).collect();
            ts.extend(quad.points.iter().map(|&z| 0.5 * (z + 1.0)));
            let fs = ts.iter().map(|&t| f(a + t * len, &mut scratch)).collect();
            let (mut ml, mut mr) = (0.0, 0.0);
            for (&z, &w) in quad.points.iter().zip(&quad.weights) {
                let t = 0.5 * (z + 1.0);
                let fx = f(a + t * len, &mut scratch);
                ml += 0.5 * len * w * fx * (1.0 - t);
                mr += 0.5 * len * w * fx * t;
            }
            Piece { a, b, ts, fs, moment_left: ml, moment_right: mr }
        })
        .collect();

    // The end values stay pinned to f(-1), f(1) so that minima at the
    // element vertices are captured exactly; interior values are lifted to
    // sampled feasibility.
    for (j, pc) in pieces.iter().enumerate() {
        let (left_pinned, right_pinned) = (j == 0, j + 2 == m);
        let mut lift = 0.0f64;
        for (&t, &fx) in pc.ts.iter().zip(&pc.fs) {
            let viol = fx - ((1.0 - t) * q[j] + t * q[j + 1]);
            if viol <= 0.0 {
                continue;
            }
            let share = match (left_pinned, right_pinned) {
                (true, false) => t,
                (false, true) => 1.0 - t,
                _ => 1.0,
            };
            if share > 0.0 {
                lift = lift.max(viol / share);
            }
        }
        if !left_pinned {
            q[j] += lift;
        }
        if !right_pinned {
            q[j + 1] += lift;
        }
    }

    // projected coordinate descent on the L2 distance
    let scale = q.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
    for _sweep in 0..4000 {
        let mut change = 0.0f64;
        for j in 1..m - 1 {
            let mut num = 0.0;
            let mut den = 0.0;
            let mut floor = f64::NEG_INFINITY;
            if j > 0 {
                let pc = &pieces[j - 1];
                let len = pc.b - pc.a;
                num += pc.moment_right - q[j - 1] * len / 6.0;
                den += len / 3.0;
                for (&t, &fx) in pc.ts.iter().zip(&pc.fs) {
                    if t > 0.0 {
                        floor = floor.max((fx - (1.0 - t) * q[j - 1]) / t);
                    }
                }
            }
            if j + 1 < m {
                let pc = &pieces[j];
                let len = pc.b - pc.a;
                num += pc.moment_left - q[j + 1] * len / 6.0;
                den += len / 3.0;
                for (&s, &fx) in pc.ts.iter().zip(&pc.fs) {
                    if s < 1.0 {
                        floor = floor.max((fx - s * q[j + 1]) / (1.0 - s));
                    }
                }
            }
            let next = (num / den).max(floor);
            change = change.max((next - q[j]).abs());
            q[j] = next;
        }
        if change <= 1e-15 * scale {
            break;
        }
    }

    // exact feasibility via critical points of the chord gap
    let dvals = derivative_values(ns, vals);
    let crit = second_derivative_roots(ns, vals);
    for j in 0..m - 1 {
        for _ in 0..256 {
            let (gap, x) = piece_min(ns, vals, &dvals, &crit, (eta[j], q[j]), (eta[j + 1], q[j + 1]), &mut scratch);
            if gap >= 0.0 {
                break;
            }
            let t = (x - eta[j]) / (eta[j + 1] - eta[j]);
            match (j == 0, j + 2 == m) {
                (true, false) => q[j + 1] -= gap / t.max(1e-9),
                (false, true) => q[j] -= gap / (1.0 - t).max(1e-9),
                _ => {
                    q[j] -= gap;
                    q[j + 1] -= gap;
                }
            }
        }
    }
    q
}

/// Minimum over the pieces of `envelope - f`, checked exactly per piece.
/// Exposed for tests and diagnostics.
pub fn envelope_gap(ns: &NodeSet1D, vals: &[f64], eta: &[f64], env: &[f64]) -> f64 {
    let dvals = derivative_values(ns, vals);
    let crit = second_derivative_roots(ns, vals);
    let mut scratch = vec![0.0; ns.len()];
    (0..eta.len() - 1)
        .map(|j| piece_min(ns, vals, &dvals, &crit, (eta[j], env[j]), (eta[j + 1], env[j + 1]), &mut scratch).0)
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Dense-sampling oracle using the product form of the Lagrange basis.
    fn lagrange_product(nodes: &[f64], vals: &[f64], x: f64) -> f64 {
        (0..nodes.len())
            .map(|j| {
                let mut l = 1.0;
                for (k, &xk) in nodes.iter().enumerate() {
                    if k != j {
                        l *= (x - xk) / (nodes[j] - xk);
                    }
                }
                vals[j] * l
            })
            .sum()
    }

    #[test]
    fn linear_basis_is_its_own_envelope() {
        for m in [2, 3, 7] {
            let t = build_bound_table(1, m).unwrap();
            for i in 0..2 {
                for (j, &e) in t.control_nodes().iter().enumerate() {
                    let phi = if i == 0 { 0.5 * (1.0 - e) } else { 0.5 * (1.0 + e) };
                    assert!((t.q_plus()[i][j] - phi).abs() < 1e-15);
                    assert!((t.q_minus()[i][j] - phi).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn too_few_control_nodes_rejected() {
        assert!(matches!(build_bound_table(4, 4), Err(BoundsError::TooFewControlNodes { .. })));
        assert!(matches!(build_bound_table(0, 4), Err(BoundsError::Basis(_))));
    }

    #[test]
    fn envelopes_bound_each_basis_on_dense_samples() {
        let p = 4;
        let t = build_bound_table(p, 10).unwrap();
        let ns = basis::gll_nodes(p).unwrap();
        for i in 0..=p {
            let mut unit = vec![0.0; p + 1];
            unit[i] = 1.0;
            let g = envelope_gap(&ns, &unit, t.control_nodes(), &t.q_plus()[i]);
            assert!(g >= 0.0, "basis {i}: gap {g}");
            for k in 0..10_000 {
                let x = -1.0 + 2.0 * k as f64 / 9_999.0;
                let phi = lagrange_product(ns.nodes(), &unit, x);
                assert!(lerp_at(t.control_nodes(), &t.q_plus()[i], x) >= phi);
                assert!(lerp_at(t.control_nodes(), &t.q_minus()[i], x) <= phi);
            }
            for j in 0..10 {
                assert!(t.q_minus()[i][j] <= t.q_plus()[i][j]);
            }
        }
    }

    #[test]
    fn more_control_nodes_give_tighter_envelopes() {
        let p = 4;
        let ns = basis::gll_nodes(p).unwrap();
        let area = |m: usize, i: usize| {
            let t = build_bound_table(p, m).unwrap();
            let mut unit = vec![0.0; p + 1];
            unit[i] = 1.0;
            (0..2000)
                .map(|k| {
                    let x = -1.0 + 2.0 * (k as f64 + 0.5) / 2000.0;
                    lerp_at(t.control_nodes(), &t.q_plus()[i], x) - ns.interpolate(&unit, x)
                })
                .sum::<f64>()
        };
        for i in 0..=p {
            assert!(area(10, i) < area(6, i), "basis {i}");
        }
    }

    #[test]
    fn constant_bounds_collapse() {
        let t = build_bound_table(5, 8).unwrap();
        let b = bound_function_1d(&t, &[0.7; 6]).unwrap();
        for (l, u) in b.lower.iter().zip(&b.upper) {
            assert!((l - 0.7).abs() < 1e-13 && (u - 0.7).abs() < 1e-13);
        }
        let t2 = build_bound_table(3, 6).unwrap();
        let b2 = bound_function_2d(&t2, &[-1.25; 16]).unwrap();
        assert!(b2.lower.iter().chain(&b2.upper).all(|v| (v + 1.25).abs() < 1e-13));
        assert!(bound_function_1d(&t, &[1.0; 3]).is_err());
        assert!(bound_function_2d(&t2, &[1.0; 9]).is_err());
    }

    #[test]
    fn random_quartic_bounds_are_sound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = build_bound_table(4, 10).unwrap();
        let ns = basis::gll_nodes(4).unwrap();
        for _ in 0..50 {
            let u: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let b = bound_function_1d(&t, &u).unwrap();
            for k in 0..10_000 {
                let x = -1.0 + 2.0 * k as f64 / 9_999.0;
                let v = lagrange_product(ns.nodes(), &u, x);
                assert!(b.lower_at(x) <= v && v <= b.upper_at(x));
            }
        }
    }

    #[test]
    fn vertex_minimum_is_captured() {
        // increasing quartics, minimum at x = -1; mirrored ones at x = +1
        for p in [4, 6] {
            let ns = basis::gll_nodes(p).unwrap();
            let t = build_bound_table(p, 2 * (p + 1)).unwrap();
            let f = |x: f64| 2.0 * (x + 1.0) + 0.4 * x.powi(3) - 0.1 * x.powi(4) - 0.3;
            let u: Vec<f64> = ns.nodes().iter().map(|&x| f(x)).collect();
            let b = bound_function_1d(&t, &u).unwrap();
            assert!((b.min_lower() - f(-1.0)).abs() < 1e-12, "{}", b.min_lower());
            let mirrored: Vec<f64> = ns.nodes().iter().map(|&x| f(-x)).collect();
            let b = bound_function_1d(&t, &mirrored).unwrap();
            assert!((b.min_lower() - f(-1.0)).abs() < 1e-12, "{}", b.min_lower());
        }
    }

    #[test]
    fn separable_2d_matches_1d() {
        let p = 3;
        let t = build_bound_table(p, 8).unwrap();
        let f = [0.3, -1.2, 0.8, 0.1];
        let mut u = vec![0.0; 16];
        for j in 0..4 {
            u[j * 4..j * 4 + 4].copy_from_slice(&f);
        }
        let b1 = bound_function_1d(&t, &f).unwrap();
        let b2 = bound_function_2d(&t, &u).unwrap();
        for k in 0..8 {
            for j in 0..8 {
                assert!((b2.lower[k * 8 + j] - b1.lower[j]).abs() < 1e-12);
                assert!((b2.upper[k * 8 + j] - b1.upper[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn random_2d_bounds_are_sound() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = 3;
        let t = build_bound_table(p, 8).unwrap();
        let ns = basis::gll_nodes(p).unwrap();
        for _ in 0..5 {
            let u: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b = bound_function_2d(&t, &u).unwrap();
            for ky in 0..200 {
                let y = -1.0 + 2.0 * ky as f64 / 199.0;
                for kx in 0..200 {
                    let x = -1.0 + 2.0 * kx as f64 / 199.0;
                    let v = basis::tensor_eval(&ns, &u, x, y);
                    assert!(b.lower_at(x, y) <= v && v <= b.upper_at(x, y));
                }
            }
        }
    }

    #[test]
    fn certify_constant_and_linear() {
        let t = build_bound_table(2, 6).unwrap();
        let c = certify_sign(&t, &[1.0; 9], 4).unwrap();
        assert_eq!(c.verdict, Verdict::Positive);
        assert_eq!(c.depth_used, 0);
        let ns = basis::gll_nodes(2).unwrap();
        let u: Vec<f64> = (0..9).map(|k| ns.nodes()[k % 3]).collect();
        let c = certify_sign(&t, &u, 4).unwrap();
        assert_eq!(c.verdict, Verdict::Negative);
        assert!(c.certified_upper < 0.0);
        let (_, [x, _]) = c.witness.unwrap();
        assert!(x < 0.0);
    }

    #[test]
    fn off_lattice_minimum_is_found() {
        let p = 4;
        let ns = basis::gll_nodes(p).unwrap();
        let (a, b, depth_min) = (0.137, -0.291, 0.0104);
        let f = |x: f64, y: f64| {
            let r = (x - a).powi(2) + (y - b).powi(2);
            r * r + r - depth_min
        };
        let mut u = vec![0.0; 25];
        for j in 0..5 {
            for i in 0..5 {
                u[j * 5 + i] = f(ns.nodes()[i], ns.nodes()[j]);
            }
        }
        let t = build_bound_table(p, 10).unwrap();
        let c = certify_sign(&t, &u, 4).unwrap();
        assert_eq!(c.verdict, Verdict::Negative);
        assert!(c.depth_used <= 4);
        assert!(c.certified_lower <= -depth_min);
        let mut prev = f64::NEG_INFINITY;
        for depth in 0..6 {
            let (lo, up) = refine_min_bound(&t, &u, depth).unwrap();
            assert!(lo <= -depth_min + 1e-12 && up >= -depth_min - 1e-12);
            assert!(lo >= prev - 1e-12);
            prev = lo;
        }
        assert!(prev > -depth_min - 1e-3, "lower bound {prev} did not converge");
    }

    #[test]
    fn bernstein_simple_cases() {
        assert!((bernstein_lower_bound_1d(&[3.0; 5], 4).unwrap() - 3.0).abs() < 1e-13);
        let ns = basis::gll_nodes(4).unwrap();
        let lin: Vec<f64> = ns.nodes().to_vec();
        assert!((bernstein_lower_bound_1d(&lin, 4).unwrap() + 1.0).abs() < 1e-13);
        let grid: Vec<f64> = (0..25).map(|k| ns.nodes()[k % 5]).collect();
        assert!((bernstein_lower_bound(&grid, 4).unwrap() + 1.0).abs() < 1e-13);
    }
}
