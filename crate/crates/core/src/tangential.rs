//! Sliding of boundary nodes along the frozen initial boundary.
//!
//! A trial configuration is corrected in three steps: every tangential node
//! is projected to its closest point on the initial boundary curve, the
//! resulting boundary displacements are extended into the interior by a
//! discrete Laplace solve, and the extended displacement is added to the
//! trial nodes.

use serde::Serialize;
use thiserror::Error;

use crate::basis;
use crate::mesh::{BoundaryCurve, Mesh, NodeClass, Point};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TangentialError {
    #[error("element {elem} has a non-positive Jacobian at a quadrature point; blending needs a valid mesh")]
    InvalidMesh { elem: usize },
    #[error("conjugate gradients did not converge in {iterations} iterations (relative residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("no boundary segment carries attribute {0}")]
    MissingAttribute(u32),
}

/// Closest point on a boundary curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Projection {
    pub point: Point,
    pub segment: usize,
    /// reference coordinate on the segment
    pub t: f64,
    /// squared distance from the query point
    pub residual: f64,
    /// unit tangent of the curve at the projection
    pub tangent: Point,
}

fn dist2(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Local minimizers of the squared distance on one segment, from several starts.
fn project_on_segment(curve: &BoundaryCurve, s: usize, x: Point, ns: &basis::NodeSet1D, seeds: &[f64]) -> (f64, f64) {
    let seg = &curve.segments[s];
    let f = |t: f64| dist2(seg.eval(ns, t), x);
    let mut best = (f(-1.0), -1.0);
    let end = (f(1.0), 1.0);
    if end.0 < best.0 {
        best = end;
    }
    for &t0 in seeds {
        let mut t = t0;
        let mut ft = f(t);
        for _ in 0..60 {
            let c = seg.eval(ns, t);
            let d1 = seg.tangent(ns, t);
            let d2 = seg.second_derivative(ns, t);
            let r = [c[0] - x[0], c[1] - x[1]];
            let g = r[0] * d1[0] + r[1] * d1[1];
            let h = d1[0] * d1[0] + d1[1] * d1[1] + r[0] * d2[0] + r[1] * d2[1];
            // Newton where the model is convex, otherwise a gradient step
            let mut step = if h > 0.0 { -g / h } else { -g.signum() * 0.25 };
            let mut accepted = false;
            for _ in 0..40 {
                let tn = (t + step).clamp(-1.0, 1.0);
                let fnew = f(tn);
                if fnew <= ft {
                    accepted = tn != t;
                    t = tn;
                    ft = fnew;
                    break;
                }
                step *= 0.5;
            }
            if !accepted || step.abs() < 1e-16 {
                break;
            }
        }
        if ft < best.0 {
            best = (ft, t);
        }
    }
    best
}

/// Closest point to `x` on the segments of `curve` accepted by `keep`.
pub fn closest_point_where(curve: &BoundaryCurve, x: Point, keep: impl Fn(usize) -> bool) -> Option<Projection> {
    let ns = curve.basis();
    let seeds = basis::gll_nodes(4).expect("fixed degree");
    let mut order: Vec<(f64, usize)> = (0..curve.segments.len())
        .filter(|&s| keep(s))
        .map(|s| (curve.segments[s].bbox.distance2(x), s))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut best: Option<(f64, usize, f64)> = None;
    for (box_d2, s) in order {
        // the box holds the whole segment, so it cannot contain anything closer
        if let Some((r, _, _)) = best {
            if box_d2 > r {
                break;
            }
        }
        let (r, t) = project_on_segment(curve, s, x, &ns, seeds.nodes());
        if best.is_none_or(|b| r < b.0) {
            best = Some((r, s, t));
        }
    }
    best.map(|(residual, segment, t)| {
        let seg = &curve.segments[segment];
        let d = seg.tangent(&ns, t);
        let len = (d[0] * d[0] + d[1] * d[1]).sqrt().max(f64::MIN_POSITIVE);
        Projection { point: seg.eval(&ns, t), segment, t, residual, tangent: [d[0] / len, d[1] / len] }
    })
}

/// Closest point to `x` on the whole curve.
pub fn closest_point(curve: &BoundaryCurve, x: Point) -> Projection {
    closest_point_where(curve, x, |_| true).expect("curve has at least one segment")
}

/// Closest point restricted to segments carrying `attr`.
pub fn closest_point_on_attr(curve: &BoundaryCurve, x: Point, attr: u32) -> Result<Projection, TangentialError> {
    closest_point_where(curve, x, |s| curve.segments[s].attr == attr).ok_or(TangentialError::MissingAttribute(attr))
}

/// Boundary corrections `projection(x) - x` for tangential nodes, zero elsewhere.
pub fn project_boundary(
    mesh: &Mesh,
    curve: &BoundaryCurve,
    classes: &[NodeClass],
) -> Result<(Vec<Point>, Vec<Option<Projection>>), TangentialError> {
    let mut disp = vec![[0.0; 2]; mesh.num_nodes()];
    let mut proj = vec![None; mesh.num_nodes()];
    for (i, c) in classes.iter().enumerate() {
        if let NodeClass::TangentialBoundary(attr) = *c {
            let p = closest_point_on_attr(curve, mesh.nodes[i], attr)?;
            disp[i] = [p.point[0] - mesh.nodes[i][0], p.point[1] - mesh.nodes[i][1]];
            proj[i] = Some(p);
        }
    }
    Ok((disp, proj))
}

/// Square sparse matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    /// Assemble from triplets, summing duplicates.
    pub fn from_triplets(n: usize, mut trip: Vec<(usize, usize, f64)>) -> Self {
        trip.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0; n + 1];
        let mut cols = Vec::with_capacity(trip.len());
        let mut vals: Vec<f64> = Vec::with_capacity(trip.len());
        let mut last = None;
        for (r, c, v) in trip {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        CsrMatrix { n, row_ptr, cols, vals }
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for r in 0..self.n {
            y[r] = (self.row_ptr[r]..self.row_ptr[r + 1]).map(|k| self.vals[k] * x[self.cols[k]]).sum();
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|r| (self.row_ptr[r]..self.row_ptr[r + 1]).find(|&k| self.cols[k] == r).map_or(0.0, |k| self.vals[k]))
            .collect()
    }
}

/// Preconditioned conjugate gradients with a diagonal preconditioner.
/// Returns the iteration count.
pub fn pcg(a: &CsrMatrix, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<usize, TangentialError> {
    let n = a.n;
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(0);
    }
    let dinv: Vec<f64> = a.diagonal().iter().map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 }).collect();
    let mut r = vec![0.0; n];
    a.mul_vec(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z: Vec<f64> = r.iter().zip(&dinv).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; n];
    let mut rel = r.iter().map(|v| v * v).sum::<f64>().sqrt() / bnorm;
    for it in 0..max_iter {
        if rel <= tol {
            return Ok(it);
        }
        a.mul_vec(&p, &mut ap);
        let alpha = rz / p.iter().zip(&ap).map(|(a, b)| a * b).sum::<f64>();
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        rel = r.iter().map(|v| v * v).sum::<f64>().sqrt() / bnorm;
        for i in 0..n {
            z[i] = r[i] * dinv[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if rel <= tol {
        Ok(max_iter)
    } else {
        Err(TangentialError::NoConvergence { iterations: max_iter, residual: rel })
    }
}

/// Scalar Laplace stiffness of the mesh's own space, GLL rule of order 2p.
pub fn stiffness(mesh: &Mesh) -> Result<CsrMatrix, TangentialError> {
    let ns = mesh.basis();
    let n = ns.len();
    let rule = basis::gll_quadrature(2 * mesh.order);
    let (b, d) = (ns.eval_matrix(&rule.points), ns.deriv_matrix(&rule.points));
    let nq = rule.points.len();
    let mut trip = Vec::with_capacity(mesh.num_elements() * n.pow(4));
    for e in 0..mesh.num_elements() {
        let jac = mesh.jacobians_on_lattice(e, &rule.points, &rule.points);
        let nl = n * n;
        let mut k = vec![0.0; nl * nl];
        for qb in 0..nq {
            for qa in 0..nq {
                let a = jac[qb * nq + qa];
                let det = a.determinant();
                if det <= 0.0 {
                    return Err(TangentialError::InvalidMesh { elem: e });
                }
                let ainv = a.try_inverse().ok_or(TangentialError::InvalidMesh { elem: e })?;
                let c = ainv * ainv.transpose() * (det * rule.weights[qa] * rule.weights[qb]);
                let grads: Vec<[f64; 2]> = (0..nl).map(|l| {
                    let (i, j) = (l % n, l / n);
                    [d[qa][i] * b[qb][j], b[qa][i] * d[qb][j]]
                }).collect();
                for (r, gr) in grads.iter().enumerate() {
                    let cg = [c[(0, 0)] * gr[0] + c[(0, 1)] * gr[1], c[(1, 0)] * gr[0] + c[(1, 1)] * gr[1]];
                    for (s, gs) in grads.iter().enumerate() {
                        k[r * nl + s] += cg[0] * gs[0] + cg[1] * gs[1];
                    }
                }
            }
        }
        let conn = &mesh.elements[e];
        for r in 0..nl {
            for s in 0..nl {
                trip.push((conn[r], conn[s], k[r * nl + s]));
            }
        }
    }
    Ok(CsrMatrix::from_triplets(mesh.num_nodes(), trip))
}

/// Harmonic extension of boundary displacements.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlendField {
    pub displacement: Vec<Point>,
    /// Dirichlet mask: true for every boundary node
    pub dirichlet: Vec<bool>,
    pub iterations: usize,
}

/// Solve the discrete Laplace problem for each displacement component with
/// `boundary_disp` imposed on every boundary node.
pub fn laplace_blend(mesh: &Mesh, boundary_disp: &[Point], classes: &[NodeClass], tol: f64) -> Result<BlendField, TangentialError> {
    let nn = mesh.num_nodes();
    let dirichlet: Vec<bool> = classes.iter().map(|c| c.is_boundary()).collect();
    let mut displacement = vec![[0.0; 2]; nn];
    for i in 0..nn {
        if dirichlet[i] {
            displacement[i] = boundary_disp[i];
        }
    }
    let interior: Vec<usize> = (0..nn).filter(|&i| !dirichlet[i]).collect();
    if interior.is_empty() || boundary_disp.iter().all(|d| *d == [0.0, 0.0]) {
        return Ok(BlendField { displacement, dirichlet, iterations: 0 });
    }
    let k = stiffness(mesh)?;
    let mut local = vec![usize::MAX; nn];
    for (li, &g) in interior.iter().enumerate() {
        local[g] = li;
    }
    let mut trip = Vec::new();
    let mut rhs = vec![[0.0; 2]; interior.len()];
    for (li, &g) in interior.iter().enumerate() {
        for kk in k.row_ptr[g]..k.row_ptr[g + 1] {
            let c = k.cols[kk];
            if dirichlet[c] {
                rhs[li][0] -= k.vals[kk] * displacement[c][0];
                rhs[li][1] -= k.vals[kk] * displacement[c][1];
            } else {
                trip.push((li, local[c], k.vals[kk]));
            }
        }
    }
    let kii = CsrMatrix::from_triplets(interior.len(), trip);
    let max_iter = 10 * nn;
    let mut iterations = 0;
    for c in 0..2 {
        let b: Vec<f64> = rhs.iter().map(|r| r[c]).collect();
        let mut x = vec![0.0; interior.len()];
        iterations += pcg(&kii, &b, &mut x, tol, max_iter)?;
        for (li, &g) in interior.iter().enumerate() {
            displacement[g][c] = x[li];
        }
    }
    Ok(BlendField { displacement, dirichlet, iterations })
}

/// Result of a relaxation step.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxOutcome {
    pub nodes: Vec<Point>,
    pub projections: Vec<Option<Projection>>,
    /// largest squared distance from a tangential node to the curve after the update
    pub max_residual: f64,
    pub cg_iterations: usize,
}

/// Project, blend and update. Tangential nodes end exactly on their projections.
pub fn relax(mesh_trial: &Mesh, curve: &BoundaryCurve, classes: &[NodeClass], tol: f64) -> Result<RelaxOutcome, TangentialError> {
    let (disp, projections) = project_boundary(mesh_trial, curve, classes)?;
    let field = laplace_blend(mesh_trial, &disp, classes, tol)?;
    let mut nodes: Vec<Point> = mesh_trial
        .nodes
        .iter()
        .zip(&field.displacement)
        .map(|(x, d)| [x[0] + d[0], x[1] + d[1]])
        .collect();
    let mut max_residual: f64 = 0.0;
    for (i, p) in projections.iter().enumerate() {
        if let Some(p) = p {
            nodes[i] = p.point;
            let attr = match classes[i] {
                NodeClass::TangentialBoundary(a) => a,
                _ => unreachable!("projections exist only for tangential nodes"),
            };
            max_residual = max_residual.max(closest_point_on_attr(curve, p.point, attr)?.residual);
        }
    }
    for (i, c) in classes.iter().enumerate() {
        if !c.is_free() {
            nodes[i] = mesh_trial.nodes[i];
        }
    }
    Ok(RelaxOutcome { nodes, projections, max_residual, cg_iterations: field.iterations })
}
