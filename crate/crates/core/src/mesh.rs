//! High-order quadrilateral meshes in 2D.
//!
//! Each element stores `(p+1)^2` global node indices on its GLL lattice in
//! lexicographic order (xi fastest). Local edges are numbered 0 = bottom
//! (eta = -1), 1 = right (xi = +1), 2 = top (eta = +1), 3 = left (xi = -1);
//! edge nodes are listed in increasing lattice coordinate.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{self, NodeSet1D};

pub type Point = [f64; 2];

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("cannot access {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed mesh JSON at line {line}, column {column}: {message}")]
    Json { line: usize, column: usize, message: String },
    #[error("only 2D meshes are supported (got dim = {0})")]
    UnsupportedDim(usize),
    #[error("mesh order must be at least 1")]
    ZeroOrder,
    #[error("element {elem} lists {got} nodes, expected {expected}")]
    NodeCount { elem: usize, expected: usize, got: usize },
    #[error("dangling index: element {elem} local node {local} refers to node {index}, but the mesh has {nodes} nodes")]
    DanglingIndex { elem: usize, local: usize, index: usize, nodes: usize },
    #[error("boundary entry {entry} refers to element {elem}, but the mesh has {elements} elements")]
    BoundaryElement { entry: usize, elem: usize, elements: usize },
    #[error("boundary entry {entry} has local edge {edge}, expected 0..=3")]
    BoundaryEdgeId { entry: usize, edge: usize },
    #[error("boundary entry {entry} has attribute 0; attributes must be positive")]
    ZeroAttribute { entry: usize },
    #[error("boundary entry {entry} repeats element {elem} edge {edge}")]
    DuplicateBoundary { entry: usize, elem: usize, edge: usize },
    #[error("node {node} has a non-finite coordinate")]
    NonFinite { node: usize },
    #[error("no boundary edge carries any of the attributes {0:?}")]
    EmptySelection(Vec<u32>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundaryEdge {
    pub elem: usize,
    pub edge: usize,
    pub attr: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub dim: usize,
    pub order: usize,
    pub nodes: Vec<Point>,
    pub elements: Vec<Vec<usize>>,
    pub boundary: Vec<BoundaryEdge>,
}

/// Local lattice indices of edge `edge` for order `p`, increasing along the edge.
pub fn edge_local_indices(p: usize, edge: usize) -> Vec<usize> {
    let n = p + 1;
    match edge {
        0 => (0..n).collect(),
        1 => (0..n).map(|j| j * n + p).collect(),
        2 => (0..n).map(|i| p * n + i).collect(),
        3 => (0..n).map(|j| j * n).collect(),
        _ => panic!("local edge id {edge} out of range"),
    }
}

/// Reference point at parameter `s` in [-1, 1] along local edge `edge`.
pub fn edge_reference_point(edge: usize, s: f64) -> [f64; 2] {
    match edge {
        0 => [s, -1.0],
        1 => [1.0, s],
        2 => [s, 1.0],
        3 => [-1.0, s],
        _ => panic!("local edge id {edge} out of range"),
    }
}

impl Mesh {
    pub fn new(order: usize, nodes: Vec<Point>, elements: Vec<Vec<usize>>, boundary: Vec<BoundaryEdge>) -> Result<Self, MeshError> {
        let mesh = Mesh { dim: 2, order, nodes, elements, boundary };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        if self.dim != 2 {
            return Err(MeshError::UnsupportedDim(self.dim));
        }
        if self.order == 0 {
            return Err(MeshError::ZeroOrder);
        }
        if let Some(node) = self.nodes.iter().position(|x| !x[0].is_finite() || !x[1].is_finite()) {
            return Err(MeshError::NonFinite { node });
        }
        let expected = self.nodes_per_element();
        for (elem, conn) in self.elements.iter().enumerate() {
            if conn.len() != expected {
                return Err(MeshError::NodeCount { elem, expected, got: conn.len() });
            }
            if let Some((local, &index)) = conn.iter().enumerate().find(|(_, &i)| i >= self.nodes.len()) {
                return Err(MeshError::DanglingIndex { elem, local, index, nodes: self.nodes.len() });
            }
        }
        let mut seen = HashSet::new();
        for (entry, b) in self.boundary.iter().enumerate() {
            if b.elem >= self.elements.len() {
                return Err(MeshError::BoundaryElement { entry, elem: b.elem, elements: self.elements.len() });
            }
            if b.edge > 3 {
                return Err(MeshError::BoundaryEdgeId { entry, edge: b.edge });
            }
            if b.attr == 0 {
                return Err(MeshError::ZeroAttribute { entry });
            }
            if !seen.insert((b.elem, b.edge)) {
                return Err(MeshError::DuplicateBoundary { entry, elem: b.elem, edge: b.edge });
            }
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self, MeshError> {
        let mesh: Mesh = serde_json::from_str(text)
            .map_err(|e| MeshError::Json { line: e.line(), column: e.column(), message: e.to_string() })?;
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(self).expect("mesh serialization cannot fail")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MeshError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| MeshError::Io { path: path.to_path_buf(), source })?;
        Self::from_json_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MeshError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()).map_err(|source| MeshError::Io { path: path.to_path_buf(), source })
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn nodes_per_element(&self) -> usize {
        (self.order + 1) * (self.order + 1)
    }

    pub fn basis(&self) -> std::sync::Arc<NodeSet1D> {
        basis::gll_nodes(self.order).expect("validated order")
    }

    /// Nodal x and y coordinates of element `e` in lattice order.
    pub fn element_coords(&self, e: usize) -> (Vec<f64>, Vec<f64>) {
        self.elements[e].iter().map(|&i| (self.nodes[i][0], self.nodes[i][1])).unzip()
    }

    /// Physical location of reference point `xi` in element `e`.
    pub fn position(&self, e: usize, xi: [f64; 2]) -> Point {
        let ns = self.basis();
        let (xs, ys) = self.element_coords(e);
        [basis::tensor_eval(&ns, &xs, xi[0], xi[1]), basis::tensor_eval(&ns, &ys, xi[0], xi[1])]
    }

    /// Jacobian of the element map: column b holds the derivative along reference direction b.
    pub fn jacobian(&self, e: usize, xi: [f64; 2]) -> Matrix2<f64> {
        let ns = self.basis();
        let n = ns.len();
        let (bx, dx) = (ns.eval(xi[0]), ns.deriv(xi[0]));
        let (by, dy) = (ns.eval(xi[1]), ns.deriv(xi[1]));
        let mut a = Matrix2::zeros();
        for (local, &g) in self.elements[e].iter().enumerate() {
            let (i, j) = (local % n, local / n);
            let (gx, gy) = (dx[i] * by[j], bx[i] * dy[j]);
            for c in 0..2 {
                a[(c, 0)] += self.nodes[g][c] * gx;
                a[(c, 1)] += self.nodes[g][c] * gy;
            }
        }
        a
    }

    /// Jacobians of element `e` on the tensor lattice `xs x ys`, indexed `b * xs.len() + a`.
    pub fn jacobians_on_lattice(&self, e: usize, xs: &[f64], ys: &[f64]) -> Vec<Matrix2<f64>> {
        let ns = self.basis();
        let n = ns.len();
        let (bx, dx) = (ns.eval_matrix(xs), ns.deriv_matrix(xs));
        let (by, dy) = (ns.eval_matrix(ys), ns.deriv_matrix(ys));
        let conn = &self.elements[e];
        // partial sums over i for each lattice row j: value and xi-derivative
        let mut row_val = vec![[0.0; 2]; n * xs.len()];
        let mut row_der = vec![[0.0; 2]; n * xs.len()];
        for j in 0..n {
            for a in 0..xs.len() {
                let (mut v, mut d) = ([0.0; 2], [0.0; 2]);
                for i in 0..n {
                    let x = self.nodes[conn[j * n + i]];
                    for c in 0..2 {
                        v[c] += bx[a][i] * x[c];
                        d[c] += dx[a][i] * x[c];
                    }
                }
                row_val[j * xs.len() + a] = v;
                row_der[j * xs.len() + a] = d;
            }
        }
        let mut out = Vec::with_capacity(xs.len() * ys.len());
        for b in 0..ys.len() {
            for a in 0..xs.len() {
                let mut m = Matrix2::zeros();
                for j in 0..n {
                    let (v, d) = (row_val[j * xs.len() + a], row_der[j * xs.len() + a]);
                    for c in 0..2 {
                        m[(c, 0)] += by[b][j] * d[c];
                        m[(c, 1)] += dy[b][j] * v[c];
                    }
                }
                out.push(m);
            }
        }
        out
    }

    /// Global node indices of local edge `edge` of element `e`.
    pub fn edge_nodes(&self, e: usize, edge: usize) -> Vec<usize> {
        edge_local_indices(self.order, edge).into_iter().map(|l| self.elements[e][l]).collect()
    }

    /// Area of element `e` by GLL quadrature exact to degree `quad_order`.
    pub fn element_area(&self, e: usize, quad_order: usize) -> f64 {
        let rule = basis::gll_quadrature(quad_order);
        let mut area = 0.0;
        for (&y, &wy) in rule.points.iter().zip(&rule.weights) {
            for (&x, &wx) in rule.points.iter().zip(&rule.weights) {
                area += wx * wy * self.jacobian(e, [x, y]).determinant();
            }
        }
        area
    }

    pub fn mean_element_area(&self) -> f64 {
        let q = 2 * self.order;
        (0..self.num_elements()).map(|e| self.element_area(e, q)).sum::<f64>() / self.num_elements() as f64
    }

    /// Node coordinates flattened as `[x0, y0, x1, y1, ...]`.
    pub fn flat_coords(&self) -> Vec<f64> {
        self.nodes.iter().flat_map(|x| x.iter().copied()).collect()
    }

    pub fn set_flat_coords(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), 2 * self.nodes.len());
        for (node, c) in self.nodes.iter_mut().zip(flat.chunks_exact(2)) {
            *node = [c[0], c[1]];
        }
    }

    /// Typical element edge length.
    pub fn length_scale(&self) -> f64 {
        self.mean_element_area().abs().sqrt()
    }

    /// Conforming `nx x ny` grid of order-`p` elements. Lattice points are
    /// placed at the GLL nodes of the logical unit square and mapped by `map`;
    /// sides bottom, right, top, left receive `side_attrs`.
    pub fn structured(nx: usize, ny: usize, p: usize, side_attrs: [u32; 4], map: impl Fn(f64, f64) -> Point) -> Mesh {
        let ns = basis::gll_nodes(p).expect("order at least 1");
        let (gx, gy) = (nx * p + 1, ny * p + 1);
        let coord = |cell: usize, k: usize, cells: usize| (cell as f64 + 0.5 * (ns.nodes()[k] + 1.0)) / cells as f64;
        let logical = |g: usize, cells: usize| {
            if g == cells * p {
                1.0
            } else {
                coord(g / p, g % p, cells)
            }
        };
        let mut nodes = Vec::with_capacity(gx * gy);
        for gj in 0..gy {
            for gi in 0..gx {
                nodes.push(map(logical(gi, nx), logical(gj, ny)));
            }
        }
        let mut elements = Vec::with_capacity(nx * ny);
        let mut boundary = Vec::new();
        for ey in 0..ny {
            for ex in 0..nx {
                let e = elements.len();
                let mut conn = Vec::with_capacity((p + 1) * (p + 1));
                for j in 0..=p {
                    for i in 0..=p {
                        conn.push((ey * p + j) * gx + ex * p + i);
                    }
                }
                elements.push(conn);
                let sides = [ey == 0, ex + 1 == nx, ey + 1 == ny, ex == 0];
                for (edge, &on) in sides.iter().enumerate() {
                    if on {
                        boundary.push(BoundaryEdge { elem: e, edge, attr: side_attrs[edge] });
                    }
                }
            }
        }
        Mesh { dim: 2, order: p, nodes, elements, boundary }
    }
}

/// Role of a global node during optimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeClass {
    Interior,
    FixedBoundary,
    TangentialBoundary(u32),
    Corner,
}

impl NodeClass {
    /// Whether the optimizer may move the node.
    pub fn is_free(self) -> bool {
        matches!(self, NodeClass::Interior | NodeClass::TangentialBoundary(_))
    }

    pub fn is_boundary(self) -> bool {
        !matches!(self, NodeClass::Interior)
    }
}

/// Attributes of the boundary edges incident to every node.
pub fn node_attributes(mesh: &Mesh) -> Vec<BTreeSet<u32>> {
    let mut attrs = vec![BTreeSet::new(); mesh.num_nodes()];
    for b in &mesh.boundary {
        for g in mesh.edge_nodes(b.elem, b.edge) {
            attrs[g].insert(b.attr);
        }
    }
    attrs
}

/// A node touching edges of two or more attributes is a corner; a node on
/// edges of a single attribute from `tangential` may slide; every other
/// boundary node is held fixed.
pub fn classify_nodes(mesh: &Mesh, tangential: &[u32]) -> Vec<NodeClass> {
    node_attributes(mesh)
        .into_iter()
        .map(|set| match set.len() {
            0 => NodeClass::Interior,
            1 => {
                let a = *set.iter().next().unwrap();
                if tangential.contains(&a) {
                    NodeClass::TangentialBoundary(a)
                } else {
                    NodeClass::FixedBoundary
                }
            }
            _ => NodeClass::Corner,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub min: Point,
    pub max: Point,
}

impl BBox {
    pub fn of(points: &[Point]) -> BBox {
        let mut b = BBox { min: [f64::INFINITY; 2], max: [f64::NEG_INFINITY; 2] };
        for p in points {
            for c in 0..2 {
                b.min[c] = b.min[c].min(p[c]);
                b.max[c] = b.max[c].max(p[c]);
            }
        }
        b
    }

    /// Grow every side by `frac` of the diagonal.
    pub fn inflated(self, frac: f64) -> BBox {
        let d = ((self.max[0] - self.min[0]).powi(2) + (self.max[1] - self.min[1]).powi(2)).sqrt() * frac;
        BBox { min: [self.min[0] - d, self.min[1] - d], max: [self.max[0] + d, self.max[1] + d] }
    }

    pub fn contains(&self, p: Point) -> bool {
        (0..2).all(|c| p[c] >= self.min[c] && p[c] <= self.max[c])
    }

    /// Squared distance from `p` to the box (0 inside).
    pub fn distance2(&self, p: Point) -> f64 {
        (0..2).map(|c| (self.min[c] - p[c]).max(0.0).max(p[c] - self.max[c]).powi(2)).sum()
    }
}

/// One boundary edge frozen as a polynomial curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSegment {
    pub attr: u32,
    pub elem: usize,
    pub edge: usize,
    pub nodes: Vec<Point>,
    pub bbox: BBox,
    d1: Vec<Point>,
    d2: Vec<Point>,
}

impl CurveSegment {
    fn new(ns: &NodeSet1D, attr: u32, elem: usize, edge: usize, nodes: Vec<Point>) -> Self {
        let diff = |v: &[Point]| -> Vec<Point> {
            let dm = ns.deriv_matrix(ns.nodes());
            dm.iter()
                .map(|row| {
                    let mut out = [0.0; 2];
                    for (w, x) in row.iter().zip(v) {
                        out[0] += w * x[0];
                        out[1] += w * x[1];
                    }
                    out
                })
                .collect()
        };
        let d1 = diff(&nodes);
        let d2 = diff(&d1);
        let bbox = BBox::of(&nodes).inflated(0.1);
        CurveSegment { attr, elem, edge, nodes, bbox, d1, d2 }
    }

    fn interp(ns: &NodeSet1D, vals: &[Point], t: f64) -> Point {
        let w = ns.eval(t);
        let mut out = [0.0; 2];
        for (wi, v) in w.iter().zip(vals) {
            out[0] += wi * v[0];
            out[1] += wi * v[1];
        }
        out
    }

    pub fn eval(&self, ns: &NodeSet1D, t: f64) -> Point {
        Self::interp(ns, &self.nodes, t)
    }

    pub fn tangent(&self, ns: &NodeSet1D, t: f64) -> Point {
        Self::interp(ns, &self.d1, t)
    }

    pub fn second_derivative(&self, ns: &NodeSet1D, t: f64) -> Point {
        Self::interp(ns, &self.d2, t)
    }
}

/// Boundary geometry copied from the mesh at extraction time.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryCurve {
    pub order: usize,
    pub segments: Vec<CurveSegment>,
}

impl BoundaryCurve {
    pub fn basis(&self) -> std::sync::Arc<NodeSet1D> {
        basis::gll_nodes(self.order).expect("validated order")
    }

    /// Hash of every coordinate bit, used to confirm the curve is never modified.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for s in &self.segments {
            s.attr.hash(&mut h);
            for p in &s.nodes {
                p[0].to_bits().hash(&mut h);
                p[1].to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

/// Freeze the boundary edges carrying any of `attrs` as a curve.
pub fn extract_boundary(mesh: &Mesh, attrs: &[u32]) -> Result<BoundaryCurve, MeshError> {
    let ns = mesh.basis();
    let segments: Vec<CurveSegment> = mesh
        .boundary
        .iter()
        .filter(|b| attrs.contains(&b.attr))
        .map(|b| {
            let nodes = mesh.edge_nodes(b.elem, b.edge).into_iter().map(|g| mesh.nodes[g]).collect();
            CurveSegment::new(&ns, b.attr, b.elem, b.edge, nodes)
        })
        .collect();
    if segments.is_empty() {
        return Err(MeshError::EmptySelection(attrs.to_vec()));
    }
    Ok(BoundaryCurve { order: mesh.order, segments })
}

/// SVG drawing of the mesh, each edge as a 16-segment polyline. With
/// `fill`, elements are shaded by their value: red if non-positive,
/// otherwise from pale to full green relative to the largest value.
pub fn to_svg(mesh: &Mesh, fill: Option<&[f64]>) -> String {
    const SAMPLES: usize = 16;
    const SIZE: f64 = 800.0;
    let outlines: Vec<Vec<Point>> = (0..mesh.num_elements())
        .map(|e| {
            let mut pts = Vec::with_capacity(4 * SAMPLES);
            // walk the boundary counter-clockwise
            for (edge, reversed) in [(0, false), (1, false), (2, true), (3, true)] {
                for k in 0..SAMPLES {
                    let mut s = -1.0 + 2.0 * k as f64 / SAMPLES as f64;
                    if reversed {
                        s = -s;
                    }
                    pts.push(mesh.position(e, edge_reference_point(edge, s)));
                }
            }
            pts
        })
        .collect();
    let all: Vec<Point> = outlines.iter().flatten().copied().collect();
    let b = BBox::of(&all);
    let span = (b.max[0] - b.min[0]).max(b.max[1] - b.min[1]).max(f64::MIN_POSITIVE);
    let scale = 0.9 * SIZE / span;
    let map = |p: &Point| ((p[0] - b.min[0]) * scale + 0.05 * SIZE, SIZE - ((p[1] - b.min[1]) * scale + 0.05 * SIZE));
    let vmax = fill.map(|f| f.iter().copied().fold(0.0f64, f64::max)).unwrap_or(0.0);

    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#);
    for (e, pts) in outlines.iter().enumerate() {
        let colour = match fill {
            Some(f) if f[e] <= 0.0 => "rgb(220,40,40)".to_string(),
            Some(f) => {
                let t = if vmax > 0.0 { (f[e] / vmax).clamp(0.0, 1.0) } else { 0.0 };
                let g = |lo: f64, hi: f64| (lo + (hi - lo) * t).round() as u8;
                format!("rgb({},{},{})", g(230.0, 30.0), g(245.0, 160.0), g(230.0, 60.0))
            }
            None => "none".to_string(),
        };
        let path: Vec<String> = pts.iter().map(|p| {
            let (x, y) = map(p);
            format!("{x:.3},{y:.3}")
        }).collect();
        let _ = writeln!(out, r#"<polygon points="{}" fill="{colour}" stroke="black" stroke-width="0.8"/>"#, path.join(" "));
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_q2() -> Mesh {
        Mesh::structured(1, 1, 2, [1, 2, 3, 4], |x, y| [x, y])
    }

    #[test]
    fn single_q2_square_has_nine_nodes() {
        let m = unit_q2();
        assert_eq!(m.num_nodes(), 9);
        assert_eq!(m.boundary.len(), 4);
        let c = m.position(0, [0.0, 0.0]);
        assert!((c[0] - 0.5).abs() < 1e-15 && (c[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn square_jacobian_is_scaled_identity() {
        let h = 0.25;
        let m = Mesh::structured(4, 4, 3, [1, 1, 1, 1], |x, y| [x, y]);
        for e in 0..m.num_elements() {
            let a = m.jacobian(e, [0.3, -0.7]);
            assert!((a[(0, 0)] - h / 2.0).abs() < 1e-14 && (a[(1, 1)] - h / 2.0).abs() < 1e-14);
            assert!(a[(0, 1)].abs() < 1e-14 && a[(1, 0)].abs() < 1e-14);
            assert!((a.determinant() - h * h / 4.0).abs() < 1e-15);
        }
    }

    #[test]
    fn parabola_edge_midpoint() {
        // bottom edge bent to y = -0.2 * (1 - (2x - 1)^2)
        let mut m = unit_q2();
        m.nodes[1] = [0.5, -0.2];
        let mid = m.position(0, [0.0, -1.0]);
        assert_eq!(mid, [0.5, -0.2]);
        let q = m.position(0, [0.5, -1.0]);
        // quadratic through (0,0), (0.5,-0.2), (1,0) at x = 0.75
        assert!((q[0] - 0.75).abs() < 1e-14);
        assert!((q[1] + 0.2 * (1.0 - 0.25)).abs() < 1e-14);
    }

    #[test]
    fn reflected_element_has_negative_det() {
        let mut m = unit_q2();
        let n = 3;
        let conn = m.elements[0].clone();
        for j in 0..n {
            for i in 0..n {
                m.elements[0][j * n + i] = conn[j * n + (n - 1 - i)];
            }
        }
        assert!(m.jacobian(0, [0.0, 0.0]).determinant() < 0.0);
    }

    #[test]
    fn lattice_nodes_are_interpolated() {
        let m = Mesh::structured(2, 1, 3, [1, 1, 1, 1], |x, y| [x + 0.1 * y * y, y - 0.05 * x.sin()]);
        let ns = m.basis();
        for e in 0..m.num_elements() {
            for (local, &g) in m.elements[e].iter().enumerate() {
                let xi = [ns.nodes()[local % 4], ns.nodes()[local / 4]];
                let x = m.position(e, xi);
                assert!((x[0] - m.nodes[g][0]).abs() < 1e-14 && (x[1] - m.nodes[g][1]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn dangling_and_count_errors_are_distinct() {
        let mut m = unit_q2();
        m.elements[0][4] = 99;
        assert!(matches!(Mesh::from_json_str(&m.to_json_string()), Err(MeshError::DanglingIndex { elem: 0, local: 4, index: 99, .. })));
        let mut m = unit_q2();
        m.elements[0].pop();
        assert!(matches!(Mesh::from_json_str(&m.to_json_string()), Err(MeshError::NodeCount { elem: 0, expected: 9, got: 8 })));
        match Mesh::from_json_str("{\"dim\":2,\n\"order\":}") {
            Err(MeshError::Json { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected JSON error, got {other:?}"),
        }
    }

    #[test]
    fn classification_on_square() {
        let m = Mesh::structured(3, 3, 2, [1, 2, 3, 4], |x, y| [x, y]);
        let cls = classify_nodes(&m, &[1, 2, 3, 4]);
        assert_eq!(cls.iter().filter(|c| **c == NodeClass::Corner).count(), 4);
        let boundary = cls.iter().filter(|c| c.is_boundary()).count();
        assert_eq!(boundary, 4 * 6);
        assert_eq!(cls.iter().filter(|c| matches!(c, NodeClass::TangentialBoundary(_))).count(), boundary - 4);
        let fixed = classify_nodes(&m, &[]);
        assert_eq!(fixed.iter().filter(|c| **c == NodeClass::FixedBoundary).count(), boundary - 4);
    }

    #[test]
    fn extraction_copies_edges_and_rejects_empty_selection() {
        let m = Mesh::structured(2, 2, 2, [1, 2, 3, 4], |x, y| [x, y]);
        let c = extract_boundary(&m, &[1]).unwrap();
        assert_eq!(c.segments.len(), 2);
        for s in &c.segments {
            assert!(s.nodes.iter().all(|p| p[1] == 0.0));
            assert!(s.nodes.iter().all(|&p| s.bbox.contains(p)));
        }
        assert!(matches!(extract_boundary(&m, &[9]), Err(MeshError::EmptySelection(_))));
    }

    #[test]
    fn svg_has_one_polygon_per_element() {
        let m = Mesh::structured(2, 3, 2, [1, 1, 1, 1], |x, y| [x, y]);
        let svg = to_svg(&m, Some(&[1.0, 0.5, -0.1, 0.2, 0.3, 0.4]));
        assert_eq!(svg.matches("<polygon").count(), 6);
        assert!(svg.contains("rgb(220,40,40)"));
    }
}
