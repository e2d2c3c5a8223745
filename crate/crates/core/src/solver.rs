//! Node-relocation solver.
//!
//! Each iteration computes a Newton or limited-memory BFGS direction, then
//! backtracks from a unit step until the trial point keeps the objective and
//! gradient norm below 1.2 times their current values and passes the active
//! validity test. Optional extras: tangential relaxation of boundary nodes on
//! every trial point, and per-element quadrature refinement after every
//! accepted step. Untangling minimizes a shifted-barrier metric whose
//! barrier is set from certified determinant bounds.

use std::cell::RefCell;
use std::collections::VecDeque;
use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::BoundsError;
use crate::mesh::{self, BoundaryCurve, Mesh, MeshError, NodeClass, Point};
use crate::tangential::{self, CsrMatrix, TangentialError};
use crate::tmop::{self, MetricSpec, TargetSpec, TmopError};
use crate::validity::{self, CertifyConfig, MeshCertificate};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("initial mesh is not certified valid (lower bound {alpha_lower:.6e}); untangle it first")]
    InvalidInitialMesh { alpha_lower: f64 },
    #[error("objective undefined at the initial mesh: {0}")]
    Tmop(#[from] TmopError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Tangential(#[from] TangentialError),
    #[error("untangling failed after {iterations} iterations; best lower bound {best_alpha:.6e}")]
    UntangleFailed { iterations: usize, best_alpha: f64, trace: Box<SolverTrace>, mesh: Box<Mesh> },
    #[error("invalid solver configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepMode {
    Newton,
    Bfgs,
}

impl FromStr for StepMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "newton" => Ok(StepMode::Newton),
            "bfgs" => Ok(StepMode::Bfgs),
            _ => Err(format!("unknown mode {s:?} (expected bfgs or newton)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ValidityMode {
    CertifiedBounds,
    QuadratureSamples,
}

impl FromStr for ValidityMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "bounds" => Ok(ValidityMode::CertifiedBounds),
            "samples" => Ok(ValidityMode::QuadratureSamples),
            _ => Err(format!("unknown validity mode {s:?} (expected bounds or samples)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QRefineConfig {
    pub enabled: bool,
    /// refine when sampled min det / certified lower bound exceeds this
    pub eps_q: f64,
    pub initial_order: usize,
    pub max_order: usize,
}

impl Default for QRefineConfig {
    fn default() -> Self {
        QRefineConfig { enabled: false, eps_q: 5.0, initial_order: 10, max_order: 400 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub mode: StepMode,
    /// stop once |J| / |J0| falls to this
    pub eps_conv: f64,
    pub max_iters: usize,
    pub validity: ValidityMode,
    pub backtrack: f64,
    pub max_backtracks: usize,
    pub qrefine: QRefineConfig,
    /// boundary attributes whose nodes may slide; empty keeps the boundary fixed
    pub tangential_attrs: Vec<u32>,
    pub control_nodes: Option<usize>,
    pub max_depth: usize,
    /// barrier offset used while untangling
    pub untangle_eps: f64,
    pub cg_tol: f64,
    pub bfgs_memory: usize,
    /// first and fallback steepest-descent steps move the fastest node by this fraction of the element size
    pub initial_step: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            mode: StepMode::Bfgs,
            eps_conv: 1e-10,
            max_iters: 200,
            validity: ValidityMode::CertifiedBounds,
            backtrack: 0.5,
            max_backtracks: 30,
            qrefine: QRefineConfig::default(),
            tangential_attrs: Vec::new(),
            control_nodes: None,
            max_depth: validity::DEFAULT_MAX_DEPTH,
            untangle_eps: 1e-3,
            cg_tol: 1e-12,
            bfgs_memory: 10,
            initial_step: 0.05,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: &str| Err(SolverError::Config(m.to_string()));
        if !(self.eps_conv > 0.0) {
            return bad("eps_conv must be positive");
        }
        if !(self.qrefine.eps_q > 1.0) {
            return bad("eps_q must exceed 1");
        }
        if self.qrefine.max_order < self.qrefine.initial_order || self.qrefine.initial_order == 0 {
            return bad("max quadrature order must be at least the initial order, which must be positive");
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return bad("backtracking factor must lie in (0, 1)");
        }
        if !(self.untangle_eps > 0.0) {
            return bad("untangle_eps must be positive");
        }
        Ok(())
    }

    pub fn certify(&self) -> CertifyConfig {
        CertifyConfig { control_nodes: self.control_nodes, max_depth: self.max_depth }
    }
}

/// A smooth function of a flat parameter vector, possibly undefined at some points.
pub trait Objective {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> Option<f64>;
    fn value_and_gradient(&self, x: &[f64]) -> Option<(f64, Vec<f64>)>;
    /// Whether coordinate `i` may change.
    fn is_free(&self, _i: usize) -> bool {
        true
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Limited-memory BFGS history.
#[derive(Debug, Clone)]
pub struct Lbfgs {
    memory: usize,
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
}

impl Lbfgs {
    pub fn new(memory: usize) -> Self {
        Lbfgs { memory: memory.max(1), pairs: VecDeque::new() }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn clear(&mut self) {
        self.pairs.clear();
    }

    /// Record a step; pairs without positive curvature are skipped.
    pub fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        if !(sy > 1e-14 * norm(&s) * norm(&y)) {
            return;
        }
        if self.pairs.len() == self.memory {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
    }

    /// Two-loop recursion: `-H g`, or `None` without history.
    pub fn direction(&self, g: &[f64]) -> Option<Vec<f64>> {
        let (s_last, y_last, _) = self.pairs.back()?;
        let mut q = g.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let h0 = dot(s_last, y_last) / dot(y_last, y_last);
        q.iter_mut().for_each(|v| *v *= h0);
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        q.iter_mut().for_each(|v| *v = -*v);
        Some(q)
    }
}

/// Search direction and whether the steepest-descent fallback was used.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    pub d: Vec<f64>,
    pub fallback: bool,
}

fn steepest(g: &[f64], step: f64) -> Vec<f64> {
    let gmax = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if gmax == 0.0 {
        return vec![0.0; g.len()];
    }
    g.iter().map(|v| -v * step / gmax).collect()
}

/// Hessian by central differences of the gradient, symmetrized. Rows and
/// columns of fixed coordinates are identity.
pub fn fd_hessian<O: Objective>(obj: &O, x: &[f64], h: f64) -> Option<DMatrix<f64>> {
    let n = obj.dim();
    let mut hess = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    for j in 0..n {
        if !obj.is_free(j) {
            hess[(j, j)] = 1.0;
            continue;
        }
        xp[j] = x[j] + h;
        let gp = obj.value_and_gradient(&xp)?.1;
        xp[j] = x[j] - h;
        let gm = obj.value_and_gradient(&xp)?.1;
        xp[j] = x[j];
        for i in 0..n {
            if obj.is_free(i) {
                hess[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
            }
        }
    }
    let sym = (&hess + hess.transpose()) * 0.5;
    Some(sym)
}

/// Newton or L-BFGS direction at `x` with gradient `g`; `step` scales the
/// steepest-descent fallback (largest component length).
pub fn step_direction<O: Objective>(obj: &O, x: &[f64], g: &[f64], mode: StepMode, lbfgs: &Lbfgs, step: f64) -> Direction {
    if g.iter().all(|v| *v == 0.0) {
        return Direction { d: vec![0.0; g.len()], fallback: false };
    }
    let candidate = match mode {
        StepMode::Bfgs => lbfgs.direction(g),
        StepMode::Newton => newton_direction(obj, x, g),
    };
    match candidate {
        Some(d) if dot(&d, g) < 0.0 && d.iter().all(|v| v.is_finite()) => Direction { d, fallback: false },
        _ => Direction { d: steepest(g, step), fallback: mode == StepMode::Newton || !lbfgs.is_empty() },
    }
}

const DENSE_LIMIT: usize = 2000;

fn newton_direction<O: Objective>(obj: &O, x: &[f64], g: &[f64]) -> Option<Vec<f64>> {
    let hess = fd_hessian(obj, x, 1e-7)?;
    let free: Vec<usize> = (0..obj.dim()).filter(|&i| obj.is_free(i)).collect();
    let nf = free.len();
    let rhs: Vec<f64> = free.iter().map(|&i| -g[i]).collect();
    let sol = if nf <= DENSE_LIMIT {
        let hf = DMatrix::from_fn(nf, nf, |r, c| hess[(free[r], free[c])]);
        let chol = hf.cholesky()?;
        chol.solve(&nalgebra::DVector::from_vec(rhs)).as_slice().to_vec()
    } else {
        let mut trip = Vec::new();
        for r in 0..nf {
            for c in 0..nf {
                let v = hess[(free[r], free[c])];
                if v != 0.0 {
                    trip.push((r, c, v));
                }
            }
        }
        let a = CsrMatrix::from_triplets(nf, trip);
        let mut s = vec![0.0; nf];
        tangential::pcg(&a, &rhs, &mut s, 1e-10, 10 * nf).ok()?;
        s
    };
    let mut d = vec![0.0; obj.dim()];
    for (k, &i) in free.iter().enumerate() {
        d[i] = sol[k];
    }
    Some(d)
}

/// Current iterate of the outer loop.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub x: Vec<f64>,
    pub f: f64,
    pub g: Vec<f64>,
}

impl State {
    pub fn grad_norm(&self) -> f64 {
        norm(&self.g)
    }
}

/// Accepted line-search step.
#[derive(Debug, Clone)]
pub struct Accepted<E> {
    pub gamma: f64,
    pub state: State,
    pub backtracks: usize,
    pub extra: E,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("line search exhausted {backtracks} backtracking steps")]
pub struct LineSearchFailure {
    pub backtracks: usize,
}

/// Relaxed-decrease backtracking from a unit step.
///
/// `prepare` may rewrite a trial point or reject it (`None`); `validate` runs
/// last, on points that already satisfy the objective and gradient tests,
/// and returns context carried to the caller on acceptance.
pub fn line_search<O: Objective, E>(
    obj: &O,
    state: &State,
    d: &[f64],
    backtrack: f64,
    max_backtracks: usize,
    mut prepare: impl FnMut(Vec<f64>) -> Option<Vec<f64>>,
    mut validate: impl FnMut(&[f64]) -> Option<E>,
) -> Result<Accepted<E>, LineSearchFailure> {
    let gnorm = state.grad_norm();
    if d.iter().all(|v| *v == 0.0) {
        if let Some(extra) = validate(&state.x) {
            return Ok(Accepted { gamma: 1.0, state: state.clone(), backtracks: 0, extra });
        }
        return Err(LineSearchFailure { backtracks: 0 });
    }
    let mut gamma = 1.0;
    for k in 0..=max_backtracks {
        let trial: Vec<f64> = state.x.iter().zip(d).map(|(x, di)| x + gamma * di).collect();
        if let Some(xt) = prepare(trial) {
            if let Some(ft) = obj.value(&xt).filter(|ft| *ft < 1.2 * state.f) {
                if let Some((ft, gt)) = obj.value_and_gradient(&xt).map(|(_, g)| (ft, g)) {
                    if norm(&gt) < 1.2 * gnorm {
                        if let Some(extra) = validate(&xt) {
                            return Ok(Accepted { gamma, state: State { x: xt, f: ft, g: gt }, backtracks: k, extra });
                        }
                    }
                }
            }
        }
        gamma *= backtrack;
    }
    Err(LineSearchFailure { backtracks: max_backtracks })
}

/// The mesh objective as a function of the flattened node coordinates.
pub struct MeshProblem {
    mesh: RefCell<Mesh>,
    pub metric: MetricSpec,
    pub target: TargetSpec,
    pub quad_orders: Vec<usize>,
    pub classes: Vec<NodeClass>,
    /// unit boundary tangents for tangential nodes; gradients there are
    /// restricted to this direction
    pub tangents: Vec<Option<Point>>,
}

impl MeshProblem {
    pub fn new(mesh: &Mesh, metric: MetricSpec, target: TargetSpec, quad_orders: Vec<usize>, classes: Vec<NodeClass>) -> Self {
        let n = mesh.num_nodes();
        MeshProblem { mesh: RefCell::new(mesh.clone()), metric, target, quad_orders, classes, tangents: vec![None; n] }
    }

    /// The mesh with coordinates `x`.
    pub fn mesh_at(&self, x: &[f64]) -> Mesh {
        let mut m = self.mesh.borrow().clone();
        m.set_flat_coords(x);
        m
    }

    fn with_mesh<R>(&self, x: &[f64], f: impl FnOnce(&Mesh) -> R) -> R {
        let mut m = self.mesh.borrow_mut();
        m.set_flat_coords(x);
        f(&m)
    }
}

impl Objective for MeshProblem {
    fn dim(&self) -> usize {
        2 * self.classes.len()
    }

    fn value(&self, x: &[f64]) -> Option<f64> {
        self.with_mesh(x, |m| tmop::objective(m, &self.metric, &self.target, &self.quad_orders).ok())
    }

    fn value_and_gradient(&self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        let (f, mut g) = self.with_mesh(x, |m| {
            tmop::objective_and_gradient(m, &self.metric, &self.target, &self.quad_orders, Some(&self.classes)).ok()
        })?;
        for (gi, t) in g.iter_mut().zip(&self.tangents) {
            if let Some(t) = t {
                let s = gi[0] * t[0] + gi[1] * t[1];
                *gi = [s * t[0], s * t[1]];
            }
        }
        Some((f, g.into_iter().flatten().collect()))
    }

    fn is_free(&self, i: usize) -> bool {
        self.classes[i / 2].is_free()
    }
}

/// Quadrature orders changed by one refinement pass.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct QRefineReport {
    pub refined: Vec<usize>,
    pub saturated: Vec<usize>,
}

/// Raise the quadrature order of elements whose sampled minimum determinant
/// exceeds `eps_q` times the certified lower bound. Elements without a
/// positive bound are left alone.
pub fn q_refine(cert: &MeshCertificate, quad_orders: &mut [usize], cfg: &QRefineConfig) -> QRefineReport {
    let mut report = QRefineReport::default();
    for c in &cert.elements {
        if !(c.lower > 0.0) || c.sampled_min / c.lower <= cfg.eps_q {
            continue;
        }
        let q = &mut quad_orders[c.elem];
        if *q >= cfg.max_order {
            report.saturated.push(c.elem);
        } else {
            *q = (*q + cfg.initial_order).min(cfg.max_order);
            report.refined.push(c.elem);
        }
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Termination {
    Converged,
    LineSearchFailed,
    MaxIterations,
    Untangled,
    AlreadyValid,
}

/// One row of the solver trace; row 0 describes the initial mesh.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub f: f64,
    /// objective value this iterate was compared against
    pub f_prev: f64,
    pub grad_norm: f64,
    pub grad_prev: f64,
    pub gamma: f64,
    pub alpha_lower: f64,
    pub alpha_qp_min: f64,
    pub tau_b: f64,
    pub n_qrefined: usize,
    pub n_saturated: usize,
    pub projection_residual: Option<f64>,
    pub fallback: bool,
    pub all_positive: bool,
    pub curve_fingerprint: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverTrace {
    pub records: Vec<IterationRecord>,
    pub termination: Option<Termination>,
    pub quad_orders: Vec<usize>,
    /// quadrature orders after each row
    pub order_history: Vec<Vec<usize>>,
}

impl SolverTrace {
    fn new() -> Self {
        SolverTrace { records: Vec::new(), termination: None, quad_orders: Vec::new(), order_history: Vec::new() }
    }

    pub fn accepted(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn final_f(&self) -> Option<f64> {
        self.records.last().map(|r| r.f)
    }

    pub fn relative_gradient(&self) -> Option<f64> {
        let first = self.records.first()?.grad_norm;
        let last = self.records.last()?.grad_norm;
        Some(if first == 0.0 { 0.0 } else { last / first })
    }

    /// CSV with columns iteration, F, |J|, gamma, alpha_lb, alpha_qpmin, tau_b, n_qrefined.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,F,|J|,gamma,alpha_lb,alpha_qpmin,tau_b,n_qrefined\n");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{:e},{:e},{:e},{:e},{:e},{:e},{}",
                r.iteration, r.f, r.grad_norm, r.gamma, r.alpha_lower, r.alpha_qp_min, r.tau_b, r.n_qrefined
            );
        }
        s
    }
}

/// Context for validity-aware line searches on meshes.
struct Driver<'a> {
    cfg: &'a SolverConfig,
    curve: Option<&'a BoundaryCurve>,
    /// validity requirement on trial points; `None` while untangling
    validity: Option<ValidityMode>,
}

/// What the validity stage learned about an accepted point.
struct Checked {
    cert: MeshCertificate,
    residual: Option<f64>,
    projections: Vec<Option<tangential::Projection>>,
}

impl Driver<'_> {
    fn valid(&self, m: &Mesh, orders: &[usize], mode: ValidityMode) -> Option<MeshCertificate> {
        check_validity(m, orders, mode, &self.cfg.certify())
    }

    fn step(&self, problem: &MeshProblem, state: &State, d: &[f64]) -> Result<Accepted<Checked>, LineSearchFailure> {
        let orders = problem.quad_orders.clone();
        let relaxed: RefCell<Option<(Vec<f64>, f64, Vec<Option<tangential::Projection>>)>> = RefCell::new(None);
        let prepare = |trial: Vec<f64>| -> Option<Vec<f64>> {
            let Some(curve) = self.curve else { return Some(trial) };
            let m = problem.mesh_at(&trial);
            // projection and blending need a valid trial mesh
            self.valid(&m, &orders, self.validity.unwrap_or(ValidityMode::QuadratureSamples))?;
            let out = tangential::relax(&m, curve, &problem.classes, self.cfg.cg_tol).ok()?;
            let x: Vec<f64> = out.nodes.iter().flat_map(|p| p.iter().copied()).collect();
            *relaxed.borrow_mut() = Some((x.clone(), out.max_residual, out.projections));
            Some(x)
        };
        let validate = |x: &[f64]| -> Option<Checked> {
            let m = problem.mesh_at(x);
            let cert = match self.validity {
                Some(mode) => self.valid(&m, &orders, mode)?,
                None => validity::certify_mesh(&m, &orders, &self.cfg.certify()).ok()?,
            };
            let (residual, projections) = match relaxed.borrow().as_ref() {
                Some((rx, r, p)) if rx.as_slice() == x => (Some(*r), p.clone()),
                _ => (None, Vec::new()),
            };
            Some(Checked { cert, residual, projections })
        };
        line_search(problem, state, d, self.cfg.backtrack, self.cfg.max_backtracks, prepare, validate)
    }
}

/// Validity test applied to trial meshes: certified positivity for
/// [`ValidityMode::CertifiedBounds`], a positive determinant at every
/// quadrature point for [`ValidityMode::QuadratureSamples`]. Returns the
/// certificate of an accepted mesh.
pub fn check_validity(m: &Mesh, orders: &[usize], mode: ValidityMode, cfg: &CertifyConfig) -> Option<MeshCertificate> {
    match mode {
        ValidityMode::CertifiedBounds => validity::certify_mesh(m, orders, cfg).ok().filter(|c| c.all_positive()),
        ValidityMode::QuadratureSamples => (validity::sampled_min_det(m, orders) > 0.0).then(|| validity::certify_mesh(m, orders, cfg).ok()).flatten(),
    }
}

fn record(
    iteration: usize,
    state: &State,
    prev: Option<&State>,
    gamma: f64,
    cert: &MeshCertificate,
    tau_b: f64,
    report: &QRefineReport,
    residual: Option<f64>,
    fallback: bool,
    curve: Option<&BoundaryCurve>,
) -> IterationRecord {
    IterationRecord {
        iteration,
        f: state.f,
        f_prev: prev.map_or(state.f, |p| p.f),
        grad_norm: state.grad_norm(),
        grad_prev: prev.map_or(state.grad_norm(), |p| p.grad_norm()),
        gamma,
        alpha_lower: cert.alpha_lower,
        alpha_qp_min: cert.sampled_min,
        tau_b,
        n_qrefined: report.refined.len(),
        n_saturated: report.saturated.len(),
        projection_residual: residual,
        fallback,
        all_positive: cert.all_positive(),
        curve_fingerprint: curve.map(|c| c.fingerprint()),
    }
}

fn tangents_from(projections: &[Option<tangential::Projection>]) -> Vec<Option<Point>> {
    projections.iter().map(|p| p.map(|p| p.tangent)).collect()
}

/// Result of an optimization or untangling run.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub mesh: Mesh,
    pub trace: SolverTrace,
}

/// Gradients below this multiple of area / length count as zero.
const GRAD_ROUNDOFF: f64 = 64.0 * f64::EPSILON;

/// Improve `mesh` by minimizing `metric` against `target`.
pub fn optimize(mesh: &Mesh, metric: MetricSpec, target: TargetSpec, cfg: &SolverConfig) -> Result<SolveResult, SolverError> {
    optimize_observed(mesh, metric, target, cfg, &mut |_| {})
}

/// An accepted iterate as seen by an observer.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub iteration: usize,
    pub mesh: &'a Mesh,
    /// quadrature orders the certificate was computed with
    pub quad_orders: &'a [usize],
    pub cert: &'a MeshCertificate,
}

/// [`optimize`], calling `observer` on the initial mesh and on every accepted iterate.
pub fn optimize_observed(
    mesh: &Mesh,
    metric: MetricSpec,
    target: TargetSpec,
    cfg: &SolverConfig,
    observer: &mut dyn FnMut(Observation<'_>),
) -> Result<SolveResult, SolverError> {
    cfg.validate()?;
    metric.validate()?;
    let mut orders = vec![cfg.qrefine.initial_order; mesh.num_elements()];
    let cert0 = validity::certify_mesh(mesh, &orders, &cfg.certify())?;
    if cfg.validity == ValidityMode::CertifiedBounds && !cert0.all_positive() {
        return Err(SolverError::InvalidInitialMesh { alpha_lower: cert0.alpha_lower });
    }
    let trace_orders0 = orders.clone();
    let report0 = if cfg.qrefine.enabled { q_refine(&cert0, &mut orders, &cfg.qrefine) } else { QRefineReport::default() };
    let tangential_on = !cfg.tangential_attrs.is_empty();
    let classes = mesh::classify_nodes(mesh, &cfg.tangential_attrs);
    let curve = if tangential_on { Some(mesh::extract_boundary(mesh, &cfg.tangential_attrs)?) } else { None };
    let mut problem = MeshProblem::new(mesh, metric, target, orders.clone(), classes);
    if let Some(curve) = &curve {
        let (_, proj) = tangential::project_boundary(mesh, curve, &problem.classes)?;
        problem.tangents = tangents_from(&proj);
    }

    let x0 = mesh.flat_coords();
    let (f0, g0) = problem.value_and_gradient(&x0).ok_or_else(|| {
        SolverError::Tmop(tmop::objective(mesh, &metric, &target, &orders).err().unwrap_or(TmopError::DegenerateSkew))
    })?;
    let mut state = State { x: x0, f: f0, g: g0 };
    let g_first = state.grad_norm();
    let mut trace = SolverTrace::new();
    let res0 = curve.as_ref().map(|_| 0.0);
    trace.records.push(record(0, &state, None, 0.0, &cert0, 0.0, &report0, res0, false, curve.as_ref()));
    observer(Observation { iteration: 0, mesh, quad_orders: &trace_orders0, cert: &cert0 });
    trace.order_history.push(orders.clone());

    // relative test, floored at the round-off level of a gradient of size area / length
    let area = mesh.mean_element_area().abs() * mesh.num_elements() as f64;
    let g_tol = (cfg.eps_conv * g_first).max(GRAD_ROUNDOFF * area / mesh.length_scale());
    let driver = Driver { cfg, curve: curve.as_ref(), validity: Some(cfg.validity) };
    let step_len = cfg.initial_step * mesh.length_scale();
    let mut lbfgs = Lbfgs::new(cfg.bfgs_memory);
    let mut termination = Termination::MaxIterations;
    for it in 1..=cfg.max_iters {
        if state.grad_norm() <= g_tol {
            termination = Termination::Converged;
            break;
        }
        let dir = step_direction(&problem, &state.x, &state.g, cfg.mode, &lbfgs, step_len);
        let acc = match driver.step(&problem, &state, &dir.d) {
            Ok(a) => a,
            Err(_) => {
                termination = Termination::LineSearchFailed;
                break;
            }
        };
        let prev = state.clone();
        state = acc.state;
        let Checked { cert, residual, projections } = acc.extra;
        let mut row = record(it, &state, Some(&prev), acc.gamma, &cert, 0.0, &QRefineReport::default(), residual, dir.fallback, curve.as_ref());
        observer(Observation { iteration: it, mesh: &problem.mesh_at(&state.x), quad_orders: &orders, cert: &cert });
        if !projections.is_empty() {
            problem.tangents = tangents_from(&projections);
            // recompute the restricted gradient with the new tangents
            if let Some((f, g)) = problem.value_and_gradient(&state.x) {
                state.f = f;
                state.g = g;
            }
        }
        let s: Vec<f64> = state.x.iter().zip(&prev.x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = state.g.iter().zip(&prev.g).map(|(a, b)| a - b).collect();
        if cfg.qrefine.enabled {
            let report = q_refine(&cert, &mut orders, &cfg.qrefine);
            row.n_qrefined = report.refined.len();
            row.n_saturated = report.saturated.len();
            if !report.refined.is_empty() {
                problem.quad_orders = orders.clone();
                if let Some((f, g)) = problem.value_and_gradient(&state.x) {
                    state.f = f;
                    state.g = g;
                }
                lbfgs.clear();
            }
        }
        if !(cfg.qrefine.enabled && row.n_qrefined > 0) {
            lbfgs.push(s, y);
        }
        trace.records.push(row);
        trace.order_history.push(orders.clone());
    }
    if termination == Termination::MaxIterations && state.grad_norm() <= g_tol {
        termination = Termination::Converged;
    }
    trace.termination = Some(termination);
    trace.quad_orders = orders;
    Ok(SolveResult { mesh: problem.mesh_at(&state.x), trace })
}

/// Inner iterations per barrier value while untangling.
const UNTANGLE_INNER: usize = 8;

/// Remove inverted regions by minimizing the shifted-barrier metric with a
/// barrier set from certified lower bounds. Boundary nodes stay fixed.
pub fn untangle(mesh: &Mesh, cfg: &SolverConfig) -> Result<SolveResult, SolverError> {
    untangle_observed(mesh, cfg, &mut |_| {})
}

/// [`untangle`], calling `observer` on the initial mesh and on every accepted iterate.
pub fn untangle_observed(mesh: &Mesh, cfg: &SolverConfig, observer: &mut dyn FnMut(Observation<'_>)) -> Result<SolveResult, SolverError> {
    cfg.validate()?;
    let orders = vec![cfg.qrefine.initial_order; mesh.num_elements()];
    let mut cert = validity::certify_mesh(mesh, &orders, &cfg.certify())?;
    let mut trace = SolverTrace::new();
    let target = TargetSpec::from_mesh(mesh);
    let omega = target.omega();
    let mut tau_b = tmop::barrier_from_bounds(cert.alpha_lower, omega, cfg.untangle_eps);
    if cert.all_positive() {
        tau_b = 0.0;
    }
    let classes = mesh::classify_nodes(mesh, &[]);
    let mut problem = MeshProblem::new(mesh, MetricSpec::ShiftedBarrier { tau_b }, target, orders.clone(), classes);
    let x0 = mesh.flat_coords();
    let (f0, g0) = problem.value_and_gradient(&x0).ok_or_else(|| {
        SolverError::Tmop(tmop::objective(mesh, &problem.metric, &target, &orders).err().unwrap_or(TmopError::DegenerateSkew))
    })?;
    let mut state = State { x: x0, f: f0, g: g0 };
    trace.records.push(record(0, &state, None, 0.0, &cert, tau_b, &QRefineReport::default(), None, false, None));
    observer(Observation { iteration: 0, mesh, quad_orders: &orders, cert: &cert });
    trace.order_history.push(orders.clone());
    trace.quad_orders = orders.clone();
    if cert.all_positive() {
        trace.termination = Some(Termination::AlreadyValid);
        return Ok(SolveResult { mesh: mesh.clone(), trace });
    }

    let driver = Driver { cfg, curve: None, validity: None };
    let step_len = cfg.initial_step * mesh.length_scale();
    let mut lbfgs = Lbfgs::new(cfg.bfgs_memory);
    let mut best_alpha = cert.alpha_lower;
    let mut it = 0;
    let mut stalled = 0;
    while it < cfg.max_iters {
        let mut progressed = false;
        for _ in 0..UNTANGLE_INNER {
            if it >= cfg.max_iters {
                break;
            }
            let dir = step_direction(&problem, &state.x, &state.g, cfg.mode, &lbfgs, step_len);
            let Ok(acc) = driver.step(&problem, &state, &dir.d) else { break };
            it += 1;
            progressed = true;
            let prev = std::mem::replace(&mut state, acc.state);
            cert = acc.extra.cert;
            best_alpha = best_alpha.max(cert.alpha_lower);
            let s: Vec<f64> = state.x.iter().zip(&prev.x).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = state.g.iter().zip(&prev.g).map(|(a, b)| a - b).collect();
            lbfgs.push(s, y);
            trace.records.push(record(it, &state, Some(&prev), acc.gamma, &cert, tau_b, &QRefineReport::default(), None, dir.fallback, None));
            observer(Observation { iteration: it, mesh: &problem.mesh_at(&state.x), quad_orders: &orders, cert: &cert });
            trace.order_history.push(orders.clone());
            if cert.all_positive() {
                trace.termination = Some(Termination::Untangled);
                return Ok(SolveResult { mesh: problem.mesh_at(&state.x), trace });
            }
        }
        // raise the barrier towards the current bound; never lower it
        let new_tau = tmop::barrier_from_bounds(cert.alpha_lower, omega, cfg.untangle_eps).max(tau_b);
        if new_tau > tau_b {
            tau_b = new_tau;
            problem.metric = MetricSpec::ShiftedBarrier { tau_b };
            lbfgs.clear();
            match problem.value_and_gradient(&state.x) {
                Some((f, g)) => state = State { x: state.x.clone(), f, g },
                None => break,
            }
            stalled = 0;
        } else if !progressed {
            stalled += 1;
            lbfgs.clear();
            if stalled >= 2 {
                break;
            }
        }
    }
    trace.termination = Some(Termination::LineSearchFailed);
    Err(SolverError::UntangleFailed { iterations: it, best_alpha, mesh: Box::new(problem.mesh_at(&state.x)), trace: Box::new(trace) })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// f(x) = 1 + sum c_i (x_i - a_i)^2 + 0.3 x0 x1
    struct Quadratic;

    impl Objective for Quadratic {
        fn dim(&self) -> usize {
            3
        }
        fn value(&self, x: &[f64]) -> Option<f64> {
            Some(1.0 + 2.0 * (x[0] - 1.0).powi(2) + (x[1] + 0.5).powi(2) + 3.0 * x[2].powi(2) + 0.3 * x[0] * x[1])
        }
        fn value_and_gradient(&self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
            let g = vec![4.0 * (x[0] - 1.0) + 0.3 * x[1], 2.0 * (x[1] + 0.5) + 0.3 * x[0], 6.0 * x[2]];
            Some((self.value(x)?, g))
        }
    }

    #[test]
    fn newton_solves_a_quadratic_in_one_step() {
        let q = Quadratic;
        let x = vec![0.2, 0.4, -0.7];
        let (f, g) = q.value_and_gradient(&x).unwrap();
        let dir = step_direction(&q, &x, &g, StepMode::Newton, &Lbfgs::new(10), 0.1);
        assert!(!dir.fallback);
        let state = State { x, f, g };
        let acc = line_search(&q, &state, &dir.d, 0.5, 30, Some, |_| Some(())).unwrap();
        assert_eq!(acc.gamma, 1.0);
        assert!(acc.state.grad_norm() < 1e-7, "{}", acc.state.grad_norm());
    }

    #[test]
    fn zero_gradient_gives_zero_direction_and_unit_step() {
        let q = Quadratic;
        let dir = step_direction(&q, &[0.0; 3], &[0.0; 3], StepMode::Bfgs, &Lbfgs::new(10), 0.1);
        assert!(dir.d.iter().all(|v| *v == 0.0));
        let state = State { x: vec![0.0; 3], f: 1.0, g: vec![0.0; 3] };
        let acc = line_search(&q, &state, &dir.d, 0.5, 30, Some, |_| Some(())).unwrap();
        assert_eq!(acc.gamma, 1.0);
        assert_eq!(acc.state.x, state.x);
    }

    #[test]
    fn lbfgs_direction_descends_and_converges() {
        let q = Quadratic;
        let mut lb = Lbfgs::new(10);
        let mut x = vec![0.2, 0.4, -0.7];
        let (mut f, mut g) = q.value_and_gradient(&x).unwrap();
        for _ in 0..40 {
            if norm(&g) < 1e-12 {
                break;
            }
            let dir = step_direction(&q, &x, &g, StepMode::Bfgs, &lb, 0.5);
            assert!(dot(&dir.d, &g) < 0.0);
            let st = State { x: x.clone(), f, g: g.clone() };
            let acc = line_search(&q, &st, &dir.d, 0.5, 30, Some, |_| Some(())).unwrap();
            lb.push(acc.state.x.iter().zip(&x).map(|(a, b)| a - b).collect(), acc.state.g.iter().zip(&g).map(|(a, b)| a - b).collect());
            x = acc.state.x;
            f = acc.state.f;
            g = acc.state.g;
        }
        assert!(norm(&g) < 1e-9);
    }

    #[test]
    fn q_refine_rules() {
        use crate::bounds::Verdict;
        use crate::validity::ElementCertificate;
        let mk = |elem, lower, sampled_min| ElementCertificate { elem, lower, upper: 1.0, verdict: Verdict::Positive, depth_used: 0, sampled_min };
        let cert = MeshCertificate { elements: vec![mk(0, 1.0, 1.0), mk(1, 0.1, 0.7), mk(2, 0.1, 0.7)], alpha_lower: 0.1, sampled_min: 0.7 };
        let mut orders = vec![10, 10, 400];
        let rep = q_refine(&cert, &mut orders, &QRefineConfig { enabled: true, ..Default::default() });
        assert_eq!(orders, vec![10, 20, 400]);
        assert_eq!(rep.refined, vec![1]);
        assert_eq!(rep.saturated, vec![2]);
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let mut c = SolverConfig::default();
        c.qrefine.eps_q = 1.0;
        assert!(c.validate().is_err());
        let mut c = SolverConfig::default();
        c.qrefine.max_order = 5;
        assert!(c.validate().is_err());
    }
}
