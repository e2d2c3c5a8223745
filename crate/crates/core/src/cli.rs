//! Command-line front end.
//!
//! Every subcommand writes its outputs and a `manifest.json` into one output
//! directory. The manifest stores the fully resolved configuration, so passing
//! it back through `--config` reproduces the run.
//!
//! Exit codes: 0 success, 1 I/O or usage error, 2 a mesh is (or stays)
//! inverted, 3 validity undecided at the maximum depth, 4 other solver failure.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::bounds::{self, Verdict};
use crate::mesh::{self, Mesh};
use crate::solver::{self, QRefineConfig, SolveResult, SolverConfig, SolverError, SolverTrace, StepMode, ValidityMode};
use crate::tangential;
use crate::tmop::{MetricSpec, TargetSpec};
use crate::validity::{self, MeshCertificate};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_NEGATIVE: i32 = 2;
pub const EXIT_UNDECIDED: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "homesh", version, about = "Validity-certified optimization of high-order quadrilateral meshes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Certify det(A) > 0 on every element and report per-element bounds
    Check {
        mesh: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Improve mesh quality while keeping the mesh certified valid
    Optimize {
        mesh: PathBuf,
        /// untangle an invalid input before optimizing
        #[arg(long)]
        untangle_first: bool,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Remove inverted elements with the shifted-barrier metric
    Untangle {
        mesh: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Piecewise-linear bounds of a 1D polynomial given by its GLL nodal values
    Bounds {
        /// polynomial degree
        #[arg(long)]
        p: usize,
        /// comma-separated nodal values
        #[arg(long, allow_hyphen_values = true)]
        coeffs: Option<String>,
        /// file holding the nodal values (commas or whitespace)
        #[arg(long, conflicts_with = "coeffs")]
        coeffs_file: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Project points onto the boundary curve of a mesh
    Project {
        mesh: PathBuf,
        /// CSV of x,y points; a non-numeric header line is skipped
        points: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
}

/// Flags shared by all subcommands. Unset flags fall back to `--config`, then to defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// output directory (default: ./<subcommand>-out)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON config mirroring the flags, or a manifest from an earlier run
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// initial quadrature order per element
    #[arg(long)]
    pub order_quad: Option<usize>,
    /// mu2, mu77, mu80:g, mu4, mu4sb[:tau], nu50, nu49:g
    #[arg(long)]
    pub metric: Option<String>,
    /// bounds or samples
    #[arg(long, alias = "barrier")]
    pub validity: Option<String>,
    /// bfgs or newton
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub eps_conv: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub tangential_attrs: Option<Vec<u32>>,
    #[arg(long)]
    pub qrefine: bool,
    #[arg(long)]
    pub eps_q: Option<f64>,
    #[arg(long)]
    pub max_quad_order: Option<usize>,
    /// control nodes per direction
    #[arg(long = "M")]
    pub control_nodes: Option<usize>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub untangle_eps: Option<f64>,
    /// target size; defaults to the mean element size
    #[arg(long)]
    pub zeta: Option<f64>,
    #[arg(long)]
    pub svg: bool,
}

/// Resolved run settings; also the schema of `--config` files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub order_quad: usize,
    pub metric: String,
    pub validity: String,
    pub mode: String,
    pub eps_conv: f64,
    pub max_iters: usize,
    pub tangential_attrs: Vec<u32>,
    pub qrefine: bool,
    pub eps_q: f64,
    pub max_quad_order: usize,
    #[serde(alias = "M")]
    pub control_nodes: Option<usize>,
    pub max_depth: usize,
    pub untangle_eps: f64,
    pub zeta: Option<f64>,
    pub svg: bool,
    pub untangle_first: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = SolverConfig::default();
        RunConfig {
            order_quad: s.qrefine.initial_order,
            metric: MetricSpec::Mu2.to_string(),
            validity: "bounds".into(),
            mode: "bfgs".into(),
            eps_conv: s.eps_conv,
            max_iters: s.max_iters,
            tangential_attrs: Vec::new(),
            qrefine: s.qrefine.enabled,
            eps_q: s.qrefine.eps_q,
            max_quad_order: s.qrefine.max_order,
            control_nodes: None,
            max_depth: s.max_depth,
            untangle_eps: s.untangle_eps,
            zeta: None,
            svg: false,
            untangle_first: false,
        }
    }
}

impl RunConfig {
    fn apply(&mut self, a: &CommonArgs) {
        macro_rules! take {
            ($($f:ident),*) => { $(if let Some(v) = &a.$f { self.$f = v.clone(); })* };
        }
        take!(order_quad, metric, validity, mode, eps_conv, max_iters, tangential_attrs, eps_q, max_quad_order, max_depth, untangle_eps);
        if a.control_nodes.is_some() {
            self.control_nodes = a.control_nodes;
        }
        if a.zeta.is_some() {
            self.zeta = a.zeta;
        }
        self.qrefine |= a.qrefine;
        self.svg |= a.svg;
    }

    pub fn metric_spec(&self) -> Result<MetricSpec, CliError> {
        self.metric.parse().map_err(|e| CliError::Usage(format!("{e}")))
    }

    pub fn solver_config(&self) -> Result<SolverConfig, CliError> {
        let cfg = SolverConfig {
            mode: self.mode.parse::<StepMode>().map_err(CliError::Usage)?,
            eps_conv: self.eps_conv,
            max_iters: self.max_iters,
            validity: self.validity.parse::<ValidityMode>().map_err(CliError::Usage)?,
            qrefine: QRefineConfig { enabled: self.qrefine, eps_q: self.eps_q, initial_order: self.order_quad, max_order: self.max_quad_order },
            tangential_attrs: self.tangential_attrs.clone(),
            control_nodes: self.control_nodes,
            max_depth: self.max_depth,
            untangle_eps: self.untangle_eps,
            ..SolverConfig::default()
        };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub seconds: f64,
}

/// Record of one CLI run, written next to its outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: String,
    pub config: RunConfig,
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: BTreeMap<String, PathBuf>,
    pub stages: Vec<Stage>,
    pub exit_code: i32,
    pub summary: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Mesh(#[from] mesh::MeshError),
    #[error("{0}")]
    Solver(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Io(_) | CliError::Usage(_) | CliError::Mesh(_) => EXIT_IO,
            CliError::Solver(_) => EXIT_SOLVER,
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Load a config file or the `config` object of a manifest.
pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let value = match value.get("config") {
        Some(inner) if value.get("subcommand").is_some() => inner.clone(),
        _ => value,
    };
    serde_json::from_value(value).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn resolve(common: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(common);
    Ok(cfg)
}

/// Collects outputs and timings for the manifest.
struct Run {
    subcommand: &'static str,
    dir: PathBuf,
    config: RunConfig,
    inputs: BTreeMap<String, PathBuf>,
    outputs: BTreeMap<String, PathBuf>,
    stages: Vec<Stage>,
    summary: BTreeMap<String, serde_json::Value>,
}

impl Run {
    fn new(subcommand: &'static str, common: &CommonArgs, config: RunConfig) -> Result<Run, CliError> {
        let dir = common.out.clone().unwrap_or_else(|| PathBuf::from(format!("{subcommand}-out")));
        std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        Ok(Run { subcommand, dir, config, inputs: BTreeMap::new(), outputs: BTreeMap::new(), stages: Vec::new(), summary: BTreeMap::new() })
    }

    fn input(&mut self, key: &str, path: &Path) {
        self.inputs.insert(key.into(), path.to_path_buf());
    }

    fn timed<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.stages.push(Stage { name: name.into(), seconds: t.elapsed().as_secs_f64() });
        out
    }

    fn write(&mut self, key: &str, file: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(file);
        std::fs::write(&path, contents).map_err(|e| io_err(&path, e))?;
        self.outputs.insert(key.into(), path);
        Ok(())
    }

    fn write_mesh(&mut self, key: &str, file: &str, m: &Mesh) -> Result<(), CliError> {
        self.write(key, file, &m.to_json_string())
    }

    fn note(&mut self, key: &str, v: impl Serialize) {
        self.summary.insert(key.into(), serde_json::to_value(v).unwrap_or(serde_json::Value::Null));
    }

    fn finish(mut self, exit_code: i32) -> Result<i32, CliError> {
        let path = self.dir.join("manifest.json");
        self.outputs.insert("manifest".into(), path.clone());
        let manifest = RunManifest {
            subcommand: self.subcommand.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config: self.config,
            inputs: self.inputs,
            outputs: self.outputs,
            stages: self.stages,
            exit_code,
            summary: self.summary,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        Ok(exit_code)
    }
}

fn verdict_code(v: Verdict) -> i32 {
    match v {
        Verdict::Positive => EXIT_OK,
        Verdict::Negative => EXIT_NEGATIVE,
        Verdict::Undecided => EXIT_UNDECIDED,
    }
}

/// Per-element certificate table.
pub fn certificate_csv(cert: &MeshCertificate) -> String {
    let mut s = String::from("elem,alpha_lb,alpha_qpmin,verdict,depth\n");
    for c in &cert.elements {
        let _ = writeln!(s, "{},{:e},{:e},{:?},{}", c.elem, c.lower, c.sampled_min, c.verdict, c.depth_used);
    }
    s
}

fn certify(m: &Mesh, cfg: &SolverConfig) -> Result<MeshCertificate, CliError> {
    let orders = vec![cfg.qrefine.initial_order; m.num_elements()];
    validity::certify_mesh(m, &orders, &cfg.certify()).map_err(|e| CliError::Solver(e.to_string()))
}

fn cmd_check(path: &Path, common: &CommonArgs) -> Result<i32, CliError> {
    let config = resolve(common)?;
    let scfg = config.solver_config()?;
    let mut run = Run::new("check", common, config)?;
    run.input("mesh", path);
    let m = run.timed("load", || Mesh::load(path))?;
    run.config.control_nodes = Some(scfg.certify().control_nodes_for(m.order));
    let cert = run.timed("certify", || certify(&m, &scfg))?;
    let csv = certificate_csv(&cert);
    print!("{csv}");
    run.write("report", "check.csv", &csv)?;
    if run.config.svg {
        run.write("svg", "check.svg", &mesh::to_svg(&m, Some(&cert.lower_bounds())))?;
    }
    let inverted = cert.inverted();
    if !inverted.is_empty() {
        eprintln!("inverted elements: {inverted:?}");
    }
    let undecided = cert.undecided();
    if !undecided.is_empty() {
        eprintln!("undecided elements at depth {}: {undecided:?}", scfg.max_depth);
    }
    run.note("alpha_lb", cert.alpha_lower);
    run.note("alpha_qpmin", cert.sampled_min);
    run.note("verdict", cert.verdict());
    run.note("inverted", inverted);
    run.finish(verdict_code(cert.verdict()))
}

fn note_trace(run: &mut Run, prefix: &str, t: &SolverTrace) {
    run.note(&format!("{prefix}termination"), t.termination);
    run.note(&format!("{prefix}iterations"), t.accepted());
    run.note(&format!("{prefix}final_f"), t.final_f());
    run.note(&format!("{prefix}relative_gradient"), t.relative_gradient());
    run.note(&format!("{prefix}quad_orders"), &t.quad_orders);
}

/// Run the untangler; on failure the partial mesh and trace are still written.
fn untangle_stage(run: &mut Run, m: &Mesh, cfg: &SolverConfig, prefix: &str) -> Result<Result<SolveResult, i32>, CliError> {
    match run.timed("untangle", || solver::untangle(m, cfg)) {
        Ok(r) => {
            run.write("untangle_trace", &format!("{prefix}trace.csv"), &r.trace.to_csv())?;
            note_trace(run, prefix, &r.trace);
            Ok(Ok(r))
        }
        Err(SolverError::UntangleFailed { iterations, best_alpha, trace, mesh }) => {
            eprintln!("untangling failed after {iterations} iterations; best lower bound {best_alpha:e}");
            run.write("untangle_trace", &format!("{prefix}trace.csv"), &trace.to_csv())?;
            run.write_mesh("partial_mesh", &format!("{prefix}partial.json"), &mesh)?;
            note_trace(run, prefix, &trace);
            Ok(Err(EXIT_NEGATIVE))
        }
        Err(e) => Err(CliError::Solver(e.to_string())),
    }
}

fn final_check(run: &mut Run, m: &Mesh, cfg: &SolverConfig) -> Result<i32, CliError> {
    let cert = run.timed("certify", || certify(m, cfg))?;
    run.write("report", "check.csv", &certificate_csv(&cert))?;
    run.note("alpha_lb", cert.alpha_lower);
    run.note("verdict", cert.verdict());
    Ok(verdict_code(cert.verdict()))
}

fn cmd_untangle(path: &Path, common: &CommonArgs) -> Result<i32, CliError> {
    let config = resolve(common)?;
    let scfg = config.solver_config()?;
    let mut run = Run::new("untangle", common, config)?;
    run.input("mesh", path);
    let m = run.timed("load", || Mesh::load(path))?;
    run.config.control_nodes = Some(scfg.certify().control_nodes_for(m.order));
    let r = match untangle_stage(&mut run, &m, &scfg, "untangle_")? {
        Ok(r) => r,
        Err(code) => return run.finish(code),
    };
    run.write_mesh("mesh", "mesh.json", &r.mesh)?;
    if run.config.svg {
        run.write("svg_before", "before.svg", &mesh::to_svg(&m, None))?;
        run.write("svg_after", "after.svg", &mesh::to_svg(&r.mesh, None))?;
    }
    let code = final_check(&mut run, &r.mesh, &scfg)?;
    run.finish(code)
}

fn cmd_optimize(path: &Path, untangle_first: bool, common: &CommonArgs) -> Result<i32, CliError> {
    let mut config = resolve(common)?;
    config.untangle_first |= untangle_first;
    let scfg = config.solver_config()?;
    let metric = config.metric_spec()?;
    let mut run = Run::new("optimize", common, config)?;
    run.input("mesh", path);
    let mut m = run.timed("load", || Mesh::load(path))?;
    run.config.control_nodes = Some(scfg.certify().control_nodes_for(m.order));
    let target = run.config.zeta.map(TargetSpec::ideal).unwrap_or_else(|| TargetSpec::from_mesh(&m));
    run.config.zeta = Some(target.zeta);
    let before = m.clone();

    let cert0 = run.timed("certify_initial", || certify(&m, &scfg))?;
    if !cert0.all_positive() {
        if !run.config.untangle_first {
            eprintln!("input mesh is not certified valid (lower bound {:e}); pass --untangle-first", cert0.alpha_lower);
            run.note("alpha_lb", cert0.alpha_lower);
            if scfg.validity == ValidityMode::CertifiedBounds {
                return run.finish(verdict_code(cert0.verdict()));
            }
        } else {
            m = match untangle_stage(&mut run, &m, &scfg, "untangle_")? {
                Ok(r) => r.mesh,
                Err(code) => return run.finish(code),
            };
        }
    }

    let result = run.timed("optimize", || solver::optimize(&m, metric, target, &scfg));
    let r = match result {
        Ok(r) => r,
        Err(SolverError::InvalidInitialMesh { alpha_lower }) => {
            eprintln!("mesh entering optimization is not certified valid (lower bound {alpha_lower:e})");
            return run.finish(EXIT_NEGATIVE);
        }
        Err(e) => {
            eprintln!("{e}");
            return run.finish(EXIT_SOLVER);
        }
    };
    run.write("trace", "trace.csv", &r.trace.to_csv())?;
    run.write_mesh("mesh", "mesh.json", &r.mesh)?;
    note_trace(&mut run, "", &r.trace);
    let lb_before = certify(&before, &scfg)?.lower_bounds();
    let lb_after = certify(&r.mesh, &scfg)?.lower_bounds();
    run.write("svg_before", "before.svg", &mesh::to_svg(&before, Some(&lb_before)))?;
    run.write("svg_after", "after.svg", &mesh::to_svg(&r.mesh, Some(&lb_after)))?;
    let code = final_check(&mut run, &r.mesh, &scfg)?;
    run.finish(code)
}

/// Parse numbers separated by commas and/or whitespace.
pub fn parse_numbers(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| CliError::Usage(format!("not a number: {t:?}"))))
        .collect()
}

/// SVG plot of a 1D polynomial and its piecewise-linear bounds.
fn bounds_svg(p: usize, coeffs: &[f64], b: &bounds::PiecewiseLinearBound) -> Result<String, CliError> {
    let ns = crate::basis::gll_nodes(p).map_err(|e| CliError::Usage(e.to_string()))?;
    let xs: Vec<f64> = (0..=200).map(|k| -1.0 + k as f64 / 100.0).collect();
    let us: Vec<f64> = xs.iter().map(|&x| ns.interpolate(coeffs, x)).collect();
    let lo = us.iter().chain(&b.lower).fold(f64::INFINITY, |a, &v| a.min(v));
    let hi = us.iter().chain(&b.upper).fold(f64::NEG_INFINITY, |a, &v| a.max(v));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (w, h) = (600.0, 400.0);
    let map = |x: f64, y: f64| (20.0 + (x + 1.0) * 0.5 * (w - 40.0), h - 20.0 - (y - lo) / span * (h - 40.0));
    let poly = |pts: &mut dyn Iterator<Item = (f64, f64)>, color: &str| {
        let mut s = String::from("<polyline fill=\"none\" stroke=\"");
        s.push_str(color);
        s.push_str("\" points=\"");
        for (x, y) in pts {
            let (px, py) = map(x, y);
            let _ = write!(s, "{px:.3},{py:.3} ");
        }
        s.push_str("\"/>\n");
        s
    };
    let mut svg = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n");
    svg += &poly(&mut xs.iter().copied().zip(us.iter().copied()), "black");
    svg += &poly(&mut b.control_nodes.iter().copied().zip(b.lower.iter().copied()), "blue");
    svg += &poly(&mut b.control_nodes.iter().copied().zip(b.upper.iter().copied()), "red");
    svg += "</svg>\n";
    Ok(svg)
}

fn cmd_bounds(p: usize, coeffs: &Option<String>, coeffs_file: &Option<PathBuf>, common: &CommonArgs) -> Result<i32, CliError> {
    let config = resolve(common)?;
    let mut run = Run::new("bounds", common, config)?;
    let values = match (coeffs, coeffs_file) {
        (Some(c), _) => parse_numbers(c)?,
        (None, Some(path)) => {
            run.input("coeffs", path);
            parse_numbers(&std::fs::read_to_string(path).map_err(|e| io_err(path, e))?)?
        }
        (None, None) => return Err(CliError::Usage("bounds needs --coeffs or --coeffs-file".into())),
    };
    let m = run.config.control_nodes.unwrap_or(2 * (p + 1));
    run.config.control_nodes = Some(m);
    let usage = |e: bounds::BoundsError| CliError::Usage(e.to_string());
    let table = run.timed("table", || bounds::build_bound_table(p, m)).map_err(usage)?;
    let b = bounds::bound_function_1d(&table, &values).map_err(usage)?;
    let mut csv = String::from("eta,lower,upper\n");
    for ((x, l), u) in b.control_nodes.iter().zip(&b.lower).zip(&b.upper) {
        let _ = writeln!(csv, "{x:e},{l:e},{u:e}");
    }
    let summary = format!("certified_min,certified_max,mean_gap\n{:e},{:e},{:e}\n", b.min_lower(), b.max_upper(), b.mean_gap());
    print!("{csv}");
    print!("{summary}");
    run.write("bounds", "bounds.csv", &csv)?;
    run.write("summary", "summary.csv", &summary)?;
    if run.config.svg {
        let svg = bounds_svg(p, &values, &b)?;
        run.write("svg", "bounds.svg", &svg)?;
    }
    run.note("coeffs", &values);
    run.note("p", p);
    run.finish(EXIT_OK)
}

fn read_points(path: &Path) -> Result<Vec<[f64; 2]>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut pts = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match parse_numbers(line) {
            Ok(v) if v.len() == 2 => pts.push([v[0], v[1]]),
            Err(_) if k == 0 => continue,
            _ => return Err(CliError::Usage(format!("{}:{}: expected x,y", path.display(), k + 1))),
        }
    }
    Ok(pts)
}

fn cmd_project(mesh_path: &Path, points: &Path, common: &CommonArgs) -> Result<i32, CliError> {
    let config = resolve(common)?;
    let mut run = Run::new("project", common, config)?;
    run.input("mesh", mesh_path);
    run.input("points", points);
    let m = Mesh::load(mesh_path)?;
    let pts = read_points(points)?;
    let attrs = if run.config.tangential_attrs.is_empty() {
        let mut a: Vec<u32> = m.boundary.iter().map(|b| b.attr).collect();
        a.sort_unstable();
        a.dedup();
        a
    } else {
        run.config.tangential_attrs.clone()
    };
    run.config.tangential_attrs = attrs.clone();
    let curve = mesh::extract_boundary(&m, &attrs)?;
    let projections = run.timed("project", || pts.iter().map(|&x| tangential::closest_point(&curve, x)).collect::<Vec<_>>());
    let mut csv = String::from("x,y,px,py,attr,segment,t,residual\n");
    for (x, pr) in pts.iter().zip(&projections) {
        let seg = &curve.segments[pr.segment];
        let _ = writeln!(csv, "{:e},{:e},{:e},{:e},{},{},{:e},{:e}", x[0], x[1], pr.point[0], pr.point[1], seg.attr, pr.segment, pr.t, pr.residual.sqrt());
    }
    print!("{csv}");
    run.write("projections", "projections.csv", &csv)?;
    run.finish(EXIT_OK)
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_IO } else { EXIT_OK };
        }
    };
    let out = match &cli.command {
        Command::Check { mesh, common } => cmd_check(mesh, common),
        Command::Optimize { mesh, untangle_first, common } => cmd_optimize(mesh, *untangle_first, common),
        Command::Untangle { mesh, common } => cmd_untangle(mesh, common),
        Command::Bounds { p, coeffs, coeffs_file, common } => cmd_bounds(*p, coeffs, coeffs_file, common),
        Command::Project { mesh, points, common } => cmd_project(mesh, points, common),
    };
    match out {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}
