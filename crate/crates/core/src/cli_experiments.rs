//! Batch driver behind the `exitlab` binary: JSON configs, CSV and SVG
//! outputs, run manifests with checksums.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coarse_grain::{calibrate_k0, ScaleSchedule};
use crate::environment::{derive_seed, EnvironmentLaw, SiteFamily};
use crate::error::{Error, Result};
use crate::exit_solver::{exit_measure, mc_exit, SolverOptions};
use crate::kernel::SimpleRandomWalk;
use crate::lattice::{ball, LatticePoint};
use crate::multiscale_stats::{check_condition, estimate_b, probe_csv_row, PsiSpec, PROBE_CSV_HEADER};
use crate::perturbation::{classify_bad, BadScanParams};
use crate::reference_laws::{
    c_d_covariance, c_d_formula, c_d_quadrature, compare_bm, green_asymptotic, lclt_compare, radial_probe_points,
};
use crate::stats::{median, median_ci, Z_95};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct ExitSection {
    /// Start point; the origin when absent.
    pub start: Option<Vec<i32>>,
    /// Monte Carlo paths for the cross-check (0 disables it).
    pub mc_paths: usize,
}


#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LcltSection {
    pub m: f64,
    pub ns: Vec<usize>,
}

impl Default for LcltSection {
    fn default() -> Self {
        LcltSection {
            m: 3.0,
            ns: vec![4, 8, 16, 32],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GreenSection {
    pub m: f64,
    /// `|x|` range in units of `m`.
    pub range: [f64; 2],
    pub points_per_direction: usize,
    /// Scales for the near-field check `|G_m(0) - 1| m^d`.
    pub near_ms: Vec<f64>,
}

impl Default for GreenSection {
    fn default() -> Self {
        GreenSection {
            m: 4.0,
            range: [5.0, 15.0],
            points_per_direction: 9,
            near_ms: vec![3.0, 5.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct K0Section {
    pub k_max: u32,
    pub samples: usize,
}

impl Default for K0Section {
    fn default() -> Self {
        K0Section { k_max: 8, samples: 16 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BadscanSection {
    pub k0: f64,
}

impl Default for BadscanSection {
    fn default() -> Self {
        BadscanSection { k0: 2.0 }
    }
}

/// Experiment configuration. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dim: usize,
    #[serde(rename = "L")]
    pub ls: Vec<f64>,
    pub eps: f64,
    pub family: SiteFamily,
    pub symmetrize: bool,
    pub delta: f64,
    pub schedule: ScaleSchedule,
    /// Smoothing field for `probe`; `compare-bm` uses it as `Ψ_L` (a
    /// proportional field) or `Ψ_t` (constant).
    pub psi: Vec<PsiSpec>,
    pub n_env: usize,
    pub seed: u64,
    pub solver_tol: f64,
    pub threshold_scale: f64,
    pub output_dir: Option<String>,
    pub threads: Option<usize>,
    pub exit: ExitSection,
    pub lclt: LcltSection,
    pub green: GreenSection,
    pub calibrate_k0: K0Section,
    pub badscan: BadscanSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dim: 3,
            ls: vec![8.0, 16.0],
            eps: 0.02,
            family: SiteFamily::UniformCube,
            symmetrize: true,
            delta: 0.1,
            schedule: ScaleSchedule::toy(),
            psi: vec![PsiSpec::psi_l()],
            n_env: 30,
            seed: 1,
            solver_tol: 1e-12,
            threshold_scale: 1.0,
            output_dir: None,
            threads: None,
            exit: ExitSection::default(),
            lclt: LcltSection::default(),
            green: GreenSection::default(),
            calibrate_k0: K0Section::default(),
            badscan: BadscanSection::default(),
        }
    }
}

fn cfg_err(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| cfg_err("$", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| cfg_err("$", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=6).contains(&self.dim) {
            return Err(cfg_err("dim", format!("must lie in 2..=6, got {}", self.dim)));
        }
        if self.ls.is_empty() {
            return Err(cfg_err("L", "at least one radius is required"));
        }
        for (i, l) in self.ls.iter().enumerate() {
            if !(*l >= 2.0 && l.is_finite()) {
                return Err(cfg_err(&format!("L[{i}]"), format!("must be a finite radius >= 2, got {l}")));
            }
        }
        if !(self.eps >= 0.0 && self.eps < 1.0 / (2 * self.dim) as f64) {
            return Err(cfg_err("eps", format!("must lie in [0, 1/(2d)), got {}", self.eps)));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(cfg_err("delta", format!("must lie in (0, 1], got {}", self.delta)));
        }
        for (i, p) in self.psi.iter().enumerate() {
            p.validate().map_err(|e| cfg_err(&format!("psi[{i}]"), e.to_string()))?;
        }
        if self.n_env == 0 {
            return Err(cfg_err("n_env", "must be >= 1"));
        }
        if !(self.solver_tol > 0.0 && self.solver_tol < 1e-3) {
            return Err(cfg_err("solver_tol", format!("must lie in (0, 1e-3), got {}", self.solver_tol)));
        }
        if !(self.threshold_scale > 0.0) {
            return Err(cfg_err("threshold_scale", "must be > 0"));
        }
        if self.threads == Some(0) {
            return Err(cfg_err("threads", "must be >= 1"));
        }
        if let Some(s) = &self.exit.start {
            if s.len() != self.dim {
                return Err(cfg_err("exit.start", format!("needs {} coordinates", self.dim)));
            }
        }
        if !(self.lclt.m > 0.0) || self.lclt.ns.contains(&0) || self.lclt.ns.is_empty() {
            return Err(cfg_err("lclt", "m must be > 0 and ns nonempty with entries >= 1"));
        }
        let g = &self.green;
        if !(g.m >= 1.0) || !(g.range[0] > 0.0 && g.range[1] > g.range[0]) || g.points_per_direction < 2 {
            return Err(cfg_err("green", "m >= 1, 0 < range[0] < range[1] and >= 2 points per direction required"));
        }
        if g.near_ms.iter().any(|m| !(*m >= 1.0)) {
            return Err(cfg_err("green.near_ms", "entries must be >= 1"));
        }
        if self.calibrate_k0.k_max < 2 || self.calibrate_k0.samples == 0 {
            return Err(cfg_err("calibrate_k0", "k_max >= 2 and samples >= 1 required"));
        }
        if !(self.badscan.k0 >= 1.0) {
            return Err(cfg_err("badscan.k0", "must be >= 1"));
        }
        EnvironmentLaw::new(self.dim, self.eps, self.family.clone(), self.symmetrize)
            .map_err(|e| cfg_err("family", e.to_string()))?;
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))[..16].to_string()
    }

    pub fn law(&self) -> Result<EnvironmentLaw> {
        EnvironmentLaw::new(self.dim, self.eps, self.family.clone(), self.symmetrize)
    }

    pub fn solver(&self) -> SolverOptions {
        SolverOptions {
            tol: self.solver_tol,
            ..SolverOptions::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    Exit,
    Probe,
    Lclt,
    Green,
    CompareBm,
    CalibrateK0,
    Badscan,
}

impl Subcommand {
    pub fn name(&self) -> &'static str {
        match self {
            Subcommand::Exit => "exit",
            Subcommand::Probe => "probe",
            Subcommand::Lclt => "lclt",
            Subcommand::Green => "green",
            Subcommand::CompareBm => "compare-bm",
            Subcommand::CalibrateK0 => "calibrate-k0",
            Subcommand::Badscan => "badscan",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "exit" => Subcommand::Exit,
            "probe" => Subcommand::Probe,
            "lclt" => Subcommand::Lclt,
            "green" => Subcommand::Green,
            "compare-bm" => Subcommand::CompareBm,
            "calibrate-k0" => Subcommand::CalibrateK0,
            "badscan" => Subcommand::Badscan,
            _ => return None,
        })
    }
}

/// A CSV file in memory; numbers are written with Rust's shortest
/// round-trip formatting so output is byte-stable.
#[derive(Clone, Debug)]
pub struct CsvTable {
    pub name: String,
    pub header: String,
    pub rows: Vec<String>,
}

impl CsvTable {
    pub fn new(name: &str, header: &str) -> Self {
        CsvTable {
            name: name.into(),
            header: header.into(),
            rows: Vec::new(),
        }
    }

    pub fn push<I: IntoIterator<Item = String>>(&mut self, fields: I) {
        self.rows.push(fields.into_iter().collect::<Vec<_>>().join(","));
    }

    pub fn render(&self, cfg_hash: &str, seed: u64) -> String {
        let mut s = format!("# exitlab {VERSION} config={cfg_hash} seed={seed}\n{}\n", self.header);
        for r in &self.rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }
}

fn f(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn point(p: &LatticePoint) -> String {
    p.coords().iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ")
}

/// One row of a reference check table.
struct Check {
    name: String,
    params: String,
    constant: f64,
    observed: f64,
    pass: bool,
}

fn checks_table(name: &str, checks: &[Check]) -> CsvTable {
    let mut t = CsvTable::new(name, "name,params,fitted_constant,observed,pass");
    for c in checks {
        t.push([c.name.clone(), c.params.clone(), f(c.constant), f(c.observed), c.pass.to_string()]);
    }
    t
}

/// Line plot with optional log axes; no external plotting dependency.
pub fn svg_line_plot(title: &str, xlabel: &str, ylabel: &str, series: &[(String, Vec<(f64, f64)>)], log_y: bool) -> String {
    let (w, h, pad) = (640.0, 420.0, 60.0);
    let ty = |y: f64| if log_y { y.max(1e-300).log10() } else { y };
    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|(_, s)| s.iter().map(|&(x, y)| (x, ty(y))))
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in &pts {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    if pts.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let sx = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<line x1="{pad}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{}" stroke="black"/>"#,
        h - pad,
        w - pad,
        h - pad,
        h - pad
    );
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let ylab = if log_y { format!("1e{fy:.1}") } else { format!("{fy:.3e}") };
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{:.3}</text>"#, sx(fx), h - pad + 18.0, fx);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, pad - 6.0, sy(fy) + 4.0, ylab);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, w / 2.0, h - 14.0, escape(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        h / 2.0,
        h / 2.0,
        escape(ylabel)
    );
    for (i, (name, ser)) in series.iter().enumerate() {
        let c = colors[i % colors.len()];
        let path: Vec<String> = ser
            .iter()
            .filter(|(x, y)| x.is_finite() && ty(*y).is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(ty(y))))
            .collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{c}" stroke-width="2" points="{}"/>"#, path.join(" "));
        for p in &path {
            let (px, py) = p.split_once(',').unwrap();
            let _ = writeln!(s, r#"<circle cx="{px}" cy="{py}" r="3" fill="{c}"/>"#);
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{c}">{}</text>"#,
            w - pad - 150.0,
            pad + 16.0 * i as f64,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Outputs of one subcommand before they are written.
#[derive(Default)]
pub struct RunOutput {
    pub tables: Vec<CsvTable>,
    pub plots: Vec<(String, String)>,
    /// Failed `--check` conditions.
    pub failures: Vec<String>,
    pub timings: Vec<(String, f64)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub config_hash: String,
    pub seed: u64,
    pub threads: usize,
    pub artifacts: Vec<Artifact>,
    pub wall_times: Vec<(String, f64)>,
}

fn timed<T>(timings: &mut Vec<(String, f64)>, name: String, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t = Instant::now();
    let out = f()?;
    timings.push((name, t.elapsed().as_secs_f64()));
    Ok(out)
}

/// Runs one subcommand in memory.
pub fn execute(sub: Subcommand, cfg: &ExperimentConfig) -> Result<RunOutput> {
    match sub {
        Subcommand::Exit => run_exit(cfg),
        Subcommand::Probe => run_probe(cfg),
        Subcommand::Lclt => run_lclt(cfg),
        Subcommand::Green => run_green(cfg),
        Subcommand::CompareBm => run_compare_bm(cfg),
        Subcommand::CalibrateK0 => run_calibrate_k0(cfg),
        Subcommand::Badscan => run_badscan(cfg),
    }
}

fn run_exit(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let mut out = RunOutput::default();
    let law = cfg.law()?;
    let opts = cfg.solver();
    let start = LatticePoint::new(&cfg.exit.start.clone().unwrap_or_else(|| vec![0; cfg.dim]));
    let mut summary = CsvTable::new("exit_summary", "L,start,n_sites,exit_mass,l1_vs_srw,mc_paths,mc_l1");
    let mut curve = Vec::new();
    for (i, &l) in cfg.ls.iter().enumerate() {
        let v = ball(&LatticePoint::origin(cfg.dim), l)?;
        if !v.contains(&start) {
            return Err(cfg_err("exit.start", format!("start lies outside V_L for L = {l}")));
        }
        let env = law.sample_environment(v.domain(), derive_seed(cfg.seed, i as u64))?;
        let ex = timed(&mut out.timings, format!("exit L={l}"), || exit_measure(&env, v.domain(), &start, opts))?;
        let srw = exit_measure(&SimpleRandomWalk::new(cfg.dim), v.domain(), &start, opts)?;
        let mc = if cfg.exit.mc_paths > 0 {
            Some(mc_exit(&env, v.domain(), &start, cfg.exit.mc_paths, derive_seed(cfg.seed, 1000 + i as u64), None)?)
        } else {
            None
        };
        let emp = mc.as_ref().map(|m| m.empirical());
        let mut t = CsvTable::new(&format!("exit_L{l}"), "z,exit_prob,srw_prob,mc_freq");
        for (z, p) in ex.measure.entries() {
            let mc_col = emp.as_ref().map(|e| f(e.get(z))).unwrap_or_default();
            t.push([point(z), f(*p), f(srw.measure.get(z)), mc_col]);
        }
        out.tables.push(t);
        let mass = ex.measure.total();
        let l1 = ex.measure.l1_dist(&srw.measure);
        let mc_l1 = emp.as_ref().map(|e| e.l1_dist(&ex.measure));
        summary.push([
            f(l),
            point(&start),
            v.domain().len().to_string(),
            f(mass),
            f(l1),
            cfg.exit.mc_paths.to_string(),
            mc_l1.map(f).unwrap_or_default(),
        ]);
        curve.push((l, l1));
        if (mass - 1.0).abs() > 1e-9 {
            out.failures.push(format!("exit mass {mass} at L={l}"));
        }
    }
    out.tables.push(summary);
    out.plots.push((
        "exit".into(),
        svg_line_plot("Exit law distance to the simple random walk", "L", "l1 distance", &[("||Pi - pi||_1".into(), curve)], false),
    ));
    Ok(out)
}

fn run_probe(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let mut out = RunOutput::default();
    let law = cfg.law()?;
    let opts = cfg.solver();
    let mut probe = CsvTable::new("probe", PROBE_CSV_HEADER);
    let mut envs = CsvTable::new("probe_envs", "L,psi_spec,index,seed,d_smoothed,d_plain,level");
    let mut medians = CsvTable::new(
        "probe_medians",
        "L,psi_spec,n_env,median_d_smoothed,ci_lo,ci_hi,median_d_plain",
    );
    let mut series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for psi in &cfg.psi {
        let mut curve = Vec::new();
        for &l in &cfg.ls {
            let p = timed(&mut out.timings, format!("probe L={l} psi={}", psi.label()), || {
                estimate_b(&law, l, psi, cfg.delta, cfg.n_env, cfg.seed, cfg.threshold_scale, opts)
            })?;
            let cond = check_condition(&p, cfg.delta, l)?;
            probe.rows.push(probe_csv_row(&p, &cond));
            for s in &p.samples {
                envs.push([
                    f(l),
                    psi.label(),
                    s.index.to_string(),
                    s.seed.to_string(),
                    f(s.d_smoothed),
                    f(s.d_plain),
                    s.level.map(|v| v.to_string()).unwrap_or_default(),
                ]);
            }
            let ds: Vec<f64> = p.samples.iter().map(|s| s.d_smoothed).collect();
            let dp: Vec<f64> = p.samples.iter().map(|s| s.d_plain).collect();
            let (lo, hi) = median_ci(&ds, Z_95);
            medians.push([f(l), psi.label(), p.n_env.to_string(), f(median(&ds)), f(lo), f(hi), f(median(&dp))]);
            curve.push((l, p.b_total));
            if !cond.pass.iter().all(|b| *b) {
                out.failures.push(format!("Cond fails at L={l} psi={}", psi.label()));
            }
        }
        series.push((psi.label(), curve));
    }
    out.tables.extend([probe, envs, medians]);
    out.plots.push((
        "probe".into(),
        svg_line_plot("Estimated bad-event frequency b", "L", "b", &series, false),
    ));
    Ok(out)
}

fn run_lclt(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let mut out = RunOutput::default();
    let (m, ns) = (cfg.lclt.m, cfg.lclt.ns.clone());
    let reps = timed(&mut out.timings, format!("lclt m={m}"), || lclt_compare(cfg.dim, m, &ns))?;
    let mut t = CsvTable::new(
        "lclt",
        "m,n,alpha,sup_gap,scaled_error,mass,truncated_mass,symmetry_defect,support_max_norm,bound_2mn,window",
    );
    for r in &reps {
        t.push([
            f(r.m),
            r.n.to_string(),
            f(r.alpha),
            f(r.sup_gap),
            f(r.scaled_error),
            f(r.mass),
            f(r.truncated_mass),
            f(r.symmetry_defect),
            f(r.support_radius),
            f(r.support_bound),
            r.window.to_string(),
        ]);
    }
    let first = reps[0].scaled_error;
    let worst = reps.iter().map(|r| r.scaled_error).fold(0.0, f64::max);
    let mut checks = vec![Check {
        name: "scaled_error_vs_first".into(),
        params: format!("d={} m={m} n={:?}", cfg.dim, ns),
        constant: 2.0 * first,
        observed: worst,
        pass: worst <= 2.0 * first,
    }];
    let mass_err = reps.iter().map(|r| (r.mass + r.truncated_mass - 1.0).abs()).fold(0.0, f64::max);
    checks.push(Check {
        name: "mass".into(),
        params: format!("m={m}"),
        constant: 1e-10,
        observed: mass_err,
        pass: mass_err <= 1e-10,
    });
    for c in &checks {
        if !c.pass {
            out.failures.push(format!("lclt check {} observed {} vs {}", c.name, c.observed, c.constant));
        }
    }
    out.tables.push(t);
    out.tables.push(checks_table("lclt_checks", &checks));
    out.plots.push((
        "lclt".into(),
        svg_line_plot(
            "Scaled local CLT error e(n)",
            "n",
            "e(n)",
            &[(format!("m={m}"), reps.iter().map(|r| (r.n as f64, r.scaled_error)).collect())],
            true,
        ),
    ));
    Ok(out)
}

fn run_green(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let mut out = RunOutput::default();
    if cfg.dim != 3 {
        return Err(cfg_err("dim", "green is implemented for d = 3"));
    }
    let g = &cfg.green;
    let pts = radial_probe_points(g.range[0] * g.m, g.range[1] * g.m, g.points_per_direction);
    let table = timed(&mut out.timings, format!("green m={}", g.m), || green_asymptotic(g.m, &pts))?;
    let mut t = CsvTable::new("green", "x,norm,G,ratio,error");
    for e in &table.entries {
        t.push([point(&e.x), f(e.norm), f(e.g), f(e.ratio), f(e.error)]);
    }
    let ratios: Vec<f64> = table.entries.iter().map(|e| e.ratio).collect();
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(a, b), r| (a.min(*r), b.max(*r)));
    let c_lit = c_d_quadrature(3);
    let dev = ratios.iter().map(|r| (r / c_lit - 1.0).abs()).fold(0.0, f64::max);
    let mut checks = vec![
        Check {
            name: "ratio_variation".into(),
            params: format!("m={} |x|/m in {:?}", g.m, g.range),
            constant: 0.2,
            observed: hi / lo - 1.0,
            pass: hi / lo - 1.0 <= 0.2,
        },
        Check {
            name: "ratio_vs_c_formula".into(),
            params: format!("c(3)={c_lit}"),
            constant: 0.25,
            observed: dev,
            pass: dev <= 0.25,
        },
        Check {
            name: "ratio_vs_c_covariance".into(),
            params: format!("c={}", c_d_covariance(3)),
            constant: 0.25,
            observed: ratios.iter().map(|r| (r / c_d_covariance(3) - 1.0).abs()).fold(0.0, f64::max),
            pass: ratios.iter().all(|r| (r / c_d_covariance(3) - 1.0).abs() <= 0.25),
        },
        Check {
            name: "c_formula_quadrature".into(),
            params: "d=3".into(),
            constant: c_d_formula(3),
            observed: c_lit,
            pass: (c_lit - c_d_formula(3)).abs() <= 1e-12,
        },
    ];
    let mut near = Vec::new();
    for &m in &g.near_ms {
        let t0 = green_asymptotic(m, &[LatticePoint::origin(3)])?;
        near.push((m, (t0.entries[0].g - 1.0).abs() * m.powi(3)));
    }
    if near.len() >= 2 {
        let (a, b) = near.iter().fold((f64::INFINITY, 0.0f64), |(a, b), (_, v)| (a.min(*v), b.max(*v)));
        checks.push(Check {
            name: "near_field_scaled_spread".into(),
            params: format!("ms={:?}", g.near_ms),
            constant: 2.0,
            observed: b / a,
            pass: b / a <= 2.0,
        });
    }
    for (m, v) in &near {
        checks.push(Check {
            name: "near_field_scaled".into(),
            params: format!("m={m}"),
            constant: 1.0,
            observed: *v,
            pass: *v <= 1.0,
        });
    }
    for c in &checks {
        if !c.pass {
            out.failures.push(format!("green check {} observed {} vs {}", c.name, c.observed, c.constant));
        }
    }
    out.tables.push(t);
    out.tables.push(checks_table("green_checks", &checks));
    let mut by_dir: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for e in &table.entries {
        let c = e.x.coords();
        let g0 = c.iter().map(|v| v.unsigned_abs()).fold(0, gcd);
        let dir = c.iter().map(|v| (v / g0 as i32).to_string()).collect::<Vec<_>>().join(" ");
        match by_dir.iter_mut().find(|(n, _)| *n == dir) {
            Some((_, s)) => s.push((e.norm, e.ratio)),
            None => by_dir.push((dir, vec![(e.norm, e.ratio)])),
        }
    }
    out.plots.push((
        "green".into(),
        svg_line_plot("G_m(x) alpha(m) |x| by direction", "|x|", "ratio", &by_dir, false),
    ));
    Ok(out)
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a.max(1)
    } else {
        gcd(b, a % b)
    }
}

fn psi_scale(psi: &PsiSpec, l: f64) -> Result<f64> {
    match psi {
        PsiSpec::Constant { t } => Ok(*t),
        PsiSpec::Proportional { factor } => Ok(factor * l),
        PsiSpec::Table { .. } => Err(cfg_err("psi", "compare-bm needs a constant or proportional field")),
    }
}

fn run_compare_bm(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let mut out = RunOutput::default();
    let mut t = CsvTable::new(
        "compare_bm",
        "L,psi_spec,m,sup_gap,argmax,scaled_gap,lattice_mass,bm_mass,quadrature_error",
    );
    let mut checks = Vec::new();
    let mut series = Vec::new();
    for psi in &cfg.psi {
        let mut curve = Vec::new();
        for &l in &cfg.ls {
            let m = psi_scale(psi, l)?;
            let c = timed(&mut out.timings, format!("compare-bm L={l}"), || compare_bm(cfg.dim, l, m))?;
            t.push([
                f(l),
                psi.label(),
                f(m),
                f(c.sup_gap),
                point(&c.argmax),
                f(c.scaled_gap),
                f(c.lattice_mass),
                f(c.bm_mass),
                f(c.quadrature_error),
            ]);
            curve.push((l, c.scaled_gap));
            if (c.bm_mass - 1.0).abs() > 1e-4 {
                out.failures.push(format!("Brownian kernel mass {} at L={l}", c.bm_mass));
            }
        }
        let (lo, hi) = curve.iter().fold((f64::INFINITY, 0.0f64), |(a, b), (_, v)| (a.min(*v), b.max(*v)));
        checks.push(Check {
            name: "scaled_gap_spread".into(),
            params: format!("psi={} L={:?}", psi.label(), cfg.ls),
            constant: 1.5,
            observed: hi / lo,
            pass: hi / lo <= 1.5,
        });
        series.push((psi.label(), curve));
    }
    for c in &checks {
        if !c.pass {
            out.failures.push(format!("compare-bm check {} observed {} vs {}", c.name, c.observed, c.constant));
        }
    }
    out.tables.push(t);
    out.tables.push(checks_table("compare_bm_checks", &checks));
    out.plots.push((
        "compare_bm".into(),
        svg_line_plot("sup gap times L^(d+1/5)", "L", "scaled gap", &series, false),
    ));
    Ok(out)
}

fn run_calibrate_k0(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let mut out = RunOutput::default();
    let opts = cfg.solver();
    let mut summary = CsvTable::new("k0", "L,r,k0,found");
    let mut sweep = CsvTable::new(
        "k0_sweep",
        "L,k0,min_leave_first,max_mass_inside,slack_leave_first,slack_mass_inside,satisfied",
    );
    let mut series = Vec::new();
    for &l in &cfg.ls {
        let c = timed(&mut out.timings, format!("calibrate-k0 L={l}"), || {
            calibrate_k0(cfg.dim, l, &cfg.schedule, cfg.calibrate_k0.k_max, cfg.calibrate_k0.samples, opts)
        })?;
        summary.push([f(l), f(c.r), c.k0.to_string(), c.found.to_string()]);
        let mut curve = Vec::new();
        for s in &c.sweep {
            sweep.push([
                f(l),
                s.k0.to_string(),
                f(s.min_leave_first),
                f(s.max_mass_inside),
                f(s.slack_leave_first),
                f(s.slack_mass_inside),
                s.satisfied().to_string(),
            ]);
            curve.push((s.k0 as f64, s.slack_leave_first.min(s.slack_mass_inside)));
        }
        series.push((format!("L={l}"), curve));
        if !c.found {
            out.failures.push(format!("no k0 <= {} at L={l}", cfg.calibrate_k0.k_max));
        }
    }
    out.tables.extend([summary, sweep]);
    out.plots.push((
        "k0".into(),
        svg_line_plot("Smallest slack of the k0 conditions", "k0", "slack", &series, false),
    ));
    Ok(out)
}

fn run_badscan(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let mut out = RunOutput::default();
    let law = cfg.law()?;
    let opts = cfg.solver();
    let mut per_env = CsvTable::new("badscan", "L,index,seed,n_bad_1,n_bad_2,n_bad_3,n_bad_4,good,two_bad");
    let mut summary = CsvTable::new("badscan_summary", "L,n_env,frac_bad,frac_two_bad,mean_bad_sites");
    let mut curve = Vec::new();
    for (i, &l) in cfg.ls.iter().enumerate() {
        let params = BadScanParams {
            l,
            delta: cfg.delta,
            k0: cfg.badscan.k0,
            schedule: cfg.schedule.clone(),
            threshold_scale: cfg.threshold_scale,
        };
        let reach = l + 2.0 * cfg.badscan.k0 * cfg.schedule.r(l).max(cfg.schedule.s(l)) + 2.0;
        let region = ball(&LatticePoint::origin(cfg.dim), reach)?;
        let (mut n_bad, mut n_two, mut sites) = (0usize, 0usize, 0usize);
        for e in 0..cfg.n_env {
            let seed = derive_seed(cfg.seed, (i * 100_000 + e) as u64);
            let env = law.sample_environment(region.domain(), seed)?;
            let rep = timed(&mut out.timings, format!("badscan L={l} env={e}"), || classify_bad(&env, &params, opts))?;
            let counts: Vec<String> = rep.levels.iter().map(|v| v.len().to_string()).collect();
            per_env.push(
                [f(l), e.to_string(), seed.to_string()]
                    .into_iter()
                    .chain(counts)
                    .chain([rep.good.to_string(), rep.two_bad.to_string()]),
            );
            n_bad += usize::from(!rep.good);
            n_two += usize::from(rep.two_bad);
            sites += rep.bad_sites().len();
        }
        let n = cfg.n_env as f64;
        summary.push([
            f(l),
            cfg.n_env.to_string(),
            f(n_bad as f64 / n),
            f(n_two as f64 / n),
            f(sites as f64 / n),
        ]);
        curve.push((l, n_bad as f64 / n));
    }
    out.tables.extend([per_env, summary]);
    out.plots.push((
        "badscan".into(),
        svg_line_plot("Fraction of environments with a bad site", "L", "fraction", &[("bad".into(), curve)], false),
    ));
    Ok(out)
}

/// Runs a subcommand and writes its artifacts under `out_dir`. Files are
/// staged in a scratch directory and moved into place only on success.
pub fn run_to_dir(sub: Subcommand, cfg: &ExperimentConfig, out_dir: &Path, threads: usize) -> Result<(RunManifest, Vec<String>)> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    let result = pool.install(|| execute(sub, cfg))?;
    fs::create_dir_all(out_dir)?;
    let staging = out_dir.join(format!(".staging-{}", sub.name()));
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    fs::create_dir_all(&staging)?;
    let written = write_outputs(&result, cfg, &staging, sub);
    let files = match written {
        Ok(f) => f,
        Err(e) => {
            let _ = fs::remove_dir_all(&staging);
            return Err(e);
        }
    };
    let mut artifacts = Vec::new();
    for (name, bytes) in &files {
        fs::rename(staging.join(name), out_dir.join(name))?;
        artifacts.push(Artifact {
            path: name.clone(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len(),
        });
    }
    fs::remove_dir_all(&staging)?;
    let manifest = RunManifest {
        tool: "exitlab".into(),
        version: VERSION.into(),
        subcommand: sub.name().into(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        threads,
        artifacts,
        wall_times: result.timings.clone(),
    };
    let mpath = out_dir.join(format!("{}_manifest.json", sub.name().replace('-', "_")));
    fs::write(mpath, serde_json::to_string_pretty(&manifest)?)?;
    Ok((manifest, result.failures))
}

fn write_outputs(result: &RunOutput, cfg: &ExperimentConfig, dir: &Path, sub: Subcommand) -> Result<Vec<(String, Vec<u8>)>> {
    let hash = cfg.hash();
    let mut files = Vec::new();
    let cfg_name = format!("{}_config.json", sub.name().replace('-', "_"));
    files.push((cfg_name, serde_json::to_string_pretty(cfg)?.into_bytes()));
    for t in &result.tables {
        files.push((format!("{}.csv", t.name), t.render(&hash, cfg.seed).into_bytes()));
    }
    for (name, svg) in &result.plots {
        files.push((format!("{name}.svg"), svg.clone().into_bytes()));
    }
    for (name, bytes) in &files {
        fs::write(dir.join(name), bytes)?;
    }
    Ok(files)
}

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_CHECK: i32 = 4;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::Json(_) => EXIT_CONFIG,
        _ => EXIT_NUMERICAL,
    }
}

/// Default output directory when neither the flag nor the config sets one.
pub fn default_out_dir(cfg: &ExperimentConfig) -> PathBuf {
    PathBuf::from(cfg.output_dir.clone().unwrap_or_else(|| "exitlab-out".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip_and_hash() {
        let cfg = ExperimentConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        let back = ExperimentConfig::from_json(&json).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash(), back.hash());
        let other = ExperimentConfig {
            seed: 2,
            ..cfg.clone()
        };
        assert_ne!(cfg.hash(), other.hash());
    }

    #[test]
    fn config_errors_name_the_field() {
        let e = ExperimentConfig::from_json(r#"{"L": [8, -1]}"#).unwrap_err();
        assert!(matches!(&e, Error::Config { path, .. } if path == "L[1]"), "{e}");
        let e = ExperimentConfig::from_json(r#"{"eps": 0.3}"#).unwrap_err();
        assert!(matches!(&e, Error::Config { path, .. } if path == "eps"));
        let e = ExperimentConfig::from_json(r#"{"unknown": 1}"#).unwrap_err();
        assert_eq!(exit_code(&e), EXIT_CONFIG);
    }

    #[test]
    fn csv_header_line() {
        let mut t = CsvTable::new("x", "a,b");
        t.push(["1".to_string(), f(0.5)]);
        let s = t.render("abc", 7);
        assert!(s.starts_with("# exitlab "));
        assert!(s.contains("config=abc seed=7\na,b\n1,0.5\n"));
    }

    #[test]
    fn svg_is_well_formed() {
        let s = svg_line_plot("t", "x", "y", &[("a".into(), vec![(1.0, 2.0), (2.0, 3.0)])], true);
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
    }
}
