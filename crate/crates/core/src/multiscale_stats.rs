//! Smoothed and plain exit distances `D_{L,Ψ}`, `D_{L,0}`, the Monte Carlo
//! estimator of `b_1..b_4` over environments, and the `Cond(δ, L)` check.

use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::environment::{derive_seed, Environment, EnvironmentLaw};
use crate::error::{Error, Result};
use crate::exit_solver::{DomainSystem, SolverOptions};
use crate::grid::{convolve_fft, DenseGrid};
use crate::kernel::Measure;
use crate::lattice::{ball_points, norm_sq_bound, Domain, LatticePoint};
use crate::srw::{center_exit, pi_hat_center};
use crate::stats::{wilson_interval, Z_95};

/// Smoothing radius field `Ψ = (m_z)` on the boundary of `V_L`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PsiSpec {
    /// `m_z = t` everywhere (`Ψ_t`).
    Constant { t: f64 },
    /// `m_z = factor · L`; `factor = 1` is `Ψ_L`.
    Proportional { factor: f64 },
    /// Explicit table keyed by boundary point.
    Table { field: Vec<(LatticePoint, f64)> },
}

impl PsiSpec {
    pub fn psi_l() -> Self {
        PsiSpec::Proportional { factor: 1.0 }
    }

    pub fn label(&self) -> String {
        match self {
            PsiSpec::Constant { t } => format!("const:{t}"),
            PsiSpec::Proportional { factor } => format!("prop:{factor}"),
            PsiSpec::Table { field } => format!("table:{}", field.len()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |v: f64| !(v > 0.0) || !v.is_finite();
        match self {
            PsiSpec::Constant { t } if bad(*t) => Err(Error::InvalidParameter(format!("psi constant {t}"))),
            PsiSpec::Proportional { factor } if bad(*factor) => {
                Err(Error::InvalidParameter(format!("psi factor {factor}")))
            }
            PsiSpec::Table { field } => match field.iter().find(|(_, m)| bad(*m)) {
                Some((p, m)) => Err(Error::InvalidParameter(format!("psi value {m} at {p}"))),
                None => Ok(()),
            },
            _ => Ok(()),
        }
    }

    /// Field `z ↦ m_z` for radius `l`.
    pub fn field(&self, l: f64) -> Result<Box<dyn Fn(&LatticePoint) -> Result<f64> + Send + Sync + '_>> {
        self.validate()?;
        Ok(match self {
            PsiSpec::Constant { t } => {
                let t = *t;
                Box::new(move |_| Ok(t))
            }
            PsiSpec::Proportional { factor } => {
                let m = factor * l;
                Box::new(move |_| Ok(m))
            }
            PsiSpec::Table { field } => {
                let map: FxHashMap<LatticePoint, f64> = field.iter().cloned().collect();
                Box::new(move |z| map.get(z).copied().ok_or_else(|| Error::KernelUndefined(z.clone())))
            }
        })
    }
}

/// Above this many multiply-adds a smoothing group switches to FFT.
const FFT_THRESHOLD: f64 = 4e7;

/// `μ π̂_Ψ` for the simple random walk smoothing kernel, where the row at
/// `z` uses scale `m_of(z)`.
pub fn smooth<F>(mu: &Measure, dim: usize, m_of: F) -> Result<Measure>
where
    F: Fn(&LatticePoint) -> Result<f64>,
{
    if mu.is_empty() {
        return Ok(Measure::new());
    }
    let mut groups: FxHashMap<u64, Vec<(LatticePoint, f64)>> = FxHashMap::default();
    for (z, v) in mu.entries() {
        let m = m_of(z)?;
        if !(m > 0.0) || !m.is_finite() {
            return Err(Error::InvalidParameter(format!("smoothing scale {m} at {z}")));
        }
        groups.entry(m.to_bits()).or_default().push((z.clone(), *v));
    }
    let mut keys: Vec<u64> = groups.keys().copied().collect();
    keys.sort_unstable();
    let rows: Vec<_> = keys
        .iter()
        .map(|k| pi_hat_center(dim, f64::from_bits(*k)))
        .collect::<Result<_>>()?;
    let pad = rows
        .iter()
        .map(|r| r.grid.shape()[0] / 2)
        .max()
        .unwrap_or(0);
    let mut out = DenseGrid::covering(mu, dim, pad)?;
    let strides = strides(out.shape());
    for (key, row) in keys.iter().zip(&rows) {
        let group = &groups[key];
        let nnz = row.grid.data().iter().filter(|v| **v != 0.0).count();
        if group.len() as f64 * nnz as f64 > FFT_THRESHOLD {
            let g = DenseGrid::from_measure(&Measure::from_entries(group.clone()), dim)?;
            let conv = convolve_fft(&g, &row.grid)?;
            for (i, v) in conv.data().iter().enumerate() {
                if v.abs() > 0.0 {
                    let p = conv.point_at(i);
                    if let Some(j) = out.offset(p.coords()) {
                        out.data_mut()[j] += v;
                    }
                }
            }
            continue;
        }
        let deltas: Vec<(isize, f64)> = row
            .grid
            .data()
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| {
                let p = row.grid.point_at(i);
                let off: isize = p.coords().iter().zip(&strides).map(|(c, s)| *c as isize * s).sum();
                (off, *v)
            })
            .collect();
        let bases: Vec<isize> = group
            .iter()
            .map(|(z, _)| out.offset(z.coords()).expect("support inside grid") as isize)
            .collect();
        let data = out.data_mut();
        for ((_, w), base) in group.iter().zip(bases) {
            for (off, p) in &deltas {
                data[(base + off) as usize] += w * p;
            }
        }
    }
    Ok(out.to_measure())
}

fn strides(shape: &[usize]) -> Vec<isize> {
    let mut s = vec![1isize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1] as isize;
    }
    s
}


/// `Π_V(x, ·)`, `π_V(x, ·)` for `V = {|y - x|^2 <= norm_sq}`.
#[derive(Clone, Debug)]
pub struct ExitPair {
    pub env: Measure,
    pub srw: Measure,
}

impl ExitPair {
    pub fn difference(&self) -> Measure {
        self.env.sub(&self.srw)
    }
}

pub fn exit_pair(env: &Environment, x: &LatticePoint, norm_sq: i64, opts: SolverOptions) -> Result<ExitPair> {
    let dim = env.law().dim;
    if x.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: x.dim(),
        });
    }
    let v = Domain::from_points(dim, ball_points(x, norm_sq))?;
    if let Some(p) = v.points().iter().find(|p| !env.region().contains(p)) {
        return Err(Error::OutsideRegion(p.clone()));
    }
    let env_exit = DomainSystem::assemble(env, &v, opts)?.exit_row(x)?.measure;
    let srw = center_exit(dim, norm_sq)?.measure()?.translate(x);
    Ok(ExitPair { env: env_exit, srw })
}

#[derive(Clone, Debug, Serialize)]
pub struct DistanceReport {
    pub l: f64,
    pub psi: String,
    pub d_smoothed: f64,
    pub d_plain: f64,
    /// `|Π_L(0, Z^d) - 1|`.
    pub env_mass_defect: f64,
    /// `|π_L(0, Z^d) - 1|`.
    pub srw_mass_defect: f64,
}

/// Both distances at the origin from one pair of exit solves.
pub fn distance_report(env: &Environment, l: f64, psi: &PsiSpec, opts: SolverOptions) -> Result<DistanceReport> {
    let dim = env.law().dim;
    let pair = exit_pair(env, &LatticePoint::origin(dim), norm_sq_bound(l), opts)?;
    let diff = pair.difference();
    let field = psi.field(l)?;
    let smoothed = smooth(&diff, dim, |z| field(z))?;
    Ok(DistanceReport {
        l,
        psi: psi.label(),
        d_smoothed: smoothed.l1(),
        d_plain: diff.l1(),
        env_mass_defect: (pair.env.total() - 1.0).abs(),
        srw_mass_defect: (pair.srw.total() - 1.0).abs(),
    })
}

/// `D_{L,Ψ}(0) = ‖((Π_L - π_L) π̂_Ψ)(0, ·)‖₁`.
pub fn d_smoothed(env: &Environment, l: f64, psi: &PsiSpec, opts: SolverOptions) -> Result<f64> {
    Ok(distance_report(env, l, psi, opts)?.d_smoothed)
}

/// `D_{L,0}(0) = ‖Π_L(0, ·) - π_L(0, ·)‖₁`.
pub fn d_plain(env: &Environment, l: f64, opts: SolverOptions) -> Result<f64> {
    let dim = env.law().dim;
    Ok(exit_pair(env, &LatticePoint::origin(dim), norm_sq_bound(l), opts)?
        .difference()
        .l1())
}

/// Band edges `t_i = scale · (log L)^{-9 + 9i/4}` for `i = 0..3`.
pub fn thresholds(l: f64, scale: f64) -> [f64; 4] {
    let ll = l.ln();
    [0, 1, 2, 3].map(|i| scale * ll.powf(-9.0 + 9.0 * i as f64 / 4.0))
}

/// Event of one environment: `Some(i)` for `b_i`, `None` if good.
pub fn classify_distances(d_psi: f64, d_plain: f64, t: &[f64; 4], delta: f64) -> Option<u8> {
    if d_psi > t[3] || d_plain > delta {
        Some(4)
    } else if d_psi > t[2] {
        Some(3)
    } else if d_psi > t[1] {
        Some(2)
    } else if d_psi > t[0] {
        Some(1)
    } else {
        None
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EnvSample {
    pub index: usize,
    pub seed: u64,
    pub d_smoothed: f64,
    pub d_plain: f64,
    pub level: Option<u8>,
}

#[derive(Clone, Debug, Serialize)]
pub struct InductionProbe {
    pub l: f64,
    pub psi: PsiSpec,
    pub delta: f64,
    pub n_env: usize,
    pub seed: u64,
    pub threshold_scale: f64,
    pub thresholds: [f64; 4],
    pub counts: [usize; 4],
    pub b_hat: [f64; 4],
    pub b_total: f64,
    pub ci: [(f64, f64); 4],
    /// Environments in `b_4` only through `D_{L,0} > δ` whose smoothed
    /// distance falls in one of the bands of `b_1..b_3`.
    pub plain_overlap: usize,
    pub samples: Vec<EnvSample>,
}

/// Frequencies of the four events over `n_env` environments sampled on
/// `V_L` with seeds `derive_seed(seed, i)`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_b(
    law: &EnvironmentLaw,
    l: f64,
    psi: &PsiSpec,
    delta: f64,
    n_env: usize,
    seed: u64,
    threshold_scale: f64,
    opts: SolverOptions,
) -> Result<InductionProbe> {
    if n_env == 0 {
        return Err(Error::InvalidParameter("n_env must be >= 1".into()));
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!("delta must be > 0, got {delta}")));
    }
    if !(threshold_scale > 0.0) {
        return Err(Error::InvalidParameter(format!("threshold scale {threshold_scale}")));
    }
    psi.validate()?;
    let dim = law.dim;
    let region = Domain::from_points(dim, ball_points(&LatticePoint::origin(dim), norm_sq_bound(l)))?;
    let t = thresholds(l, threshold_scale);
    let samples: Vec<EnvSample> = (0..n_env)
        .into_par_iter()
        .map(|i| {
            let s = derive_seed(seed, i as u64);
            let env = law.sample_environment(&region, s)?;
            let rep = distance_report(&env, l, psi, opts)?;
            Ok(EnvSample {
                index: i,
                seed: s,
                d_smoothed: rep.d_smoothed,
                d_plain: rep.d_plain,
                level: classify_distances(rep.d_smoothed, rep.d_plain, &t, delta),
            })
        })
        .collect::<Result<_>>()?;
    let mut counts = [0usize; 4];
    let mut plain_overlap = 0;
    for s in &samples {
        if let Some(i) = s.level {
            counts[i as usize - 1] += 1;
        }
        if s.d_plain > delta && s.d_smoothed > t[0] && s.d_smoothed <= t[3] {
            plain_overlap += 1;
        }
    }
    let b_hat = counts.map(|c| c as f64 / n_env as f64);
    Ok(InductionProbe {
        l,
        psi: psi.clone(),
        delta,
        n_env,
        seed,
        threshold_scale,
        thresholds: t,
        counts,
        b_total: b_hat.iter().sum(),
        b_hat,
        ci: counts.map(|c| wilson_interval(c, n_env, Z_95)),
        plain_overlap,
        samples,
    })
}

/// Coefficients `1 - (4 - i)/13` for `i = 1..4`.
pub const COND_COEFFS: [f64; 4] = [10.0 / 13.0, 11.0 / 13.0, 12.0 / 13.0, 1.0];

/// `¼ exp(-c_i (log L)^2)`.
pub fn cond_rhs(l: f64) -> [f64; 4] {
    let ll = l.ln();
    COND_COEFFS.map(|c| 0.25 * (-c * ll * ll).exp())
}

#[derive(Clone, Debug, Serialize)]
pub struct ConditionCheck {
    pub l: f64,
    pub delta: f64,
    pub rhs: [f64; 4],
    /// `b̂_i <= rhs_i`.
    pub pass: [bool; 4],
    /// `rhs_i - b̂_i`.
    pub margin: [f64; 4],
    /// Upper Wilson bound below `rhs_i`: the sample size suffices to
    /// confirm the inequality.
    pub ci_conclusive: [bool; 4],
    /// `exp(-(10/13)(log L)^2)`, implied bound on `Σ b_i`.
    pub implied_bound: f64,
    pub implied_pass: bool,
}

impl ConditionCheck {
    pub fn all_pass(&self) -> bool {
        self.pass.iter().all(|p| *p)
    }
}

pub fn check_condition(probe: &InductionProbe, delta: f64, l: f64) -> Result<ConditionCheck> {
    if probe.l != l || probe.delta != delta {
        return Err(Error::InvalidParameter(format!(
            "probe was run at L={}, δ={}; asked for L={l}, δ={delta}",
            probe.l, probe.delta
        )));
    }
    let rhs = cond_rhs(l);
    let ll = l.ln();
    let implied_bound = (-(10.0 / 13.0) * ll * ll).exp();
    Ok(ConditionCheck {
        l,
        delta,
        rhs,
        pass: [0, 1, 2, 3].map(|i| probe.b_hat[i] <= rhs[i]),
        margin: [0, 1, 2, 3].map(|i| rhs[i] - probe.b_hat[i]),
        ci_conclusive: [0, 1, 2, 3].map(|i| probe.ci[i].1 <= rhs[i]),
        implied_bound,
        implied_pass: probe.b_total <= implied_bound,
    })
}

pub const PROBE_CSV_HEADER: &str = "L,psi_spec,delta,n_env,b1,b2,b3,b4,b,\
ci_lo_1,ci_lo_2,ci_lo_3,ci_lo_4,ci_hi_1,ci_hi_2,ci_hi_3,ci_hi_4,\
cond_pass_1,cond_pass_2,cond_pass_3,cond_pass_4,margin_1,margin_2,margin_3,margin_4";

pub fn probe_csv_row(probe: &InductionProbe, cond: &ConditionCheck) -> String {
    let mut f: Vec<String> = vec![
        format!("{}", probe.l),
        probe.psi.label(),
        format!("{}", probe.delta),
        format!("{}", probe.n_env),
    ];
    f.extend(probe.b_hat.iter().map(|v| format!("{v}")));
    f.push(format!("{}", probe.b_total));
    f.extend(probe.ci.iter().map(|c| format!("{}", c.0)));
    f.extend(probe.ci.iter().map(|c| format!("{}", c.1)));
    f.extend(cond.pass.iter().map(|p| format!("{p}")));
    f.extend(cond.margin.iter().map(|m| format!("{m:e}")));
    f.join(",")
}
