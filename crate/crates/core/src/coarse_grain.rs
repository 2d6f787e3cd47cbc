//! Smoothing density, radius tables, scale schedules, the profile `h_L`,
//! coarse-graining schemes and the coarse-grained kernels they induce.

use std::sync::OnceLock;

use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exit_solver::{DomainSystem, SolverOptions};
use crate::kernel::{Kernel, Measure, Row, SparseKernel};
use crate::lattice::{ball, ball_points, isometry_group, norm_sq_bound, Domain, Isometry, LatticePoint};
use crate::quadrature::adaptive_simpson;
use crate::srw::{center_exit, pi_hat_center, solve_center};

/// The bump `φ(t) ∝ exp(-1/((t-1)(2-t)))` on `(1, 2)`.
#[derive(Clone, Copy, Debug)]
pub struct SmoothingDensity {
    norm: f64,
}

fn bump(t: f64) -> f64 {
    if t <= 1.0 || t >= 2.0 {
        0.0
    } else {
        (-1.0 / ((t - 1.0) * (2.0 - t))).exp()
    }
}

impl SmoothingDensity {
    pub fn get() -> &'static SmoothingDensity {
        static PHI: OnceLock<SmoothingDensity> = OnceLock::new();
        PHI.get_or_init(|| SmoothingDensity {
            norm: adaptive_simpson(&bump, 1.0, 2.0, 1e-15),
        })
    }

    pub fn normalization(&self) -> f64 {
        self.norm
    }

    pub fn density(&self, t: f64) -> f64 {
        bump(t) / self.norm
    }

    /// `φ_m(t) = φ(t/m)/m`.
    pub fn rescaled(&self, m: f64, t: f64) -> f64 {
        self.density(t / m) / m
    }

    /// `∫_1^u φ`.
    pub fn cdf(&self, u: f64) -> f64 {
        if u <= 1.0 {
            0.0
        } else if u >= 2.0 {
            1.0
        } else if u <= 1.5 {
            adaptive_simpson(&bump, 1.0, u, 1e-17) / self.norm
        } else {
            1.0 - adaptive_simpson(&bump, u, 2.0, 1e-17) / self.norm
        }
    }
}

/// One atom of the image of `φ_m(t) dt` under `t ↦ V_t`: the ball
/// `{|y|^2 <= norm_sq}` is selected for `t ∈ [t_lo, t_hi)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusWeight {
    pub norm_sq: i64,
    pub t_lo: f64,
    pub t_hi: f64,
    pub weight: f64,
}

impl RadiusWeight {
    pub fn radius(&self) -> f64 {
        (self.norm_sq as f64).sqrt()
    }
}

/// Squared norms `0..=max` representable as sums of `dim` squares.
pub fn representable_norms(dim: usize, max: i64) -> Vec<bool> {
    let n = max.max(0) as usize + 1;
    let mut cur = vec![false; n];
    cur[0] = true;
    for _ in 0..dim {
        let mut next = vec![false; n];
        for k in 0..n {
            if !cur[k] {
                continue;
            }
            let mut a = 0usize;
            while k + a * a < n {
                next[k + a * a] = true;
                a += 1;
            }
        }
        cur = next;
    }
    cur
}

/// Radius atoms for any `m > 0`; zero-weight atoms are dropped.
pub fn radius_table(dim: usize, m: f64) -> Result<Vec<RadiusWeight>> {
    if !(m > 0.0) || !m.is_finite() {
        return Err(Error::InvalidParameter(format!("smoothing scale must be > 0, got {m}")));
    }
    let phi = SmoothingDensity::get();
    let k_first = norm_sq_bound(m);
    let k_last = norm_sq_bound(2.0 * m);
    let repr = representable_norms(dim, k_last);
    let first = (0..=k_first).rev().find(|&k| repr[k as usize]).unwrap_or(0);
    let mut breaks: Vec<(i64, f64)> = vec![(first, m)];
    for k in (k_first + 1)..=k_last {
        let t = (k as f64).sqrt();
        if repr[k as usize] && t < 2.0 * m {
            breaks.push((k, t));
        }
    }
    let mut out = Vec::with_capacity(breaks.len());
    for (i, &(k, t_lo)) in breaks.iter().enumerate() {
        let t_hi = breaks.get(i + 1).map(|b| b.1).unwrap_or(2.0 * m);
        let w = phi.cdf(t_hi / m) - phi.cdf(t_lo / m);
        if w > 0.0 {
            out.push(RadiusWeight {
                norm_sq: k,
                t_lo,
                t_hi,
                weight: w,
            });
        }
    }
    Ok(out)
}

/// Public radius table; requires `m >= 1`.
pub fn smoothing_weights(dim: usize, m: f64) -> Result<Vec<RadiusWeight>> {
    if !(m >= 1.0) {
        return Err(Error::InvalidParameter(format!("smoothing_weights requires m >= 1, got {m}")));
    }
    radius_table(dim, m)
}

/// `r(L) = max(r_min, L/(log L)^{a_r})`, `s(L) = max(s_min, L/(log L)^{a_s})`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScaleSchedule {
    Power {
        a_r: f64,
        a_s: f64,
        r_min: f64,
        s_min: f64,
    },
    Fixed {
        r: f64,
        s: f64,
    },
}

impl ScaleSchedule {
    /// Large-`L` exponents; `r(L)` is below 1 at any desk-size `L`.
    pub fn asymptotic() -> Self {
        ScaleSchedule::Power {
            a_r: 10.0,
            a_s: 3.0,
            r_min: 0.0,
            s_min: 0.0,
        }
    }

    pub fn toy() -> Self {
        ScaleSchedule::Power {
            a_r: 2.0,
            a_s: 1.0,
            r_min: 2.0,
            s_min: 4.0,
        }
    }

    pub fn fixed(r: f64, s: f64) -> Self {
        ScaleSchedule::Fixed { r, s }
    }

    pub fn r(&self, l: f64) -> f64 {
        match *self {
            ScaleSchedule::Power { a_r, r_min, .. } => r_min.max(l / l.ln().powf(a_r)),
            ScaleSchedule::Fixed { r, .. } => r,
        }
    }

    pub fn s(&self, l: f64) -> f64 {
        match *self {
            ScaleSchedule::Power { a_s, s_min, .. } => s_min.max(l / l.ln().powf(a_s)),
            ScaleSchedule::Fixed { s, .. } => s,
        }
    }

    /// Checks `r(L) <= s(L) <= L`.
    pub fn validate(&self, l: f64) -> Result<()> {
        let (r, s) = (self.r(l), self.s(l));
        if !(l > 1.0) || !(r <= s && s <= l) || !r.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "schedule violates r <= s <= L at L={l}: r={r}, s={s}"
            )));
        }
        Ok(())
    }
}

/// `γ = min(1/10, (1 - (2/3)^{1/(d-1)})/2)`.
pub fn gamma(dim: usize) -> f64 {
    assert!(dim >= 2, "gamma is defined for d >= 2");
    0.1f64.min(0.5 * (1.0 - (2.0f64 / 3.0).powf(1.0 / (dim as f64 - 1.0))))
}

/// Profile `h`: identity on `[0, 1/2]`, constant 1 on `[2, ∞)`, and on
/// `(1/2, 2)` the integral of `h'(u) = 1 - F((u - 1/2)/1.5)` with `F` the
/// Beta(2,4) distribution function, so `h` is C², increasing and concave.
pub fn h(u: f64) -> f64 {
    if u <= 0.5 {
        u
    } else if u >= 2.0 {
        1.0
    } else {
        let s = (u - 0.5) / 1.5;
        let q = 1.0 - s;
        0.5 + 1.5 * ((1.0 - q.powi(5)) - (2.0 / 3.0) * (1.0 - q.powi(6)))
    }
}

/// `h'(u)`.
pub fn h_prime(u: f64) -> f64 {
    if u <= 0.5 {
        1.0
    } else if u >= 2.0 {
        0.0
    } else {
        let s = (u - 0.5) / 1.5;
        let q = 1.0 - s;
        q.powi(5) + 5.0 * s * q.powi(4)
    }
}

/// `h_L(x) = γ s(L) h(d_L(x)/s(L))` with `d_L(x) = L - |x|` clamped at 0.
pub fn h_profile(l: f64, schedule: &ScaleSchedule, x: &LatticePoint) -> f64 {
    let s = schedule.s(l);
    let depth = (l - x.norm()).max(0.0);
    gamma(x.dim()) * s * h(depth / s)
}

/// Scheme variants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum SchemeSpec {
    /// Fixed exit set `V_{k0 r(L)}(x) ∩ W` when `d_L(x) <= r(L)`, else
    /// smoothing at scale `h_L(x)`.
    S1 { l: f64, k0: f64 },
    /// Smoothing at scale `h_L(x)` everywhere.
    S2 { l: f64 },
    /// Smoothing at constant scale `t`.
    ConstRadius { t: f64 },
    /// Smoothing at a per-site scale `m_x`.
    BoundaryField { field: Vec<(LatticePoint, f64)> },
}

/// What a scheme does at one site.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SiteRule {
    /// Exit from `V_radius(x) ∩ W`.
    Fixed { radius: f64 },
    /// Exit from `V_t(x) ∩ W` with `t ~ φ_m`.
    Smoothed { m: f64 },
}

#[derive(Clone, Debug)]
pub struct CoarseGrainScheme {
    dim: usize,
    spec: SchemeSpec,
    schedule: ScaleSchedule,
    field: FxHashMap<LatticePoint, f64>,
}

impl CoarseGrainScheme {
    pub fn new(dim: usize, spec: SchemeSpec, schedule: ScaleSchedule) -> Result<Self> {
        let mut field = FxHashMap::default();
        match &spec {
            SchemeSpec::S1 { l, k0 } => {
                schedule.validate(*l)?;
                if !(*k0 >= 1.0) {
                    return Err(Error::InvalidParameter(format!("k0 must be >= 1, got {k0}")));
                }
            }
            SchemeSpec::S2 { l } => schedule.validate(*l)?,
            SchemeSpec::ConstRadius { t } => {
                if !(*t >= 0.0) {
                    return Err(Error::InvalidParameter(format!("radius must be >= 0, got {t}")));
                }
            }
            SchemeSpec::BoundaryField { field: f } => {
                for (p, m) in f {
                    if p.dim() != dim {
                        return Err(Error::DimensionMismatch {
                            expected: dim,
                            found: p.dim(),
                        });
                    }
                    if !(*m > 0.0) {
                        return Err(Error::InvalidParameter(format!("field value {m} at {p}")));
                    }
                    field.insert(p.clone(), *m);
                }
            }
        }
        Ok(CoarseGrainScheme {
            dim,
            spec,
            schedule,
            field,
        })
    }

    pub fn s1(dim: usize, l: f64, k0: f64, schedule: ScaleSchedule) -> Result<Self> {
        Self::new(dim, SchemeSpec::S1 { l, k0 }, schedule)
    }

    pub fn s2(dim: usize, l: f64, schedule: ScaleSchedule) -> Result<Self> {
        Self::new(dim, SchemeSpec::S2 { l }, schedule)
    }

    pub fn constant(dim: usize, t: f64) -> Result<Self> {
        Self::new(dim, SchemeSpec::ConstRadius { t }, ScaleSchedule::toy())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spec(&self) -> &SchemeSpec {
        &self.spec
    }

    pub fn schedule(&self) -> &ScaleSchedule {
        &self.schedule
    }

    /// Rule depends on `x` only through `|x|` (isometry-equivariant).
    pub fn is_radial(&self) -> bool {
        !matches!(self.spec, SchemeSpec::BoundaryField { .. })
    }

    pub fn rule(&self, x: &LatticePoint) -> Result<SiteRule> {
        match &self.spec {
            SchemeSpec::S1 { l, k0 } => {
                let r = self.schedule.r(*l);
                if l - x.norm() <= r {
                    Ok(SiteRule::Fixed { radius: k0 * r })
                } else {
                    Ok(SiteRule::Smoothed {
                        m: h_profile(*l, &self.schedule, x),
                    })
                }
            }
            SchemeSpec::S2 { l } => Ok(SiteRule::Smoothed {
                m: h_profile(*l, &self.schedule, x),
            }),
            SchemeSpec::ConstRadius { t } => Ok(SiteRule::Smoothed { m: *t }),
            SchemeSpec::BoundaryField { .. } => self
                .field
                .get(x)
                .map(|&m| SiteRule::Smoothed { m })
                .ok_or_else(|| Error::KernelUndefined(x.clone())),
        }
    }

    /// Range `ρ(x)`: `k0 r(L)` on the boundary shell for S1, else `2 m_x`.
    pub fn range(&self, x: &LatticePoint) -> Result<f64> {
        Ok(match self.rule(x)? {
            SiteRule::Fixed { radius } => radius,
            SiteRule::Smoothed { m } => 2.0 * m,
        })
    }

    /// Distribution over exit balls `{|y - x|^2 <= k}` as `(k, weight)`.
    pub fn exit_balls(&self, x: &LatticePoint) -> Result<Vec<(i64, f64)>> {
        Ok(match self.rule(x)? {
            SiteRule::Fixed { radius } => vec![(norm_sq_bound(radius), 1.0)],
            SiteRule::Smoothed { m } if m <= 0.0 => vec![(0, 1.0)],
            SiteRule::Smoothed { m } => radius_table(self.dim, m)?
                .into_iter()
                .map(|a| (a.norm_sq, a.weight))
                .collect(),
        })
    }
}

/// `ex_U(x, ·; base)` with `U = {|y - x|^2 <= k} ∩ W`.
fn exit_from_set<K: Kernel + ?Sized>(
    base: &K,
    w: &Domain,
    x: &LatticePoint,
    k: i64,
    opts: SolverOptions,
) -> Result<Measure> {
    let full = ball_points(x, k);
    let n_full = full.len();
    let pts: Vec<LatticePoint> = full.into_iter().filter(|p| w.contains(p)).collect();
    if base.is_simple_random_walk() && pts.len() == n_full {
        return center_exit(base.dim(), k)?.measure().map(|m| m.translate(x));
    }
    let u = Domain::from_points(base.dim(), pts)?;
    Ok(DomainSystem::assemble(base, &u, opts)?.exit_row(x)?.measure)
}

/// Row `p^CG(x, ·) = Σ_U s_x(U) ex_U(x, ·; base)`.
pub fn cg_row<K: Kernel + ?Sized>(
    scheme: &CoarseGrainScheme,
    w: &Domain,
    base: &K,
    x: &LatticePoint,
    opts: SolverOptions,
) -> Result<Row> {
    let balls = scheme.exit_balls(x)?;
    // Consecutive radii can give the same set after intersecting with W.
    let mut merged: Vec<(i64, f64, usize)> = Vec::new();
    for (k, wt) in balls {
        let count = ball_points(x, k).iter().filter(|p| w.contains(p)).count();
        match merged.last_mut() {
            Some(last) if last.2 == count => last.1 += wt,
            _ => merged.push((k, wt, count)),
        }
    }
    let mut acc: FxHashMap<LatticePoint, f64> = FxHashMap::default();
    for (k, wt, _) in merged {
        let ex = exit_from_set(base, w, x, k, opts)?;
        for (z, p) in ex.entries() {
            *acc.entry(z.clone()).or_insert(0.0) += wt * p;
        }
    }
    let mut row: Row = acc.into_iter().collect();
    row.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(row)
}

fn is_invariant(w: &Domain) -> Result<bool> {
    let group = isometry_group(w.dim())?;
    let gens = group.generators();
    Ok(w.points().iter().all(|p| gens.iter().all(|g| w.contains(&g.apply(p)))))
}

/// Coarse-grained kernel on `W`. When the base walk is the simple random
/// walk and both `W` and the scheme are isometry-invariant, rows are solved
/// once per orbit and transported.
pub fn cg_kernel<K: Kernel + ?Sized>(
    scheme: &CoarseGrainScheme,
    w: &Domain,
    base: &K,
    opts: SolverOptions,
) -> Result<SparseKernel> {
    if w.dim() != scheme.dim() || base.dim() != scheme.dim() {
        return Err(Error::DimensionMismatch {
            expected: scheme.dim(),
            found: w.dim(),
        });
    }
    let symmetric = base.is_simple_random_walk() && scheme.is_radial() && w.dim() <= 6 && is_invariant(w)?;
    let mut out = SparseKernel::new(scheme.dim());
    if symmetric {
        let mut reps: Vec<LatticePoint> = w.points().iter().map(|p| p.canonical()).collect();
        reps.sort();
        reps.dedup();
        let rows: Vec<Row> = reps
            .par_iter()
            .map(|c| cg_row(scheme, w, base, c, opts))
            .collect::<Result<_>>()?;
        let table: FxHashMap<&LatticePoint, &Row> = reps.iter().zip(rows.iter()).collect();
        for x in w.points() {
            let (c, f) = Isometry::canonicalizing(x);
            let row = table[&c].iter().map(|(y, p)| (f.apply(y), *p)).collect();
            out.insert_row(x.clone(), row);
        }
    } else {
        let rows: Vec<Row> = w
            .points()
            .par_iter()
            .map(|x| cg_row(scheme, w, base, x, opts))
            .collect::<Result<_>>()?;
        for (x, r) in w.points().iter().zip(rows) {
            out.insert_row(x.clone(), r);
        }
    }
    Ok(out)
}

/// `π̂_Ψ` rows on the sites of a field (`W = Z^d`).
pub fn pi_hat_field<K: Kernel + ?Sized>(
    field: &[(LatticePoint, f64)],
    base: &K,
    opts: SolverOptions,
) -> Result<SparseKernel> {
    let dim = base.dim();
    let rows: Vec<Row> = field
        .par_iter()
        .map(|(x, m)| {
            if !(*m >= 1.0) {
                return Err(Error::InvalidParameter(format!("field value {m} < 1 at {x}")));
            }
            if base.is_simple_random_walk() {
                let row = pi_hat_center(dim, *m)?;
                return Ok(row.measure().translate(x).into_entries());
            }
            let mut acc: FxHashMap<LatticePoint, f64> = FxHashMap::default();
            for a in radius_table(dim, *m)? {
                let b = ball(x, a.radius())?;
                let ex = DomainSystem::assemble(base, b.domain(), opts)?.exit_row(x)?;
                for (z, p) in ex.measure.entries() {
                    *acc.entry(z.clone()).or_insert(0.0) += a.weight * p;
                }
            }
            Ok(acc.into_iter().collect())
        })
        .collect::<Result<_>>()?;
    let mut out = SparseKernel::new(dim);
    for ((x, _), r) in field.iter().zip(rows) {
        out.insert_row(x.clone(), r);
    }
    Ok(out)
}

/// `α(m) = Σ_x x_1^2 π̂_m(0, x)` for the simple random walk.
pub fn alpha(dim: usize, m: f64) -> Result<f64> {
    let row = pi_hat_center(dim, m)?;
    Ok(row
        .reps
        .iter()
        .map(|(c, v)| {
            let s: i64 = c.coords().iter().map(|&a| (a as i64) * (a as i64)).sum();
            // Σ over the orbit of x_1^2 equals |orbit| |c|^2 / d
            c.orbit_size() as f64 * s as f64 / dim as f64 * v
        })
        .sum())
}

/// Margins of the two `k0` conditions at one sampled site.
#[derive(Clone, Debug, Serialize)]
pub struct K0SiteMargin {
    pub x: LatticePoint,
    pub depth: f64,
    /// `P_x(τ_{V_L} < τ_{V_{k0 r}(x)})`.
    pub leave_first: f64,
    /// `π_{V_{k0 r}(x)}(x, V_L)`.
    pub mass_inside: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct K0Sweep {
    pub k0: u32,
    pub min_leave_first: f64,
    pub max_mass_inside: f64,
    pub slack_leave_first: f64,
    pub slack_mass_inside: f64,
    pub sites: Vec<K0SiteMargin>,
}

impl K0Sweep {
    pub fn satisfied(&self) -> bool {
        self.slack_leave_first >= 0.0 && self.slack_mass_inside >= 0.0
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct K0Calibration {
    pub l: f64,
    pub r: f64,
    /// Smallest `k0` meeting both margins, or the best found.
    pub k0: u32,
    pub found: bool,
    pub sweep: Vec<K0Sweep>,
}

/// Orbit representatives of `Sh_L = {x ∈ V_L : d_L(x) <= r(L)}`, thinned to
/// at most `samples` points spread over depth (shallowest and deepest kept).
pub fn shell_samples(dim: usize, l: f64, r: f64, samples: usize) -> Vec<LatticePoint> {
    let mut reps: Vec<LatticePoint> = crate::srw::orbit_reps(dim, norm_sq_bound(l))
        .into_iter()
        .filter(|c| l - c.norm() <= r)
        .collect();
    reps.sort_by(|a, b| (l - a.norm()).total_cmp(&(l - b.norm())).then(a.cmp(b)));
    if reps.len() <= samples || samples < 2 {
        return reps;
    }
    let n = reps.len();
    let mut idx: Vec<usize> = (0..samples).map(|i| i * (n - 1) / (samples - 1)).collect();
    idx.dedup();
    idx.into_iter().map(|i| reps[i].clone()).collect()
}

/// Smallest `k0 >= 2` with `P_x(τ_L < τ_U) >= 9/10` and `π_U(x, V_L) <= 17/32`
/// for all sampled `x ∈ Sh_L`, `U = V_{k0 r(L)}(x)`, simple random walk.
pub fn calibrate_k0(
    dim: usize,
    l: f64,
    schedule: &ScaleSchedule,
    k_max: u32,
    samples: usize,
    opts: SolverOptions,
) -> Result<K0Calibration> {
    let r = schedule.r(l);
    if !(r >= 1.0) {
        return Err(Error::InvalidParameter(format!("calibrate_k0 needs r(L) >= 1, got {r}")));
    }
    let xs = shell_samples(dim, l, r, samples);
    let big = norm_sq_bound(l);
    let srw = crate::kernel::SimpleRandomWalk::new(dim);
    let mut sweep = Vec::new();
    for k0 in 2..=k_max.max(2) {
        let radius = k0 as f64 * r;
        let sites: Vec<K0SiteMargin> = xs
            .par_iter()
            .map(|x| {
                let ku = norm_sq_bound(radius);
                // exit from U
                let exit_u = center_exit(dim, ku)?.measure()?.translate(x);
                let mass_inside = exit_u.mass_on(|z| z.norm_sq() <= big);
                // exit from U ∩ V_L: leaving V_L first means landing in U \ V_L
                let pts: Vec<LatticePoint> =
                    ball_points(x, ku).into_iter().filter(|p| p.norm_sq() <= big).collect();
                let dom = Domain::from_points(dim, pts)?;
                let ex = DomainSystem::assemble(&srw, &dom, opts)?.exit_row(x)?;
                let leave_first = ex.measure.mass_on(|z| z.norm_sq() > big && z.dist_sq(x) <= ku);
                Ok(K0SiteMargin {
                    x: x.clone(),
                    depth: l - x.norm(),
                    leave_first,
                    mass_inside,
                })
            })
            .collect::<Result<_>>()?;
        let min_leave = sites.iter().map(|s| s.leave_first).fold(f64::INFINITY, f64::min);
        let max_inside = sites.iter().map(|s| s.mass_inside).fold(0.0, f64::max);
        sweep.push(K0Sweep {
            k0,
            min_leave_first: min_leave,
            max_mass_inside: max_inside,
            slack_leave_first: min_leave - 0.9,
            slack_mass_inside: 17.0 / 32.0 - max_inside,
            sites,
        });
        if sweep.last().unwrap().satisfied() {
            break;
        }
    }
    let found_at = sweep.iter().find(|s| s.satisfied()).map(|s| s.k0);
    let best = found_at.unwrap_or_else(|| {
        sweep
            .iter()
            .max_by(|a, b| {
                a.slack_leave_first
                    .min(a.slack_mass_inside)
                    .total_cmp(&b.slack_leave_first.min(b.slack_mass_inside))
            })
            .map(|s| s.k0)
            .unwrap_or(2)
    });
    Ok(K0Calibration {
        l,
        r,
        k0: best,
        found: found_at.is_some(),
        sweep,
    })
}

/// Green function value `g_{V_R}(0,0)` of the simple random walk.
pub fn srw_center_green(dim: usize, radius: f64) -> Result<f64> {
    let sol = solve_center(dim, norm_sq_bound(radius), None, 1e-13)?;
    Ok(sol.green[0].1)
}
