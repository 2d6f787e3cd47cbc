//! Perturbation kernels `Δ = 1_V(p - q)`, the finite resolvent identity,
//! the `ζ^(k)` expansion of `Π_L - π_L`, bad-set classification and
//! goodification.

use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::Serialize;

use crate::coarse_grain::{h_profile, representable_norms, CoarseGrainScheme, ScaleSchedule, SiteRule};
use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::exit_solver::{DomainSystem, SolverOptions};
use crate::kernel::{Kernel, Measure, Row, SparseKernel};
use crate::lattice::{ball_points, norm_sq_bound, Domain, LatticePoint};
use crate::multiscale_stats::{exit_pair, smooth, thresholds};

/// Sparse signed kernel; rows not stored are zero.
#[derive(Clone, Debug, Default)]
pub struct SignedKernel {
    dim: usize,
    rows: FxHashMap<LatticePoint, Row>,
    norms: FxHashMap<LatticePoint, f64>,
}

impl SignedKernel {
    pub fn new(dim: usize) -> Self {
        SignedKernel {
            dim,
            ..Default::default()
        }
    }

    /// Drops exact zeros and sums duplicates.
    pub fn insert_row(&mut self, x: LatticePoint, row: Row) {
        let row = Measure::from_entries(row).into_entries();
        let norm = row.iter().map(|(_, v)| v.abs()).sum();
        self.norms.insert(x.clone(), norm);
        self.rows.insert(x, row);
    }

    pub fn get(&self, x: &LatticePoint) -> Option<&Row> {
        self.rows.get(x)
    }

    /// `‖K(x, ·)‖₁`.
    pub fn row_norm(&self, x: &LatticePoint) -> f64 {
        self.norms.get(x).copied().unwrap_or(0.0)
    }

    /// `max_x ‖K(x, ·)‖₁`.
    pub fn norm(&self) -> f64 {
        self.norms.values().copied().fold(0.0, f64::max)
    }

    pub fn sites(&self) -> Vec<LatticePoint> {
        let mut s: Vec<LatticePoint> = self.rows.keys().cloned().collect();
        s.sort();
        s
    }

    pub fn max_row_sum(&self) -> f64 {
        self.rows
            .values()
            .map(|r| r.iter().map(|(_, v)| v).sum::<f64>().abs())
            .fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.rows.values().all(|r| r.is_empty())
    }
}

impl Kernel for SignedKernel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn row(&self, x: &LatticePoint) -> Result<Row> {
        Ok(self.rows.get(x).cloned().unwrap_or_default())
    }
}

/// `Δ = 1_V(a - b)`.
pub fn delta<A: Kernel + ?Sized, B: Kernel + ?Sized>(a: &A, b: &B, v: &Domain) -> Result<SignedKernel> {
    if a.dim() != b.dim() || v.dim() != a.dim() {
        return Err(Error::IndexMismatch(format!(
            "kernels of dimension {} and {} on a domain of dimension {}",
            a.dim(),
            b.dim(),
            v.dim()
        )));
    }
    let rows: Vec<Row> = v
        .points()
        .par_iter()
        .map(|x| {
            let undefined = |e: Error| match e {
                Error::KernelUndefined(p) => Error::IndexMismatch(format!("row at {p} missing")),
                e => e,
            };
            let ra = a.row(x).map_err(undefined)?;
            let rb = b.row(x).map_err(undefined)?;
            Ok(Measure::from_entries(ra).sub(&Measure::from_entries(rb)).into_entries())
        })
        .collect::<Result<_>>()?;
    let mut out = SignedKernel::new(a.dim());
    for (x, r) in v.points().iter().zip(rows) {
        out.insert_row(x.clone(), r);
    }
    Ok(out)
}

/// `‖F‖₁ = max_x Σ_y |F(x, y)|` over the given rows.
pub fn operator_norm<K: Kernel + ?Sized>(k: &K, sites: &[LatticePoint]) -> Result<f64> {
    let mut best = 0.0f64;
    for x in sites {
        best = best.max(k.row(x)?.iter().map(|(_, v)| v.abs()).sum());
    }
    Ok(best)
}

/// `(FG)(x, ·)` for `x` in `sites`.
pub fn compose<F: Kernel + ?Sized, G: Kernel + ?Sized>(f: &F, g: &G, sites: &[LatticePoint]) -> Result<SignedKernel> {
    let mut out = SignedKernel::new(f.dim());
    for x in sites {
        let row = Measure::from_entries(f.row(x)?).apply(g)?;
        out.insert_row(x.clone(), row.into_entries());
    }
    Ok(out)
}

/// `‖(g_V(q) Δ)‖₁`, one Green row per site of `V`.
pub fn green_delta_norm(gq: &DomainSystem, d: &SignedKernel) -> Result<f64> {
    let norms: Vec<f64> = gq
        .domain()
        .points()
        .par_iter()
        .map(|x| Ok(gq.left_green_full(&Measure::dirac(x.clone()))?.apply(d)?.l1()))
        .collect::<Result<_>>()?;
    Ok(norms.into_iter().fold(0.0, f64::max))
}

#[derive(Clone, Debug, Serialize)]
pub struct ResolventRow {
    pub x: LatticePoint,
    /// Entrywise max of `g(p) - g(q) - Σ_{k<n} [g(q)Δ]^k g(q) - [g(q)Δ]^n g(p)`.
    pub residual: f64,
    /// `‖([g(q)Δ]^k g(q))(x, ·)‖₁` for `k = 1..n-1`.
    pub term_norms: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ResolventReport {
    pub n: usize,
    pub rows: Vec<ResolventRow>,
    pub max_residual: f64,
    /// `‖g_V(q) Δ‖₁`.
    pub gq_delta_norm: f64,
    /// Set when `‖g_V(q) Δ‖₁ >= 1`; the finite identity still holds.
    pub divergent: bool,
}

impl ResolventReport {
    /// Ratios of consecutive term norms, per row.
    pub fn term_ratios(&self) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|r| r.term_norms.windows(2).map(|w| w[1] / w[0]).collect())
            .collect()
    }
}

/// Checks `g(p) - g(q) = Σ_{k=1}^{n-1} [g(q)Δ]^k g(q) + [g(q)Δ]^n g(p)`
/// on the rows started at `rows`.
pub fn resolvent_check<P: Kernel + ?Sized, Q: Kernel + ?Sized>(
    p: &P,
    q: &Q,
    v: &Domain,
    n: usize,
    rows: &[LatticePoint],
    opts: SolverOptions,
) -> Result<ResolventReport> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be >= 1".into()));
    }
    let gp = DomainSystem::assemble(p, v, opts)?;
    let gq = DomainSystem::assemble(q, v, opts)?;
    let d = delta(p, q, v)?;
    let mut out = Vec::with_capacity(rows.len());
    for x in rows {
        let dirac = Measure::dirac(x.clone());
        let gp_row = gp.left_green_full(&dirac)?;
        let gq_row = gq.left_green_full(&dirac)?;
        let mut rhs = Measure::new();
        let mut term_norms = Vec::new();
        // μ_k = [g(q)Δ]^k g(q)(x, ·)
        let mut mu = gq_row.clone();
        for _ in 1..n {
            mu = gq.left_green_full(&mu.apply(&d)?)?;
            term_norms.push(mu.l1());
            rhs = rhs.add(&mu);
        }
        // ν = δ_x [g(q)Δ]^n
        let mut nu = dirac;
        for _ in 0..n {
            nu = gq.left_green_full(&nu)?.apply(&d)?;
        }
        rhs = rhs.add(&gp.left_green_full(&nu)?);
        let residual = gp_row.sub(&gq_row).sub(&rhs).max_abs();
        out.push(ResolventRow {
            x: x.clone(),
            residual,
            term_norms,
        });
    }
    let gq_delta_norm = green_delta_norm(&gq, &d)?;
    Ok(ResolventReport {
        n,
        max_residual: out.iter().map(|r| r.residual).fold(0.0, f64::max),
        rows: out,
        gq_delta_norm,
        divergent: gq_delta_norm >= 1.0,
    })
}

/// Operators of the expansion of `Π_L - π_L` on `V_L`.
pub struct ExpansionSetup<'a> {
    /// `π̂` on `V_L` (Green function `ĝ`).
    pub ghat: &'a DomainSystem,
    /// `Δ = 1_{V_L}(Π̂ - π̂)`.
    pub delta: &'a SignedKernel,
    /// `π̂` rows.
    pub pi_hat: &'a dyn Kernel,
    /// Simple random walk on `V_L` (exit law `π_L`).
    pub pi_l: &'a DomainSystem,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExpansionReport {
    pub start: LatticePoint,
    /// `‖S_m‖₁` where `S_m` collects all terms with `m` factors.
    pub level_norms: Vec<f64>,
    /// `‖(ĝ Δ^k π_L)(x, ·)‖₁`, the one-factor terms.
    pub k_norms: Vec<f64>,
    /// Estimated `ℓ¹` mass of the truncated terms (geometric extrapolation
    /// of the last measured ratios; infinite when they do not decay).
    pub tail_bound: f64,
    /// Bound on the accumulated linear-solver error: each solve adds
    /// `tol · κ · ‖output‖₁`, with `κ = ‖output‖₁/‖input‖₁` the observed
    /// Green-mass amplification.
    pub numerical_floor: f64,
    /// True when `tail_bound + numerical_floor` exceeds the requested tolerance.
    pub flagged: bool,
    #[serde(skip)]
    pub partial: Measure,
}

fn geometric_tail(norms: &[f64]) -> f64 {
    match norms {
        [] => 0.0,
        [.., a, b] if *a > 0.0 => {
            let q = b / a;
            if *b == 0.0 {
                0.0
            } else if q < 1.0 {
                b * q / (1.0 - q)
            } else {
                f64::INFINITY
            }
        }
        [.., b] if *b == 0.0 => 0.0,
        _ => f64::INFINITY,
    }
}

/// `μ g` on all of Z^d, adding the solver error bound of this solve to `floor`.
fn solve_tracked(sys: &DomainSystem, mu: &Measure, floor: &mut f64) -> Result<Measure> {
    let out = sys.left_green_full(mu)?;
    let inm = mu.l1();
    if inm > 0.0 {
        let o = out.l1();
        *floor += sys.options().tol.max(f64::EPSILON) * o * o / inm;
    }
    Ok(out)
}

/// Exit law `μ π_V` via the full Green measure, so the occupation mass is
/// available for the error bound.
fn exit_tracked(sys: &DomainSystem, mu: &Measure, floor: &mut f64) -> Result<Measure> {
    let full = solve_tracked(sys, mu, floor)?;
    let dom = sys.domain();
    Ok(full.restrict(|p| !dom.contains(p)))
}

/// `R_L(x, ·) = ĝ Σ_m Σ_{k_i} ζ^(k_1) ⋯ ζ^(k_{m-1}) Δ^{k_m} π_L (x, ·)` with
/// `ζ^(k) = Δ^k π̂ ĝ`, truncated at `m <= max_m`, `k_i <= max_k`.
pub fn expansion_terms(
    setup: &ExpansionSetup,
    x: &LatticePoint,
    max_m: usize,
    max_k: usize,
    tol: f64,
) -> Result<ExpansionReport> {
    if max_m == 0 || max_k == 0 {
        return Err(Error::InvalidParameter("max_m and max_k must be >= 1".into()));
    }
    let mut floor = 0.0;
    let mut nu = solve_tracked(setup.ghat, &Measure::dirac(x.clone()), &mut floor)?;
    let mut partial = Measure::new();
    let mut level_norms = Vec::new();
    let mut k_norms = Vec::new();
    let mut tail = 0.0;
    for m in 1..=max_m {
        // A ν = Σ_{k <= max_k} ν Δ^k
        let mut power = nu.clone();
        let mut a = Measure::new();
        let mut powers = Vec::new();
        for _ in 0..max_k {
            power = power.apply(setup.delta)?;
            if power.is_empty() {
                break;
            }
            a = a.add(&power);
            powers.push(power.l1());
            if m == 1 {
                k_norms.push(exit_tracked(setup.pi_l, &power, &mut floor)?.l1());
            }
            // stop early once the next powers are negligible
            if power.l1() < 1e-15 {
                break;
            }
        }
        let k_tail = geometric_tail(&powers);
        tail += if powers.len() < max_k && powers.last().map(|p| *p < 1e-15).unwrap_or(true) {
            0.0
        } else {
            k_tail
        };
        let s = exit_tracked(setup.pi_l, &a, &mut floor)?;
        level_norms.push(s.l1());
        partial = partial.add(&s);
        if a.is_empty() {
            break;
        }
        // ĝ = I + 1_V π̂ ĝ, so mass outside V_L does not step again
        let dom = setup.ghat.domain();
        nu = solve_tracked(setup.ghat, &a.restrict(|p| dom.contains(p)).apply(setup.pi_hat)?, &mut floor)?;
        if m == max_m {
            tail += geometric_tail(&level_norms);
        }
    }
    Ok(ExpansionReport {
        start: x.clone(),
        level_norms,
        k_norms,
        flagged: !(tail + floor <= tol),
        tail_bound: tail,
        numerical_floor: floor,
        partial,
    })
}

/// Per-site record of the statistics used by the bad-set classification.
#[derive(Clone, Debug, Serialize)]
pub struct SiteStat {
    pub x: LatticePoint,
    pub in_shell: bool,
    /// `max_r D_{r, h_L}(x)` (absent on the boundary shell).
    pub d_smoothed_max: Option<f64>,
    /// `max_r D_{r,0}(x)`, or `D_{k0 r(L), 0}(x)` on the shell.
    pub d_plain_max: f64,
    pub level: Option<u8>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BadSetReport {
    pub l: f64,
    pub delta: f64,
    pub k0: f64,
    pub threshold_scale: f64,
    /// `scale · (log L)^{-9 + 9i/4}`, `i = 0..3`.
    pub thresholds: [f64; 4],
    /// `B_L^(1..4)`.
    pub levels: [Vec<LatticePoint>; 4],
    pub good: bool,
    pub two_bad: bool,
    pub two_bad_witness: Option<(LatticePoint, LatticePoint)>,
    pub sites: Vec<SiteStat>,
}

impl BadSetReport {
    pub fn bad_sites(&self) -> Vec<LatticePoint> {
        let mut all: Vec<LatticePoint> = self.levels.iter().flatten().cloned().collect();
        all.sort();
        all
    }

    pub fn is_bad(&self, x: &LatticePoint) -> bool {
        self.levels.iter().any(|l| l.binary_search(x).is_ok())
    }
}

/// Parameters of the bad-set scan.
#[derive(Clone, Debug)]
pub struct BadScanParams {
    pub l: f64,
    pub delta: f64,
    pub k0: f64,
    pub schedule: ScaleSchedule,
    pub threshold_scale: f64,
}

impl BadScanParams {
    pub fn scheme(&self, dim: usize) -> Result<CoarseGrainScheme> {
        CoarseGrainScheme::s1(dim, self.l, self.k0, self.schedule.clone())
    }
}

/// Squared radii of the balls probed at a site off the shell: the ball
/// `V_h` and every ball whose boundary changes for `r ∈ (h, 2h]`.
pub fn probe_radii(dim: usize, h: f64) -> Vec<i64> {
    let lo = norm_sq_bound(h);
    let hi = norm_sq_bound(2.0 * h);
    let repr = representable_norms(dim, hi);
    let first = (0..=lo).rev().find(|&k| repr[k as usize]).unwrap_or(0);
    let mut out = vec![first];
    out.extend(((lo + 1)..=hi).filter(|&k| repr[k as usize]));
    out
}

/// Sites whose environment can influence the classification of `x` and
/// its coarse-grained row: the closed ball of radius `ρ(x)`.
pub fn site_dependencies(scheme: &CoarseGrainScheme, x: &LatticePoint) -> Result<Domain> {
    let rho = scheme.range(x)?;
    Domain::from_points(x.dim(), ball_points(x, norm_sq_bound(rho)))
}

/// Statistics and level of one site.
pub fn classify_site(
    env: &Environment,
    params: &BadScanParams,
    scheme: &CoarseGrainScheme,
    x: &LatticePoint,
    opts: SolverOptions,
) -> Result<SiteStat> {
    let dim = x.dim();
    let t = thresholds(params.l, params.threshold_scale);
    match scheme.rule(x)? {
        SiteRule::Fixed { radius } => {
            let d0 = exit_pair(env, x, norm_sq_bound(radius), opts)?.difference().l1();
            Ok(SiteStat {
                x: x.clone(),
                in_shell: true,
                d_smoothed_max: None,
                d_plain_max: d0,
                level: (d0 >= params.delta).then_some(4),
            })
        }
        SiteRule::Smoothed { m: h } => {
            let mut ds = 0.0f64;
            let mut d0 = 0.0f64;
            for k in probe_radii(dim, h) {
                let diff = exit_pair(env, x, k, opts)?.difference();
                d0 = d0.max(diff.l1());
                let sm = smooth(&diff, dim, |w| Ok(h_profile(params.l, &params.schedule, w)))?;
                ds = ds.max(sm.l1());
            }
            let level = if ds > t[3] || d0 > params.delta {
                Some(4)
            } else if ds > t[2] {
                Some(3)
            } else if ds > t[1] {
                Some(2)
            } else if ds > t[0] {
                Some(1)
            } else {
                None
            };
            Ok(SiteStat {
                x: x.clone(),
                in_shell: false,
                d_smoothed_max: Some(ds),
                d_plain_max: d0,
                level,
            })
        }
    }
}

/// Classifies every site of `V_L` into `B_L^(1..4)` and scans for two bad
/// points farther apart than the sum of their ranges.
pub fn classify_bad(env: &Environment, params: &BadScanParams, opts: SolverOptions) -> Result<BadSetReport> {
    if !(params.delta > 0.0 && params.delta <= 1.0) {
        return Err(Error::InvalidParameter(format!("delta must lie in (0, 1], got {}", params.delta)));
    }
    let dim = env.law().dim;
    let scheme = params.scheme(dim)?;
    let sites = ball_points(&LatticePoint::origin(dim), norm_sq_bound(params.l));
    let stats: Vec<SiteStat> = sites
        .par_iter()
        .map(|x| classify_site(env, params, &scheme, x, opts))
        .collect::<Result<_>>()?;
    let mut levels: [Vec<LatticePoint>; 4] = Default::default();
    for s in &stats {
        if let Some(i) = s.level {
            levels[i as usize - 1].push(s.x.clone());
        }
    }
    for l in levels.iter_mut() {
        l.sort();
    }
    let bad: Vec<LatticePoint> = {
        let mut b: Vec<LatticePoint> = levels.iter().flatten().cloned().collect();
        b.sort();
        b
    };
    let ranges: Vec<f64> = bad.iter().map(|x| scheme.range(x)).collect::<Result<_>>()?;
    let mut witness = None;
    'outer: for i in 0..bad.len() {
        for j in (i + 1)..bad.len() {
            if bad[i].dist(&bad[j]) > ranges[i] + ranges[j] {
                witness = Some((bad[i].clone(), bad[j].clone()));
                break 'outer;
            }
        }
    }
    Ok(BadSetReport {
        l: params.l,
        delta: params.delta,
        k0: params.k0,
        threshold_scale: params.threshold_scale,
        thresholds: thresholds(params.l, params.threshold_scale),
        good: bad.is_empty(),
        two_bad: witness.is_some(),
        two_bad_witness: witness,
        levels,
        sites: stats,
    })
}

/// `gd(Π̂)`: rows on `B_L` replaced by `π̂`.
pub fn goodify<R: Kernel + ?Sized>(big: &SparseKernel, bad: &BadSetReport, pi_hat: &R) -> Result<SparseKernel> {
    let mut out = big.clone();
    for x in bad.bad_sites() {
        if big.get(&x).is_some() {
            out.insert_row(x.clone(), pi_hat.row(&x)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::EnvironmentLaw;
    use crate::kernel::SimpleRandomWalk;
    use crate::lattice::ball;

    fn env(eps: f64, radius: f64, seed: u64) -> Environment {
        let law = EnvironmentLaw::isotropic(3, eps).unwrap();
        let region = ball(&LatticePoint::origin(3), radius).unwrap();
        law.sample_environment(region.domain(), seed).unwrap()
    }

    #[test]
    fn delta_of_equal_kernels_is_zero() {
        let k = SimpleRandomWalk::new(3);
        let v = ball(&LatticePoint::origin(3), 3.0).unwrap();
        let d = delta(&k, &k, v.domain()).unwrap();
        assert!(d.is_zero());
        assert_eq!(d.norm(), 0.0);
    }

    #[test]
    fn delta_rows_have_zero_sum_and_norm_at_most_two() {
        let e = env(0.1, 5.0, 3);
        let v = ball(&LatticePoint::origin(3), 4.0).unwrap();
        let d = delta(&e, &SimpleRandomWalk::new(3), v.domain()).unwrap();
        assert!(d.max_row_sum() < 1e-12);
        assert!(d.norm() <= 2.0);
        assert!(d.row(&LatticePoint::new(&[9, 0, 0])).unwrap().is_empty());
    }

    #[test]
    fn resolvent_identity_small_ball() {
        let e = env(0.05, 5.0, 11);
        let v = ball(&LatticePoint::origin(3), 3.0).unwrap();
        let rows = [LatticePoint::origin(3), LatticePoint::new(&[1, 1, 0])];
        let rep = resolvent_check(&e, &SimpleRandomWalk::new(3), v.domain(), 4, &rows, SolverOptions::default())
            .unwrap();
        assert!(rep.max_residual < 1e-10, "{}", rep.max_residual);
        assert_eq!(rep.rows[0].term_norms.len(), 3);
    }

    #[test]
    fn resolvent_with_equal_kernels() {
        let k = SimpleRandomWalk::new(3);
        let v = ball(&LatticePoint::origin(3), 2.0).unwrap();
        let rep = resolvent_check(&k, &k, v.domain(), 3, &[LatticePoint::origin(3)], SolverOptions::default())
            .unwrap();
        assert_eq!(rep.max_residual, 0.0);
        assert_eq!(rep.gq_delta_norm, 0.0);
        assert!(!rep.divergent);
    }

    #[test]
    fn composition_is_submultiplicative() {
        let e = env(0.1, 6.0, 5);
        let v = ball(&LatticePoint::origin(3), 4.0).unwrap();
        let d = delta(&e, &SimpleRandomWalk::new(3), v.domain()).unwrap();
        let sites = v.domain().points().to_vec();
        let dd = compose(&d, &d, &sites).unwrap();
        assert!(operator_norm(&dd, &sites).unwrap() <= d.norm() * d.norm() + 1e-15);
    }

    #[test]
    fn probe_radii_cover_interval() {
        let r = probe_radii(3, 1.5);
        // V_1.5 = {|y|^2 <= 2}; boundaries change at 3, 4, 5, 6, 8, 9
        assert_eq!(r, vec![2, 3, 4, 5, 6, 8, 9]);
    }

    #[test]
    fn two_bad_needs_distant_pair() {
        let e = env(0.0, 12.0, 1);
        let params = BadScanParams {
            l: 6.0,
            delta: 0.5,
            k0: 2.0,
            schedule: ScaleSchedule::toy(),
            threshold_scale: 1.0,
        };
        let rep = classify_bad(&e, &params, SolverOptions::default()).unwrap();
        assert!(rep.good);
        assert!(!rep.two_bad);
    }
}
