//! Finite-scale checks of the classical exit estimates for the simple random
//! walk in a ball: boundary density of `π_L(0, ·)`, the annulus escape
//! probability and the hitting bound for small balls.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::environment::{counter_rng, derive_seed};
use crate::error::{Error, Result};
use crate::exit_solver::{DomainSystem, SolverOptions};
use crate::kernel::SimpleRandomWalk;
use crate::lattice::{ball_in_dim, norm_sq_bound, LatticePoint};
use crate::srw::center_exit;

/// Range of `π_L(0, z) L^{d-1}` over the exit support.
#[derive(Clone, Debug, Serialize)]
pub struct ExitDensityRange {
    pub l: f64,
    pub min_scaled: f64,
    pub max_scaled: f64,
}

impl ExitDensityRange {
    /// Smallest `C` with `C^{-1} ≤ π_L(0, z) L^{d-1} ≤ C`.
    pub fn constant(&self) -> f64 {
        self.max_scaled.max(1.0 / self.min_scaled)
    }

    pub fn within(&self, c: f64) -> bool {
        self.max_scaled <= c && self.min_scaled >= 1.0 / c
    }
}

pub fn exit_density_range(dim: usize, l: f64) -> Result<ExitDensityRange> {
    let e = center_exit(dim, norm_sq_bound(l))?;
    let scale = l.powi(dim as i32 - 1);
    let vals: Vec<f64> = e.exit.iter().filter(|(_, v)| *v > 0.0).map(|(_, v)| v * scale).collect();
    if vals.is_empty() {
        return Err(Error::EmptyRegion);
    }
    Ok(ExitDensityRange {
        l,
        min_scaled: vals.iter().copied().fold(f64::INFINITY, f64::min),
        max_scaled: vals.iter().copied().fold(0.0, f64::max),
    })
}

/// `P_x(τ_L < T_{V_l})` against
/// `(l^{2-d} - |x|^{2-d})/(l^{2-d} - L^{2-d})` on `V_L \ V_l`; the
/// deviation is reported in units of `l^{1-d}/(l^{2-d} - L^{2-d})`.
#[derive(Clone, Debug, Serialize)]
pub struct AnnulusEscape {
    pub l_outer: f64,
    pub l_inner: f64,
    pub n_points: usize,
    pub max_abs_error: f64,
    pub scaled_error: f64,
}

pub fn annulus_escape(dim: usize, l_outer: f64, l_inner: f64, opts: SolverOptions) -> Result<AnnulusEscape> {
    if !(dim >= 3 && l_inner >= 1.0 && l_inner < l_outer) {
        return Err(Error::InvalidParameter(format!(
            "need d >= 3 and 1 <= l < L, got d={dim}, l={l_inner}, L={l_outer}"
        )));
    }
    let o = LatticePoint::origin(dim);
    let outer = ball_in_dim(dim, &o, l_outer)?;
    let inner = ball_in_dim(dim, &o, l_inner)?;
    let ring = outer.domain().filter(|p| !inner.contains(p));
    let sys = DomainSystem::assemble(&SimpleRandomWalk::new(dim), &ring, opts)?;
    let h = sys.harmonic_extension(|p| if inner.contains(p) { 0.0 } else { 1.0 })?;
    let e = 2.0 - dim as f64;
    let denom = l_inner.powf(e) - l_outer.powf(e);
    let mut worst = 0.0f64;
    for (p, v) in ring.points().iter().zip(&h) {
        let formula = (l_inner.powf(e) - p.norm().powf(e)) / denom;
        worst = worst.max((v - formula).abs());
    }
    Ok(AnnulusEscape {
        l_outer,
        l_inner,
        n_points: ring.len(),
        max_abs_error: worst,
        scaled_error: worst * denom / l_inner.powf(1.0 - dim as f64),
    })
}

/// One instance of `P_x(T_{V_a(y)} < τ_{V_L})` and the bound form
/// `a^{d-2} d_L(y) d_L(x) / |x - y|^d`.
#[derive(Clone, Debug, Serialize)]
pub struct HitInstance {
    pub l: f64,
    pub y: LatticePoint,
    pub a: f64,
    pub x: LatticePoint,
    pub prob: f64,
    pub bound_form: f64,
    pub ratio: f64,
}

/// Draws admissible `(L, y, a, x)`: `x, y ∈ V_L` at depth at least one,
/// `1 ≤ a ≤ 5 d_L(y)`, `a ≤ L/2` and `|x - y| > 2a`.
pub fn sample_hit_params(dim: usize, ls: &[f64], n: usize, seed: u64) -> Result<Vec<(f64, LatticePoint, f64, LatticePoint)>> {
    if ls.is_empty() || ls.iter().any(|l| !(*l >= 4.0)) {
        return Err(Error::InvalidParameter("radii must be >= 4".into()));
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = counter_rng(b"exitlab.hit", &[derive_seed(seed, i as u64) as i64]);
        loop {
            let l = ls[rng.gen_range(0..ls.len())];
            let li = l.floor() as i32;
            let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
                let c: Vec<i32> = (0..dim).map(|_| rng.gen_range(-li..=li)).collect();
                LatticePoint::new(&c)
            };
            let y = draw(&mut rng);
            let dy = l - y.norm();
            if dy < 1.0 {
                continue;
            }
            let a_max = (5.0 * dy).min(l / 2.0);
            let a = rng.gen_range(1.0..=a_max);
            let x = draw(&mut rng);
            if l - x.norm() < 1.0 || x.dist(&y) <= 2.0 * a {
                continue;
            }
            out.push((l, y, a, x));
            break;
        }
    }
    Ok(out)
}

pub fn hit_instance(dim: usize, l: f64, y: &LatticePoint, a: f64, x: &LatticePoint, opts: SolverOptions) -> Result<HitInstance> {
    let o = LatticePoint::origin(dim);
    let big = ball_in_dim(dim, &o, l)?;
    if !big.contains(x) || !big.contains(y) {
        return Err(Error::InvalidParameter("x and y must lie in V_L".into()));
    }
    let small = ball_in_dim(dim, y, a)?;
    let rest = big.domain().filter(|p| !small.contains(p));
    let sys = DomainSystem::assemble(&SimpleRandomWalk::new(dim), &rest, opts)?;
    let h = sys.harmonic_extension(|p| if small.contains(p) { 1.0 } else { 0.0 })?;
    let prob = rest.index_of(x).map(|i| h[i].clamp(0.0, 1.0)).unwrap_or(1.0);
    let bound_form = a.powi(dim as i32 - 2) * (l - y.norm()) * (l - x.norm()) / x.dist(y).powi(dim as i32);
    Ok(HitInstance {
        l,
        y: y.clone(),
        a,
        x: x.clone(),
        prob,
        bound_form,
        ratio: prob / bound_form,
    })
}

pub fn hit_instances(dim: usize, params: &[(f64, LatticePoint, f64, LatticePoint)], opts: SolverOptions) -> Result<Vec<HitInstance>> {
    params
        .par_iter()
        .map(|(l, y, a, x)| hit_instance(dim, *l, y, *a, x, opts))
        .collect()
}

/// Fit of the hitting bound on a calibration set and its check on a
/// held-out set. `C` is an upper prediction bound for `ln(ratio)` under a
/// normal model, `exp(μ + z σ sqrt(1 + 1/n))`, with `z` chosen so that all
/// held-out draws stay below `C` with probability `1 - level`.
#[derive(Clone, Debug, Serialize)]
pub struct HitBoundFit {
    pub n_fit: usize,
    pub n_holdout: usize,
    pub level: f64,
    pub fit_max: f64,
    pub log_mean: f64,
    pub log_sd: f64,
    pub c: f64,
    pub holdout_max: f64,
    pub pass: bool,
}

pub fn fit_hit_bound(fit: &[HitInstance], holdout: &[HitInstance], level: f64) -> Result<HitBoundFit> {
    if fit.len() < 3 || holdout.is_empty() || !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter("need >= 3 fit instances, a holdout set and level in (0, 1)".into()));
    }
    if fit.iter().chain(holdout).any(|h| !(h.ratio > 0.0)) {
        return Err(Error::InvalidParameter("ratios must be positive".into()));
    }
    let logs: Vec<f64> = fit.iter().map(|h| h.ratio.ln()).collect();
    let n = logs.len() as f64;
    let mean = logs.iter().sum::<f64>() / n;
    let sd = (logs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt();
    let per_draw = level / holdout.len() as f64;
    let z = Normal::standard().inverse_cdf(1.0 - per_draw);
    let c = (mean + z * sd * (1.0 + 1.0 / n).sqrt()).exp();
    let holdout_max = holdout.iter().map(|h| h.ratio).fold(0.0, f64::max);
    Ok(HitBoundFit {
        n_fit: fit.len(),
        n_holdout: holdout.len(),
        level,
        fit_max: fit.iter().map(|h| h.ratio).fold(0.0, f64::max),
        log_mean: mean,
        log_sd: sd,
        c,
        holdout_max,
        pass: holdout_max <= c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_density_is_positive_on_support() {
        let r = exit_density_range(3, 6.0).unwrap();
        assert!(r.min_scaled > 0.0 && r.max_scaled >= r.min_scaled);
        assert!(r.within(r.constant()));
    }

    #[test]
    fn annulus_formula_at_moderate_scale() {
        let a = annulus_escape(3, 10.0, 3.0, SolverOptions::default()).unwrap();
        assert!(a.max_abs_error < 0.2, "{a:?}");
    }

    #[test]
    fn hit_samples_are_admissible() {
        let ps = sample_hit_params(3, &[8.0, 10.0], 15, 7).unwrap();
        for (l, y, a, x) in &ps {
            assert!(l - y.norm() >= 1.0 && l - x.norm() >= 1.0);
            assert!(*a >= 1.0 && *a <= 5.0 * (l - y.norm()) + 1e-12);
            assert!(x.dist(y) > 2.0 * a);
        }
        assert_eq!(ps, sample_hit_params(3, &[8.0, 10.0], 15, 7).unwrap());
    }

    #[test]
    fn hitting_probability_monotone_in_radius() {
        let y = LatticePoint::new(&[2, 0, 0]);
        let x = LatticePoint::new(&[-5, 0, 0]);
        let o = SolverOptions::default();
        let p1 = hit_instance(3, 8.0, &y, 1.0, &x, o).unwrap().prob;
        let p2 = hit_instance(3, 8.0, &y, 2.0, &x, o).unwrap().prob;
        assert!(p1 > 0.0 && p2 > p1 && p2 < 1.0);
    }
}
