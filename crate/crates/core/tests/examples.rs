//! Worked examples per module, each against an independent oracle.

mod common;

use common::{power_iteration, rng};
use exitlab::coarse_grain::{
    alpha, calibrate_k0, cg_row, gamma, h, radius_table, srw_center_green, CoarseGrainScheme, ScaleSchedule,
    SmoothingDensity,
};
use exitlab::environment::{Environment, EnvironmentLaw};
use exitlab::exit_solver::{exit_measure, hit_before_exit, mc_exit, DomainSystem, SolverOptions};
use exitlab::kernel::{Kernel, Measure, SimpleRandomWalk, SparseKernel};
use exitlab::lattice::{ball, LatticePoint};
use exitlab::multiscale_stats::{classify_distances, cond_rhs, d_smoothed, estimate_b, smooth, PsiSpec};
use exitlab::stats::{wilson_interval, Z_95};
use exitlab::perturbation::{
    classify_bad, delta, expansion_terms, goodify, resolvent_check, BadScanParams, ExpansionSetup,
};
use exitlab::reference_laws::{bm_derivatives, cg_green_bounds, derivative_probe_points, poisson_bound_fit};
use exitlab::srw::pi_hat_center;
use exitlab::stats::linear_fit;
use rand::Rng;

fn o3() -> LatticePoint {
    LatticePoint::origin(3)
}

fn env_on(eps: f64, radius: f64, seed: u64) -> Environment {
    let law = EnvironmentLaw::isotropic(3, eps).unwrap();
    law.sample_environment(ball(&o3(), radius).unwrap().domain(), seed).unwrap()
}

// exit_solver

#[test]
fn srw_exit_from_v2_matches_power_iteration() {
    let v = ball(&o3(), 2.0).unwrap();
    let (oracle, _) = power_iteration(&SimpleRandomWalk::new(3), v.domain(), &o3(), 1e-15);
    let ex = exit_measure(&SimpleRandomWalk::new(3), v.domain(), &o3(), SolverOptions::default()).unwrap();
    assert!(ex.measure.l1_dist(&oracle) < 1e-9);
}

/// Full-lattice `G(0)` by summing return probabilities
/// `p_{2n}(0) = 6^{-2n} Σ_{a+b+c=n} (2n)!/(a! b! c!)^2` up to `n_max`, plus
/// the tail `Σ_{n > n_max} 2 (3/(4πn))^{3/2}`.
fn full_lattice_green_series(n_max: usize) -> f64 {
    let lf: Vec<f64> = (0..=2 * n_max + 1)
        .scan(0.0, |acc, k| {
            if k > 0 {
                *acc += (k as f64).ln();
            }
            Some(*acc)
        })
        .collect();
    let mut g = 1.0;
    for n in 1..=n_max {
        let mut s = 0.0;
        for a in 0..=n {
            for b in 0..=(n - a) {
                let c = n - a - b;
                s += (lf[2 * n] - 2.0 * (lf[a] + lf[b] + lf[c]) - 2.0 * n as f64 * 6f64.ln()).exp();
            }
        }
        g += s;
    }
    // ∫_{n_max + 1/2}^∞ 2 (3/(4πn))^{3/2} dn
    g + 4.0 * (3.0 / (4.0 * std::f64::consts::PI)).powf(1.5) / (n_max as f64 + 0.5).sqrt()
}

#[test]
fn center_green_of_large_ball_approaches_lattice_value() {
    let g_full = full_lattice_green_series(400);
    // Watson's integral, as a check on the series oracle itself
    assert!((g_full - 1.516386059151978).abs() < 2e-4, "{g_full}");
    let l = 30.0;
    let v = ball(&o3(), l).unwrap();
    let g_v = srw_center_green(3, l).unwrap();
    // g_V(0,0) = G(0) - Σ_z π_V(0,z) G(z), with G(z) ≈ 3/(2π|z|)
    let ex = exitlab::srw::center_exit(3, v.norm_sq_bound()).unwrap().measure().unwrap();
    let correction: f64 = ex.entries().iter().map(|(z, p)| p * 3.0 / (2.0 * std::f64::consts::PI * z.norm())).sum();
    assert!(g_v < g_full);
    assert!((g_v - (g_full - correction)).abs() < 1e-3, "g_V = {g_v}, series - correction = {}", g_full - correction);
}

#[test]
fn hitting_probability_matches_monte_carlo() {
    let l = 16.0;
    let v = ball(&o3(), l).unwrap();
    let y = LatticePoint::new(&[4, 0, 0]);
    let x = LatticePoint::new(&[-4, 0, 0]);
    let a = ball(&y, 2.0).unwrap();
    let p = hit_before_exit(&SimpleRandomWalk::new(3), v.domain(), a.domain(), &x, SolverOptions::default()).unwrap();
    let n = 100_000;
    let mut r = rng(5);
    let mut hits = 0usize;
    for _ in 0..n {
        let mut z = x.clone();
        loop {
            if a.contains(&z) {
                hits += 1;
                break;
            }
            if !v.contains(&z) {
                break;
            }
            z = z.neighbor(r.gen_range(0..6));
        }
    }
    let est = hits as f64 / n as f64;
    let sd = (p * (1.0 - p) / n as f64).sqrt();
    assert!((est - p).abs() <= 3.0 * sd, "exact {p}, MC {est}, sd {sd}");
}

#[test]
fn monte_carlo_exit_law_within_binomial_error() {
    let v = ball(&o3(), 4.0).unwrap();
    let env = env_on(0.0, 4.0, 3);
    let exact = exit_measure(&env, v.domain(), &o3(), SolverOptions::default()).unwrap().measure;
    let n = 100_000;
    let mc = mc_exit(&env, v.domain(), &o3(), n, 17, None).unwrap();
    let bound: f64 = exact.entries().iter().map(|(_, p)| (p * (1.0 - p) / n as f64).sqrt()).sum();
    let tv = mc.empirical().l1_dist(&exact);
    assert!(tv <= 3.0 * bound, "l1 {tv}, bound {bound}");
}

// coarse_grain

#[test]
fn radius_weights_match_fine_quadrature() {
    let m = 5.0;
    let phi = SmoothingDensity::get();
    let table = radius_table(3, m).unwrap();
    for w in &table {
        // composite Simpson of φ_m over [t_lo, t_hi]
        let n = 20_000;
        let step = (w.t_hi - w.t_lo) / n as f64;
        let mut s = phi.rescaled(m, w.t_lo) + phi.rescaled(m, w.t_hi);
        for i in 1..n {
            s += phi.rescaled(m, w.t_lo + i as f64 * step) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let q = s * step / 3.0;
        assert!((q - w.weight).abs() < 1e-8, "k = {}: {q} vs {}", w.norm_sq, w.weight);
        // the atom selects exactly the lattice ball of every radius in it
        assert!(w.t_lo >= m && w.t_hi <= 2.0 * m);
        assert!(w.t_lo == w.radius() || (w.t_lo == m && w.radius() <= m));
    }
    assert!((table.iter().map(|w| w.weight).sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn h_is_concave_on_the_transition_interval() {
    let n = 200;
    let us: Vec<f64> = (0..n).map(|i| 0.5 + 1.5 * i as f64 / (n - 1) as f64).collect();
    for w in us.windows(3) {
        let d2 = h(w[0]) - 2.0 * h(w[1]) + h(w[2]);
        assert!(d2 <= 1e-14, "second difference {d2} at {}", w[1]);
    }
}

#[test]
fn s2_does_not_coarse_grain_next_to_the_boundary() {
    let l = 8.0;
    let w = ball(&o3(), l).unwrap();
    let scheme = CoarseGrainScheme::s2(3, l, ScaleSchedule::toy()).unwrap();
    let srw = SimpleRandomWalk::new(3);
    let env = env_on(0.0, l, 1);
    let near: Vec<&LatticePoint> =
        w.domain().points().iter().filter(|x| l - x.norm() < 1.0 / (2.0 * gamma(3))).collect();
    assert!(!near.is_empty());
    for x in near {
        let row = cg_row(&scheme, w.domain(), &env, x, SolverOptions::default()).unwrap();
        let m = Measure::from_entries(row);
        let base = Measure::from_entries(srw.row(x).unwrap());
        assert!(m.l1_dist(&base) < 1e-12, "row at {x} differs");
    }
}

#[test]
fn pi_hat_covariance_is_isotropic() {
    for m in [3.0, 4.0, 6.0] {
        let row = pi_hat_center(3, m).unwrap().measure();
        let mut cov = [[0.0; 3]; 3];
        for (x, p) in row.entries() {
            for i in 0..3 {
                for j in 0..3 {
                    cov[i][j] += p * (x.coords()[i] * x.coords()[j]) as f64;
                }
            }
        }
        let a = alpha(3, m).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { a } else { 0.0 };
                assert!((cov[i][j] - want).abs() < 1e-9 * a, "m = {m}: cov[{i}][{j}] = {}", cov[i][j]);
            }
        }
        let ratio = a / (m * m);
        assert!(ratio > 0.3 && ratio < 1.5, "alpha/m^2 = {ratio}");
    }
}

#[test]
fn k0_margins_improve_with_k0() {
    let cal = calibrate_k0(3, 32.0, &ScaleSchedule::toy(), 12, 8, SolverOptions::default()).unwrap();
    assert!(cal.found, "{:?}", cal.sweep.iter().map(|s| (s.k0, s.min_leave_first, s.max_mass_inside)).collect::<Vec<_>>());
    for w in cal.sweep.windows(2) {
        assert!(w[1].min_leave_first >= w[0].min_leave_first - 1e-12);
        assert!(w[1].max_mass_inside <= w[0].max_mass_inside + 1e-12);
    }
    let last = cal.sweep.last().unwrap();
    assert_eq!(last.k0, cal.k0);
    assert!(last.min_leave_first >= 0.9 && last.max_mass_inside <= 17.0 / 32.0);
}

// perturbation

#[test]
fn delta_matches_direct_row_subtraction() {
    let l = 8.0;
    let v = ball(&o3(), l).unwrap();
    let env = env_on(0.05, l + 5.0, 8);
    let scheme = CoarseGrainScheme::constant(3, 2.0).unwrap();
    let big = ball(&o3(), l + 5.0).unwrap();
    let opts = SolverOptions::default();
    let sites: Vec<LatticePoint> = v.domain().points().iter().step_by(37).cloned().collect();
    let mut p = SparseKernel::new(3);
    let mut q = SparseKernel::new(3);
    for x in &sites {
        p.insert_row(x.clone(), cg_row(&scheme, big.domain(), &env, x, opts).unwrap());
        q.insert_row(x.clone(), cg_row(&scheme, big.domain(), &SimpleRandomWalk::new(3), x, opts).unwrap());
    }
    let dom = exitlab::lattice::Domain::from_points(3, sites.clone()).unwrap();
    let d = delta(&p, &q, &dom).unwrap();
    for x in &sites {
        let direct = Measure::from_entries(p.row(x).unwrap()).sub(&Measure::from_entries(q.row(x).unwrap()));
        let got = Measure::from_entries(d.row(x).unwrap());
        assert!(got.l1_dist(&direct) < 1e-15);
        assert!(d.row_norm(x) <= 2.0);
    }
}

fn resolvent_reports(n: usize) -> Vec<exitlab::perturbation::ResolventReport> {
    let v = ball(&o3(), 4.0).unwrap();
    (0..10)
        .map(|seed| {
            let env = env_on(0.05, 6.0, seed);
            resolvent_check(&env, &SimpleRandomWalk::new(3), v.domain(), n, &[o3()], SolverOptions::default()).unwrap()
        })
        .collect()
}

#[test]
fn resolvent_terms_decay_geometrically() {
    for rep in resolvent_reports(8) {
        assert!(rep.max_residual <= 1e-9);
        let r = &rep.term_ratios()[0];
        let lo = r.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = r.iter().copied().fold(0.0, f64::max);
        assert!(hi < 0.5 && hi / lo < 1.5, "ratios {r:?}");
    }
}

#[test]
fn resolvent_term_ratio_matches_operator_norm() {
    // Known to fail: the ratios settle near 0.09 while ‖g(q)Δ‖₁ is 1.1 to 1.4.
    let mut worst: f64 = 0.0;
    for rep in resolvent_reports(5) {
        let r = *rep.term_ratios()[0].last().unwrap();
        worst = worst.max((r / rep.gq_delta_norm - 1.0).abs());
        println!("ratio {r:.4}, norm {:.4}", rep.gq_delta_norm);
    }
    assert!(worst <= 0.2, "largest relative gap {worst:.3}");
}

#[test]
fn expansion_partial_sum_matches_two_solves() {
    let l = 16.0;
    let v = ball(&o3(), l).unwrap();
    let env = env_on(0.03, l, 12);
    let opts = SolverOptions::default();
    // rows exit from V_L ∩ ball, so both chains leave V_L with the true exit laws
    let scheme = CoarseGrainScheme::constant(3, 2.0).unwrap();
    let mut pi_hat = SparseKernel::new(3);
    let mut big_pi_hat = SparseKernel::new(3);
    for x in v.domain().points() {
        pi_hat.insert_row(x.clone(), cg_row(&scheme, v.domain(), &SimpleRandomWalk::new(3), x, opts).unwrap());
        big_pi_hat.insert_row(x.clone(), cg_row(&scheme, v.domain(), &env, x, opts).unwrap());
    }
    let ghat = DomainSystem::assemble(&pi_hat, v.domain(), opts).unwrap();
    let pi_l = DomainSystem::assemble(&SimpleRandomWalk::new(3), v.domain(), opts).unwrap();
    let d = delta(&big_pi_hat, &pi_hat, v.domain()).unwrap();
    let setup = ExpansionSetup {
        ghat: &ghat,
        delta: &d,
        pi_hat: &pi_hat,
        pi_l: &pi_l,
    };
    let rep = expansion_terms(&setup, &o3(), 12, 12, 1e-6).unwrap();
    let big = exit_measure(&env, v.domain(), &o3(), opts).unwrap().measure;
    let small = pi_l.exit_row(&o3()).unwrap().measure;
    let err = rep.partial.l1_dist(&big.sub(&small));
    assert!(err <= rep.tail_bound + rep.numerical_floor + 1e-12, "error {err}, report {rep:?}");
    for w in rep.k_norms.windows(2).skip(1) {
        assert!(w[1] <= w[0] * (1.0 + 1e-9), "k-norms {:?}", rep.k_norms);
    }
}

#[test]
fn strong_perturbation_produces_bad_sites() {
    // ε = 0.2 is outside (0, 1/6) in d = 3; 0.16 is the strongest admissible value used.
    let l = 16.0;
    let law = EnvironmentLaw::isotropic(3, 0.16).unwrap();
    let params = BadScanParams {
        l,
        delta: 0.1,
        k0: 2.0,
        schedule: ScaleSchedule::toy(),
        threshold_scale: 1.0,
    };
    let reach = l + 2.0 * 2.0 * ScaleSchedule::toy().s(l) + 2.0;
    let region = ball(&o3(), reach).unwrap();
    let n = 50;
    let mut bad = 0;
    for i in 0..n {
        let env = law.sample_environment(region.domain(), 1000 + i).unwrap();
        let rep = classify_bad(&env, &params, SolverOptions::default()).unwrap();
        if !rep.good {
            bad += 1;
        }
        if i == 0 {
            // goodified rows on B_L equal π̂ exactly
            let sites = rep.bad_sites();
            let field: Vec<(LatticePoint, f64)> = sites.iter().map(|x| (x.clone(), 2.0)).collect();
            let pi_hat = exitlab::coarse_grain::pi_hat_field(&field, &SimpleRandomWalk::new(3), SolverOptions::default()).unwrap();
            let mut k = SparseKernel::new(3);
            for x in ball(&o3(), l).unwrap().domain().points() {
                k.insert_row(x.clone(), env.row(x).unwrap());
            }
            let gd = goodify(&k, &rep, &pi_hat).unwrap();
            for x in &sites {
                assert_eq!(gd.get(x).unwrap(), &pi_hat.row(x).unwrap());
            }
        }
    }
    let (lo, hi) = wilson_interval(bad, n as usize, Z_95);
    println!("bad frequency {bad}/{n}, 95% CI [{lo:.3}, {hi:.3}]");
    assert!(bad > 0);
}

// multiscale_stats

#[test]
fn cond_rhs_matches_high_precision_values() {
    // ¼ exp(-c_i (ln 16)^2) evaluated with mpmath at 40 digits
    let want = [
        0.000_675_834_574_106_548_2,
        0.000_374_136_815_316_711_83,
        0.000_207_119_259_561_975_56,
        0.000_114_659_626_974_124_26,
    ];
    for (got, w) in cond_rhs(16.0).iter().zip(want) {
        assert!((got / w - 1.0).abs() < 1e-13, "{got} vs {w}");
    }
}

#[test]
fn smoothed_distance_matches_monte_carlo() {
    let l = 8.0;
    let v = ball(&o3(), l).unwrap();
    let env = env_on(0.05, l, 21);
    let opts = SolverOptions::default();
    let psi = PsiSpec::psi_l();
    let d = d_smoothed(&env, l, &psi, opts).unwrap();
    let exact = exit_measure(&env, v.domain(), &o3(), opts).unwrap().measure;
    let srw = exit_measure(&SimpleRandomWalk::new(3), v.domain(), &o3(), opts).unwrap().measure;
    let n = 100_000;
    let emp = mc_exit(&env, v.domain(), &o3(), n, 99, None).unwrap().empirical();
    let d_mc = smooth(&emp.sub(&srw), 3, |_| Ok(l)).unwrap().l1();
    // σ of (μ̂ π̂)(w) from the exact law: Var f(X)/n with f = π̂(·, w)
    let mean = smooth(&exact, 3, |_| Ok(l)).unwrap();
    let mut second = Measure::new();
    for (z, p) in exact.entries() {
        let row = smooth(&Measure::dirac(z.clone()), 3, |_| Ok(l)).unwrap();
        let sq = Measure::from_entries(row.entries().iter().map(|(w, q)| (w.clone(), q * q)).collect());
        second = second.add(&sq.scale(*p));
    }
    let sigma: f64 = second
        .entries()
        .iter()
        .map(|(w, s)| ((s - mean.get(w).powi(2)).max(0.0) / n as f64).sqrt())
        .sum();
    assert!((d_mc - d).abs() <= 3.0 * sigma, "exact {d}, MC {d_mc}, sigma {sigma}");
}

#[test]
fn probe_interval_shrinks_like_inverse_root_n() {
    let law = EnvironmentLaw::isotropic(3, 0.1).unwrap();
    let l = 16.0;
    let p = estimate_b(&law, l, &PsiSpec::psi_l(), 0.2, 400, 3, 1.0, SolverOptions::default()).unwrap();
    // D_{L,0} sits near 0.245 here, so δ = 0.2 puts every environment in b_4
    assert_eq!(p.counts[3], 400, "{:?}", p.b_hat);
    // reclassify the same samples with δ at the median plain distance
    let mut plain: Vec<f64> = p.samples[..200].iter().map(|s| s.d_plain).collect();
    plain.sort_by(f64::total_cmp);
    let delta = plain[100];
    let width = |n: usize| {
        let c = p.samples[..n]
            .iter()
            .filter(|s| classify_distances(s.d_smoothed, s.d_plain, &p.thresholds, delta) == Some(4))
            .count();
        let (lo, hi) = wilson_interval(c, n, Z_95);
        (c as f64 / n as f64, hi - lo)
    };
    let (b200, w200) = width(200);
    let (b400, w400) = width(400);
    assert!(b200 > 0.1 && b200 < 0.9, "b_4 = {b200}");
    let ratio = w400 / w200;
    assert!((ratio - 0.5f64.sqrt()).abs() < 0.1, "widths {w200} -> {w400} (b_4 {b200} -> {b400})");
}

// reference_laws

#[test]
fn poisson_two_sided_bound_is_scale_free() {
    let a = poisson_bound_fit(3, 1.0, 100).unwrap();
    let b = poisson_bound_fit(3, 10.0, 100).unwrap();
    assert_eq!(a.n_pairs, 100);
    assert!(a.c.is_finite() && a.c >= 1.0);
    assert!((a.c - b.c).abs() < 1e-9 * a.c);
    assert!(b.min_ratio >= 1.0 / a.c - 1e-12 && b.max_ratio <= a.c + 1e-12);
}

#[test]
fn brownian_third_derivative_constant_is_stable() {
    let ds: Vec<f64> = [8.0, 16.0, 24.0]
        .iter()
        .map(|&l| bm_derivatives(l, l, &derivative_probe_points(l)).unwrap().scaled[2])
        .collect();
    let lo = ds.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ds.iter().copied().fold(0.0, f64::max);
    assert!(lo > 0.0 && hi / lo < 2.0, "{ds:?}");
}

#[test]
fn cg_green_shell_bound_and_lipschitz_growth() {
    let opts = SolverOptions::default();
    let mut shell = Vec::new();
    let mut lip = Vec::new();
    let ls = [16.0, 24.0, 32.0];
    for l in ls {
        let b = cg_green_bounds(3, l, ScaleSchedule::toy(), Some(2.0), opts).unwrap();
        shell.push(b.shell);
        lip.push(b.lipschitz);
    }
    let lo = shell.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = shell.iter().copied().fold(0.0, f64::max);
    assert!(hi / lo < 1.5, "shell sup {shell:?}");
    let x: Vec<f64> = ls.iter().map(|l| l.ln().ln()).collect();
    let y: Vec<f64> = lip.iter().map(|v| v.ln()).collect();
    let (slope, _) = linear_fit(&x, &y);
    assert!(slope <= 3.5, "slope {slope}, values {lip:?}");
}
