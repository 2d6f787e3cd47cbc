//! Continuum and asymptotic references: the Poisson kernel of a ball, the
//! smoothed Brownian exit kernel, the local CLT for `π̂_m^{*n}` and the Green
//! function of the coarse-grained walk.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::Serialize;
use statrs::function::gamma::gamma;

use crate::coarse_grain::{alpha, CoarseGrainScheme, ScaleSchedule, SmoothingDensity};
use crate::error::{Error, Result};
use crate::exit_solver::{DomainSystem, SolverOptions};
use crate::grid::{convolve_window, fft_periodic, DenseGrid};
use crate::kernel::{Measure, SimpleRandomWalk};
use crate::lattice::{ball_in_dim, for_each_in_box, norm_sq_bound, LatticePoint};
use crate::multiscale_stats::smooth;
use crate::quadrature::{composite_gauss, gauss_legendre};
use crate::srw::{center_exit, pi_hat_center};

/// Surface area `ω_d = 2π^{d/2}/Γ(d/2)` of the unit sphere in R^d.
pub fn sphere_area(dim: usize) -> f64 {
    let h = dim as f64 / 2.0;
    2.0 * PI.powf(h) / gamma(h)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Density of the exit law of Brownian motion from `C_L` started at `y`,
/// with respect to surface measure on `∂C_L`.
pub fn poisson_density(l: f64, y: &[f64], z: &[f64]) -> Result<f64> {
    if y.len() != z.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            found: z.len(),
        });
    }
    let ny = norm(y);
    if !(ny < l) {
        return Err(Error::InvalidParameter(format!("|y| = {ny} is not inside the ball of radius {l}")));
    }
    let nz = norm(z);
    if (nz - l).abs() > 1e-9 * l.max(1.0) {
        return Err(Error::InvalidParameter(format!("|z| = {nz} is not on the sphere of radius {l}")));
    }
    let d = y.len();
    Ok((l * l - ny * ny) / (sphere_area(d) * l * dist(y, z).powi(d as i32)))
}

/// Product rule on the unit sphere `S^{d-1}`: Gauss–Legendre in the polar
/// angles (weighted by the sine powers) and the trapezoid rule in the
/// azimuth.
pub fn unit_sphere_rule(dim: usize, order: usize) -> Result<Vec<(Vec<f64>, f64)>> {
    if dim < 2 {
        return Err(Error::InvalidParameter(format!("sphere rule needs d >= 2, got {dim}")));
    }
    let n_az = 2 * order;
    let mut nodes: Vec<(Vec<f64>, f64)> = (0..n_az)
        .map(|j| {
            let a = 2.0 * PI * j as f64 / n_az as f64;
            (vec![a.cos(), a.sin()], 2.0 * PI / n_az as f64)
        })
        .collect();
    let (gx, gw) = gauss_legendre(order);
    for k in 3..=dim {
        // S^{k-1} from S^{k-2}: x = (cos θ, sin θ ω'), weight sin^{k-2} θ dθ
        let mut next = Vec::with_capacity(nodes.len() * order);
        for (x, w) in gx.iter().zip(&gw) {
            // for S^2 the substitution t = cos θ makes the rule exact on
            // polynomials
            let (s, c, wt) = if k == 3 {
                ((1.0 - x * x).sqrt(), *x, *w)
            } else {
                let th = 0.5 * PI * (x + 1.0);
                let (s, c) = th.sin_cos();
                (s, c, 0.5 * PI * w * s.powi(k as i32 - 2))
            };
            for (p, pw) in &nodes {
                let mut q = Vec::with_capacity(k);
                q.push(c);
                q.extend(p.iter().map(|v| s * v));
                next.push((q, wt * pw));
            }
        }
        nodes = next;
    }
    Ok(nodes)
}

/// Poisson kernel of `C_L` with a surface quadrature on `∂C_L`.
#[derive(Clone, Debug)]
pub struct PoissonKernelRef {
    pub dim: usize,
    pub l: f64,
    pub order: usize,
    nodes: Vec<(Vec<f64>, f64)>,
}

impl PoissonKernelRef {
    pub fn new(dim: usize, l: f64, order: usize) -> Result<Self> {
        if !(l > 0.0) {
            return Err(Error::InvalidParameter(format!("radius must be > 0, got {l}")));
        }
        let scale = l.powi(dim as i32 - 1);
        let nodes = unit_sphere_rule(dim, order)?
            .into_iter()
            .map(|(u, w)| (u.iter().map(|c| c * l).collect(), w * scale))
            .collect();
        Ok(PoissonKernelRef { dim, l, order, nodes })
    }

    /// Doubles the order from 8 until the normalization at `y` is within
    /// `tol` of one; reports the last error if it never gets there.
    pub fn converged(dim: usize, l: f64, y: &[f64], tol: f64) -> Result<(Self, f64)> {
        let mut order = 8;
        let mut last = f64::INFINITY;
        while order <= 512 {
            let k = Self::new(dim, l, order)?;
            let err = (k.normalization(y)? - 1.0).abs();
            if err < tol {
                return Ok((k, err));
            }
            last = err;
            order *= 2;
        }
        Err(Error::NoConvergence {
            residual: last,
            iterations: order / 2,
        })
    }

    pub fn density(&self, y: &[f64], z: &[f64]) -> Result<f64> {
        poisson_density(self.l, y, z)
    }

    pub fn integrate<F: Fn(&[f64]) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().map(|(z, w)| w * f(z)).sum()
    }

    pub fn normalization(&self, y: &[f64]) -> Result<f64> {
        if y.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: y.len(),
            });
        }
        let mut s = 0.0;
        for (z, w) in &self.nodes {
            s += w * poisson_density(self.l, y, z)?;
        }
        Ok(s)
    }
}

/// Fitted constant of the two-sided bound
/// `C^{-1} d(y, ∂C_L)/|y - z|^d ≤ density ≤ C d(y, ∂C_L)/|y - z|^d`.
#[derive(Clone, Debug, Serialize)]
pub struct PoissonBoundFit {
    pub l: f64,
    pub n_pairs: usize,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub c: f64,
}

/// Deterministic grid of `n` pairs `(y, z)`: `|y|/L` runs over `(0, 1)` and
/// directions cycle over a fixed set.
pub fn poisson_bound_fit(dim: usize, l: f64, n: usize) -> Result<PoissonBoundFit> {
    let dirs = unit_sphere_rule(dim, 3)?;
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for i in 0..n {
        let frac = (i as f64 + 0.5) / n as f64 * 0.98;
        let dy = &dirs[i % dirs.len()].0;
        let dz = &dirs[(7 * i + 3) % dirs.len()].0;
        let y: Vec<f64> = dy.iter().map(|c| c * frac * l).collect();
        let z: Vec<f64> = dz.iter().map(|c| c * l).collect();
        let p = poisson_density(l, &y, &z)?;
        let ratio = p * dist(&y, &z).powi(dim as i32) / (l - norm(&y));
        lo = lo.min(ratio);
        hi = hi.max(ratio);
    }
    Ok(PoissonBoundFit {
        l,
        n_pairs: n,
        min_ratio: lo,
        max_ratio: hi,
        c: hi.max(1.0 / lo),
    })
}

/// Volume density at distance `r` of `∫ φ_m(t) U_t dt`, `U_t` the uniform
/// law on the sphere of radius `t`.
fn radial_mixture(dim: usize, m: f64, r: f64) -> f64 {
    if r <= m || r >= 2.0 * m {
        return 0.0;
    }
    SmoothingDensity::get().rescaled(m, r) / (sphere_area(dim) * r.powi(dim as i32 - 1))
}

/// Polar angle range on `∂C_L` where `|z - w| ∈ [m, 2m]`, for `|z| = ρ > 0`.
fn theta_window(l: f64, rho: f64, m: f64) -> (f64, f64) {
    let c = |r: f64| ((l * l + rho * rho - r * r) / (2.0 * l * rho)).clamp(-1.0, 1.0).acos();
    (c(m), c(2.0 * m))
}

/// `φ^BM(y, z)` with constant smoothing scale `m` and a quadrature error
/// estimate from a refined rule. Started at the center the integral is
/// one-dimensional (any `d`); off-center starts are handled for `d = 3`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct PhiBmValue {
    pub value: f64,
    pub error: f64,
}

pub fn phi_bm(dim: usize, l: f64, m: f64, y: &[f64], z: &[f64]) -> Result<PhiBmValue> {
    if y.len() != dim || z.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: y.len().min(z.len()),
        });
    }
    if !(m > 0.0) {
        return Err(Error::InvalidParameter(format!("smoothing scale must be > 0, got {m}")));
    }
    let ny = norm(y);
    if !(ny < l) {
        return Err(Error::InvalidParameter(format!("|y| = {ny} is not inside the ball of radius {l}")));
    }
    let rho = norm(z);
    if rho < 1e-12 * l {
        return Ok(PhiBmValue {
            value: radial_mixture(dim, m, l),
            error: 0.0,
        });
    }
    if ny == 0.0 {
        let v = |panels| phi_bm_center(dim, l, m, rho, panels);
        let (a, b) = (v(8), v(16));
        return Ok(PhiBmValue {
            value: b,
            error: (a - b).abs(),
        });
    }
    if dim != 3 {
        return Err(Error::InvalidParameter("off-center starts are implemented for d = 3".into()));
    }
    let v = |panels, n_az| phi_bm_d3(l, m, y, z, panels, n_az);
    let (a, b) = (v(8, 48)?, v(16, 96)?);
    Ok(PhiBmValue {
        value: b,
        error: (a - b).abs(),
    })
}

fn phi_bm_center(dim: usize, l: f64, m: f64, rho: f64, panels: usize) -> f64 {
    let (t0, t1) = theta_window(l, rho, m);
    if t1 <= t0 {
        return 0.0;
    }
    let f = |th: f64| {
        let r = (l * l + rho * rho - 2.0 * l * rho * th.cos()).max(0.0).sqrt();
        th.sin().powi(dim as i32 - 2) * radial_mixture(dim, m, r)
    };
    sphere_area(dim - 1) / sphere_area(dim) * composite_gauss(&f, t0, t1, 16, panels)
}

fn phi_bm_d3(l: f64, m: f64, y: &[f64], z: &[f64], panels: usize, n_az: usize) -> Result<f64> {
    let rho = norm(z);
    let e0: Vec<f64> = z.iter().map(|c| c / rho).collect();
    // orthonormal frame around z
    let pick = if e0[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let dot: f64 = pick.iter().zip(&e0).map(|(a, b)| a * b).sum();
    let mut e1: Vec<f64> = pick.iter().zip(&e0).map(|(a, b)| a - dot * b).collect();
    let n1 = norm(&e1);
    e1.iter_mut().for_each(|c| *c /= n1);
    let e2 = [
        e0[1] * e1[2] - e0[2] * e1[1],
        e0[2] * e1[0] - e0[0] * e1[2],
        e0[0] * e1[1] - e0[1] * e1[0],
    ];
    let (t0, t1) = theta_window(l, rho, m);
    if t1 <= t0 {
        return Ok(0.0);
    }
    let ny2: f64 = y.iter().map(|a| a * a).sum();
    let f = |th: f64| {
        let (s, c) = th.sin_cos();
        let r = (l * l + rho * rho - 2.0 * l * rho * c).max(0.0).sqrt();
        let k = radial_mixture(3, m, r);
        if k == 0.0 {
            return 0.0;
        }
        let mut acc = 0.0;
        for j in 0..n_az {
            let a = 2.0 * PI * j as f64 / n_az as f64;
            let (sa, ca) = a.sin_cos();
            let mut d2 = 0.0;
            for i in 0..3 {
                let w = l * (c * e0[i] + s * (ca * e1[i] + sa * e2[i]));
                d2 += (w - y[i]) * (w - y[i]);
            }
            acc += (l * l - ny2) / (4.0 * PI * l * d2.powf(1.5));
        }
        acc * 2.0 * PI / n_az as f64 * k * l * l * s
    };
    Ok(composite_gauss(&f, t0, t1, 16, panels))
}

/// Lattice `φ_{L,Ψ}(0, ·) = π_L(0, ·) π̂_m` against `φ^BM(0, ·)` at every
/// lattice point, for constant `m` on the boundary.
#[derive(Clone, Debug, Serialize)]
pub struct BmComparison {
    pub dim: usize,
    pub l: f64,
    pub m: f64,
    pub sup_gap: f64,
    pub argmax: LatticePoint,
    /// `sup_gap · L^{d + 1/5}`.
    pub scaled_gap: f64,
    pub lattice_mass: f64,
    pub bm_mass: f64,
    pub quadrature_error: f64,
}

pub fn compare_bm(dim: usize, l: f64, m: f64) -> Result<BmComparison> {
    let exit = center_exit(dim, norm_sq_bound(l))?.measure()?;
    let lattice = smooth(&exit, dim, |_| Ok(m))?;
    let reach = (l + 2.0 * m).ceil() as i32 + 2;
    let mut norms: Vec<i64> = Vec::new();
    for_each_in_box(&vec![-reach; dim], &vec![reach; dim], |p| norms.push(p.norm_sq()));
    norms.sort_unstable();
    norms.dedup();
    let y = vec![0.0; dim];
    let bm: Vec<(i64, PhiBmValue)> = norms
        .par_iter()
        .map(|&k| {
            let mut z = vec![0.0; dim];
            z[0] = (k as f64).sqrt();
            phi_bm(dim, l, m, &y, &z).map(|v| (k, v))
        })
        .collect::<Result<_>>()?;
    let table: FxHashMap<i64, PhiBmValue> = bm.into_iter().collect();
    let mut sup = 0.0f64;
    let mut arg = LatticePoint::origin(dim);
    let mut bm_mass = 0.0;
    let mut qerr = 0.0f64;
    let lat: FxHashMap<&LatticePoint, f64> = lattice.entries().iter().map(|(p, v)| (p, *v)).collect();
    for_each_in_box(&vec![-reach; dim], &vec![reach; dim], |p| {
        let b = table[&p.norm_sq()];
        bm_mass += b.value;
        qerr = qerr.max(b.error);
        let gap = (lat.get(p).copied().unwrap_or(0.0) - b.value).abs();
        if gap > sup {
            sup = gap;
            arg = p.clone();
        }
    });
    Ok(BmComparison {
        dim,
        l,
        m,
        sup_gap: sup,
        argmax: arg,
        scaled_gap: sup * l.powf(dim as f64 + 0.2),
        lattice_mass: lattice.total(),
        bm_mass,
        quadrature_error: qerr,
    })
}

/// Central differences of `y ↦ φ^BM(y, z)` along `e_1` at `y = 0`, scaled by
/// `L^{d+i}` for `i = 1, 2, 3` and maximized over the given `z`.
#[derive(Clone, Debug, Serialize)]
pub struct BmDerivatives {
    pub l: f64,
    pub m: f64,
    pub step: f64,
    pub scaled: [f64; 3],
}

pub fn bm_derivatives(l: f64, m: f64, zs: &[Vec<f64>]) -> Result<BmDerivatives> {
    let h = l / 10.0;
    let scaled = zs
        .par_iter()
        .map(|z| {
            let f = |k: f64| phi_bm(3, l, m, &[k * h, 0.0, 0.0], z).map(|v| v.value);
            let (fm2, fm1, f0, f1, f2) = (f(-2.0)?, f(-1.0)?, f(0.0)?, f(1.0)?, f(2.0)?);
            Ok([
                ((f1 - fm1) / (2.0 * h)).abs() * l.powi(4),
                ((f1 - 2.0 * f0 + fm1) / (h * h)).abs() * l.powi(5),
                ((f2 - 2.0 * f1 + 2.0 * fm1 - fm2) / (2.0 * h * h * h)).abs() * l.powi(6),
            ])
        })
        .collect::<Result<Vec<[f64; 3]>>>()?
        .into_iter()
        .fold([0.0f64; 3], |a, b| [a[0].max(b[0]), a[1].max(b[1]), a[2].max(b[2])]);
    Ok(BmDerivatives { l, m, step: h, scaled })
}

/// Evaluation points for [`bm_derivatives`]: four directions at radii
/// `L/2, L, 3L/2, 2L, 5L/2`.
pub fn derivative_probe_points(l: f64) -> Vec<Vec<f64>> {
    let s2 = 0.5f64.sqrt();
    let s3 = (1.0f64 / 3.0).sqrt();
    let dirs = [[1.0, 0.0, 0.0], [s2, s2, 0.0], [s3, s3, s3], [-1.0, 0.0, 0.0]];
    let mut out = Vec::new();
    for d in dirs {
        for f in [0.5, 1.0, 1.5, 2.0, 2.5] {
            out.push(d.iter().map(|c| c * f * l).collect());
        }
    }
    out
}

/// `(2π α n)^{-d/2} exp(-|x|^2 / (2 α n))`.
pub fn gaussian_density(dim: usize, alpha: f64, n: f64, x: &LatticePoint) -> f64 {
    let v = alpha * n;
    (2.0 * PI * v).powf(-(dim as f64) / 2.0) * (-(x.norm_sq() as f64) / (2.0 * v)).exp()
}

/// Convolution powers of `π̂_m(0, ·)` by repeated squaring. Powers whose
/// full support box exceeds `exact_cells` are kept on a window of
/// half-width `tail_sigmas · sqrt(α k) + r_1`; the mass cut off is tracked.
pub struct ConvolutionPowers {
    dim: usize,
    alpha: f64,
    r1: i32,
    exact_cells: usize,
    tail_sigmas: f64,
    base: DenseGrid,
    pow2: Vec<(DenseGrid, f64)>,
}

impl ConvolutionPowers {
    pub fn new(dim: usize, m: f64) -> Result<Self> {
        let row = pi_hat_center(dim, m)?;
        let r1 = -row.grid.lo()[0];
        Ok(ConvolutionPowers {
            dim,
            alpha: alpha(dim, m)?,
            r1,
            exact_cells: 1 << 21,
            tail_sigmas: 8.0,
            base: row.grid.clone(),
            pow2: Vec::new(),
        })
    }

    pub fn with_limits(mut self, exact_cells: usize, tail_sigmas: f64) -> Self {
        self.exact_cells = exact_cells;
        self.tail_sigmas = tail_sigmas;
        self
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn base(&self) -> &DenseGrid {
        &self.base
    }

    fn window(&self, k: usize) -> i32 {
        let exact = k as i64 * self.r1 as i64;
        let side = (2 * exact + 1) as f64;
        if side.powi(self.dim as i32) <= self.exact_cells as f64 {
            return exact as i32;
        }
        let w = (self.tail_sigmas * (self.alpha * k as f64).sqrt()).ceil() as i64 + self.r1 as i64;
        w.min(exact) as i32
    }

    fn product(&self, a: &DenseGrid, b: &DenseGrid, k: usize) -> Result<(DenseGrid, f64)> {
        let w = self.window(k);
        let out = convolve_window(a, b, &vec![-w; self.dim], &vec![(2 * w + 1) as usize; self.dim])?;
        let cut = a.total() * b.total() - out.total();
        Ok((out, cut.max(0.0)))
    }

    fn power_of_two(&mut self, j: usize) -> Result<(DenseGrid, f64)> {
        if self.pow2.is_empty() {
            self.pow2.push((self.base.clone(), 0.0));
        }
        while self.pow2.len() <= j {
            let i = self.pow2.len();
            let (prev, cut) = &self.pow2[i - 1];
            let (next, more) = self.product(prev, prev, 1 << i)?;
            let total_cut = cut * 2.0 + more;
            self.pow2.push((next, total_cut));
        }
        Ok(self.pow2[j].clone())
    }

    /// `π̂^{*n}` and the mass dropped by truncation on the way.
    pub fn power(&mut self, n: usize) -> Result<(DenseGrid, f64)> {
        if n == 0 {
            return Err(Error::InvalidParameter("convolution power needs n >= 1".into()));
        }
        let mut acc: Option<(DenseGrid, f64, usize)> = None;
        for j in 0..usize::BITS as usize {
            if n >> j == 0 {
                break;
            }
            if (n >> j) & 1 == 1 {
                let (p, cut) = self.power_of_two(j)?;
                acc = Some(match acc {
                    None => (p, cut, 1 << j),
                    Some((a, c, k)) => {
                        let (out, more) = self.product(&a, &p, k + (1 << j))?;
                        (out, c + cut + more, k + (1 << j))
                    }
                });
            }
        }
        let (g, cut, _) = acc.expect("n >= 1");
        Ok((g, cut))
    }
}

/// Local CLT comparison for one `(m, n)`.
#[derive(Clone, Debug, Serialize)]
pub struct LcltReport {
    pub dim: usize,
    pub m: f64,
    pub n: usize,
    pub alpha: f64,
    pub sup_gap: f64,
    pub argmax: LatticePoint,
    /// `gap · m^d · n^{(d+2)/2} / ln(n+1)^4`.
    pub scaled_error: f64,
    pub mass: f64,
    pub truncated_mass: f64,
    pub symmetry_defect: f64,
    /// Largest `|x|` in the support: `n` times the largest one-step norm.
    pub support_radius: f64,
    /// `2 m n`.
    pub support_bound: f64,
    pub window: i32,
}

pub fn lclt_report(powers: &mut ConvolutionPowers, m: f64, n: usize) -> Result<LcltReport> {
    let (g, cut) = powers.power(n)?;
    let dim = powers.dim;
    let a = powers.alpha;
    let mut sup = 0.0f64;
    let mut arg = LatticePoint::origin(dim);
    let mut sym = 0.0f64;
    for (i, v) in g.data().iter().enumerate() {
        let p = g.point_at(i);
        let gap = (v - gaussian_density(dim, a, n as f64, &p)).abs();
        if gap > sup {
            sup = gap;
            arg = p.clone();
        }
        sym = sym.max((v - g.get(&p.neg())).abs());
    }
    let one_step = pi_hat_center(dim, m)?.support_radius();
    let nf = n as f64;
    Ok(LcltReport {
        dim,
        m,
        n,
        alpha: a,
        sup_gap: sup,
        argmax: arg,
        scaled_error: sup * m.powi(dim as i32) * nf.powf((dim as f64 + 2.0) / 2.0) / (nf + 1.0).ln().powi(4),
        mass: g.total(),
        truncated_mass: cut,
        symmetry_defect: sym,
        support_radius: nf * one_step,
        support_bound: 2.0 * m * nf,
        window: -g.lo()[0],
    })
}

pub fn lclt_compare(dim: usize, m: f64, ns: &[usize]) -> Result<Vec<LcltReport>> {
    let mut powers = ConvolutionPowers::new(dim, m)?;
    ns.iter().map(|&n| lclt_report(&mut powers, m, n)).collect()
}

/// Symmetric step distribution on Z^3 given by orbit representatives; each
/// point of an orbit carries the listed value.
#[derive(Clone, Debug)]
pub struct SymmetricKernel {
    /// `(|c_1|, |c_2|, |c_3|)` up to permutation, with the value per point.
    reps: Vec<([i32; 3], f64)>,
    radius: i32,
}

impl SymmetricKernel {
    pub fn new(reps: &[(LatticePoint, f64)]) -> Result<Self> {
        let mut out = Vec::with_capacity(reps.len());
        let mut radius = 0;
        for (c, v) in reps {
            if c.dim() != 3 {
                return Err(Error::DimensionMismatch {
                    expected: 3,
                    found: c.dim(),
                });
            }
            let k = c.canonical();
            let a = [k.coords()[0].abs(), k.coords()[1].abs(), k.coords()[2].abs()];
            radius = radius.max(a[0]).max(a[1]).max(a[2]);
            out.push((a, *v));
        }
        Ok(SymmetricKernel { reps: out, radius })
    }

    pub fn simple_random_walk() -> Self {
        SymmetricKernel {
            reps: vec![([1, 0, 0], 1.0 / 6.0)],
            radius: 1,
        }
    }

    pub fn pi_hat(m: f64) -> Result<Self> {
        Self::new(&pi_hat_center(3, m)?.reps)
    }

    /// Per-coordinate variance `Σ x_1^2 p(x)`.
    pub fn alpha(&self) -> f64 {
        self.reps
            .iter()
            .map(|(c, v)| {
                let p = LatticePoint::new(c);
                let s: i64 = c.iter().map(|a| (*a as i64) * (*a as i64)).sum();
                p.orbit_size() as f64 * s as f64 / 3.0 * v
            })
            .sum()
    }

    /// `φ̂(k) = Σ_x p(x) cos(k·x)`; `tables[i][j] = cos(k_i j)`.
    fn transform(&self, tables: &[Vec<f64>; 3]) -> f64 {
        let mut s = 0.0;
        for (c, v) in &self.reps {
            let mut orbit = 0.0;
            for p in distinct_permutations(c) {
                let mut t = 1.0;
                for i in 0..3 {
                    if p[i] != 0 {
                        t *= 2.0 * tables[i][p[i] as usize];
                    }
                }
                orbit += t;
            }
            s += v * orbit;
        }
        s
    }

    fn cos_tables(&self, k: [f64; 3]) -> [Vec<f64>; 3] {
        let r = self.radius as usize;
        let t = |a: f64| (0..=r).map(|j| (a * j as f64).cos()).collect::<Vec<f64>>();
        [t(k[0]), t(k[1]), t(k[2])]
    }
}

fn distinct_permutations(c: &[i32; 3]) -> Vec<[i32; 3]> {
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut out: Vec<[i32; 3]> = perms.iter().map(|p| [c[p[0]], c[p[1]], c[p[2]]]).collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Resolution of the Fourier evaluation of the Green function.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct GreenOptions {
    /// Width of the Gaussian cutoff separating the singular part near
    /// `k = 0` from the smooth periodic remainder.
    pub beta: f64,
    /// Gauss nodes per spherical coordinate in the near part.
    pub nodes: usize,
    /// FFT grid size per axis for the remainder.
    pub fft: usize,
}

impl GreenOptions {
    /// Node count sized to the phase range `8β max|x|`.
    pub fn for_points(points: &[LatticePoint]) -> Self {
        let beta = 0.35;
        let rmax = points.iter().map(|p| p.norm()).fold(0.0, f64::max);
        let nodes = ((8.0 * beta * rmax * 0.6).ceil() as usize + 32).max(48);
        let fft = (((2.0 * rmax + 40.0) / 32.0).ceil() as usize * 32).max(64);
        GreenOptions { beta, nodes, fft }
    }
}

/// `G(x) = Σ_n p^{*n}(x)` by Fourier inversion,
/// `G(x) = (2π)^{-3} ∫ cos(k·x)/(1 - φ̂(k)) dk`, split as
/// `χ/(1-φ̂) + (1-χ)/(1-φ̂)` with `χ(k) = exp(-|k|^2/(2β^2))`: the first
/// part is integrated in spherical coordinates (the Jacobian removes the
/// singularity), the second is smooth and periodic and goes through a DFT.
pub fn green_fourier(kernel: &SymmetricKernel, points: &[LatticePoint], opts: GreenOptions) -> Result<Vec<f64>> {
    for p in points {
        if p.dim() != 3 {
            return Err(Error::DimensionMismatch {
                expected: 3,
                found: p.dim(),
            });
        }
    }
    let near = green_near(kernel, points, opts);
    let far = green_far(kernel, points, opts)?;
    Ok(near.iter().zip(&far).map(|(a, b)| a + b).collect())
}

fn green_near(kernel: &SymmetricKernel, points: &[LatticePoint], opts: GreenOptions) -> Vec<f64> {
    let (gx, gw) = gauss_legendre(opts.nodes);
    let kmax = 8.0 * opts.beta;
    let half = 0.5 * PI;
    // octant: f is even in each k_i, so cos(k·x) averages to Π cos(k_i x_i)
    let radial: Vec<(f64, f64)> = gx.iter().zip(&gw).map(|(x, w)| (0.5 * kmax * (x + 1.0), 0.5 * kmax * w)).collect();
    let angular: Vec<(f64, f64)> = gx.iter().zip(&gw).map(|(x, w)| (0.5 * half * (x + 1.0), 0.5 * half * w)).collect();
    let xs: Vec<[f64; 3]> = points
        .iter()
        .map(|p| [p.coords()[0] as f64, p.coords()[1] as f64, p.coords()[2] as f64])
        .collect();
    let sums = radial
        .par_iter()
        .map(|&(rho, wr)| {
            let mut acc = vec![0.0; xs.len()];
            let chi = (-rho * rho / (2.0 * opts.beta * opts.beta)).exp();
            for &(th, wt) in &angular {
                let (st, ct) = th.sin_cos();
                for &(ph, wp) in &angular {
                    let (sp, cp) = ph.sin_cos();
                    let k = [rho * st * cp, rho * st * sp, rho * ct];
                    let denom = 1.0 - kernel.transform(&kernel.cos_tables(k));
                    let w = wr * wt * wp * rho * rho * st * chi / denom;
                    for (a, x) in acc.iter_mut().zip(&xs) {
                        *a += w * (k[0] * x[0]).cos() * (k[1] * x[1]).cos() * (k[2] * x[2]).cos();
                    }
                }
            }
            acc
        })
        .collect::<Vec<Vec<f64>>>();
    // summed in node order so the result does not depend on the thread count
    let mut total = vec![0.0; xs.len()];
    for part in &sums {
        for (t, v) in total.iter_mut().zip(part) {
            *t += v;
        }
    }
    total
        .iter().map(|s| 8.0 * s / (2.0 * PI).powi(3)).collect()
}

fn green_far(kernel: &SymmetricKernel, points: &[LatticePoint], opts: GreenOptions) -> Result<Vec<f64>> {
    let n = opts.fft;
    if 2 * kernel.radius as usize + 1 > n {
        return Err(Error::InvalidParameter(format!("FFT size {n} smaller than the kernel support")));
    }
    let shape = [n, n, n];
    let mut buf = vec![Complex64::new(0.0, 0.0); n * n * n];
    let idx = |c: [i64; 3]| {
        let w = |a: i64| a.rem_euclid(n as i64) as usize;
        (w(c[0]) * n + w(c[1])) * n + w(c[2])
    };
    for (c, v) in &kernel.reps {
        let rep = LatticePoint::new(c);
        for p in crate::lattice::isometry_group(3)?.orbit(&rep) {
            let q = p.coords();
            buf[idx([q[0] as i64, q[1] as i64, q[2] as i64])] = Complex64::new(*v, 0.0);
        }
    }
    fft_periodic(&mut buf, &shape, false);
    let a = kernel.alpha();
    let b2 = opts.beta * opts.beta;
    let freq = |j: usize| {
        let s = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
        2.0 * PI * s / n as f64
    };
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let at = (i * n + j) * n + k;
                let kk = [freq(i), freq(j), freq(k)];
                let k2 = kk[0] * kk[0] + kk[1] * kk[1] + kk[2] * kk[2];
                let v = if k2 == 0.0 {
                    1.0 / (a * b2)
                } else {
                    -(-k2 / (2.0 * b2)).exp_m1() / (1.0 - buf[at].re)
                };
                buf[at] = Complex64::new(v, 0.0);
            }
        }
    }
    fft_periodic(&mut buf, &shape, true);
    let scale = 1.0 / (n * n * n) as f64;
    Ok(points
        .iter()
        .map(|p| {
            let q = p.coords();
            buf[idx([q[0] as i64, q[1] as i64, q[2] as i64])].re * scale
        })
        .collect())
}

/// `c(d) = Γ(d/2 - 1)/(2 (π d)^{d/2})` as written for the Green asymptotics.
pub fn c_d_formula(dim: usize) -> f64 {
    let d = dim as f64;
    gamma(d / 2.0 - 1.0) / (2.0 * (PI * d).powf(d / 2.0))
}

/// Same constant with `∫_0^∞ t^{-d/2} e^{-1/t} dt` done by quadrature
/// (substituting `t = 1/u^2`, the integrand becomes `2 u^{d-3} e^{-u^2}`).
pub fn c_d_quadrature(dim: usize) -> f64 {
    let d = dim as f64;
    let f = |u: f64| 2.0 * u.powf(d - 3.0) * (-u * u).exp();
    let integral = composite_gauss(&f, 0.0, 12.0, 20, 48);
    integral / (2.0 * (PI * d).powf(d / 2.0))
}

/// `Γ(d/2 - 1)/(2 π^{d/2})`: the limit of `G(x) α |x|^{d-2}` for a walk
/// with covariance `α I`.
pub fn c_d_covariance(dim: usize) -> f64 {
    let d = dim as f64;
    gamma(d / 2.0 - 1.0) / (2.0 * PI.powf(d / 2.0))
}

#[derive(Clone, Debug, Serialize)]
pub struct GreenEntry {
    pub x: LatticePoint,
    pub norm: f64,
    pub g: f64,
    /// `G(x) α |x|^{d-2}`.
    pub ratio: f64,
    pub error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GreenTable {
    pub m: f64,
    pub alpha: f64,
    pub options: GreenOptions,
    pub entries: Vec<GreenEntry>,
}

/// `G_m(x)` of the coarse-grained walk `π̂_m` with an error estimate from a
/// coarser rule (`3/4` of the nodes and of the FFT size).
pub fn green_asymptotic(m: f64, points: &[LatticePoint]) -> Result<GreenTable> {
    let kernel = SymmetricKernel::pi_hat(m)?;
    let a = kernel.alpha();
    let opts = GreenOptions::for_points(points);
    let coarse = GreenOptions {
        nodes: opts.nodes * 3 / 4,
        fft: opts.fft * 3 / 4,
        ..opts
    };
    let fine = green_fourier(&kernel, points, opts)?;
    let rough = green_fourier(&kernel, points, coarse)?;
    let entries = points
        .iter()
        .zip(fine.iter().zip(&rough))
        .map(|(x, (g, r))| GreenEntry {
            x: x.clone(),
            norm: x.norm(),
            g: *g,
            ratio: g * a * x.norm(),
            error: (g - r).abs(),
        })
        .collect();
    Ok(GreenTable {
        m,
        alpha: a,
        options: opts,
        entries,
    })
}

/// Lattice points along four directions with `|x| ∈ [lo, hi]`.
pub fn radial_probe_points(lo: f64, hi: f64, count: usize) -> Vec<LatticePoint> {
    let dirs: [[i32; 3]; 4] = [[1, 0, 0], [1, 1, 0], [1, 1, 1], [2, 1, 0]];
    let mut out = Vec::new();
    for d in dirs {
        let len = (d.iter().map(|a| (a * a) as f64).sum::<f64>()).sqrt();
        let mut last = 0;
        for i in 0..count {
            let r = lo + (hi - lo) * i as f64 / (count.max(2) - 1) as f64;
            let t = (r / len).round().max(1.0) as i32;
            if t == last || (t as f64 * len) < lo - 1e-9 || (t as f64 * len) > hi + 1e-9 {
                continue;
            }
            last = t;
            out.push(LatticePoint::new(&[d[0] * t, d[1] * t, d[2] * t]));
        }
    }
    out
}

/// `min π̂_m(x) m^d` over `a m ≤ |x| ≤ b m`.
pub fn pi_hat_annulus_min(dim: usize, m: f64, a: f64, b: f64) -> Result<f64> {
    let row = pi_hat_center(dim, m)?;
    let mut lo = f64::INFINITY;
    for (c, v) in &row.reps {
        let r = c.norm();
        if r >= a * m && r <= b * m {
            lo = lo.min(*v);
        }
    }
    if !lo.is_finite() {
        return Err(Error::EmptyRegion);
    }
    Ok(lo * m.powi(dim as i32))
}

/// `|π̂_m(x) - π̂_m(y)| m^d / (|x - y|/m)^{1/15}` over pairs `(x, y)` with
/// `x` from the support and `y = x + v` for the given offsets.
pub fn pi_hat_lipschitz(dim: usize, m: f64, offsets: &[LatticePoint]) -> Result<f64> {
    let row = pi_hat_center(dim, m)?;
    let g = &row.grid;
    let mut worst = 0.0f64;
    for i in 0..g.data().len() {
        let x = g.point_at(i);
        for v in offsets {
            let y = x.add(v);
            let num = (g.data()[i] - g.get(&y)).abs() * m.powi(dim as i32);
            worst = worst.max(num / (v.norm() / m).powf(1.0 / 15.0));
        }
    }
    Ok(worst)
}

/// Bounds for the Green function `ĝ_L` of a coarse-grained
/// chain on `V_L`.
#[derive(Clone, Debug, Serialize)]
pub struct CgGreenBounds {
    pub scheme: String,
    pub l: f64,
    pub r: f64,
    pub s: f64,
    pub n_sites: usize,
    /// `sup_x ĝ(x, Sh_L)`.
    pub shell: f64,
    /// `sup_x ĝ(x, Shell_L(a, 2a))` over the dyadic `a` tested.
    pub shell_bands: f64,
    /// `max ĝ(x, y) s^2 (|x-y| ∨ s)^{d-2}` over sampled rows and `y ≠ x`
    /// with `x, y ∉ Shell_L(s)`.
    pub pointwise: f64,
    /// `max ĝ(x, x)` over the same rows.
    pub diagonal: f64,
    /// `sup_x ĝ(x, V_L) / (ln L)^6`.
    pub total_scaled: f64,
    pub total: f64,
    /// `max Σ_y |ĝ(x, y) - ĝ(x', y)|` over sampled pairs with `|x-x'| ≤ s`.
    pub lipschitz: f64,
    /// `sup_x ĝ(x, Sh_L((4/3)^k r)) / k` over `1 ≤ k ≤ 20 ln ln L`.
    pub boundary_reach: f64,
}

/// Runs the checks for the S1 (`k0` given) or S2 chain built on the simple
/// random walk.
pub fn cg_green_bounds(
    dim: usize,
    l: f64,
    schedule: ScaleSchedule,
    k0: Option<f64>,
    opts: SolverOptions,
) -> Result<CgGreenBounds> {
    let (r, s) = (schedule.r(l), schedule.s(l));
    let scheme = match k0 {
        Some(k) => CoarseGrainScheme::s1(dim, l, k, schedule)?,
        None => CoarseGrainScheme::s2(dim, l, schedule)?,
    };
    let b = ball_in_dim(dim, &LatticePoint::origin(dim), l)?;
    let v = b.domain().clone();
    if v.len() > 400_000 {
        return Err(Error::ResourceGuard(format!("|V_L| = {} too large", v.len())));
    }
    let kernel = crate::coarse_grain::cg_kernel(&scheme, &v, &SimpleRandomWalk::new(dim), opts)?;
    let rows: Vec<_> = v
        .points()
        .iter()
        .map(|x| kernel.get(x).cloned().ok_or_else(|| Error::KernelUndefined(x.clone())))
        .collect::<Result<_>>()?;
    let sys = DomainSystem::from_rows(&v, rows, opts)?;
    let depth = |p: &LatticePoint| l - p.norm();
    let column = |pred: &dyn Fn(&LatticePoint) -> bool| -> Result<f64> {
        let rhs: Vec<f64> = v.points().iter().map(|p| if pred(p) { 1.0 } else { 0.0 }).collect();
        if rhs.iter().all(|x| *x == 0.0) {
            return Ok(0.0);
        }
        Ok(sys.solve(&rhs, false)?.into_iter().fold(0.0, f64::max))
    };
    let shell = column(&|p| depth(p) <= r)?;
    let mut shell_bands = 0.0f64;
    let mut a = r;
    while a <= 3.0 * s + 1e-9 {
        shell_bands = shell_bands.max(column(&|p| depth(p) > a && depth(p) <= 2.0 * a)?);
        a *= 2.0;
    }
    let total = column(&|_| true)?;
    let kmax = (20.0 * l.ln().ln()).floor().max(1.0) as i32;
    let mut reach = 0.0f64;
    for k in 1..=kmax {
        let w = (4.0f64 / 3.0).powi(k) * r;
        if w > l {
            break;
        }
        reach = reach.max(column(&|p| depth(p) <= w)? / k as f64);
    }
    // rows from a few starts outside Shell_L(s), plus neighbours within s
    let interior: Vec<LatticePoint> = v.points().iter().filter(|p| depth(p) > s).cloned().collect();
    let mut starts: Vec<LatticePoint> = Vec::new();
    if !interior.is_empty() {
        for f in [0.0, 0.3, 0.6, 0.9] {
            let t = ((l - s) * f).floor() as i32;
            let mut c = vec![0; dim];
            c[0] = t;
            let p = LatticePoint::new(&c);
            if v.contains(&p) && depth(&p) > s {
                starts.push(p);
            }
        }
    }
    let mut pointwise = 0.0f64;
    let mut diagonal = 0.0f64;
    let mut lipschitz = 0.0f64;
    let greens: Vec<Vec<f64>> = starts
        .iter()
        .map(|x| sys.left_green_dense(&Measure::dirac(x.clone())))
        .collect::<Result<_>>()?;
    for (x, g) in starts.iter().zip(&greens) {
        for (y, val) in v.points().iter().zip(g) {
            if depth(y) <= s {
                continue;
            }
            if y == x {
                diagonal = diagonal.max(*val);
            } else {
                let dxy = x.dist(y).max(s);
                pointwise = pointwise.max(val * s * s * dxy.powi(dim as i32 - 2));
            }
        }
        let near = ball_in_dim(dim, x, s)?;
        let mut partners: Vec<LatticePoint> = near
            .domain()
            .points()
            .iter()
            .filter(|p| v.contains(p) && *p != x)
            .cloned()
            .collect();
        partners.sort_by_key(|p| std::cmp::Reverse(p.dist_sq(x)));
        partners.truncate(3);
        for xp in partners {
            let gp = sys.left_green_dense(&Measure::dirac(xp))?;
            let diff: f64 = g.iter().zip(&gp).map(|(a, b)| (a - b).abs()).sum();
            lipschitz = lipschitz.max(diff);
        }
    }
    Ok(CgGreenBounds {
        scheme: if k0.is_some() { "S1".into() } else { "S2".into() },
        l,
        r,
        s,
        n_sites: v.len(),
        shell,
        shell_bands,
        pointwise,
        diagonal,
        total_scaled: total / l.ln().powi(6),
        total,
        lipschitz,
        boundary_reach: reach,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_areas() {
        assert!((sphere_area(2) - 2.0 * PI).abs() < 1e-12);
        assert!((sphere_area(3) - 4.0 * PI).abs() < 1e-12);
        assert!((sphere_area(4) - 2.0 * PI * PI).abs() < 1e-12);
    }

    #[test]
    fn sphere_rule_integrates_polynomials() {
        let rule = unit_sphere_rule(3, 10).unwrap();
        let area: f64 = rule.iter().map(|(_, w)| w).sum();
        assert!((area - 4.0 * PI).abs() < 1e-12);
        // ∫ x_1^2 dσ = 4π/3 on S^2
        let m2: f64 = rule.iter().map(|(p, w)| w * p[0] * p[0]).sum();
        assert!((m2 - 4.0 * PI / 3.0).abs() < 1e-12);
        let rule4 = unit_sphere_rule(4, 16).unwrap();
        let area4: f64 = rule4.iter().map(|(_, w)| w).sum();
        assert!((area4 - 2.0 * PI * PI).abs() < 1e-12);
    }

    #[test]
    fn poisson_center_and_errors() {
        let l = 7.5;
        let p = poisson_density(l, &[0.0, 0.0, 0.0], &[l, 0.0, 0.0]).unwrap();
        assert!((p - 1.0 / (4.0 * PI * l * l)).abs() < 1e-15);
        assert!(poisson_density(l, &[l, 0.0, 0.0], &[l, 0.0, 0.0]).is_err());
        assert!(poisson_density(l, &[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn poisson_normalization_off_center() {
        let (_, err) = PoissonKernelRef::converged(3, 10.0, &[3.0, -2.0, 4.0], 1e-6).unwrap();
        assert!(err < 1e-6);
    }

    #[test]
    fn phi_bm_center_is_normalized() {
        // Σ over shells: ∫ ω_d ρ^{d-1} φ^BM(0, ρ) dρ = 1
        let (l, m) = (6.0, 3.0);
        let f = |rho: f64| {
            let v = phi_bm(3, l, m, &[0.0; 3], &[rho, 0.0, 0.0]).unwrap().value;
            4.0 * PI * rho * rho * v
        };
        let total = composite_gauss(&f, 0.0, l + 2.0 * m, 16, 64);
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }

    #[test]
    fn phi_bm_off_center_matches_center_route() {
        let (l, m) = (6.0, 3.0);
        let z = [2.0, 5.0, -1.0];
        let a = phi_bm(3, l, m, &[0.0; 3], &z).unwrap().value;
        let b = phi_bm_d3(l, m, &[0.0; 3], &z, 16, 96).unwrap();
        assert!((a - b).abs() < 1e-10 * a.abs().max(1e-12), "{a} {b}");
    }

    #[test]
    fn srw_green_matches_watson_integral() {
        // G(0) of the simple random walk on Z^3 (Watson's integral)
        let watson = 1.516_386_059_151_978;
        let k = SymmetricKernel::simple_random_walk();
        let pts = [LatticePoint::new(&[0, 0, 0]), LatticePoint::new(&[1, 0, 0])];
        let g = green_fourier(&k, &pts, GreenOptions::for_points(&pts)).unwrap();
        assert!((g[0] - watson).abs() < 1e-7, "{}", g[0]);
        // G(0) = 1 + G(e_1) by the first-step decomposition
        assert!((g[1] - (watson - 1.0)).abs() < 1e-7, "{}", g[1]);
    }

    #[test]
    fn srw_green_far_field() {
        let k = SymmetricKernel::simple_random_walk();
        let pts = [LatticePoint::new(&[20, 0, 0]), LatticePoint::new(&[12, 12, 12])];
        let g = green_fourier(&k, &pts, GreenOptions::for_points(&pts)).unwrap();
        for (p, v) in pts.iter().zip(&g) {
            // 3/(2π|x|) up to O(|x|^{-3})
            let lead = 3.0 / (2.0 * PI * p.norm());
            assert!((v / lead - 1.0).abs() < 5.0 / p.norm_sq() as f64, "{p} {v} {lead}");
        }
    }

    #[test]
    fn convolution_powers_match_direct() {
        use crate::grid::convolve_direct;
        let mut pw = ConvolutionPowers::new(3, 1.5).unwrap();
        let base = pw.base().clone();
        let two = convolve_direct(&base, &base).unwrap();
        let three = convolve_direct(&two, &base).unwrap();
        let (g3, cut) = pw.power(3).unwrap();
        assert!(cut < 1e-14);
        let err = three
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - g3.get(&three.point_at(i))).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-14, "{err}");
        let (g1, _) = pw.power(1).unwrap();
        assert_eq!(g1.data(), base.data());
    }

    #[test]
    fn distinct_perms() {
        assert_eq!(distinct_permutations(&[1, 0, 0]).len(), 3);
        assert_eq!(distinct_permutations(&[2, 1, 0]).len(), 6);
        assert_eq!(distinct_permutations(&[1, 1, 1]).len(), 1);
    }

    #[test]
    fn c_d_quadrature_agrees_with_gamma() {
        assert!((c_d_quadrature(3) - c_d_formula(3)).abs() < 1e-12);
        assert!((c_d_quadrature(4) - c_d_formula(4)).abs() < 1e-12);
        // Γ(1/2) = √π
        let d3 = PI.sqrt() / (2.0 * (3.0 * PI).powf(1.5));
        assert!((c_d_formula(3) - d3).abs() < 1e-15);
        assert!((c_d_covariance(3) - 1.0 / (2.0 * PI)).abs() < 1e-15);
    }
}
