//! Simple random walk started at the center of a lattice ball, solved on
//! isometry orbits. `g(0, ·)` is orbit-invariant, so the linear system
//! shrinks by roughly `2^d d!`, and the reduced operator is self-adjoint
//! in the inner product weighted by orbit sizes.

use std::sync::{Arc, Mutex, OnceLock};

use rustc_hash::FxHashMap;

use crate::coarse_grain::radius_table;
use crate::error::{Error, Result};
use crate::grid::DenseGrid;
use crate::kernel::Measure;
use crate::lattice::{isometry_group, LatticePoint, MAX_GROUP_DIM};

/// Canonical representatives `0 <= c_1 <= ... <= c_d` with `|c|^2 <= k`.
pub fn orbit_reps(dim: usize, norm_sq: i64) -> Vec<LatticePoint> {
    fn rec(d: usize, prefix: &mut Vec<i32>, min: i32, left: i64, out: &mut Vec<LatticePoint>) {
        if prefix.len() == d {
            out.push(LatticePoint::new(prefix));
            return;
        }
        let mut c = min;
        // remaining coordinates are >= c, so all of them cost at least c^2
        let remaining = (d - prefix.len()) as i64;
        while remaining * (c as i64) * (c as i64) <= left {
            prefix.push(c);
            rec(d, prefix, c, left - (c as i64) * (c as i64), out);
            prefix.pop();
            c += 1;
        }
    }
    let mut out = Vec::new();
    if norm_sq >= 0 {
        rec(dim, &mut Vec::with_capacity(dim), 0, norm_sq, &mut out);
    }
    out
}

/// Orbit-reduced solution from the center of `V = {|y|^2 <= norm_sq}`.
#[derive(Clone, Debug)]
pub struct CenterSolution {
    pub dim: usize,
    pub norm_sq: i64,
    /// `g_V(0, y)` per representative `y ∈ V`.
    pub green: Vec<(LatticePoint, f64)>,
    /// `π_V(0, z)` per representative `z ∈ ∂V` (value at each orbit point).
    pub exit: Vec<(LatticePoint, f64)>,
}

/// Exit law only, as stored in the cache.
#[derive(Clone, Debug)]
pub struct CenterExit {
    pub dim: usize,
    pub norm_sq: i64,
    pub exit: Vec<(LatticePoint, f64)>,
}

pub fn expand_orbits(dim: usize, reps: &[(LatticePoint, f64)]) -> Result<Measure> {
    let group = isometry_group(dim)?;
    let mut entries = Vec::new();
    for (c, v) in reps {
        for p in group.orbit(c) {
            entries.push((p, *v));
        }
    }
    Ok(Measure::from_entries(entries))
}

impl CenterExit {
    pub fn measure(&self) -> Result<Measure> {
        expand_orbits(self.dim, &self.exit)
    }

    /// Total mass `Σ_z π(0, z)` counted with orbit multiplicities.
    pub fn total(&self) -> f64 {
        self.exit.iter().map(|(c, v)| c.orbit_size() as f64 * v).sum()
    }
}

impl CenterSolution {
    pub fn green_at(&self, y: &LatticePoint) -> f64 {
        let c = y.canonical();
        self.green
            .binary_search_by(|(p, _)| p.cmp(&c))
            .map(|i| self.green[i].1)
            .unwrap_or(0.0)
    }
}

fn weighted_cg(
    reps: &[LatticePoint],
    nbrs: &[Vec<(u32, f64)>],
    weights: &[f64],
    b: &[f64],
    x0: Vec<f64>,
    tol: f64,
) -> Result<Vec<f64>> {
    let n = reps.len();
    let apply = |x: &[f64], y: &mut [f64]| {
        for i in 0..n {
            let mut s = 0.0;
            for &(j, p) in &nbrs[i] {
                s += p * x[j as usize];
            }
            y[i] = x[i] - s;
        }
    };
    let dot = |a: &[f64], c: &[f64]| -> f64 { (0..n).map(|i| weights[i] * a[i] * c[i]).sum() };
    let mut x = x0;
    let mut ax = vec![0.0; n];
    apply(&x, &mut ax);
    let mut r: Vec<f64> = (0..n).map(|i| b[i] - ax[i]).collect();
    let bnorm = dot(b, b).sqrt();
    let mut p = r.clone();
    let mut rs = dot(&r, &r);
    let max_iter = 20 * n + 1000;
    for _ in 0..max_iter {
        if rs.sqrt() <= tol * bnorm {
            return Ok(x);
        }
        apply(&p, &mut ax);
        let alpha = rs / dot(&p, &ax);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ax[i];
        }
        let rs_new = dot(&r, &r);
        let beta = rs_new / rs;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rs = rs_new;
    }
    Err(Error::NoConvergence {
        residual: rs.sqrt() / bnorm,
        iterations: max_iter,
    })
}

/// Solves for `g_V(0, ·)` and `π_V(0, ·)` on orbit representatives.
/// `warm` seeds the iteration with a previous solution (looked up by
/// representative).
pub fn solve_center(
    dim: usize,
    norm_sq: i64,
    warm: Option<&FxHashMap<LatticePoint, f64>>,
    tol: f64,
) -> Result<CenterSolution> {
    if dim == 0 || dim > MAX_GROUP_DIM {
        return Err(Error::InvalidParameter(format!("unsupported dimension {dim}")));
    }
    if norm_sq < 0 {
        return Err(Error::InvalidParameter("negative squared radius".into()));
    }
    let reps = orbit_reps(dim, norm_sq);
    let index: FxHashMap<LatticePoint, u32> =
        reps.iter().enumerate().map(|(i, c)| (c.clone(), i as u32)).collect();
    let step = 1.0 / (2 * dim) as f64;
    let mut nbrs = Vec::with_capacity(reps.len());
    let mut boundary: FxHashMap<LatticePoint, ()> = FxHashMap::default();
    for c in &reps {
        let mut row: Vec<(u32, f64)> = Vec::with_capacity(2 * dim);
        for y in c.neighbors() {
            if y.norm_sq() <= norm_sq {
                let j = index[&y.canonical()];
                match row.iter_mut().find(|e| e.0 == j) {
                    Some(e) => e.1 += step,
                    None => row.push((j, step)),
                }
            } else {
                boundary.insert(y.canonical(), ());
            }
        }
        nbrs.push(row);
    }
    let weights: Vec<f64> = reps.iter().map(|c| c.orbit_size() as f64).collect();
    // (I - M) u = δ_0 / |orbit(0)|, with |orbit(0)| = 1
    let mut b = vec![0.0; reps.len()];
    b[0] = 1.0;
    let x0 = match warm {
        Some(w) => reps.iter().map(|c| w.get(c).copied().unwrap_or(0.0)).collect(),
        None => vec![0.0; reps.len()],
    };
    let u = weighted_cg(&reps, &nbrs, &weights, &b, x0, tol)?;
    let mut exit: Vec<(LatticePoint, f64)> = boundary
        .into_keys()
        .map(|z| {
            let v: f64 = z
                .neighbors()
                .filter(|y| y.norm_sq() <= norm_sq)
                .map(|y| u[index[&y.canonical()] as usize] * step)
                .sum();
            (z, v)
        })
        .collect();
    exit.sort_by(|a, b| a.0.cmp(&b.0));
    let green = reps.into_iter().zip(u).collect();
    Ok(CenterSolution {
        dim,
        norm_sq,
        green,
        exit,
    })
}

type ExitCache = Mutex<FxHashMap<(usize, i64), Arc<CenterExit>>>;
type PiHatCache = Mutex<FxHashMap<(usize, u64), Arc<PiHatRow>>>;

fn exit_cache() -> &'static ExitCache {
    static CACHE: OnceLock<ExitCache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(FxHashMap::default()))
}

fn pi_hat_cache() -> &'static PiHatCache {
    static CACHE: OnceLock<PiHatCache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(FxHashMap::default()))
}

/// Cached `π_{V}(0, ·)` for `V = {|y|^2 <= norm_sq}`.
pub fn center_exit(dim: usize, norm_sq: i64) -> Result<Arc<CenterExit>> {
    if let Some(e) = exit_cache().lock().unwrap().get(&(dim, norm_sq)) {
        return Ok(e.clone());
    }
    let sol = solve_center(dim, norm_sq, None, 1e-13)?;
    let e = Arc::new(CenterExit {
        dim,
        norm_sq,
        exit: sol.exit,
    });
    exit_cache().lock().unwrap().insert((dim, norm_sq), e.clone());
    Ok(e)
}

/// `π̂_m(0, ·)` for the simple random walk, stored on orbit representatives
/// and on a dense cube.
#[derive(Clone, Debug)]
pub struct PiHatRow {
    pub dim: usize,
    pub m: f64,
    pub reps: Vec<(LatticePoint, f64)>,
    pub grid: DenseGrid,
}

impl PiHatRow {
    pub fn get(&self, v: &LatticePoint) -> f64 {
        self.grid.get(v)
    }

    pub fn measure(&self) -> Measure {
        self.grid.to_measure()
    }

    /// Largest `|v|` in the support.
    pub fn support_radius(&self) -> f64 {
        self.reps
            .iter()
            .filter(|(_, v)| *v > 0.0)
            .map(|(c, _)| c.norm())
            .fold(0.0, f64::max)
    }
}

/// Mixture `Σ_k w_k(m) π_{V_{√k}}(0, ·)` with the smoothing weights of
/// scale `m`; the ball solves run in increasing radius with warm starts.
pub fn pi_hat_center(dim: usize, m: f64) -> Result<Arc<PiHatRow>> {
    if !(m > 0.0) {
        return Err(Error::InvalidParameter(format!("smoothing scale must be > 0, got {m}")));
    }
    let key = (dim, m.to_bits());
    if let Some(r) = pi_hat_cache().lock().unwrap().get(&key) {
        return Ok(r.clone());
    }
    let table = radius_table(dim, m)?;
    let mut acc: FxHashMap<LatticePoint, f64> = FxHashMap::default();
    let mut warm: Option<FxHashMap<LatticePoint, f64>> = None;
    for entry in &table {
        let cached = exit_cache().lock().unwrap().get(&(dim, entry.norm_sq)).cloned();
        let exit = match cached {
            Some(e) => e.exit.clone(),
            None => {
                let sol = solve_center(dim, entry.norm_sq, warm.as_ref(), 1e-13)?;
                warm = Some(sol.green.iter().cloned().collect());
                sol.exit
            }
        };
        for (z, v) in exit {
            *acc.entry(z).or_insert(0.0) += entry.weight * v;
        }
    }
    let mut reps: Vec<(LatticePoint, f64)> = acc.into_iter().collect();
    reps.sort_by(|a, b| a.0.cmp(&b.0));
    let radius = reps
        .iter()
        .flat_map(|(c, _)| c.coords().iter().map(|x| x.unsigned_abs() as usize))
        .max()
        .unwrap_or(0);
    let mut grid = DenseGrid::centered(dim, radius)?;
    let group = isometry_group(dim)?;
    for (c, v) in &reps {
        for p in group.orbit(c) {
            grid.add(&p, *v);
        }
    }
    let row = Arc::new(PiHatRow { dim, m, reps, grid });
    pi_hat_cache().lock().unwrap().insert(key, row.clone());
    Ok(row)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exit_solver::{DomainSystem, SolverOptions};
    use crate::kernel::SimpleRandomWalk;
    use crate::lattice::ball;

    #[test]
    fn orbit_reps_cover_ball() {
        let reps = orbit_reps(3, 9);
        let total: usize = reps.iter().map(|c| c.orbit_size()).sum();
        let v = ball(&LatticePoint::origin(3), 3.0).unwrap();
        assert_eq!(total, v.domain().len());
    }

    #[test]
    fn quotient_solve_matches_full_solve() {
        for k in [0i64, 1, 5, 16, 29] {
            let sol = solve_center(3, k, None, 1e-14).unwrap();
            let e = CenterExit {
                dim: 3,
                norm_sq: k,
                exit: sol.exit.clone(),
            };
            let v = ball(&LatticePoint::origin(3), (k as f64).sqrt()).unwrap();
            let sys = DomainSystem::assemble(&SimpleRandomWalk::new(3), v.domain(), SolverOptions::default()).unwrap();
            let full = sys.exit_row(&LatticePoint::origin(3)).unwrap();
            assert!(e.measure().unwrap().l1_dist(&full.measure) < 1e-11, "k={k}");
            assert!((e.total() - 1.0).abs() < 1e-12);
            let g = sys.green_row(&LatticePoint::origin(3)).unwrap();
            for (y, val) in g.values.entries() {
                assert!((sol.green_at(y) - val).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn pi_hat_is_a_probability_with_bounded_support() {
        let row = pi_hat_center(3, 2.5).unwrap();
        assert!((row.grid.total() - 1.0).abs() < 1e-10);
        assert!(row.support_radius() < 2.0 * 2.5 + 1.0);
        assert_eq!(row.get(&LatticePoint::origin(3)), 0.0);
    }
}
