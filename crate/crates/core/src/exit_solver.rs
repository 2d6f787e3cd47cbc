//! Exit measures, Green rows and hitting probabilities of a kernel on a
//! finite domain, plus a Monte Carlo path sampler used as an oracle.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::environment::counter_rng;
use crate::error::{Error, Result};
use crate::kernel::{Kernel, Measure, Row};
use crate::lattice::{Domain, LatticePoint};
use crate::linalg::{bicgstab, conjugate_gradient, Csr};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Relative residual for iterative solves.
    pub tol: f64,
    pub max_iter: usize,
    /// Domains up to this size are factorized densely once a second solve
    /// on the same system is requested.
    pub direct_max: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-12,
            max_iter: 50_000,
            direct_max: 600,
        }
    }
}

/// Distribution of the exit position `X_{τ_V}` started at `start`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExitMeasure {
    pub start: LatticePoint,
    pub measure: Measure,
}

/// Expected visit counts `g_V(start, y)` for `y ∈ V`.
#[derive(Clone, Debug, PartialEq)]
pub struct GreenRow {
    pub start: LatticePoint,
    pub values: Measure,
}

struct DenseFactors {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    lu_t: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

/// The absorbing chain of a kernel killed on leaving `V`, assembled once
/// and reused for any number of row or column solves.
pub struct DomainSystem {
    domain: Domain,
    inner: Csr,
    exits: Csr,
    outside: Vec<LatticePoint>,
    outside_index: FxHashMap<LatticePoint, u32>,
    symmetric: bool,
    opts: SolverOptions,
    dense: OnceLock<Option<DenseFactors>>,
    solves: AtomicUsize,
}

impl DomainSystem {
    pub fn assemble<K: Kernel + ?Sized>(kernel: &K, domain: &Domain, opts: SolverOptions) -> Result<Self> {
        if domain.dim() != kernel.dim() {
            return Err(Error::DimensionMismatch {
                expected: kernel.dim(),
                found: domain.dim(),
            });
        }
        let rows: Vec<Row> = domain
            .points()
            .par_iter()
            .map(|x| kernel.row(x))
            .collect::<Result<_>>()?;
        Self::from_rows(domain, rows, opts)
    }

    /// Builds the system from precomputed rows `p(x, ·)`, `x ∈ V` in
    /// domain order.
    pub fn from_rows(domain: &Domain, rows: Vec<Row>, opts: SolverOptions) -> Result<Self> {
        let mut outside: Vec<LatticePoint> = Vec::new();
        let mut outside_index: FxHashMap<LatticePoint, u32> = FxHashMap::default();
        let mut inner_rows = Vec::with_capacity(rows.len());
        let mut exit_rows = Vec::with_capacity(rows.len());
        for (x, row) in domain.points().iter().zip(rows) {
            let mut ir = Vec::new();
            let mut er = Vec::new();
            for (y, p) in row {
                if p < 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "negative transition {p} from {x}"
                    )));
                }
                if p == 0.0 {
                    continue;
                }
                match domain.index_of(&y) {
                    Some(j) => ir.push((j as u32, p)),
                    None => {
                        let next = outside.len() as u32;
                        let j = *outside_index.entry(y.clone()).or_insert_with(|| {
                            outside.push(y);
                            next
                        });
                        er.push((j, p));
                    }
                }
            }
            inner_rows.push(ir);
            exit_rows.push(er);
        }
        let n = domain.len();
        let inner = Csr::from_rows(n, inner_rows);
        let exits = Csr::from_rows(outside.len(), exit_rows);
        let sys = DomainSystem {
            domain: domain.clone(),
            symmetric: inner.is_symmetric(1e-15),
            inner,
            exits,
            outside,
            outside_index,
            opts,
            dense: OnceLock::new(),
            solves: AtomicUsize::new(0),
        };
        sys.check_exiting()?;
        Ok(sys)
    }

    /// Every state must reach a leaking state (exit mass or row deficit).
    fn check_exiting(&self) -> Result<()> {
        let n = self.domain.len();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::new();
        for i in 0..n {
            let leak = self.exits.row_sum(i) > 0.0 || self.inner.row_sum(i) < 1.0 - 1e-12;
            if leak {
                seen[i] = true;
                queue.push_back(i);
            }
        }
        let preds = self.inner.transpose_pattern();
        while let Some(j) = queue.pop_front() {
            for &i in &preds[j] {
                if !seen[i as usize] {
                    seen[i as usize] = true;
                    queue.push_back(i as usize);
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(i) => Err(Error::NonExiting(self.domain.point(i).clone())),
            None => Ok(()),
        }
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn len(&self) -> usize {
        self.domain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domain.is_empty()
    }

    pub fn outside_points(&self) -> &[LatticePoint] {
        &self.outside
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn options(&self) -> &SolverOptions {
        &self.opts
    }

    fn dense(&self) -> Option<&DenseFactors> {
        self.dense
            .get_or_init(|| {
                let n = self.len();
                if n == 0 || n > self.opts.direct_max {
                    return None;
                }
                let mut a = DMatrix::<f64>::identity(n, n);
                for i in 0..n {
                    for (j, p) in self.inner.row(i) {
                        a[(i, j)] -= p;
                    }
                }
                let at = a.transpose();
                Some(DenseFactors {
                    lu: a.lu(),
                    lu_t: at.lu(),
                })
            })
            .as_ref()
    }

    /// Solves `(I - P) u = b` (column solve) or `w (I - P) = b` (row solve
    /// when `transpose`).
    pub fn solve(&self, b: &[f64], transpose: bool) -> Result<Vec<f64>> {
        let n = self.len();
        if b.len() != n {
            return Err(Error::IndexMismatch(format!(
                "rhs has length {}, domain has {n} points",
                b.len()
            )));
        }
        if n == 0 {
            return Ok(Vec::new());
        }
        let reuse = self.solves.fetch_add(1, Ordering::Relaxed) > 0;
        if let Some(f) = if reuse || n <= 64 { self.dense() } else { None } {
            let rhs = nalgebra::DVector::from_column_slice(b);
            let lu = if transpose { &f.lu_t } else { &f.lu };
            return lu
                .solve(&rhs)
                .map(|v| v.as_slice().to_vec())
                .ok_or(Error::NonExiting(self.domain.point(0).clone()));
        }
        let tol = self.opts.tol;
        let it = self.opts.max_iter;
        if self.symmetric {
            conjugate_gradient(|x, y| self.inner.apply_i_minus(x, y), b, tol, it)
        } else if transpose {
            bicgstab(|x, y| self.inner.apply_i_minus_t(x, y), b, tol, it)
        } else {
            bicgstab(|x, y| self.inner.apply_i_minus(x, y), b, tol, it)
        }
    }

    /// `μ g_V` as a vector over `V` for a measure supported anywhere; mass
    /// outside `V` is ignored here (`g_V(x, ·) = δ_x` there).
    pub fn left_green_dense(&self, mu: &Measure) -> Result<Vec<f64>> {
        let mut b = vec![0.0; self.len()];
        for (x, v) in mu.entries() {
            if let Some(i) = self.domain.index_of(x) {
                b[i] += v;
            }
        }
        if b.iter().all(|v| *v == 0.0) {
            return Ok(b);
        }
        self.solve(&b, true)
    }

    /// `μ g_V` as a measure on Z^d.
    pub fn left_green(&self, mu: &Measure) -> Result<Measure> {
        let w = self.left_green_dense(mu)?;
        let mut entries: Vec<(LatticePoint, f64)> = self
            .domain
            .points()
            .iter()
            .zip(&w)
            .filter(|(_, v)| **v != 0.0)
            .map(|(p, v)| (p.clone(), *v))
            .collect();
        entries.extend(mu.entries().iter().filter(|(x, _)| !self.domain.contains(x)).cloned());
        Ok(Measure::from_entries(entries))
    }

    /// `μ g_V` with `g_V = Σ (1_V p)^k` on all of Z^d: the occupation on `V`
    /// plus the exit law on `∂V` plus the mass of `μ` outside `V`.
    pub fn left_green_full(&self, mu: &Measure) -> Result<Measure> {
        let w = self.left_green_dense(mu)?;
        let mut entries: Vec<(LatticePoint, f64)> = self
            .domain
            .points()
            .iter()
            .zip(&w)
            .filter(|(_, v)| **v != 0.0)
            .map(|(p, v)| (p.clone(), *v))
            .collect();
        entries.extend(self.exit_of_occupation(&w).into_entries());
        entries.extend(mu.entries().iter().filter(|(x, _)| !self.domain.contains(x)).cloned());
        Ok(Measure::from_entries(entries))
    }

    /// Exit distribution `w P_out` of an occupation vector on `V`.
    pub fn exit_of_occupation(&self, w: &[f64]) -> Measure {
        let mut acc = vec![0.0; self.outside.len()];
        for (i, wi) in w.iter().enumerate() {
            if *wi == 0.0 {
                continue;
            }
            for (j, p) in self.exits.row(i) {
                acc[j] += wi * p;
            }
        }
        Measure::from_entries(
            self.outside
                .iter()
                .zip(acc)
                .filter(|(_, v)| *v != 0.0)
                .map(|(p, v)| (p.clone(), v))
                .collect(),
        )
    }

    /// `μ ex_V`.
    pub fn left_exit(&self, mu: &Measure) -> Result<Measure> {
        let w = self.left_green_dense(mu)?;
        let inside = self.exit_of_occupation(&w);
        let outside = mu.restrict(|x| !self.domain.contains(x));
        Ok(inside.add(&outside))
    }

    pub fn exit_row(&self, x: &LatticePoint) -> Result<ExitMeasure> {
        Ok(ExitMeasure {
            start: x.clone(),
            measure: self.left_exit(&Measure::dirac(x.clone()))?,
        })
    }

    pub fn green_row(&self, x: &LatticePoint) -> Result<GreenRow> {
        Ok(GreenRow {
            start: x.clone(),
            values: self.left_green(&Measure::dirac(x.clone()))?,
        })
    }

    /// `E_x[f(X_{τ_V})]` for all `x ∈ V` (a column solve).
    pub fn harmonic_extension<F: Fn(&LatticePoint) -> f64>(&self, f: F) -> Result<Vec<f64>> {
        let fo: Vec<f64> = self.outside.iter().map(&f).collect();
        let b: Vec<f64> = (0..self.len())
            .map(|i| self.exits.row(i).map(|(j, p)| p * fo[j]).sum())
            .collect();
        self.solve(&b, false)
    }

    pub fn outside_index(&self, p: &LatticePoint) -> Option<usize> {
        self.outside_index.get(p).map(|&j| j as usize)
    }

    /// Samples one exit path from state index `i`; returns the exit point
    /// index, `None` if killed, or `Err(())` if the step cap was reached.
    fn sample_path<R: Rng>(&self, mut i: usize, cap: u64, rng: &mut R) -> std::result::Result<Option<usize>, ()> {
        for _ in 0..cap {
            let mut u: f64 = rng.gen();
            let mut next = None;
            for (j, p) in self.inner.row(i) {
                if u < p {
                    next = Some(Ok(j));
                    break;
                }
                u -= p;
            }
            if next.is_none() {
                for (j, p) in self.exits.row(i) {
                    if u < p {
                        next = Some(Err(j));
                        break;
                    }
                    u -= p;
                }
            }
            match next {
                Some(Ok(j)) => i = j,
                Some(Err(j)) => return Ok(Some(j)),
                None => return Ok(None),
            }
        }
        Err(())
    }
}

pub fn exit_measure<K: Kernel + ?Sized>(
    kernel: &K,
    v: &Domain,
    x: &LatticePoint,
    opts: SolverOptions,
) -> Result<ExitMeasure> {
    if !v.contains(x) {
        return Ok(ExitMeasure {
            start: x.clone(),
            measure: Measure::dirac(x.clone()),
        });
    }
    DomainSystem::assemble(kernel, v, opts)?.exit_row(x)
}

pub fn green_row<K: Kernel + ?Sized>(
    kernel: &K,
    v: &Domain,
    x: &LatticePoint,
    opts: SolverOptions,
) -> Result<GreenRow> {
    if !v.contains(x) {
        return Ok(GreenRow {
            start: x.clone(),
            values: Measure::dirac(x.clone()),
        });
    }
    DomainSystem::assemble(kernel, v, opts)?.green_row(x)
}

/// `P_x(T_A < τ_V)` for `A ⊂ V`.
pub fn hit_before_exit<K: Kernel + ?Sized>(
    kernel: &K,
    v: &Domain,
    a: &Domain,
    x: &LatticePoint,
    opts: SolverOptions,
) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::EmptyRegion);
    }
    if !a.is_subset_of(v) {
        return Err(Error::InvalidParameter("target set must lie inside V".into()));
    }
    if a.contains(x) {
        return Ok(1.0);
    }
    if !v.contains(x) {
        return Ok(0.0);
    }
    let rest = v.filter(|p| !a.contains(p));
    let sys = DomainSystem::assemble(kernel, &rest, opts)?;
    let h = sys.harmonic_extension(|p| if a.contains(p) { 1.0 } else { 0.0 })?;
    let i = rest.index_of(x).expect("x in V \\ A");
    Ok(h[i].clamp(0.0, 1.0))
}

/// Empirical exit distribution from `n_paths` independent paths.
#[derive(Clone, Debug, PartialEq)]
pub struct McExit {
    pub start: LatticePoint,
    pub n_paths: usize,
    pub capped: usize,
    pub killed: usize,
    pub counts: Vec<(LatticePoint, u64)>,
}

impl McExit {
    pub fn empirical(&self) -> Measure {
        Measure::from_entries(
            self.counts
                .iter()
                .map(|(p, c)| (p.clone(), *c as f64 / self.n_paths as f64))
                .collect(),
        )
    }
}

/// Default step cap `50 R²`, `R` the largest distance from `x` to a point of `V`.
pub fn default_step_cap(v: &Domain, x: &LatticePoint) -> u64 {
    let r2 = v.points().iter().map(|p| p.dist_sq(x)).max().unwrap_or(0).max(1);
    50 * (r2 as u64 + 2 * (r2 as f64).sqrt() as u64 + 1)
}

pub fn mc_exit<K: Kernel + ?Sized>(
    kernel: &K,
    v: &Domain,
    x: &LatticePoint,
    n_paths: usize,
    seed: u64,
    step_cap: Option<u64>,
) -> Result<McExit> {
    if n_paths == 0 {
        return Err(Error::InvalidParameter("n_paths must be >= 1".into()));
    }
    if !v.contains(x) {
        return Ok(McExit {
            start: x.clone(),
            n_paths,
            capped: 0,
            killed: 0,
            counts: vec![(x.clone(), n_paths as u64)],
        });
    }
    let sys = DomainSystem::assemble(kernel, v, SolverOptions::default())?;
    let cap = step_cap.unwrap_or_else(|| default_step_cap(v, x));
    let start = v.index_of(x).unwrap();
    let nout = sys.outside.len();
    let chunk = 4096usize;
    let nchunks = n_paths.div_ceil(chunk);
    let (counts, capped, killed) = (0..nchunks)
        .into_par_iter()
        .map(|c| {
            let mut counts = vec![0u64; nout];
            let (mut capped, mut killed) = (0usize, 0usize);
            for path in c * chunk..((c + 1) * chunk).min(n_paths) {
                let mut rng = counter_rng(b"exitlab.path", &[seed as i64, path as i64]);
                match sys.sample_path(start, cap, &mut rng) {
                    Ok(Some(j)) => counts[j] += 1,
                    Ok(None) => killed += 1,
                    Err(()) => capped += 1,
                }
            }
            (counts, capped, killed)
        })
        .reduce(
            || (vec![0u64; nout], 0, 0),
            |(mut a, ca, ka), (b, cb, kb)| {
                a.iter_mut().zip(b).for_each(|(u, v)| *u += v);
                (a, ca + cb, ka + kb)
            },
        );
    if capped * 1000 > n_paths {
        return Err(Error::StepCapExceeded {
            capped,
            paths: n_paths,
        });
    }
    let mut out: Vec<(LatticePoint, u64)> = sys
        .outside
        .iter()
        .cloned()
        .zip(counts)
        .filter(|(_, c)| *c > 0)
        .collect();
    out.sort();
    Ok(McExit {
        start: x.clone(),
        n_paths,
        capped,
        killed,
        counts: out,
    })
}
