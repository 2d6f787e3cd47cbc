//! Transition kernels on Z^d and sparse signed measures.

use std::sync::Arc;

use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::lattice::{Domain, LatticePoint};

/// One kernel row `p(x, ·)` as `(target, weight)` pairs.
pub type Row = Vec<(LatticePoint, f64)>;

pub trait Kernel: Send + Sync {
    fn dim(&self) -> usize;

    /// Row `p(x, ·)`; errors if the kernel is undefined at `x`.
    fn row(&self, x: &LatticePoint) -> Result<Row>;

    fn is_nearest_neighbor(&self) -> bool {
        false
    }

    /// True only for the translation-invariant simple random walk, which
    /// lets solvers reuse cached exit laws.
    fn is_simple_random_walk(&self) -> bool {
        false
    }
}

impl<K: Kernel + ?Sized> Kernel for &K {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn row(&self, x: &LatticePoint) -> Result<Row> {
        (**self).row(x)
    }
    fn is_nearest_neighbor(&self) -> bool {
        (**self).is_nearest_neighbor()
    }
    fn is_simple_random_walk(&self) -> bool {
        (**self).is_simple_random_walk()
    }
}

impl<K: Kernel + ?Sized> Kernel for Arc<K> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn row(&self, x: &LatticePoint) -> Result<Row> {
        (**self).row(x)
    }
    fn is_nearest_neighbor(&self) -> bool {
        (**self).is_nearest_neighbor()
    }
    fn is_simple_random_walk(&self) -> bool {
        (**self).is_simple_random_walk()
    }
}

/// `p^RW(x, x ± e_i) = 1/(2d)`.
#[derive(Clone, Copy, Debug)]
pub struct SimpleRandomWalk {
    dim: usize,
}

impl SimpleRandomWalk {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1);
        SimpleRandomWalk { dim }
    }
}

impl Kernel for SimpleRandomWalk {
    fn dim(&self) -> usize {
        self.dim
    }

    fn row(&self, x: &LatticePoint) -> Result<Row> {
        if x.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.dim(),
            });
        }
        let w = 1.0 / (2 * self.dim) as f64;
        Ok(x.neighbors().map(|y| (y, w)).collect())
    }

    fn is_nearest_neighbor(&self) -> bool {
        true
    }

    fn is_simple_random_walk(&self) -> bool {
        true
    }
}

/// Kernel given by an explicit table of rows.
#[derive(Clone, Debug, Default)]
pub struct SparseKernel {
    dim: usize,
    rows: FxHashMap<LatticePoint, Row>,
    /// Rows not in the table fall back to the identity `δ_x` when set.
    identity_outside: bool,
}

impl SparseKernel {
    pub fn new(dim: usize) -> Self {
        SparseKernel {
            dim,
            rows: FxHashMap::default(),
            identity_outside: false,
        }
    }

    /// Undefined rows behave as `δ_x` (useful for `1_V`-restricted kernels).
    pub fn with_identity_outside(mut self) -> Self {
        self.identity_outside = true;
        self
    }

    pub fn insert_row(&mut self, x: LatticePoint, mut row: Row) {
        row.sort_by(|a, b| a.0.cmp(&b.0));
        self.rows.insert(x, row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn sites(&self) -> Domain {
        Domain::from_points(self.dim, self.rows.keys().cloned().collect()).expect("consistent dim")
    }

    pub fn get(&self, x: &LatticePoint) -> Option<&Row> {
        self.rows.get(x)
    }

    /// Largest jump length `|y - x|` over all rows.
    pub fn range(&self) -> f64 {
        self.rows
            .iter()
            .flat_map(|(x, row)| row.iter().map(move |(y, _)| y.dist(x)))
            .fold(0.0, f64::max)
    }

    /// Largest deviation of a row sum from 1.
    pub fn max_row_defect(&self) -> f64 {
        self.rows
            .values()
            .map(|row| (row.iter().map(|(_, p)| p).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Materializes `k` on the given sites.
    pub fn from_kernel<K: Kernel + ?Sized>(k: &K, sites: &Domain) -> Result<Self> {
        let mut out = SparseKernel::new(k.dim());
        for x in sites.points() {
            out.insert_row(x.clone(), k.row(x)?);
        }
        Ok(out)
    }
}

impl Kernel for SparseKernel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn row(&self, x: &LatticePoint) -> Result<Row> {
        match self.rows.get(x) {
            Some(r) => Ok(r.clone()),
            None if self.identity_outside => Ok(vec![(x.clone(), 1.0)]),
            None => Err(Error::KernelUndefined(x.clone())),
        }
    }
}

/// Finitely supported signed measure on Z^d, sorted by point.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Measure {
    entries: Vec<(LatticePoint, f64)>,
}

impl Measure {
    pub fn new() -> Self {
        Measure::default()
    }

    pub fn dirac(x: LatticePoint) -> Self {
        Measure {
            entries: vec![(x, 1.0)],
        }
    }

    /// Sums duplicate points and drops exact zeros.
    pub fn from_entries(mut entries: Vec<(LatticePoint, f64)>) -> Self {
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        let mut out: Vec<(LatticePoint, f64)> = Vec::with_capacity(entries.len());
        for (p, v) in entries {
            match out.last_mut() {
                Some((q, w)) if *q == p => *w += v,
                _ => out.push((p, v)),
            }
        }
        out.retain(|(_, v)| *v != 0.0);
        Measure { entries: out }
    }

    pub fn from_map(map: FxHashMap<LatticePoint, f64>) -> Self {
        Self::from_entries(map.into_iter().collect())
    }

    pub fn entries(&self) -> &[(LatticePoint, f64)] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<(LatticePoint, f64)> {
        self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, p: &LatticePoint) -> f64 {
        self.entries
            .binary_search_by(|(q, _)| q.cmp(p))
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v).sum()
    }

    pub fn l1(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v.abs()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v.abs()).fold(0.0, f64::max)
    }

    pub fn scale(&self, c: f64) -> Measure {
        Measure {
            entries: self.entries.iter().map(|(p, v)| (p.clone(), c * v)).collect(),
        }
    }

    pub fn add(&self, other: &Measure) -> Measure {
        self.combine(other, 1.0)
    }

    pub fn sub(&self, other: &Measure) -> Measure {
        self.combine(other, -1.0)
    }

    fn combine(&self, other: &Measure, c: f64) -> Measure {
        let mut out = Vec::with_capacity(self.len() + other.len());
        let (mut i, mut j) = (0, 0);
        while i < self.entries.len() || j < other.entries.len() {
            let ord = match (self.entries.get(i), other.entries.get(j)) {
                (Some(a), Some(b)) => a.0.cmp(&b.0),
                (Some(_), None) => std::cmp::Ordering::Less,
                _ => std::cmp::Ordering::Greater,
            };
            match ord {
                std::cmp::Ordering::Less => {
                    out.push(self.entries[i].clone());
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    let (p, v) = &other.entries[j];
                    out.push((p.clone(), c * v));
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    let v = self.entries[i].1 + c * other.entries[j].1;
                    out.push((self.entries[i].0.clone(), v));
                    i += 1;
                    j += 1;
                }
            }
        }
        Measure { entries: out }
    }

    /// `‖self − other‖₁`.
    pub fn l1_dist(&self, other: &Measure) -> f64 {
        self.sub(other).l1()
    }

    /// Restriction to points satisfying `keep`.
    pub fn restrict<F: Fn(&LatticePoint) -> bool>(&self, keep: F) -> Measure {
        Measure {
            entries: self.entries.iter().filter(|(p, _)| keep(p)).cloned().collect(),
        }
    }

    pub fn mass_on<F: Fn(&LatticePoint) -> bool>(&self, keep: F) -> f64 {
        self.entries.iter().filter(|(p, _)| keep(p)).map(|(_, v)| v).sum()
    }

    /// Left action `(μ K)(·) = Σ_x μ(x) K(x, ·)`.
    pub fn apply<K: Kernel + ?Sized>(&self, k: &K) -> Result<Measure> {
        let mut acc: FxHashMap<LatticePoint, f64> = FxHashMap::default();
        for (x, v) in &self.entries {
            for (y, p) in k.row(x)? {
                *acc.entry(y).or_insert(0.0) += v * p;
            }
        }
        Ok(Measure::from_map(acc))
    }

    pub fn translate(&self, v: &LatticePoint) -> Measure {
        Measure {
            entries: self.entries.iter().map(|(p, w)| (p.add(v), *w)).collect(),
        }
    }
}
