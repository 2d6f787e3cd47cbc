#![allow(dead_code)]

use exitlab::environment::{Environment, EnvironmentLaw, SiteFamily};
use exitlab::kernel::{Kernel, Measure, SparseKernel};
use exitlab::lattice::{ball, Domain, LatticePoint};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Exit law and Green row by iterating `μ ↦ μ p` on `V` until the mass
/// still inside drops below `cutoff`. Shares no code with the solvers.
pub fn power_iteration<K: Kernel>(k: &K, v: &Domain, x: &LatticePoint, cutoff: f64) -> (Measure, Measure) {
    let mut inside: BTreeMap<LatticePoint, f64> = BTreeMap::new();
    inside.insert(x.clone(), 1.0);
    let mut exit: BTreeMap<LatticePoint, f64> = BTreeMap::new();
    let mut green: BTreeMap<LatticePoint, f64> = BTreeMap::new();
    for _ in 0..2_000_000 {
        let mass: f64 = inside.values().sum();
        if mass < cutoff {
            break;
        }
        let mut next = BTreeMap::new();
        for (y, w) in &inside {
            *green.entry(y.clone()).or_insert(0.0) += w;
            for (z, p) in k.row(y).expect("row defined on V") {
                let target = if v.contains(&z) { &mut next } else { &mut exit };
                *target.entry(z).or_insert(0.0) += w * p;
            }
        }
        inside = next;
    }
    (
        Measure::from_entries(exit.into_iter().collect()),
        Measure::from_entries(green.into_iter().collect()),
    )
}

/// Random domain of at most `max_points` sites: a ball, a box or a ball
/// with holes, all containing the origin.
pub fn random_domain(rng: &mut ChaCha8Rng, dim: usize, max_points: usize) -> Domain {
    loop {
        let d = match rng.gen_range(0..3) {
            0 => ball(&LatticePoint::origin(dim), rng.gen_range(2.0..6.2)).unwrap().domain().clone(),
            1 => {
                let hi: Vec<i32> = (0..dim).map(|_| rng.gen_range(1..5)).collect();
                let lo: Vec<i32> = (0..dim).map(|_| -rng.gen_range(1..5)).collect();
                let mut pts = Vec::new();
                exitlab::lattice::for_each_in_box(&lo, &hi, |p| pts.push(p.clone()));
                Domain::from_points(dim, pts).unwrap()
            }
            _ => {
                let b = ball(&LatticePoint::origin(dim), rng.gen_range(3.0..6.0)).unwrap();
                let holes: Vec<LatticePoint> = (0..4)
                    .map(|_| {
                        let c: Vec<i32> = (0..dim).map(|_| rng.gen_range(-3..=3)).collect();
                        LatticePoint::new(&c)
                    })
                    .filter(|p| p.norm_sq() > 0)
                    .collect();
                b.domain().filter(|p| !holes.contains(p))
            }
        };
        if d.len() <= max_points {
            return d;
        }
    }
}

pub fn random_point(rng: &mut ChaCha8Rng, v: &Domain) -> LatticePoint {
    v.point(rng.gen_range(0..v.len())).clone()
}

/// Environment on `v` from a randomly chosen family.
pub fn random_environment(rng: &mut ChaCha8Rng, dim: usize, v: &Domain) -> Environment {
    let eps = rng.gen_range(0.0..0.15);
    let family = match rng.gen_range(0..3) {
        0 => SiteFamily::UniformCube,
        1 => SiteFamily::Biased {
            drift: rng.gen_range(0.0..0.5),
        },
        _ => {
            let mut probs = vec![1.0 / (2 * dim) as f64; 2 * dim];
            probs[0] += eps / 2.0;
            probs[1] -= eps / 2.0;
            SiteFamily::Constant { probs }
        }
    };
    let symmetrize = matches!(family, SiteFamily::UniformCube) && rng.gen_bool(0.5);
    let law = EnvironmentLaw::new(dim, eps, family, symmetrize).unwrap();
    law.sample_environment(v, rng.gen()).unwrap()
}

/// Kernel with jumps of length up to two, defined on `v`.
pub fn random_long_range(rng: &mut ChaCha8Rng, dim: usize, v: &Domain) -> SparseKernel {
    let steps: Vec<LatticePoint> = {
        let mut s = Vec::new();
        exitlab::lattice::for_each_in_box(&vec![-2; dim], &vec![2; dim], |p| {
            if p.norm_sq() > 0 && p.norm_sq() <= 4 {
                s.push(p.clone())
            }
        });
        s
    };
    let mut k = SparseKernel::new(dim);
    for x in v.points() {
        let w: Vec<f64> = steps.iter().map(|_| rng.gen_range(0.2..1.0)).collect();
        let total: f64 = w.iter().sum();
        k.insert_row(x.clone(), steps.iter().zip(&w).map(|(s, wi)| (x.add(s), wi / total)).collect());
    }
    k
}
