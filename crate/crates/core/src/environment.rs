//! i.i.d. random environments with site law supported on `P_eps` and
//! (optionally) symmetrized under the lattice isometry group.
//!
//! Every site draw is keyed by `(master seed, site coordinates)`, so an
//! environment is a pure function of `(law, region, seed)` and restricting
//! to a subregion gives exactly the environment sampled on that subregion.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::kernel::{Kernel, Row};
use crate::lattice::{isometry_group, Domain, IsometryGroup, LatticePoint};
use crate::stats::ks_two_sample;

/// Jump law `q(±e_i)` of one site, stored as `+e_1, -e_1, +e_2, -e_2, ...`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteDistribution {
    probs: SmallVec<[f64; 8]>,
}

impl SiteDistribution {
    pub fn uniform(dim: usize) -> Self {
        SiteDistribution {
            probs: smallvec::smallvec![1.0 / (2 * dim) as f64; 2 * dim],
        }
    }

    /// Validates row sum and the `P_eps` box constraint.
    pub fn new(probs: &[f64], eps: f64) -> Result<Self> {
        let q = SiteDistribution {
            probs: SmallVec::from_slice(probs),
        };
        q.check(eps)?;
        Ok(q)
    }

    pub fn dim(&self) -> usize {
        self.probs.len() / 2
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn check(&self, eps: f64) -> Result<()> {
        if self.probs.is_empty() || !self.probs.len().is_multiple_of(2) {
            return Err(Error::OutsideBox(format!(
                "expected 2d probabilities, got {}",
                self.probs.len()
            )));
        }
        let center = 1.0 / self.probs.len() as f64;
        let sum: f64 = self.probs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::OutsideBox(format!("row sum {sum}")));
        }
        let slack = eps + 4.0 * f64::EPSILON;
        if let Some((i, q)) = self
            .probs
            .iter()
            .enumerate()
            .find(|(_, &q)| !(q >= 0.0) || (q - center).abs() > slack)
        {
            return Err(Error::OutsideBox(format!(
                "q[{i}] = {q} deviates from {center} by more than eps = {eps}"
            )));
        }
        Ok(())
    }

    /// `q'(e) = q(f(e))`.
    pub fn transformed(&self, f: &crate::lattice::Isometry) -> Self {
        SiteDistribution {
            probs: (0..self.probs.len())
                .map(|dir| self.probs[f.map_direction(dir)])
                .collect(),
        }
    }
}

/// Generator family for raw site draws.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum SiteFamily {
    /// `q = 1/(2d) + eps * u`, `u` uniform on `[-1,1]^{2d}`, centered to
    /// zero sum and rescaled back into the unit box.
    UniformCube,
    /// Uniform cube at half amplitude plus a drift `drift * eps` toward `+e_1`.
    Biased { drift: f64 },
    /// The same distribution at every site.
    Constant { probs: Vec<f64> },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnvironmentLaw {
    pub dim: usize,
    pub eps: f64,
    pub family: SiteFamily,
    pub symmetrize: bool,
    #[serde(skip)]
    group: Option<IsometryGroup>,
}

impl PartialEq for EnvironmentLaw {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.eps == other.eps
            && self.family == other.family
            && self.symmetrize == other.symmetrize
    }
}

impl EnvironmentLaw {
    pub fn new(dim: usize, eps: f64, family: SiteFamily, symmetrize: bool) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be >= 1".into()));
        }
        if !(eps >= 0.0) || eps >= 1.0 / (2 * dim) as f64 {
            return Err(Error::InvalidParameter(format!(
                "eps must lie in [0, 1/(2d)), got {eps}"
            )));
        }
        if let SiteFamily::Biased { drift } = family {
            if !(0.0..=0.5).contains(&drift) {
                return Err(Error::InvalidParameter(format!(
                    "biased family drift must lie in [0, 1/2], got {drift}"
                )));
            }
        }
        if let SiteFamily::Constant { probs } = &family {
            SiteDistribution::new(probs, eps)?;
            if probs.len() != 2 * dim {
                return Err(Error::DimensionMismatch {
                    expected: 2 * dim,
                    found: probs.len(),
                });
            }
        }
        let group = if symmetrize {
            Some(isometry_group(dim)?)
        } else {
            None
        };
        Ok(EnvironmentLaw {
            dim,
            eps,
            family,
            symmetrize,
            group,
        })
    }

    /// Isotropic uniform-cube law, the default experimental family.
    pub fn isotropic(dim: usize, eps: f64) -> Result<Self> {
        Self::new(dim, eps, SiteFamily::UniformCube, true)
    }

    /// Deserialized laws lose the cached group; rebuild it.
    pub fn revalidated(self) -> Result<Self> {
        Self::new(self.dim, self.eps, self.family, self.symmetrize)
    }

    fn group(&self) -> Option<&IsometryGroup> {
        self.group.as_ref()
    }

    fn raw_draw(&self, rng: &mut ChaCha8Rng) -> SmallVec<[f64; 8]> {
        let n = 2 * self.dim;
        let center = 1.0 / n as f64;
        let mut cube = |amp: f64| -> SmallVec<[f64; 8]> {
            let mut u: SmallVec<[f64; 8]> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let mean = u.iter().sum::<f64>() / n as f64;
            u.iter_mut().for_each(|v| *v -= mean);
            let max = u.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            u.iter().map(|v| center + amp * v / max).collect()
        };
        match &self.family {
            SiteFamily::UniformCube => cube(self.eps),
            SiteFamily::Biased { drift } => {
                let mut q = cube(self.eps * (1.0 - drift));
                q[0] += drift * self.eps;
                q[1] -= drift * self.eps;
                q
            }
            SiteFamily::Constant { probs } => SmallVec::from_slice(probs),
        }
    }

    /// One site law keyed by an integer counter tuple.
    pub fn sample_site(&self, counter: &[i64]) -> Result<SiteDistribution> {
        if self.eps == 0.0 && !matches!(self.family, SiteFamily::Constant { .. }) {
            return Ok(SiteDistribution::uniform(self.dim));
        }
        let mut rng = counter_rng(b"exitlab.site", counter);
        let mut probs = self.raw_draw(&mut rng);
        // Renormalize rounding drift in the last place.
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 0.0 {
            let last = probs.len() - 1;
            probs[last] += 1.0 - sum;
        }
        let mut q = SiteDistribution { probs };
        if self.symmetrize {
            let group = self.group().expect("group built with symmetrization");
            let f = &group.elements()[rng.gen_range(0..group.len())];
            q = q.transformed(f);
        }
        q.check(self.eps)?;
        Ok(q)
    }

    /// Draws an environment on `region`; reproducible bit-for-bit and
    /// independent of traversal order.
    pub fn sample_environment(&self, region: &Domain, seed: u64) -> Result<Environment> {
        if region.is_empty() {
            return Err(Error::EmptyRegion);
        }
        if region.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: region.dim(),
            });
        }
        let rows: Vec<SiteDistribution> = region
            .points()
            .par_iter()
            .map(|p| self.sample_site(&site_counter(seed, p)))
            .collect::<Result<_>>()?;
        let mut probs = Vec::with_capacity(rows.len() * 2 * self.dim);
        for r in &rows {
            probs.extend_from_slice(r.probs());
        }
        Ok(Environment {
            law: self.clone(),
            seed,
            region: region.clone(),
            probs,
        })
    }
}

fn site_counter(seed: u64, p: &LatticePoint) -> SmallVec<[i64; 8]> {
    let mut c: SmallVec<[i64; 8]> = SmallVec::new();
    c.push(seed as i64);
    c.extend(p.coords().iter().map(|&v| v as i64));
    c
}

/// ChaCha stream keyed by a domain tag and integer counters.
pub fn counter_rng(tag: &[u8], counter: &[i64]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(tag);
    for c in counter {
        h.update(c.to_le_bytes());
    }
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Child seed derived from a master seed and a job index.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut rng = counter_rng(b"exitlab.seed", &[seed as i64, index as i64]);
    rng.gen()
}

/// Realized environment `omega` on a finite region.
#[derive(Clone, Debug)]
pub struct Environment {
    law: EnvironmentLaw,
    seed: u64,
    region: Domain,
    probs: Vec<f64>,
}

impl PartialEq for Environment {
    fn eq(&self, other: &Self) -> bool {
        self.law == other.law
            && self.seed == other.seed
            && self.region.points() == other.region.points()
            && self.probs.len() == other.probs.len()
            && self
                .probs
                .iter()
                .zip(other.probs.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl Environment {
    pub fn law(&self) -> &EnvironmentLaw {
        &self.law
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn region(&self) -> &Domain {
        &self.region
    }

    pub fn site(&self, p: &LatticePoint) -> Result<&[f64]> {
        let i = self
            .region
            .index_of(p)
            .ok_or_else(|| Error::OutsideRegion(p.clone()))?;
        let n = 2 * self.law.dim;
        Ok(&self.probs[i * n..(i + 1) * n])
    }

    pub fn covers(&self, region: &Domain) -> bool {
        region.points().iter().all(|p| self.region.contains(p))
    }

    /// Restriction to a subregion (must be covered).
    pub fn restrict(&self, sub: &Domain) -> Result<Environment> {
        let n = 2 * self.law.dim;
        let mut probs = Vec::with_capacity(sub.len() * n);
        for p in sub.points() {
            probs.extend_from_slice(self.site(p)?);
        }
        Ok(Environment {
            law: self.law.clone(),
            seed: self.seed,
            region: sub.clone(),
            probs,
        })
    }

    pub fn region_hash(&self) -> String {
        region_hash(&self.region)
    }

    /// Header line (JSON) followed by little-endian binary rows:
    /// `d` i32 coordinates then `2d` f64 probabilities per site.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = EnvHeader {
            format: ENV_FORMAT.into(),
            version: 1,
            dim: self.law.dim,
            eps: self.law.eps,
            seed: self.seed,
            symmetrize: self.law.symmetrize,
            family: self.law.family.clone(),
            sites: self.region.len(),
            region_hash: self.region_hash(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        let n = 2 * self.law.dim;
        for (i, p) in self.region.points().iter().enumerate() {
            for c in p.coords() {
                w.write_all(&c.to_le_bytes())?;
            }
            for q in &self.probs[i * n..(i + 1) * n] {
                w.write_all(&q.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Environment> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::InvalidParameter("missing environment header".into()))?;
        let header: EnvHeader = serde_json::from_slice(&bytes[..nl])?;
        if header.format != ENV_FORMAT {
            return Err(Error::InvalidParameter(format!(
                "unknown format {}",
                header.format
            )));
        }
        let d = header.dim;
        let rec = 4 * d + 8 * 2 * d;
        let body = &bytes[nl + 1..];
        if body.len() != rec * header.sites {
            return Err(Error::InvalidParameter(format!(
                "environment body has {} bytes, expected {}",
                body.len(),
                rec * header.sites
            )));
        }
        let mut points = Vec::with_capacity(header.sites);
        let mut probs = Vec::with_capacity(header.sites * 2 * d);
        for chunk in body.chunks_exact(rec) {
            let coords: Vec<i32> = chunk[..4 * d]
                .chunks_exact(4)
                .map(|b| i32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            points.push(LatticePoint::new(&coords));
            probs.extend(
                chunk[4 * d..]
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().unwrap())),
            );
        }
        let region = Domain::from_points(d, points.clone())?;
        if region.points() != points.as_slice() {
            return Err(Error::InvalidParameter("sites not in canonical order".into()));
        }
        if region_hash(&region) != header.region_hash {
            return Err(Error::InvalidParameter("region hash mismatch".into()));
        }
        let law = EnvironmentLaw::new(d, header.eps, header.family, header.symmetrize)?;
        Ok(Environment {
            law,
            seed: header.seed,
            region,
            probs,
        })
    }
}

const ENV_FORMAT: &str = "exitlab-environment";

#[derive(Serialize, Deserialize)]
struct EnvHeader {
    format: String,
    version: u32,
    dim: usize,
    eps: f64,
    seed: u64,
    symmetrize: bool,
    family: SiteFamily,
    sites: usize,
    region_hash: String,
}

pub fn region_hash(region: &Domain) -> String {
    let mut h = Sha256::new();
    h.update((region.dim() as u64).to_le_bytes());
    for p in region.points() {
        for c in p.coords() {
            h.update(c.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

impl Kernel for Environment {
    fn dim(&self) -> usize {
        self.law.dim
    }

    fn row(&self, x: &LatticePoint) -> Result<Row> {
        let q = self.site(x)?;
        Ok(q.iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(dir, &p)| (x.neighbor(dir), p))
            .collect())
    }

    fn is_nearest_neighbor(&self) -> bool {
        true
    }
}

/// Two-sample isotropy check for one generator.
#[derive(Clone, Debug, Serialize)]
pub struct GeneratorTest {
    pub generator: String,
    /// Largest per-coordinate two-sample Kolmogorov–Smirnov distance.
    pub statistic: f64,
    /// Smallest per-coordinate p-value.
    pub min_p_value: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct IsotropyReport {
    pub n: usize,
    pub significance: f64,
    pub tests: Vec<GeneratorTest>,
}

impl IsotropyReport {
    pub fn pass(&self) -> bool {
        self.tests.iter().all(|t| t.pass)
    }
}

/// For each group generator `f`, compares the empirical law of `q` (first
/// half of the draws) with that of `q ∘ f` (second half), coordinate by
/// coordinate, with a Bonferroni correction over the `2d` coordinates.
pub fn verify_isotropy(law: &EnvironmentLaw, n: usize, seed: u64, significance: f64) -> Result<IsotropyReport> {
    if n < 100 {
        return Err(Error::InvalidParameter(format!("need n >= 100, got {n}")));
    }
    let group = isometry_group(law.dim)?;
    let draws: Vec<SiteDistribution> = (0..n)
        .into_par_iter()
        .map(|k| law.sample_site(&[seed as i64, k as i64]))
        .collect::<Result<_>>()?;
    let half = n / 2;
    let (a, b) = draws.split_at(half);
    let ncoord = 2 * law.dim;
    let tests = group
        .generators()
        .iter()
        .enumerate()
        .map(|(gi, f)| {
            let mut stat = 0.0f64;
            let mut min_p = 1.0f64;
            for j in 0..ncoord {
                let xa: Vec<f64> = a.iter().map(|q| q.probs()[j]).collect();
                let xb: Vec<f64> = b.iter().map(|q| q.transformed(f).probs()[j]).collect();
                let (dstat, p) = ks_two_sample(&xa, &xb);
                stat = stat.max(dstat);
                min_p = min_p.min(p);
            }
            GeneratorTest {
                generator: format!("g{gi}"),
                statistic: stat,
                min_p_value: min_p,
                pass: min_p >= significance / ncoord as f64,
            }
        })
        .collect();
    Ok(IsotropyReport {
        n,
        significance,
        tests,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::ball;

    #[test]
    fn eps_zero_gives_simple_random_walk() {
        let law = EnvironmentLaw::isotropic(3, 0.0).unwrap();
        for k in 0..20 {
            let q = law.sample_site(&[7, k]).unwrap();
            assert!(q.probs().iter().all(|&p| p == 1.0 / 6.0));
        }
    }

    #[test]
    fn uniform_cube_respects_box() {
        let law = EnvironmentLaw::new(3, 0.05, SiteFamily::UniformCube, false).unwrap();
        for k in 0..2000 {
            let q = law.sample_site(&[1, k]).unwrap();
            let s: f64 = q.probs().iter().sum();
            assert!((s - 1.0).abs() <= 1e-12);
            for &p in q.probs() {
                assert!((1.0 / 6.0 - 0.05 - 1e-15..=1.0 / 6.0 + 0.05 + 1e-15).contains(&p));
            }
        }
    }

    #[test]
    fn symmetrized_drift_vanishes_on_average() {
        let law = EnvironmentLaw::isotropic(3, 0.05).unwrap();
        let n = 100_000;
        let xs: Vec<f64> = (0..n)
            .map(|k| {
                let q = law.sample_site(&[99, k]).unwrap();
                q.probs()[0] - q.probs()[1]
            })
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!(mean.abs() < 4.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn invalid_laws_are_rejected() {
        assert!(EnvironmentLaw::isotropic(3, 0.2).is_err());
        assert!(EnvironmentLaw::new(3, 0.05, SiteFamily::Constant { probs: vec![0.5, 0.5] }, false).is_err());
        let far = vec![0.3, 0.1, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0 - 0.0];
        assert!(SiteDistribution::new(&far, 0.05).is_err());
    }

    #[test]
    fn environments_are_reproducible_and_keyed_by_site() {
        let law = EnvironmentLaw::isotropic(3, 0.05).unwrap();
        let v = ball(&LatticePoint::origin(3), 4.0).unwrap();
        let e1 = law.sample_environment(v.domain(), 11).unwrap();
        let e2 = law.sample_environment(v.domain(), 11).unwrap();
        assert_eq!(e1, e2);
        let e3 = law.sample_environment(v.domain(), 12).unwrap();
        assert!(v
            .domain()
            .points()
            .iter()
            .any(|p| e1.site(p).unwrap() != e3.site(p).unwrap()));
        let sub = ball(&LatticePoint::new(&[1, 0, 0]), 2.0).unwrap();
        let direct = law.sample_environment(sub.domain(), 11).unwrap();
        assert_eq!(e1.restrict(sub.domain()).unwrap(), direct);
    }

    #[test]
    fn empty_region_is_an_error() {
        let law = EnvironmentLaw::isotropic(3, 0.05).unwrap();
        let empty = Domain::from_points(3, vec![]).unwrap();
        assert!(matches!(law.sample_environment(&empty, 1), Err(Error::EmptyRegion)));
    }

    #[test]
    fn outside_sites_error() {
        let law = EnvironmentLaw::isotropic(3, 0.05).unwrap();
        let v = ball(&LatticePoint::origin(3), 1.0).unwrap();
        let env = law.sample_environment(v.domain(), 3).unwrap();
        assert!(matches!(
            env.site(&LatticePoint::new(&[5, 0, 0])),
            Err(Error::OutsideRegion(_))
        ));
    }

    #[test]
    fn serialization_round_trip_is_bit_exact() {
        let law = EnvironmentLaw::isotropic(3, 0.04).unwrap();
        let v = ball(&LatticePoint::origin(3), 3.0).unwrap();
        let env = law.sample_environment(v.domain(), 5).unwrap();
        let mut buf = Vec::new();
        env.write_to(&mut buf).unwrap();
        let back = Environment::read_from(&buf[..]).unwrap();
        assert_eq!(env, back);
        // corrupting a coordinate breaks the region hash
        let nl = buf.iter().position(|&b| b == b'\n').unwrap();
        buf[nl + 1] ^= 1;
        assert!(Environment::read_from(&buf[..]).is_err());
    }

    #[test]
    fn environment_kernel_is_nearest_neighbor_and_stochastic() {
        let law = EnvironmentLaw::isotropic(3, 0.05).unwrap();
        let v = ball(&LatticePoint::origin(3), 2.0).unwrap();
        let env = law.sample_environment(v.domain(), 9).unwrap();
        for x in v.domain().points() {
            let row = env.row(x).unwrap();
            let s: f64 = row.iter().map(|(_, p)| p).sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|(y, _)| y.l1_dist(x) == 1));
        }
    }

    #[test]
    fn isotropy_statistic_is_zero_at_eps_zero() {
        let law = EnvironmentLaw::isotropic(3, 0.0).unwrap();
        let rep = verify_isotropy(&law, 200, 1, 0.01).unwrap();
        assert!(rep.tests.iter().all(|t| t.statistic == 0.0 && t.pass));
    }

    #[test]
    fn biased_family_fails_isotropy() {
        let law = EnvironmentLaw::new(3, 0.05, SiteFamily::Biased { drift: 0.5 }, false).unwrap();
        let rep = verify_isotropy(&law, 2000, 1, 0.01).unwrap();
        assert!(!rep.pass());
    }
}
