//! Geometry of `Z^d`: points, balls, shells, outer boundaries, boundary layers
//! and the group of lattice isometries (signed coordinate permutations).

use std::fmt;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::coarse_grain::ScaleSchedule;
use crate::error::{Error, Result};

/// Largest dimension for which the isometry group is enumerated.
pub const MAX_GROUP_DIM: usize = 6;

pub type Coords = SmallVec<[i32; 4]>;

/// A point of `Z^d`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LatticePoint(Coords);

impl LatticePoint {
    pub fn new(coords: &[i32]) -> Self {
        LatticePoint(Coords::from_slice(coords))
    }

    pub fn origin(dim: usize) -> Self {
        LatticePoint(smallvec::smallvec![0; dim])
    }

    /// `sign * e_axis`.
    pub fn unit(dim: usize, axis: usize, sign: i32) -> Self {
        let mut p = Self::origin(dim);
        p.0[axis] = sign;
        p
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn coords(&self) -> &[i32] {
        &self.0
    }

    #[inline]
    pub fn norm_sq(&self) -> i64 {
        self.0.iter().map(|&c| (c as i64) * (c as i64)).sum()
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        (self.norm_sq() as f64).sqrt()
    }

    pub fn dist_sq(&self, other: &LatticePoint) -> i64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(&a, &b)| {
                let t = (a - b) as i64;
                t * t
            })
            .sum()
    }

    pub fn dist(&self, other: &LatticePoint) -> f64 {
        (self.dist_sq(other) as f64).sqrt()
    }

    pub fn l1_dist(&self, other: &LatticePoint) -> i64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(&a, &b)| ((a - b) as i64).abs())
            .sum()
    }

    pub fn add(&self, other: &LatticePoint) -> LatticePoint {
        LatticePoint(self.0.iter().zip(other.0.iter()).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &LatticePoint) -> LatticePoint {
        LatticePoint(self.0.iter().zip(other.0.iter()).map(|(a, b)| a - b).collect())
    }

    pub fn neg(&self) -> LatticePoint {
        LatticePoint(self.0.iter().map(|a| -a).collect())
    }

    /// Neighbor in direction `dir`, where directions are ordered
    /// `+e_1, -e_1, +e_2, -e_2, ...`.
    #[inline]
    pub fn neighbor(&self, dir: usize) -> LatticePoint {
        let mut p = self.clone();
        p.0[dir / 2] += direction_sign(dir);
        p
    }

    pub fn neighbors(&self) -> impl Iterator<Item = LatticePoint> + '_ {
        (0..2 * self.dim()).map(move |k| self.neighbor(k))
    }

    /// Representative of the isometry orbit: absolute values sorted ascending.
    pub fn canonical(&self) -> LatticePoint {
        let mut c: Coords = self.0.iter().map(|a| a.abs()).collect();
        c.sort_unstable();
        LatticePoint(c)
    }

    /// Number of points in the isometry orbit of `self`.
    pub fn orbit_size(&self) -> usize {
        let c = self.canonical();
        let d = c.dim();
        let nonzero = c.0.iter().filter(|&&v| v != 0).count();
        let mut size = factorial(d) << nonzero;
        let mut i = 0;
        while i < d {
            let mut j = i;
            while j < d && c.0[j] == c.0[i] {
                j += 1;
            }
            size /= factorial(j - i);
            i = j;
        }
        size
    }
}

impl fmt::Debug for LatticePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for LatticePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

#[inline]
pub fn direction_sign(dir: usize) -> i32 {
    if dir.is_multiple_of(2) {
        1
    } else {
        -1
    }
}

fn factorial(n: usize) -> usize {
    (1..=n).product()
}

/// Largest integer `k` with `k <= radius^2`, snapping float noise so that
/// e.g. `sqrt(29.0)` still selects `k = 29`.
pub fn norm_sq_bound(radius: f64) -> i64 {
    let r2 = radius * radius;
    let nearest = r2.round();
    if (r2 - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest as i64
    } else {
        r2.floor() as i64
    }
}

/// Dense lookup table over an axis-aligned box, mapping points to indices.
#[derive(Clone, Debug)]
pub struct BoxIndex {
    lo: Coords,
    extent: SmallVec<[usize; 4]>,
    table: Vec<u32>,
}

const ABSENT: u32 = u32::MAX;

impl BoxIndex {
    pub fn new(lo: &[i32], hi: &[i32]) -> Self {
        let extent: SmallVec<[usize; 4]> = lo
            .iter()
            .zip(hi.iter())
            .map(|(&l, &h)| if h >= l { (h - l + 1) as usize } else { 0 })
            .collect();
        let size = extent.iter().product::<usize>();
        BoxIndex {
            lo: Coords::from_slice(lo),
            extent,
            table: vec![ABSENT; size],
        }
    }

    fn slot(&self, p: &LatticePoint) -> Option<usize> {
        let mut idx = 0usize;
        for ((&c, &l), &e) in p.coords().iter().zip(self.lo.iter()).zip(self.extent.iter()) {
            let off = c - l;
            if off < 0 || off as usize >= e {
                return None;
            }
            idx = idx * e + off as usize;
        }
        Some(idx)
    }

    pub fn get(&self, p: &LatticePoint) -> Option<usize> {
        let s = self.slot(p)?;
        let v = self.table[s];
        (v != ABSENT).then_some(v as usize)
    }

    fn insert(&mut self, p: &LatticePoint, idx: usize) {
        let s = self.slot(p).expect("point outside index box");
        self.table[s] = idx as u32;
    }
}

/// Finite point set with a dense index `point -> row`.
#[derive(Clone, Debug)]
pub struct Domain {
    dim: usize,
    points: Vec<LatticePoint>,
    index: BoxIndex,
}

impl Domain {
    /// Builds a domain from points; duplicates are removed and the
    /// enumeration is sorted so that indexing is deterministic.
    pub fn from_points(dim: usize, mut points: Vec<LatticePoint>) -> Result<Self> {
        if let Some(p) = points.iter().find(|p| p.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: p.dim(),
            });
        }
        points.sort_unstable();
        points.dedup();
        let mut lo: Coords = smallvec::smallvec![0; dim];
        let mut hi: Coords = smallvec::smallvec![-1; dim];
        if let Some(first) = points.first() {
            lo = Coords::from_slice(first.coords());
            hi = lo.clone();
            for p in &points {
                for (i, &c) in p.coords().iter().enumerate() {
                    lo[i] = lo[i].min(c);
                    hi[i] = hi[i].max(c);
                }
            }
        }
        let mut index = BoxIndex::new(&lo, &hi);
        for (i, p) in points.iter().enumerate() {
            index.insert(p, i);
        }
        Ok(Domain { dim, points, index })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[LatticePoint] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &LatticePoint {
        &self.points[i]
    }

    #[inline]
    pub fn index_of(&self, p: &LatticePoint) -> Option<usize> {
        if p.dim() != self.dim {
            return None;
        }
        self.index.get(p)
    }

    #[inline]
    pub fn contains(&self, p: &LatticePoint) -> bool {
        self.index_of(p).is_some()
    }

    /// `{x not in V : x has a nearest neighbor in V}`.
    pub fn outer_boundary(&self) -> Domain {
        let mut out = Vec::new();
        for p in &self.points {
            for q in p.neighbors() {
                if !self.contains(&q) {
                    out.push(q);
                }
            }
        }
        Domain::from_points(self.dim, out).expect("dimension already checked")
    }

    pub fn filter<F: Fn(&LatticePoint) -> bool>(&self, keep: F) -> Domain {
        let pts = self.points.iter().filter(|p| keep(p)).cloned().collect();
        Domain::from_points(self.dim, pts).expect("dimension already checked")
    }

    pub fn intersect(&self, other: &Domain) -> Domain {
        self.filter(|p| other.contains(p))
    }

    pub fn is_subset_of(&self, other: &Domain) -> bool {
        self.points.iter().all(|p| other.contains(p))
    }

    pub fn translate(&self, v: &LatticePoint) -> Domain {
        let pts = self.points.iter().map(|p| p.add(v)).collect();
        Domain::from_points(self.dim, pts).expect("dimension already checked")
    }
}

/// Calls `f` on every point of the box `[lo, hi]` (inclusive).
pub fn for_each_in_box<F: FnMut(&LatticePoint)>(lo: &[i32], hi: &[i32], mut f: F) {
    let d = lo.len();
    if lo.iter().zip(hi.iter()).any(|(l, h)| l > h) {
        return;
    }
    let mut cur = LatticePoint::new(lo);
    loop {
        f(&cur);
        let mut axis = d;
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            if cur.0[axis] < hi[axis] {
                cur.0[axis] += 1;
                break;
            }
            cur.0[axis] = lo[axis];
        }
    }
}

/// Points `x` with `|x - center|^2 <= norm_sq`.
pub fn ball_points(center: &LatticePoint, norm_sq: i64) -> Vec<LatticePoint> {
    let d = center.dim();
    let mut out = Vec::new();
    if norm_sq < 0 {
        return out;
    }
    let r = (norm_sq as f64).sqrt().floor() as i32 + 1;
    let lo: Coords = center.coords().iter().map(|c| c - r).collect();
    let hi: Coords = center.coords().iter().map(|c| c + r).collect();
    let mut rel = LatticePoint::origin(d);
    for_each_in_box(&lo, &hi, |p| {
        for i in 0..d {
            rel.0[i] = p.0[i] - center.0[i];
        }
        if rel.norm_sq() <= norm_sq {
            out.push(p.clone());
        }
    });
    out
}

/// Euclidean lattice ball `V_L(center)` with its outer boundary.
#[derive(Clone, Debug)]
pub struct BallDomain {
    center: LatticePoint,
    radius: f64,
    norm_sq: i64,
    domain: Domain,
    boundary: Domain,
}

impl BallDomain {
    pub fn center(&self) -> &LatticePoint {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Largest squared norm (relative to the center) inside the ball.
    pub fn norm_sq_bound(&self) -> i64 {
        self.norm_sq
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn boundary(&self) -> &Domain {
        &self.boundary
    }

    pub fn contains(&self, p: &LatticePoint) -> bool {
        p.dim() == self.center.dim() && p.dist_sq(&self.center) <= self.norm_sq
    }

    /// `d_L(x) = L - |x - center|`; differs from the lattice distance to
    /// the outer boundary.
    pub fn depth(&self, p: &LatticePoint) -> f64 {
        self.radius - p.dist(&self.center)
    }
}

/// `V_L(center) = {x : |x - center| <= L}`.
pub fn ball(center: &LatticePoint, radius: f64) -> Result<BallDomain> {
    if !(radius >= 0.0) || !radius.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "ball radius must be finite and >= 0, got {radius}"
        )));
    }
    let norm_sq = norm_sq_bound(radius);
    let domain = Domain::from_points(center.dim(), ball_points(center, norm_sq))?;
    let boundary = domain.outer_boundary();
    Ok(BallDomain {
        center: center.clone(),
        radius,
        norm_sq,
        domain,
        boundary,
    })
}

/// Same as [`ball`] but checks the center against a configured dimension.
pub fn ball_in_dim(dim: usize, center: &LatticePoint, radius: f64) -> Result<BallDomain> {
    if center.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: center.dim(),
        });
    }
    ball(center, radius)
}

/// `Shell_L(a, b) = {x in V_L : a <= L - |x| < b}` for a ball centered at 0.
#[derive(Clone, Debug)]
pub struct ShellRegion {
    pub radius: f64,
    pub inner: f64,
    pub outer: f64,
    domain: Domain,
}

impl ShellRegion {
    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn contains(&self, p: &LatticePoint) -> bool {
        self.domain.contains(p)
    }
}

/// Builds `Shell_L(a, b)` in dimension `dim`. Values `b > L` are accepted
/// and simply include the whole ball once `b` exceeds `L`.
pub fn shell(dim: usize, radius: f64, inner: f64, outer: f64) -> Result<ShellRegion> {
    if !(inner >= 0.0) || !(inner < outer) {
        return Err(Error::InvalidParameter(format!(
            "shell requires 0 <= a < b, got a={inner}, b={outer}"
        )));
    }
    let v = ball(&LatticePoint::origin(dim), radius)?;
    let domain = v.domain().filter(|p| {
        let depth = radius - p.norm();
        depth >= inner && depth < outer
    });
    Ok(ShellRegion {
        radius,
        inner,
        outer,
        domain,
    })
}

/// Dyadic boundary layers `Lambda_j = Shell_L(2^{j-1}, 2^j)` for
/// `j = 1..=J_1(L)` with `J_1 = floor(log2 r(L)) + 1`. The first layer
/// starts at depth 0 so that the union covers `Shell_L(r(L))`.
pub fn layers(dim: usize, radius: f64, schedule: &ScaleSchedule) -> Result<Vec<ShellRegion>> {
    let r = schedule.r(radius);
    if !(r >= 2.0) {
        return Ok(Vec::new());
    }
    let j1 = (r.ln() / 2f64.ln()).floor() as i32 + 1;
    (1..=j1)
        .map(|j| {
            let lo = if j == 1 { 0.0 } else { 2f64.powi(j - 1) };
            shell(dim, radius, lo, 2f64.powi(j))
        })
        .collect()
}

/// Number of layers returned by [`layers`]; `0` for degenerate schedules.
pub fn layer_count(radius: f64, schedule: &ScaleSchedule) -> usize {
    let r = schedule.r(radius);
    if r < 2.0 {
        0
    } else {
        (r.ln() / 2f64.ln()).floor() as usize + 1
    }
}

/// Signed permutation `x -> (sign_i * x_{perm_i})_i`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Isometry {
    perm: SmallVec<[u8; 6]>,
    signs: SmallVec<[i8; 6]>,
}

impl Isometry {
    pub fn identity(dim: usize) -> Self {
        Isometry {
            perm: (0..dim as u8).collect(),
            signs: smallvec::smallvec![1; dim],
        }
    }

    pub fn from_parts(perm: &[usize], signs: &[i32]) -> Self {
        Isometry {
            perm: perm.iter().map(|&p| p as u8).collect(),
            signs: signs.iter().map(|&s| s.signum() as i8).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    pub fn apply(&self, p: &LatticePoint) -> LatticePoint {
        LatticePoint(
            self.perm
                .iter()
                .zip(self.signs.iter())
                .map(|(&src, &s)| s as i32 * p.0[src as usize])
                .collect(),
        )
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Isometry) -> Isometry {
        let perm = self.perm.iter().map(|&i| other.perm[i as usize]).collect();
        let signs = self
            .perm
            .iter()
            .zip(self.signs.iter())
            .map(|(&i, &s)| s * other.signs[i as usize])
            .collect();
        Isometry { perm, signs }
    }

    /// Canonical representative `c` of the orbit of `x` together with an
    /// isometry `f` such that `f(c) = x`.
    pub fn canonicalizing(x: &LatticePoint) -> (LatticePoint, Isometry) {
        let d = x.dim();
        let mut idx: SmallVec<[usize; 6]> = (0..d).collect();
        idx.sort_by_key(|&i| x.0[i].abs());
        let mut perm: SmallVec<[u8; 6]> = smallvec::smallvec![0; d];
        for (j, &i) in idx.iter().enumerate() {
            perm[i] = j as u8;
        }
        let signs = x.0.iter().map(|&c| if c < 0 { -1 } else { 1 }).collect();
        let rep = idx.iter().map(|&i| x.0[i].abs()).collect();
        (LatticePoint(rep), Isometry { perm, signs })
    }

    /// Image of direction index `dir` (ordering of [`LatticePoint::neighbor`]).
    pub fn map_direction(&self, dir: usize) -> usize {
        let axis = dir / 2;
        let sign = direction_sign(dir);
        // e_axis appears in output coordinate i where perm[i] == axis.
        let i = self
            .perm
            .iter()
            .position(|&p| p as usize == axis)
            .expect("permutation is a bijection");
        let s = sign * self.signs[i] as i32;
        2 * i + usize::from(s < 0)
    }
}

/// All `2^d d!` lattice isometries fixing the origin.
#[derive(Clone, Debug)]
pub struct IsometryGroup {
    dim: usize,
    elements: Vec<Isometry>,
}

impl IsometryGroup {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn elements(&self) -> &[Isometry] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Sign flip of the first axis, the transposition (1 2) and the cycle
    /// (1 2 ... d); together they generate the group.
    pub fn generators(&self) -> Vec<Isometry> {
        let d = self.dim;
        let mut flip = vec![1; d];
        flip[0] = -1;
        let mut gens = vec![Isometry::from_parts(&(0..d).collect::<Vec<_>>(), &flip)];
        if d >= 2 {
            let mut swap: Vec<usize> = (0..d).collect();
            swap.swap(0, 1);
            gens.push(Isometry::from_parts(&swap, &vec![1; d]));
        }
        if d >= 3 {
            let cycle: Vec<usize> = (0..d).map(|i| (i + 1) % d).collect();
            gens.push(Isometry::from_parts(&cycle, &vec![1; d]));
        }
        gens
    }

    pub fn orbit(&self, p: &LatticePoint) -> Vec<LatticePoint> {
        let mut pts: Vec<LatticePoint> = self.elements.iter().map(|g| g.apply(p)).collect();
        pts.sort_unstable();
        pts.dedup();
        pts
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for sub in permutations(n - 1) {
        for pos in 0..=sub.len() {
            let mut p = sub.clone();
            p.insert(pos, n - 1);
            out.push(p);
        }
    }
    out.sort();
    out
}

pub fn isometry_group(dim: usize) -> Result<IsometryGroup> {
    if dim == 0 || dim > MAX_GROUP_DIM {
        return Err(Error::InvalidParameter(format!(
            "isometry group enumerated for 1 <= d <= {MAX_GROUP_DIM}, got {dim}"
        )));
    }
    let mut elements = Vec::with_capacity(factorial(dim) << dim);
    for perm in permutations(dim) {
        for mask in 0..(1u32 << dim) {
            let signs: Vec<i32> = (0..dim)
                .map(|i| if mask >> i & 1 == 1 { -1 } else { 1 })
                .collect();
            elements.push(Isometry::from_parts(&perm, &signs));
        }
    }
    elements.dedup();
    Ok(IsometryGroup { dim, elements })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn origin3() -> LatticePoint {
        LatticePoint::origin(3)
    }

    #[test]
    fn unit_ball_has_seven_points() {
        let b = ball(&origin3(), 1.0).unwrap();
        assert_eq!(b.domain().len(), 7);
    }

    #[test]
    fn radius_zero_ball_is_a_point_with_six_neighbors() {
        let b = ball(&origin3(), 0.0).unwrap();
        assert_eq!(b.domain().points(), &[origin3()]);
        assert_eq!(b.boundary().len(), 6);
    }

    #[test]
    fn unit_ball_boundary_by_brute_force() {
        let b = ball(&origin3(), 1.0).unwrap();
        // complement points within the [-2,2]^3 box having a neighbor inside
        let mut count = 0;
        for_each_in_box(&[-2, -2, -2], &[2, 2, 2], |p| {
            if !b.contains(p) && p.neighbors().any(|q| b.contains(&q)) {
                count += 1;
            }
        });
        assert_eq!(count, 18);
        assert_eq!(b.boundary().len(), 18);
    }

    #[test]
    fn ball_rejects_wrong_dimension() {
        let err = ball_in_dim(3, &LatticePoint::origin(2), 2.0).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn sqrt_radius_is_snapped() {
        let b = ball(&origin3(), 29f64.sqrt()).unwrap();
        assert_eq!(b.norm_sq_bound(), 29);
        assert!(b.contains(&LatticePoint::new(&[4, 3, 2])));
    }

    #[test]
    fn boundary_and_interior_are_disjoint() {
        let b = ball(&LatticePoint::new(&[1, -2, 3]), 3.5).unwrap();
        assert!(b.boundary().points().iter().all(|p| !b.contains(p)));
        // every boundary point is one step away from the ball
        assert!(b
            .boundary()
            .points()
            .iter()
            .all(|p| p.neighbors().any(|q| b.contains(&q))));
    }

    #[test]
    fn full_shell_equals_ball() {
        let s = shell(3, 4.5, 0.0, 4.5 + 0.1).unwrap();
        let b = ball(&origin3(), 4.5).unwrap();
        assert_eq!(s.domain().points(), b.domain().points());
    }

    #[test]
    fn outer_shell_matches_direct_filter() {
        let s = shell(3, 5.0, 0.0, 1.0).unwrap();
        let b = ball(&origin3(), 5.0).unwrap();
        let direct = b.domain().points().iter().filter(|p| p.norm() > 4.0).count();
        assert_eq!(s.domain().len(), direct);
    }

    #[test]
    fn adjacent_shells_are_disjoint() {
        let a = shell(3, 6.0, 0.5, 2.0).unwrap();
        let b = shell(3, 6.0, 2.0, 3.5).unwrap();
        assert!(a.domain().points().iter().all(|p| !b.contains(p)));
    }

    #[test]
    fn shell_rejects_bad_bounds() {
        assert!(shell(3, 5.0, 2.0, 2.0).is_err());
        assert!(shell(3, 5.0, 3.0, 1.0).is_err());
    }

    #[test]
    fn group_sizes() {
        assert_eq!(isometry_group(3).unwrap().len(), 48);
        assert_eq!(isometry_group(2).unwrap().len(), 8);
        assert_eq!(isometry_group(1).unwrap().len(), 2);
        assert!(isometry_group(7).is_err());
        assert!(isometry_group(0).is_err());
    }

    #[test]
    fn group_elements_permute_unit_vectors() {
        let g = isometry_group(3).unwrap();
        let units: Vec<LatticePoint> = origin3().neighbors().collect();
        for f in g.elements() {
            assert_eq!(f.apply(&origin3()), origin3());
            let mut imgs: Vec<LatticePoint> = units.iter().map(|u| f.apply(u)).collect();
            imgs.sort();
            let mut sorted = units.clone();
            sorted.sort();
            assert_eq!(imgs, sorted);
            for dir in 0..6 {
                assert_eq!(f.apply(&units[dir]), units[f.map_direction(dir)]);
            }
        }
    }

    #[test]
    fn group_is_closed_under_composition() {
        let g = isometry_group(3).unwrap();
        let set: std::collections::HashSet<_> = g.elements().iter().cloned().collect();
        for a in g.elements() {
            for b in g.elements() {
                assert!(set.contains(&a.compose(b)));
            }
        }
        let p = LatticePoint::new(&[1, 2, 3]);
        for a in g.elements().iter().take(10) {
            for b in g.elements().iter().take(10) {
                assert_eq!(a.compose(b).apply(&p), a.apply(&b.apply(&p)));
            }
        }
    }

    #[test]
    fn orbit_of_120_has_24_points() {
        let g = isometry_group(3).unwrap();
        let p = LatticePoint::new(&[1, 2, 0]);
        assert_eq!(g.orbit(&p).len(), 24);
        assert_eq!(p.orbit_size(), 24);
        assert_eq!(LatticePoint::new(&[1, 1, 1]).orbit_size(), 8);
        assert_eq!(origin3().orbit_size(), 1);
    }

    #[test]
    fn group_maps_ball_onto_itself() {
        let g = isometry_group(3).unwrap();
        let b = ball(&origin3(), 3.3).unwrap();
        for f in g.elements() {
            assert!(b.domain().points().iter().all(|p| b.contains(&f.apply(p))));
            assert!(b
                .boundary()
                .points()
                .iter()
                .all(|p| b.boundary().contains(&f.apply(p))));
        }
    }

    #[test]
    fn layer_count_for_r16() {
        let sched = ScaleSchedule::fixed(16.0, 20.0);
        assert_eq!(layer_count(64.0, &sched), 5);
        assert_eq!(layers(3, 64.0, &sched).unwrap().len(), 5);
    }

    #[test]
    fn layers_disjoint_and_cover_boundary_shell() {
        let sched = ScaleSchedule::fixed(4.0, 8.0);
        let ls = layers(3, 32.0, &sched).unwrap();
        assert_eq!(ls.len(), 3);
        for i in 0..ls.len() {
            for j in i + 1..ls.len() {
                assert!(ls[i].domain().points().iter().all(|p| !ls[j].contains(p)));
            }
        }
        let inner = shell(3, 32.0, 0.0, 4.0).unwrap();
        let outer = shell(3, 32.0, 0.0, 8.0).unwrap();
        for p in inner.domain().points() {
            assert!(ls.iter().any(|l| l.contains(p)));
        }
        for l in &ls {
            assert!(l.domain().is_subset_of(outer.domain()));
        }
    }

    #[test]
    fn degenerate_schedule_gives_no_layers() {
        let sched = ScaleSchedule::fixed(1.5, 4.0);
        assert!(layers(3, 32.0, &sched).unwrap().is_empty());
    }
}
