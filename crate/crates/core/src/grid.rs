//! Dense arrays over boxes of Z^d and FFT convolution.

use num_complex::Complex64;
use rustfft::FftPlanner;
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::kernel::Measure;
use crate::lattice::LatticePoint;

/// Values on the box `lo + [0, shape)`; points outside read as zero.
#[derive(Clone, Debug)]
pub struct DenseGrid {
    lo: SmallVec<[i32; 4]>,
    shape: SmallVec<[usize; 4]>,
    data: Vec<f64>,
}

/// Refuse grids larger than this many cells.
pub const MAX_GRID_CELLS: usize = 64 << 20;

impl DenseGrid {
    pub fn zeros(lo: &[i32], shape: &[usize]) -> Result<Self> {
        let cells = shape.iter().try_fold(1usize, |acc, &s| acc.checked_mul(s));
        match cells {
            Some(c) if c <= MAX_GRID_CELLS => Ok(DenseGrid {
                lo: SmallVec::from_slice(lo),
                shape: SmallVec::from_slice(shape),
                data: vec![0.0; c],
            }),
            _ => Err(Error::ResourceGuard(format!("grid of shape {shape:?} too large"))),
        }
    }

    /// Cube `[-radius, radius]^d`.
    pub fn centered(dim: usize, radius: usize) -> Result<Self> {
        let r = radius as i32;
        Self::zeros(&vec![-r; dim], &vec![2 * radius + 1; dim])
    }

    /// Smallest box containing the support of `mu`, padded by `pad`.
    pub fn covering(mu: &Measure, dim: usize, pad: usize) -> Result<Self> {
        let mut lo = vec![i32::MAX; dim];
        let mut hi = vec![i32::MIN; dim];
        for (p, _) in mu.entries() {
            for (i, &c) in p.coords().iter().enumerate() {
                lo[i] = lo[i].min(c);
                hi[i] = hi[i].max(c);
            }
        }
        if mu.is_empty() {
            lo = vec![0; dim];
            hi = vec![0; dim];
        }
        let p = pad as i32;
        let lo: Vec<i32> = lo.iter().map(|v| v - p).collect();
        let shape: Vec<usize> = lo.iter().zip(&hi).map(|(l, h)| (h + p - l + 1) as usize).collect();
        Self::zeros(&lo, &shape)
    }

    pub fn from_measure(mu: &Measure, dim: usize) -> Result<Self> {
        let mut g = Self::covering(mu, dim, 0)?;
        for (p, v) in mu.entries() {
            g.add(p, *v);
        }
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn lo(&self) -> &[i32] {
        &self.lo
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn offset(&self, p: &[i32]) -> Option<usize> {
        let mut idx = 0usize;
        for ((&c, &l), &s) in p.iter().zip(&self.lo).zip(&self.shape) {
            let o = c - l;
            if o < 0 || o as usize >= s {
                return None;
            }
            idx = idx * s + o as usize;
        }
        Some(idx)
    }

    pub fn point_at(&self, mut idx: usize) -> LatticePoint {
        let d = self.dim();
        let mut c = vec![0i32; d];
        for i in (0..d).rev() {
            c[i] = self.lo[i] + (idx % self.shape[i]) as i32;
            idx /= self.shape[i];
        }
        LatticePoint::new(&c)
    }

    pub fn get(&self, p: &LatticePoint) -> f64 {
        self.offset(p.coords()).map(|i| self.data[i]).unwrap_or(0.0)
    }

    /// Panics if `p` lies outside the box.
    pub fn add(&mut self, p: &LatticePoint, v: f64) {
        let i = self.offset(p.coords()).expect("point inside grid");
        self.data[i] += v;
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn l1(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    pub fn to_measure(&self) -> Measure {
        Measure::from_entries(
            self.data
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, v)| (self.point_at(i), *v))
                .collect(),
        )
    }

    /// Largest `|x|_∞` over cells with `|value| > threshold`.
    pub fn support_radius_inf(&self, threshold: f64) -> i32 {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, v)| v.abs() > threshold)
            .map(|(i, _)| {
                self.point_at(i)
                    .coords()
                    .iter()
                    .map(|c| c.abs())
                    .max()
                    .unwrap_or(0)
            })
            .max()
            .unwrap_or(0)
    }
}

fn fft_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for f in [2, 3, 5, 7] {
            while r.is_multiple_of(f) {
                r /= f;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

fn fft_nd(buf: &mut [Complex64], shape: &[usize], inverse: bool, planner: &mut FftPlanner<f64>) {
    let d = shape.len();
    for axis in 0..d {
        let n = shape[axis];
        let fft = if inverse {
            planner.plan_fft_inverse(n)
        } else {
            planner.plan_fft_forward(n)
        };
        let stride: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        for o in 0..outer {
            for s in 0..stride {
                let base = o * n * stride + s;
                for k in 0..n {
                    line[k] = buf[base + k * stride];
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for k in 0..n {
                    buf[base + k * stride] = line[k];
                }
            }
        }
    }
}

/// Linear convolution `(a * b)(x) = Σ_y a(y) b(x - y)` by FFT.
pub fn convolve_fft(a: &DenseGrid, b: &DenseGrid) -> Result<DenseGrid> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let d = a.dim();
    let out_shape: Vec<usize> = a.shape.iter().zip(&b.shape).map(|(x, y)| x + y - 1).collect();
    let out_lo: Vec<i32> = a.lo.iter().zip(&b.lo).map(|(x, y)| x + y).collect();
    let mut out = DenseGrid::zeros(&out_lo, &out_shape)?;
    let fshape: Vec<usize> = out_shape.iter().map(|&n| fft_size(n)).collect();
    let cells: usize = fshape.iter().product();
    if cells > MAX_GRID_CELLS {
        return Err(Error::ResourceGuard(format!("FFT grid {fshape:?} too large")));
    }
    let embed = |g: &DenseGrid| {
        let mut buf = vec![Complex64::new(0.0, 0.0); cells];
        for (i, v) in g.data.iter().enumerate() {
            if *v == 0.0 {
                continue;
            }
            let mut rem = i;
            let mut idx = 0usize;
            let mut mult = 1usize;
            for ax in (0..d).rev() {
                let c = rem % g.shape[ax];
                rem /= g.shape[ax];
                idx += c * mult;
                mult *= fshape[ax];
            }
            buf[idx] = Complex64::new(*v, 0.0);
        }
        buf
    };
    let mut planner = FftPlanner::new();
    let mut fa = embed(a);
    let mut fb = embed(b);
    fft_nd(&mut fa, &fshape, false, &mut planner);
    fft_nd(&mut fb, &fshape, false, &mut planner);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    fft_nd(&mut fa, &fshape, true, &mut planner);
    let scale = 1.0 / cells as f64;
    for i in 0..out.data.len() {
        let mut rem = i;
        let mut idx = 0usize;
        let mut mult = 1usize;
        for ax in (0..d).rev() {
            let c = rem % out_shape[ax];
            rem /= out_shape[ax];
            idx += c * mult;
            mult *= fshape[ax];
        }
        out.data[i] = fa[idx].re * scale;
    }
    Ok(out)
}

/// In-place multidimensional DFT of a row-major buffer (unnormalized).
pub fn fft_periodic(buf: &mut [Complex64], shape: &[usize], inverse: bool) {
    let mut planner = FftPlanner::new();
    fft_nd(buf, shape, inverse, &mut planner);
}

/// `a * b` restricted to the box `lo + [0, shape)`, by circular FFT with a
/// period just long enough that no wrapped term lands in the window.
pub fn convolve_window(a: &DenseGrid, b: &DenseGrid, lo: &[i32], shape: &[usize]) -> Result<DenseGrid> {
    if a.dim() != b.dim() || lo.len() != a.dim() || shape.len() != a.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let d = a.dim();
    let mut out = DenseGrid::zeros(lo, shape)?;
    let mut period = Vec::with_capacity(d);
    for ax in 0..d {
        let full_lo = (a.lo[ax] + b.lo[ax]) as i64;
        let full_hi = full_lo + (a.shape[ax] + b.shape[ax] - 2) as i64;
        let (wl, wh) = (lo[ax] as i64, lo[ax] as i64 + shape[ax] as i64 - 1);
        let need = (wh - full_lo).max(full_hi - wl).max(0) as usize + 1;
        period.push(fft_size(need.max(a.shape[ax]).max(b.shape[ax])));
    }
    let cells = period.iter().try_fold(1usize, |acc, &s| acc.checked_mul(s));
    let cells = match cells {
        Some(c) if c <= MAX_GRID_CELLS => c,
        _ => return Err(Error::ResourceGuard(format!("FFT grid {period:?} too large"))),
    };
    let embed = |g: &DenseGrid| {
        let mut buf = vec![Complex64::new(0.0, 0.0); cells];
        for (i, v) in g.data.iter().enumerate() {
            if *v == 0.0 {
                continue;
            }
            let mut rem = i;
            let mut idx = 0usize;
            let mut mult = 1usize;
            for ax in (0..d).rev() {
                let c = rem % g.shape[ax];
                rem /= g.shape[ax];
                idx += c * mult;
                mult *= period[ax];
            }
            buf[idx] = Complex64::new(*v, 0.0);
        }
        buf
    };
    let mut planner = FftPlanner::new();
    let mut fa = embed(a);
    fft_nd(&mut fa, &period, false, &mut planner);
    if std::ptr::eq(a, b) {
        for x in fa.iter_mut() {
            *x = *x * *x;
        }
    } else {
        let mut fb = embed(b);
        fft_nd(&mut fb, &period, false, &mut planner);
        for (x, y) in fa.iter_mut().zip(&fb) {
            *x *= y;
        }
    }
    fft_nd(&mut fa, &period, true, &mut planner);
    let scale = 1.0 / cells as f64;
    for i in 0..out.data.len() {
        let mut rem = i;
        let mut idx = 0usize;
        let mut mult = 1usize;
        for ax in (0..d).rev() {
            let c = (rem % shape[ax]) as i64;
            rem /= shape[ax];
            let t = lo[ax] as i64 + c - (a.lo[ax] + b.lo[ax]) as i64;
            idx += t.rem_euclid(period[ax] as i64) as usize * mult;
            mult *= period[ax];
        }
        out.data[i] = fa[idx].re * scale;
    }
    Ok(out)
}

/// Direct convolution over the nonzero cells of `a`.
pub fn convolve_direct(a: &DenseGrid, b: &DenseGrid) -> Result<DenseGrid> {
    let d = a.dim();
    let out_shape: Vec<usize> = a.shape.iter().zip(&b.shape).map(|(x, y)| x + y - 1).collect();
    let out_lo: Vec<i32> = a.lo.iter().zip(&b.lo).map(|(x, y)| x + y).collect();
    let mut out = DenseGrid::zeros(&out_lo, &out_shape)?;
    let bnz: Vec<(usize, f64)> = b
        .data
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, v)| (i, *v))
        .collect();
    let unflatten = |mut i: usize, shape: &[usize]| {
        let mut c = vec![0usize; d];
        for ax in (0..d).rev() {
            c[ax] = i % shape[ax];
            i /= shape[ax];
        }
        c
    };
    let bcoords: Vec<(Vec<usize>, f64)> = bnz.iter().map(|&(i, v)| (unflatten(i, &b.shape), v)).collect();
    for (i, &va) in a.data.iter().enumerate() {
        if va == 0.0 {
            continue;
        }
        let ca = unflatten(i, &a.shape);
        for (cb, vb) in &bcoords {
            let mut idx = 0usize;
            for ax in 0..d {
                idx = idx * out_shape[ax] + ca[ax] + cb[ax];
            }
            out.data[idx] += va * vb;
        }
    }
    Ok(out)
}
