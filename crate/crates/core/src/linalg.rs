//! Sparse matrices and Krylov solvers for `(I - P) u = b` systems.

use crate::error::{Error, Result};

/// Compressed sparse rows.
#[derive(Clone, Debug, Default)]
pub struct Csr {
    pub nrows: usize,
    pub ncols: usize,
    pub ptr: Vec<usize>,
    pub col: Vec<u32>,
    pub val: Vec<f64>,
}

impl Csr {
    pub fn from_rows(ncols: usize, rows: Vec<Vec<(u32, f64)>>) -> Self {
        let mut ptr = Vec::with_capacity(rows.len() + 1);
        ptr.push(0);
        let nnz = rows.iter().map(Vec::len).sum();
        let mut col = Vec::with_capacity(nnz);
        let mut val = Vec::with_capacity(nnz);
        let nrows = rows.len();
        for mut r in rows {
            r.sort_by_key(|e| e.0);
            for (c, v) in r {
                match col.last() {
                    Some(&last) if col.len() > ptr[ptr.len() - 1] && last == c => {
                        *val.last_mut().unwrap() += v;
                    }
                    _ => {
                        col.push(c);
                        val.push(v);
                    }
                }
            }
            ptr.push(col.len());
        }
        Csr {
            nrows,
            ncols,
            ptr,
            col,
            val,
        }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.ptr[i]..self.ptr[i + 1]).map(move |k| (self.col[k] as usize, self.val[k]))
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.val[self.ptr[i]..self.ptr[i + 1]].iter().sum()
    }

    pub fn nnz(&self) -> usize {
        self.val.len()
    }

    /// `y = x - P x`.
    pub fn apply_i_minus(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.nrows {
            let mut s = 0.0;
            for k in self.ptr[i]..self.ptr[i + 1] {
                s += self.val[k] * x[self.col[k] as usize];
            }
            y[i] = x[i] - s;
        }
    }

    /// `y = x - Pᵀ x`.
    pub fn apply_i_minus_t(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(x);
        for i in 0..self.nrows {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            for k in self.ptr[i]..self.ptr[i + 1] {
                y[self.col[k] as usize] -= self.val[k] * xi;
            }
        }
    }

    /// Exact structural and numerical symmetry (up to `tol`).
    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.nrows != self.ncols {
            return false;
        }
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                let k = match self.col[self.ptr[j]..self.ptr[j + 1]].binary_search(&(i as u32)) {
                    Ok(k) => self.ptr[j] + k,
                    Err(_) => return false,
                };
                if (self.val[k] - v).abs() > tol {
                    return false;
                }
            }
        }
        true
    }

    pub fn transpose_pattern(&self) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); self.ncols];
        for i in 0..self.nrows {
            for (j, _) in self.row(i) {
                out[j].push(i as u32);
            }
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Conjugate gradients for a symmetric positive definite operator.
pub fn conjugate_gradient<F>(apply: F, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>>
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rs = dot(&r, &r);
    for _ in 0..max_iter {
        if rs.sqrt() <= tol * bnorm {
            return Ok(x);
        }
        apply(&p, &mut ap);
        let alpha = rs / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rs_new = dot(&r, &r);
        let beta = rs_new / rs;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rs = rs_new;
    }
    // Recompute the true residual before giving up.
    apply(&x, &mut ap);
    let res = norm(&b.iter().zip(&ap).map(|(u, v)| u - v).collect::<Vec<_>>()) / bnorm;
    if res <= tol {
        Ok(x)
    } else {
        Err(Error::NoConvergence {
            residual: res,
            iterations: max_iter,
        })
    }
}

/// BiCGSTAB with restarts on breakdown.
pub fn bicgstab<F>(apply: F, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>>
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut tmp = vec![0.0; n];
    let mut iters = 0usize;
    let mut res = 1.0;
    for _restart in 0..10 {
        apply(&x, &mut tmp);
        let mut r: Vec<f64> = b.iter().zip(&tmp).map(|(u, v)| u - v).collect();
        res = norm(&r) / bnorm;
        if res <= tol {
            return Ok(x);
        }
        let r0 = r.clone();
        let mut rho = 1.0;
        let mut alpha = 1.0;
        let mut omega = 1.0;
        let mut v = vec![0.0; n];
        let mut p = vec![0.0; n];
        let mut s = vec![0.0; n];
        let mut t = vec![0.0; n];
        while iters < max_iter {
            iters += 1;
            let rho_new = dot(&r0, &r);
            if rho_new.abs() < 1e-300 || omega == 0.0 {
                break;
            }
            let beta = (rho_new / rho) * (alpha / omega);
            rho = rho_new;
            for i in 0..n {
                p[i] = r[i] + beta * (p[i] - omega * v[i]);
            }
            apply(&p, &mut v);
            let r0v = dot(&r0, &v);
            if r0v.abs() < 1e-300 {
                break;
            }
            alpha = rho / r0v;
            for i in 0..n {
                s[i] = r[i] - alpha * v[i];
            }
            if norm(&s) <= tol * bnorm {
                for i in 0..n {
                    x[i] += alpha * p[i];
                }
                break;
            }
            apply(&s, &mut t);
            let tt = dot(&t, &t);
            omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
            for i in 0..n {
                x[i] += alpha * p[i] + omega * s[i];
                r[i] = s[i] - omega * t[i];
            }
            if norm(&r) <= tol * bnorm {
                break;
            }
        }
        apply(&x, &mut tmp);
        res = norm(&b.iter().zip(&tmp).map(|(u, v)| u - v).collect::<Vec<_>>()) / bnorm;
        if res <= tol {
            return Ok(x);
        }
        if iters >= max_iter {
            break;
        }
    }
    Err(Error::NoConvergence {
        residual: res,
        iterations: iters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_chain(n: usize) -> Csr {
        // symmetric walk on a path with absorbing ends outside
        let rows = (0..n)
            .map(|i| {
                let mut r = Vec::new();
                if i > 0 {
                    r.push(((i - 1) as u32, 0.5));
                }
                if i + 1 < n {
                    r.push(((i + 1) as u32, 0.5));
                }
                r
            })
            .collect();
        Csr::from_rows(n, rows)
    }

    #[test]
    fn gambler_ruin_expected_time() {
        // E_i[tau] = (i+1)(n-i) for the walk on {0..n-1}
        let n = 20;
        let p = path_chain(n);
        assert!(p.is_symmetric(0.0));
        let b = vec![1.0; n];
        let x = conjugate_gradient(|u, v| p.apply_i_minus(u, v), &b, 1e-13, 1000).unwrap();
        for (i, xi) in x.iter().enumerate() {
            let exact = ((i + 1) * (n - i)) as f64;
            assert!((xi - exact).abs() < 1e-8 * exact);
        }
        let y = bicgstab(|u, v| p.apply_i_minus_t(u, v), &b, 1e-13, 1000).unwrap();
        for (a, c) in x.iter().zip(&y) {
            assert!((a - c).abs() < 1e-7 * a);
        }
    }

    #[test]
    fn duplicate_entries_are_merged() {
        let c = Csr::from_rows(2, vec![vec![(1, 0.25), (1, 0.25)], vec![]]);
        assert_eq!(c.nnz(), 1);
        assert_eq!(c.row_sum(0), 0.5);
    }
}
