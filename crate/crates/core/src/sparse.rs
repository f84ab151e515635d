//! Compressed sparse row matrices and the linear solvers used by the forward
//! problem, the normal-equation solve and the coupled elliptic system.

use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, mut trip: Vec<(usize, usize, f64)>) -> CsrMatrix {
        trip.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0; nrows + 1];
        let mut indices = Vec::with_capacity(trip.len());
        let mut values: Vec<f64> = Vec::with_capacity(trip.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in trip {
            assert!(r < nrows && c < ncols, "triplet out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        CsrMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(cc, _)| cc == c).map_or(0.0, |(_, v)| v)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows).map(|r| self.get(r, r)).collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows)
            .into_par_iter()
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    /// Largest `|A_ij - A_ji|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let mut worst: f64 = 0.0;
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                worst = worst.max((v - self.get(c, r)).abs());
            }
        }
        worst / scale
    }

    /// Half bandwidth: `max |i - j|` over stored entries.
    pub fn bandwidth(&self) -> usize {
        (0..self.nrows)
            .flat_map(|r| self.row(r).map(move |(c, _)| r.abs_diff(c)))
            .max()
            .unwrap_or(0)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.par_iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Relative residual `|b - A x| / |b|` (absolute when `b = 0`).
pub fn relative_residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.mul_vec(x);
    let r: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
    let nb = norm(b);
    if nb > 0.0 {
        norm(&r) / nb
    } else {
        norm(&r)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

fn jacobi(a: &CsrMatrix) -> Vec<f64> {
    a.diagonal()
        .into_iter()
        .map(|d| if d.abs() > 0.0 { 1.0 / d } else { 1.0 })
        .collect()
}

/// Jacobi-preconditioned conjugate gradients for symmetric positive (semi)definite systems.
///
/// With `project_mean` the iterates are kept orthogonal to constants, which
/// solves consistent singular systems whose kernel is the constant vector.
pub fn conjugate_gradient(
    a: &CsrMatrix,
    b: &[f64],
    tol: f64,
    max_iter: usize,
    project_mean: bool,
) -> Result<(Vec<f64>, SolveStats)> {
    let n = b.len();
    let nb = norm(b);
    let mut x = vec![0.0; n];
    if nb == 0.0 {
        return Ok((x, SolveStats { iterations: 0, residual: 0.0 }));
    }
    let minv = jacobi(a);
    let project = |v: &mut Vec<f64>| {
        if project_mean {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter_mut().for_each(|e| *e -= m);
        }
    };
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&minv).map(|(a, m)| a * m).collect();
    project(&mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 0..max_iter {
        let ap = a.mul_vec(&p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::Solver {
                iterations: it,
                residual: norm(&r) / nb,
            });
        }
        let alpha = rz / pap;
        x.par_iter_mut().zip(&p).for_each(|(x, p)| *x += alpha * p);
        r.par_iter_mut().zip(&ap).for_each(|(r, q)| *r -= alpha * q);
        let res = norm(&r) / nb;
        if res <= tol {
            project(&mut x);
            return Ok((x, SolveStats { iterations: it + 1, residual: res }));
        }
        z = r.iter().zip(&minv).map(|(a, m)| a * m).collect();
        project(&mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.par_iter_mut().zip(&z).for_each(|(p, z)| *p = z + beta * *p);
    }
    Err(Error::Solver {
        iterations: max_iter,
        residual: norm(&r) / nb,
    })
}

/// Jacobi-preconditioned BiCGSTAB for general nonsymmetric systems.
pub fn bicgstab(a: &CsrMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, SolveStats)> {
    let n = b.len();
    let nb = norm(b);
    let mut x = vec![0.0; n];
    if nb == 0.0 {
        return Ok((x, SolveStats { iterations: 0, residual: 0.0 }));
    }
    let minv = jacobi(a);
    let precond = |v: &[f64]| -> Vec<f64> { v.iter().zip(&minv).map(|(a, m)| a * m).collect() };
    let mut r = b.to_vec();
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    for it in 0..max_iter {
        let rho_new = dot(&r0, &r);
        if rho_new == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for k in 0..n {
            p[k] = r[k] + beta * (p[k] - omega * v[k]);
        }
        let phat = precond(&p);
        v = a.mul_vec(&phat);
        alpha = rho / dot(&r0, &v);
        let s: Vec<f64> = r.iter().zip(&v).map(|(r, v)| r - alpha * v).collect();
        if norm(&s) / nb <= tol {
            x.iter_mut().zip(&phat).for_each(|(x, p)| *x += alpha * p);
            let res = relative_residual(a, &x, b);
            if res <= tol {
                return Ok((x, SolveStats { iterations: it + 1, residual: res }));
            }
            r = b.iter().zip(a.mul_vec(&x)).map(|(b, q)| b - q).collect();
            continue;
        }
        let shat = precond(&s);
        let t = a.mul_vec(&shat);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for k in 0..n {
            x[k] += alpha * phat[k] + omega * shat[k];
            r[k] = s[k] - omega * t[k];
        }
        let res = norm(&r) / nb;
        if res <= tol {
            let true_res = relative_residual(a, &x, b);
            if true_res <= tol * 10.0 {
                return Ok((x, SolveStats { iterations: it + 1, residual: true_res }));
            }
        }
        if omega == 0.0 {
            break;
        }
    }
    Err(Error::Solver {
        iterations: max_iter,
        residual: relative_residual(a, &x, b),
    })
}

/// Banded LU factorization without pivoting, followed by one step of iterative refinement.
///
/// Suited to the diagonally weighted elliptic systems assembled here; a
/// vanishing pivot is reported as a solver failure.
pub fn banded_solve(a: &CsrMatrix, b: &[f64]) -> Result<(Vec<f64>, SolveStats)> {
    let n = a.nrows();
    let bw = a.bandwidth();
    let width = 2 * bw + 1;
    // band[i * width + (j + bw - i)] = A_ij
    let mut band = vec![0.0; n * width];
    for r in 0..n {
        for (c, v) in a.row(r) {
            band[r * width + c + bw - r] += v;
        }
    }
    let at = |i: usize, j: usize| i * width + j + bw - i;
    let scale = band.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for k in 0..n {
        let pivot = band[at(k, k)];
        if pivot.abs() <= 1e-14 * scale {
            return Err(Error::Solver { iterations: k, residual: f64::INFINITY });
        }
        let iend = (k + bw + 1).min(n);
        for i in k + 1..iend {
            let l = band[at(i, k)] / pivot;
            if l == 0.0 {
                continue;
            }
            band[at(i, k)] = l;
            for j in k + 1..iend {
                band[at(i, j)] -= l * band[at(k, j)];
            }
        }
    }
    let solve = |rhs: &[f64]| -> Vec<f64> {
        let mut y = rhs.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let mut s = y[i];
            for j in lo..i {
                s -= band[at(i, j)] * y[j];
            }
            y[i] = s;
        }
        for i in (0..n).rev() {
            let hi = (i + bw + 1).min(n);
            let mut s = y[i];
            for j in i + 1..hi {
                s -= band[at(i, j)] * y[j];
            }
            y[i] = s / band[at(i, i)];
        }
        y
    };
    let mut x = solve(b);
    let r: Vec<f64> = b.iter().zip(a.mul_vec(&x)).map(|(b, q)| b - q).collect();
    let dx = solve(&r);
    x.iter_mut().zip(dx).for_each(|(x, d)| *x += d);
    let residual = relative_residual(a, &x, b);
    Ok((x, SolveStats { iterations: 1, residual }))
}
