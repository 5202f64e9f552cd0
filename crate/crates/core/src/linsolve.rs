//! ILU(0)-preconditioned BiCGSTAB.

use crate::error::{PideError, Result};
use crate::sparse::Csr;

const PIVOT_FLOOR: f64 = 1e-300;
const STAGNATION_WINDOW: usize = 50;

/// Incomplete LU factors on the sparsity pattern of `A`: strictly lower
/// part holds `L` (unit diagonal implied), the rest holds `U`.
#[derive(Debug, Clone)]
pub struct IluFactors {
    lu: Csr,
    diag: Vec<usize>,
}

pub fn ilu0(a: &Csr) -> Result<IluFactors> {
    if a.rows != a.cols {
        return Err(PideError::DimensionMismatch("ILU of a non-square matrix".into()));
    }
    let n = a.rows;
    let mut lu = a.clone();
    let mut diag = vec![usize::MAX; n];
    for (r, d) in diag.iter_mut().enumerate() {
        let (idx, _) = a.row(r);
        match idx.binary_search(&r) {
            Ok(p) => *d = a.indptr[r] + p,
            Err(_) => return Err(PideError::ZeroPivot { row: r }),
        }
    }
    // position of column j within the current row, or usize::MAX
    let mut pos = vec![usize::MAX; n];
    for i in 0..n {
        let (start, end) = (lu.indptr[i], lu.indptr[i + 1]);
        for p in start..end {
            pos[lu.indices[p]] = p;
        }
        for p in start..end {
            let k = lu.indices[p];
            if k >= i {
                break;
            }
            let pivot = lu.values[diag[k]];
            let factor = lu.values[p] / pivot;
            lu.values[p] = factor;
            for q in diag[k] + 1..lu.indptr[k + 1] {
                let j = lu.indices[q];
                if pos[j] != usize::MAX {
                    lu.values[pos[j]] -= factor * lu.values[q];
                }
            }
        }
        if lu.values[diag[i]].abs() < PIVOT_FLOOR {
            return Err(PideError::ZeroPivot { row: i });
        }
        for p in start..end {
            pos[lu.indices[p]] = usize::MAX;
        }
    }
    Ok(IluFactors { lu, diag })
}

impl IluFactors {
    /// Solves `L U x = b` in place.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let lu = &self.lu;
        let n = lu.rows;
        for i in 0..n {
            let mut acc = x[i];
            for p in lu.indptr[i]..self.diag[i] {
                acc -= lu.values[p] * x[lu.indices[p]];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for p in self.diag[i] + 1..lu.indptr[i + 1] {
                acc -= lu.values[p] * x[lu.indices[p]];
            }
            x[i] = acc / lu.values[self.diag[i]];
        }
    }
}

/// Preconditioner interface; `None` means identity.
pub trait Preconditioner {
    fn apply(&self, x: &mut [f64]);
}

impl Preconditioner for IluFactors {
    fn apply(&self, x: &mut [f64]) {
        self.solve_in_place(x);
    }
}

pub struct Identity;

impl Preconditioner for Identity {
    fn apply(&self, _x: &mut [f64]) {}
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// `||b - A x||_2 / ||b||_2`, recomputed from the returned solution.
    pub residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn true_residual(a: &Csr, b: &[f64], x: &[f64], r: &mut [f64]) -> f64 {
    a.mul_vec_into(x, r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    norm(r)
}

pub fn bicgstab(
    a: &Csr,
    precond: &impl Preconditioner,
    b: &[f64],
    x0: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<SolveOutcome> {
    let n = a.rows;
    if a.cols != n || b.len() != n || x0.len() != n {
        return Err(PideError::DimensionMismatch(format!(
            "system {}x{}, rhs {}, start {}",
            a.rows,
            a.cols,
            b.len(),
            x0.len()
        )));
    }
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok(SolveOutcome {
            solution: vec![0.0; n],
            iterations: 0,
            residual: 0.0,
        });
    }
    let mut x = x0.to_vec();
    let mut r = vec![0.0; n];
    let mut rel = true_residual(a, b, &x, &mut r) / b_norm;
    if rel <= tol {
        return Ok(SolveOutcome {
            solution: x,
            iterations: 0,
            residual: rel,
        });
    }
    let mut r_hat = r.clone();
    let mut p = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut p_hat = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut s_hat = vec![0.0; n];
    let mut t = vec![0.0; n];
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut restarted = false;
    let mut best = rel;
    let mut best_at = 0;

    for it in 1..=max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new.abs() < f64::MIN_POSITIVE.sqrt() * b_norm * norm(&r) || !rho_new.is_finite() {
            if restarted {
                return Err(PideError::Breakdown {
                    iterations: it,
                    residual: rel,
                });
            }
            restarted = true;
            rel = true_residual(a, b, &x, &mut r) / b_norm;
            r_hat.copy_from_slice(&r);
            p.fill(0.0);
            v.fill(0.0);
            rho = 1.0;
            alpha = 1.0;
            omega = 1.0;
            continue;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        p_hat.copy_from_slice(&p);
        precond.apply(&mut p_hat);
        a.mul_vec_into(&p_hat, &mut v);
        let denom = dot(&r_hat, &v);
        if denom == 0.0 || !denom.is_finite() {
            return Err(PideError::Breakdown {
                iterations: it,
                residual: rel,
            });
        }
        alpha = rho / denom;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm(&s) / b_norm <= tol {
            for i in 0..n {
                x[i] += alpha * p_hat[i];
            }
            rel = true_residual(a, b, &x, &mut r) / b_norm;
            if rel <= tol {
                return Ok(SolveOutcome {
                    solution: x,
                    iterations: it,
                    residual: rel,
                });
            }
            continue;
        }
        s_hat.copy_from_slice(&s);
        precond.apply(&mut s_hat);
        a.mul_vec_into(&s_hat, &mut t);
        let tt = dot(&t, &t);
        if tt == 0.0 {
            return Err(PideError::Breakdown {
                iterations: it,
                residual: rel,
            });
        }
        omega = dot(&t, &s) / tt;
        for i in 0..n {
            x[i] += alpha * p_hat[i] + omega * s_hat[i];
            r[i] = s[i] - omega * t[i];
        }
        rel = norm(&r) / b_norm;
        if rel <= tol {
            rel = true_residual(a, b, &x, &mut r) / b_norm;
            if rel <= tol {
                return Ok(SolveOutcome {
                    solution: x,
                    iterations: it,
                    residual: rel,
                });
            }
        }
        if omega == 0.0 {
            return Err(PideError::Breakdown {
                iterations: it,
                residual: rel,
            });
        }
        if rel < 0.5 * best {
            best = rel;
            best_at = it;
        } else if it - best_at > STAGNATION_WINDOW {
            return Err(PideError::Stagnation {
                iterations: it,
                residual: rel,
            });
        }
    }
    Err(PideError::MaxIterations {
        iterations: max_iter,
        residual: rel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tridiagonal(n: usize) -> Csr {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 4.0 + i as f64 * 0.01));
            if i > 0 {
                t.push((i, i - 1, -1.0 - 0.1 * (i % 3) as f64));
            }
            if i + 1 < n {
                t.push((i, i + 1, -0.5));
            }
        }
        Csr::from_triplets(n, n, t).unwrap()
    }

    #[test]
    fn diagonal_system_single_iteration() {
        let a = Csr::from_triplets(3, 3, vec![(0, 0, 2.0), (1, 1, 4.0), (2, 2, 8.0)]).unwrap();
        let ilu = ilu0(&a).unwrap();
        let out = bicgstab(&a, &ilu, &[2.0, 4.0, 8.0], &[0.0; 3], 1e-14, 10).unwrap();
        assert!(out.iterations <= 1);
        assert_eq!(out.solution, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn tridiagonal_ilu_is_exact() {
        let a = tridiagonal(30);
        let ilu = ilu0(&a).unwrap();
        let b: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
        let mut x = b.clone();
        ilu.solve_in_place(&mut x);
        let r = a.mul_vec(&x);
        for (ri, bi) in r.iter().zip(&b) {
            assert!((ri - bi).abs() < 1e-14);
        }
    }

    #[test]
    fn identity_and_zero_rhs() {
        let a = Csr::identity(5);
        let b = [1.0, 2.0, 3.0, 4.0, 5.0];
        let out = bicgstab(&a, &Identity, &b, &[0.0; 5], 1e-14, 5).unwrap();
        assert!(out.iterations <= 1);
        assert_eq!(out.solution, b.to_vec());
        let z = bicgstab(&a, &Identity, &[0.0; 5], &[0.0; 5], 1e-14, 5).unwrap();
        assert_eq!(z.iterations, 0);
        assert!(z.solution.iter().all(|&v| v == 0.0));
    }

    /// Dense Gaussian elimination with partial pivoting.
    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for k in 0..n {
            let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
            a.swap(k, p);
            b.swap(k, p);
            for i in k + 1..n {
                let f = a[i][k] / a[k][k];
                for j in k..n {
                    a[i][j] -= f * a[k][j];
                }
                b[i] -= f * b[k];
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
            x[i] = (b[i] - s) / a[i][i];
        }
        x
    }

    #[test]
    fn random_dominant_system_matches_direct_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100;
        let mut t = Vec::new();
        for i in 0..n {
            let mut off = 0.0;
            for _ in 0..6 {
                let j = rng.random_range(0..n);
                if j != i {
                    let v: f64 = rng.random_range(-1.0..1.0);
                    off += v.abs();
                    t.push((i, j, v));
                }
            }
            t.push((i, i, off + 1.0 + rng.random::<f64>()));
        }
        let a = Csr::from_triplets(n, n, t).unwrap();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ilu = ilu0(&a).unwrap();
        let out = bicgstab(&a, &ilu, &b, &vec![0.0; n], 1e-14, 500).unwrap();
        assert!(out.residual <= 1e-14);
        let direct = dense_solve(a.to_dense(), b);
        for (x, y) in out.solution.iter().zip(&direct) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_pivot_reported() {
        let a = Csr::from_triplets(2, 2, vec![(0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]).unwrap();
        assert_eq!(ilu0(&a).unwrap_err(), PideError::ZeroPivot { row: 0 });
    }

    #[test]
    fn deterministic() {
        let a = tridiagonal(50);
        let b: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).cos()).collect();
        let x0 = vec![0.0; 50];
        let r1 = bicgstab(&a, &Identity, &b, &x0, 1e-14, 200).unwrap();
        let r2 = bicgstab(&a, &Identity, &b, &x0, 1e-14, 200).unwrap();
        assert_eq!(r1.solution, r2.solution);
    }
}
