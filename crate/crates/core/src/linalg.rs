//! Dense linear algebra for small (n ≲ 10) channel-space matrices.
//!
//! The Hamiltonians here are tiny real symmetric matrices, so a cyclic Jacobi
//! eigensolver and a partial-pivot complex solve are both faster and easier to
//! audit than linking a LAPACK backend.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Eigendecomposition of a real symmetric matrix: `a = vecs · diag(vals) · vecsᵀ`.
/// Eigenvalues are returned in ascending order, eigenvectors as the columns
/// of `vecs`.
pub struct SymEigen {
    pub vals: Array1<f64>,
    pub vecs: Array2<f64>,
}

/// Cyclic Jacobi diagonalization of a real symmetric matrix.
pub fn sym_eigen(a: &Array2<f64>) -> Result<SymEigen> {
    let n = check_square(a)?;
    let mut m = a.clone();
    let mut v = Array2::<f64>::eye(n);

    if n == 1 {
        return Ok(SymEigen {
            vals: Array1::from(vec![m[(0, 0)]]),
            vecs: v,
        });
    }

    let scale: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
    const MAX_SWEEPS: usize = 64;
    for _ in 0..MAX_SWEEPS {
        let off: f64 = off_diag_norm(&m);
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq.abs() <= 1e-18 * scale {
                    continue;
                }
                // Classic Jacobi rotation annihilating (p, q).
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if off_diag_norm(&m) > 1e-10 * scale {
        return Err(Error::propagation("jacobi eigensolver did not converge"));
    }

    // Sort ascending, permuting eigenvector columns along.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].partial_cmp(&m[(j, j)]).unwrap());
    let vals = Array1::from_iter(order.iter().map(|&i| m[(i, i)]));
    let mut vecs = Array2::<f64>::zeros((n, n));
    for (new, &old) in order.iter().enumerate() {
        for k in 0..n {
            vecs[(k, new)] = v[(k, old)];
        }
    }
    Ok(SymEigen { vals, vecs })
}

fn off_diag_norm(m: &Array2<f64>) -> f64 {
    let n = m.nrows();
    let mut s = 0.0;
    for p in 0..n {
        for q in 0..n {
            if p != q {
                s += m[(p, q)] * m[(p, q)];
            }
        }
    }
    s.sqrt()
}

/// Solve `a · x = b` for complex square `a` by Gaussian elimination with
/// partial pivoting. `a` and `b` are consumed as working storage.
pub fn solve_complex(mut a: Array2<Complex64>, mut b: Array1<Complex64>) -> Result<Array1<Complex64>> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: b.len(),
        });
    }
    for col in 0..n {
        let mut piv = col;
        let mut piv_norm = a[(col, col)].norm_sqr();
        for row in col + 1..n {
            let nrm = a[(row, col)].norm_sqr();
            if nrm > piv_norm {
                piv = row;
                piv_norm = nrm;
            }
        }
        if piv_norm == 0.0 {
            return Err(Error::propagation("singular linear solve"));
        }
        if piv != col {
            for k in col..n {
                let tmp = a[(col, k)];
                a[(col, k)] = a[(piv, k)];
                a[(piv, k)] = tmp;
            }
            b.swap(col, piv);
        }
        let inv = a[(col, col)].inv();
        for row in col + 1..n {
            let factor = a[(row, col)] * inv;
            if factor == Complex64::new(0.0, 0.0) {
                continue;
            }
            for k in col + 1..n {
                let tmp = a[(col, k)];
                a[(row, k)] -= factor * tmp;
            }
            let tmp = b[col];
            b[row] -= factor * tmp;
        }
    }
    for col in (0..n).rev() {
        let mut acc = b[col];
        for k in col + 1..n {
            acc -= a[(col, k)] * b[k];
        }
        b[col] = acc / a[(col, col)];
    }
    Ok(b)
}

/// `out = m · v` for real `m` and complex `v`.
pub fn real_matvec_complex(m: &Array2<f64>, v: &Array1<Complex64>, out: &mut Array1<Complex64>) {
    let n = m.nrows();
    for i in 0..n {
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 0..n {
            acc += m[(i, j)] * v[j];
        }
        out[i] = acc;
    }
}

fn check_square(a: &Array2<f64>) -> Result<usize> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Dimension {
            expected: n,
            got: a.ncols(),
        });
    }
    Ok(n)
}
