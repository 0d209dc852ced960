use super::Matrix;
use crate::error::{Error, Result};

const JACOBI_TOL: f64 = 1e-15;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Leading singular triple of a matrix, `M ~ sigma1 * u1 * w1^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rank1Factors {
    pub sigma1: f64,
    pub u1: Vec<f64>,
    pub w1: Vec<f64>,
    /// Set when the input was all zeros; `u1` and `w1` are then zero vectors.
    pub degenerate: bool,
}

impl Rank1Factors {
    /// Row `i` of the rank-1 product `u1 * w1^T`. Sign-invariant under
    /// `(u1, w1) -> (-u1, -w1)`.
    pub fn outer_row(&self, i: usize) -> Vec<f64> {
        let ui = self.u1[i];
        self.w1.iter().map(|w| ui * w).collect()
    }
}

/// Column-oriented copy of a matrix in f64.
fn columns<T: Copy + Into<f64>>(m: &Matrix<T>) -> Vec<Vec<f64>> {
    (0..m.cols())
        .map(|c| (0..m.rows()).map(|r| m.get(r, c).into()).collect())
        .collect()
}

fn transposed_columns<T: Copy + Into<f64>>(m: &Matrix<T>) -> Vec<Vec<f64>> {
    (0..m.rows())
        .map(|r| m.row(r).iter().map(|&v| v.into()).collect())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One-sided (Hestenes) Jacobi: orthogonalises the columns of `a` in place.
/// On return the column norms are the singular values and, if requested,
/// `v` holds the matching right singular vectors as columns.
fn hestenes(a: &mut [Vec<f64>], mut v: Option<&mut [Vec<f64>]>) {
    let n = a.len();
    // columns at rounding-noise level never settle; leave them alone
    let frob2: f64 = a.iter().map(|col| dot(col, col)).sum();
    let negligible = (f64::EPSILON * f64::EPSILON) * frob2;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&a[p], &a[p]);
                let beta = dot(&a[q], &a[q]);
                let gamma = dot(&a[p], &a[q]);
                if alpha <= negligible
                    || beta <= negligible
                    || gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt()
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(a, p, q, c, s);
                if let Some(v) = v.as_deref_mut() {
                    rotate(v, p, q, c, s);
                }
            }
        }
        if !rotated {
            break;
        }
    }
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let (xp, xq) = (&mut left[p], &mut right[0]);
    for (a, b) in xp.iter_mut().zip(xq.iter_mut()) {
        let (ap, aq) = (*a, *b);
        *a = c * ap - s * aq;
        *b = s * ap + c * aq;
    }
}

fn column_norms(a: &[Vec<f64>]) -> Vec<f64> {
    a.iter().map(|col| dot(col, col).sqrt()).collect()
}

/// Leading singular triple via one-sided Jacobi.
///
/// The sign of the pair is fixed so the largest-magnitude entry of `w1` is
/// positive. An all-zero input gives a degenerate result instead of an error.
pub fn svd_rank1<T: Copy + Into<f64>>(m: &Matrix<T>) -> Rank1Factors {
    let (rows, cols) = m.shape();
    // orthogonalise the shorter side
    let wide = cols > rows;
    let mut a = if wide {
        transposed_columns(m)
    } else {
        columns(m)
    };
    if a.iter().all(|col| col.iter().all(|&x| x == 0.0)) {
        return Rank1Factors {
            sigma1: 0.0,
            u1: vec![0.0; rows],
            w1: vec![0.0; cols],
            degenerate: true,
        };
    }
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            e
        })
        .collect();
    hestenes(&mut a, Some(&mut v));
    let norms = column_norms(&a);
    let lead = norms
        .iter()
        .enumerate()
        .fold(0, |best, (i, &s)| if s > norms[best] { i } else { best });
    let sigma1 = norms[lead];
    let left: Vec<f64> = a[lead].iter().map(|x| x / sigma1).collect();
    let right = v.swap_remove(lead);
    let (mut u1, mut w1) = if wide { (right, left) } else { (left, right) };

    let pivot = w1.iter().enumerate().fold(
        0,
        |best, (i, x)| if x.abs() > w1[best].abs() { i } else { best },
    );
    if w1[pivot] < 0.0 {
        w1.iter_mut().for_each(|x| *x = -*x);
        u1.iter_mut().for_each(|x| *x = -*x);
    }
    Rank1Factors {
        sigma1,
        u1,
        w1,
        degenerate: false,
    }
}

/// Largest singular value.
pub fn operator_norm<T: Copy + Into<f64>>(m: &Matrix<T>) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// All singular values in descending order (`min(rows, cols)` of them).
pub fn singular_values<T: Copy + Into<f64>>(m: &Matrix<T>) -> Vec<f64> {
    let (rows, cols) = m.shape();
    let mut a = if cols <= rows {
        columns(m)
    } else {
        transposed_columns(m)
    };
    hestenes(&mut a, None);
    let mut s = column_norms(&a);
    s.sort_by(|x, y| y.total_cmp(x));
    s.truncate(rows.min(cols));
    s
}

/// Count of singular values above `rel_eps * sigma_max * max(rows, cols)`.
pub fn numerical_rank<T: Copy + Into<f64>>(m: &Matrix<T>, rel_eps: f64) -> usize {
    let s = singular_values(m);
    let smax = s.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return 0;
    }
    let cutoff = rel_eps * smax * m.rows().max(m.cols()) as f64;
    s.iter().filter(|&&x| x > cutoff).count()
}

/// Sum of all singular values.
pub fn nuclear_norm<T: Copy + Into<f64>>(m: &Matrix<T>) -> f64 {
    singular_values(m).iter().sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntrywiseNorm {
    L1,
    L2,
}

pub fn entrywise_norm(values: &[f32], p: EntrywiseNorm) -> f64 {
    match p {
        EntrywiseNorm::L1 => values.iter().map(|&v| (v as f64).abs()).sum(),
        EntrywiseNorm::L2 => values
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt(),
    }
}

/// `trace(F * C)` for `F: n x k` and `C: k x n`, without forming the product.
pub fn trace_product<A, B>(f: &Matrix<A>, c: &Matrix<B>) -> Result<f64>
where
    A: Copy + Into<f64>,
    B: Copy + Into<f64>,
{
    if f.cols() != c.rows() || f.rows() != c.cols() {
        return Err(Error::DimensionMismatch {
            left: format!("F {}x{}", f.rows(), f.cols()),
            right: format!("C {}x{}", c.rows(), c.cols()),
        });
    }
    let mut acc = 0.0f64;
    for r in 0..f.rows() {
        for (k, &x) in f.row(r).iter().enumerate() {
            acc += x.into() * c.get(k, r).into();
        }
    }
    Ok(acc)
}
