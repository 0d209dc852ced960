//! Independent reference implementations used by the integration tests.
//! Nothing here calls into the crate's numeric code.
#![allow(dead_code)]

use filterprune::tensor::KernelTensor;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, len: usize) -> Vec<f32> {
    (0..len).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

pub fn random_kernel(rng: &mut ChaCha8Rng, max: [usize; 4]) -> KernelTensor {
    let n_out = rng.random_range(1..=max[0]);
    let n_in = rng.random_range(1..=max[1]);
    let k_h = rng.random_range(1..=max[2]);
    let k_w = rng.random_range(1..=max[3]);
    let data = uniform(rng, n_out * n_in * k_h * k_w);
    KernelTensor::new(n_out, n_in, k_h, k_w, data).unwrap()
}

/// |got - want| relative to `scale`.
pub fn rel_err(got: f64, want: f64, scale: f64) -> f64 {
    if scale == 0.0 {
        (got - want).abs()
    } else {
        (got - want).abs() / scale
    }
}

fn dmatrix(rows: usize, cols: usize, data: &[f32]) -> DMatrix<f64> {
    DMatrix::from_row_slice(
        rows,
        cols,
        &data.iter().map(|&v| v as f64).collect::<Vec<_>>(),
    )
}

/// Largest eigenpair of the Gram matrix `M^T M` by a dense symmetric solver.
fn top_gram_eigen(m: &DMatrix<f64>) -> (f64, Vec<f64>) {
    let eig = (m.transpose() * m).symmetric_eigen();
    let (k, &lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    (
        lambda.max(0.0),
        eig.eigenvectors.column(k).iter().copied().collect(),
    )
}

/// `sigma1 = sqrt(lambda_max(M^T M))`.
pub fn sigma1(rows: usize, cols: usize, data: &[f32]) -> f64 {
    top_gram_eigen(&dmatrix(rows, cols, data)).0.sqrt()
}

/// Raw operator-norm scores: per channel, the first row of `u1 w1^T` from an
/// eigendecomposition of `V_c^T V_c`, made unit; then `trace(F_j C)` with the
/// product formed explicitly.
pub fn operator_norm_raw(k: &KernelTensor) -> Vec<f64> {
    let (n_out, n_in, kv) = (k.n_out(), k.n_in(), k.k_v());
    let data = k.data();
    let at = |j: usize, c: usize, t: usize| data[(j * n_in + c) * kv + t] as f64;

    let mut cmat = DMatrix::<f64>::zeros(kv, n_in);
    for c in 0..n_in {
        let v = DMatrix::from_fn(n_out, kv, |j, t| at(j, c, t));
        let (lambda, w) = top_gram_eigen(&v);
        if lambda <= 0.0 {
            continue;
        }
        let s = lambda.sqrt();
        let u0: f64 = (0..kv).map(|t| v[(0, t)] * w[t]).sum::<f64>() / s;
        let row: Vec<f64> = w.iter().map(|x| u0 * x).collect();
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= 1e-12 {
            continue;
        }
        for t in 0..kv {
            cmat[(t, c)] = row[t] / norm;
        }
    }
    (0..n_out)
        .map(|j| {
            let f = DMatrix::from_fn(n_in, kv, |c, t| at(j, c, t));
            (f * &cmat).trace()
        })
        .collect()
}

/// Rank over the rationals by fraction-free (Bareiss) elimination.
pub fn exact_rank(rows: &[Vec<i64>]) -> usize {
    let mut a: Vec<Vec<i128>> = rows
        .iter()
        .map(|r| r.iter().map(|&v| v as i128).collect())
        .collect();
    let (n, m) = (a.len(), a.first().map_or(0, |r| r.len()));
    let mut rank = 0;
    let mut prev = 1i128;
    for col in 0..m {
        let Some(p) = (rank..n).find(|&r| a[r][col] != 0) else {
            continue;
        };
        a.swap(rank, p);
        for r in rank + 1..n {
            for c in col + 1..m {
                a[r][c] = (a[rank][col] * a[r][c] - a[r][col] * a[rank][c]) / prev;
            }
            a[r][col] = 0;
        }
        prev = a[rank][col];
        rank += 1;
        if rank == n {
            break;
        }
    }
    rank
}

pub struct ConvCase {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub same: bool,
    pub stride: [usize; 2],
}

/// Output size and leading pad of one axis, computed from first principles.
fn axis(input: usize, k: usize, s: usize, same: bool) -> (usize, usize) {
    if same {
        let out = input.div_ceil(s);
        let total = ((out - 1) * s + k).saturating_sub(input);
        (out, total / 2)
    } else {
        ((input - k) / s + 1, 0)
    }
}

/// Direct nested-loop cross-correlation. Returns `(h_out, w_out, data)`.
pub fn conv_naive(
    x: &[f32],
    case: &ConvCase,
    k: &KernelTensor,
    bias: Option<&[f32]>,
) -> (usize, usize, Vec<f32>) {
    let (ho, pt) = axis(case.h, k.k_h(), case.stride[0], case.same);
    let (wo, pl) = axis(case.w, k.k_w(), case.stride[1], case.same);
    let kd = k.data();
    let mut out = vec![0f32; k.n_out() * ho * wo];
    for o in 0..k.n_out() {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = bias.map_or(0.0, |b| b[o] as f64);
                for c in 0..case.c {
                    for ky in 0..k.k_h() {
                        for kx in 0..k.k_w() {
                            let iy = (oy * case.stride[0] + ky) as isize - pt as isize;
                            let ix = (ox * case.stride[1] + kx) as isize - pl as isize;
                            if iy < 0 || ix < 0 || iy >= case.h as isize || ix >= case.w as isize {
                                continue;
                            }
                            let xv = x[(c * case.h + iy as usize) * case.w + ix as usize] as f64;
                            let wv = kd[((o * case.c + c) * k.k_h() + ky) * k.k_w() + kx] as f64;
                            acc += xv * wv;
                        }
                    }
                }
                out[(o * ho + oy) * wo + ox] = acc as f32;
            }
        }
    }
    (ho, wo, out)
}
