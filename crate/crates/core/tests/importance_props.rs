mod common;

use common::{operator_norm_raw, random_kernel, rel_err, rng, uniform};
use filterprune::forward::conv_forward_with;
use filterprune::importance::{
    direction_bank, score_energy, score_entrywise, score_gm, score_hrank, score_operator_norm,
    ImportanceReport, Method,
};
use filterprune::netgraph::Padding;
use filterprune::tensor::{EntrywiseNorm, KernelTensor, Tensor};
use filterprune::Exec;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn operator_norm(k: &KernelTensor) -> ImportanceReport {
    score_operator_norm(
        k,
        &direction_bank("l", k, Exec::Sequential),
        Exec::Sequential,
    )
    .unwrap()
}

fn feature_maps(k: &KernelTensor, xs: &[Tensor]) -> Vec<Tensor> {
    xs.iter()
        .map(|x| conv_forward_with(x, k, None, Padding::Same, [1, 1], Exec::Sequential).unwrap())
        .collect()
}

/// Scores of every criterion for one layer; active ones see the layer's
/// outputs on `xs`.
fn all_scores(k: &KernelTensor, xs: &[Tensor]) -> Vec<ImportanceReport> {
    let maps = feature_maps(k, xs);
    let mut out = vec![
        operator_norm(k),
        score_entrywise("l", k, EntrywiseNorm::L1, Exec::Sequential),
        score_entrywise("l", k, EntrywiseNorm::L2, Exec::Sequential),
        score_hrank("l", &maps, Exec::Sequential).unwrap(),
        score_energy("l", &maps, Exec::Sequential).unwrap(),
    ];
    if k.n_out() >= 2 {
        out.push(score_gm("l", k, Exec::Sequential).unwrap());
    }
    out
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| rel_err(*x, *y, scale) <= tol)
}

#[test]
fn operator_norm_matches_brute_force_oracle() {
    let mut r = rng(3);
    for trial in 0..200 {
        let k = random_kernel(&mut r, [8, 4, 3, 3]);
        let got = operator_norm(&k);
        let want = operator_norm_raw(&k);
        assert!(
            close(&got.raw, &want, 1e-6),
            "trial {trial}: {:?} vs {want:?}",
            got.raw
        );
        let want_norm = ImportanceReport::new("l", Method::OperatorNorm, want).normalized;
        assert!(close(&got.normalized, &want_norm, 1e-6), "trial {trial}");
    }
}

#[test]
fn direction_columns_are_unit_or_zero() {
    let mut r = rng(5);
    for _ in 0..100 {
        let k = random_kernel(&mut r, [8, 6, 3, 3]);
        let bank = direction_bank("l", &k, Exec::Sequential);
        for c in 0..k.n_in() {
            let n: f64 = bank.direction(c).iter().map(|x| x * x).sum::<f64>().sqrt();
            if bank.degenerate_channels.contains(&c) {
                assert_eq!(n, 0.0);
            } else {
                assert!((n - 1.0).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn scale_invariance_at_fixed_factors() {
    let mut r = rng(9);
    for _ in 0..50 {
        let k = random_kernel(&mut r, [8, 4, 3, 3]);
        let base = operator_norm(&k);
        for lambda in [0.1f32, 1.0, 7.0] {
            let s = operator_norm(&k.scaled(lambda));
            assert!(
                close(&s.normalized, &base.normalized, 1e-6),
                "lambda {lambda}"
            );
            assert_eq!(
                s.ascending_order(),
                base.ascending_order(),
                "lambda {lambda}"
            );
        }
    }
}

#[test]
fn operator_norm_depends_on_which_filter_comes_first() {
    // Channel directions are taken from the first row of u1 w1^T, so their
    // sign follows u1[0]. Moving a filter with the opposite sign to the
    // front flips a column of C and changes the ranking.
    let k = KernelTensor::new(
        3,
        2,
        1,
        2,
        vec![1.0, 0.0, 1.0, 0.2, -1.0, 0.1, 1.0, 0.0, 0.0, 1.0, 0.5, 0.5],
    )
    .unwrap();
    let a = operator_norm(&k);
    let b = operator_norm(&k.permute_filters(&[1, 0, 2]).unwrap());
    let permuted = [a.normalized[1], a.normalized[0], a.normalized[2]];
    assert!(
        !close(&b.normalized, &permuted, 1e-3),
        "{:?} vs {permuted:?}",
        b.normalized
    );
}

fn kernel_strategy() -> impl Strategy<Value = KernelTensor> {
    (2usize..=8, 1usize..=4, 1usize..=3, 1usize..=3, any::<u64>()).prop_map(|(o, i, h, w, seed)| {
        let mut r = rng(seed);
        KernelTensor::new(o, i, h, w, uniform(&mut r, o * i * h * w)).unwrap()
    })
}

fn inputs(n_in: usize, seed: u64) -> Vec<Tensor> {
    let mut r = rng(seed);
    (0..3)
        .map(|_| Tensor::new(vec![n_in, 5, 6], uniform(&mut r, n_in * 30)).unwrap())
        .collect()
}

proptest! {
    #[test]
    fn permutation_equivariance(k in kernel_strategy(), seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut perm: Vec<usize> = (0..k.n_out()).collect();
        perm.shuffle(&mut r);
        let xs = inputs(k.n_in(), seed);
        let base = all_scores(&k, &xs);
        let moved = all_scores(&k.permute_filters(&perm).unwrap(), &xs);
        for (b, m) in base.iter().zip(&moved) {
            if b.method == Method::OperatorNorm && perm[0] != 0 {
                // see operator_norm_depends_on_which_filter_comes_first
                continue;
            }
            let want: Vec<f64> = perm.iter().map(|&p| b.raw[p]).collect();
            prop_assert!(close(&m.raw, &want, 1e-9), "{}: {:?} vs {:?}", b.method, m.raw, want);
        }
    }

    #[test]
    fn operator_norm_equivariant_when_first_filter_stays(k in kernel_strategy(), seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut rest: Vec<usize> = (1..k.n_out()).collect();
        rest.shuffle(&mut r);
        let perm: Vec<usize> = std::iter::once(0).chain(rest).collect();
        let b = operator_norm(&k);
        let m = operator_norm(&k.permute_filters(&perm).unwrap());
        let want: Vec<f64> = perm.iter().map(|&p| b.normalized[p]).collect();
        prop_assert!(close(&m.normalized, &want, 1e-9));
    }

    #[test]
    fn scale_invariance(k in kernel_strategy(), e in -6i32..=6) {
        // powers of two scale f32 weights exactly, so scores must agree tightly
        let base = operator_norm(&k);
        let s = operator_norm(&k.scaled(2f32.powi(e)));
        prop_assert!(close(&s.normalized, &base.normalized, 1e-9));
        prop_assert_eq!(s.ascending_order(), base.ascending_order());
    }

    #[test]
    fn normalized_scores_in_unit_interval(k in kernel_strategy(), seed in any::<u64>()) {
        for rep in all_scores(&k, &inputs(k.n_in(), seed)) {
            prop_assert!(rep.normalized.iter().all(|&v| (0.0..=1.0).contains(&v)));
            let ones = rep.normalized.iter().filter(|&&v| v == 1.0).count();
            let key: Vec<f64> = match rep.method {
                Method::OperatorNorm => rep.raw.iter().map(|v| v * v).collect(),
                _ => rep.raw.clone(),
            };
            let max = key.iter().copied().fold(0.0f64, f64::max);
            if max > 0.0 && key.iter().filter(|&&v| v == max).count() == 1 {
                prop_assert_eq!(ones, 1, "{}", rep.method);
            }
        }
    }

    #[test]
    fn entrywise_norms_ignore_entry_order(k in kernel_strategy(), seed in any::<u64>()) {
        let mut r = rng(seed);
        let len = k.n_in() * k.k_v();
        let mut data = Vec::with_capacity(k.data().len());
        for j in 0..k.n_out() {
            let mut f = k.filter_slice(j).to_vec();
            let shift = r.random_range(0..len);
            f.rotate_left(shift);
            f.shuffle(&mut r);
            data.extend(f);
        }
        let shuffled = KernelTensor::new(k.n_out(), k.n_in(), k.k_h(), k.k_w(), data).unwrap();
        for p in [EntrywiseNorm::L1, EntrywiseNorm::L2] {
            let a = score_entrywise("l", &k, p, Exec::Sequential);
            let b = score_entrywise("l", &shuffled, p, Exec::Sequential);
            prop_assert!(close(&a.raw, &b.raw, 1e-12));
        }
    }

    #[test]
    fn parallel_and_sequential_agree_exactly(k in kernel_strategy()) {
        let seq = score_operator_norm(&k, &direction_bank("l", &k, Exec::Sequential), Exec::Sequential).unwrap();
        let par = score_operator_norm(&k, &direction_bank("l", &k, Exec::Parallel), Exec::Parallel).unwrap();
        prop_assert_eq!(seq, par);
    }
}
