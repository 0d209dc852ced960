use super::{ImportanceReport, Method};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::tensor::{nuclear_norm, numerical_rank, Matrix, Tensor};

/// Singular values below `HRANK_REL_EPS * sigma_max * max(h, w)` count as zero.
pub const HRANK_REL_EPS: f64 = 1e-7;

fn maps(t: &Tensor) -> Result<(usize, usize, usize)> {
    match *t.dims() {
        [n, h, w] => Ok((n, h, w)),
        _ => Err(Error::InvalidTensor(format!(
            "feature maps must be (n, h, w), got {:?}",
            t.dims()
        ))),
    }
}

fn per_map<F>(t: &Tensor, exec: Exec, f: F) -> Result<Vec<f64>>
where
    F: Fn(&Matrix<f32>) -> f64 + Sync + Send,
{
    let (n, h, w) = maps(t)?;
    let data = t.data();
    Ok(exec.map_range(n, |j| {
        let m = Matrix::new(h, w, data[j * h * w..(j + 1) * h * w].to_vec())
            .expect("slice has h*w entries");
        f(&m)
    }))
}

/// Numerical rank of each `h x w` map of one sample.
pub fn feature_map_ranks(t: &Tensor, exec: Exec) -> Result<Vec<f64>> {
    per_map(t, exec, |m| numerical_rank(m, HRANK_REL_EPS) as f64)
}

/// Nuclear norm of each `h x w` map of one sample.
pub fn feature_map_energies(t: &Tensor, exec: Exec) -> Result<Vec<f64>> {
    per_map(t, exec, nuclear_norm)
}

fn average(
    layer_id: &str,
    method: Method,
    samples: &[Tensor],
    exec: Exec,
    per_sample: fn(&Tensor, Exec) -> Result<Vec<f64>>,
) -> Result<ImportanceReport> {
    let first = samples.first().ok_or_else(|| {
        Error::InvalidArgument(format!(
            "{} on `{layer_id}` needs at least one sample",
            method
        ))
    })?;
    let dims = first.dims();
    if let Some(bad) = samples.iter().find(|s| s.dims() != dims) {
        return Err(Error::InvalidTensor(format!(
            "inconsistent feature-map shapes: {dims:?} vs {:?}",
            bad.dims()
        )));
    }
    let per = exec.try_map(samples, |s| per_sample(s, Exec::Sequential))?;
    let n = dims[0];
    let mut sums = vec![0.0f64; n];
    for v in &per {
        for (acc, x) in sums.iter_mut().zip(v) {
            *acc += x;
        }
    }
    let raw = sums.into_iter().map(|s| s / samples.len() as f64).collect();
    Ok(ImportanceReport::new(layer_id, method, raw).with_meta("samples", samples.len()))
}

/// Mean numerical rank of each filter's feature map over the samples.
pub fn score_hrank(
    layer_id: &str,
    feature_maps: &[Tensor],
    exec: Exec,
) -> Result<ImportanceReport> {
    average(
        layer_id,
        Method::Hrank,
        feature_maps,
        exec,
        feature_map_ranks,
    )
}

/// Mean nuclear norm of each filter's feature map over the samples.
pub fn score_energy(
    layer_id: &str,
    feature_maps: &[Tensor],
    exec: Exec,
) -> Result<ImportanceReport> {
    average(
        layer_id,
        Method::Energy,
        feature_maps,
        exec,
        feature_map_energies,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stack(maps: &[Vec<f32>], h: usize, w: usize) -> Tensor {
        Tensor::new(vec![maps.len(), h, w], maps.concat()).unwrap()
    }

    #[test]
    fn rank_examples() {
        let zero = vec![0.0; 16];
        let mut eye = vec![0.0; 16];
        for i in 0..4 {
            eye[i * 4 + i] = 1.0;
        }
        let u = [1.0f32, -2.0, 0.5, 3.0];
        let v = [2.0f32, 1.0, -1.0, 0.25];
        let outer: Vec<f32> = u
            .iter()
            .flat_map(|a| v.iter().map(move |b| a * b))
            .collect();
        let t = stack(&[zero, eye, outer], 4, 4);
        let r = score_hrank("c", &[t], Exec::Sequential).unwrap();
        assert_eq!(r.raw, [0.0, 4.0, 1.0]);
    }

    #[test]
    fn energy_examples() {
        let diag = vec![2.0, 0.0, 0.0, 1.0];
        let zero = vec![0.0; 4];
        let eye = vec![1.0, 0.0, 0.0, 1.0];
        let r = score_energy("c", &[stack(&[diag, zero, eye], 2, 2)], Exec::Sequential).unwrap();
        assert!((r.raw[0] - 3.0).abs() < 1e-12);
        assert_eq!(r.raw[1], 0.0);
        assert!((r.raw[2] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn averages_over_samples() {
        let a = stack(&[vec![1.0, 0.0, 0.0, 1.0]], 2, 2);
        let b = stack(&[vec![1.0, 1.0, 1.0, 1.0]], 2, 2);
        let r = score_hrank("c", &[a, b], Exec::Sequential).unwrap();
        assert_eq!(r.raw, [1.5]);
        assert_eq!(r.metadata["samples"], 2);
    }

    #[test]
    fn empty_or_ragged_samples_are_errors() {
        assert!(score_hrank("c", &[], Exec::Sequential).is_err());
        assert!(score_energy("c", &[], Exec::Sequential).is_err());
        let a = stack(&[vec![1.0; 4]], 2, 2);
        let b = stack(&[vec![1.0; 6]], 2, 3);
        assert!(score_hrank("c", &[a, b], Exec::Sequential).is_err());
    }
}
