use super::{ImportanceReport, Method};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::tensor::{entrywise_norm, EntrywiseNorm, KernelTensor};

/// Entry-wise l1 or l2 norm of every filter.
pub fn score_entrywise(
    layer_id: &str,
    kernel: &KernelTensor,
    p: EntrywiseNorm,
    exec: Exec,
) -> ImportanceReport {
    let raw = exec.map_range(kernel.n_out(), |j| {
        entrywise_norm(kernel.filter_slice(j), p)
    });
    let method = match p {
        EntrywiseNorm::L1 => Method::L1,
        EntrywiseNorm::L2 => Method::L2,
    };
    ImportanceReport::new(layer_id, method, raw)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeiszfeldOptions {
    /// Stop once the iterate moves less than this (l2).
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Offset applied to every coordinate when an iterate lands on a point.
    pub perturbation: f64,
}

impl Default for WeiszfeldOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_iterations: 500,
            perturbation: 1e-12,
        }
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Geometric median of `points` by Weiszfeld iteration from the
/// coordinate-wise mean. Returns the median and the iteration count.
pub fn geometric_median(points: &[Vec<f64>], opts: WeiszfeldOptions) -> (Vec<f64>, usize) {
    let n = points.len();
    let dim = points.first().map_or(0, |p| p.len());
    if points.iter().all(|p| p == &points[0]) {
        return (points.first().cloned().unwrap_or_default(), 0);
    }
    let mut y: Vec<f64> = (0..dim)
        .map(|k| points.iter().map(|p| p[k]).sum::<f64>() / n as f64)
        .collect();
    for iter in 1..=opts.max_iterations {
        let mut d: Vec<f64> = points.iter().map(|p| distance(p, &y)).collect();
        if d.iter().any(|&di| di < opts.perturbation) {
            y.iter_mut().for_each(|v| *v += opts.perturbation);
            d = points.iter().map(|p| distance(p, &y)).collect();
        }
        let mut num = vec![0.0; dim];
        let mut den = 0.0;
        for (p, &di) in points.iter().zip(&d) {
            let w = 1.0 / di;
            den += w;
            for (acc, &x) in num.iter_mut().zip(p) {
                *acc += w * x;
            }
        }
        let next: Vec<f64> = num.into_iter().map(|v| v / den).collect();
        let moved = distance(&next, &y);
        y = next;
        if moved < opts.tolerance {
            return (y, iter);
        }
    }
    (y, opts.max_iterations)
}

/// Distance of every filter from the geometric median of all filters of the
/// layer. Small distances mark redundant filters.
pub fn score_gm(layer_id: &str, kernel: &KernelTensor, exec: Exec) -> Result<ImportanceReport> {
    if kernel.n_out() < 2 {
        return Err(Error::InvalidArgument(format!(
            "geometric-median ranking of `{layer_id}` needs at least 2 filters, got {}",
            kernel.n_out()
        )));
    }
    let points: Vec<Vec<f64>> = (0..kernel.n_out())
        .map(|j| kernel.filter_slice(j).iter().map(|&v| v as f64).collect())
        .collect();
    let (median, iterations) = geometric_median(&points, WeiszfeldOptions::default());
    let raw = exec.map(&points, |p| distance(p, &median));
    Ok(ImportanceReport::new(layer_id, Method::Gm, raw)
        .with_meta("weiszfeld_iterations", iterations))
}
