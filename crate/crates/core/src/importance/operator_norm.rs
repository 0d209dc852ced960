use super::{ImportanceReport, Method};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::tensor::{svd_rank1, trace_product, KernelTensor, Matrix};

/// Channel-wise maximally stretched directions of one layer, stacked as the
/// columns of a `k_v x n_in` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionBank {
    pub layer_id: String,
    pub directions: Matrix<f64>,
    /// Channels whose direction is the zero vector.
    pub degenerate_channels: Vec<usize>,
}

impl DirectionBank {
    /// Direction of channel `c` (column `c`).
    pub fn direction(&self, c: usize) -> Vec<f64> {
        (0..self.directions.rows())
            .map(|k| self.directions.get(k, c))
            .collect()
    }
}

/// Direction for one channel: first row of the rank-1 approximation of the
/// channel matrix, scaled to unit length. `None` when that row vanishes.
fn channel_direction(kernel: &KernelTensor, c: usize) -> Option<Vec<f64>> {
    let factors = svd_rank1(&kernel.channel_matrix(c));
    if factors.degenerate {
        return None;
    }
    let row = factors.outer_row(0);
    let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
    // |u1[0]| below this leaves no usable direction
    if norm <= 1e-12 {
        return None;
    }
    Some(row.into_iter().map(|x| x / norm).collect())
}

pub fn direction_bank(layer_id: &str, kernel: &KernelTensor, exec: Exec) -> DirectionBank {
    let n_in = kernel.n_in();
    let kv = kernel.k_v();
    let columns = exec.map_range(n_in, |c| channel_direction(kernel, c));
    let mut data = vec![0.0f64; kv * n_in];
    let mut degenerate_channels = Vec::new();
    for (c, col) in columns.into_iter().enumerate() {
        match col {
            Some(d) => {
                for (k, v) in d.into_iter().enumerate() {
                    data[k * n_in + c] = v;
                }
            }
            None => degenerate_channels.push(c),
        }
    }
    DirectionBank {
        layer_id: layer_id.to_string(),
        directions: Matrix::new(kv, n_in, data).expect("kernel dims are positive"),
        degenerate_channels,
    }
}

/// `raw[j] = trace(F_j * C)` with `F_j` the `n_in x k_v` slice of filter `j`;
/// normalized as `raw^2 / max(raw^2)`.
pub fn score_operator_norm(
    kernel: &KernelTensor,
    bank: &DirectionBank,
    exec: Exec,
) -> Result<ImportanceReport> {
    if bank.directions.shape() != (kernel.k_v(), kernel.n_in()) {
        return Err(Error::DimensionMismatch {
            left: format!("kernel {}x{} (n_in x k_v)", kernel.n_in(), kernel.k_v()),
            right: format!(
                "direction bank {}x{}",
                bank.directions.rows(),
                bank.directions.cols()
            ),
        });
    }
    let raw = exec
        .map_range(kernel.n_out(), |j| {
            trace_product(&kernel.filter(j), &bank.directions)
        })
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
    Ok(
        ImportanceReport::new(bank.layer_id.clone(), Method::OperatorNorm, raw)
            .with_meta("degenerate_channels", bank.degenerate_channels.clone()),
    )
}
