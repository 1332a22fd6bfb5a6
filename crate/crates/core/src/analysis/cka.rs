use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::gnn::GnnModel;
use crate::graph::Graph;
use crate::scalar::Scalar;

/// Pairwise similarity of client representations on a shared probe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CkaReport {
    pub matrix: Vec<Vec<f64>>,
    pub probe: String,
}

impl CkaReport {
    pub fn size(&self) -> usize {
        self.matrix.len()
    }

    /// Mean over all `i != j` entries.
    pub fn mean_off_diagonal(&self) -> f64 {
        let m = self.size();
        if m < 2 {
            return f64::NAN;
        }
        let mut s = 0.0;
        for (i, row) in self.matrix.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if i != j {
                    s += v;
                }
            }
        }
        s / (m * (m - 1)) as f64
    }
}

fn centered<S: Scalar>(x: &Tensor<S>) -> Vec<f64> {
    let [n, p] = x.shape();
    let mut means = vec![0.0; p];
    for i in 0..n {
        for (m, v) in means.iter_mut().zip(x.row(i)) {
            *m += v.to_f64_lossy();
        }
    }
    means.iter_mut().for_each(|m| *m /= n as f64);
    let mut out = Vec::with_capacity(n * p);
    for i in 0..n {
        out.extend(x.row(i).iter().zip(&means).map(|(v, m)| v.to_f64_lossy() - m));
    }
    out
}

/// Squared Frobenius norm of `a^T b` for row-major `n x p` and `n x q` matrices.
fn cross_norm_sq(a: &[f64], p: usize, b: &[f64], q: usize, n: usize) -> f64 {
    let mut m = vec![0.0; p * q];
    for r in 0..n {
        let ar = &a[r * p..(r + 1) * p];
        let br = &b[r * q..(r + 1) * q];
        for (i, &x) in ar.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let row = &mut m[i * q..(i + 1) * q];
            for (o, &y) in row.iter_mut().zip(br) {
                *o += x * y;
            }
        }
    }
    m.iter().map(|v| v * v).sum()
}

/// Linear centred kernel alignment
/// `|Y^T X|_F^2 / (|X^T X|_F |Y^T Y|_F)` after column-centring.
pub fn linear_cka<S: Scalar>(x: &Tensor<S>, y: &Tensor<S>) -> Result<f64> {
    let n = x.rows();
    if y.rows() != n {
        return Err(Error::Shape {
            op: "linear_cka",
            detail: format!("{} and {} rows", n, y.rows()),
        });
    }
    if n < 2 {
        return Err(Error::InvalidArgument("linear CKA needs at least two rows".into()));
    }
    let (p, q) = (x.cols(), y.cols());
    let (cx, cy) = (centered(x), centered(y));
    let xx = cross_norm_sq(&cx, p, &cx, p, n).sqrt();
    let yy = cross_norm_sq(&cy, q, &cy, q, n).sqrt();
    if xx == 0.0 || yy == 0.0 {
        return Err(Error::Undefined("representation without variance".into()));
    }
    let xy = cross_norm_sq(&cy, q, &cx, p, n);
    Ok((xy / (xx * yy)).clamp(0.0, 1.0))
}

/// Extractor outputs of every model on `probe`, restricted to `nodes`,
/// compared pairwise.
pub fn pairwise_client_cka<S: Scalar>(models: &[GnnModel<S>], probe: &Graph<S>, nodes: &[usize]) -> Result<CkaReport> {
    if models.len() < 2 {
        return Err(Error::InvalidArgument("CKA needs at least two models".into()));
    }
    if let Some(&bad) = nodes.iter().find(|&&i| i >= probe.num_nodes()) {
        return Err(Error::NodeOutOfRange {
            id: bad,
            num_nodes: probe.num_nodes(),
        });
    }
    let reps = models
        .iter()
        .map(|m| {
            let (h, _) = m.forward(probe)?;
            let d = h.cols();
            let mut data = Vec::with_capacity(nodes.len() * d);
            for &i in nodes {
                data.extend_from_slice(h.row(i));
            }
            Tensor::new(nodes.len(), d, data)
        })
        .collect::<Result<Vec<_>>>()?;
    let m = models.len();
    let mut matrix = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in i..m {
            let v = linear_cka(&reps[i], &reps[j])?;
            matrix[i][j] = v;
            matrix[j][i] = v;
        }
    }
    Ok(CkaReport {
        matrix,
        probe: format!("extractor output on {} probe nodes of a {}-node graph", nodes.len(), probe.num_nodes()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x() -> Tensor<f64> {
        Tensor::from_rows(&[
            vec![0.3, -1.0, 0.5],
            vec![1.2, 0.4, -0.7],
            vec![-0.2, 0.9, 0.1],
            vec![0.8, -0.3, 1.1],
            vec![0.0, 0.5, 0.5],
        ])
        .unwrap()
    }

    #[test]
    fn identical_inputs_give_one() {
        assert!((linear_cka(&x(), &x()).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scaling_and_rotation_invariance() {
        let scaled = x().map(|v| -3.5 * v);
        assert!((linear_cka(&x(), &scaled).unwrap() - 1.0).abs() < 1e-12);
        // rotation by 0.7 rad in the first two coordinates
        let (c, s) = (0.7f64.cos(), 0.7f64.sin());
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|i| {
                let r = x().row(i).to_vec();
                vec![c * r[0] - s * r[1], s * r[0] + c * r[1], r[2]]
            })
            .collect();
        let rot = Tensor::from_rows(&rows).unwrap();
        assert!((linear_cka(&x(), &rot).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_and_bounded() {
        let y = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0], vec![3.0, 1.0], vec![-1.0, 0.5], vec![0.2, 0.2]]).unwrap();
        let a = linear_cka(&x(), &y).unwrap();
        let b = linear_cka(&y, &x()).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let flat = Tensor::filled(5, 2, 3.0);
        assert!(linear_cka(&x(), &flat).is_err());
        assert!(linear_cka(&x(), &Tensor::<f64>::zeros(4, 3)).is_err());
        let one = Tensor::from_rows(&[vec![1.0]]).unwrap();
        assert!(linear_cka(&one, &one).is_err());
    }
}
