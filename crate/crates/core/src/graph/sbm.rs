use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::scalar::Scalar;

use super::Graph;

/// Planted-partition stochastic block model parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SbmSpec {
    pub blocks: usize,
    pub nodes_per_block: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_noise: f64,
    pub seed: u64,
    /// Feature columns carrying each block's indicator; the feature matrix
    /// has `blocks * signal_width` columns.
    #[serde(default = "one")]
    pub signal_width: usize,
}

fn one() -> usize {
    1
}

/// Samples an SBM graph. Labels are block ids; features are the block
/// indicator (one-hot when `signal_width` is 1, otherwise repeated over
/// `signal_width` columns per block) plus i.i.d. Gaussian noise with standard
/// deviation `feature_noise`.
pub fn generate_sbm<S: Scalar>(spec: &SbmSpec) -> Result<Graph<S>> {
    let SbmSpec {
        blocks,
        nodes_per_block,
        p_in,
        p_out,
        feature_noise,
        seed,
        signal_width,
    } = *spec;
    if !(0.0 <= p_out && p_out <= p_in && p_in <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "SBM needs 0 <= p_out <= p_in <= 1, got p_in={p_in}, p_out={p_out}"
        )));
    }
    if blocks == 0 || nodes_per_block == 0 || signal_width == 0 {
        return Err(Error::InvalidArgument("SBM needs at least one block, node and signal column".into()));
    }
    if !(feature_noise >= 0.0 && feature_noise.is_finite()) {
        return Err(Error::InvalidArgument(format!("invalid feature noise {feature_noise}")));
    }
    let n = blocks * nodes_per_block;
    let labels: Vec<usize> = (0..n).map(|i| i / nodes_per_block).collect();
    let mut rng = rng::stream(Stream::Sbm, &[seed]);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] { p_in } else { p_out };
            if rng.random_bool(p) {
                edges.push((i, j));
            }
        }
    }
    let normal = Normal::new(0.0, feature_noise).expect("validated above");
    let d = blocks * signal_width;
    let mut feats = Vec::with_capacity(n * d);
    for &c in &labels {
        for k in 0..d {
            let signal = if k / signal_width == c { 1.0 } else { 0.0 };
            feats.push(S::of(signal + normal.sample(&mut rng)));
        }
    }
    Graph::new(Tensor::new(n, d, feats)?, edges, labels, blocks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(blocks: usize, npb: usize, p_in: f64, p_out: f64, seed: u64) -> SbmSpec {
        SbmSpec {
            blocks,
            nodes_per_block: npb,
            p_in,
            p_out,
            feature_noise: 0.1,
            seed,
            signal_width: 1,
        }
    }

    #[test]
    fn forced_cliques() {
        let g: Graph<f64> = generate_sbm(&spec(2, 4, 1.0, 0.0, 5)).unwrap();
        assert_eq!(g.num_edges(), 12);
        assert!(g.edges().iter().all(|&(a, b)| a / 4 == b / 4));
        assert_eq!(g.labels(), &[0, 0, 0, 0, 1, 1, 1, 1]);
    }

    #[test]
    fn deterministic_per_seed() {
        let a: Graph<f64> = generate_sbm(&spec(3, 10, 0.5, 0.1, 9)).unwrap();
        let b: Graph<f64> = generate_sbm(&spec(3, 10, 0.5, 0.1, 9)).unwrap();
        assert_eq!(a.edges(), b.edges());
        assert_eq!(a.features(), b.features());
    }

    #[test]
    fn invalid_probabilities() {
        assert!(generate_sbm::<f64>(&spec(2, 3, 0.2, 0.5, 0)).is_err());
        assert!(generate_sbm::<f64>(&spec(2, 3, 1.5, 0.5, 0)).is_err());
        assert!(generate_sbm::<f64>(&spec(2, 3, 0.5, -0.1, 0)).is_err());
    }

    #[test]
    fn within_block_density_matches_p_in() {
        // Monte-Carlo: the within-block edge density is Binomial(pairs, p_in) / pairs.
        let (blocks, npb) = (3, 10);
        let pairs = blocks * npb * (npb - 1) / 2;
        let runs = 1000;
        let mut total = 0.0;
        for seed in 0..runs {
            let g: Graph<f64> = generate_sbm(&spec(blocks, npb, 0.8, 0.05, seed)).unwrap();
            let within = g.edges().iter().filter(|&&(a, b)| a / npb == b / npb).count();
            total += within as f64 / pairs as f64;
        }
        let mean = total / runs as f64;
        assert!((mean - 0.8).abs() < 0.02, "mean within-block density {mean}");
    }
}
