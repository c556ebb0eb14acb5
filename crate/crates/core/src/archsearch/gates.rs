use rand::Rng;

use crate::error::{Error, Result};

/// Softmax of one row of architecture parameters.
pub fn softmax_probs(alpha_row: &[f64]) -> Vec<f64> {
    let m = alpha_row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = alpha_row.iter().map(|a| (a - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Draws index `j` with probability `probs[j]` and returns it one-hot.
pub fn sample_gates<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Vec<u8> {
    let mut gates = vec![0u8; probs.len()];
    gates[sample_index(probs, rng)] = 1;
    gates
}

pub(crate) fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut c = 0.0;
    for (j, p) in probs.iter().enumerate() {
        c += p;
        if u < c {
            return j;
        }
    }
    // rounding left u above the cumulative sum: last op with nonzero mass
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Index of the single active gate.
pub fn active_index(gates: &[u8]) -> Result<usize> {
    let mut on = gates.iter().enumerate().filter(|(_, &g)| g != 0);
    match (on.next(), on.next()) {
        (Some((j, &1)), None) => Ok(j),
        _ => Err(Error::Usage(format!("gate row {gates:?} is not one-hot"))),
    }
}

/// Maps gate gradients to architecture-parameter gradients through the
/// softmax Jacobian: `p_i * (g_i - sum_j g_j p_j)`.
pub fn arch_gradient(dl_dgates: &[f64], probs: &[f64]) -> Vec<f64> {
    let mean: f64 = dl_dgates.iter().zip(probs).map(|(g, p)| g * p).sum();
    dl_dgates
        .iter()
        .zip(probs)
        .map(|(g, p)| p * (g - mean))
        .collect()
}

/// Multiplicative latency penalty `a * max(elat / lat_ref, 1)^b` and its
/// derivative in `elat`.
pub fn latency_factor(elat: f64, lat_ref: f64, a: f64, b: f64) -> Result<(f64, f64)> {
    if !(lat_ref > 0.0) {
        return Err(Error::Input(format!("lat_ref must be positive, got {lat_ref}")));
    }
    if !(elat >= 0.0 && elat.is_finite()) {
        return Err(Error::Input(format!("expected latency must be finite and nonnegative, got {elat}")));
    }
    let ratio = elat / lat_ref;
    if ratio <= 1.0 {
        return Ok((a, 0.0));
    }
    let factor = a * ratio.powf(b);
    let slope = a * b * ratio.powf(b - 1.0) / lat_ref;
    Ok((factor, slope))
}

/// Cross-entropy scaled by the one-sided latency penalty.
pub fn hardware_aware_loss(ce: f64, elat: f64, lat_ref: f64, a: f64, b: f64) -> Result<f64> {
    if !(ce >= 0.0) {
        return Err(Error::Input(format!("cross-entropy must be nonnegative, got {ce}")));
    }
    Ok(ce * latency_factor(elat, lat_ref, a, b)?.0)
}

/// Architecture logits and the most recently sampled gates.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchParams {
    pub alpha: Vec<Vec<f64>>,
    pub gates: Vec<Vec<u8>>,
}

impl ArchParams {
    /// Zero logits (uniform paths); gates start on op 0.
    pub fn zeros(choices_per_block: &[usize]) -> Self {
        Self {
            alpha: choices_per_block.iter().map(|&k| vec![0.0; k]).collect(),
            gates: choices_per_block
                .iter()
                .map(|&k| {
                    let mut g = vec![0; k];
                    g[0] = 1;
                    g
                })
                .collect(),
        }
    }

    pub fn probs(&self) -> Vec<Vec<f64>> {
        self.alpha.iter().map(|r| softmax_probs(r)).collect()
    }

    /// Resamples every gate row; returns the active index per block.
    pub fn resample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<usize> {
        let probs = self.probs();
        self.gates = probs.iter().map(|p| sample_gates(p, rng)).collect();
        self.active()
    }

    pub fn active(&self) -> Vec<usize> {
        self.gates
            .iter()
            .map(|g| active_index(g).expect("sampled gates are one-hot"))
            .collect()
    }
}

/// Highest-logit op per block; the lowest index wins ties.
pub fn derive_final_arch(alpha: &[Vec<f64>]) -> Vec<usize> {
    alpha
        .iter()
        .map(|row| {
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
