use serde::{Deserialize, Serialize};

use super::space::SearchSpace;
use super::supernet::Supernet;
use crate::error::{Error, Result};
use crate::hwmodel::LatencyTable;
use crate::nncore::Dataset;
use crate::rng;

fn default_cap() -> u64 {
    512
}

/// Training budget shared by every architecture of an exhaustive sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrontierConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_cap")]
    pub cap: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierEntry {
    pub path: Vec<usize>,
    pub ops: Vec<String>,
    pub accuracy: f64,
    pub latency_s: f64,
    pub pareto: bool,
}

/// Validation accuracy of one architecture trained from scratch. The seed
/// depends only on `(cfg.seed, architecture index)`.
pub fn train_standalone(
    space: &SearchSpace,
    path: &[usize],
    data: &Dataset,
    cfg: &FrontierConfig,
) -> Result<f64> {
    let seed = rng::derive_seed(cfg.seed, space.encode(path) as u64);
    let sub = space.restricted_to(path);
    let mut net = Supernet::new(&sub, seed)?;
    let fixed = vec![0; path.len()];
    net.train_path(&fixed, &data.train, cfg.epochs, cfg.batch_size, cfg.lr, seed)?;
    net.evaluate(&fixed, &data.val)
}

/// Not dominated: no other point is at least as accurate and at least as
/// fast while strictly better in one of the two.
pub fn pareto_flags(points: &[(f64, f64)]) -> Vec<bool> {
    points
        .iter()
        .map(|&(acc, lat)| {
            !points
                .iter()
                .any(|&(a, l)| a >= acc && l <= lat && (a > acc || l < lat))
        })
        .collect()
}

/// Recomputes latencies and Pareto flags under another table.
pub fn rescore(entries: &[FrontierEntry], table: &LatencyTable) -> Vec<FrontierEntry> {
    let mut out: Vec<FrontierEntry> = entries
        .iter()
        .map(|e| FrontierEntry {
            latency_s: table.path_latency(&e.path),
            ..e.clone()
        })
        .collect();
    let flags = pareto_flags(&out.iter().map(|e| (e.accuracy, e.latency_s)).collect::<Vec<_>>());
    for (e, f) in out.iter_mut().zip(flags) {
        e.pareto = f;
    }
    out
}

/// True if some Pareto entry is within `lat_tol` (relative to its own
/// latency) and `acc_tol` (absolute) of the point.
pub fn near_pareto(entries: &[FrontierEntry], accuracy: f64, latency_s: f64, lat_tol: f64, acc_tol: f64) -> bool {
    entries.iter().filter(|e| e.pareto).any(|e| {
        (latency_s - e.latency_s).abs() <= lat_tol * e.latency_s
            && (accuracy - e.accuracy).abs() <= acc_tol
    })
}

/// Trains every architecture of the space and flags the Pareto set.
pub fn brute_force_frontier(
    space: &SearchSpace,
    data: &Dataset,
    table: &LatencyTable,
    cfg: &FrontierConfig,
) -> Result<Vec<FrontierEntry>> {
    space.validate()?;
    let cardinality = space.cardinality();
    if cardinality > cfg.cap as u128 {
        return Err(Error::SpaceTooLarge {
            cardinality,
            cap: cfg.cap as u128,
        });
    }
    let table = table.aligned_to(&space.choices)?;
    let mut entries = Vec::with_capacity(cardinality as usize);
    for idx in 0..cardinality {
        let path = space.decode(idx);
        let accuracy = train_standalone(space, &path, data, cfg)?;
        entries.push(FrontierEntry {
            ops: space.op_names(&path),
            latency_s: table.path_latency(&path),
            path,
            accuracy,
            pareto: false,
        });
    }
    Ok(rescore(&entries, &table))
}
