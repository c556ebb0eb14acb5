use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::cost::{roofline_latency, LayerBits};
use super::hardware::HardwareSpec;
use crate::error::{Error, Result};
use crate::nncore::LayerSpec;

/// Bitwidth at which lookup-table latencies are synthesized.
pub const TABLE_BITS: u8 = 8;

/// Layer stack of every candidate op, per block.
pub type OpStacks = [Vec<(String, Vec<LayerSpec>)>];

/// Per-block, per-op latency in seconds. Ops keep their insertion order so
/// that a block's entries line up with a probability vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LatencyTable {
    blocks: Vec<Vec<(String, f64)>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    block_index: usize,
    op_name: String,
    latency_us: f64,
}

impl LatencyTable {
    /// Builds a table from explicit per-block `(op, seconds)` entries.
    pub fn from_entries(blocks: Vec<Vec<(String, f64)>>) -> Result<Self> {
        for (b, ops) in blocks.iter().enumerate() {
            for (i, (name, lat)) in ops.iter().enumerate() {
                if !(*lat >= 0.0 && lat.is_finite()) {
                    return Err(Error::Input(format!(
                        "latency of ({b}, {name}) must be finite and nonnegative, got {lat}"
                    )));
                }
                if ops[..i].iter().any(|(n, _)| n == name) {
                    return Err(Error::Input(format!("duplicate entry ({b}, {name})")));
                }
            }
        }
        Ok(Self { blocks })
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, b: usize) -> &[(String, f64)] {
        &self.blocks[b]
    }

    pub fn get(&self, block: usize, op: &str) -> Option<f64> {
        self.blocks
            .get(block)?
            .iter()
            .find(|(n, _)| n == op)
            .map(|(_, l)| *l)
    }

    /// Reorders entries to match `choices`; fails unless every pair is present.
    pub fn aligned_to(&self, choices: &[Vec<String>]) -> Result<Self> {
        if choices.len() > self.blocks.len() {
            return Err(Error::Input(format!(
                "latency table has {} blocks, search space needs {}",
                self.blocks.len(),
                choices.len()
            )));
        }
        let mut blocks = Vec::with_capacity(choices.len());
        for (b, ops) in choices.iter().enumerate() {
            let mut row = Vec::with_capacity(ops.len());
            for op in ops {
                let lat = self.get(b, op).ok_or_else(|| {
                    Error::Input(format!("latency table has no entry for block {b}, op {op}"))
                })?;
                row.push((op.clone(), lat));
            }
            blocks.push(row);
        }
        Ok(Self { blocks })
    }

    /// Latency of one concrete path (one op per block).
    pub fn path_latency(&self, ops: &[usize]) -> f64 {
        ops.iter()
            .enumerate()
            .fold(0.0, |acc, (b, &j)| acc + self.blocks[b][j].1)
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != ["block_index", "op_name", "latency_us"] {
            return Err(Error::Parse(format!(
                "latency table header must be block_index,op_name,latency_us; got {}",
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut blocks: Vec<Vec<(String, f64)>> = Vec::new();
        for row in rdr.deserialize() {
            let row: CsvRow = row?;
            if blocks.len() <= row.block_index {
                blocks.resize(row.block_index + 1, Vec::new());
            }
            blocks[row.block_index].push((row.op_name, row.latency_us * 1e-6));
        }
        Self::from_entries(blocks).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for (b, ops) in self.blocks.iter().enumerate() {
            for (name, lat) in ops {
                w.serialize(CsvRow {
                    block_index: b,
                    op_name: name.clone(),
                    latency_us: lat * 1e6,
                })?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Roofline latency of a layer stack at [`TABLE_BITS`] plus one kernel
/// overhead per parametric layer; an empty stack costs 0.
pub fn stack_latency(layers: &[LayerSpec], hw: &HardwareSpec) -> f64 {
    layers
        .iter()
        .filter(|l| l.is_parametric())
        .map(|l| {
            roofline_latency(l, LayerBits::uniform(TABLE_BITS), hw)
                .expect("parametric layer at valid bitwidth")
                + hw.fixed_overhead_s
        })
        .fold(0.0, |acc, l| acc + l)
}

pub fn synthesize_latency_table(space: &OpStacks, hw: &HardwareSpec) -> LatencyTable {
    LatencyTable {
        blocks: space
            .iter()
            .map(|ops| {
                ops.iter()
                    .map(|(name, layers)| (name.clone(), stack_latency(layers, hw)))
                    .collect()
            })
            .collect(),
    }
}

const NORMALIZATION_TOL: f64 = 1e-9;

/// Exact expected latency of a factorized path distribution.
pub fn expected_network_latency(arch_probs: &[Vec<f64>], table: &LatencyTable) -> Result<f64> {
    if arch_probs.len() != table.num_blocks() {
        return Err(Error::Input(format!(
            "{} probability rows for a {}-block table",
            arch_probs.len(),
            table.num_blocks()
        )));
    }
    let mut total = 0.0;
    for (b, probs) in arch_probs.iter().enumerate() {
        let ops = table.block(b);
        if probs.len() != ops.len() {
            return Err(Error::Input(format!(
                "block {b}: {} probabilities for {} ops",
                probs.len(),
                ops.len()
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOL || probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::Input(format!(
                "block {b}: probabilities are not a distribution (sum {sum})"
            )));
        }
        total += probs.iter().zip(ops).map(|(p, (_, l))| p * l).sum::<f64>();
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: Vec<Vec<f64>>) -> LatencyTable {
        LatencyTable::from_entries(
            rows.into_iter()
                .map(|r| r.into_iter().enumerate().map(|(j, l)| (format!("op{j}"), l)).collect())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn weighted_mean_and_additivity() {
        let t = table(vec![vec![4.0, 8.0]]);
        assert_eq!(expected_network_latency(&[vec![0.25, 0.75]], &t).unwrap(), 7.0);
        assert_eq!(expected_network_latency(&[vec![1.0, 0.0]], &t).unwrap(), 4.0);
        let t3 = table(vec![vec![4.0, 8.0]; 3]);
        let p = vec![vec![0.25, 0.75]; 3];
        assert_eq!(expected_network_latency(&p, &t3).unwrap(), 21.0);
    }

    #[test]
    fn unnormalized_probabilities_rejected() {
        let t = table(vec![vec![4.0, 8.0]]);
        assert!(matches!(
            expected_network_latency(&[vec![0.5, 0.6]], &t),
            Err(Error::Input(_))
        ));
        assert!(expected_network_latency(&[vec![1.0 + 1e-12, 0.0]], &t).is_ok());
        assert!(expected_network_latency(&[vec![1.5, -0.5]], &t).is_err());
        assert!(expected_network_latency(&[vec![1.0]], &t).is_err());
    }

    #[test]
    fn csv_round_trip_in_microseconds() {
        let t = table(vec![vec![1e-6, 2.5e-5], vec![0.0, 3e-3]]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("block_index,op_name,latency_us\n0,op0,1"));
        let back = LatencyTable::read_csv(&buf[..]).unwrap();
        for b in 0..2 {
            for (j, (_, l)) in t.block(b).iter().enumerate() {
                assert!((back.block(b)[j].1 - l).abs() <= 1e-15 * l.max(1.0));
            }
        }
    }

    #[test]
    fn csv_rejects_bad_header_and_negative_latency() {
        assert!(LatencyTable::read_csv("block,op,us\n0,a,1\n".as_bytes()).is_err());
        assert!(LatencyTable::read_csv("block_index,op_name,latency_us\n0,a,-1\n".as_bytes()).is_err());
        assert!(LatencyTable::read_csv("block_index,op_name,latency_us\n0,a,x\n".as_bytes()).is_err());
    }

    #[test]
    fn alignment_requires_every_pair() {
        let t = table(vec![vec![1.0, 2.0]]);
        let a = t.aligned_to(&[vec!["op1".into(), "op0".into()]]).unwrap();
        assert_eq!(a.block(0)[0], ("op1".to_string(), 2.0));
        assert!(t.aligned_to(&[vec!["op2".into()]]).is_err());
        assert!(t.aligned_to(&[vec!["op0".into()], vec!["op0".into()]]).is_err());
    }
}
