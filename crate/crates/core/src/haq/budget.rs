use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hwmodel::{simulate_cost, BitwidthPolicy, CostReport, HardwareSpec, LayerBits, MIN_BITS};
use crate::nncore::NetSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetKind {
    /// Seconds.
    Latency,
    /// Joules.
    Energy,
    /// Bits of weight storage.
    ModelSize,
}

impl BudgetKind {
    pub fn name(self) -> &'static str {
        match self {
            BudgetKind::Latency => "latency",
            BudgetKind::Energy => "energy",
            BudgetKind::ModelSize => "model_size",
        }
    }

    pub fn measure(self, report: &CostReport) -> f64 {
        match self {
            BudgetKind::Latency => report.latency_s,
            BudgetKind::Energy => report.energy_j,
            BudgetKind::ModelSize => report.model_size_bits,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budget {
    pub kind: BudgetKind,
    pub limit: f64,
}

impl Budget {
    pub fn new(kind: BudgetKind, limit: f64) -> Result<Self> {
        let b = Self { kind, limit };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.limit > 0.0 && self.limit.is_finite()) {
            return Err(Error::Input(format!("budget limit must be positive, got {}", self.limit)));
        }
        Ok(())
    }

    /// Simulated cost of `policy` in the budget's unit.
    pub fn cost(&self, net: &NetSpec, policy: &BitwidthPolicy, hw: &HardwareSpec) -> Result<f64> {
        Ok(self.kind.measure(&simulate_cost(net, policy, hw)?))
    }

    pub fn satisfied_by(&self, net: &NetSpec, policy: &BitwidthPolicy, hw: &HardwareSpec) -> Result<bool> {
        Ok(self.cost(net, policy, hw)? <= self.limit)
    }
}

/// Lowers bitwidths until the budget holds: sweeps layers first to last,
/// decrementing the weight then the activation bitwidth of each (floor 1)
/// and re-simulating after every decrement. A feasible policy comes back
/// unchanged; no bitwidth is ever raised.
pub fn enforce_budget(
    policy: &BitwidthPolicy,
    net: &NetSpec,
    hw: &HardwareSpec,
    budget: &Budget,
) -> Result<BitwidthPolicy> {
    budget.validate()?;
    policy.validate_for(net)?;
    let floor = BitwidthPolicy::uniform(net, MIN_BITS);
    let floor_cost = budget.cost(net, &floor, hw)?;
    if floor_cost > budget.limit {
        return Err(Error::Infeasible(format!(
            "{} budget {} is below the all-1-bit cost {floor_cost}",
            budget.kind.name(),
            budget.limit
        )));
    }
    let mut p = policy.clone();
    if budget.satisfied_by(net, &p, hw)? {
        return Ok(p);
    }
    let layers: Vec<usize> = p.layers.keys().copied().collect();
    loop {
        for &i in &layers {
            for weights in [true, false] {
                let b: &mut LayerBits = p.layers.get_mut(&i).expect("policy covers layer");
                let slot = if weights { &mut b.w_bits } else { &mut b.a_bits };
                if *slot > MIN_BITS {
                    *slot -= 1;
                    if budget.satisfied_by(net, &p, hw)? {
                        return Ok(p);
                    }
                }
            }
        }
    }
}
