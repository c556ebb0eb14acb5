use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Throughput, bandwidth and energy coefficients of a target device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareSpec {
    #[serde(default)]
    pub name: String,
    pub peak_macs_per_s: f64,
    pub dram_bytes_per_s: f64,
    /// Joules per MAC.
    pub energy_per_mac: f64,
    /// Joules per DRAM byte.
    pub energy_per_dram_byte: f64,
    /// Seconds charged per kernel invocation.
    pub fixed_overhead_s: f64,
}

const ENERGY_PER_MAC: f64 = 2e-12;
const ENERGY_PER_BYTE: f64 = 1e-10;

impl HardwareSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("peak_macs_per_s", self.peak_macs_per_s),
            ("dram_bytes_per_s", self.dram_bytes_per_s),
            ("energy_per_mac", self.energy_per_mac),
            ("energy_per_dram_byte", self.energy_per_dram_byte),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Input(format!("hardware {key} must be positive, got {v}")));
            }
        }
        if !(self.fixed_overhead_s >= 0.0 && self.fixed_overhead_s.is_finite()) {
            return Err(Error::Input(format!(
                "hardware fixed_overhead_s must be nonnegative, got {}",
                self.fixed_overhead_s
            )));
        }
        Ok(())
    }

    /// Intensity (MACs/byte) at which the roofline turns from memory- to
    /// compute-bound.
    pub fn ridge_point(&self) -> f64 {
        self.peak_macs_per_s / self.dram_bytes_per_s
    }

    /// Low-bandwidth embedded accelerator (ridge at 10 MACs/byte).
    pub fn edge() -> Self {
        Self {
            name: "edge".into(),
            peak_macs_per_s: 2e9,
            dram_bytes_per_s: 2e8,
            energy_per_mac: ENERGY_PER_MAC,
            energy_per_dram_byte: ENERGY_PER_BYTE,
            fixed_overhead_s: 2e-6,
        }
    }

    /// High-bandwidth server accelerator (ridge at 1 MAC/byte).
    pub fn cloud() -> Self {
        Self {
            name: "cloud".into(),
            peak_macs_per_s: 2e10,
            dram_bytes_per_s: 2e10,
            energy_per_mac: ENERGY_PER_MAC,
            energy_per_dram_byte: ENERGY_PER_BYTE,
            fixed_overhead_s: 1e-5,
        }
    }

    /// Spatial array: moderate bandwidth, cheap kernel launches.
    pub fn spatial() -> Self {
        Self {
            name: "spatial".into(),
            peak_macs_per_s: 8e9,
            dram_bytes_per_s: 2e9,
            energy_per_mac: ENERGY_PER_MAC,
            energy_per_dram_byte: ENERGY_PER_BYTE,
            fixed_overhead_s: 5e-7,
        }
    }

    pub fn builtin_names() -> &'static [&'static str] {
        &["edge", "cloud", "spatial"]
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "edge" => Some(Self::edge()),
            "cloud" => Some(Self::cloud()),
            "spatial" => Some(Self::spatial()),
            _ => None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let hw: HardwareSpec = toml::from_str(text)?;
        hw.validate()?;
        Ok(hw)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Loads a profile file; a missing `name` defaults to the file stem.
    pub fn load(path: &Path) -> Result<Self> {
        let mut hw = Self::from_toml(&std::fs::read_to_string(path)?)?;
        if hw.name.is_empty() {
            hw.name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
        }
        Ok(hw)
    }

    /// Built-in profile by name, otherwise a profile file path.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        match Self::builtin(name_or_path) {
            Some(hw) => Ok(hw),
            None => {
                let p = Path::new(name_or_path);
                if p.exists() {
                    Self::load(p)
                } else {
                    Err(Error::Input(format!(
                        "unknown hardware profile `{name_or_path}` (built-ins: {})",
                        Self::builtin_names().join(", ")
                    )))
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_are_valid_and_differ_only_in_rates() {
        let e = HardwareSpec::edge();
        for hw in [HardwareSpec::edge(), HardwareSpec::cloud(), HardwareSpec::spatial()] {
            hw.validate().unwrap();
            assert_eq!(hw.energy_per_mac, e.energy_per_mac);
            assert_eq!(hw.energy_per_dram_byte, e.energy_per_dram_byte);
        }
        assert!(HardwareSpec::edge().ridge_point() > HardwareSpec::cloud().ridge_point());
    }

    #[test]
    fn profile_file_rejects_unknown_keys() {
        let good = "peak_macs_per_s = 1e9\ndram_bytes_per_s = 1e8\nenergy_per_mac = 1e-12\n\
                    energy_per_dram_byte = 1e-10\nfixed_overhead_s = 0.0\n";
        assert!(HardwareSpec::from_toml(good).is_ok());
        assert!(HardwareSpec::from_toml(&format!("{good}cache_kb = 4\n")).is_err());
        assert!(HardwareSpec::from_toml(&good.replace("1e8", "-1.0")).is_err());
        assert!(HardwareSpec::from_toml("peak_macs_per_s = 1e9\n").is_err());
    }
}
