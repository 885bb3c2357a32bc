//! Technology-node and clock scaling.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EnergyCoefficients;
use crate::error::{Error, Result};
use crate::scalar::Real;

const DEFAULT_TABLE: &str = include_str!("../../data/tech-scaling.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleKind {
    Area,
    Energy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeFactors {
    pub area: f64,
    pub energy: f64,
}

/// Factors of each node relative to a common reference node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TechTable {
    pub version: u32,
    pub nodes: BTreeMap<String, NodeFactors>,
}

impl Default for TechTable {
    fn default() -> Self {
        Self::from_toml(DEFAULT_TABLE).expect("shipped scaling table parses")
    }
}

impl TechTable {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let t: Self = toml::from_str(text).map_err(|e| Error::Parse {
            what: "technology table",
            message: e.to_string(),
        })?;
        if t.version != 1 {
            return Err(Error::Version {
                found: t.version,
                expected: 1,
            });
        }
        if let Some((n, _)) = t.nodes.iter().find(|(_, f)| !(f.area > 0.0 && f.energy > 0.0)) {
            return Err(Error::Parse {
                what: "technology table",
                message: format!("node {n} has a non-positive factor"),
            });
        }
        Ok(t)
    }

    pub fn factor(&self, node: &str, kind: ScaleKind) -> Result<f64> {
        let f = self.nodes.get(node).ok_or_else(|| Error::UnknownNode(node.to_string()))?;
        Ok(match kind {
            ScaleKind::Area => f.area,
            ScaleKind::Energy => f.energy,
        })
    }

    pub fn contains(&self, node: &str) -> bool {
        self.nodes.contains_key(node)
    }
}

/// Re-expresses an area or energy measured at `from` as its value at `to`.
pub fn scale_technology<T: Real>(value: T, from: &str, to: &str, kind: ScaleKind, table: &TechTable) -> Result<T> {
    let a = table.factor(from, kind)?;
    let b = table.factor(to, kind)?;
    if from == to {
        return Ok(value);
    }
    Ok(value * T::of(b / a))
}

/// Coefficients re-characterized at `f_to`. Per-event energies follow V²,
/// per-tile dynamic power follows f·V²; leakage and HBM power are unchanged.
pub fn scale_frequency(coeffs: &EnergyCoefficients, f_from: f64, f_to: f64) -> Result<EnergyCoefficients> {
    let v_from = coeffs.voltage(f_from)?;
    let v_to = coeffs.voltage(f_to)?;
    let mut c = coeffs.clone();
    c.ref_freq_hz = f_to;
    if f_from == f_to {
        return Ok(c);
    }
    let v2 = (v_to / v_from).powi(2);
    let e = &mut c.energy;
    e.int8_mac_pj *= v2;
    e.vrf_pj_per_byte *= v2;
    e.l1_pj_per_byte *= v2;
    e.llc_pj_per_byte *= v2;
    e.dram_pj_per_byte *= v2;
    e.noc_pj_per_byte_hop *= v2;
    e.tile_core_dynamic_w *= v2 * f_to / f_from;
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_node_is_identity() {
        let t = TechTable::default();
        assert_eq!(scale_technology(3.7_f64, "7nm", "7nm", ScaleKind::Energy, &t).unwrap(), 3.7);
    }

    #[test]
    fn round_trip_recovers_value() {
        let t = TechTable::default();
        for kind in [ScaleKind::Area, ScaleKind::Energy] {
            let x = 0.4123_f64;
            let up = scale_technology(x, "7nm", "65nm", kind, &t).unwrap();
            let back = scale_technology(up, "65nm", "7nm", kind, &t).unwrap();
            assert!((back - x).abs() <= 1e-12 * x);
            assert!(up > x);
        }
    }

    #[test]
    fn unknown_node_is_rejected() {
        let t = TechTable::default();
        assert!(matches!(
            scale_technology(1.0_f64, "7nm", "3nm", ScaleKind::Area, &t),
            Err(Error::UnknownNode(n)) if n == "3nm"
        ));
    }

    #[test]
    fn halving_clock_more_than_halves_dynamic_power() {
        let c = EnergyCoefficients::default();
        let s = scale_frequency(&c, 2e9, 1e9).unwrap();
        let ratio = s.energy.tile_core_dynamic_w / c.energy.tile_core_dynamic_w;
        assert!(ratio < 0.5, "{ratio}");
        assert!(s.energy.int8_mac_pj < c.energy.int8_mac_pj);
        assert_eq!(s.energy.tile_leakage_w, c.energy.tile_leakage_w);
        assert_eq!(s.energy.hbm_w_per_stack, c.energy.hbm_w_per_stack);
    }

    #[test]
    fn same_clock_is_identity_and_range_is_checked() {
        let c = EnergyCoefficients::default();
        assert_eq!(scale_frequency(&c, 2e9, 2e9).unwrap(), c);
        assert!(matches!(scale_frequency(&c, 2e9, 5e9), Err(Error::FrequencyOutOfRange(_))));
    }
}
