//! Component coefficient files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::workload::DataType;

pub const COEFFICIENTS_VERSION: u32 = 1;

const DEFAULT_7NM: &str = include_str!("../../data/coefficients-7nm.toml");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtypeRatio {
    pub area: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtypeRatios {
    pub fp16: DtypeRatio,
    pub fp32: DtypeRatio,
}

/// Per-event energies and per-tile powers at the reference clock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyTerms {
    pub int8_mac_pj: f64,
    pub vrf_pj_per_byte: f64,
    pub l1_pj_per_byte: f64,
    pub llc_pj_per_byte: f64,
    pub dram_pj_per_byte: f64,
    /// Per byte per mesh hop; the hop count is the mesh's mean.
    pub noc_pj_per_byte_hop: f64,
    pub tile_leakage_w: f64,
    /// Clocking, fetch and scalar pipeline of one running tile.
    pub tile_core_dynamic_w: f64,
    pub hbm_w_per_stack: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaTerms {
    pub core_mm2: f64,
    pub int8_mac_mm2: f64,
    pub vrf_mm2_per_kib: f64,
    pub l1_mm2_per_kib: f64,
    pub router_mm2: f64,
    pub llc_mm2_per_mib: f64,
    pub phy_mm2_per_stack: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VfPoint {
    pub ghz: f64,
    pub volts: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyCoefficients {
    pub version: u32,
    pub node: String,
    pub ref_freq_hz: f64,
    pub energy: EnergyTerms,
    pub dtype_ratio: DtypeRatios,
    pub area: AreaTerms,
    pub vf_curve: Vec<VfPoint>,
}

impl Default for EnergyCoefficients {
    fn default() -> Self {
        Self::from_toml(DEFAULT_7NM).expect("shipped coefficients parse")
    }
}

impl EnergyCoefficients {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Parse {
            what: "coefficient file",
            message: e.to_string(),
        })?;
        if c.version != COEFFICIENTS_VERSION {
            return Err(Error::Version {
                found: c.version,
                expected: COEFFICIENTS_VERSION,
            });
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("coefficients serialize")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parse {
            what: "coefficient file",
            message: m,
        });
        let e = &self.energy;
        let a = &self.area;
        let named = [
            ("ref_freq_hz", self.ref_freq_hz),
            ("int8_mac_pj", e.int8_mac_pj),
            ("vrf_pj_per_byte", e.vrf_pj_per_byte),
            ("l1_pj_per_byte", e.l1_pj_per_byte),
            ("llc_pj_per_byte", e.llc_pj_per_byte),
            ("dram_pj_per_byte", e.dram_pj_per_byte),
            ("noc_pj_per_byte_hop", e.noc_pj_per_byte_hop),
            ("tile_leakage_w", e.tile_leakage_w),
            ("tile_core_dynamic_w", e.tile_core_dynamic_w),
            ("hbm_w_per_stack", e.hbm_w_per_stack),
            ("core_mm2", a.core_mm2),
            ("int8_mac_mm2", a.int8_mac_mm2),
            ("vrf_mm2_per_kib", a.vrf_mm2_per_kib),
            ("l1_mm2_per_kib", a.l1_mm2_per_kib),
            ("router_mm2", a.router_mm2),
            ("llc_mm2_per_mib", a.llc_mm2_per_mib),
            ("phy_mm2_per_stack", a.phy_mm2_per_stack),
        ];
        for (name, v) in named {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        let r = &self.dtype_ratio;
        for (what, lo, hi) in [("area", 1.0, r.fp32.area), ("energy", 1.0, r.fp32.energy)] {
            let mid = if what == "area" { r.fp16.area } else { r.fp16.energy };
            if !(lo < mid && mid < hi) {
                return bad(format!("{what} ratios must rise Int8 < FP16 < FP32"));
            }
        }
        if self.vf_curve.len() < 2 {
            return bad("the voltage curve needs at least two points".into());
        }
        for w in self.vf_curve.windows(2) {
            if !(w[1].ghz > w[0].ghz && w[1].volts >= w[0].volts && w[0].volts > 0.0) {
                return bad("voltage curve points must rise in frequency with non-decreasing voltage".into());
            }
        }
        Ok(())
    }

    pub fn mac_pj(&self, dtype: DataType) -> f64 {
        self.energy.int8_mac_pj
            * match dtype {
                DataType::Int8 => 1.0,
                DataType::Fp16 => self.dtype_ratio.fp16.energy,
                DataType::Fp32 => self.dtype_ratio.fp32.energy,
            }
    }

    /// Frequencies the voltage curve covers, in Hz.
    pub fn freq_domain(&self) -> (f64, f64) {
        (self.vf_curve[0].ghz * 1e9, self.vf_curve[self.vf_curve.len() - 1].ghz * 1e9)
    }

    /// Supply voltage at `freq_hz`, linear between curve points.
    pub fn voltage(&self, freq_hz: f64) -> Result<f64> {
        let (lo, hi) = self.freq_domain();
        if !(freq_hz >= lo && freq_hz <= hi) {
            return Err(Error::FrequencyOutOfRange(freq_hz));
        }
        let ghz = freq_hz / 1e9;
        let i = self
            .vf_curve
            .windows(2)
            .position(|w| ghz <= w[1].ghz)
            .unwrap_or(self.vf_curve.len() - 2);
        let (a, b) = (self.vf_curve[i], self.vf_curve[i + 1]);
        Ok(a.volts + (b.volts - a.volts) * (ghz - a.ghz) / (b.ghz - a.ghz))
    }
}
