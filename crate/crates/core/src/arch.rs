//! Machine configurations and the peak rates derived from them.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::workload::DataType;

const KIB: u64 = 1024;
const MIB: u64 = 1024 * 1024;

/// One instance of the tiled SIMD multicore.
///
/// Every tile holds an in-order core that issues one vector ALU op and one
/// memory op per cycle, a SIMD datapath of `simd_bits / 16` lanes, a private
/// L1 and a slice of the shared LLC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineConfig {
    pub name: String,
    pub tiles: u64,
    pub simd_bits: u32,
    pub vrf_regs: u32,
    pub freq_hz: f64,
    pub l1_bytes: u64,
    pub llc_bytes: u64,
    pub mem_bw_bytes_per_s: f64,
    pub mem_bw_efficiency: f64,
    pub line_bytes: u64,
    /// L1 → register file bytes per cycle per tile.
    pub l1_fill_bytes_per_cycle_per_tile: f64,
    /// LLC → L1 bytes per cycle per tile.
    pub llc_fill_bytes_per_cycle_per_tile: f64,
    pub hbm_stacks: u32,
    pub barrier_cycles: f64,
    /// Multiplier on per-tile compute and fill rates; 1 for real designs.
    #[serde(default = "unit")]
    pub compute_scale: f64,
    /// Treat every tensor as LLC resident (no DRAM traffic, free LLC reads).
    #[serde(default)]
    pub perfect_cache: bool,
}

fn unit() -> f64 {
    1.0
}

/// Peak arithmetic rates of a configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakRates {
    pub int8_ops_per_s: f64,
    pub fp16_ops_per_s: f64,
    pub lanes_per_tile: u32,
}

pub const PRESETS: &[&str] = &["base", "riss", "base-4096c-256v", "low-1024c-256v-1g"];

impl MachineConfig {
    /// The reference design: 2048 tiles of 512-bit SIMD at 2 GHz.
    pub fn base() -> Self {
        Self {
            name: "base".into(),
            tiles: 2048,
            simd_bits: 512,
            vrf_regs: 32,
            freq_hz: 2e9,
            l1_bytes: 16 * KIB,
            llc_bytes: 64 * MIB,
            mem_bw_bytes_per_s: 900e9,
            mem_bw_efficiency: 0.60,
            line_bytes: 64,
            l1_fill_bytes_per_cycle_per_tile: 64.0,
            llc_fill_bytes_per_cycle_per_tile: 32.0,
            hbm_stacks: 4,
            barrier_cycles: 1000.0,
            compute_scale: 1.0,
            perfect_cache: false,
        }
    }

    /// Single tile sized against a small edge accelerator: 512-bit SIMD at
    /// 1.2 GHz with a 192 KiB LLC and one LPDDR channel instead of HBM.
    pub fn riss() -> Self {
        Self {
            name: "riss".into(),
            tiles: 1,
            freq_hz: 1.2e9,
            llc_bytes: 192 * KIB,
            mem_bw_bytes_per_s: 25.6e9,
            hbm_stacks: 0,
            ..Self::base()
        }
    }

    /// A grid point derived from the reference design. The L1 → VRF rate
    /// follows the vector width; the per-tile LLC port does not.
    pub fn grid(tiles: u64, simd_bits: u32, freq_hz: f64) -> Self {
        Self {
            name: format!("{tiles}c-{simd_bits}v-{}ghz", freq_hz / 1e9),
            tiles,
            simd_bits,
            freq_hz,
            l1_fill_bytes_per_cycle_per_tile: f64::from(simd_bits / 8),
            ..Self::base()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        let cfg = match name.to_ascii_lowercase().as_str() {
            "base" => Self::base(),
            "riss" => Self::riss(),
            "base-4096c-256v" => Self {
                name: "base-4096c-256v".into(),
                ..Self::grid(4096, 256, 2e9)
            },
            "low-1024c-256v-1g" => Self {
                name: "low-1024c-256v-1g".into(),
                ..Self::grid(1024, 256, 1e9)
            },
            _ => return Err(Error::UnknownPreset(name.to_string())),
        };
        Ok(cfg)
    }

    /// Loads a TOML file: an optional `preset` to start from (default
    /// `base`) followed by any subset of the configuration fields.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let parse_err = |message: String| Error::Parse {
            what: "machine configuration",
            message,
        };
        let mut table: toml::Table = toml::from_str(text).map_err(|e| parse_err(e.to_string()))?;
        let preset = match table.remove("preset") {
            None => "base".to_string(),
            Some(toml::Value::String(s)) => s,
            Some(other) => return Err(parse_err(format!("preset must be a string, got {other}"))),
        };
        let fields: ConfigOverrides = table.try_into().map_err(|e: toml::de::Error| parse_err(e.to_string()))?;
        fields.apply(Self::preset(&preset)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if ![128, 256, 512].contains(&self.simd_bits) {
            return fail(format!("simd_bits must be 128, 256 or 512, got {}", self.simd_bits));
        }
        if self.tiles == 0 {
            return fail("at least one tile is required".into());
        }
        if self.vrf_regs < 8 {
            return fail(format!("vrf_regs must be at least 8, got {}", self.vrf_regs));
        }
        if !(self.mem_bw_efficiency > 0.0 && self.mem_bw_efficiency <= 1.0) {
            return fail(format!("mem_bw_efficiency {} outside (0, 1]", self.mem_bw_efficiency));
        }
        if !(self.freq_hz > 0.0 && self.freq_hz.is_finite()) {
            return fail(format!("frequency {} must be positive", self.freq_hz));
        }
        if !(self.mem_bw_bytes_per_s > 0.0) {
            return fail("memory bandwidth must be positive".into());
        }
        if self.l1_fill_bytes_per_cycle_per_tile < f64::from(self.simd_bits / 8) {
            return fail(format!(
                "L1 fill of {} B/cycle cannot feed one {}-bit vector per cycle",
                self.l1_fill_bytes_per_cycle_per_tile, self.simd_bits
            ));
        }
        if !(self.llc_fill_bytes_per_cycle_per_tile > 0.0) {
            return fail("LLC fill rate must be positive".into());
        }
        if self.line_bytes == 0 || !self.line_bytes.is_power_of_two() {
            return fail(format!("line size {} must be a power of two", self.line_bytes));
        }
        if self.l1_bytes < self.line_bytes {
            return fail("L1 smaller than one line".into());
        }
        if !(self.barrier_cycles >= 0.0) {
            return fail("barrier cost must be non-negative".into());
        }
        if !(self.compute_scale >= 1.0) {
            return fail(format!("compute_scale {} below 1", self.compute_scale));
        }
        Ok(())
    }

    pub fn lanes_per_tile(&self) -> u32 {
        self.simd_bits / 16
    }

    /// 32-bit accumulator elements per vector register.
    pub fn vector_elems(&self) -> u64 {
        u64::from(self.simd_bits / 32)
    }

    pub fn vector_bytes(&self) -> u64 {
        u64::from(self.simd_bits / 8)
    }

    pub fn peak_rates(&self) -> PeakRates {
        PeakRates {
            int8_ops_per_s: peak_ops(self, DataType::Int8),
            fp16_ops_per_s: peak_ops(self, DataType::Fp16),
            lanes_per_tile: self.lanes_per_tile(),
        }
    }

    /// Sustained DRAM bandwidth.
    pub fn effective_mem_bw(&self) -> f64 {
        self.mem_bw_bytes_per_s * self.mem_bw_efficiency
    }
}

impl Default for MachineConfig {
    fn default() -> Self {
        Self::base()
    }
}

impl fmt::Display for MachineConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} tiles x {}-bit @ {:.2} GHz, LLC {} KiB, DRAM {:.0} GB/s",
            self.name,
            self.tiles,
            self.simd_bits,
            self.freq_hz / 1e9,
            self.llc_bytes / KIB,
            self.mem_bw_bytes_per_s / 1e9
        )
    }
}

/// Multiply-accumulates per 16-bit lane per cycle.
pub fn macs_per_lane(dtype: DataType) -> f64 {
    match dtype {
        DataType::Int8 => 2.0,
        DataType::Fp16 => 1.0,
        DataType::Fp32 => 0.5,
    }
}

/// Peak ops/s with a multiply-accumulate counted as two ops.
pub fn peak_ops(cfg: &MachineConfig, dtype: DataType) -> f64 {
    cfg.tiles as f64 * f64::from(cfg.lanes_per_tile()) * macs_per_lane(dtype) * 2.0 * cfg.freq_hz
}

/// Optional per-field replacements, shared by config files and CLI flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    pub name: Option<String>,
    pub tiles: Option<u64>,
    pub simd_bits: Option<u32>,
    pub vrf_regs: Option<u32>,
    pub freq_hz: Option<f64>,
    pub l1_bytes: Option<u64>,
    pub llc_bytes: Option<u64>,
    pub mem_bw_bytes_per_s: Option<f64>,
    pub mem_bw_efficiency: Option<f64>,
    pub line_bytes: Option<u64>,
    pub l1_fill_bytes_per_cycle_per_tile: Option<f64>,
    pub llc_fill_bytes_per_cycle_per_tile: Option<f64>,
    pub hbm_stacks: Option<u32>,
    pub barrier_cycles: Option<f64>,
    pub compute_scale: Option<f64>,
    pub perfect_cache: Option<bool>,
}

impl ConfigOverrides {
    /// Replaces the set fields of `cfg` and validates the result.
    pub fn apply(&self, mut cfg: MachineConfig) -> Result<MachineConfig> {
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field {
                    cfg.$field = v.clone();
                })*
            };
        }
        set!(
            name,
            tiles,
            simd_bits,
            vrf_regs,
            freq_hz,
            l1_bytes,
            llc_bytes,
            mem_bw_bytes_per_s,
            mem_bw_efficiency,
            line_bytes,
            l1_fill_bytes_per_cycle_per_tile,
            llc_fill_bytes_per_cycle_per_tile,
            hbm_stacks,
            barrier_cycles,
            compute_scale,
            perfect_cache
        );
        if self.simd_bits.is_some() && self.l1_fill_bytes_per_cycle_per_tile.is_none() {
            cfg.l1_fill_bytes_per_cycle_per_tile = cfg
                .l1_fill_bytes_per_cycle_per_tile
                .max(f64::from(cfg.simd_bits / 8));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_peaks() {
        let base = MachineConfig::base();
        assert_eq!(peak_ops(&base, DataType::Int8), 524.288e12);
        assert_eq!(peak_ops(&base, DataType::Fp16), 262.144e12);
        assert_eq!(peak_ops(&base, DataType::Fp32), 131.072e12);
        let p = base.peak_rates();
        assert_eq!(p.int8_ops_per_s, 2.0 * p.fp16_ops_per_s);
        assert_eq!(p.lanes_per_tile, 32);
    }

    #[test]
    fn riss_peak() {
        let riss = MachineConfig::preset("Riss").unwrap();
        assert!((peak_ops(&riss, DataType::Int8) - 153.6e9).abs() < 1e-3);
        assert_eq!(riss.llc_bytes, 192 * 1024);
        assert_eq!(riss.tiles, 1);
    }

    #[test]
    fn unknown_preset() {
        assert!(matches!(MachineConfig::preset("huge"), Err(Error::UnknownPreset(_))));
    }

    #[test]
    fn override_bandwidth() {
        let o = ConfigOverrides {
            mem_bw_bytes_per_s: Some(450e9),
            ..Default::default()
        };
        let cfg = o.apply(MachineConfig::base()).unwrap();
        assert_eq!(cfg.mem_bw_bytes_per_s, 450e9);
        assert_eq!(cfg.tiles, 2048);
    }

    #[test]
    fn rejects_bad_fields() {
        for o in [
            ConfigOverrides {
                simd_bits: Some(384),
                ..Default::default()
            },
            ConfigOverrides {
                tiles: Some(0),
                ..Default::default()
            },
            ConfigOverrides {
                vrf_regs: Some(4),
                ..Default::default()
            },
            ConfigOverrides {
                mem_bw_efficiency: Some(1.5),
                ..Default::default()
            },
            ConfigOverrides {
                l1_fill_bytes_per_cycle_per_tile: Some(16.0),
                ..Default::default()
            },
        ] {
            let err = o.apply(MachineConfig::base()).unwrap_err();
            assert_eq!(err.class(), crate::ErrorClass::InfeasibleConfig);
        }
    }

    #[test]
    fn toml_file_starts_from_preset() {
        let cfg = MachineConfig::from_toml("preset = \"riss\"\nllc_bytes = 262144\n").unwrap();
        assert_eq!(cfg.tiles, 1);
        assert_eq!(cfg.llc_bytes, 262_144);
        let round = MachineConfig::from_toml(&MachineConfig::base().to_toml()).unwrap();
        assert_eq!(round, MachineConfig::base());
        assert!(MachineConfig::from_toml("tilez = 4").is_err());
    }

    #[test]
    fn iso_peak_pair() {
        let wide = MachineConfig::preset("base-4096c-256v").unwrap();
        assert_eq!(
            peak_ops(&wide, DataType::Int8),
            peak_ops(&MachineConfig::base(), DataType::Int8)
        );
        wide.validate().unwrap();
    }
}
