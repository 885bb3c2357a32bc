//! Sweep manifest files.

use std::path::Path;

use serde::Deserialize;

use super::{Metric, SweepSpec, TraceSource};
use crate::arch::MachineConfig;
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

pub const DEFAULT_MANIFEST: &str = include_str!("../../data/default-sweep.toml");

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Axes {
    tiles: Option<Vec<u64>>,
    simd_bits: Option<Vec<u32>>,
    freq_hz: Option<Vec<f64>>,
    llc_bytes: Option<Vec<u64>>,
    mem_bw: Option<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    name: String,
    #[serde(default)]
    base: Option<toml::Table>,
    axes: Option<Axes>,
    #[serde(default)]
    metrics: Option<Vec<Metric>>,
    #[serde(rename = "trace")]
    traces: Vec<TraceSource>,
}

fn parse_err(message: String) -> Error {
    Error::Parse {
        what: "sweep manifest",
        message,
    }
}

impl SweepSpec {
    /// Loads a manifest; relative trace paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path.parent())
    }

    /// Parses a manifest. Omitted axes hold the base value only.
    pub fn from_toml(text: &str, dir: Option<&Path>) -> Result<Self> {
        let m: Manifest = toml::from_str(text).map_err(|e| parse_err(e.to_string()))?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Version {
                found: m.version,
                expected: MANIFEST_VERSION,
            });
        }
        let base = match m.base {
            Some(t) => MachineConfig::from_toml(&toml::to_string(&t).map_err(|e| parse_err(e.to_string()))?)?,
            None => MachineConfig::base(),
        };
        let traces = m
            .traces
            .into_iter()
            .map(|t| match (t, dir) {
                (TraceSource::File { path, dtype }, Some(d)) if path.is_relative() => TraceSource::File {
                    path: d.join(path),
                    dtype,
                },
                (t, _) => t,
            })
            .collect();
        let mut spec = SweepSpec {
            name: m.name,
            ..SweepSpec::single(base, traces)
        };
        if let Some(a) = m.axes {
            if let Some(v) = a.tiles {
                spec.tiles = v;
            }
            if let Some(v) = a.simd_bits {
                spec.simd_bits = v;
            }
            if let Some(v) = a.freq_hz {
                spec.freq_hz = v;
            }
            if let Some(v) = a.llc_bytes {
                spec.llc_bytes = v;
            }
            if let Some(v) = a.mem_bw {
                spec.mem_bw = v;
            }
        }
        if let Some(v) = m.metrics {
            spec.metrics = v;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn default_manifest() -> Self {
        Self::from_toml(DEFAULT_MANIFEST, None).expect("shipped manifest parses")
    }
}
