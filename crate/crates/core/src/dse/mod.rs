//! Grid sweeps over machine configurations, Pareto fronts and core-scaling
//! headroom.

mod manifest;

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use manifest::DEFAULT_MANIFEST;

use crate::arch::MachineConfig;
use crate::error::{Error, Result};
use crate::perf::simulate;
use crate::powerarea::{estimate_area, estimate_power, tdp, EnergyCoefficients};
use crate::scalar::{geomean, Real};
use crate::workload::{zoo, DataType, Mode, Trace};

const MIB: u64 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    PjPerOp,
    TopsPerMm2,
    SamplesPerS,
    Utilization,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::PjPerOp, Metric::TopsPerMm2, Metric::SamplesPerS, Metric::Utilization];

    pub fn name(self) -> &'static str {
        match self {
            Metric::PjPerOp => "pj_per_op",
            Metric::TopsPerMm2 => "tops_per_mm2",
            Metric::SamplesPerS => "samples_per_s",
            Metric::Utilization => "utilization",
        }
    }
}

/// Where a sweep gets one of its workloads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TraceSource {
    Zoo {
        model: String,
        mode: Mode,
        batch: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dtype: Option<DataType>,
    },
    File {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dtype: Option<DataType>,
    },
}

impl TraceSource {
    pub fn zoo(model: &str, mode: Mode, batch: u64) -> Self {
        TraceSource::Zoo {
            model: model.to_string(),
            mode,
            batch,
            dtype: None,
        }
    }

    pub fn resolve(&self) -> Result<Trace> {
        let (trace, dtype) = match self {
            TraceSource::Zoo { model, mode, batch, dtype } => (zoo::build(model, *mode, *batch)?, dtype),
            TraceSource::File { path, dtype } => (Trace::load(path)?, dtype),
        };
        match dtype {
            Some(d) => trace.with_dtype(*d),
            None => Ok(trace),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub name: String,
    /// Every field the axes leave alone comes from here.
    pub base: MachineConfig,
    pub tiles: Vec<u64>,
    pub simd_bits: Vec<u32>,
    pub freq_hz: Vec<f64>,
    pub llc_bytes: Vec<u64>,
    pub mem_bw: Vec<f64>,
    pub traces: Vec<TraceSource>,
    pub metrics: Vec<Metric>,
}

impl SweepSpec {
    /// A spec whose every axis holds the base value only.
    pub fn single(base: MachineConfig, traces: Vec<TraceSource>) -> Self {
        Self {
            name: base.name.clone(),
            tiles: vec![base.tiles],
            simd_bits: vec![base.simd_bits],
            freq_hz: vec![base.freq_hz],
            llc_bytes: vec![base.llc_bytes],
            mem_bw: vec![base.mem_bw_bytes_per_s],
            base,
            traces,
            metrics: Metric::ALL.to_vec(),
        }
    }

    /// Frequencies × tile counts × vector widths around the base design,
    /// over the end-to-end suite in both modes at `batch`.
    pub fn default_grid(batch: u64) -> Self {
        let traces = [Mode::Inference, Mode::Training]
            .into_iter()
            .flat_map(|mode| zoo::SUITE.iter().map(move |m| TraceSource::zoo(m, mode, batch)))
            .collect();
        Self {
            name: "default-grid".into(),
            tiles: vec![1024, 2048, 4096],
            simd_bits: vec![256, 512],
            freq_hz: vec![1e9, 1.5e9, 2e9, 2.5e9],
            ..Self::single(MachineConfig::base(), traces)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let axes = [
            ("tiles", self.tiles.len()),
            ("simd_bits", self.simd_bits.len()),
            ("freq_hz", self.freq_hz.len()),
            ("llc_bytes", self.llc_bytes.len()),
            ("mem_bw", self.mem_bw.len()),
        ];
        if let Some((axis, _)) = axes.iter().find(|(_, n)| *n == 0) {
            return Err(Error::InvalidSweep(format!("axis `{axis}` is empty")));
        }
        if self.traces.is_empty() {
            return Err(Error::InvalidSweep("no traces".into()));
        }
        if self.metrics.is_empty() {
            return Err(Error::InvalidSweep("no metrics".into()));
        }
        Ok(())
    }

    pub fn point_count(&self) -> usize {
        self.tiles.len() * self.simd_bits.len() * self.freq_hz.len() * self.llc_bytes.len() * self.mem_bw.len()
    }

    /// Every axis combination in sweep order, the last axis varying fastest.
    /// Configurations are not validated here.
    pub fn configs(&self) -> Vec<MachineConfig> {
        let mut out = Vec::with_capacity(self.point_count());
        for &tiles in &self.tiles {
            for &simd_bits in &self.simd_bits {
                for &freq_hz in &self.freq_hz {
                    for &llc_bytes in &self.llc_bytes {
                        for &mem_bw in &self.mem_bw {
                            let mut c = self.base.clone();
                            c.tiles = tiles;
                            c.simd_bits = simd_bits;
                            c.freq_hz = freq_hz;
                            c.llc_bytes = llc_bytes;
                            c.mem_bw_bytes_per_s = mem_bw;
                            if simd_bits != self.base.simd_bits {
                                c.l1_fill_bytes_per_cycle_per_tile = f64::from(simd_bits / 8);
                            }
                            c.name = point_name(&c);
                            out.push(c);
                        }
                    }
                }
            }
        }
        out
    }
}

fn point_name(c: &MachineConfig) -> String {
    let mut s = format!("{}c-{}v-{}ghz", c.tiles, c.simd_bits, c.freq_hz / 1e9);
    if c.llc_bytes.is_multiple_of(MIB) {
        s += &format!("-{}mib", c.llc_bytes / MIB);
    } else {
        s += &format!("-{}b", c.llc_bytes);
    }
    if c.mem_bw_bytes_per_s.is_finite() {
        s += &format!("-{}gbs", c.mem_bw_bytes_per_s / 1e9);
    } else {
        s += "-infbw";
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics<T> {
    pub pj_per_op: T,
    pub tops_per_mm2: T,
    pub samples_per_s: T,
    pub utilization: T,
}

impl<T: Real> Metrics<T> {
    pub fn get(&self, m: Metric) -> T {
        match m {
            Metric::PjPerOp => self.pj_per_op,
            Metric::TopsPerMm2 => self.tops_per_mm2,
            Metric::SamplesPerS => self.samples_per_s,
            Metric::Utilization => self.utilization,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMetrics<T> {
    pub trace: String,
    pub metrics: Metrics<T>,
    pub time_s: T,
    pub power_w: T,
}

/// Geometric means over the traces with a strictly positive value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary<T> {
    pub pj_per_op: Option<T>,
    pub tops_per_mm2: Option<T>,
    pub samples_per_s: Option<T>,
    pub utilization: Option<T>,
}

impl<T: Real> Summary<T> {
    fn of(runs: &[TraceMetrics<T>]) -> Self {
        let g = |m: Metric| geomean(runs.iter().map(|r| r.metrics.get(m)).filter(|v| *v > T::zero()));
        Self {
            pj_per_op: g(Metric::PjPerOp),
            tops_per_mm2: g(Metric::TopsPerMm2),
            samples_per_s: g(Metric::SamplesPerS),
            utilization: g(Metric::Utilization),
        }
    }

    pub fn get(&self, m: Metric) -> Option<T> {
        match m {
            Metric::PjPerOp => self.pj_per_op,
            Metric::TopsPerMm2 => self.tops_per_mm2,
            Metric::SamplesPerS => self.samples_per_s,
            Metric::Utilization => self.utilization,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignPoint<T> {
    pub index: usize,
    pub config: MachineConfig,
    /// Same tiles × vector width product as the spec's base.
    pub iso_peak: bool,
    /// Why the point could not be evaluated; `runs` is then empty.
    pub error: Option<String>,
    pub area_mm2: T,
    pub tdp_w: T,
    pub runs: Vec<TraceMetrics<T>>,
    pub geomean: Summary<T>,
}

impl<T> DesignPoint<T> {
    pub fn feasible(&self) -> bool {
        self.error.is_none()
    }
}

/// Simulates one trace on one configuration.
pub fn evaluate<T: Real>(trace: &Trace, cfg: &MachineConfig, coeffs: &EnergyCoefficients) -> Result<TraceMetrics<T>> {
    let run = simulate::<T>(trace, cfg);
    let pa = estimate_power(cfg, &run, coeffs)?;
    Ok(TraceMetrics {
        trace: trace.name().to_string(),
        metrics: Metrics {
            pj_per_op: pa.pj_per_op,
            tops_per_mm2: pa.tops_per_mm2,
            samples_per_s: run.samples_per_s,
            utilization: run.utilization,
        },
        time_s: run.total_time_s,
        power_w: pa.avg_power_w,
    })
}

fn check_point(cfg: &MachineConfig, coeffs: &EnergyCoefficients) -> Result<()> {
    cfg.validate()?;
    coeffs.voltage(cfg.freq_hz)?;
    Ok(())
}

/// Evaluates every point of `spec` on every trace. Points come back in spec
/// order; points that fail validation are returned flagged.
pub fn sweep<T: Real>(spec: &SweepSpec, coeffs: &EnergyCoefficients) -> Result<Vec<DesignPoint<T>>> {
    spec.validate()?;
    let traces: Vec<Trace> = spec.traces.iter().map(TraceSource::resolve).collect::<Result<_>>()?;
    let configs = spec.configs();
    let base_peak = spec.base.tiles * u64::from(spec.base.simd_bits);
    let jobs: Vec<(usize, usize)> = (0..configs.len())
        .filter(|&p| check_point(&configs[p], coeffs).is_ok())
        .flat_map(|p| (0..traces.len()).map(move |t| (p, t)))
        .collect();
    let mut results: Vec<Result<TraceMetrics<T>>> = jobs
        .par_iter()
        .map(|&(p, t)| evaluate(&traces[t], &configs[p], coeffs))
        .collect();
    results.reverse();

    let mut points = Vec::with_capacity(configs.len());
    for (index, config) in configs.into_iter().enumerate() {
        let iso_peak = config.tiles * u64::from(config.simd_bits) == base_peak;
        let mut point = DesignPoint {
            index,
            iso_peak,
            error: None,
            area_mm2: T::zero(),
            tdp_w: T::zero(),
            runs: Vec::new(),
            geomean: Summary::of(&[]),
            config,
        };
        if let Err(e) = check_point(&point.config, coeffs) {
            point.error = Some(e.to_string());
            points.push(point);
            continue;
        }
        let mut failure = None;
        for _ in 0..traces.len() {
            match results.pop().expect("one result per job") {
                Ok(r) => point.runs.push(r),
                Err(e) => failure = failure.or(Some(e.to_string())),
            }
        }
        match (estimate_area::<T>(&point.config, coeffs), tdp::<T>(&point.config, coeffs)) {
            (Ok(a), Ok(w)) => {
                point.area_mm2 = a.total_mm2;
                point.tdp_w = w;
            }
            (Err(e), _) | (_, Err(e)) => failure = failure.or(Some(e.to_string())),
        }
        if let Some(msg) = failure {
            point.error = Some(msg);
            point.runs.clear();
        } else {
            point.geomean = Summary::of(&point.runs);
        }
        points.push(point);
    }
    Ok(points)
}

/// Indices of the non-dominated `(tops_per_mm2, pj_per_op)` pairs, the first
/// maximized and the second minimized, in input order. Pairs with a NaN never
/// make the front.
pub fn pareto<T: Real>(points: &[(T, T)]) -> Vec<usize> {
    let dominates = |a: (T, T), b: (T, T)| a.0 >= b.0 && a.1 <= b.1 && (a.0 > b.0 || a.1 < b.1);
    (0..points.len())
        .filter(|&i| {
            let p = points[i];
            !(p.0.is_nan() || p.1.is_nan()) && !points.iter().any(|&q| dominates(q, p))
        })
        .collect()
}

/// Pareto front of a sweep for one trace, or for the geomean summary when
/// `trace` is `None`. Returns point indices; flagged points never qualify.
pub fn pareto_points<T: Real>(points: &[DesignPoint<T>], trace: Option<usize>) -> Vec<usize> {
    let feasible: Vec<&DesignPoint<T>> = points.iter().filter(|p| p.feasible()).collect();
    let pairs: Vec<(T, T)> = feasible
        .iter()
        .map(|p| match trace {
            Some(t) => (p.runs[t].metrics.tops_per_mm2, p.runs[t].metrics.pj_per_op),
            None => (
                p.geomean.tops_per_mm2.unwrap_or_else(T::nan),
                p.geomean.pj_per_op.unwrap_or_else(T::nan),
            ),
        })
        .collect();
    pareto(&pairs).into_iter().map(|i| feasible[i].index).collect()
}

/// Speedup of `trace` when the per-tile compute and on-chip fill rates are
/// multiplied, with DRAM untouched.
pub fn sensitivity_core<T: Real>(trace: &Trace, cfg: &MachineConfig, multipliers: &[f64]) -> Result<Vec<(f64, T)>> {
    if let Some(m) = multipliers.iter().find(|m| !(**m >= 1.0 && m.is_finite())) {
        return Err(Error::InvalidSweep(format!("core multiplier {m} below 1")));
    }
    let reference = simulate::<T>(trace, cfg).total_time_s;
    Ok(multipliers
        .iter()
        .map(|&m| {
            if m == 1.0 {
                return (m, T::one());
            }
            let scaled = MachineConfig {
                compute_scale: cfg.compute_scale * m,
                ..cfg.clone()
            };
            let t = simulate::<T>(trace, &scaled).total_time_s;
            (m, if t > T::zero() { reference / t } else { T::one() })
        })
        .collect())
}

/// Per-trace speedups and their geometric mean for each multiplier.
pub struct CoreScaling<T> {
    pub multipliers: Vec<f64>,
    pub per_trace: Vec<(String, Vec<T>)>,
    pub geomean: Vec<T>,
}

pub fn sensitivity_core_geomean<T: Real>(traces: &[Trace], cfg: &MachineConfig, multipliers: &[f64]) -> Result<CoreScaling<T>> {
    let per: Vec<Vec<(f64, T)>> = traces
        .par_iter()
        .map(|t| sensitivity_core(t, cfg, multipliers))
        .collect::<Result<_>>()?;
    let geomean = (0..multipliers.len())
        .map(|i| geomean(per.iter().map(|p| p[i].1)).unwrap_or_else(T::one))
        .collect();
    Ok(CoreScaling {
        multipliers: multipliers.to_vec(),
        per_trace: traces
            .iter()
            .zip(per)
            .map(|(t, p)| (t.name().to_string(), p.into_iter().map(|(_, s)| s).collect()))
            .collect(),
        geomean,
    })
}

/// One CSV row: a (point, trace) pair, or a single row for a flagged point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub point: usize,
    pub config: String,
    pub tiles: u64,
    pub simd_bits: u32,
    pub freq_hz: f64,
    pub llc_bytes: u64,
    pub mem_bw_bytes_per_s: f64,
    pub iso_peak: bool,
    pub area_mm2: Option<f64>,
    pub tdp_w: Option<f64>,
    pub trace: String,
    pub pj_per_op: Option<f64>,
    pub tops_per_mm2: Option<f64>,
    pub samples_per_s: Option<f64>,
    pub utilization: Option<f64>,
    pub time_s: Option<f64>,
    pub power_w: Option<f64>,
    /// On this trace's Pareto front among the feasible points.
    pub pareto: bool,
    pub error: Option<String>,
}

/// Flattens a sweep into rows with the per-trace Pareto annotation.
pub fn rows<T: Real>(points: &[DesignPoint<T>]) -> Vec<SweepRow> {
    let traces = points.iter().find(|p| p.feasible()).map_or(0, |p| p.runs.len());
    let fronts: Vec<Vec<usize>> = (0..traces).map(|t| pareto_points(points, Some(t))).collect();
    let mut out = Vec::new();
    for p in points {
        let c = &p.config;
        let row = |trace: String| SweepRow {
            point: p.index,
            config: c.name.clone(),
            tiles: c.tiles,
            simd_bits: c.simd_bits,
            freq_hz: c.freq_hz,
            llc_bytes: c.llc_bytes,
            mem_bw_bytes_per_s: c.mem_bw_bytes_per_s,
            iso_peak: p.iso_peak,
            area_mm2: None,
            tdp_w: None,
            trace,
            pj_per_op: None,
            tops_per_mm2: None,
            samples_per_s: None,
            utilization: None,
            time_s: None,
            power_w: None,
            pareto: false,
            error: p.error.clone(),
        };
        if !p.feasible() {
            out.push(row(String::new()));
            continue;
        }
        for (t, r) in p.runs.iter().enumerate() {
            let m = &r.metrics;
            out.push(SweepRow {
                area_mm2: Some(p.area_mm2.as_f64()),
                tdp_w: Some(p.tdp_w.as_f64()),
                pj_per_op: Some(m.pj_per_op.as_f64()),
                tops_per_mm2: Some(m.tops_per_mm2.as_f64()),
                samples_per_s: Some(m.samples_per_s.as_f64()),
                utilization: Some(m.utilization.as_f64()),
                time_s: Some(r.time_s.as_f64()),
                power_w: Some(r.power_w.as_f64()),
                pareto: fronts[t].contains(&p.index),
                ..row(r.trace.clone())
            });
        }
    }
    out
}
