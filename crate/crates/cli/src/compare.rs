//! Run records and comparisons against published or recorded baselines.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use upcycle_core::arch::MachineConfig;
use upcycle_core::perf::simulate;
use upcycle_core::powerarea::{estimate_power, scale_technology, EnergyCoefficients, ScaleKind, TechTable};
use upcycle_core::scalar::geomean;
use upcycle_core::workload::{DataType, Mode, Trace};
use upcycle_core::{PowerAreaReportF64, Result, RunReportF64};

use crate::baseline::BaselineTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceInfo {
    pub name: String,
    /// Trace name without its mode suffix.
    pub app: String,
    pub mode: Mode,
    pub batch: u64,
    /// Datatype carrying most of the operations.
    pub dtype: DataType,
    pub ops_per_sample: f64,
}

impl TraceInfo {
    pub fn of(trace: &Trace) -> Self {
        let mut by_dtype: BTreeMap<DataType, u64> = BTreeMap::new();
        for n in trace.nodes() {
            *by_dtype.entry(n.dtype).or_default() += n.op_count();
        }
        let dtype = by_dtype
            .iter()
            .max_by_key(|(d, ops)| (**ops, std::cmp::Reverse(**d)))
            .map_or(DataType::Int8, |(d, _)| *d);
        let name = trace.name().to_string();
        let app = ["_inf", "_train", "_pretrain", "_finetune"]
            .iter()
            .find_map(|s| name.strip_suffix(s))
            .unwrap_or(&name)
            .to_string();
        Self {
            app,
            mode: trace.mode(),
            batch: trace.batch(),
            dtype,
            ops_per_sample: trace.total_ops() as f64 / trace.batch() as f64,
            name,
        }
    }
}

/// Everything `simulate` reports for one run; what `--json` writes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub trace: TraceInfo,
    pub config: MachineConfig,
    /// Technology node of the coefficients the power came from.
    pub node: String,
    pub run: RunReportF64,
    pub power: PowerAreaReportF64,
}

impl RunRecord {
    pub fn simulate(trace: &Trace, cfg: &MachineConfig, coeffs: &EnergyCoefficients) -> Result<Self> {
        let run = simulate::<f64>(trace, cfg);
        let power = estimate_power(cfg, &run, coeffs)?;
        Ok(Self {
            trace: TraceInfo::of(trace),
            config: cfg.clone(),
            node: coeffs.node.clone(),
            run,
            power,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub app: String,
    pub mode: Mode,
    pub batch: u64,
    pub regime: String,
    pub samples_per_s: f64,
    pub baseline_samples_per_s: Option<f64>,
    /// Ratio of samples per second.
    pub speedup: Option<f64>,
    pub pj_per_op: f64,
    pub baseline_pj_per_op: Option<f64>,
    /// Baseline pJ/op over ours.
    pub rel_efficiency: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSummary {
    pub mode: Mode,
    pub regime: String,
    pub apps: usize,
    pub geomean_speedup: Option<f64>,
    pub geomean_rel_efficiency: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub baseline: String,
    pub rows: Vec<ComparisonRow>,
    pub summaries: Vec<RegimeSummary>,
    /// Runs with no counterpart in the baseline.
    pub excluded: Vec<String>,
    pub method: String,
}

pub enum Baseline<'a> {
    A100(&'a BaselineTable),
    EyerissV2(&'a BaselineTable, &'a TechTable),
    Recorded(Vec<RunRecord>),
}

fn regime(batch: u64) -> &'static str {
    if batch <= 1 {
        "small"
    } else {
        "large"
    }
}

impl Baseline<'_> {
    fn name(&self) -> String {
        match self {
            Baseline::A100(_) => "a100".into(),
            Baseline::EyerissV2(..) => "eyeriss_v2".into(),
            Baseline::Recorded(r) => format!("recorded runs ({})", r.len()),
        }
    }

    fn method(&self) -> String {
        match self {
            Baseline::A100(_) => "A100 samples/s = published utilization x published peak (Int8 for inference, FP16 otherwise) / ops per sample; \
                 A100 pJ/op from its published efficiency points where one exists"
                .into(),
            Baseline::EyerissV2(..) => "our pJ/op re-expressed at the baseline's node through the technology table; no throughput comparison".into(),
            Baseline::Recorded(_) => "samples/s and pJ/op of the recorded run with the same trace name".into(),
        }
    }

    /// Baseline figures for a run, or `None` when the baseline has no such app.
    fn lookup(&self, r: &RunRecord) -> Result<Option<Matched>> {
        let t = &r.trace;
        let ours_pj = r.power.pj_per_op;
        Ok(match self {
            Baseline::A100(table) => table.a100_utilization(&t.app, t.mode, t.batch).map(|u| {
                let sps = if t.ops_per_sample > 0.0 {
                    Some(u * table.a100_peak_ops(t.dtype) / t.ops_per_sample)
                } else {
                    None
                };
                Matched {
                    samples_per_s: sps,
                    pj_per_op: table.a100_efficiency(&t.app, t.mode).map(|e| e.pj_per_op),
                    ours_pj_per_op: ours_pj,
                }
            }),
            Baseline::EyerissV2(table, tech) => match table.eyeriss_pj_per_op(&t.app) {
                Some(pj) => {
                    let scaled = scale_technology(ours_pj, &r.node, &table.eyeriss_v2.node, ScaleKind::Energy, tech)?;
                    Some(Matched {
                        samples_per_s: None,
                        pj_per_op: Some(pj),
                        ours_pj_per_op: scaled,
                    })
                }
                None => None,
            },
            Baseline::Recorded(runs) => runs
                .iter()
                .find(|b| b.trace.name == t.name && b.trace.batch == t.batch)
                .map(|b| Matched {
                    samples_per_s: Some(b.run.samples_per_s),
                    pj_per_op: Some(b.power.pj_per_op),
                    ours_pj_per_op: ours_pj,
                }),
        })
    }
}

/// Baseline figures for one run; our pJ/op is restated at the baseline's node
/// when the baseline needs it.
struct Matched {
    samples_per_s: Option<f64>,
    pj_per_op: Option<f64>,
    ours_pj_per_op: f64,
}

pub fn compare(runs: &[RunRecord], baseline: &Baseline) -> Result<ComparisonReport> {
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    for r in runs {
        let Some(m) = baseline.lookup(r)? else {
            excluded.push(r.trace.name.clone());
            continue;
        };
        let (base_sps, base_pj, ours_pj) = (m.samples_per_s, m.pj_per_op, m.ours_pj_per_op);
        let sps = r.run.samples_per_s;
        rows.push(ComparisonRow {
            app: r.trace.app.clone(),
            mode: r.trace.mode,
            batch: r.trace.batch,
            regime: regime(r.trace.batch).into(),
            samples_per_s: sps,
            baseline_samples_per_s: base_sps,
            speedup: base_sps.filter(|b| *b > 0.0).map(|b| sps / b),
            pj_per_op: ours_pj,
            baseline_pj_per_op: base_pj,
            rel_efficiency: base_pj.filter(|_| ours_pj > 0.0).map(|b| b / ours_pj),
        });
    }
    let mut groups: BTreeMap<(String, String), Vec<&ComparisonRow>> = BTreeMap::new();
    for row in &rows {
        groups.entry((format!("{:?}", row.mode), row.regime.clone())).or_default().push(row);
    }
    let summaries = groups
        .into_values()
        .map(|g| RegimeSummary {
            mode: g[0].mode,
            regime: g[0].regime.clone(),
            apps: g.len(),
            geomean_speedup: geomean(g.iter().filter_map(|r| r.speedup)),
            geomean_rel_efficiency: geomean(g.iter().filter_map(|r| r.rel_efficiency)),
        })
        .collect();
    Ok(ComparisonReport {
        baseline: baseline.name(),
        rows,
        summaries,
        excluded,
        method: baseline.method(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use upcycle_core::workload::zoo;

    fn record(model: &str, mode: Mode, batch: u64) -> RunRecord {
        let t = zoo::build(model, mode, batch).unwrap();
        RunRecord::simulate(&t, &MachineConfig::base(), &EnergyCoefficients::default()).unwrap()
    }

    #[test]
    fn self_comparison_is_exactly_one() {
        let r = vec![record("bert_base_128", Mode::Inference, 1)];
        let rep = compare(&r, &Baseline::Recorded(r.clone())).unwrap();
        assert_eq!(rep.rows[0].speedup, Some(1.0));
        assert_eq!(rep.rows[0].rel_efficiency, Some(1.0));
        assert_eq!(rep.summaries[0].geomean_speedup, Some(1.0));
    }

    #[test]
    fn a100_throughput_follows_the_reconstruction_identity() {
        let r = record("resnet50", Mode::Inference, 1);
        let table = BaselineTable::embedded();
        let rep = compare(std::slice::from_ref(&r), &Baseline::A100(table)).unwrap();
        let expect = 0.050 * 624e12 / r.trace.ops_per_sample;
        assert_eq!(rep.rows[0].baseline_samples_per_s, Some(expect));
        assert_eq!(rep.rows[0].speedup, Some(r.run.samples_per_s / expect));
        assert_eq!(rep.rows[0].baseline_pj_per_op, Some(0.87));
    }

    #[test]
    fn apps_without_a_baseline_are_listed_not_dropped() {
        let r = vec![record("bert_base_128", Mode::Inference, 1)];
        let rep = compare(&r, &Baseline::A100(BaselineTable::embedded())).unwrap();
        assert!(rep.rows.is_empty());
        assert_eq!(rep.excluded, vec!["bert_base_128_inf".to_string()]);
    }

    #[test]
    fn trace_info_names_the_app_and_dominant_dtype() {
        let t = zoo::build("rnnt", Mode::Training, 1).unwrap();
        let i = TraceInfo::of(&t);
        assert_eq!(i.app, "rnnt");
        assert_eq!(i.dtype, DataType::Fp16);
    }
}
