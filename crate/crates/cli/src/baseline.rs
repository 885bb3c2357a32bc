//! Published reference numbers the comparisons are made against.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use upcycle_core::workload::{DataType, Mode};

const EMBEDDED: &str = include_str!("../data/baselines.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilizationEntry {
    pub source: String,
    pub app: String,
    pub mode: Mode,
    /// Batch 1.
    pub small: f64,
    /// Whichever large batch performed best.
    pub large: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyEntry {
    pub source: String,
    pub app: String,
    pub mode: Mode,
    pub tops_per_mm2: f64,
    pub pj_per_op: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct A100 {
    pub source: String,
    pub int8_peak_tops: f64,
    pub fp16_peak_tops: f64,
    pub tdp_w: f64,
    pub area_mm2: f64,
    pub utilization: Vec<UtilizationEntry>,
    pub efficiency: Vec<EfficiencyEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppValue {
    pub app: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EyerissV2 {
    pub source: String,
    /// Technology node the values were measured at.
    pub node: String,
    pub pj_per_op: Vec<AppValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineTable {
    pub version: u32,
    pub a100: A100,
    pub eyeriss_v2: EyerissV2,
}

impl BaselineTable {
    pub fn embedded() -> &'static Self {
        static TABLE: OnceLock<BaselineTable> = OnceLock::new();
        TABLE.get_or_init(|| toml::from_str(EMBEDDED).expect("embedded baselines parse"))
    }

    pub fn a100_utilization(&self, app: &str, mode: Mode, batch: u64) -> Option<f64> {
        let e = self.a100.utilization.iter().find(|e| e.app == app && e.mode == mode)?;
        Some(if batch <= 1 { e.small } else { e.large })
    }

    pub fn a100_efficiency(&self, app: &str, mode: Mode) -> Option<&EfficiencyEntry> {
        self.a100.efficiency.iter().find(|e| e.app == app && e.mode == mode)
    }

    pub fn a100_peak_ops(&self, dtype: DataType) -> f64 {
        1e12 * match dtype {
            DataType::Int8 => self.a100.int8_peak_tops,
            _ => self.a100.fp16_peak_tops,
        }
    }

    pub fn eyeriss_pj_per_op(&self, app: &str) -> Option<f64> {
        self.eyeriss_v2.pj_per_op.iter().find(|e| e.app == app).map(|e| e.value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn a100_utilization_is_transcribed_verbatim() {
        let t = BaselineTable::embedded();
        let expect = [
            ("resnet50", Mode::Inference, 0.050, 0.502),
            ("ssd_resnet34", Mode::Inference, 0.039, 0.045),
            ("maskrcnn", Mode::Inference, 0.150, 0.200),
            ("bert_large_128", Mode::Inference, 0.138, 0.595),
            ("rnnt", Mode::Inference, 0.015, 0.547),
            ("resnet50", Mode::Training, 0.015, 0.212),
            ("ssd_resnet34", Mode::Training, 0.010, 0.154),
            ("maskrcnn", Mode::Training, 0.217, 0.217),
            ("bert_large_128", Mode::Training, 0.063, 0.272),
            ("rnnt", Mode::Training, 0.008, 0.088),
        ];
        assert_eq!(t.a100.utilization.len(), expect.len());
        for (app, mode, small, large) in expect {
            assert_eq!(t.a100_utilization(app, mode, 1), Some(small), "{app}");
            assert_eq!(t.a100_utilization(app, mode, 64), Some(large), "{app}");
        }
    }

    #[test]
    fn a100_spec_and_efficiency_points() {
        let t = BaselineTable::embedded();
        assert_eq!((t.a100.int8_peak_tops, t.a100.fp16_peak_tops), (624.0, 312.0));
        assert_eq!((t.a100.tdp_w, t.a100.area_mm2), (300.0, 840.0));
        let expect = [
            ("resnet50", Mode::Inference, 0.42, 0.87),
            ("resnet50", Mode::Training, 0.08, 4.29),
            ("ssd_resnet34", Mode::Inference, 0.03, 10.54),
            ("ssd_resnet34", Mode::Training, 0.06, 6.25),
            ("maskrcnn", Mode::Inference, 0.08, 4.56),
            ("maskrcnn", Mode::Training, 0.1, 3.48),
            ("rnnt", Mode::Inference, 0.45, 0.81),
            ("rnnt", Mode::Training, 0.1, 3.5),
        ];
        assert_eq!(t.a100.efficiency.len(), expect.len());
        for (app, mode, tops, pj) in expect {
            let e = t.a100_efficiency(app, mode).unwrap();
            assert_eq!((e.tops_per_mm2, e.pj_per_op), (tops, pj), "{app}");
        }
        assert!(t.a100_efficiency("bert_large_128", Mode::Training).is_none());
    }

    #[test]
    fn eyeriss_values_and_provenance() {
        let t = BaselineTable::embedded();
        assert_eq!(t.eyeriss_pj_per_op("alexnet"), Some(3.95));
        assert_eq!(t.eyeriss_pj_per_op("mobilenet_v1"), Some(5.16));
        assert_eq!(t.eyeriss_v2.node, "65nm");
        assert!(t.a100.utilization.iter().all(|e| !e.source.is_empty()));
        assert!(t.a100.efficiency.iter().all(|e| !e.source.is_empty()));
    }
}
