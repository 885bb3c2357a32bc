//! Operator traces: shapes, datatypes, op counts and workload summaries.

mod backward;
mod dtype;
mod op;
mod trace;
pub mod zoo;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use backward::{expand_backward, lstm_chains};
pub use dtype::DataType;
pub use op::{
    is_named_activation, ConvParams, ElementwiseParams, LstmParams, MatMulLayout, MatMulParams, OpKind, OperatorNode,
    RequantizeParams, LSTM_GATE_OPS_PER_UNIT,
};
pub use trace::{Mode, TensorRole, TensorSpec, Trace, TraceBuilder, TraceHeader, TRACE_SCHEMA_VERSION};

/// One row of a workload census.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterizationSummary {
    pub name: String,
    pub mode: Mode,
    pub batch: u64,
    pub gops_per_sample: f64,
    pub distinct_shape_count: usize,
    pub primary_op_fraction: f64,
}

pub fn characterize(trace: &Trace) -> CharacterizationSummary {
    let total = trace.total_ops();
    let primary: u64 = trace
        .nodes()
        .iter()
        .filter(|n| n.op.is_primary())
        .map(OperatorNode::op_count)
        .sum();
    let shapes: BTreeSet<String> = trace.nodes().iter().map(|n| n.op.shape_key()).collect();
    CharacterizationSummary {
        name: trace.name().to_string(),
        mode: trace.mode(),
        batch: trace.batch(),
        gops_per_sample: total as f64 / trace.batch() as f64 / 1e9,
        distinct_shape_count: shapes.len(),
        primary_op_fraction: if total == 0 { 0.0 } else { primary as f64 / total as f64 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_node_summary() {
        let mut b = TraceBuilder::new("mm", Mode::Inference, 1);
        let a = b.activation(&[128, 768], "MK", DataType::Int8);
        let w = b.weight(&[768, 768], "KN", DataType::Int8);
        let y = b.activation(&[128, 768], "MN", DataType::Int8);
        b.node(OpKind::MatMul(MatMulParams::new(128, 768, 768)), &[&a, &w], &[&y], DataType::Int8);
        let s = characterize(&b.build().unwrap());
        assert_eq!(s.gops_per_sample, 150_994_944.0 / 1e9);
        assert_eq!(s.distinct_shape_count, 1);
        assert_eq!(s.primary_op_fraction, 1.0);
    }

    #[test]
    fn empty_trace_summary() {
        let s = characterize(&Trace::empty("nothing", Mode::Inference, 4));
        assert_eq!(s.gops_per_sample, 0.0);
        assert_eq!(s.distinct_shape_count, 0);
    }

    #[test]
    fn repeated_shapes_count_once() {
        let mut b = TraceBuilder::new("relu", Mode::Inference, 2);
        let mut x = b.activation(&[1024], "C", DataType::Int8);
        for _ in 0..3 {
            let y = b.activation(&[1024], "C", DataType::Int8);
            b.node(
                OpKind::Elementwise(ElementwiseParams::new("Relu", 1024, 1)),
                &[&x],
                &[&y],
                DataType::Int8,
            );
            x = y;
        }
        let s = characterize(&b.build().unwrap());
        assert_eq!(s.distinct_shape_count, 1);
        assert_eq!(s.gops_per_sample, 3.0 * 1024.0 / 2.0 / 1e9);
    }
}
