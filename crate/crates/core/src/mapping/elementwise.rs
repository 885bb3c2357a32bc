//! Element-wise operators: evenly spread vectors, one chunk per tile.

use super::kernel::{Microkernel, VectorizedDim};
use super::{ratio, Dependency, TaskCost, Traffic, WorkDecomposition};
use crate::arch::MachineConfig;
use crate::workload::{OpKind, OperatorNode};

/// ALU issue slots per output vector.
pub fn alu_ops_per_vector(op: &str, arity: u64) -> u64 {
    if let Some(base) = op.strip_suffix("Grad") {
        return alu_ops_per_vector(base, arity.saturating_sub(1).max(1)) + 1;
    }
    match op {
        "Relu" | "Copy" | "StackTime" | "JointConcat" | "Concat" => 1,
        "Add" | "AddN" => arity.saturating_sub(1).max(1),
        "AddRelu" => 2,
        "MaxPool" | "AvgPool" => arity,
        "Tanh" | "Sigmoid" | "Gelu" => 4,
        "Softmax" | "LayerNorm" | "AddLayerNorm" => 6,
        _ => 2,
    }
}

/// Streams `count` outputs, each reading `arity` inputs of `bytes` each.
#[allow(clippy::too_many_arguments)]
pub(crate) fn stream(
    label: String,
    count: u64,
    arity: u64,
    alu_per_vector: u64,
    bytes: u64,
    ideal_ops: u64,
    inputs: usize,
    cfg: &MachineConfig,
) -> WorkDecomposition {
    let v = cfg.vector_elems();
    let vectors = count.div_ceil(v);
    let chunks = vectors.min(cfg.tiles).max(1);
    let per_chunk = vectors.div_ceil(chunks);
    let slots = arity + 1;
    let task = TaskCost {
        alu_slots: per_chunk * alu_per_vector,
        mem_slots: per_chunk * slots,
        llc_bytes: per_chunk * v * slots * bytes,
    };
    let padded_ops = (vectors * v * arity).max(ideal_ops);
    WorkDecomposition {
        label,
        chunk_count: chunks,
        reduction_splits: 1,
        chunk_work_ops: per_chunk * v * arity,
        padded_ops,
        ideal_ops,
        microkernel: Microkernel {
            vectorized_dim: VectorizedDim::M,
            tm: 1,
            tn: 1,
            tk: 1,
            acc_regs: 1,
            // operands stream through two staging registers
            operand_regs: arity.min(2) as u32,
            loads_per_kstep: slots as u32,
            fmas_per_kstep: alu_per_vector as u32,
            needs_reduction: false,
        },
        simd_efficiency: ratio(count, vectors * v),
        task,
        traffic: Traffic {
            l1_bytes: vectors * slots * cfg.vector_bytes(),
            llc_bytes: slots * count * bytes,
            dram_read_bytes: arity * count * bytes,
            dram_write_bytes: count * bytes,
        },
        input_scale: vec![1.0; inputs],
        padded_fetch: false,
        min_tiling_met: false,
        dependency: Dependency::None,
        prologue: None,
        epilogue: None,
    }
}

pub fn map_elementwise(node: &OperatorNode, cfg: &MachineConfig) -> WorkDecomposition {
    let bytes = node.dtype.input_bytes();
    let label = node.op.shape_key();
    match &node.op {
        OpKind::Elementwise(p) => stream(
            label,
            p.count,
            p.arity,
            alu_ops_per_vector(&p.op, p.arity),
            bytes,
            node.op_count(),
            node.inputs.len(),
            cfg,
        ),
        OpKind::Requantize(p) => stream(label, p.count, 1, 2, bytes, node.op_count(), node.inputs.len(), cfg),
        other => panic!("map_elementwise on {}", other.name()),
    }
}

/// Whether `node` can run in the epilogue of the operator producing its
/// first input: a pointwise forward op on one output element per input.
pub fn is_fusible_epilogue(node: &OperatorNode) -> bool {
    match &node.op {
        OpKind::Elementwise(p) => matches!(p.op.as_str(), "Relu" | "Add" | "AddN" | "AddRelu" | "Tanh" | "Sigmoid" | "Gelu"),
        OpKind::Requantize(_) => true,
        _ => false,
    }
}

/// Folds an element-wise consumer into the tasks of `producer`. The
/// producer's output never leaves the registers; the consumer's ALU work and
/// the loads of its other operands are spread over the producer's tasks.
pub fn fuse_epilogue(producer: &mut WorkDecomposition, consumer: &OperatorNode, cfg: &MachineConfig) {
    let (count, arity, alu) = match &consumer.op {
        OpKind::Elementwise(p) => (p.count, p.arity, alu_ops_per_vector(&p.op, p.arity)),
        OpKind::Requantize(p) => (p.count, 1, 2),
        other => panic!("fuse_epilogue on {}", other.name()),
    };
    let bytes = consumer.dtype.input_bytes();
    let vectors = count.div_ceil(cfg.vector_elems());
    let others = arity - 1;
    let tasks = producer.tasks().max(1);
    producer.task.alu_slots += (vectors * alu).div_ceil(tasks);
    producer.task.mem_slots += (vectors * others).div_ceil(tasks);
    producer.task.llc_bytes += (count * bytes * others).div_ceil(tasks);
    producer.traffic.l1_bytes += vectors * others * cfg.vector_bytes();
    producer.traffic.llc_bytes += count * bytes * others;
    producer.traffic.dram_read_bytes += count * bytes * others;
    producer.label = format!("{}+{}", producer.label, consumer.op.shape_key());
}
