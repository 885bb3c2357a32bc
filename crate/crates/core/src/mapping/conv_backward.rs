//! Convolution backward passes.
//!
//! The input gradient is computed per stride phase: a chunk covers one
//! `stride × stride` block of input pixels for a vector of channels, so every
//! pixel of the block sees its own subset of filter taps. The weight gradient
//! gives each filter pixel and channel block its own chunk and reduces over
//! every output pixel of the batch, splitting that reduction across tiles
//! when there are fewer chunks than tiles.

use super::elementwise::stream;
use super::kernel::{Microkernel, VectorizedDim};
use super::{ratio, Dependency, TaskCost, Traffic, WorkDecomposition};
use crate::arch::MachineConfig;
use crate::workload::{ConvParams, DataType, OpKind, OperatorNode};

/// Input-gradient pixels one load-and-broadcast of the output gradient feeds.
fn broadcast_group(cfg: &MachineConfig) -> u64 {
    cfg.line_bytes / 4
}

/// Output-gradient channels of the weight-gradient tile.
const DW_TN: u32 = 8;

pub fn map_conv2d_di(node: &OperatorNode, cfg: &MachineConfig) -> WorkDecomposition {
    let OpKind::Conv2dDi(p) = &node.op else {
        panic!("map_conv2d_di on {}", node.op.name());
    };
    input_grad(p, node.dtype, node.inputs.len(), node.op.shape_key(), cfg)
}

pub fn map_conv2d_dw(node: &OperatorNode, cfg: &MachineConfig) -> WorkDecomposition {
    let OpKind::Conv2dDw(p) = &node.op else {
        panic!("map_conv2d_dw on {}", node.op.name());
    };
    weight_grad(p, node.dtype, node.inputs.len(), node.op.shape_key(), cfg)
}

/// Input and weight gradient of one forward convolution.
pub fn map_conv2d_backward(p: &ConvParams, dtype: DataType, cfg: &MachineConfig) -> (WorkDecomposition, WorkDecomposition) {
    (
        input_grad(p, dtype, 2, OpKind::Conv2dDi(p.clone()).shape_key(), cfg),
        weight_grad(p, dtype, 2, OpKind::Conv2dDw(p.clone()).shape_key(), cfg),
    )
}

fn input_grad(p: &ConvParams, dtype: DataType, inputs: usize, label: String, cfg: &MachineConfig) -> WorkDecomposition {
    let v = cfg.vector_elems();
    let r = u64::from(dtype.accumulate_ratio());
    let in_b = dtype.input_bytes();
    let s = p.stride;
    let block = s * s;
    // taps per pixel of the block, padded to the worst phase
    let taps = p.r.div_ceil(s) * p.s.div_ceil(s);
    let depthwise = p.is_depthwise();
    let (channel_blocks, red) = if depthwise {
        (p.c.div_ceil(v), 1)
    } else {
        (p.c_per_group().div_ceil(v) * p.groups, p.k / p.groups)
    };
    let ksteps = if depthwise { taps.div_ceil(r) } else { taps * red.div_ceil(r) };
    let chunks = p.n * p.h.div_ceil(s) * p.w.div_ceil(s) * channel_blocks;

    let fmas = block * ksteps;
    let loads = fmas + fmas.div_ceil(broadcast_group(cfg));
    let task = TaskCost {
        alu_slots: fmas + block,
        mem_slots: loads + block,
        llc_bytes: (p.r * p.s * red * v + block * taps * red * if depthwise { v } else { 1 } + block * v) * in_b,
    };
    let per_chunk_ops = 2 * block * v * ksteps * r;
    let ideal = OpKind::Conv2dDi(p.clone()).op_count();
    let padded = (chunks * per_chunk_ops).max(ideal);
    let out = p.n * p.h * p.w * p.c * in_b;
    WorkDecomposition {
        label,
        chunk_count: chunks,
        reduction_splits: 1,
        chunk_work_ops: per_chunk_ops,
        padded_ops: padded,
        ideal_ops: ideal,
        microkernel: Microkernel {
            vectorized_dim: VectorizedDim::Channel,
            tm: 1,
            tn: block as u32,
            tk: r as u32,
            acc_regs: block as u32,
            operand_regs: 2,
            loads_per_kstep: (block + block.div_ceil(broadcast_group(cfg))) as u32,
            fmas_per_kstep: block as u32,
            needs_reduction: false,
        },
        simd_efficiency: ratio(ideal, padded),
        task,
        traffic: Traffic {
            l1_bytes: chunks * task.mem_slots * cfg.vector_bytes(),
            llc_bytes: chunks * task.llc_bytes,
            dram_read_bytes: (p.n * p.p() * p.q() * p.k + p.r * p.s * p.c_per_group() * p.k) * in_b,
            dram_write_bytes: out,
        },
        input_scale: vec![1.0; inputs],
        padded_fetch: false,
        min_tiling_met: false,
        dependency: Dependency::None,
        prologue: None,
        epilogue: None,
    }
}

fn weight_grad(p: &ConvParams, dtype: DataType, inputs: usize, label: String, cfg: &MachineConfig) -> WorkDecomposition {
    let v = cfg.vector_elems();
    let r = u64::from(dtype.accumulate_ratio());
    let in_b = dtype.input_bytes();
    let tn = u64::from(DW_TN);
    let passes = v.div_ceil(tn);
    let c_blocks = if p.is_depthwise() { p.c.div_ceil(v) } else { p.c_per_group().div_ceil(v) * p.groups };
    let k_blocks = if p.is_depthwise() { 1 } else { (p.k / p.groups).div_ceil(v) };
    let chunks = p.r * p.s * c_blocks * k_blocks;
    let pixels = p.n * p.p() * p.q();
    let steps = pixels.div_ceil(r);

    let splits = if chunks < cfg.tiles { (cfg.tiles / chunks).min(steps).max(1) } else { 1 };
    let steps_per_task = steps.div_ceil(splits);
    let acc = u64::from(DW_TN);
    let task_pixels = steps_per_task * r;
    let dy_block = task_pixels * v * in_b;
    let dy_reads = if 2 * dy_block > cfg.l1_bytes { passes } else { 1 };
    let task = TaskCost {
        alu_slots: passes * (steps_per_task * tn + acc),
        mem_slots: passes * (steps_per_task * 2 + acc),
        llc_bytes: task_pixels * v * in_b + dy_block * dy_reads + v * v * 4,
    };
    let ideal = OpKind::Conv2dDw(p.clone()).op_count();
    let per_chunk_ops = 2 * v * v * steps * r;
    let padded = (chunks * per_chunk_ops).max(ideal);
    let dw_count = p.r * p.s * p.c_per_group() * p.k;
    let epilogue = (splits > 1).then(|| {
        let mut merge = stream(
            format!("merge({splits} partials)"),
            dw_count,
            splits,
            splits - 1,
            DataType::Fp32.input_bytes(),
            dw_count * (splits - 1),
            splits as usize,
            cfg,
        );
        // partials stay on chip
        merge.traffic.dram_read_bytes = 0;
        merge.traffic.dram_write_bytes = 0;
        Box::new(merge)
    });
    WorkDecomposition {
        label,
        chunk_count: chunks,
        reduction_splits: splits,
        chunk_work_ops: 2 * v * v * steps_per_task * r,
        padded_ops: padded,
        ideal_ops: ideal,
        microkernel: Microkernel {
            vectorized_dim: VectorizedDim::Channel,
            tm: 1,
            tn: DW_TN,
            tk: r as u32,
            acc_regs: DW_TN,
            operand_regs: 2,
            loads_per_kstep: 2,
            fmas_per_kstep: DW_TN,
            needs_reduction: false,
        },
        simd_efficiency: ratio(ideal, padded),
        task,
        traffic: Traffic {
            l1_bytes: chunks * splits * task.mem_slots * cfg.vector_bytes(),
            llc_bytes: chunks * splits * task.llc_bytes,
            dram_read_bytes: (p.n * p.h * p.w * p.c + pixels * p.k) * in_b,
            dram_write_bytes: dw_count * in_b,
        },
        input_scale: vec![1.0; inputs],
        padded_fetch: false,
        min_tiling_met: false,
        dependency: Dependency::None,
        prologue: None,
        epilogue,
    }
}
