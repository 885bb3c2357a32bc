//! Lowering of operators to parallel output chunks and SIMD microkernels.
//!
//! Every operator is split into independent output chunks, one task per
//! chunk, each computed by a register-blocked microkernel. A decomposition
//! records the per-task issue and fill costs together with the total traffic
//! at each level of the hierarchy; the timing model turns those into time.

mod conv_backward;
mod elementwise;
mod gemm;
mod kernel;
mod lstm;

use serde::{Deserialize, Serialize};

use crate::arch::MachineConfig;
use crate::workload::{OpKind, OperatorNode};

pub use conv_backward::{map_conv2d_backward, map_conv2d_di, map_conv2d_dw};
pub use elementwise::{alu_ops_per_vector, fuse_epilogue, is_fusible_epilogue, map_elementwise};
pub use gemm::{decompose_matmul, map_conv2d, map_matmul};
pub use kernel::{feasible_tiles, select_matmul_tiling, Microkernel, VectorizedDim, SCRATCH_REGS};
pub use lstm::map_lstm_sequence;

/// Bytes moved at each level for one execution of a decomposition phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Traffic {
    /// L1 → register file.
    pub l1_bytes: u64,
    /// LLC → L1.
    pub llc_bytes: u64,
    /// Cold-cache DRAM reads.
    pub dram_read_bytes: u64,
    pub dram_write_bytes: u64,
}

/// Issue and fill cost of the largest task.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskCost {
    pub alu_slots: u64,
    pub mem_slots: u64,
    pub llc_bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Dependency {
    None,
    /// The phase runs `length` times back to back, each run waiting on the
    /// previous one.
    SequentialChain { length: u64 },
}

/// An operator lowered to tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkDecomposition {
    pub label: String,
    /// Disjoint output chunks.
    pub chunk_count: u64,
    /// Tasks per output chunk when the reduction is split across tiles.
    pub reduction_splits: u64,
    /// Ops of the largest task including padding.
    pub chunk_work_ops: u64,
    /// Ops executed including SIMD padding, over all tasks.
    pub padded_ops: u64,
    pub ideal_ops: u64,
    pub microkernel: Microkernel,
    pub simd_efficiency: f64,
    pub task: TaskCost,
    pub traffic: Traffic,
    /// Multiplier on DRAM reads of each node input, aligned with
    /// `OperatorNode::inputs`.
    pub input_scale: Vec<f64>,
    /// B rows narrower than the minimum fetch granule were padded.
    pub padded_fetch: bool,
    /// The shape admits a tile whose loads hide behind its FMAs.
    pub min_tiling_met: bool,
    pub dependency: Dependency,
    /// Phase that runs once before this one.
    pub prologue: Option<Box<WorkDecomposition>>,
    /// Phase that runs once after this one.
    pub epilogue: Option<Box<WorkDecomposition>>,
}

impl WorkDecomposition {
    pub fn tasks(&self) -> u64 {
        self.chunk_count * self.reduction_splits
    }

    pub fn waves(&self, tiles: u64) -> u64 {
        self.tasks().div_ceil(tiles).max(1)
    }

    pub fn chain_length(&self) -> u64 {
        match self.dependency {
            Dependency::None => 1,
            Dependency::SequentialChain { length } => length,
        }
    }

    /// Per-wave `(alu, l1, llc)` cycles of one run of this phase.
    pub fn wave_cycles(&self, cfg: &MachineConfig) -> (f64, f64, f64) {
        let scale = cfg.compute_scale;
        (
            self.task.alu_slots as f64 / scale,
            self.task.mem_slots as f64 / scale,
            self.task.llc_bytes as f64 / (cfg.llc_fill_bytes_per_cycle_per_tile * scale),
        )
    }

    /// Cycles of one run of this phase alone, ignoring DRAM and barriers.
    pub fn phase_cycles(&self, cfg: &MachineConfig) -> f64 {
        let (alu, l1, llc) = self.wave_cycles(cfg);
        self.waves(cfg.tiles) as f64 * alu.max(l1).max(llc)
    }

    /// Core-side cycles of every phase, chains serialized.
    pub fn core_cycles(&self, cfg: &MachineConfig) -> f64 {
        self.phases().map(|p| p.chain_length() as f64 * p.phase_cycles(cfg)).sum()
    }

    /// Phases in execution order.
    pub fn phases(&self) -> impl Iterator<Item = &WorkDecomposition> {
        self.prologue
            .as_deref()
            .into_iter()
            .chain(std::iter::once(self))
            .chain(self.epilogue.as_deref())
    }

    /// Number of synchronizations the operator needs.
    pub fn barriers(&self) -> u64 {
        self.phases().map(WorkDecomposition::chain_length).sum()
    }

    /// Traffic summed over phases and chain repetitions.
    pub fn total_traffic(&self) -> Traffic {
        let mut t = Traffic::default();
        for p in self.phases() {
            let n = p.chain_length();
            t.l1_bytes += n * p.traffic.l1_bytes;
            t.llc_bytes += n * p.traffic.llc_bytes;
            t.dram_read_bytes += n * p.traffic.dram_read_bytes;
            t.dram_write_bytes += n * p.traffic.dram_write_bytes;
        }
        t
    }

    /// One-line summary for decomposition dumps.
    pub fn summary(&self) -> String {
        let k = &self.microkernel;
        format!(
            "{}: {} chunks x{} splits, {:?} tm={} tn={} loads/k={} fmas/k={}, eff {:.3}, llc {} B, dram r/w {}/{} B{}",
            self.label,
            self.chunk_count,
            self.reduction_splits,
            k.vectorized_dim,
            k.tm,
            k.tn,
            k.loads_per_kstep,
            k.fmas_per_kstep,
            self.simd_efficiency,
            self.traffic.llc_bytes,
            self.traffic.dram_read_bytes,
            self.traffic.dram_write_bytes,
            if self.padded_fetch { " [padded B fetch]" } else { "" }
        )
    }
}

/// Lowers any single node. LSTM cells are lowered one step at a time here;
/// [`map_lstm_sequence`] lowers a whole chain.
pub fn map_node(node: &OperatorNode, cfg: &MachineConfig) -> WorkDecomposition {
    match &node.op {
        OpKind::MatMul(_) => map_matmul(node, cfg),
        OpKind::Conv2d(_) => map_conv2d(node, cfg),
        OpKind::Conv2dDi(_) => map_conv2d_di(node, cfg),
        OpKind::Conv2dDw(_) => map_conv2d_dw(node, cfg),
        OpKind::Elementwise(_) | OpKind::Requantize(_) => map_elementwise(node, cfg),
        OpKind::LstmCell(_) | OpKind::LstmCellGrad(_) => map_lstm_sequence(&[node], cfg)
            .expect("a one-cell chain is never empty"),
    }
}

/// Structured dump of every node's decomposition.
pub fn dump(trace: &crate::workload::Trace, cfg: &MachineConfig) -> Vec<(String, WorkDecomposition)> {
    trace
        .nodes()
        .iter()
        .map(|n| (n.id.clone(), map_node(n, cfg)))
        .collect()
}

pub(crate) fn ratio(ideal: u64, padded: u64) -> f64 {
    if padded == 0 {
        1.0
    } else {
        (ideal as f64 / padded as f64).min(1.0)
    }
}
