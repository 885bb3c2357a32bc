//! Register-blocked microkernels.

use serde::{Deserialize, Serialize};

use crate::arch::MachineConfig;
use crate::workload::DataType;

/// Registers kept free for load staging.
pub const SCRATCH_REGS: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VectorizedDim {
    /// Output rows, one accumulator lane per row.
    M,
    /// Reduction dimension; every output ends with a horizontal add.
    K,
    /// Channel block of a convolution.
    Channel,
}

/// The register-resident inner loop computing one output tile.
///
/// A k-step issues `fmas_per_kstep` wide-accumulate FMAs, each consuming `tk`
/// reduction elements per lane (the accumulator-to-input width ratio).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Microkernel {
    pub vectorized_dim: VectorizedDim,
    pub tm: u32,
    pub tn: u32,
    pub tk: u32,
    pub acc_regs: u32,
    pub operand_regs: u32,
    pub loads_per_kstep: u32,
    pub fmas_per_kstep: u32,
    pub needs_reduction: bool,
}

impl Microkernel {
    /// Kernel vectorized along M. One strided load fills up to `r` A
    /// registers (the accumulate ratio); B is packed in `r`-element groups
    /// along K, so a line-granular multi-broadcast fills every B register.
    pub fn m_vectorized(tm: u32, tn: u32, cfg: &MachineConfig, dtype: DataType) -> Self {
        let r = dtype.accumulate_ratio();
        let b_lines = (u64::from(tn) * dtype.accumulator_bytes()).div_ceil(cfg.line_bytes) as u32;
        Self {
            vectorized_dim: VectorizedDim::M,
            tm,
            tn,
            tk: r,
            acc_regs: tm * tn,
            operand_regs: tm + tn,
            loads_per_kstep: tm.div_ceil(r) + b_lines,
            fmas_per_kstep: tm * tn,
            needs_reduction: false,
        }
    }

    /// Kernel vectorized along K for a single output row: one vector of A is
    /// shared by `tn` full-vector loads of B columns.
    pub fn k_vectorized(tn: u32, dtype: DataType) -> Self {
        Self {
            vectorized_dim: VectorizedDim::K,
            tm: 1,
            tn,
            tk: dtype.accumulate_ratio(),
            acc_regs: tn,
            operand_regs: 1 + tn,
            loads_per_kstep: 1 + tn,
            fmas_per_kstep: tn,
            needs_reduction: true,
        }
    }

    pub fn regs_used(&self) -> u32 {
        self.acc_regs + self.operand_regs + SCRATCH_REGS
    }

    pub fn fits(&self, vrf_regs: u32) -> bool {
        self.regs_used() <= vrf_regs
    }

    /// Whether memory issue can hide behind the FMA stream.
    pub fn memory_hidden(&self) -> bool {
        self.loads_per_kstep <= self.fmas_per_kstep
    }

    /// Issue cycles of one k-step under the one-ALU-plus-one-memory rule.
    pub fn kstep_cycles(&self) -> u32 {
        self.fmas_per_kstep.max(self.loads_per_kstep)
    }
}

/// Every register-feasible `(tm, tn)` for the shape, with `tm` limited to the
/// vector blocks of M and `tn` to N.
pub fn feasible_tiles(m: u64, n: u64, cfg: &MachineConfig) -> Vec<(u32, u32)> {
    let v = cfg.vector_elems();
    let budget = cfg.vrf_regs.saturating_sub(SCRATCH_REGS);
    let tm_max = m.div_ceil(v).min(u64::from(budget)) as u32;
    let tn_max = n.min(u64::from(budget)) as u32;
    let mut out = Vec::new();
    for tm in 1..=tm_max {
        for tn in 1..=tn_max {
            if tm * tn + tm + tn <= budget {
                out.push((tm, tn));
            }
        }
    }
    out
}

/// Register-maximal microkernel for `C[M,N] += A[M,K]·B[K,N]`.
///
/// M is vectorized when it spans at least one vector; a single-row product
/// vectorizes the reduction instead. Among feasible tiles the largest
/// `tm·tn` wins, then `tm` divisible by the accumulate ratio, then larger `tm`.
pub fn select_matmul_tiling(m: u64, n: u64, k: u64, cfg: &MachineConfig, dtype: DataType) -> Microkernel {
    assert!(m >= 1 && n >= 1 && k >= 1, "degenerate product {m}x{n}x{k}");
    assert!(cfg.vrf_regs >= 8, "register file too small for any tile");
    if m == 1 {
        let budget = cfg.vrf_regs - SCRATCH_REGS;
        let tn = ((budget - 1) / 2).min(n.min(u64::from(budget)) as u32).max(1);
        return Microkernel::k_vectorized(tn, dtype);
    }
    let (tm, tn) = best_tile(&feasible_tiles(m, n, cfg), dtype.accumulate_ratio());
    Microkernel::m_vectorized(tm, tn, cfg, dtype)
}

pub(crate) fn best_tile(tiles: &[(u32, u32)], r: u32) -> (u32, u32) {
    *tiles
        .iter()
        .max_by_key(|&&(tm, tn)| (tm * tn, tm % r == 0, tm))
        .expect("a 1x1 tile always fits")
}
