//! Matrix products and forward convolutions.

use super::kernel::{feasible_tiles, Microkernel, VectorizedDim};
use super::{ratio, Dependency, TaskCost, Traffic, WorkDecomposition};
use crate::arch::MachineConfig;
use crate::workload::{ConvParams, DataType, MatMulParams, OpKind, OperatorNode};

/// How a task's B-operand footprint grows with its N extent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Footprint {
    /// `K × n` block.
    Dense,
    /// Sliding window: `n` output pixels along a row read
    /// `r × ((n-1)·stride + s)` input pixels of `c` channels.
    Window { r: u64, s: u64, stride: u64, c: u64 },
}

/// `C[M,N] = A[M,K]·B[K,N]`, repeated `batch` times, with A vectorized.
#[derive(Debug, Clone)]
pub(crate) struct Gemm {
    pub label: String,
    pub m: u64,
    pub n: u64,
    /// Reduction length after any channel padding.
    pub k: u64,
    pub batch: u64,
    pub b_n_contiguous: bool,
    pub footprint: Footprint,
    pub dtype: DataType,
    pub ideal_ops: u64,
    pub a_dram: u64,
    pub b_dram: u64,
    pub c_dram: u64,
    /// Index of the B operand among the node inputs, if it is one.
    pub b_input: Option<usize>,
    pub inputs: usize,
}

impl Gemm {
    fn b_bytes(&self, n: u64, kp: u64) -> u64 {
        let in_b = self.dtype.input_bytes();
        match self.footprint {
            Footprint::Dense => kp * n * in_b,
            Footprint::Window { r, s, stride, c } => r * ((n - 1) * stride + s) * c * in_b,
        }
    }
}

pub(crate) fn decompose(g: &Gemm, mk: Microkernel, cfg: &MachineConfig) -> WorkDecomposition {
    match mk.vectorized_dim {
        VectorizedDim::K => decompose_k(g, mk, cfg),
        _ => decompose_m(g, mk, cfg),
    }
}

fn decompose_m(g: &Gemm, mk: Microkernel, cfg: &MachineConfig) -> WorkDecomposition {
    let v = cfg.vector_elems();
    let r = u64::from(mk.tk);
    let (tm, tn) = (u64::from(mk.tm), u64::from(mk.tn));
    let in_b = g.dtype.input_bytes();
    let m_vec = g.m.div_ceil(v) * v;

    let mc = (tm * v).min(m_vec);
    // B laid out along N is fetched whole vectors at a time, so chunks span
    // at least one vector of N
    let (nc, fetch_n, padded_fetch) = if g.b_n_contiguous && g.n >= v {
        let nc = v.div_ceil(tn) * tn;
        (nc.min(g.n), nc.min(g.n), false)
    } else if g.b_n_contiguous {
        (g.n.min(tn), v, true)
    } else {
        (tn.min(g.n), tn.min(g.n), false)
    };
    let chunks = g.m.div_ceil(mc) * g.n.div_ceil(nc) * g.batch;
    let ksteps = g.k.div_ceil(r);
    let kp = ksteps * r;
    let tiles_per_chunk = nc.div_ceil(tn);

    let acc = u64::from(mk.acc_regs);
    let alu = tiles_per_chunk * (ksteps * u64::from(mk.fmas_per_kstep) + acc);
    let mem = tiles_per_chunk * (ksteps * u64::from(mk.loads_per_kstep) + acc);
    let a_block = mc * kp * in_b;
    let a_reads = if tiles_per_chunk > 1 && 2 * a_block > cfg.l1_bytes { tiles_per_chunk } else { 1 };
    let llc = a_block * a_reads + g.b_bytes(fetch_n, kp) + mc * nc * in_b;

    let inflation = if padded_fetch { fetch_n as f64 / g.n as f64 } else { 1.0 };
    let padded_ops = 2 * g.batch * m_vec * g.n * kp;
    finish(
        g,
        mk,
        cfg,
        chunks,
        TaskCost {
            alu_slots: alu,
            mem_slots: mem,
            llc_bytes: llc,
        },
        2 * mc * nc * kp,
        padded_ops,
        inflation,
        padded_fetch,
        g.m >= v && g.n >= 2,
    )
}

fn decompose_k(g: &Gemm, mk: Microkernel, cfg: &MachineConfig) -> WorkDecomposition {
    let v = cfg.vector_elems();
    let r = u64::from(mk.tk);
    let tn = u64::from(mk.tn);
    let in_b = g.dtype.input_bytes();
    let ksteps = g.k.div_ceil(v * r);
    let kp = ksteps * v * r;
    let chunks = g.m * g.n.div_ceil(tn) * g.batch;
    let reduce = tn * u64::from(v.ilog2());
    let alu = ksteps * tn + reduce + tn;
    let mem = ksteps * u64::from(mk.loads_per_kstep) + tn;
    let llc = kp * in_b + g.b_bytes(tn.min(g.n), kp) + tn * in_b;
    let padded_ops = 2 * g.batch * g.m * g.n * kp;
    finish(
        g,
        mk,
        cfg,
        chunks,
        TaskCost {
            alu_slots: alu,
            mem_slots: mem,
            llc_bytes: llc,
        },
        2 * tn * kp,
        padded_ops,
        1.0,
        false,
        false,
    )
}

#[allow(clippy::too_many_arguments)]
fn finish(
    g: &Gemm,
    mk: Microkernel,
    cfg: &MachineConfig,
    chunks: u64,
    task: TaskCost,
    chunk_work_ops: u64,
    padded_ops: u64,
    b_inflation: f64,
    padded_fetch: bool,
    min_tiling_met: bool,
) -> WorkDecomposition {
    let mut input_scale = vec![1.0; g.inputs];
    if let Some(i) = g.b_input {
        input_scale[i] = b_inflation;
    }
    let padded_ops = padded_ops.max(g.ideal_ops);
    WorkDecomposition {
        label: g.label.clone(),
        chunk_count: chunks,
        reduction_splits: 1,
        chunk_work_ops,
        padded_ops,
        ideal_ops: g.ideal_ops,
        microkernel: mk,
        simd_efficiency: ratio(g.ideal_ops, padded_ops),
        task,
        traffic: Traffic {
            l1_bytes: chunks * task.mem_slots * cfg.vector_bytes(),
            llc_bytes: chunks * task.llc_bytes,
            dram_read_bytes: g.a_dram + (g.b_dram as f64 * b_inflation).round() as u64,
            dram_write_bytes: g.c_dram,
        },
        input_scale,
        padded_fetch,
        min_tiling_met,
        dependency: Dependency::None,
        prologue: None,
        epilogue: None,
    }
}

/// Candidate kernels for a product: every register-feasible tile, limited to
/// tiles that hide their loads whenever the shape allows one.
pub(crate) fn candidates(g: &Gemm, cfg: &MachineConfig) -> Vec<Microkernel> {
    let budget = cfg.vrf_regs - super::SCRATCH_REGS;
    if g.m == 1 {
        let max_tn = ((budget - 1) / 2).min(g.n.min(u64::from(budget)) as u32).max(1);
        return (1..=max_tn).map(|tn| Microkernel::k_vectorized(tn, g.dtype)).collect();
    }
    let all: Vec<Microkernel> = feasible_tiles(g.m, g.n, cfg)
        .into_iter()
        .map(|(tm, tn)| Microkernel::m_vectorized(tm, tn, cfg, g.dtype))
        .collect();
    let hidden: Vec<Microkernel> = all.iter().copied().filter(Microkernel::memory_hidden).collect();
    if hidden.is_empty() {
        all
    } else {
        hidden
    }
}

/// Chooses the kernel whose decomposition finishes first. Small chunks
/// expose parallelism; among equally fast kernels the register-maximal
/// choice wins.
pub(crate) fn best(g: &Gemm, cfg: &MachineConfig) -> WorkDecomposition {
    let r = g.dtype.accumulate_ratio();
    candidates(g, cfg)
        .into_iter()
        .map(|mk| {
            let d = decompose(g, mk, cfg);
            let key = (mk.tm * mk.tn, mk.tm % r == 0, mk.tm);
            (d.core_cycles(cfg), key, d)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)))
        .map(|(_, _, d)| d)
        .expect("at least one candidate kernel")
}

fn matmul_gemm(p: &MatMulParams, dtype: DataType, inputs: usize, label: String) -> Gemm {
    let in_b = dtype.input_bytes();
    Gemm {
        label,
        m: p.m,
        n: p.n,
        k: p.k,
        batch: p.batch,
        b_n_contiguous: p.layout.b_contiguous_in_n(),
        footprint: Footprint::Dense,
        dtype,
        ideal_ops: 2 * p.batch * p.m * p.n * p.k,
        a_dram: p.batch * p.m * p.k * in_b,
        b_dram: p.batch * p.k * p.n * in_b,
        c_dram: p.batch * p.m * p.n * in_b,
        b_input: (inputs >= 2).then_some(1),
        inputs,
    }
}

/// Decomposition of a product under a given kernel, without kernel search.
pub fn decompose_matmul(p: &MatMulParams, mk: Microkernel, cfg: &MachineConfig, dtype: DataType) -> WorkDecomposition {
    let g = matmul_gemm(p, dtype, 2, format!("MatMul({},{},{})", p.m, p.n, p.k));
    decompose(&g, mk, cfg)
}

pub fn map_matmul(node: &OperatorNode, cfg: &MachineConfig) -> WorkDecomposition {
    let OpKind::MatMul(p) = &node.op else {
        panic!("map_matmul on {}", node.op.name());
    };
    let g = matmul_gemm(p, node.dtype, node.inputs.len(), node.op.shape_key());
    best(&g, cfg)
}

/// Reduction length of a convolution: channel-blocked direct form pads the
/// input channels to a vector, the repacked form folds the filter window into
/// the reduction first. The shorter padded length wins.
pub(crate) fn conv_reduction(p: &ConvParams, cfg: &MachineConfig, dtype: DataType) -> (u64, bool) {
    let v = cfg.vector_elems();
    let r = u64::from(dtype.accumulate_ratio());
    let c = p.c_per_group();
    let direct = c.div_ceil(v) * v * p.r * p.s;
    let repacked = (c * p.r * p.s).div_ceil(r) * r;
    if repacked < direct {
        (repacked, true)
    } else {
        (direct, false)
    }
}

pub fn map_conv2d(node: &OperatorNode, cfg: &MachineConfig) -> WorkDecomposition {
    let OpKind::Conv2d(p) = &node.op else {
        panic!("map_conv2d on {}", node.op.name());
    };
    if p.is_depthwise() {
        return depthwise(p, node, cfg);
    }
    let dtype = node.dtype;
    let in_b = dtype.input_bytes();
    let (k_red, _) = conv_reduction(p, cfg, dtype);
    let pixels = p.n * p.p() * p.q();
    let g = Gemm {
        label: node.op.shape_key(),
        m: p.k / p.groups,
        n: pixels,
        k: k_red,
        batch: p.groups,
        b_n_contiguous: false,
        footprint: Footprint::Window {
            r: p.r,
            s: p.s,
            stride: p.stride,
            c: p.c_per_group(),
        },
        dtype,
        ideal_ops: node.op.op_count(),
        a_dram: p.k * p.c_per_group() * p.r * p.s * in_b,
        b_dram: p.n * p.h * p.w * p.c * in_b,
        c_dram: pixels * p.k * in_b,
        b_input: None,
        inputs: node.inputs.len(),
    };
    best(&g, cfg)
}

/// Channels are independent: vectors of channels meet vectors of input
/// pixels, so every FMA needs its own input load.
fn depthwise(p: &ConvParams, node: &OperatorNode, cfg: &MachineConfig) -> WorkDecomposition {
    let dtype = node.dtype;
    let in_b = dtype.input_bytes();
    let v = cfg.vector_elems();
    let r = dtype.accumulate_ratio();
    let pixels = p.n * p.p() * p.q();
    let budget = cfg.vrf_regs - super::SCRATCH_REGS;
    let max_tn = ((budget - 1) / 2).min(pixels.min(u64::from(budget)) as u32).max(1);
    let taps = p.r * p.s;
    let ksteps = taps.div_ceil(u64::from(r));
    let c_vec = p.c.div_ceil(v) * v;
    let mut best: Option<(f64, WorkDecomposition)> = None;
    for tn in 1..=max_tn {
        let mk = Microkernel {
            vectorized_dim: VectorizedDim::Channel,
            needs_reduction: false,
            ..Microkernel::k_vectorized(tn, dtype)
        };
        let tn64 = u64::from(tn);
        let chunks = p.c.div_ceil(v) * pixels.div_ceil(tn64);
        let task = TaskCost {
            alu_slots: ksteps * tn64 + tn64,
            mem_slots: ksteps * u64::from(mk.loads_per_kstep) + tn64,
            llc_bytes: (v * taps + p.r * ((tn64 - 1) * p.stride + p.s) * v + v * tn64) * in_b,
        };
        let padded_ops = (2 * c_vec * pixels * ksteps * u64::from(r)).max(node.op.op_count());
        let d = WorkDecomposition {
            label: node.op.shape_key(),
            chunk_count: chunks,
            reduction_splits: 1,
            chunk_work_ops: 2 * v * tn64 * ksteps * u64::from(r),
            padded_ops,
            ideal_ops: node.op.op_count(),
            microkernel: mk,
            simd_efficiency: ratio(node.op.op_count(), padded_ops),
            task,
            traffic: Traffic {
                l1_bytes: chunks * task.mem_slots * cfg.vector_bytes(),
                llc_bytes: chunks * task.llc_bytes,
                dram_read_bytes: (p.n * p.h * p.w * p.c + taps * p.c) * in_b,
                dram_write_bytes: pixels * p.k * in_b,
            },
            input_scale: vec![1.0; node.inputs.len()],
            padded_fetch: false,
            min_tiling_met: false,
            dependency: Dependency::None,
            prologue: None,
            epilogue: None,
        };
        let t = d.core_cycles(cfg);
        if best.as_ref().is_none_or(|(bt, _)| t < *bt) {
            best = Some((t, d));
        }
    }
    best.expect("at least one tile").1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::select_matmul_tiling;
    use crate::workload::MatMulLayout;

    fn node(op: OpKind, dtype: DataType) -> OperatorNode {
        OperatorNode {
            id: "n".into(),
            op,
            inputs: vec!["a".into(), "b".into()],
            outputs: vec!["c".into()],
            dtype,
        }
    }

    #[test]
    fn register_max_kernel_chunk_arithmetic() {
        let cfg = MachineConfig::base();
        let mk = select_matmul_tiling(128, 768, 768, &cfg, DataType::Int8);
        let p = MatMulParams::new(128, 768, 768).with_layout(MatMulLayout::MkNk);
        let d = decompose_matmul(&p, mk, &cfg, DataType::Int8);
        assert_eq!(d.chunk_count, 308);
        assert!(d.chunk_count < cfg.tiles);
    }

    #[test]
    fn exact_fit_is_one_chunk() {
        let cfg = MachineConfig::base();
        let mk = select_matmul_tiling(64, 5, 256, &cfg, DataType::Int8);
        let p = MatMulParams::new(64, 5, 256).with_layout(MatMulLayout::MkNk);
        let d = decompose_matmul(&p, mk, &cfg, DataType::Int8);
        assert_eq!((mk.tm, mk.tn), (4, 5));
        assert_eq!(d.chunk_count, 1);
        assert_eq!(d.simd_efficiency, 1.0);
    }

    #[test]
    fn narrow_n_pads_b_fetch() {
        let cfg = MachineConfig::base();
        let n = node(OpKind::MatMul(MatMulParams::new(256, 4, 256)), DataType::Int8);
        let d = map_matmul(&n, &cfg);
        assert!(d.padded_fetch);
        assert_eq!(d.input_scale[1], 4.0);
        let plain = decompose_matmul(
            &MatMulParams::new(256, 4, 256).with_layout(MatMulLayout::MkNk),
            d.microkernel,
            &cfg,
            DataType::Int8,
        );
        assert!(d.traffic.dram_read_bytes > plain.traffic.dram_read_bytes);
    }

    #[test]
    fn search_prefers_parallel_small_tiles() {
        let cfg = MachineConfig::base();
        let n = node(OpKind::MatMul(MatMulParams::new(128, 768, 768)), DataType::Int8);
        let d = map_matmul(&n, &cfg);
        let mk = select_matmul_tiling(128, 768, 768, &cfg, DataType::Int8);
        let fixed = decompose_matmul(&MatMulParams::new(128, 768, 768), mk, &cfg, DataType::Int8);
        assert!(d.core_cycles(&cfg) <= fixed.core_cycles(&cfg));
        assert!(d.chunk_count > fixed.chunk_count);
        assert!(d.microkernel.memory_hidden());
    }

    #[test]
    fn one_by_one_conv_matches_gemm() {
        let cfg = MachineConfig::base();
        let p = ConvParams::new(1, 14, 14, 256, 1024, 1, 1, 1, 0);
        let conv = map_conv2d(&node(OpKind::Conv2d(p), DataType::Int8), &cfg);
        let mm = MatMulParams::new(1024, 196, 256).with_layout(MatMulLayout::MkNk);
        let gemm = map_matmul(&node(OpKind::MatMul(mm), DataType::Int8), &cfg);
        assert_eq!(conv.chunk_count, gemm.chunk_count);
        assert_eq!(conv.microkernel, gemm.microkernel);
        assert_eq!(conv.traffic, gemm.traffic);
        assert_eq!(conv.task, gemm.task);
    }

    #[test]
    fn first_layer_repacks() {
        let cfg = MachineConfig::base();
        let p = ConvParams::new(1, 224, 224, 3, 64, 7, 7, 2, 3);
        let (len, repacked) = conv_reduction(&p, &cfg, DataType::Int8);
        assert!(repacked);
        assert_eq!(len, 148);
        let direct_eff = 3.0 / 16.0;
        let d = map_conv2d(&node(OpKind::Conv2d(p), DataType::Int8), &cfg);
        assert!(d.simd_efficiency >= 0.9, "{}", d.simd_efficiency);
        assert!(d.simd_efficiency > direct_eff);
    }

    #[test]
    fn resnet_mid_conv_fills_the_machine() {
        let cfg = MachineConfig::base();
        let p = ConvParams::new(1, 14, 14, 256, 256, 3, 3, 1, 1);
        let d = map_conv2d(&node(OpKind::Conv2d(p), DataType::Int8), &cfg);
        assert!(d.chunk_count >= 1024, "{}", d.chunk_count);
        assert_eq!(d.simd_efficiency, 1.0);
    }

    #[test]
    fn depthwise_is_channel_vectorized() {
        let cfg = MachineConfig::base();
        let p = ConvParams::new(1, 56, 56, 128, 128, 3, 3, 1, 1).grouped(128);
        let d = map_conv2d(&node(OpKind::Conv2d(p), DataType::Int8), &cfg);
        assert_eq!(d.microkernel.vectorized_dim, VectorizedDim::Channel);
        assert!(d.simd_efficiency > 0.7);
    }
}
