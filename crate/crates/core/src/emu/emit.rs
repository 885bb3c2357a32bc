//! Straight-line code generation for matrix-product microkernels.

use half::f16;

use super::{execute, IssueStats, Reg, VInstruction, LANE};
use crate::arch::MachineConfig;
use crate::mapping::{Microkernel, VectorizedDim};
use crate::workload::DataType;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    /// Store the 32-bit accumulators unchanged.
    Accumulator,
    /// Int8 only: shift, round and saturate before a byte store.
    Requantize { shift: u8 },
}

/// Row-major operands of `C[m,n] = A[m,k]·B[k,n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatMulData {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

/// An emitted kernel together with the memory layout it expects.
#[derive(Debug, Clone)]
pub struct KernelProgram {
    pub instrs: Vec<VInstruction>,
    pub microkernel: Microkernel,
    pub dtype: DataType,
    pub format: OutputFormat,
    pub m: usize,
    pub n: usize,
    pub k: usize,
    /// Reduction length after zero padding.
    pub k_padded: usize,
    pub a_addr: usize,
    pub b_addr: usize,
    pub c_addr: usize,
    pub mem_bytes: usize,
    lanes: usize,
}

impl KernelProgram {
    fn in_bytes(&self) -> usize {
        self.dtype.input_bytes() as usize
    }

    fn out_bytes(&self) -> usize {
        match self.format {
            OutputFormat::Requantize { .. } => 1,
            OutputFormat::Accumulator => LANE,
        }
    }

    fn group(&self) -> usize {
        self.microkernel.tk as usize
    }

    fn put(&self, mem: &mut [u8], at: usize, x: f64) {
        match self.dtype {
            DataType::Int8 => mem[at] = (x.round().clamp(-128.0, 127.0) as i8) as u8,
            _ => mem[at..at + 2].copy_from_slice(&f16::from_f64(x).to_le_bytes()),
        }
    }

    /// Lays the operands out as the program expects.
    pub fn pack(&self, a: &[f64], b: &[f64]) -> Vec<u8> {
        let mut mem = vec![0u8; self.mem_bytes];
        let inb = self.in_bytes();
        let lda = self.k_padded * inb;
        for i in 0..self.m {
            for t in 0..self.k {
                self.put(&mut mem, self.a_addr + i * lda + t * inb, a[i * self.k + t]);
            }
        }
        let r = self.group();
        for t in 0..self.k {
            for j in 0..self.n {
                let at = match self.microkernel.vectorized_dim {
                    // k-groups of r per column, columns contiguous
                    VectorizedDim::M => self.b_addr + ((t / r) * self.n + j) * r * inb + (t % r) * inb,
                    // columns stored as rows
                    _ => self.b_addr + j * lda + t * inb,
                };
                self.put(&mut mem, at, b[t * self.n + j]);
            }
        }
        mem
    }

    /// Reads `C` back from a final memory image.
    pub fn unpack(&self, mem: &[u8]) -> Vec<f64> {
        let ob = self.out_bytes();
        (0..self.m * self.n)
            .map(|e| {
                let at = self.c_addr + e * ob;
                match (self.format, self.dtype) {
                    (OutputFormat::Requantize { .. }, _) => f64::from(mem[at] as i8),
                    (_, DataType::Int8) => f64::from(i32::from_le_bytes(mem[at..at + 4].try_into().unwrap())),
                    _ => f64::from(f32::from_le_bytes(mem[at..at + 4].try_into().unwrap())),
                }
            })
            .collect()
    }

    pub fn census(&self) -> IssueStats {
        IssueStats::census(&self.instrs)
    }

    pub fn vector_lanes(&self) -> usize {
        self.lanes
    }
}

fn fma(dtype: DataType, acc: Reg, a: Reg, b: Reg) -> VInstruction {
    match dtype {
        DataType::Int8 => VInstruction::VfmaI8I32 { acc, a, b },
        _ => VInstruction::VfmaF16F32 { acc, a, b },
    }
}

/// Emits a complete product `C[m,n] = A[m,k]·B[k,n]` built from `mk` tiles.
/// Edge tiles shrink to the remaining rows and columns.
pub fn emit_matmul_kernel(
    mk: Microkernel,
    shape: (usize, usize, usize),
    dtype: DataType,
    format: OutputFormat,
    cfg: &MachineConfig,
) -> Result<KernelProgram> {
    let (m, n, k) = shape;
    if !mk.fits(cfg.vrf_regs) {
        return Err(Error::InfeasibleTiling(format!(
            "{}x{} tile needs {} of {} registers",
            mk.tm,
            mk.tn,
            mk.regs_used(),
            cfg.vrf_regs
        )));
    }
    if dtype == DataType::Fp32 {
        return Err(Error::Unsupported("FP32 kernels have no wide-accumulate FMA".into()));
    }
    if mk.tk != dtype.accumulate_ratio() || mk.tm == 0 || mk.tn == 0 {
        return Err(Error::InfeasibleTiling(format!("kernel {mk:?} does not match {dtype:?}")));
    }
    if matches!(format, OutputFormat::Requantize { .. }) && dtype != DataType::Int8 {
        return Err(Error::Unsupported("requantized output of a float kernel".into()));
    }
    if m == 0 || n == 0 || k == 0 {
        return Err(Error::InfeasibleTiling(format!("degenerate product {m}x{n}x{k}")));
    }
    let lanes = (cfg.vector_bytes() as usize) / LANE;
    let r = mk.tk as usize;
    let inb = dtype.input_bytes() as usize;
    let vdim = mk.vectorized_dim;
    let (rows_padded, k_padded) = match vdim {
        VectorizedDim::M => (m.div_ceil(lanes) * lanes, k.div_ceil(r) * r),
        _ => (m, k.div_ceil(lanes * r) * lanes * r),
    };
    let a_bytes = rows_padded * k_padded * inb;
    let b_bytes = k_padded * n * inb;
    let mut prog = KernelProgram {
        instrs: Vec::new(),
        microkernel: mk,
        dtype,
        format,
        m,
        n,
        k,
        k_padded,
        a_addr: 0,
        b_addr: a_bytes,
        c_addr: a_bytes + b_bytes,
        mem_bytes: 0,
        lanes,
    };
    prog.mem_bytes = prog.c_addr + m * n * prog.out_bytes();
    prog.instrs = match vdim {
        VectorizedDim::M => emit_m(&prog, cfg),
        _ => emit_k(&prog),
    };
    Ok(prog)
}

fn epilogue(p: &KernelProgram, out: &mut Vec<VInstruction>, acc: Reg, addr: usize, stride: usize, lanes: usize) {
    if let OutputFormat::Requantize { shift } = p.format {
        out.push(VInstruction::Vrequantize { dst: acc, src: acc, shift });
    }
    out.push(VInstruction::Vstore {
        src: acc,
        addr,
        stride,
        elem_bytes: p.out_bytes() as u8,
        lanes: lanes as u16,
    });
}

fn emit_m(p: &KernelProgram, cfg: &MachineConfig) -> Vec<VInstruction> {
    let mk = p.microkernel;
    let (tm, tn) = (mk.tm as usize, mk.tn as usize);
    let (v, r) = (p.lanes, p.group());
    let inb = p.in_bytes();
    let grp = r * inb;
    let lda = p.k_padded * inb;
    let per_line = (cfg.line_bytes as usize / grp).max(1);
    let ob = p.out_bytes();
    let (a_base, b_base) = ((tm * tn) as Reg, (tm * tn + tm) as Reg);
    let blocks = p.m.div_ceil(v);
    let mut out = Vec::new();
    for rb in (0..blocks).step_by(tm) {
        let tm_ = tm.min(blocks - rb);
        for cb in (0..p.n).step_by(tn) {
            let tn_ = tn.min(p.n - cb);
            let acc = |i: usize, j: usize| (i * tn_ + j) as Reg;
            for i in 0..tm_ * tn_ {
                out.push(VInstruction::Vzero { dst: i as Reg });
            }
            for s in 0..p.k_padded / r {
                for g in (0..tm_).step_by(r) {
                    out.push(VInstruction::VloadStrided {
                        dst: a_base + g as Reg,
                        count: r.min(tm_ - g) as u16,
                        addr: p.a_addr + (rb + g) * v * lda + s * grp,
                        stride: lda,
                    });
                }
                for j in (0..tn_).step_by(per_line) {
                    out.push(VInstruction::VloadMultibroadcast {
                        dst: b_base + j as Reg,
                        count: per_line.min(tn_ - j) as u16,
                        addr: p.b_addr + (s * p.n + cb + j) * grp,
                    });
                }
                for i in 0..tm_ {
                    for j in 0..tn_ {
                        out.push(fma(p.dtype, acc(i, j), a_base + i as Reg, b_base + j as Reg));
                    }
                }
            }
            for i in 0..tm_ {
                let row = (rb + i) * v;
                for j in 0..tn_ {
                    let addr = p.c_addr + (row * p.n + cb + j) * ob;
                    epilogue(p, &mut out, acc(i, j), addr, p.n * ob, v.min(p.m - row));
                }
            }
        }
    }
    out
}

fn emit_k(p: &KernelProgram) -> Vec<VInstruction> {
    let tn = p.microkernel.tn as usize;
    let inb = p.in_bytes();
    let step = p.lanes * p.group() * inb;
    let lda = p.k_padded * inb;
    let ob = p.out_bytes();
    let float = p.dtype != DataType::Int8;
    let a_reg = tn as Reg;
    let mut out = Vec::new();
    for i in 0..p.m {
        for cb in (0..p.n).step_by(tn) {
            let tn_ = tn.min(p.n - cb);
            for j in 0..tn_ {
                out.push(VInstruction::Vzero { dst: j as Reg });
            }
            for s in 0..p.k_padded * inb / step {
                out.push(VInstruction::Vload {
                    dst: a_reg,
                    addr: p.a_addr + i * lda + s * step,
                });
                for j in 0..tn_ {
                    out.push(VInstruction::Vload {
                        dst: a_reg + 1 + j as Reg,
                        addr: p.b_addr + (cb + j) * lda + s * step,
                    });
                }
                for j in 0..tn_ {
                    out.push(fma(p.dtype, j as Reg, a_reg, a_reg + 1 + j as Reg));
                }
            }
            for j in 0..tn_ {
                out.push(VInstruction::VreduceAdd {
                    dst: j as Reg,
                    src: j as Reg,
                    float,
                });
                epilogue(p, &mut out, j as Reg, p.c_addr + (i * p.n + cb + j) * ob, ob, 1);
            }
        }
    }
    out
}

/// Packs, runs and unpacks a product.
pub fn run_matmul(prog: &KernelProgram, data: &MatMulData, cfg: &MachineConfig) -> Result<(Vec<f64>, IssueStats)> {
    if (data.m, data.n, data.k) != (prog.m, prog.n, prog.k) {
        return Err(Error::Emulation(format!(
            "operands {}x{}x{} do not match program {}x{}x{}",
            data.m, data.n, data.k, prog.m, prog.n, prog.k
        )));
    }
    let mem = prog.pack(&data.a, &data.b);
    let (mem, stats) = execute(&prog.instrs, mem, cfg)?;
    Ok((prog.unpack(&mem), stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emu::{reference_matmul, requantize};
    use crate::mapping::select_matmul_tiling;

    fn data(m: usize, n: usize, k: usize) -> MatMulData {
        MatMulData {
            m,
            n,
            k,
            a: (0..m * k).map(|i| ((i * 37 % 255) as f64) - 127.0).collect(),
            b: (0..k * n).map(|i| ((i * 91 % 255) as f64) - 127.0).collect(),
        }
    }

    #[test]
    fn int8_square_matches_reference() {
        let cfg = MachineConfig::base();
        let mk = select_matmul_tiling(16, 16, 16, &cfg, DataType::Int8);
        let prog = emit_matmul_kernel(mk, (16, 16, 16), DataType::Int8, OutputFormat::Accumulator, &cfg).unwrap();
        let d = data(16, 16, 16);
        let (c, _) = run_matmul(&prog, &d, &cfg).unwrap();
        assert_eq!(c, reference_matmul(16, 16, 16, &d.a, &d.b, DataType::Int8));
    }

    #[test]
    fn census_matches_declared_kernel() {
        let cfg = MachineConfig::base();
        let mk = Microkernel::m_vectorized(4, 5, &cfg, DataType::Int8);
        let prog = emit_matmul_kernel(mk, (64, 5, 64), DataType::Int8, OutputFormat::Accumulator, &cfg).unwrap();
        let fmas = prog.instrs.iter().filter(|i| i.is_fma()).count();
        let loads = prog.instrs.iter().filter(|i| i.is_load()).count();
        assert_eq!(fmas, 16 * 20);
        assert_eq!(loads, 16 * 2);
        let s = prog.census();
        assert_eq!(s.cycles, s.alu_slots.max(s.mem_slots));
    }

    #[test]
    fn single_row_ends_in_reductions() {
        let cfg = MachineConfig::base();
        let mk = select_matmul_tiling(1, 9, 200, &cfg, DataType::Int8);
        let prog = emit_matmul_kernel(mk, (1, 9, 200), DataType::Int8, OutputFormat::Requantize { shift: 6 }, &cfg).unwrap();
        let reductions = prog.instrs.iter().filter(|i| matches!(i, VInstruction::VreduceAdd { .. })).count();
        assert_eq!(reductions, 9);
        let d = data(1, 9, 200);
        let (c, _) = run_matmul(&prog, &d, &cfg).unwrap();
        let want: Vec<f64> = reference_matmul(1, 9, 200, &d.a, &d.b, DataType::Int8)
            .into_iter()
            .map(|x| f64::from(requantize(x as i32, 6)))
            .collect();
        assert_eq!(c, want);
    }

    #[test]
    fn minimal_kernel_is_load_bound() {
        let cfg = MachineConfig::base();
        let mk = Microkernel::m_vectorized(1, 1, &cfg, DataType::Int8);
        assert_eq!((mk.fmas_per_kstep, mk.loads_per_kstep), (1, 2));
        let prog = emit_matmul_kernel(mk, (16, 1, 64), DataType::Int8, OutputFormat::Accumulator, &cfg).unwrap();
        let s = prog.census();
        assert_eq!(s.cycles, s.mem_slots);
        assert!(s.mem_slots > s.alu_slots);
    }

    #[test]
    fn oversized_tile_is_rejected() {
        let cfg = MachineConfig::base();
        let mk = Microkernel::m_vectorized(5, 5, &cfg, DataType::Int8);
        let err = emit_matmul_kernel(mk, (80, 5, 8), DataType::Int8, OutputFormat::Accumulator, &cfg).unwrap_err();
        assert!(matches!(err, Error::InfeasibleTiling(_)));
    }

    #[test]
    fn zero_inputs_do_not_change_cycles() {
        let cfg = MachineConfig::base();
        let mk = select_matmul_tiling(20, 7, 30, &cfg, DataType::Fp16);
        let prog = emit_matmul_kernel(mk, (20, 7, 30), DataType::Fp16, OutputFormat::Accumulator, &cfg).unwrap();
        let zeros = MatMulData {
            m: 20,
            n: 7,
            k: 30,
            a: vec![0.0; 600],
            b: vec![0.0; 210],
        };
        let (c0, s0) = run_matmul(&prog, &zeros, &cfg).unwrap();
        let (_, s1) = run_matmul(&prog, &data(20, 7, 30), &cfg).unwrap();
        assert!(c0.iter().all(|&x| x == 0.0));
        assert_eq!(s0, s1);
    }
}
