//! Functional emulator for the narrow vector ISA.
//!
//! Vectors are `simd_bits` wide and split into 32-bit lanes. A wide-accumulate
//! FMA treats each lane of its operands as a packed group of narrow inputs
//! (four Int8 or two FP16) and adds their dot product into the 32-bit
//! accumulator lane. Issue follows the dual-issue contract: one ALU and one
//! memory instruction per cycle, so a straight-line program takes
//! `max(alu_slots, mem_slots)` cycles.

mod emit;
mod reference;

use half::f16;
use serde::{Deserialize, Serialize};

use crate::arch::MachineConfig;
use crate::{Error, Result};

pub use emit::{emit_matmul_kernel, run_matmul, KernelProgram, MatMulData, OutputFormat};
pub use reference::{reference_compute, reference_matmul, requantize};

pub type Reg = u16;

const LANE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum VInstruction {
    /// Contiguous full-vector load.
    Vload { dst: Reg, addr: usize },
    /// Fills `count` registers; lane `i` of register `dst + j` reads one
    /// lane-width group at `addr + (j·lanes + i)·stride`.
    VloadStrided { dst: Reg, count: u16, addr: usize, stride: usize },
    /// Reads `count` consecutive lane-width groups from one line and
    /// broadcasts each to every lane of its own register.
    VloadMultibroadcast { dst: Reg, count: u16, addr: usize },
    /// Stores the low `elem_bytes` of the first `lanes` lanes, lane `i` at
    /// `addr + i·stride`.
    Vstore { src: Reg, addr: usize, stride: usize, elem_bytes: u8, lanes: u16 },
    VfmaI8I32 { acc: Reg, a: Reg, b: Reg },
    VfmaF16F32 { acc: Reg, a: Reg, b: Reg },
    /// Lane-wise add, integer or FP32.
    Vadd { dst: Reg, a: Reg, b: Reg, float: bool },
    /// Horizontal sum into lane 0, other lanes cleared.
    VreduceAdd { dst: Reg, src: Reg, float: bool },
    /// Clears a register.
    Vzero { dst: Reg },
    /// Rounding right shift of each 32-bit lane, saturated to Int8.
    Vrequantize { dst: Reg, src: Reg, shift: u8 },
    Prefetch { addr: usize },
    BarrierHint,
}

impl VInstruction {
    pub fn is_memory(&self) -> bool {
        matches!(
            self,
            VInstruction::Vload { .. }
                | VInstruction::VloadStrided { .. }
                | VInstruction::VloadMultibroadcast { .. }
                | VInstruction::Vstore { .. }
        )
    }

    pub fn is_alu(&self) -> bool {
        matches!(
            self,
            VInstruction::VfmaI8I32 { .. }
                | VInstruction::VfmaF16F32 { .. }
                | VInstruction::Vadd { .. }
                | VInstruction::VreduceAdd { .. }
                | VInstruction::Vzero { .. }
                | VInstruction::Vrequantize { .. }
        )
    }

    pub fn is_fma(&self) -> bool {
        matches!(self, VInstruction::VfmaI8I32 { .. } | VInstruction::VfmaF16F32 { .. })
    }

    pub fn is_load(&self) -> bool {
        self.is_memory() && !matches!(self, VInstruction::Vstore { .. })
    }
}

/// Issue accounting of a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssueStats {
    pub alu_slots: u64,
    pub mem_slots: u64,
    /// Prefetches that found an idle memory slot.
    pub prefetch_slots: u64,
    pub cycles: u64,
}

impl IssueStats {
    /// Issue slots of a program without running it.
    pub fn census(instrs: &[VInstruction]) -> Self {
        let alu = instrs.iter().filter(|i| i.is_alu()).count() as u64;
        let mem = instrs.iter().filter(|i| i.is_memory()).count() as u64;
        let prefetch = instrs.iter().filter(|i| matches!(i, VInstruction::Prefetch { .. })).count() as u64;
        let prefetch_slots = prefetch.min(alu.saturating_sub(mem));
        Self {
            alu_slots: alu,
            mem_slots: mem + prefetch_slots,
            prefetch_slots,
            cycles: alu.max(mem),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmuState {
    vrf: Vec<Vec<u8>>,
    pub memory: Vec<u8>,
    lanes: usize,
    pub stats: IssueStats,
}

impl EmuState {
    pub fn new(cfg: &MachineConfig, memory: Vec<u8>) -> Self {
        let bytes = cfg.vector_bytes() as usize;
        Self {
            vrf: vec![vec![0; bytes]; cfg.vrf_regs as usize],
            memory,
            lanes: bytes / LANE,
            stats: IssueStats::default(),
        }
    }

    pub fn register(&self, r: Reg) -> &[u8] {
        &self.vrf[r as usize]
    }

    fn check_reg(&self, r: Reg, count: u16) -> Result<usize> {
        let end = r as usize + count as usize;
        if count == 0 || end > self.vrf.len() {
            return Err(Error::Emulation(format!("register v{r}+{count} beyond v{}", self.vrf.len() - 1)));
        }
        Ok(r as usize)
    }

    fn check_mem(&self, addr: usize, len: usize) -> Result<()> {
        if addr.checked_add(len).is_none_or(|end| end > self.memory.len()) {
            return Err(Error::Emulation(format!(
                "access of {len} bytes at {addr:#x} outside {}-byte image",
                self.memory.len()
            )));
        }
        Ok(())
    }

    fn lane(&self, r: usize, i: usize) -> [u8; LANE] {
        self.vrf[r][i * LANE..(i + 1) * LANE].try_into().unwrap()
    }

    fn set_lane(&mut self, r: usize, i: usize, v: [u8; LANE]) {
        self.vrf[r][i * LANE..(i + 1) * LANE].copy_from_slice(&v);
    }

    pub fn step(&mut self, ins: &VInstruction) -> Result<()> {
        let lanes = self.lanes;
        match *ins {
            VInstruction::Vload { dst, addr } => {
                let d = self.check_reg(dst, 1)?;
                let n = lanes * LANE;
                self.check_mem(addr, n)?;
                self.vrf[d].copy_from_slice(&self.memory[addr..addr + n]);
            }
            VInstruction::VloadStrided { dst, count, addr, stride } => {
                let d = self.check_reg(dst, count)?;
                for j in 0..count as usize {
                    for i in 0..lanes {
                        let a = addr + (j * lanes + i) * stride;
                        self.check_mem(a, LANE)?;
                        let v = self.memory[a..a + LANE].try_into().unwrap();
                        self.set_lane(d + j, i, v);
                    }
                }
            }
            VInstruction::VloadMultibroadcast { dst, count, addr } => {
                let d = self.check_reg(dst, count)?;
                self.check_mem(addr, count as usize * LANE)?;
                for j in 0..count as usize {
                    let a = addr + j * LANE;
                    let v: [u8; LANE] = self.memory[a..a + LANE].try_into().unwrap();
                    for i in 0..lanes {
                        self.set_lane(d + j, i, v);
                    }
                }
            }
            VInstruction::Vstore {
                src,
                addr,
                stride,
                elem_bytes,
                lanes: n,
            } => {
                let s = self.check_reg(src, 1)?;
                let eb = elem_bytes as usize;
                if eb == 0 || eb > LANE || n as usize > lanes {
                    return Err(Error::Emulation(format!("bad store shape {eb} bytes x {n} lanes")));
                }
                for i in 0..n as usize {
                    let a = addr + i * stride;
                    self.check_mem(a, eb)?;
                    let v = self.lane(s, i);
                    self.memory[a..a + eb].copy_from_slice(&v[..eb]);
                }
            }
            VInstruction::VfmaI8I32 { acc, a, b } => {
                let (c, a, b) = (self.check_reg(acc, 1)?, self.check_reg(a, 1)?, self.check_reg(b, 1)?);
                for i in 0..lanes {
                    let (x, y) = (self.lane(a, i), self.lane(b, i));
                    let dot: i32 = (0..LANE).map(|t| i32::from(x[t] as i8) * i32::from(y[t] as i8)).sum();
                    let s = i32::from_le_bytes(self.lane(c, i)).wrapping_add(dot);
                    self.set_lane(c, i, s.to_le_bytes());
                }
            }
            VInstruction::VfmaF16F32 { acc, a, b } => {
                let (c, a, b) = (self.check_reg(acc, 1)?, self.check_reg(a, 1)?, self.check_reg(b, 1)?);
                for i in 0..lanes {
                    let (x, y) = (self.lane(a, i), self.lane(b, i));
                    let mut s = f32::from_le_bytes(self.lane(c, i));
                    for t in 0..2 {
                        let p = f16::from_le_bytes([x[2 * t], x[2 * t + 1]]).to_f32()
                            * f16::from_le_bytes([y[2 * t], y[2 * t + 1]]).to_f32();
                        s += p;
                    }
                    self.set_lane(c, i, s.to_le_bytes());
                }
            }
            VInstruction::Vadd { dst, a, b, float } => {
                let (d, a, b) = (self.check_reg(dst, 1)?, self.check_reg(a, 1)?, self.check_reg(b, 1)?);
                for i in 0..lanes {
                    let (x, y) = (self.lane(a, i), self.lane(b, i));
                    let v = if float {
                        (f32::from_le_bytes(x) + f32::from_le_bytes(y)).to_le_bytes()
                    } else {
                        i32::from_le_bytes(x).wrapping_add(i32::from_le_bytes(y)).to_le_bytes()
                    };
                    self.set_lane(d, i, v);
                }
            }
            VInstruction::VreduceAdd { dst, src, float } => {
                let (d, s) = (self.check_reg(dst, 1)?, self.check_reg(src, 1)?);
                let v = if float {
                    (0..lanes).map(|i| f32::from_le_bytes(self.lane(s, i))).sum::<f32>().to_le_bytes()
                } else {
                    (0..lanes)
                        .fold(0i32, |acc, i| acc.wrapping_add(i32::from_le_bytes(self.lane(s, i))))
                        .to_le_bytes()
                };
                self.vrf[d].fill(0);
                self.set_lane(d, 0, v);
            }
            VInstruction::Vzero { dst } => {
                let d = self.check_reg(dst, 1)?;
                self.vrf[d].fill(0);
            }
            VInstruction::Vrequantize { dst, src, shift } => {
                let (d, s) = (self.check_reg(dst, 1)?, self.check_reg(src, 1)?);
                for i in 0..lanes {
                    let q = requantize(i32::from_le_bytes(self.lane(s, i)), shift);
                    self.set_lane(d, i, i32::from(q).to_le_bytes());
                }
            }
            VInstruction::Prefetch { addr } => self.check_mem(addr, 1)?,
            VInstruction::BarrierHint => {}
        }
        Ok(())
    }
}

/// Runs a program to completion and returns the final memory image and
/// issue accounting.
pub fn execute(instrs: &[VInstruction], memory: Vec<u8>, cfg: &MachineConfig) -> Result<(Vec<u8>, IssueStats)> {
    let mut st = EmuState::new(cfg, memory);
    for ins in instrs {
        st.step(ins)?;
    }
    st.stats = IssueStats::census(instrs);
    Ok((st.memory, st.stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> MachineConfig {
        MachineConfig::base()
    }

    #[test]
    fn int8_fma_is_four_wide_dot() {
        let mut mem = vec![0u8; 128];
        for i in 0..64 {
            mem[i] = (i % 4) as u8 + 1; // 1,2,3,4 per lane
            mem[64 + i] = (-2i8) as u8;
        }
        let prog = [
            VInstruction::Vload { dst: 0, addr: 0 },
            VInstruction::Vload { dst: 1, addr: 64 },
            VInstruction::VfmaI8I32 { acc: 2, a: 0, b: 1 },
            VInstruction::VfmaI8I32 { acc: 2, a: 0, b: 1 },
            VInstruction::Vstore {
                src: 2,
                addr: 0,
                stride: 4,
                elem_bytes: 4,
                lanes: 16,
            },
        ];
        let (mem, stats) = execute(&prog, mem, &cfg()).unwrap();
        assert_eq!(i32::from_le_bytes(mem[0..4].try_into().unwrap()), -40);
        assert_eq!(stats.alu_slots, 2);
        assert_eq!(stats.mem_slots, 3);
        assert_eq!(stats.cycles, 3);
    }

    #[test]
    fn out_of_bounds_is_a_fault() {
        let prog = [VInstruction::Vload { dst: 0, addr: 10 }];
        assert!(matches!(execute(&prog, vec![0; 64], &cfg()), Err(Error::Emulation(_))));
        let prog = [VInstruction::Vzero { dst: 32 }];
        assert!(execute(&prog, vec![0; 64], &cfg()).is_err());
    }

    #[test]
    fn prefetch_only_uses_idle_slots() {
        let mut prog = vec![VInstruction::Vzero { dst: 0 }; 3];
        prog.push(VInstruction::Vload { dst: 1, addr: 0 });
        prog.extend([VInstruction::Prefetch { addr: 0 }; 5]);
        let s = IssueStats::census(&prog);
        assert_eq!(s.prefetch_slots, 2);
        assert_eq!(s.cycles, 3);
    }

    #[test]
    fn reduce_sums_lanes() {
        let mem: Vec<u8> = (0..16i32).flat_map(|i| i.to_le_bytes()).collect();
        let prog = [
            VInstruction::Vload { dst: 3, addr: 0 },
            VInstruction::VreduceAdd { dst: 3, src: 3, float: false },
            VInstruction::Vstore {
                src: 3,
                addr: 0,
                stride: 4,
                elem_bytes: 4,
                lanes: 2,
            },
        ];
        let (mem, _) = execute(&prog, mem, &cfg()).unwrap();
        assert_eq!(i32::from_le_bytes(mem[0..4].try_into().unwrap()), 120);
        assert_eq!(i32::from_le_bytes(mem[4..8].try_into().unwrap()), 0);
    }
}
