//! Component-level area and power.
//!
//! Area sums per-tile blocks, the LLC, the mesh routers and the memory PHYs.
//! Energy is activity times per-event cost (MACs, register, L1, LLC, mesh and
//! DRAM bytes) plus time-proportional core, leakage and HBM power.

mod coefficients;
mod scaling;

use serde::{Deserialize, Serialize};

pub use coefficients::{
    AreaTerms, DtypeRatio, DtypeRatios, EnergyCoefficients, EnergyTerms, VfPoint, COEFFICIENTS_VERSION,
};
pub use scaling::{scale_frequency, scale_technology, NodeFactors, ScaleKind, TechTable};

use crate::arch::{macs_per_lane, peak_ops, MachineConfig};
use crate::error::{Error, Result};
use crate::perf::RunReport;
use crate::scalar::Real;
use crate::workload::DataType;

const PJ: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaBreakdown<T> {
    /// All tiles: core, SIMD lanes, register file and L1.
    pub tiles_mm2: T,
    pub llc_mm2: T,
    pub noc_mm2: T,
    pub phy_mm2: T,
    pub total_mm2: T,
}

/// Energy of a run by component, in joules.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyBreakdown<T> {
    pub mac_j: T,
    pub vrf_j: T,
    pub l1_j: T,
    pub llc_j: T,
    pub noc_j: T,
    pub dram_j: T,
    pub core_j: T,
    pub static_j: T,
}

impl<T: Real> EnergyBreakdown<T> {
    pub fn total(&self) -> T {
        self.mac_j + self.vrf_j + self.l1_j + self.llc_j + self.noc_j + self.dram_j + self.core_j + self.static_j
    }

    pub fn dynamic(&self) -> T {
        self.total() - self.static_j
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAreaReport<T> {
    pub area: AreaBreakdown<T>,
    pub area_mm2: T,
    pub tdp_w: T,
    pub static_w: T,
    pub avg_power_w: T,
    pub energy: EnergyBreakdown<T>,
    pub total_energy_j: T,
    pub pj_per_op: T,
    pub tops_per_mm2: T,
}

fn check_node(coeffs: &EnergyCoefficients) -> Result<()> {
    if TechTable::default().contains(&coeffs.node) {
        Ok(())
    } else {
        Err(Error::UnknownNode(coeffs.node.clone()))
    }
}

pub fn estimate_area<T: Real>(cfg: &MachineConfig, coeffs: &EnergyCoefficients) -> Result<AreaBreakdown<T>> {
    check_node(coeffs)?;
    let a = &coeffs.area;
    let kib = |bytes: u64| bytes as f64 / 1024.0;
    let lanes = f64::from(cfg.lanes_per_tile());
    let vrf_kib = kib(u64::from(cfg.vrf_regs) * cfg.vector_bytes());
    // a lane holds one FP16 multiplier that also serves two Int8 MACs
    let lane_mm2 = a.int8_mac_mm2 * coeffs.dtype_ratio.fp16.area;
    let tile = a.core_mm2 + lanes * lane_mm2 + vrf_kib * a.vrf_mm2_per_kib + kib(cfg.l1_bytes) * a.l1_mm2_per_kib;
    let tiles = cfg.tiles as f64;
    let b = AreaBreakdown {
        tiles_mm2: T::of(tile * tiles),
        llc_mm2: T::of(cfg.llc_bytes as f64 / (1024.0 * 1024.0) * a.llc_mm2_per_mib),
        noc_mm2: T::of(a.router_mm2 * tiles),
        phy_mm2: T::of(f64::from(cfg.hbm_stacks) * a.phy_mm2_per_stack),
        total_mm2: T::zero(),
    };
    Ok(AreaBreakdown {
        total_mm2: b.tiles_mm2 + b.llc_mm2 + b.noc_mm2 + b.phy_mm2,
        ..b
    })
}

/// Mean hop count on the square mesh: half its diameter.
pub fn mean_hops(tiles: u64) -> f64 {
    let side = (tiles as f64).sqrt().ceil();
    (side - 1.0).max(0.0)
}

/// Coefficients valid at the configuration's clock.
fn at_clock(cfg: &MachineConfig, coeffs: &EnergyCoefficients) -> Result<EnergyCoefficients> {
    check_node(coeffs)?;
    scale_frequency(coeffs, coeffs.ref_freq_hz, cfg.freq_hz)
}

pub fn static_power(cfg: &MachineConfig, coeffs: &EnergyCoefficients) -> f64 {
    cfg.tiles as f64 * coeffs.energy.tile_leakage_w + f64::from(cfg.hbm_stacks) * coeffs.energy.hbm_w_per_stack
}

/// Activity counts that energy is charged against.
struct Activity {
    /// MACs by datatype, SIMD padding included.
    macs: [(DataType, f64); 3],
    vector_instrs: f64,
    l1_bytes: f64,
    llc_bytes: f64,
    dram_bytes: f64,
    seconds: f64,
}

fn energy<T: Real>(cfg: &MachineConfig, c: &EnergyCoefficients, act: &Activity) -> EnergyBreakdown<T> {
    let e = &c.energy;
    let vrf_bytes = act.l1_bytes + act.vector_instrs * 4.0 * cfg.vector_bytes() as f64;
    let mesh_bytes = act.llc_bytes + act.dram_bytes;
    EnergyBreakdown {
        mac_j: T::of(act.macs.iter().map(|&(d, n)| n * c.mac_pj(d)).sum::<f64>() * PJ),
        vrf_j: T::of(vrf_bytes * e.vrf_pj_per_byte * PJ),
        l1_j: T::of(act.l1_bytes * e.l1_pj_per_byte * PJ),
        llc_j: T::of(act.llc_bytes * e.llc_pj_per_byte * PJ),
        noc_j: T::of(mesh_bytes * mean_hops(cfg.tiles) * e.noc_pj_per_byte_hop * PJ),
        dram_j: T::of(act.dram_bytes * e.dram_pj_per_byte * PJ),
        core_j: T::of(cfg.tiles as f64 * e.tile_core_dynamic_w * act.seconds),
        static_j: T::of(static_power(cfg, c) * act.seconds),
    }
}

/// Power with every port saturated and every lane issuing an Int8 FMA each
/// cycle.
pub fn tdp<T: Real>(cfg: &MachineConfig, coeffs: &EnergyCoefficients) -> Result<T> {
    let c = at_clock(cfg, coeffs)?;
    let cycles = cfg.tiles as f64 * cfg.freq_hz * cfg.compute_scale;
    let bw = cfg.effective_mem_bw();
    let act = Activity {
        macs: [
            (DataType::Int8, peak_ops(cfg, DataType::Int8) * cfg.compute_scale / 2.0),
            (DataType::Fp16, 0.0),
            (DataType::Fp32, 0.0),
        ],
        vector_instrs: cycles,
        l1_bytes: cycles * cfg.l1_fill_bytes_per_cycle_per_tile,
        llc_bytes: cycles * cfg.llc_fill_bytes_per_cycle_per_tile,
        dram_bytes: if bw.is_finite() { bw } else { 0.0 },
        seconds: 1.0,
    };
    Ok(energy::<T>(cfg, &c, &act).total())
}

/// Average power, energy and efficiency of a simulated run.
pub fn estimate_power<T: Real>(
    cfg: &MachineConfig,
    run: &RunReport<T>,
    coeffs: &EnergyCoefficients,
) -> Result<PowerAreaReport<T>> {
    let c = at_clock(cfg, coeffs)?;
    let mut macs = [(DataType::Int8, 0.0), (DataType::Fp16, 0.0), (DataType::Fp32, 0.0)];
    let mut vector_instrs = 0.0;
    for o in &run.operators {
        let eff = o.simd_efficiency.as_f64();
        let padded = if eff > 0.0 { o.achieved_ops as f64 / eff } else { o.achieved_ops as f64 };
        let slot = macs.iter_mut().find(|(d, _)| *d == o.dtype).expect("every dtype has a slot");
        slot.1 += padded / 2.0;
        let ops_per_instr = 2.0 * f64::from(cfg.lanes_per_tile()) * macs_per_lane(o.dtype);
        vector_instrs += padded / ops_per_instr;
    }
    let seconds = run.total_time_s.as_f64();
    let act = Activity {
        macs,
        vector_instrs,
        l1_bytes: run.l1_bytes as f64,
        llc_bytes: run.llc_bytes as f64,
        dram_bytes: run.dram_bytes() as f64,
        seconds,
    };
    let energy = energy::<T>(cfg, &c, &act);
    let area = estimate_area::<T>(cfg, coeffs)?;
    let total = energy.total();
    let time = run.total_time_s;
    let static_w = T::of(static_power(cfg, &c));
    let avg = if time > T::zero() { total / time } else { static_w };
    let ops = T::count(run.total_ops);
    Ok(PowerAreaReport {
        area_mm2: area.total_mm2,
        area,
        tdp_w: tdp(cfg, coeffs)?,
        static_w,
        avg_power_w: avg,
        energy,
        total_energy_j: total,
        pj_per_op: if run.total_ops > 0 { total / ops / T::of(PJ) } else { T::zero() },
        tops_per_mm2: if time > T::zero() {
            ops / time / T::of(1e12) / area.total_mm2
        } else {
            T::zero()
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perf::simulate;
    use crate::workload::{zoo, Mode, Trace};

    #[test]
    fn base_lands_on_its_area_and_power_targets() {
        let cfg = MachineConfig::base();
        let c = EnergyCoefficients::default();
        let area = estimate_area::<f64>(&cfg, &c).unwrap().total_mm2;
        assert!((area / 141.0 - 1.0).abs() <= 0.15, "{area}");
        let w = tdp::<f64>(&cfg, &c).unwrap();
        assert!((w / 130.0 - 1.0).abs() <= 0.15, "{w}");
        let floor = w / peak_ops(&cfg, DataType::Int8) / PJ;
        assert!((floor / 0.25 - 1.0).abs() <= 0.2, "{floor}");
    }

    #[test]
    fn tile_term_is_linear_and_vanishes() {
        let c = EnergyCoefficients::default();
        let base = MachineConfig::base();
        let a = estimate_area::<f64>(&base, &c).unwrap();
        let doubled = estimate_area::<f64>(&MachineConfig { tiles: 4096, ..base.clone() }, &c).unwrap();
        assert_eq!(doubled.tiles_mm2, 2.0 * a.tiles_mm2);
        let none = estimate_area::<f64>(&MachineConfig { tiles: 0, ..base }, &c).unwrap();
        assert_eq!(none.total_mm2, none.llc_mm2 + none.phy_mm2);
    }

    #[test]
    fn empty_run_draws_static_power() {
        let cfg = MachineConfig::base();
        let c = EnergyCoefficients::default();
        let run = simulate::<f64>(&Trace::empty("e", Mode::Inference, 1), &cfg);
        let r = estimate_power(&cfg, &run, &c).unwrap();
        assert_eq!(r.avg_power_w, static_power(&cfg, &c));
        assert_eq!(r.total_energy_j, 0.0);
    }

    #[test]
    fn run_power_closes_and_stays_under_tdp() {
        let cfg = MachineConfig::base();
        let c = EnergyCoefficients::default();
        for (m, mode) in [("resnet50", Mode::Inference), ("bert_base_128", Mode::Training)] {
            let run = simulate::<f64>(&zoo::build(m, mode, 4).unwrap(), &cfg);
            let r = estimate_power(&cfg, &run, &c).unwrap();
            assert!(r.avg_power_w <= r.tdp_w, "{m}: {} > {}", r.avg_power_w, r.tdp_w);
            assert!(r.avg_power_w > r.static_w);
            let closure = r.avg_power_w * run.total_time_s;
            assert!((closure - r.energy.total()).abs() <= 1e-12 * r.energy.total());
            let pj = r.avg_power_w * run.total_time_s / run.total_ops as f64 / PJ;
            assert!((pj - r.pj_per_op).abs() <= 1e-9 * pj);
        }
    }

    #[test]
    fn unknown_node_fails() {
        let c = EnergyCoefficients {
            node: "2nm".into(),
            ..Default::default()
        };
        assert!(matches!(estimate_area::<f64>(&MachineConfig::base(), &c), Err(Error::UnknownNode(_))));
    }

    #[test]
    fn slower_clock_lowers_dynamic_power() {
        let c = EnergyCoefficients::default();
        let fast = tdp::<f64>(&MachineConfig::base(), &c).unwrap();
        let slow = tdp::<f64>(&MachineConfig { freq_hz: 1e9, ..MachineConfig::base() }, &c).unwrap();
        let s = static_power(&MachineConfig::base(), &c);
        assert!((slow - s) < 0.5 * (fast - s));
    }
}
