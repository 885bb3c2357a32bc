//! Model-independent invariants over randomized inputs.

use proptest::prelude::*;
use upcycle_core::arch::MachineConfig;
use upcycle_core::dse::{pareto, sensitivity_core, sweep, SweepSpec, TraceSource};
use upcycle_core::emu::{emit_matmul_kernel, reference_matmul, run_matmul, MatMulData, OutputFormat};
use upcycle_core::mapping::select_matmul_tiling;
use upcycle_core::perf::{simulate, LlcState};
use upcycle_core::powerarea::{estimate_power, EnergyCoefficients};
use upcycle_core::workload::{DataType, ElementwiseParams, MatMulParams, Mode, OpKind, TensorRole, Trace, TraceBuilder};

/// A chain of products with activations between them.
fn chain(k0: u64, widths: &[u64], batch: u64, dtype: DataType) -> Trace {
    let mut b = TraceBuilder::new("chain", Mode::Inference, batch);
    let m = 8 * batch;
    let mut x = b.tensor(&[m, k0], "MK", dtype, TensorRole::Input);
    let mut k = k0;
    for &n in widths {
        let w = b.weight(&[k, n], "KN", dtype);
        let y = b.activation(&[m, n], "MN", dtype);
        b.node(OpKind::MatMul(MatMulParams::new(m, n, k)), &[&x, &w], &[&y], dtype);
        let z = b.activation(&[m, n], "MN", dtype);
        b.node(OpKind::Elementwise(ElementwiseParams::new("Relu", m * n, 1)), &[&y], &[&z], dtype);
        x = z;
        k = n;
    }
    b.build().unwrap()
}

fn trace_strategy() -> impl Strategy<Value = Trace> {
    (
        16u64..2048,
        prop::collection::vec(16u64..2048, 1..4),
        prop::sample::select(vec![1u64, 4, 16]),
        prop::sample::select(vec![DataType::Int8, DataType::Fp16]),
    )
        .prop_map(|(k0, widths, batch, dtype)| chain(k0, &widths, batch, dtype))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn time_never_rises_with_bandwidth_or_clock(t in trace_strategy()) {
        let base = MachineConfig::base();
        let time = |c: &MachineConfig| simulate::<f64>(&t, c).total_time_s;
        let mut last = f64::INFINITY;
        for bw in [50e9, 200e9, 900e9, 4e12, f64::INFINITY] {
            let x = time(&MachineConfig { mem_bw_bytes_per_s: bw, ..base.clone() });
            prop_assert!(x <= last, "bandwidth {bw}: {x} > {last}");
            last = x;
        }
        last = f64::INFINITY;
        for f in [0.5e9, 1e9, 2e9, 3e9] {
            let x = time(&MachineConfig { freq_hz: f, ..base.clone() });
            prop_assert!(x <= last, "clock {f}: {x} > {last}");
            last = x;
        }
    }

    #[test]
    fn time_never_rises_with_tiles(t in trace_strategy()) {
        let base = MachineConfig::base();
        let mut last = f64::INFINITY;
        for tiles in [64, 256, 1024, 2048, 4096] {
            let x = simulate::<f64>(&t, &MachineConfig { tiles, ..base.clone() }).total_time_s;
            prop_assert!(x <= last, "tiles {tiles}: {x} > {last}");
            last = x;
        }
    }

    #[test]
    fn utilization_bounded_and_runs_repeat_exactly(t in trace_strategy()) {
        let cfg = MachineConfig::base();
        let r = simulate::<f64>(&t, &cfg);
        prop_assert!(r.utilization > 0.0 && r.utilization <= 1.0);
        for o in &r.operators {
            prop_assert!(o.utilization >= 0.0 && o.utilization <= 1.0);
        }
        prop_assert_eq!(&r, &simulate::<f64>(&t, &cfg));
    }

    #[test]
    fn energy_components_close(t in trace_strategy()) {
        let cfg = MachineConfig::base();
        let r = simulate::<f64>(&t, &cfg);
        let p = estimate_power(&cfg, &r, &EnergyCoefficients::default()).unwrap();
        let e = &p.energy;
        let sum = e.mac_j + e.vrf_j + e.l1_j + e.llc_j + e.noc_j + e.dram_j + e.core_j + e.static_j;
        prop_assert_eq!(sum, p.total_energy_j);
        prop_assert!(p.avg_power_w >= p.static_w);
        prop_assert!(p.avg_power_w <= p.tdp_w, "{} W above TDP {} W", p.avg_power_w, p.tdp_w);
    }

    #[test]
    fn core_speedup_bounded_and_monotone(t in trace_strategy()) {
        let cfg = MachineConfig::base();
        let s = sensitivity_core::<f64>(&t, &cfg, &[1.0, 2.0, 10.0, 100.0]).unwrap();
        prop_assert_eq!(s[0].1, 1.0);
        for w in s.windows(2) {
            prop_assert!(w[1].1 >= w[0].1);
        }
        for (m, x) in s {
            prop_assert!(x <= m * (1.0 + 1e-12), "{x} above multiplier {m}");
        }
    }

    #[test]
    fn pareto_front_is_exactly_the_undominated_set(
        pts in prop::collection::vec((0u8..10, 0u8..10), 1..60)
    ) {
        let pts: Vec<(f64, f64)> = pts.into_iter().map(|(a, b)| (f64::from(a), f64::from(b))).collect();
        let front = pareto(&pts);
        prop_assert!(!front.is_empty());
        prop_assert!(front.windows(2).all(|w| w[0] < w[1]));
        for (i, p) in pts.iter().enumerate() {
            let dominated = pts.iter().any(|q| q.0 >= p.0 && q.1 <= p.1 && (q.0 > p.0 || q.1 < p.1));
            prop_assert_eq!(front.contains(&i), !dominated, "point {}", i);
        }
    }

    #[test]
    fn int8_kernels_match_the_reference(
        m in 1usize..=64, n in 1usize..=64, k in 1usize..=64, seed in any::<u64>()
    ) {
        let cfg = MachineConfig::base();
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            f64::from((s >> 56) as u8 as i8)
        };
        let a: Vec<f64> = (0..m * k).map(|_| next()).collect();
        let b: Vec<f64> = (0..k * n).map(|_| next()).collect();
        let mk = select_matmul_tiling(m as u64, n as u64, k as u64, &cfg, DataType::Int8);
        let prog = emit_matmul_kernel(mk, (m, n, k), DataType::Int8, OutputFormat::Accumulator, &cfg).unwrap();
        let want = reference_matmul(m, n, k, &a, &b, DataType::Int8);
        let (got, stats) = run_matmul(&prog, &MatMulData { m, n, k, a, b }, &cfg).unwrap();
        prop_assert_eq!(got, want);
        prop_assert_eq!(stats.cycles, stats.alu_slots.max(stats.mem_slots));
    }

    #[test]
    fn llc_never_overfills(ops in prop::collection::vec((0usize..6, 1u64..400, 0u8..3), 1..80)) {
        let mut c = LlcState::new(1000);
        for (t, bytes, kind) in ops {
            let live = |_: usize| true;
            match kind {
                0 => { c.read(t, bytes, 1.0, &[t], &live); }
                1 => {
                    let a = c.write(t, bytes, &[t], &live);
                    prop_assert!(c.resident(t) + a.dram_write >= bytes.min(1000));
                }
                _ => c.free(t),
            }
            prop_assert!(c.used() <= c.capacity());
            prop_assert_eq!(c.used(), (0..6).map(|i| c.resident(i)).sum::<u64>());
        }
    }
}

#[test]
fn identical_sweeps_are_identical() {
    let mut spec = SweepSpec::single(MachineConfig::base(), vec![TraceSource::zoo("bert_base_128", Mode::Inference, 1)]);
    spec.tiles = vec![1024, 2048];
    spec.freq_hz = vec![1e9, 2e9];
    let c = EnergyCoefficients::default();
    let a = sweep::<f64>(&spec, &c).unwrap();
    let b = sweep::<f64>(&spec, &c).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), spec.point_count());
}

#[test]
fn f32_and_f64_reports_agree() {
    let t = chain(512, &[1024, 256], 4, DataType::Int8);
    let cfg = MachineConfig::base();
    let a = simulate::<f64>(&t, &cfg);
    let b = simulate::<f32>(&t, &cfg);
    assert!((f64::from(b.total_time_s) / a.total_time_s - 1.0).abs() < 1e-5);
    assert_eq!(a.total_ops, b.total_ops);
}
