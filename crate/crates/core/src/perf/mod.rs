//! Operator-at-a-time timeline model.
//!
//! Operators run one after another. Inside an operator every level of the
//! hierarchy overlaps perfectly, so its time is the slowest of the core-side
//! pipeline and DRAM, plus a barrier per phase. DRAM traffic comes from an
//! LRU model of the LLC that persists across operators. A pointwise op that
//! directly consumes a matmul or convolution runs in its epilogue.

mod llc;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

pub use llc::{Access, LlcState};

use crate::arch::{peak_ops, MachineConfig};
use crate::mapping::{fuse_epilogue, is_fusible_epilogue, map_lstm_sequence, map_node, WorkDecomposition};
use crate::scalar::{geomean, Real};
use crate::workload::{lstm_chains, DataType, OpKind, OperatorNode, TensorRole, Trace};

/// What limits an operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    Compute,
    L1,
    Llc,
    Dram,
    /// Core-bound with fewer tasks than tiles.
    Occupancy,
    Barrier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorEstimate<T> {
    pub node_id: String,
    pub kind: String,
    pub shape: String,
    pub dtype: DataType,
    /// Nodes folded into this estimate (LSTM chains cover several cells).
    pub nodes: usize,
    pub chunk_count: u64,
    pub compute_time_s: T,
    pub l1_time_s: T,
    pub llc_time_s: T,
    /// Core-side time with per-wave overlap of the three components above.
    pub core_time_s: T,
    pub dram_time_s: T,
    pub barrier_time_s: T,
    pub operator_time_s: T,
    pub dram_read_bytes: u64,
    pub dram_write_bytes: u64,
    pub llc_bytes: u64,
    pub l1_bytes: u64,
    pub achieved_ops: u64,
    pub peak_ops_per_s: T,
    pub utilization: T,
    pub simd_efficiency: T,
    pub bound: Bound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport<T> {
    pub trace: String,
    pub config: String,
    pub batch: u64,
    pub operators: Vec<OperatorEstimate<T>>,
    pub total_time_s: T,
    pub samples_per_s: T,
    pub utilization: T,
    pub total_ops: u64,
    pub dram_read_bytes: u64,
    pub dram_write_bytes: u64,
    pub llc_bytes: u64,
    pub l1_bytes: u64,
    /// Operator time by kind name.
    pub time_by_kind: BTreeMap<String, T>,
}

impl<T: Real> RunReport<T> {
    pub fn dram_bytes(&self) -> u64 {
        self.dram_read_bytes + self.dram_write_bytes
    }

    /// `Σ time·peak`: the ops the run could have done at peak.
    pub fn peak_capacity_ops(&self) -> T {
        self.operators
            .iter()
            .map(|o| o.operator_time_s * o.peak_ops_per_s)
            .sum()
    }
}

fn secs<T: Real>(cycles: f64, freq: f64) -> T {
    T::of(cycles / freq)
}

/// Times one decomposition given the DRAM traffic it caused.
pub fn estimate_decomposition<T: Real>(
    node: &OperatorNode,
    nodes: usize,
    achieved_ops: u64,
    d: &WorkDecomposition,
    dram: Access,
    cfg: &MachineConfig,
) -> OperatorEstimate<T> {
    let f = cfg.freq_hz;
    let mut compute = 0.0;
    let mut l1 = 0.0;
    let mut llc = 0.0;
    let mut core = 0.0;
    for p in d.phases() {
        let runs = (p.chain_length() * p.waves(cfg.tiles)) as f64;
        let (a, m, c) = p.wave_cycles(cfg);
        let c = if cfg.perfect_cache { 0.0 } else { c };
        compute += runs * a;
        l1 += runs * m;
        llc += runs * c;
        core += runs * a.max(m).max(c);
    }
    let dram_bytes = dram.dram_read + dram.dram_write;
    let bw = cfg.effective_mem_bw();
    let dram_s = if dram_bytes == 0 || bw.is_infinite() { 0.0 } else { dram_bytes as f64 / bw };
    let barrier_s = d.barriers() as f64 * cfg.barrier_cycles / f;
    let core_s = core / f;
    let op_s = core_s.max(dram_s) + barrier_s;
    let peak = peak_ops(cfg, node.dtype) * cfg.compute_scale;
    let bound = if barrier_s > core_s.max(dram_s) {
        Bound::Barrier
    } else if dram_s > core_s {
        Bound::Dram
    } else if d.tasks() < cfg.tiles {
        Bound::Occupancy
    } else if llc >= compute.max(l1) {
        Bound::Llc
    } else if l1 > compute {
        Bound::L1
    } else {
        Bound::Compute
    };
    let traffic = d.total_traffic();
    let mut ideal = 0u64;
    let mut padded = 0u64;
    for p in d.phases() {
        ideal += p.chain_length() * p.ideal_ops;
        padded += p.chain_length() * p.padded_ops;
    }
    OperatorEstimate {
        node_id: node.id.clone(),
        kind: node.op.name().to_string(),
        shape: d.label.clone(),
        dtype: node.dtype,
        nodes,
        chunk_count: d.chunk_count,
        compute_time_s: secs(compute, f),
        l1_time_s: secs(l1, f),
        llc_time_s: secs(llc, f),
        core_time_s: T::of(core_s),
        dram_time_s: T::of(dram_s),
        barrier_time_s: T::of(barrier_s),
        operator_time_s: T::of(op_s),
        dram_read_bytes: dram.dram_read,
        dram_write_bytes: dram.dram_write,
        llc_bytes: if cfg.perfect_cache { 0 } else { traffic.llc_bytes },
        l1_bytes: traffic.l1_bytes,
        achieved_ops,
        peak_ops_per_s: T::of(peak),
        utilization: if op_s > 0.0 { T::of(achieved_ops as f64 / (op_s * peak)) } else { T::zero() },
        simd_efficiency: T::of(crate::mapping::ratio(ideal, padded)),
        bound,
    }
}

/// LLC contents when a measured pass starts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Warmup {
    /// Empty cache.
    Cold,
    /// Whatever a previous identical pass left behind: the steady state of
    /// back-to-back samples, where weights that fit stay resident.
    #[default]
    Steady,
}

/// Tracks tensor liveness and LLC residency while walking a trace.
struct Residency<'a> {
    trace: &'a Trace,
    llc: LlcState,
    remaining: Vec<u32>,
    /// Parameters outlive a pass.
    persistent: Vec<bool>,
    perfect: bool,
}

impl<'a> Residency<'a> {
    fn new(trace: &'a Trace, cfg: &MachineConfig) -> Self {
        Self {
            trace,
            llc: LlcState::new(cfg.llc_bytes),
            remaining: trace.consumer_counts(),
            persistent: trace.tensors().iter().map(|t| t.role == TensorRole::Weight).collect(),
            perfect: cfg.perfect_cache,
        }
    }

    fn restart(&mut self) {
        self.remaining = self.trace.consumer_counts();
    }

    /// DRAM traffic of running `nodes` as one operator.
    fn run(&mut self, g: &Group) -> Access {
        let nodes = &g.nodes;
        let scales = &g.d.input_scale;
        // fused groups inherit the producer's input scales
        let scaled = |k: usize| nodes.len() == 1 || g.internal.is_some() && k == 0;
        if self.perfect {
            return Access::default();
        }
        let tr = self.trace;
        let idx = |id: &str| tr.tensor_index(id).expect("validated trace");
        let mut pinned: Vec<usize> = Vec::new();
        for n in nodes {
            pinned.extend(n.inputs.iter().map(|t| idx(t)));
            pinned.extend(n.outputs.iter().map(|t| idx(t)));
        }
        pinned.sort_unstable();
        pinned.dedup();

        let mut cost = Access::default();
        for (k, n) in nodes.iter().enumerate() {
            let mut seen = Vec::new();
            for (i, t) in n.inputs.iter().enumerate() {
                let ti = idx(t);
                if seen.contains(&ti) {
                    continue;
                }
                seen.push(ti);
                if g.internal == Some(ti) {
                    continue;
                }
                let bytes = tr.tensors()[ti].bytes();
                let scale = if scaled(k) { scales.get(i).copied().unwrap_or(1.0) } else { 1.0 };
                let (remaining, persistent) = (&self.remaining, &self.persistent);
                cost += self.llc.read(ti, bytes, scale, &pinned, &|v| remaining[v] > 0 || persistent[v]);
            }
            for t in &n.outputs {
                let ti = idx(t);
                if g.internal == Some(ti) {
                    continue;
                }
                let bytes = tr.tensors()[ti].bytes();
                let (remaining, persistent) = (&self.remaining, &self.persistent);
                cost += self.llc.write(ti, bytes, &pinned, &|v| remaining[v] > 0 || persistent[v]);
                if self.remaining[ti] == 0 {
                    // sink: results leave the chip
                    cost += self.llc.flush(ti);
                    self.llc.free(ti);
                }
            }
            for &t in &seen {
                self.remaining[t] = self.remaining[t].saturating_sub(1);
                if self.remaining[t] == 0 && !self.persistent[t] {
                    self.llc.free(t);
                }
            }
        }
        cost
    }
}

/// Nodes timed as one operator.
struct Group<'a> {
    nodes: Vec<&'a OperatorNode>,
    /// Tensor passed between fused nodes in registers.
    internal: Option<usize>,
    d: WorkDecomposition,
}

/// The tensor `producer` hands to `next` when `next` can be folded into its
/// epilogue: a matmul or convolution output read once, by a pointwise op.
fn fused_tensor(trace: &Trace, consumers: &[u32], producer: &OperatorNode, next: &OperatorNode) -> Option<usize> {
    if !matches!(producer.op, OpKind::MatMul(_) | OpKind::Conv2d(_)) || !is_fusible_epilogue(next) {
        return None;
    }
    let [out] = producer.outputs.as_slice() else { return None };
    if next.inputs.first() != Some(out) {
        return None;
    }
    let t = trace.tensor_index(out)?;
    let count = match &next.op {
        OpKind::Elementwise(p) => p.count,
        OpKind::Requantize(p) => p.count,
        _ => return None,
    };
    (consumers[t] == 1 && trace.tensors()[t].elements() == count).then_some(t)
}

/// Runs a trace in steady state: one unmeasured pass warms the LLC.
pub fn simulate<T: Real>(trace: &Trace, cfg: &MachineConfig) -> RunReport<T> {
    simulate_with(trace, cfg, Warmup::Steady)
}

pub fn simulate_with<T: Real>(trace: &Trace, cfg: &MachineConfig, warmup: Warmup) -> RunReport<T> {
    let nodes = trace.nodes();
    let mut chain_of: HashMap<usize, Vec<usize>> = HashMap::new();
    let mut skip = vec![false; nodes.len()];
    for (_, cells) in lstm_chains(trace) {
        // forward and backward cells share the weight but form separate chains
        let (fwd, bwd): (Vec<usize>, Vec<usize>) = cells
            .into_iter()
            .partition(|&c| matches!(nodes[c].op, OpKind::LstmCell(_)));
        for chain in [fwd, bwd].into_iter().filter(|c| !c.is_empty()) {
            for &c in &chain[1..] {
                skip[c] = true;
            }
            chain_of.insert(chain[0], chain);
        }
    }
    let consumers = trace.consumer_counts();
    let mut groups: Vec<Group> = Vec::new();
    let mut i = 0;
    while i < nodes.len() {
        if skip[i] {
            i += 1;
            continue;
        }
        let node = &nodes[i];
        if let Some(cells) = chain_of.get(&i) {
            let refs: Vec<&OperatorNode> = cells.iter().map(|&c| &nodes[c]).collect();
            let d = map_lstm_sequence(&refs, cfg).expect("chains hold cells of one shape");
            groups.push(Group { nodes: refs, internal: None, d });
            i += 1;
            continue;
        }
        let mut d = map_node(node, cfg);
        if let Some(t) = nodes.get(i + 1).and_then(|next| fused_tensor(trace, &consumers, node, next)) {
            fuse_epilogue(&mut d, &nodes[i + 1], cfg);
            groups.push(Group { nodes: vec![node, &nodes[i + 1]], internal: Some(t), d });
            i += 2;
            continue;
        }
        groups.push(Group { nodes: vec![node], internal: None, d });
        i += 1;
    }

    let mut res = Residency::new(trace, cfg);
    if warmup == Warmup::Steady {
        for g in &groups {
            res.run(g);
        }
        res.restart();
    }
    let ops = groups
        .iter()
        .map(|g| {
            let dram = res.run(g);
            let achieved: u64 = g.nodes.iter().map(|n| n.op_count()).sum();
            estimate_decomposition(g.nodes[0], g.nodes.len(), achieved, &g.d, dram, cfg)
        })
        .collect();
    report(trace, cfg, ops)
}

fn report<T: Real>(trace: &Trace, cfg: &MachineConfig, operators: Vec<OperatorEstimate<T>>) -> RunReport<T> {
    let total: T = operators.iter().map(|o| o.operator_time_s).sum();
    let total_ops: u64 = operators.iter().map(|o| o.achieved_ops).sum();
    let capacity: T = operators.iter().map(|o| o.operator_time_s * o.peak_ops_per_s).sum();
    let mut time_by_kind = BTreeMap::new();
    for o in &operators {
        let e = time_by_kind.entry(o.kind.clone()).or_insert_with(T::zero);
        *e = *e + o.operator_time_s;
    }
    let positive = total > T::zero();
    RunReport {
        trace: trace.name().to_string(),
        config: cfg.name.clone(),
        batch: trace.batch(),
        total_time_s: total,
        samples_per_s: if positive { T::count(trace.batch()) / total } else { T::zero() },
        utilization: if capacity > T::zero() { T::count(total_ops) / capacity } else { T::zero() },
        total_ops,
        dram_read_bytes: operators.iter().map(|o| o.dram_read_bytes).sum(),
        dram_write_bytes: operators.iter().map(|o| o.dram_write_bytes).sum(),
        llc_bytes: operators.iter().map(|o| o.llc_bytes).sum(),
        l1_bytes: operators.iter().map(|o| o.l1_bytes).sum(),
        time_by_kind,
        operators,
    }
}

/// Memory-system variants of a bandwidth study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "bytes_per_s", rename_all = "snake_case")]
pub enum MemoryVariant {
    Bandwidth(f64),
    Infinite,
    /// Infinite bandwidth and every tensor already on chip.
    InfinitePerfectCache,
}

impl MemoryVariant {
    pub fn apply(self, cfg: &MachineConfig) -> MachineConfig {
        let mut c = cfg.clone();
        match self {
            MemoryVariant::Bandwidth(bw) => c.mem_bw_bytes_per_s = bw,
            MemoryVariant::Infinite => c.mem_bw_bytes_per_s = f64::INFINITY,
            MemoryVariant::InfinitePerfectCache => {
                c.mem_bw_bytes_per_s = f64::INFINITY;
                c.perfect_cache = true;
            }
        }
        c
    }

    pub fn label(self) -> String {
        match self {
            MemoryVariant::Bandwidth(bw) => format!("{:.0} GB/s", bw / 1e9),
            MemoryVariant::Infinite => "infinite".into(),
            MemoryVariant::InfinitePerfectCache => "infinite + perfect cache".into(),
        }
    }
}

/// Throughput under each memory variant relative to `cfg` as given.
pub fn sensitivity_membw<T: Real>(trace: &Trace, cfg: &MachineConfig, variants: &[MemoryVariant]) -> Vec<(MemoryVariant, T)> {
    let reference = simulate::<T>(trace, cfg).total_time_s;
    variants
        .iter()
        .map(|&v| {
            let t = simulate::<T>(trace, &v.apply(cfg)).total_time_s;
            (v, if t > T::zero() { reference / t } else { T::one() })
        })
        .collect()
}

/// Geometric-mean relative throughput of a set of traces per variant.
pub fn sensitivity_membw_geomean<T: Real>(traces: &[Trace], cfg: &MachineConfig, variants: &[MemoryVariant]) -> Vec<(MemoryVariant, T)> {
    use rayon::prelude::*;
    let per: Vec<Vec<(MemoryVariant, T)>> = traces.par_iter().map(|t| sensitivity_membw(t, cfg, variants)).collect();
    variants
        .iter()
        .enumerate()
        .map(|(i, &v)| (v, geomean(per.iter().map(|p| p[i].1)).unwrap_or_else(T::one)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{zoo, ElementwiseParams, Mode, TraceBuilder};

    fn relu_trace(count: u64) -> Trace {
        let mut b = TraceBuilder::new("relu", Mode::Inference, 1);
        let x = b.tensor(&[count], "N", DataType::Int8, TensorRole::Input);
        let y = b.activation(&[count], "N", DataType::Int8);
        b.node(OpKind::Elementwise(ElementwiseParams::new("Relu", count, 1)), &[&x], &[&y], DataType::Int8);
        b.build().unwrap()
    }

    #[test]
    fn huge_elementwise_is_dram_bound() {
        let cfg = MachineConfig::base();
        let n = 1u64 << 28;
        let r = simulate::<f64>(&relu_trace(n), &cfg);
        let op = &r.operators[0];
        assert_eq!(op.bound, Bound::Dram);
        let want = 2.0 * n as f64 / (0.6 * 900e9);
        assert!((op.dram_time_s - want).abs() / want < 1e-9);
    }

    #[test]
    fn small_op_is_occupancy_bound() {
        let cfg = MachineConfig::base();
        let r = simulate::<f64>(&relu_trace(1024), &cfg);
        let op = &r.operators[0];
        assert!(op.chunk_count < cfg.tiles);
        assert!(op.utilization <= op.chunk_count as f64 / cfg.tiles as f64);
    }

    #[test]
    fn empty_trace_takes_no_time() {
        let t = Trace::empty("e", Mode::Inference, 1);
        let r = simulate::<f64>(&t, &MachineConfig::base());
        assert_eq!(r.total_time_s, 0.0);
        assert_eq!(r.utilization, 0.0);
    }

    #[test]
    fn adjacent_consumer_hits_in_llc() {
        let cfg = MachineConfig::base();
        let t = zoo::build("resnet50", Mode::Inference, 1).unwrap();
        let r = simulate_with::<f64>(&t, &cfg, Warmup::Cold);
        // a convolution fed by its predecessor only reads weights from DRAM
        let (i, n) = t
            .nodes()
            .iter()
            .enumerate()
            .skip(1)
            .find(|(i, n)| matches!(n.op, OpKind::Conv2d(_)) && t.nodes()[i - 1].outputs[0] == n.inputs[0])
            .unwrap();
        let weights = t.tensor(&n.inputs[1]).unwrap().bytes();
        assert_eq!(r.operators[i].dram_read_bytes, weights);
    }

    #[test]
    fn report_sums_operators() {
        let cfg = MachineConfig::base();
        let t = zoo::build("bert_base_128", Mode::Inference, 1).unwrap();
        let r = simulate::<f64>(&t, &cfg);
        let sum: f64 = r.operators.iter().map(|o| o.operator_time_s).sum();
        assert_eq!(r.total_time_s, sum);
        assert_eq!(r.total_ops, t.total_ops());
        for o in &r.operators {
            assert!(o.utilization > 0.0 && o.utilization <= 1.0, "{} {}", o.shape, o.utilization);
            assert!(o.operator_time_s >= o.dram_time_s && o.operator_time_s >= o.compute_time_s);
        }
    }

    #[test]
    fn chains_fold_into_one_estimate() {
        let cfg = MachineConfig::base();
        let t = zoo::build("rnnt", Mode::Inference, 1).unwrap();
        let r = simulate::<f64>(&t, &cfg);
        assert_eq!(r.total_ops, t.total_ops());
        assert!(r.operators.len() < t.nodes().len());
        assert!(r.operators.iter().any(|o| o.nodes > 1));
    }
}
