mod baseline;
mod compare;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use upcycle_core::arch::{ConfigOverrides, MachineConfig};
use upcycle_core::dse::{pareto_points, rows, sweep, SweepSpec};
use upcycle_core::emu::{emit_matmul_kernel, reference_matmul, run_matmul, MatMulData, OutputFormat};
use upcycle_core::mapping::select_matmul_tiling;
use upcycle_core::powerarea::{EnergyCoefficients, TechTable};
use upcycle_core::workload::{characterize, zoo, DataType, Mode, Trace};
use upcycle_core::ErrorClass;

use baseline::BaselineTable;
use compare::{compare, Baseline, RunRecord};

#[derive(Parser)]
#[command(name = "upcycle", version, about = "Performance, power and area model of a SIMD multicore DL accelerator")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Named machine configuration to start from.
    #[arg(long, global = true, default_value = "base")]
    preset: String,
    /// TOML machine configuration; replaces --preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Re-type every tensor and operator of the traces.
    #[arg(long, global = true, value_parser = parse_dtype)]
    dtype: Option<DataType>,
    /// Batch of built-in (`zoo:`) traces.
    #[arg(long, global = true, default_value_t = 1)]
    batch: u64,
    /// Also write the results as CSV.
    #[arg(long, global = true)]
    csv: Option<PathBuf>,
    /// Also write the results as JSON.
    #[arg(long, global = true)]
    json: Option<PathBuf>,
    /// Component coefficient file.
    #[arg(long, global = true, env = "UPCYCLE_COEFFICIENTS")]
    coefficients: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct Overrides {
    /// Number of tiles.
    #[arg(long, global = true)]
    tiles: Option<u64>,
    /// Vector width in bits.
    #[arg(long, global = true)]
    simd_bits: Option<u32>,
    /// Vector registers per tile.
    #[arg(long, global = true)]
    vrf_regs: Option<u32>,
    /// Clock in Hz.
    #[arg(long, global = true)]
    freq_hz: Option<f64>,
    /// Private L1 capacity per tile.
    #[arg(long, global = true)]
    l1_bytes: Option<u64>,
    /// Total shared LLC capacity.
    #[arg(long, global = true)]
    llc_bytes: Option<u64>,
    /// DRAM bandwidth in bytes/s.
    #[arg(long, global = true)]
    mem_bw: Option<f64>,
    /// Sustained fraction of DRAM bandwidth.
    #[arg(long, global = true)]
    mem_bw_efficiency: Option<f64>,
    /// Cache line size.
    #[arg(long, global = true)]
    line_bytes: Option<u64>,
    /// L1 to register file bytes per cycle per tile.
    #[arg(long, global = true)]
    l1_fill: Option<f64>,
    /// LLC to L1 bytes per cycle per tile.
    #[arg(long, global = true)]
    llc_fill: Option<f64>,
    /// HBM stacks counted in area and power.
    #[arg(long, global = true)]
    hbm_stacks: Option<u32>,
    /// Cost of a global barrier in cycles.
    #[arg(long, global = true)]
    barrier_cycles: Option<f64>,
    /// Multiplier on per-tile compute and fill rates.
    #[arg(long, global = true)]
    compute_scale: Option<f64>,
    /// Treat every tensor as LLC resident.
    #[arg(long, global = true)]
    perfect_cache: Option<bool>,
}

impl Overrides {
    fn to_core(&self) -> ConfigOverrides {
        ConfigOverrides {
            tiles: self.tiles,
            simd_bits: self.simd_bits,
            vrf_regs: self.vrf_regs,
            freq_hz: self.freq_hz,
            l1_bytes: self.l1_bytes,
            llc_bytes: self.llc_bytes,
            mem_bw_bytes_per_s: self.mem_bw,
            mem_bw_efficiency: self.mem_bw_efficiency,
            line_bytes: self.line_bytes,
            l1_fill_bytes_per_cycle_per_tile: self.l1_fill,
            llc_fill_bytes_per_cycle_per_tile: self.llc_fill,
            hbm_stacks: self.hbm_stacks,
            barrier_cycles: self.barrier_cycles,
            compute_scale: self.compute_scale,
            perfect_cache: self.perfect_cache,
            ..Default::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Operation count, distinct shapes and primary-operator share of traces.
    Characterize { traces: Vec<String> },
    /// Time, utilization, power and area of one trace.
    Simulate {
        trace: String,
        /// Print every operator.
        #[arg(long)]
        per_op: bool,
    },
    /// Evaluate a manifest's configuration grid; the built-in grid by default.
    Sweep { manifest: Option<PathBuf> },
    /// Speedup and efficiency against a baseline: `a100`, `eyeriss_v2` or a
    /// run record written by `simulate --json`.
    Compare {
        /// Traces or run records.
        runs: Vec<String>,
        #[arg(long, default_value = "a100")]
        baseline: String,
    },
    /// Issue counts of emitted matrix-product kernels.
    Microbench {
        /// `MxNxK`; repeatable.
        #[arg(long = "shape", value_parser = parse_shape)]
        shapes: Vec<(usize, usize, usize)>,
        /// Also run each kernel in the emulator and check it against the
        /// reference product.
        #[arg(long)]
        verify: bool,
    },
}

fn parse_dtype(s: &str) -> Result<DataType, String> {
    match s.to_ascii_lowercase().as_str() {
        "int8" => Ok(DataType::Int8),
        "fp16" => Ok(DataType::Fp16),
        "fp32" => Ok(DataType::Fp32),
        _ => Err(format!("unknown datatype `{s}` (int8, fp16, fp32)")),
    }
}

fn parse_shape(s: &str) -> Result<(usize, usize, usize), String> {
    let d: Vec<usize> = s
        .split(['x', 'X'])
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("`{s}`: {e}")))
        .collect::<Result<_, _>>()?;
    match d[..] {
        [m, n, k] if m > 0 && n > 0 && k > 0 => Ok((m, n, k)),
        _ => Err(format!("`{s}` is not MxNxK with positive extents")),
    }
}

enum CliError {
    Core(upcycle_core::Error),
    Output(PathBuf, String),
    Usage(String),
}

impl From<upcycle_core::Error> for CliError {
    fn from(e: upcycle_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Output(p, m) => write!(f, "cannot write {}: {m}", p.display()),
            CliError::Usage(m) => write!(f, "{m}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) => match e.class() {
                ErrorClass::Validation => 3,
                ErrorClass::Io => 4,
                ErrorClass::InfeasibleConfig => 5,
            },
            CliError::Output(..) => 4,
            CliError::Usage(_) => 2,
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

struct Context {
    cfg: MachineConfig,
    coeffs: EnergyCoefficients,
    dtype: Option<DataType>,
    batch: u64,
    csv: Option<PathBuf>,
    json: Option<PathBuf>,
}

impl Context {
    fn new(g: &Global) -> CliResult<Self> {
        let start = match &g.config {
            Some(p) => MachineConfig::load(p)?,
            None => MachineConfig::preset(&g.preset)?,
        };
        let cfg = g.overrides.to_core().apply(start)?;
        let coeffs = match &g.coefficients {
            Some(p) => EnergyCoefficients::load(p)?,
            None => EnergyCoefficients::default(),
        };
        if g.batch == 0 {
            return Err(CliError::Usage("--batch must be at least 1".into()));
        }
        Ok(Self {
            cfg,
            coeffs,
            dtype: g.dtype,
            batch: g.batch,
            csv: g.csv.clone(),
            json: g.json.clone(),
        })
    }

    /// `zoo:<model>[:<mode>]` builds a shipped model at `--batch`; anything
    /// else is a trace file.
    fn trace(&self, spec: &str) -> CliResult<Trace> {
        let trace = match spec.strip_prefix("zoo:") {
            Some(rest) => {
                let (model, mode) = match rest.split_once(':') {
                    Some((m, "inference")) => (m, Mode::Inference),
                    Some((m, "training")) => (m, Mode::Training),
                    Some((_, other)) => return Err(CliError::Usage(format!("unknown mode `{other}` (inference, training)"))),
                    None => (rest, Mode::Inference),
                };
                zoo::build(model, mode, self.batch)?
            }
            None => Trace::load(spec)?,
        };
        Ok(match self.dtype {
            Some(d) => trace.with_dtype(d)?,
            None => trace,
        })
    }

    fn write_json<T: Serialize + ?Sized>(&self, value: &T) -> CliResult {
        if let Some(p) = &self.json {
            let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Output(p.clone(), e.to_string()))?;
            std::fs::write(p, text + "\n").map_err(|e| CliError::Output(p.clone(), e.to_string()))?;
        }
        Ok(())
    }

    fn write_csv<T: Serialize>(&self, rows: &[T]) -> CliResult {
        if let Some(p) = &self.csv {
            write_csv(p, rows)?;
        }
        Ok(())
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> CliResult {
    let fail = |e: csv::Error| CliError::Output(path.to_path_buf(), e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(fail)?;
    for r in rows {
        w.serialize(r).map_err(fail)?;
    }
    w.flush().map_err(|e| CliError::Output(path.to_path_buf(), e.to_string()))
}

fn characterize_cmd(ctx: &Context, specs: &[String]) -> CliResult {
    if specs.is_empty() {
        return Err(CliError::Usage("characterize needs at least one trace".into()));
    }
    let summaries = specs
        .iter()
        .map(|s| ctx.trace(s).map(|t| characterize(&t)))
        .collect::<CliResult<Vec<_>>>()?;
    println!("{:<24} {:<10} {:>6} {:>12} {:>7} {:>9}", "trace", "mode", "batch", "GOPs/sample", "shapes", "primary");
    for s in &summaries {
        println!(
            "{:<24} {:<10} {:>6} {:>12.3} {:>7} {:>8.1}%",
            s.name,
            format!("{:?}", s.mode).to_lowercase(),
            s.batch,
            s.gops_per_sample,
            s.distinct_shape_count,
            100.0 * s.primary_op_fraction
        );
    }
    ctx.write_csv(&summaries)?;
    ctx.write_json(&summaries)
}

fn simulate_cmd(ctx: &Context, spec: &str, per_op: bool) -> CliResult {
    let trace = ctx.trace(spec)?;
    let rec = RunRecord::simulate(&trace, &ctx.cfg, &ctx.coeffs)?;
    let (r, p) = (&rec.run, &rec.power);
    println!("trace          {} (batch {})", r.trace, r.batch);
    println!("config         {}", r.config);
    println!("time           {:.6e} s", r.total_time_s);
    println!("samples/s      {:.3}", r.samples_per_s);
    println!("utilization    {:.1}%", 100.0 * r.utilization);
    println!("ops            {}", r.total_ops);
    println!("dram bytes     {} read, {} written", r.dram_read_bytes, r.dram_write_bytes);
    println!("area           {:.2} mm2", p.area_mm2);
    println!("tdp            {:.1} W", p.tdp_w);
    println!("avg power      {:.1} W (static {:.1} W)", p.avg_power_w, p.static_w);
    println!("energy         {:.6e} J", p.total_energy_j);
    println!("pJ/op          {:.4}", p.pj_per_op);
    println!("TOP/s/mm2      {:.4}", p.tops_per_mm2);
    if per_op {
        println!();
        println!("{:<28} {:<14} {:>12} {:>8} {:>8}", "operator", "kind", "time (s)", "util", "bound");
        for o in &r.operators {
            println!(
                "{:<28} {:<14} {:>12.4e} {:>7.1}% {:>8?}",
                o.node_id,
                o.kind,
                o.operator_time_s,
                100.0 * o.utilization,
                o.bound
            );
        }
    }
    ctx.write_csv(&r.operators)?;
    ctx.write_json(&rec)
}

fn sweep_cmd(ctx: &Context, manifest: Option<&Path>) -> CliResult {
    let spec = match manifest {
        Some(p) => SweepSpec::load(p)?,
        None => SweepSpec::default_manifest(),
    };
    let points = sweep::<f64>(&spec, &ctx.coeffs)?;
    let table = rows(&points);
    let front = pareto_points(&points, None);
    println!(
        "{:<32} {:>9} {:>11} {:>12} {:>13} {:>8}",
        "config", "area", "geo pJ/op", "geo TOPS/mm2", "pareto apps", "front"
    );
    for p in &points {
        if let Some(e) = &p.error {
            println!("{:<32} infeasible: {e}", p.config.name);
            continue;
        }
        let on = table.iter().filter(|r| r.point == p.index && r.pareto).count();
        println!(
            "{:<32} {:>9.2} {:>11.4} {:>12.4} {:>8}/{:<4} {:>8}",
            p.config.name,
            p.area_mm2,
            p.geomean.pj_per_op.unwrap_or(f64::NAN),
            p.geomean.tops_per_mm2.unwrap_or(f64::NAN),
            on,
            p.runs.len(),
            if front.contains(&p.index) { "yes" } else { "" }
        );
    }
    ctx.write_csv(&table)?;
    ctx.write_json(&points)
}

fn load_record(path: &str) -> Option<RunRecord> {
    let text = std::fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

fn compare_cmd(ctx: &Context, specs: &[String], baseline: &str) -> CliResult {
    if specs.is_empty() {
        return Err(CliError::Usage("compare needs at least one trace or run record".into()));
    }
    let runs = specs
        .iter()
        .map(|s| match load_record(s) {
            Some(r) => Ok(r),
            None => Ok(RunRecord::simulate(&ctx.trace(s)?, &ctx.cfg, &ctx.coeffs)?),
        })
        .collect::<CliResult<Vec<_>>>()?;
    let table = BaselineTable::embedded();
    let tech = TechTable::default();
    let base = match baseline {
        "a100" => Baseline::A100(table),
        "eyeriss_v2" => Baseline::EyerissV2(table, &tech),
        path => {
            let recs: Vec<RunRecord> = match load_record(path) {
                Some(r) => vec![r],
                None if Path::new(path).exists() => {
                    return Err(CliError::Usage(format!("{path} is not a run record")));
                }
                None => return Err(CliError::Usage(format!("unknown baseline `{path}` (a100, eyeriss_v2 or a run record)"))),
            };
            Baseline::Recorded(recs)
        }
    };
    let report = compare(&runs, &base)?;
    let opt = |v: Option<f64>, prec: usize| v.map_or("-".to_string(), |x| format!("{x:.prec$}"));
    println!("baseline: {}", report.baseline);
    println!(
        "{:<18} {:<10} {:>6} {:>12} {:>12} {:>9} {:>9} {:>9} {:>8}",
        "app", "mode", "batch", "samples/s", "base s/s", "speedup", "pJ/op", "base pJ", "rel eff"
    );
    for r in &report.rows {
        println!(
            "{:<18} {:<10} {:>6} {:>12.2} {:>12} {:>9} {:>9.4} {:>9} {:>8}",
            r.app,
            format!("{:?}", r.mode).to_lowercase(),
            r.batch,
            r.samples_per_s,
            opt(r.baseline_samples_per_s, 2),
            opt(r.speedup, 2),
            r.pj_per_op,
            opt(r.baseline_pj_per_op, 3),
            opt(r.rel_efficiency, 2)
        );
    }
    for s in &report.summaries {
        println!(
            "geomean {} {} batch over {} apps: speedup {}, relative efficiency {}",
            format!("{:?}", s.mode).to_lowercase(),
            s.regime,
            s.apps,
            opt(s.geomean_speedup, 2),
            opt(s.geomean_rel_efficiency, 2)
        );
    }
    for name in &report.excluded {
        eprintln!("warning: {name} has no counterpart in the baseline and is excluded");
    }
    println!("method: {}", report.method);
    ctx.write_csv(&report.rows)?;
    ctx.write_json(&report)
}

#[derive(Serialize)]
struct MicrobenchRow {
    m: usize,
    n: usize,
    k: usize,
    dtype: DataType,
    vectorized: String,
    tm: u32,
    tn: u32,
    regs: u32,
    fmas_per_kstep: u32,
    loads_per_kstep: u32,
    instructions: usize,
    fmas: u64,
    alu_slots: u64,
    mem_slots: u64,
    prefetch_slots: u64,
    cycles: u64,
    fma_issue_fraction: f64,
    verified: Option<bool>,
}

const DEFAULT_SHAPES: &[(usize, usize, usize)] = &[(16, 16, 16), (64, 64, 64), (1, 256, 256), (49, 64, 576), (128, 128, 128)];

fn microbench_cmd(ctx: &Context, shapes: &[(usize, usize, usize)], verify: bool) -> CliResult {
    let dtype = ctx.dtype.unwrap_or(DataType::Int8);
    if dtype == DataType::Fp32 {
        return Err(CliError::Usage("kernels are emitted for int8 and fp16 only".into()));
    }
    let shapes = if shapes.is_empty() { DEFAULT_SHAPES } else { shapes };
    let mut out = Vec::new();
    for &(m, n, k) in shapes {
        let mk = select_matmul_tiling(m as u64, n as u64, k as u64, &ctx.cfg, dtype);
        let prog = emit_matmul_kernel(mk, (m, n, k), dtype, OutputFormat::Accumulator, &ctx.cfg)?;
        let stats = prog.census();
        let fmas = prog.instrs.iter().filter(|i| i.is_fma()).count() as u64;
        let verified = if verify {
            let a: Vec<f64> = (0..m * k).map(|i| ((i * 7 + 3) % 11) as f64 - 5.0).collect();
            let b: Vec<f64> = (0..k * n).map(|i| ((i * 5 + 1) % 13) as f64 - 6.0).collect();
            let want = reference_matmul(m, n, k, &a, &b, dtype);
            let (got, _) = run_matmul(&prog, &MatMulData { m, n, k, a, b }, &ctx.cfg)?;
            Some(match dtype {
                DataType::Int8 => got == want,
                _ => got.iter().zip(&want).all(|(g, w)| (g - w).abs() <= 1e-3 * w.abs().max(1.0)),
            })
        } else {
            None
        };
        out.push(MicrobenchRow {
            m,
            n,
            k,
            dtype,
            vectorized: format!("{:?}", mk.vectorized_dim),
            tm: mk.tm,
            tn: mk.tn,
            regs: mk.regs_used(),
            fmas_per_kstep: mk.fmas_per_kstep,
            loads_per_kstep: mk.loads_per_kstep,
            instructions: prog.instrs.len(),
            fmas,
            alu_slots: stats.alu_slots,
            mem_slots: stats.mem_slots,
            prefetch_slots: stats.prefetch_slots,
            cycles: stats.cycles,
            fma_issue_fraction: if stats.cycles > 0 { fmas as f64 / stats.cycles as f64 } else { 0.0 },
            verified,
        });
    }
    println!(
        "{:<16} {:<5} {:>3} {:>3} {:>4} {:>5} {:>5} {:>9} {:>9} {:>9} {:>9} {:>7} {:>8}",
        "shape", "vec", "tm", "tn", "regs", "fma/k", "ld/k", "cycles", "alu", "mem", "prefetch", "fma %", "verified"
    );
    for r in &out {
        println!(
            "{:<16} {:<5} {:>3} {:>3} {:>4} {:>5} {:>5} {:>9} {:>9} {:>9} {:>9} {:>6.1}% {:>8}",
            format!("{}x{}x{}", r.m, r.n, r.k),
            r.vectorized,
            r.tm,
            r.tn,
            r.regs,
            r.fmas_per_kstep,
            r.loads_per_kstep,
            r.cycles,
            r.alu_slots,
            r.mem_slots,
            r.prefetch_slots,
            100.0 * r.fma_issue_fraction,
            r.verified.map_or("-", |v| if v { "yes" } else { "NO" })
        );
    }
    ctx.write_csv(&out)?;
    ctx.write_json(&out)?;
    if out.iter().any(|r| r.verified == Some(false)) {
        return Err(CliError::Core(upcycle_core::Error::Emulation(
            "a kernel disagreed with the reference product".into(),
        )));
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    let ctx = Context::new(&cli.global)?;
    match cli.command {
        Command::Characterize { traces } => characterize_cmd(&ctx, &traces),
        Command::Simulate { trace, per_op } => simulate_cmd(&ctx, &trace, per_op),
        Command::Sweep { manifest } => sweep_cmd(&ctx, manifest.as_deref()),
        Command::Compare { runs, baseline } => compare_cmd(&ctx, &runs, &baseline),
        Command::Microbench { shapes, verify } => microbench_cmd(&ctx, &shapes, verify),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
