//! Recurrent cells.
//!
//! The input projection of every step is independent and runs once as a
//! single product; the recurrent product then runs once per step, each step
//! waiting on the hidden state of the previous one, with the gate math fused
//! into the tail of each task.

use super::gemm::{best, Footprint, Gemm};
use super::{Dependency, WorkDecomposition};
use crate::arch::MachineConfig;
use crate::workload::{LstmParams, OpKind, OperatorNode, LSTM_GATE_OPS_PER_UNIT};
use crate::{Error, Result};

/// Lowers a chain of cells sharing one weight tensor, in time order.
pub fn map_lstm_sequence(cells: &[&OperatorNode], cfg: &MachineConfig) -> Result<WorkDecomposition> {
    let first = cells.first().ok_or_else(|| Error::InvalidTrace("empty LSTM chain".into()))?;
    if cells.iter().any(|c| c.op != first.op || c.dtype != first.dtype) {
        return Err(Error::InvalidTrace(format!("LSTM chain at `{}` mixes cell shapes", first.id)));
    }
    let steps = cells.len() as u64;
    let dtype = first.dtype;
    let in_b = dtype.input_bytes();
    let (p, backward) = match &first.op {
        OpKind::LstmCell(p) => (p, false),
        OpKind::LstmCellGrad(p) => (p, true),
        other => return Err(Error::InvalidTrace(format!("{} is not a recurrent cell", other.name()))),
    };
    let LstmParams { input, hidden, batch } = *p;
    let gates = 4 * hidden;
    let gemm = |label: String, m: u64, n: u64, k: u64, weights: u64, ops: u64| Gemm {
        label,
        m,
        n,
        k,
        batch: 1,
        b_n_contiguous: false,
        footprint: Footprint::Dense,
        dtype,
        ideal_ops: ops,
        a_dram: 0,
        b_dram: weights,
        c_dram: 0,
        b_input: None,
        inputs: first.inputs.len(),
    };

    let gate_ops = if backward { 2 } else { 1 } * LSTM_GATE_OPS_PER_UNIT * batch * hidden;
    let (m, n, k) = if backward { (batch, hidden, gates) } else { (batch, gates, hidden) };
    let step = gemm(
        first.op.shape_key(),
        m,
        n,
        k,
        0,
        2 * batch * gates * hidden + gate_ops,
    );
    let mut main = best(&step, cfg);
    let gate_vectors = (batch * hidden).div_ceil(cfg.vector_elems());
    let gate_slots = (gate_vectors * LSTM_GATE_OPS_PER_UNIT).div_ceil(main.chunk_count);
    main.task.alu_slots += gate_slots;
    main.padded_ops += gate_ops;
    main.ideal_ops = 2 * batch * gates * hidden + gate_ops;
    main.simd_efficiency = super::ratio(main.ideal_ops, main.padded_ops);
    main.dependency = Dependency::SequentialChain { length: steps };
    main.input_scale = vec![1.0; first.inputs.len()];

    if !backward {
        let rows = steps * batch;
        let mut pre = gemm(
            format!("MatMul({rows},{gates},{input})"),
            rows,
            gates,
            input,
            (input + hidden) * gates * in_b,
            2 * rows * gates * input,
        );
        pre.a_dram = rows * input * in_b;
        main.prologue = Some(Box::new(best(&pre, cfg)));
    } else {
        main.traffic.dram_read_bytes = 0;
    }
    Ok(main)
}
