//! Reverse-mode expansion of forward graphs into training graphs.

use std::collections::{HashMap, HashSet};

use super::{
    DataType, ElementwiseParams, MatMulLayout, MatMulParams, Mode, OpKind, OperatorNode, TensorRole, Trace,
    TraceBuilder,
};
use crate::error::{Error, Result};

/// Appends the backward pass of a forward graph.
///
/// Nodes are differentiated in reverse topological order. Gradients reaching
/// a tensor from several consumers are summed by an `AddN` node. LSTM cells
/// sharing a weight tensor are differentiated as one chain: the hidden-chain
/// gradients run step by step in reverse, followed by two large products for
/// the input and weight gradients with the sequence folded into one dimension.
pub fn expand_backward(trace: &Trace) -> Result<Trace> {
    if !trace.mode().is_forward_only() {
        return Err(Error::Unsupported(format!(
            "trace `{}` is already a {} graph",
            trace.name(),
            trace.mode()
        )));
    }
    for node in trace.nodes() {
        if matches!(
            node.op,
            OpKind::Conv2dDi(_) | OpKind::Conv2dDw(_) | OpKind::LstmCellGrad(_) | OpKind::Requantize(_)
        ) {
            return Err(Error::Unsupported(format!("differentiating {} node `{}`", node.op.name(), node.id)));
        }
    }

    let requires_grad = requires_grad(trace);
    let consumers = trace.consumer_counts();
    let mut b = TraceBuilder::from_trace(trace);
    b.set_mode(Mode::Training);
    b.set_name(format!("{}_train", trace.name()));

    let mut grads: HashMap<String, Vec<String>> = HashMap::new();
    // loss gradients seed every produced tensor nobody consumes
    for node in trace.nodes() {
        for o in &node.outputs {
            let idx = trace.tensor_index(o).expect("validated");
            if consumers[idx] == 0 && requires_grad.contains(o.as_str()) {
                let spec = &trace.tensors()[idx];
                let seed = b.tensor(&spec.dims, &spec.layout, spec.dtype, TensorRole::Input);
                grads.entry(o.clone()).or_default().push(seed);
            }
        }
    }

    let chains = lstm_chains(trace);
    let mut done_chains: HashSet<String> = HashSet::new();

    for node in trace.nodes().iter().rev() {
        if let OpKind::LstmCell(_) = node.op {
            let w = lstm_weight(trace, node).to_string();
            if done_chains.insert(w.clone()) {
                let cells: Vec<&OperatorNode> = chains[&w].iter().map(|&i| &trace.nodes()[i]).collect();
                backward_lstm_chain(trace, &mut b, &cells, &requires_grad, &mut grads)?;
            }
            continue;
        }
        let Some(dys) = node
            .outputs
            .iter()
            .map(|o| reduce_grad(trace, &mut b, o, &mut grads, node.dtype))
            .collect::<Option<Vec<_>>>()
        else {
            continue;
        };
        backward_node(trace, &mut b, node, &dys, &requires_grad, &mut grads)?;
    }

    // parameters used more than once collect several partial gradients
    for t in trace.tensors() {
        if t.role == TensorRole::Weight {
            reduce_grad(trace, &mut b, &t.id, &mut grads, t.dtype);
        }
    }
    b.build()
}

fn requires_grad(trace: &Trace) -> HashSet<&str> {
    let mut set: HashSet<&str> = trace
        .tensors()
        .iter()
        .filter(|t| t.role == TensorRole::Weight)
        .map(|t| t.id.as_str())
        .collect();
    for node in trace.nodes() {
        if node.inputs.iter().any(|i| set.contains(i.as_str())) {
            set.extend(node.outputs.iter().map(String::as_str));
        }
    }
    set
}

fn lstm_weight<'a>(trace: &'a Trace, node: &'a OperatorNode) -> &'a str {
    node.inputs
        .iter()
        .find(|i| trace.tensor(i).map(|t| t.role) == Some(TensorRole::Weight))
        .map(String::as_str)
        .unwrap_or(node.id.as_str())
}

/// Node indices of LSTM cells grouped by their shared weight tensor, in
/// forward order.
pub fn lstm_chains(trace: &Trace) -> HashMap<String, Vec<usize>> {
    let mut chains: HashMap<String, Vec<usize>> = HashMap::new();
    for (i, node) in trace.nodes().iter().enumerate() {
        if matches!(node.op, OpKind::LstmCell(_) | OpKind::LstmCellGrad(_)) {
            chains.entry(lstm_weight(trace, node).to_string()).or_default().push(i);
        }
    }
    chains
}

/// Collapses the partial gradients of `tensor` into one tensor id.
fn reduce_grad(
    trace: &Trace,
    b: &mut TraceBuilder,
    tensor: &str,
    grads: &mut HashMap<String, Vec<String>>,
    dtype: DataType,
) -> Option<String> {
    let parts = grads.get(tensor)?;
    if parts.len() == 1 {
        return Some(parts[0].clone());
    }
    let spec = trace.tensor(tensor).expect("validated");
    let role = if spec.role == TensorRole::Weight {
        TensorRole::Gradient
    } else {
        TensorRole::Activation
    };
    let sum = b.tensor(&spec.dims, &spec.layout, dtype, role);
    let inputs: Vec<&str> = parts.iter().map(String::as_str).collect();
    let op = OpKind::Elementwise(ElementwiseParams::new("AddN", spec.elements(), parts.len() as u64));
    b.node(op, &inputs, &[&sum], dtype);
    grads.insert(tensor.to_string(), vec![sum.clone()]);
    Some(sum)
}

fn grad_tensor(trace: &Trace, b: &mut TraceBuilder, of: &str, dtype: DataType) -> String {
    let spec = trace.tensor(of).expect("validated");
    let role = if spec.role == TensorRole::Weight {
        TensorRole::Gradient
    } else {
        TensorRole::Activation
    };
    b.tensor(&spec.dims, &spec.layout, dtype, role)
}

fn push_grad(grads: &mut HashMap<String, Vec<String>>, of: &str, g: String) {
    grads.entry(of.to_string()).or_default().push(g);
}

fn backward_node(
    trace: &Trace,
    b: &mut TraceBuilder,
    node: &OperatorNode,
    dys: &[String],
    requires: &HashSet<&str>,
    grads: &mut HashMap<String, Vec<String>>,
) -> Result<()> {
    let dt = node.dtype;
    let dy = dys[0].as_str();
    let needs = |t: &String| requires.contains(t.as_str());
    match &node.op {
        OpKind::Conv2d(p) => {
            let (x, w) = two_inputs(node)?;
            if needs(x) {
                let dx = grad_tensor(trace, b, x, dt);
                b.node(OpKind::Conv2dDi(p.clone()), &[dy, w], &[&dx], dt);
                push_grad(grads, x, dx);
            }
            if needs(w) {
                let dw = grad_tensor(trace, b, w, dt);
                b.node(OpKind::Conv2dDw(p.clone()), &[x, dy], &[&dw], dt);
                push_grad(grads, w, dw);
            }
        }
        OpKind::MatMul(p) => {
            let (a, w) = two_inputs(node)?;
            if needs(a) {
                let da = grad_tensor(trace, b, a, dt);
                let params = MatMulParams::new(p.m, p.k, p.n)
                    .batched(p.batch)
                    .with_layout(MatMulLayout::MkNk);
                b.node(OpKind::MatMul(params), &[dy, w], &[&da], dt);
                push_grad(grads, a, da);
            }
            if needs(w) {
                let dw = grad_tensor(trace, b, w, dt);
                let params = MatMulParams::new(p.k, p.n, p.m)
                    .batched(p.batch)
                    .with_layout(MatMulLayout::KmKn);
                b.node(OpKind::MatMul(params), &[a, dy], &[&dw], dt);
                push_grad(grads, w, dw);
            }
        }
        OpKind::Elementwise(p) => {
            let wanted: Vec<&String> = node.inputs.iter().filter(|i| needs(i)).collect();
            if wanted.is_empty() {
                return Ok(());
            }
            let y = node.outputs[0].as_str();
            match p.op.as_str() {
                // sums pass the incoming gradient through unchanged
                "Add" | "AddN" => {
                    for x in wanted {
                        push_grad(grads, x, dy.to_string());
                    }
                }
                // fused residual epilogues: one derivative shared by both summands
                "AddRelu" | "AddLayerNorm" => {
                    let name = if p.op == "AddRelu" { "ReluGrad" } else { "LayerNormGrad" };
                    let ds = grad_tensor(trace, b, y, dt);
                    let op = OpKind::Elementwise(ElementwiseParams::new(name, p.count, 2));
                    b.node(op, &[y, dy], &[&ds], dt);
                    for x in wanted {
                        push_grad(grads, x, ds.clone());
                    }
                }
                other => {
                    // derivative consumes the saved forward value and the
                    // output gradient
                    for x in wanted {
                        let dx = grad_tensor(trace, b, x, dt);
                        let op = OpKind::Elementwise(ElementwiseParams::new(format!("{other}Grad"), p.count, 2));
                        b.node(op, &[y, dy], &[&dx], dt);
                        push_grad(grads, x, dx);
                    }
                }
            }
        }
        other => return Err(Error::Unsupported(format!("differentiating {} node `{}`", other.name(), node.id))),
    }
    Ok(())
}

fn two_inputs(node: &OperatorNode) -> Result<(&String, &String)> {
    match node.inputs.as_slice() {
        [a, b, ..] => Ok((a, b)),
        _ => Err(Error::Unsupported(format!(
            "{} node `{}` needs two inputs",
            node.op.name(),
            node.id
        ))),
    }
}

fn backward_lstm_chain(
    trace: &Trace,
    b: &mut TraceBuilder,
    cells: &[&OperatorNode],
    requires: &HashSet<&str>,
    grads: &mut HashMap<String, Vec<String>>,
) -> Result<()> {
    let OpKind::LstmCell(p) = &cells[0].op else {
        unreachable!("chain of LSTM cells");
    };
    let dt = cells[0].dtype;
    let w = lstm_weight(trace, cells[0]).to_string();
    let steps = cells.len() as u64;
    let gate_layout = "BG";

    let mut dgates = Vec::with_capacity(cells.len());
    let mut recurrent: Option<String> = None;
    for cell in cells.iter().rev() {
        let h = &cell.outputs[0];
        let upstream = reduce_grad(trace, b, h, grads, dt);
        let mut inputs: Vec<String> = Vec::new();
        inputs.extend(upstream);
        inputs.extend(recurrent.take());
        inputs.extend(cell.outputs.iter().cloned());
        inputs.push(w.clone());
        let dg = b.activation(&[p.batch, 4 * p.hidden], gate_layout, dt);
        let dh = b.activation(&[p.batch, p.hidden], "BH", dt);
        let ins: Vec<&str> = inputs.iter().map(String::as_str).collect();
        b.node(OpKind::LstmCellGrad(p.clone()), &ins, &[&dg, &dh], dt);
        dgates.push(dg);
        recurrent = Some(dh);
    }
    dgates.reverse();
    let dgate_refs: Vec<&str> = dgates.iter().map(String::as_str).collect();

    // input gradient for every step at once
    let xs: Vec<&String> = cells.iter().map(|c| &c.inputs[0]).collect();
    if xs.iter().any(|x| requires.contains(x.as_str())) {
        let dxs: Vec<String> = xs.iter().map(|x| grad_tensor(trace, b, x, dt)).collect();
        let mut ins = dgate_refs.clone();
        ins.push(&w);
        let outs: Vec<&str> = dxs.iter().map(String::as_str).collect();
        let params = MatMulParams::new(steps * p.batch, p.input, 4 * p.hidden).with_layout(MatMulLayout::MkNk);
        b.node(OpKind::MatMul(params), &ins, &outs, dt);
        for (x, dx) in xs.iter().zip(dxs) {
            push_grad(grads, x, dx);
        }
    }

    // stacked input/recurrent weight gradient with the sequence as reduction
    let dw = grad_tensor(trace, b, &w, dt);
    let mut ins: Vec<&str> = xs.iter().map(|s| s.as_str()).collect();
    ins.extend(cells.iter().map(|c| c.outputs[0].as_str()));
    ins.extend(dgate_refs);
    let params =
        MatMulParams::new(p.input + p.hidden, 4 * p.hidden, steps * p.batch).with_layout(MatMulLayout::KmKn);
    b.node(OpKind::MatMul(params), &ins, &[&dw], dt);
    push_grad(grads, &w, dw);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::ConvParams;

    fn single_conv() -> Trace {
        let mut b = TraceBuilder::new("conv", Mode::Inference, 1);
        let x = b.tensor(&[1, 8, 8, 16], "NHWC", DataType::Fp16, TensorRole::Input);
        let w = b.weight(&[3, 3, 16, 16], "RSCK", DataType::Fp16);
        let h = b.activation(&[1, 8, 8, 16], "NHWC", DataType::Fp16);
        let y = b.activation(&[1, 8, 8, 16], "NHWC", DataType::Fp16);
        let p = ConvParams::new(1, 8, 8, 16, 16, 3, 3, 1, 1);
        b.node(OpKind::Conv2d(p.clone()), &[&x, &w], &[&h], DataType::Fp16);
        let w2 = b.weight(&[3, 3, 16, 16], "RSCK", DataType::Fp16);
        b.node(OpKind::Conv2d(p), &[&h, &w2], &[&y], DataType::Fp16);
        b.build().unwrap()
    }

    #[test]
    fn single_conv_gains_input_and_weight_gradients() {
        let mut b = TraceBuilder::new("c", Mode::Inference, 1);
        let x = b.activation(&[1, 8, 8, 16], "NHWC", DataType::Fp16);
        let w = b.weight(&[3, 3, 16, 16], "RSCK", DataType::Fp16);
        let y = b.activation(&[1, 8, 8, 16], "NHWC", DataType::Fp16);
        let prev = b.activation(&[1, 8, 8, 16], "NHWC", DataType::Fp16);
        let wp = b.weight(&[16], "C", DataType::Fp16);
        // make x a differentiable activation by producing it from a weight
        b.node(
            OpKind::Elementwise(ElementwiseParams::new("Add", 1024, 2)),
            &[&prev, &wp],
            &[&x],
            DataType::Fp16,
        );
        b.node(
            OpKind::Conv2d(ConvParams::new(1, 8, 8, 16, 16, 3, 3, 1, 1)),
            &[&x, &w],
            &[&y],
            DataType::Fp16,
        );
        let t = b.build().unwrap();
        let conv_only = expand_backward(&t).unwrap();
        let kinds: Vec<&str> = conv_only.nodes().iter().map(|n| n.op.name()).collect();
        assert!(kinds.contains(&"Conv2DdI"));
        assert!(kinds.contains(&"Conv2DdW"));
    }

    #[test]
    fn data_input_gets_no_input_gradient() {
        let t = expand_backward(&single_conv()).unwrap();
        let di = t.nodes().iter().filter(|n| matches!(n.op, OpKind::Conv2dDi(_))).count();
        let dw = t.nodes().iter().filter(|n| matches!(n.op, OpKind::Conv2dDw(_))).count();
        assert_eq!((di, dw), (1, 2));
        assert_eq!(t.mode(), Mode::Training);
    }

    #[test]
    fn forward_nodes_are_kept_and_ops_grow() {
        let f = single_conv();
        let t = expand_backward(&f).unwrap();
        assert_eq!(&t.nodes()[..f.nodes().len()], f.nodes());
        assert!(t.total_ops() > f.total_ops());
    }

    #[test]
    fn tanh_gradient_reads_two_inputs() {
        let mut b = TraceBuilder::new("tanh", Mode::Inference, 1);
        let x = b.weight(&[64], "C", DataType::Fp16);
        let y = b.activation(&[64], "C", DataType::Fp16);
        b.node(
            OpKind::Elementwise(ElementwiseParams::new("Tanh", 64, 1)),
            &[&x],
            &[&y],
            DataType::Fp16,
        );
        let t = expand_backward(&b.build().unwrap()).unwrap();
        let grad = t.nodes().last().unwrap();
        match &grad.op {
            OpKind::Elementwise(p) => {
                assert_eq!(p.op, "TanhGrad");
                assert_eq!(p.arity, 2);
                assert_eq!(grad.inputs.len(), 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn training_graph_is_rejected() {
        let t = expand_backward(&single_conv()).unwrap();
        assert!(matches!(expand_backward(&t), Err(Error::Unsupported(_))));
    }

    #[test]
    fn requantize_is_not_differentiable() {
        let mut b = TraceBuilder::new("q", Mode::Inference, 1);
        let x = b.weight(&[64], "C", DataType::Int8);
        let y = b.activation(&[64], "C", DataType::Int8);
        b.node(
            OpKind::Requantize(crate::workload::RequantizeParams { count: 64 }),
            &[&x],
            &[&y],
            DataType::Int8,
        );
        assert!(matches!(expand_backward(&b.build().unwrap()), Err(Error::Unsupported(_))));
    }
}
