//! Hand-built operator graphs for the reference networks.
//!
//! Shapes follow the published layer tables of each network. Activation
//! functions that directly follow a convolution or projection are fused into
//! the producing operator, as a graph optimizer would; residual additions
//! carry their activation (`AddRelu`, `AddLayerNorm`).

use super::{
    expand_backward, ConvParams, DataType, ElementwiseParams, LstmParams, MatMulParams, Mode, OpKind, TensorRole,
    Trace, TraceBuilder,
};
use crate::error::{Error, Result};

/// Models with a builder, in the order reports list them.
pub const MODELS: &[&str] = &[
    "resnet50",
    "ssd_resnet34",
    "bert_base_128",
    "bert_base_384",
    "bert_large_128",
    "bert_large_384",
    "rnnt",
    "alexnet",
    "mobilenet_v1",
];

/// The applications of the end-to-end comparisons.
pub const SUITE: &[&str] = &["resnet50", "ssd_resnet34", "bert_large_128", "rnnt"];

/// Every suite application in `mode` at `batch`.
pub fn suite(mode: Mode, batch: u64) -> Result<Vec<Trace>> {
    SUITE.iter().map(|m| build(m, mode, batch)).collect()
}

/// Encoder frames per utterance (after 3-frame stacking) of the RNN-T proxy.
pub const RNNT_FRAMES: u64 = 220;
/// Emitted symbols per utterance of the RNN-T proxy.
pub const RNNT_SYMBOLS: u64 = 60;

/// Builds `model` in `mode`: forward graphs run in Int8, training graphs are
/// the FP16 forward graph extended by its backward pass.
pub fn build(model: &str, mode: Mode, batch: u64) -> Result<Trace> {
    if batch == 0 {
        return Err(Error::InvalidTrace("batch must be at least 1".into()));
    }
    if mode.is_forward_only() {
        let mut t = forward(model, batch, DataType::Int8)?;
        t = rename(t, format!("{model}_inf"))?;
        Ok(t)
    } else {
        let f = forward(model, batch, DataType::Fp16)?;
        let t = expand_backward(&f)?;
        let mut b = TraceBuilder::from_trace(&t);
        b.set_mode(mode);
        b.set_name(format!("{model}_train"));
        b.build()
    }
}

/// Forward graph of `model` with every operator in `dtype`.
pub fn forward(model: &str, batch: u64, dtype: DataType) -> Result<Trace> {
    let t = match model {
        "resnet50" => resnet50(batch, dtype),
        "ssd_resnet34" => ssd_resnet34(batch, dtype),
        "bert_base_128" => bert(BertSize::Base, 128, batch, dtype),
        "bert_base_384" => bert(BertSize::Base, 384, batch, dtype),
        "bert_large_128" => bert(BertSize::Large, 128, batch, dtype),
        "bert_large_384" => bert(BertSize::Large, 384, batch, dtype),
        "rnnt" => rnnt(batch, dtype),
        "alexnet" => alexnet(batch, dtype),
        "mobilenet_v1" => mobilenet_v1(batch, dtype),
        other => return Err(Error::UnknownModel(other.to_string())),
    };
    Ok(t)
}

fn rename(t: Trace, name: String) -> Result<Trace> {
    let mut b = TraceBuilder::from_trace(&t);
    b.set_name(name);
    b.build()
}

struct Net {
    b: TraceBuilder,
    dtype: DataType,
    n: u64,
}

/// Feature map handle: tensor id plus spatial extent and channels.
#[derive(Clone)]
struct Fmap {
    id: String,
    h: u64,
    w: u64,
    c: u64,
}

impl Net {
    fn new(name: &str, batch: u64, dtype: DataType) -> Self {
        Self {
            b: TraceBuilder::new(name, Mode::Inference, batch),
            dtype,
            n: batch,
        }
    }

    fn sequence(name: &str, batch: u64, dtype: DataType, seq_len: u64) -> Self {
        Self {
            b: TraceBuilder::new(name, Mode::Inference, batch).seq_len(seq_len),
            dtype,
            n: batch,
        }
    }

    fn image(&mut self, h: u64, w: u64, c: u64) -> Fmap {
        let id = self.b.tensor(&[self.n, h, w, c], "NHWC", self.dtype, TensorRole::Input);
        Fmap { id, h, w, c }
    }

    fn conv(&mut self, x: &Fmap, k: u64, r: u64, stride: u64, pad: u64) -> Fmap {
        self.grouped_conv(x, k, r, stride, pad, 1)
    }

    fn grouped_conv(&mut self, x: &Fmap, k: u64, r: u64, stride: u64, pad: u64, groups: u64) -> Fmap {
        let p = ConvParams::new(self.n, x.h, x.w, x.c, k, r, r, stride, pad).grouped(groups);
        let (oh, ow) = (p.p(), p.q());
        let w = self.b.weight(&[r, r, x.c / groups, k], "RSCK", self.dtype);
        let y = self.b.activation(&[self.n, oh, ow, k], "NHWC", self.dtype);
        self.b.node(OpKind::Conv2d(p), &[&x.id, &w], &[&y], self.dtype);
        Fmap { id: y, h: oh, w: ow, c: k }
    }

    fn pool(&mut self, op: &str, x: &Fmap, window: u64, stride: u64, pad: u64) -> Fmap {
        let oh = (x.h + 2 * pad - window) / stride + 1;
        let ow = (x.w + 2 * pad - window) / stride + 1;
        let count = self.n * oh * ow * x.c;
        let y = self.b.activation(&[self.n, oh, ow, x.c], "NHWC", self.dtype);
        let p = ElementwiseParams::new(op, count, window * window);
        self.b.node(OpKind::Elementwise(p), &[&x.id], &[&y], self.dtype);
        Fmap { id: y, h: oh, w: ow, c: x.c }
    }

    fn ew(&mut self, op: &str, inputs: &[&str], dims: &[u64], layout: &str) -> String {
        let count: u64 = dims.iter().product();
        let y = self.b.activation(dims, layout, self.dtype);
        let p = ElementwiseParams::new(op, count, inputs.len() as u64);
        self.b.node(OpKind::Elementwise(p), inputs, &[&y], self.dtype);
        y
    }

    fn add_relu(&mut self, a: &Fmap, b: &Fmap) -> Fmap {
        let dims = [self.n, a.h, a.w, a.c];
        let id = self.ew("AddRelu", &[&a.id, &b.id], &dims, "NHWC");
        Fmap { id, ..a.clone() }
    }

    /// Dense layer `x[m, k] · W[k, n]`.
    fn dense(&mut self, x: &str, m: u64, k: u64, n: u64) -> String {
        let w = self.b.weight(&[k, n], "KN", self.dtype);
        let y = self.b.activation(&[m, n], "MN", self.dtype);
        self.b
            .node(OpKind::MatMul(MatMulParams::new(m, n, k)), &[x, &w], &[&y], self.dtype);
        y
    }

    fn finish(self) -> Trace {
        self.b.build().expect("zoo graphs are well formed")
    }
}

/// ResNet-50 v1.5 at 224×224: the stride of each downsampling bottleneck
/// sits on its 3×3 convolution.
pub fn resnet50(batch: u64, dtype: DataType) -> Trace {
    let mut net = Net::new("resnet50", batch, dtype);
    let x = net.image(224, 224, 3);
    let x = net.conv(&x, 64, 7, 2, 3);
    let mut x = net.pool("MaxPool", &x, 3, 2, 1);
    for (stage, (blocks, width)) in [(3u64, 64u64), (4, 128), (6, 256), (3, 512)].into_iter().enumerate() {
        for block in 0..blocks {
            let stride = if stage > 0 && block == 0 { 2 } else { 1 };
            let a = net.conv(&x, width, 1, 1, 0);
            let a = net.conv(&a, width, 3, stride, 1);
            let a = net.conv(&a, 4 * width, 1, 1, 0);
            let shortcut = if block == 0 { net.conv(&x, 4 * width, 1, stride, 0) } else { x.clone() };
            x = net.add_relu(&a, &shortcut);
        }
    }
    let pooled = net.pool("AvgPool", &x, 7, 1, 0);
    net.dense(&pooled.id, batch, 2048, 1000);
    net.finish()
}

fn basic_block(net: &mut Net, x: &Fmap, width: u64, stride: u64) -> Fmap {
    let a = net.conv(x, width, 3, stride, 1);
    let a = net.conv(&a, width, 3, 1, 1);
    let shortcut = if stride != 1 || x.c != width {
        net.conv(x, width, 1, stride, 0)
    } else {
        x.clone()
    };
    net.add_relu(&a, &shortcut)
}

/// Single-shot detector on a ResNet-34 backbone at 300×300, with the third
/// stage kept at stride 1 and six detection heads.
pub fn ssd_resnet34(batch: u64, dtype: DataType) -> Trace {
    const CLASSES: u64 = 81;
    let mut net = Net::new("ssd_resnet34", batch, dtype);
    let x = net.image(300, 300, 3);
    let x = net.conv(&x, 64, 7, 2, 3);
    let mut x = net.pool("MaxPool", &x, 3, 2, 1);
    for (blocks, width, stride) in [(3u64, 64u64, 1u64), (4, 128, 2), (6, 256, 1)] {
        for block in 0..blocks {
            x = basic_block(&mut net, &x, width, if block == 0 { stride } else { 1 });
        }
    }
    let mut features = vec![(x.clone(), 4u64)];
    for (mid, out, stride, pad, anchors) in [
        (256u64, 512u64, 2u64, 1u64, 6u64),
        (256, 512, 2, 1, 6),
        (128, 256, 2, 1, 6),
        (128, 256, 1, 0, 4),
        (128, 256, 1, 0, 4),
    ] {
        let a = net.conv(&x, mid, 1, 1, 0);
        x = net.conv(&a, out, 3, stride, pad);
        features.push((x.clone(), anchors));
    }
    for (f, anchors) in &features {
        net.conv(f, anchors * 4, 3, 1, 1);
        net.conv(f, anchors * CLASSES, 3, 1, 1);
    }
    net.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BertSize {
    Base,
    Large,
}

impl BertSize {
    /// `(layers, hidden, heads, intermediate)`
    fn dims(self) -> (u64, u64, u64, u64) {
        match self {
            BertSize::Base => (12, 768, 12, 3072),
            BertSize::Large => (24, 1024, 16, 4096),
        }
    }
}

/// Transformer encoder stack of BERT; embeddings and task heads are omitted.
pub fn bert(size: BertSize, seq: u64, batch: u64, dtype: DataType) -> Trace {
    let (layers, hidden, heads, inter) = size.dims();
    let label = match size {
        BertSize::Base => "base",
        BertSize::Large => "large",
    };
    let head_dim = hidden / heads;
    let tokens = batch * seq;
    let mut net = Net::sequence(&format!("bert_{label}_{seq}"), batch, dtype, seq);
    let mut x = net.b.tensor(&[tokens, hidden], "MK", dtype, TensorRole::Input);
    for _ in 0..layers {
        let q = net.dense(&x, tokens, hidden, hidden);
        let k = net.dense(&x, tokens, hidden, hidden);
        let v = net.dense(&x, tokens, hidden, hidden);
        let scores = net.b.activation(&[batch * heads, seq, seq], "BMN", dtype);
        let p = MatMulParams::new(seq, seq, head_dim).batched(batch * heads);
        net.b.node(OpKind::MatMul(p), &[&q, &k], &[&scores], dtype);
        let probs = net.ew("Softmax", &[&scores], &[batch * heads, seq, seq], "BMN");
        let ctx = net.b.activation(&[tokens, hidden], "MN", dtype);
        let p = MatMulParams::new(seq, head_dim, seq).batched(batch * heads);
        net.b.node(OpKind::MatMul(p), &[&probs, &v], &[&ctx], dtype);
        let attn = net.dense(&ctx, tokens, hidden, hidden);
        let x1 = net.ew("AddLayerNorm", &[&attn, &x], &[tokens, hidden], "MN");
        let f = net.dense(&x1, tokens, hidden, inter);
        let g = net.ew("Gelu", &[&f], &[tokens, inter], "MN");
        let f2 = net.dense(&g, tokens, inter, hidden);
        x = net.ew("AddLayerNorm", &[&f2, &x1], &[tokens, hidden], "MN");
    }
    net.finish()
}

/// Unrolled LSTM chain sharing one weight tensor; returns the hidden states.
fn lstm_layer(net: &mut Net, xs: &[String], input: u64, hidden: u64) -> Vec<String> {
    let dtype = net.dtype;
    let batch = net.n;
    let w = net.b.weight(&[input + hidden, 4 * hidden], "KN", dtype);
    let mut state: Option<(String, String)> = None;
    let mut out = Vec::with_capacity(xs.len());
    for x in xs {
        let h = net.b.activation(&[batch, hidden], "BH", dtype);
        let c = net.b.activation(&[batch, hidden], "BH", dtype);
        let mut inputs = vec![x.as_str()];
        if let Some((hp, cp)) = &state {
            inputs.push(hp);
            inputs.push(cp);
        }
        inputs.push(&w);
        let p = LstmParams { input, hidden, batch };
        net.b.node(OpKind::LstmCell(p), &inputs, &[&h, &c], dtype);
        out.push(h.clone());
        state = Some((h, c));
    }
    out
}

/// RNN-T speech recognizer: five-layer LSTM encoder with 2× time reduction
/// after the second layer, two-layer prediction network, and a joint network
/// evaluated once per decode step.
pub fn rnnt(batch: u64, dtype: DataType) -> Trace {
    const FEATURES: u64 = 240;
    const ENC: u64 = 1024;
    const PRED: u64 = 320;
    const JOINT: u64 = 512;
    const VOCAB: u64 = 29;
    let mut net = Net::sequence("rnnt", batch, dtype, RNNT_FRAMES);

    let frames: Vec<String> = (0..RNNT_FRAMES)
        .map(|_| net.b.tensor(&[batch, FEATURES], "BF", dtype, TensorRole::Input))
        .collect();
    let h = lstm_layer(&mut net, &frames, FEATURES, ENC);
    let h = lstm_layer(&mut net, &h, ENC, ENC);

    let reduced = RNNT_FRAMES / 2;
    let stacked: Vec<String> = (0..reduced)
        .map(|_| net.b.activation(&[batch, 2 * ENC], "BF", dtype))
        .collect();
    let ins: Vec<&str> = h.iter().map(String::as_str).collect();
    let outs: Vec<&str> = stacked.iter().map(String::as_str).collect();
    let p = ElementwiseParams::new("StackTime", batch * RNNT_FRAMES * ENC, 1);
    net.b.node(OpKind::Elementwise(p), &ins, &outs, dtype);

    let h = lstm_layer(&mut net, &stacked, 2 * ENC, ENC);
    let h = lstm_layer(&mut net, &h, ENC, ENC);
    let enc = lstm_layer(&mut net, &h, ENC, ENC);

    let symbols: Vec<String> = (0..RNNT_SYMBOLS)
        .map(|_| net.b.tensor(&[batch, PRED], "BF", dtype, TensorRole::Input))
        .collect();
    let g = lstm_layer(&mut net, &symbols, PRED, PRED);
    let pred = lstm_layer(&mut net, &g, PRED, PRED);

    let steps = batch * (reduced + RNNT_SYMBOLS);
    let joint_in = net.b.activation(&[steps, ENC + PRED], "MK", dtype);
    let ins: Vec<&str> = enc.iter().chain(&pred).map(String::as_str).collect();
    let p = ElementwiseParams::new("JointConcat", steps * (ENC + PRED), 1);
    net.b.node(OpKind::Elementwise(p), &ins, &[&joint_in], dtype);
    let j = net.dense(&joint_in, steps, ENC + PRED, JOINT);
    let j = net.ew("Relu", &[&j], &[steps, JOINT], "MN");
    net.dense(&j, steps, JOINT, VOCAB);
    net.finish()
}

/// Single-tower AlexNet at 227×227.
pub fn alexnet(batch: u64, dtype: DataType) -> Trace {
    let mut net = Net::new("alexnet", batch, dtype);
    let x = net.image(227, 227, 3);
    let x = net.conv(&x, 96, 11, 4, 0);
    let x = net.pool("MaxPool", &x, 3, 2, 0);
    let x = net.conv(&x, 256, 5, 1, 2);
    let x = net.pool("MaxPool", &x, 3, 2, 0);
    let x = net.conv(&x, 384, 3, 1, 1);
    let x = net.conv(&x, 384, 3, 1, 1);
    let x = net.conv(&x, 256, 3, 1, 1);
    let x = net.pool("MaxPool", &x, 3, 2, 0);
    let y = net.dense(&x.id, batch, 6 * 6 * 256, 4096);
    let y = net.dense(&y, batch, 4096, 4096);
    net.dense(&y, batch, 4096, 1000);
    net.finish()
}

/// MobileNet v1 (width 1.0) at 224×224.
pub fn mobilenet_v1(batch: u64, dtype: DataType) -> Trace {
    let mut net = Net::new("mobilenet_v1", batch, dtype);
    let x = net.image(224, 224, 3);
    let mut x = net.conv(&x, 32, 3, 2, 1);
    let plan: [(u64, u64); 13] = [
        (64, 1),
        (128, 2),
        (128, 1),
        (256, 2),
        (256, 1),
        (512, 2),
        (512, 1),
        (512, 1),
        (512, 1),
        (512, 1),
        (512, 1),
        (1024, 2),
        (1024, 1),
    ];
    for (out, stride) in plan {
        let c = x.c;
        let d = net.grouped_conv(&x, c, 3, stride, 1, c);
        x = net.conv(&d, out, 1, 1, 0);
    }
    let pooled = net.pool("AvgPool", &x, 7, 1, 0);
    net.dense(&pooled.id, batch, 1024, 1000);
    net.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::characterize;

    #[test]
    fn resnet50_census() {
        let s = characterize(&resnet50(1, DataType::Int8));
        assert_eq!(s.distinct_shape_count, 30);
        assert!((s.gops_per_sample - 7.8).abs() / 7.8 < 0.1, "{}", s.gops_per_sample);
        assert!(s.primary_op_fraction >= 0.98);
    }

    #[test]
    fn bert_base_128_census() {
        let s = characterize(&bert(BertSize::Base, 128, 1, DataType::Int8));
        assert_eq!(s.distinct_shape_count, 8);
        assert!((s.gops_per_sample - 23.0).abs() / 23.0 < 0.1, "{}", s.gops_per_sample);
    }

    #[test]
    fn batch_scales_ops_linearly() {
        let one = resnet50(1, DataType::Int8).total_ops();
        let four = resnet50(4, DataType::Int8).total_ops();
        assert_eq!(four, 4 * one);
    }

    #[test]
    fn every_model_builds_in_both_modes() {
        for m in MODELS {
            let f = build(m, Mode::Inference, 1).unwrap();
            let t = build(m, Mode::Training, 1).unwrap();
            assert!(t.total_ops() > f.total_ops(), "{m}");
            assert_eq!(f.name(), format!("{m}_inf"));
        }
    }

    #[test]
    fn unknown_model_is_an_error() {
        assert!(build("dlrm", Mode::Inference, 1).is_err());
    }
}
