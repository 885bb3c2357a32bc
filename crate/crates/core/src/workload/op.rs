use serde::{Deserialize, Serialize};

use super::DataType;

fn one() -> u64 {
    1
}

fn is_one(v: &u64) -> bool {
    *v == 1
}

/// Storage order of the two matrix-multiply operands.
///
/// The first pair names the major-to-minor order of `A`, the second of `B`:
/// `MkKn` is `A[M][K]`, `B[K][N]`, both row-major.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MatMulLayout {
    #[default]
    #[serde(rename = "MKKN")]
    MkKn,
    #[serde(rename = "MKNK")]
    MkNk,
    #[serde(rename = "KMKN")]
    KmKn,
    #[serde(rename = "KMNK")]
    KmNk,
}

impl MatMulLayout {
    /// `B` is contiguous along `N`, so operand loads are line-granular along `N`.
    pub fn b_contiguous_in_n(self) -> bool {
        matches!(self, MatMulLayout::MkKn | MatMulLayout::KmKn)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MatMulParams {
    pub m: u64,
    pub n: u64,
    pub k: u64,
    /// Independent GEMMs of the same shape (attention heads, batched products).
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub batch: u64,
    #[serde(default)]
    pub layout: MatMulLayout,
}

impl MatMulParams {
    pub fn new(m: u64, n: u64, k: u64) -> Self {
        Self {
            m,
            n,
            k,
            batch: 1,
            layout: MatMulLayout::default(),
        }
    }

    pub fn batched(mut self, batch: u64) -> Self {
        self.batch = batch;
        self
    }

    pub fn with_layout(mut self, layout: MatMulLayout) -> Self {
        self.layout = layout;
        self
    }
}

/// Forward convolution parameters; the backward kinds reuse them unchanged.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvParams {
    pub n: u64,
    pub h: u64,
    pub w: u64,
    pub c: u64,
    pub k: u64,
    pub r: u64,
    pub s: u64,
    pub stride: u64,
    pub pad: u64,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub groups: u64,
}

impl ConvParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(n: u64, h: u64, w: u64, c: u64, k: u64, r: u64, s: u64, stride: u64, pad: u64) -> Self {
        Self {
            n,
            h,
            w,
            c,
            k,
            r,
            s,
            stride,
            pad,
            groups: 1,
        }
    }

    pub fn grouped(mut self, groups: u64) -> Self {
        self.groups = groups;
        self
    }

    /// Output height, `None` when the filter does not fit the padded input.
    pub fn output_h(&self) -> Option<u64> {
        out_extent(self.h, self.r, self.stride, self.pad)
    }

    pub fn output_w(&self) -> Option<u64> {
        out_extent(self.w, self.s, self.stride, self.pad)
    }

    pub fn p(&self) -> u64 {
        self.output_h().unwrap_or(0)
    }

    pub fn q(&self) -> u64 {
        self.output_w().unwrap_or(0)
    }

    /// Input channels seen by each output channel.
    pub fn c_per_group(&self) -> u64 {
        self.c / self.groups.max(1)
    }

    pub fn is_depthwise(&self) -> bool {
        self.groups > 1 && self.groups == self.c
    }
}

fn out_extent(input: u64, filter: u64, stride: u64, pad: u64) -> Option<u64> {
    let padded = input + 2 * pad;
    if stride == 0 || padded < filter {
        return None;
    }
    Some((padded - filter) / stride + 1)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ElementwiseParams {
    pub op: String,
    pub count: u64,
    pub arity: u64,
}

impl ElementwiseParams {
    pub fn new(op: impl Into<String>, count: u64, arity: u64) -> Self {
        Self {
            op: op.into(),
            count,
            arity,
        }
    }
}

/// One LSTM time step: gates `[4H]` from input `[I]` and hidden `[H]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LstmParams {
    pub input: u64,
    pub hidden: u64,
    #[serde(default = "one")]
    pub batch: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RequantizeParams {
    pub count: u64,
}

/// Element-wise work per hidden unit of an LSTM step: three sigmoids, two
/// tanh, three products, two sums.
pub const LSTM_GATE_OPS_PER_UNIT: u64 = 10;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum OpKind {
    #[serde(rename = "matmul")]
    MatMul(MatMulParams),
    Conv2d(ConvParams),
    #[serde(rename = "conv2d_di")]
    Conv2dDi(ConvParams),
    #[serde(rename = "conv2d_dw")]
    Conv2dDw(ConvParams),
    Elementwise(ElementwiseParams),
    LstmCell(LstmParams),
    LstmCellGrad(LstmParams),
    Requantize(RequantizeParams),
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::MatMul(_) => "MatMul",
            OpKind::Conv2d(_) => "Conv2D",
            OpKind::Conv2dDi(_) => "Conv2DdI",
            OpKind::Conv2dDw(_) => "Conv2DdW",
            OpKind::Elementwise(_) => "Elementwise",
            OpKind::LstmCell(_) => "LstmCell",
            OpKind::LstmCellGrad(_) => "LstmCellGrad",
            OpKind::Requantize(_) => "Requantize",
        }
    }

    /// Operation count with a multiply-accumulate counted as two ops.
    pub fn op_count(&self) -> u64 {
        match self {
            OpKind::MatMul(p) => 2 * p.batch * p.m * p.n * p.k,
            OpKind::Conv2d(p) | OpKind::Conv2dDi(p) | OpKind::Conv2dDw(p) => {
                2 * p.n * p.k * p.p() * p.q() * p.c_per_group() * p.r * p.s
            }
            OpKind::Elementwise(p) => p.count * p.arity,
            OpKind::LstmCell(p) => {
                2 * p.batch * 4 * p.hidden * (p.input + p.hidden)
                    + LSTM_GATE_OPS_PER_UNIT * p.batch * p.hidden
            }
            OpKind::LstmCellGrad(p) => {
                // hidden-chain product against the recurrent weights plus gate
                // derivatives; the input and weight gradients are separate GEMMs
                2 * p.batch * 4 * p.hidden * p.hidden + 2 * LSTM_GATE_OPS_PER_UNIT * p.batch * p.hidden
            }
            OpKind::Requantize(p) => p.count,
        }
    }

    /// Canonical `(kind, parameters)` key used to count distinct shapes.
    pub fn shape_key(&self) -> String {
        match self {
            OpKind::MatMul(p) => format!("MatMul({},{},{},b{})", p.m, p.n, p.k, p.batch),
            OpKind::Conv2d(p) | OpKind::Conv2dDi(p) | OpKind::Conv2dDw(p) => format!(
                "{}({},{},{},{},{},{},{},{},{},g{})",
                self.name(),
                p.n,
                p.h,
                p.w,
                p.c,
                p.k,
                p.r,
                p.s,
                p.stride,
                p.pad,
                p.groups
            ),
            OpKind::Elementwise(p) => format!("{}({},{})", p.op, p.count, p.arity),
            OpKind::LstmCell(p) | OpKind::LstmCellGrad(p) => {
                format!("{}({},{},b{})", self.name(), p.input, p.hidden, p.batch)
            }
            OpKind::Requantize(p) => format!("Requantize({})", p.count),
        }
    }

    /// Whether the kind belongs to the dominant operator families: the dense
    /// products and the named activation functions.
    pub fn is_primary(&self) -> bool {
        match self {
            OpKind::MatMul(_)
            | OpKind::Conv2d(_)
            | OpKind::Conv2dDi(_)
            | OpKind::Conv2dDw(_)
            | OpKind::LstmCell(_)
            | OpKind::LstmCellGrad(_) => true,
            OpKind::Elementwise(p) => is_named_activation(&p.op),
            OpKind::Requantize(_) => false,
        }
    }

    pub(crate) fn validate(&self) -> Result<(), String> {
        let positive = |name: &str, v: u64| {
            if v == 0 {
                Err(format!("{} has zero {name}", self.name()))
            } else {
                Ok(())
            }
        };
        match self {
            OpKind::MatMul(p) => {
                positive("M", p.m)?;
                positive("N", p.n)?;
                positive("K", p.k)?;
                positive("batch", p.batch)
            }
            OpKind::Conv2d(p) | OpKind::Conv2dDi(p) | OpKind::Conv2dDw(p) => {
                for (name, v) in [
                    ("N", p.n),
                    ("H", p.h),
                    ("W", p.w),
                    ("C", p.c),
                    ("K", p.k),
                    ("R", p.r),
                    ("S", p.s),
                    ("stride", p.stride),
                    ("groups", p.groups),
                ] {
                    positive(name, v)?;
                }
                if p.c % p.groups != 0 || p.k % p.groups != 0 {
                    return Err(format!("{}: channels not divisible by groups", self.name()));
                }
                if p.output_h().is_none() || p.output_w().is_none() {
                    return Err(format!("{}: filter larger than padded input", self.name()));
                }
                Ok(())
            }
            OpKind::Elementwise(p) => {
                positive("count", p.count)?;
                positive("arity", p.arity)
            }
            OpKind::LstmCell(p) | OpKind::LstmCellGrad(p) => {
                positive("input", p.input)?;
                positive("hidden", p.hidden)?;
                positive("batch", p.batch)
            }
            OpKind::Requantize(p) => positive("count", p.count),
        }
    }
}

pub fn is_named_activation(op: &str) -> bool {
    let base = op.strip_suffix("Grad").unwrap_or(op);
    matches!(base, "Relu" | "Tanh" | "Sigmoid" | "Gelu" | "AddRelu")
}

/// A node of the operator graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorNode {
    pub id: String,
    #[serde(flatten)]
    pub op: OpKind,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub dtype: DataType,
}

impl OperatorNode {
    pub fn op_count(&self) -> u64 {
        self.op.op_count()
    }
}
