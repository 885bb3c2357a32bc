use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataType, OpKind, OperatorNode};
use crate::error::{Error, Result};

/// Version written to and required from trace files.
pub const TRACE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Inference,
    Training,
    Pretrain,
    Finetune,
}

impl Mode {
    pub fn is_forward_only(self) -> bool {
        self == Mode::Inference
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Inference => "inference",
            Mode::Training => "training",
            Mode::Pretrain => "pretrain",
            Mode::Finetune => "finetune",
        })
    }
}

/// What a tensor holds. Graph inputs are either model weights or data fed
/// from the host; everything else is produced by a node.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorRole {
    #[default]
    Activation,
    Weight,
    Input,
    Gradient,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub id: String,
    pub dims: Vec<u64>,
    pub layout: String,
    pub dtype: DataType,
    #[serde(default, skip_serializing_if = "is_activation")]
    pub role: TensorRole,
}

fn is_activation(r: &TensorRole) -> bool {
    *r == TensorRole::Activation
}

impl TensorSpec {
    pub fn elements(&self) -> u64 {
        self.dims.iter().product()
    }

    pub fn bytes(&self) -> u64 {
        self.elements() * self.dtype.input_bytes()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub name: String,
    pub mode: Mode,
    pub batch: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq_len: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TraceFile {
    version: u32,
    header: TraceHeader,
    tensors: Vec<TensorSpec>,
    nodes: Vec<OperatorNode>,
}

/// A validated operator graph in execution order.
#[derive(Debug, Clone)]
pub struct Trace {
    header: TraceHeader,
    tensors: Vec<TensorSpec>,
    nodes: Vec<OperatorNode>,
    tensor_index: HashMap<String, usize>,
}

impl Trace {
    /// The same graph with every tensor and operator in `dtype`.
    pub fn with_dtype(&self, dtype: DataType) -> Result<Trace> {
        let tensors = self.tensors.iter().map(|t| TensorSpec { dtype, ..t.clone() }).collect();
        let nodes = self
            .nodes
            .iter()
            .map(|n| OperatorNode { dtype, ..n.clone() })
            .collect();
        Trace::new(self.header.clone(), tensors, nodes)
    }

    /// Builds a trace and checks every structural invariant.
    pub fn new(header: TraceHeader, tensors: Vec<TensorSpec>, nodes: Vec<OperatorNode>) -> Result<Self> {
        if header.batch == 0 {
            return Err(Error::InvalidTrace("batch must be at least 1".into()));
        }
        let mut tensor_index = HashMap::with_capacity(tensors.len());
        for (i, t) in tensors.iter().enumerate() {
            if t.dims.is_empty() || t.dims.contains(&0) {
                return Err(Error::InvalidTrace(format!("tensor `{}` has an empty extent", t.id)));
            }
            if tensor_index.insert(t.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(t.id.clone()));
            }
        }

        let mut producer: HashMap<&str, usize> = HashMap::new();
        let mut node_ids = HashSet::new();
        for (i, node) in nodes.iter().enumerate() {
            if !node_ids.insert(node.id.as_str()) {
                return Err(Error::DuplicateId(node.id.clone()));
            }
            node.op
                .validate()
                .map_err(|m| Error::InvalidTrace(format!("node `{}`: {m}", node.id)))?;
            if node.outputs.is_empty() {
                return Err(Error::InvalidTrace(format!("node `{}` has no outputs", node.id)));
            }
            for t in node.inputs.iter().chain(&node.outputs) {
                if !tensor_index.contains_key(t) {
                    return Err(Error::DanglingTensor {
                        node: node.id.clone(),
                        tensor: t.clone(),
                    });
                }
            }
            for t in &node.outputs {
                if producer.insert(t.as_str(), i).is_some() {
                    return Err(Error::DuplicateProducer { tensor: t.clone() });
                }
            }
        }
        for (i, node) in nodes.iter().enumerate() {
            for t in &node.inputs {
                if let Some(&p) = producer.get(t.as_str()) {
                    if p >= i {
                        return Err(Error::NotTopological {
                            node: node.id.clone(),
                            tensor: t.clone(),
                        });
                    }
                }
            }
        }

        Ok(Self {
            header,
            tensors,
            nodes,
            tensor_index,
        })
    }

    pub fn empty(name: impl Into<String>, mode: Mode, batch: u64) -> Self {
        Trace::new(
            TraceHeader {
                name: name.into(),
                mode,
                batch,
                seq_len: None,
            },
            Vec::new(),
            Vec::new(),
        )
        .expect("empty trace is valid")
    }

    pub fn header(&self) -> &TraceHeader {
        &self.header
    }

    pub fn name(&self) -> &str {
        &self.header.name
    }

    pub fn mode(&self) -> Mode {
        self.header.mode
    }

    pub fn batch(&self) -> u64 {
        self.header.batch
    }

    pub fn nodes(&self) -> &[OperatorNode] {
        &self.nodes
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.tensors
    }

    pub fn tensor(&self, id: &str) -> Option<&TensorSpec> {
        self.tensor_index.get(id).map(|&i| &self.tensors[i])
    }

    pub fn tensor_index(&self, id: &str) -> Option<usize> {
        self.tensor_index.get(id).copied()
    }

    pub fn total_ops(&self) -> u64 {
        self.nodes.iter().map(OperatorNode::op_count).sum()
    }

    /// Reads and validates a trace file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Parse {
            what: "trace",
            message: e.to_string(),
        })?;
        let version = raw
            .get("version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::Parse {
                what: "trace",
                message: "missing `version`".into(),
            })?;
        if version != u64::from(TRACE_SCHEMA_VERSION) {
            return Err(Error::Version {
                found: u32::try_from(version).unwrap_or(u32::MAX),
                expected: TRACE_SCHEMA_VERSION,
            });
        }
        let file: TraceFile = serde_json::from_value(raw).map_err(|e| Error::Parse {
            what: "trace",
            message: e.to_string(),
        })?;
        Trace::new(file.header, file.tensors, file.nodes)
    }

    pub fn to_json(&self) -> String {
        let file = TraceFile {
            version: TRACE_SCHEMA_VERSION,
            header: self.header.clone(),
            tensors: self.tensors.clone(),
            nodes: self.nodes.clone(),
        };
        serde_json::to_string_pretty(&file).expect("trace serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// Number of nodes reading each tensor, indexed like [`Trace::tensors`].
    pub fn consumer_counts(&self) -> Vec<u32> {
        let mut counts = vec![0u32; self.tensors.len()];
        for node in &self.nodes {
            for t in &node.inputs {
                counts[self.tensor_index[t]] += 1;
            }
        }
        counts
    }

    /// Appends `other` after this trace. Tensor ids are prefixed to keep them
    /// distinct; both traces must share a batch size.
    pub fn concat(&self, other: &Trace, name: impl Into<String>) -> Result<Trace> {
        if self.batch() != other.batch() {
            return Err(Error::InvalidTrace("concatenated traces must share a batch".into()));
        }
        let mut tensors = Vec::with_capacity(self.tensors.len() + other.tensors.len());
        let mut nodes = Vec::with_capacity(self.nodes.len() + other.nodes.len());
        for (prefix, t) in [("a.", self), ("b.", other)] {
            let rename = |s: &String| format!("{prefix}{s}");
            tensors.extend(t.tensors.iter().map(|ts| TensorSpec {
                id: rename(&ts.id),
                ..ts.clone()
            }));
            nodes.extend(t.nodes.iter().map(|n| OperatorNode {
                id: rename(&n.id),
                op: n.op.clone(),
                inputs: n.inputs.iter().map(rename).collect(),
                outputs: n.outputs.iter().map(rename).collect(),
                dtype: n.dtype,
            }));
        }
        Trace::new(
            TraceHeader {
                name: name.into(),
                mode: self.mode(),
                batch: self.batch(),
                seq_len: self.header.seq_len,
            },
            tensors,
            nodes,
        )
    }
}

/// Incremental construction of traces with generated ids.
#[derive(Debug)]
pub struct TraceBuilder {
    header: TraceHeader,
    tensors: Vec<TensorSpec>,
    nodes: Vec<OperatorNode>,
}

impl TraceBuilder {
    pub fn new(name: impl Into<String>, mode: Mode, batch: u64) -> Self {
        Self {
            header: TraceHeader {
                name: name.into(),
                mode,
                batch,
                seq_len: None,
            },
            tensors: Vec::new(),
            nodes: Vec::new(),
        }
    }

    pub fn from_trace(trace: &Trace) -> Self {
        Self {
            header: trace.header.clone(),
            tensors: trace.tensors.clone(),
            nodes: trace.nodes.clone(),
        }
    }

    pub fn seq_len(mut self, len: u64) -> Self {
        self.header.seq_len = Some(len);
        self
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.header.mode = mode;
    }

    pub fn set_name(&mut self, name: impl Into<String>) {
        self.header.name = name.into();
    }

    pub fn tensor(&mut self, dims: &[u64], layout: &str, dtype: DataType, role: TensorRole) -> String {
        let id = format!("t{}", self.tensors.len());
        self.tensors.push(TensorSpec {
            id: id.clone(),
            dims: dims.to_vec(),
            layout: layout.to_string(),
            dtype,
            role,
        });
        id
    }

    pub fn activation(&mut self, dims: &[u64], layout: &str, dtype: DataType) -> String {
        self.tensor(dims, layout, dtype, TensorRole::Activation)
    }

    pub fn weight(&mut self, dims: &[u64], layout: &str, dtype: DataType) -> String {
        self.tensor(dims, layout, dtype, TensorRole::Weight)
    }

    pub fn node(&mut self, op: OpKind, inputs: &[&str], outputs: &[&str], dtype: DataType) -> String {
        let id = format!("n{}", self.nodes.len());
        self.nodes.push(OperatorNode {
            id: id.clone(),
            op,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
            dtype,
        });
        id
    }

    pub fn tensor_spec(&self, id: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.id == id)
    }

    pub fn build(self) -> Result<Trace> {
        Trace::new(self.header, self.tensors, self.nodes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{ElementwiseParams, MatMulParams};

    fn tiny() -> TraceBuilder {
        let mut b = TraceBuilder::new("tiny", Mode::Inference, 1);
        let x = b.tensor(&[4, 8], "MK", DataType::Int8, TensorRole::Input);
        let w = b.weight(&[8, 16], "KN", DataType::Int8);
        let y = b.activation(&[4, 16], "MN", DataType::Int8);
        b.node(OpKind::MatMul(MatMulParams::new(4, 16, 8)), &[&x, &w], &[&y], DataType::Int8);
        b
    }

    #[test]
    fn json_round_trip_preserves_structure() {
        let t = tiny().build().unwrap();
        let back = Trace::from_json(&t.to_json()).unwrap();
        assert_eq!(back.nodes(), t.nodes());
        assert_eq!(back.tensors(), t.tensors());
        assert_eq!(back.header(), t.header());
    }

    #[test]
    fn empty_node_list_is_valid() {
        let text = r#"{"version":1,"header":{"name":"e","mode":"inference","batch":1},"tensors":[],"nodes":[]}"#;
        let t = Trace::from_json(text).unwrap();
        assert_eq!(t.nodes().len(), 0);
        assert_eq!(t.total_ops(), 0);
    }

    #[test]
    fn dangling_reference_is_rejected() {
        let mut b = tiny();
        let y = b.activation(&[4, 16], "MN", DataType::Int8);
        b.node(
            OpKind::Elementwise(ElementwiseParams::new("Relu", 64, 1)),
            &["t9"],
            &[&y],
            DataType::Int8,
        );
        match b.build() {
            Err(Error::DanglingTensor { tensor, .. }) => assert_eq!(tensor, "t9"),
            other => panic!("expected dangling error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_order_consumer_is_rejected() {
        let mut b = TraceBuilder::new("order", Mode::Inference, 1);
        let a = b.activation(&[16], "C", DataType::Int8);
        let c = b.activation(&[16], "C", DataType::Int8);
        let d = b.activation(&[16], "C", DataType::Int8);
        let relu = |n| OpKind::Elementwise(ElementwiseParams::new("Relu", n, 1));
        b.node(relu(16), &[&c], &[&d], DataType::Int8);
        b.node(relu(16), &[&a], &[&c], DataType::Int8);
        assert!(matches!(b.build(), Err(Error::NotTopological { .. })));
    }

    #[test]
    fn missing_version_and_bad_version() {
        let no_version = r#"{"header":{"name":"e","mode":"inference","batch":1},"tensors":[],"nodes":[]}"#;
        assert!(matches!(Trace::from_json(no_version), Err(Error::Parse { .. })));
        let v2 = r#"{"version":2,"header":{"name":"e","mode":"inference","batch":1},"tensors":[],"nodes":[]}"#;
        assert!(matches!(Trace::from_json(v2), Err(Error::Version { found: 2, .. })));
        assert!(matches!(Trace::from_json("{not json"), Err(Error::Parse { .. })));
    }

    #[test]
    fn double_producer_is_rejected() {
        let mut b = tiny();
        let relu = OpKind::Elementwise(ElementwiseParams::new("Relu", 64, 1));
        b.node(relu, &["t0"], &["t2"], DataType::Int8);
        assert!(matches!(b.build(), Err(Error::DuplicateProducer { .. })));
    }
}
