//! Lowering of a [`FrozenModel`] to a gate-level netlist, a functional
//! interpreter for it, and SystemVerilog emission.
//!
//! Wire ids `0..input_width` are the input bits; every node appends its
//! output wires after that, so "defined before use" is `input < first output`.
//!
//! Pipeline boundaries, in order: after each LUT layer, after the popcount
//! trees, after the argmax. `pipeline_stages = k` registers the first `k`.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::BitVector;
use crate::infer::FrozenModel;
use crate::model::MAX_ARITY;

pub type WireId = u32;

#[derive(Debug, Error, PartialEq)]
pub enum RtlError {
    #[error("LUT arity {0} exceeds {MAX_ARITY}")]
    Arity(usize),
    #[error("pipeline_stages {requested} exceeds the {available} available boundaries")]
    Stages { requested: usize, available: usize },
    #[error("node {node}: {message}")]
    Structure { node: usize, message: String },
    #[error("`{0}` is not a valid module identifier")]
    Identifier(String),
    #[error("input has {got} bits, netlist expects {expected}")]
    Width { expected: usize, got: usize },
}

/// Class index operand of a comparator: a constant leaf index or a wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IndexSrc {
    Const(u32),
    Wire(WireId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    /// `inputs[0]` is the address LSB; one output bit.
    Lut { inputs: Vec<WireId>, truth: Vec<bool> },
    /// Unsigned sum; output one bit wider than the wider operand.
    Add { a: WireId, b: WireId },
    /// Clocked copy of `input`.
    Register { input: WireId },
    /// Outputs `(score, index)`: `b` side iff `b_score > a_score`.
    Compare {
        a_score: WireId,
        a_index: IndexSrc,
        b_score: WireId,
        b_index: IndexSrc,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub kind: NodeKind,
    pub outputs: Vec<WireId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Netlist {
    input_width: usize,
    /// Bit width per wire, inputs included.
    widths: Vec<u32>,
    nodes: Vec<Node>,
    scores: Vec<WireId>,
    label: IndexSrc,
    label_width: u32,
    pipeline_stages: usize,
}

/// Node totals by kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeCounts {
    pub luts: usize,
    pub adders: usize,
    pub registers: usize,
    pub comparators: usize,
}

impl NodeCounts {
    pub fn total(&self) -> usize {
        self.luts + self.adders + self.registers + self.comparators
    }
}

impl fmt::Display for NodeCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "lut         {}", self.luts)?;
        writeln!(f, "adder       {}", self.adders)?;
        writeln!(f, "register    {}", self.registers)?;
        writeln!(f, "comparator  {}", self.comparators)?;
        write!(f, "total       {}", self.total())
    }
}

impl Netlist {
    pub fn input_width(&self) -> usize {
        self.input_width
    }
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }
    pub fn wire_width(&self, wire: WireId) -> u32 {
        self.widths[wire as usize]
    }
    pub fn num_wires(&self) -> usize {
        self.widths.len()
    }
    pub fn scores(&self) -> &[WireId] {
        &self.scores
    }
    pub fn label(&self) -> IndexSrc {
        self.label
    }
    pub fn label_width(&self) -> u32 {
        self.label_width
    }
    pub fn pipeline_stages(&self) -> usize {
        self.pipeline_stages
    }

    pub fn counts(&self) -> NodeCounts {
        let mut c = NodeCounts::default();
        for n in &self.nodes {
            match n.kind {
                NodeKind::Lut { .. } => c.luts += 1,
                NodeKind::Add { .. } => c.adders += 1,
                NodeKind::Register { .. } => c.registers += 1,
                NodeKind::Compare { .. } => c.comparators += 1,
            }
        }
        c
    }

    /// Structural check: topological order, operand widths, truth sizes.
    pub fn validate(&self) -> Result<(), RtlError> {
        let mut next = self.input_width as WireId;
        if self.widths.len() < self.input_width || self.widths[..self.input_width].iter().any(|&w| w != 1) {
            return Err(RtlError::Structure {
                node: 0,
                message: "input wires must be single bits".into(),
            });
        }
        for (i, node) in self.nodes.iter().enumerate() {
            let err = |message: String| RtlError::Structure { node: i, message };
            let defined = |w: WireId| w < next;
            let expected_outputs = match &node.kind {
                NodeKind::Lut { inputs, truth } => {
                    if inputs.is_empty() || inputs.len() > MAX_ARITY {
                        return Err(RtlError::Arity(inputs.len()));
                    }
                    if truth.len() != 1 << inputs.len() {
                        return Err(err(format!("{} truth bits for arity {}", truth.len(), inputs.len())));
                    }
                    if let Some(w) = inputs.iter().find(|&&w| !defined(w) || self.widths[w as usize] != 1) {
                        return Err(err(format!("LUT input wire {w} undefined or not a single bit")));
                    }
                    1
                }
                NodeKind::Add { a, b } => {
                    if !defined(*a) || !defined(*b) {
                        return Err(err("adder operand used before definition".into()));
                    }
                    1
                }
                NodeKind::Register { input } => {
                    if !defined(*input) {
                        return Err(err("register input used before definition".into()));
                    }
                    1
                }
                NodeKind::Compare {
                    a_score,
                    a_index,
                    b_score,
                    b_index,
                } => {
                    let idx_ok = |s: &IndexSrc| match s {
                        IndexSrc::Const(_) => true,
                        IndexSrc::Wire(w) => defined(*w),
                    };
                    if !defined(*a_score) || !defined(*b_score) || !idx_ok(a_index) || !idx_ok(b_index) {
                        return Err(err("comparator operand used before definition".into()));
                    }
                    2
                }
            };
            if node.outputs.len() != expected_outputs
                || node.outputs.iter().enumerate().any(|(k, &w)| w != next + k as WireId)
            {
                return Err(err("outputs must be the next sequential wire ids".into()));
            }
            next += expected_outputs as WireId;
        }
        if next as usize != self.widths.len() {
            return Err(RtlError::Structure {
                node: self.nodes.len(),
                message: format!("{} wires declared, {next} defined", self.widths.len()),
            });
        }
        let label_ok = match self.label {
            IndexSrc::Const(_) => true,
            IndexSrc::Wire(w) => w < next,
        };
        if !label_ok || self.scores.iter().any(|&w| w >= next) {
            return Err(RtlError::Structure {
                node: self.nodes.len(),
                message: "output refers to an undefined wire".into(),
            });
        }
        Ok(())
    }
}

struct Builder {
    widths: Vec<u32>,
    nodes: Vec<Node>,
}

impl Builder {
    fn push(&mut self, kind: NodeKind, out_widths: &[u32]) -> Vec<WireId> {
        let first = self.widths.len() as WireId;
        let outputs: Vec<WireId> = (0..out_widths.len() as WireId).map(|k| first + k).collect();
        self.widths.extend_from_slice(out_widths);
        self.nodes.push(Node { kind, outputs: outputs.clone() });
        outputs
    }

    fn register(&mut self, w: WireId) -> WireId {
        let width = self.widths[w as usize];
        self.push(NodeKind::Register { input: w }, &[width])[0]
    }

    fn register_index(&mut self, s: IndexSrc) -> IndexSrc {
        match s {
            IndexSrc::Const(_) => s,
            IndexSrc::Wire(w) => IndexSrc::Wire(self.register(w)),
        }
    }

    /// Balanced binary adder tree over `leaves`; `len - 1` adders.
    fn adder_tree(&mut self, leaves: &[WireId]) -> WireId {
        if leaves.len() == 1 {
            return leaves[0];
        }
        let mid = leaves.len().div_ceil(2);
        let a = self.adder_tree(&leaves[..mid]);
        let b = self.adder_tree(&leaves[mid..]);
        let width = self.widths[a as usize].max(self.widths[b as usize]) + 1;
        self.push(NodeKind::Add { a, b }, &[width])[0]
    }

    /// Balanced comparator tree; the left (lower index) side wins ties.
    fn argmax_tree(&mut self, leaves: &[(WireId, IndexSrc)], label_width: u32) -> (WireId, IndexSrc) {
        if leaves.len() == 1 {
            return leaves[0];
        }
        let mid = leaves.len().div_ceil(2);
        let (a_score, a_index) = self.argmax_tree(&leaves[..mid], label_width);
        let (b_score, b_index) = self.argmax_tree(&leaves[mid..], label_width);
        let width = self.widths[a_score as usize].max(self.widths[b_score as usize]);
        let out = self.push(
            NodeKind::Compare {
                a_score,
                a_index,
                b_score,
                b_index,
            },
            &[width, label_width],
        );
        (out[0], IndexSrc::Wire(out[1]))
    }
}

/// Number of pipeline boundaries available for a model.
pub fn available_boundaries(model: &FrozenModel) -> usize {
    model.layers().len() + 2
}

/// Default staging: a register after every LUT layer and after the popcount.
pub fn default_pipeline_stages(model: &FrozenModel) -> usize {
    model.layers().len() + 1
}

pub fn lower(model: &FrozenModel, pipeline_stages: usize) -> Result<Netlist, RtlError> {
    let available = available_boundaries(model);
    if pipeline_stages > available {
        return Err(RtlError::Stages {
            requested: pipeline_stages,
            available,
        });
    }
    if let Some(l) = model.layers().iter().find(|l| l.arity() > MAX_ARITY) {
        return Err(RtlError::Arity(l.arity()));
    }
    let input_width = model.input_width();
    let mut b = Builder {
        widths: vec![1; input_width],
        nodes: Vec::new(),
    };
    let mut boundary = 0usize;
    let mut current: Vec<WireId> = (0..input_width as WireId).collect();
    for layer in model.layers() {
        let mut outs = Vec::with_capacity(layer.num_luts());
        for lut in 0..layer.num_luts() {
            let inputs = layer.lut_routing(lut).iter().map(|&s| current[s as usize]).collect();
            outs.push(b.push(
                NodeKind::Lut {
                    inputs,
                    truth: layer.lut_truth(lut),
                },
                &[1],
            )[0]);
        }
        if boundary < pipeline_stages {
            outs = outs.into_iter().map(|w| b.register(w)).collect();
        }
        boundary += 1;
        current = outs;
    }

    let k = model.num_classes();
    let g = model.group_size();
    let mut scores: Vec<WireId> = (0..k).map(|c| b.adder_tree(&current[c * g..(c + 1) * g])).collect();
    if boundary < pipeline_stages {
        scores = scores.into_iter().map(|w| b.register(w)).collect();
    }
    boundary += 1;

    let label_width = (usize::BITS - (k - 1).leading_zeros()).max(1);
    let leaves: Vec<(WireId, IndexSrc)> = scores
        .iter()
        .enumerate()
        .map(|(c, &w)| (w, IndexSrc::Const(c as u32)))
        .collect();
    let (_, mut label) = b.argmax_tree(&leaves, label_width);
    if boundary < pipeline_stages {
        label = b.register_index(label);
        scores = scores.into_iter().map(|w| b.register(w)).collect();
    }

    let netlist = Netlist {
        input_width,
        widths: b.widths,
        nodes: b.nodes,
        scores,
        label,
        label_width,
        pipeline_stages,
    };
    netlist.validate()?;
    Ok(netlist)
}

/// Functional evaluation; registers are transparent.
pub fn interpret(netlist: &Netlist, bits: &BitVector) -> Result<(usize, Vec<u64>), RtlError> {
    if bits.len() != netlist.input_width {
        return Err(RtlError::Width {
            expected: netlist.input_width,
            got: bits.len(),
        });
    }
    let mut v = vec![0u64; netlist.widths.len()];
    for i in 0..netlist.input_width {
        v[i] = bits.bit(i);
    }
    let idx = |v: &[u64], s: IndexSrc| match s {
        IndexSrc::Const(c) => c as u64,
        IndexSrc::Wire(w) => v[w as usize],
    };
    for node in &netlist.nodes {
        let o = node.outputs[0] as usize;
        match &node.kind {
            NodeKind::Lut { inputs, truth } => {
                let addr = inputs
                    .iter()
                    .enumerate()
                    .fold(0usize, |a, (j, &w)| a | ((v[w as usize] as usize) << j));
                v[o] = truth[addr] as u64;
            }
            NodeKind::Add { a, b } => v[o] = v[*a as usize] + v[*b as usize],
            NodeKind::Register { input } => v[o] = v[*input as usize],
            NodeKind::Compare {
                a_score,
                a_index,
                b_score,
                b_index,
            } => {
                let take_b = v[*b_score as usize] > v[*a_score as usize];
                let (s, i) = if take_b {
                    (v[*b_score as usize], idx(&v, *b_index))
                } else {
                    (v[*a_score as usize], idx(&v, *a_index))
                };
                v[o] = s;
                v[node.outputs[1] as usize] = i;
            }
        }
    }
    let label = idx(&v, netlist.label) as usize;
    Ok((label, netlist.scores.iter().map(|&w| v[w as usize]).collect()))
}

const KEYWORDS: &[&str] = &[
    "always", "always_comb", "always_ff", "assign", "begin", "case", "default", "else", "end", "endcase",
    "endmodule", "for", "function", "if", "initial", "input", "inout", "integer", "logic", "module",
    "negedge", "output", "parameter", "posedge", "reg", "wire",
];

fn valid_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '$')
        && !KEYWORDS.contains(&name)
}

fn decl(width: u32) -> String {
    if width == 1 {
        String::new()
    } else {
        format!("[{}:0] ", width - 1)
    }
}

/// Emits one synthesizable SystemVerilog module. Deterministic per netlist.
pub fn emit_verilog(netlist: &Netlist, module_name: &str) -> Result<String, RtlError> {
    if !valid_identifier(module_name) {
        return Err(RtlError::Identifier(module_name.to_string()));
    }
    netlist.validate()?;
    let n_in = netlist.input_width;
    let name = |w: WireId| -> String {
        if (w as usize) < n_in {
            format!("in_bits[{w}]")
        } else {
            format!("n{w}")
        }
    };
    let index = |s: IndexSrc| match s {
        IndexSrc::Const(c) => format!("{}'d{c}", netlist.label_width),
        IndexSrc::Wire(w) => name(w),
    };

    let mut s = String::new();
    let c = netlist.counts();
    writeln!(s, "// luts={} adders={} registers={} comparators={}", c.luts, c.adders, c.registers, c.comparators).unwrap();
    writeln!(s, "module {module_name} (").unwrap();
    writeln!(s, "    input  logic clk,").unwrap();
    writeln!(s, "    input  logic {}in_bits,", decl(n_in as u32)).unwrap();
    write!(s, "    output logic {}label", decl(netlist.label_width)).unwrap();
    for (i, &w) in netlist.scores.iter().enumerate() {
        write!(s, ",\n    output logic {}score_{i}", decl(netlist.widths[w as usize])).unwrap();
    }
    writeln!(s, "\n);").unwrap();

    for (w, &width) in netlist.widths.iter().enumerate().skip(n_in) {
        writeln!(s, "    logic {}n{w};", decl(width)).unwrap();
    }

    for node in &netlist.nodes {
        let o = name(node.outputs[0]);
        match &node.kind {
            NodeKind::Lut { inputs, truth } => {
                let n = inputs.len();
                let sel: Vec<String> = inputs.iter().rev().map(|&w| name(w)).collect();
                writeln!(s, "    always_comb begin").unwrap();
                writeln!(s, "        case ({{{}}})", sel.join(", ")).unwrap();
                for (u, &t) in truth.iter().enumerate() {
                    writeln!(s, "            {n}'d{u}: {o} = 1'b{};", t as u8).unwrap();
                }
                writeln!(s, "        endcase").unwrap();
                writeln!(s, "    end").unwrap();
            }
            NodeKind::Add { a, b } => {
                writeln!(s, "    assign {o} = {} + {};", name(*a), name(*b)).unwrap();
            }
            NodeKind::Register { input } => {
                writeln!(s, "    always_ff @(posedge clk) {o} <= {};", name(*input)).unwrap();
            }
            NodeKind::Compare {
                a_score,
                a_index,
                b_score,
                b_index,
            } => {
                let cond = format!("({} > {})", name(*b_score), name(*a_score));
                writeln!(s, "    assign {o} = {cond} ? {} : {};", name(*b_score), name(*a_score)).unwrap();
                writeln!(
                    s,
                    "    assign {} = {cond} ? {} : {};",
                    name(node.outputs[1]),
                    index(*b_index),
                    index(*a_index)
                )
                .unwrap();
            }
        }
    }

    writeln!(s, "    assign label = {};", index(netlist.label)).unwrap();
    for (i, &w) in netlist.scores.iter().enumerate() {
        writeln!(s, "    assign score_{i} = {};", name(w)).unwrap();
    }
    writeln!(s, "endmodule").unwrap();
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::infer::FrozenLayer;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn and_model() -> FrozenModel {
        let layer = FrozenLayer::new(2, 2, vec![0, 1], &[false, false, false, true]).unwrap();
        FrozenModel::new(2, vec![layer], 1, 1.0, None).unwrap()
    }

    fn random_model(width: usize, luts: usize, arity: usize, classes: usize, seed: u64) -> FrozenModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let routing = (0..luts * arity).map(|_| rng.random_range(0..width as u32)).collect();
        let bits: Vec<bool> = (0..luts << arity).map(|_| rng.random()).collect();
        let layer = FrozenLayer::new(arity, width, routing, &bits).unwrap();
        FrozenModel::new(width, vec![layer], classes, 1.0, None).unwrap()
    }

    #[test]
    fn one_lut_model_is_one_node() {
        let n = lower(&and_model(), 0).unwrap();
        assert_eq!(
            n.counts(),
            NodeCounts {
                luts: 1,
                ..Default::default()
            }
        );
        assert_eq!(n.label(), IndexSrc::Const(0));
        for (x, want) in [(0, 0), (1, 0), (2, 0), (3, 1)] {
            let (label, scores) = interpret(&n, &BitVector::from_u64(x, 2)).unwrap();
            assert_eq!((label, scores), (0, vec![want]));
        }
    }

    #[test]
    fn tree_size_arithmetic() {
        for (luts, k) in [(12, 3), (10, 5), (7, 7), (16, 2), (9, 1)] {
            let m = random_model(20, luts, 3, k, 1);
            let g = luts / k;
            let c = lower(&m, 0).unwrap().counts();
            assert_eq!(c.total(), luts + k * (g - 1) + (k - 1));
            assert_eq!(c.registers, 0);
        }
    }

    #[test]
    fn register_counts_per_stage() {
        let m = random_model(20, 12, 3, 3, 2);
        let c = |k| lower(&m, k).unwrap().counts().registers;
        assert_eq!(c(1), 12);
        assert_eq!(c(2), 12 + 3);
        assert_eq!(c(3), 12 + 3 + 3 + 1);
        assert_eq!(lower(&m, 4).unwrap_err(), RtlError::Stages { requested: 4, available: 3 });
    }

    #[test]
    fn interpret_matches_predict_across_stagings() {
        let m = random_model(8, 24, 4, 4, 3);
        for stages in 0..=3 {
            let n = lower(&m, stages).unwrap();
            for x in 0..256u64 {
                let bits = BitVector::from_u64(x, 8);
                let p = m.predict_bits(&bits).unwrap();
                let (label, scores) = interpret(&n, &bits).unwrap();
                assert_eq!(label, p.label);
                assert_eq!(scores, p.popcounts.iter().map(|&v| v as u64).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn emission_is_deterministic_and_contains_truth() {
        let n = lower(&and_model(), 0).unwrap();
        let a = emit_verilog(&n, "dwn_and").unwrap();
        assert_eq!(a, emit_verilog(&n, "dwn_and").unwrap());
        assert!(a.contains("2'd0: n2 = 1'b0;\n            2'd1: n2 = 1'b0;\n            2'd2: n2 = 1'b0;\n            2'd3: n2 = 1'b1;"));
    }

    #[test]
    fn bad_identifiers_rejected() {
        let n = lower(&and_model(), 0).unwrap();
        for bad in ["", "1abc", "a-b", "module", "x y"] {
            assert!(matches!(emit_verilog(&n, bad), Err(RtlError::Identifier(_))));
        }
        assert!(emit_verilog(&n, "_ok$1").is_ok());
    }

    #[test]
    fn validate_rejects_forward_reference() {
        let mut n = lower(&random_model(4, 4, 2, 2, 0), 0).unwrap();
        if let NodeKind::Lut { inputs, .. } = &mut n.nodes[0].kind {
            inputs[0] = 10;
        }
        assert!(matches!(n.validate(), Err(RtlError::Structure { node: 0, .. })));
    }

    #[test]
    fn line_count_scales_linearly() {
        let lines = |luts| {
            let n = lower(&random_model(64, luts, 4, 2, 7), 1).unwrap();
            (emit_verilog(&n, "m").unwrap().lines().count() as f64, n.counts().total() as f64)
        };
        let (l1, n1) = lines(100);
        let (l2, n2) = lines(1000);
        let (s1, s2) = (l1 / n1, l2 / n2);
        assert!((s2 / s1 - 1.0).abs() < 0.2, "{s1} vs {s2}");
    }
}
