//! Shape-level dataflow graphs for the two-pronged feature pyramid.
//!
//! Each T block aggregates level `l` with upsampled copies of levels `l+1`
//! and `l+2`:
//!
//! ```text
//! k1   = X_l  + align(up(X_{l+1}))
//! k2   = X_l* + align(up(X_{l+2}))
//! out  = relu(concat(k1, k2))
//! X_{l+1}* = conv_s2(out)          (forward transfer into block l+1)
//! ```
//!
//! The fusion block then walks the block outputs top-down with
//! upsample + element-wise sum. Every node carries its resolved shape, and
//! [`validate`] re-derives all of them from scratch.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TensorShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl TensorShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.channels >= 1 && self.height >= 1 && self.width >= 1
    }

    pub fn same_spatial(&self, other: &TensorShape) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Element count, saturating at `usize::MAX`.
    pub fn numel(&self) -> usize {
        self.channels.saturating_mul(self.height).saturating_mul(self.width)
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.channels, self.height, self.width)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeMismatch {
    pub node: String,
    pub reason: String,
    pub inputs: Vec<TensorShape>,
}

impl fmt::Display for ShapeMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "node `{}`: {}; inputs [", self.node, self.reason)?;
        for (i, s) in self.inputs.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{s}")?;
        }
        f.write_str("]")
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PyramidError {
    #[error("shape mismatch at {0}")]
    ShapeMismatch(ShapeMismatch),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("numeric failure at node `{node}`: {reason}")]
    NumericFailure { node: String, reason: String },
    #[error("level table parse error: {0}")]
    Parse(String),
}

impl From<ShapeMismatch> for PyramidError {
    fn from(m: ShapeMismatch) -> Self {
        PyramidError::ShapeMismatch(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Input(TensorShape),
    Conv {
        kernel: usize,
        stride: usize,
        padding: usize,
        out_channels: usize,
    },
    Upsample {
        height: usize,
        width: usize,
    },
    Sum,
    Concat,
    Relu,
}

impl Op {
    pub fn conv1x1(out_channels: usize) -> Self {
        Op::Conv {
            kernel: 1,
            stride: 1,
            padding: 0,
            out_channels,
        }
    }

    pub fn kind(&self) -> OpKind {
        match self {
            Op::Input(_) => OpKind::Input,
            Op::Conv { .. } => OpKind::Conv,
            Op::Upsample { .. } => OpKind::Upsample,
            Op::Sum => OpKind::Sum,
            Op::Concat => OpKind::Concat,
            Op::Relu => OpKind::Relu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Input,
    Conv,
    Upsample,
    Sum,
    Concat,
    Relu,
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            OpKind::Input => "INPUT",
            OpKind::Conv => "CONV",
            OpKind::Upsample => "UPSAMPLE",
            OpKind::Sum => "SUM",
            OpKind::Concat => "CONCAT",
            OpKind::Relu => "RELU",
        };
        f.write_str(s)
    }
}

/// Which part of the network a node belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    Backbone,
    TBlock(usize),
    ForwardTransfer(usize),
    Fusion,
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Group::Backbone => f.write_str("backbone"),
            Group::TBlock(l) => write!(f, "t{l}"),
            Group::ForwardTransfer(l) => write!(f, "ft{l}"),
            Group::Fusion => f.write_str("fusion"),
        }
    }
}

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub name: String,
    pub op: Op,
    pub inputs: Vec<NodeId>,
    pub group: Group,
    pub shape: TensorShape,
}

/// Output extent of a convolution along one axis, `None` if the window does
/// not fit.
fn conv_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = padding.checked_mul(2)?.checked_add(input)?;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Resolves the output shape of `op` applied to `inputs`.
fn infer(name: &str, op: &Op, inputs: &[TensorShape]) -> Result<TensorShape, ShapeMismatch> {
    let fail = |reason: String| ShapeMismatch {
        node: name.to_string(),
        reason,
        inputs: inputs.to_vec(),
    };
    let arity = |n: usize| -> Result<(), ShapeMismatch> {
        if inputs.len() == n {
            Ok(())
        } else {
            Err(fail(format!("expects {n} input(s), got {}", inputs.len())))
        }
    };
    let out = match *op {
        Op::Input(shape) => {
            arity(0)?;
            shape
        }
        Op::Conv {
            kernel,
            stride,
            padding,
            out_channels,
        } => {
            arity(1)?;
            let s = inputs[0];
            let h = conv_extent(s.height, kernel, stride, padding);
            let w = conv_extent(s.width, kernel, stride, padding);
            match (h, w) {
                (Some(h), Some(w)) => TensorShape::new(out_channels, h, w),
                _ => {
                    return Err(fail(format!(
                        "conv k{kernel} s{stride} p{padding} does not fit the input"
                    )))
                }
            }
        }
        Op::Upsample { height, width } => {
            arity(1)?;
            let s = inputs[0];
            if height < s.height || width < s.width {
                return Err(fail(format!("upsample target {height}x{width} is smaller than the input")));
            }
            TensorShape::new(s.channels, height, width)
        }
        Op::Sum => {
            if inputs.len() < 2 {
                return Err(fail("SUM needs at least two inputs".into()));
            }
            if inputs.iter().any(|s| *s != inputs[0]) {
                return Err(fail("SUM inputs must have identical shapes".into()));
            }
            inputs[0]
        }
        Op::Concat => {
            if inputs.len() < 2 {
                return Err(fail("CONCAT needs at least two inputs".into()));
            }
            if inputs.iter().any(|s| !s.same_spatial(&inputs[0])) {
                return Err(fail("CONCAT inputs must share spatial dims".into()));
            }
            let channels = inputs
                .iter()
                .try_fold(0usize, |acc, s| acc.checked_add(s.channels))
                .ok_or_else(|| fail("CONCAT channel count overflows".into()))?;
            TensorShape::new(channels, inputs[0].height, inputs[0].width)
        }
        Op::Relu => {
            arity(1)?;
            inputs[0]
        }
    };
    if !out.is_valid() {
        return Err(fail(format!("resolved shape {out} has a zero extent")));
    }
    Ok(out)
}

/// A directed acyclic graph of tensor operations. Nodes may only consume
/// earlier nodes, so insertion order is a topological order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DataflowGraph {
    nodes: Vec<Node>,
}

impl DataflowGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> TensorShape {
        self.nodes[id].shape
    }

    pub fn input(&mut self, name: impl Into<String>, shape: TensorShape) -> Result<NodeId, ShapeMismatch> {
        self.add(name, Op::Input(shape), &[], Group::Backbone)
    }

    /// Appends a node after resolving its shape.
    pub fn add(
        &mut self,
        name: impl Into<String>,
        op: Op,
        inputs: &[NodeId],
        group: Group,
    ) -> Result<NodeId, ShapeMismatch> {
        let name = name.into();
        if let Some(&bad) = inputs.iter().find(|&&i| i >= self.nodes.len()) {
            return Err(ShapeMismatch {
                node: name,
                reason: format!("input {bad} does not precede this node"),
                inputs: vec![],
            });
        }
        let shapes: Vec<TensorShape> = inputs.iter().map(|&i| self.nodes[i].shape).collect();
        let shape = infer(&name, &op, &shapes)?;
        self.nodes.push(Node {
            name,
            op,
            inputs: inputs.to_vec(),
            group,
            shape,
        });
        Ok(self.nodes.len() - 1)
    }

    /// Points input `slot` of `node` at `source` without re-resolving shapes.
    /// Used to inject faults for [`validate`].
    pub fn rewire(&mut self, node: NodeId, slot: usize, source: NodeId) {
        self.nodes[node].inputs[slot] = source;
    }

    /// Number of nodes of each kind inside `group`.
    pub fn census(&self, group: Group) -> BTreeMap<OpKind, usize> {
        let mut out = BTreeMap::new();
        for n in self.nodes.iter().filter(|n| n.group == group) {
            *out.entry(n.op.kind()).or_insert(0) += 1;
        }
        out
    }

    pub fn shape_table(&self) -> String {
        let mut s = format!(
            "{:>4}  {:<28} {:<9} {:<9} {:>8} {:>6} {:>6}\n",
            "id", "name", "op", "group", "channels", "height", "width"
        );
        for (i, n) in self.nodes.iter().enumerate() {
            let _ = writeln!(
                s,
                "{:>4}  {:<28} {:<9} {:<9} {:>8} {:>6} {:>6}",
                i,
                n.name,
                n.op.kind().to_string(),
                n.group.to_string(),
                n.shape.channels,
                n.shape.height,
                n.shape.width
            );
        }
        s
    }
}

/// Re-checks every node against its inputs' recorded shapes.
pub fn validate(g: &DataflowGraph) -> Vec<ShapeMismatch> {
    let mut problems = Vec::new();
    for (id, node) in g.nodes.iter().enumerate() {
        if let Some(&bad) = node.inputs.iter().find(|&&i| i >= id) {
            problems.push(ShapeMismatch {
                node: node.name.clone(),
                reason: format!("input {bad} does not precede this node (cycle or forward reference)"),
                inputs: vec![],
            });
            continue;
        }
        let shapes: Vec<TensorShape> = node.inputs.iter().map(|&i| g.nodes[i].shape).collect();
        match infer(&node.name, &node.op, &shapes) {
            Ok(s) if s == node.shape => {}
            Ok(s) => problems.push(ShapeMismatch {
                node: node.name.clone(),
                reason: format!("recorded shape {} but inputs resolve to {s}", node.shape),
                inputs: shapes,
            }),
            Err(m) => problems.push(m),
        }
    }
    problems
}

/// Backbone feature shapes, lowest stride first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelSpec {
    levels: Vec<TensorShape>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LevelFile {
    levels: Vec<[usize; 3]>,
}

impl LevelSpec {
    pub fn new(levels: Vec<TensorShape>) -> Result<Self, PyramidError> {
        if levels.is_empty() {
            return Err(PyramidError::Precondition("level table is empty".into()));
        }
        if let Some(s) = levels.iter().find(|s| !s.is_valid()) {
            return Err(PyramidError::Precondition(format!("level shape {s} has a zero extent")));
        }
        for pair in levels.windows(2) {
            if pair[1].height > pair[0].height || pair[1].width > pair[0].width {
                return Err(PyramidError::Precondition(format!(
                    "spatial dims must not increase along the table: {} then {}",
                    pair[0], pair[1]
                )));
            }
        }
        Ok(Self { levels })
    }

    /// Parses `levels = [[channels, height, width], ...]`.
    pub fn from_toml_str(s: &str) -> Result<Self, PyramidError> {
        let file: LevelFile = toml::from_str(s).map_err(|e| PyramidError::Parse(e.to_string()))?;
        Self::new(
            file.levels
                .into_iter()
                .map(|[c, h, w]| TensorShape::new(c, h, w))
                .collect(),
        )
    }

    /// ResNet-50 stage widths plus three extra levels, strides 4 through 256.
    pub fn resnet50_like(input_size: usize) -> Result<Self, PyramidError> {
        if input_size == 0 {
            return Err(PyramidError::Precondition("input size must be positive".into()));
        }
        const STRIDES: [usize; 7] = [4, 8, 16, 32, 64, 128, 256];
        const CHANNELS: [usize; 7] = [256, 512, 1024, 2048, 512, 256, 256];
        Self::new(
            STRIDES
                .iter()
                .zip(CHANNELS)
                .map(|(&s, c)| {
                    let side = input_size.div_ceil(s);
                    TensorShape::new(c, side, side)
                })
                .collect(),
        )
    }

    /// Uniformly shrinks channels to at most `max_channels` and spatial dims
    /// to at most `max_spatial`, rounding up so the stride-2 chain between
    /// adjacent levels is preserved.
    pub fn downscaled(&self, max_channels: usize, max_spatial: usize) -> Result<Self, PyramidError> {
        if max_channels == 0 || max_spatial == 0 {
            return Err(PyramidError::Precondition("downscale limits must be positive".into()));
        }
        let top_c = self.levels.iter().map(|s| s.channels).max().unwrap_or(1);
        let top_hw = self.levels.iter().map(|s| s.height.max(s.width)).max().unwrap_or(1);
        let factor = top_hw.div_ceil(max_spatial);
        Self::new(
            self.levels
                .iter()
                .map(|s| {
                    let channels = (s.channels as u128 * max_channels as u128).div_ceil(top_c as u128);
                    TensorShape::new(
                        (channels as usize).max(1),
                        s.height.div_ceil(factor),
                        s.width.div_ceil(factor),
                    )
                })
                .collect(),
        )
    }

    pub fn levels(&self) -> &[TensorShape] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

/// Configuration of the forward-transfer convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardConv {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Default for ForwardConv {
    fn default() -> Self {
        Self {
            kernel: 3,
            stride: 2,
            padding: 1,
        }
    }
}

/// Node handles of one T block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TBlock {
    pub level: usize,
    /// The `X_l*` node consumed by the second aggregation.
    pub forward_in: NodeId,
    pub k1: NodeId,
    pub k2: NodeId,
    /// Concatenated and activated output, `X_out^l`.
    pub out: NodeId,
}

/// Adds the T block for level `l`. `levels` holds the backbone input nodes;
/// `forward_in` is the previous block's forward transfer, or `None` for the
/// first block, which derives `X_l*` from `X_l` with a 1x1 conv.
pub fn build_tblock(
    g: &mut DataflowGraph,
    levels: &[NodeId],
    l: usize,
    forward_in: Option<NodeId>,
) -> Result<TBlock, PyramidError> {
    if l + 2 >= levels.len() {
        return Err(PyramidError::Precondition(format!(
            "T block {l} needs levels {l}, {} and {}, but only {} exist",
            l + 1,
            l + 2,
            levels.len()
        )));
    }
    let group = Group::TBlock(l);
    let x = levels[l];
    let target = g.shape(x);
    let up = Op::Upsample {
        height: target.height,
        width: target.width,
    };

    let up1 = g.add(format!("t{l}.up_l{}", l + 1), up, &[levels[l + 1]], group)?;
    let align1 = g.add(format!("t{l}.align_l{}", l + 1), Op::conv1x1(target.channels), &[up1], group)?;
    let k1 = g.add(format!("t{l}.k1_sum"), Op::Sum, &[x, align1], group)?;

    let star = match forward_in {
        Some(id) => id,
        None => g.add(format!("t{l}.x_star"), Op::conv1x1(target.channels), &[x], group)?,
    };
    let up2 = g.add(format!("t{l}.up_l{}", l + 2), up, &[levels[l + 2]], group)?;
    let align2 = g.add(format!("t{l}.align_l{}", l + 2), Op::conv1x1(target.channels), &[up2], group)?;
    let k2 = g.add(format!("t{l}.k2_sum"), Op::Sum, &[star, align2], group)?;

    let cat = g.add(format!("t{l}.concat"), Op::Concat, &[k1, k2], group)?;
    let out = g.add(format!("t{l}.relu"), Op::Relu, &[cat], group)?;
    Ok(TBlock {
        level: l,
        forward_in: star,
        k1,
        k2,
        out,
    })
}

/// Adds the forward-transfer conv taking `x_out` to `next_level`'s shape.
/// Tries the configured strided conv first, then a stride-1 conv when the
/// spatial dims already agree.
pub fn build_forward_transfer(
    g: &mut DataflowGraph,
    x_out: NodeId,
    next_level: TensorShape,
    conv: ForwardConv,
    group: Group,
) -> Result<NodeId, PyramidError> {
    let src = g.shape(x_out);
    let candidates = [conv, ForwardConv { stride: 1, ..conv }];
    for c in candidates {
        let h = conv_extent(src.height, c.kernel, c.stride, c.padding);
        let w = conv_extent(src.width, c.kernel, c.stride, c.padding);
        if h == Some(next_level.height) && w == Some(next_level.width) {
            let name = format!("{group}.forward_conv");
            let op = Op::Conv {
                kernel: c.kernel,
                stride: c.stride,
                padding: c.padding,
                out_channels: next_level.channels,
            };
            return Ok(g.add(name, op, &[x_out], group)?);
        }
    }
    Err(ShapeMismatch {
        node: format!("{group}.forward_conv"),
        reason: format!(
            "no conv (k{}, p{}, stride {} or 1) maps {src} onto {next_level}",
            conv.kernel, conv.padding, conv.stride
        ),
        inputs: vec![src, next_level],
    }
    .into())
}

/// Builds a standalone graph holding one T block, with backbone inputs for
/// every level and an optional external `X_l*` input.
pub fn tblock_graph(
    levels: &LevelSpec,
    l: usize,
    forward_in: Option<TensorShape>,
) -> Result<(DataflowGraph, TBlock), PyramidError> {
    let mut g = DataflowGraph::new();
    let ids = backbone_inputs(&mut g, levels)?;
    let star = match forward_in {
        Some(s) => Some(g.input(format!("x_star{l}"), s)?),
        None => None,
    };
    let block = build_tblock(&mut g, &ids, l, star)?;
    Ok((g, block))
}

/// Builds a standalone graph holding one forward transfer.
pub fn forward_transfer_graph(
    x_out: TensorShape,
    next_level: TensorShape,
) -> Result<DataflowGraph, PyramidError> {
    let mut g = DataflowGraph::new();
    let src = g.input("x_out", x_out)?;
    build_forward_transfer(&mut g, src, next_level, ForwardConv::default(), Group::ForwardTransfer(0))?;
    Ok(g)
}

fn backbone_inputs(g: &mut DataflowGraph, levels: &LevelSpec) -> Result<Vec<NodeId>, PyramidError> {
    levels
        .levels()
        .iter()
        .enumerate()
        .map(|(i, &s)| Ok(g.input(format!("level{i}"), s)?))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TpnetOptions {
    /// Channel width of every fused pyramid level.
    pub pyramid_channels: usize,
    pub forward_conv: ForwardConv,
}

impl Default for TpnetOptions {
    fn default() -> Self {
        Self {
            pyramid_channels: 256,
            forward_conv: ForwardConv::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tpnet {
    pub graph: DataflowGraph,
    pub blocks: Vec<TBlock>,
    /// `forward[l]` feeds block `l + 1`.
    pub forward: Vec<NodeId>,
    /// Final pyramid, finest level first.
    pub pyramid: Vec<NodeId>,
}

impl Tpnet {
    /// Each forward transfer's output is exactly the `X*` consumed by the
    /// next block, with the same shape.
    pub fn forward_chain_consistent(&self) -> bool {
        self.forward.iter().enumerate().all(|(l, &ft)| {
            let next = &self.blocks[l + 1];
            let k2 = self.graph.node(next.k2);
            next.forward_in == ft && k2.inputs[0] == ft && self.graph.shape(ft) == self.graph.shape(k2.inputs[1])
        })
    }

    pub fn pyramid_shapes(&self) -> Vec<TensorShape> {
        self.pyramid.iter().map(|&id| self.graph.shape(id)).collect()
    }
}

/// Chains `num_t_blocks` T blocks with forward transfer and finishes with the
/// top-down fusion block.
pub fn build_tpnet(
    levels: &LevelSpec,
    num_t_blocks: usize,
    opts: TpnetOptions,
) -> Result<Tpnet, PyramidError> {
    if num_t_blocks == 0 {
        return Err(PyramidError::Precondition("at least one T block is required".into()));
    }
    if num_t_blocks + 2 > levels.len() {
        return Err(PyramidError::Precondition(format!(
            "{num_t_blocks} T blocks need {} levels, the table has {}",
            num_t_blocks + 2,
            levels.len()
        )));
    }
    let mut g = DataflowGraph::new();
    let inputs = backbone_inputs(&mut g, levels)?;

    let mut blocks = Vec::with_capacity(num_t_blocks);
    let mut forward = Vec::with_capacity(num_t_blocks - 1);
    let mut carry = None;
    for l in 0..num_t_blocks {
        let block = build_tblock(&mut g, &inputs, l, carry)?;
        if l + 1 < num_t_blocks {
            let ft = build_forward_transfer(
                &mut g,
                block.out,
                levels.levels()[l + 1],
                opts.forward_conv,
                Group::ForwardTransfer(l),
            )?;
            forward.push(ft);
            carry = Some(ft);
        }
        blocks.push(block);
    }

    // lateral 1x1 convs: each block's augmented output, plus the first level
    // above the last block
    let width = opts.pyramid_channels;
    let mut laterals = Vec::with_capacity(num_t_blocks + 1);
    for b in &blocks {
        let name = format!("t{}.augment", b.level);
        laterals.push(g.add(name, Op::conv1x1(width), &[b.out], Group::TBlock(b.level))?);
    }
    laterals.push(g.add(
        format!("fusion.lateral_l{num_t_blocks}"),
        Op::conv1x1(width),
        &[inputs[num_t_blocks]],
        Group::Fusion,
    )?);

    let mut fused = vec![0; laterals.len()];
    let top = laterals.len() - 1;
    fused[top] = laterals[top];
    for l in (0..top).rev() {
        let target = g.shape(laterals[l]);
        let up = g.add(
            format!("fusion.up{}", l + 1),
            Op::Upsample {
                height: target.height,
                width: target.width,
            },
            &[fused[l + 1]],
            Group::Fusion,
        )?;
        fused[l] = g.add(format!("fusion.p{l}"), Op::Sum, &[laterals[l], up], Group::Fusion)?;
    }

    Ok(Tpnet {
        graph: g,
        blocks,
        forward,
        pyramid: fused,
    })
}

/// Dense activations with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f64 {
        &mut self.data[(c * self.height + y) * self.width + x]
    }

    pub fn shape(&self) -> TensorShape {
        TensorShape::new(self.channels, self.height, self.width)
    }
}

fn conv2d(input: &Tensor, weights: &[f64], kernel: usize, stride: usize, padding: usize, out_c: usize) -> Tensor {
    // count window positions directly rather than reusing the shape formula
    let positions = |extent: usize| {
        let mut n = 0;
        while n * stride + kernel <= extent + 2 * padding {
            n += 1;
        }
        n
    };
    let (oh, ow) = (positions(input.height), positions(input.width));
    let mut out = Tensor::zeros(out_c, oh, ow);
    let in_c = input.channels;
    for o in 0..out_c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for i in 0..in_c {
                    for ky in 0..kernel {
                        let y = (oy * stride + ky) as isize - padding as isize;
                        if y < 0 || y >= input.height as isize {
                            continue;
                        }
                        for kx in 0..kernel {
                            let x = (ox * stride + kx) as isize - padding as isize;
                            if x < 0 || x >= input.width as isize {
                                continue;
                            }
                            let w = weights[((o * in_c + i) * kernel + ky) * kernel + kx];
                            acc += w * input.at(i, y as usize, x as usize);
                        }
                    }
                }
                *out.at_mut(o, oy, ox) = acc;
            }
        }
    }
    out
}

fn upsample_nearest(input: &Tensor, height: usize, width: usize) -> Tensor {
    let mut out = Tensor::zeros(input.channels, height, width);
    for c in 0..input.channels {
        for y in 0..height {
            let sy = y * input.height / height;
            for x in 0..width {
                let sx = x * input.width / width;
                *out.at_mut(c, y, x) = input.at(c, sy, sx);
            }
        }
    }
    out
}

/// Per-node digest of a smoke run.
#[derive(Debug, Clone, PartialEq)]
pub struct SmokeReport {
    pub rows: Vec<SmokeRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmokeRow {
    pub name: String,
    pub shape: TensorShape,
    pub sum: f64,
    pub abs_sum: f64,
}

impl SmokeReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("node,name,channels,height,width,sum,abs_sum\n");
        for (i, r) in self.rows.iter().enumerate() {
            let _ = writeln!(
                s,
                "{i},{},{},{},{},{},{}",
                r.name, r.shape.channels, r.shape.height, r.shape.width, r.sum, r.abs_sum
            );
        }
        s
    }
}

/// Largest tensor the smoke run accepts at any node.
pub const SMOKE_MAX_ELEMENTS: usize = 16 * 16 * 16;

/// Executes `g` with seeded random inputs and weights.
pub fn forward_smoke(g: &DataflowGraph, seed: u64) -> Result<SmokeReport, PyramidError> {
    forward_smoke_with(g, seed, |_, _| {})
}

/// Like [`forward_smoke`], but `tamper` may edit each conv's weights before
/// they are applied.
pub fn forward_smoke_with<F>(g: &DataflowGraph, seed: u64, mut tamper: F) -> Result<SmokeReport, PyramidError>
where
    F: FnMut(NodeId, &mut [f64]),
{
    let problems = validate(g);
    if let Some(first) = problems.into_iter().next() {
        return Err(first.into());
    }
    if let Some(n) = g.nodes().iter().find(|n| n.shape.numel() > SMOKE_MAX_ELEMENTS) {
        return Err(PyramidError::Precondition(format!(
            "node `{}` has shape {}; down-scale the graph before a smoke run",
            n.name, n.shape
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values: Vec<Tensor> = Vec::with_capacity(g.len());
    let mut rows = Vec::with_capacity(g.len());
    for (id, node) in g.nodes().iter().enumerate() {
        let arg = |k: usize| &values[node.inputs[k]];
        let out = match node.op {
            Op::Input(s) => {
                let mut t = Tensor::zeros(s.channels, s.height, s.width);
                t.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
                t
            }
            Op::Conv {
                kernel,
                stride,
                padding,
                out_channels,
            } => {
                let input = arg(0);
                let fan_in = input.channels * kernel * kernel;
                let bound = 1.0 / (fan_in as f64).sqrt();
                let mut w: Vec<f64> = (0..out_channels * fan_in).map(|_| rng.gen_range(-bound..bound)).collect();
                tamper(id, &mut w);
                conv2d(input, &w, kernel, stride, padding, out_channels)
            }
            Op::Upsample { height, width } => upsample_nearest(arg(0), height, width),
            Op::Sum => {
                let mut t = arg(0).clone();
                for k in 1..node.inputs.len() {
                    for (a, b) in t.data.iter_mut().zip(&arg(k).data) {
                        *a += b;
                    }
                }
                t
            }
            Op::Concat => {
                let first = arg(0);
                let channels = node.inputs.iter().map(|&i| values[i].channels).sum();
                let mut t = Tensor {
                    channels,
                    height: first.height,
                    width: first.width,
                    data: Vec::with_capacity(channels * first.height * first.width),
                };
                for &i in &node.inputs {
                    t.data.extend_from_slice(&values[i].data);
                }
                t
            }
            Op::Relu => {
                let mut t = arg(0).clone();
                t.data.iter_mut().for_each(|v| *v = v.max(0.0));
                t
            }
        };

        let fail = |reason: String| PyramidError::NumericFailure {
            node: node.name.clone(),
            reason,
        };
        if out.shape() != node.shape {
            return Err(fail(format!("computed shape {} but graph records {}", out.shape(), node.shape)));
        }
        if let Some(v) = out.data.iter().find(|v| !v.is_finite()) {
            return Err(fail(format!("non-finite value {v}")));
        }
        if node.op == Op::Relu && out.data.iter().any(|&v| v < 0.0) {
            return Err(fail("negative RELU output".into()));
        }
        rows.push(SmokeRow {
            name: node.name.clone(),
            shape: out.shape(),
            sum: out.data.iter().sum(),
            abs_sum: out.data.iter().map(|v| v.abs()).sum(),
        });
        values.push(out);
    }
    Ok(SmokeReport { rows })
}
