use std::borrow::Cow;
use std::sync::Arc;

use super::tensor::{matmul, matmul_at, matmul_bt};
use super::{GradError, Tensor};

const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    MatMul { a: NodeId, b: NodeId, transpose_b: bool },
    Add { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { a: NodeId, factor: f64 },
    Softmax { a: NodeId, keep: Option<Arc<[bool]>> },
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId },
    Gelu { a: NodeId },
    Gather { table: NodeId, indices: Vec<usize> },
    Concat { parts: Vec<NodeId>, axis: Axis },
    Slice { a: NodeId, axis: Axis, start: usize, end: usize },
    CrossEntropy { logits: NodeId, target: Vec<f64>, keep: Option<Arc<[bool]>> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::MatMul { .. } => "matmul",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gelu { .. } => "gelu",
            Op::Gather { .. } => "gather",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Input => vec![],
            Op::MatMul { a, b, .. } | Op::Add { a, b } | Op::Mul { a, b } => vec![*a, *b],
            Op::Scale { a, .. } | Op::Softmax { a, .. } | Op::Gelu { a } | Op::Slice { a, .. } => {
                vec![*a]
            }
            Op::LayerNorm { x, gain, bias } => vec![*x, *gain, *bias],
            Op::Gather { table, .. } => vec![*table],
            Op::Concat { parts, .. } => parts.clone(),
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    shape: Vec<usize>,
    marked: bool,
}

/// Input values for a forward pass, borrowed for the lifetime of the tape.
#[derive(Debug, Default)]
pub struct Bindings<'a> {
    entries: Vec<(NodeId, Cow<'a, Tensor>)>,
}

impl<'a> Bindings<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, id: NodeId, value: &'a Tensor) -> &mut Self {
        self.entries.push((id, Cow::Borrowed(value)));
        self
    }

    pub fn bind_owned(&mut self, id: NodeId, value: Tensor) -> &mut Self {
        self.entries.push((id, Cow::Owned(value)));
        self
    }
}

/// Gradients of the tape output with respect to each marked input.
#[derive(Debug, Clone, Default)]
pub struct Gradient {
    entries: Vec<(NodeId, Tensor)>,
}

impl Gradient {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| *n == id).map(|(_, t)| t)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        let pos = self.entries.iter().position(|(n, _)| *n == id)?;
        Some(self.entries.swap_remove(pos).1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Tensor)> {
        self.entries.iter().map(|(n, t)| (*n, t))
    }
}

/// A static computation graph recorded in topological order.
///
/// Nodes are added through the builder methods, which check shapes eagerly.
/// [`Tape::forward`] evaluates every node from a set of input bindings and
/// caches the values; [`Tape::backward`] then propagates a seed from the
/// output node back to every marked input.
#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node>,
    values: Vec<Option<Cow<'a, Tensor>>>,
    output: Option<NodeId>,
}

fn shape_err(node: usize, op: &'static str, detail: String) -> GradError {
    GradError::ShapeMismatch { node, op, detail }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    fn push(&mut self, op: Op, shape: Vec<usize>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            shape,
            marked: false,
        });
        self.output = Some(id);
        id
    }

    fn next_index(&self) -> usize {
        self.nodes.len()
    }

    fn dims2(&self, id: NodeId, op: &'static str) -> Result<(usize, usize), GradError> {
        let s = &self.nodes[id.0].shape;
        if s.len() != 2 {
            return Err(shape_err(
                self.next_index(),
                op,
                format!("operand {} has rank {}, expected 2", id.0, s.len()),
            ));
        }
        Ok((s[0], s[1]))
    }

    /// Declares an input bound at forward time. Marked inputs receive gradients.
    pub fn input(&mut self, shape: &[usize], marked: bool) -> NodeId {
        let id = self.push(Op::Input, shape.to_vec());
        self.nodes[id.0].marked = marked;
        id
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(shape_err(
                self.next_index(),
                "matmul",
                format!("[{m}, {k}] x [{k2}, {n}]"),
            ));
        }
        Ok(self.push(Op::MatMul { a, b, transpose_b: false }, vec![m, n]))
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (n, k2) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(shape_err(
                self.next_index(),
                "matmul",
                format!("[{m}, {k}] x [{n}, {k2}]^T"),
            ));
        }
        Ok(self.push(Op::MatMul { a, b, transpose_b: true }, vec![m, n]))
    }

    fn broadcast_check(&self, a: NodeId, b: NodeId, op: &'static str) -> Result<Vec<usize>, GradError> {
        let (r, c) = self.dims2(a, op)?;
        let (br, bc) = self.dims2(b, op)?;
        let ok = (br == r || br == 1) && (bc == c || bc == 1);
        if !ok {
            return Err(shape_err(
                self.next_index(),
                op,
                format!("cannot broadcast [{br}, {bc}] onto [{r}, {c}]"),
            ));
        }
        Ok(vec![r, c])
    }

    /// Element-wise `a + b`; `b` may be a row `[1, c]` or column `[r, 1]` broadcast.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        let shape = self.broadcast_check(a, b, "add")?;
        Ok(self.push(Op::Add { a, b }, shape))
    }

    /// Element-wise `a * b` with the same broadcasting rule as [`Tape::add`].
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        let shape = self.broadcast_check(a, b, "mul")?;
        Ok(self.push(Op::Mul { a, b }, shape))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let shape = self.nodes[a.0].shape.clone();
        self.push(Op::Scale { a, factor }, shape)
    }

    /// Row-wise softmax. Columns with `keep[j] == false` get exactly zero mass.
    pub fn softmax(&mut self, a: NodeId, keep: Option<Arc<[bool]>>) -> Result<NodeId, GradError> {
        let (r, c) = self.dims2(a, "softmax")?;
        if let Some(k) = &keep {
            if k.len() != c {
                return Err(shape_err(
                    self.next_index(),
                    "softmax",
                    format!("mask length {} for {c} columns", k.len()),
                ));
            }
        }
        Ok(self.push(Op::Softmax { a, keep }, vec![r, c]))
    }

    /// Row-wise layer normalization with `[1, c]` gain and bias.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId, GradError> {
        let (r, c) = self.dims2(x, "layer_norm")?;
        for p in [gain, bias] {
            if self.nodes[p.0].shape != [1, c] {
                return Err(shape_err(
                    self.next_index(),
                    "layer_norm",
                    format!("affine parameter shape {:?}, expected [1, {c}]", self.nodes[p.0].shape),
                ));
            }
        }
        Ok(self.push(Op::LayerNorm { x, gain, bias }, vec![r, c]))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let shape = self.nodes[a.0].shape.clone();
        self.push(Op::Gelu { a }, shape)
    }

    /// Gathers rows of a `[vocab, d]` table.
    pub fn gather(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId, GradError> {
        let (v, d) = self.dims2(table, "gather")?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= v) {
            return Err(shape_err(
                self.next_index(),
                "gather",
                format!("index {bad} out of range for {v} rows"),
            ));
        }
        Ok(self.push(
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
            vec![indices.len(), d],
        ))
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: Axis) -> Result<NodeId, GradError> {
        if parts.is_empty() {
            return Err(shape_err(self.next_index(), "concat", "no operands".into()));
        }
        let (r0, c0) = self.dims2(parts[0], "concat")?;
        let (mut rows, mut cols) = (r0, c0);
        for &p in &parts[1..] {
            let (r, c) = self.dims2(p, "concat")?;
            match axis {
                Axis::Cols if r == r0 => cols += c,
                Axis::Rows if c == c0 => rows += r,
                _ => {
                    return Err(shape_err(
                        self.next_index(),
                        "concat",
                        format!("[{r}, {c}] does not align with [{r0}, {c0}] along {axis:?}"),
                    ))
                }
            }
        }
        Ok(self.push(
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            vec![rows, cols],
        ))
    }

    pub fn slice(&mut self, a: NodeId, axis: Axis, start: usize, end: usize) -> Result<NodeId, GradError> {
        let (r, c) = self.dims2(a, "slice")?;
        let limit = if axis == Axis::Rows { r } else { c };
        if start >= end || end > limit {
            return Err(shape_err(
                self.next_index(),
                "slice",
                format!("range {start}..{end} outside 0..{limit} along {axis:?}"),
            ));
        }
        let shape = match axis {
            Axis::Rows => vec![end - start, c],
            Axis::Cols => vec![r, end - start],
        };
        Ok(self.push(Op::Slice { a, axis, start, end }, shape))
    }

    /// `-Σ target_j · log softmax(logits)_j` over a `[1, k]` logit row; yields `[1, 1]`.
    pub fn cross_entropy(
        &mut self,
        logits: NodeId,
        target: &[f64],
        keep: Option<Arc<[bool]>>,
    ) -> Result<NodeId, GradError> {
        let (r, c) = self.dims2(logits, "cross_entropy")?;
        if r != 1 || target.len() != c || keep.as_ref().is_some_and(|k| k.len() != c) {
            return Err(shape_err(
                self.next_index(),
                "cross_entropy",
                format!("logits [{r}, {c}] with target of length {}", target.len()),
            ));
        }
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                target: target.to_vec(),
                keep,
            },
            vec![1, 1],
        ))
    }

    /// Sets the node that `forward` returns and `backward` seeds. Defaults to the last node.
    pub fn set_output(&mut self, id: NodeId) {
        self.output = Some(id);
    }

    pub fn output(&self) -> Option<NodeId> {
        self.output
    }

    /// Evaluated value of a node after [`Tape::forward`].
    pub fn value(&self, id: NodeId) -> Result<&Tensor, GradError> {
        self.values
            .get(id.0)
            .and_then(|v| v.as_deref())
            .ok_or(GradError::NotEvaluated)
    }

    /// Evaluates every node and returns the output value.
    pub fn forward(&mut self, bindings: Bindings<'a>) -> Result<&Tensor, GradError> {
        let mut values: Vec<Option<Cow<'a, Tensor>>> = Vec::with_capacity(self.nodes.len());
        values.resize_with(self.nodes.len(), || None);
        for (id, value) in bindings.entries {
            let node = self.nodes.get(id.0).ok_or(GradError::MissingBinding { node: id.0 })?;
            if !matches!(node.op, Op::Input) {
                return Err(shape_err(id.0, node.op.name(), "binding targets a non-input node".into()));
            }
            if value.shape() != node.shape.as_slice() {
                return Err(shape_err(
                    id.0,
                    "input",
                    format!("bound shape {:?}, declared {:?}", value.shape(), node.shape),
                ));
            }
            values[id.0] = Some(value);
        }
        for idx in 0..self.nodes.len() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Input) {
                match &values[idx] {
                    None => return Err(GradError::MissingBinding { node: idx }),
                    Some(v) if !v.is_finite() => {
                        return Err(GradError::NonFinite { node: idx, op: "input" })
                    }
                    Some(_) => continue,
                }
            }
            let out = eval(&node.op, &node.shape, &values);
            if !out.is_finite() {
                return Err(GradError::NonFinite {
                    node: idx,
                    op: node.op.name(),
                });
            }
            values[idx] = Some(Cow::Owned(out));
        }
        self.values = values;
        let out = self.output.ok_or(GradError::NotEvaluated)?;
        self.value(out)
    }

    /// Propagates `seed` (shaped like the output) back to every marked input.
    pub fn backward(&self, seed: &Tensor) -> Result<Gradient, GradError> {
        let out = self.output.ok_or(GradError::NotEvaluated)?;
        if self.values.len() != self.nodes.len() {
            return Err(GradError::NotEvaluated);
        }
        if seed.shape() != self.nodes[out.0].shape.as_slice() {
            return Err(GradError::ShapeMismatch {
                node: out.0,
                op: "backward",
                detail: format!(
                    "seed shape {:?}, output shape {:?}",
                    seed.shape(),
                    self.nodes[out.0].shape
                ),
            });
        }

        let mut needs = vec![false; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            needs[i] = node.marked || node.op.inputs().iter().any(|p| needs[p.0]);
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if needs[out.0] {
            grads[out.0] = Some(seed.clone());
        }
        for idx in (0..=out.0).rev() {
            if !needs[idx] {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Input) {
                grads[idx] = Some(g);
                continue;
            }
            for (input, contribution) in self.local_grads(idx, &g, &needs) {
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot @ None => *slot = Some(contribution),
                }
            }
        }

        let mut entries = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.marked {
                let g = grads[i].take().unwrap_or_else(|| Tensor::zeros(&node.shape));
                entries.push((NodeId(i), g));
            }
        }
        Ok(Gradient { entries })
    }

    fn val(&self, id: NodeId) -> &Tensor {
        self.values[id.0].as_deref().expect("evaluated")
    }

    fn local_grads(&self, idx: usize, g: &Tensor, needs: &[bool]) -> Vec<(NodeId, Tensor)> {
        let node = &self.nodes[idx];
        let mut out = Vec::with_capacity(2);
        match &node.op {
            Op::Input => {}
            Op::MatMul { a, b, transpose_b } => {
                let av = self.val(*a);
                let bv = self.val(*b);
                let (m, k) = (av.rows(), av.cols());
                let n = node.shape[1];
                if needs[a.0] {
                    let da = if *transpose_b {
                        // C = A Bᵀ, B: [n, k] → dA = dC B
                        matmul(g.data(), bv.data(), m, n, k)
                    } else {
                        // B: [k, n] → dA = dC Bᵀ
                        matmul_bt(g.data(), bv.data(), m, n, k)
                    };
                    out.push((*a, Tensor::new(vec![m, k], da).expect("shape")));
                }
                if needs[b.0] {
                    let db = if *transpose_b {
                        // dB = dCᵀ A : [n, k]
                        matmul_at(g.data(), av.data(), m, n, k)
                    } else {
                        // dB = Aᵀ dC : [k, n]
                        matmul_at(av.data(), g.data(), m, k, n)
                    };
                    out.push((*b, Tensor::new(bv.shape().to_vec(), db).expect("shape")));
                }
            }
            Op::Add { a, b } => {
                if needs[a.0] {
                    out.push((*a, g.clone()));
                }
                if needs[b.0] {
                    out.push((*b, reduce_to(g, self.val(*b).shape())));
                }
            }
            Op::Mul { a, b } => {
                let av = self.val(*a);
                let bv = self.val(*b);
                if needs[a.0] {
                    let mut da = g.clone();
                    let c = da.cols();
                    for (i, v) in da.data_mut().iter_mut().enumerate() {
                        *v *= broadcast_at(bv, i / c, i % c);
                    }
                    out.push((*a, da));
                }
                if needs[b.0] {
                    let prod = g.hadamard(av);
                    out.push((*b, reduce_to(&prod, bv.shape())));
                }
            }
            Op::Scale { a, factor } => out.push((*a, g.scaled(*factor))),
            Op::Softmax { a, .. } => {
                let y = self.val(NodeId(idx));
                let mut dx = Tensor::zeros(y.shape());
                let c = y.cols();
                for r in 0..y.rows() {
                    let yr = y.row_slice(r);
                    let gr = g.row_slice(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    let row = &mut dx.data_mut()[r * c..(r + 1) * c];
                    for j in 0..c {
                        row[j] = yr[j] * (gr[j] - dot);
                    }
                }
                out.push((*a, dx));
            }
            Op::LayerNorm { x, gain, bias } => {
                let xv = self.val(*x);
                let gv = self.val(*gain);
                let (r, c) = (xv.rows(), xv.cols());
                let mut dx = Tensor::zeros(&[r, c]);
                let mut dgain = vec![0.0; c];
                let mut dbias = vec![0.0; c];
                for i in 0..r {
                    let (xhat, inv) = normalize_row(xv.row_slice(i));
                    let gr = g.row_slice(i);
                    let dxhat: Vec<f64> = (0..c).map(|j| gr[j] * gv.data()[j]).collect();
                    let mean_d = dxhat.iter().sum::<f64>() / c as f64;
                    let mean_dx = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                    let row = &mut dx.data_mut()[i * c..(i + 1) * c];
                    for j in 0..c {
                        row[j] = inv * (dxhat[j] - mean_d - xhat[j] * mean_dx);
                        dgain[j] += gr[j] * xhat[j];
                        dbias[j] += gr[j];
                    }
                }
                if needs[x.0] {
                    out.push((*x, dx));
                }
                if needs[gain.0] {
                    out.push((*gain, Tensor::row(&dgain)));
                }
                if needs[bias.0] {
                    out.push((*bias, Tensor::row(&dbias)));
                }
            }
            Op::Gelu { a } => {
                let xv = self.val(*a);
                let dx = Tensor::new(
                    xv.shape().to_vec(),
                    xv.data()
                        .iter()
                        .zip(g.data())
                        .map(|(&x, &gi)| gi * gelu_grad(x))
                        .collect(),
                )
                .expect("shape");
                out.push((*a, dx));
            }
            Op::Gather { table, indices } => {
                let tshape = self.nodes[table.0].shape.clone();
                let d = tshape[1];
                let mut dt = Tensor::zeros(&tshape);
                for (r, &ix) in indices.iter().enumerate() {
                    let src = g.row_slice(r);
                    let dst = &mut dt.data_mut()[ix * d..(ix + 1) * d];
                    for (o, v) in dst.iter_mut().zip(src) {
                        *o += v;
                    }
                }
                out.push((*table, dt));
            }
            Op::Concat { parts, axis } => {
                let mut offset = 0;
                for &p in parts {
                    let ps = &self.nodes[p.0].shape;
                    let (pr, pc) = (ps[0], ps[1]);
                    if needs[p.0] {
                        let mut piece = Tensor::zeros(&[pr, pc]);
                        for i in 0..pr {
                            for j in 0..pc {
                                piece.data_mut()[i * pc + j] = match axis {
                                    Axis::Cols => g.at(i, offset + j),
                                    Axis::Rows => g.at(offset + i, j),
                                };
                            }
                        }
                        out.push((p, piece));
                    }
                    offset += if *axis == Axis::Cols { pc } else { pr };
                }
            }
            Op::Slice { a, axis, start, .. } => {
                let ashape = self.nodes[a.0].shape.clone();
                let mut da = Tensor::zeros(&ashape);
                let (gr, gc) = (g.rows(), g.cols());
                let ac = ashape[1];
                for i in 0..gr {
                    for j in 0..gc {
                        let (si, sj) = match axis {
                            Axis::Rows => (start + i, j),
                            Axis::Cols => (i, start + j),
                        };
                        da.data_mut()[si * ac + sj] = g.at(i, j);
                    }
                }
                out.push((*a, da));
            }
            Op::CrossEntropy { logits, target, keep } => {
                let z = self.val(*logits);
                let q = masked_softmax_row(z.data(), keep.as_deref());
                let mass: f64 = target.iter().sum();
                let scale = g.item();
                let dz: Vec<f64> = q
                    .iter()
                    .zip(target)
                    .map(|(qi, pi)| scale * (qi * mass - pi))
                    .collect();
                out.push((*logits, Tensor::row(&dz)));
            }
        }
        out
    }
}

fn broadcast_at(b: &Tensor, r: usize, c: usize) -> f64 {
    let br = if b.rows() == 1 { 0 } else { r };
    let bc = if b.cols() == 1 { 0 } else { c };
    b.at(br, bc)
}

/// Sums `g` down to `shape` along broadcast axes.
fn reduce_to(g: &Tensor, shape: &[usize]) -> Tensor {
    if g.shape() == shape {
        return g.clone();
    }
    let mut out = Tensor::zeros(shape);
    let (sr, sc) = (shape[0], shape[1]);
    for i in 0..g.rows() {
        for j in 0..g.cols() {
            let oi = if sr == 1 { 0 } else { i };
            let oj = if sc == 1 { 0 } else { j };
            out.data_mut()[oi * sc + oj] += g.at(i, j);
        }
    }
    out
}

fn normalize_row(x: &[f64]) -> (Vec<f64>, f64) {
    let c = x.len() as f64;
    let mean = x.iter().sum::<f64>() / c;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c;
    let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    (x.iter().map(|v| (v - mean) * inv).collect(), inv)
}

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// Softmax of one row restricted to `keep`; excluded entries are exactly zero.
pub(crate) fn masked_softmax_row(z: &[f64], keep: Option<&[bool]>) -> Vec<f64> {
    let kept = |j: usize| keep.is_none_or(|k| k[j]);
    let max = (0..z.len())
        .filter(|&j| kept(j))
        .map(|j| z[j])
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return vec![0.0; z.len()];
    }
    let mut out: Vec<f64> = (0..z.len())
        .map(|j| if kept(j) { (z[j] - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}

fn eval(op: &Op, shape: &[usize], values: &[Option<Cow<'_, Tensor>>]) -> Tensor {
    let v = |id: &NodeId| -> &Tensor { values[id.0].as_deref().expect("topological order") };
    let data = match op {
        Op::Input => unreachable!("inputs are bound, not evaluated"),
        Op::MatMul { a, b, transpose_b } => {
            let (av, bv) = (v(a), v(b));
            let (m, k) = (av.rows(), av.cols());
            if *transpose_b {
                matmul_bt(av.data(), bv.data(), m, k, bv.rows())
            } else {
                matmul(av.data(), bv.data(), m, k, bv.cols())
            }
        }
        Op::Add { a, b } | Op::Mul { a, b } => {
            let (av, bv) = (v(a), v(b));
            let c = av.cols();
            let is_add = matches!(op, Op::Add { .. });
            av.data()
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    let y = broadcast_at(bv, i / c, i % c);
                    if is_add {
                        x + y
                    } else {
                        x * y
                    }
                })
                .collect()
        }
        Op::Scale { a, factor } => v(a).data().iter().map(|x| x * factor).collect(),
        Op::Softmax { a, keep } => {
            let av = v(a);
            let mut data = Vec::with_capacity(av.len());
            for r in 0..av.rows() {
                data.extend(masked_softmax_row(av.row_slice(r), keep.as_deref()));
            }
            data
        }
        Op::LayerNorm { x, gain, bias } => {
            let (xv, gv, bv) = (v(x), v(gain), v(bias));
            let mut data = Vec::with_capacity(xv.len());
            for r in 0..xv.rows() {
                let (xhat, _) = normalize_row(xv.row_slice(r));
                data.extend(
                    xhat.iter()
                        .enumerate()
                        .map(|(j, h)| h * gv.data()[j] + bv.data()[j]),
                );
            }
            data
        }
        Op::Gelu { a } => v(a).data().iter().map(|&x| gelu(x)).collect(),
        Op::Gather { table, indices } => {
            let t = v(table);
            let mut data = Vec::with_capacity(indices.len() * t.cols());
            for &ix in indices {
                data.extend_from_slice(t.row_slice(ix));
            }
            data
        }
        Op::Concat { parts, axis } => {
            let (rows, cols) = (shape[0], shape[1]);
            match axis {
                Axis::Rows => parts.iter().flat_map(|p| v(p).data().iter().copied()).collect(),
                Axis::Cols => {
                    let mut data = Vec::with_capacity(rows * cols);
                    for r in 0..rows {
                        for p in parts {
                            data.extend_from_slice(v(p).row_slice(r));
                        }
                    }
                    data
                }
            }
        }
        Op::Slice { a, axis, start, end } => {
            let av = v(a);
            match axis {
                Axis::Rows => av.data()[start * av.cols()..end * av.cols()].to_vec(),
                Axis::Cols => (0..av.rows())
                    .flat_map(|r| av.row_slice(r)[*start..*end].iter().copied())
                    .collect(),
            }
        }
        Op::CrossEntropy { logits, target, keep } => {
            let z = v(logits);
            let q = masked_softmax_row(z.data(), keep.as_deref());
            let loss: f64 = target
                .iter()
                .zip(&q)
                .filter(|(p, _)| **p != 0.0)
                .map(|(p, qi)| -p * qi.ln())
                .sum();
            vec![loss]
        }
    };
    Tensor::new(shape.to_vec(), data).expect("shape inferred at build time")
}
