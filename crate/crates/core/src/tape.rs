//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! Every operation appends a node holding its output value and whatever it
//! needs for the backward pass. [`Tape::backward`] walks the nodes in exact
//! reverse recording order, so gradient sums are always formed in the same
//! order and two identical runs produce bit-identical gradients.
//!
//! A tape lives for one step. Parameters enter as leaves (copied from a
//! [`Tensor`]); after `backward` their gradients are read with
//! [`Tape::grad`].
//!
//! Tensors are viewed as `rows × cols`, where `cols` is the last dimension
//! and `rows` the product of the leading ones. Apart from the row-wise bias
//! add there is no broadcasting.

use crate::error::{Error, Result};
use crate::tensor::{leading, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulBt(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    PermuteCols {
        x: Var,
        perm: Vec<usize>,
    },
    Sum(Var),
    SoftmaxXent {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

impl Node {
    fn rows(&self) -> usize {
        leading(&self.shape)
    }

    fn cols(&self) -> usize {
        *self.shape.last().unwrap()
    }
}

/// A single-step computation record.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    /// Persistent gradients of leaves; repeated `backward` calls add into
    /// these.
    leaf_grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a copy of `t` as a leaf. It receives gradients iff
    /// `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Leaf,
            t.requires_grad(),
        )
    }

    /// Records a leaf that never receives gradients.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.leaf(&t))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        let n = self.node(v);
        assert_eq!(n.value.len(), 1, "scalar() on shape {:?}", n.shape);
        n.value[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shape is valid")
    }

    /// Gradient of a leaf after [`Tape::backward`]. `None` when the leaf does
    /// not require gradients or no path reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads[v.0].as_deref()
    }

    // ---- operations -------------------------------------------------------

    /// Matrix product of `a: [r×c]` and `b: [c×d]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                left: sa,
                right: sb,
            });
        }
        let (r, c, d) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; r * d];
        gemm(
            r,
            c,
            d,
            self.value(a),
            false,
            self.value(b),
            false,
            &mut out,
        );
        let rg = self.needs(&[a, b]);
        Ok(self.push(vec![r, d], out, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ` for `a: [r×c]` and `b: [d×c]`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::Shape {
                op: "matmul_bt",
                left: sa,
                right: sb,
            });
        }
        let (r, c, d) = (sa[0], sa[1], sb[0]);
        let mut out = vec![0.0; r * d];
        gemm(r, c, d, self.value(a), false, self.value(b), true, &mut out);
        let rg = self.needs(&[a, b]);
        Ok(self.push(vec![r, d], out, Op::MatMulBt(a, b), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let rg = self.needs(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        let rg = self.needs(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul(a, b), rg))
    }

    /// Adds a `[cols]` bias to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let cols = self.node(x).cols();
        if self.shape(bias) != [cols] {
            return Err(Error::Shape {
                op: "add_row",
                left: self.shape(x).to_vec(),
                right: self.shape(bias).to_vec(),
            });
        }
        let b = self.value(bias);
        let out = self
            .value(x)
            .chunks(cols)
            .flat_map(|row| row.iter().zip(b).map(|(v, bb)| v + bb))
            .collect();
        let rg = self.needs(&[x, bias]);
        Ok(self.push(self.shape(x).to_vec(), out, Op::AddRow(x, bias), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x).iter().map(|v| v * factor).collect();
        let rg = self.needs(&[x]);
        self.push(self.shape(x).to_vec(), out, Op::Scale(x, factor), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|v| v.tanh()).collect();
        let rg = self.needs(&[x]);
        self.push(self.shape(x).to_vec(), out, Op::Tanh(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| sigmoid(v)).collect();
        let rg = self.needs(&[x]);
        self.push(self.shape(x).to_vec(), out, Op::Sigmoid(x), rg)
    }

    /// Columns `start..start + width` of `x` (last dimension).
    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let n = self.node(x);
        let cols = n.cols();
        if width == 0 || start + width > cols {
            return Err(Error::Index {
                context: "slice_cols",
                index: start + width,
                bound: cols + 1,
            });
        }
        let out = n
            .value
            .chunks(cols)
            .flat_map(|row| row[start..start + width].iter().copied())
            .collect();
        let mut shape = n.shape.clone();
        *shape.last_mut().unwrap() = width;
        let rg = n.requires_grad;
        Ok(self.push(shape, out, Op::SliceCols { x, start }, rg))
    }

    /// Splits the last dimension into `groups` contiguous equal chunks.
    pub fn split(&mut self, x: Var, groups: usize) -> Result<Vec<Var>> {
        let cols = self.node(x).cols();
        if groups == 0 || !cols.is_multiple_of(groups) {
            return Err(Error::Divisibility {
                context: "split".into(),
                dim: cols,
                groups,
            });
        }
        let width = cols / groups;
        (0..groups)
            .map(|j| self.slice_cols(x, j * width, width))
            .collect()
    }

    /// Concatenates along the last dimension. Leading dimensions must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero parts".into()))?;
        let lead = self.shape(first)[..self.shape(first).len() - 1].to_vec();
        for &p in &parts[1..] {
            let s = self.shape(p);
            if s[..s.len() - 1] != lead[..] {
                return Err(Error::Shape {
                    op: "concat",
                    left: self.shape(first).to_vec(),
                    right: s.to_vec(),
                });
            }
        }
        let rows = self.node(first).rows();
        let total: usize = parts.iter().map(|&p| self.node(p).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let n = self.node(p);
                let c = n.cols();
                out.extend_from_slice(&n.value[r * c..(r + 1) * c]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let rg = self.needs(parts);
        Ok(self.push(shape, out, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat_rows of zero parts".into()))?;
        let cols = self.node(first).cols();
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let n = self.node(p);
            if n.shape.len() != 2 || n.cols() != cols {
                return Err(Error::Shape {
                    op: "concat_rows",
                    left: self.shape(first).to_vec(),
                    right: n.shape.clone(),
                });
            }
            rows += n.rows();
            out.extend_from_slice(&n.value);
        }
        let rg = self.needs(parts);
        Ok(self.push(vec![rows, cols], out, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Row gather: output row `r` is `table[ids[r]]`. Backward scatter-adds.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let n = self.node(table);
        if n.shape.len() != 2 {
            return Err(Error::Contract(format!(
                "embedding table must be a matrix, got {:?}",
                n.shape
            )));
        }
        if ids.is_empty() {
            return Err(Error::Contract("embedding_lookup with no ids".into()));
        }
        let (v, c) = (n.rows(), n.cols());
        let mut out = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= v {
                return Err(Error::Index {
                    context: "embedding_lookup",
                    index: id,
                    bound: v,
                });
            }
            out.extend_from_slice(&n.value[id * c..(id + 1) * c]);
        }
        let rg = n.requires_grad;
        Ok(self.push(
            vec![ids.len(), c],
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// `out[.., j] = x[.., perm[j]]`.
    pub fn permute_cols(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let n = self.node(x);
        let cols = n.cols();
        let mut seen = vec![false; cols];
        if perm.len() != cols || perm.iter().any(|&p| p >= cols || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Contract(format!(
                "permute_cols needs a permutation of 0..{cols}"
            )));
        }
        let out = n
            .value
            .chunks(cols)
            .flat_map(|row| perm.iter().map(move |&p| row[p]))
            .collect();
        let rg = n.requires_grad;
        Ok(self.push(
            n.shape.clone(),
            out,
            Op::PermuteCols {
                x,
                perm: perm.to_vec(),
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let rg = self.needs(&[x]);
        self.push(vec![1], vec![s], Op::Sum(x), rg)
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits: [R×V]`. Uses the max-shifted log-sum-exp.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let n = self.node(logits);
        if n.shape.len() != 2 || n.rows() != targets.len() {
            return Err(Error::Shape {
                op: "softmax_cross_entropy",
                left: n.shape.clone(),
                right: vec![targets.len()],
            });
        }
        let v = n.cols();
        let mut probs = vec![0.0; n.value.len()];
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            if t >= v {
                return Err(Error::Index {
                    context: "softmax_cross_entropy",
                    index: t,
                    bound: v,
                });
            }
            let row = &n.value[r * v..(r + 1) * v];
            let lse = log_softmax_row(row, &mut probs[r * v..(r + 1) * v]);
            total += lse - row[t];
        }
        let loss = total / targets.len() as f64;
        let rg = n.requires_grad;
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::SoftmaxXent {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    // ---- backward ---------------------------------------------------------

    /// Propagates d`loss`/d(leaf) into every reachable leaf that requires
    /// gradients. Calling it again adds to the existing leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let ln = self.node(loss);
        if ln.value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                ln.shape
            )));
        }
        if !ln.requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(gy) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    match &mut self.leaf_grads[id] {
                        Some(acc) => acc.iter_mut().zip(&gy).for_each(|(a, g)| *a += g),
                        slot @ None => *slot = Some(gy),
                    }
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
                    let (r, c, d) = (sa[0], sa[1], sb[1]);
                    if self.nodes[a.0].requires_grad {
                        // dA = dY · Bᵀ
                        let ga = slot(&mut grads, &self.nodes, *a);
                        gemm(r, d, c, &gy, false, &self.nodes[b.0].value, true, ga);
                    }
                    if self.nodes[b.0].requires_grad {
                        // dB = Aᵀ · dY
                        let gb = slot(&mut grads, &self.nodes, *b);
                        gemm(c, r, d, &self.nodes[a.0].value, true, &gy, false, gb);
                    }
                }
                Op::MatMulBt(a, b) => {
                    let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
                    let (r, c, d) = (sa[0], sa[1], sb[0]);
                    if self.nodes[a.0].requires_grad {
                        // dA = dY · B
                        let ga = slot(&mut grads, &self.nodes, *a);
                        gemm(r, d, c, &gy, false, &self.nodes[b.0].value, false, ga);
                    }
                    if self.nodes[b.0].requires_grad {
                        // dB = dYᵀ · A
                        let gb = slot(&mut grads, &self.nodes, *b);
                        gemm(d, r, c, &gy, true, &self.nodes[a.0].value, false, gb);
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if self.nodes[v.0].requires_grad {
                            add_into(slot(&mut grads, &self.nodes, v), &gy);
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.nodes[a.0].requires_grad {
                        let other = &self.nodes[b.0].value;
                        let ga = slot(&mut grads, &self.nodes, a);
                        for ((g, y), o) in ga.iter_mut().zip(&gy).zip(other) {
                            *g += y * o;
                        }
                    }
                    if self.nodes[b.0].requires_grad {
                        let other = &self.nodes[a.0].value;
                        let gb = slot(&mut grads, &self.nodes, b);
                        for ((g, y), o) in gb.iter_mut().zip(&gy).zip(other) {
                            *g += y * o;
                        }
                    }
                }
                Op::AddRow(x, bias) => {
                    if self.nodes[x.0].requires_grad {
                        add_into(slot(&mut grads, &self.nodes, *x), &gy);
                    }
                    if self.nodes[bias.0].requires_grad {
                        let cols = self.nodes[bias.0].value.len();
                        let gb = slot(&mut grads, &self.nodes, *bias);
                        for row in gy.chunks(cols) {
                            add_into(gb, row);
                        }
                    }
                }
                Op::Scale(x, f) => {
                    let f = *f;
                    let gx = slot(&mut grads, &self.nodes, *x);
                    for (g, y) in gx.iter_mut().zip(&gy) {
                        *g += f * y;
                    }
                }
                Op::Tanh(x) => {
                    let out = &node.value;
                    let gx = slot(&mut grads, &self.nodes, *x);
                    for ((g, y), o) in gx.iter_mut().zip(&gy).zip(out) {
                        *g += y * (1.0 - o * o);
                    }
                }
                Op::Sigmoid(x) => {
                    let out = &node.value;
                    let gx = slot(&mut grads, &self.nodes, *x);
                    for ((g, y), o) in gx.iter_mut().zip(&gy).zip(out) {
                        *g += y * o * (1.0 - o);
                    }
                }
                Op::SliceCols { x, start } => {
                    let width = node.cols();
                    let cols = self.nodes[x.0].cols();
                    let start = *start;
                    let gx = slot(&mut grads, &self.nodes, *x);
                    for (dst, src) in gx.chunks_mut(cols).zip(gy.chunks(width)) {
                        add_into(&mut dst[start..start + width], src);
                    }
                }
                Op::ConcatCols(parts) => {
                    let total = node.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let c = self.nodes[p.0].cols();
                        if self.nodes[p.0].requires_grad {
                            let gp = slot(&mut grads, &self.nodes, p);
                            for (dst, src) in gp.chunks_mut(c).zip(gy.chunks(total)) {
                                add_into(dst, &src[offset..offset + c]);
                            }
                        }
                        offset += c;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.nodes[p.0].value.len();
                        if self.nodes[p.0].requires_grad {
                            let gp = slot(&mut grads, &self.nodes, p);
                            add_into(gp, &gy[offset..offset + len]);
                        }
                        offset += len;
                    }
                }
                Op::Gather { table, ids } => {
                    let c = node.cols();
                    let gt = slot(&mut grads, &self.nodes, *table);
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut gt[id * c..(id + 1) * c], &gy[r * c..(r + 1) * c]);
                    }
                }
                Op::PermuteCols { x, perm } => {
                    let cols = node.cols();
                    let gx = slot(&mut grads, &self.nodes, *x);
                    for (dst, src) in gx.chunks_mut(cols).zip(gy.chunks(cols)) {
                        for (j, &p) in perm.iter().enumerate() {
                            dst[p] += src[j];
                        }
                    }
                }
                Op::Sum(x) => {
                    let g = gy[0];
                    let gx = slot(&mut grads, &self.nodes, *x);
                    gx.iter_mut().for_each(|v| *v += g);
                }
                Op::SoftmaxXent {
                    logits,
                    targets,
                    probs,
                } => {
                    let v = self.nodes[logits.0].cols();
                    let scale = gy[0] / targets.len() as f64;
                    let gl = slot(&mut grads, &self.nodes, *logits);
                    for (r, &t) in targets.iter().enumerate() {
                        let row = &mut gl[r * v..(r + 1) * v];
                        for (g, p) in row.iter_mut().zip(&probs[r * v..(r + 1) * v]) {
                            *g += scale * p;
                        }
                        row[t] -= scale;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Gradient buffer for `v`, allocated zeroed on first use.
fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> &'a mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Writes the softmax of `row` into `probs` and returns its log-sum-exp.
pub(crate) fn log_softmax_row(row: &[f64], probs: &mut [f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (p, &x) in probs.iter_mut().zip(row) {
        *p = (x - max).exp();
        z += *p;
    }
    probs.iter_mut().for_each(|p| *p /= z);
    max + z.ln()
}

/// `c += op(a) · op(b)` with `op(a): [m×k]`, `op(b): [k×n]`, all row-major.
/// `a_t`/`b_t` mean the stored matrix is the transpose of the operand.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    // SAFETY: the slices hold exactly m·k, k·n and m·n elements and the
    // strides above address them in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
