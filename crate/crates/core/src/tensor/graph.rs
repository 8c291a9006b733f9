use std::cell::Cell;
use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::{Result, Tensor, TensorError};

thread_local! {
    static CORRUPT: Cell<bool> = const { Cell::new(false) };
}

/// Debug switch: scales the tanh gradient rule by 1.5 on the current thread.
/// Used as a negative control for gradient checks.
pub fn set_corrupt_gradients(on: bool) {
    CORRUPT.with(|c| c.set(on));
}

fn corrupt() -> bool {
    CORRUPT.with(|c| c.get())
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    Affine { x: usize, w: usize, b: usize, m: usize, k: usize, n: usize },
    MatMul { a: usize, b: usize, m: usize, k: usize, n: usize },
    Transpose { a: usize, rows: usize, cols: usize },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    Exp(usize),
    Log(usize),
    Sum(usize),
    Concat(Vec<usize>),
    Slice { a: usize, start: usize },
    Stack(Vec<usize>),
    Row { a: usize, index: usize, cols: usize },
    Reshape(usize),
    LogSoftmax { a: usize, mask: Vec<bool> },
    Softmax { a: usize, mask: Vec<bool> },
    Pick { a: usize, index: usize },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Tape of one forward pass. Nodes are appended in evaluation order, so the
/// node list is already a topological order.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Gradients of one backward pass, indexed by [`Var`].
pub struct Grads(Vec<Option<Vec<f64>>>);

impl Grads {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.0.get(v.0).and_then(|g| g.as_deref())
    }
}

fn shape_err<T>(msg: String) -> Result<T> {
    Err(TensorError::Shape(msg))
}

fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

// out[m,k] += g[m,n] * b[k,n]^T
fn mm_grad_left(g: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let s: f64 = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
            out[i * k + p] += s;
        }
    }
}

// out[k,n] += a[m,k]^T * g[m,n]
fn mm_grad_right(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

fn masked_log_softmax(x: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    let mut max = f64::NEG_INFINITY;
    for (v, &ok) in x.iter().zip(mask) {
        if ok && *v > max {
            max = *v;
        }
    }
    if max == f64::NEG_INFINITY {
        return Err(TensorError::Mask);
    }
    let z: f64 = x
        .iter()
        .zip(mask)
        .filter(|(_, &ok)| ok)
        .map(|(v, _)| (v - max).exp())
        .sum();
    let lz = max + z.ln();
    Ok(x.iter().zip(mask).map(|(v, &ok)| if ok { v - lz } else { 0.0 }).collect())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    fn shape(&self, v: usize) -> &[usize] {
        &self.nodes[v].value.shape
    }

    fn data(&self, v: usize) -> &[f64] {
        &self.nodes[v].value.data
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn vector(&mut self, data: Vec<f64>) -> Var {
        self.constant(Tensor::vector(data))
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// Brings a stored parameter into the graph. Repeated calls return the
    /// same node so gradients accumulate in one place.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param);
        self.params.insert(id, v);
        v
    }

    /// `x W + b`, with `b` added to every row when `x` is a matrix.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x.0).to_vec(), self.shape(w.0).to_vec(), self.shape(b.0).to_vec());
        if ws.len() != 2 {
            return shape_err(format!("affine weight must be 2-d, got {ws:?}"));
        }
        let (k, n) = (ws[0], ws[1]);
        let (m, out_shape) = match xs.as_slice() {
            [kk] if *kk == k => (1, vec![n]),
            [mm_, kk] if *kk == k => (*mm_, vec![*mm_, n]),
            _ => return shape_err(format!("affine: input {xs:?} against weight {ws:?}")),
        };
        if bs != [n] {
            return shape_err(format!("affine: bias {bs:?} for output width {n}"));
        }
        let mut out = mm(self.data(x.0), self.data(w.0), m, k, n);
        let bias = self.data(b.0);
        for row in out.chunks_mut(n) {
            for (o, bv) in row.iter_mut().zip(bias) {
                *o += bv;
            }
        }
        let t = Tensor { shape: out_shape, data: out };
        Ok(self.push(t, Op::Affine { x: x.0, w: w.0, b: b.0, m, k, n }))
    }

    /// Matrix product. A 1-d left operand is a row, a 1-d right operand a column.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a.0).to_vec(), self.shape(b.0).to_vec());
        let (m, k, n, shape) = match (sa.as_slice(), sb.as_slice()) {
            ([k1], [k2, n]) if k1 == k2 => (1, *k1, *n, vec![*n]),
            ([m, k1], [k2, n]) if k1 == k2 => (*m, *k1, *n, vec![*m, *n]),
            ([m, k1], [k2]) if k1 == k2 => (*m, *k1, 1, vec![*m]),
            ([k1], [k2]) if k1 == k2 => (1, *k1, 1, vec![]),
            _ => return shape_err(format!("matmul: {sa:?} x {sb:?}")),
        };
        let out = mm(self.data(a.0), self.data(b.0), m, k, n);
        Ok(self.push(Tensor { shape, data: out }, Op::MatMul { a: a.0, b: b.0, m, k, n }))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a.0).to_vec();
        let [rows, cols] = s.as_slice() else {
            return shape_err(format!("transpose needs a matrix, got {s:?}"));
        };
        let (rows, cols) = (*rows, *cols);
        let src = self.data(a.0);
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                out[j * rows + i] = src[i * cols + j];
            }
        }
        Ok(self.push(Tensor { shape: vec![cols, rows], data: out }, Op::Transpose { a: a.0, rows, cols }))
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape(a.0) != self.shape(b.0) {
            return shape_err(format!("{name}: {:?} vs {:?}", self.shape(a.0), self.shape(b.0)));
        }
        let data = self.data(a.0).iter().zip(self.data(b.0)).map(|(x, y)| f(*x, *y)).collect();
        Ok(Tensor { shape: self.shape(a.0).to_vec(), data })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a.0, b.0)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a.0, b.0)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a.0, b.0)))
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let src = &self.nodes[a.0].value;
        let t = Tensor { shape: src.shape.clone(), data: src.data.iter().map(|v| f(*v)).collect() };
        self.push(t, op)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a.0, c), |v| v * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::AddScalar(a.0), |v| v + c)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a.0), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a.0), |v| 1.0 / (1.0 + (-v).exp()))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a.0), |v| v.max(0.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a.0), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a.0), f64::ln)
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a.0).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a.0))
    }

    /// Concatenates 1-d tensors (scalars count as length 1).
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut data = Vec::new();
        for p in parts {
            if self.shape(p.0).len() > 1 {
                return shape_err(format!("concat takes vectors, got {:?}", self.shape(p.0)));
            }
            data.extend_from_slice(self.data(p.0));
        }
        Ok(self.push(Tensor::vector(data), Op::Concat(parts.iter().map(|v| v.0).collect())))
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let src = self.data(a.0);
        if self.shape(a.0).len() != 1 || start + len > src.len() {
            return shape_err(format!("slice {start}..{} of {:?}", start + len, self.shape(a.0)));
        }
        let data = src[start..start + len].to_vec();
        Ok(self.push(Tensor::vector(data), Op::Slice { a: a.0, start }))
    }

    /// Stacks equal-length vectors into the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        let Some(first) = rows.first() else {
            return shape_err("stack of zero rows".into());
        };
        let width = self.shape(first.0).to_vec();
        if width.len() != 1 {
            return shape_err(format!("stack takes vectors, got {width:?}"));
        }
        let mut data = Vec::with_capacity(rows.len() * width[0]);
        for r in rows {
            if self.shape(r.0) != width.as_slice() {
                return shape_err(format!("stack: {:?} vs {width:?}", self.shape(r.0)));
            }
            data.extend_from_slice(self.data(r.0));
        }
        let t = Tensor { shape: vec![rows.len(), width[0]], data };
        Ok(self.push(t, Op::Stack(rows.iter().map(|v| v.0).collect())))
    }

    /// Row `index` of a matrix; used for embedding lookups.
    pub fn row(&mut self, a: Var, index: usize) -> Result<Var> {
        let s = self.shape(a.0).to_vec();
        let [rows, cols] = s.as_slice() else {
            return shape_err(format!("row needs a matrix, got {s:?}"));
        };
        if index >= *rows {
            return Err(TensorError::Index { index, len: *rows });
        }
        let cols = *cols;
        let data = self.data(a.0)[index * cols..(index + 1) * cols].to_vec();
        Ok(self.push(Tensor::vector(data), Op::Row { a: a.0, index, cols }))
    }

    pub fn embedding(&mut self, table: Var, index: usize) -> Result<Var> {
        self.row(table, index)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.data(a.0).len() {
            return shape_err(format!("reshape {:?} to {shape:?}", self.shape(a.0)));
        }
        let t = Tensor { shape: shape.to_vec(), data: self.data(a.0).to_vec() };
        Ok(self.push(t, Op::Reshape(a.0)))
    }

    /// Log-softmax over a vector; masked-out entries hold 0 and get no gradient.
    pub fn log_softmax(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let mask = self.resolve_mask(a, mask)?;
        let out = masked_log_softmax(self.data(a.0), &mask)?;
        Ok(self.push(Tensor::vector(out), Op::LogSoftmax { a: a.0, mask }))
    }

    /// Softmax over a vector; masked-out entries are exactly 0.
    pub fn softmax(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let mask = self.resolve_mask(a, mask)?;
        let lp = masked_log_softmax(self.data(a.0), &mask)?;
        let out = lp.iter().zip(&mask).map(|(l, &ok)| if ok { l.exp() } else { 0.0 }).collect();
        Ok(self.push(Tensor::vector(out), Op::Softmax { a: a.0, mask }))
    }

    fn resolve_mask(&self, a: Var, mask: Option<&[bool]>) -> Result<Vec<bool>> {
        let s = self.shape(a.0);
        if s.len() != 1 {
            return shape_err(format!("softmax needs a vector, got {s:?}"));
        }
        match mask {
            None => Ok(vec![true; s[0]]),
            Some(m) if m.len() == s[0] => Ok(m.to_vec()),
            Some(m) => shape_err(format!("mask of length {} for vector of {}", m.len(), s[0])),
        }
    }

    /// Entry `index` of a vector, as a scalar.
    pub fn pick(&mut self, a: Var, index: usize) -> Result<Var> {
        let d = self.data(a.0);
        if index >= d.len() {
            return Err(TensorError::Index { index, len: d.len() });
        }
        let v = d[index];
        Ok(self.push(Tensor::scalar(v), Op::Pick { a: a.0, index }))
    }

    /// Mean of all entries, as a scalar.
    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.data(a.0).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Sum of scalars; a zero constant for an empty list.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        match terms {
            [] => Ok(self.scalar(0.0)),
            [only] => Ok(*only),
            _ => {
                let c = self.concat(terms)?;
                Ok(self.sum(c))
            }
        }
    }

    /// Reverse-mode pass from a one-element `loss`.
    pub fn gradients(&self, loss: Var) -> Result<Grads> {
        if self.nodes[loss.0].value.data.len() != 1 {
            return shape_err(format!("backward from non-scalar {:?}", self.shape(loss.0)));
        }
        let corrupt = corrupt();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        fn acc<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], i: usize) -> &'a mut Vec<f64> {
            grads[i].get_or_insert_with(|| vec![0.0; nodes[i].value.data.len()])
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let out = &node.value.data;
            match &node.op {
                Op::Leaf | Op::Param => {}
                Op::Affine { x, w, b, m, k, n } => {
                    let (x, w, b, m, k, n) = (*x, *w, *b, *m, *k, *n);
                    mm_grad_left(&g, self.data(w), acc(&mut grads, &self.nodes, x), m, k, n);
                    mm_grad_right(self.data(x), &g, acc(&mut grads, &self.nodes, w), m, k, n);
                    let gb = acc(&mut grads, &self.nodes, b);
                    for row in g.chunks(n) {
                        for (o, v) in gb.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                }
                Op::MatMul { a, b, m, k, n } => {
                    let (a, b, m, k, n) = (*a, *b, *m, *k, *n);
                    mm_grad_left(&g, self.data(b), acc(&mut grads, &self.nodes, a), m, k, n);
                    mm_grad_right(self.data(a), &g, acc(&mut grads, &self.nodes, b), m, k, n);
                }
                Op::Transpose { a, rows, cols } => {
                    let ga = acc(&mut grads, &self.nodes, *a);
                    for i in 0..*rows {
                        for j in 0..*cols {
                            ga[i * cols + j] += g[j * rows + i];
                        }
                    }
                }
                Op::Add(a, b) => {
                    add_into(acc(&mut grads, &self.nodes, *a), &g);
                    add_into(acc(&mut grads, &self.nodes, *b), &g);
                }
                Op::Sub(a, b) => {
                    add_into(acc(&mut grads, &self.nodes, *a), &g);
                    let gb = acc(&mut grads, &self.nodes, *b);
                    for (o, v) in gb.iter_mut().zip(&g) {
                        *o -= v;
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let bv = self.data(b).to_vec();
                    let av = self.data(a).to_vec();
                    let ga = acc(&mut grads, &self.nodes, a);
                    for i in 0..g.len() {
                        ga[i] += g[i] * bv[i];
                    }
                    let gb = acc(&mut grads, &self.nodes, b);
                    for i in 0..g.len() {
                        gb[i] += g[i] * av[i];
                    }
                }
                Op::Scale(a, c) => {
                    let ga = acc(&mut grads, &self.nodes, *a);
                    for (o, v) in ga.iter_mut().zip(&g) {
                        *o += c * v;
                    }
                }
                Op::AddScalar(a) => add_into(acc(&mut grads, &self.nodes, *a), &g),
                Op::Tanh(a) => {
                    let factor = if corrupt { 1.5 } else { 1.0 };
                    let ga = acc(&mut grads, &self.nodes, *a);
                    for i in 0..g.len() {
                        ga[i] += factor * g[i] * (1.0 - out[i] * out[i]);
                    }
                }
                Op::Sigmoid(a) => {
                    let ga = acc(&mut grads, &self.nodes, *a);
                    for i in 0..g.len() {
                        ga[i] += g[i] * out[i] * (1.0 - out[i]);
                    }
                }
                Op::Relu(a) => {
                    let ga = acc(&mut grads, &self.nodes, *a);
                    for i in 0..g.len() {
                        if out[i] > 0.0 {
                            ga[i] += g[i];
                        }
                    }
                }
                Op::Exp(a) => {
                    let ga = acc(&mut grads, &self.nodes, *a);
                    for i in 0..g.len() {
                        ga[i] += g[i] * out[i];
                    }
                }
                Op::Log(a) => {
                    let a = *a;
                    let x = self.data(a).to_vec();
                    let ga = acc(&mut grads, &self.nodes, a);
                    for i in 0..g.len() {
                        ga[i] += g[i] / x[i];
                    }
                }
                Op::Sum(a) => {
                    let ga = acc(&mut grads, &self.nodes, *a);
                    for o in ga.iter_mut() {
                        *o += g[0];
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let len = self.nodes[p].value.data.len();
                        add_into(acc(&mut grads, &self.nodes, p), &g[off..off + len]);
                        off += len;
                    }
                }
                Op::Slice { a, start } => {
                    let ga = acc(&mut grads, &self.nodes, *a);
                    add_into(&mut ga[*start..*start + g.len()], &g);
                }
                Op::Stack(rows) => {
                    let w = node.value.shape[1];
                    for (r, &p) in rows.iter().enumerate() {
                        add_into(acc(&mut grads, &self.nodes, p), &g[r * w..(r + 1) * w]);
                    }
                }
                Op::Row { a, index, cols } => {
                    let ga = acc(&mut grads, &self.nodes, *a);
                    add_into(&mut ga[index * cols..(index + 1) * cols], &g);
                }
                Op::Reshape(a) => add_into(acc(&mut grads, &self.nodes, *a), &g),
                Op::LogSoftmax { a, mask } => {
                    // d logp_i / d x_j = [i==j] - p_j over admissible entries
                    let gsum: f64 = g.iter().zip(mask).filter(|(_, &ok)| ok).map(|(v, _)| v).sum();
                    let ga = acc(&mut grads, &self.nodes, *a);
                    for i in 0..g.len() {
                        if mask[i] {
                            ga[i] += g[i] - out[i].exp() * gsum;
                        }
                    }
                }
                Op::Softmax { a, mask } => {
                    let dot: f64 = g.iter().zip(out).map(|(x, y)| x * y).sum();
                    let ga = acc(&mut grads, &self.nodes, *a);
                    for i in 0..g.len() {
                        if mask[i] {
                            ga[i] += out[i] * (g[i] - dot);
                        }
                    }
                }
                Op::Pick { a, index } => {
                    acc(&mut grads, &self.nodes, *a)[*index] += g[0];
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Grads(grads))
    }

    /// Runs the reverse pass and adds parameter gradients into `store`.
    /// Calling it twice without zeroing the store accumulates.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (&id, &v) in &self.params {
            if let Some(g) = grads.get(v) {
                store.accumulate_grad(id, g)?;
            }
        }
        Ok(())
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (o, v) in dst.iter_mut().zip(src) {
        *o += v;
    }
}
