//! Dense 2-D tensors and a reverse-mode autodiff tape.
//!
//! Every value is a row-major `f64` matrix; vectors are `k x 1` or `1 x k`.
//! Operations record themselves on a [`Tape`] whenever any operand requires
//! gradients, and [`Tape::backward`] replays the recording in reverse. There
//! is no broadcasting: every shape alignment is explicit so each backward
//! rule can be audited against the forward code.

use std::cell::RefCell;

use rand::Rng;

use crate::error::{Error, Result};

/// A plain dense matrix value, detached from any tape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: (usize, usize),
    data: Vec<f64>,
}

impl Tensor {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!(
                "tensor dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if rows * cols != data.len() {
            return Err(Error::Shape(format!(
                "shape {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Tensor { shape: (rows, cols), data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { shape: (rows, cols), data: vec![0.0; rows * cols] }
    }

    pub fn scalar(x: f64) -> Self {
        Tensor { shape: (1, 1), data: vec![x] }
    }

    /// Column vector `k x 1`.
    pub fn column(data: Vec<f64>) -> Self {
        let n = data.len();
        Tensor { shape: (n, 1), data }
    }

    /// Row vector `1 x k`.
    pub fn row(data: Vec<f64>) -> Self {
        let n = data.len();
        Tensor { shape: (1, n), data }
    }

    /// Uniform init in `±1/sqrt(fan_in)`.
    pub fn uniform_init<R: Rng>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
        Tensor { shape: (rows, cols), data }
    }

    pub fn rows(&self) -> usize {
        self.shape.0
    }

    pub fn cols(&self) -> usize {
        self.shape.1
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape.1 + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Log(Var),
    Scale(Var, f64),
    /// Softmax along `axis` (0 = down columns, 1 = across rows).
    Softmax(Var, usize),
    /// Per-row max over columns; stores the argmax column per row.
    RowMax(Var, Vec<usize>),
    SumAxis(Var, usize),
    SumAll(Var),
    Concat(Vec<Var>, usize),
    SliceRows(Var, usize),
    Transpose(Var),
    Reshape(Var),
    /// Tile a `1 x k` row to `n x k`.
    TileRows(Var),
    /// Inverted dropout: mask entries are 0/1, kept values scaled by 1/keep.
    Dropout(Var, Vec<f64>, f64),
    /// Row gather from an embedding table.
    Lookup(Var, Vec<usize>),
    /// Single element as a 1x1 scalar.
    Get(Var, usize),
    /// A[i][j] = w1 . [p_i ; q_j ; p_i*q_j] for w1 of length 3k.
    Alignment(Var, Var, Var),
}

struct Node {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    op: Op,
}

/// Recording of one forward computation. Single-threaded; build the graph,
/// call [`Tape::backward`] once, read gradients, then drop it.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Row-major matmul `C += A * B`, `A` is `n x k`, `B` is `k x m`.
fn matmul_acc(c: &mut [f64], a: &[f64], b: &[f64], n: usize, k: usize, m: usize) {
    if m == 1 {
        // Matrix-vector product: per-row dot products with four independent
        // accumulators so the compiler can vectorize the reduction (a single
        // sequential f64 sum cannot be reordered).
        for i in 0..n {
            let arow = &a[i * k..(i + 1) * k];
            let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
            for (ac, bc) in arow.chunks_exact(4).zip(b.chunks_exact(4)) {
                s0 += ac[0] * bc[0];
                s1 += ac[1] * bc[1];
                s2 += ac[2] * bc[2];
                s3 += ac[3] * bc[3];
            }
            let mut s = (s0 + s1) + (s2 + s3);
            let rem = k / 4 * 4;
            for (x, y) in arow[rem..].iter().zip(&b[rem..]) {
                s += x * y;
            }
            c[i] += s;
        }
        return;
    }
    for i in 0..n {
        let crow = &mut c[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (x, &y) in crow.iter_mut().zip(brow) {
                *x += av * y;
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, rows: usize, cols: usize, data: Vec<f64>, requires_grad: bool, op: Op) -> Var {
        debug_assert_eq!(rows * cols, data.len());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { rows, cols, data, requires_grad, grad: None, op });
        Var(nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].requires_grad)
    }

    /// Record a leaf holding `t`. Gradients accumulate into it when
    /// `requires_grad` is set.
    pub fn leaf(&self, t: Tensor, requires_grad: bool) -> Var {
        let (r, c) = t.shape();
        self.push(r, c, t.data, requires_grad, Op::Leaf)
    }

    pub fn constant(&self, t: Tensor) -> Var {
        self.leaf(t, false)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let nodes = self.nodes.borrow();
        (nodes[v.0].rows, nodes[v.0].cols)
    }

    pub fn value(&self, v: Var) -> Tensor {
        let nodes = self.nodes.borrow();
        let n = &nodes[v.0];
        Tensor { shape: (n.rows, n.cols), data: n.data.clone() }
    }

    /// Gradient buffer of `v` after `backward`, if one was accumulated.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let nodes = self.nodes.borrow();
        let n = &nodes[v.0];
        n.grad.as_ref().map(|g| Tensor { shape: (n.rows, n.cols), data: g.clone() })
    }

    /// Add `v`'s accumulated gradient into `out` element-wise, without
    /// allocating. No-op if no gradient has been accumulated.
    ///
    /// # Panics
    /// Panics if `out.len()` differs from the gradient length.
    pub fn add_grad_to(&self, v: Var, out: &mut [f64]) {
        let nodes = self.nodes.borrow();
        if let Some(g) = nodes[v.0].grad.as_ref() {
            assert_eq!(g.len(), out.len(), "add_grad_to: size mismatch");
            for (x, &y) in out.iter_mut().zip(g) {
                *x += y;
            }
        }
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let ((n, k), (k2, m)) = (self.shape(a), self.shape(b));
        if k != k2 {
            return Err(Error::Shape(format!("matmul: {n}x{k} incompatible with {k2}x{m}")));
        }
        let mut out = vec![0.0; n * m];
        {
            let nodes = self.nodes.borrow();
            matmul_acc(&mut out, &nodes[a.0].data, &nodes[b.0].data, n, k, m);
        }
        Ok(self.push(n, m, out, self.any_grad(&[a, b]), Op::MatMul(a, b)))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Shape(format!("add: {sa:?} vs {sb:?}")));
        }
        let out = {
            let nodes = self.nodes.borrow();
            nodes[a.0].data.iter().zip(&nodes[b.0].data).map(|(x, y)| x + y).collect()
        };
        Ok(self.push(sa.0, sa.1, out, self.any_grad(&[a, b]), Op::Add(a, b)))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Shape(format!("elementwise mul: {sa:?} vs {sb:?}")));
        }
        let out = {
            let nodes = self.nodes.borrow();
            nodes[a.0].data.iter().zip(&nodes[b.0].data).map(|(x, y)| x * y).collect()
        };
        Ok(self.push(sa.0, sa.1, out, self.any_grad(&[a, b]), Op::Mul(a, b)))
    }

    pub fn tanh(&self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = {
            let nodes = self.nodes.borrow();
            nodes[a.0].data.iter().map(|x| x.tanh()).collect()
        };
        self.push(r, c, out, self.any_grad(&[a]), Op::Tanh(a))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = {
            let nodes = self.nodes.borrow();
            nodes[a.0].data.iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect()
        };
        self.push(r, c, out, self.any_grad(&[a]), Op::Sigmoid(a))
    }

    pub fn log(&self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = {
            let nodes = self.nodes.borrow();
            nodes[a.0].data.iter().map(|x| x.ln()).collect()
        };
        self.push(r, c, out, self.any_grad(&[a]), Op::Log(a))
    }

    pub fn scale(&self, a: Var, s: f64) -> Var {
        let (r, c) = self.shape(a);
        let out = {
            let nodes = self.nodes.borrow();
            nodes[a.0].data.iter().map(|x| x * s).collect()
        };
        self.push(r, c, out, self.any_grad(&[a]), Op::Scale(a, s))
    }

    pub fn softmax(&self, a: Var, axis: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if axis > 1 {
            return Err(Error::Shape(format!("softmax: invalid axis {axis} for 2-D tensor")));
        }
        let mut out = vec![0.0; r * c];
        {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.0].data;
            let (slices, len, stride, step) = if axis == 1 { (r, c, c, 1) } else { (c, r, 1, c) };
            for s in 0..slices {
                let base = s * stride;
                let mut mx = f64::NEG_INFINITY;
                for i in 0..len {
                    mx = mx.max(x[base + i * step]);
                }
                let mut z = 0.0;
                for i in 0..len {
                    let e = (x[base + i * step] - mx).exp();
                    out[base + i * step] = e;
                    z += e;
                }
                for i in 0..len {
                    out[base + i * step] /= z;
                }
            }
        }
        Ok(self.push(r, c, out, self.any_grad(&[a]), Op::Softmax(a, axis)))
    }

    /// Max over each row: `n x m -> n x 1`.
    pub fn row_max(&self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let mut out = vec![0.0; r];
        let mut arg = vec![0usize; r];
        {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.0].data;
            for i in 0..r {
                let row = &x[i * c..(i + 1) * c];
                let (mut bi, mut bv) = (0, row[0]);
                for (j, &v) in row.iter().enumerate().skip(1) {
                    if v > bv {
                        bv = v;
                        bi = j;
                    }
                }
                out[i] = bv;
                arg[i] = bi;
            }
        }
        self.push(r, 1, out, self.any_grad(&[a]), Op::RowMax(a, arg))
    }

    pub fn sum_axis(&self, a: Var, axis: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if axis > 1 {
            return Err(Error::Shape(format!("sum_axis: invalid axis {axis}")));
        }
        let (or, oc) = if axis == 0 { (1, c) } else { (r, 1) };
        let mut out = vec![0.0; or * oc];
        {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.0].data;
            for i in 0..r {
                for j in 0..c {
                    let t = if axis == 0 { j } else { i };
                    out[t] += x[i * c + j];
                }
            }
        }
        Ok(self.push(or, oc, out, self.any_grad(&[a]), Op::SumAxis(a, axis)))
    }

    pub fn sum_all(&self, a: Var) -> Var {
        let s = {
            let nodes = self.nodes.borrow();
            nodes[a.0].data.iter().sum()
        };
        self.push(1, 1, vec![s], self.any_grad(&[a]), Op::SumAll(a))
    }

    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Shape("concat: no operands".into()));
        }
        if axis > 1 {
            return Err(Error::Shape(format!("concat: invalid axis {axis}")));
        }
        let shapes: Vec<(usize, usize)> = parts.iter().map(|&p| self.shape(p)).collect();
        let (r0, c0) = shapes[0];
        let (mut rr, mut cc) = (r0, c0);
        for &(r, c) in &shapes[1..] {
            if axis == 0 {
                if c != c0 {
                    return Err(Error::Shape(format!("concat axis 0: cols {c} vs {c0}")));
                }
                rr += r;
            } else {
                if r != r0 {
                    return Err(Error::Shape(format!("concat axis 1: rows {r} vs {r0}")));
                }
                cc += c;
            }
        }
        let mut out = vec![0.0; rr * cc];
        {
            let nodes = self.nodes.borrow();
            if axis == 0 {
                let mut off = 0;
                for &p in parts {
                    let d = &nodes[p.0].data;
                    out[off..off + d.len()].copy_from_slice(d);
                    off += d.len();
                }
            } else {
                let mut coff = 0;
                for (&p, &(r, c)) in parts.iter().zip(&shapes) {
                    let d = &nodes[p.0].data;
                    for i in 0..r {
                        out[i * cc + coff..i * cc + coff + c].copy_from_slice(&d[i * c..(i + 1) * c]);
                    }
                    coff += c;
                }
            }
        }
        Ok(self.push(rr, cc, out, self.any_grad(parts), Op::Concat(parts.to_vec(), axis)))
    }

    pub fn slice_rows(&self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if start >= end || end > r {
            return Err(Error::Shape(format!("slice_rows: [{start},{end}) out of {r} rows")));
        }
        let out = {
            let nodes = self.nodes.borrow();
            nodes[a.0].data[start * c..end * c].to_vec()
        };
        Ok(self.push(end - start, c, out, self.any_grad(&[a]), Op::SliceRows(a, start)))
    }

    pub fn transpose(&self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let mut out = vec![0.0; r * c];
        {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.0].data;
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = x[i * c + j];
                }
            }
        }
        self.push(c, r, out, self.any_grad(&[a]), Op::Transpose(a))
    }

    pub fn reshape(&self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if r * c != rows * cols {
            return Err(Error::Shape(format!("reshape: {r}x{c} -> {rows}x{cols}")));
        }
        let out = {
            let nodes = self.nodes.borrow();
            nodes[a.0].data.clone()
        };
        Ok(self.push(rows, cols, out, self.any_grad(&[a]), Op::Reshape(a)))
    }

    /// Tile a `1 x k` row vector into `n x k`.
    pub fn tile_rows(&self, a: Var, n: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if r != 1 {
            return Err(Error::Shape(format!("tile_rows: expected 1x{c} row, got {r}x{c}")));
        }
        let out = {
            let nodes = self.nodes.borrow();
            let d = &nodes[a.0].data;
            let mut v = Vec::with_capacity(n * c);
            for _ in 0..n {
                v.extend_from_slice(d);
            }
            v
        };
        Ok(self.push(n, c, out, self.any_grad(&[a]), Op::TileRows(a)))
    }

    /// Inverted dropout. With `training == false` or `ratio == 0` this is
    /// the identity and records nothing stochastic.
    pub fn dropout<R: Rng>(&self, a: Var, ratio: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&ratio) {
            return Err(Error::Shape(format!("dropout: ratio {ratio} outside [0,1)")));
        }
        if !training || ratio == 0.0 {
            return Ok(a);
        }
        let (r, c) = self.shape(a);
        let keep = 1.0 - ratio;
        let mask: Vec<f64> =
            (0..r * c).map(|_| if rng.gen::<f64>() < keep { 1.0 } else { 0.0 }).collect();
        let out = {
            let nodes = self.nodes.borrow();
            nodes[a.0].data.iter().zip(&mask).map(|(x, m)| x * m / keep).collect()
        };
        Ok(self.push(r, c, out, self.any_grad(&[a]), Op::Dropout(a, mask, keep)))
    }

    /// Gather rows `ids` from a `V x d` table into `len(ids) x d`.
    pub fn lookup(&self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.shape(table);
        if ids.is_empty() {
            return Err(Error::Shape("lookup: empty id list".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= v) {
            return Err(Error::Shape(format!("lookup: id {bad} out of vocabulary size {v}")));
        }
        let out = {
            let nodes = self.nodes.borrow();
            let t = &nodes[table.0].data;
            let mut o = Vec::with_capacity(ids.len() * d);
            for &id in ids {
                o.extend_from_slice(&t[id * d..(id + 1) * d]);
            }
            o
        };
        Ok(self.push(ids.len(), d, out, self.any_grad(&[table]), Op::Lookup(table, ids.to_vec())))
    }

    /// Extract one element as a `1 x 1` scalar.
    pub fn get(&self, a: Var, row: usize, col: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if row >= r || col >= c {
            return Err(Error::Shape(format!("get: ({row},{col}) out of {r}x{c}")));
        }
        let idx = row * c + col;
        let out = {
            let nodes = self.nodes.borrow();
            vec![nodes[a.0].data[idx]]
        };
        Ok(self.push(1, 1, out, self.any_grad(&[a]), Op::Get(a, idx)))
    }

    /// Alignment scores `A[i][j] = w1 . [p_i ; q_j ; p_i * q_j]`.
    /// `w1` is `3k x 1`, `p` is `n x k`, `q` is `m x k`.
    pub fn alignment(&self, w1: Var, p: Var, q: Var) -> Result<Var> {
        let ((wr, wc), (n, k), (m, k2)) = (self.shape(w1), self.shape(p), self.shape(q));
        if k != k2 {
            return Err(Error::Shape(format!("alignment: row dims {k} vs {k2}")));
        }
        if wc != 1 || wr != 3 * k {
            return Err(Error::Shape(format!(
                "alignment: weight must be {}x1, got {wr}x{wc}",
                3 * k
            )));
        }
        let mut out = vec![0.0; n * m];
        {
            let nodes = self.nodes.borrow();
            let w = &nodes[w1.0].data;
            let (wa, wb, wm) = (&w[..k], &w[k..2 * k], &w[2 * k..]);
            let pd = &nodes[p.0].data;
            let qd = &nodes[q.0].data;
            for i in 0..n {
                let pi = &pd[i * k..(i + 1) * k];
                let pa: f64 = pi.iter().zip(wa).map(|(x, w)| x * w).sum();
                for j in 0..m {
                    let qj = &qd[j * k..(j + 1) * k];
                    let mut s = pa;
                    for t in 0..k {
                        s += wb[t] * qj[t] + wm[t] * pi[t] * qj[t];
                    }
                    out[i * m + j] = s;
                }
            }
        }
        Ok(self.push(n, m, out, self.any_grad(&[w1, p, q]), Op::Alignment(w1, p, q)))
    }

    /// Reverse sweep from a scalar loss. Gradients accumulate into every
    /// `requires_grad` node reachable from it.
    pub fn backward(&self, loss: Var) -> Result<()> {
        let mut nodes = self.nodes.borrow_mut();
        {
            let l = &nodes[loss.0];
            if l.rows * l.cols != 1 {
                return Err(Error::Shape(format!(
                    "backward: loss must be scalar, got {}x{}",
                    l.rows, l.cols
                )));
            }
        }
        nodes[loss.0].grad = Some(vec![1.0]);

        fn acc(nodes: &mut [Node], v: Var, f: impl FnOnce(&mut [f64], &[f64], usize, usize)) {
            // split_at_mut dance avoided: compute against a copy of operand data
            // taken before mutation where needed by the caller.
            let (rows, cols) = (nodes[v.0].rows, nodes[v.0].cols);
            if !nodes[v.0].requires_grad {
                return;
            }
            let data = std::mem::take(&mut nodes[v.0].data);
            let g = nodes[v.0].grad.get_or_insert_with(|| vec![0.0; rows * cols]);
            f(g, &data, rows, cols);
            nodes[v.0].data = data;
        }

        for id in (0..=loss.0).rev() {
            if !nodes[id].requires_grad || nodes[id].grad.is_none() {
                continue;
            }
            let op = nodes[id].op.clone();
            let g = nodes[id].grad.clone().unwrap();
            let (orows, ocols) = (nodes[id].rows, nodes[id].cols);
            let y = match op {
                Op::Tanh(_) | Op::Sigmoid(_) => nodes[id].data.clone(),
                Op::Softmax(..) => nodes[id].data.clone(),
                _ => Vec::new(),
            };
            match op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (n, k) = (nodes[a.0].rows, nodes[a.0].cols);
                    let m = nodes[b.0].cols;
                    let adata = nodes[a.0].data.clone();
                    let bdata = nodes[b.0].data.clone();
                    acc(&mut nodes, a, |ga, _, _, _| {
                        // dA = G * B^T
                        if m == 1 {
                            // Outer product g * b^T: rank-1 row updates.
                            for i in 0..n {
                                let gi = g[i];
                                if gi == 0.0 {
                                    continue;
                                }
                                let garow = &mut ga[i * k..(i + 1) * k];
                                for (x, &y) in garow.iter_mut().zip(&bdata) {
                                    *x += gi * y;
                                }
                            }
                            return;
                        }
                        for i in 0..n {
                            let grow = &g[i * m..(i + 1) * m];
                            let garow = &mut ga[i * k..(i + 1) * k];
                            for p in 0..k {
                                let brow = &bdata[p * m..(p + 1) * m];
                                let s: f64 = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                                garow[p] += s;
                            }
                        }
                    });
                    acc(&mut nodes, b, |gb, _, _, _| {
                        // dB = A^T * G
                        if m == 1 {
                            // Vector accumulation gb += g[i] * A[i, :].
                            for i in 0..n {
                                let gi = g[i];
                                if gi == 0.0 {
                                    continue;
                                }
                                let arow = &adata[i * k..(i + 1) * k];
                                for (x, &y) in gb.iter_mut().zip(arow) {
                                    *x += gi * y;
                                }
                            }
                            return;
                        }
                        for i in 0..n {
                            let grow = &g[i * m..(i + 1) * m];
                            let arow = &adata[i * k..(i + 1) * k];
                            for (p, &av) in arow.iter().enumerate() {
                                if av == 0.0 {
                                    continue;
                                }
                                let gbrow = &mut gb[p * m..(p + 1) * m];
                                for (x, &y) in gbrow.iter_mut().zip(grow) {
                                    *x += av * y;
                                }
                            }
                        }
                    });
                }
                Op::Add(a, b) => {
                    acc(&mut nodes, a, |ga, _, _, _| {
                        for (x, y) in ga.iter_mut().zip(&g) {
                            *x += y;
                        }
                    });
                    acc(&mut nodes, b, |gb, _, _, _| {
                        for (x, y) in gb.iter_mut().zip(&g) {
                            *x += y;
                        }
                    });
                }
                Op::Mul(a, b) => {
                    let bdata = nodes[b.0].data.clone();
                    let adata = nodes[a.0].data.clone();
                    acc(&mut nodes, a, |ga, _, _, _| {
                        for i in 0..ga.len() {
                            ga[i] += g[i] * bdata[i];
                        }
                    });
                    acc(&mut nodes, b, |gb, _, _, _| {
                        for i in 0..gb.len() {
                            gb[i] += g[i] * adata[i];
                        }
                    });
                }
                Op::Tanh(a) => acc(&mut nodes, a, |ga, _, _, _| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                }),
                Op::Sigmoid(a) => acc(&mut nodes, a, |ga, _, _, _| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                }),
                Op::Log(a) => acc(&mut nodes, a, |ga, x, _, _| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] / x[i];
                    }
                }),
                Op::Scale(a, s) => acc(&mut nodes, a, |ga, _, _, _| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * s;
                    }
                }),
                Op::Softmax(a, axis) => acc(&mut nodes, a, |ga, _, r, c| {
                    let (slices, len, stride, step) =
                        if axis == 1 { (r, c, c, 1) } else { (c, r, 1, c) };
                    for s in 0..slices {
                        let base = s * stride;
                        let mut dot = 0.0;
                        for i in 0..len {
                            let idx = base + i * step;
                            dot += g[idx] * y[idx];
                        }
                        for i in 0..len {
                            let idx = base + i * step;
                            ga[idx] += y[idx] * (g[idx] - dot);
                        }
                    }
                }),
                Op::RowMax(a, arg) => acc(&mut nodes, a, |ga, _, _, c| {
                    for (i, &j) in arg.iter().enumerate() {
                        ga[i * c + j] += g[i];
                    }
                }),
                Op::SumAxis(a, axis) => acc(&mut nodes, a, |ga, _, r, c| {
                    for i in 0..r {
                        for j in 0..c {
                            let t = if axis == 0 { j } else { i };
                            ga[i * c + j] += g[t];
                        }
                    }
                }),
                Op::SumAll(a) => acc(&mut nodes, a, |ga, _, _, _| {
                    for x in ga.iter_mut() {
                        *x += g[0];
                    }
                }),
                Op::Concat(parts, axis) => {
                    if axis == 0 {
                        let mut off = 0;
                        for p in parts {
                            let len = nodes[p.0].rows * nodes[p.0].cols;
                            let seg = g[off..off + len].to_vec();
                            acc(&mut nodes, p, |gp, _, _, _| {
                                for (x, y) in gp.iter_mut().zip(&seg) {
                                    *x += y;
                                }
                            });
                            off += len;
                        }
                    } else {
                        let mut coff = 0;
                        for p in parts {
                            let (r, c) = (nodes[p.0].rows, nodes[p.0].cols);
                            acc(&mut nodes, p, |gp, _, _, _| {
                                for i in 0..r {
                                    for j in 0..c {
                                        gp[i * c + j] += g[i * ocols + coff + j];
                                    }
                                }
                            });
                            coff += c;
                        }
                    }
                }
                Op::SliceRows(a, start) => acc(&mut nodes, a, |ga, _, _, c| {
                    for i in 0..orows {
                        for j in 0..c {
                            ga[(start + i) * c + j] += g[i * c + j];
                        }
                    }
                }),
                Op::Transpose(a) => acc(&mut nodes, a, |ga, _, r, c| {
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += g[j * r + i];
                        }
                    }
                }),
                Op::Reshape(a) => acc(&mut nodes, a, |ga, _, _, _| {
                    for (x, y) in ga.iter_mut().zip(&g) {
                        *x += y;
                    }
                }),
                Op::TileRows(a) => acc(&mut nodes, a, |ga, _, _, c| {
                    for i in 0..orows {
                        for j in 0..c {
                            ga[j] += g[i * c + j];
                        }
                    }
                }),
                Op::Dropout(a, mask, keep) => acc(&mut nodes, a, |ga, _, _, _| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * mask[i] / keep;
                    }
                }),
                Op::Lookup(table, ids) => acc(&mut nodes, table, |gt, _, _, d| {
                    for (i, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            gt[id * d + j] += g[i * d + j];
                        }
                    }
                }),
                Op::Get(a, idx) => acc(&mut nodes, a, |ga, _, _, _| {
                    ga[idx] += g[0];
                }),
                Op::Alignment(w1, p, q) => {
                    let k = nodes[p.0].cols;
                    let (n, m) = (orows, ocols);
                    let w = nodes[w1.0].data.clone();
                    let pd = nodes[p.0].data.clone();
                    let qd = nodes[q.0].data.clone();
                    acc(&mut nodes, w1, |gw, _, _, _| {
                        for i in 0..n {
                            for j in 0..m {
                                let gij = g[i * m + j];
                                for t in 0..k {
                                    let (pv, qv) = (pd[i * k + t], qd[j * k + t]);
                                    gw[t] += gij * pv;
                                    gw[k + t] += gij * qv;
                                    gw[2 * k + t] += gij * pv * qv;
                                }
                            }
                        }
                    });
                    acc(&mut nodes, p, |gp, _, _, _| {
                        for i in 0..n {
                            for j in 0..m {
                                let gij = g[i * m + j];
                                for t in 0..k {
                                    gp[i * k + t] += gij * (w[t] + w[2 * k + t] * qd[j * k + t]);
                                }
                            }
                        }
                    });
                    acc(&mut nodes, q, |gq, _, _, _| {
                        for i in 0..n {
                            for j in 0..m {
                                let gij = g[i * m + j];
                                for t in 0..k {
                                    gq[j * k + t] += gij * (w[k + t] + w[2 * k + t] * pd[i * k + t]);
                                }
                            }
                        }
                    });
                }
            }
        }
        Ok(())
    }
}

/// Max relative error between tape gradients and central finite differences.
///
/// `f` must be a deterministic graph builder; two identical evaluations that
/// disagree are reported as an error. The relative error for one entry is
/// `|analytic - numeric| / max(1e-6, |analytic| + |numeric|)`. The 1e-6
/// denominator floor turns the comparison into an absolute one for
/// near-zero gradients: central differences at 64-bit with a small epsilon
/// carry ~1e-11 of roundoff noise on a loss of order 1, so entries below
/// the floor are checked to ~1e-10 absolute rather than relatively.
pub fn gradient_check<F>(f: F, params: &[Tensor], epsilon: f64) -> Result<f64>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    if epsilon <= 0.0 {
        return Err(Error::Shape(format!("gradient_check: epsilon {epsilon} must be positive")));
    }
    let eval = |params: &[Tensor], grad: bool| -> Result<(f64, Vec<Option<Tensor>>)> {
        let tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone(), grad)).collect();
        let loss = f(&tape, &vars)?;
        let value = tape.value(loss).data()[0];
        let grads = if grad {
            tape.backward(loss)?;
            vars.iter().map(|&v| tape.grad(v)).collect()
        } else {
            Vec::new()
        };
        Ok((value, grads))
    };

    let (l1, grads) = eval(params, true)?;
    let (l2, _) = eval(params, false)?;
    if l1 != l2 {
        return Err(Error::NonDeterministic { first: l1, second: l2 });
    }

    let mut max_rel = 0.0f64;
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        let analytic = grads[pi].clone().unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols()));
        for i in 0..p.numel() {
            let orig = work[pi].data()[i];
            work[pi].data_mut()[i] = orig + epsilon;
            let (lp, _) = eval(&work, false)?;
            work[pi].data_mut()[i] = orig - epsilon;
            let (lm, _) = eval(&work, false)?;
            work[pi].data_mut()[i] = orig;
            let numeric = (lp - lm) / (2.0 * epsilon);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
            max_rel = max_rel.max(rel);
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::column(vec![0.0, 0.0, 0.0]));
        let y = tape.softmax(x, 0).unwrap();
        for &v in tape.value(y).data() {
            assert!(close(v, 1.0 / 3.0, 1e-12));
        }
    }

    #[test]
    fn matmul_identity() {
        let tape = Tape::new();
        let mut eye = Tensor::zeros(3, 3);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        let x = Tensor::from_vec(3, 4, (0..12).map(|i| i as f64).collect()).unwrap();
        let a = tape.constant(eye);
        let b = tape.constant(x.clone());
        let y = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(y), x);
    }

    #[test]
    fn sigmoid_at_zero() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::scalar(0.0));
        let y = tape.sigmoid(x);
        assert!(close(tape.value(y).data()[0], 0.5, 1e-15));
    }

    #[test]
    fn matmul_shape_mismatch_names_shapes() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(2, 3));
        let b = tape.constant(Tensor::zeros(4, 2));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("2x3") && err.contains("4x2"), "{err}");
    }

    #[test]
    fn backward_sum_gives_ones() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::column(vec![1.0, -2.0, 3.0]), true);
        let loss = tape.sum_all(x);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_elementwise_square() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::column(vec![1.0, 2.0]), true);
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum_all(sq);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::column(vec![1.0, 2.0]), true);
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn linear_graph_matches_analytic_exactly() {
        // loss = sum(3 * x): grad must be exactly 3.
        let check = gradient_check(
            |tape, vars| {
                let y = tape.scale(vars[0], 3.0);
                Ok(tape.sum_all(y))
            },
            &[Tensor::column(vec![0.4, -1.2, 2.5])],
            1e-5,
        )
        .unwrap();
        assert!(check <= 1e-10, "linear check {check}");
    }

    #[test]
    fn random_three_layer_graph_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w1 = Tensor::uniform_init(4, 3, 3, &mut rng);
        let w2 = Tensor::uniform_init(2, 4, 4, &mut rng);
        let x = Tensor::uniform_init(3, 1, 1, &mut rng);
        let check = gradient_check(
            |tape, vars| {
                let h = tape.tanh(tape.matmul(vars[0], vars[2])?);
                let o = tape.sigmoid(tape.matmul(vars[1], h)?);
                let p = tape.softmax(o, 0)?;
                let lp = tape.log(p);
                Ok(tape.scale(tape.sum_all(lp), -1.0))
            },
            &[w1, w2, x],
            1e-5,
        )
        .unwrap();
        assert!(check < 1e-4, "rel err {check}");
    }

    #[test]
    fn softmax_cross_entropy_check() {
        let check = gradient_check(
            |tape, vars| {
                let p = tape.softmax(vars[0], 0)?;
                let pick = tape.get(p, 1, 0)?;
                Ok(tape.scale(tape.log(pick), -1.0))
            },
            &[Tensor::column(vec![0.3, -0.7, 1.4])],
            1e-5,
        )
        .unwrap();
        assert!(check < 1e-6, "rel err {check}");
    }

    #[test]
    fn gradient_check_rejects_nondeterministic_builder() {
        use std::cell::Cell;
        let calls = Cell::new(0.0);
        let err = gradient_check(
            |tape, vars| {
                calls.set(calls.get() + 1.0);
                let shifted = tape.scale(vars[0], calls.get());
                Ok(tape.sum_all(shifted))
            },
            &[Tensor::scalar(1.0)],
            1e-5,
        );
        assert!(matches!(err, Err(Error::NonDeterministic { .. })));
    }

    #[test]
    fn dropout_eval_mode_is_identity() {
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = tape.constant(Tensor::column(vec![1.0, 2.0, 3.0]));
        let y = tape.dropout(x, 0.5, false, &mut rng).unwrap();
        assert_eq!(x, y);
        let z = tape.dropout(x, 0.0, true, &mut rng).unwrap();
        assert_eq!(x, z);
    }

    #[test]
    fn dropout_backward_matches_mask() {
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = tape.leaf(Tensor::column(vec![1.0; 64]), true);
        let y = tape.dropout(x, 0.25, true, &mut rng).unwrap();
        let loss = tape.sum_all(y);
        tape.backward(loss).unwrap();
        let fw = tape.value(y);
        let g = tape.grad(x).unwrap();
        // kept entries carry 1/keep both forward and backward, dropped are 0
        for (f, gi) in fw.data().iter().zip(g.data()) {
            assert!(close(*f, *gi, 1e-12));
        }
    }

    #[test]
    fn row_max_routes_gradient_to_argmax() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(2, 3, vec![1.0, 5.0, 2.0, 7.0, 0.0, 3.0]).unwrap(), true);
        let m = tape.row_max(x);
        assert_eq!(tape.value(m).data(), &[5.0, 7.0]);
        let loss = tape.sum_all(m);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn alignment_matches_compositional_route() {
        // fused alignment vs explicit per-pair concat + dot
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = 3;
        let w = Tensor::uniform_init(3 * k, 1, 1, &mut rng);
        let p = Tensor::uniform_init(2, k, k, &mut rng);
        let q = Tensor::uniform_init(4, k, k, &mut rng);
        let tape = Tape::new();
        let (wv, pv, qv) = (tape.constant(w.clone()), tape.constant(p.clone()), tape.constant(q.clone()));
        let a = tape.alignment(wv, pv, qv).unwrap();
        let av = tape.value(a);
        for i in 0..2 {
            for j in 0..4 {
                let mut s = 0.0;
                for t in 0..k {
                    s += w.data()[t] * p.at(i, t)
                        + w.data()[k + t] * q.at(j, t)
                        + w.data()[2 * k + t] * p.at(i, t) * q.at(j, t);
                }
                assert!(close(av.at(i, j), s, 1e-12));
            }
        }
        let check = gradient_check(
            |tape, vars| {
                let a = tape.alignment(vars[0], vars[1], vars[2])?;
                let sm = tape.softmax(a, 1)?;
                let lg = tape.log(sm);
                Ok(tape.scale(tape.sum_all(lg), -1.0))
            },
            &[w, p, q],
            1e-5,
        )
        .unwrap();
        assert!(check < 1e-6, "rel err {check}");
    }

    #[test]
    fn ops_without_grad_inputs_record_no_backward_work() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::column(vec![1.0, 2.0]));
        let y = tape.tanh(x);
        let loss = tape.sum_all(tape.mul(y, y).unwrap());
        tape.backward(loss).unwrap();
        assert!(tape.grad(x).is_none());
    }

    proptest! {
        #[test]
        fn softmax_rows_are_simplices(vals in proptest::collection::vec(-30.0f64..30.0, 12)) {
            let tape = Tape::new();
            let x = tape.constant(Tensor::from_vec(3, 4, vals).unwrap());
            let y = tape.softmax(x, 1).unwrap();
            let v = tape.value(y);
            for i in 0..3 {
                let mut s = 0.0;
                for j in 0..4 {
                    prop_assert!(v.at(i, j) >= 0.0);
                    s += v.at(i, j);
                }
                prop_assert!((s - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn concat_then_slice_is_identity(a in proptest::collection::vec(-5.0f64..5.0, 6),
                                         b in proptest::collection::vec(-5.0f64..5.0, 9)) {
            let tape = Tape::new();
            let av = tape.constant(Tensor::from_vec(2, 3, a.clone()).unwrap());
            let bv = tape.constant(Tensor::from_vec(3, 3, b).unwrap());
            let cat = tape.concat(&[av, bv], 0).unwrap();
            let back = tape.slice_rows(cat, 0, 2).unwrap();
            let got = tape.value(back);
            prop_assert_eq!(got.data(), &a[..]);
        }
    }
}
