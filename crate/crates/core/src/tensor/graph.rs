//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value and enough saved
//! state to run its backward rule. Inputs always precede their consumers, so
//! walking the tape backwards is a valid topological order.

use indexmap::IndexMap;
use rand::Rng;

use super::kernels::{gelu, gelu_grad, gemm, gemm_tn_acc, lanes, transpose};
use super::tensor::{Real, Tensor};
use super::TensorError;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, S),
    ScaleBy(Var, Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        axis: usize,
        xhat: Vec<S>,
        rstd: Vec<S>,
    },
    Gelu(Var),
    Tanh(Var),
    Exp(Var),
    Sqrt(Var),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    MeanOverMask {
        x: Var,
        mask: Vec<bool>,
        count: usize,
    },
    SquaredDistance(Var, Var),
    Sum(Var),
    Mean(Var),
    PickMean {
        x: Var,
        idx: Vec<usize>,
    },
    Dropout {
        x: Var,
        keep_scale: Vec<S>,
    },
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    needs_grad: bool,
    param: Option<String>,
}

/// Gradients of the parameters registered on a graph, by name.
pub type Gradients<S> = IndexMap<String, Tensor<S>>;

pub struct Graph<S: Real = f32> {
    nodes: Vec<Node<S>>,
}

impl<S: Real> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

impl<S: Real> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// A trainable leaf whose gradient is reported under `name`.
    pub fn param(&mut self, name: &str, value: Tensor<S>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
            param: Some(name.to_string()),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(mismatch("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![S::zero(); m * n];
        gemm(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            k,
            n,
            false,
        );
        Ok(self.push(Tensor::raw(vec![m, n], out), Op::MatMul(a, b), &[a, b]))
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        if k != k2 {
            return Err(mismatch("matmul_nt", self.shape(a), self.shape(b)));
        }
        let bt = transpose(self.value(b).data(), n, k);
        let mut out = vec![S::zero(); m * n];
        gemm(self.value(a).data(), &bt, &mut out, m, k, n, false);
        Ok(self.push(Tensor::raw(vec![m, n], out), Op::MatMulNT(a, b), &[a, b]))
    }

    /// Elementwise sum of equal shapes, or a row vector added to every row.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, n) = self.dims(a);
        let (bm, bn) = self.dims(b);
        let av = self.value(a).data();
        let bv = self.value(b).data();
        if (m, n) == (bm, bn) {
            let out: Vec<S> = av.iter().zip(bv).map(|(x, y)| *x + *y).collect();
            Ok(self.push(Tensor::raw(vec![m, n], out), Op::Add(a, b), &[a, b]))
        } else if bm == 1 && bn == n {
            let out: Vec<S> = av
                .chunks(n)
                .flat_map(|row| row.iter().zip(bv).map(|(x, y)| *x + *y))
                .collect();
            Ok(self.push(Tensor::raw(vec![m, n], out), Op::AddRow(a, b), &[a, b]))
        } else {
            Err(mismatch("add", self.shape(a), self.shape(b)))
        }
    }

    /// Elementwise product of equal shapes, or every row scaled by a row vector.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, n) = self.dims(a);
        let (bm, bn) = self.dims(b);
        let av = self.value(a).data();
        let bv = self.value(b).data();
        if (m, n) == (bm, bn) {
            let out: Vec<S> = av.iter().zip(bv).map(|(x, y)| *x * *y).collect();
            Ok(self.push(Tensor::raw(vec![m, n], out), Op::Mul(a, b), &[a, b]))
        } else if bm == 1 && bn == n {
            let out: Vec<S> = av
                .chunks(n)
                .flat_map(|row| row.iter().zip(bv).map(|(x, y)| *x * *y))
                .collect();
            Ok(self.push(Tensor::raw(vec![m, n], out), Op::MulRow(a, b), &[a, b]))
        } else {
            Err(mismatch("mul", self.shape(a), self.shape(b)))
        }
    }

    pub fn scale(&mut self, a: Var, c: S) -> Var {
        let t = self.value(a);
        let out = t.data().iter().map(|x| *x * c).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::raw(shape, out), Op::Scale(a, c), &[a])
    }

    /// Multiplies every element by the one-element tensor `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var, TensorError> {
        let c = self.value(s).item()?;
        let t = self.value(a);
        let out = t.data().iter().map(|x| *x * c).collect();
        let shape = t.shape().to_vec();
        Ok(self.push(Tensor::raw(shape, out), Op::ScaleBy(a, s), &[a, s]))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        if axis > 1 {
            return Err(TensorError::InvalidArgument(format!("softmax axis {axis}")));
        }
        let (m, n) = self.dims(x);
        let xv = self.value(x).data();
        let mut out = vec![S::zero(); m * n];
        for (start, stride, len) in lanes(m, n, axis) {
            let idx = |i: usize| start + i * stride;
            let mx = (0..len).map(|i| xv[idx(i)]).fold(S::neg_infinity(), S::max);
            let mut sum = S::zero();
            for i in 0..len {
                let e = (xv[idx(i)] - mx).exp();
                out[idx(i)] = e;
                sum += e;
            }
            for i in 0..len {
                out[idx(i)] = out[idx(i)] / sum;
            }
        }
        Ok(self.push(Tensor::raw(vec![m, n], out), Op::Softmax { x, axis }, &[x]))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let (m, n) = self.dims(x);
        let xv = self.value(x).data();
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            let row = &xv[i * n..(i + 1) * n];
            let mx = row.iter().copied().fold(S::neg_infinity(), S::max);
            let lse = row.iter().map(|v| (*v - mx).exp()).sum::<S>().ln() + mx;
            for j in 0..n {
                out[i * n + j] = row[j] - lse;
            }
        }
        self.push(Tensor::raw(vec![m, n], out), Op::LogSoftmax(x), &[x])
    }

    /// Normalizes each lane along `axis` to zero mean and unit variance, then
    /// applies the affine `gamma`, `beta` (each one value per lane position).
    pub fn layer_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        axis: usize,
        eps: S,
    ) -> Result<Var, TensorError> {
        if axis > 1 || eps <= S::zero() {
            return Err(TensorError::InvalidArgument(format!(
                "layer_norm needs axis 0 or 1 and eps > 0 (axis {axis}, eps {eps})"
            )));
        }
        let (m, n) = self.dims(x);
        let len = if axis == 1 { n } else { m };
        if self.value(gamma).numel() != len || self.value(beta).numel() != len {
            return Err(mismatch("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let xv = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut out = vec![S::zero(); m * n];
        let mut xhat = vec![S::zero(); m * n];
        let mut rstds = Vec::new();
        let lenf = S::from_usize(len).unwrap();
        for (start, stride, len) in lanes(m, n, axis) {
            let idx = |i: usize| start + i * stride;
            let mean = (0..len).map(|i| xv[idx(i)]).sum::<S>() / lenf;
            let var = (0..len).map(|i| (xv[idx(i)] - mean).powi(2)).sum::<S>() / lenf;
            let rstd = S::one() / (var + eps).sqrt();
            for i in 0..len {
                let h = (xv[idx(i)] - mean) * rstd;
                xhat[idx(i)] = h;
                out[idx(i)] = h * g[i] + b[i];
            }
            rstds.push(rstd);
        }
        Ok(self.push(
            Tensor::raw(vec![m, n], out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                axis,
                xhat,
                rstd: rstds,
            },
            &[x, gamma, beta],
        ))
    }

    fn unary(&mut self, x: Var, f: impl Fn(S) -> S, op: Op<S>) -> Var {
        let t = self.value(x);
        let out = t.data().iter().map(|v| f(*v)).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::raw(shape, out), op, &[x])
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, gelu, Op::Gelu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, S::tanh, Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, S::exp, Op::Exp(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, S::sqrt, Op::Sqrt(x))
    }

    /// Rows of `table` selected by `ids`.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let (rows, d) = self.dims(table);
        if let Some(bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(TensorError::InvalidArgument(format!(
                "id {bad} outside embedding table of {rows} rows"
            )));
        }
        let tv = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        Ok(self.push(
            Tensor::raw(vec![ids.len(), d], out),
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        let Some(&first) = parts.first() else {
            return Err(TensorError::InvalidArgument("concat of nothing".into()));
        };
        let (m0, n0) = self.dims(first);
        let out = match axis {
            0 => {
                let mut rows = 0;
                let mut out = Vec::new();
                for p in parts {
                    let (m, n) = self.dims(*p);
                    if n != n0 {
                        return Err(mismatch("concat", self.shape(first), self.shape(*p)));
                    }
                    rows += m;
                    out.extend_from_slice(self.value(*p).data());
                }
                Tensor::raw(vec![rows, n0], out)
            }
            1 => {
                let mut cols = 0;
                for p in parts {
                    let (m, n) = self.dims(*p);
                    if m != m0 {
                        return Err(mismatch("concat", self.shape(first), self.shape(*p)));
                    }
                    cols += n;
                }
                let mut out = Vec::with_capacity(m0 * cols);
                for i in 0..m0 {
                    for p in parts {
                        out.extend_from_slice(self.value(*p).row(i));
                    }
                }
                Tensor::raw(vec![m0, cols], out)
            }
            _ => return Err(TensorError::InvalidArgument(format!("concat axis {axis}"))),
        };
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        ))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let (m, n) = self.dims(x);
        if start + len > m || len == 0 {
            return Err(TensorError::InvalidArgument(format!(
                "row slice {start}..{} of {m} rows",
                start + len
            )));
        }
        let out = self.value(x).data()[start * n..(start + len) * n].to_vec();
        Ok(self.push(
            Tensor::raw(vec![len, n], out),
            Op::SliceRows { x, start },
            &[x],
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let (m, n) = self.dims(x);
        if start + len > n || len == 0 {
            return Err(TensorError::InvalidArgument(format!(
                "column slice {start}..{} of {n} columns",
                start + len
            )));
        }
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&xv[i * n + start..i * n + start + len]);
        }
        Ok(self.push(
            Tensor::raw(vec![m, len], out),
            Op::SliceCols { x, start },
            &[x],
        ))
    }

    /// Mean of the rows whose mask entry is true, as a `1 x d` row.
    pub fn mean_over_mask(&mut self, x: Var, mask: &[bool]) -> Result<Var, TensorError> {
        let (m, n) = self.dims(x);
        if mask.len() != m {
            return Err(mismatch("mean_over_mask", self.shape(x), &[mask.len()]));
        }
        let count = mask.iter().filter(|b| **b).count();
        if count == 0 {
            return Err(TensorError::InvalidArgument("mask selects no rows".into()));
        }
        let xv = self.value(x).data();
        let mut out = vec![S::zero(); n];
        for (i, _) in mask.iter().enumerate().filter(|(_, b)| **b) {
            for (o, v) in out.iter_mut().zip(&xv[i * n..(i + 1) * n]) {
                *o += *v;
            }
        }
        let c = S::from_usize(count).unwrap();
        out.iter_mut().for_each(|o| *o = *o / c);
        Ok(self.push(
            Tensor::raw(vec![1, n], out),
            Op::MeanOverMask {
                x,
                mask: mask.to_vec(),
                count,
            },
            &[x],
        ))
    }

    /// Pairwise squared Euclidean distances between the rows of `a` (`m x d`)
    /// and the rows of `b` (`n x d`), as an `m x n` matrix.
    pub fn squared_distance(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, d) = self.dims(a);
        let (n, d2) = self.dims(b);
        if d != d2 {
            return Err(mismatch("squared_distance", self.shape(a), self.shape(b)));
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = S::zero();
                for k in 0..d {
                    let diff = av[i * d + k] - bv[j * d + k];
                    s += diff * diff;
                }
                out[i * n + j] = s;
            }
        }
        Ok(self.push(
            Tensor::raw(vec![m, n], out),
            Op::SquaredDistance(a, b),
            &[a, b],
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<S>();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().copied().sum::<S>() / S::from_usize(t.numel()).unwrap();
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Mean over rows of `x[i, idx[i]]`.
    pub fn pick_mean(&mut self, x: Var, idx: &[usize]) -> Result<Var, TensorError> {
        let (m, n) = self.dims(x);
        if idx.len() != m || idx.iter().any(|&j| j >= n) {
            return Err(mismatch("pick_mean", self.shape(x), &[idx.len()]));
        }
        let t = self.value(x);
        let s =
            idx.iter().enumerate().map(|(i, &j)| t.at(i, j)).sum::<S>() / S::from_usize(m).unwrap();
        Ok(self.push(
            Tensor::scalar(s),
            Op::PickMean {
                x,
                idx: idx.to_vec(),
            },
            &[x],
        ))
    }

    /// Inverted dropout: zeroes each element with probability `p` and scales
    /// the survivors by `1 / (1 - p)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Var {
        if p <= 0.0 {
            return x;
        }
        let t = self.value(x);
        let keep = S::lit(1.0 / (1.0 - p));
        let keep_scale: Vec<S> = (0..t.numel())
            .map(|_| {
                if rng.random::<f64>() < p {
                    S::zero()
                } else {
                    keep
                }
            })
            .collect();
        let out = t
            .data()
            .iter()
            .zip(&keep_scale)
            .map(|(v, k)| *v * *k)
            .collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::raw(shape, out), Op::Dropout { x, keep_scale }, &[x])
    }

    /// Back-propagates from a one-element `loss` and returns the gradient of
    /// every parameter on the tape. Parameters the loss does not reach get a
    /// zero gradient and a warning.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>, TensorError> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(TensorError::NotScalar(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![S::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.backprop(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let mut out = Gradients::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Some(name) = &node.param {
                let g = match grads[i].take() {
                    Some(g) => g,
                    None => {
                        log::warn!(
                            "parameter {name} is disconnected from the loss; gradient set to zero"
                        );
                        vec![S::zero(); node.value.numel()]
                    }
                };
                let t = Tensor::raw(node.value.shape().to_vec(), g);
                match out.get_mut(name) {
                    Some(prev) => {
                        for (p, v) in prev.data_mut().iter_mut().zip(t.data()) {
                            *p += *v;
                        }
                    }
                    None => {
                        out.insert(name.clone(), t);
                    }
                }
            }
        }
        Ok(out)
    }

    fn backprop(&self, node: &Node<S>, g: &[S], grads: &mut [Option<Vec<S>>]) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [S])| {
            let n = &nodes[v.0];
            if n.needs_grad {
                let buf = grads[v.0].get_or_insert_with(|| vec![S::zero(); n.value.numel()]);
                f(buf);
            }
        };
        let val = |v: Var| &nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (val(*a).rows(), val(*a).cols());
                let n = val(*b).cols();
                // dA = G B^T, dB = A^T G
                acc(*a, &mut |ga| {
                    let bt = transpose(val(*b).data(), k, n);
                    gemm(g, &bt, ga, m, n, k, true);
                });
                acc(*b, &mut |gb| gemm_tn_acc(val(*a).data(), g, gb, m, k, n));
            }
            Op::MatMulNT(a, b) => {
                let (m, k) = (val(*a).rows(), val(*a).cols());
                let n = val(*b).rows();
                // C = A B^T: dA = G B, dB = G^T A
                acc(*a, &mut |ga| gemm(g, val(*b).data(), ga, m, n, k, true));
                acc(*b, &mut |gb| gemm_tn_acc(g, val(*a).data(), gb, m, n, k));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::AddRow(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                let n = val(*b).numel();
                acc(*b, &mut |gb| {
                    for row in g.chunks(n) {
                        add_into(gb, row);
                    }
                });
            }
            Op::Mul(a, b) => {
                acc(*a, &mut |ga| {
                    for ((o, gv), bv) in ga.iter_mut().zip(g).zip(val(*b).data()) {
                        *o += *gv * *bv;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((o, gv), av) in gb.iter_mut().zip(g).zip(val(*a).data()) {
                        *o += *gv * *av;
                    }
                });
            }
            Op::MulRow(a, b) => {
                let n = val(*b).numel();
                let bv = val(*b).data();
                acc(*a, &mut |ga| {
                    for (i, (o, gv)) in ga.iter_mut().zip(g).enumerate() {
                        *o += *gv * bv[i % n];
                    }
                });
                let av = val(*a).data();
                acc(*b, &mut |gb| {
                    for (i, gv) in g.iter().enumerate() {
                        gb[i % n] += *gv * av[i];
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |ga| {
                for (o, gv) in ga.iter_mut().zip(g) {
                    *o += *gv * *c;
                }
            }),
            Op::ScaleBy(a, s) => {
                let c = val(*s).data()[0];
                acc(*a, &mut |ga| {
                    for (o, gv) in ga.iter_mut().zip(g) {
                        *o += *gv * c;
                    }
                });
                let dot = g
                    .iter()
                    .zip(val(*a).data())
                    .map(|(x, y)| *x * *y)
                    .sum::<S>();
                acc(*s, &mut |gs| gs[0] += dot);
            }
            Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (m, n) = (node.value.rows(), node.value.cols());
                acc(*x, &mut |gx| {
                    for (start, stride, len) in lanes(m, n, *axis) {
                        let idx = |i: usize| start + i * stride;
                        let dot = (0..len).map(|i| g[idx(i)] * y[idx(i)]).sum::<S>();
                        for i in 0..len {
                            gx[idx(i)] += y[idx(i)] * (g[idx(i)] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmax(x) => {
                let y = node.value.data();
                let n = node.value.cols();
                acc(*x, &mut |gx| {
                    for (r, (grow, yrow)) in g.chunks(n).zip(y.chunks(n)).enumerate() {
                        let total = grow.iter().copied().sum::<S>();
                        for j in 0..n {
                            gx[r * n + j] += grow[j] - yrow[j].exp() * total;
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                axis,
                xhat,
                rstd,
            } => {
                let (m, n) = (node.value.rows(), node.value.cols());
                let gam = val(*gamma).data();
                acc(*x, &mut |gx| {
                    for ((start, stride, len), r) in lanes(m, n, *axis).zip(rstd) {
                        let idx = |i: usize| start + i * stride;
                        let lenf = S::from_usize(len).unwrap();
                        let mut mean_d = S::zero();
                        let mut mean_dx = S::zero();
                        for i in 0..len {
                            let d = g[idx(i)] * gam[i];
                            mean_d += d;
                            mean_dx += d * xhat[idx(i)];
                        }
                        mean_d = mean_d / lenf;
                        mean_dx = mean_dx / lenf;
                        for i in 0..len {
                            let d = g[idx(i)] * gam[i];
                            gx[idx(i)] += *r * (d - mean_d - xhat[idx(i)] * mean_dx);
                        }
                    }
                });
                acc(*gamma, &mut |gg| {
                    for (start, stride, len) in lanes(m, n, *axis) {
                        for i in 0..len {
                            let k = start + i * stride;
                            gg[i] += g[k] * xhat[k];
                        }
                    }
                });
                acc(*beta, &mut |gb| {
                    for (start, stride, len) in lanes(m, n, *axis) {
                        for i in 0..len {
                            gb[i] += g[start + i * stride];
                        }
                    }
                });
            }
            Op::Gelu(x) => acc(*x, &mut |gx| {
                for ((o, gv), xv) in gx.iter_mut().zip(g).zip(val(*x).data()) {
                    *o += *gv * gelu_grad(*xv);
                }
            }),
            Op::Tanh(x) => acc(*x, &mut |gx| {
                for ((o, gv), y) in gx.iter_mut().zip(g).zip(node.value.data()) {
                    *o += *gv * (S::one() - *y * *y);
                }
            }),
            Op::Exp(x) => acc(*x, &mut |gx| {
                for ((o, gv), y) in gx.iter_mut().zip(g).zip(node.value.data()) {
                    *o += *gv * *y;
                }
            }),
            Op::Sqrt(x) => acc(*x, &mut |gx| {
                for ((o, gv), y) in gx.iter_mut().zip(g).zip(node.value.data()) {
                    *o += *gv * S::lit(0.5) / y.max(S::lit(1e-12));
                }
            }),
            Op::Embedding { table, ids } => {
                let d = node.value.cols();
                acc(*table, &mut |gt| {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut gt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                });
            }
            Op::Concat { parts, axis } => {
                let total_cols = node.value.cols();
                let mut offset = 0;
                for p in parts {
                    let (pm, pn) = (val(*p).rows(), val(*p).cols());
                    acc(*p, &mut |gp| {
                        if *axis == 0 {
                            add_into(gp, &g[offset * pn..(offset + pm) * pn]);
                        } else {
                            for i in 0..pm {
                                let src = &g[i * total_cols + offset..i * total_cols + offset + pn];
                                add_into(&mut gp[i * pn..(i + 1) * pn], src);
                            }
                        }
                    });
                    offset += if *axis == 0 { pm } else { pn };
                }
            }
            Op::SliceRows { x, start } => {
                let n = node.value.cols();
                acc(*x, &mut |gx| {
                    add_into(&mut gx[start * n..start * n + g.len()], g)
                });
            }
            Op::SliceCols { x, start } => {
                let (m, len) = (node.value.rows(), node.value.cols());
                let n = val(*x).cols();
                acc(*x, &mut |gx| {
                    for i in 0..m {
                        add_into(
                            &mut gx[i * n + start..i * n + start + len],
                            &g[i * len..(i + 1) * len],
                        );
                    }
                });
            }
            Op::MeanOverMask { x, mask, count } => {
                let n = node.value.cols();
                let c = S::from_usize(*count).unwrap();
                acc(*x, &mut |gx| {
                    for (i, _) in mask.iter().enumerate().filter(|(_, b)| **b) {
                        for (o, gv) in gx[i * n..(i + 1) * n].iter_mut().zip(g) {
                            *o += *gv / c;
                        }
                    }
                });
            }
            Op::SquaredDistance(a, b) => {
                let (m, d) = (val(*a).rows(), val(*a).cols());
                let n = val(*b).rows();
                let av = val(*a).data();
                let bv = val(*b).data();
                let two = S::lit(2.0);
                acc(*a, &mut |ga| {
                    for i in 0..m {
                        for j in 0..n {
                            let w = g[i * n + j] * two;
                            for k in 0..d {
                                ga[i * d + k] += w * (av[i * d + k] - bv[j * d + k]);
                            }
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..m {
                        for j in 0..n {
                            let w = g[i * n + j] * two;
                            for k in 0..d {
                                gb[j * d + k] -= w * (av[i * d + k] - bv[j * d + k]);
                            }
                        }
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |gx| gx.iter_mut().for_each(|o| *o += g[0])),
            Op::Mean(x) => {
                let c = S::from_usize(val(*x).numel()).unwrap();
                acc(*x, &mut |gx| gx.iter_mut().for_each(|o| *o += g[0] / c));
            }
            Op::PickMean { x, idx } => {
                let n = val(*x).cols();
                let c = S::from_usize(idx.len()).unwrap();
                acc(*x, &mut |gx| {
                    for (i, &j) in idx.iter().enumerate() {
                        gx[i * n + j] += g[0] / c;
                    }
                });
            }
            Op::Dropout { x, keep_scale } => acc(*x, &mut |gx| {
                for ((o, gv), k) in gx.iter_mut().zip(g).zip(keep_scale) {
                    *o += *gv * *k;
                }
            }),
        }
    }
}

fn add_into<S: Real>(dst: &mut [S], src: &[S]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}
