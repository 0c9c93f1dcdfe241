use std::sync::Arc;

use rand::Rng;

use super::{NumericError, SeededRng, Tensor};

type Result<T> = std::result::Result<T, NumericError>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
    Min,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SegmentKind {
    Sum,
    Mean,
    Max,
    Min,
    Prod,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Elu,
    Tanh,
    Sigmoid,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRowVec(Var, Var),
    MulRowVec(Var, Var),
    MulCol(Var, Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Act(Var, Activation),
    Powi(Var, i32),
    SignedRoot {
        input: Var,
        n: u32,
        eps: f64,
    },
    Softmax(Var),
    LayerNorm {
        input: Var,
        inv_std: Vec<f64>,
    },
    Reduce {
        input: Var,
        kind: ReduceKind,
        axis: Option<usize>,
        arg: Vec<usize>,
    },
    Segment {
        input: Var,
        kind: SegmentKind,
        segments: Arc<[usize]>,
        counts: Vec<usize>,
        arg: Vec<usize>,
    },
    Dropout {
        input: Var,
        mask: Vec<f64>,
    },
    GatherRows {
        input: Var,
        index: Arc<[usize]>,
    },
    Attention(Box<AttentionSaved>),
}

#[derive(Debug)]
struct AttentionSaved {
    q: Var,
    k: Var,
    v: Var,
    ranges: Arc<[(usize, usize)]>,
    heads: usize,
    // per (range, head): softmax probabilities, row-major n*n
    probs: Vec<Vec<f64>>,
    // same layout; inverted-dropout multipliers, empty when dropout is off
    masks: Vec<Vec<f64>>,
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode differentiation tape.
///
/// Every forward operation appends a node; nodes are stored in creation
/// order, which is a topological order, so `backward` walks the vector in
/// reverse. Values of operations whose inputs do not require gradients are
/// recorded as plain leaves.
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    consumed: bool,
    masked_rows: usize,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
            masked_rows: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of softmax rows that were entirely masked out (emitted as zeros).
    pub fn fully_masked_rows(&self) -> usize {
        self.masked_rows
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is tracked.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` call with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(NumericError::NonFinite { op: name });
        }
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if rg { op } else { Op::Leaf };
        Ok(self.push_raw(value, op, rg))
    }

    fn mat_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let t = &self.nodes[v.0].value;
        if t.rank() != 2 {
            return Err(NumericError::ShapeMismatch {
                op,
                detail: format!("expected a matrix, got shape {:?}", t.shape()),
            });
        }
        Ok((t.shape()[0], t.shape()[1]))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(NumericError::ShapeMismatch {
                op,
                detail: format!("{sa:?} vs {sb:?}"),
            });
        }
        Ok(())
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        self.push(name, value, op, &[a])
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(a, b, name)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(name, value, op, &[a, b])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.mat_dims(a, "matmul")?;
        let (k2, m) = self.mat_dims(b, "matmul")?;
        if k != k2 {
            return Err(NumericError::ShapeMismatch {
                op: "matmul",
                detail: format!("[{n}, {k}] x [{k2}, {m}]"),
            });
        }
        let mut out = vec![0.0; n * m];
        gemm(
            n,
            k,
            m,
            self.value(a).data(),
            (k, 1),
            self.value(b).data(),
            (m, 1),
            &mut out,
            false,
        );
        self.push("matmul", Tensor::matrix(n, m, out), Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary("scale", a, |x| x * c, Op::Scale(a, c))
    }

    /// `a[n, m] + b[m]`, broadcasting `b` across rows.
    pub fn add_row_vec(&mut self, a: Var, b: Var) -> Result<Var> {
        self.row_vec_op("add_row_vec", a, b, |x, y| x + y, Op::AddRowVec(a, b))
    }

    /// `a[n, m] * b[m]`, broadcasting `b` across rows.
    pub fn mul_row_vec(&mut self, a: Var, b: Var) -> Result<Var> {
        self.row_vec_op("mul_row_vec", a, b, |x, y| x * y, Op::MulRowVec(a, b))
    }

    fn row_vec_op(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (n, m) = self.mat_dims(a, name)?;
        if self.value(b).numel() != m {
            return Err(NumericError::ShapeMismatch {
                op: name,
                detail: format!("row vector of {} for {m} columns", self.value(b).numel()),
            });
        }
        let (ta, tb) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(n * m);
        for r in 0..n {
            out.extend(ta[r * m..(r + 1) * m].iter().zip(tb).map(|(&x, &y)| f(x, y)));
        }
        self.push(name, Tensor::matrix(n, m, out), op, &[a, b])
    }

    /// `a[n, m] * s[n]`: scales each row `r` by `s[r]`.
    pub fn mul_col(&mut self, a: Var, s: Var) -> Result<Var> {
        let (n, m) = self.mat_dims(a, "mul_col")?;
        if self.value(s).numel() != n {
            return Err(NumericError::ShapeMismatch {
                op: "mul_col",
                detail: format!("{} row scales for {n} rows", self.value(s).numel()),
            });
        }
        let (ta, ts) = (self.value(a).data(), self.value(s).data());
        let mut out = Vec::with_capacity(n * m);
        for r in 0..n {
            out.extend(ta[r * m..(r + 1) * m].iter().map(|&x| x * ts[r]));
        }
        self.push("mul_col", Tensor::matrix(n, m, out), Op::MulCol(a, s), &[a, s])
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        if inputs.is_empty() {
            return Err(NumericError::ShapeMismatch {
                op: "concat",
                detail: "no inputs".into(),
            });
        }
        if axis > 1 {
            return Err(NumericError::BadAxis { axis, rank: 2 });
        }
        let dims: Vec<(usize, usize)> = inputs
            .iter()
            .map(|&v| self.mat_dims(v, "concat"))
            .collect::<Result<_>>()?;
        let value = if axis == 1 {
            let n = dims[0].0;
            if dims.iter().any(|d| d.0 != n) {
                return Err(NumericError::ShapeMismatch {
                    op: "concat",
                    detail: format!("row counts differ: {dims:?}"),
                });
            }
            let m: usize = dims.iter().map(|d| d.1).sum();
            let mut out = Vec::with_capacity(n * m);
            for r in 0..n {
                for &v in inputs {
                    out.extend_from_slice(self.value(v).row(r));
                }
            }
            Tensor::matrix(n, m, out)
        } else {
            let m = dims[0].1;
            if dims.iter().any(|d| d.1 != m) {
                return Err(NumericError::ShapeMismatch {
                    op: "concat",
                    detail: format!("column counts differ: {dims:?}"),
                });
            }
            let n: usize = dims.iter().map(|d| d.0).sum();
            let mut out = Vec::with_capacity(n * m);
            for &v in inputs {
                out.extend_from_slice(self.value(v).data());
            }
            Tensor::matrix(n, m, out)
        };
        self.push(
            "concat",
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        )
    }

    /// Half-open range `start..end` along `axis` of a matrix.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let (n, m) = self.mat_dims(a, "slice")?;
        if axis > 1 {
            return Err(NumericError::BadAxis { axis, rank: 2 });
        }
        let len = if axis == 0 { n } else { m };
        if start > end || end > len {
            return Err(NumericError::ShapeMismatch {
                op: "slice",
                detail: format!("range {start}..{end} of axis length {len}"),
            });
        }
        let t = self.value(a);
        let value = if axis == 0 {
            Tensor::matrix(end - start, m, t.data()[start * m..end * m].to_vec())
        } else {
            let w = end - start;
            let mut out = Vec::with_capacity(n * w);
            for r in 0..n {
                out.extend_from_slice(&t.row(r)[start..end]);
            }
            Tensor::matrix(n, w, out)
        };
        self.push("slice", value, Op::Slice { input: a, axis, start }, &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary("log", a, f64::ln, Op::Log(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary("sqrt", a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn activation(&mut self, a: Var, act: Activation) -> Result<Var> {
        let f = match act {
            Activation::Relu => |x: f64| x.max(0.0),
            Activation::Elu => |x: f64| if x > 0.0 { x } else { x.exp_m1() },
            Activation::Tanh => f64::tanh,
            Activation::Sigmoid => |x: f64| 1.0 / (1.0 + (-x).exp()),
        };
        let name = match act {
            Activation::Relu => "relu",
            Activation::Elu => "elu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        };
        self.unary(name, a, f, Op::Act(a, act))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Relu)
    }

    pub fn elu(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Elu)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Sigmoid)
    }

    pub fn powi(&mut self, a: Var, n: i32) -> Result<Var> {
        self.unary("powi", a, |x| x.powi(n), Op::Powi(a, n))
    }

    /// `sign(x) * ((|x| + eps)^(1/n) - eps^(1/n))`: a continuous signed n-th
    /// root with bounded slope at zero.
    pub fn signed_root(&mut self, a: Var, n: u32, eps: f64) -> Result<Var> {
        let inv = 1.0 / n as f64;
        let floor = eps.powf(inv);
        self.unary(
            "signed_root",
            a,
            move |x| x.signum() * ((x.abs() + eps).powf(inv) - floor) * (x != 0.0) as u8 as f64,
            Op::SignedRoot { input: a, n, eps },
        )
    }

    /// Row-wise softmax over the last axis. Entries with `mask[i] == false`
    /// are excluded; a row with every entry masked yields zeros and is
    /// counted in [`Tape::fully_masked_rows`].
    pub fn softmax(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let (n, m) = self.mat_dims(a, "softmax")?;
        if let Some(mask) = mask {
            if mask.len() != n * m {
                return Err(NumericError::ShapeMismatch {
                    op: "softmax",
                    detail: format!("mask of {} for [{n}, {m}]", mask.len()),
                });
            }
        }
        let t = self.value(a).data();
        let mut out = vec![0.0; n * m];
        let mut masked = 0;
        for r in 0..n {
            let row = &t[r * m..(r + 1) * m];
            let keep = |j: usize| mask.is_none_or(|mk| mk[r * m + j]);
            let mx = (0..m)
                .filter(|&j| keep(j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if mx == f64::NEG_INFINITY {
                masked += 1;
                continue;
            }
            let mut s = 0.0;
            for j in 0..m {
                if keep(j) {
                    let e = (row[j] - mx).exp();
                    out[r * m + j] = e;
                    s += e;
                }
            }
            for v in &mut out[r * m..(r + 1) * m] {
                *v /= s;
            }
        }
        self.masked_rows += masked;
        self.push("softmax", Tensor::matrix(n, m, out), Op::Softmax(a), &[a])
    }

    /// Normalizes each row to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Result<Var> {
        let (n, m) = self.mat_dims(a, "layer_norm")?;
        let t = self.value(a).data();
        let mut out = Vec::with_capacity(n * m);
        let mut inv_std = Vec::with_capacity(n);
        for r in 0..n {
            let row = &t[r * m..(r + 1) * m];
            let mean = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / m as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            out.extend(row.iter().map(|x| (x - mean) * is));
        }
        self.push(
            "layer_norm",
            Tensor::matrix(n, m, out),
            Op::LayerNorm { input: a, inv_std },
            &[a],
        )
    }

    /// Reduces along `axis` of a matrix, or over all elements when `axis`
    /// is `None` (yielding a scalar).
    pub fn reduce(&mut self, a: Var, kind: ReduceKind, axis: Option<usize>) -> Result<Var> {
        let t = self.value(a);
        let (value, arg) = match axis {
            None => {
                let d = t.data();
                if d.is_empty() {
                    return Err(NumericError::ShapeMismatch {
                        op: "reduce",
                        detail: "empty tensor".into(),
                    });
                }
                let (v, i) = reduce_slice(d.iter().copied().enumerate(), kind, d.len());
                (Tensor::scalar(v), vec![i])
            }
            Some(axis) => {
                let (n, m) = self.mat_dims(a, "reduce")?;
                if axis > 1 {
                    return Err(NumericError::BadAxis { axis, rank: 2 });
                }
                let d = self.value(a).data();
                let mut vals = Vec::new();
                let mut arg = Vec::new();
                if axis == 0 {
                    for c in 0..m {
                        let (v, i) = reduce_slice((0..n).map(|r| (r, d[r * m + c])), kind, n);
                        vals.push(v);
                        arg.push(i);
                    }
                    (Tensor::matrix(1, m, vals), arg)
                } else {
                    for r in 0..n {
                        let (v, i) = reduce_slice((0..m).map(|c| (c, d[r * m + c])), kind, m);
                        vals.push(v);
                        arg.push(i);
                    }
                    (Tensor::matrix(n, 1, vals), arg)
                }
            }
        };
        self.push(
            "reduce",
            value,
            Op::Reduce {
                input: a,
                kind,
                axis,
                arg,
            },
            &[a],
        )
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        self.reduce(a, ReduceKind::Sum, None)
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        self.reduce(a, ReduceKind::Mean, None)
    }

    /// Aggregates the rows of `a` that share a segment id. Output has
    /// `num_segments` rows; empty segments produce zero rows.
    pub fn segment_reduce(
        &mut self,
        a: Var,
        kind: SegmentKind,
        segments: &Arc<[usize]>,
        num_segments: usize,
    ) -> Result<Var> {
        let (n, m) = self.mat_dims(a, "segment_reduce")?;
        if segments.len() != n {
            return Err(NumericError::ShapeMismatch {
                op: "segment_reduce",
                detail: format!("{} segment ids for {n} rows", segments.len()),
            });
        }
        if let Some(&bad) = segments.iter().find(|&&s| s >= num_segments) {
            return Err(NumericError::IndexOutOfRange {
                op: "segment_reduce",
                index: bad,
                len: num_segments,
            });
        }
        let d = self.value(a).data();
        let mut counts = vec![0usize; num_segments];
        for &s in segments.iter() {
            counts[s] += 1;
        }
        let mut out = vec![0.0; num_segments * m];
        let mut arg = Vec::new();
        match kind {
            SegmentKind::Sum | SegmentKind::Mean => {
                for (r, &s) in segments.iter().enumerate() {
                    let dst = &mut out[s * m..(s + 1) * m];
                    for (o, x) in dst.iter_mut().zip(&d[r * m..(r + 1) * m]) {
                        *o += x;
                    }
                }
                if kind == SegmentKind::Mean {
                    for (s, &c) in counts.iter().enumerate() {
                        if c > 0 {
                            let inv = 1.0 / c as f64;
                            out[s * m..(s + 1) * m].iter_mut().for_each(|v| *v *= inv);
                        }
                    }
                }
            }
            SegmentKind::Max | SegmentKind::Min => {
                arg = vec![usize::MAX; num_segments * m];
                for (r, &s) in segments.iter().enumerate() {
                    for c in 0..m {
                        let x = d[r * m + c];
                        let slot = s * m + c;
                        let better = arg[slot] == usize::MAX
                            || match kind {
                                SegmentKind::Max => x > out[slot],
                                _ => x < out[slot],
                            };
                        if better {
                            out[slot] = x;
                            arg[slot] = r;
                        }
                    }
                }
            }
            SegmentKind::Prod => {
                for (s, &c) in counts.iter().enumerate() {
                    if c > 0 {
                        out[s * m..(s + 1) * m].iter_mut().for_each(|v| *v = 1.0);
                    }
                }
                for (r, &s) in segments.iter().enumerate() {
                    for c in 0..m {
                        out[s * m + c] *= d[r * m + c];
                    }
                }
            }
        }
        self.push(
            "segment_reduce",
            Tensor::matrix(num_segments, m, out),
            Op::Segment {
                input: a,
                kind,
                segments: segments.clone(),
                counts,
                arg,
            },
            &[a],
        )
    }

    /// Inverted dropout: zeroes each entry with probability `p` and scales
    /// survivors by `1 / (1 - p)`. Identity when `training` is false.
    pub fn dropout(&mut self, a: Var, p: f64, training: bool, rng: &SeededRng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(NumericError::InvalidArgument(format!(
                "dropout rate {p} outside [0, 1)"
            )));
        }
        if !training || p == 0.0 {
            return Ok(a);
        }
        let mut g = rng.generator();
        let keep = 1.0 / (1.0 - p);
        let t = self.value(a);
        let mask: Vec<f64> = (0..t.numel())
            .map(|_| if g.random::<f64>() >= p { keep } else { 0.0 })
            .collect();
        let data = t.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        self.push("dropout", value, Op::Dropout { input: a, mask }, &[a])
    }

    /// Selects rows of a matrix by index (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, index: &Arc<[usize]>) -> Result<Var> {
        let (n, m) = self.mat_dims(a, "gather_rows")?;
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(NumericError::IndexOutOfRange {
                op: "gather_rows",
                index: bad,
                len: n,
            });
        }
        let t = self.value(a);
        let mut out = Vec::with_capacity(index.len() * m);
        for &i in index.iter() {
            out.extend_from_slice(t.row(i));
        }
        self.push(
            "gather_rows",
            Tensor::matrix(index.len(), m, out),
            Op::GatherRows {
                input: a,
                index: index.clone(),
            },
            &[a],
        )
    }

    /// Multi-head scaled dot-product attention restricted to contiguous row
    /// blocks: a row in `ranges[g]` attends only to rows of the same block.
    /// `q`, `k`, `v` are `[n, d]` with `d` divisible by `heads`. Attention
    /// probabilities are dropped out at rate `dropout` when `training`.
    #[allow(clippy::too_many_arguments)]
    pub fn block_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        ranges: &Arc<[(usize, usize)]>,
        heads: usize,
        dropout: f64,
        training: bool,
        rng: &SeededRng,
    ) -> Result<Var> {
        let (n, d) = self.mat_dims(q, "block_attention")?;
        self.same_shape(q, k, "block_attention")?;
        self.same_shape(q, v, "block_attention")?;
        if heads == 0 || d % heads != 0 {
            return Err(NumericError::InvalidArgument(format!(
                "{d} columns not divisible into {heads} heads"
            )));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(NumericError::InvalidArgument(format!(
                "dropout rate {dropout} outside [0, 1)"
            )));
        }
        let mut covered = 0;
        for &(s, e) in ranges.iter() {
            if s != covered || e < s {
                return Err(NumericError::InvalidArgument(format!(
                    "attention blocks must tile rows contiguously, got {s}..{e} after {covered}"
                )));
            }
            covered = e;
        }
        if covered != n {
            return Err(NumericError::ShapeMismatch {
                op: "block_attention",
                detail: format!("blocks cover {covered} of {n} rows"),
            });
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let use_drop = training && dropout > 0.0;
        let keep = 1.0 / (1.0 - dropout);
        let mut g = rng.generator();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut out = vec![0.0; n * d];
        let mut probs = Vec::with_capacity(ranges.len() * heads);
        let mut masks = Vec::new();
        for &(s, e) in ranges.iter() {
            let len = e - s;
            for h in 0..heads {
                let off = h * dh;
                let mut p = vec![0.0; len * len];
                for i in 0..len {
                    let qi = &qd[(s + i) * d + off..(s + i) * d + off + dh];
                    let row = &mut p[i * len..(i + 1) * len];
                    for (j, slot) in row.iter_mut().enumerate() {
                        let kj = &kd[(s + j) * d + off..(s + j) * d + off + dh];
                        *slot = dot(qi, kj) * scale;
                    }
                    let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut z = 0.0;
                    for x in row.iter_mut() {
                        *x = (*x - mx).exp();
                        z += *x;
                    }
                    row.iter_mut().for_each(|x| *x /= z);
                }
                let mask: Vec<f64> = if use_drop {
                    (0..len * len)
                        .map(|_| if g.random::<f64>() >= dropout { keep } else { 0.0 })
                        .collect()
                } else {
                    Vec::new()
                };
                for i in 0..len {
                    let orow = &mut out[(s + i) * d + off..(s + i) * d + off + dh];
                    for j in 0..len {
                        let mut a = p[i * len + j];
                        if use_drop {
                            a *= mask[i * len + j];
                        }
                        if a != 0.0 {
                            let vj = &vd[(s + j) * d + off..(s + j) * d + off + dh];
                            for (o, x) in orow.iter_mut().zip(vj) {
                                *o += a * x;
                            }
                        }
                    }
                }
                probs.push(p);
                if use_drop {
                    masks.push(mask);
                }
            }
        }
        let saved = AttentionSaved {
            q,
            k,
            v,
            ranges: ranges.clone(),
            heads,
            probs,
            masks,
        };
        self.push(
            "block_attention",
            Tensor::matrix(n, d, out),
            Op::Attention(Box::new(saved)),
            &[q, k, v],
        )
    }

    /// Populates gradients of `loss` with respect to every tracked value.
    /// A tape supports a single backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(NumericError::TapeConsumed);
        }
        let shape = self.value(loss).shape().to_vec();
        if self.value(loss).numel() != 1 {
            return Err(NumericError::NonScalarLoss(shape));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        let nodes = &self.nodes;
        // Accumulate `contrib(i)` into the gradient slot of `v`.
        let mut acc = |v: Var, f: &dyn Fn(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (n, k) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                let m = self.value(*b).shape()[1];
                let ad = self.value(*a).data();
                let bd = self.value(*b).data();
                // dA = G · Bᵀ
                acc(*a, &|s| gemm(n, m, k, g, (m, 1), bd, (1, m), s, true));
                // dB = Aᵀ · G
                acc(*b, &|s| gemm(k, n, m, ad, (1, k), g, (m, 1), s, true));
            }
            Op::Add(a, b) => {
                acc(*a, &|s| add_into(s, g));
                acc(*b, &|s| add_into(s, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &|s| add_into(s, g));
                acc(*b, &|s| s.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &|s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * bd[i];
                    }
                });
                acc(*b, &|s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * ad[i];
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &|s| s.iter_mut().zip(g).for_each(|(x, y)| *x += c * y)),
            Op::AddRowVec(a, b) => {
                let m = self.value(*b).numel();
                acc(*a, &|s| add_into(s, g));
                acc(*b, &|s| {
                    for row in g.chunks(m) {
                        add_into(s, row);
                    }
                });
            }
            Op::MulRowVec(a, b) => {
                let m = self.value(*b).numel();
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &|s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * bd[i % m];
                    }
                });
                acc(*b, &|s| {
                    for i in 0..g.len() {
                        s[i % m] += g[i] * ad[i];
                    }
                });
            }
            Op::MulCol(a, sv) => {
                let m = self.value(*a).cols();
                let (ad, sd) = (self.value(*a).data(), self.value(*sv).data());
                acc(*a, &|s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * sd[i / m];
                    }
                });
                acc(*sv, &|s| {
                    for i in 0..g.len() {
                        s[i / m] += g[i] * ad[i];
                    }
                });
            }
            Op::Concat { inputs, axis } => {
                let total = node.value.cols();
                let n = node.value.rows();
                let mut offset = 0;
                for &v in inputs {
                    let t = self.value(v);
                    let (r, c) = (t.rows(), t.cols());
                    if *axis == 1 {
                        acc(v, &|s| {
                            for row in 0..n {
                                add_into(
                                    &mut s[row * c..(row + 1) * c],
                                    &g[row * total + offset..row * total + offset + c],
                                );
                            }
                        });
                        offset += c;
                    } else {
                        acc(v, &|s| add_into(s, &g[offset..offset + r * c]));
                        offset += r * c;
                    }
                }
            }
            Op::Slice { input, axis, start } => {
                let m_in = self.value(*input).cols();
                let (n, w) = (node.value.rows(), node.value.cols());
                acc(*input, &|s| {
                    if *axis == 0 {
                        add_into(&mut s[start * m_in..(start + n) * m_in], g);
                    } else {
                        for r in 0..n {
                            add_into(&mut s[r * m_in + start..r * m_in + start + w], &g[r * w..(r + 1) * w]);
                        }
                    }
                });
            }
            Op::Exp(a) => acc(*a, &|s| {
                for i in 0..s.len() {
                    s[i] += g[i] * out[i];
                }
            }),
            Op::Log(a) => {
                let ad = self.value(*a).data();
                acc(*a, &|s| {
                    for i in 0..s.len() {
                        s[i] += g[i] / ad[i];
                    }
                })
            }
            Op::Sqrt(a) => acc(*a, &|s| {
                for i in 0..s.len() {
                    s[i] += g[i] * 0.5 / out[i];
                }
            }),
            Op::Act(a, act) => {
                let ad = self.value(*a).data();
                acc(*a, &|s| {
                    for i in 0..s.len() {
                        let d = match act {
                            Activation::Relu => (ad[i] > 0.0) as u8 as f64,
                            Activation::Elu => {
                                if ad[i] > 0.0 {
                                    1.0
                                } else {
                                    out[i] + 1.0
                                }
                            }
                            Activation::Tanh => 1.0 - out[i] * out[i],
                            Activation::Sigmoid => out[i] * (1.0 - out[i]),
                        };
                        s[i] += g[i] * d;
                    }
                })
            }
            Op::Powi(a, p) => {
                let ad = self.value(*a).data();
                acc(*a, &|s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * (*p as f64) * ad[i].powi(p - 1);
                    }
                })
            }
            Op::SignedRoot { input, n, eps } => {
                let ad = self.value(*input).data();
                let inv = 1.0 / *n as f64;
                acc(*input, &|s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * inv * (ad[i].abs() + eps).powf(inv - 1.0);
                    }
                })
            }
            Op::Softmax(a) => {
                let m = node.value.cols();
                acc(*a, &|s| {
                    for (r, (yr, gr)) in out.chunks(m).zip(g.chunks(m)).enumerate() {
                        let dotp: f64 = yr.iter().zip(gr).map(|(y, gg)| y * gg).sum();
                        for j in 0..m {
                            s[r * m + j] += yr[j] * (gr[j] - dotp);
                        }
                    }
                })
            }
            Op::LayerNorm { input, inv_std } => {
                let m = node.value.cols();
                acc(*input, &|s| {
                    for (r, (yr, gr)) in out.chunks(m).zip(g.chunks(m)).enumerate() {
                        let mg = gr.iter().sum::<f64>() / m as f64;
                        let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / m as f64;
                        for j in 0..m {
                            s[r * m + j] += inv_std[r] * (gr[j] - mg - yr[j] * mgy);
                        }
                    }
                })
            }
            Op::Reduce { input, kind, axis, arg } => {
                let t = self.value(*input);
                let (n, m) = (t.rows(), t.cols());
                acc(*input, &|s| match axis {
                    None => match kind {
                        ReduceKind::Sum => s.iter_mut().for_each(|x| *x += g[0]),
                        ReduceKind::Mean => {
                            let c = g[0] / s.len() as f64;
                            s.iter_mut().for_each(|x| *x += c)
                        }
                        _ => s[arg[0]] += g[0],
                    },
                    Some(0) => {
                        for c in 0..m {
                            match kind {
                                ReduceKind::Sum => (0..n).for_each(|r| s[r * m + c] += g[c]),
                                ReduceKind::Mean => (0..n).for_each(|r| s[r * m + c] += g[c] / n as f64),
                                _ => s[arg[c] * m + c] += g[c],
                            }
                        }
                    }
                    Some(_) => {
                        for r in 0..n {
                            match kind {
                                ReduceKind::Sum => (0..m).for_each(|c| s[r * m + c] += g[r]),
                                ReduceKind::Mean => (0..m).for_each(|c| s[r * m + c] += g[r] / m as f64),
                                _ => s[r * m + arg[r]] += g[r],
                            }
                        }
                    }
                })
            }
            Op::Segment {
                input,
                kind,
                segments,
                counts,
                arg,
            } => {
                let m = node.value.cols();
                let ad = self.value(*input).data();
                acc(*input, &|s| match kind {
                    SegmentKind::Sum => {
                        for (r, &sg) in segments.iter().enumerate() {
                            add_into(&mut s[r * m..(r + 1) * m], &g[sg * m..(sg + 1) * m]);
                        }
                    }
                    SegmentKind::Mean => {
                        for (r, &sg) in segments.iter().enumerate() {
                            let inv = 1.0 / counts[sg] as f64;
                            for c in 0..m {
                                s[r * m + c] += g[sg * m + c] * inv;
                            }
                        }
                    }
                    SegmentKind::Max | SegmentKind::Min => {
                        for (slot, &r) in arg.iter().enumerate() {
                            if r != usize::MAX {
                                s[r * m + slot % m] += g[slot];
                            }
                        }
                    }
                    SegmentKind::Prod => {
                        // product of the other members via prefix/suffix
                        // products, exact when some members are zero
                        let mut members: Vec<Vec<usize>> = vec![Vec::new(); counts.len()];
                        for (r, &sg) in segments.iter().enumerate() {
                            members[sg].push(r);
                        }
                        for (sg, rows) in members.iter().enumerate() {
                            for c in 0..m {
                                let mut prefix = 1.0;
                                let mut pre = Vec::with_capacity(rows.len());
                                for &r in rows {
                                    pre.push(prefix);
                                    prefix *= ad[r * m + c];
                                }
                                let mut suffix = 1.0;
                                for (i, &r) in rows.iter().enumerate().rev() {
                                    s[r * m + c] += g[sg * m + c] * pre[i] * suffix;
                                    suffix *= ad[r * m + c];
                                }
                            }
                        }
                    }
                })
            }
            Op::Dropout { input, mask } => acc(*input, &|s| {
                for i in 0..s.len() {
                    s[i] += g[i] * mask[i];
                }
            }),
            Op::GatherRows { input, index } => {
                let m = node.value.cols();
                acc(*input, &|s| {
                    for (r, &i) in index.iter().enumerate() {
                        add_into(&mut s[i * m..(i + 1) * m], &g[r * m..(r + 1) * m]);
                    }
                })
            }
            Op::Attention(saved) => self.attention_backward(saved, g, &mut acc),
        }
    }

    #[allow(clippy::type_complexity)]
    fn attention_backward(&self, sv: &AttentionSaved, g: &[f64], acc: &mut dyn FnMut(Var, &dyn Fn(&mut [f64]))) {
        let d = self.value(sv.q).cols();
        let dh = d / sv.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (
            self.value(sv.q).data(),
            self.value(sv.k).data(),
            self.value(sv.v).data(),
        );
        let n = self.value(sv.q).rows();
        let mut dq = vec![0.0; n * d];
        let mut dk = vec![0.0; n * d];
        let mut dv = vec![0.0; n * d];
        let use_drop = !sv.masks.is_empty();
        let mut block = 0;
        for &(s, e) in sv.ranges.iter() {
            let len = e - s;
            for h in 0..sv.heads {
                let off = h * dh;
                let p = &sv.probs[block];
                let mask = if use_drop { Some(&sv.masks[block]) } else { None };
                block += 1;
                let eff = |i: usize, j: usize| p[i * len + j] * mask.map_or(1.0, |mk| mk[i * len + j]);
                // dV_j = Σ_i A_ij g_i ; dA_ij = g_i · v_j
                let mut ds = vec![0.0; len * len];
                for i in 0..len {
                    let gi = &g[(s + i) * d + off..(s + i) * d + off + dh];
                    for j in 0..len {
                        let a = eff(i, j);
                        let dvj = &mut dv[(s + j) * d + off..(s + j) * d + off + dh];
                        for (x, y) in dvj.iter_mut().zip(gi) {
                            *x += a * y;
                        }
                        let vj = &vd[(s + j) * d + off..(s + j) * d + off + dh];
                        let mut da = dot(gi, vj);
                        if let Some(mk) = mask {
                            da *= mk[i * len + j];
                        }
                        ds[i * len + j] = da;
                    }
                    let row = &mut ds[i * len..(i + 1) * len];
                    let pr = &p[i * len..(i + 1) * len];
                    let dotp: f64 = row.iter().zip(pr).map(|(a, b)| a * b).sum();
                    for j in 0..len {
                        row[j] = pr[j] * (row[j] - dotp) * scale;
                    }
                }
                for i in 0..len {
                    for j in 0..len {
                        let w = ds[i * len + j];
                        if w == 0.0 {
                            continue;
                        }
                        for c in 0..dh {
                            dq[(s + i) * d + off + c] += w * kd[(s + j) * d + off + c];
                            dk[(s + j) * d + off + c] += w * qd[(s + i) * d + off + c];
                        }
                    }
                }
            }
        }
        acc(sv.q, &|s| add_into(s, &dq));
        acc(sv.k, &|s| add_into(s, &dk));
        acc(sv.v, &|s| add_into(s, &dv));
    }
}

fn reduce_slice(items: impl Iterator<Item = (usize, f64)>, kind: ReduceKind, len: usize) -> (f64, usize) {
    match kind {
        ReduceKind::Sum => (items.map(|(_, x)| x).sum(), 0),
        ReduceKind::Mean => (items.map(|(_, x)| x).sum::<f64>() / len as f64, 0),
        ReduceKind::Max => items.fold((f64::NEG_INFINITY, 0), |b, (i, x)| if x > b.0 { (x, i) } else { b }),
        ReduceKind::Min => items.fold((f64::INFINITY, 0), |b, (i, x)| if x < b.0 { (x, i) } else { b }),
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `c (+)= a · b` where `a` is `m×k` and `b` is `k×n`, each given with
/// (row stride, column stride) so transposed views need no copy.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|x| *x = 0.0);
        }
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slices cover every index reachable from the given
    // dimensions and strides; `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
