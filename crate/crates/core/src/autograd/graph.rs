use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels::{axpy, dot, matmul_acc, matmul_nt_acc, matmul_tn_acc, sigmoid};
use super::params::{ParamId, ParamSet};
use super::tensor::{check_shape, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Data<T> {
    Owned(Vec<T>),
    Param(ParamId),
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Shift(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    MatMul(Var, Var),
    Bmm(Var, Var),
    AddBias(Var, Var),
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    Stack(Vec<Var>),
    Select { x: Var, index: usize },
    Reshape(Var),
    Embedding { table: Var, ids: Vec<usize> },
    Conv { x: Var, kernels: Var, bias: Var },
    MaxOverTime { x: Var, argmax: Vec<usize> },
    MaskedSoftmax(Var),
    SoftmaxXent { logits: Var, targets: Vec<Option<usize>>, probs: Vec<T>, count: usize },
    Dropout { x: Var, mask: Vec<T> },
    Sum(Var),
}

struct Node<T> {
    shape: Vec<usize>,
    data: Data<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Prediction statistics from [`Graph::softmax_xent`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct XentStats {
    /// Non-ignored positions whose argmax equals the target.
    pub correct: usize,
    /// Non-ignored positions.
    pub counted: usize,
}

/// Tape of one forward pass.
///
/// Nodes are appended in creation order, which is a topological order of the
/// backward graph; [`Graph::backward`] walks it in reverse.
pub struct Graph<'p, T: Real> {
    params: Option<&'p ParamSet<T>>,
    param_vars: Vec<Option<Var>>,
    nodes: Vec<Node<T>>,
    training: bool,
    track_grads: bool,
    rng: ChaCha8Rng,
    grads: Option<Vec<Option<Vec<T>>>>,
}

fn shape_err<T>(msg: String) -> Result<T> {
    Err(Error::Shape(msg))
}

impl<'p, T: Real> Graph<'p, T> {
    /// A graph with no parameter set; only inputs and constants may be used.
    pub fn new(training: bool, seed: u64) -> Self {
        Graph {
            params: None,
            param_vars: Vec::new(),
            nodes: Vec::new(),
            training,
            track_grads: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
            grads: None,
        }
    }

    pub fn with_params(params: &'p ParamSet<T>, training: bool, seed: u64) -> Self {
        let mut g = Self::new(training, seed);
        g.params = Some(params);
        g.param_vars = vec![None; params.len()];
        g
    }

    /// Forward-only graph for decoding: no dropout, no gradient bookkeeping.
    pub fn inference(params: &'p ParamSet<T>) -> Self {
        let mut g = Self::with_params(params, false, 0);
        g.track_grads = false;
        g
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn value(&self, v: Var) -> &[T] {
        match &self.node(v).data {
            Data::Owned(d) => d,
            Data::Param(id) => self.params.expect("param node without params").get(*id).data(),
        }
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        Tensor::new(self.shape(v), self.value(v).to_vec()).expect("node shape is valid")
    }

    /// The single element of a one-element node.
    pub fn scalar(&self, v: Var) -> T {
        self.value(v)[0]
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<T>, op: Op<T>, inputs: &[Var]) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let needs_grad = self.track_grads && inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            shape,
            data: Data::Owned(data),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf; its gradient is available after backward.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        let shape = t.shape().to_vec();
        self.nodes.push(Node {
            shape,
            data: Data::Owned(t.into_data()),
            op: Op::Leaf,
            needs_grad: self.track_grads,
        });
        Var(self.nodes.len() - 1)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        let shape = t.shape().to_vec();
        self.nodes.push(Node {
            shape,
            data: Data::Owned(t.into_data()),
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Node for a learned parameter, created once per graph and then reused.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let params = self.params.expect("graph has no parameter set");
        self.nodes.push(Node {
            shape: params.get(id).shape().to_vec(),
            data: Data::Param(id),
            op: Op::Leaf,
            needs_grad: self.track_grads,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    // ---- elementwise ----

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T) -> Result<(Vec<usize>, Vec<T>)> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (va, vb) = (self.value(a), self.value(b));
        if sa == sb {
            Ok((sa, va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect()))
        } else if vb.len() == 1 {
            let y = vb[0];
            Ok((sa, va.iter().map(|&x| f(x, y)).collect()))
        } else if va.len() == 1 {
            let x = va[0];
            Ok((sb, vb.iter().map(|&y| f(x, y)).collect()))
        } else {
            shape_err(format!("{name}: operand shapes {sa:?} and {sb:?} differ"))
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, data) = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(shape, data, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, data) = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(shape, data, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, data) = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(shape, data, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let data = self.value(x).iter().map(|&v| v * factor).collect();
        self.push(self.shape(x).to_vec(), data, Op::Scale(x, factor), &[x])
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -T::one())
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let data = self.value(x).iter().map(|&v| v + c).collect();
        self.push(self.shape(x).to_vec(), data, Op::Shift(x), &[x])
    }

    /// `1 - x`
    pub fn one_minus(&mut self, x: Var) -> Var {
        let n = self.neg(x);
        self.add_scalar(n, T::one())
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let data = self.value(x).iter().map(|v| v.tanh()).collect();
        self.push(self.shape(x).to_vec(), data, Op::Tanh(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let data = self.value(x).iter().map(|&v| sigmoid(v)).collect();
        self.push(self.shape(x).to_vec(), data, Op::Sigmoid(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let data = self.value(x).iter().map(|&v| v.max(T::zero())).collect();
        self.push(self.shape(x).to_vec(), data, Op::Relu(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().copied().sum();
        self.push(vec![1], vec![s], Op::Sum(x), &[x])
    }

    // ---- linear algebra ----

    fn dims2(&self, v: Var, name: &str) -> Result<(usize, usize)> {
        match *self.shape(v) {
            [r, c] => Ok((r, c)),
            ref s => shape_err(format!("{name}: expected a matrix, got shape {s:?}")),
        }
    }

    fn dims3(&self, v: Var, name: &str) -> Result<(usize, usize, usize)> {
        match *self.shape(v) {
            [a, b, c] => Ok((a, b, c)),
            ref s => shape_err(format!("{name}: expected rank 3, got shape {s:?}")),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return shape_err(format!("matmul: inner extents differ, {:?} x {:?}", [m, k], [k2, n]));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_acc(self.value(a), self.value(b), &mut out, m, k, n);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), &[a, b]))
    }

    /// Batched product `[B×m×k] · [B×k×n] -> [B×m×n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (bs, m, k) = self.dims3(a, "bmm")?;
        let (bs2, k2, n) = self.dims3(b, "bmm")?;
        if bs != bs2 || k != k2 {
            return shape_err(format!("bmm: incompatible shapes {:?} and {:?}", [bs, m, k], [bs2, k2, n]));
        }
        let mut out = vec![T::zero(); bs * m * n];
        let (va, vb) = (self.value(a), self.value(b));
        for i in 0..bs {
            matmul_acc(
                &va[i * m * k..(i + 1) * m * k],
                &vb[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        Ok(self.push(vec![bs, m, n], out, Op::Bmm(a, b), &[a, b]))
    }

    /// Adds a `[c]` bias to every row of a `[r×c]` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.dims2(x, "add_bias")?;
        if self.shape(bias) != [c] {
            return shape_err(format!("add_bias: bias {:?} does not match {:?}", self.shape(bias), [r, c]));
        }
        let b = self.value(bias);
        let data = self
            .value(x)
            .chunks(c)
            .flat_map(|row| row.iter().zip(b).map(|(&v, &bv)| v + bv))
            .collect();
        Ok(self.push(vec![r, c], data, Op::AddBias(x, bias), &[x, bias]))
    }

    // ---- structural ----

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return shape_err("concat_cols: no operands".into());
        }
        let mut rows = None;
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let (r, c) = self.dims2(x, "concat_cols")?;
            if *rows.get_or_insert(r) != r {
                return shape_err(format!("concat_cols: row counts differ ({} vs {r})", rows.unwrap()));
            }
            widths.push(c);
        }
        let r = rows.unwrap();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&x, &c) in xs.iter().zip(&widths) {
                data.extend_from_slice(&self.value(x)[i * c..(i + 1) * c]);
            }
        }
        Ok(self.push(vec![r, total], data, Op::ConcatCols(xs.to_vec()), xs))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let (r, c) = self.dims2(x, "slice_cols")?;
        if width == 0 || start + width > c {
            return shape_err(format!("slice_cols: [{start}, {}) out of {c} columns", start + width));
        }
        let v = self.value(x);
        let data = (0..r).flat_map(|i| v[i * c + start..i * c + start + width].iter().copied()).collect();
        Ok(self.push(vec![r, width], data, Op::SliceCols { x, start }, &[x]))
    }

    /// Stacks `k` matrices of shape `[B×n]` into `[B×k×n]`.
    pub fn stack(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return shape_err("stack: no operands".into());
        };
        let (b, n) = self.dims2(first, "stack")?;
        for &x in xs {
            if self.shape(x) != [b, n] {
                return shape_err(format!("stack: shape {:?} differs from {:?}", self.shape(x), [b, n]));
            }
        }
        let k = xs.len();
        let mut data = Vec::with_capacity(b * k * n);
        for i in 0..b {
            for &x in xs {
                data.extend_from_slice(&self.value(x)[i * n..(i + 1) * n]);
            }
        }
        Ok(self.push(vec![b, k, n], data, Op::Stack(xs.to_vec()), xs))
    }

    /// Picks index `index` of the middle axis: `[B×k×n] -> [B×n]`.
    pub fn select(&mut self, x: Var, index: usize) -> Result<Var> {
        let (b, k, n) = self.dims3(x, "select")?;
        if index >= k {
            return Err(Error::Index(format!("select: index {index} out of {k}")));
        }
        let v = self.value(x);
        let data = (0..b)
            .flat_map(|i| v[(i * k + index) * n..(i * k + index + 1) * n].iter().copied())
            .collect();
        Ok(self.push(vec![b, n], data, Op::Select { x, index }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        check_shape(shape)?;
        if shape.iter().product::<usize>() != self.value(x).len() {
            return shape_err(format!("reshape: {:?} into {shape:?}", self.shape(x)));
        }
        let data = self.value(x).to_vec();
        Ok(self.push(shape.to_vec(), data, Op::Reshape(x), &[x]))
    }

    /// Row lookup: `table[V×d]` gathered at `ids` gives `[ids.len()×d]`.
    pub fn embedding(&mut self, table: Var, ids: &[u32]) -> Result<Var> {
        let (v, d) = self.dims2(table, "embedding")?;
        if ids.is_empty() {
            return shape_err("embedding: no ids".into());
        }
        let ids: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::Index(format!("embedding: id {bad} >= vocabulary size {v}")));
        }
        let t = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in &ids {
            data.extend_from_slice(&t[i * d..(i + 1) * d]);
        }
        let n = ids.len();
        Ok(self.push(vec![n, d], data, Op::Embedding { table, ids }, &[table]))
    }

    // ---- character CNN primitives ----

    /// Narrow temporal convolution with stride 1.
    ///
    /// `x` is `[L×d]` or a batch `[N×L×d]`, `kernels` is `[f×w×d]` and `bias`
    /// is `[f]`; the output is `[(L−w+1)×f]` (or `[N×(L−w+1)×f]`) with
    /// `out[t,j] = bias[j] + Σ_{i<w,c<d} x[t+i,c]·kernels[j,i,c]`.
    pub fn conv_temporal(&mut self, x: Var, kernels: Var, bias: Var) -> Result<Var> {
        let (n, l, d, batched) = match *self.shape(x) {
            [l, d] => (1, l, d, false),
            [n, l, d] => (n, l, d, true),
            ref s => return shape_err(format!("conv_temporal: input shape {s:?}")),
        };
        let (f, w, kd) = self.dims3(kernels, "conv_temporal")?;
        if kd != d {
            return shape_err(format!("conv_temporal: kernel depth {kd} vs input depth {d}"));
        }
        if self.shape(bias) != [f] {
            return shape_err(format!("conv_temporal: bias {:?} vs {f} kernels", self.shape(bias)));
        }
        if l < w {
            return shape_err(format!("conv_temporal: sequence length {l} shorter than kernel width {w}"));
        }
        let t = l - w + 1;
        let (xv, kv, bv) = (self.value(x), self.value(kernels), self.value(bias));
        let span = w * d;
        let mut out = Vec::with_capacity(n * t * f);
        for s in 0..n {
            for p in 0..t {
                let start = (s * l + p) * d;
                let window = &xv[start..start + span];
                for j in 0..f {
                    out.push(bv[j] + dot(window, &kv[j * span..(j + 1) * span]));
                }
            }
        }
        let shape = if batched { vec![n, t, f] } else { vec![t, f] };
        Ok(self.push(shape, out, Op::Conv { x, kernels, bias }, &[x, kernels, bias]))
    }

    /// Per-feature maximum over the time axis of `[T×f]`, giving `[f]`.
    pub fn max_over_time(&mut self, x: Var) -> Result<Var> {
        let (t, f) = self.dims2(x, "max_over_time")?;
        self.max_pool(x, 1, t, f, &[t], vec![f])
    }

    /// Batched max-over-time of `[N×T×f]` where row `s` only pools over its
    /// first `lengths[s]` positions; gives `[N×f]`.
    pub fn max_over_time_masked(&mut self, x: Var, lengths: &[usize]) -> Result<Var> {
        let (n, t, f) = self.dims3(x, "max_over_time_masked")?;
        if lengths.len() != n {
            return shape_err(format!("max_over_time_masked: {} lengths for {n} rows", lengths.len()));
        }
        self.max_pool(x, n, t, f, lengths, vec![n, f])
    }

    fn max_pool(&mut self, x: Var, n: usize, t: usize, f: usize, lengths: &[usize], shape: Vec<usize>) -> Result<Var> {
        if let Some(&bad) = lengths.iter().find(|&&len| len == 0 || len > t) {
            return shape_err(format!("max_over_time: valid length {bad} outside 1..={t}"));
        }
        let v = self.value(x);
        let mut out = Vec::with_capacity(n * f);
        let mut argmax = Vec::with_capacity(n * f);
        for (s, &len) in lengths.iter().enumerate() {
            for j in 0..f {
                let mut best = 0;
                let mut best_v = v[(s * t) * f + j];
                for p in 1..len {
                    let cur = v[(s * t + p) * f + j];
                    // strict comparison keeps the first index on ties
                    if cur > best_v {
                        best = p;
                        best_v = cur;
                    }
                }
                out.push(best_v);
                argmax.push(best);
            }
        }
        Ok(self.push(shape, out, Op::MaxOverTime { x, argmax }, &[x]))
    }

    // ---- probabilities and losses ----

    /// Row-wise softmax of `[B×S]` over positions where `mask` is true;
    /// masked positions are exactly zero.
    pub fn masked_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let (b, s) = self.dims2(x, "masked_softmax")?;
        if mask.len() != b * s {
            return shape_err(format!("masked_softmax: mask of {} for {b}x{s}", mask.len()));
        }
        let v = self.value(x);
        let mut out = vec![T::zero(); b * s];
        for r in 0..b {
            let row = &v[r * s..(r + 1) * s];
            let m = &mask[r * s..(r + 1) * s];
            let max = row
                .iter()
                .zip(m)
                .filter(|(_, &keep)| keep)
                .map(|(&x, _)| x)
                .fold(None, |acc: Option<T>, x| Some(acc.map_or(x, |a| a.max(x))));
            let Some(max) = max else {
                return Err(Error::State(format!("masked_softmax: row {r} is fully masked")));
            };
            let mut total = T::zero();
            for c in 0..s {
                if m[c] {
                    let e = (row[c] - max).exp();
                    out[r * s + c] = e;
                    total = total + e;
                }
            }
            for o in &mut out[r * s..(r + 1) * s] {
                *o = *o / total;
            }
        }
        Ok(self.push(vec![b, s], out, Op::MaskedSoftmax(x), &[x]))
    }

    /// Mean negative log-softmax of `logits[n×V]` at `targets`, skipping
    /// positions whose target is `ignore_id`. With every position ignored the
    /// loss is 0 and `counted` is 0.
    pub fn softmax_xent(&mut self, logits: Var, targets: &[u32], ignore_id: u32) -> Result<(Var, XentStats)> {
        let (n, v) = self.dims2(logits, "softmax_xent")?;
        if targets.len() != n {
            return shape_err(format!("softmax_xent: {} targets for {n} rows", targets.len()));
        }
        let mut tgt = Vec::with_capacity(n);
        for &t in targets {
            if t == ignore_id {
                tgt.push(None);
            } else if (t as usize) >= v {
                return Err(Error::Index(format!("softmax_xent: target {t} >= vocabulary size {v}")));
            } else {
                tgt.push(Some(t as usize));
            }
        }
        let lv = self.value(logits);
        let mut probs = vec![T::zero(); n * v];
        let mut stats = XentStats::default();
        let mut total = T::zero();
        for (r, t) in tgt.iter().enumerate() {
            let Some(t) = *t else { continue };
            let row = &lv[r * v..(r + 1) * v];
            let mut argmax = 0;
            for c in 1..v {
                if row[c] > row[argmax] {
                    argmax = c;
                }
            }
            let max = row[argmax];
            let mut z = T::zero();
            for (p, &x) in probs[r * v..(r + 1) * v].iter_mut().zip(row) {
                *p = (x - max).exp();
                z = z + *p;
            }
            for p in &mut probs[r * v..(r + 1) * v] {
                *p = *p / z;
            }
            total = total + (z.ln() - (row[t] - max));
            stats.counted += 1;
            if argmax == t {
                stats.correct += 1;
            }
        }
        let loss = if stats.counted == 0 {
            log::debug!("softmax_xent: every position ignored");
            T::zero()
        } else {
            total / T::from_f64(stats.counted as f64)
        };
        let count = stats.counted;
        let var = self.push(
            vec![1],
            vec![loss],
            Op::SoftmaxXent { logits, targets: tgt, probs, count },
            &[logits],
        );
        Ok((var, stats))
    }

    /// Inverted dropout: in training mode zeroes each element with probability
    /// `rate` and scales survivors by `1/(1−rate)`; identity otherwise.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        if !self.training || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::from_f64(1.0 / (1.0 - rate));
        let n = self.value(x).len();
        let mask: Vec<T> = (0..n)
            .map(|_| if self.rng.gen::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let data = self.value(x).iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        Ok(self.push(self.shape(x).to_vec(), data, Op::Dropout { x, mask }, &[x]))
    }

    // ---- backward ----

    /// Propagates gradients from the one-element `loss` node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.grads.is_some() {
            return Err(Error::State("backward already ran on this graph".into()));
        }
        if self.value(loss).len() != 1 {
            return shape_err(format!("backward: loss must have one element, got {:?}", self.shape(loss)));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        if self.node(loss).needs_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = Some(grads);
        Ok(())
    }

    /// Gradient of the loss with respect to `v`; `None` before backward or
    /// when `v` was not reached.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.as_ref()?.get(v.0)?.as_deref()
    }

    /// Gradients for every parameter of the set, zero where unreached.
    pub fn param_grads(&self) -> Result<Vec<Vec<T>>> {
        let params = self.params.ok_or_else(|| Error::State("graph has no parameter set".into()))?;
        if self.grads.is_none() {
            return Err(Error::State("param_grads called before backward".into()));
        }
        Ok(params
            .iter()
            .map(|(id, _, t)| match self.param_vars[id.0].and_then(|v| self.grad(v)) {
                Some(g) => g.to_vec(),
                None => vec![T::zero(); t.len()],
            })
            .collect())
    }

    fn backward_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let out = match &node.data {
            Data::Owned(d) => d.as_slice(),
            Data::Param(_) => return,
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc_broadcast(grads, *a, g, |x| x);
                self.acc_broadcast(grads, *b, g, |x| x);
            }
            Op::Sub(a, b) => {
                self.acc_broadcast(grads, *a, g, |x| x);
                self.acc_broadcast(grads, *b, g, |x| -x);
            }
            Op::Mul(a, b) => {
                let gb: Vec<T> = self.broadcast_product(g, *b);
                let ga: Vec<T> = self.broadcast_product(g, *a);
                self.acc_broadcast(grads, *a, &gb, |x| x);
                self.acc_broadcast(grads, *b, &ga, |x| x);
            }
            Op::Scale(x, c) => {
                let c = *c;
                self.acc_map(grads, *x, g, |_, gv| gv * c);
            }
            Op::Shift(x) => self.acc_map(grads, *x, g, |_, gv| gv),
            Op::Tanh(x) => self.acc_map(grads, *x, g, |k, gv| gv * (T::one() - out[k] * out[k])),
            Op::Sigmoid(x) => self.acc_map(grads, *x, g, |k, gv| gv * out[k] * (T::one() - out[k])),
            Op::Relu(x) => {
                let xv = self.value(*x);
                self.acc_map(grads, *x, g, |k, gv| if xv[k] > T::zero() { gv } else { T::zero() });
            }
            Op::Sum(x) => {
                if let Some(dst) = self.buf(grads, *x) {
                    for o in dst.iter_mut() {
                        *o = *o + g[0];
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if let Some(ga) = self.buf(grads, *a) {
                    matmul_nt_acc(g, self.value(*b), ga, m, k, n);
                }
                if let Some(gb) = self.buf(grads, *b) {
                    matmul_tn_acc(self.value(*a), g, gb, m, k, n);
                }
            }
            Op::Bmm(a, b) => {
                let (bs, m, k) = (self.shape(*a)[0], self.shape(*a)[1], self.shape(*a)[2]);
                let n = self.shape(*b)[2];
                let (va, vb) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.buf(grads, *a) {
                    for s in 0..bs {
                        matmul_nt_acc(
                            &g[s * m * n..(s + 1) * m * n],
                            &vb[s * k * n..(s + 1) * k * n],
                            &mut ga[s * m * k..(s + 1) * m * k],
                            m,
                            k,
                            n,
                        );
                    }
                }
                if let Some(gb) = self.buf(grads, *b) {
                    for s in 0..bs {
                        matmul_tn_acc(
                            &va[s * m * k..(s + 1) * m * k],
                            &g[s * m * n..(s + 1) * m * n],
                            &mut gb[s * k * n..(s + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                }
            }
            Op::AddBias(x, bias) => {
                self.acc_map(grads, *x, g, |_, gv| gv);
                let c = self.shape(*bias)[0];
                if let Some(gb) = self.buf(grads, *bias) {
                    for row in g.chunks(c) {
                        for (o, &gv) in gb.iter_mut().zip(row) {
                            *o = *o + gv;
                        }
                    }
                }
            }
            Op::ConcatCols(xs) => {
                let total = node.shape[1];
                let mut offset = 0;
                for &x in xs {
                    let c = self.shape(x)[1];
                    if let Some(gx) = self.buf(grads, x) {
                        for (r, dst) in gx.chunks_mut(c).enumerate() {
                            for (o, &gv) in dst.iter_mut().zip(&g[r * total + offset..r * total + offset + c]) {
                                *o = *o + gv;
                            }
                        }
                    }
                    offset += c;
                }
            }
            Op::SliceCols { x, start } => {
                let c = self.shape(*x)[1];
                let width = node.shape[1];
                if let Some(gx) = self.buf(grads, *x) {
                    for (r, src) in g.chunks(width).enumerate() {
                        for (o, &gv) in gx[r * c + start..r * c + start + width].iter_mut().zip(src) {
                            *o = *o + gv;
                        }
                    }
                }
            }
            Op::Stack(xs) => {
                let (b, k, n) = (node.shape[0], node.shape[1], node.shape[2]);
                for (j, &x) in xs.iter().enumerate() {
                    if let Some(gx) = self.buf(grads, x) {
                        for s in 0..b {
                            let src = &g[(s * k + j) * n..(s * k + j + 1) * n];
                            for (o, &gv) in gx[s * n..(s + 1) * n].iter_mut().zip(src) {
                                *o = *o + gv;
                            }
                        }
                    }
                }
            }
            Op::Select { x, index } => {
                let (b, k, n) = (self.shape(*x)[0], self.shape(*x)[1], self.shape(*x)[2]);
                if let Some(gx) = self.buf(grads, *x) {
                    for s in 0..b {
                        let dst = &mut gx[(s * k + index) * n..(s * k + index + 1) * n];
                        for (o, &gv) in dst.iter_mut().zip(&g[s * n..(s + 1) * n]) {
                            *o = *o + gv;
                        }
                    }
                }
            }
            Op::Reshape(x) => self.acc_map(grads, *x, g, |_, gv| gv),
            Op::Embedding { table, ids } => {
                let d = self.shape(*table)[1];
                if let Some(gt) = self.buf(grads, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        for (o, &gv) in gt[id * d..(id + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]) {
                            *o = *o + gv;
                        }
                    }
                }
            }
            Op::Conv { x, kernels, bias } => {
                let xs = self.shape(*x);
                let (n, l, d) = if xs.len() == 2 { (1, xs[0], xs[1]) } else { (xs[0], xs[1], xs[2]) };
                let (f, w) = (self.shape(*kernels)[0], self.shape(*kernels)[1]);
                let t = l - w + 1;
                let span = w * d;
                let (xv, kv) = (self.value(*x), self.value(*kernels));
                if let Some(gx) = self.buf(grads, *x) {
                    for s in 0..n {
                        for p in 0..t {
                            let start = (s * l + p) * d;
                            let gw = &mut gx[start..start + span];
                            for j in 0..f {
                                let gv = g[(s * t + p) * f + j];
                                axpy(gv, &kv[j * span..(j + 1) * span], gw);
                            }
                        }
                    }
                }
                if let Some(gk) = self.buf(grads, *kernels) {
                    for s in 0..n {
                        for p in 0..t {
                            let start = (s * l + p) * d;
                            let window = &xv[start..start + span];
                            for j in 0..f {
                                let gv = g[(s * t + p) * f + j];
                                axpy(gv, window, &mut gk[j * span..(j + 1) * span]);
                            }
                        }
                    }
                }
                if let Some(gb) = self.buf(grads, *bias) {
                    for row in g.chunks(f) {
                        for (o, &gv) in gb.iter_mut().zip(row) {
                            *o = *o + gv;
                        }
                    }
                }
            }
            Op::MaxOverTime { x, argmax } => {
                let xs = self.shape(*x);
                let (t, f) = (xs[xs.len() - 2], xs[xs.len() - 1]);
                if let Some(gx) = self.buf(grads, *x) {
                    for (idx, (&p, &gv)) in argmax.iter().zip(g).enumerate() {
                        let (s, j) = (idx / f, idx % f);
                        let k = (s * t + p) * f + j;
                        gx[k] = gx[k] + gv;
                    }
                }
            }
            Op::MaskedSoftmax(x) => {
                let s = node.shape[1];
                if let Some(gx) = self.buf(grads, *x) {
                    for ((gr, yr), dst) in g.chunks(s).zip(out.chunks(s)).zip(gx.chunks_mut(s)) {
                        let inner = dot(gr, yr);
                        for ((o, &gv), &y) in dst.iter_mut().zip(gr).zip(yr) {
                            *o = *o + y * (gv - inner);
                        }
                    }
                }
            }
            Op::SoftmaxXent { logits, targets, probs, count } => {
                if *count == 0 {
                    return;
                }
                let v = self.shape(*logits)[1];
                let scale = g[0] / T::from_f64(*count as f64);
                if let Some(gl) = self.buf(grads, *logits) {
                    for (r, t) in targets.iter().enumerate() {
                        let Some(t) = *t else { continue };
                        let row = &mut gl[r * v..(r + 1) * v];
                        for (o, &p) in row.iter_mut().zip(&probs[r * v..(r + 1) * v]) {
                            *o = *o + scale * p;
                        }
                        row[t] = row[t] - scale;
                    }
                }
            }
            Op::Dropout { x, mask } => self.acc_map(grads, *x, g, |k, gv| gv * mask[k]),
        }
    }

    fn buf<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut [T]> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let len = self.value(v).len();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); len]).as_mut_slice())
    }

    fn acc_map(&self, grads: &mut [Option<Vec<T>>], v: Var, g: &[T], f: impl Fn(usize, T) -> T) {
        if let Some(dst) = self.buf(grads, v) {
            for (k, (o, &gv)) in dst.iter_mut().zip(g).enumerate() {
                *o = *o + f(k, gv);
            }
        }
    }

    /// Accumulates `f(g)` into `v`, summing when `v` was a broadcast scalar.
    fn acc_broadcast(&self, grads: &mut [Option<Vec<T>>], v: Var, g: &[T], f: impl Fn(T) -> T) {
        let len = self.value(v).len();
        if let Some(dst) = self.buf(grads, v) {
            if len == g.len() {
                for (o, &gv) in dst.iter_mut().zip(g) {
                    *o = *o + f(gv);
                }
            } else {
                let s: T = g.iter().map(|&gv| f(gv)).sum();
                dst[0] = dst[0] + s;
            }
        }
    }

    /// `g ⊙ other`, broadcasting a one-element `other`.
    fn broadcast_product(&self, g: &[T], other: Var) -> Vec<T> {
        let ov = self.value(other);
        if ov.len() == g.len() {
            g.iter().zip(ov).map(|(&a, &b)| a * b).collect()
        } else {
            g.iter().map(|&a| a * ov[0]).collect()
        }
    }
}
