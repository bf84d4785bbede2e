//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Every primitive computes its value eagerly and records enough state for
//! its vector-Jacobian product. Parameter leaves are cached per graph, so a
//! tensor used twice (tied embeddings, aliased layers) accumulates one
//! gradient.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, NumError, Result};
use crate::params::{Gradients, ParamId, ParamStore};
use crate::tensor::strides;
use crate::{Scalar, Tensor};

/// Node handle inside one [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Bcast {
    Same,
    /// `b` repeats with period equal to its length.
    Suffix(usize),
    /// Explicit output-index -> `b`-index map.
    Map(Vec<usize>),
}

impl Bcast {
    fn new(out: &[usize], b: &[usize], op: &'static str) -> Result<Self> {
        if out == b {
            return Ok(Bcast::Same);
        }
        let lead = b.iter().take_while(|&&d| d == 1).count();
        let core = &b[lead..];
        if core.len() <= out.len() && out[out.len() - core.len()..] == *core {
            return Ok(Bcast::Suffix(core.iter().product::<usize>().max(1)));
        }
        if b.len() > out.len() {
            return Err(shape_err(op, format!("cannot broadcast {b:?} to {out:?}")));
        }
        let pad = out.len() - b.len();
        let mut bdims = vec![1; pad];
        bdims.extend_from_slice(b);
        let bstr = strides(&bdims);
        let mut eff = vec![0usize; out.len()];
        for i in 0..out.len() {
            if bdims[i] == out[i] {
                eff[i] = bstr[i];
            } else if bdims[i] != 1 {
                return Err(shape_err(op, format!("cannot broadcast {b:?} to {out:?}")));
            }
        }
        let numel: usize = out.iter().product();
        let mut map = Vec::with_capacity(numel);
        let mut idx = vec![0usize; out.len()];
        let mut off = 0usize;
        for _ in 0..numel {
            map.push(off);
            for ax in (0..out.len()).rev() {
                idx[ax] += 1;
                off += eff[ax];
                if idx[ax] < out[ax] {
                    break;
                }
                off -= eff[ax] * idx[ax];
                idx[ax] = 0;
            }
        }
        Ok(Bcast::Map(map))
    }

    #[inline]
    fn index(&self, i: usize) -> usize {
        match self {
            Bcast::Same => i,
            Bcast::Suffix(n) => i % n,
            Bcast::Map(m) => m[i],
        }
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Constant,
    Param(ParamId),
    Add(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    Scale(Var, T),
    MatMul(Var, Var),
    Permute(Var, Vec<usize>),
    Reshape(Var),
    Relu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Conv1d {
        x: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
        cols: Vec<T>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Dropout(Var, Vec<T>),
    Sum(Var),
    SmoothedNll {
        logits: Var,
        targets: Vec<usize>,
        ignore: Option<usize>,
        smoothing: T,
        count: usize,
        probs: Vec<T>,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::MatMul(..) => "matmul",
            Op::Permute(..) => "permute",
            Op::Reshape(..) => "reshape",
            Op::Relu(..) => "relu",
            Op::Softmax(..) => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Conv1d { .. } => "conv1d",
            Op::Embedding { .. } => "embedding",
            Op::Dropout(..) => "dropout",
            Op::Sum(..) => "sum",
            Op::SmoothedNll { .. } => "smoothed_nll",
        }
    }
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// A single forward pass. Build it, read values, call [`Graph::backward`].
#[derive(Debug)]
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
    training: bool,
    rng: ChaCha8Rng,
    fault: Option<NumError>,
}

impl<T: Scalar> Graph<T> {
    /// `training` enables dropout; `seed` drives the dropout masks.
    pub fn new(training: bool, seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            training,
            rng: ChaCha8Rng::seed_from_u64(seed),
            fault: None,
        }
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

    /// First non-finite value produced by any primitive, if one occurred.
    pub fn fault(&self) -> Option<&NumError> {
        self.fault.as_ref()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        let id = self.nodes.len();
        if self.fault.is_none() && !value.is_finite() {
            self.fault = Some(NumError::NonFinite {
                op: op.name(),
                node: id,
            });
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(id)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.tensor(id).clone(), Op::Param(id), true);
        self.params.insert(id, v);
        v
    }

    /// Leaf for a parameter looked up by name.
    pub fn param_named(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        let id = store
            .id(name)
            .ok_or_else(|| NumError::Invalid(format!("unknown parameter {name}")))?;
        Ok(self.param(store, id))
    }

    /// Elementwise `a + b`, `b` broadcast to the shape of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let bc = Bcast::new(self.shape(a), self.shape(b), "add")?;
        let av = self.value(a);
        let bv = self.value(b).data();
        let data: Vec<T> = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bv[bc.index(i)])
            .collect();
        let out = Tensor::new(av.shape(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Add(a, b, bc), ng))
    }

    /// Elementwise `a * b`, `b` broadcast to the shape of `a`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let bc = Bcast::new(self.shape(a), self.shape(b), "mul")?;
        let av = self.value(a);
        let bv = self.value(b).data();
        let data: Vec<T> = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * bv[bc.index(i)])
            .collect();
        let out = Tensor::new(av.shape(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Mul(a, b, bc), ng))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let av = self.value(a);
        let out = Tensor::from_fn(av.shape(), |i| av.data()[i] * factor);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, factor), ng)
    }

    /// `a: [.., m, k] @ b`, where `b` is `[k, n]` (shared) or `[.., k, n]`
    /// with the same leading dimensions as `a`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ash, bsh) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if ash.len() < 2 || bsh.len() < 2 {
            return Err(shape_err("matmul", format!("{ash:?} @ {bsh:?}")));
        }
        let k = ash[ash.len() - 1];
        let n = bsh[bsh.len() - 1];
        if bsh[bsh.len() - 2] != k {
            return Err(shape_err("matmul", format!("{ash:?} @ {bsh:?}")));
        }
        let mut out_shape = ash.clone();
        *out_shape.last_mut().unwrap() = n;
        let mut out = vec![T::zero(); out_shape.iter().product()];
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        if bsh.len() == 2 {
            let rows = ad.len() / k.max(1);
            gemm_nn(rows, k, n, ad, bd, &mut out);
        } else {
            if bsh.len() != ash.len() || bsh[..bsh.len() - 2] != ash[..ash.len() - 2] {
                return Err(shape_err("matmul", format!("{ash:?} @ {bsh:?}")));
            }
            let m = ash[ash.len() - 2];
            let batch: usize = ash[..ash.len() - 2].iter().product();
            for i in 0..batch {
                gemm_nn(
                    m,
                    k,
                    n,
                    &ad[i * m * k..(i + 1) * m * k],
                    &bd[i * k * n..(i + 1) * k * n],
                    &mut out[i * m * n..(i + 1) * m * n],
                );
            }
        }
        let out = Tensor::new(&out_shape, out)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(shape_err("permute", format!("{perm:?} on {shape:?}")));
        }
        let (data, out_shape) = permute_data(self.value(a).data(), &shape, perm);
        let out = Tensor::new(&out_shape, data)?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::Permute(a, perm.to_vec()), ng))
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&mut self, a: Var) -> Result<Var> {
        let r = self.shape(a).len();
        if r < 2 {
            return Err(shape_err("transpose", "rank < 2"));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 1, r - 2);
        self.permute(a, &perm)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::Reshape(a), ng))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let out = Tensor::from_fn(av.shape(), |i| av.data()[i].max(T::zero()));
        let ng = self.ng(a);
        self.push(out, Op::Relu(a), ng)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let d = *av.shape().last().unwrap_or(&1);
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(d.max(1)) {
            softmax_in_place(row);
        }
        let out = Tensor::new(av.shape(), data).expect("same shape");
        let ng = self.ng(a);
        self.push(out, Op::Softmax(a), ng)
    }

    /// Layer normalization over the last axis with affine `gain`, `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let d = *self.shape(x).last().unwrap_or(&0);
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(shape_err(
                "layer_norm",
                format!("features {d}, gain {:?}, bias {:?}", self.shape(gain), self.shape(bias)),
            ));
        }
        let xv = self.value(x);
        let (gv, bv) = (self.value(gain).data(), self.value(bias).data());
        let rows = xv.numel() / d.max(1);
        let eps = T::from_f64(LAYER_NORM_EPS);
        let dn = T::from_f64(d as f64);
        let mut xhat = vec![T::zero(); xv.numel()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.numel()];
        for r in 0..rows {
            let row = &xv.data()[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gv[j] + bv[j];
            }
        }
        let out = Tensor::new(xv.shape(), out)?;
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            ng,
        ))
    }

    /// 1-d convolution over time. `x: [B, T, Cin]`, `weight: [K, Cin, Cout]`,
    /// `bias: [Cout]`; output `[B, floor((T + 2p - K)/s) + 1, Cout]`.
    pub fn conv1d(&mut self, x: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(weight).to_vec();
        if xs.len() != 3 || ws.len() != 3 || ws[1] != xs[2] || self.shape(bias) != [ws[2]] || stride == 0 {
            return Err(shape_err(
                "conv1d",
                format!("x {xs:?}, weight {ws:?}, bias {:?}, stride {stride}", self.shape(bias)),
            ));
        }
        let (b, t, cin) = (xs[0], xs[1], xs[2]);
        let (k, cout) = (ws[0], ws[2]);
        if t + 2 * padding < k {
            return Err(shape_err("conv1d", format!("input length {t} shorter than kernel {k}")));
        }
        let t_out = (t + 2 * padding - k) / stride + 1;
        let cols = im2col(self.value(x).data(), b, t, cin, k, stride, padding, t_out);
        let mut out = vec![T::zero(); b * t_out * cout];
        let bv = self.value(bias).data();
        for row in out.chunks_mut(cout) {
            row.copy_from_slice(bv);
        }
        let wd = self.value(weight).data();
        unsafe {
            T::gemm(
                b * t_out,
                k * cin,
                cout,
                T::one(),
                cols.as_ptr(),
                (k * cin) as isize,
                1,
                wd.as_ptr(),
                cout as isize,
                1,
                T::one(),
                out.as_mut_ptr(),
                cout as isize,
                1,
            );
        }
        let out = Tensor::new(&[b, t_out, cout], out)?;
        let ng = self.ng(x) || self.ng(weight) || self.ng(bias);
        Ok(self.push(
            out,
            Op::Conv1d {
                x,
                weight,
                bias,
                stride,
                padding,
                cols,
            },
            ng,
        ))
    }

    /// Row lookup. `table: [V, d]`; the result has shape `shape + [d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize], shape: &[usize]) -> Result<Var> {
        let ts = self.shape(table).to_vec();
        if ts.len() != 2 || shape.iter().product::<usize>() != ids.len() {
            return Err(shape_err("embedding", format!("table {ts:?}, {} ids into {shape:?}", ids.len())));
        }
        let (v, d) = (ts[0], ts[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(NumError::Invalid(format!("embedding id {bad} outside vocabulary of {v}")));
        }
        let td = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(&td[i * d..(i + 1) * d]);
        }
        let mut out_shape = shape.to_vec();
        out_shape.push(d);
        let out = Tensor::new(&out_shape, data)?;
        let ng = self.ng(table);
        Ok(self.push(
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            ng,
        ))
    }

    /// Inverted dropout. Identity outside training or at rate 0.
    pub fn dropout(&mut self, a: Var, rate: f64) -> Var {
        if !self.training || rate <= 0.0 {
            return a;
        }
        let keep = 1.0 - rate;
        let scale = T::from_f64(1.0 / keep);
        let n = self.value(a).numel();
        let mask: Vec<T> = (0..n)
            .map(|_| if self.rng.gen::<f64>() < keep { scale } else { T::zero() })
            .collect();
        let av = self.value(a);
        let out = Tensor::from_fn(av.shape(), |i| av.data()[i] * mask[i]);
        let ng = self.ng(a);
        self.push(out, Op::Dropout(a, mask), ng)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<T>();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel().max(1);
        let s = self.sum(a);
        self.scale(s, T::from_f64(1.0 / n as f64))
    }

    /// Label-smoothed negative log-likelihood averaged over non-ignored
    /// targets. `logits: [N, V]`. Each counted row contributes
    /// `(1-eps)·NLL(target) + eps·mean_j NLL(j)`, the mean taken over every
    /// class except `ignore`. Returns the loss and the counted rows.
    pub fn smoothed_nll(
        &mut self,
        logits: Var,
        targets: &[usize],
        ignore: Option<usize>,
        smoothing: f64,
    ) -> Result<(Var, usize)> {
        let ls = self.shape(logits).to_vec();
        if ls.len() != 2 || ls[0] != targets.len() {
            return Err(shape_err("smoothed_nll", format!("logits {ls:?}, {} targets", targets.len())));
        }
        if !(0.0..=1.0).contains(&smoothing) {
            return Err(NumError::Invalid(format!("smoothing {smoothing} outside [0, 1]")));
        }
        let v = ls[1];
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(NumError::Invalid(format!("target {bad} outside vocabulary of {v}")));
        }
        let count = targets.iter().filter(|&&t| Some(t) != ignore).count();
        if count == 0 {
            return Err(NumError::Invalid("every target position is padding".into()));
        }
        let smoothing = T::from_f64(smoothing);
        let classes = if ignore.map_or(false, |p| p < v) { v - 1 } else { v };
        let uniform = smoothing / T::from_f64(classes as f64);
        let ld = self.value(logits).data();
        let mut probs = vec![T::zero(); ld.len()];
        let mut total = T::zero();
        for (r, &t) in targets.iter().enumerate() {
            let row = &ld[r * v..(r + 1) * v];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
            for j in 0..v {
                probs[r * v + j] = (row[j] - lse).exp();
            }
            if Some(t) == ignore {
                continue;
            }
            let mut smooth = T::zero();
            for (j, &x) in row.iter().enumerate() {
                if Some(j) != ignore {
                    smooth += lse - x;
                }
            }
            total += (T::one() - smoothing) * (lse - row[t]) + uniform * smooth;
        }
        let loss = total / T::from_f64(count as f64);
        let ng = self.ng(logits);
        let var = self.push(
            Tensor::scalar(loss),
            Op::SmoothedNll {
                logits,
                targets: targets.to_vec(),
                ignore,
                smoothing,
                count,
                probs,
            },
            ng,
        );
        Ok((var, count))
    }

    /// Reverse pass from a scalar `loss`, gradients gathered per parameter.
    pub fn backward(&self, loss: Var, store: &ParamStore<T>) -> Result<Gradients<T>> {
        if let Some(f) = &self.fault {
            return Err(f.clone());
        }
        if self.value(loss).numel() != 1 {
            return Err(NumError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut out = Gradients::zeros_like(store);
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.vjp(node, &g, &mut grads, &mut out)?;
        }
        if out.grads_non_finite() {
            return Err(NumError::NonFinite {
                op: "backward",
                node: loss.0,
            });
        }
        Ok(out)
    }

    fn acc<'a>(&self, grads: &'a mut [Option<Vec<T>>], v: Var) -> Option<&'a mut Vec<T>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let n = self.nodes[v.0].value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
    }

    fn vjp(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>], out: &mut Gradients<T>) -> Result<()> {
        match &node.op {
            Op::Constant => {}
            Op::Param(id) => out.accumulate(*id, g),
            Op::Add(a, b, bc) => {
                if let Some(ga) = self.acc(grads, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for (i, &d) in g.iter().enumerate() {
                        gb[bc.index(i)] += d;
                    }
                }
            }
            Op::Mul(a, b, bc) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.acc(grads, *a) {
                    for (i, &d) in g.iter().enumerate() {
                        ga[i] += d * bv[bc.index(i)];
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for (i, &d) in g.iter().enumerate() {
                        gb[bc.index(i)] += d * av[i];
                    }
                }
            }
            Op::Scale(a, f) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for (x, &d) in ga.iter_mut().zip(g) {
                        *x += d * *f;
                    }
                }
            }
            Op::MatMul(a, b) => self.matmul_vjp(*a, *b, g, grads),
            Op::Permute(a, perm) => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                let (back, _) = permute_data(g, node.value.shape(), &inv);
                if let Some(ga) = self.acc(grads, *a) {
                    add_into(ga, &back);
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    add_into(ga, g);
                }
            }
            Op::Relu(a) => {
                let av = self.value(*a).data();
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..g.len() {
                        if av[i] > T::zero() {
                            ga[i] += g[i];
                        }
                    }
                }
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let d = *node.value.shape().last().unwrap_or(&1);
                if let Some(ga) = self.acc(grads, *a) {
                    for r in 0..y.len() / d.max(1) {
                        let (ys, gs) = (&y[r * d..(r + 1) * d], &g[r * d..(r + 1) * d]);
                        let dot = ys.iter().zip(gs).map(|(&a, &b)| a * b).sum::<T>();
                        for j in 0..d {
                            ga[r * d + j] += ys[j] * (gs[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let d = self.shape(*gain)[0];
                let gv = self.value(*gain).data();
                let rows = g.len() / d.max(1);
                if let Some(gg) = self.acc(grads, *gain) {
                    for r in 0..rows {
                        for j in 0..d {
                            gg[j] += g[r * d + j] * xhat[r * d + j];
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *bias) {
                    for r in 0..rows {
                        for j in 0..d {
                            gb[j] += g[r * d + j];
                        }
                    }
                }
                if let Some(gx) = self.acc(grads, *x) {
                    let dn = T::from_f64(d as f64);
                    let mut dh = vec![T::zero(); d];
                    for r in 0..rows {
                        let base = r * d;
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for j in 0..d {
                            dh[j] = g[base + j] * gv[j];
                            m1 += dh[j];
                            m2 += dh[j] * xhat[base + j];
                        }
                        m1 /= dn;
                        m2 /= dn;
                        for j in 0..d {
                            gx[base + j] += rstd[r] * (dh[j] - m1 - xhat[base + j] * m2);
                        }
                    }
                }
            }
            Op::Conv1d {
                x,
                weight,
                bias,
                stride,
                padding,
                cols,
            } => {
                let xs = self.shape(*x).to_vec();
                let ws = self.shape(*weight).to_vec();
                let (b, t, cin) = (xs[0], xs[1], xs[2]);
                let (k, cout) = (ws[0], ws[2]);
                let t_out = node.value.shape()[1];
                let rows = b * t_out;
                if let Some(gb) = self.acc(grads, *bias) {
                    for row in g.chunks(cout) {
                        add_into(gb, row);
                    }
                }
                if let Some(gw) = self.acc(grads, *weight) {
                    // gw[K*Cin, Cout] += cols^T @ g
                    unsafe {
                        T::gemm(
                            k * cin,
                            rows,
                            cout,
                            T::one(),
                            cols.as_ptr(),
                            1,
                            (k * cin) as isize,
                            g.as_ptr(),
                            cout as isize,
                            1,
                            T::one(),
                            gw.as_mut_ptr(),
                            cout as isize,
                            1,
                        );
                    }
                }
                if self.ng(*x) {
                    let wd = self.value(*weight).data();
                    let mut dcols = vec![T::zero(); rows * k * cin];
                    unsafe {
                        T::gemm(
                            rows,
                            cout,
                            k * cin,
                            T::one(),
                            g.as_ptr(),
                            cout as isize,
                            1,
                            wd.as_ptr(),
                            1,
                            cout as isize,
                            T::zero(),
                            dcols.as_mut_ptr(),
                            (k * cin) as isize,
                            1,
                        );
                    }
                    let gx = self.acc(grads, *x).expect("needs grad");
                    col2im_add(&dcols, gx, b, t, cin, k, *stride, *padding, t_out);
                }
            }
            Op::Embedding { table, ids } => {
                let d = self.shape(*table)[1];
                if let Some(gt) = self.acc(grads, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            gt[id * d + j] += g[r * d + j];
                        }
                    }
                }
            }
            Op::Dropout(a, mask) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..g.len() {
                        ga[i] += g[i] * mask[i];
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for x in ga.iter_mut() {
                        *x += g[0];
                    }
                }
            }
            Op::SmoothedNll {
                logits,
                targets,
                ignore,
                smoothing,
                count,
                probs,
            } => {
                let v = self.shape(*logits)[1];
                let classes = if ignore.map_or(false, |p| p < v) { v - 1 } else { v };
                let uniform = *smoothing / T::from_f64(classes as f64);
                let scale = g[0] / T::from_f64(*count as f64);
                if let Some(gl) = self.acc(grads, *logits) {
                    for (r, &t) in targets.iter().enumerate() {
                        if Some(t) == *ignore {
                            continue;
                        }
                        for j in 0..v {
                            let mut q = if Some(j) == *ignore { T::zero() } else { uniform };
                            if j == t {
                                q += T::one() - *smoothing;
                            }
                            gl[r * v + j] += scale * (probs[r * v + j] - q);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn matmul_vjp(&self, a: Var, b: Var, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let ash = self.shape(a).to_vec();
        let bsh = self.shape(b).to_vec();
        let k = ash[ash.len() - 1];
        let n = bsh[bsh.len() - 1];
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        if bsh.len() == 2 {
            let rows = ad.len() / k.max(1);
            if let Some(ga) = self.acc(grads, a) {
                // ga[rows, k] += g[rows, n] @ b^T
                unsafe {
                    T::gemm(rows, n, k, T::one(), g.as_ptr(), n as isize, 1, bd.as_ptr(), 1, n as isize, T::one(), ga.as_mut_ptr(), k as isize, 1);
                }
            }
            if let Some(gb) = self.acc(grads, b) {
                // gb[k, n] += a^T @ g
                unsafe {
                    T::gemm(k, rows, n, T::one(), ad.as_ptr(), 1, k as isize, g.as_ptr(), n as isize, 1, T::one(), gb.as_mut_ptr(), n as isize, 1);
                }
            }
        } else {
            let m = ash[ash.len() - 2];
            let batch: usize = ash[..ash.len() - 2].iter().product();
            if let Some(ga) = self.acc(grads, a) {
                for i in 0..batch {
                    unsafe {
                        T::gemm(
                            m, n, k, T::one(),
                            g[i * m * n..].as_ptr(), n as isize, 1,
                            bd[i * k * n..].as_ptr(), 1, n as isize,
                            T::one(), ga[i * m * k..].as_mut_ptr(), k as isize, 1,
                        );
                    }
                }
            }
            if let Some(gb) = self.acc(grads, b) {
                for i in 0..batch {
                    unsafe {
                        T::gemm(
                            k, m, n, T::one(),
                            ad[i * m * k..].as_ptr(), 1, k as isize,
                            g[i * m * n..].as_ptr(), n as isize, 1,
                            T::one(), gb[i * k * n..].as_mut_ptr(), n as isize, 1,
                        );
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Gradients<T> {
    fn grads_non_finite(&self) -> bool {
        (0..self.len()).any(|i| !self.get(ParamId(i)).is_finite())
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn gemm_nn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    if m == 0 || n == 0 {
        return;
    }
    unsafe {
        T::gemm(m, k, n, T::one(), a.as_ptr(), k as isize, 1, b.as_ptr(), n as isize, 1, T::zero(), c.as_mut_ptr(), n as isize, 1);
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

fn permute_data<T: Scalar>(data: &[T], shape: &[usize], perm: &[usize]) -> (Vec<T>, Vec<usize>) {
    let rank = shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let numel = data.len();
    if rank == 0 || numel == 0 {
        return (data.to_vec(), out_shape);
    }
    let in_str = strides(shape);
    let src_str: Vec<usize> = perm.iter().map(|&p| in_str[p]).collect();
    let mut out = Vec::with_capacity(numel);
    // Inner run is contiguous when the last axis stays last.
    let inner = if perm[rank - 1] == rank - 1 { out_shape[rank - 1] } else { 1 };
    let outer_rank = if inner > 1 { rank - 1 } else { rank };
    let mut idx = vec![0usize; outer_rank];
    let mut off = 0usize;
    for _ in 0..numel / inner {
        if inner > 1 {
            out.extend_from_slice(&data[off..off + inner]);
        } else {
            out.push(data[off]);
        }
        for ax in (0..outer_rank).rev() {
            idx[ax] += 1;
            off += src_str[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= src_str[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    (out, out_shape)
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(x: &[T], b: usize, t: usize, cin: usize, k: usize, stride: usize, pad: usize, t_out: usize) -> Vec<T> {
    let width = k * cin;
    let mut cols = vec![T::zero(); b * t_out * width];
    for bi in 0..b {
        for to in 0..t_out {
            let row = &mut cols[(bi * t_out + to) * width..(bi * t_out + to + 1) * width];
            for kk in 0..k {
                let ti = (to * stride + kk) as isize - pad as isize;
                if ti < 0 || ti as usize >= t {
                    continue;
                }
                let src = &x[(bi * t + ti as usize) * cin..(bi * t + ti as usize + 1) * cin];
                row[kk * cin..(kk + 1) * cin].copy_from_slice(src);
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im_add<T: Scalar>(dcols: &[T], gx: &mut [T], b: usize, t: usize, cin: usize, k: usize, stride: usize, pad: usize, t_out: usize) {
    let width = k * cin;
    for bi in 0..b {
        for to in 0..t_out {
            let row = &dcols[(bi * t_out + to) * width..(bi * t_out + to + 1) * width];
            for kk in 0..k {
                let ti = (to * stride + kk) as isize - pad as isize;
                if ti < 0 || ti as usize >= t {
                    continue;
                }
                let dst = &mut gx[(bi * t + ti as usize) * cin..(bi * t + ti as usize + 1) * cin];
                add_into(dst, &row[kk * cin..(kk + 1) * cin]);
            }
        }
    }
}
