//! Reverse-mode differentiation over an explicit operation record.
//!
//! A [`Tape`] borrows a [`ParamStore`] immutably while recording; parameter
//! nodes read their values straight from the store. [`Tape::backward`]
//! returns a detached [`Gradients`] so the store can be mutated afterwards.

use super::ops::{gelu, gelu_grad, log_softmax_in_place, softmax_in_place, LAYER_NORM_EPS};
use super::params::{ParamId, ParamStore};
use super::tensor::{matmul_a_bt, matmul_at_b, matmul_into, Tensor};
use crate::error::{MacaError, Result};
use crate::scalar::Scalar;

/// Node handle inside a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Gelu(Var),
    Exp(Var),
    Square(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    GroupMean {
        x: Var,
        group: usize,
    },
    RepeatRows {
        x: Var,
        times: usize,
    },
    ConcatCols(Var, Var),
    BlockScores {
        q: Var,
        k: Var,
        n: usize,
        scale: T,
    },
    BlockMix {
        a: Var,
        v: Var,
        n: usize,
    },
    GatherCols {
        x: Var,
        idx: Vec<usize>,
    },
    Clamp {
        x: Var,
        lo: T,
        hi: T,
    },
    Minimum(Var, Var),
    Sum(Var),
}

struct Node<T> {
    value: Option<Tensor<T>>,
    op: Op<T>,
}

pub struct Tape<'s, T: Scalar> {
    store: &'s ParamStore<T>,
    nodes: Vec<Node<T>>,
}

/// Gradients produced by one backward pass.
pub struct Gradients<T> {
    nodes: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, Tensor<T>)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to a recorded node, if it was reached.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }

    /// Per-parameter gradients, one entry per distinct parameter reached.
    pub fn params(&self) -> &[(ParamId, Tensor<T>)] {
        &self.params
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.iter().find(|(p, _)| *p == id).map(|(_, g)| g)
    }

    /// Adds every parameter gradient into the store's accumulators.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) -> Result<()> {
        for (id, g) in &self.params {
            store.accumulate(*id, g)?;
        }
        Ok(())
    }
}

impl<'s, T: Scalar> Tape<'s, T> {
    pub fn new(store: &'s ParamStore<T>) -> Self {
        Self {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.value(*id),
            _ => unreachable!("only parameter nodes omit their value"),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value: Some(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `x + bias` with `bias` a `1 × cols` row broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.len() != xv.cols() {
            return Err(MacaError::shape(format!(
                "bias of {} entries for {} columns",
                bv.len(),
                xv.cols()
            )));
        }
        let mut out = xv.clone();
        let c = xv.cols();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o += bv.data()[i % c];
        }
        Ok(self.push(out, Op::AddBias(x, bias)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).scale(s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(T::zero()));
        self.push(out, Op::Relu(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu);
        self.push(out, Op::Gelu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(T::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        self.push(out, Op::Square(a))
    }

    /// Row-wise layer normalization with learned gain and shift (`1 × cols`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        let (gv, bv) = (self.value(gamma), self.value(beta));
        if gv.len() != c || bv.len() != c {
            return Err(MacaError::shape("layer norm parameters do not match width"));
        }
        let eps = T::lit(LAYER_NORM_EPS);
        let cf = T::from_usize(c).unwrap();
        let mut xhat = vec![T::zero(); r * c];
        let mut inv_std = vec![T::zero(); r];
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let row = xv.row(i);
            let mean = row.iter().copied().sum::<T>() / cf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / cf;
            let is = T::one() / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[i * c + j] = h;
                out[i * c + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let out = Tensor::from_parts(vec![r, c], out);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            log_softmax_in_place(out.row_mut(r));
        }
        self.push(out, Op::LogSoftmaxRows(a))
    }

    /// Averages each consecutive block of `group` rows into one row.
    pub fn group_mean(&mut self, x: Var, group: usize) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        if group == 0 || r % group != 0 {
            return Err(MacaError::shape(format!(
                "{r} rows not divisible into groups of {group}"
            )));
        }
        let g = T::from_usize(group).unwrap();
        let mut out = vec![T::zero(); (r / group) * c];
        for i in 0..r {
            let o = (i / group) * c;
            for j in 0..c {
                out[o + j] += xv.data()[i * c + j] / g;
            }
        }
        let out = Tensor::from_parts(vec![r / group, c], out);
        Ok(self.push(out, Op::GroupMean { x, group }))
    }

    /// Repeats every row `times` times consecutively.
    pub fn repeat_rows(&mut self, x: Var, times: usize) -> Var {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        let mut out = Vec::with_capacity(r * times * c);
        for i in 0..r {
            for _ in 0..times {
                out.extend_from_slice(xv.row(i));
            }
        }
        let out = Tensor::from_parts(vec![r * times, c], out);
        self.push(out, Op::RepeatRows { x, times })
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(MacaError::shape("concat_cols row mismatch"));
        }
        let (r, ca, cb) = (av.rows(), av.cols(), bv.cols());
        let mut out = Vec::with_capacity(r * (ca + cb));
        for i in 0..r {
            out.extend_from_slice(av.row(i));
            out.extend_from_slice(bv.row(i));
        }
        let out = Tensor::from_parts(vec![r, ca + cb], out);
        Ok(self.push(out, Op::ConcatCols(a, b)))
    }

    /// Attention scores inside consecutive blocks of `n` rows:
    /// `out[b·n+i, j] = scale · q[b·n+i] · k[b·n+j]`.
    pub fn block_scores(&mut self, q: Var, k: Var, n: usize, scale: T) -> Result<Var> {
        let (qv, kv) = (self.value(q), self.value(k));
        if qv.shape() != kv.shape() || n == 0 || qv.rows() % n != 0 {
            return Err(MacaError::shape("block_scores operands"));
        }
        let (r, d) = (qv.rows(), qv.cols());
        let mut out = vec![T::zero(); r * n];
        for b in 0..r / n {
            let qb = &qv.data()[b * n * d..(b + 1) * n * d];
            let kb = &kv.data()[b * n * d..(b + 1) * n * d];
            matmul_a_bt(qb, kb, &mut out[b * n * n..(b + 1) * n * n], n, d, n);
        }
        for o in &mut out {
            *o *= scale;
        }
        let out = Tensor::from_parts(vec![r, n], out);
        Ok(self.push(out, Op::BlockScores { q, k, n, scale }))
    }

    /// Applies per-block mixing weights: `out[b·n+i] = Σ_j a[b·n+i, j] · v[b·n+j]`.
    pub fn block_mix(&mut self, a: Var, v: Var, n: usize) -> Result<Var> {
        let (av, vv) = (self.value(a), self.value(v));
        if av.cols() != n || av.rows() != vv.rows() || av.rows() % n != 0 {
            return Err(MacaError::shape("block_mix operands"));
        }
        let (r, d) = (vv.rows(), vv.cols());
        let mut out = vec![T::zero(); r * d];
        for b in 0..r / n {
            matmul_into(
                &av.data()[b * n * n..(b + 1) * n * n],
                &vv.data()[b * n * d..(b + 1) * n * d],
                &mut out[b * n * d..(b + 1) * n * d],
                n,
                n,
                d,
            );
        }
        let out = Tensor::from_parts(vec![r, d], out);
        Ok(self.push(out, Op::BlockMix { a, v, n }))
    }

    /// Picks column `idx[r]` of every row, producing an `rows × 1` column.
    pub fn gather_cols(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if idx.len() != xv.rows() || idx.iter().any(|&j| j >= xv.cols()) {
            return Err(MacaError::shape("gather_cols indices"));
        }
        let out: Vec<T> = idx.iter().enumerate().map(|(r, &j)| xv.get(r, j)).collect();
        let out = Tensor::from_parts(vec![idx.len(), 1], out);
        Ok(self.push(out, Op::GatherCols { x, idx: idx.to_vec() }))
    }

    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        let out = self.value(x).map(|v| v.max(lo).min(hi));
        self.push(out, Op::Clamp { x, lo, hi })
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), T::min)?;
        Ok(self.push(out, Op::Minimum(a, b)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::from_parts(vec![1, 1], vec![s]), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = T::from_usize(self.value(a).len().max(1)).unwrap();
        let s = self.sum(a);
        self.scale(s, T::one() / n)
    }

    /// Backpropagates from a scalar (`1 × 1`) output with unit upstream gradient.
    pub fn backward(&self, out: Var) -> Result<Gradients<T>> {
        if out.0 >= self.nodes.len() {
            return Err(MacaError::BackwardBeforeForward);
        }
        if self.value(out).len() != 1 {
            return Err(MacaError::shape("backward without upstream needs a scalar output"));
        }
        self.backward_with(out, Tensor::full(&[1, 1], T::one()))
    }

    /// Backpropagates an explicit upstream gradient shaped like `out`.
    pub fn backward_with(&self, out: Var, upstream: Tensor<T>) -> Result<Gradients<T>> {
        if self.nodes.is_empty() || out.0 >= self.nodes.len() {
            return Err(MacaError::BackwardBeforeForward);
        }
        if upstream.shape() != self.value(out).shape() {
            return Err(MacaError::shape("upstream gradient shape"));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(upstream);

        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        let mut params: Vec<(ParamId, Tensor<T>)> = Vec::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &grads[idx]) {
                match params.iter_mut().find(|(p, _)| p == id) {
                    Some((_, acc)) => acc.add_assign(g)?,
                    None => params.push((*id, g.clone())),
                }
            }
        }
        params.sort_by_key(|(id, _)| *id);
        Ok(Gradients { nodes: grads, params })
    }

    fn propagate(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let out = self.nodes[idx].value.as_ref();
        match &self.nodes[idx].op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                let mut da = vec![T::zero(); m * k];
                matmul_a_bt(g.data(), bv.data(), &mut da, m, n, k);
                let mut db = vec![T::zero(); k * n];
                matmul_at_b(av.data(), g.data(), &mut db, m, k, n);
                accumulate(grads, *a, Tensor::from_parts(av.shape().to_vec(), da))?;
                accumulate(grads, *b, Tensor::from_parts(bv.shape().to_vec(), db))?;
            }
            Op::AddBias(x, bias) => {
                let c = g.cols();
                let mut db = vec![T::zero(); c];
                for (i, &v) in g.data().iter().enumerate() {
                    db[i % c] += v;
                }
                accumulate(grads, *x, g.clone())?;
                let bshape = self.value(*bias).shape().to_vec();
                accumulate(grads, *bias, Tensor::from_parts(bshape, db))?;
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone())?;
                accumulate(grads, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone())?;
                accumulate(grads, *b, g.scale(-T::one()))?;
            }
            Op::Mul(a, b) => {
                let da = g.zip_map(self.value(*b), |x, y| x * y)?;
                let db = g.zip_map(self.value(*a), |x, y| x * y)?;
                accumulate(grads, *a, da)?;
                accumulate(grads, *b, db)?;
            }
            Op::Scale(a, s) => accumulate(grads, *a, g.scale(*s))?,
            Op::Relu(a) => {
                let d = g.zip_map(self.value(*a), |gv, x| if x > T::zero() { gv } else { T::zero() })?;
                accumulate(grads, *a, d)?;
            }
            Op::Gelu(a) => {
                let d = g.zip_map(self.value(*a), |gv, x| gv * gelu_grad(x))?;
                accumulate(grads, *a, d)?;
            }
            Op::Exp(a) => {
                let d = g.zip_map(out.unwrap(), |gv, y| gv * y)?;
                accumulate(grads, *a, d)?;
            }
            Op::Square(a) => {
                let two = T::lit(2.0);
                let d = g.zip_map(self.value(*a), |gv, x| two * gv * x)?;
                accumulate(grads, *a, d)?;
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (r, c) = (g.rows(), g.cols());
                let gam = self.value(*gamma).data();
                let cf = T::from_usize(c).unwrap();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                let mut dx = vec![T::zero(); r * c];
                let mut dxhat = vec![T::zero(); c];
                for i in 0..r {
                    let gr = g.row(i);
                    let xh = &xhat[i * c..(i + 1) * c];
                    let mut s1 = T::zero();
                    let mut s2 = T::zero();
                    for j in 0..c {
                        dgamma[j] += gr[j] * xh[j];
                        dbeta[j] += gr[j];
                        dxhat[j] = gr[j] * gam[j];
                        s1 += dxhat[j];
                        s2 += dxhat[j] * xh[j];
                    }
                    for j in 0..c {
                        dx[i * c + j] = inv_std[i] / cf * (cf * dxhat[j] - s1 - xh[j] * s2);
                    }
                }
                let gshape = self.value(*gamma).shape().to_vec();
                let bshape = self.value(*beta).shape().to_vec();
                accumulate(grads, *x, Tensor::from_parts(vec![r, c], dx))?;
                accumulate(grads, *gamma, Tensor::from_parts(gshape, dgamma))?;
                accumulate(grads, *beta, Tensor::from_parts(bshape, dbeta))?;
            }
            Op::SoftmaxRows(a) => {
                let y = out.unwrap();
                let mut d = g.clone();
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                    for (j, dv) in d.row_mut(r).iter_mut().enumerate() {
                        *dv = yr[j] * (gr[j] - dot);
                    }
                }
                accumulate(grads, *a, d)?;
            }
            Op::LogSoftmaxRows(a) => {
                let y = out.unwrap();
                let mut d = g.clone();
                for r in 0..y.rows() {
                    let total: T = g.row(r).iter().copied().sum();
                    let yr = y.row(r);
                    for (j, dv) in d.row_mut(r).iter_mut().enumerate() {
                        *dv -= yr[j].exp() * total;
                    }
                }
                accumulate(grads, *a, d)?;
            }
            Op::GroupMean { x, group } => {
                let xv = self.value(*x);
                let (r, c) = (xv.rows(), xv.cols());
                let gf = T::from_usize(*group).unwrap();
                let mut d = vec![T::zero(); r * c];
                for i in 0..r {
                    let src = g.row(i / group);
                    for j in 0..c {
                        d[i * c + j] = src[j] / gf;
                    }
                }
                accumulate(grads, *x, Tensor::from_parts(vec![r, c], d))?;
            }
            Op::RepeatRows { x, times } => {
                let xv = self.value(*x);
                let (r, c) = (xv.rows(), xv.cols());
                let mut d = vec![T::zero(); r * c];
                for i in 0..r * times {
                    let o = (i / times) * c;
                    for (j, &v) in g.row(i).iter().enumerate() {
                        d[o + j] += v;
                    }
                }
                accumulate(grads, *x, Tensor::from_parts(xv.shape().to_vec(), d))?;
            }
            Op::ConcatCols(a, b) => {
                let (ca, cb) = (self.value(*a).cols(), self.value(*b).cols());
                let r = g.rows();
                let mut da = Vec::with_capacity(r * ca);
                let mut db = Vec::with_capacity(r * cb);
                for i in 0..r {
                    let row = g.row(i);
                    da.extend_from_slice(&row[..ca]);
                    db.extend_from_slice(&row[ca..]);
                }
                let ashape = self.value(*a).shape().to_vec();
                let bshape = self.value(*b).shape().to_vec();
                accumulate(grads, *a, Tensor::from_parts(ashape, da))?;
                accumulate(grads, *b, Tensor::from_parts(bshape, db))?;
            }
            Op::BlockScores { q, k, n, scale } => {
                let (qv, kv) = (self.value(*q), self.value(*k));
                let (r, d) = (qv.rows(), qv.cols());
                let mut dq = vec![T::zero(); r * d];
                let mut dk = vec![T::zero(); r * d];
                let gs = g.scale(*scale);
                for b in 0..r / n {
                    let gb = &gs.data()[b * n * n..(b + 1) * n * n];
                    let qb = &qv.data()[b * n * d..(b + 1) * n * d];
                    let kb = &kv.data()[b * n * d..(b + 1) * n * d];
                    matmul_into(gb, kb, &mut dq[b * n * d..(b + 1) * n * d], *n, *n, d);
                    matmul_at_b(gb, qb, &mut dk[b * n * d..(b + 1) * n * d], *n, *n, d);
                }
                accumulate(grads, *q, Tensor::from_parts(vec![r, d], dq))?;
                accumulate(grads, *k, Tensor::from_parts(vec![r, d], dk))?;
            }
            Op::BlockMix { a, v, n } => {
                let (av, vv) = (self.value(*a), self.value(*v));
                let (r, d) = (vv.rows(), vv.cols());
                let mut da = vec![T::zero(); r * n];
                let mut dv = vec![T::zero(); r * d];
                for b in 0..r / n {
                    let gb = &g.data()[b * n * d..(b + 1) * n * d];
                    let vb = &vv.data()[b * n * d..(b + 1) * n * d];
                    let ab = &av.data()[b * n * n..(b + 1) * n * n];
                    matmul_a_bt(gb, vb, &mut da[b * n * n..(b + 1) * n * n], *n, d, *n);
                    matmul_at_b(ab, gb, &mut dv[b * n * d..(b + 1) * n * d], *n, *n, d);
                }
                accumulate(grads, *a, Tensor::from_parts(vec![r, *n], da))?;
                accumulate(grads, *v, Tensor::from_parts(vec![r, d], dv))?;
            }
            Op::GatherCols { x, idx } => {
                let xv = self.value(*x);
                let mut d = Tensor::zeros(xv.shape());
                for (r, &j) in idx.iter().enumerate() {
                    let cur = d.get(r, j);
                    d.set(r, j, cur + g.data()[r]);
                }
                accumulate(grads, *x, d)?;
            }
            Op::Clamp { x, lo, hi } => {
                let d = g.zip_map(
                    self.value(*x),
                    |gv, v| {
                        if v >= *lo && v <= *hi {
                            gv
                        } else {
                            T::zero()
                        }
                    },
                )?;
                accumulate(grads, *x, d)?;
            }
            Op::Minimum(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut da = Tensor::zeros(av.shape());
                let mut db = Tensor::zeros(bv.shape());
                for i in 0..g.len() {
                    if av.data()[i] <= bv.data()[i] {
                        da.data_mut()[i] = g.data()[i];
                    } else {
                        db.data_mut()[i] = g.data()[i];
                    }
                }
                accumulate(grads, *a, da)?;
                accumulate(grads, *b, db)?;
            }
            Op::Sum(a) => {
                let shape = self.value(*a).shape().to_vec();
                accumulate(grads, *a, Tensor::full(&shape, g.data()[0]))?;
            }
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}
