//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] is an append-only arena. Each operation pushes a node holding
//! its forward value and a record of how to route gradients back to its
//! parents. Because parents always precede children in the arena, walking the
//! arena backwards from the loss is a valid reverse topological order and
//! visits every node once. Gradients reaching the same node along several
//! paths are summed.
//!
//! Only the operations the speaker encoder needs are provided. Binary
//! element-wise operations accept equal shapes or a scalar on either side;
//! there is no general broadcasting.

use super::rng::Rng;
use super::tensor::{matmul_raw, transpose_raw, Tensor, NORM_FLOOR};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
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
    Matmul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    L2NormalizeRows(Var),
    MeanOverRows(Var),
    Sum(Var),
    Mean(Var),
    Dropout(Var, Vec<f64>),
    Grl(Var, f64),
    SelectRows(Var, Vec<usize>),
    MaskedLogSumExpRows(Var, Vec<bool>),
    MaskedRowSum(Var, Vec<bool>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
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

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf treated as a constant input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` loss w.r.t. `v`; zeros if unreached.
    pub fn grad(&self, v: Var) -> Tensor {
        let shape = self.nodes[v.0].value.shape().to_vec();
        match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape matches value"),
            None => Tensor::zeros(&shape),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, name: &'static str, value: Tensor, op: Op, parents: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("forward of {name}")));
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push(value, op, requires_grad))
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        self.value(v)
            .dims2()
            .ok_or_else(|| Error::shape(op, format!("expected matrix, got {:?}", self.value(v).shape())))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{m},{k}] x [{k2},{n}]")));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::matrix(m, n, out)?;
        self.push_checked("matmul", value, Op::Matmul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims2(a, "transpose")?;
        let value = Tensor::matrix(c, r, transpose_raw(self.value(a).data(), r, c))?;
        self.push_checked("transpose", value, Op::Transpose(a), &[a])
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() == vb.shape() {
            let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(va.shape().to_vec(), data)
        } else if vb.is_scalar() {
            let y = vb.item();
            Ok(va.map(|x| f(x, y)))
        } else if va.is_scalar() {
            let x = va.item();
            Ok(vb.map(|y| f(x, y)))
        } else {
            Err(Error::shape(
                name,
                format!("unsupported broadcast {:?} with {:?}", va.shape(), vb.shape()),
            ))
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary("add", a, b, |x, y| x + y)?;
        self.push_checked("add", value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary("sub", a, b, |x, y| x - y)?;
        self.push_checked("sub", value, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary("mul", a, b, |x, y| x * y)?;
        self.push_checked("mul", value, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let value = self.value(a).map(|x| x * c);
        self.push_checked("scale", value, Op::Scale(a, c), &[a])
    }

    /// `x[R,C] + b[C]`, adding the bias vector to every row.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.dims2(x, "add_bias")?;
        if self.value(bias).shape() != [c] {
            return Err(Error::shape(
                "add_bias",
                format!("bias {:?} for [{r},{c}]", self.value(bias).shape()),
            ));
        }
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(c) {
            for (v, bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
        let value = Tensor::matrix(r, c, data)?;
        self.push_checked("add_bias", value, Op::AddBias(x, bias), &[x, bias])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push_checked("relu", value, Op::Relu(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::exp);
        self.push_checked("exp", value, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&x| x <= 0.0) {
            return Err(Error::invalid("log of non-positive value"));
        }
        let value = self.value(a).map(f64::ln);
        self.push_checked("log", value, Op::Log(a), &[a])
    }

    /// Divides each row by `max(‖row‖₂, 1e-12)`.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims2(a, "l2_normalize_rows")?;
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(c) {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_FLOOR);
            row.iter_mut().for_each(|v| *v /= n);
        }
        let value = Tensor::matrix(r, c, data)?;
        self.push_checked("l2_normalize_rows", value, Op::L2NormalizeRows(a), &[a])
    }

    /// Column means of a `[T, D]` matrix, giving shape `[D]`.
    pub fn mean_over_rows(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::vector(super::tensor::column_means(self.value(a))?);
        self.push_checked("mean_over_rows", value, Op::MeanOverRows(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).data().iter().sum());
        self.push_checked("sum", value, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let value = Tensor::scalar(v.data().iter().sum::<f64>() / v.numel() as f64);
        self.push_checked("mean", value, Op::Mean(a), &[a])
    }

    /// Inverted dropout: kept units are scaled by `1/(1 - rate)`.
    pub fn dropout(&mut self, a: Var, rate: f64, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(a).numel())
            .map(|_| if rng.uniform() < rate { 0.0 } else { keep })
            .collect();
        let v = self.value(a);
        let data = v.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let value = Tensor::new(v.shape().to_vec(), data)?;
        self.push_checked("dropout", value, Op::Dropout(a, mask), &[a])
    }

    /// Gradient reversal: identity forward, upstream gradient times `-lambda` backward.
    pub fn grl(&mut self, a: Var, lambda: f64) -> Result<Var> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::invalid(format!("gradient reversal strength {lambda}")));
        }
        let value = self.value(a).clone();
        self.push_checked("grl", value, Op::Grl(a, lambda), &[a])
    }

    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let (r, c) = self.dims2(a, "select_rows")?;
        if rows.is_empty() || rows.iter().any(|&i| i >= r) {
            return Err(Error::shape("select_rows", format!("indices {rows:?} for {r} rows")));
        }
        let v = self.value(a);
        let data = rows.iter().flat_map(|&i| v.row(i).iter().copied()).collect();
        let value = Tensor::matrix(rows.len(), c, data)?;
        self.push_checked("select_rows", value, Op::SelectRows(a, rows.to_vec()), &[a])
    }

    /// Per-row `log Σ_{c: mask} exp(x[r,c])`, max-shifted. Every row needs a
    /// selected entry.
    pub fn masked_logsumexp_rows(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let (r, c) = self.dims2(a, "masked_logsumexp_rows")?;
        if mask.len() != r * c {
            return Err(Error::shape("masked_logsumexp_rows", "mask size"));
        }
        let v = self.value(a);
        let mut out = Vec::with_capacity(r);
        for i in 0..r {
            let row = v.row(i);
            let m = &mask[i * c..(i + 1) * c];
            out.push(
                masked_lse(row, m)
                    .ok_or_else(|| Error::invalid(format!("row {i} has an empty logsumexp mask")))?,
            );
        }
        let value = Tensor::vector(out);
        self.push_checked(
            "masked_logsumexp_rows",
            value,
            Op::MaskedLogSumExpRows(a, mask.to_vec()),
            &[a],
        )
    }

    /// Per-row sum of the masked entries.
    pub fn masked_row_sum(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let (r, c) = self.dims2(a, "masked_row_sum")?;
        if mask.len() != r * c {
            return Err(Error::shape("masked_row_sum", "mask size"));
        }
        let v = self.value(a);
        let out = (0..r)
            .map(|i| {
                v.row(i)
                    .iter()
                    .zip(&mask[i * c..(i + 1) * c])
                    .filter(|(_, &m)| m)
                    .map(|(x, _)| x)
                    .sum()
            })
            .collect();
        let value = Tensor::vector(out);
        self.push_checked("masked_row_sum", value, Op::MaskedRowSum(a, mask.to_vec()), &[a])
    }

    /// Populates gradients of the scalar `loss` w.r.t. every node it depends on.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.value(loss).shape()),
            ));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            if self.nodes[idx].requires_grad {
                self.propagate(idx, &g);
            }
            self.grads[idx] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }

    /// Gradient for a binary-op operand that may have been broadcast as a scalar.
    fn reduce_to(&self, v: Var, g: Vec<f64>) -> Vec<f64> {
        if self.value(v).numel() == g.len() {
            g
        } else {
            vec![g.iter().sum()]
        }
    }

    fn broadcast_other(&self, v: Var, len: usize) -> Vec<f64> {
        let val = self.value(v).data();
        if val.len() == len {
            val.to_vec()
        } else {
            vec![val[0]; len]
        }
    }

    fn propagate(&mut self, idx: usize, g: &[f64]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let updates: Vec<(Var, Vec<f64>)> = match &node.op {
            Op::Leaf => vec![],
            Op::Matmul(a, b) => {
                let (m, k) = self.value(*a).dims2().unwrap();
                let (_, n) = self.value(*b).dims2().unwrap();
                let bt = transpose_raw(self.value(*b).data(), k, n);
                let at = transpose_raw(self.value(*a).data(), m, k);
                vec![
                    (*a, matmul_raw(g, &bt, m, n, k)),
                    (*b, matmul_raw(&at, g, k, m, n)),
                ]
            }
            Op::Transpose(a) => {
                let (r, c) = self.value(*a).dims2().unwrap();
                vec![(*a, transpose_raw(g, c, r))]
            }
            Op::Add(a, b) => vec![
                (*a, self.reduce_to(*a, g.to_vec())),
                (*b, self.reduce_to(*b, g.to_vec())),
            ],
            Op::Sub(a, b) => vec![
                (*a, self.reduce_to(*a, g.to_vec())),
                (*b, self.reduce_to(*b, g.iter().map(|x| -x).collect())),
            ],
            Op::Mul(a, b) => {
                let va = self.broadcast_other(*a, g.len());
                let vb = self.broadcast_other(*b, g.len());
                let ga = g.iter().zip(&vb).map(|(x, y)| x * y).collect();
                let gb = g.iter().zip(&va).map(|(x, y)| x * y).collect();
                vec![(*a, self.reduce_to(*a, ga)), (*b, self.reduce_to(*b, gb))]
            }
            Op::Scale(a, c) => vec![(*a, g.iter().map(|x| x * c).collect())],
            Op::AddBias(x, b) => {
                let c = self.value(*b).numel();
                let mut gb = vec![0.0; c];
                for row in g.chunks(c) {
                    gb.iter_mut().zip(row).for_each(|(s, v)| *s += v);
                }
                vec![(*x, g.to_vec()), (*b, gb)]
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                vec![(*a, g.iter().zip(x).map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 }).collect())]
            }
            Op::Exp(a) => vec![(*a, g.iter().zip(out.data()).map(|(gv, y)| gv * y).collect())],
            Op::Log(a) => {
                let x = self.value(*a).data();
                vec![(*a, g.iter().zip(x).map(|(gv, xv)| gv / xv).collect())]
            }
            Op::L2NormalizeRows(a) => {
                let x = self.value(*a);
                let (_, c) = x.dims2().unwrap();
                let mut gx = Vec::with_capacity(g.len());
                for ((xr, yr), gr) in x.data().chunks(c).zip(out.data().chunks(c)).zip(g.chunks(c)) {
                    let n = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if n > NORM_FLOOR {
                        let yg: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                        gx.extend(gr.iter().zip(yr).map(|(gv, yv)| (gv - yv * yg) / n));
                    } else {
                        gx.extend(gr.iter().map(|gv| gv / NORM_FLOOR));
                    }
                }
                vec![(*a, gx)]
            }
            Op::MeanOverRows(a) => {
                let (t, _) = self.value(*a).dims2().unwrap();
                let inv = t as f64;
                let gx = (0..t).flat_map(|_| g.iter().map(move |v| v / inv)).collect();
                vec![(*a, gx)]
            }
            Op::Sum(a) => vec![(*a, vec![g[0]; self.value(*a).numel()])],
            Op::Mean(a) => {
                let n = self.value(*a).numel();
                vec![(*a, vec![g[0] / n as f64; n])]
            }
            Op::Dropout(a, mask) => vec![(*a, g.iter().zip(mask).map(|(gv, m)| gv * m).collect())],
            Op::Grl(a, lambda) => {
                let s = -lambda;
                vec![(*a, g.iter().map(|gv| gv * s).collect())]
            }
            Op::SelectRows(a, rows) => {
                let x = self.value(*a);
                let (_, c) = x.dims2().unwrap();
                let mut gx = vec![0.0; x.numel()];
                for (k, &r) in rows.iter().enumerate() {
                    for j in 0..c {
                        gx[r * c + j] += g[k * c + j];
                    }
                }
                vec![(*a, gx)]
            }
            Op::MaskedLogSumExpRows(a, mask) => {
                let x = self.value(*a);
                let (r, c) = x.dims2().unwrap();
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    let lse = out.data()[i];
                    for j in 0..c {
                        if mask[i * c + j] {
                            gx[i * c + j] = g[i] * (x.data()[i * c + j] - lse).exp();
                        }
                    }
                }
                vec![(*a, gx)]
            }
            Op::MaskedRowSum(a, mask) => {
                let (_, c) = self.value(*a).dims2().unwrap();
                let gx = mask
                    .iter()
                    .enumerate()
                    .map(|(k, &m)| if m { g[k / c] } else { 0.0 })
                    .collect();
                vec![(*a, gx)]
            }
        };
        for (v, gv) in updates {
            self.accumulate(v, gv);
        }
    }
}

fn masked_lse(row: &[f64], mask: &[bool]) -> Option<f64> {
    let m = row
        .iter()
        .zip(mask)
        .filter(|(_, &k)| k)
        .map(|(&x, _)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return None;
    }
    let s: f64 = row
        .iter()
        .zip(mask)
        .filter(|(_, &k)| k)
        .map(|(&x, _)| (x - m).exp())
        .sum();
    Some(m + s.ln())
}
