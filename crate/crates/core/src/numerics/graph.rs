//! Define-by-run reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records each operation as a node holding its output value
//! and whatever the backward pass needs (sort permutations, branch
//! selections). Graphs are cheap and rebuilt for every forward pass.
//!
//! Batched ops treat a rank-2 tensor as `[rows, cols]` and a rank-1
//! tensor as a single row.

use std::sync::Arc;

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Affine { x: Var, w: Var, b: Var },
    Relu(Var),
    Abs(Var),
    Neg(Var),
    Square(Var),
    Huber { x: Var, delta: f64 },
    SortDesc { x: Var, perm: Vec<usize> },
    LogSumExp(Var),
    AddRow { x: Var, row: Var },
    Add(Var, Var),
    Sub(Var, Var),
    ScaleBy { x: Var, s: Var },
    MulConst { x: Var, c: f64 },
    Pick { x: Var, idx: Vec<usize> },
    Mean(Var),
    Contract { x: Var, w: Arc<[f64]> },
    CenterColumns(Var),
    SortNet { x: Var, bias: Var, w: Arc<[f64]>, order: Vec<u32> },
    Bernoulli { x: Var, bias: Var, partials: Vec<f64> },
    Hinge { z: Var, pairs: Vec<Option<(usize, usize)>> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients of a scalar output with respect to every node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for `v`, or zeros of length `len` when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn check_finite(data: &[f64], op: &'static str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(op))
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Inserts a leaf (input, parameter or constant).
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn vector(&mut self, data: &[f64]) -> Result<Var> {
        Ok(self.leaf(Tensor::vector(data.to_vec())?))
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn emit(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, name: &'static str) -> Result<Var> {
        check_finite(&data, name)?;
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t, op))
    }

    fn rows(&self, v: Var) -> Result<(usize, usize)> {
        self.value(v).as_rows()
    }

    /// `x · wᵀ + b` for `x: [B, in]` (or `[in]`), `w: [out, in]`, `b: [out]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (batch, d_in) = self.rows(x)?;
        let ws = self.value(w).shape().to_vec();
        let [d_out, w_in] = ws[..] else {
            return Err(Error::shape(format!("affine weight must be rank 2, got {ws:?}")));
        };
        if w_in != d_in {
            return Err(Error::shape(format!("affine: input width {d_in}, weight expects {w_in}")));
        }
        if self.value(b).len() != d_out {
            return Err(Error::shape(format!(
                "affine: bias length {} for {d_out} outputs",
                self.value(b).len()
            )));
        }
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let bd = self.value(b).data();
        let mut out = Vec::with_capacity(batch * d_out);
        for r in 0..batch {
            let row = &xd[r * d_in..(r + 1) * d_in];
            for o in 0..d_out {
                let wr = &wd[o * d_in..(o + 1) * d_in];
                out.push(bd[o] + dot(wr, row));
            }
        }
        let shape = if self.value(x).rank() == 1 { vec![d_out] } else { vec![batch, d_out] };
        self.emit(shape, out, Op::Affine { x, w, b }, "affine")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v.max(0.0)).collect();
        self.emit(t.shape().to_vec(), data, Op::Relu(x), "relu")
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v.abs()).collect();
        self.emit(t.shape().to_vec(), data, Op::Abs(x), "abs")
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let data = t.data().iter().map(|v| -v).collect();
        self.emit(t.shape().to_vec(), data, Op::Neg(x), "neg")
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v * v).collect();
        self.emit(t.shape().to_vec(), data, Op::Square(x), "square")
    }

    /// Element-wise Huber penalty with transition point `delta`.
    pub fn huber(&mut self, x: Var, delta: f64) -> Result<Var> {
        let t = self.value(x);
        let data = t
            .data()
            .iter()
            .map(|&v| {
                if v.abs() <= delta {
                    0.5 * v * v
                } else {
                    delta * (v.abs() - 0.5 * delta)
                }
            })
            .collect();
        self.emit(t.shape().to_vec(), data, Op::Huber { x, delta }, "huber")
    }

    /// Row-wise descending sort. Ties keep input order.
    pub fn sort_desc(&mut self, x: Var) -> Result<Var> {
        let (batch, n) = self.rows(x)?;
        if n == 0 {
            return Err(Error::shape("sort_desc of an empty vector"));
        }
        let xd = self.value(x).data();
        let mut perm = Vec::with_capacity(batch * n);
        let mut out = Vec::with_capacity(batch * n);
        for r in 0..batch {
            let row = &xd[r * n..(r + 1) * n];
            let p = sort_desc_perm(row);
            out.extend(p.iter().map(|&i| row[i]));
            perm.extend(p);
        }
        let shape = self.value(x).shape().to_vec();
        self.emit(shape, out, Op::SortDesc { x, perm }, "sort_desc")
    }

    /// Row-wise max-shifted log-sum-exp, producing one value per row.
    pub fn log_sum_exp(&mut self, x: Var) -> Result<Var> {
        let (batch, n) = self.rows(x)?;
        if n == 0 {
            return Err(Error::shape("log_sum_exp of an empty vector"));
        }
        let xd = self.value(x).data();
        let out = (0..batch).map(|r| lse(&xd[r * n..(r + 1) * n])).collect();
        self.emit(vec![batch], out, Op::LogSumExp(x), "log_sum_exp")
    }

    /// Adds a row vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (batch, n) = self.rows(x)?;
        if self.value(row).len() != n {
            return Err(Error::shape(format!(
                "add_row: row length {} for width {n}",
                self.value(row).len()
            )));
        }
        let xd = self.value(x).data();
        let rd = self.value(row).data();
        let mut out = Vec::with_capacity(batch * n);
        for r in 0..batch {
            out.extend(xd[r * n..(r + 1) * n].iter().zip(rd).map(|(a, b)| a + b));
        }
        let shape = self.value(x).shape().to_vec();
        self.emit(shape, out, Op::AddRow { x, row }, "add_row")
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(format!(
                "{op}: shapes {:?} and {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let shape = self.value(a).shape().to_vec();
        self.emit(shape, data, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x - y);
        let shape = self.value(a).shape().to_vec();
        self.emit(shape, data, Op::Sub(a, b), "sub")
    }

    /// Multiplies every element of `x` by the single-element tensor `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::shape("scale_by expects a single-element scale"));
        }
        let k = self.value(s).data()[0];
        let t = self.value(x);
        let data = t.data().iter().map(|v| v * k).collect();
        self.emit(t.shape().to_vec(), data, Op::ScaleBy { x, s }, "scale_by")
    }

    pub fn mul_const(&mut self, x: Var, c: f64) -> Result<Var> {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v * c).collect();
        self.emit(t.shape().to_vec(), data, Op::MulConst { x, c }, "mul_const")
    }

    /// Gathers `x[r, idx[r]]` for each row.
    pub fn pick(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (batch, n) = self.rows(x)?;
        if idx.len() != batch {
            return Err(Error::shape(format!("pick: {} indices for {batch} rows", idx.len())));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::domain(format!("pick: index {bad} out of range for width {n}")));
        }
        let xd = self.value(x).data();
        let out = idx.iter().enumerate().map(|(r, &i)| xd[r * n + i]).collect();
        self.emit(vec![batch], out, Op::Pick { x, idx: idx.to_vec() }, "pick")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(Error::shape("mean of an empty tensor"));
        }
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        self.emit(vec![1], vec![m], Op::Mean(x), "mean")
    }

    /// Row-wise contraction with a constant weight vector.
    pub fn contract(&mut self, x: Var, w: Arc<[f64]>) -> Result<Var> {
        let (batch, n) = self.rows(x)?;
        if w.len() != n {
            return Err(Error::shape(format!("contract: {} weights for width {n}", w.len())));
        }
        let xd = self.value(x).data();
        let out = (0..batch).map(|r| dot(&w, &xd[r * n..(r + 1) * n])).collect();
        self.emit(vec![batch], out, Op::Contract { x, w }, "contract")
    }

    /// Subtracts each column's batch mean.
    pub fn center_columns(&mut self, x: Var) -> Result<Var> {
        let (batch, n) = self.rows(x)?;
        let xd = self.value(x).data();
        let means = column_means(xd, batch, n);
        let mut out = Vec::with_capacity(batch * n);
        for r in 0..batch {
            out.extend(xd[r * n..(r + 1) * n].iter().zip(&means).map(|(v, m)| v - m));
        }
        let shape = self.value(x).shape().to_vec();
        self.emit(shape, out, Op::CenterColumns(x), "center_columns")
    }

    /// Fused sort-network layer: unit `k` outputs `wᵀ sort_desc(|x + bias_k|)`.
    ///
    /// `x: [B, in]`, `bias: [out, in]`, `w` has length `in`.
    pub fn sortnet_layer(&mut self, x: Var, bias: Var, w: Arc<[f64]>) -> Result<Var> {
        let (batch, d_in) = self.rows(x)?;
        let (d_out, d_in_b) = self.value(bias).as_rows()?;
        if d_in_b != d_in || w.len() != d_in {
            return Err(Error::shape(format!(
                "sortnet layer: input width {d_in}, bias width {d_in_b}, {} weights",
                w.len()
            )));
        }
        let xd = self.value(x).data();
        let bd = self.value(bias).data();
        let mut out = Vec::with_capacity(batch * d_out);
        let k_eff = effective_len(&w);
        let mut order = Vec::with_capacity(batch * d_out * k_eff);
        let mut buf: Vec<(f64, u32)> = Vec::with_capacity(d_in);
        let mut keys = Vec::with_capacity(d_in);
        for r in 0..batch {
            let row = &xd[r * d_in..(r + 1) * d_in];
            for k in 0..d_out {
                let bk = &bd[k * d_in..(k + 1) * d_in];
                buf.clear();
                buf.extend(row.iter().zip(bk).enumerate().map(|(i, (a, b))| ((a + b).abs(), i as u32)));
                top_k_desc(&mut buf, &mut keys, k_eff);
                let mut acc = 0.0;
                for (wi, (v, i)) in w.iter().zip(&buf) {
                    acc += wi * v;
                    order.push(*i);
                }
                out.push(acc);
            }
        }
        let shape = if self.value(x).rank() == 1 { vec![d_out] } else { vec![batch, d_out] };
        self.emit(shape, out, Op::SortNet { x, bias, w, order }, "sortnet_layer")
    }

    /// Stochastic sort-network layer: unit `k` outputs
    /// `(Σ_i (s_i |x_i + bias_ki|)^p)^(1/p)` with `s_i ~ Bernoulli(1 - rho)`.
    pub fn bernoulli_layer<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        bias: Var,
        rho: f64,
        p: f64,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::domain(format!("rho must lie in [0, 1), got {rho}")));
        }
        if !(p >= 1.0) {
            return Err(Error::domain(format!("smoothing exponent must be >= 1, got {p}")));
        }
        let (batch, d_in) = self.rows(x)?;
        let (d_out, d_in_b) = self.value(bias).as_rows()?;
        if d_in_b != d_in {
            return Err(Error::shape(format!("bernoulli layer: input width {d_in}, bias width {d_in_b}")));
        }
        let xd = self.value(x).data();
        let bd = self.value(bias).data();
        let mut out = Vec::with_capacity(batch * d_out);
        let mut partials = vec![0.0; batch * d_out * d_in];
        let mut u = vec![0.0; d_in];
        let mut grads = vec![0.0; d_in];
        // P(next_u64 < cut) = 1 - rho up to 2^-64.
        let cut = ((1.0 - rho) * 2f64.powi(64)).min(u64::MAX as f64) as u64;
        for r in 0..batch {
            let row = &xd[r * d_in..(r + 1) * d_in];
            for k in 0..d_out {
                let bk = &bd[k * d_in..(k + 1) * d_in];
                for i in 0..d_in {
                    let kept = rng.next_u64() < cut;
                    u[i] = if kept { (row[i] + bk[i]).abs() } else { 0.0 };
                }
                let value = smooth_max_into(&u, p, &mut grads);
                out.push(value);
                let base = (r * d_out + k) * d_in;
                for i in 0..d_in {
                    if u[i] > 0.0 {
                        // d|a|/da = sign(a); masked entries carry u = 0 and stay 0.
                        partials[base + i] = grads[i] * (row[i] + bk[i]).signum();
                    }
                }
            }
        }
        let shape = if self.value(x).rank() == 1 { vec![d_out] } else { vec![batch, d_out] };
        self.emit(shape, out, Op::Bernoulli { x, bias, partials }, "bernoulli_layer")
    }

    /// Row-wise hinge robustness loss on scores `z` with target actions `y`.
    ///
    /// Zero when `z_y` is below the row maximum or its lead over the best
    /// other score exceeds `theta`; otherwise `max_{i != y} z_i - z_y`.
    pub fn margin_hinge(&mut self, z: Var, y: &[usize], theta: f64) -> Result<Var> {
        let (batch, n) = self.rows(z)?;
        if n < 2 {
            return Err(Error::domain("margin_hinge needs at least two actions"));
        }
        if y.len() != batch {
            return Err(Error::shape(format!("margin_hinge: {} targets for {batch} rows", y.len())));
        }
        let zd = self.value(z).data();
        let mut out = Vec::with_capacity(batch);
        let mut pairs = Vec::with_capacity(batch);
        for (r, &target) in y.iter().enumerate() {
            if target >= n {
                return Err(Error::domain(format!("target action {target} out of range for {n} actions")));
            }
            let row = &zd[r * n..(r + 1) * n];
            let (value, pair) = hinge_row(row, target, theta);
            out.push(value);
            pairs.push(pair);
        }
        self.emit(vec![batch], out, Op::Hinge { z, pairs }, "margin_hinge")
    }

    /// Reverse pass from a single-element output.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        if self.value(out).len() != 1 {
            return Err(Error::usage(format!(
                "backward needs a single-element output, got shape {:?}",
                self.value(out).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; out.0 + 1];
        grads[out.0] = Some(vec![1.0]);
        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let (batch, d_in) = self.value(*x).as_rows().expect("checked in forward");
                let d_out = self.value(*b).len();
                let xd = self.value(*x).data();
                let wd = self.value(*w).data();
                let mut dx = vec![0.0; batch * d_in];
                let mut dw = vec![0.0; d_out * d_in];
                let mut db = vec![0.0; d_out];
                for r in 0..batch {
                    let row = &xd[r * d_in..(r + 1) * d_in];
                    for o in 0..d_out {
                        let go = g[r * d_out + o];
                        if go == 0.0 {
                            continue;
                        }
                        db[o] += go;
                        let wr = &wd[o * d_in..(o + 1) * d_in];
                        axpy(&mut dx[r * d_in..(r + 1) * d_in], go, wr);
                        axpy(&mut dw[o * d_in..(o + 1) * d_in], go, row);
                    }
                }
                acc(grads, *x, &dx);
                acc(grads, *w, &dw);
                acc(grads, *b, &db);
            }
            Op::Relu(x) => {
                let d: Vec<f64> = self.value(*x).data().iter().zip(g).map(|(&v, &gi)| if v > 0.0 { gi } else { 0.0 }).collect();
                acc(grads, *x, &d);
            }
            Op::Abs(x) => {
                let d: Vec<f64> = self.value(*x).data().iter().zip(g).map(|(&v, &gi)| sign0(v) * gi).collect();
                acc(grads, *x, &d);
            }
            Op::Neg(x) => {
                let d: Vec<f64> = g.iter().map(|v| -v).collect();
                acc(grads, *x, &d);
            }
            Op::Square(x) => {
                let d: Vec<f64> = self.value(*x).data().iter().zip(g).map(|(v, gi)| 2.0 * v * gi).collect();
                acc(grads, *x, &d);
            }
            Op::Huber { x, delta } => {
                let d: Vec<f64> = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, gi)| v.clamp(-delta, *delta) * gi)
                    .collect();
                acc(grads, *x, &d);
            }
            Op::SortDesc { x, perm } => {
                let (batch, n) = self.value(*x).as_rows().expect("checked in forward");
                let mut d = vec![0.0; batch * n];
                for r in 0..batch {
                    for j in 0..n {
                        d[r * n + perm[r * n + j]] += g[r * n + j];
                    }
                }
                acc(grads, *x, &d);
            }
            Op::LogSumExp(x) => {
                let (batch, n) = self.value(*x).as_rows().expect("checked in forward");
                let xd = self.value(*x).data();
                let mut d = vec![0.0; batch * n];
                for r in 0..batch {
                    let sm = softmax(&xd[r * n..(r + 1) * n]);
                    for (j, s) in sm.into_iter().enumerate() {
                        d[r * n + j] = s * g[r];
                    }
                }
                acc(grads, *x, &d);
            }
            Op::AddRow { x, row } => {
                let n = self.value(*row).len();
                let mut dr = vec![0.0; n];
                for chunk in g.chunks(n) {
                    dr.iter_mut().zip(chunk).for_each(|(a, b)| *a += b);
                }
                acc(grads, *x, g);
                acc(grads, *row, &dr);
            }
            Op::Add(a, b) => {
                acc(grads, *a, g);
                acc(grads, *b, g);
            }
            Op::Sub(a, b) => {
                acc(grads, *a, g);
                let d: Vec<f64> = g.iter().map(|v| -v).collect();
                acc(grads, *b, &d);
            }
            Op::ScaleBy { x, s } => {
                let k = self.value(*s).data()[0];
                let xd = self.value(*x).data();
                let dx: Vec<f64> = g.iter().map(|v| v * k).collect();
                let ds = dot(g, xd);
                acc(grads, *x, &dx);
                acc(grads, *s, &[ds]);
            }
            Op::MulConst { x, c } => {
                let d: Vec<f64> = g.iter().map(|v| v * c).collect();
                acc(grads, *x, &d);
            }
            Op::Pick { x, idx: picks } => {
                let (batch, n) = self.value(*x).as_rows().expect("checked in forward");
                let mut d = vec![0.0; batch * n];
                for (r, &i) in picks.iter().enumerate() {
                    d[r * n + i] = g[r];
                }
                acc(grads, *x, &d);
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                let d = vec![g[0] / n as f64; n];
                acc(grads, *x, &d);
            }
            Op::Contract { x, w } => {
                let (batch, n) = self.value(*x).as_rows().expect("checked in forward");
                let mut d = vec![0.0; batch * n];
                for r in 0..batch {
                    axpy(&mut d[r * n..(r + 1) * n], g[r], w);
                }
                acc(grads, *x, &d);
            }
            Op::CenterColumns(x) => {
                let (batch, n) = self.value(*x).as_rows().expect("checked in forward");
                let gm = column_means(g, batch, n);
                let mut d = Vec::with_capacity(batch * n);
                for r in 0..batch {
                    d.extend(g[r * n..(r + 1) * n].iter().zip(&gm).map(|(a, m)| a - m));
                }
                acc(grads, *x, &d);
            }
            Op::SortNet { x, bias, w, order } => {
                let (batch, d_in) = self.value(*x).as_rows().expect("checked in forward");
                let (d_out, _) = self.value(*bias).as_rows().expect("checked in forward");
                let xd = self.value(*x).data();
                let bd = self.value(*bias).data();
                let mut dx = vec![0.0; batch * d_in];
                let mut db = vec![0.0; d_out * d_in];
                let k_eff = effective_len(w);
                for r in 0..batch {
                    for k in 0..d_out {
                        let go = g[r * d_out + k];
                        if go == 0.0 {
                            continue;
                        }
                        let ord = &order[(r * d_out + k) * k_eff..(r * d_out + k + 1) * k_eff];
                        for (wi, &i) in w.iter().zip(ord) {
                            let i = i as usize;
                            let s = sign0(xd[r * d_in + i] + bd[k * d_in + i]);
                            let v = go * wi * s;
                            dx[r * d_in + i] += v;
                            db[k * d_in + i] += v;
                        }
                    }
                }
                acc(grads, *x, &dx);
                acc(grads, *bias, &db);
            }
            Op::Bernoulli { x, bias, partials } => {
                let (batch, d_in) = self.value(*x).as_rows().expect("checked in forward");
                let (d_out, _) = self.value(*bias).as_rows().expect("checked in forward");
                let mut dx = vec![0.0; batch * d_in];
                let mut db = vec![0.0; d_out * d_in];
                for r in 0..batch {
                    for k in 0..d_out {
                        let go = g[r * d_out + k];
                        let base = (r * d_out + k) * d_in;
                        for i in 0..d_in {
                            let v = go * partials[base + i];
                            dx[r * d_in + i] += v;
                            db[k * d_in + i] += v;
                        }
                    }
                }
                acc(grads, *x, &dx);
                acc(grads, *bias, &db);
            }
            Op::Hinge { z, pairs } => {
                let (batch, n) = self.value(*z).as_rows().expect("checked in forward");
                let mut d = vec![0.0; batch * n];
                for (r, pair) in pairs.iter().enumerate() {
                    if let Some((runner_up, target)) = pair {
                        d[r * n + runner_up] += g[r];
                        d[r * n + target] -= g[r];
                    }
                }
                acc(grads, *z, &d);
            }
        }
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, d: &[f64]) {
    match &mut grads[v.0] {
        Some(slot) => slot.iter_mut().zip(d).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(d.to_vec()),
    }
}

/// Sign with `sign0(0) = 0`.
pub(crate) fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += a * xi);
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn column_means(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut m = vec![0.0; cols];
    for r in 0..rows {
        m.iter_mut().zip(&data[r * cols..(r + 1) * cols]).for_each(|(a, b)| *a += b);
    }
    m.iter_mut().for_each(|v| *v /= rows as f64);
    m
}

/// Number of leading weights that can affect a descending-order weighted sum.
///
/// For nonincreasing nonnegative `w`, every later term is below half an ulp
/// of the running sum, so accumulating only this prefix of the sorted values
/// gives the same f64 result as the full sum.
pub(crate) fn effective_len(w: &[f64]) -> usize {
    match w.first() {
        Some(&w0) if w0 > 0.0 => {
            let cut = w0 * 2f64.powi(-60);
            w.iter().position(|&v| v < cut).unwrap_or(w.len())
        }
        _ => w.len(),
    }
}

/// Keeps the `k` largest entries of `buf`, sorted by descending value and
/// then ascending index.
///
/// Entries must be nonnegative: their bit patterns then order like the
/// values, and each pair packs into one integer key.
pub(crate) fn top_k_desc(buf: &mut Vec<(f64, u32)>, keys: &mut Vec<u128>, k: usize) {
    keys.clear();
    keys.extend(buf.iter().map(|(v, i)| ((v.to_bits() as u128) << 32) | (!*i) as u128));
    if k < keys.len() {
        if k == 0 {
            keys.clear();
        } else {
            keys.select_nth_unstable_by(k - 1, |a, b| b.cmp(a));
            keys.truncate(k);
        }
    }
    keys.sort_unstable_by(|a, b| b.cmp(a));
    buf.clear();
    buf.extend(keys.iter().map(|key| (f64::from_bits((key >> 32) as u64), !(*key as u32))));
}

/// Permutation mapping output position to input index for a stable descending sort.
pub fn sort_desc_perm(x: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[b].total_cmp(&x[a]));
    idx
}

pub fn lse(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `(Σ u_i^p)^(1/p)` for `u >= 0`, computed relative to the maximum, with
/// its partial derivatives.
pub(crate) fn smooth_max(u: &[f64], p: f64) -> (f64, Vec<f64>) {
    let mut grads = vec![0.0; u.len()];
    let value = smooth_max_into(u, p, &mut grads);
    (value, grads)
}

/// `smooth_max` writing the gradient into `grads`. Powers are taken as
/// `exp(k ln r)` and skipped once they underflow to zero.
pub(crate) fn smooth_max_into(u: &[f64], p: f64, grads: &mut [f64]) -> f64 {
    let m = u.iter().copied().fold(0.0, f64::max);
    if m == 0.0 {
        grads.fill(0.0);
        return 0.0;
    }
    let inv_m = 1.0 / m;
    let mut s = 0.0;
    for (g, &v) in grads.iter_mut().zip(u) {
        *g = 0.0;
        if v > 0.0 {
            let r = v * inv_m;
            let a = (p - 1.0) * r.ln();
            if a > -745.0 {
                let t = a.exp();
                *g = t;
                s += t * r;
            }
        }
    }
    let scale = s.powf(1.0 / p - 1.0);
    for g in grads.iter_mut() {
        *g *= scale;
    }
    m * s * scale
}

/// Value of the hinge robustness loss for one row and, in the active
/// branch, the (runner-up, target) pair that carries the gradient.
pub(crate) fn hinge_row(z: &[f64], y: usize, theta: f64) -> (f64, Option<(usize, usize)>) {
    let top = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (runner_up, other) = z
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != y)
        .fold((usize::MAX, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
    if z[y] < top || z[y] - other > theta {
        (0.0, None)
    } else {
        (other - z[y], Some((runner_up, y)))
    }
}
