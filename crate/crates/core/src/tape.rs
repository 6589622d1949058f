//! Reverse-mode gradient tape over [`Tensor2`] values.
//!
//! The tape is a Wengert list: every operation appends a node holding its
//! output value and the handles of its inputs. [`GradTape::backward`] walks the
//! list in reverse and accumulates vector-Jacobian products. Only the handful
//! of operations the hint network and the tone mapper need are supported.
//!
//! ```
//! use graphtone::{GradTape, Tensor2};
//!
//! let mut tape = GradTape::new();
//! let w = tape.param(Tensor2::from_vec(1, 2, vec![1.5, -2.0]).unwrap());
//! let loss = tape.sum(w);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(w).values(), &[1.0, 1.0]);
//! ```

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{matmul_into, matmul_nt_into, matmul_tn_into, Tensor2};

/// Handle to a value recorded on a [`GradTape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRowBias(Var, Var),
    LeakyRelu(Var, f64),
    Pow(Var, f64),
    GatherRows(Var, Arc<[usize]>),
    ScaleRows(Var, Vec<f64>),
    ConcatCols(Var, Var),
    SliceRows(Var, usize),
    Sum(Var),
    L1(Var, Arc<Tensor2>, Reduction),
}

#[derive(Debug)]
struct Node {
    value: Tensor2,
    op: Op,
    requires_grad: bool,
}

/// Records differentiable operations for a single forward pass.
#[derive(Debug, Default)]
pub struct GradTape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`GradTape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor2>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`. Values the loss does not
    /// depend on get an all-zero gradient of matching shape.
    pub fn get(&self, var: Var) -> Tensor2 {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[var.0];
                Tensor2::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, var: Var) -> Tensor2 {
        match self.grads[var.0].take() {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[var.0];
                Tensor2::zeros(r, c)
            }
        }
    }
}

impl GradTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor2, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A trainable leaf; gradients are accumulated for it.
    pub fn param(&mut self, value: Tensor2) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A constant leaf; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor2) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(Error::dim("matmul", sa, sb));
        }
        let mut out = Tensor2::zeros(sa.0, sb.1);
        matmul_into(self.value(a), self.value(b), &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Adds a `1 × k` bias row to every row of an `n × k` matrix.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sb.0 != 1 || sb.1 != sx.1 {
            return Err(Error::dim("add_row_bias", sx, sb));
        }
        let mut out = self.value(x).clone();
        let b = self.value(bias).values().to_vec();
        for r in 0..sx.0 {
            for (o, bv) in out.row_mut(r).iter_mut().zip(&b) {
                *o += bv;
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(out, Op::AddRowBias(x, bias), rg))
    }

    pub fn leaky_relu(&mut self, x: Var, negative_slope: f64) -> Var {
        let out = self.value(x).map(|v| leaky_relu(v, negative_slope));
        let rg = self.rg(x);
        self.push(out, Op::LeakyRelu(x, negative_slope), rg)
    }

    /// Elementwise `x^p`, with negative inputs treated as zero. The
    /// derivative is taken as zero where `x <= 0`. NaN propagates.
    pub fn pow(&mut self, x: Var, p: f64) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 || v.is_nan() { v.powf(p) } else { 0.0 });
        let rg = self.rg(x);
        self.push(out, Op::Pow(x, p), rg)
    }

    /// Output row `i` is row `index[i]` of `x`.
    pub fn gather_rows(&mut self, x: Var, index: Arc<[usize]>) -> Result<Var> {
        let src = self.value(x);
        let (n, k) = src.shape();
        let mut out = Tensor2::zeros(index.len(), k);
        for (i, &j) in index.iter().enumerate() {
            if j >= n {
                return Err(Error::Internal(format!(
                    "gather index {j} out of range for {n} rows"
                )));
            }
            out.row_mut(i).copy_from_slice(src.row(j));
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::GatherRows(x, index), rg))
    }

    /// Multiplies row `i` by the constant `factors[i]`.
    pub fn scale_rows(&mut self, x: Var, factors: Vec<f64>) -> Result<Var> {
        let (n, _) = self.shape(x);
        if factors.len() != n {
            return Err(Error::dim("scale_rows", self.shape(x), (factors.len(), 1)));
        }
        let mut out = self.value(x).clone();
        for (r, f) in factors.iter().enumerate() {
            for v in out.row_mut(r) {
                *v *= f;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::ScaleRows(x, factors), rg))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.0 != sb.0 {
            return Err(Error::dim("concat_cols", sa, sb));
        }
        let mut out = Tensor2::zeros(sa.0, sa.1 + sb.1);
        for r in 0..sa.0 {
            let row = out.row_mut(r);
            row[..sa.1].copy_from_slice(self.nodes[a.0].value.row(r));
            row[sa.1..].copy_from_slice(self.nodes[b.0].value.row(r));
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::ConcatCols(a, b), rg))
    }

    /// Rows `start..end` of `x`.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (n, k) = self.shape(x);
        if start > end || end > n {
            return Err(Error::dim("slice_rows", (n, k), (start, end)));
        }
        let src = self.value(x);
        let out = Tensor2::from_vec(end - start, k, src.values()[start * k..end * k].to_vec())?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::SliceRows(x, start), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor2::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(out, Op::Sum(x), rg)
    }

    /// L1 distance to a constant target, summed or averaged over all entries.
    pub fn l1(&mut self, pred: Var, target: Arc<Tensor2>, reduction: Reduction) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(Error::dim("l1", p.shape(), target.shape()));
        }
        let total: f64 = p
            .values()
            .iter()
            .zip(target.values())
            .map(|(a, b)| (a - b).abs())
            .sum();
        let value = match reduction {
            Reduction::Sum => total,
            Reduction::Mean => total / p.len().max(1) as f64,
        };
        let rg = self.rg(pred);
        Ok(self.push(Tensor2::scalar(value), Op::L1(pred, target, reduction), rg))
    }

    /// Sign pattern of every piecewise-linear operation's input. Two points
    /// with equal patterns lie in the same linear piece of those operations,
    /// which is what finite-difference checks need to be meaningful.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut pattern = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::LeakyRelu(x, _) | Op::Pow(x, _) => {
                    pattern.extend(self.value(*x).values().iter().map(|&v| v > 0.0))
                }
                Op::L1(x, t, _) => pattern.extend(
                    self.value(*x)
                        .values()
                        .iter()
                        .zip(t.values())
                        .map(|(a, b)| a > b),
                ),
                _ => {}
            }
        }
        pattern
    }

    /// Back-propagates from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            let (r, c) = self.shape(loss);
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got a {r}x{c} value"
            )));
        }
        let shapes: Vec<_> = self.nodes.iter().map(|n| n.value.shape()).collect();
        let mut grads: Vec<Option<Tensor2>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor2::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        let ga = acc(&mut grads, &shapes, *a);
                        matmul_nt_into(&g, self.value(*b), ga);
                    }
                    if self.rg(*b) {
                        let gb = acc(&mut grads, &shapes, *b);
                        matmul_tn_into(self.value(*a), &g, gb);
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if self.rg(v) {
                            add_into(acc(&mut grads, &shapes, v), g.values());
                        }
                    }
                }
                Op::AddRowBias(x, bias) => {
                    if self.rg(*x) {
                        add_into(acc(&mut grads, &shapes, *x), g.values());
                    }
                    if self.rg(*bias) {
                        let gb = acc(&mut grads, &shapes, *bias);
                        for r in 0..g.rows() {
                            for (o, v) in gb.values_mut().iter_mut().zip(g.row(r)) {
                                *o += v;
                            }
                        }
                    }
                }
                Op::LeakyRelu(x, slope) => {
                    let xv = self.value(*x);
                    let gx = acc(&mut grads, &shapes, *x);
                    for ((o, &gv), &v) in gx.values_mut().iter_mut().zip(g.values()).zip(xv.values())
                    {
                        *o += if v > 0.0 { gv } else { gv * slope };
                    }
                }
                Op::Pow(x, p) => {
                    let xv = self.value(*x);
                    let gx = acc(&mut grads, &shapes, *x);
                    for ((o, &gv), &v) in gx.values_mut().iter_mut().zip(g.values()).zip(xv.values())
                    {
                        if v > 0.0 {
                            *o += gv * p * v.powf(p - 1.0);
                        }
                    }
                }
                Op::GatherRows(x, index) => {
                    let gx = acc(&mut grads, &shapes, *x);
                    for (r, &j) in index.iter().enumerate() {
                        for (o, v) in gx.row_mut(j).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
                Op::ScaleRows(x, factors) => {
                    let gx = acc(&mut grads, &shapes, *x);
                    for (r, f) in factors.iter().enumerate() {
                        for (o, v) in gx.row_mut(r).iter_mut().zip(g.row(r)) {
                            *o += v * f;
                        }
                    }
                }
                Op::ConcatCols(a, b) => {
                    let ka = shapes[a.0].1;
                    if self.rg(*a) {
                        let ga = acc(&mut grads, &shapes, *a);
                        for r in 0..g.rows() {
                            for (o, v) in ga.row_mut(r).iter_mut().zip(&g.row(r)[..ka]) {
                                *o += v;
                            }
                        }
                    }
                    if self.rg(*b) {
                        let gb = acc(&mut grads, &shapes, *b);
                        for r in 0..g.rows() {
                            for (o, v) in gb.row_mut(r).iter_mut().zip(&g.row(r)[ka..]) {
                                *o += v;
                            }
                        }
                    }
                }
                Op::SliceRows(x, start) => {
                    let k = shapes[x.0].1;
                    let gx = acc(&mut grads, &shapes, *x);
                    let dst = &mut gx.values_mut()[start * k..start * k + g.len()];
                    for (o, v) in dst.iter_mut().zip(g.values()) {
                        *o += v;
                    }
                }
                Op::Sum(x) => {
                    let s = g.values()[0];
                    for o in acc(&mut grads, &shapes, *x).values_mut() {
                        *o += s;
                    }
                }
                Op::L1(x, target, reduction) => {
                    let xv = self.value(*x);
                    let scale = match reduction {
                        Reduction::Sum => g.values()[0],
                        Reduction::Mean => g.values()[0] / xv.len().max(1) as f64,
                    };
                    let gx = acc(&mut grads, &shapes, *x);
                    for ((o, &p), &t) in gx.values_mut().iter_mut().zip(xv.values()).zip(target.values())
                    {
                        // Subgradient at equality is zero.
                        let d = p - t;
                        if d > 0.0 {
                            *o += scale;
                        } else if d < 0.0 {
                            *o -= scale;
                        }
                    }
                }
            }
        }

        // Only leaves keep their gradients.
        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }
}

#[inline]
pub fn leaky_relu(v: f64, negative_slope: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        v * negative_slope
    }
}

fn acc<'a>(
    grads: &'a mut [Option<Tensor2>],
    shapes: &[(usize, usize)],
    v: Var,
) -> &'a mut Tensor2 {
    grads[v.0].get_or_insert_with(|| {
        let (r, c) = shapes[v.0];
        Tensor2::zeros(r, c)
    })
}

fn add_into(dst: &mut Tensor2, src: &[f64]) {
    for (o, v) in dst.values_mut().iter_mut().zip(src) {
        *o += v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor2 {
        Tensor2::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap()
    }

    /// Central differences of a scalar function of one matrix.
    fn numeric_grad(x: &Tensor2, f: impl Fn(&Tensor2) -> f64) -> Tensor2 {
        let h = 1e-5;
        let mut g = Tensor2::zeros(x.rows(), x.cols());
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.values_mut()[i] += h;
            let mut xm = x.clone();
            xm.values_mut()[i] -= h;
            g.values_mut()[i] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn rel_err(a: &Tensor2, b: &Tensor2) -> f64 {
        a.values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-8))
            .fold(0.0, f64::max)
    }

    #[test]
    fn matmul_gradient_is_row_sum_of_b() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(4, 5, &mut rng);
        let b = random(5, 2, &mut rng);
        let mut tape = GradTape::new();
        let va = tape.param(a.clone());
        let vb = tape.constant(b.clone());
        let c = tape.matmul(va, vb).unwrap();
        let s = tape.sum(c);
        let ga = tape.backward(s).unwrap().get(va);

        for i in 0..4 {
            for p in 0..5 {
                let row_sum: f64 = b.row(p).iter().sum();
                assert!((ga.get(i, p) - row_sum).abs() < 1e-12);
            }
        }
        let fd = numeric_grad(&a, |a| a.matmul(&b).unwrap().sum());
        assert!(rel_err(&ga, &fd) < 1e-6);
    }

    #[test]
    fn leaky_relu_forward_and_gradient() {
        let mut tape = GradTape::new();
        let x = tape.param(Tensor2::from_vec(1, 3, vec![-1.0, 0.0, 2.0]).unwrap());
        let y = tape.leaky_relu(x, 0.01);
        assert_eq!(tape.value(y).values(), &[-0.01, 0.0, 2.0]);

        let mut tape = GradTape::new();
        let x = tape.param(Tensor2::scalar(-3.0));
        let y = tape.leaky_relu(x, 0.01);
        let g = tape.backward(y).unwrap().get(x).values()[0];
        let h = 1e-5;
        let fd = (leaky_relu(-3.0 + h, 0.01) - leaky_relu(-3.0 - h, 0.01)) / (2.0 * h);
        assert!((g - 0.01).abs() < 1e-15);
        assert!((g - fd).abs() < 1e-9);
    }

    #[test]
    fn leaky_relu_is_identity_on_positive_input() {
        let mut tape = GradTape::new();
        let v = Tensor2::from_vec(2, 2, vec![0.1, 2.0, 3.5, 1e-9]).unwrap();
        let x = tape.constant(v.clone());
        let y = tape.leaky_relu(x, 0.2);
        assert_eq!(tape.value(y), &v);
    }

    #[test]
    fn sum_gives_all_ones() {
        let mut tape = GradTape::new();
        let w = tape.param(Tensor2::filled(3, 4, 0.7));
        let s = tape.sum(w);
        assert_eq!(tape.backward(s).unwrap().get(w), Tensor2::filled(3, 4, 1.0));
    }

    #[test]
    fn l1_at_equality_has_zero_gradient() {
        let target = Arc::new(Tensor2::filled(2, 3, 0.25));
        let mut tape = GradTape::new();
        let p = tape.param(Tensor2::filled(2, 3, 0.25));
        let l = tape.l1(p, target, Reduction::Sum).unwrap();
        assert_eq!(tape.value(l).values(), &[0.0]);
        assert_eq!(tape.backward(l).unwrap().get(p), Tensor2::zeros(2, 3));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = GradTape::new();
        let w = tape.param(Tensor2::zeros(2, 2));
        assert!(matches!(tape.backward(w), Err(Error::Usage(_))));
    }

    #[test]
    fn unreachable_params_get_zero_gradient() {
        let mut tape = GradTape::new();
        let used = tape.param(Tensor2::filled(1, 2, 1.0));
        let unused = tape.param(Tensor2::filled(3, 1, 1.0));
        let s = tape.sum(used);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(unused), Tensor2::zeros(3, 1));
    }

    #[test]
    fn composite_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(3, 4, &mut rng).map(|v| v.abs() + 0.1);
        let w = random(4, 2, &mut rng);
        let bias = random(1, 2, &mut rng);
        let index: Arc<[usize]> = vec![2, 0, 0, 1, 2].into();
        let scales = vec![1.5, 0.0, 2.0];
        let target = Arc::new(random(5, 6, &mut rng));

        let run = |x: &Tensor2, w: &Tensor2, bias: &Tensor2| -> (GradTape, Var, Var, Var, Var) {
            let mut t = GradTape::new();
            let vx = t.param(x.clone());
            let vw = t.param(w.clone());
            let vb = t.param(bias.clone());
            let p = t.pow(vx, 1.0 / 2.2);
            let s = t.scale_rows(p, scales.clone()).unwrap();
            let m = t.matmul(s, vw).unwrap();
            let m = t.add_row_bias(m, vb).unwrap();
            let a = t.leaky_relu(m, 0.01);
            let c = t.concat_cols(a, s).unwrap();
            let top = t.slice_rows(c, 0, 2).unwrap();
            let top_sum = t.sum(top);
            let gathered = t.gather_rows(c, index.clone()).unwrap();
            let l1 = t.l1(gathered, target.clone(), Reduction::Mean).unwrap();
            let loss = t.add(l1, top_sum).unwrap();
            (t, vx, vw, vb, loss)
        };

        let (tape, vx, vw, vb, loss) = run(&x, &w, &bias);
        let g = tape.backward(loss).unwrap();
        let f = |x: &Tensor2, w: &Tensor2, b: &Tensor2| {
            let (t, _, _, _, l) = run(x, w, b);
            t.value(l).values()[0]
        };
        assert!(rel_err(&g.get(vx), &numeric_grad(&x, |x| f(x, &w, &bias))) < 1e-4);
        assert!(rel_err(&g.get(vw), &numeric_grad(&w, |w| f(&x, w, &bias))) < 1e-4);
        assert!(rel_err(&g.get(vb), &numeric_grad(&bias, |b| f(&x, &w, b))) < 1e-4);
    }
}
