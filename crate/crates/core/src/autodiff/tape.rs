use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::conv::{self, ConvShape};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Linear { x: Var, w: Var, b: Var },
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    AddBias { x: Var, b: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    LeakyRelu(Var, T),
    Sigmoid(Var),
    Sqrt(Var),
    Square(Var),
    Concat(Var, Var),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    Conv { x: Var, w: Var, b: Var, geom: ConvShape },
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Wengert list of tensor operations.
///
/// Nodes are appended in evaluation order, so every node's inputs precede it
/// and the backward pass is a single reverse sweep.
#[derive(Clone, Debug, Default)]
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar loss with respect to every node that required one.
#[derive(Debug)]
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, or zeros of `v`'s shape when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A trainable leaf; `backward` reports its gradient.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// `x·w + bias` with `x: b×i`, `w: i×o`, `bias: o`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (rows, inner) = self.value(x).dims2()?;
        let (inner_w, out) = self.value(w).dims2()?;
        if inner != inner_w {
            return Err(Error::shape(format!(
                "linear: input width {inner} does not match weight rows {inner_w}"
            )));
        }
        if self.value(b).len() != out {
            return Err(Error::shape(format!(
                "linear: bias length {} does not match output width {out}",
                self.value(b).len()
            )));
        }
        let mut y = Tensor::zeros(&[rows, out]);
        {
            let bias = self.value(b).data();
            for r in 0..rows {
                y.data_mut()[r * out..(r + 1) * out].copy_from_slice(bias);
            }
        }
        T::gemm(
            rows,
            inner,
            out,
            self.value(x).data(),
            false,
            self.value(w).data(),
            false,
            y.data_mut(),
            true,
        );
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(y, Op::Linear { x, w, b }, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a)·op(b)`, where `op` transposes when the matching flag is set.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (ar, ac) = self.value(a).dims2()?;
        let (br, bc) = self.value(b).dims2()?;
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul: inner dimensions {k} and {k2} differ"
            )));
        }
        let mut y = Tensor::zeros(&[m, n]);
        T::gemm(
            m,
            k,
            n,
            self.value(a).data(),
            ta,
            self.value(b).data(),
            tb,
            y.data_mut(),
            false,
        );
        let rg = self.rg(&[a, b]);
        Ok(self.push(y, Op::MatMul { a, b, ta, tb }, rg))
    }

    /// Adds a length-`c` bias to every row of a `r×c` matrix.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (rows, cols) = self.value(x).dims2()?;
        if self.value(b).len() != cols {
            return Err(Error::shape("add_bias: bias length must equal column count"));
        }
        let mut y = self.value(x).clone();
        let bias = self.value(b).data().to_vec();
        for r in 0..rows {
            for (v, &bb) in y.data_mut()[r * cols..(r + 1) * cols].iter_mut().zip(&bias) {
                *v += bb;
            }
        }
        let rg = self.rg(&[x, b]);
        Ok(self.push(y, Op::AddBias { x, b }, rg))
    }

    fn zip_with(&mut self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        same_shape(self.value(a), self.value(b), what)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(self.value(a).shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.zip_with(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(y, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.zip_with(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(y, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.zip_with(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(y, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = T::of_f64(c);
        let y = self.value(x).map(|v| v * c);
        let rg = self.rg(&[x]);
        self.push(y, Op::Scale(x, c), rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let c = T::of_f64(c);
        let y = self.value(x).map(|v| v + c);
        let rg = self.rg(&[x]);
        self.push(y, Op::AddScalar(x), rg)
    }

    /// Elementwise `max(x, alpha·x)`.
    pub fn leaky_relu(&mut self, x: Var, alpha: f64) -> Var {
        let a = T::of_f64(alpha);
        let y = self.value(x).map(|v| if v > T::zero() { v } else { v * a });
        let rg = self.rg(&[x]);
        self.push(y, Op::LeakyRelu(x, a), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).map(sigmoid);
        let rg = self.rg(&[x]);
        self.push(y, Op::Sigmoid(x), rg)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.sqrt());
        let rg = self.rg(&[x]);
        self.push(y, Op::Sqrt(x), rg)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v * v);
        let rg = self.rg(&[x]);
        self.push(y, Op::Square(x), rg)
    }

    /// Column-wise concatenation of `b×m` and `b×n` matrices.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.value(a).dims2()?;
        let (rb, cb) = self.value(b).dims2()?;
        if ra != rb {
            return Err(Error::shape(format!(
                "concat: leading dimensions {ra} and {rb} differ"
            )));
        }
        let width = ca + cb;
        let mut data = Vec::with_capacity(ra * width);
        for r in 0..ra {
            data.extend_from_slice(self.value(a).row(r));
            if cb > 0 {
                data.extend_from_slice(self.value(b).row(r));
            }
        }
        let y = Tensor::new(vec![ra, width], data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(y, Op::Concat(a, b), rg))
    }

    /// Selects rows of a matrix by index (rows may repeat).
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (rows, cols) = self.value(x).dims2()?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::shape(format!(
                "gather_rows: index {bad} out of range for {rows} rows"
            )));
        }
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            data.extend_from_slice(self.value(x).row(i));
        }
        let y = Tensor::new(vec![idx.len(), cols], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(y, Op::GatherRows(x, idx.to_vec()), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(y, Op::Reshape(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(y, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = T::of_f64(self.value(x).len() as f64);
        let y = Tensor::scalar(self.value(x).sum() / n);
        let rg = self.rg(&[x]);
        self.push(y, Op::Mean(x), rg)
    }

    /// Row sums of a matrix, as an `r×1` column.
    pub fn sum_cols(&mut self, x: Var) -> Result<Var> {
        let (rows, _) = self.value(x).dims2()?;
        let data = (0..rows)
            .map(|r| self.value(x).row(r).iter().copied().sum())
            .collect();
        let y = Tensor::new(vec![rows, 1], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(y, Op::SumCols(x), rg))
    }

    /// Valid cross-correlation with zero padding.
    ///
    /// `x` is `[N, C, H, W]` with kernel `[O, C, KH, KW]` (2D), or
    /// `[N, C, D, H, W]` with kernel `[O, C, KD, KH, KW]` (3D); `bias` has `O`
    /// entries.
    pub fn conv(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let geom = ConvShape::infer(
            self.value(x).shape(),
            self.value(w).shape(),
            stride,
            padding,
        )?;
        if self.value(b).len() != geom.out_channels {
            return Err(Error::shape("conv: bias length must equal output channels"));
        }
        let y = conv::forward(&geom, self.value(x), self.value(w), self.value(b));
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(y, Op::Conv { x, w, b, geom }, rg))
    }

    /// Sign pattern of every leaky-ReLU input on the tape. Two evaluations with
    /// equal patterns lie on the same linear piece of the network.
    pub fn activation_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::LeakyRelu(x, _) => Some(x),
                _ => None,
            })
            .flat_map(|x| self.value(x).data().iter().map(|&v| v > T::zero()))
            .collect()
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads)?;
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(
        &self,
        node: &Node<T>,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let zero = T::zero();
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (rows, inner) = self.value(*x).dims2()?;
                let out = self.value(*w).shape()[1];
                if self.wants(*x) {
                    let dx = slot(grads, *x, self.value(*x).shape());
                    T::gemm(rows, out, inner, g.data(), false, self.value(*w).data(), true, dx.data_mut(), true);
                }
                if self.wants(*w) {
                    let dw = slot(grads, *w, self.value(*w).shape());
                    T::gemm(inner, rows, out, self.value(*x).data(), true, g.data(), false, dw.data_mut(), true);
                }
                if self.wants(*b) {
                    let db = slot(grads, *b, self.value(*b).shape());
                    column_sums_into(g, rows, out, db.data_mut());
                }
            }
            Op::MatMul { a, b, ta, tb } => {
                let (ta, tb) = (*ta, *tb);
                let (m, n) = g.dims2()?;
                let (ar, ac) = self.value(*a).dims2()?;
                let k = if ta { ar } else { ac };
                if self.wants(*a) {
                    let da = slot(grads, *a, self.value(*a).shape());
                    if ta {
                        T::gemm(k, n, m, self.value(*b).data(), tb, g.data(), true, da.data_mut(), true);
                    } else {
                        T::gemm(m, n, k, g.data(), false, self.value(*b).data(), !tb, da.data_mut(), true);
                    }
                }
                if self.wants(*b) {
                    let db = slot(grads, *b, self.value(*b).shape());
                    if tb {
                        T::gemm(n, m, k, g.data(), true, self.value(*a).data(), ta, db.data_mut(), true);
                    } else {
                        T::gemm(k, m, n, self.value(*a).data(), !ta, g.data(), false, db.data_mut(), true);
                    }
                }
            }
            Op::AddBias { x, b } => {
                if self.wants(*x) {
                    add_into(slot(grads, *x, g.shape()), g.data());
                }
                if self.wants(*b) {
                    let (rows, cols) = g.dims2()?;
                    let db = slot(grads, *b, self.value(*b).shape());
                    column_sums_into(g, rows, cols, db.data_mut());
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    add_into(slot(grads, *a, g.shape()), g.data());
                }
                if self.wants(*b) {
                    add_into(slot(grads, *b, g.shape()), g.data());
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    add_into(slot(grads, *a, g.shape()), g.data());
                }
                if self.wants(*b) {
                    let db = slot(grads, *b, g.shape());
                    for (d, &gv) in db.data_mut().iter_mut().zip(g.data()) {
                        *d -= gv;
                    }
                }
            }
            Op::Mul(a, b) => {
                for (this, other) in [(*a, *b), (*b, *a)] {
                    if self.wants(this) {
                        let ov = self.value(other).data();
                        let d = slot(grads, this, g.shape());
                        for ((d, &gv), &o) in d.data_mut().iter_mut().zip(g.data()).zip(ov) {
                            *d += gv * o;
                        }
                    }
                }
            }
            Op::Scale(x, c) => {
                if self.wants(*x) {
                    let d = slot(grads, *x, g.shape());
                    for (d, &gv) in d.data_mut().iter_mut().zip(g.data()) {
                        *d += gv * *c;
                    }
                }
            }
            Op::AddScalar(x) => {
                if self.wants(*x) {
                    add_into(slot(grads, *x, g.shape()), g.data());
                }
            }
            Op::LeakyRelu(x, alpha) => {
                if self.wants(*x) {
                    let xv = self.value(*x).data();
                    let d = slot(grads, *x, g.shape());
                    for ((d, &gv), &v) in d.data_mut().iter_mut().zip(g.data()).zip(xv) {
                        *d += if v > zero { gv } else { gv * *alpha };
                    }
                }
            }
            Op::Sigmoid(x) => {
                if self.wants(*x) {
                    let yv = node.value.data();
                    let d = slot(grads, *x, g.shape());
                    for ((d, &gv), &y) in d.data_mut().iter_mut().zip(g.data()).zip(yv) {
                        // saturated units would feed subnormals into every GEMM below
                        let v = gv * y * (T::one() - y);
                        if v.is_normal() {
                            *d += v;
                        }
                    }
                }
            }
            Op::Sqrt(x) => {
                if self.wants(*x) {
                    let yv = node.value.data();
                    let two = T::of_f64(2.0);
                    let d = slot(grads, *x, g.shape());
                    for ((d, &gv), &y) in d.data_mut().iter_mut().zip(g.data()).zip(yv) {
                        // The derivative blows up at 0; treat it as a subgradient of 0.
                        if y > zero {
                            *d += gv / (two * y);
                        }
                    }
                }
            }
            Op::Square(x) => {
                if self.wants(*x) {
                    let xv = self.value(*x).data();
                    let two = T::of_f64(2.0);
                    let d = slot(grads, *x, g.shape());
                    for ((d, &gv), &v) in d.data_mut().iter_mut().zip(g.data()).zip(xv) {
                        *d += gv * two * v;
                    }
                }
            }
            Op::Concat(a, b) => {
                let (rows, width) = g.dims2()?;
                let ca = self.value(*a).shape()[1];
                if self.wants(*a) {
                    let da = slot(grads, *a, self.value(*a).shape());
                    for r in 0..rows {
                        let src = &g.data()[r * width..r * width + ca];
                        add_slice(&mut da.data_mut()[r * ca..(r + 1) * ca], src);
                    }
                }
                if self.wants(*b) {
                    let cb = width - ca;
                    let db = slot(grads, *b, self.value(*b).shape());
                    for r in 0..rows {
                        let src = &g.data()[r * width + ca..(r + 1) * width];
                        add_slice(&mut db.data_mut()[r * cb..(r + 1) * cb], src);
                    }
                }
            }
            Op::GatherRows(x, idx) => {
                if self.wants(*x) {
                    let cols = g.dims2()?.1;
                    let dx = slot(grads, *x, self.value(*x).shape());
                    for (r, &src) in idx.iter().enumerate() {
                        add_slice(
                            &mut dx.data_mut()[src * cols..(src + 1) * cols],
                            &g.data()[r * cols..(r + 1) * cols],
                        );
                    }
                }
            }
            Op::Reshape(x) => {
                if self.wants(*x) {
                    add_into(slot(grads, *x, self.value(*x).shape()), g.data());
                }
            }
            Op::Sum(x) | Op::Mean(x) => {
                if self.wants(*x) {
                    let mut gv = g.data()[0];
                    if matches!(node.op, Op::Mean(_)) {
                        gv = gv / T::of_f64(self.value(*x).len() as f64);
                    }
                    let d = slot(grads, *x, self.value(*x).shape());
                    d.data_mut().iter_mut().for_each(|v| *v += gv);
                }
            }
            Op::SumCols(x) => {
                if self.wants(*x) {
                    let (rows, cols) = self.value(*x).dims2()?;
                    let d = slot(grads, *x, self.value(*x).shape());
                    for r in 0..rows {
                        let gv = g.data()[r];
                        d.data_mut()[r * cols..(r + 1) * cols]
                            .iter_mut()
                            .for_each(|v| *v += gv);
                    }
                }
            }
            Op::Conv { x, w, b, geom } => {
                let mut dw = self.wants(*w).then(|| Tensor::<T>::zeros(self.value(*w).shape()));
                let mut db = self.wants(*b).then(|| Tensor::<T>::zeros(self.value(*b).shape()));
                let dx = if self.wants(*x) {
                    Some(slot(grads, *x, self.value(*x).shape()).data_mut())
                } else {
                    None
                };
                conv::backward(
                    geom,
                    self.value(*x),
                    self.value(*w),
                    g,
                    dx,
                    dw.as_mut().map(|t| t.data_mut()),
                    db.as_mut().map(|t| t.data_mut()),
                );
                if let Some(dw) = dw {
                    add_into(slot(grads, *w, self.value(*w).shape()), dw.data());
                }
                if let Some(db) = db {
                    add_into(slot(grads, *b, self.value(*b).shape()), db.data());
                }
            }
        }
        Ok(())
    }
}

/// Numerically stable logistic function.
pub fn sigmoid<T: Scalar>(v: T) -> T {
    let one = T::one();
    if v >= T::zero() {
        one / (one + (-v).exp())
    } else {
        let e = v.exp();
        e / (one + e)
    }
}

fn slot<'a, T: Scalar>(grads: &'a mut [Option<Tensor<T>>], v: Var, shape: &[usize]) -> &'a mut Tensor<T> {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(shape))
}

fn add_slice<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn add_into<T: Scalar>(dst: &mut Tensor<T>, src: &[T]) {
    add_slice(dst.data_mut(), src);
}

fn column_sums_into<T: Scalar>(g: &Tensor<T>, rows: usize, cols: usize, dst: &mut [T]) {
    for r in 0..rows {
        add_slice(dst, &g.data()[r * cols..(r + 1) * cols]);
    }
}
