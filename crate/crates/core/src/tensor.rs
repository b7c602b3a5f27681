//! Dense `f64` tensors and a reverse-mode tape.
//!
//! A [`Tape`] is built fresh for every forward pass. Leaves are either constants
//! or parameters; [`Tape::backward`] returns gradients for parameter leaves only.
//! Shapes are at most rank 2: `[n]` vectors and `[rows, cols]` matrices, with a
//! rank-0 `[]` scalar as the loss.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "tensor",
                format!(
                    "shape {shape:?} needs {expected} values, got {}",
                    data.len()
                ),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor construction"));
        }
        Ok(Self { shape, data })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::from_parts(shape.to_vec(), vec![0.0; shape.iter().product()])
    }

    pub fn scalar(v: f64) -> Result<Self> {
        Self::new(vec![], vec![v])
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            [r] => Ok((r, 1)),
            _ => Err(Error::shape(
                op,
                format!("expected a matrix, got {:?}", self.shape),
            )),
        }
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        Tensor::from_parts(
            self.shape.clone(),
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }
}

/// `a [m,k] · b [k,n]`, optionally transposing either operand.
fn matmul_raw(
    a: &[f64],
    b: &[f64],
    m: usize,
    k: usize,
    n: usize,
    trans_a: bool,
    trans_b: bool,
) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = if trans_a { a[p * m + i] } else { a[i * k + p] };
            if av == 0.0 {
                continue;
            }
            if trans_b {
                for (j, o) in row.iter_mut().enumerate() {
                    *o += av * b[j * k + p];
                }
            } else {
                for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                    *o += av * bv;
                }
            }
        }
    }
    out
}

fn aggregate_raw(x: &[f64], cols: usize, adjacency: &[Vec<usize>]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (i, nbrs) in adjacency.iter().enumerate() {
        let row = &mut out[i * cols..(i + 1) * cols];
        for &j in nbrs {
            for (o, &v) in row.iter_mut().zip(&x[j * cols..(j + 1) * cols]) {
                *o += v;
            }
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<'g> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `[n,d] + [d]`, bias broadcast over rows.
    AddRow(Var, Var),
    /// `scale * x + shift`.
    Affine(Var, f64),
    /// scalar tensor times any tensor.
    ScaleBy(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Sum(Var),
    /// row i = sum of rows j over adjacency[i]; adjacency must be symmetric.
    Aggregate(Var, &'g [Vec<usize>]),
}

#[derive(Debug)]
struct Node<'g> {
    op: Op<'g>,
    value: Tensor,
    param: bool,
    needs_grad: bool,
}

/// Record of primitive operations in topological (insertion) order.
#[derive(Debug, Default)]
pub struct Tape<'g> {
    nodes: Vec<Node<'g>>,
}

/// Gradients of a scalar with respect to the parameter leaves of a tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, zeros if nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

impl<'g> Tape<'g> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
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

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_leaf(t, false)
    }

    /// Registers a leaf that receives a gradient in [`Tape::backward`].
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push_leaf(t, true)
    }

    fn push_leaf(&mut self, value: Tensor, param: bool) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            param,
            needs_grad: param,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op<'g>, value: Tensor, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        let needs_grad = self.inputs(&op).iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            op,
            value,
            param: false,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn inputs(&self, op: &Op<'g>) -> Vec<Var> {
        match *op {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::ScaleBy(a, b) => vec![a, b],
            Op::Affine(a, ..) | Op::Relu(a) | Op::Sigmoid(a) | Op::Sum(a) | Op::Aggregate(a, _) => {
                vec![a]
            }
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2("matmul")?;
        let (k2, n) = self.value(b).dims2("matmul")?;
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let out = matmul_raw(
            self.value(a).data(),
            self.value(b).data(),
            m,
            k,
            n,
            false,
            false,
        );
        self.push(
            Op::MatMul(a, b),
            Tensor::from_parts(vec![m, n], out),
            "matmul",
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).zip(self.value(b), |x, y| x + y);
        self.push(Op::Add(a, b), out, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).zip(self.value(b), |x, y| x - y);
        self.push(Op::Sub(a, b), out, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).zip(self.value(b), |x, y| x * y);
        self.push(Op::Mul(a, b), out, "mul")
    }

    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, cols) = self.value(x).dims2("add_row")?;
        if self.value(bias).len() != cols {
            return Err(Error::shape(
                "add_row",
                format!(
                    "{:?} + {:?}",
                    self.value(x).shape(),
                    self.value(bias).shape()
                ),
            ));
        }
        let b = self.value(bias).data();
        let xv = self.value(x);
        let data = xv
            .data()
            .chunks(cols)
            .flat_map(|row| row.iter().zip(b).map(|(&v, &bb)| v + bb))
            .collect();
        let out = Tensor::from_parts(xv.shape().to_vec(), data);
        self.push(Op::AddRow(x, bias), out, "add_row")
    }

    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        let out = self.value(x).map(|v| scale * v + shift);
        self.push(Op::Affine(x, scale), out, "affine")
    }

    pub fn scale_by(&mut self, s: Var, x: Var) -> Result<Var> {
        let Some(sv) = self.value(s).item() else {
            return Err(Error::shape(
                "scale_by",
                format!(
                    "scale must have one element, got {:?}",
                    self.value(s).shape()
                ),
            ));
        };
        let out = self.value(x).map(|v| sv * v);
        self.push(Op::ScaleBy(s, x), out, "scale_by")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(Op::Relu(x), out, "relu")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(sigmoid);
        self.push(Op::Sigmoid(x), out, "sigmoid")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push(Op::Sum(x), Tensor::from_parts(vec![], vec![s]), "sum")
    }

    /// Row `i` of the output is the sum of rows `j` in `adjacency[i]`.
    /// `adjacency` must be symmetric, as [`crate::graph::Graph::adjacency`] is.
    pub fn neighbor_aggregate(&mut self, x: Var, adjacency: &'g [Vec<usize>]) -> Result<Var> {
        let (rows, cols) = self.value(x).dims2("neighbor_aggregate")?;
        if rows != adjacency.len() {
            return Err(Error::shape(
                "neighbor_aggregate",
                format!("{rows} rows for {} nodes", adjacency.len()),
            ));
        }
        let out = aggregate_raw(self.value(x).data(), cols, adjacency);
        let out = Tensor::from_parts(self.value(x).shape().to_vec(), out);
        self.push(Op::Aggregate(x, adjacency), out, "neighbor_aggregate")
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::from_parts(lv.shape().to_vec(), vec![1.0]));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            for (input, contrib) in self.local_grads(node, &g) {
                if !self.nodes[input.0].needs_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => {
                        for (a, c) in acc.data.iter_mut().zip(&contrib.data) {
                            *a += c;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            }
            // keep non-leaf gradients dropped; only parameters are returned
        }
        for (idx, slot) in grads.iter_mut().enumerate() {
            if !self.nodes[idx].param {
                *slot = None;
            } else if let Some(g) = slot {
                if !g.is_finite() {
                    return Err(Error::NonFinite("backward"));
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn local_grads(&self, node: &Node<'g>, g: &Tensor) -> Vec<(Var, Tensor)> {
        let val = |v: Var| self.value(v);
        let needs = |v: Var| self.nodes[v.0].needs_grad;
        match node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let (m, k) = val(a).dims2("matmul").expect("checked in forward");
                let (_, n) = val(b).dims2("matmul").expect("checked in forward");
                let mut out = Vec::with_capacity(2);
                if needs(a) {
                    let da = matmul_raw(g.data(), val(b).data(), m, n, k, false, true);
                    out.push((a, Tensor::from_parts(val(a).shape().to_vec(), da)));
                }
                if needs(b) {
                    let db = matmul_raw(val(a).data(), g.data(), k, m, n, true, false);
                    out.push((b, Tensor::from_parts(val(b).shape().to_vec(), db)));
                }
                out
            }
            Op::Add(a, b) => vec![(a, g.clone()), (b, g.clone())],
            Op::Sub(a, b) => vec![(a, g.clone()), (b, g.map(|v| -v))],
            Op::Mul(a, b) => vec![
                (a, g.zip(val(b), |x, y| x * y)),
                (b, g.zip(val(a), |x, y| x * y)),
            ],
            Op::AddRow(x, bias) => {
                let cols = val(bias).len();
                let mut db = vec![0.0; cols];
                for row in g.data().chunks(cols) {
                    for (d, &v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                vec![
                    (x, g.clone()),
                    (bias, Tensor::from_parts(val(bias).shape().to_vec(), db)),
                ]
            }
            Op::Affine(x, scale) => vec![(x, g.map(|v| scale * v))],
            Op::ScaleBy(s, x) => {
                let sv = val(s).data()[0];
                let ds: f64 = g.data().iter().zip(val(x).data()).map(|(a, b)| a * b).sum();
                vec![
                    (s, Tensor::from_parts(val(s).shape().to_vec(), vec![ds])),
                    (x, g.map(|v| sv * v)),
                ]
            }
            Op::Relu(x) => vec![(x, g.zip(val(x), |gv, xv| if xv > 0.0 { gv } else { 0.0 }))],
            Op::Sigmoid(x) => vec![(x, g.zip(&node.value, |gv, s| gv * s * (1.0 - s)))],
            Op::Sum(x) => {
                let gv = g.data()[0];
                vec![(x, val(x).map(|_| gv))]
            }
            Op::Aggregate(x, adjacency) => {
                let (_, cols) = val(x)
                    .dims2("neighbor_aggregate")
                    .expect("checked in forward");
                let d = aggregate_raw(g.data(), cols, adjacency);
                vec![(x, Tensor::from_parts(val(x).shape().to_vec(), d))]
            }
        }
    }
}
