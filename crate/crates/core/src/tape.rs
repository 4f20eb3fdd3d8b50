//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles. Calling
//! [`Tape::backward`] walks the record in reverse and accumulates gradients
//! for every node that (transitively) depends on a variable created with
//! [`Tape::var`]. Everything is two-dimensional: vectors are `1×n` rows and
//! scalars are `1×1`.
//!
//! The tape is single-threaded. Independent work items (one sample of a
//! batch, say) should each get their own tape.

use std::cell::RefCell;
use std::rc::Rc;

use ndarray::{concatenate, s, Array2, Axis, Zip};

pub type Mat = Array2<f64>;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    AddCol(usize, usize),
    MulCol(usize, usize),
    ScaleBy(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    Square(usize),
    Sqrt(usize),
    Abs(usize),
    Exp(usize),
    Ln(usize),
    Silu(usize),
    Tanh(usize),
    Transpose(usize),
    SliceCols(usize, usize),
    SliceRows(usize, usize),
    GatherRows(usize, Rc<Vec<usize>>),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    LayerNorm(usize, Rc<Mat>),
    Softmax(usize),
    LogSoftmax(usize),
    Sum(usize),
    SumRows(usize),
    SumCols(usize),
}

struct Node {
    value: Rc<Mat>,
    op: Op,
    needs_grad: bool,
}

/// Operation record. See the module docs.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let v = self.value();
        write!(f, "Var#{}({}x{})", self.id, v.nrows(), v.ncols())
    }
}

/// Gradients produced by [`Tape::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    /// Gradient of the backward root with respect to `var`, if `var` needed one.
    pub fn get(&self, var: Var<'_>) -> Option<&Mat> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Like [`Gradients::get`] but returns zeros when no gradient reached `var`.
    pub fn get_or_zeros(&self, var: Var<'_>) -> Mat {
        match self.get(var) {
            Some(g) => g.clone(),
            None => {
                let v = var.value();
                Mat::zeros(v.raw_dim())
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Mat, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        let op = if needs_grad { op } else { Op::Leaf };
        nodes.push(Node {
            value: Rc::new(value),
            op,
            needs_grad,
        });
        Var { tape: self, id }
    }

    /// A leaf that receives gradients.
    pub fn var(&self, value: Mat) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&self, value: Mat) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Mat::from_elem((1, 1), value))
    }

    fn value_of(&self, id: usize) -> Rc<Mat> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    /// Backpropagates from a `1×1` root.
    pub fn backward(&self, root: Var<'_>) -> Gradients {
        let v = root.value();
        assert_eq!(v.dim(), (1, 1), "backward root must be a scalar");
        self.backward_with(root, Mat::from_elem((1, 1), 1.0))
    }

    /// Backpropagates an arbitrary upstream gradient `seed` from `root`.
    pub fn backward_with(&self, root: Var<'_>, seed: Mat) -> Gradients {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Mat>> = vec![None; nodes.len()];
        assert_eq!(seed.dim(), nodes[root.id].value.dim(), "seed shape");
        grads[root.id] = Some(seed);

        for id in (0..=root.id).rev() {
            if !nodes[id].needs_grad {
                continue;
            }
            if matches!(nodes[id].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let out = &nodes[id].value;
            let val = |i: usize| -> &Mat { &nodes[i].value };
            let mut acc = |i: usize, delta: Mat| {
                if !nodes[i].needs_grad {
                    return;
                }
                match &mut grads[i] {
                    Some(existing) => *existing += &delta,
                    slot @ None => *slot = Some(delta),
                }
            };
            match &nodes[id].op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    if nodes[*a].needs_grad {
                        acc(*a, g.dot(&val(*b).t()));
                    }
                    if nodes[*b].needs_grad {
                        acc(*b, val(*a).t().dot(&g));
                    }
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, -g);
                }
                Op::Mul(a, b) => {
                    if nodes[*a].needs_grad {
                        acc(*a, &g * val(*b));
                    }
                    if nodes[*b].needs_grad {
                        acc(*b, &g * val(*a));
                    }
                }
                Op::Div(a, b) => {
                    let bv = val(*b);
                    if nodes[*a].needs_grad {
                        acc(*a, &g / bv);
                    }
                    if nodes[*b].needs_grad {
                        // d(a/b)/db = -(a/b)/b
                        acc(*b, -(&g * out.as_ref()) / bv);
                    }
                }
                Op::AddRow(a, r) => {
                    if nodes[*r].needs_grad {
                        acc(*r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    acc(*a, g);
                }
                Op::MulRow(a, r) => {
                    let rv = val(*r);
                    if nodes[*r].needs_grad {
                        acc(*r, (&g * val(*a)).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if nodes[*a].needs_grad {
                        acc(*a, &g * rv);
                    }
                }
                Op::AddCol(a, c) => {
                    if nodes[*c].needs_grad {
                        acc(*c, g.sum_axis(Axis(1)).insert_axis(Axis(1)));
                    }
                    acc(*a, g);
                }
                Op::MulCol(a, c) => {
                    let cv = val(*c);
                    if nodes[*c].needs_grad {
                        acc(*c, (&g * val(*a)).sum_axis(Axis(1)).insert_axis(Axis(1)));
                    }
                    if nodes[*a].needs_grad {
                        acc(*a, &g * cv);
                    }
                }
                Op::ScaleBy(a, sc) => {
                    let k = val(*sc)[[0, 0]];
                    if nodes[*sc].needs_grad {
                        let d = (&g * val(*a)).sum();
                        acc(*sc, Mat::from_elem((1, 1), d));
                    }
                    if nodes[*a].needs_grad {
                        acc(*a, g * k);
                    }
                }
                Op::Scale(a, k) => acc(*a, g * *k),
                Op::Offset(a) => acc(*a, g),
                Op::Square(a) => acc(*a, &g * val(*a) * 2.0),
                Op::Sqrt(a) => {
                    let mut d = g;
                    Zip::from(&mut d).and(out.as_ref()).for_each(|d, &y| {
                        *d = if y > 0.0 { *d * 0.5 / y } else { 0.0 };
                    });
                    acc(*a, d);
                }
                Op::Abs(a) => {
                    let mut d = g;
                    Zip::from(&mut d).and(val(*a)).for_each(|d, &x| {
                        *d *= if x > 0.0 {
                            1.0
                        } else if x < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                    });
                    acc(*a, d);
                }
                Op::Exp(a) => acc(*a, &g * out.as_ref()),
                Op::Ln(a) => acc(*a, &g / val(*a)),
                Op::Silu(a) => {
                    let mut d = g;
                    Zip::from(&mut d).and(val(*a)).for_each(|d, &x| {
                        let sg = sigmoid(x);
                        *d *= sg * (1.0 + x * (1.0 - sg));
                    });
                    acc(*a, d);
                }
                Op::Tanh(a) => {
                    let mut d = g;
                    Zip::from(&mut d).and(out.as_ref()).for_each(|d, &y| *d *= 1.0 - y * y);
                    acc(*a, d);
                }
                Op::Transpose(a) => acc(*a, g.t().to_owned()),
                Op::SliceCols(a, start) => {
                    let src = val(*a);
                    let mut d = Mat::zeros(src.raw_dim());
                    d.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(*a, d);
                }
                Op::SliceRows(a, start) => {
                    let src = val(*a);
                    let mut d = Mat::zeros(src.raw_dim());
                    d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    acc(*a, d);
                }
                Op::GatherRows(a, idx) => {
                    let src = val(*a);
                    let mut d = Mat::zeros(src.raw_dim());
                    for (k, &r) in idx.iter().enumerate() {
                        let mut row = d.row_mut(r);
                        row += &g.row(k);
                    }
                    acc(*a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = val(p).ncols();
                        if nodes[p].needs_grad {
                            acc(p, g.slice(s![.., start..start + w]).to_owned());
                        }
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let h = val(p).nrows();
                        if nodes[p].needs_grad {
                            acc(p, g.slice(s![start..start + h, ..]).to_owned());
                        }
                        start += h;
                    }
                }
                Op::LayerNorm(a, inv_std) => {
                    // y = (x - mean) * r;  dx = r * (g - mean(g) - y * mean(g*y))
                    let n = out.ncols() as f64;
                    let mut d = Mat::zeros(out.raw_dim());
                    for (i, mut drow) in d.rows_mut().into_iter().enumerate() {
                        let grow = g.row(i);
                        let yrow = out.row(i);
                        let mg = grow.sum() / n;
                        let mgy = grow.dot(&yrow) / n;
                        let r = inv_std[[i, 0]];
                        Zip::from(&mut drow)
                            .and(&grow)
                            .and(&yrow)
                            .for_each(|d, &gv, &y| *d = r * (gv - mg - y * mgy));
                    }
                    acc(*a, d);
                }
                Op::Softmax(a) => {
                    let gy = &g * out.as_ref();
                    let dots = gy.sum_axis(Axis(1));
                    let mut res = gy;
                    for (i, mut row) in res.rows_mut().into_iter().enumerate() {
                        let yrow = out.row(i);
                        Zip::from(&mut row)
                            .and(&yrow)
                            .for_each(|r, &y| *r -= y * dots[i]);
                    }
                    acc(*a, res);
                }
                Op::LogSoftmax(a) => {
                    let sums = g.sum_axis(Axis(1));
                    let mut d = g;
                    for (i, mut row) in d.rows_mut().into_iter().enumerate() {
                        let yrow = out.row(i);
                        Zip::from(&mut row)
                            .and(&yrow)
                            .for_each(|r, &y| *r -= y.exp() * sums[i]);
                    }
                    acc(*a, d);
                }
                Op::Sum(a) => {
                    let src = val(*a);
                    acc(*a, Mat::from_elem(src.raw_dim(), g[[0, 0]]));
                }
                Op::SumRows(a) => {
                    let src = val(*a);
                    let d = g.broadcast(src.raw_dim()).expect("broadcast").to_owned();
                    acc(*a, d);
                }
                Op::SumCols(a) => {
                    let src = val(*a);
                    let d = g.broadcast(src.raw_dim()).expect("broadcast").to_owned();
                    acc(*a, d);
                }
            }
        }
        Gradients { grads }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn check(cond: bool, what: &str, a: (usize, usize), b: (usize, usize)) {
    assert!(cond, "{what}: incompatible shapes {a:?} and {b:?}");
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Mat> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value().dim()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.needs(self.id)
    }

    /// Value of a `1×1` node.
    pub fn item(&self) -> f64 {
        let v = self.value();
        assert_eq!(v.dim(), (1, 1));
        v[[0, 0]]
    }

    fn unary(self, value: Mat, op: Op) -> Var<'t> {
        let needs = self.requires_grad();
        self.tape.push(value, op, needs)
    }

    fn binary(self, other: Var<'t>, value: Mat, op: Op) -> Var<'t> {
        let needs = self.requires_grad() || other.requires_grad();
        self.tape.push(value, op, needs)
    }

    pub fn matmul(self, rhs: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), rhs.value());
        check(a.ncols() == b.nrows(), "matmul", a.dim(), b.dim());
        let v = a.dot(b.as_ref());
        self.binary(rhs, v, Op::MatMul(self.id, rhs.id))
    }

    pub fn add(self, rhs: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), rhs.value());
        check(a.dim() == b.dim(), "add", a.dim(), b.dim());
        let v = a.as_ref() + b.as_ref();
        self.binary(rhs, v, Op::Add(self.id, rhs.id))
    }

    pub fn sub(self, rhs: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), rhs.value());
        check(a.dim() == b.dim(), "sub", a.dim(), b.dim());
        let v = a.as_ref() - b.as_ref();
        self.binary(rhs, v, Op::Sub(self.id, rhs.id))
    }

    pub fn mul(self, rhs: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), rhs.value());
        check(a.dim() == b.dim(), "mul", a.dim(), b.dim());
        let v = a.as_ref() * b.as_ref();
        self.binary(rhs, v, Op::Mul(self.id, rhs.id))
    }

    pub fn div(self, rhs: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), rhs.value());
        check(a.dim() == b.dim(), "div", a.dim(), b.dim());
        let v = a.as_ref() / b.as_ref();
        self.binary(rhs, v, Op::Div(self.id, rhs.id))
    }

    /// Adds a `1×c` row to every row.
    pub fn add_row(self, row: Var<'t>) -> Var<'t> {
        let (a, r) = (self.value(), row.value());
        check(r.nrows() == 1 && r.ncols() == a.ncols(), "add_row", a.dim(), r.dim());
        let v = a.as_ref() + r.as_ref();
        self.binary(row, v, Op::AddRow(self.id, row.id))
    }

    /// Multiplies every row elementwise by a `1×c` row.
    pub fn mul_row(self, row: Var<'t>) -> Var<'t> {
        let (a, r) = (self.value(), row.value());
        check(r.nrows() == 1 && r.ncols() == a.ncols(), "mul_row", a.dim(), r.dim());
        let v = a.as_ref() * r.as_ref();
        self.binary(row, v, Op::MulRow(self.id, row.id))
    }

    /// Adds an `r×1` column to every column.
    pub fn add_col(self, col: Var<'t>) -> Var<'t> {
        let (a, c) = (self.value(), col.value());
        check(c.ncols() == 1 && c.nrows() == a.nrows(), "add_col", a.dim(), c.dim());
        let v = a.as_ref() + c.as_ref();
        self.binary(col, v, Op::AddCol(self.id, col.id))
    }

    /// Multiplies every column elementwise by an `r×1` column.
    pub fn mul_col(self, col: Var<'t>) -> Var<'t> {
        let (a, c) = (self.value(), col.value());
        check(c.ncols() == 1 && c.nrows() == a.nrows(), "mul_col", a.dim(), c.dim());
        let v = a.as_ref() * c.as_ref();
        self.binary(col, v, Op::MulCol(self.id, col.id))
    }

    /// Multiplies by a `1×1` node.
    pub fn scale_by(self, scalar: Var<'t>) -> Var<'t> {
        let k = scalar.item();
        let v = self.value().as_ref() * k;
        self.binary(scalar, v, Op::ScaleBy(self.id, scalar.id))
    }

    pub fn scale(self, k: f64) -> Var<'t> {
        let v = self.value().as_ref() * k;
        self.unary(v, Op::Scale(self.id, k))
    }

    pub fn offset(self, k: f64) -> Var<'t> {
        let v = self.value().as_ref() + k;
        self.unary(v, Op::Offset(self.id))
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn square(self) -> Var<'t> {
        let v = self.value().mapv(|x| x * x);
        self.unary(v, Op::Square(self.id))
    }

    /// Square root. The gradient at exactly zero is taken as zero.
    pub fn sqrt(self) -> Var<'t> {
        let v = self.value().mapv(f64::sqrt);
        self.unary(v, Op::Sqrt(self.id))
    }

    pub fn abs(self) -> Var<'t> {
        let v = self.value().mapv(f64::abs);
        self.unary(v, Op::Abs(self.id))
    }

    pub fn exp(self) -> Var<'t> {
        let v = self.value().mapv(f64::exp);
        self.unary(v, Op::Exp(self.id))
    }

    pub fn ln(self) -> Var<'t> {
        let v = self.value().mapv(f64::ln);
        self.unary(v, Op::Ln(self.id))
    }

    pub fn silu(self) -> Var<'t> {
        let v = self.value().mapv(|x| x * sigmoid(x));
        self.unary(v, Op::Silu(self.id))
    }

    pub fn tanh(self) -> Var<'t> {
        let v = self.value().mapv(f64::tanh);
        self.unary(v, Op::Tanh(self.id))
    }

    pub fn t(self) -> Var<'t> {
        let v = self.value().t().to_owned();
        self.unary(v, Op::Transpose(self.id))
    }

    pub fn slice_cols(self, start: usize, len: usize) -> Var<'t> {
        let a = self.value();
        assert!(start + len <= a.ncols(), "slice_cols out of bounds");
        let v = a.slice(s![.., start..start + len]).to_owned();
        self.unary(v, Op::SliceCols(self.id, start))
    }

    pub fn slice_rows(self, start: usize, len: usize) -> Var<'t> {
        let a = self.value();
        assert!(start + len <= a.nrows(), "slice_rows out of bounds");
        let v = a.slice(s![start..start + len, ..]).to_owned();
        self.unary(v, Op::SliceRows(self.id, start))
    }

    /// Selects rows by index (repeats allowed).
    pub fn gather_rows(self, rows: &[usize]) -> Var<'t> {
        let a = self.value();
        let v = a.select(Axis(0), rows);
        self.unary(v, Op::GatherRows(self.id, Rc::new(rows.to_vec())))
    }

    pub fn concat_cols(parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty());
        let values: Vec<Rc<Mat>> = parts.iter().map(|p| p.value()).collect();
        let views: Vec<_> = values.iter().map(|v| v.view()).collect();
        let v = concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        let needs = parts.iter().any(|p| p.requires_grad());
        parts[0]
            .tape
            .push(v, Op::ConcatCols(parts.iter().map(|p| p.id).collect()), needs)
    }

    pub fn concat_rows(parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty());
        let values: Vec<Rc<Mat>> = parts.iter().map(|p| p.value()).collect();
        let views: Vec<_> = values.iter().map(|v| v.view()).collect();
        let v = concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        let needs = parts.iter().any(|p| p.requires_grad());
        parts[0]
            .tape
            .push(v, Op::ConcatRows(parts.iter().map(|p| p.id).collect()), needs)
    }

    /// Per-row normalisation to zero mean and unit variance (no affine part).
    pub fn layer_norm(self, eps: f64) -> Var<'t> {
        let a = self.value();
        let n = a.ncols() as f64;
        let mut out = Mat::zeros(a.raw_dim());
        let mut inv = Mat::zeros((a.nrows(), 1));
        for (i, row) in a.rows().into_iter().enumerate() {
            let mean = row.sum() / n;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let r = 1.0 / (var + eps).sqrt();
            inv[[i, 0]] = r;
            out.row_mut(i).assign(&row.mapv(|x| (x - mean) * r));
        }
        self.unary(out, Op::LayerNorm(self.id, Rc::new(inv)))
    }

    pub fn softmax(self) -> Var<'t> {
        let v = softmax_rows(&self.value());
        self.unary(v, Op::Softmax(self.id))
    }

    pub fn log_softmax(self) -> Var<'t> {
        let a = self.value();
        let mut out = a.as_ref().clone();
        for mut row in out.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
            row.mapv_inplace(|x| x - lse);
        }
        self.unary(out, Op::LogSoftmax(self.id))
    }

    /// Sum of all entries, as `1×1`.
    pub fn sum(self) -> Var<'t> {
        let v = Mat::from_elem((1, 1), self.value().sum());
        self.unary(v, Op::Sum(self.id))
    }

    /// Mean of all entries, as `1×1`.
    pub fn mean(self) -> Var<'t> {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Column sums, `1×c`.
    pub fn sum_rows(self) -> Var<'t> {
        let v = self.value().sum_axis(Axis(0)).insert_axis(Axis(0));
        self.unary(v, Op::SumRows(self.id))
    }

    /// Row sums, `r×1`.
    pub fn sum_cols(self) -> Var<'t> {
        let v = self.value().sum_axis(Axis(1)).insert_axis(Axis(1));
        self.unary(v, Op::SumCols(self.id))
    }
}

/// Numerically stable row-wise softmax of a plain matrix.
pub fn softmax_rows(a: &Mat) -> Mat {
    let mut out = a.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - m).exp());
        let z = row.sum();
        row.mapv_inplace(|x| x / z);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Mat::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    /// Central finite differences of `f` at `x`.
    fn numeric_grad(x: &Mat, f: &dyn Fn(&Mat) -> f64) -> Mat {
        let h = 1e-6;
        let mut g = Mat::zeros(x.raw_dim());
        for idx in 0..x.len() {
            let (i, j) = (idx / x.ncols(), idx % x.ncols());
            let mut xp = x.clone();
            xp[[i, j]] += h;
            let mut xm = x.clone();
            xm[[i, j]] -= h;
            g[[i, j]] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn assert_close(a: &Mat, b: &Mat, tol: f64) {
        let err = (a - b).mapv(f64::abs).fold(0.0_f64, |m, &x| m.max(x));
        let scale = b.mapv(f64::abs).fold(1e-3_f64, |m, &x| m.max(x));
        assert!(err / scale < tol, "relative error {} exceeds {tol}\n{a}\n{b}", err / scale);
    }

    /// Each closure builds a scalar from two inputs; the analytic gradients
    /// must match finite differences for both.
    fn check_binary(a: Mat, b: Mat, build: &dyn for<'t> Fn(Var<'t>, Var<'t>) -> Var<'t>) {
        let tape = Tape::new();
        let (va, vb) = (tape.var(a.clone()), tape.var(b.clone()));
        let out = build(va, vb);
        let grads = tape.backward(out);
        let fa = |x: &Mat| {
            let t = Tape::new();
            build(t.constant(x.clone()), t.constant(b.clone())).item()
        };
        let fb = |x: &Mat| {
            let t = Tape::new();
            build(t.constant(a.clone()), t.constant(x.clone())).item()
        };
        assert_close(&grads.get_or_zeros(va), &numeric_grad(&a, &fa), 1e-6);
        assert_close(&grads.get_or_zeros(vb), &numeric_grad(&b, &fb), 1e-6);
    }

    #[test]
    fn matmul_and_elementwise_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        check_binary(random(&mut rng, 3, 4), random(&mut rng, 4, 2), &|a, b| {
            a.matmul(b).square().sum()
        });
        check_binary(random(&mut rng, 3, 4), random(&mut rng, 3, 4), &|a, b| {
            a.mul(b).add(a.sub(b).abs()).sum()
        });
        let denom = random(&mut rng, 3, 4).mapv(|x| x.abs() + 0.5);
        check_binary(random(&mut rng, 3, 4), denom, &|a, b| a.div(b).tanh().sum());
    }

    #[test]
    fn broadcast_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        check_binary(random(&mut rng, 3, 4), random(&mut rng, 1, 4), &|a, r| {
            a.mul_row(r).add_row(r).silu().sum()
        });
        check_binary(random(&mut rng, 3, 4), random(&mut rng, 3, 1), &|a, c| {
            a.mul_col(c).add_col(c).exp().sum()
        });
        check_binary(random(&mut rng, 3, 4), random(&mut rng, 1, 1), &|a, k| {
            a.scale_by(k).square().mean()
        });
    }

    #[test]
    fn structural_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        check_binary(random(&mut rng, 4, 3), random(&mut rng, 4, 2), &|a, b| {
            let cat = Var::concat_cols(&[a, b, a.slice_cols(1, 2)]);
            let rows = Var::concat_rows(&[cat.slice_rows(1, 2), cat.gather_rows(&[0, 0, 3])]);
            rows.t().square().sum_rows().sum_cols().sum()
        });
    }

    #[test]
    fn normalisation_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = random(&mut rng, 5, 5);
        check_binary(random(&mut rng, 3, 5), w.clone(), &|a, w| {
            a.layer_norm(1e-5).matmul(w).softmax().square().sum()
        });
        check_binary(random(&mut rng, 3, 5), w, &|a, w| {
            a.matmul(w).log_softmax().mul(a).sum()
        });
        let pos = random(&mut rng, 3, 3).mapv(|x| x.abs() + 0.1);
        check_binary(pos.clone(), pos, &|a, b| a.sqrt().add(b.ln()).sum());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let tape = Tape::new();
        let c = tape.constant(array![[1.0, 2.0]]);
        let v = tape.var(array![[3.0, 4.0]]);
        let out = c.mul(v).sum();
        let g = tape.backward(out);
        assert!(g.get(c).is_none());
        assert_eq!(g.get(v).unwrap(), &array![[1.0, 2.0]]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let m = array![[1.0, 2.0, 3.0], [1000.0, 1000.0, -1000.0]];
        let s = softmax_rows(&m);
        for row in s.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        assert!((s[[1, 0]] - 0.5).abs() < 1e-12);
    }
}
