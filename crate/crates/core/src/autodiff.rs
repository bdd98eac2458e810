//! A small reverse-mode tape over 2-D `f64` arrays.
//!
//! Every operation appends a node holding its value; [`Tape::backward`] walks
//! the nodes in reverse and accumulates adjoints. Parameter leaves carry an
//! index so their gradients can be collected after the sweep.

use nalgebra::{Matrix3, Vector3};
use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

use crate::manifold::{exp_coefficients, hat, so3_log, Rotation};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Silu(Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    Gather(Var, Vec<usize>),
    ScatterAdd(Var, Vec<usize>),
    SegmentSoftmax(Var, Vec<usize>),
    SumCols(Var),
    Sum(Var),
    Mat3(Var, Var, bool, bool),
    So3Exp(Var),
    So3Log(Var),
    BallSquash(Var, f64),
}

#[derive(Clone, Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn row3(a: &ArrayView2<f64>, i: usize) -> Vector3<f64> {
    Vector3::new(a[[i, 0]], a[[i, 1]], a[[i, 2]])
}

fn mat3(a: &ArrayView2<f64>, i: usize) -> Matrix3<f64> {
    Matrix3::from_fn(|r, c| a[[i, 3 * r + c]])
}

fn put_mat3(out: &mut Array2<f64>, i: usize, m: &Matrix3<f64>) {
    for r in 0..3 {
        for c in 0..3 {
            out[[i, 3 * r + c]] = m[(r, c)];
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `(A'(θ)/θ, B'(θ)/θ)` for `A = sin θ/θ`, `B = (1 − cos θ)/θ²`.
fn exp_coefficient_slopes(theta: f64) -> (f64, f64) {
    if theta < 1e-2 {
        let t2 = theta * theta;
        let t4 = t2 * t2;
        (
            -1.0 / 3.0 + t2 / 30.0 - t4 / 840.0,
            -1.0 / 12.0 + t2 / 180.0 - t4 / 6720.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        let t2 = theta * theta;
        (
            (theta * c - s) / (t2 * theta),
            (theta * s - 2.0 * (1.0 - c)) / (t2 * t2),
        )
    }
}

/// `g(r) = c·tanh(r/c)/r` and `g'(r)/r`.
fn squash_scale(r: f64, c: f64) -> (f64, f64) {
    let u = r / c;
    if u < 1e-3 {
        let u2 = u * u;
        (1.0 - u2 / 3.0 + 2.0 * u2 * u2 / 15.0, (-2.0 / 3.0 + 8.0 * u2 / 15.0) / (c * c))
    } else {
        let th = u.tanh();
        let sech2 = 1.0 - th * th;
        (c * th / r, (sech2 * r - c * th) / (r * r * r))
    }
}

/// Derivative of `θ / (2 sin θ)` with respect to `cos θ`.
fn log_scale_slope(theta: f64) -> f64 {
    if theta < 1e-2 {
        let t2 = theta * theta;
        -(1.0 / 6.0 + t2 / 15.0)
    } else {
        let (s, c) = theta.sin_cos();
        -(s - theta * c) / (2.0 * s * s * s)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn constant(&mut self, a: Array2<f64>) -> Var {
        self.push(a, Op::Leaf)
    }

    /// A parameter leaf; `id` indexes the gradient returned by [`backward`](Self::backward).
    pub fn param(&mut self, id: usize, a: &Array2<f64>) -> Var {
        self.push(a.clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// Adds a `1 × m` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c))
    }

    /// `x · σ(x)`.
    pub fn silu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * sigmoid(x));
        self.push(v, Op::Silu(a))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = concatenate(Axis(1), &views).expect("concat: row counts differ");
        self.push(v, Op::Concat(parts.to_vec()))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols(a, start))
    }

    /// Row `k` of the result is row `idx[k]` of `a`.
    pub fn gather(&mut self, a: Var, idx: &[usize]) -> Var {
        let v = self.value(a).select(Axis(0), idx);
        self.push(v, Op::Gather(a, idx.to_vec()))
    }

    /// Sums row `k` of `a` into row `idx[k]` of an `n × cols` result.
    pub fn scatter_add(&mut self, a: Var, idx: &[usize], n: usize) -> Var {
        let src = self.value(a);
        let mut v = Array2::zeros((n, src.ncols()));
        for (k, &i) in idx.iter().enumerate() {
            let mut row = v.row_mut(i);
            row += &src.row(k);
        }
        self.push(v, Op::ScatterAdd(a, idx.to_vec()))
    }

    /// Softmax of an `n × 1` column within groups given by `seg`.
    pub fn segment_softmax(&mut self, a: Var, seg: &[usize]) -> Var {
        let x = self.value(a);
        let n_seg = seg.iter().max().map_or(0, |m| m + 1);
        let mut max = vec![f64::NEG_INFINITY; n_seg];
        for (k, &g) in seg.iter().enumerate() {
            max[g] = max[g].max(x[[k, 0]]);
        }
        let mut v = Array2::zeros(x.raw_dim());
        let mut total = vec![0.0; n_seg];
        for (k, &g) in seg.iter().enumerate() {
            v[[k, 0]] = (x[[k, 0]] - max[g]).exp();
            total[g] += v[[k, 0]];
        }
        for (k, &g) in seg.iter().enumerate() {
            v[[k, 0]] /= total[g];
        }
        self.push(v, Op::SegmentSoftmax(a, seg.to_vec()))
    }

    /// Row sums as an `n × 1` column.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(v, Op::SumCols(a))
    }

    /// Sum of all entries as a `1 × 1` array.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    /// Row-wise 3×3 products of row-major `n × 9` stacks, optionally transposed.
    pub fn mat3_mul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let (x, y) = (self.value(a).view(), self.value(b).view());
        let n = x.nrows().max(y.nrows());
        let pick = |m: &ArrayView2<f64>, i: usize, t: bool| {
            let r = mat3(m, if m.nrows() == 1 { 0 } else { i });
            if t {
                r.transpose()
            } else {
                r
            }
        };
        let mut v = Array2::zeros((n, 9));
        for i in 0..n {
            put_mat3(&mut v, i, &(pick(&x, i, ta) * pick(&y, i, tb)));
        }
        self.push(v, Op::Mat3(a, b, ta, tb))
    }

    /// Rodrigues map from `n × 3` axis-angle rows to `n × 9` rotation rows.
    pub fn so3_exp(&mut self, a: Var) -> Var {
        let x = self.value(a).view();
        let mut v = Array2::zeros((x.nrows(), 9));
        for i in 0..x.nrows() {
            let w = row3(&x, i);
            let (ca, cb) = exp_coefficients(w.norm());
            let k = hat(&w);
            put_mat3(&mut v, i, &(Matrix3::identity() + k * ca + k * k * cb));
        }
        self.push(v, Op::So3Exp(a))
    }

    /// Principal logarithm of `n × 9` rotation rows as `n × 3` axis-angle rows.
    pub fn so3_log(&mut self, a: Var) -> Var {
        let x = self.value(a).view();
        let mut v = Array2::zeros((x.nrows(), 3));
        for i in 0..x.nrows() {
            let r = Rotation::from_matrix_unchecked(mat3(&x, i));
            let w = so3_log(&r);
            for c in 0..3 {
                v[[i, c]] = w.vector()[c];
            }
        }
        self.push(v, Op::So3Log(a))
    }

    /// Maps each `n × 3` row `v` to `c·tanh(|v|/c)·v/|v|`, a smooth bijection
    /// onto the open ball of radius `c`.
    pub fn ball_squash(&mut self, a: Var, c: f64) -> Var {
        let x = self.value(a).view();
        let mut v = Array2::zeros(x.raw_dim());
        for i in 0..x.nrows() {
            let w = row3(&x, i);
            let g = squash_scale(w.norm(), c).0;
            for k in 0..3 {
                v[[i, k]] = g * w[k];
            }
        }
        self.push(v, Op::BallSquash(a, c))
    }

    /// Reverse sweep from a `1 × 1` output. Returns one gradient per parameter
    /// id in `0..n_params`; unreachable parameters get `None`.
    pub fn backward(&self, out: Var, n_params: usize) -> Vec<Option<Array2<f64>>> {
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(Array2::ones(self.nodes[out.0].value.raw_dim()));
        let mut params: Vec<Option<Array2<f64>>> = vec![None; n_params];

        fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => match &mut params[*id] {
                    Some(existing) => *existing += &g,
                    slot => *slot = Some(g),
                },
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *a, g);
                    acc(&mut grads, *row, gr);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, -g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g * *c),
                Op::Silu(a) => {
                    let mut d = self.value(*a).mapv(|x| {
                        let s = sigmoid(x);
                        s * (1.0 + x * (1.0 - s))
                    });
                    d *= &g;
                    acc(&mut grads, *a, d);
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        acc(&mut grads, p, g.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let src = self.value(*a);
                    let mut d = Array2::zeros(src.raw_dim());
                    d.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut grads, *a, d);
                }
                Op::Gather(a, idx_rows) => {
                    let src = self.value(*a);
                    let mut d = Array2::zeros(src.raw_dim());
                    for (k, &i) in idx_rows.iter().enumerate() {
                        let mut row = d.row_mut(i);
                        row += &g.row(k);
                    }
                    acc(&mut grads, *a, d);
                }
                Op::ScatterAdd(a, idx_rows) => {
                    let d = g.select(Axis(0), idx_rows);
                    acc(&mut grads, *a, d);
                }
                Op::SegmentSoftmax(a, seg) => {
                    let y = &node.value;
                    let n_seg = seg.iter().max().map_or(0, |m| m + 1);
                    let mut dot = vec![0.0; n_seg];
                    for (k, &s) in seg.iter().enumerate() {
                        dot[s] += y[[k, 0]] * g[[k, 0]];
                    }
                    let mut d = Array2::zeros(y.raw_dim());
                    for (k, &s) in seg.iter().enumerate() {
                        d[[k, 0]] = y[[k, 0]] * (g[[k, 0]] - dot[s]);
                    }
                    acc(&mut grads, *a, d);
                }
                Op::SumCols(a) => {
                    let src = self.value(*a);
                    let d = Array2::from_shape_fn(src.raw_dim(), |(i, _)| g[[i, 0]]);
                    acc(&mut grads, *a, d);
                }
                Op::Sum(a) => {
                    let d = Array2::from_elem(self.value(*a).raw_dim(), g[[0, 0]]);
                    acc(&mut grads, *a, d);
                }
                Op::Mat3(a, b, ta, tb) => {
                    let (x, y) = (self.value(*a).view(), self.value(*b).view());
                    let mut ga = Array2::zeros(x.raw_dim());
                    let mut gb = Array2::zeros(y.raw_dim());
                    for i in 0..g.nrows() {
                        let ia = if x.nrows() == 1 { 0 } else { i };
                        let ib = if y.nrows() == 1 { 0 } else { i };
                        let ma = mat3(&x, ia);
                        let mb = mat3(&y, ib);
                        let xa = if *ta { ma.transpose() } else { ma };
                        let yb = if *tb { mb.transpose() } else { mb };
                        let gc = mat3(&g.view(), i);
                        let dx = gc * yb.transpose();
                        let dy = xa.transpose() * gc;
                        let dx = if *ta { dx.transpose() } else { dx };
                        let dy = if *tb { dy.transpose() } else { dy };
                        let prev_a = mat3(&ga.view(), ia);
                        put_mat3(&mut ga, ia, &(prev_a + dx));
                        let prev_b = mat3(&gb.view(), ib);
                        put_mat3(&mut gb, ib, &(prev_b + dy));
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::So3Exp(a) => {
                    let x = self.value(*a).view();
                    let mut d = Array2::zeros(x.raw_dim());
                    for i in 0..x.nrows() {
                        let w = row3(&x, i);
                        let theta = w.norm();
                        let (ca, cb) = exp_coefficients(theta);
                        let (da, db) = exp_coefficient_slopes(theta);
                        let k = hat(&w);
                        let k2 = k * k;
                        let gm = mat3(&g.view(), i);
                        for c in 0..3 {
                            let e = hat(&Vector3::ith(c, 1.0));
                            let dr = k * (da * w[c]) + e * ca + k2 * (db * w[c]) + (e * k + k * e) * cb;
                            d[[i, c]] = gm.component_mul(&dr).sum();
                        }
                    }
                    acc(&mut grads, *a, d);
                }
                Op::BallSquash(a, c) => {
                    let x = self.value(*a).view();
                    let mut d = Array2::zeros(x.raw_dim());
                    for i in 0..x.nrows() {
                        let w = row3(&x, i);
                        let (s0, s1) = squash_scale(w.norm(), *c);
                        let gv = row3(&g.view(), i);
                        let out = gv * s0 + w * (s1 * w.dot(&gv));
                        for k in 0..3 {
                            d[[i, k]] = out[k];
                        }
                    }
                    acc(&mut grads, *a, d);
                }
                Op::So3Log(a) => {
                    let x = self.value(*a).view();
                    let mut d = Array2::zeros(x.raw_dim());
                    for i in 0..x.nrows() {
                        let m = mat3(&x, i);
                        let w = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
                        let cos = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
                        let theta = (0.5 * w.norm()).atan2(cos);
                        let f = if theta < 1e-2 {
                            0.5 + theta * theta / 12.0
                        } else {
                            theta / (2.0 * theta.sin())
                        };
                        let gv = row3(&g.view(), i);
                        let mut gm = Matrix3::zeros();
                        gm[(2, 1)] += f * gv.x;
                        gm[(1, 2)] -= f * gv.x;
                        gm[(0, 2)] += f * gv.y;
                        gm[(2, 0)] -= f * gv.y;
                        gm[(1, 0)] += f * gv.z;
                        gm[(0, 1)] -= f * gv.z;
                        let diag = gv.dot(&w) * log_scale_slope(theta) * 0.5;
                        for c in 0..3 {
                            gm[(c, c)] += diag;
                        }
                        put_mat3(&mut d, i, &gm);
                    }
                    acc(&mut grads, *a, d);
                }
            }
        }
        params
    }
}
