//! Reverse-mode tape for exact gradients.
//!
//! The training loss builds a graph of matrix ops on a [`Tape`]; a single
//! backward sweep then yields gradients that are analytically exact (no
//! approximation beyond floating-point rounding). Every value is a dense
//! row-major matrix; batch items live in rows. Gradient accumulation walks
//! nodes in strictly decreasing index order, so results are deterministic.
//!
//! The op set is exactly what an LSTM encoder-decoder with attention needs;
//! this is not a general autograd library.

use ndarray::{s, Array2, Axis};

use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<F: Scalar> {
    Leaf,
    MatMul(Var, Var),
    /// x (B x n) plus a 1 x n row broadcast over rows.
    AddRow(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    SliceCols(Var, usize, usize),
    ConcatCols(Vec<Var>),
    /// Row-wise dot product of two B x n matrices, yielding B x 1.
    RowDot(Var, Var),
    /// x (B x n) scaled row-wise by a B x 1 column.
    ScaleRows(Var, Var),
    /// Row softmax restricted to positions where mask is 1; masked-out
    /// positions produce 0.
    SoftmaxRows(Var, Array2<F>),
    /// Elementwise product with a constant (pre-scaled inverted-dropout) mask.
    Dropout(Var, Array2<F>),
    /// Row gather from an embedding table: out[i] = table[ids[i]].
    Embed(Var, Vec<usize>),
    /// Weighted sum over rows of per-row cross-entropy: value is 1 x 1,
    /// sum_i w_i * (logsumexp(logits[i]) - logits[i, target[i]]).
    CeSum(Var, Vec<usize>, Vec<F>),
    SumScalars(Vec<Var>),
    ScaleConst(Var, F),
    SumAll(Var),
}

struct Node<F: Scalar> {
    value: Array2<F>,
    op: Op<F>,
}

pub struct Tape<F: Scalar> {
    nodes: Vec<Node<F>>,
}

/// Gradients for every tape node, indexable by [`Var`]. Nodes that the root
/// does not depend on hold zeros.
pub struct Gradients<F: Scalar> {
    grads: Vec<Array2<F>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn wrt(&self, v: Var) -> &Array2<F> {
        &self.grads[v.0]
    }
}

fn row_softmax_masked<F: Scalar>(row: &[F], mask: &[F]) -> Vec<F> {
    let mut max = F::neg_infinity();
    for (x, m) in row.iter().zip(mask) {
        if *m > F::zero() && *x > max {
            max = *x;
        }
    }
    let mut out = vec![F::zero(); row.len()];
    if max == F::neg_infinity() {
        return out;
    }
    let mut denom = F::zero();
    for ((o, x), m) in out.iter_mut().zip(row).zip(mask) {
        if *m > F::zero() {
            *o = (*x - max).exp();
            denom += *o;
        }
    }
    for o in out.iter_mut() {
        *o /= denom;
    }
    out
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<F> {
        &self.nodes[v.0].value
    }

    /// Value of a 1 x 1 node.
    pub fn scalar(&self, v: Var) -> F {
        let a = self.value(v);
        assert_eq!(a.dim(), (1, 1), "scalar() on non-scalar node");
        a[(0, 0)]
    }

    fn push(&mut self, value: Array2<F>, op: Op<F>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array2<F>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        debug_assert_eq!(self.value(row).nrows(), 1);
        let v = self.value(x) + self.value(row);
        self.push(v, Op::AddRow(x, row))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(|x| F::one() / (F::one() + (-x).exp()));
        self.push(v, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(|x| x.tanh());
        self.push(v, Op::Tanh(x))
    }

    pub fn slice_cols(&mut self, x: Var, lo: usize, hi: usize) -> Var {
        let v = self.value(x).slice(s![.., lo..hi]).to_owned();
        self.push(v, Op::SliceCols(x, lo, hi))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts agree");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        debug_assert_eq!(va.dim(), vb.dim());
        let mut v = Array2::zeros((va.nrows(), 1));
        for i in 0..va.nrows() {
            let mut acc = F::zero();
            for j in 0..va.ncols() {
                acc += va[(i, j)] * vb[(i, j)];
            }
            v[(i, 0)] = acc;
        }
        self.push(v, Op::RowDot(a, b))
    }

    pub fn scale_rows(&mut self, x: Var, col: Var) -> Var {
        let (vx, vc) = (self.value(x), self.value(col));
        debug_assert_eq!(vc.ncols(), 1);
        debug_assert_eq!(vx.nrows(), vc.nrows());
        let mut v = vx.clone();
        for (i, mut row) in v.axis_iter_mut(Axis(0)).enumerate() {
            let s = vc[(i, 0)];
            row.mapv_inplace(|x| x * s);
        }
        self.push(v, Op::ScaleRows(x, col))
    }

    pub fn softmax_rows(&mut self, x: Var, mask: Array2<F>) -> Var {
        let vx = self.value(x);
        debug_assert_eq!(vx.dim(), mask.dim());
        let mut v = Array2::zeros(vx.dim());
        for i in 0..vx.nrows() {
            let row: Vec<F> = vx.row(i).to_vec();
            let m: Vec<F> = mask.row(i).to_vec();
            for (j, p) in row_softmax_masked(&row, &m).into_iter().enumerate() {
                v[(i, j)] = p;
            }
        }
        self.push(v, Op::SoftmaxRows(x, mask))
    }

    pub fn dropout(&mut self, x: Var, mask: Array2<F>) -> Var {
        let v = self.value(x) * &mask;
        self.push(v, Op::Dropout(x, mask))
    }

    pub fn embed(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut v = Array2::zeros((ids.len(), t.ncols()));
        for (i, &id) in ids.iter().enumerate() {
            v.row_mut(i).assign(&t.row(id));
        }
        self.push(v, Op::Embed(table, ids.to_vec()))
    }

    /// Per-row cross-entropy against `targets`, weighted by `weights`
    /// (use weight 0 to mask padding), summed into one scalar.
    pub fn ce_sum(&mut self, logits: Var, targets: &[usize], weights: &[F]) -> Var {
        let l = self.value(logits);
        debug_assert_eq!(l.nrows(), targets.len());
        debug_assert_eq!(l.nrows(), weights.len());
        let mut total = F::zero();
        for i in 0..l.nrows() {
            if weights[i] == F::zero() {
                continue;
            }
            let row = l.row(i);
            let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
            let mut denom = F::zero();
            for &x in row.iter() {
                denom += (x - max).exp();
            }
            let lse = max + denom.ln();
            total += weights[i] * (lse - row[targets[i]]);
        }
        let v = Array2::from_elem((1, 1), total);
        self.push(v, Op::CeSum(logits, targets.to_vec(), weights.to_vec()))
    }

    pub fn sum_scalars(&mut self, parts: &[Var]) -> Var {
        let mut total = F::zero();
        for p in parts {
            total += self.scalar(*p);
        }
        self.push(Array2::from_elem((1, 1), total), Op::SumScalars(parts.to_vec()))
    }

    pub fn scale_const(&mut self, x: Var, c: F) -> Var {
        let v = self.value(x).mapv(|x| x * c);
        self.push(v, Op::ScaleConst(x, c))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let total = self.value(x).iter().fold(F::zero(), |a, &b| a + b);
        self.push(Array2::from_elem((1, 1), total), Op::SumAll(x))
    }

    /// Backpropagates from `root` (must be 1 x 1) through the whole tape.
    pub fn backward(&self, root: Var) -> Gradients<F> {
        assert_eq!(self.value(root).dim(), (1, 1), "backward root must be scalar");
        let mut grads: Vec<Array2<F>> = self
            .nodes
            .iter()
            .map(|n| Array2::zeros(n.value.dim()))
            .collect();
        grads[root.0][(0, 0)] = F::one();

        for idx in (0..=root.0).rev() {
            let g = std::mem::replace(&mut grads[idx], Array2::zeros((0, 0)));
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = g.dot(&self.nodes[b.0].value.t());
                    let db = self.nodes[a.0].value.t().dot(&g);
                    grads[a.0] += &da;
                    grads[b.0] += &db;
                }
                Op::AddRow(x, row) => {
                    grads[x.0] += &g;
                    let col_sums = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    grads[row.0] += &col_sums;
                }
                Op::Add(a, b) => {
                    grads[a.0] += &g;
                    grads[b.0] += &g;
                }
                Op::Mul(a, b) => {
                    let da = &g * &self.nodes[b.0].value;
                    let db = &g * &self.nodes[a.0].value;
                    grads[a.0] += &da;
                    grads[b.0] += &db;
                }
                Op::Sigmoid(x) => {
                    let y = &self.nodes[idx].value;
                    let dx = &g * &y.mapv(|s| s * (F::one() - s));
                    grads[x.0] += &dx;
                }
                Op::Tanh(x) => {
                    let y = &self.nodes[idx].value;
                    let dx = &g * &y.mapv(|t| F::one() - t * t);
                    grads[x.0] += &dx;
                }
                Op::SliceCols(x, lo, hi) => {
                    let mut gx = grads[x.0].slice_mut(s![.., *lo..*hi]);
                    gx += &g;
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = self.nodes[p.0].value.ncols();
                        let gp = g.slice(s![.., off..off + w]);
                        grads[p.0] += &gp;
                        off += w;
                    }
                }
                Op::RowDot(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    for i in 0..va.nrows() {
                        let gi = g[(i, 0)];
                        for j in 0..va.ncols() {
                            grads[a.0][(i, j)] += gi * vb[(i, j)];
                            grads[b.0][(i, j)] += gi * va[(i, j)];
                        }
                    }
                }
                Op::ScaleRows(x, col) => {
                    let (vx, vc) = (&self.nodes[x.0].value, &self.nodes[col.0].value);
                    for i in 0..vx.nrows() {
                        let s = vc[(i, 0)];
                        let mut acc = F::zero();
                        for j in 0..vx.ncols() {
                            grads[x.0][(i, j)] += g[(i, j)] * s;
                            acc += g[(i, j)] * vx[(i, j)];
                        }
                        grads[col.0][(i, 0)] += acc;
                    }
                }
                Op::SoftmaxRows(x, mask) => {
                    let y = &self.nodes[idx].value;
                    for i in 0..y.nrows() {
                        let mut dot = F::zero();
                        for k in 0..y.ncols() {
                            dot += g[(i, k)] * y[(i, k)];
                        }
                        for j in 0..y.ncols() {
                            if mask[(i, j)] > F::zero() {
                                grads[x.0][(i, j)] += y[(i, j)] * (g[(i, j)] - dot);
                            }
                        }
                    }
                }
                Op::Dropout(x, mask) => {
                    let dx = &g * mask;
                    grads[x.0] += &dx;
                }
                Op::Embed(table, ids) => {
                    for (i, &id) in ids.iter().enumerate() {
                        let mut row = grads[table.0].row_mut(id);
                        row += &g.row(i);
                    }
                }
                Op::CeSum(logits, targets, weights) => {
                    let gs = g[(0, 0)];
                    let l = &self.nodes[logits.0].value;
                    for i in 0..l.nrows() {
                        if weights[i] == F::zero() {
                            continue;
                        }
                        let row: Vec<F> = l.row(i).to_vec();
                        let ones = vec![F::one(); row.len()];
                        let p = row_softmax_masked(&row, &ones);
                        let w = gs * weights[i];
                        for j in 0..row.len() {
                            let ind = if j == targets[i] { F::one() } else { F::zero() };
                            grads[logits.0][(i, j)] += w * (p[j] - ind);
                        }
                    }
                }
                Op::SumScalars(parts) => {
                    let gs = g[(0, 0)];
                    for p in parts {
                        grads[p.0][(0, 0)] += gs;
                    }
                }
                Op::ScaleConst(x, c) => {
                    let dx = g.mapv(|v| v * *c);
                    grads[x.0] += &dx;
                }
                Op::SumAll(x) => {
                    let gs = g[(0, 0)];
                    grads[x.0].mapv_inplace(|v| v + gs);
                }
            }
            // The take above freed the slot for aliasing reasons; restore the
            // node's own gradient so callers can read it.
            grads[idx] = g;
        }
        Gradients { grads }
    }
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Tape::new()
    }
}
