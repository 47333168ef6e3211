//! Reverse-mode differentiation over [`Mat`] values.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! walks it in reverse and returns gradients for the parameter leaves.

use super::tensor::Mat;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<S> {
    Const,
    Param(usize),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Cols(Var, usize),
    Row(Var, usize),
    ConcatCols(Vec<Var>),
    StackRows(Vec<Var>),
    Pyramid(Var),
    Mask(Var, Mat<S>),
    Softmax(Var),
    /// Cached softmax probabilities and the target class.
    CrossEntropy(Var, Mat<S>, usize),
    /// Targets for a sigmoid + binary cross-entropy over logits.
    SigmoidBce(Var, Vec<S>),
    Sum(Vec<Var>),
    Scale(Var, S),
    LstmCell(Var, Option<Var>, Box<CellCache<S>>),
    LstmSeq(Var, Var, Box<SeqCache<S>>),
}

/// Gate activations of one LSTM step.
#[derive(Debug, Clone)]
struct CellCache<S> {
    i: Vec<S>,
    f: Vec<S>,
    g: Vec<S>,
    o: Vec<S>,
    c_prev: Vec<S>,
    tanh_c: Vec<S>,
}

#[derive(Debug, Clone)]
struct SeqCache<S> {
    reverse: bool,
    steps: Vec<CellCache<S>>,
}

/// Gate order in the pre-activation row: input, forget, cell, output.
fn lstm_forward<S: Scalar>(gates: &[S], c_prev: &[S]) -> (Vec<S>, Vec<S>, CellCache<S>) {
    let h = c_prev.len();
    let i: Vec<S> = gates[..h].iter().map(|&v| sigmoid(v)).collect();
    let f: Vec<S> = gates[h..2 * h].iter().map(|&v| sigmoid(v)).collect();
    let g: Vec<S> = gates[2 * h..3 * h].iter().map(|&v| v.tanh()).collect();
    let o: Vec<S> = gates[3 * h..].iter().map(|&v| sigmoid(v)).collect();
    let c: Vec<S> = (0..h).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<S> = c.iter().map(|v| v.tanh()).collect();
    let hid: Vec<S> = (0..h).map(|k| o[k] * tanh_c[k]).collect();
    let cache = CellCache {
        i,
        f,
        g,
        o,
        c_prev: c_prev.to_vec(),
        tanh_c,
    };
    (hid, c, cache)
}

/// Given dL/dh and dL/dc for one step, returns dL/d(pre-activations) and
/// dL/dc_prev.
fn lstm_backward<S: Scalar>(cache: &CellCache<S>, dh: &[S], dc_in: &[S]) -> (Vec<S>, Vec<S>) {
    let h = dh.len();
    let one = S::one();
    let mut dz = vec![S::zero(); 4 * h];
    let mut dc_prev = vec![S::zero(); h];
    for k in 0..h {
        let (i, f, g, o, tc) = (cache.i[k], cache.f[k], cache.g[k], cache.o[k], cache.tanh_c[k]);
        let dc = dh[k] * o * (one - tc * tc) + dc_in[k];
        dz[k] = dc * g * i * (one - i);
        dz[h + k] = dc * cache.c_prev[k] * f * (one - f);
        dz[2 * h + k] = dc * i * (one - g * g);
        dz[3 * h + k] = dh[k] * tc * o * (one - o);
        dc_prev[k] = dc * f;
    }
    (dz, dc_prev)
}

struct Node<S> {
    value: Option<Mat<S>>,
    op: Op<S>,
}

pub struct Tape<'p, S: Scalar> {
    params: &'p [Mat<S>],
    param_vars: Vec<Option<Var>>,
    nodes: Vec<Node<S>>,
}

impl<'p, S: Scalar> Tape<'p, S> {
    pub fn new(params: &'p [Mat<S>]) -> Self {
        Self {
            params,
            param_vars: vec![None; params.len()],
            nodes: Vec::with_capacity(4096),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat<S> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(i)) => &self.params[*i],
            _ => unreachable!("node without value"),
        }
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> S {
        self.value(v).data[0]
    }

    fn push(&mut self, value: Mat<S>, op: Op<S>) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, m: Mat<S>) -> Var {
        self.push(m, Op::Const)
    }

    /// Leaf for parameter tensor `idx`; registered once per tape.
    pub fn param(&mut self, idx: usize) -> Var {
        if let Some(v) = self.param_vars[idx] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(idx),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[idx] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let m = self.value(a).matmul(self.value(b));
        self.push(m, Op::MatMul(a, b))
    }

    /// `a * b^T`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let m = self.value(a).matmul_bt(self.value(b));
        self.push(m, Op::MatMulBt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut m = self.value(a).clone();
        m.add_assign(self.value(b));
        self.push(m, Op::Add(a, b))
    }

    /// Adds the `1 x c` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let mut m = self.value(a).clone();
        let bias = self.value(b);
        assert_eq!((1, m.cols), bias.shape(), "add_row shape");
        for r in 0..m.rows {
            for (x, &y) in m.row_mut(r).iter_mut().zip(&bias.data) {
                *x += y;
            }
        }
        self.push(m, Op::AddRow(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "mul shape");
        let data = x.data.iter().zip(&y.data).map(|(&p, &q)| p * q).collect();
        let m = Mat::from_vec(x.rows, x.cols, data);
        self.push(m, Op::Mul(a, b))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let m = self.value(a).map(sigmoid);
        self.push(m, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let m = self.value(a).map(|v| v.tanh());
        self.push(m, Op::Tanh(a))
    }

    /// Columns `start..start + len`.
    pub fn cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        let mut m = Mat::zeros(x.rows, len);
        for r in 0..x.rows {
            m.row_mut(r).copy_from_slice(&x.row(r)[start..start + len]);
        }
        self.push(m, Op::Cols(a, start))
    }

    pub fn row(&mut self, a: Var, r: usize) -> Var {
        let m = Mat::row_vector(self.value(a).row(r).to_vec());
        self.push(m, Op::Row(a, r))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut m = Mat::zeros(rows, cols);
        for r in 0..rows {
            let mut at = 0;
            for &p in parts {
                let x = self.value(p);
                assert_eq!(x.rows, rows, "concat_cols rows");
                m.row_mut(r)[at..at + x.cols].copy_from_slice(x.row(r));
                at += x.cols;
            }
        }
        self.push(m, Op::ConcatCols(parts.to_vec()))
    }

    pub fn stack_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let x = self.value(p);
            assert_eq!(x.cols, cols, "stack_rows cols");
            data.extend_from_slice(&x.data);
            rows += x.rows;
        }
        self.push(Mat::from_vec(rows, cols, data), Op::StackRows(parts.to_vec()))
    }

    /// Concatenates consecutive row pairs: `T x D -> ceil(T/2) x 2D`, with a
    /// zero row appended when `T` is odd.
    pub fn pyramid(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let out_rows = x.rows.div_ceil(2);
        let mut data = x.data.clone();
        data.resize(out_rows * 2 * x.cols, S::zero());
        let m = Mat::from_vec(out_rows, 2 * x.cols, data);
        self.push(m, Op::Pyramid(a))
    }

    /// Element-wise product with a constant mask (dropout).
    pub fn mask(&mut self, a: Var, mask: Mat<S>) -> Var {
        let x = self.value(a);
        assert_eq!(x.shape(), mask.shape(), "mask shape");
        let data = x.data.iter().zip(&mask.data).map(|(&p, &q)| p * q).collect();
        let m = Mat::from_vec(x.rows, x.cols, data);
        self.push(m, Op::Mask(a, mask))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut m = x.clone();
        for r in 0..m.rows {
            softmax_in_place(m.row_mut(r));
        }
        self.push(m, Op::Softmax(a))
    }

    /// `-log softmax(logits)[target]` for a `1 x K` logit row.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Var {
        let z = self.value(logits);
        assert_eq!(z.rows, 1, "cross_entropy expects one row");
        let mut p = z.clone();
        softmax_in_place(&mut p.data);
        let loss = log_sum_exp(&z.data) - z.data[target];
        self.push(Mat::scalar(loss), Op::CrossEntropy(logits, p, target))
    }

    /// Sum over columns of the binary cross-entropy of `sigmoid(logits)`.
    pub fn sigmoid_bce(&mut self, logits: Var, targets: Vec<S>) -> Var {
        let z = self.value(logits);
        assert_eq!((1, targets.len()), z.shape(), "sigmoid_bce shape");
        let loss = z
            .data
            .iter()
            .zip(&targets)
            .map(|(&x, &t)| x.max(S::zero()) - x * t + (-x.abs()).exp().ln_1p())
            .sum();
        self.push(Mat::scalar(loss), Op::SigmoidBce(logits, targets))
    }

    /// Sum of same-shaped nodes.
    pub fn sum(&mut self, parts: &[Var]) -> Var {
        let mut m = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            m.add_assign(self.value(p));
        }
        self.push(m, Op::Sum(parts.to_vec()))
    }

    pub fn scale(&mut self, a: Var, k: S) -> Var {
        let mut m = self.value(a).clone();
        m.scale_assign(k);
        self.push(m, Op::Scale(a, k))
    }

    /// One LSTM step from pre-activations `gates` (`1 x 4H`, input / forget /
    /// cell / output order) and the previous cell (zero when `None`).
    /// Returns `1 x 2H` holding `[h, c]`.
    pub fn lstm_cell(&mut self, gates: Var, c_prev: Option<Var>) -> Var {
        let z = self.value(gates);
        assert_eq!(z.rows, 1, "lstm_cell expects one row");
        let h = z.cols / 4;
        let zero = vec![S::zero(); h];
        let cp = c_prev.map(|c| self.value(c).data.as_slice()).unwrap_or(&zero);
        let (hid, c, cache) = lstm_forward(&z.data, cp);
        let mut out = hid;
        out.extend(c);
        self.push(Mat::row_vector(out), Op::LstmCell(gates, c_prev, Box::new(cache)))
    }

    /// Whole-sequence LSTM with zero initial state. `xproj` is `T x 4H`
    /// (input projection plus bias), `wh` is the `H x 4H` recurrent matrix.
    /// With `reverse` the sequence is processed from the last row; the output
    /// `T x H` is always in input time order.
    pub fn lstm_seq(&mut self, xproj: Var, wh: Var, reverse: bool) -> Var {
        let x = self.value(xproj);
        let w = self.value(wh);
        let (t_len, h) = (x.rows, w.rows);
        assert_eq!(x.cols, 4 * h, "lstm_seq xproj width");
        assert_eq!(w.cols, 4 * h, "lstm_seq wh width");
        let mut out = Mat::zeros(t_len, h);
        let mut steps = Vec::with_capacity(t_len);
        let mut h_prev = vec![S::zero(); h];
        let mut c_prev = vec![S::zero(); h];
        let mut gates = vec![S::zero(); 4 * h];
        for n in 0..t_len {
            let t = if reverse { t_len - 1 - n } else { n };
            gates.copy_from_slice(x.row(t));
            for (k, &hv) in h_prev.iter().enumerate() {
                if hv == S::zero() {
                    continue;
                }
                for (gv, &wv) in gates.iter_mut().zip(w.row(k)) {
                    *gv += hv * wv;
                }
            }
            let (hid, c, cache) = lstm_forward(&gates, &c_prev);
            out.row_mut(t).copy_from_slice(&hid);
            steps.push(cache);
            h_prev = hid;
            c_prev = c;
        }
        self.push(out, Op::LstmSeq(xproj, wh, Box::new(SeqCache { reverse, steps })))
    }

    /// Back-propagates from the scalar `loss`; returns one optional gradient
    /// per parameter tensor (None when the parameter was not used).
    pub fn backward(&self, loss: Var) -> Vec<Option<Mat<S>>> {
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Mat<S>>> = vec![None; n];
        grads[loss.0] = Some(Mat::scalar(S::one()));
        let mut param_grads = vec![None; self.params.len()];

        fn acc<S: Scalar>(slot: &mut Option<Mat<S>>, g: Mat<S>) {
            match slot {
                Some(s) => s.add_assign(&g),
                None => *slot = Some(g),
            }
        }

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Const => {}
                Op::Param(p) => param_grads[*p] = Some(g),
                Op::MatMul(a, b) => {
                    let da = g.matmul_bt(self.value(*b));
                    let db = self.value(*a).matmul_at(&g);
                    acc(&mut grads[a.0], da);
                    acc(&mut grads[b.0], db);
                }
                Op::MatMulBt(a, b) => {
                    let da = g.matmul(self.value(*b));
                    let db = g.matmul_at(self.value(*a));
                    acc(&mut grads[a.0], da);
                    acc(&mut grads[b.0], db);
                }
                Op::Add(a, b) => {
                    acc(&mut grads[a.0], g.clone());
                    acc(&mut grads[b.0], g);
                }
                Op::AddRow(a, b) => {
                    let mut db = Mat::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (d, &x) in db.data.iter_mut().zip(g.row(r)) {
                            *d += x;
                        }
                    }
                    acc(&mut grads[a.0], g);
                    acc(&mut grads[b.0], db);
                }
                Op::Mul(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    let da = zip_map(&g, y, |g, y| g * y);
                    let db = zip_map(&g, x, |g, x| g * x);
                    acc(&mut grads[a.0], da);
                    acc(&mut grads[b.0], db);
                }
                Op::Sigmoid(a) => {
                    let y = self.nodes[i].value.as_ref().unwrap();
                    let da = zip_map(&g, y, |g, y| g * y * (S::one() - y));
                    acc(&mut grads[a.0], da);
                }
                Op::Tanh(a) => {
                    let y = self.nodes[i].value.as_ref().unwrap();
                    let da = zip_map(&g, y, |g, y| g * (S::one() - y * y));
                    acc(&mut grads[a.0], da);
                }
                Op::Cols(a, start) => {
                    let x = self.value(*a);
                    let mut da = Mat::zeros(x.rows, x.cols);
                    for r in 0..x.rows {
                        da.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                    }
                    acc(&mut grads[a.0], da);
                }
                Op::Row(a, r) => {
                    let x = self.value(*a);
                    let slot = &mut grads[a.0];
                    if slot.is_none() {
                        *slot = Some(Mat::zeros(x.rows, x.cols));
                    }
                    for (d, &v) in slot.as_mut().unwrap().row_mut(*r).iter_mut().zip(&g.data) {
                        *d += v;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let w = self.value(*p).cols;
                        let mut dp = Mat::zeros(g.rows, w);
                        for r in 0..g.rows {
                            dp.row_mut(r).copy_from_slice(&g.row(r)[at..at + w]);
                        }
                        at += w;
                        acc(&mut grads[p.0], dp);
                    }
                }
                Op::StackRows(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let x = self.value(*p);
                        let len = x.rows * x.cols;
                        let dp = Mat::from_vec(x.rows, x.cols, g.data[at..at + len].to_vec());
                        at += len;
                        acc(&mut grads[p.0], dp);
                    }
                }
                Op::Pyramid(a) => {
                    let x = self.value(*a);
                    let dp = Mat::from_vec(x.rows, x.cols, g.data[..x.rows * x.cols].to_vec());
                    acc(&mut grads[a.0], dp);
                }
                Op::Mask(a, m) => {
                    let da = zip_map(&g, m, |g, m| g * m);
                    acc(&mut grads[a.0], da);
                }
                Op::Softmax(a) => {
                    let y = self.nodes[i].value.as_ref().unwrap();
                    let mut da = Mat::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let dot: S = g.row(r).iter().zip(y.row(r)).map(|(&a, &b)| a * b).sum();
                        for ((d, &gy), &yy) in da.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                            *d = yy * (gy - dot);
                        }
                    }
                    acc(&mut grads[a.0], da);
                }
                Op::CrossEntropy(a, p, target) => {
                    let k = g.data[0];
                    let mut da = p.clone();
                    da.data[*target] -= S::one();
                    da.scale_assign(k);
                    acc(&mut grads[a.0], da);
                }
                Op::SigmoidBce(a, t) => {
                    let k = g.data[0];
                    let z = self.value(*a);
                    let data = z
                        .data
                        .iter()
                        .zip(t)
                        .map(|(&z, &t)| k * (sigmoid(z) - t))
                        .collect();
                    acc(&mut grads[a.0], Mat::from_vec(1, z.cols, data));
                }
                Op::Sum(parts) => {
                    for p in parts {
                        acc(&mut grads[p.0], g.clone());
                    }
                }
                Op::Scale(a, k) => {
                    let mut da = g;
                    da.scale_assign(*k);
                    acc(&mut grads[a.0], da);
                }
                Op::LstmCell(gates, c_prev, cache) => {
                    let h = g.cols / 2;
                    let (dz, dc_prev) = lstm_backward(cache, &g.data[..h], &g.data[h..]);
                    acc(&mut grads[gates.0], Mat::row_vector(dz));
                    if let Some(c) = c_prev {
                        acc(&mut grads[c.0], Mat::row_vector(dc_prev));
                    }
                }
                Op::LstmSeq(xproj, wh, cache) => {
                    let w = self.value(*wh);
                    let out = self.nodes[i].value.as_ref().unwrap();
                    let (t_len, h) = (out.rows, out.cols);
                    let mut dx = Mat::zeros(t_len, 4 * h);
                    let mut dw = Mat::zeros(h, 4 * h);
                    let mut dh_rec = vec![S::zero(); h];
                    let mut dc_rec = vec![S::zero(); h];
                    for n in (0..t_len).rev() {
                        let t = if cache.reverse { t_len - 1 - n } else { n };
                        let dh: Vec<S> = g.row(t).iter().zip(&dh_rec).map(|(&a, &b)| a + b).collect();
                        let (dz, dc_prev) = lstm_backward(&cache.steps[n], &dh, &dc_rec);
                        dx.row_mut(t).copy_from_slice(&dz);
                        if n > 0 {
                            let prev_t = if cache.reverse { t + 1 } else { t - 1 };
                            let h_prev = out.row(prev_t);
                            for (k, &hv) in h_prev.iter().enumerate() {
                                for (d, &z) in dw.row_mut(k).iter_mut().zip(&dz) {
                                    *d += hv * z;
                                }
                            }
                            for (k, d) in dh_rec.iter_mut().enumerate() {
                                *d = w.row(k).iter().zip(&dz).map(|(&a, &b)| a * b).sum();
                            }
                        }
                        dc_rec = dc_prev;
                    }
                    acc(&mut grads[xproj.0], dx);
                    acc(&mut grads[wh.0], dw);
                }
            }
        }
        param_grads
    }
}

fn zip_map<S: Scalar>(a: &Mat<S>, b: &Mat<S>, f: impl Fn(S, S) -> S) -> Mat<S> {
    debug_assert_eq!(a.shape(), b.shape());
    Mat::from_vec(
        a.rows,
        a.cols,
        a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    )
}

#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

pub fn log_sum_exp<S: Scalar>(x: &[S]) -> S {
    let m = x.iter().copied().fold(S::neg_infinity(), S::max);
    m + x.iter().map(|&v| (v - m).exp()).sum::<S>().ln()
}

pub fn softmax_in_place<S: Scalar>(x: &mut [S]) {
    let m = x.iter().copied().fold(S::neg_infinity(), S::max);
    let mut total = S::zero();
    for v in x.iter_mut() {
        *v = (*v - m).exp();
        total += *v;
    }
    for v in x.iter_mut() {
        *v /= total;
    }
}
