//! Reverse-mode differentiation over whole matrices.
//!
//! Each operation appends a node holding its output value and whatever it
//! needs for the backward pass. [`Tape::backward`] walks the nodes in
//! reverse, accumulating gradients into parents that require them.

use crate::model::matrix::{gemm, Layout, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Constant,
    Param(usize),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix,
        rstd: Vec<f64>,
    },
    Gelu(Var),
    Attention {
        qkv: Var,
        heads: usize,
        probs: Vec<Matrix>,
    },
    Scatter {
        visible: Var,
        token: Var,
        visible_pos: Vec<usize>,
        masked_pos: Vec<usize>,
    },
    MaskedMse {
        pred: Var,
        target: Matrix,
        rows: Vec<usize>,
    },
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

pub const LAYER_NORM_EPS: f64 = 1e-6;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of every parameter leaf reached from the root.
pub struct ParamGrads {
    pub grads: Vec<(usize, Matrix)>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// A trainable leaf; `index` identifies the parameter in the caller's
    /// store.
    pub fn param(&mut self, index: usize, value: Matrix) -> Var {
        self.push(value, Op::Param(index), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = crate::model::matrix::matmul(self.value(a), self.value(b));
        let rg = self.needs(a) || self.needs(b);
        self.push(out, Op::MatMul(a, b), rg)
    }

    /// `x + b` with the `1 x cols` row `b` broadcast over rows.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let (xv, bv) = (self.value(x), self.value(b));
        assert_eq!(bv.rows, 1);
        assert_eq!(bv.cols, xv.cols);
        let mut out = xv.clone();
        for r in 0..out.rows {
            out.row_mut(r)
                .iter_mut()
                .zip(&bv.data)
                .for_each(|(o, b)| *o += b);
        }
        let rg = self.needs(x) || self.needs(b);
        self.push(out, Op::AddBias(x, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        assert!(out.same_shape(self.value(b)));
        out.add_assign(self.value(b));
        let rg = self.needs(a) || self.needs(b);
        self.push(out, Op::Add(a, b), rg)
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` (`1 x cols`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (g, b) = (&self.value(gamma).data, &self.value(beta).data);
        let cols = xv.cols;
        let mut xhat = Matrix::zeros(xv.rows, cols);
        let mut out = Matrix::zeros(xv.rows, cols);
        let mut rstd = Vec::with_capacity(xv.rows);
        for r in 0..xv.rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd.push(rs);
            let xh = xhat.row_mut(r);
            for c in 0..cols {
                xh[c] = (row[c] - mean) * rs;
            }
            let o = out.row_mut(r);
            for c in 0..cols {
                o[c] = xh[c] * g[c] + b[c];
            }
        }
        let rg = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        )
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data.iter_mut().for_each(|v| {
            let x = *v;
            *v = 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh());
        });
        let rg = self.needs(x);
        self.push(out, Op::Gelu(x), rg)
    }

    /// Multi-head scaled dot-product self-attention on packed `[q | k | v]`
    /// rows (`n x 3F`); returns the concatenated heads (`n x F`).
    pub fn attention(&mut self, qkv: Var, heads: usize) -> Var {
        let qv = self.value(qkv);
        let (n, f3) = (qv.rows, qv.cols);
        assert_eq!(f3 % 3, 0);
        let f = f3 / 3;
        assert_eq!(f % heads, 0, "width must split evenly over heads");
        let dh = f / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Matrix::zeros(n, f);
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let mut p = Matrix::zeros(n, n);
            gemm(
                n,
                dh,
                n,
                scale,
                &qv.data,
                Layout {
                    offset: h * dh,
                    row_stride: f3,
                    col_stride: 1,
                },
                &qv.data,
                Layout {
                    offset: f + h * dh,
                    row_stride: 1,
                    col_stride: f3,
                },
                0.0,
                &mut p.data,
                Layout::row_major(n),
            );
            for r in 0..n {
                let row = p.row_mut(r);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                row.iter_mut().for_each(|v| {
                    *v = (*v - max).exp();
                    sum += *v;
                });
                row.iter_mut().for_each(|v| *v /= sum);
            }
            gemm(
                n,
                n,
                dh,
                1.0,
                &p.data,
                Layout::row_major(n),
                &qv.data,
                Layout {
                    offset: 2 * f + h * dh,
                    row_stride: f3,
                    col_stride: 1,
                },
                0.0,
                &mut out.data,
                Layout {
                    offset: h * dh,
                    row_stride: f,
                    col_stride: 1,
                },
            );
            probs.push(p);
        }
        let rg = self.needs(qkv);
        self.push(out, Op::Attention { qkv, heads, probs }, rg)
    }

    /// `n`-row matrix with `visible` rows placed at `visible_pos` and the
    /// single-row `token` copied to every `masked_pos`.
    pub fn scatter_rows(
        &mut self,
        visible: Var,
        token: Var,
        visible_pos: Vec<usize>,
        masked_pos: Vec<usize>,
    ) -> Var {
        let (vv, tv) = (self.value(visible), self.value(token));
        assert_eq!(tv.rows, 1);
        assert_eq!(vv.cols, tv.cols);
        assert_eq!(vv.rows, visible_pos.len());
        let n = visible_pos.len() + masked_pos.len();
        let mut out = Matrix::zeros(n, vv.cols);
        for (i, &p) in visible_pos.iter().enumerate() {
            out.row_mut(p).copy_from_slice(vv.row(i));
        }
        for &p in &masked_pos {
            out.row_mut(p).copy_from_slice(tv.row(0));
        }
        let rg = self.needs(visible) || self.needs(token);
        self.push(
            out,
            Op::Scatter {
                visible,
                token,
                visible_pos,
                masked_pos,
            },
            rg,
        )
    }

    /// Mean squared error over `rows` of `pred` against the matching rows
    /// of `target`; a `1 x 1` result.
    pub fn masked_mse(&mut self, pred: Var, target: &Matrix, rows: Vec<usize>) -> Var {
        let pv = self.value(pred);
        assert!(pv.same_shape(target));
        assert!(!rows.is_empty());
        let target = target.gather_rows(&rows);
        let mut acc = 0.0;
        for (i, &r) in rows.iter().enumerate() {
            for (p, t) in pv.row(r).iter().zip(target.row(i)) {
                acc += (p - t) * (p - t);
            }
        }
        let loss = acc / (rows.len() * pv.cols) as f64;
        let rg = self.needs(pred);
        self.push(
            Matrix::filled(1, 1, loss),
            Op::MaskedMse { pred, target, rows },
            rg,
        )
    }

    /// Back-propagates from the scalar `root` and returns parameter
    /// gradients in tape order.
    pub fn backward(&self, root: Var) -> ParamGrads {
        assert_eq!(self.value(root).len(), 1, "backward needs a scalar root");
        let mut grads: Vec<Option<Matrix>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(Matrix::filled(1, 1, 1.0));
        let mut out = Vec::new();
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant => {}
                Op::Param(idx) => out.push((*idx, g)),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.needs(*a) {
                        let mut da = Matrix::zeros(av.rows, av.cols);
                        gemm(
                            av.rows,
                            bv.cols,
                            av.cols,
                            1.0,
                            &g.data,
                            Layout::row_major(g.cols),
                            &bv.data,
                            Layout::transposed(bv.cols),
                            0.0,
                            &mut da.data,
                            Layout::row_major(av.cols),
                        );
                        accumulate(&mut grads, *a, da);
                    }
                    if self.needs(*b) {
                        let mut db = Matrix::zeros(bv.rows, bv.cols);
                        gemm(
                            av.cols,
                            av.rows,
                            bv.cols,
                            1.0,
                            &av.data,
                            Layout::transposed(av.cols),
                            &g.data,
                            Layout::row_major(g.cols),
                            0.0,
                            &mut db.data,
                            Layout::row_major(bv.cols),
                        );
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::AddBias(x, b) => {
                    if self.needs(*b) {
                        let mut db = Matrix::zeros(1, g.cols);
                        for r in 0..g.rows {
                            db.data.iter_mut().zip(g.row(r)).for_each(|(d, v)| *d += v);
                        }
                        accumulate(&mut grads, *b, db);
                    }
                    if self.needs(*x) {
                        accumulate(&mut grads, *x, g);
                    }
                }
                Op::Add(a, b) => match (self.needs(*a), self.needs(*b)) {
                    (true, true) => {
                        accumulate(&mut grads, *a, g.clone());
                        accumulate(&mut grads, *b, g);
                    }
                    (true, false) => accumulate(&mut grads, *a, g),
                    (false, true) => accumulate(&mut grads, *b, g),
                    (false, false) => {}
                },
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    let cols = g.cols;
                    let gv = &self.value(*gamma).data;
                    if self.needs(*gamma) || self.needs(*beta) {
                        let mut dg = Matrix::zeros(1, cols);
                        let mut dbeta = Matrix::zeros(1, cols);
                        for r in 0..g.rows {
                            let (gr, xr) = (g.row(r), xhat.row(r));
                            for c in 0..cols {
                                dg.data[c] += gr[c] * xr[c];
                                dbeta.data[c] += gr[c];
                            }
                        }
                        if self.needs(*gamma) {
                            accumulate(&mut grads, *gamma, dg);
                        }
                        if self.needs(*beta) {
                            accumulate(&mut grads, *beta, dbeta);
                        }
                    }
                    if self.needs(*x) {
                        let mut dx = Matrix::zeros(g.rows, cols);
                        let mut dxhat = vec![0.0; cols];
                        for (r, &rs) in rstd.iter().enumerate() {
                            let (gr, xr) = (g.row(r), xhat.row(r));
                            let mut mean_d = 0.0;
                            let mut mean_dx = 0.0;
                            for c in 0..cols {
                                dxhat[c] = gr[c] * gv[c];
                                mean_d += dxhat[c];
                                mean_dx += dxhat[c] * xr[c];
                            }
                            mean_d /= cols as f64;
                            mean_dx /= cols as f64;
                            let o = dx.row_mut(r);
                            for c in 0..cols {
                                o[c] = rs * (dxhat[c] - mean_d - xr[c] * mean_dx);
                            }
                        }
                        accumulate(&mut grads, *x, dx);
                    }
                }
                Op::Gelu(x) => {
                    let xv = self.value(*x);
                    let mut dx = g;
                    dx.data.iter_mut().zip(&xv.data).for_each(|(d, &x)| {
                        let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
                        let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                        *d *= 0.5 * (1.0 + t) + 0.5 * x * dt;
                    });
                    accumulate(&mut grads, *x, dx);
                }
                Op::Attention { qkv, heads, probs } => {
                    let qv = self.value(*qkv);
                    let (n, f3) = (qv.rows, qv.cols);
                    let f = f3 / 3;
                    let dh = f / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut dqkv = Matrix::zeros(n, f3);
                    let mut ds = Matrix::zeros(n, n);
                    for (h, p) in probs.iter().enumerate() {
                        let dout_h = Layout {
                            offset: h * dh,
                            row_stride: f,
                            col_stride: 1,
                        };
                        // dP = dO V^T
                        gemm(
                            n,
                            dh,
                            n,
                            1.0,
                            &g.data,
                            dout_h,
                            &qv.data,
                            Layout {
                                offset: 2 * f + h * dh,
                                row_stride: 1,
                                col_stride: f3,
                            },
                            0.0,
                            &mut ds.data,
                            Layout::row_major(n),
                        );
                        // dV = P^T dO
                        gemm(
                            n,
                            n,
                            dh,
                            1.0,
                            &p.data,
                            Layout::transposed(n),
                            &g.data,
                            dout_h,
                            1.0,
                            &mut dqkv.data,
                            Layout {
                                offset: 2 * f + h * dh,
                                row_stride: f3,
                                col_stride: 1,
                            },
                        );
                        // softmax backward, in place on dP
                        for r in 0..n {
                            let pr = p.row(r);
                            let dr = ds.row_mut(r);
                            let dot: f64 = pr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
                            dr.iter_mut()
                                .zip(pr)
                                .for_each(|(d, &pv)| *d = pv * (*d - dot));
                        }
                        // dQ = scale dS K
                        gemm(
                            n,
                            n,
                            dh,
                            scale,
                            &ds.data,
                            Layout::row_major(n),
                            &qv.data,
                            Layout {
                                offset: f + h * dh,
                                row_stride: f3,
                                col_stride: 1,
                            },
                            1.0,
                            &mut dqkv.data,
                            Layout {
                                offset: h * dh,
                                row_stride: f3,
                                col_stride: 1,
                            },
                        );
                        // dK = scale dS^T Q
                        gemm(
                            n,
                            n,
                            dh,
                            scale,
                            &ds.data,
                            Layout::transposed(n),
                            &qv.data,
                            Layout {
                                offset: h * dh,
                                row_stride: f3,
                                col_stride: 1,
                            },
                            1.0,
                            &mut dqkv.data,
                            Layout {
                                offset: f + h * dh,
                                row_stride: f3,
                                col_stride: 1,
                            },
                        );
                    }
                    accumulate(&mut grads, *qkv, dqkv);
                }
                Op::Scatter {
                    visible,
                    token,
                    visible_pos,
                    masked_pos,
                } => {
                    if self.needs(*visible) {
                        accumulate(&mut grads, *visible, g.gather_rows(visible_pos));
                    }
                    if self.needs(*token) {
                        let mut dt = Matrix::zeros(1, g.cols);
                        for &p in masked_pos {
                            dt.data.iter_mut().zip(g.row(p)).for_each(|(d, v)| *d += v);
                        }
                        accumulate(&mut grads, *token, dt);
                    }
                }
                Op::MaskedMse { pred, target, rows } => {
                    let pv = self.value(*pred);
                    let scale = 2.0 * g.data[0] / (rows.len() * pv.cols) as f64;
                    let mut dp = Matrix::zeros(pv.rows, pv.cols);
                    for (i, &r) in rows.iter().enumerate() {
                        let (pr, tr) = (pv.row(r), target.row(i));
                        let o = dp.row_mut(r);
                        for c in 0..pv.cols {
                            o[c] = scale * (pr[c] - tr[c]);
                        }
                    }
                    accumulate(&mut grads, *pred, dp);
                }
            }
        }
        ParamGrads { grads: out }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    fn random(rows: usize, cols: usize, seed: &mut u64) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| lcg(seed)).collect())
    }

    /// Checks every parameter entry against central differences of `build`.
    fn check(params: Vec<Matrix>, build: impl Fn(&mut Tape, &[Var]) -> Var, tol: f64) {
        let loss_of = |ps: &[Matrix]| {
            let mut t = Tape::new();
            let vars: Vec<Var> = ps
                .iter()
                .enumerate()
                .map(|(i, p)| t.param(i, p.clone()))
                .collect();
            let root = build(&mut t, &vars);
            t.value(root).data[0]
        };
        let mut t = Tape::new();
        let vars: Vec<Var> = params
            .iter()
            .enumerate()
            .map(|(i, p)| t.param(i, p.clone()))
            .collect();
        let root = build(&mut t, &vars);
        let mut analytic: Vec<Matrix> = params
            .iter()
            .map(|p| Matrix::zeros(p.rows, p.cols))
            .collect();
        for (i, g) in t.backward(root).grads {
            analytic[i].add_assign(&g);
        }
        let h = 1e-5;
        let mut ps = params.clone();
        for i in 0..ps.len() {
            for j in 0..ps[i].len() {
                let orig = ps[i].data[j];
                ps[i].data[j] = orig + h;
                let up = loss_of(&ps);
                ps[i].data[j] = orig - h;
                let down = loss_of(&ps);
                ps[i].data[j] = orig;
                let numeric = (up - down) / (2.0 * h);
                let a = analytic[i].data[j];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-7);
                assert!(rel < tol, "param {i}[{j}]: analytic {a} numeric {numeric}");
            }
        }
    }

    #[test]
    fn linear_projection_gradients() {
        let mut s = 1;
        let x = random(5, 4, &mut s);
        let target = random(5, 3, &mut s);
        check(
            vec![random(4, 3, &mut s), random(1, 3, &mut s)],
            |t, p| {
                let xc = t.constant(x.clone());
                let y = t.matmul(xc, p[0]);
                let y = t.add_bias(y, p[1]);
                t.masked_mse(y, &target, vec![0, 2, 3])
            },
            1e-8,
        );
    }

    #[test]
    fn layer_norm_and_gelu_gradients() {
        let mut s = 2;
        let target = random(4, 6, &mut s);
        check(
            vec![
                random(4, 6, &mut s),
                random(1, 6, &mut s),
                random(1, 6, &mut s),
            ],
            |t, p| {
                let y = t.layer_norm(p[0], p[1], p[2]);
                let y = t.gelu(y);
                t.masked_mse(y, &target, vec![0, 1, 2, 3])
            },
            1e-6,
        );
    }

    #[test]
    fn attention_gradients() {
        let mut s = 3;
        let target = random(5, 4, &mut s);
        check(
            vec![random(5, 12, &mut s)],
            |t, p| {
                let y = t.attention(p[0], 2);
                t.masked_mse(y, &target, vec![1, 3, 4])
            },
            1e-6,
        );
    }

    #[test]
    fn scatter_gradients_and_shared_token() {
        let mut s = 4;
        let target = random(5, 3, &mut s);
        check(
            vec![random(2, 3, &mut s), random(1, 3, &mut s)],
            |t, p| {
                let y = t.scatter_rows(p[0], p[1], vec![4, 1], vec![0, 2, 3]);
                let y2 = t.add(y, y);
                t.masked_mse(y2, &target, vec![0, 1, 2, 3, 4])
            },
            1e-7,
        );
        let mut t = Tape::new();
        let v = t.param(0, Matrix::zeros(1, 2));
        let tok = t.param(1, Matrix::from_vec(1, 2, vec![0.5, -1.5]));
        let y = t.scatter_rows(v, tok, vec![1], vec![0, 2]);
        assert_eq!(t.value(y).row(0), t.value(y).row(2));
        assert_eq!(t.value(y).row(0), &[0.5, -1.5]);
    }

    #[test]
    fn mse_of_perfect_prediction_is_zero() {
        let mut t = Tape::new();
        let m = Matrix::filled(3, 2, 0.25);
        let p = t.param(0, m.clone());
        let l = t.masked_mse(p, &m, vec![0, 2]);
        assert_eq!(t.value(l).data[0], 0.0);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(Matrix::filled(2, 2, 1.0));
        let w = t.param(7, Matrix::filled(2, 2, 0.5));
        let y = t.matmul(c, w);
        let l = t.masked_mse(y, &Matrix::zeros(2, 2), vec![0]);
        let g = t.backward(l);
        assert_eq!(g.grads.len(), 1);
        assert_eq!(g.grads[0].0, 7);
    }
}
