//! Fused layer operations with hand-written backward passes.
//!
//! Image-like tensors use the `[batch, channels, time, freq]` layout.
//! Sequence tensors are 2-D `[batch * time, features]` with row `b * T + t`.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis, Ix1, Ix2, Ix4, IxDyn};

use crate::graph::{sigmoid, Graph, Tensor, Var};

/// How batch normalization obtains its statistics.
#[derive(Debug, Clone)]
pub enum BatchNormMode {
    /// Normalize with statistics of the current batch.
    Train,
    /// Normalize with stored running statistics.
    Eval {
        running_mean: Array1<f64>,
        running_var: Array1<f64>,
    },
}

/// Per-channel batch statistics observed in training mode.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Array1<f64>,
    /// Unbiased variance, as used for running-average updates.
    pub var: Array1<f64>,
}

/// Parameters of one direction of an LSTM layer. Gate order is
/// input, forget, cell, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights {
    /// `[input, 4H]`
    pub w_ih: Var,
    /// `[H, 4H]`
    pub w_hh: Var,
    /// `[4H]`
    pub bias: Var,
}

const BN_EPS: f64 = 1e-5;

fn dims4(t: &Tensor) -> (usize, usize, usize, usize) {
    let s = t.shape();
    assert_eq!(s.len(), 4, "expected [B, C, T, F], got {s:?}");
    (s[0], s[1], s[2], s[3])
}

/// Unfold one batch item into a `[Cin*KT*KF, T*F]` patch matrix.
fn im2col(x: &[f64], cin: usize, t: usize, f: usize, kt: usize, kf: usize) -> Array2<f64> {
    let (pt, pf) = (kt / 2, kf / 2);
    let tf = t * f;
    // Every element is written below, padding included, so the buffer
    // skips zero initialization.
    let mut out = Vec::with_capacity(cin * kt * kf * tf);
    for ci in 0..cin {
        let plane = &x[ci * tf..(ci + 1) * tf];
        for dt in 0..kt {
            for df in 0..kf {
                let lo = pf.saturating_sub(df);
                let hi = (f + pf).saturating_sub(df).min(f);
                for ti in 0..t {
                    let ts = ti as isize + dt as isize - pt as isize;
                    if ts < 0 || ts >= t as isize || lo >= hi {
                        out.extend(std::iter::repeat_n(0.0, f));
                        continue;
                    }
                    let src = &plane[ts as usize * f..(ts as usize + 1) * f];
                    out.extend(std::iter::repeat_n(0.0, lo));
                    out.extend_from_slice(&src[lo + df - pf..hi + df - pf]);
                    out.extend(std::iter::repeat_n(0.0, f - hi));
                }
            }
        }
    }
    Array2::from_shape_vec((cin * kt * kf, tf), out).expect("im2col shape")
}

/// Fold a patch-matrix gradient back onto one batch item.
fn col2im(cols: ArrayView2<f64>, dx: &mut [f64], cin: usize, t: usize, f: usize, kt: usize, kf: usize) {
    let (pt, pf) = (kt / 2, kf / 2);
    let tf = t * f;
    let cols = cols.as_standard_layout();
    let src_all = cols.as_slice().unwrap();
    for ci in 0..cin {
        let plane = &mut dx[ci * tf..(ci + 1) * tf];
        for dt in 0..kt {
            for df in 0..kf {
                let row = (ci * kt + dt) * kf + df;
                let src = &src_all[row * tf..(row + 1) * tf];
                for ti in 0..t {
                    let ts = ti as isize + dt as isize - pt as isize;
                    if ts < 0 || ts >= t as isize {
                        continue;
                    }
                    let d = &mut plane[ts as usize * f..(ts as usize + 1) * f];
                    let s = &src[ti * f..(ti + 1) * f];
                    let lo = pf.saturating_sub(df);
                    let hi = (f + pf).saturating_sub(df).min(f);
                    if lo < hi {
                        for (d, s) in d[lo + df - pf..hi + df - pf].iter_mut().zip(&s[lo..hi]) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
}

impl Graph {
    /// Same-padded 2-D convolution. `weight` is `[Cout, Cin, KT, KF]` with
    /// odd kernel sizes; `bias` is `[Cout]`.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Var) -> Var {
        let (b, cin, t, f) = dims4(self.value(x));
        let ws = self.value(weight).shape().to_vec();
        assert_eq!(ws.len(), 4);
        let (cout, kt, kf) = (ws[0], ws[2], ws[3]);
        assert_eq!(ws[1], cin, "conv input channels");
        assert!(kt % 2 == 1 && kf % 2 == 1, "odd kernels only");
        let k = cin * kt * kf;

        let xs = self.value(x).as_standard_layout().into_owned();
        let w2 = self
            .value(weight)
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((cout, k))
            .unwrap();
        let bvec = self.value(bias).view().into_dimensionality::<Ix1>().unwrap().to_owned();
        let xsl = xs.as_slice().unwrap();
        let item = cin * t * f;
        let mut out = Tensor::zeros(IxDyn(&[b, cout, t, f]));
        {
            let o = out.as_slice_mut().unwrap();
            for bi in 0..b {
                let cols = im2col(&xsl[bi * item..(bi + 1) * item], cin, t, f, kt, kf);
                let y = w2.dot(&cols);
                let dst = &mut o[bi * cout * t * f..(bi + 1) * cout * t * f];
                for co in 0..cout {
                    let row = y.row(co);
                    let d = &mut dst[co * t * f..(co + 1) * t * f];
                    for (d, &v) in d.iter_mut().zip(row.iter()) {
                        *d = v + bvec[co];
                    }
                }
            }
        }
        self.push_op(
            out,
            &[x, weight, bias],
            Box::new(move |ctx| {
                let g = ctx.grad.as_standard_layout();
                let gs = g.as_slice().unwrap();
                let xs = ctx.inputs[0].as_standard_layout();
                let xsl = xs.as_slice().unwrap();
                let w2 = ctx.inputs[1]
                    .as_standard_layout()
                    .into_owned()
                    .into_shape_with_order((cout, k))
                    .unwrap();
                let mut dx = ctx.needs_grad[0].then(|| vec![0.0; b * item]);
                let mut dw = Array2::<f64>::zeros((cout, k));
                let mut db = Array1::<f64>::zeros(cout);
                for bi in 0..b {
                    let gb = ArrayView2::from_shape(
                        (cout, t * f),
                        &gs[bi * cout * t * f..(bi + 1) * cout * t * f],
                    )
                    .unwrap();
                    db += &gb.sum_axis(Axis(1));
                    if ctx.needs_grad[1] {
                        let cols = im2col(&xsl[bi * item..(bi + 1) * item], cin, t, f, kt, kf);
                        dw += &gb.dot(&cols.t());
                    }
                    if let Some(dx) = dx.as_mut() {
                        let dcols = w2.t().dot(&gb);
                        col2im(dcols.view(), &mut dx[bi * item..(bi + 1) * item], cin, t, f, kt, kf);
                    }
                }
                vec![
                    dx.map(|d| Tensor::from_shape_vec(IxDyn(&[b, cin, t, f]), d).unwrap()),
                    Some(dw.into_shape_with_order(IxDyn(&[cout, cin, kt, kf])).unwrap()),
                    Some(db.into_dyn()),
                ]
            }),
        )
    }

    /// Per-channel batch normalization of a `[B, C, T, F]` tensor. In
    /// training mode the observed batch statistics are returned so callers
    /// can maintain running averages.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: &BatchNormMode,
    ) -> (Var, Option<BatchStats>) {
        let (b, c, t, f) = dims4(self.value(x));
        let xv = self.value(x).view().into_dimensionality::<Ix4>().unwrap();
        let gam = self.value(gamma).view().into_dimensionality::<Ix1>().unwrap().to_owned();
        let bet = self.value(beta).view().into_dimensionality::<Ix1>().unwrap().to_owned();
        let n = (b * t * f) as f64;

        let (mean, var, stats) = match mode {
            BatchNormMode::Train => {
                let mut mean = Array1::<f64>::zeros(c);
                let mut var = Array1::<f64>::zeros(c);
                for ci in 0..c {
                    let ch = xv.slice(s![.., ci, .., ..]);
                    let m = ch.sum() / n;
                    let v = ch.fold(0.0, |acc, &x| acc + (x - m) * (x - m)) / n;
                    mean[ci] = m;
                    var[ci] = v;
                }
                let unbiased = if n > 1.0 { &var * (n / (n - 1.0)) } else { var.clone() };
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: unbiased,
                };
                (mean, var, Some(stats))
            }
            BatchNormMode::Eval {
                running_mean,
                running_var,
            } => (running_mean.clone(), running_var.clone(), None),
        };
        let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());

        let mut xhat = xv.to_owned();
        for ci in 0..c {
            let (m, is) = (mean[ci], inv_std[ci]);
            xhat.slice_mut(s![.., ci, .., ..]).mapv_inplace(|x| (x - m) * is);
        }
        let mut y = xhat.clone();
        for ci in 0..c {
            let (g, bb) = (gam[ci], bet[ci]);
            y.slice_mut(s![.., ci, .., ..]).mapv_inplace(|x| x * g + bb);
        }
        let train = matches!(mode, BatchNormMode::Train);
        let var = self.push_op(
            y.into_dyn(),
            &[x, gamma, beta],
            Box::new(move |ctx| {
                let dy = ctx.grad.view().into_dimensionality::<Ix4>().unwrap();
                let gam = ctx.inputs[1].view().into_dimensionality::<Ix1>().unwrap();
                let mut dgamma = Array1::<f64>::zeros(c);
                let mut dbeta = Array1::<f64>::zeros(c);
                let mut dx = ndarray::Array4::<f64>::zeros((b, c, t, f));
                for ci in 0..c {
                    let dyc = dy.slice(s![.., ci, .., ..]);
                    let xh = xhat.slice(s![.., ci, .., ..]);
                    let sum_dy = dyc.sum();
                    let sum_dy_xh = ndarray::Zip::from(&dyc)
                        .and(&xh)
                        .fold(0.0, |acc, &d, &x| acc + d * x);
                    dgamma[ci] = sum_dy_xh;
                    dbeta[ci] = sum_dy;
                    if ctx.needs_grad[0] {
                        let g = gam[ci];
                        let is = inv_std[ci];
                        let mut dxc = dx.slice_mut(s![.., ci, .., ..]);
                        if train {
                            // dx = g*is/N * (N*dy - sum(dy) - xhat*sum(dy*xhat))
                            ndarray::Zip::from(&mut dxc)
                                .and(&dyc)
                                .and(&xh)
                                .for_each(|o, &d, &x| {
                                    *o = g * is / n * (n * d - sum_dy - x * sum_dy_xh);
                                });
                        } else {
                            ndarray::Zip::from(&mut dxc).and(&dyc).for_each(|o, &d| {
                                *o = g * is * d;
                            });
                        }
                    }
                }
                vec![
                    ctx.needs_grad[0].then(|| dx.into_dyn()),
                    Some(dgamma.into_dyn()),
                    Some(dbeta.into_dyn()),
                ]
            }),
        );
        (var, stats)
    }

    /// Max-pool by `k` along the frequency axis only; a trailing remainder
    /// shorter than `k` is dropped.
    pub fn max_pool_freq(&mut self, x: Var, k: usize) -> Var {
        let (b, c, t, f) = dims4(self.value(x));
        let fo = f / k;
        assert!(fo > 0, "frequency axis shorter than pool size");
        let xs = self.value(x).as_standard_layout().into_owned();
        let xsl = xs.as_slice().unwrap();
        let rows = b * c * t;
        let mut out = Vec::with_capacity(rows * fo);
        let mut arg = Vec::with_capacity(rows * fo);
        for r in 0..rows {
            let line = &xsl[r * f..(r + 1) * f];
            for fi in 0..fo {
                let mut best = f64::NEG_INFINITY;
                let mut bj = fi * k;
                for (j, &v) in line.iter().enumerate().skip(fi * k).take(k) {
                    if v > best {
                        best = v;
                        bj = j;
                    }
                }
                out.push(best);
                arg.push(r * f + bj);
            }
        }
        let out = Tensor::from_shape_vec(IxDyn(&[b, c, t, fo]), out).unwrap();
        self.push_op(
            out,
            &[x],
            Box::new(move |ctx| {
                let g = ctx.grad.as_standard_layout();
                let mut dx = vec![0.0; b * c * t * f];
                for (&a, &gv) in arg.iter().zip(g.iter()) {
                    dx[a] += gv;
                }
                vec![Some(Tensor::from_shape_vec(IxDyn(&[b, c, t, f]), dx).unwrap())]
            }),
        )
    }

    /// `[B, C, T, F]` → `[B*T, C*F]`.
    pub fn channels_to_sequence(&mut self, x: Var) -> Var {
        let (b, c, t, f) = dims4(self.value(x));
        let value = self
            .value(x)
            .view()
            .permuted_axes(IxDyn(&[0, 2, 1, 3]))
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order(IxDyn(&[b * t, c * f]))
            .unwrap();
        self.push_op(
            value,
            &[x],
            Box::new(move |ctx| {
                let g = ctx
                    .grad
                    .as_standard_layout()
                    .into_owned()
                    .into_shape_with_order(IxDyn(&[b, t, c, f]))
                    .unwrap();
                let dx = g
                    .permuted_axes(IxDyn(&[0, 2, 1, 3]))
                    .as_standard_layout()
                    .into_owned();
                vec![Some(dx)]
            }),
        )
    }

    /// Bidirectional LSTM over `[B*T, I]`, returning `[B*T, 2H]` with the
    /// forward direction in the first `H` columns. Initial states are zero.
    pub fn bilstm(&mut self, x: Var, batch: usize, steps: usize, fwd: LstmWeights, bwd: LstmWeights) -> Var {
        let h = self.value(fwd.w_hh).shape()[0];
        let xv = self.value(x).view().into_dimensionality::<Ix2>().unwrap().to_owned();
        assert_eq!(xv.nrows(), batch * steps, "bilstm row count");
        let f_tape = LstmTape::forward(
            &xv,
            batch,
            steps,
            &as2(self.value(fwd.w_ih)),
            &as2(self.value(fwd.w_hh)),
            &as1(self.value(fwd.bias)),
            false,
        );
        let b_tape = LstmTape::forward(
            &xv,
            batch,
            steps,
            &as2(self.value(bwd.w_ih)),
            &as2(self.value(bwd.w_hh)),
            &as1(self.value(bwd.bias)),
            true,
        );
        let mut out = Array2::<f64>::zeros((batch * steps, 2 * h));
        for bi in 0..batch {
            for ti in 0..steps {
                let r = bi * steps + ti;
                out.slice_mut(s![r, ..h]).assign(&f_tape.hs.slice(s![bi, ti, ..]));
                out.slice_mut(s![r, h..]).assign(&b_tape.hs.slice(s![bi, ti, ..]));
            }
        }
        self.push_op(
            out.into_dyn(),
            &[x, fwd.w_ih, fwd.w_hh, fwd.bias, bwd.w_ih, bwd.w_hh, bwd.bias],
            Box::new(move |ctx| {
                let g = ctx.grad.view().into_dimensionality::<Ix2>().unwrap();
                let x = ctx.inputs[0].view().into_dimensionality::<Ix2>().unwrap();
                let gf = g.slice(s![.., ..h]);
                let gb = g.slice(s![.., h..]);
                let (dxf, dwif, dwhf, dbf) =
                    f_tape.backward(&x, gf, &as2(ctx.inputs[1]), &as2(ctx.inputs[2]));
                let (dxb, dwib, dwhb, dbb) =
                    b_tape.backward(&x, gb, &as2(ctx.inputs[4]), &as2(ctx.inputs[5]));
                vec![
                    ctx.needs_grad[0].then(|| (dxf + dxb).into_dyn()),
                    Some(dwif.into_dyn()),
                    Some(dwhf.into_dyn()),
                    Some(dbf.into_dyn()),
                    Some(dwib.into_dyn()),
                    Some(dwhb.into_dyn()),
                    Some(dbb.into_dyn()),
                ]
            }),
        )
    }
}

fn as2(t: &Tensor) -> Array2<f64> {
    t.view().into_dimensionality::<Ix2>().unwrap().to_owned()
}

fn as1(t: &Tensor) -> Array1<f64> {
    t.view().into_dimensionality::<Ix1>().unwrap().to_owned()
}

/// Saved activations of one LSTM direction, indexed `[b, t, ..]` in
/// original time order.
struct LstmTape {
    batch: usize,
    steps: usize,
    hidden: usize,
    reverse: bool,
    /// Post-activation gates `[B, T, 4H]`.
    gates: Array3<f64>,
    cells: Array3<f64>,
    hs: Array3<f64>,
}

impl LstmTape {
    fn forward(
        x: &Array2<f64>,
        batch: usize,
        steps: usize,
        w_ih: &Array2<f64>,
        w_hh: &Array2<f64>,
        bias: &Array1<f64>,
        reverse: bool,
    ) -> Self {
        let hidden = w_hh.nrows();
        let xw = (x.dot(w_ih) + bias)
            .into_shape_with_order((batch, steps, 4 * hidden))
            .unwrap();
        let mut gates = Array3::<f64>::zeros((batch, steps, 4 * hidden));
        let mut cells = Array3::<f64>::zeros((batch, steps, hidden));
        let mut hs = Array3::<f64>::zeros((batch, steps, hidden));
        let mut h_prev = Array2::<f64>::zeros((batch, hidden));
        let mut c_prev = Array2::<f64>::zeros((batch, hidden));
        for k in 0..steps {
            let t = if reverse { steps - 1 - k } else { k };
            let z = &xw.slice(s![.., t, ..]) + &h_prev.dot(w_hh);
            for bi in 0..batch {
                for j in 0..hidden {
                    let i_g = sigmoid(z[[bi, j]]);
                    let f_g = sigmoid(z[[bi, hidden + j]]);
                    let g_g = z[[bi, 2 * hidden + j]].tanh();
                    let o_g = sigmoid(z[[bi, 3 * hidden + j]]);
                    let c = f_g * c_prev[[bi, j]] + i_g * g_g;
                    let hv = o_g * c.tanh();
                    gates[[bi, t, j]] = i_g;
                    gates[[bi, t, hidden + j]] = f_g;
                    gates[[bi, t, 2 * hidden + j]] = g_g;
                    gates[[bi, t, 3 * hidden + j]] = o_g;
                    cells[[bi, t, j]] = c;
                    hs[[bi, t, j]] = hv;
                    c_prev[[bi, j]] = c;
                    h_prev[[bi, j]] = hv;
                }
            }
        }
        LstmTape {
            batch,
            steps,
            hidden,
            reverse,
            gates,
            cells,
            hs,
        }
    }

    /// Returns `(dx, dw_ih, dw_hh, dbias)` for an upstream gradient on the
    /// hidden outputs (`[B*T, H]`).
    fn backward(
        &self,
        x: &ArrayView2<f64>,
        dh_out: ArrayView2<f64>,
        w_ih: &Array2<f64>,
        w_hh: &Array2<f64>,
    ) -> (Array2<f64>, Array2<f64>, Array2<f64>, Array1<f64>) {
        let (batch, steps, hd) = (self.batch, self.steps, self.hidden);
        let mut dz_all = Array3::<f64>::zeros((batch, steps, 4 * hd));
        let mut dw_hh = Array2::<f64>::zeros((hd, 4 * hd));
        let mut dh_next = Array2::<f64>::zeros((batch, hd));
        let mut dc_next = Array2::<f64>::zeros((batch, hd));
        let w_hh_t = w_hh.t();
        for k in (0..steps).rev() {
            let t = if self.reverse { steps - 1 - k } else { k };
            // Previous step in processing order.
            let prev = if k == 0 {
                None
            } else if self.reverse {
                Some(t + 1)
            } else {
                Some(t - 1)
            };
            let mut dz = Array2::<f64>::zeros((batch, 4 * hd));
            for bi in 0..batch {
                for j in 0..hd {
                    let dh = dh_out[[bi * steps + t, j]] + dh_next[[bi, j]];
                    let i_g = self.gates[[bi, t, j]];
                    let f_g = self.gates[[bi, t, hd + j]];
                    let g_g = self.gates[[bi, t, 2 * hd + j]];
                    let o_g = self.gates[[bi, t, 3 * hd + j]];
                    let c = self.cells[[bi, t, j]];
                    let tc = c.tanh();
                    let c_prev = prev.map_or(0.0, |p| self.cells[[bi, p, j]]);
                    let dc = dh * o_g * (1.0 - tc * tc) + dc_next[[bi, j]];
                    dz[[bi, j]] = dc * g_g * i_g * (1.0 - i_g);
                    dz[[bi, hd + j]] = dc * c_prev * f_g * (1.0 - f_g);
                    dz[[bi, 2 * hd + j]] = dc * i_g * (1.0 - g_g * g_g);
                    dz[[bi, 3 * hd + j]] = dh * tc * o_g * (1.0 - o_g);
                    dc_next[[bi, j]] = dc * f_g;
                }
            }
            if let Some(p) = prev {
                let h_prev = self.hs.slice(s![.., p, ..]);
                dw_hh += &h_prev.t().dot(&dz);
            }
            dh_next = dz.dot(&w_hh_t);
            dz_all.slice_mut(s![.., t, ..]).assign(&dz);
        }
        let dz2 = dz_all.into_shape_with_order((batch * steps, 4 * hd)).unwrap();
        let dw_ih = x.t().dot(&dz2);
        let dbias = dz2.sum_axis(Axis(0));
        let dx = dz2.dot(&w_ih.t());
        (dx, dw_ih, dw_hh, dbias)
    }
}
