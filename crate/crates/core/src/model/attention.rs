//! Local additive attention over a window of `2D + 1` frames.
//!
//! For a query `q_t` and an attended sequence `s`, the score of frame
//! `t' ∈ [t-D, t+D]` is `v · tanh(W_q q_t + W_s s_t' + b)`. Frames outside
//! the sequence are masked out before the softmax, so weights over the
//! in-range frames always sum to one. The context is `Σ a_t' s_t'`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Ix1, Ix2};
use oaf_autograd::{sigmoid, Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::AttentionTarget;
use crate::arrays::{self, NamedArray};
use crate::error::{validation, Result};

/// Weights of one recording, `T × (2D + 1)`; column `k` holds frame
/// `t + k - D`. Masked positions carry weight 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionMap {
    pub weights: Array2<f64>,
    pub d: usize,
    pub target: AttentionTarget,
}

impl AttentionMap {
    pub fn n_frames(&self) -> usize {
        self.weights.nrows()
    }

    /// Largest deviation of a row sum from 1.
    pub fn max_row_error(&self) -> f64 {
        self.weights
            .rows()
            .into_iter()
            .map(|r| (r.sum() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Absolute frame index of the most attended position in each row.
    pub fn argmax_frames(&self) -> Vec<usize> {
        self.weights
            .rows()
            .into_iter()
            .enumerate()
            .map(|(t, r)| {
                let k = r
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(k, _)| k)
                    .unwrap_or(self.d);
                (t + k).saturating_sub(self.d)
            })
            .collect()
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let target = match self.target {
            AttentionTarget::None => 0.0,
            AttentionTarget::Spec => 1.0,
            AttentionTarget::Onset => 2.0,
            AttentionTarget::Feat => 3.0,
        };
        arrays::write_npz(
            path,
            &[
                ("header", NamedArray::F64(ndarray::arr1(&[self.d as f64, target]).into_dyn())),
                ("weights", NamedArray::F64(self.weights.clone().into_dyn())),
            ],
        )
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let header = arrays::read_f64(path, "header")?;
        let weights = arrays::read_f64_2d(path, "weights")?;
        let target = match header.get(1).copied().unwrap_or(-1.0) as i64 {
            0 => AttentionTarget::None,
            1 => AttentionTarget::Spec,
            2 => AttentionTarget::Onset,
            3 => AttentionTarget::Feat,
            _ => return Err(validation(format!("{}: bad attention header", path.display()))),
        };
        let d = header[0] as usize;
        if weights.ncols() != 2 * d + 1 {
            return Err(validation(format!("{}: window width does not match D", path.display())));
        }
        Ok(Self { weights, d, target })
    }
}

/// Plain-array copy of the scoring parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    /// `[query, A]`
    pub w_q: Array2<f64>,
    /// `[seq, A]`
    pub w_s: Array2<f64>,
    pub b: Array1<f64>,
    pub v: Array1<f64>,
}

/// Attention for a single frame. `window` holds the `2D + 1` candidate rows
/// and `mask[k]` says whether row `k` lies inside the sequence.
pub fn local_attention(
    query: ArrayView1<f64>,
    window: ArrayView2<f64>,
    mask: &[bool],
    p: &AttentionParams,
) -> Result<(Array1<f64>, Array1<f64>)> {
    if window.nrows().is_multiple_of(2) || mask.len() != window.nrows() {
        return Err(validation("attention window must have 2D+1 rows and a matching mask"));
    }
    if !mask.iter().any(|&m| m) {
        return Err(validation("attention window has no in-range frame"));
    }
    if query.len() != p.w_q.nrows() || window.ncols() != p.w_s.nrows() {
        return Err(validation("attention parameter shapes do not match inputs"));
    }
    let pq = query.dot(&p.w_q) + &p.b;
    let scores: Vec<f64> = window
        .rows()
        .into_iter()
        .zip(mask)
        .map(|(row, &m)| {
            if m {
                (&pq + &row.dot(&p.w_s)).mapv(f64::tanh).dot(&p.v)
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let a = softmax(&scores);
    let ctx = Array1::from(a.clone()).dot(&window);
    Ok((Array1::from(a), ctx))
}

/// `sigmoid([h ⊕ ctx] · w + b)`; `ctx` is omitted without attention.
pub fn attended_classify(
    h: ArrayView1<f64>,
    ctx: Option<ArrayView1<f64>>,
    w: ArrayView2<f64>,
    b: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    let input: Array1<f64> = match ctx {
        Some(c) => h.iter().chain(c.iter()).copied().collect(),
        None => h.to_owned(),
    };
    if input.len() != w.nrows() || b.len() != w.ncols() {
        return Err(validation(format!(
            "classifier expects {} inputs, got {}",
            w.nrows(),
            input.len()
        )));
    }
    Ok((input.dot(&w) + b).mapv(sigmoid))
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores
        .iter()
        .map(|&e| if e == f64::NEG_INFINITY { 0.0 } else { (e - max).exp() })
        .collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn view2(t: &Tensor) -> ArrayView2<'_, f64> {
    t.view().into_dimensionality::<Ix2>().expect("2-D tensor")
}

fn view1(t: &Tensor) -> ArrayView1<'_, f64> {
    t.view().into_dimensionality::<Ix1>().expect("1-D tensor")
}

/// Projections shared by the forward and backward passes.
struct Projected {
    pq: Array2<f64>,
    ps: Array2<f64>,
}

fn project(q: ArrayView2<f64>, s: ArrayView2<f64>, wq: ArrayView2<f64>, ws: ArrayView2<f64>, b: ArrayView1<f64>) -> Projected {
    Projected {
        pq: q.dot(&wq) + b,
        ps: s.dot(&ws),
    }
}

#[derive(Clone, Copy)]
struct Layout {
    steps: usize,
    d: usize,
}

impl Layout {
    /// Row of the attended frame for window slot `k` of row `r`, if any.
    fn source(&self, r: usize, k: usize) -> Option<usize> {
        let t = r % self.steps;
        let u = (t + k).checked_sub(self.d)?;
        (u < self.steps).then(|| r - t + u)
    }
}

/// Fused attention over `[B*T, ·]` sequences. Returns the `[B*T, S]`
/// context and the `[B*T, 2D+1]` weights. Windows never cross batch items.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_op(
    g: &mut Graph,
    query: Var,
    seq: Var,
    w_q: Var,
    w_s: Var,
    b: Var,
    v: Var,
    batch: usize,
    steps: usize,
    d: usize,
) -> (Var, Array2<f64>) {
    let lay = Layout { steps, d };
    let width = 2 * d + 1;
    let s_val = view2(g.value(seq));
    let n = s_val.nrows();
    assert_eq!(n, batch * steps, "attention row count");
    let proj = project(view2(g.value(query)), s_val, view2(g.value(w_q)), view2(g.value(w_s)), view1(g.value(b)));
    let vv = view1(g.value(v)).to_owned();
    let a_dim = vv.len();

    let mut weights = Array2::<f64>::zeros((n, width));
    let mut ctx = Array2::<f64>::zeros((n, s_val.ncols()));
    let mut scores = vec![0.0; width];
    for r in 0..n {
        let pq = proj.pq.row(r);
        for (k, sc) in scores.iter_mut().enumerate() {
            *sc = match lay.source(r, k) {
                Some(u) => {
                    let ps = proj.ps.row(u);
                    (0..a_dim).map(|i| vv[i] * (pq[i] + ps[i]).tanh()).sum()
                }
                None => f64::NEG_INFINITY,
            };
        }
        let a = softmax(&scores);
        for (k, &ak) in a.iter().enumerate() {
            weights[[r, k]] = ak;
            if let Some(u) = lay.source(r, k) {
                if ak != 0.0 {
                    ctx.row_mut(r).scaled_add(ak, &s_val.row(u));
                }
            }
        }
    }

    let saved = weights.clone();
    let out = g.push_op(
        ctx.into_dyn(),
        &[query, seq, w_q, w_s, b, v],
        Box::new(move |c| {
            let gctx = view2(c.grad);
            let q = view2(c.inputs[0]);
            let s_in = view2(c.inputs[1]);
            let wq = view2(c.inputs[2]);
            let ws = view2(c.inputs[3]);
            let vv = view1(c.inputs[5]);
            let proj = project(q, s_in, wq, ws, view1(c.inputs[4]));
            let a_dim = vv.len();
            let n = s_in.nrows();

            let mut g_s = Array2::<f64>::zeros(s_in.raw_dim());
            let mut g_pq = Array2::<f64>::zeros((n, a_dim));
            let mut g_ps = Array2::<f64>::zeros((n, a_dim));
            let mut g_v = Array1::<f64>::zeros(a_dim);
            let mut ga = vec![0.0; width];
            let mut z = vec![0.0; a_dim];
            for r in 0..n {
                let gr = gctx.row(r);
                let a = saved.row(r);
                let mut dot = 0.0;
                for k in 0..width {
                    if let Some(u) = lay.source(r, k) {
                        ga[k] = gr.dot(&s_in.row(u));
                        dot += a[k] * ga[k];
                        g_s.row_mut(u).scaled_add(a[k], &gr);
                    }
                }
                for k in 0..width {
                    let Some(u) = lay.source(r, k) else { continue };
                    let ge = a[k] * (ga[k] - dot);
                    if ge == 0.0 {
                        continue;
                    }
                    let (pq, ps) = (proj.pq.row(r), proj.ps.row(u));
                    for i in 0..a_dim {
                        z[i] = (pq[i] + ps[i]).tanh();
                        g_v[i] += ge * z[i];
                        let gpre = ge * vv[i] * (1.0 - z[i] * z[i]);
                        g_pq[[r, i]] += gpre;
                        g_ps[[u, i]] += gpre;
                    }
                }
            }
            let g_q = c.needs_grad[0].then(|| g_pq.dot(&wq.t()).into_dyn());
            g_s += &g_ps.dot(&ws.t());
            vec![
                g_q,
                c.needs_grad[1].then(|| g_s.into_dyn()),
                Some(q.t().dot(&g_pq).into_dyn()),
                Some(s_in.t().dot(&g_ps).into_dyn()),
                Some(g_pq.sum_axis(ndarray::Axis(0)).into_dyn()),
                Some(g_v.into_dyn()),
            ]
        }),
    );
    (out, weights)
}

/// Rows `[t-D, t+D]` of one item of a `[B*T, S]` matrix, zero-filled
/// outside the sequence, with the matching mask.
#[cfg(test)]
pub(crate) fn gather_window(seq: ArrayView2<f64>, steps: usize, r: usize, d: usize) -> (Array2<f64>, Vec<bool>) {
    let lay = Layout { steps, d };
    let mut w = Array2::<f64>::zeros((2 * d + 1, seq.ncols()));
    let mut mask = vec![false; 2 * d + 1];
    for k in 0..2 * d + 1 {
        if let Some(u) = lay.source(r, k) {
            w.row_mut(k).assign(&seq.row(u));
            mask[k] = true;
        }
    }
    (w, mask)
}
