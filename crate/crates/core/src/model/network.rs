use ndarray::{Array2, Array3, Axis, Ix2, IxDyn};
use oaf_autograd::{BatchNormMode, BatchStats, Graph, LstmWeights, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::attention::{attention_op, AttentionMap};
use super::params::{Initializer, ParamSet};
use super::{AttentionTarget, ModelConfig, Variant};
use crate::dataio::N_PITCHES;
use crate::error::{validation, Result};
use crate::frontend::Spectrogram;

/// Results of one graph construction. Sequence outputs are `[B*T, ·]`.
pub struct BatchOutputs {
    pub onset: Option<Var>,
    pub feat: Option<Var>,
    pub frame: Var,
    pub hidden: Var,
    /// `[B*T, 2D+1]`
    pub attention: Option<Array2<f64>>,
    /// Graph handles of the parameters, in [`ParamSet`] order.
    pub params: Vec<Var>,
    /// Observed batch statistics, keyed by batch-norm prefix.
    pub bn_stats: Vec<(String, BatchStats)>,
}

/// Posteriorgrams and internals for one recording.
#[derive(Debug, Clone, PartialEq)]
pub struct StackOutputs {
    /// `T × 88` onset probabilities; absent for variants without an onset
    /// stack.
    pub onset: Option<Array2<f64>>,
    /// `T × N_feat` real features.
    pub feat: Option<Array2<f64>>,
    /// `T × 88` frame probabilities.
    pub frame: Array2<f64>,
    /// The `h_t` sequence fed to the classifier.
    pub hidden: Array2<f64>,
    pub attention: Option<AttentionMap>,
}

/// A configured network and its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: ParamSet,
    /// Batch-norm running means and variances.
    buffers: ParamSet,
}

const BN_MOMENTUM: f64 = 0.1;

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        let mut buffers = ParamSet::new();
        let mut init = Initializer {
            rng: &mut rng,
            params: &mut params,
        };
        let c = &config;
        let bins = c.n_bins;
        match c.variant {
            Variant::LinearProbe => {
                init.linear("frame.classifier", bins, N_PITCHES);
                if c.attention_enabled() {
                    init_attention(&mut init, bins, bins, c.attention_dim);
                }
            }
            Variant::ConvProbe => {
                let ch = c.probe_channels;
                init.uniform("probe.conv.w", &[ch, 1, 1, 3], 3);
                init.uniform("probe.conv.b", &[ch], 3);
                let h = ch * bins;
                let ctx = if c.attention_enabled() { bins } else { 0 };
                init.linear("frame.classifier", h + ctx, N_PITCHES);
                if c.attention_enabled() {
                    init_attention(&mut init, bins, bins, c.attention_dim);
                }
            }
            Variant::Full | Variant::NoOnsetStack | Variant::NoBilstm => {
                let recurrent = c.variant != Variant::NoBilstm;
                if c.variant.has_onset_stack() {
                    init_conv_stack(&mut init, &mut buffers, "onset", c);
                    init.linear("onset.fc", c.pooled_bins() * c.conv_channels.last().unwrap(), c.fc_width);
                    if recurrent {
                        init.lstm("onset.lstm.fwd", c.fc_width, c.fc_width / 2);
                        init.lstm("onset.lstm.bwd", c.fc_width, c.fc_width / 2);
                    }
                    init.linear("onset.out", c.fc_width, N_PITCHES);
                }
                init_conv_stack(&mut init, &mut buffers, "feat", c);
                init.linear("feat.fc", c.pooled_bins() * c.conv_channels.last().unwrap(), c.n_feat);
                let width = c.frame_input_width();
                if recurrent {
                    init.lstm("frame.lstm.fwd", width, width / 2);
                    init.lstm("frame.lstm.bwd", width, width / 2);
                }
                let s_dim = attended_width(c);
                init.linear("frame.classifier", width + s_dim, N_PITCHES);
                if c.attention_enabled() {
                    init_attention(&mut init, width, s_dim, c.attention_dim);
                }
            }
        }
        if let Some(p) = c.output_prior {
            let logit = (p / (1.0 - p)).ln();
            for name in ["onset.out.b", "frame.classifier.b"] {
                if let Some(b) = params.get_mut(name) {
                    b.fill(logit);
                }
            }
        }
        Ok(Self {
            config,
            params,
            buffers,
        })
    }

    /// Rebuild from stored tensors, checking names and shapes against a
    /// freshly initialized model of the same configuration.
    pub fn from_parts(config: ModelConfig, params: ParamSet, buffers: ParamSet) -> Result<Self> {
        let fresh = Self::new(config)?;
        if !fresh.params.same_layout(&params) || !fresh.buffers.same_layout(&buffers) {
            return Err(crate::Error::Checkpoint(
                "stored tensors do not match the model configuration".into(),
            ));
        }
        Ok(Self {
            config: fresh.config,
            params,
            buffers,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn buffers(&self) -> &ParamSet {
        &self.buffers
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    /// Scalars belonging to biLSTM layers.
    pub fn recurrent_param_count(&self) -> usize {
        self.params
            .iter()
            .filter(|(n, _)| n.contains(".lstm."))
            .map(|(_, t)| t.len())
            .sum()
    }

    /// Zero the final classifier (and onset head) so every probability
    /// output starts at exactly 0.5.
    pub fn zero_heads(&mut self) {
        for name in ["frame.classifier.w", "frame.classifier.b", "onset.out.w", "onset.out.b", "feat.fc.w", "feat.fc.b"] {
            if let Some(t) = self.params.get_mut(name) {
                t.fill(0.0);
            }
        }
    }

    /// Blend observed batch statistics into the running estimates.
    pub fn update_running_stats(&mut self, stats: &[(String, BatchStats)]) {
        for (prefix, st) in stats {
            for (suffix, obs) in [("mean", &st.mean), ("var", &st.var)] {
                if let Some(run) = self.buffers.get_mut(&format!("{prefix}.{suffix}")) {
                    let obs = obs.view().into_dyn();
                    run.zip_mut_with(&obs, |r, &o| *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * o);
                }
            }
        }
    }

    /// Build the forward graph for `[B, T, F]` input. In training mode
    /// parameters are graph variables and batch norm uses batch statistics;
    /// otherwise parameters are constants and running statistics apply.
    pub fn forward(&self, g: &mut Graph, input: &Array3<f64>, training: bool) -> Result<BatchOutputs> {
        let (batch, steps, bins) = input.dim();
        if bins != self.config.n_bins {
            return Err(validation(format!(
                "model expects {} bins per frame, got {bins}",
                self.config.n_bins
            )));
        }
        if steps == 0 || batch == 0 {
            return Err(validation("forward needs at least one frame"));
        }
        let params: Vec<Var> = self
            .params
            .values()
            .iter()
            .map(|t| {
                if training {
                    g.variable(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        let mut b = Builder {
            g,
            model: self,
            params: &params,
            training,
            batch,
            steps,
            bn_stats: Vec::new(),
        };
        let image = b.g.constant(input.clone().into_shape_with_order(IxDyn(&[batch, 1, steps, bins])).unwrap());
        let spec_seq = b.g.reshape(image, &[batch * steps, bins]);
        let c = &self.config;
        let (onset, feat, hidden, frame, attention) = match c.variant {
            Variant::LinearProbe => {
                let (inp, att) = if c.attention_enabled() {
                    let (ctx, w) = b.attend(spec_seq, spec_seq);
                    (ctx, Some(w))
                } else {
                    (spec_seq, None)
                };
                let logits = b.linear("frame.classifier", inp);
                (None, None, spec_seq, b.g.sigmoid(logits), att)
            }
            Variant::ConvProbe => {
                let conv = b.g.conv2d(image, b.p("probe.conv.w"), b.p("probe.conv.b"));
                let act = b.g.relu(conv);
                let h = b.g.channels_to_sequence(act);
                let (inp, att) = if c.attention_enabled() {
                    let (ctx, w) = b.attend(spec_seq, spec_seq);
                    (b.g.concat_cols(&[h, ctx]), Some(w))
                } else {
                    (h, None)
                };
                let logits = b.linear("frame.classifier", inp);
                (None, None, h, b.g.sigmoid(logits), att)
            }
            Variant::Full | Variant::NoOnsetStack | Variant::NoBilstm => {
                let recurrent = c.variant != Variant::NoBilstm;
                let onset = if c.variant.has_onset_stack() {
                    let x = b.conv_stack("onset", image);
                    let mut x = b.linear("onset.fc", x);
                    if recurrent {
                        x = b.bilstm("onset.lstm", x);
                    }
                    let logits = b.linear("onset.out", x);
                    Some(b.g.sigmoid(logits))
                } else {
                    None
                };
                let x = b.conv_stack("feat", image);
                let feat = b.linear("feat.fc", x);
                let onset_in = onset.map(|o| if c.stop_onset_gradient { b.g.stop_gradient(o) } else { o });
                let concat = match onset_in {
                    Some(o) => b.g.concat_cols(&[o, feat]),
                    None => feat,
                };
                let hidden = if recurrent { b.bilstm("frame.lstm", concat) } else { concat };
                let (inp, att) = match c.attention_target {
                    AttentionTarget::None => (hidden, None),
                    target => {
                        let seq = match target {
                            AttentionTarget::Spec => spec_seq,
                            AttentionTarget::Onset => onset_in.expect("validated"),
                            _ => feat,
                        };
                        let (ctx, w) = b.attend(hidden, seq);
                        (b.g.concat_cols(&[hidden, ctx]), Some(w))
                    }
                };
                let logits = b.linear("frame.classifier", inp);
                (onset, Some(feat), hidden, b.g.sigmoid(logits), att)
            }
        };
        let bn_stats = b.bn_stats;
        Ok(BatchOutputs {
            onset,
            feat,
            frame,
            hidden,
            attention,
            params,
            bn_stats,
        })
    }

    /// Inference on one whole recording.
    pub fn infer(&self, spec: &Spectrogram) -> Result<StackOutputs> {
        let input = spec.values.clone().insert_axis(Axis(0));
        let mut g = Graph::new();
        let out = self.forward(&mut g, &input, false)?;
        let take = |v: Var| -> Array2<f64> {
            g.value(v).view().into_dimensionality::<Ix2>().unwrap().to_owned()
        };
        Ok(StackOutputs {
            onset: out.onset.map(take),
            feat: out.feat.map(take),
            frame: take(out.frame),
            hidden: take(out.hidden),
            attention: out.attention.map(|weights| AttentionMap {
                weights,
                d: self.config.window_d,
                target: self.config.attention_target,
            }),
        })
    }

    /// Onset probabilities alone.
    pub fn onset_stack(&self, spec: &Spectrogram) -> Result<Array2<f64>> {
        self.infer(spec)?
            .onset
            .ok_or_else(|| validation("this variant has no onset stack"))
    }

    pub fn feat_stack(&self, spec: &Spectrogram) -> Result<Array2<f64>> {
        self.infer(spec)?
            .feat
            .ok_or_else(|| validation("this variant has no feature stack"))
    }

    /// Run the frame stack on a precomputed `T × (88 + N_feat)` (or
    /// `T × N_feat`) input. `attended` supplies the attention sequence when
    /// attention is enabled. Returns frame probabilities and `h_t`.
    pub fn frame_stack(&self, concat: &Array2<f64>, attended: Option<&Array2<f64>>) -> Result<(Array2<f64>, Array2<f64>)> {
        let c = &self.config;
        if c.variant.is_probe() {
            return Err(validation("probes have no frame stack"));
        }
        if concat.ncols() != c.frame_input_width() || concat.nrows() == 0 {
            return Err(validation(format!(
                "frame stack expects {} columns, got {}",
                c.frame_input_width(),
                concat.ncols()
            )));
        }
        let steps = concat.nrows();
        let mut g = Graph::new();
        let params: Vec<Var> = self.params.values().iter().map(|t| g.constant(t.clone())).collect();
        let mut b = Builder {
            g: &mut g,
            model: self,
            params: &params,
            training: false,
            batch: 1,
            steps,
            bn_stats: Vec::new(),
        };
        let x = b.g.constant(concat.clone().into_dyn());
        let hidden = if c.variant == Variant::NoBilstm { x } else { b.bilstm("frame.lstm", x) };
        let inp = if c.attention_enabled() {
            let s_seq = attended.ok_or_else(|| validation("attention is enabled but no sequence was given"))?;
            if s_seq.nrows() != steps || s_seq.ncols() != attended_width(c) {
                return Err(validation("attended sequence has the wrong shape"));
            }
            let s_var = b.g.constant(s_seq.clone().into_dyn());
            let (ctx, _) = b.attend(hidden, s_var);
            b.g.concat_cols(&[hidden, ctx])
        } else {
            hidden
        };
        let logits = b.linear("frame.classifier", inp);
        let frame = b.g.sigmoid(logits);
        let as2 = |v: Var| g.value(v).view().into_dimensionality::<Ix2>().unwrap().to_owned();
        Ok((as2(frame), as2(hidden)))
    }
}

fn attended_width(c: &ModelConfig) -> usize {
    match c.attention_target {
        AttentionTarget::None => 0,
        AttentionTarget::Spec => c.n_bins,
        AttentionTarget::Onset => N_PITCHES,
        AttentionTarget::Feat => c.n_feat,
    }
}

fn init_attention(init: &mut Initializer<'_>, query: usize, seq: usize, dim: usize) {
    init.uniform("frame.attn.w_q", &[query, dim], query);
    init.uniform("frame.attn.w_s", &[seq, dim], seq);
    init.uniform("frame.attn.b", &[dim], query);
    init.uniform("frame.attn.v", &[dim], dim);
}

fn init_conv_stack(init: &mut Initializer<'_>, buffers: &mut ParamSet, prefix: &str, c: &ModelConfig) {
    let mut cin = 1;
    for (i, &cout) in c.conv_channels.iter().enumerate() {
        init.uniform(&format!("{prefix}.conv{i}.w"), &[cout, cin, 3, 3], cin * 9);
        init.uniform(&format!("{prefix}.conv{i}.b"), &[cout], cin * 9);
        init.fill(&format!("{prefix}.bn{i}.gamma"), &[cout], 1.0);
        init.fill(&format!("{prefix}.bn{i}.beta"), &[cout], 0.0);
        buffers.insert(format!("{prefix}.bn{i}.mean"), Tensor::zeros(IxDyn(&[cout])));
        buffers.insert(format!("{prefix}.bn{i}.var"), Tensor::ones(IxDyn(&[cout])));
        cin = cout;
    }
}

struct Builder<'a> {
    g: &'a mut Graph,
    model: &'a Model,
    params: &'a [Var],
    training: bool,
    batch: usize,
    steps: usize,
    bn_stats: Vec<(String, BatchStats)>,
}

impl Builder<'_> {
    fn p(&self, name: &str) -> Var {
        let i = self
            .model
            .params
            .position(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"));
        self.params[i]
    }

    fn linear(&mut self, prefix: &str, x: Var) -> Var {
        let (w, b) = (self.p(&format!("{prefix}.w")), self.p(&format!("{prefix}.b")));
        self.g.linear(x, w, b)
    }

    fn bilstm(&mut self, prefix: &str, x: Var) -> Var {
        let dir = |b: &Self, d: &str| LstmWeights {
            w_ih: b.p(&format!("{prefix}.{d}.w_ih")),
            w_hh: b.p(&format!("{prefix}.{d}.w_hh")),
            bias: b.p(&format!("{prefix}.{d}.bias")),
        };
        let (fwd, bwd) = (dir(self, "fwd"), dir(self, "bwd"));
        self.g.bilstm(x, self.batch, self.steps, fwd, bwd)
    }

    /// Conv, batch norm and ReLU blocks with frequency pooling after every
    /// block but the first, flattened to `[B*T, C*F']`.
    fn conv_stack(&mut self, prefix: &str, image: Var) -> Var {
        let mut x = image;
        for i in 0..self.model.config.conv_channels.len() {
            let conv = self.g.conv2d(x, self.p(&format!("{prefix}.conv{i}.w")), self.p(&format!("{prefix}.conv{i}.b")));
            let bn_prefix = format!("{prefix}.bn{i}");
            let mode = if self.training {
                BatchNormMode::Train
            } else {
                let buf = &self.model.buffers;
                let get = |s: &str| {
                    buf.get(&format!("{bn_prefix}.{s}"))
                        .expect("buffer")
                        .view()
                        .into_dimensionality::<ndarray::Ix1>()
                        .unwrap()
                        .to_owned()
                };
                BatchNormMode::Eval {
                    running_mean: get("mean"),
                    running_var: get("var"),
                }
            };
            let (gamma, beta) = (self.p(&format!("{bn_prefix}.gamma")), self.p(&format!("{bn_prefix}.beta")));
            let (normed, stats) = self.g.batch_norm(conv, gamma, beta, &mode);
            if let Some(st) = stats {
                self.bn_stats.push((bn_prefix, st));
            }
            x = self.g.relu(normed);
            if i > 0 {
                x = self.g.max_pool_freq(x, 2);
            }
        }
        self.g.channels_to_sequence(x)
    }

    fn attend(&mut self, query: Var, seq: Var) -> (Var, Array2<f64>) {
        let (wq, ws, b, v) = (
            self.p("frame.attn.w_q"),
            self.p("frame.attn.w_s"),
            self.p("frame.attn.b"),
            self.p("frame.attn.v"),
        );
        attention_op(self.g, query, seq, wq, ws, b, v, self.batch, self.steps, self.model.config.window_d)
    }
}

/// Copy the classifier weights out as plain arrays.
#[cfg(test)]
pub(crate) fn classifier_weights(model: &Model) -> (Array2<f64>, ndarray::Array1<f64>) {
    let w = model.params.get("frame.classifier.w").unwrap();
    let b = model.params.get("frame.classifier.b").unwrap();
    (
        w.view().into_dimensionality::<Ix2>().unwrap().to_owned(),
        b.iter().copied().collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{attended_classify, local_attention, AttentionParams};
    use rand::{seq::SliceRandom, Rng};

    fn toy(variant: Variant, target: AttentionTarget, d: usize) -> ModelConfig {
        ModelConfig {
            variant,
            attention_target: target,
            window_d: d,
            n_bins: 8,
            conv_channels: vec![2, 2, 3],
            fc_width: 6,
            n_feat: 4,
            attention_dim: 3,
            probe_channels: 2,
            // The stop-gradient would make finite differences disagree with
            // backprop by design; it has its own test below.
            stop_onset_gradient: false,
            output_prior: None,
            seed: 11,
        }
    }

    fn all_toys() -> Vec<ModelConfig> {
        use AttentionTarget::*;
        vec![
            toy(Variant::Full, None, 0),
            toy(Variant::Full, Spec, 1),
            toy(Variant::Full, Onset, 2),
            toy(Variant::Full, Feat, 1),
            toy(Variant::NoOnsetStack, Feat, 1),
            toy(Variant::NoBilstm, Spec, 1),
            toy(Variant::LinearProbe, None, 0),
            toy(Variant::LinearProbe, Spec, 2),
            toy(Variant::ConvProbe, None, 0),
            toy(Variant::ConvProbe, Spec, 1),
        ]
    }

    fn rand_input(b: usize, t: usize, f: usize, seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((b, t, f), |_| rng.gen_range(0.0..1.0))
    }

    fn loss_of(model: &Model, input: &Array3<f64>, target: &Tensor) -> (Graph, BatchOutputs, Var) {
        let mut g = Graph::new();
        let out = model.forward(&mut g, input, true).unwrap();
        let frame = g.bce_mean(out.frame, target, 1e-7);
        let loss = match out.onset {
            Some(o) => {
                let l = g.bce_mean(o, target, 1e-7);
                g.add(frame, l)
            }
            None => frame,
        };
        (g, out, loss)
    }

    #[test]
    fn gradients_match_finite_differences_for_every_variant() {
        let input = rand_input(2, 5, 8, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let target = Tensor::from_shape_fn(IxDyn(&[10, 88]), |_| if rng.gen_bool(0.2) { 1.0 } else { 0.0 });
        for cfg in all_toys() {
            let model = Model::new(cfg.clone()).unwrap();
            let (g, out, loss) = loss_of(&model, &input, &target);
            let grads = g.backward(loss);
            // (param index, element index) pairs, 32 at random.
            let mut slots: Vec<(usize, usize)> = model
                .params
                .values()
                .iter()
                .enumerate()
                .flat_map(|(i, t)| (0..t.len()).map(move |k| (i, k)))
                .collect();
            slots.shuffle(&mut rng);
            let h = 1e-6;
            let mut worst = 0.0f64;
            for &(pi, k) in slots.iter().take(32) {
                let analytic = grads
                    .get(out.params[pi])
                    .map(|t| t.as_slice().unwrap()[k])
                    .unwrap_or(0.0);
                let eval = |delta: f64| {
                    let mut m = model.clone();
                    m.params.values_mut()[pi].as_slice_mut().unwrap()[k] += delta;
                    let (g, _, loss) = loss_of(&m, &input, &target);
                    g.value(loss)[[]]
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-4);
                worst = worst.max(rel);
                assert!(
                    rel < 1e-4,
                    "{:?}/{}: {} elem {k}: {analytic} vs {fd}",
                    cfg.variant,
                    cfg.attention_target,
                    model.params.names()[pi]
                );
            }
            assert!(worst.is_finite());
        }
    }

    #[test]
    fn shapes_follow_input_length() {
        for cfg in all_toys() {
            let model = Model::new(cfg.clone()).unwrap();
            for t in [1usize, 7] {
                let spec = Spectrogram::from_values(rand_input(1, t, 8, t as u64).index_axis_move(Axis(0), 0)).unwrap();
                let out = model.infer(&spec).unwrap();
                assert_eq!(out.frame.dim(), (t, 88));
                assert_eq!(out.hidden.nrows(), t);
                assert!(out.frame.iter().all(|&p| (0.0..=1.0).contains(&p)));
                if let Some(o) = &out.onset {
                    assert_eq!(o.dim(), (t, 88));
                }
                if let Some(a) = &out.attention {
                    assert_eq!(a.weights.dim(), (t, 2 * cfg.window_d + 1));
                    assert!(a.max_row_error() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn zero_input_and_zero_heads_give_one_half() {
        for cfg in all_toys() {
            let mut model = Model::new(cfg).unwrap();
            model.zero_heads();
            let spec = Spectrogram::from_values(Array2::zeros((4, 8))).unwrap();
            let out = model.infer(&spec).unwrap();
            assert!(out.frame.iter().all(|&p| p == 0.5));
            if let Some(o) = out.onset {
                assert!(o.iter().all(|&p| p == 0.5));
            }
            if let Some(f) = out.feat {
                assert!(f.iter().all(|&p| p == 0.0));
            }
        }
    }

    #[test]
    fn seeded_construction_is_deterministic() {
        for cfg in all_toys() {
            let spec = Spectrogram::from_values(rand_input(1, 6, 8, 5).index_axis_move(Axis(0), 0)).unwrap();
            let a = Model::new(cfg.clone()).unwrap().infer(&spec).unwrap();
            let b = Model::new(cfg).unwrap().infer(&spec).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn stop_gradient_blocks_onset_stack_from_frame_loss() {
        let cfg = ModelConfig { stop_onset_gradient: true, ..toy(Variant::Full, AttentionTarget::Onset, 1) };
        let model = Model::new(cfg).unwrap();
        let input = rand_input(1, 5, 8, 3);
        let target = Tensor::from_elem(IxDyn(&[5, 88]), 1.0);
        let mut g = Graph::new();
        let out = model.forward(&mut g, &input, true).unwrap();
        let loss = g.bce_mean(out.frame, &target, 1e-7);
        let grads = g.backward(loss);
        for (i, name) in model.params.names().iter().enumerate() {
            let nonzero = grads.get(out.params[i]).is_some_and(|t| t.iter().any(|&v| v != 0.0));
            if name.starts_with("onset.") {
                assert!(!nonzero, "{name} received frame-loss gradient");
            }
            if name == "feat.fc.w" {
                assert!(nonzero);
            }
        }
    }

    #[test]
    fn probes_are_local_in_time() {
        for cfg in [
            toy(Variant::LinearProbe, AttentionTarget::Spec, 1),
            toy(Variant::ConvProbe, AttentionTarget::Spec, 1),
            toy(Variant::ConvProbe, AttentionTarget::None, 0),
        ] {
            let model = Model::new(cfg.clone()).unwrap();
            let base = rand_input(1, 12, 8, 4).index_axis_move(Axis(0), 0);
            let mut changed = base.clone();
            // Frames far outside [t-D, t+D] for t = 5.
            for t in [0usize, 1, 2, 9, 10, 11] {
                changed.row_mut(t).mapv_inplace(|v| 1.0 - v);
            }
            let a = model.infer(&Spectrogram::from_values(base).unwrap()).unwrap();
            let b = model.infer(&Spectrogram::from_values(changed).unwrap()).unwrap();
            let d = cfg.window_d;
            for t in 3 + d..=8 - d {
                assert_eq!(a.frame.row(t), b.frame.row(t), "{:?} t={t}", cfg.variant);
            }
        }
    }

    #[test]
    fn linear_probe_at_zero_window_equals_the_plain_probe() {
        let plain = Model::new(toy(Variant::LinearProbe, AttentionTarget::None, 0)).unwrap();
        let attn = Model::new(toy(Variant::LinearProbe, AttentionTarget::Spec, 0)).unwrap();
        let spec = Spectrogram::from_values(rand_input(1, 9, 8, 8).index_axis_move(Axis(0), 0)).unwrap();
        assert_eq!(plain.infer(&spec).unwrap().frame, attn.infer(&spec).unwrap().frame);
        // The plain probe is frame-wise logistic regression.
        let (w, b) = classifier_weights(&plain);
        let out = plain.infer(&spec).unwrap();
        for t in 0..9 {
            let direct = attended_classify(spec.values.row(t), None, w.view(), b.view()).unwrap();
            for (x, y) in direct.iter().zip(out.frame.row(t)) {
                assert!((x - y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn probe_queries_with_the_current_frame() {
        let cfg = toy(Variant::LinearProbe, AttentionTarget::Spec, 2);
        let model = Model::new(cfg).unwrap();
        let spec = Spectrogram::from_values(rand_input(1, 7, 8, 6).index_axis_move(Axis(0), 0)).unwrap();
        let out = model.infer(&spec).unwrap();
        let get = |n: &str| model.params.get(n).unwrap().clone();
        let p = AttentionParams {
            w_q: get("frame.attn.w_q").into_dimensionality().unwrap(),
            w_s: get("frame.attn.w_s").into_dimensionality().unwrap(),
            b: get("frame.attn.b").into_dimensionality().unwrap(),
            v: get("frame.attn.v").into_dimensionality().unwrap(),
        };
        let map = out.attention.unwrap();
        for t in 0..7 {
            let (win, mask) = super::super::attention::gather_window(spec.values.view(), 7, t, 2);
            let (a, _) = local_attention(spec.values.row(t), win.view(), &mask, &p).unwrap();
            for k in 0..5 {
                assert!((a[k] - map.weights[[t, k]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn output_prior_only_moves_head_biases() {
        let plain = Model::new(toy(Variant::Full, AttentionTarget::None, 0)).unwrap();
        let primed = Model::new(ModelConfig {
            output_prior: Some(0.01),
            ..toy(Variant::Full, AttentionTarget::None, 0)
        })
        .unwrap();
        let logit = (0.01f64 / 0.99).ln();
        for (name, t) in primed.params.iter() {
            if name == "onset.out.b" || name == "frame.classifier.b" {
                assert!(t.iter().all(|&v| v == logit), "{name}");
            } else {
                assert_eq!(Some(t), plain.params.get(name), "{name}");
            }
        }
        let bad = ModelConfig { output_prior: Some(1.0), ..ModelConfig::desk() };
        assert!(Model::new(bad).is_err());
    }

    #[test]
    fn no_onset_stack_feeds_features_only() {
        let cfg = toy(Variant::NoOnsetStack, AttentionTarget::None, 0);
        assert_eq!(cfg.frame_input_width(), 4);
        let model = Model::new(cfg).unwrap();
        assert!(model.params.names().iter().all(|n| !n.starts_with("onset.")));
        let (frame, hidden) = model.frame_stack(&Array2::zeros((3, 4)), None).unwrap();
        assert_eq!(frame.dim(), (3, 88));
        assert_eq!(hidden.dim(), (3, 4));
        assert!(model.frame_stack(&Array2::zeros((3, 5)), None).is_err());
    }

    #[test]
    fn removing_recurrence_removes_exactly_the_lstm_parameters() {
        for target in [AttentionTarget::None, AttentionTarget::Spec, AttentionTarget::Feat] {
            let full = Model::new(ModelConfig::desk().with_attention(target, 3)).unwrap();
            let flat = Model::new(ModelConfig::desk().with_variant(Variant::NoBilstm).with_attention(target, 3)).unwrap();
            assert_eq!(full.param_count() - flat.param_count(), full.recurrent_param_count());
            assert_eq!(flat.recurrent_param_count(), 0);
        }
    }

    #[test]
    fn wrong_bin_count_is_rejected() {
        let model = Model::new(toy(Variant::Full, AttentionTarget::None, 0)).unwrap();
        let spec = Spectrogram::from_values(Array2::zeros((3, 9))).unwrap();
        assert!(model.infer(&spec).is_err());
    }
}
