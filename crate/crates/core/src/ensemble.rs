//! Learned alternatives to the quantitative tool-weight update: a global
//! learnable weight vector (LR), a small MLP over per-item tool scores, and
//! an attention-gated MLP (Att). All train with a pairwise hinge loss over
//! seeded sampled negatives; the blended output augments the memory-based
//! aggregate rather than replacing it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tools::normalize_slice;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    /// The memory-based quantitative path; carries no learned parameters.
    Rc,
    Lr,
    Mlp,
    Att,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub inputs: usize,
    pub hidden: usize,
    /// Row-major hidden x inputs.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl MlpParams {
    fn init(inputs: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = (6.0 / (inputs + hidden) as f64).sqrt();
        MlpParams {
            inputs,
            hidden,
            w1: (0..hidden * inputs)
                .map(|_| rng.gen_range(-scale..scale))
                .collect(),
            b1: vec![0.0; hidden],
            w2: (0..hidden).map(|_| rng.gen_range(-scale..scale)).collect(),
            b2: 0.0,
        }
    }

    fn forward(&self, x: &[f64]) -> f64 {
        let mut out = self.b2;
        for j in 0..self.hidden {
            let mut z = self.b1[j];
            for (i, &xi) in x.iter().enumerate() {
                z += self.w1[j * self.inputs + i] * xi;
            }
            out += self.w2[j] * z.max(0.0);
        }
        out
    }

    /// Gradient of the output w.r.t. parameters and input, at `x`.
    fn backward(&self, x: &[f64]) -> MlpGrad {
        let mut grad = MlpGrad::zeros(self.inputs, self.hidden);
        for j in 0..self.hidden {
            let mut z = self.b1[j];
            for (i, &xi) in x.iter().enumerate() {
                z += self.w1[j * self.inputs + i] * xi;
            }
            let h = z.max(0.0);
            grad.w2[j] = h;
            if z > 0.0 {
                let up = self.w2[j];
                grad.b1[j] = up;
                for (i, &xi) in x.iter().enumerate() {
                    grad.w1[j * self.inputs + i] = up * xi;
                    grad.x[i] += up * self.w1[j * self.inputs + i];
                }
            }
        }
        grad.b2 = 1.0;
        grad
    }

    fn apply(&mut self, grad: &MlpGrad, step: f64) {
        for (w, g) in self.w1.iter_mut().zip(&grad.w1) {
            *w += step * g;
        }
        for (b, g) in self.b1.iter_mut().zip(&grad.b1) {
            *b += step * g;
        }
        for (w, g) in self.w2.iter_mut().zip(&grad.w2) {
            *w += step * g;
        }
        self.b2 += step * grad.b2;
    }

    fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }
}

struct MlpGrad {
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
    x: Vec<f64>,
}

impl MlpGrad {
    fn zeros(inputs: usize, hidden: usize) -> Self {
        MlpGrad {
            w1: vec![0.0; hidden * inputs],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
            x: vec![0.0; inputs],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum EnsembleParams {
    Rc,
    Lr {
        v: Vec<f64>,
    },
    Mlp(MlpParams),
    Att {
        /// Per-tool attention scale and bias producing softmax gate logits.
        attn_scale: Vec<f64>,
        attn_bias: Vec<f64>,
        mlp: MlpParams,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub params: EnsembleParams,
    pub seed: u64,
    pub margin: f64,
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum EnsembleError {
    #[error("ensemble training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },
    #[error("no training examples")]
    NoExamples,
}

/// One user's training signal: per-tool normalized score vectors (tool-major)
/// and the held-out target items.
#[derive(Clone, Debug)]
pub struct EnsembleExample {
    pub tool_scores: Vec<Vec<f64>>,
    pub targets: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleHyperparams {
    #[serde(default = "default_ens_epochs")]
    pub epochs: usize,
    #[serde(default = "default_ens_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_ens_lr_decay")]
    pub lr_decay: f64,
    #[serde(default = "default_ens_negatives")]
    pub negatives: usize,
    #[serde(default = "default_ens_margin")]
    pub margin: f64,
    #[serde(default = "default_ens_hidden")]
    pub hidden: usize,
}

fn default_ens_epochs() -> usize {
    20
}
fn default_ens_lr() -> f64 {
    0.05
}
fn default_ens_lr_decay() -> f64 {
    0.95
}
fn default_ens_negatives() -> usize {
    4
}
fn default_ens_margin() -> f64 {
    1.0
}
fn default_ens_hidden() -> usize {
    8
}

impl Default for EnsembleHyperparams {
    fn default() -> Self {
        EnsembleHyperparams {
            epochs: 20,
            learning_rate: 0.05,
            lr_decay: 0.95,
            negatives: 4,
            margin: 1.0,
            hidden: 8,
        }
    }
}

impl EnsembleModel {
    pub fn kind(&self) -> EnsembleKind {
        match &self.params {
            EnsembleParams::Rc => EnsembleKind::Rc,
            EnsembleParams::Lr { .. } => EnsembleKind::Lr,
            EnsembleParams::Mlp(_) => EnsembleKind::Mlp,
            EnsembleParams::Att { .. } => EnsembleKind::Att,
        }
    }

    /// Learned parameter count; strictly ordered Rc < Lr < Mlp < Att.
    pub fn param_count(&self) -> usize {
        match &self.params {
            EnsembleParams::Rc => 0,
            EnsembleParams::Lr { v } => v.len(),
            EnsembleParams::Mlp(mlp) => mlp.param_count(),
            EnsembleParams::Att {
                attn_scale,
                attn_bias,
                mlp,
            } => attn_scale.len() + attn_bias.len() + mlp.param_count(),
        }
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&e| (e - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Scores one item's tool-score feature vector under the model.
fn forward(params: &EnsembleParams, x: &[f64]) -> f64 {
    match params {
        EnsembleParams::Rc => x.iter().sum(),
        EnsembleParams::Lr { v } => v.iter().zip(x).map(|(w, s)| w * s).sum(),
        EnsembleParams::Mlp(mlp) => mlp.forward(x),
        EnsembleParams::Att {
            attn_scale,
            attn_bias,
            mlp,
        } => {
            let logits: Vec<f64> = x
                .iter()
                .enumerate()
                .map(|(t, &xt)| attn_scale[t] * xt + attn_bias[t])
                .collect();
            let gate = softmax(&logits);
            let gated: Vec<f64> = x.iter().zip(&gate).map(|(xt, g)| xt * g).collect();
            mlp.forward(&gated)
        }
    }
}

/// Applies the trained model per item: each item's feature vector is its
/// column of tool scores.
pub fn apply_ensemble(model: &EnsembleModel, tool_scores: &[Vec<f64>]) -> Vec<f64> {
    let n_items = tool_scores.first().map_or(0, |v| v.len());
    let n_tools = tool_scores.len();
    let mut x = vec![0.0; n_tools];
    (0..n_items)
        .map(|i| {
            for t in 0..n_tools {
                x[t] = tool_scores[t][i];
            }
            forward(&model.params, &x)
        })
        .collect()
}

/// Min-max normalizes both score vectors and sums them elementwise.
pub fn blend(memory_scores: &[f64], learned_scores: &[f64]) -> Vec<f64> {
    assert_eq!(memory_scores.len(), learned_scores.len());
    let mut a = memory_scores.to_vec();
    let mut b = learned_scores.to_vec();
    normalize_slice(&mut a);
    normalize_slice(&mut b);
    a.iter().zip(&b).map(|(x, y)| x + y).collect()
}

/// Trains the chosen variant with a pairwise hinge over seeded negative
/// samples (uniform over non-target items, fixed for the whole run). The
/// recorded epoch losses are full evaluation passes over the fixed pairs.
pub fn train_ensemble(
    kind: EnsembleKind,
    examples: &[EnsembleExample],
    hyper: &EnsembleHyperparams,
    seed: u64,
) -> Result<EnsembleModel, EnsembleError> {
    let n_tools = examples
        .first()
        .map(|e| e.tool_scores.len())
        .ok_or(EnsembleError::NoExamples)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut params = match kind {
        EnsembleKind::Rc => {
            return Ok(EnsembleModel {
                params: EnsembleParams::Rc,
                seed,
                margin: hyper.margin,
                epoch_losses: Vec::new(),
            })
        }
        EnsembleKind::Lr => EnsembleParams::Lr {
            v: (0..n_tools)
                .map(|_| 1.0 / n_tools as f64 + rng.gen_range(-0.01..0.01))
                .collect(),
        },
        EnsembleKind::Mlp => EnsembleParams::Mlp(MlpParams::init(n_tools, hyper.hidden, &mut rng)),
        EnsembleKind::Att => EnsembleParams::Att {
            attn_scale: (0..n_tools).map(|_| rng.gen_range(-0.1..0.1)).collect(),
            attn_bias: vec![0.0; n_tools],
            mlp: MlpParams::init(n_tools, hyper.hidden, &mut rng),
        },
    };

    // Fixed (example, positive, negative) pairs.
    let mut pairs: Vec<(usize, usize, usize)> = Vec::new();
    for (e, example) in examples.iter().enumerate() {
        let n_items = example.tool_scores[0].len();
        let targets: std::collections::HashSet<usize> =
            example.targets.iter().map(|&t| t as usize).collect();
        if targets.len() >= n_items {
            continue;
        }
        for &pos in &example.targets {
            for _ in 0..hyper.negatives {
                let neg = loop {
                    let cand = rng.gen_range(0..n_items);
                    if !targets.contains(&cand) {
                        break cand;
                    }
                };
                pairs.push((e, pos as usize, neg));
            }
        }
    }
    if pairs.is_empty() {
        return Err(EnsembleError::NoExamples);
    }

    let feature = |example: &EnsembleExample, item: usize| -> Vec<f64> {
        example.tool_scores.iter().map(|v| v[item]).collect()
    };

    let mut lr = hyper.learning_rate;
    let mut epoch_losses = Vec::with_capacity(hyper.epochs);
    let mut prev_loss = f64::INFINITY;
    for epoch in 0..hyper.epochs {
        let snapshot = params.clone();
        for &(e, pos, neg) in &pairs {
            let xp = feature(&examples[e], pos);
            let xn = feature(&examples[e], neg);
            let s = forward(&params, &xp) - forward(&params, &xn);
            if hyper.margin - s <= 0.0 {
                continue;
            }
            // Ascend s = f(xp) - f(xn) by lr.
            match &mut params {
                EnsembleParams::Rc => unreachable!(),
                EnsembleParams::Lr { v } => {
                    for t in 0..n_tools {
                        v[t] += lr * (xp[t] - xn[t]);
                    }
                }
                EnsembleParams::Mlp(mlp) => {
                    let gp = mlp.backward(&xp);
                    let gn = mlp.backward(&xn);
                    mlp.apply(&gp, lr);
                    mlp.apply(&gn, -lr);
                }
                EnsembleParams::Att {
                    attn_scale,
                    attn_bias,
                    mlp,
                } => {
                    for (x, step) in [(&xp, lr), (&xn, -lr)] {
                        let logits: Vec<f64> = x
                            .iter()
                            .enumerate()
                            .map(|(t, &xt)| attn_scale[t] * xt + attn_bias[t])
                            .collect();
                        let gate = softmax(&logits);
                        let gated: Vec<f64> =
                            x.iter().zip(&gate).map(|(xt, g)| xt * g).collect();
                        let grad = mlp.backward(&gated);
                        // d s / d logit_u via the softmax Jacobian.
                        let weighted: f64 = (0..n_tools)
                            .map(|t| grad.x[t] * x[t] * gate[t])
                            .sum();
                        for u in 0..n_tools {
                            let dlogit = grad.x[u] * x[u] * gate[u] - gate[u] * weighted;
                            attn_scale[u] += step * dlogit * x[u];
                            attn_bias[u] += step * dlogit;
                        }
                        mlp.apply(&grad, step);
                    }
                }
            }
        }
        let mut loss = 0.0;
        for &(e, pos, neg) in &pairs {
            let xp = feature(&examples[e], pos);
            let xn = feature(&examples[e], neg);
            loss += (hyper.margin - (forward(&params, &xp) - forward(&params, &xn))).max(0.0);
        }
        let mean = loss / pairs.len() as f64;
        if !mean.is_finite() {
            return Err(EnsembleError::Diverged { epoch });
        }
        if mean > prev_loss {
            // An epoch that overshot is rolled back and retried at half the
            // step, so the recorded loss trajectory never increases.
            params = snapshot;
            lr *= 0.5;
            epoch_losses.push(prev_loss);
        } else {
            prev_loss = mean;
            epoch_losses.push(mean);
            lr *= hyper.lr_decay;
        }
    }

    Ok(EnsembleModel {
        params,
        seed,
        margin: hyper.margin,
        epoch_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Tool 0 alone puts the target on top; tools 1 and 2 emit noise.
    fn informative_tool_examples(seed: u64, n_users: usize) -> Vec<EnsembleExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_items = 20;
        (0..n_users)
            .map(|_| {
                let target = rng.gen_range(0..n_items as u32);
                let mut informative = vec![0.0; n_items];
                for (i, s) in informative.iter_mut().enumerate() {
                    *s = if i as u32 == target {
                        1.0
                    } else {
                        rng.gen_range(0.0..0.3)
                    };
                }
                let noise = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                    (0..n_items).map(|_| rng.gen_range(0.0..1.0)).collect()
                };
                EnsembleExample {
                    tool_scores: vec![informative, noise(&mut rng), noise(&mut rng)],
                    targets: vec![target],
                }
            })
            .collect()
    }

    #[test]
    fn lr_favors_informative_tool() {
        let examples = informative_tool_examples(3, 40);
        let model =
            train_ensemble(EnsembleKind::Lr, &examples, &Default::default(), 17).unwrap();
        let EnsembleParams::Lr { v } = &model.params else {
            panic!("expected LR params");
        };
        assert!(v[0] > v[1] && v[0] > v[2], "weights: {v:?}");
    }

    #[test]
    fn flat_hinge_region_leaves_parameters_unchanged() {
        // One example where the margin is already satisfied: target scores 10,
        // everything else 0, margin 1, initial weights near 1/3 each keep
        // s_pos - s_neg = 10/3 > 1.
        let example = EnsembleExample {
            tool_scores: vec![
                vec![10.0, 0.0, 0.0],
                vec![10.0, 0.0, 0.0],
                vec![10.0, 0.0, 0.0],
            ],
            targets: vec![0],
        };
        let model =
            train_ensemble(EnsembleKind::Lr, &[example], &Default::default(), 4).unwrap();
        let EnsembleParams::Lr { v } = &model.params else {
            panic!()
        };
        // Parameters still at their initialization (1/3 plus tiny noise).
        for w in v {
            assert!((w - 1.0 / 3.0).abs() < 0.011, "weight moved: {w}");
        }
        assert!(model.epoch_losses.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn training_is_bit_deterministic_per_seed() {
        let examples = informative_tool_examples(5, 10);
        for kind in [EnsembleKind::Lr, EnsembleKind::Mlp, EnsembleKind::Att] {
            let a = train_ensemble(kind, &examples, &Default::default(), 8).unwrap();
            let b = train_ensemble(kind, &examples, &Default::default(), 8).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn hinge_reaches_zero_on_satisfiable_instance() {
        // Separable: tool 0 scores the target 1.0 and everything else 0.
        let examples: Vec<EnsembleExample> = (0..5)
            .map(|u| {
                let mut informative = vec![0.0; 10];
                informative[u] = 1.0;
                EnsembleExample {
                    tool_scores: vec![informative, vec![0.1; 10], vec![0.1; 10]],
                    targets: vec![u as u32],
                }
            })
            .collect();
        let hyper = EnsembleHyperparams {
            epochs: 200,
            lr_decay: 1.0,
            ..Default::default()
        };
        let model = train_ensemble(EnsembleKind::Lr, &examples, &hyper, 2).unwrap();
        assert_eq!(*model.epoch_losses.last().unwrap(), 0.0);
    }

    #[test]
    fn epoch_loss_non_increasing() {
        let examples = informative_tool_examples(9, 20);
        for kind in [EnsembleKind::Lr, EnsembleKind::Mlp, EnsembleKind::Att] {
            let model = train_ensemble(kind, &examples, &Default::default(), 6).unwrap();
            for w in model.epoch_losses.windows(2) {
                assert!(
                    w[1] <= w[0] + 1e-6,
                    "{kind:?} loss increased: {} -> {}",
                    w[0],
                    w[1]
                );
            }
        }
    }

    #[test]
    fn lr_one_hot_passthrough() {
        let model = EnsembleModel {
            params: EnsembleParams::Lr {
                v: vec![0.0, 1.0, 0.0],
            },
            seed: 0,
            margin: 1.0,
            epoch_losses: Vec::new(),
        };
        let scores = vec![
            vec![0.1, 0.2, 0.3],
            vec![0.9, 0.8, 0.7],
            vec![0.5, 0.5, 0.5],
        ];
        assert_eq!(apply_ensemble(&model, &scores), vec![0.9, 0.8, 0.7]);
    }

    /// MLP wired to pass the summed inputs straight through.
    fn summing_mlp(inputs: usize) -> MlpParams {
        let hidden = 4;
        let mut w1 = vec![0.0; hidden * inputs];
        for i in 0..inputs {
            w1[i] = 1.0; // first hidden unit sums all inputs
        }
        let mut w2 = vec![0.0; hidden];
        w2[0] = 1.0;
        MlpParams {
            inputs,
            hidden,
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: 0.0,
        }
    }

    #[test]
    fn mlp_summing_layer_scales_equal_inputs() {
        let model = EnsembleModel {
            params: EnsembleParams::Mlp(summing_mlp(3)),
            seed: 0,
            margin: 1.0,
            epoch_losses: Vec::new(),
        };
        // Equal score s per tool: output is |T| * s for each item.
        let scores = vec![vec![0.25, 0.5]; 3];
        let out = apply_ensemble(&model, &scores);
        assert!((out[0] - 0.75).abs() < 1e-12);
        assert!((out[1] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn uniform_attention_matches_scaled_mlp_input() {
        // Zero attention parameters give a uniform softmax gate of 1/|T|, so
        // Att(x) must equal Mlp(x / |T|) for the same MLP weights.
        let mlp = summing_mlp(3);
        let att = EnsembleModel {
            params: EnsembleParams::Att {
                attn_scale: vec![0.0; 3],
                attn_bias: vec![0.0; 3],
                mlp: mlp.clone(),
            },
            seed: 0,
            margin: 1.0,
            epoch_losses: Vec::new(),
        };
        let plain = EnsembleModel {
            params: EnsembleParams::Mlp(mlp),
            seed: 0,
            margin: 1.0,
            epoch_losses: Vec::new(),
        };
        let scores = vec![
            vec![0.9, 0.1, 0.4],
            vec![0.3, 0.8, 0.4],
            vec![0.6, 0.2, 0.4],
        ];
        let scaled: Vec<Vec<f64>> = scores
            .iter()
            .map(|v| v.iter().map(|s| s / 3.0).collect())
            .collect();
        let att_out = apply_ensemble(&att, &scores);
        let mlp_out = apply_ensemble(&plain, &scaled);
        for (a, b) in att_out.iter().zip(&mlp_out) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn blend_examples() {
        // Constant learned vector: blended argsort equals the memory argsort.
        let memory = vec![0.2, 0.9, 0.5];
        let blended = blend(&memory, &[0.7, 0.7, 0.7]);
        assert!(blended[1] > blended[2] && blended[2] > blended[0]);

        // Identical inputs: argsort preserved.
        let blended = blend(&memory, &memory);
        assert!(blended[1] > blended[2] && blended[2] > blended[0]);

        // Hand case: [0,0.5,1] + [1,0,0.5] -> [1,0.5,1.5], top item 2.
        let blended = blend(&[0.0, 0.5, 1.0], &[1.0, 0.0, 0.5]);
        assert_eq!(blended, vec![1.0, 0.5, 1.5]);
    }

    #[test]
    fn blend_is_argsort_commutative_on_normalized_inputs() {
        let a = vec![0.0, 0.4, 1.0, 0.2];
        let b = vec![1.0, 0.0, 0.3, 0.6];
        let argsort = |v: &[f64]| {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&x, &y| v[y].partial_cmp(&v[x]).unwrap().then(x.cmp(&y)));
            idx
        };
        assert_eq!(argsort(&blend(&a, &b)), argsort(&blend(&b, &a)));
    }

    #[test]
    fn param_counts_strictly_ordered() {
        let examples = informative_tool_examples(1, 5);
        let hyper = EnsembleHyperparams {
            epochs: 1,
            ..Default::default()
        };
        let counts: Vec<usize> = [
            EnsembleKind::Rc,
            EnsembleKind::Lr,
            EnsembleKind::Mlp,
            EnsembleKind::Att,
        ]
        .into_iter()
        .map(|kind| {
            train_ensemble(kind, &examples, &hyper, 1)
                .unwrap()
                .param_count()
        })
        .collect();
        assert!(counts.windows(2).all(|w| w[0] < w[1]), "counts: {counts:?}");
    }

    #[test]
    fn lr_scaling_invariance() {
        let scores = vec![
            vec![0.9, 0.1, 0.3, 0.5],
            vec![0.2, 0.8, 0.1, 0.6],
            vec![0.4, 0.4, 0.9, 0.2],
        ];
        let argsort = |v: &[f64]| {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&a, &b| v[b].partial_cmp(&v[a]).unwrap().then(a.cmp(&b)));
            idx
        };
        let base = EnsembleModel {
            params: EnsembleParams::Lr {
                v: vec![0.5, 0.3, 0.2],
            },
            seed: 0,
            margin: 1.0,
            epoch_losses: Vec::new(),
        };
        let scaled = EnsembleModel {
            params: EnsembleParams::Lr {
                v: vec![5.0, 3.0, 2.0],
            },
            ..base.clone()
        };
        assert_eq!(
            argsort(&apply_ensemble(&base, &scores)),
            argsort(&apply_ensemble(&scaled, &scores))
        );
    }
}
