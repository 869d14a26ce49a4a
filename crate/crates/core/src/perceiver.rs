//! Dual-path Bayesian tail perceiver.
//!
//! Intrinsic and interactive metric vectors are robustly normalised, pushed
//! through one two-layer Bayesian MLP each, fused with weights derived from
//! each path's KL divergence to a standard-normal prior, and mapped through
//! softplus to a non-negative Tail Index.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interaction::{InteractiveMetrics, INTERACTIVE_DIM};
use crate::intrinsic::{IntrinsicMetrics, INTRINSIC_DIM};

/// Normalised features are clipped to this magnitude.
pub const FEATURE_CLIP: f64 = 10.0;

pub const DEFAULT_HIDDEN: usize = 128;
pub const DEFAULT_LATENT: usize = 64;

/// Per-metric median and interquartile range over a reference corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub median: Vec<f64>,
    pub scale: Vec<f64>,
    /// Metrics whose IQR was zero; their scale is 1.
    pub degenerate: Vec<bool>,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl DatasetStats {
    /// Computes robust statistics column-wise over `samples`.
    pub fn fit(samples: &[Vec<f64>]) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::usage(format!(
                "dataset statistics need at least 2 samples, got {}",
                samples.len()
            )));
        }
        let dim = samples[0].len();
        if samples.iter().any(|s| s.len() != dim) {
            return Err(Error::usage("dataset statistics need equal-length samples"));
        }
        let mut median = Vec::with_capacity(dim);
        let mut scale = Vec::with_capacity(dim);
        let mut degenerate = Vec::with_capacity(dim);
        for c in 0..dim {
            let mut col: Vec<f64> = samples.iter().map(|s| s[c]).collect();
            if col.iter().any(|x| !x.is_finite()) {
                return Err(Error::usage(format!(
                    "non-finite value in metric column {c}"
                )));
            }
            col.sort_by(f64::total_cmp);
            median.push(quantile(&col, 0.5));
            let iqr = quantile(&col, 0.75) - quantile(&col, 0.25);
            if iqr > 0.0 {
                scale.push(iqr);
                degenerate.push(false);
            } else {
                scale.push(1.0);
                degenerate.push(true);
            }
        }
        Ok(Self {
            median,
            scale,
            degenerate,
        })
    }

    /// Statistics over metric pairs, laid out intrinsic first.
    pub fn fit_metrics(metrics: &[(IntrinsicMetrics, InteractiveMetrics)]) -> Result<Self> {
        let rows: Vec<Vec<f64>> = metrics.iter().map(|(i, r)| concat_metrics(i, r)).collect();
        Self::fit(&rows)
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            median: vec![0.0; dim],
            scale: vec![1.0; dim],
            degenerate: vec![false; dim],
        }
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.median.iter().zip(&self.scale))
            .map(|(&v, (&m, &s))| ((v - m) / s).clamp(-FEATURE_CLIP, FEATURE_CLIP))
            .collect()
    }
}

fn concat_metrics(i: &IntrinsicMetrics, r: &InteractiveMetrics) -> Vec<f64> {
    i.to_array()
        .iter()
        .chain(r.to_array().iter())
        .copied()
        .collect()
}

/// Robust z-scores of the fourteen metrics, split into intrinsic and
/// interactive feature vectors.
pub fn normalize_features(
    intrinsic: &IntrinsicMetrics,
    interactive: &InteractiveMetrics,
    stats: &DatasetStats,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let dim = INTRINSIC_DIM + INTERACTIVE_DIM;
    if stats.median.len() != dim || stats.scale.len() != dim {
        return Err(Error::config(format!(
            "dataset statistics must cover {dim} metrics"
        )));
    }
    let mut all = stats.normalize(&concat_metrics(intrinsic, interactive));
    let f_r = all.split_off(INTRINSIC_DIM);
    Ok((all, f_r))
}

/// Dense layer whose weights and biases carry independent Gaussian
/// posteriors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianLayer {
    pub mu_w: Vec<Vec<f64>>,
    pub sigma_w: Vec<Vec<f64>>,
    pub mu_b: Vec<f64>,
    pub sigma_b: Vec<f64>,
}

impl GaussianLayer {
    pub fn out_dim(&self) -> usize {
        self.mu_b.len()
    }

    pub fn in_dim(&self) -> usize {
        self.mu_w.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let (out, inp) = (self.out_dim(), self.in_dim());
        let rows_ok = |m: &Vec<Vec<f64>>| m.len() == out && m.iter().all(|r| r.len() == inp);
        if out == 0
            || inp == 0
            || !rows_ok(&self.mu_w)
            || !rows_ok(&self.sigma_w)
            || self.sigma_b.len() != out
        {
            return Err(Error::config(format!(
                "gaussian layer shapes inconsistent with {out}x{inp}"
            )));
        }
        let sigmas = self.sigma_w.iter().flatten().chain(&self.sigma_b);
        if sigmas.into_iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::config(
                "gaussian layer sigmas must be positive and finite",
            ));
        }
        if self
            .mu_w
            .iter()
            .flatten()
            .chain(&self.mu_b)
            .any(|m| !m.is_finite())
        {
            return Err(Error::config("gaussian layer means must be finite"));
        }
        Ok(())
    }

    /// Sum over parameters of KL(N(mu, sigma^2) || N(0, 1)).
    pub fn kl_to_standard_normal(&self) -> Result<f64> {
        let pairs = self
            .mu_w
            .iter()
            .flatten()
            .zip(self.sigma_w.iter().flatten())
            .chain(self.mu_b.iter().zip(&self.sigma_b));
        let mut kl = 0.0;
        for (&mu, &sigma) in pairs {
            if !(sigma.is_finite() && sigma > 0.0) {
                return Err(Error::config(format!(
                    "non-positive posterior sigma {sigma}"
                )));
            }
            let var = sigma * sigma;
            kl += 0.5 * (mu * mu + var - 1.0 - var.ln());
        }
        Ok(kl)
    }

    fn draw(&self, rng: &mut Option<ChaCha8Rng>) -> (Vec<Vec<f64>>, Vec<f64>) {
        match rng {
            None => (self.mu_w.clone(), self.mu_b.clone()),
            Some(rng) => {
                let mut eps = || -> f64 { StandardNormal.sample(rng) };
                let w = self
                    .mu_w
                    .iter()
                    .zip(&self.sigma_w)
                    .map(|(mr, sr)| mr.iter().zip(sr).map(|(m, s)| m + s * eps()).collect())
                    .collect();
                let b = self
                    .mu_b
                    .iter()
                    .zip(&self.sigma_b)
                    .map(|(m, s)| m + s * eps())
                    .collect();
                (w, b)
            }
        }
    }
}

fn affine(w: &[Vec<f64>], b: &[f64], x: &[f64]) -> Vec<f64> {
    w.iter()
        .zip(b)
        .map(|(row, bias)| row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + bias)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum ForwardMode {
    /// Use posterior means.
    Mean,
    /// Draw every parameter as mu + sigma * eps with seeded eps.
    Sample { seed: u64 },
}

/// Two-layer ReLU forward pass through Gaussian layers.
pub fn bayes_forward(
    layers: &[GaussianLayer; 2],
    x: &[f64],
    mode: ForwardMode,
) -> Result<Vec<f64>> {
    for l in layers {
        l.validate()?;
    }
    if layers[0].in_dim() != x.len() || layers[1].in_dim() != layers[0].out_dim() {
        return Err(Error::config(format!(
            "shape mismatch: input {} into {}x{} then {}x{}",
            x.len(),
            layers[0].out_dim(),
            layers[0].in_dim(),
            layers[1].out_dim(),
            layers[1].in_dim()
        )));
    }
    let mut rng = match mode {
        ForwardMode::Mean => None,
        ForwardMode::Sample { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
    };
    let (w1, b1) = layers[0].draw(&mut rng);
    let (w2, b2) = layers[1].draw(&mut rng);
    let hidden: Vec<f64> = affine(&w1, &b1, x)
        .into_iter()
        .map(|h| h.max(0.0))
        .collect();
    Ok(affine(&w2, &b2, &hidden))
}

/// KL divergence of a set of layers to a standard-normal prior.
pub fn kl_diag_gaussian(layers: &[GaussianLayer]) -> Result<f64> {
    layers
        .iter()
        .map(GaussianLayer::kl_to_standard_normal)
        .sum()
}

/// Which path the fusion favours.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionRule {
    /// softmax(+lambda * KL): the more uncertain path dominates.
    #[default]
    HigherKl,
    /// softmax(-lambda * KL).
    LowerKl,
}

pub fn fusion_weights(kl_i: f64, kl_r: f64, lambda_temp: f64) -> (f64, f64) {
    fusion_weights_with_rule(kl_i, kl_r, lambda_temp, FusionRule::HigherKl)
}

pub fn fusion_weights_with_rule(
    kl_i: f64,
    kl_r: f64,
    lambda_temp: f64,
    rule: FusionRule,
) -> (f64, f64) {
    let sign = match rule {
        FusionRule::HigherKl => 1.0,
        FusionRule::LowerKl => -1.0,
    };
    let li = sign * lambda_temp * kl_i;
    let lr = sign * lambda_temp * kl_r;
    let m = li.max(lr);
    let (ei, er) = ((li - m).exp(), (lr - m).exp());
    let alpha_i = ei / (ei + er);
    (alpha_i, 1.0 - alpha_i)
}

/// log(1 + e^x), stable for large |x|.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn tail_index(
    z_i: &[f64],
    z_r: &[f64],
    alpha: (f64, f64),
    w_o: &[f64],
    b_o: f64,
) -> Result<f64> {
    if z_i.len() != w_o.len() || z_r.len() != w_o.len() {
        return Err(Error::config(format!(
            "latent sizes {} and {} do not match output weights {}",
            z_i.len(),
            z_r.len(),
            w_o.len()
        )));
    }
    let pre: f64 = w_o
        .iter()
        .zip(z_i.iter().zip(z_r))
        .map(|(w, (a, b))| w * (alpha.0 * a + alpha.1 * b))
        .sum::<f64>()
        + b_o;
    Ok(softplus(pre))
}

/// Mean absolute difference of the two sorted samples (1-Wasserstein between
/// empirical distributions of equal size).
pub fn rank_supervision_loss(tis: &[f64], ades: &[f64]) -> Result<f64> {
    if tis.len() != ades.len() {
        return Err(Error::usage(format!(
            "length mismatch: {} tail indices vs {} errors",
            tis.len(),
            ades.len()
        )));
    }
    if tis.is_empty() {
        return Err(Error::usage("rank loss needs at least one sample"));
    }
    let mut a = tis.to_vec();
    let mut b = ades.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

fn default_lambda() -> f64 {
    1.0
}

/// Weights of both perceiver paths and the output head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceiverParams {
    pub path_i: [GaussianLayer; 2],
    pub path_r: [GaussianLayer; 2],
    pub w_o: Vec<f64>,
    pub b_o: f64,
    #[serde(default = "default_lambda")]
    pub lambda_temp: f64,
    #[serde(default)]
    pub fusion_rule: FusionRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailIndexResult {
    #[serde(rename = "TI")]
    pub ti: f64,
    pub z_i: Vec<f64>,
    pub z_r: Vec<f64>,
    pub alpha_i: f64,
    pub alpha_r: f64,
    pub kl_i: f64,
    pub kl_r: f64,
}

fn seeded_layer(rng: &mut ChaCha8Rng, out: usize, inp: usize) -> GaussianLayer {
    let mu_scale = 1.0 / (inp as f64).sqrt();
    let sigma = softplus(-5.0);
    let mut normal = || -> f64 { StandardNormal.sample(rng) };
    GaussianLayer {
        mu_w: (0..out)
            .map(|_| (0..inp).map(|_| mu_scale * normal()).collect())
            .collect(),
        sigma_w: vec![vec![sigma; inp]; out],
        mu_b: vec![0.0; out],
        sigma_b: vec![sigma; out],
    }
}

impl PerceiverParams {
    /// Seeded initial parameters: N(0, 1/fan_in) means and
    /// sigma = softplus(-5).
    pub fn init_seeded(seed: u64, hidden: usize, latent: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let path_i = [
            seeded_layer(&mut rng, hidden, INTRINSIC_DIM),
            seeded_layer(&mut rng, latent, hidden),
        ];
        let path_r = [
            seeded_layer(&mut rng, hidden, INTERACTIVE_DIM),
            seeded_layer(&mut rng, latent, hidden),
        ];
        let scale = 1.0 / (latent as f64).sqrt();
        let w_o = (0..latent)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                scale * z
            })
            .collect();
        Self {
            path_i,
            path_r,
            w_o,
            b_o: 0.0,
            lambda_temp: 1.0,
            fusion_rule: FusionRule::HigherKl,
        }
    }

    /// A perceiver whose Tail Index is a strictly increasing function of one
    /// intrinsic feature and ignores all others.
    pub fn monotone_probe(feature: usize) -> Result<Self> {
        if feature >= INTRINSIC_DIM {
            return Err(Error::usage(format!(
                "intrinsic feature index {feature} out of range"
            )));
        }
        let tiny = 1e-12;
        let mut w1 = vec![vec![0.0; INTRINSIC_DIM]];
        w1[0][feature] = 1.0;
        // Bias keeps the ReLU active over the whole clipped feature range.
        let path_i = [
            GaussianLayer {
                mu_w: w1,
                sigma_w: vec![vec![tiny; INTRINSIC_DIM]],
                mu_b: vec![FEATURE_CLIP],
                sigma_b: vec![tiny],
            },
            GaussianLayer {
                mu_w: vec![vec![1.0]],
                sigma_w: vec![vec![tiny]],
                mu_b: vec![0.0],
                sigma_b: vec![tiny],
            },
        ];
        let path_r = [
            GaussianLayer {
                mu_w: vec![vec![0.0; INTERACTIVE_DIM]],
                sigma_w: vec![vec![tiny; INTERACTIVE_DIM]],
                mu_b: vec![0.0],
                sigma_b: vec![tiny],
            },
            GaussianLayer {
                mu_w: vec![vec![0.0]],
                sigma_w: vec![vec![tiny]],
                mu_b: vec![0.0],
                sigma_b: vec![tiny],
            },
        ];
        Ok(Self {
            path_i,
            path_r,
            w_o: vec![1.0],
            b_o: -FEATURE_CLIP,
            lambda_temp: 0.0,
            fusion_rule: FusionRule::HigherKl,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.w_o.len()
    }

    pub fn validate(&self) -> Result<()> {
        for l in self.path_i.iter().chain(&self.path_r) {
            l.validate()?;
        }
        for (name, path) in [("path_i", &self.path_i), ("path_r", &self.path_r)] {
            if path[1].in_dim() != path[0].out_dim() {
                return Err(Error::config(format!("{name}: layer shapes do not chain")));
            }
            if path[1].out_dim() != self.latent_dim() {
                return Err(Error::config(format!(
                    "{name}: latent size {} does not match w_o length {}",
                    path[1].out_dim(),
                    self.latent_dim()
                )));
            }
        }
        if self.path_i[0].in_dim() != INTRINSIC_DIM || self.path_r[0].in_dim() != INTERACTIVE_DIM {
            return Err(Error::config(format!(
                "paths must take {INTRINSIC_DIM} intrinsic and {INTERACTIVE_DIM} interactive inputs"
            )));
        }
        if !self.b_o.is_finite()
            || !self.lambda_temp.is_finite()
            || self.w_o.iter().any(|w| !w.is_finite())
        {
            return Err(Error::config("output head and temperature must be finite"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text)
            .map_err(|e| Error::config(format!("perceiver params: {e}")))?;
        p.validate()?;
        Ok(p)
    }

    /// Full forward evaluation. In sample mode the interactive path draws
    /// from `seed + 1`.
    pub fn evaluate(&self, f_i: &[f64], f_r: &[f64], mode: ForwardMode) -> Result<TailIndexResult> {
        let mode_r = match mode {
            ForwardMode::Mean => ForwardMode::Mean,
            ForwardMode::Sample { seed } => ForwardMode::Sample {
                seed: seed.wrapping_add(1),
            },
        };
        let z_i = bayes_forward(&self.path_i, f_i, mode)?;
        let z_r = bayes_forward(&self.path_r, f_r, mode_r)?;
        let kl_i = kl_diag_gaussian(&self.path_i)?;
        let kl_r = kl_diag_gaussian(&self.path_r)?;
        let (alpha_i, alpha_r) =
            fusion_weights_with_rule(kl_i, kl_r, self.lambda_temp, self.fusion_rule);
        let ti = tail_index(&z_i, &z_r, (alpha_i, alpha_r), &self.w_o, self.b_o)?;
        Ok(TailIndexResult {
            ti,
            z_i,
            z_r,
            alpha_i,
            alpha_r,
            kl_i,
            kl_r,
        })
    }
}
