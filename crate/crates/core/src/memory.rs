//! Tail-Index-partitioned prototype memory and the cognitive set mechanism.
//!
//! Prototypes are category means refined by a TI-weighted momentum update.
//! A gating MLP proposes a category allocation, which a vigilance gate blends
//! with a tail-biased prior depending on how well the sample matches its
//! closest prototype. The memory adapts by one analytic gradient step on the
//! prototype contrastive loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vectors with a norm below this have no direction.
pub const EPS_NORM: f64 = 1e-12;

pub const DEFAULT_CATEGORIES: usize = 5;
pub const DEFAULT_FEATURE_DIM: usize = 64;
pub const DEFAULT_INNER_LR: f64 = 1e-3;

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(sigmoid(x)) without overflow or cancellation.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Category assignment by Tail Index percentile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub assignments: Vec<usize>,
    /// Tail Index at which each category after the first begins.
    pub boundaries: Vec<f64>,
    /// Some boundary falls between equal Tail Index values.
    pub ties: bool,
}

/// Splits samples into `categories` equal-mass bins in ascending TI order;
/// equal values keep their input order.
pub fn partition_categories(tis: &[f64], categories: usize) -> Result<Partition> {
    let n = tis.len();
    if categories == 0 || categories > n {
        return Err(Error::usage(format!(
            "cannot split {n} samples into {categories} categories"
        )));
    }
    if tis.iter().any(|t| !t.is_finite()) {
        return Err(Error::usage("tail indices must be finite"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| tis[a].total_cmp(&tis[b]));
    let mut assignments = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        assignments[i] = rank * categories / n;
    }
    let mut boundaries = Vec::with_capacity(categories - 1);
    let mut ties = false;
    for c in 1..categories {
        let first = (c * n).div_ceil(categories);
        boundaries.push(tis[order[first]]);
        if tis[order[first - 1]] == tis[order[first]] {
            ties = true;
        }
    }
    Ok(Partition {
        assignments,
        boundaries,
        ties,
    })
}

/// C x D prototype matrix with its momentum factor and category boundaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeMemory {
    pub prototypes: Vec<Vec<f64>>,
    pub eta: f64,
    pub boundaries: Vec<f64>,
}

impl PrototypeMemory {
    pub fn new(prototypes: Vec<Vec<f64>>, eta: f64, boundaries: Vec<f64>) -> Result<Self> {
        let mem = Self {
            prototypes,
            eta,
            boundaries,
        };
        mem.validate()?;
        Ok(mem)
    }

    /// Initialises each prototype as the mean feature of its category.
    pub fn from_partition(features: &[Vec<f64>], partition: &Partition, eta: f64) -> Result<Self> {
        if features.len() != partition.assignments.len() {
            return Err(Error::usage("features and assignments differ in length"));
        }
        let c = partition.boundaries.len() + 1;
        let d = features.first().map_or(0, Vec::len);
        let mut sums = vec![vec![0.0; d]; c];
        let mut counts = vec![0usize; c];
        for (f, &k) in features.iter().zip(&partition.assignments) {
            if f.len() != d {
                return Err(Error::usage("features differ in dimension"));
            }
            counts[k] += 1;
            sums[k].iter_mut().zip(f).for_each(|(s, x)| *s += x);
        }
        for (k, (row, &n)) in sums.iter_mut().zip(&counts).enumerate() {
            if n == 0 {
                return Err(Error::usage(format!("category {k} has no samples")));
            }
            row.iter_mut().for_each(|s| *s /= n as f64);
        }
        Self::new(sums, eta, partition.boundaries.clone())
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.prototypes.len();
        let d = self.dim();
        if c == 0 || d == 0 || self.prototypes.iter().any(|r| r.len() != d) {
            return Err(Error::config(
                "prototype matrix must be a nonempty C x D matrix",
            ));
        }
        if self.prototypes.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::config("prototypes must be finite"));
        }
        if let Some(k) = self
            .prototypes
            .iter()
            .position(|r| r.iter().all(|&x| x == 0.0))
        {
            return Err(Error::config(format!("prototype {k} is identically zero")));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::config(format!(
                "momentum must lie in [0, 1], got {}",
                self.eta
            )));
        }
        if !self.boundaries.is_empty() && self.boundaries.len() != c - 1 {
            return Err(Error::config(format!(
                "expected {} category boundaries, got {}",
                c - 1,
                self.boundaries.len()
            )));
        }
        if self.boundaries.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::config("category boundaries must be ascending"));
        }
        Ok(())
    }

    pub fn categories(&self) -> usize {
        self.prototypes.len()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.first().map_or(0, Vec::len)
    }

    /// Category of a Tail Index value according to the stored boundaries.
    pub fn category_of(&self, ti: f64) -> usize {
        self.boundaries.iter().take_while(|&&b| ti >= b).count()
    }
}

/// One sample of an adaptation batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationSample {
    pub f_m: Vec<f64>,
    pub f_i: Vec<f64>,
    pub f_r: Vec<f64>,
    pub ti: f64,
}

impl AdaptationSample {
    /// Gating input `[F_m, F_i, F_r, TI]`.
    pub fn h(&self) -> Vec<f64> {
        let mut h = Vec::with_capacity(self.f_m.len() + self.f_i.len() + self.f_r.len() + 1);
        h.extend_from_slice(&self.f_m);
        h.extend_from_slice(&self.f_i);
        h.extend_from_slice(&self.f_r);
        h.push(self.ti);
        h
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdaptationBatch {
    pub samples: Vec<AdaptationSample>,
}

impl AdaptationBatch {
    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.samples.first() else {
            return Ok(());
        };
        let dims = (first.f_m.len(), first.f_i.len(), first.f_r.len());
        if self
            .samples
            .iter()
            .any(|s| (s.f_m.len(), s.f_i.len(), s.f_r.len()) != dims)
        {
            return Err(Error::usage("adaptation batch has inconsistent dimensions"));
        }
        Ok(())
    }
}

/// TI-weighted momentum update. `categories[i]` is the category of sample
/// `i`; categories without samples are left unchanged.
pub fn update_prototypes(
    mem: &PrototypeMemory,
    batch: &AdaptationBatch,
    categories: &[usize],
) -> Result<PrototypeMemory> {
    batch.validate()?;
    if categories.len() != batch.samples.len() {
        return Err(Error::usage("one category per sample is required"));
    }
    if categories.iter().any(|&k| k >= mem.categories()) {
        return Err(Error::usage("category index out of range"));
    }
    let mut next = mem.clone();
    for (c, row) in next.prototypes.iter_mut().enumerate() {
        let members: Vec<&AdaptationSample> = batch
            .samples
            .iter()
            .zip(categories)
            .filter(|(_, &k)| k == c)
            .map(|(s, _)| s)
            .collect();
        if members.is_empty() {
            continue;
        }
        if members.iter().any(|s| s.f_m.len() != row.len()) {
            return Err(Error::usage("feature dimension does not match the memory"));
        }
        let shift = members
            .iter()
            .map(|s| s.ti)
            .fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = members.iter().map(|s| (s.ti - shift).exp()).collect();
        let total: f64 = weights.iter().sum();
        for (d, m) in row.iter_mut().enumerate() {
            let mix: f64 = members
                .iter()
                .zip(&weights)
                .map(|(s, w)| w * s.f_m[d])
                .sum::<f64>()
                / total;
            *m = mem.eta * *m + (1.0 - mem.eta) * mix;
        }
    }
    Ok(next)
}

/// Plain dense layer `y = W x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(out: usize, inp: usize) -> Self {
        Self {
            w: vec![vec![0.0; inp]; out],
            b: vec![0.0; out],
        }
    }

    fn check(&self, inp: usize, name: &str) -> Result<()> {
        if self.w.len() != self.b.len() || self.w.iter().any(|r| r.len() != inp) {
            return Err(Error::config(format!(
                "{name}: expected {} x {inp} weights",
                self.b.len()
            )));
        }
        Ok(())
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.w
            .iter()
            .zip(&self.b)
            .map(|(r, b)| dot(r, x) + b)
            .collect()
    }
}

/// Gating network: a ReLU hidden layer feeding an allocation head (C logits)
/// and a scalar gate head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateMlp {
    pub hidden: DenseLayer,
    pub alloc: DenseLayer,
    pub gate: DenseLayer,
}

impl GateMlp {
    pub fn zeros(input: usize, hidden: usize, categories: usize) -> Self {
        Self {
            hidden: DenseLayer::zeros(hidden, input),
            alloc: DenseLayer::zeros(categories, hidden),
            gate: DenseLayer::zeros(1, hidden),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.w.first().map_or(0, Vec::len)
    }

    fn hidden_of(&self, h: &[f64]) -> Result<Vec<f64>> {
        if h.len() != self.input_dim() {
            return Err(Error::config(format!(
                "gate input has {} entries, expected {}",
                h.len(),
                self.input_dim()
            )));
        }
        self.hidden.check(h.len(), "gate hidden layer")?;
        let width = self.hidden.b.len();
        self.alloc.check(width, "allocation head")?;
        self.gate.check(width, "gate head")?;
        if self.gate.b.len() != 1 {
            return Err(Error::config("gate head must have one output"));
        }
        Ok(self
            .hidden
            .apply(h)
            .into_iter()
            .map(|x| x.max(0.0))
            .collect())
    }

    pub fn allocation_logits(&self, h: &[f64]) -> Result<Vec<f64>> {
        Ok(self.alloc.apply(&self.hidden_of(h)?))
    }

    pub fn gate_logit(&self, h: &[f64]) -> Result<f64> {
        Ok(self.gate.apply(&self.hidden_of(h)?)[0])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CognitiveSetParams {
    pub tau: f64,
    pub rho_vig: f64,
    pub gamma_steep: f64,
    pub b_tail: Vec<f64>,
    pub gate_mlp: GateMlp,
}

/// Normalised ramp (1, 2, ..., C) / sum favouring high-TI categories.
pub fn tail_ramp(categories: usize) -> Vec<f64> {
    let total = (categories * (categories + 1) / 2) as f64;
    (1..=categories).map(|k| k as f64 / total).collect()
}

impl CognitiveSetParams {
    /// Default temperatures with a zero-weight gating network.
    pub fn with_zero_gate(input: usize, hidden: usize, categories: usize) -> Self {
        Self {
            tau: 10.0,
            rho_vig: 0.5,
            gamma_steep: 10.0,
            b_tail: tail_ramp(categories),
            gate_mlp: GateMlp::zeros(input, hidden, categories),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::config("tau must be positive"));
        }
        if !(self.gamma_steep.is_finite() && self.gamma_steep > 0.0) {
            return Err(Error::config("gamma_steep must be positive"));
        }
        if self.b_tail.iter().any(|&b| b.is_nan() || b < 0.0)
            || (self.b_tail.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::config("b_tail must lie on the probability simplex"));
        }
        if self.gate_mlp.alloc.b.len() != self.b_tail.len() {
            return Err(Error::config(
                "allocation head and b_tail disagree on the category count",
            ));
        }
        Ok(())
    }
}

/// Softmax of the gating network's allocation head.
pub fn allocation(h: &[f64], params: &CognitiveSetParams) -> Result<Vec<f64>> {
    Ok(softmax(&params.gate_mlp.allocation_logits(h)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Similarity {
    pub s: Vec<f64>,
    /// Entries forced to 0 because the feature or the prototype had no norm.
    pub degenerate: Vec<bool>,
}

/// Cosine similarity of `f_m` with every prototype row, times `tau`.
pub fn similarity(f_m: &[f64], prototypes: &[Vec<f64>], tau: f64) -> Result<Similarity> {
    let nf = norm(f_m);
    let mut s = Vec::with_capacity(prototypes.len());
    let mut degenerate = Vec::with_capacity(prototypes.len());
    for row in prototypes {
        if row.len() != f_m.len() {
            return Err(Error::config(format!(
                "feature has {} entries, prototypes {}",
                f_m.len(),
                row.len()
            )));
        }
        let nm = norm(row);
        if nf < EPS_NORM || nm < EPS_NORM {
            s.push(0.0);
            degenerate.push(true);
        } else {
            s.push(tau * dot(f_m, row) / (nf * nm));
            degenerate.push(false);
        }
    }
    Ok(Similarity { s, degenerate })
}

/// Vigilance weight `sigmoid(gamma * (max s - rho))`.
pub fn vigilance(s: &[f64], params: &CognitiveSetParams) -> f64 {
    let max_s = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    sigmoid(params.gamma_steep * (max_s - params.rho_vig))
}

pub fn vigilance_adjust(g: &[f64], s: &[f64], params: &CognitiveSetParams) -> Vec<f64> {
    let lambda = vigilance(s, params);
    g.iter()
        .zip(&params.b_tail)
        .map(|(gk, bk)| lambda * gk + (1.0 - lambda) * bk)
        .collect()
}

fn alignment(g_adj: &[f64], s: &[f64]) -> f64 {
    g_adj
        .iter()
        .zip(s)
        .map(|(g, sk)| (2.0 * g - 1.0) * sk)
        .sum()
}

/// Prototype contrastive loss over a batch of adjusted allocations and
/// similarities.
pub fn proto_loss(g_adj: &[Vec<f64>], s: &[Vec<f64>]) -> Result<f64> {
    if g_adj.is_empty() || g_adj.len() != s.len() {
        return Err(Error::usage(
            "proto loss needs matching, nonempty allocation and similarity batches",
        ));
    }
    let total: f64 = g_adj
        .iter()
        .zip(s)
        .map(|(g, sk)| -log_sigmoid(alignment(g, sk)))
        .sum();
    Ok(total / g_adj.len() as f64)
}

/// Prototype loss as a function of the memory, allocations held fixed.
pub fn proto_loss_for_memory(
    prototypes: &[Vec<f64>],
    features: &[Vec<f64>],
    g_adj: &[Vec<f64>],
    tau: f64,
) -> Result<f64> {
    let s = features
        .iter()
        .map(|f| similarity(f, prototypes, tau).map(|x| x.s))
        .collect::<Result<Vec<_>>>()?;
    proto_loss(g_adj, &s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtoGradient {
    pub grad: Vec<Vec<f64>>,
    /// Rows whose norm was below [`EPS_NORM`]; their gradient is zero.
    pub zero_rows: Vec<usize>,
}

/// Analytic gradient of the prototype loss with respect to every prototype
/// row, treating the adjusted allocations as constants.
pub fn proto_loss_grad(
    prototypes: &[Vec<f64>],
    features: &[Vec<f64>],
    g_adj: &[Vec<f64>],
    tau: f64,
) -> Result<ProtoGradient> {
    if features.is_empty() || features.len() != g_adj.len() {
        return Err(Error::usage(
            "gradient needs matching, nonempty feature and allocation batches",
        ));
    }
    let b = features.len() as f64;
    let d = prototypes.first().map_or(0, Vec::len);
    let norms: Vec<f64> = prototypes.iter().map(|r| norm(r)).collect();
    let zero_rows: Vec<usize> = norms
        .iter()
        .enumerate()
        .filter(|(_, &n)| n < EPS_NORM)
        .map(|(k, _)| k)
        .collect();
    let mut grad = vec![vec![0.0; d]; prototypes.len()];
    for (f, g) in features.iter().zip(g_adj) {
        let sim = similarity(f, prototypes, tau)?;
        let nf = norm(f);
        if nf < EPS_NORM {
            continue;
        }
        // dL/du for this sample, u being the alignment score.
        let dl_du = -sigmoid(-alignment(g, &sim.s)) / b;
        for (k, row) in prototypes.iter().enumerate() {
            if norms[k] < EPS_NORM {
                continue;
            }
            let cos = sim.s[k] / tau;
            let coef = dl_du * (2.0 * g[k] - 1.0) * tau / (nf * norms[k]);
            for ((gd, fx), mx) in grad[k].iter_mut().zip(f).zip(row) {
                *gd += coef * (fx - cos * nf * mx / norms[k]);
            }
        }
    }
    Ok(ProtoGradient { grad, zero_rows })
}

/// One gradient step on the prototype loss. Returns the updated matrix and
/// leaves `mem` untouched.
pub fn inner_update(
    mem: &PrototypeMemory,
    features: &[Vec<f64>],
    g_adj: &[Vec<f64>],
    tau: f64,
    alpha_lr: f64,
) -> Result<(Vec<Vec<f64>>, ProtoGradient)> {
    let grad = proto_loss_grad(&mem.prototypes, features, g_adj, tau)?;
    let updated = mem
        .prototypes
        .iter()
        .zip(&grad.grad)
        .map(|(row, gr)| row.iter().zip(gr).map(|(m, g)| m - alpha_lr * g).collect())
        .collect();
    Ok((updated, grad))
}

/// `F_m + sigmoid(gate(h)) * sum_k g'_k M'_k`.
pub fn augment(
    f_m: &[f64],
    h: &[f64],
    g_adj: &[f64],
    prototypes: &[Vec<f64>],
    params: &CognitiveSetParams,
) -> Result<Vec<f64>> {
    if g_adj.len() != prototypes.len() || prototypes.iter().any(|r| r.len() != f_m.len()) {
        return Err(Error::config(
            "allocation, prototypes and feature dimensions disagree",
        ));
    }
    let gate = sigmoid(params.gate_mlp.gate_logit(h)?);
    Ok(f_m
        .iter()
        .enumerate()
        .map(|(d, x)| {
            x + gate
                * g_adj
                    .iter()
                    .zip(prototypes)
                    .map(|(g, row)| g * row[d])
                    .sum::<f64>()
        })
        .collect())
}

/// Outcome of one cognitive-set adaptation pass over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationOutcome {
    pub g: Vec<Vec<f64>>,
    pub g_adj: Vec<Vec<f64>>,
    pub s: Vec<Vec<f64>>,
    pub loss_before: f64,
    pub loss_after: f64,
    pub prototypes: Vec<Vec<f64>>,
    pub augmented: Vec<Vec<f64>>,
}

/// Allocation, vigilance, inner update and augmentation for a whole batch.
pub fn adapt(
    mem: &PrototypeMemory,
    batch: &AdaptationBatch,
    params: &CognitiveSetParams,
    alpha_lr: f64,
) -> Result<AdaptationOutcome> {
    batch.validate()?;
    params.validate()?;
    if batch.samples.is_empty() {
        return Err(Error::usage("adaptation batch is empty"));
    }
    let hs: Vec<Vec<f64>> = batch.samples.iter().map(AdaptationSample::h).collect();
    let features: Vec<Vec<f64>> = batch.samples.iter().map(|s| s.f_m.clone()).collect();
    let mut g = Vec::new();
    let mut g_adj = Vec::new();
    let mut s = Vec::new();
    for (h, f) in hs.iter().zip(&features) {
        let gi = allocation(h, params)?;
        let si = similarity(f, &mem.prototypes, params.tau)?.s;
        g_adj.push(vigilance_adjust(&gi, &si, params));
        g.push(gi);
        s.push(si);
    }
    let loss_before = proto_loss(&g_adj, &s)?;
    let (prototypes, _) = inner_update(mem, &features, &g_adj, params.tau, alpha_lr)?;
    let loss_after = proto_loss_for_memory(&prototypes, &features, &g_adj, params.tau)?;
    let augmented = features
        .iter()
        .zip(&hs)
        .zip(&g_adj)
        .map(|((f, h), ga)| augment(f, h, ga, &prototypes, params))
        .collect::<Result<Vec<_>>>()?;
    Ok(AdaptationOutcome {
        g,
        g_adj,
        s,
        loss_before,
        loss_after,
        prototypes,
        augmented,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(c: usize, input: usize) -> CognitiveSetParams {
        CognitiveSetParams::with_zero_gate(input, 4, c)
    }

    #[test]
    fn partition_cases() {
        let p = partition_categories(&[3.0, 1.0, 2.0], 1).unwrap();
        assert_eq!(p.assignments, vec![0, 0, 0]);
        let tis = [8.0, 1.0, 7.0, 2.0, 6.0, 3.0, 5.0, 4.0];
        let p = partition_categories(&tis, 4).unwrap();
        assert_eq!(p.assignments, vec![3, 0, 3, 0, 2, 1, 2, 1]);
        assert_eq!(p.boundaries, vec![3.0, 5.0, 7.0]);
        assert!(!p.ties);
        let p = partition_categories(&[1.0; 8], 2).unwrap();
        assert_eq!(p.assignments, vec![0, 0, 0, 0, 1, 1, 1, 1]);
        assert!(p.ties);
        assert!(matches!(
            partition_categories(&[1.0], 2),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn category_lookup_matches_partition() {
        let tis = [8.0, 1.0, 7.0, 2.0, 6.0, 3.0, 5.0, 4.0];
        let p = partition_categories(&tis, 4).unwrap();
        let feats: Vec<Vec<f64>> = tis.iter().map(|&t| vec![t, 1.0]).collect();
        let mem = PrototypeMemory::from_partition(&feats, &p, 0.9).unwrap();
        for (t, &k) in tis.iter().zip(&p.assignments) {
            assert_eq!(mem.category_of(*t), k);
        }
        assert_eq!(mem.prototypes[0], vec![1.5, 1.0]);
    }

    fn sample(f: Vec<f64>, ti: f64) -> AdaptationSample {
        AdaptationSample {
            f_m: f,
            f_i: vec![],
            f_r: vec![],
            ti,
        }
    }

    #[test]
    fn momentum_update_cases() {
        let mem = PrototypeMemory::new(vec![vec![1.0, 1.0], vec![2.0, 0.0]], 1.0, vec![]).unwrap();
        let batch = AdaptationBatch {
            samples: vec![sample(vec![5.0, 5.0], 0.3)],
        };
        assert_eq!(update_prototypes(&mem, &batch, &[0]).unwrap(), mem);

        let mem0 = PrototypeMemory {
            eta: 0.0,
            ..mem.clone()
        };
        let up = update_prototypes(&mem0, &batch, &[0]).unwrap();
        assert_eq!(up.prototypes[0], vec![5.0, 5.0]);
        assert_eq!(up.prototypes[1], vec![2.0, 0.0]);

        let two = AdaptationBatch {
            samples: vec![sample(vec![1.0, 3.0], 2.0), sample(vec![3.0, 5.0], 2.0)],
        };
        let up = update_prototypes(&mem0, &two, &[1, 1]).unwrap();
        assert_eq!(up.prototypes[1], vec![2.0, 4.0]);
    }

    #[test]
    fn momentum_update_survives_huge_ti() {
        let mem = PrototypeMemory::new(vec![vec![1.0]], 0.5, vec![]).unwrap();
        let batch = AdaptationBatch {
            samples: vec![sample(vec![2.0], 1000.0), sample(vec![4.0], 1000.0)],
        };
        let up = update_prototypes(&mem, &batch, &[0, 0]).unwrap();
        assert_eq!(up.prototypes[0], vec![0.5 + 0.5 * 3.0]);
    }

    #[test]
    fn allocation_cases() {
        let p = params(3, 2);
        assert_eq!(allocation(&[1.0, -2.0], &p).unwrap(), vec![1.0 / 3.0; 3]);
        let mut p = params(2, 2);
        p.gate_mlp.alloc.b = vec![std::f64::consts::LN_2, 0.0];
        let g = allocation(&[0.3, 0.1], &p).unwrap();
        assert!((g[0] - 2.0 / 3.0).abs() < 1e-15 && (g[1] - 1.0 / 3.0).abs() < 1e-15);
        p.gate_mlp.alloc.b = vec![std::f64::consts::LN_2 + 7.0, 7.0];
        let shifted = allocation(&[0.3, 0.1], &p).unwrap();
        assert!((shifted[0] - g[0]).abs() < 1e-15);
        assert!(matches!(allocation(&[1.0], &p), Err(Error::Config(_))));
    }

    #[test]
    fn similarity_cases() {
        let m = vec![vec![2.0, 0.0], vec![0.0, 3.0], vec![0.0, 0.0]];
        let s = similarity(&[5.0, 0.0], &m, 10.0).unwrap();
        assert_eq!(s.s[0], 10.0);
        assert_eq!(s.s[1], 0.0);
        assert_eq!(s.s[2], 0.0);
        assert_eq!(s.degenerate, vec![false, false, true]);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (mut d, mut nf, mut nr) = (0.0, 0.0, 0.0);
        for i in 0..6 {
            d += f[i] * r[i];
            nf += f[i] * f[i];
            nr += r[i] * r[i];
        }
        let expected = 3.0 * d / (nf.sqrt() * nr.sqrt());
        let got = similarity(&f, &[r], 3.0).unwrap().s[0];
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn vigilance_cases() {
        let mut p = params(2, 1);
        p.b_tail = vec![0.2, 0.8];
        let g = [0.6, 0.4];
        let half = vigilance_adjust(&g, &[0.1, p.rho_vig], &p);
        assert!((half[0] - 0.4).abs() < 1e-15 && (half[1] - 0.6).abs() < 1e-15);
        let hi = vigilance_adjust(&g, &[p.rho_vig + 50.0 / p.gamma_steep], &p);
        assert!((hi[0] - 0.6).abs() < 1e-12);
        let lo = vigilance_adjust(&g, &[p.rho_vig - 50.0 / p.gamma_steep], &p);
        assert!((lo[0] - 0.2).abs() < 1e-12 && (lo[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn proto_loss_cases() {
        let l = proto_loss(&[vec![1.0]], &[vec![0.0]]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(proto_loss(&[vec![1.0]], &[vec![50.0]]).unwrap() < 1e-20);
        let g = vec![vec![0.3, 0.7], vec![0.9, 0.1]];
        let s = vec![vec![1.0, -2.0], vec![0.5, 3.0]];
        let once = proto_loss(&g, &s).unwrap();
        let twice = proto_loss(&[g.clone(), g].concat(), &[s.clone(), s].concat()).unwrap();
        assert!((once - twice).abs() < 1e-15);
    }

    #[test]
    fn inner_update_cases() {
        let mem = PrototypeMemory::new(vec![vec![1.0, 2.0]], 0.9, vec![]).unwrap();
        let feats = vec![vec![0.5, -1.0]];
        let g = vec![vec![1.0]];
        let (m, _) = inner_update(&mem, &feats, &g, 10.0, 0.0).unwrap();
        assert_eq!(m, mem.prototypes);
        let (m, grad) = inner_update(&mem, &[vec![2.0, 4.0]], &g, 10.0, 0.5).unwrap();
        assert!(grad.grad[0].iter().all(|x| x.abs() < 1e-15));
        assert!((m[0][0] - 1.0).abs() < 1e-14 && (m[0][1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn zero_prototype_row_has_zero_gradient() {
        let protos = vec![vec![0.0, 0.0], vec![1.0, 0.0]];
        let g = proto_loss_grad(&protos, &[vec![0.3, 0.4]], &[vec![0.5, 0.5]], 2.0).unwrap();
        assert_eq!(g.zero_rows, vec![0]);
        assert_eq!(g.grad[0], vec![0.0, 0.0]);
    }

    #[test]
    fn augment_cases() {
        let p = params(2, 3);
        let h = [0.1, 0.2, 0.3];
        let zeros = vec![vec![0.0; 2]; 2];
        assert_eq!(
            augment(&[1.0, 2.0], &h, &[0.5, 0.5], &zeros, &p).unwrap(),
            vec![1.0, 2.0]
        );
        let m = vec![vec![4.0, -2.0], vec![7.0, 7.0]];
        assert_eq!(
            augment(&[1.0, 2.0], &h, &[1.0, 0.0], &m, &p).unwrap(),
            vec![3.0, 1.0]
        );
        let mut shut = p.clone();
        shut.gate_mlp.gate.b = vec![-50.0];
        let fv = augment(&[1.0, 2.0], &h, &[1.0, 0.0], &m, &shut).unwrap();
        let diff = ((fv[0] - 1.0).powi(2) + (fv[1] - 2.0).powi(2)).sqrt();
        assert!(diff < 1e-20 * (16.0f64 + 4.0 + 49.0 + 49.0).sqrt());
    }

    #[test]
    fn adapt_reduces_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let protos: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let mem = PrototypeMemory::new(protos, 0.9, vec![]).unwrap();
        let samples: Vec<AdaptationSample> = (0..6)
            .map(|_| AdaptationSample {
                f_m: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
                f_i: vec![0.1; 8],
                f_r: vec![0.2; 6],
                ti: rng.random_range(0.0..2.0),
            })
            .collect();
        let mut p = params(3, 4 + 8 + 6 + 1);
        p.gate_mlp = GateMlp::zeros(19, 5, 3);
        let out = adapt(&mem, &AdaptationBatch { samples }, &p, 1e-3).unwrap();
        assert!(out.loss_after < out.loss_before);
        for g in out.g.iter().chain(&out.g_adj) {
            assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn vigilance_output_on_simplex(
            logits in prop::collection::vec(-20.0..20.0f64, 4),
            s in prop::collection::vec(-10.0..10.0f64, 4),
        ) {
            let g = softmax(&logits);
            let p = params(4, 1);
            let ga = vigilance_adjust(&g, &s, &p);
            prop_assert!(ga.iter().all(|&x| x >= 0.0));
            prop_assert!((ga.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn vigilance_is_monotone(base in -2.0..2.0f64, bump in 0.01..2.0f64) {
            let p = params(2, 1);
            let g = [0.9, 0.1];
            let a = vigilance_adjust(&g, &[base], &p);
            let b = vigilance_adjust(&g, &[base + bump], &p);
            // b_tail favours category 1, g favours category 0
            prop_assert!(b[0] >= a[0]);
        }

        #[test]
        fn momentum_update_shift_invariant(
            tis in prop::collection::vec(-5.0..5.0f64, 1..6), shift in -100.0..100.0f64,
        ) {
            let mem = PrototypeMemory::new(vec![vec![1.0, -1.0]], 0.3, vec![]).unwrap();
            let batch = |off: f64| AdaptationBatch {
                samples: tis.iter().enumerate().map(|(i, t)| sample(vec![i as f64, 1.0 - i as f64], t + off)).collect(),
            };
            let cats = vec![0; tis.len()];
            let a = update_prototypes(&mem, &batch(0.0), &cats).unwrap();
            let b = update_prototypes(&mem, &batch(shift), &cats).unwrap();
            for (x, y) in a.prototypes[0].iter().zip(&b.prototypes[0]) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
