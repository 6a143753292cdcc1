//! Communicative-efficiency measurements.
//!
//! Information loss is `1 - accuracy` on fixed probe sets played with a
//! greedy speaker and an argmax listener. Complexity is the summed mutual
//! information between each coordinate of a speaker's linguistic
//! representation (by default the embedding of the first generated token)
//! and the shape or color labels of the test views, estimated with the
//! k-nearest-neighbor method for mixed continuous/discrete variables.
//! Permuting an agent's embedding-table rows yields the random-language
//! baseline points of the efficiency plane.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::digamma;

use crate::agent::{listen, speak, AgentParams, MessageInput, SpeakMode};
use crate::game::{Game, ProbeSets};
use crate::gradcore::{argmax, Graph, Tensor};
use crate::perception::PerceptTable;
use crate::probe::{train_probe, ProbeConfig};
use crate::rngutil::{splitmix64, stream};
use crate::worldgen::{Split, ViewInstance, WorldConfig};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("probe set is empty")]
    EmptyProbeSet,
    #[error("label class {label} has {count} samples; the kNN estimator needs more than k = {k}")]
    ClassTooSmall { label: usize, count: usize, k: usize },
    #[error("features and labels disagree in length: {features} vs {labels}")]
    LengthMismatch { features: usize, labels: usize },
    #[error("unknown representation level `{0}`")]
    UnknownLevel(String),
}

/// Which linguistic representation feeds the complexity estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Level {
    FirstCharEmbedding,
    FirstCharProbe,
    WholeMessage,
    WholeMessageProbe,
}

impl Level {
    pub const ALL: [Level; 4] = [
        Level::FirstCharEmbedding,
        Level::FirstCharProbe,
        Level::WholeMessage,
        Level::WholeMessageProbe,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Level::FirstCharEmbedding => "first-char-embedding",
            Level::FirstCharProbe => "first-char-probe",
            Level::WholeMessage => "whole-message",
            Level::WholeMessageProbe => "whole-message-probe",
        }
    }
}

impl std::str::FromStr for Level {
    type Err = MetricsError;
    fn from_str(s: &str) -> Result<Self, MetricsError> {
        match s {
            "first-char-embedding" => Ok(Level::FirstCharEmbedding),
            "first-char-probe" => Ok(Level::FirstCharProbe),
            "whole-message" => Ok(Level::WholeMessage),
            "whole-message-probe" => Ok(Level::WholeMessageProbe),
            other => Err(MetricsError::UnknownLevel(other.to_string())),
        }
    }
}

impl std::fmt::Display for Level {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One evaluated cell of an experiment, as written to `metrics.csv`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub seed: u64,
    pub need: f64,
    pub generation: Option<usize>,
    pub shape_acc: f64,
    pub color_acc: f64,
    pub overall_acc: f64,
    pub info_loss_shape: f64,
    pub info_loss_color: f64,
    pub mi_shape: f64,
    pub mi_color: f64,
    pub representation_level: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineFlag {
    Trained,
    Permuted,
}

/// A point of the information-loss/complexity plane (shape distinctions).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EfficiencyPoint {
    pub need: f64,
    pub seed: u64,
    pub information_loss: f64,
    pub complexity: f64,
    pub baseline: BaselineFlag,
}

const EVAL_CHUNK: usize = 256;

/// Fraction of probe games where the argmax listener finds the target given
/// the greedy speaker's message.
pub fn game_accuracy(
    speaker: &AgentParams<f32>,
    listener: &AgentParams<f32>,
    probe: &[Game],
    percepts: &PerceptTable,
) -> Result<f64, MetricsError> {
    if probe.is_empty() {
        return Err(MetricsError::EmptyProbeSet);
    }
    let mut hits = 0usize;
    let mut rng = stream(0, "eval-unused", &[]);
    for chunk in probe.chunks(EVAL_CHUNK) {
        let batch = crate::learning::assemble_batch(chunk, percepts)
            .expect("probe views must be in the percept table");
        let mut g = Graph::<f32>::new();
        let sp = speaker.nodes(&mut g, false);
        let li = listener.nodes(&mut g, false);
        let spoken = speak(&mut g, &sp, &batch.speaker, SpeakMode::Greedy, &mut rng);
        let listened = listen(&mut g, &li, MessageInput::Hard(&spoken.padded), &batch.candidates);
        let dist = g.value(listened.dist);
        for (r, &t) in batch.target.iter().enumerate() {
            if argmax(dist.row(r)) == t as usize {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / probe.len() as f64)
}

/// Greedy messages (padded, step-major transposed to row-major) for a set
/// of views.
fn greedy_messages(
    speaker: &AgentParams<f32>,
    views: &[ViewInstance],
    percepts: &PerceptTable,
) -> Vec<Vec<u32>> {
    let mut rng = stream(0, "eval-unused", &[]);
    let mut out = Vec::with_capacity(views.len());
    for chunk in views.chunks(EVAL_CHUNK) {
        let d = percepts.dim();
        let mut data = Vec::with_capacity(chunk.len() * d);
        for v in chunk {
            data.extend_from_slice(percepts.get(v).expect("view in percept table"));
        }
        let batch = Tensor::new(&[chunk.len(), d], data);
        let mut g = Graph::<f32>::new();
        let nodes = speaker.nodes(&mut g, false);
        let spoken = speak(&mut g, &nodes, &batch, SpeakMode::Greedy, &mut rng);
        for r in 0..chunk.len() {
            out.push((0..spoken.padded.len()).map(|s| spoken.padded[s][r]).collect());
        }
    }
    out
}

/// Rows of a representation level plus the per-view labels.
pub struct EmbeddingData {
    pub rows: LevelRows,
    pub shape_labels: Vec<usize>,
    pub color_labels: Vec<usize>,
}

/// Probe levels produce one predicted-class column per label kind; the
/// other levels share one matrix.
pub enum LevelRows {
    Shared(Vec<Vec<f64>>),
    PerLabel { shape: Vec<Vec<f64>>, color: Vec<Vec<f64>> },
}

impl EmbeddingData {
    pub fn rows_for_shape(&self) -> &[Vec<f64>] {
        match &self.rows {
            LevelRows::Shared(m) => m,
            LevelRows::PerLabel { shape, .. } => shape,
        }
    }

    pub fn rows_for_color(&self) -> &[Vec<f64>] {
        match &self.rows {
            LevelRows::Shared(m) => m,
            LevelRows::PerLabel { color, .. } => color,
        }
    }
}

/// Compute the chosen linguistic representation of each view from the
/// frozen speaker's greedy messages.
pub fn collect_embeddings(
    speaker: &AgentParams<f32>,
    views: &[ViewInstance],
    percepts: &PerceptTable,
    world: &WorldConfig,
    level: Level,
) -> EmbeddingData {
    let messages = greedy_messages(speaker, views, percepts);
    let shape_labels: Vec<usize> = views.iter().map(|v| v.object.shape_id as usize).collect();
    let color_labels: Vec<usize> = views.iter().map(|v| v.object.color_id as usize).collect();

    let first_char_rows = || -> Vec<Vec<f64>> {
        messages
            .iter()
            .map(|m| {
                let tok = m[0] as usize;
                speaker.embed.row(tok).iter().map(|&x| x as f64).collect()
            })
            .collect()
    };
    let whole_message_rows = || -> Vec<Vec<f64>> {
        messages.iter().map(|m| m.iter().map(|&t| t as f64).collect()).collect()
    };
    // The message classifier of the probe levels: a single linear layer
    // fitted to the base rows, emitting its predicted class per view.
    let probe_column = |rows: &[Vec<f64>], labels: &[usize], classes: usize| -> Vec<Vec<f64>> {
        let as_f32: Vec<Vec<f32>> =
            rows.iter().map(|r| r.iter().map(|&x| x as f32).collect()).collect();
        let probe = train_probe(&as_f32, labels, classes, &ProbeConfig::default());
        as_f32.iter().map(|r| vec![probe.predict(r) as f64]).collect()
    };

    let rows = match level {
        Level::FirstCharEmbedding => LevelRows::Shared(first_char_rows()),
        Level::WholeMessage => LevelRows::Shared(whole_message_rows()),
        Level::FirstCharProbe => {
            let base = first_char_rows();
            LevelRows::PerLabel {
                shape: probe_column(&base, &shape_labels, world.n_shapes),
                color: probe_column(&base, &color_labels, world.n_colors),
            }
        }
        Level::WholeMessageProbe => {
            let base = whole_message_rows();
            LevelRows::PerLabel {
                shape: probe_column(&base, &shape_labels, world.n_shapes),
                color: probe_column(&base, &color_labels, world.n_colors),
            }
        }
    };
    EmbeddingData { rows, shape_labels, color_labels }
}

/// Mutual information (nats) between one continuous feature and discrete
/// labels, by the k-nearest-neighbor estimator for mixed pairs.
///
/// For each sample the distance to its k-th neighbor *within its label
/// class* defines a radius; the count of samples of any label inside that
/// radius enters a digamma average. Exact ties are broken by an
/// infinitesimal deterministic jitter keyed to the sample index. A constant
/// feature carries no information and returns 0 directly.
pub fn mi_continuous_discrete(
    feature: &[f64],
    labels: &[usize],
    k: usize,
) -> Result<f64, MetricsError> {
    let n = feature.len();
    if n != labels.len() {
        return Err(MetricsError::LengthMismatch { features: n, labels: labels.len() });
    }
    assert!(k >= 1, "k must be at least 1");

    let lo = feature.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = feature.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if range == 0.0 {
        return Ok(0.0);
    }
    let jittered: Vec<f64> = feature
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let mut s = i as u64;
            let u = (splitmix64(&mut s) >> 11) as f64 / (1u64 << 53) as f64;
            x + range * 1e-9 * u
        })
        .collect();

    let mut classes: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, &label) in labels.iter().enumerate() {
        classes.entry(label).or_default().push(i);
    }
    for (&label, members) in &classes {
        if members.len() <= k {
            return Err(MetricsError::ClassTooSmall { label, count: members.len(), k });
        }
    }

    let mut sorted_all: Vec<f64> = jittered.clone();
    sorted_all.sort_unstable_by(f64::total_cmp);

    let mut mean_psi_m = 0.0f64;
    let mut mean_psi_class = 0.0f64;
    for members in classes.values() {
        let mut xs: Vec<f64> = members.iter().map(|&i| jittered[i]).collect();
        xs.sort_unstable_by(f64::total_cmp);
        let m_count = xs.len();
        for j in 0..m_count {
            // k-th nearest same-class neighbor in 1-D by two-pointer merge.
            let (mut left, mut right) = (j, j + 1);
            let mut d = 0.0f64;
            for _ in 0..k {
                let dl = if left > 0 { xs[j] - xs[left - 1] } else { f64::INFINITY };
                let dr = if right < m_count { xs[right] - xs[j] } else { f64::INFINITY };
                if dl <= dr {
                    d = dl;
                    left -= 1;
                } else {
                    d = dr;
                    right += 1;
                }
            }

            // Count samples of any label within the radius (inclusive),
            // excluding the point itself. Binary search then exact edge
            // walk, so boundary rounding cannot drop the k-th neighbor.
            let x = xs[j];
            let mut lo_i = sorted_all.partition_point(|&v| v < x - d);
            let mut hi_i = sorted_all.partition_point(|&v| v <= x + d);
            while lo_i > 0 && (sorted_all[lo_i - 1] - x).abs() <= d {
                lo_i -= 1;
            }
            while lo_i < sorted_all.len() && (sorted_all[lo_i] - x).abs() > d {
                lo_i += 1;
            }
            while hi_i < sorted_all.len() && (sorted_all[hi_i] - x).abs() <= d {
                hi_i += 1;
            }
            while hi_i > 0 && (sorted_all[hi_i - 1] - x).abs() > d {
                hi_i -= 1;
            }
            let m_i = hi_i.saturating_sub(lo_i).saturating_sub(1).max(k);
            mean_psi_m += digamma(m_i as f64);
            mean_psi_class += digamma(m_count as f64);
        }
    }
    mean_psi_m /= n as f64;
    mean_psi_class /= n as f64;
    Ok(digamma(n as f64) + digamma(k as f64) - mean_psi_class - mean_psi_m)
}

/// Summed per-column MI between a representation matrix and labels.
pub struct ComplexityOutcome {
    /// Sum of the per-column estimates, each clamped at 0.
    pub total: f64,
    /// Unclamped per-column estimates.
    pub per_column_raw: Vec<f64>,
}

pub fn complexity(
    rows: &[Vec<f64>],
    labels: &[usize],
    k: usize,
) -> Result<ComplexityOutcome, MetricsError> {
    if rows.is_empty() {
        return Err(MetricsError::EmptyProbeSet);
    }
    let width = rows[0].len();
    let mut per_column_raw = Vec::with_capacity(width);
    let mut total = 0.0;
    let mut column = vec![0.0f64; rows.len()];
    for c in 0..width {
        for (dst, row) in column.iter_mut().zip(rows) {
            *dst = row[c];
        }
        let mi = mi_continuous_discrete(&column, labels, k)?;
        per_column_raw.push(mi);
        total += mi.max(0.0);
    }
    Ok(ComplexityOutcome { total, per_column_raw })
}

/// Plug-in MI from an equal-width histogram; the validation reference for
/// the kNN estimator.
pub fn histogram_mi(feature: &[f64], labels: &[usize], n_bins: usize) -> f64 {
    let n = feature.len();
    assert_eq!(n, labels.len());
    let lo = feature.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = feature.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return 0.0;
    }
    let n_labels = labels.iter().max().unwrap() + 1;
    let width = (hi - lo) / n_bins as f64;
    let mut joint = vec![0usize; n_bins * n_labels];
    for (&x, &y) in feature.iter().zip(labels) {
        let b = (((x - lo) / width) as usize).min(n_bins - 1);
        joint[b * n_labels + y] += 1;
    }
    let mut bin_tot = vec![0usize; n_bins];
    let mut lab_tot = vec![0usize; n_labels];
    for b in 0..n_bins {
        for y in 0..n_labels {
            bin_tot[b] += joint[b * n_labels + y];
            lab_tot[y] += joint[b * n_labels + y];
        }
    }
    let mut mi = 0.0;
    for b in 0..n_bins {
        for y in 0..n_labels {
            let c = joint[b * n_labels + y];
            if c == 0 {
                continue;
            }
            let p = c as f64 / n as f64;
            let pb = bin_tot[b] as f64 / n as f64;
            let py = lab_tot[y] as f64 / n as f64;
            mi += p * (p / (pb * py)).ln();
        }
    }
    mi
}

/// A seeded subsample of test views for MI evaluation (at most `limit`).
pub fn mi_eval_views(split: &Split, limit: usize, seed: u64) -> Vec<ViewInstance> {
    let views = split.views();
    if views.len() <= limit {
        return views.to_vec();
    }
    let mut order: Vec<usize> = (0..views.len()).collect();
    let mut rng = stream(seed, "mi-subsample", &[]);
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    order[..limit].iter().map(|&i| views[i]).collect()
}

/// Metrics of one trained pair, averaged over both role assignments.
pub struct PairMetrics {
    pub shape_acc: f64,
    pub color_acc: f64,
    pub overall_acc: f64,
    pub mi_shape: f64,
    pub mi_color: f64,
}

pub fn evaluate_pair(
    pair: &[AgentParams<f32>; 2],
    probes: &ProbeSets,
    eval_views: &[ViewInstance],
    percepts: &PerceptTable,
    world: &WorldConfig,
    level: Level,
    k: usize,
) -> Result<PairMetrics, MetricsError> {
    let acc = |set: &[Game]| -> Result<f64, MetricsError> {
        let ab = game_accuracy(&pair[0], &pair[1], set, percepts)?;
        let ba = game_accuracy(&pair[1], &pair[0], set, percepts)?;
        Ok((ab + ba) / 2.0)
    };
    let shape_acc = acc(&probes.shape)?;
    let color_acc = acc(&probes.color)?;
    let overall_acc = acc(&probes.random)?;

    let mut mi_shape = 0.0;
    let mut mi_color = 0.0;
    for agent in pair {
        let data = collect_embeddings(agent, eval_views, percepts, world, level);
        mi_shape += complexity(data.rows_for_shape(), &data.shape_labels, k)?.total / 2.0;
        mi_color += complexity(data.rows_for_color(), &data.color_labels, k)?.total / 2.0;
    }
    Ok(PairMetrics { shape_acc, color_acc, overall_acc, mi_shape, mi_color })
}

/// Clone an agent with its embedding-table rows rewired by `perm`
/// (row `i` takes the vector of row `perm[i]`).
pub fn apply_token_permutation(agent: &AgentParams<f32>, perm: &[usize]) -> AgentParams<f32> {
    assert_eq!(perm.len(), agent.cfg.vocab_size, "permutation must cover the vocabulary");
    let mut out = agent.clone();
    let e = agent.cfg.embedding_size;
    for (dst_row, &src_row) in perm.iter().enumerate() {
        out.embed.data_mut()[dst_row * e..(dst_row + 1) * e]
            .copy_from_slice(&agent.embed.data()[src_row * e..(src_row + 1) * e]);
    }
    out
}

/// Clone an agent with its embedding-table rows permuted uniformly at
/// random: the same tokens, rewired to other vectors — a "random language"
/// spoken with the trained machinery.
pub fn permute_language<R: Rng>(agent: &AgentParams<f32>, rng: &mut R) -> AgentParams<f32> {
    let v = agent.cfg.vocab_size;
    let mut perm: Vec<usize> = (0..v).collect();
    for i in (1..v).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    apply_token_permutation(agent, &perm)
}

/// Shape-distinction efficiency of a permuted-language copy of the pair.
pub fn random_language_baseline<R: Rng>(
    pair: &[AgentParams<f32>; 2],
    probes: &ProbeSets,
    eval_views: &[ViewInstance],
    percepts: &PerceptTable,
    world: &WorldConfig,
    level: Level,
    k: usize,
    need: f64,
    seed: u64,
    rng: &mut R,
) -> Result<EfficiencyPoint, MetricsError> {
    let permuted = [permute_language(&pair[0], rng), permute_language(&pair[1], rng)];
    let metrics = evaluate_pair(&permuted, probes, eval_views, percepts, world, level, k)?;
    Ok(EfficiencyPoint {
        need,
        seed,
        information_loss: 1.0 - metrics.shape_acc,
        complexity: metrics.mi_shape,
        baseline: BaselineFlag::Permuted,
    })
}

/// Plot-ready points, sorted by need then seed (trained before permuted at
/// equal keys). No Pareto filtering: the points are the data.
pub fn efficiency_frontier(points: &[EfficiencyPoint]) -> Vec<EfficiencyPoint> {
    let mut out = points.to_vec();
    out.sort_by(|a, b| {
        a.need
            .total_cmp(&b.need)
            .then(a.seed.cmp(&b.seed))
            .then_with(|| match (a.baseline, b.baseline) {
                (BaselineFlag::Trained, BaselineFlag::Permuted) => std::cmp::Ordering::Less,
                (BaselineFlag::Permuted, BaselineFlag::Trained) => std::cmp::Ordering::Greater,
                _ => std::cmp::Ordering::Equal,
            })
            .then(a.complexity.total_cmp(&b.complexity))
    });
    out
}

/// Spearman rank correlation (average ranks on ties).
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rank = |vs: &[f64]| -> Vec<f64> {
        let mut order: Vec<usize> = (0..vs.len()).collect();
        order.sort_by(|&a, &b| vs[a].total_cmp(&vs[b]));
        let mut ranks = vec![0.0; vs.len()];
        let mut i = 0;
        while i < order.len() {
            let mut j = i;
            while j + 1 < order.len() && vs[order[j + 1]] == vs[order[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &idx in &order[i..=j] {
                ranks[idx] = avg;
            }
            i = j + 1;
        }
        ranks
    };
    let rx = rank(xs);
    let ry = rank(ys);
    let n = xs.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mean) * (b - mean);
        vx += (a - mean).powi(2);
        vy += (b - mean).powi(2);
    }
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}
