//! The symmetric agent.
//!
//! One parameter set serves both roles. As a speaker the agent encodes its
//! target percept, seeds the production LSTM's hidden state with it, and
//! emits up to `max_message_len` tokens; as a listener it runs the padded
//! message through the comprehension LSTM, maps the final state through a
//! scorer MLP, and dots the result with the representation encoding of every
//! candidate view. Token embeddings are one table shared by both directions.
//!
//! All forward passes are built on a [`Graph`] so the same code serves
//! training (with gradients) and frozen evaluation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::gradcore::{
    self, argmax, categorical_sample, lstm_cell, Graph, LstmParamIds, NodeId, Real, Tensor,
};
use crate::rngutil::stream;

/// Reserved end-of-string token.
pub const EOS_TOKEN: u32 = 0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub feature_dim: usize,
    pub compression_size: usize,
    pub hidden_size: usize,
    pub hidden_mlp_size: usize,
    pub embedding_size: usize,
    pub vocab_size: usize,
    pub max_message_len: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            feature_dim: 128,
            compression_size: 512,
            hidden_size: 256,
            hidden_mlp_size: 256,
            embedding_size: 64,
            vocab_size: 60,
            max_message_len: 7,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AgentError {
    #[error("all agent dimensions must be at least 1")]
    ZeroDimension,
    #[error("vocab_size must be at least 2 (the end-of-string token is id 0)")]
    VocabTooSmall,
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let dims = [
            self.feature_dim,
            self.compression_size,
            self.hidden_size,
            self.hidden_mlp_size,
            self.embedding_size,
            self.vocab_size,
            self.max_message_len,
        ];
        if dims.iter().any(|&d| d == 0) {
            return Err(AgentError::ZeroDimension);
        }
        if self.vocab_size < 2 {
            return Err(AgentError::VocabTooSmall);
        }
        Ok(())
    }
}

/// All trainable weights of one agent.
#[derive(Clone, Debug)]
pub struct AgentParams<T> {
    pub cfg: AgentConfig,
    // Representation encoder: linear -> tanh -> linear.
    pub enc_w1: Tensor<T>,
    pub enc_b1: Tensor<T>,
    pub enc_w2: Tensor<T>,
    pub enc_b2: Tensor<T>,
    // Token embeddings shared by production and comprehension.
    pub embed: Tensor<T>,
    // Production LSTM cell and output projection.
    pub prod_wx: Tensor<T>,
    pub prod_wh: Tensor<T>,
    pub prod_b: Tensor<T>,
    pub out_w: Tensor<T>,
    pub out_b: Tensor<T>,
    // Comprehension LSTM cell and scorer MLP (linear -> relu -> linear).
    pub comp_wx: Tensor<T>,
    pub comp_wh: Tensor<T>,
    pub comp_b: Tensor<T>,
    pub scorer_w1: Tensor<T>,
    pub scorer_b1: Tensor<T>,
    pub scorer_w2: Tensor<T>,
    pub scorer_b2: Tensor<T>,
}

/// Fresh random parameters: weights uniform in `±1/sqrt(fan_in)`, biases
/// zero.
pub fn init_agent<T: Real>(cfg: &AgentConfig, seed: u64) -> AgentParams<T> {
    cfg.validate().expect("invalid agent config");
    let (d, c, h, m, e, v) = (
        cfg.feature_dim,
        cfg.compression_size,
        cfg.hidden_size,
        cfg.hidden_mlp_size,
        cfg.embedding_size,
        cfg.vocab_size,
    );
    let mut counter = 0u64;
    let mut uniform = |shape: &[usize], fan_in: usize| -> Tensor<T> {
        counter += 1;
        let mut rng = stream(seed, "agent-init", &[counter]);
        let s = 1.0 / (fan_in as f64).sqrt();
        let len: usize = shape.iter().product();
        let data = (0..len)
            .map(|_| T::from_f64((rng.random::<f64>() * 2.0 - 1.0) * s))
            .collect();
        Tensor::new(shape, data)
    };

    AgentParams {
        cfg: cfg.clone(),
        enc_w1: uniform(&[d, c], d),
        enc_b1: Tensor::zeros(&[c]),
        enc_w2: uniform(&[c, h], c),
        enc_b2: Tensor::zeros(&[h]),
        embed: uniform(&[v, e], e),
        prod_wx: uniform(&[e, 4 * h], e),
        prod_wh: uniform(&[h, 4 * h], h),
        prod_b: Tensor::zeros(&[4 * h]),
        out_w: uniform(&[h, v], h),
        out_b: Tensor::zeros(&[v]),
        comp_wx: uniform(&[e, 4 * h], e),
        comp_wh: uniform(&[h, 4 * h], h),
        comp_b: Tensor::zeros(&[4 * h]),
        scorer_w1: uniform(&[h, m], h),
        scorer_b1: Tensor::zeros(&[m]),
        scorer_w2: uniform(&[m, h], m),
        scorer_b2: Tensor::zeros(&[h]),
    }
}

pub const PARAM_NAMES: [&str; 17] = [
    "enc_w1", "enc_b1", "enc_w2", "enc_b2", "embed", "prod_wx", "prod_wh", "prod_b", "out_w",
    "out_b", "comp_wx", "comp_wh", "comp_b", "scorer_w1", "scorer_b1", "scorer_w2", "scorer_b2",
];

impl<T: Real> AgentParams<T> {
    pub fn named(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![
            ("enc_w1", &self.enc_w1),
            ("enc_b1", &self.enc_b1),
            ("enc_w2", &self.enc_w2),
            ("enc_b2", &self.enc_b2),
            ("embed", &self.embed),
            ("prod_wx", &self.prod_wx),
            ("prod_wh", &self.prod_wh),
            ("prod_b", &self.prod_b),
            ("out_w", &self.out_w),
            ("out_b", &self.out_b),
            ("comp_wx", &self.comp_wx),
            ("comp_wh", &self.comp_wh),
            ("comp_b", &self.comp_b),
            ("scorer_w1", &self.scorer_w1),
            ("scorer_b1", &self.scorer_b1),
            ("scorer_w2", &self.scorer_w2),
            ("scorer_b2", &self.scorer_b2),
        ]
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        vec![
            ("enc_w1", &mut self.enc_w1),
            ("enc_b1", &mut self.enc_b1),
            ("enc_w2", &mut self.enc_w2),
            ("enc_b2", &mut self.enc_b2),
            ("embed", &mut self.embed),
            ("prod_wx", &mut self.prod_wx),
            ("prod_wh", &mut self.prod_wh),
            ("prod_b", &mut self.prod_b),
            ("out_w", &mut self.out_w),
            ("out_b", &mut self.out_b),
            ("comp_wx", &mut self.comp_wx),
            ("comp_wh", &mut self.comp_wh),
            ("comp_b", &mut self.comp_b),
            ("scorer_w1", &mut self.scorer_w1),
            ("scorer_b1", &mut self.scorer_b1),
            ("scorer_w2", &mut self.scorer_w2),
            ("scorer_b2", &mut self.scorer_b2),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn checksum(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for (_, t) in self.named() {
            h ^= t.checksum();
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }

    pub fn cast<U: Real>(&self) -> AgentParams<U> {
        AgentParams {
            cfg: self.cfg.clone(),
            enc_w1: self.enc_w1.cast(),
            enc_b1: self.enc_b1.cast(),
            enc_w2: self.enc_w2.cast(),
            enc_b2: self.enc_b2.cast(),
            embed: self.embed.cast(),
            prod_wx: self.prod_wx.cast(),
            prod_wh: self.prod_wh.cast(),
            prod_b: self.prod_b.cast(),
            out_w: self.out_w.cast(),
            out_b: self.out_b.cast(),
            comp_wx: self.comp_wx.cast(),
            comp_wh: self.comp_wh.cast(),
            comp_b: self.comp_b.cast(),
            scorer_w1: self.scorer_w1.cast(),
            scorer_b1: self.scorer_b1.cast(),
            scorer_w2: self.scorer_w2.cast(),
            scorer_b2: self.scorer_b2.cast(),
        }
    }

    /// Insert every parameter into a graph, trainable or frozen.
    pub fn nodes(&self, g: &mut Graph<T>, trainable: bool) -> AgentNodes {
        let mut add = |t: &Tensor<T>| if trainable { g.leaf(t.clone()) } else { g.constant(t.clone()) };
        AgentNodes {
            cfg: self.cfg.clone(),
            enc_w1: add(&self.enc_w1),
            enc_b1: add(&self.enc_b1),
            enc_w2: add(&self.enc_w2),
            enc_b2: add(&self.enc_b2),
            embed: add(&self.embed),
            prod_wx: add(&self.prod_wx),
            prod_wh: add(&self.prod_wh),
            prod_b: add(&self.prod_b),
            out_w: add(&self.out_w),
            out_b: add(&self.out_b),
            comp_wx: add(&self.comp_wx),
            comp_wh: add(&self.comp_wh),
            comp_b: add(&self.comp_b),
            scorer_w1: add(&self.scorer_w1),
            scorer_b1: add(&self.scorer_b1),
            scorer_w2: add(&self.scorer_w2),
            scorer_b2: add(&self.scorer_b2),
        }
    }
}

impl AgentParams<f32> {
    pub fn save(&self, stem: &std::path::Path) -> Result<(), gradcore::CheckpointError> {
        let named = self.named();
        let entries: Vec<(&str, &Tensor<f32>)> = named.iter().map(|(n, t)| (*n, *t)).collect();
        gradcore::save_checkpoint(stem, &entries)
    }

    pub fn load(
        stem: &std::path::Path,
        cfg: &AgentConfig,
    ) -> Result<AgentParams<f32>, gradcore::CheckpointError> {
        let loaded = gradcore::load_checkpoint(stem)?;
        let mut params = init_agent::<f32>(cfg, 0);
        for (name, tensor) in loaded {
            for (pname, slot) in params.named_mut() {
                if pname == name {
                    assert_eq!(
                        slot.shape(),
                        tensor.shape(),
                        "checkpoint tensor {} has shape {:?}, config expects {:?}",
                        name,
                        tensor.shape(),
                        slot.shape()
                    );
                    *slot = tensor.clone();
                }
            }
        }
        Ok(params)
    }
}

/// Graph handles for one agent's parameters.
pub struct AgentNodes {
    pub cfg: AgentConfig,
    pub enc_w1: NodeId,
    pub enc_b1: NodeId,
    pub enc_w2: NodeId,
    pub enc_b2: NodeId,
    pub embed: NodeId,
    pub prod_wx: NodeId,
    pub prod_wh: NodeId,
    pub prod_b: NodeId,
    pub out_w: NodeId,
    pub out_b: NodeId,
    pub comp_wx: NodeId,
    pub comp_wh: NodeId,
    pub comp_b: NodeId,
    pub scorer_w1: NodeId,
    pub scorer_b1: NodeId,
    pub scorer_w2: NodeId,
    pub scorer_b2: NodeId,
}

impl AgentNodes {
    /// Gradients in [`PARAM_NAMES`] order (zeros where a parameter was
    /// unused by the graph).
    pub fn take_grads<T: Real>(
        &self,
        g: &Graph<T>,
        grads: &mut gradcore::Gradients<T>,
    ) -> Vec<Tensor<T>> {
        self.ids()
            .into_iter()
            .map(|id| grads.take(id).unwrap_or_else(|| Tensor::zeros(g.value(id).shape())))
            .collect()
    }

    fn ids(&self) -> Vec<NodeId> {
        vec![
            self.enc_w1,
            self.enc_b1,
            self.enc_w2,
            self.enc_b2,
            self.embed,
            self.prod_wx,
            self.prod_wh,
            self.prod_b,
            self.out_w,
            self.out_b,
            self.comp_wx,
            self.comp_wh,
            self.comp_b,
            self.scorer_w1,
            self.scorer_b1,
            self.scorer_w2,
            self.scorer_b2,
        ]
    }
}

/// linear(feature -> compression), tanh, linear(compression -> hidden).
pub fn encode_representation<T: Real>(
    g: &mut Graph<T>,
    nodes: &AgentNodes,
    percepts: NodeId,
) -> NodeId {
    assert_eq!(
        g.value(percepts).cols(),
        nodes.cfg.feature_dim,
        "percept width {} != feature_dim {}",
        g.value(percepts).cols(),
        nodes.cfg.feature_dim
    );
    let z1 = g.matmul(percepts, nodes.enc_w1);
    let z1 = g.add(z1, nodes.enc_b1);
    let a1 = g.tanh(z1);
    let z2 = g.matmul(a1, nodes.enc_w2);
    g.add(z2, nodes.enc_b2)
}

/// How the speaker turns per-step vocabulary distributions into tokens.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SpeakMode {
    /// Argmax decoding; used for evaluation and metrics.
    Greedy,
    /// Categorical sampling; the discrete channel of community play.
    SampledHard,
    /// Relaxed one-hot sampling; the whole chain stays differentiable.
    GumbelRelaxed { temperature: f64, straight_through: bool },
}

/// A batch of spoken messages, tied to the graph that produced them.
pub struct SpokenBatch {
    /// Hard tokens per row, truncated at (and including) the first EOS.
    pub tokens: Vec<Vec<u32>>,
    /// Step-major tokens padded with EOS out to `max_message_len`.
    pub padded: Vec<Vec<u32>>,
    /// Message length per row (tokens up to and including the first EOS).
    pub lengths: Vec<usize>,
    /// Per-step `[B, 1]` log-probability of the emitted token.
    pub step_log_prob: Vec<NodeId>,
    /// Per-step `[B, 1]` entropy of the token distribution.
    pub step_entropy: Vec<NodeId>,
    /// Step-major row mask: 1.0 while the step is within the message.
    pub mask: Vec<Vec<f32>>,
    /// Relaxed one-hot tokens (`[B, V]` per step) in gumbel mode.
    pub relaxed: Option<Vec<NodeId>>,
}

/// One message with its recorded per-step statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    pub tokens: Vec<u32>,
    pub step_log_probs: Vec<f32>,
    pub step_entropies: Vec<f32>,
}

impl SpokenBatch {
    /// Materialize row `r` as a standalone [`Message`].
    pub fn message<T: Real>(&self, g: &Graph<T>, r: usize) -> Message {
        let len = self.lengths[r];
        let take = |nodes: &[NodeId]| -> Vec<f32> {
            nodes[..len].iter().map(|&id| g.value(id).data()[r].as_f64() as f32).collect()
        };
        Message {
            tokens: self.tokens[r].clone(),
            step_log_probs: take(&self.step_log_prob),
            step_entropies: take(&self.step_entropy),
        }
    }
}

/// Generate messages for a batch of speaker percepts.
///
/// The representation encoding is the initial hidden state (cell state
/// zero). Each step projects the current hidden state to vocabulary logits,
/// emits a token, and feeds that token's embedding to the LSTM. Hard modes
/// stop emitting at the first EOS (later steps are pinned to EOS); the
/// relaxed mode keeps the full-length differentiable chain.
pub fn speak<T: Real, R: Rng>(
    g: &mut Graph<T>,
    nodes: &AgentNodes,
    percepts: &Tensor<f32>,
    mode: SpeakMode,
    rng: &mut R,
) -> SpokenBatch {
    let cfg = &nodes.cfg;
    let b = percepts.rows();
    let steps = cfg.max_message_len;

    let percept_node = g.constant(percepts.cast::<T>());
    let mut h = encode_representation(g, nodes, percept_node);
    let mut c = g.constant(Tensor::zeros(&[b, cfg.hidden_size]));
    let prod = LstmParamIds { wx: nodes.prod_wx, wh: nodes.prod_wh, b: nodes.prod_b };

    let mut tokens: Vec<Vec<u32>> = vec![Vec::new(); b];
    let mut padded: Vec<Vec<u32>> = Vec::with_capacity(steps);
    let mut lengths: Vec<usize> = vec![0; b];
    let mut finished: Vec<bool> = vec![false; b];
    let mut step_log_prob = Vec::with_capacity(steps);
    let mut step_entropy = Vec::with_capacity(steps);
    let mut mask = Vec::with_capacity(steps);
    let mut relaxed = Vec::with_capacity(steps);

    for step in 0..steps {
        let logits = g.matmul(h, nodes.out_w);
        let logits = g.add(logits, nodes.out_b);
        let logp = g.log_softmax(logits);
        let probs = g.softmax(logits);

        let mut relaxed_node = None;
        let mut step_tokens: Vec<u32> = Vec::with_capacity(b);
        match mode {
            SpeakMode::Greedy => {
                for r in 0..b {
                    step_tokens.push(argmax(g.value(probs).row(r)) as u32);
                }
            }
            SpeakMode::SampledHard => {
                for r in 0..b {
                    let row = g.value(probs).row(r).to_vec();
                    let tok = categorical_sample(&row, rng).expect("softmax row is normalized");
                    step_tokens.push(tok as u32);
                }
            }
            SpeakMode::GumbelRelaxed { temperature, straight_through } => {
                let y = g
                    .gumbel_softmax_sample(logits, T::from_f64(temperature), straight_through, rng)
                    .expect("temperature validated by config");
                for r in 0..b {
                    step_tokens.push(argmax(g.value(y).row(r)) as u32);
                }
                relaxed_node = Some(y);
            }
        }

        // Pin rows that already emitted EOS to EOS padding.
        let mut step_mask = vec![0.0f32; b];
        for r in 0..b {
            if finished[r] {
                step_tokens[r] = EOS_TOKEN;
            } else {
                step_mask[r] = 1.0;
                tokens[r].push(step_tokens[r]);
                lengths[r] = step + 1;
                if step_tokens[r] == EOS_TOKEN {
                    finished[r] = true;
                }
            }
        }

        step_log_prob.push(g.gather_rows(logp, &step_tokens));
        let plogp = g.mul(probs, logp);
        let neg_ent = g.sum_rows(plogp);
        step_entropy.push(g.scale(neg_ent, T::from_f64(-1.0)));
        mask.push(step_mask);

        if step + 1 < steps {
            let input = match relaxed_node {
                Some(y) => g.matmul(y, nodes.embed),
                None => g.embedding_lookup(nodes.embed, &step_tokens),
            };
            let (h2, c2) = lstm_cell(g, input, h, c, prod);
            h = h2;
            c = c2;
        }
        if let Some(y) = relaxed_node {
            relaxed.push(y);
        }
        padded.push(step_tokens);
    }

    SpokenBatch {
        tokens,
        padded,
        lengths,
        step_log_prob,
        step_entropy,
        mask,
        relaxed: if relaxed.is_empty() { None } else { Some(relaxed) },
    }
}

/// Message input to the comprehension module.
pub enum MessageInput<'a> {
    /// Step-major padded hard tokens, `max_message_len` rows of `[B]`.
    Hard(&'a [Vec<u32>]),
    /// Per-step relaxed one-hots from a gumbel-mode speaker.
    Relaxed(&'a [NodeId]),
}

/// Listener outputs over the candidate lineup.
pub struct Listened {
    /// `[B, K+1]` probabilities.
    pub dist: NodeId,
    /// `[B, K+1]` log-probabilities.
    pub log_dist: NodeId,
}

/// Score each candidate against the message.
///
/// The comprehension LSTM always runs `max_message_len` steps over the
/// padded message from a zero initial state; its final hidden state feeds
/// the scorer MLP, whose output is dotted with each candidate's encoding.
pub fn listen<T: Real>(
    g: &mut Graph<T>,
    nodes: &AgentNodes,
    input: MessageInput,
    candidates: &[Tensor<f32>],
) -> Listened {
    let cfg = &nodes.cfg;
    assert!(!candidates.is_empty(), "listen needs at least one candidate");
    let b = candidates[0].rows();
    let steps = cfg.max_message_len;

    let comp = LstmParamIds { wx: nodes.comp_wx, wh: nodes.comp_wh, b: nodes.comp_b };
    let mut h = g.constant(Tensor::zeros(&[b, cfg.hidden_size]));
    let mut c = g.constant(Tensor::zeros(&[b, cfg.hidden_size]));

    for step in 0..steps {
        let emb = match input {
            MessageInput::Hard(padded) => {
                assert_eq!(padded.len(), steps, "hard message must be padded to max length");
                g.embedding_lookup(nodes.embed, &padded[step])
            }
            MessageInput::Relaxed(ys) => {
                assert_eq!(ys.len(), steps, "relaxed message must cover every step");
                g.matmul(ys[step], nodes.embed)
            }
        };
        let (h2, c2) = lstm_cell(g, emb, h, c, comp);
        h = h2;
        c = c2;
    }

    let s1 = g.matmul(h, nodes.scorer_w1);
    let s1 = g.add(s1, nodes.scorer_b1);
    let a1 = g.relu(s1);
    let s2 = g.matmul(a1, nodes.scorer_w2);
    let query = g.add(s2, nodes.scorer_b2);

    let mut scores = Vec::with_capacity(candidates.len());
    for cand in candidates {
        let cand_node = g.constant(cand.cast::<T>());
        let enc = encode_representation(g, nodes, cand_node);
        scores.push(g.dot(query, enc));
    }
    let scores = g.concat(&scores);
    Listened { dist: g.softmax(scores), log_dist: g.log_softmax(scores) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcore::gradcheck::{check_scalar_graph, DEFAULT_TOLERANCE};

    fn tiny_cfg() -> AgentConfig {
        AgentConfig {
            feature_dim: 8,
            compression_size: 6,
            hidden_size: 5,
            hidden_mlp_size: 5,
            embedding_size: 4,
            vocab_size: 6,
            max_message_len: 3,
        }
    }

    fn random_percepts(b: usize, d: usize, seed: u64) -> Tensor<f32> {
        let mut rng = stream(seed, "test-percepts", &[]);
        Tensor::new(&[b, d], (0..b * d).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect())
    }

    #[test]
    fn init_is_seed_deterministic() {
        let cfg = tiny_cfg();
        let a = init_agent::<f32>(&cfg, 4);
        let b = init_agent::<f32>(&cfg, 4);
        let c = init_agent::<f32>(&cfg, 5);
        assert_eq!(a.checksum(), b.checksum());
        assert_ne!(a.checksum(), c.checksum());
    }

    #[test]
    fn param_count_matches_analytic_formula() {
        let cfg = AgentConfig::default();
        let params = init_agent::<f32>(&cfg, 1);
        let (d, c, h, m, e, v) = (128usize, 512, 256, 256, 64, 60);
        let expected = (d * c + c)      // enc layer 1
            + (c * h + h)               // enc layer 2
            + v * e                     // embeddings
            + (e * 4 * h + h * 4 * h + 4 * h) // production lstm
            + (h * v + v)               // output projection
            + (e * 4 * h + h * 4 * h + 4 * h) // comprehension lstm
            + (h * m + m + m * h + h); // scorer mlp
        assert_eq!(params.param_count(), expected);
        assert_eq!(params.param_count(), init_agent::<f32>(&cfg, 9).param_count());
    }

    #[test]
    fn zero_encoder_weights_give_zero_encoding() {
        let cfg = tiny_cfg();
        let mut params = init_agent::<f32>(&cfg, 1);
        for t in [&mut params.enc_w1, &mut params.enc_b1, &mut params.enc_w2, &mut params.enc_b2] {
            *t = Tensor::zeros(t.shape());
        }
        let mut g = Graph::<f32>::new();
        let nodes = params.nodes(&mut g, false);
        let p = g.constant(random_percepts(3, cfg.feature_dim, 2).cast());
        let enc = encode_representation(&mut g, &nodes, p);
        assert!(g.value(enc).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn encoder_is_finite_on_many_random_percepts() {
        let cfg = tiny_cfg();
        let params = init_agent::<f32>(&cfg, 1);
        let mut g = Graph::<f32>::new();
        let nodes = params.nodes(&mut g, false);
        let p = g.constant(random_percepts(1_000, cfg.feature_dim, 3).cast());
        let enc = encode_representation(&mut g, &nodes, p);
        assert!(g.value(enc).all_finite());
    }

    #[test]
    fn encoder_gradient_matches_finite_differences() {
        let cfg = tiny_cfg();
        let params = init_agent::<f64>(&cfg, 7);
        let percepts = random_percepts(2, cfg.feature_dim, 5);
        let err = check_scalar_graph(
            &[
                params.enc_w1.clone(),
                params.enc_b1.clone(),
                params.enc_w2.clone(),
                params.enc_b2.clone(),
            ],
            |g, ids| {
                let mut nodes = params.nodes(g, false);
                nodes.enc_w1 = ids[0];
                nodes.enc_b1 = ids[1];
                nodes.enc_w2 = ids[2];
                nodes.enc_b2 = ids[3];
                let pc = g.constant(percepts.cast());
                let enc = encode_representation(g, &nodes, pc);
                let sq = g.mul(enc, enc);
                g.sum(sq)
            },
        );
        assert!(err < DEFAULT_TOLERANCE, "encoder gradient error {}", err);
    }

    #[test]
    fn messages_respect_stopping_contract() {
        let cfg = tiny_cfg();
        let params = init_agent::<f32>(&cfg, 11);
        let mut rng = stream(1, "speak-stop", &[]);
        let mut total = 0usize;
        for round in 0..40 {
            let mut g = Graph::<f32>::new();
            let nodes = params.nodes(&mut g, false);
            let percepts = random_percepts(256, cfg.feature_dim, 100 + round);
            let spoken = speak(&mut g, &nodes, &percepts, SpeakMode::SampledHard, &mut rng);
            for r in 0..256 {
                total += 1;
                let toks = &spoken.tokens[r];
                assert!(toks.len() <= cfg.max_message_len);
                if let Some(pos) = toks.iter().position(|&t| t == EOS_TOKEN) {
                    assert_eq!(pos, toks.len() - 1, "token after EOS in {:?}", toks);
                }
                assert!(toks.iter().all(|&t| (t as usize) < cfg.vocab_size));
                // Padding after the message is all EOS.
                for step in spoken.lengths[r]..cfg.max_message_len {
                    assert_eq!(spoken.padded[step][r], EOS_TOKEN);
                }
            }
        }
        assert!(total >= 10_000);
    }

    #[test]
    fn log_prob_of_message_is_sum_of_step_log_probs() {
        let cfg = tiny_cfg();
        let params = init_agent::<f32>(&cfg, 13);
        let mut rng = stream(2, "speak-logp", &[]);
        let mut g = Graph::<f32>::new();
        let nodes = params.nodes(&mut g, false);
        let percepts = random_percepts(16, cfg.feature_dim, 6);
        let spoken = speak(&mut g, &nodes, &percepts, SpeakMode::SampledHard, &mut rng);
        for r in 0..16 {
            let msg = spoken.message(&g, r);
            let total: f32 = msg.step_log_probs.iter().sum();
            assert_eq!(msg.step_log_probs.len(), spoken.lengths[r]);
            assert!(total.is_finite() && total <= 0.0);
            // The same sum recomputed from the graph nodes with the mask.
            let masked: f32 = (0..cfg.max_message_len)
                .map(|s| g.value(spoken.step_log_prob[s]).data()[r] * spoken.mask[s][r])
                .sum();
            assert!((total - masked).abs() < 1e-6);
        }
    }

    #[test]
    fn cold_gumbel_matches_greedy_decoding() {
        let cfg = tiny_cfg();
        let mut params = init_agent::<f32>(&cfg, 17);
        // A decisive policy: with near-uniform logits any relaxation keeps
        // argmax ties, so sharpen the projection the way training does.
        params.out_w = params.out_w.map(|x| x * 200.0);
        let mut rng = stream(3, "speak-cold", &[]);
        let mut agree = 0;
        let trials = 1_000;
        for t in 0..trials {
            let percepts = random_percepts(1, cfg.feature_dim, 200 + t);
            let mut g = Graph::<f32>::new();
            let nodes = params.nodes(&mut g, false);
            let greedy = speak(&mut g, &nodes, &percepts, SpeakMode::Greedy, &mut rng);
            let mut g2 = Graph::<f32>::new();
            let nodes2 = params.nodes(&mut g2, false);
            let cold = speak(
                &mut g2,
                &nodes2,
                &percepts,
                SpeakMode::GumbelRelaxed { temperature: 0.01, straight_through: false },
                &mut rng,
            );
            if greedy.tokens[0] == cold.tokens[0] {
                agree += 1;
            }
        }
        assert!(agree * 100 >= trials * 99, "agreement {}/{}", agree, trials);
    }

    #[test]
    fn listener_distribution_is_normalized_and_symmetric() {
        let cfg = tiny_cfg();
        let params = init_agent::<f32>(&cfg, 19);
        let mut g = Graph::<f32>::new();
        let nodes = params.nodes(&mut g, false);
        let b = 8;
        let msg: Vec<Vec<u32>> = (0..cfg.max_message_len).map(|s| vec![(s % 3 + 1) as u32; b]).collect();
        let same = random_percepts(b, cfg.feature_dim, 7);
        let candidates = vec![same.clone(), same.clone(), same.clone(), same.clone()];
        let out = listen(&mut g, &nodes, MessageInput::Hard(&msg), &candidates);
        for r in 0..b {
            let row = g.value(out.dist).row(r);
            let sum: f32 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            for &p in row {
                assert!((p - 0.25).abs() < 1e-5, "identical candidates must tie, got {:?}", row);
            }
        }
    }

    #[test]
    fn permuting_candidates_permutes_distribution() {
        let cfg = tiny_cfg();
        let params = init_agent::<f32>(&cfg, 23);
        let b = 4;
        let msg: Vec<Vec<u32>> = (0..cfg.max_message_len).map(|_| vec![2u32; b]).collect();
        let cands: Vec<Tensor<f32>> =
            (0..4).map(|i| random_percepts(b, cfg.feature_dim, 300 + i)).collect();

        let mut g = Graph::<f32>::new();
        let nodes = params.nodes(&mut g, false);
        let out = listen(&mut g, &nodes, MessageInput::Hard(&msg), &cands);
        let base: Vec<f32> = g.value(out.dist).data().to_vec();

        let perm = [2usize, 0, 3, 1];
        let permuted: Vec<Tensor<f32>> = perm.iter().map(|&i| cands[i].clone()).collect();
        let mut g2 = Graph::<f32>::new();
        let nodes2 = params.nodes(&mut g2, false);
        let out2 = listen(&mut g2, &nodes2, MessageInput::Hard(&msg), &permuted);
        let got = g2.value(out2.dist);
        for r in 0..b {
            for (slot, &src) in perm.iter().enumerate() {
                let a = base[r * 4 + src];
                let b2 = got.at(r, slot);
                assert!((a - b2).abs() < 1e-6, "row {} slot {}: {} vs {}", r, slot, a, b2);
            }
        }
    }

    #[test]
    fn embedding_table_is_shared_between_roles() {
        let cfg = tiny_cfg();
        let mut params = init_agent::<f32>(&cfg, 29);
        let before = params.embed.checksum();

        // Step-0 logits never consult the table; later steps must. Record
        // the step-1 log-probs before and after rewriting the shared table.
        let percepts = random_percepts(32, cfg.feature_dim, 8);
        let step1_logp = |params: &AgentParams<f32>| {
            let mut g = Graph::<f32>::new();
            let nodes = params.nodes(&mut g, false);
            let mut rng = stream(0, "unused", &[]);
            let spoken = speak(&mut g, &nodes, &percepts, SpeakMode::Greedy, &mut rng);
            g.value(spoken.step_log_prob[1]).data().to_vec()
        };
        let logp_before = step1_logp(&params);

        let replacement = init_agent::<f32>(&cfg, 97).embed.map(|x| x * 3.0);
        params.embed = replacement;
        assert_ne!(params.embed.checksum(), before);
        let logp_after = step1_logp(&params);
        assert_ne!(logp_before, logp_after, "speaker ignored the shared embedding rewrite");
    }

    #[test]
    fn checkpoint_roundtrip() {
        let cfg = tiny_cfg();
        let params = init_agent::<f32>(&cfg, 31);
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("agent_g0_0");
        params.save(&stem).unwrap();
        let loaded = AgentParams::<f32>::load(&stem, &cfg).unwrap();
        assert_eq!(params.checksum(), loaded.checksum());
    }
}
