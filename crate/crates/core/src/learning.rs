//! Losses, training phases, and the iterated-learning driver.
//!
//! Three phase types cover all experiments:
//!
//! * selfplay — one agent plays both roles through the relaxed (Gumbel)
//!   channel, minimizing cross-entropy on the chain prediction;
//! * community play — two agents, discrete channel; the speaker learns from
//!   the accuracy reward by policy gradient (with an entropy regularizer and
//!   a running-mean baseline), the listener from cross-entropy (or, in the
//!   accuracy-loss variant, from the same reward);
//! * student-teacher play — community play against a frozen teacher, or one
//!   of the imitation variants (similarity-rewarded selfplay, knowledge
//!   distillation toward the teacher-listener's choices).
//!
//! Entropy regularizer sign: the term added to the speaker loss is
//! `-(c/|m|) * sum_n H_n` — a negative quantity, so minimizing the loss
//! *raises* message entropy with weight `c`. That is the printed form; flip
//! it and exploration collapses.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{
    init_agent, listen, speak, AgentConfig, AgentNodes, AgentParams, Listened, MessageInput,
    SpeakMode, SpokenBatch, EOS_TOKEN,
};
use crate::game::{sample_batch, Game, GameConfig, GameError, GameKind};
use crate::gradcore::{
    adam_step, categorical_sample, clip_global_norm, AdamState, Graph, NodeId, Real, Tensor,
};
use crate::perception::{PerceptTable, PerceptionError};
use crate::rngutil::stream;
use crate::worldgen::{Split, WorldConfig};

/// Floor applied to log-probabilities inside losses, `ln(1e-9)`.
pub const LOG_PROB_FLOOR: f64 = -20.72326583694641;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
}

/// Which loss pair community play uses (Appendix-variant switch).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommunityLoss {
    /// Speaker: reward policy gradient; listener: cross-entropy.
    CrossEntropy,
    /// Both sides learn from the accuracy reward; the speaker's entropy
    /// coefficient adapts to the advantage.
    Accuracy,
}

/// How a student learns from the previous generation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudentLoss {
    /// Community play against the frozen teacher.
    StudentTeacher,
    /// Selfplay plus a message-similarity reward toward teacher messages.
    ImitationSelfplay,
    /// Similarity reward plus distillation toward teacher-listener choices.
    ImitationKd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs_per_phase: usize,
    pub games_per_epoch: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub entropy_coeff: f64,
    pub gumbel_temperature: f64,
    pub straight_through: bool,
    pub baseline_decay: f64,
    /// Global gradient-norm clip before each update; `None` disables.
    pub clip_norm: Option<f64>,
    pub community_loss: CommunityLoss,
    pub student_loss: StudentLoss,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs_per_phase: 4,
            games_per_epoch: 2_000,
            batch_size: 256,
            lr: 0.001,
            entropy_coeff: 0.01,
            gumbel_temperature: 1.0,
            straight_through: false,
            baseline_decay: 0.95,
            clip_norm: Some(5.0),
            community_loss: CommunityLoss::CrossEntropy,
            student_loss: StudentLoss::StudentTeacher,
        }
    }
}

impl TrainConfig {
    pub fn games_per_phase(&self) -> usize {
        self.epochs_per_phase * self.games_per_epoch
    }
}

/// Exponentially weighted mean of past batch-mean rewards, starting at 0.
#[derive(Clone, Copy, Debug)]
pub struct RewardBaseline {
    b: f64,
    decay: f64,
}

impl RewardBaseline {
    pub fn new(decay: f64) -> Self {
        RewardBaseline { b: 0.0, decay }
    }

    pub fn value(&self) -> f64 {
        self.b
    }

    pub fn update(&mut self, batch_mean_reward: f64) {
        self.b = self.decay * self.b + (1.0 - self.decay) * batch_mean_reward;
    }
}

/// Immutable training inputs shared by every phase.
pub struct TrainContext<'a> {
    pub world: &'a WorldConfig,
    pub agent_cfg: &'a AgentConfig,
    pub train_cfg: &'a TrainConfig,
    pub split: &'a Split,
    pub percepts: &'a PerceptTable,
}

/// A batch of games turned into tensors.
pub struct GameBatch {
    pub speaker: Tensor<f32>,
    pub candidates: Vec<Tensor<f32>>,
    pub target: Vec<u32>,
    pub kinds: Vec<GameKind>,
}

pub fn assemble_batch(games: &[Game], percepts: &PerceptTable) -> Result<GameBatch, PerceptionError> {
    let b = games.len();
    let d = percepts.dim();
    let k1 = games[0].candidates.len();
    let mut speaker = Vec::with_capacity(b * d);
    let mut cands: Vec<Vec<f32>> = vec![Vec::with_capacity(b * d); k1];
    let mut target = Vec::with_capacity(b);
    let mut kinds = Vec::with_capacity(b);
    for game in games {
        speaker.extend_from_slice(percepts.get(&game.speaker_view)?);
        for (slot, view) in game.candidates.iter().enumerate() {
            cands[slot].extend_from_slice(percepts.get(view)?);
        }
        target.push(game.target_index as u32);
        kinds.push(game.kind);
    }
    Ok(GameBatch {
        speaker: Tensor::new(&[b, d], speaker),
        candidates: cands.into_iter().map(|c| Tensor::new(&[b, d], c)).collect(),
        target,
        kinds,
    })
}

/// `-log p(target)` per row, floored, averaged over the batch.
fn mean_neg_log_prob<T: Real>(g: &mut Graph<T>, log_dist: NodeId, picks: &[u32]) -> NodeId {
    let lp = g.gather_rows(log_dist, picks);
    let lp = g.clamp_min(lp, T::from_f64(LOG_PROB_FLOOR));
    let mean = g.mean(lp);
    g.scale(mean, T::from_f64(-1.0))
}

/// Differentiable speaker-listener chain loss through the relaxed channel.
pub struct SelfplayOutcome {
    pub loss: NodeId,
    pub spoken: SpokenBatch,
    pub listened: Listened,
}

pub fn selfplay_loss<T: Real, R: Rng>(
    g: &mut Graph<T>,
    nodes: &AgentNodes,
    batch: &GameBatch,
    temperature: f64,
    straight_through: bool,
    rng: &mut R,
) -> SelfplayOutcome {
    let spoken = speak(
        g,
        nodes,
        &batch.speaker,
        SpeakMode::GumbelRelaxed { temperature, straight_through },
        rng,
    );
    let relaxed = spoken.relaxed.as_ref().expect("gumbel mode yields relaxed tokens");
    let listened = listen(g, nodes, MessageInput::Relaxed(relaxed), &batch.candidates);
    let loss = mean_neg_log_prob(g, listened.log_dist, &batch.target);
    SelfplayOutcome { loss, spoken, listened }
}

/// Chain loss toward teacher-sampled picks instead of the true target.
pub fn knowledge_distillation_loss<T: Real>(
    g: &mut Graph<T>,
    listened: &Listened,
    teacher_picks: &[u32],
) -> NodeId {
    mean_neg_log_prob(g, listened.log_dist, teacher_picks)
}

/// Entropy-coefficient schedule for the speaker regularizer.
#[derive(Clone, Copy, Debug)]
pub enum EntropyCoeff {
    Fixed(f64),
    /// `c = 0.1 - 0.1 |r - b|`: full regularization at zero advantage,
    /// none when the advantage saturates.
    RewardAdaptive,
}

pub fn entropy_coeff_value(coeff: EntropyCoeff, reward: f64, baseline: f64) -> f64 {
    match coeff {
        EntropyCoeff::Fixed(c) => c,
        EntropyCoeff::RewardAdaptive => 0.1 - 0.1 * (reward - baseline).abs(),
    }
}

/// REINFORCE speaker loss over recorded per-step log-probs:
/// `-(r - b) log p(m) - (c/|m|) sum_n H_n`, averaged over the batch.
pub fn speaker_loss<T: Real>(
    g: &mut Graph<T>,
    spoken: &SpokenBatch,
    rewards: &[f64],
    baseline: f64,
    coeff: EntropyCoeff,
) -> NodeId {
    let b = rewards.len();
    let steps = spoken.step_log_prob.len();

    let mut log_prob_total: Option<NodeId> = None;
    let mut entropy_total: Option<NodeId> = None;
    for step in 0..steps {
        let mask = g.constant(Tensor::column(
            &spoken.mask[step].iter().map(|&m| T::from_f64(m as f64)).collect::<Vec<_>>(),
        ));
        let lp = g.clamp_min(spoken.step_log_prob[step], T::from_f64(LOG_PROB_FLOOR));
        let lp = g.mul(lp, mask);
        let ent = g.mul(spoken.step_entropy[step], mask);
        log_prob_total = Some(match log_prob_total {
            Some(acc) => g.add(acc, lp),
            None => lp,
        });
        entropy_total = Some(match entropy_total {
            Some(acc) => g.add(acc, ent),
            None => ent,
        });
    }
    let log_prob_total = log_prob_total.expect("at least one step");
    let entropy_total = entropy_total.expect("at least one step");

    let neg_advantage: Vec<T> =
        rewards.iter().map(|&r| T::from_f64(-(r - baseline))).collect();
    let adv = g.constant(Tensor::column(&neg_advantage));
    let policy = g.mul(log_prob_total, adv);

    let ent_scale: Vec<T> = (0..b)
        .map(|r| {
            let c = entropy_coeff_value(coeff, rewards[r], baseline);
            T::from_f64(-c / spoken.lengths[r] as f64)
        })
        .collect();
    let ent_coeff = g.constant(Tensor::column(&ent_scale));
    let regularizer = g.mul(entropy_total, ent_coeff);

    let per_row = g.add(policy, regularizer);
    g.mean(per_row)
}

/// Listener cross-entropy toward the true target.
pub fn listener_loss<T: Real>(g: &mut Graph<T>, listened: &Listened, target: &[u32]) -> NodeId {
    mean_neg_log_prob(g, listened.log_dist, target)
}

/// Accuracy-variant listener loss: `-(r - b) log p(i')` on the sampled
/// guess.
pub fn listener_accuracy_loss<T: Real>(
    g: &mut Graph<T>,
    listened: &Listened,
    guesses: &[u32],
    rewards: &[f64],
    baseline: f64,
) -> NodeId {
    let lp = g.gather_rows(listened.log_dist, guesses);
    let lp = g.clamp_min(lp, T::from_f64(LOG_PROB_FLOOR));
    let neg_advantage: Vec<T> =
        rewards.iter().map(|&r| T::from_f64(-(r - baseline))).collect();
    let adv = g.constant(Tensor::column(&neg_advantage));
    let weighted = g.mul(lp, adv);
    g.mean(weighted)
}

/// Classic edit distance.
pub fn levenshtein(a: &[u32], b: &[u32]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, &ac) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &bc) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ac != bc);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Normalized message similarity `1 - lev/|m|`; both messages are padded
/// with EOS to `max_len` before the distance.
pub fn levenshtein_similarity(student: &[u32], teacher: &[u32], max_len: usize) -> f64 {
    let pad = |m: &[u32]| -> Vec<u32> {
        let mut v = m.to_vec();
        v.resize(max_len, EOS_TOKEN);
        v
    };
    let d = levenshtein(&pad(student), &pad(teacher));
    1.0 - d as f64 / max_len as f64
}

/// One epoch row of the training-log CSV.
#[derive(Clone, Debug, Serialize)]
pub struct EpochRow {
    pub phase: String,
    pub epoch: usize,
    pub games_played: usize,
    pub mean_reward: f64,
    pub mean_loss_s: f64,
    pub mean_loss_l: f64,
    pub baseline: f64,
    pub mean_message_entropy: f64,
    pub mean_message_length: f64,
}

/// Sampled guesses and 0/1 rewards from a listener distribution.
fn sample_guesses<T: Real, R: Rng>(
    g: &Graph<T>,
    listened: &Listened,
    target: &[u32],
    rng: &mut R,
) -> (Vec<u32>, Vec<f64>) {
    let dist = g.value(listened.dist);
    let mut guesses = Vec::with_capacity(target.len());
    let mut rewards = Vec::with_capacity(target.len());
    for (r, &t) in target.iter().enumerate() {
        let guess =
            categorical_sample(dist.row(r), rng).expect("listener softmax is normalized") as u32;
        guesses.push(guess);
        rewards.push(f64::from(guess == t));
    }
    (guesses, rewards)
}

fn argmax_accuracy<T: Real>(g: &Graph<T>, listened: &Listened, target: &[u32]) -> f64 {
    let dist = g.value(listened.dist);
    let hits = target
        .iter()
        .enumerate()
        .filter(|(r, &t)| crate::gradcore::argmax(dist.row(*r)) == t as usize)
        .count();
    hits as f64 / target.len() as f64
}

fn message_stats<T: Real>(g: &Graph<T>, spoken: &SpokenBatch) -> (f64, f64) {
    let b = spoken.lengths.len();
    let mut ent = 0.0;
    for r in 0..b {
        let mut row = 0.0;
        for step in 0..spoken.lengths[r] {
            row += g.value(spoken.step_entropy[step]).data()[r].as_f64();
        }
        ent += row / spoken.lengths[r] as f64;
    }
    let len: usize = spoken.lengths.iter().sum();
    (ent / b as f64, len as f64 / b as f64)
}

struct Optimizer {
    state: AdamState<f32>,
}

impl Optimizer {
    fn new(params: &AgentParams<f32>) -> Self {
        let named = params.named();
        let refs: Vec<&Tensor<f32>> = named.iter().map(|(_, t)| *t).collect();
        Optimizer { state: AdamState::new(&refs) }
    }

    fn apply(&mut self, params: &mut AgentParams<f32>, mut grads: Vec<Tensor<f32>>, cfg: &TrainConfig) {
        if let Some(max) = cfg.clip_norm {
            clip_global_norm(&mut grads, max);
        }
        let mut named = params.named_mut();
        let mut slots: Vec<&mut Tensor<f32>> = named.iter_mut().map(|(_, t)| &mut **t).collect();
        let grad_refs: Vec<&Tensor<f32>> = grads.iter().collect();
        adam_step(&mut slots, &grad_refs, &mut self.state, cfg.lr as f32);
    }
}

/// Batch sizes covering `games_per_epoch` exactly (last one may be short).
fn batch_sizes(cfg: &TrainConfig) -> Vec<usize> {
    let mut left = cfg.games_per_epoch;
    let mut out = Vec::new();
    while left > 0 {
        let b = left.min(cfg.batch_size);
        out.push(b);
        left -= b;
    }
    out
}

/// Selfplay: the agent alone on its own game stream, fully differentiable.
pub fn run_selfplay_phase(
    ctx: &TrainContext,
    game_cfg: &GameConfig,
    agent: &mut AgentParams<f32>,
    label: &str,
    seed: u64,
) -> Result<Vec<EpochRow>, TrainError> {
    let cfg = ctx.train_cfg;
    let mut opt = Optimizer::new(agent);
    let mut game_rng = stream(seed, "selfplay-games", &[]);
    let mut noise_rng = stream(seed, "selfplay-gumbel", &[]);
    let mut rows = Vec::with_capacity(cfg.epochs_per_phase);

    for epoch in 0..cfg.epochs_per_phase {
        let mut acc = EpochAccum::default();
        for bs in batch_sizes(cfg) {
            let games = sample_batch(game_cfg, ctx.world, ctx.split, bs, &mut game_rng)?;
            let batch = assemble_batch(&games, ctx.percepts)?;

            let mut g = Graph::<f32>::new();
            let nodes = agent.nodes(&mut g, true);
            let out = selfplay_loss(
                &mut g,
                &nodes,
                &batch,
                cfg.gumbel_temperature,
                cfg.straight_through,
                &mut noise_rng,
            );
            let loss_value = g.value(out.loss).item() as f64;
            let mut grads = g.backward(out.loss);
            let grads = nodes.take_grads(&g, &mut grads);
            opt.apply(agent, grads, cfg);

            let (ent, len) = message_stats(&g, &out.spoken);
            acc.push(
                bs,
                argmax_accuracy(&g, &out.listened, &batch.target),
                loss_value,
                loss_value,
                0.0,
                ent,
                len,
            );
        }
        rows.push(acc.row(label, epoch));
    }
    Ok(rows)
}

/// Community play: roles drawn uniformly per batch, discrete channel,
/// both agents updating (speaker by policy gradient, listener per the
/// configured variant).
pub fn run_community_phase(
    ctx: &TrainContext,
    game_cfg: &GameConfig,
    agent_a: &mut AgentParams<f32>,
    agent_b: &mut AgentParams<f32>,
    seed: u64,
) -> Result<Vec<EpochRow>, TrainError> {
    let cfg = ctx.train_cfg;
    let mut opt_a = Optimizer::new(agent_a);
    let mut opt_b = Optimizer::new(agent_b);
    let mut game_rng = stream(seed, "community-games", &[]);
    let mut play_rng = stream(seed, "community-play", &[]);
    // Roles draw from their own stream so the assignment sequence is a pure
    // function of the seed.
    let mut role_rng = stream(seed, "community-roles", &[]);
    let mut baseline = RewardBaseline::new(cfg.baseline_decay);
    let mut rows = Vec::with_capacity(cfg.epochs_per_phase);

    for epoch in 0..cfg.epochs_per_phase {
        let mut acc = EpochAccum::default();
        for bs in batch_sizes(cfg) {
            let games = sample_batch(game_cfg, ctx.world, ctx.split, bs, &mut game_rng)?;
            let batch = assemble_batch(&games, ctx.percepts)?;
            let a_speaks: bool = role_rng.random_bool(0.5);

            let mut g = Graph::<f32>::new();
            let (speaker, listener) =
                if a_speaks { (&*agent_a, &*agent_b) } else { (&*agent_b, &*agent_a) };
            let sp_nodes = speaker.nodes(&mut g, true);
            let li_nodes = listener.nodes(&mut g, true);

            let spoken = speak(&mut g, &sp_nodes, &batch.speaker, SpeakMode::SampledHard, &mut play_rng);
            let listened =
                listen(&mut g, &li_nodes, MessageInput::Hard(&spoken.padded), &batch.candidates);
            let (guesses, rewards) = sample_guesses(&g, &listened, &batch.target, &mut play_rng);

            let coeff = match cfg.community_loss {
                CommunityLoss::CrossEntropy => EntropyCoeff::Fixed(cfg.entropy_coeff),
                CommunityLoss::Accuracy => EntropyCoeff::RewardAdaptive,
            };
            let loss_s = speaker_loss(&mut g, &spoken, &rewards, baseline.value(), coeff);
            let loss_l = match cfg.community_loss {
                CommunityLoss::CrossEntropy => listener_loss(&mut g, &listened, &batch.target),
                CommunityLoss::Accuracy => {
                    listener_accuracy_loss(&mut g, &listened, &guesses, &rewards, baseline.value())
                }
            };
            let total = g.add(loss_s, loss_l);
            let mut grads = g.backward(total);
            let sp_grads = sp_nodes.take_grads(&g, &mut grads);
            let li_grads = li_nodes.take_grads(&g, &mut grads);
            if a_speaks {
                opt_a.apply(agent_a, sp_grads, cfg);
                opt_b.apply(agent_b, li_grads, cfg);
            } else {
                opt_b.apply(agent_b, sp_grads, cfg);
                opt_a.apply(agent_a, li_grads, cfg);
            }

            let mean_r = rewards.iter().sum::<f64>() / rewards.len() as f64;
            let (ent, len) = message_stats(&g, &spoken);
            acc.push(
                bs,
                mean_r,
                g.value(loss_s).item() as f64,
                g.value(loss_l).item() as f64,
                baseline.value(),
                ent,
                len,
            );
            baseline.update(mean_r);
        }
        rows.push(acc.row("community", epoch));
    }
    Ok(rows)
}

/// Student-teacher play: only the student updates. The interaction form is
/// chosen by `TrainConfig::student_loss`.
pub fn run_student_teacher_phase(
    ctx: &TrainContext,
    game_cfg: &GameConfig,
    student: &mut AgentParams<f32>,
    teacher: &AgentParams<f32>,
    label: &str,
    seed: u64,
) -> Result<Vec<EpochRow>, TrainError> {
    match ctx.train_cfg.student_loss {
        StudentLoss::StudentTeacher => {
            student_teacher_play(ctx, game_cfg, student, teacher, label, seed)
        }
        StudentLoss::ImitationSelfplay => {
            imitation_phase(ctx, game_cfg, student, teacher, label, seed, false)
        }
        StudentLoss::ImitationKd => {
            imitation_phase(ctx, game_cfg, student, teacher, label, seed, true)
        }
    }
}

fn student_teacher_play(
    ctx: &TrainContext,
    game_cfg: &GameConfig,
    student: &mut AgentParams<f32>,
    teacher: &AgentParams<f32>,
    label: &str,
    seed: u64,
) -> Result<Vec<EpochRow>, TrainError> {
    let cfg = ctx.train_cfg;
    let mut opt = Optimizer::new(student);
    let mut game_rng = stream(seed, "student-games", &[]);
    let mut play_rng = stream(seed, "student-play", &[]);
    let mut baseline = RewardBaseline::new(cfg.baseline_decay);
    let mut rows = Vec::with_capacity(cfg.epochs_per_phase);
    let mut batch_index = 0usize;

    for epoch in 0..cfg.epochs_per_phase {
        let mut acc = EpochAccum::default();
        for bs in batch_sizes(cfg) {
            let games = sample_batch(game_cfg, ctx.world, ctx.split, bs, &mut game_rng)?;
            let batch = assemble_batch(&games, ctx.percepts)?;
            let student_speaks = batch_index % 2 == 0;
            batch_index += 1;

            let mut g = Graph::<f32>::new();
            let st_nodes = student.nodes(&mut g, true);
            let te_nodes = teacher.nodes(&mut g, false);
            let (sp_nodes, li_nodes) =
                if student_speaks { (&st_nodes, &te_nodes) } else { (&te_nodes, &st_nodes) };

            let spoken = speak(&mut g, sp_nodes, &batch.speaker, SpeakMode::SampledHard, &mut play_rng);
            let listened =
                listen(&mut g, li_nodes, MessageInput::Hard(&spoken.padded), &batch.candidates);
            let (_, rewards) = sample_guesses(&g, &listened, &batch.target, &mut play_rng);
            let mean_r = rewards.iter().sum::<f64>() / rewards.len() as f64;

            let (loss, loss_s, loss_l) = if student_speaks {
                let coeff = EntropyCoeff::Fixed(cfg.entropy_coeff);
                let l = speaker_loss(&mut g, &spoken, &rewards, baseline.value(), coeff);
                (l, g.value(l).item() as f64, f64::NAN)
            } else {
                let l = listener_loss(&mut g, &listened, &batch.target);
                (l, f64::NAN, g.value(l).item() as f64)
            };
            let mut grads = g.backward(loss);
            let st_grads = st_nodes.take_grads(&g, &mut grads);
            opt.apply(student, st_grads, cfg);

            let (ent, len) = message_stats(&g, &spoken);
            acc.push(bs, mean_r, loss_s, loss_l, baseline.value(), ent, len);
            if student_speaks {
                baseline.update(mean_r);
            }
        }
        rows.push(acc.row(label, epoch));
    }
    Ok(rows)
}

fn imitation_phase(
    ctx: &TrainContext,
    game_cfg: &GameConfig,
    student: &mut AgentParams<f32>,
    teacher: &AgentParams<f32>,
    label: &str,
    seed: u64,
    distill: bool,
) -> Result<Vec<EpochRow>, TrainError> {
    let cfg = ctx.train_cfg;
    let mut opt = Optimizer::new(student);
    let mut game_rng = stream(seed, "imitation-games", &[]);
    let mut play_rng = stream(seed, "imitation-play", &[]);
    let mut noise_rng = stream(seed, "imitation-gumbel", &[]);
    // The similarity reward keeps its own baseline stream, separate from
    // any accuracy baseline.
    let mut sim_baseline = RewardBaseline::new(cfg.baseline_decay);
    let mut rows = Vec::with_capacity(cfg.epochs_per_phase);

    for epoch in 0..cfg.epochs_per_phase {
        let mut acc = EpochAccum::default();
        for bs in batch_sizes(cfg) {
            let games = sample_batch(game_cfg, ctx.world, ctx.split, bs, &mut game_rng)?;
            let batch = assemble_batch(&games, ctx.percepts)?;

            let mut g = Graph::<f32>::new();
            let st_nodes = student.nodes(&mut g, true);
            let te_nodes = teacher.nodes(&mut g, false);

            // Teacher messages for the same target views, decoded greedily.
            let teacher_spoken =
                speak(&mut g, &te_nodes, &batch.speaker, SpeakMode::Greedy, &mut play_rng);

            // Student hard pass for the similarity-rewarded policy term.
            let student_hard =
                speak(&mut g, &st_nodes, &batch.speaker, SpeakMode::SampledHard, &mut play_rng);
            let sims: Vec<f64> = (0..bs)
                .map(|r| {
                    levenshtein_similarity(
                        &student_hard.tokens[r],
                        &teacher_spoken.tokens[r],
                        ctx.agent_cfg.max_message_len,
                    )
                })
                .collect();
            let loss_sts = speaker_loss(
                &mut g,
                &student_hard,
                &sims,
                sim_baseline.value(),
                EntropyCoeff::Fixed(cfg.entropy_coeff),
            );

            // Relaxed chain: plain selfplay or distillation toward the
            // teacher-listener's sampled choices on the student's message.
            let chain = selfplay_loss(
                &mut g,
                &st_nodes,
                &batch,
                cfg.gumbel_temperature,
                cfg.straight_through,
                &mut noise_rng,
            );
            let chain_loss = if distill {
                let teacher_listened = listen(
                    &mut g,
                    &te_nodes,
                    MessageInput::Hard(&chain.spoken.padded),
                    &batch.candidates,
                );
                let (picks, _) = sample_guesses(&g, &teacher_listened, &batch.target, &mut play_rng);
                knowledge_distillation_loss(&mut g, &chain.listened, &picks)
            } else {
                chain.loss
            };

            let total = g.add(loss_sts, chain_loss);
            let mut grads = g.backward(total);
            let st_grads = st_nodes.take_grads(&g, &mut grads);
            opt.apply(student, st_grads, cfg);

            let mean_sim = sims.iter().sum::<f64>() / sims.len() as f64;
            let (ent, len) = message_stats(&g, &student_hard);
            acc.push(
                bs,
                mean_sim,
                g.value(loss_sts).item() as f64,
                g.value(chain_loss).item() as f64,
                sim_baseline.value(),
                ent,
                len,
            );
            sim_baseline.update(mean_sim);
        }
        rows.push(acc.row(label, epoch));
    }
    Ok(rows)
}

#[derive(Default)]
struct EpochAccum {
    games: usize,
    reward: f64,
    loss_s: f64,
    loss_l: f64,
    baseline: f64,
    entropy: f64,
    length: f64,
    batches: usize,
    s_batches: usize,
    l_batches: usize,
}

impl EpochAccum {
    #[allow(clippy::too_many_arguments)]
    fn push(&mut self, bs: usize, reward: f64, loss_s: f64, loss_l: f64, baseline: f64, ent: f64, len: f64) {
        self.games += bs;
        self.reward += reward;
        if loss_s.is_finite() {
            self.loss_s += loss_s;
            self.s_batches += 1;
        }
        if loss_l.is_finite() {
            self.loss_l += loss_l;
            self.l_batches += 1;
        }
        self.baseline = baseline;
        self.entropy += ent;
        self.length += len;
        self.batches += 1;
    }

    fn row(&self, phase: &str, epoch: usize) -> EpochRow {
        let n = self.batches as f64;
        EpochRow {
            phase: phase.to_string(),
            epoch,
            games_played: self.games,
            mean_reward: self.reward / n,
            mean_loss_s: if self.s_batches > 0 { self.loss_s / self.s_batches as f64 } else { 0.0 },
            mean_loss_l: if self.l_batches > 0 { self.loss_l / self.l_batches as f64 } else { 0.0 },
            baseline: self.baseline,
            mean_message_entropy: self.entropy / n,
            mean_message_length: self.length / n,
        }
    }
}

/// Outcome of one generation of iterated learning.
pub struct GenerationOutcome<M> {
    pub generation: usize,
    /// Index of the teacher within the previous generation's pair
    /// (None for generation 0).
    pub teacher_id: Option<usize>,
    pub logs: Vec<EpochRow>,
    pub eval: M,
}

/// Iterated learning over already-trained generation-0 agents.
///
/// For each generation `g >= 1`: fresh randomly initialized students run
/// selfplay, then student-teacher play against one teacher sampled
/// uniformly from the previous generation's pair, then community play
/// together. `eval` runs after each generation's community phase (and once
/// on generation 0); `need_schedule[g - 1]` is the game mix for
/// generation `g`.
pub fn run_iterated_learning<M>(
    ctx: &TrainContext,
    gen0: [AgentParams<f32>; 2],
    need_schedule: &[GameConfig],
    seed: u64,
    mut eval: impl FnMut(usize, Option<usize>, &[AgentParams<f32>; 2]) -> M,
) -> Result<(Vec<GenerationOutcome<M>>, [AgentParams<f32>; 2]), TrainError> {
    let n_generations = need_schedule.len();
    let mut outcomes = Vec::with_capacity(n_generations + 1);
    outcomes.push(GenerationOutcome {
        generation: 0,
        teacher_id: None,
        logs: Vec::new(),
        eval: eval(0, None, &gen0),
    });

    let mut previous = gen0;
    let mut teacher_rng = stream(seed, "teacher-choice", &[]);
    for (gi, game_cfg) in need_schedule.iter().enumerate() {
        let generation = gi + 1;
        let teacher_id = usize::from(teacher_rng.random_bool(0.5));
        let teacher = previous[teacher_id].clone();

        let mut students = [
            init_agent::<f32>(ctx.agent_cfg, stream(seed, "student-init", &[generation as u64, 0]).random()),
            init_agent::<f32>(ctx.agent_cfg, stream(seed, "student-init", &[generation as u64, 1]).random()),
        ];
        let mut logs = Vec::new();
        for (si, student) in students.iter_mut().enumerate() {
            let label = format!("g{}_selfplay_student{}", generation, si);
            let phase_seed = stream(seed, "phase-seed", &[generation as u64, si as u64, 0]).random();
            logs.extend(run_selfplay_phase(ctx, game_cfg, student, &label, phase_seed)?);
        }
        for (si, student) in students.iter_mut().enumerate() {
            let label = format!("g{}_teacher_student{}", generation, si);
            let phase_seed = stream(seed, "phase-seed", &[generation as u64, si as u64, 1]).random();
            logs.extend(run_student_teacher_phase(ctx, game_cfg, student, &teacher, &label, phase_seed)?);
        }
        {
            let phase_seed = stream(seed, "phase-seed", &[generation as u64, 9, 2]).random();
            let (a, b) = students.split_at_mut(1);
            let mut rows = run_community_phase(ctx, game_cfg, &mut a[0], &mut b[0], phase_seed)?;
            for row in &mut rows {
                row.phase = format!("g{}_{}", generation, row.phase);
            }
            logs.extend(rows);
        }

        outcomes.push(GenerationOutcome {
            generation,
            teacher_id: Some(teacher_id),
            logs,
            eval: eval(generation, Some(teacher_id), &students),
        });
        previous = students;
    }
    Ok((outcomes, previous))
}
