//! Lewis signaling game construction.
//!
//! A game pairs a speaker view of a target object with a listener lineup:
//! a *different* view of the same object plus `n_distractors` views of other
//! objects, shuffled. Three generators operationalize communicative need:
//!
//! * shape games — every candidate shares color/material/size and carries a
//!   distinct shape, so only shape information resolves the lineup;
//! * color games — the same with color and shape swapped;
//! * random games — candidates drawn uniformly over objects (deduplicated),
//!   which only rarely happen to qualify as shape or color games.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rngutil::stream;
use crate::worldgen::{ObjectSpec, Split, ViewInstance, WorldConfig};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GameError {
    #[error("world has {available} {attribute}s but a {attribute} game needs {needed} distinct ones")]
    WorldTooSmall { attribute: &'static str, available: usize, needed: usize },
    #[error("world has {objects} objects but a game needs {needed} distinct candidates")]
    TooFewObjects { objects: usize, needed: usize },
    #[error("game kind probabilities must be in [0,1] and sum to at most 1")]
    BadProbabilities,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GameKind {
    Shape,
    Color,
    Random,
}

impl std::fmt::Display for GameKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GameKind::Shape => write!(f, "shape"),
            GameKind::Color => write!(f, "color"),
            GameKind::Random => write!(f, "random"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    pub n_distractors: usize,
    /// Communicative need for shape: probability a training game is a shape
    /// game.
    pub p_shape_games: f64,
    pub p_color_games: f64,
}

impl Default for GameConfig {
    fn default() -> Self {
        GameConfig { n_distractors: 3, p_shape_games: 0.0, p_color_games: 0.0 }
    }
}

impl GameConfig {
    pub fn validate(&self) -> Result<(), GameError> {
        let ps = self.p_shape_games;
        let pc = self.p_color_games;
        if !(0.0..=1.0).contains(&ps) || !(0.0..=1.0).contains(&pc) || ps + pc > 1.0 {
            return Err(GameError::BadProbabilities);
        }
        Ok(())
    }
}

/// One constructed game. `candidates[target_index]` is the listener's view
/// of the speaker's object; the rest are distractor views.
#[derive(Clone, Debug)]
pub struct Game {
    pub speaker_view: ViewInstance,
    pub candidates: Vec<ViewInstance>,
    pub target_index: usize,
    pub kind: GameKind,
}

impl Game {
    pub fn listener_view(&self) -> &ViewInstance {
        &self.candidates[self.target_index]
    }

    pub fn distractors(&self) -> impl Iterator<Item = &ViewInstance> {
        self.candidates
            .iter()
            .enumerate()
            .filter(move |(i, _)| *i != self.target_index)
            .map(|(_, v)| v)
    }

    /// Structural check: exactly one candidate holds the speaker's object,
    /// it sits at `target_index`, its view seed differs from the speaker's,
    /// and candidate objects are pairwise distinct.
    pub fn is_well_formed(&self, cfg: &WorldConfig) -> bool {
        let target = self.speaker_view.object;
        let holders: Vec<usize> = self
            .candidates
            .iter()
            .enumerate()
            .filter(|(_, v)| v.object == target)
            .map(|(i, _)| i)
            .collect();
        let mut ids: Vec<usize> = self.candidates.iter().map(|v| v.object.object_id(cfg)).collect();
        ids.sort_unstable();
        ids.dedup();
        holders == vec![self.target_index]
            && ids.len() == self.candidates.len()
            && self.listener_view().view_seed != self.speaker_view.view_seed
    }

    /// Does this lineup satisfy the structural shape-game definition?
    pub fn qualifies_as_shape_game(&self) -> bool {
        differ_only_in(self.candidates.iter().map(|v| v.object), Attribute::Shape)
    }

    pub fn qualifies_as_color_game(&self) -> bool {
        differ_only_in(self.candidates.iter().map(|v| v.object), Attribute::Color)
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Attribute {
    Shape,
    Color,
}

fn differ_only_in(objects: impl Iterator<Item = ObjectSpec>, attr: Attribute) -> bool {
    let objects: Vec<ObjectSpec> = objects.collect();
    let first = objects[0];
    let mut varying: Vec<u16> = Vec::with_capacity(objects.len());
    for o in &objects {
        let (vary, fixed) = match attr {
            Attribute::Shape => (o.shape_id, (o.color_id, o.material_id, o.size_id)),
            Attribute::Color => (o.color_id, (o.shape_id, o.material_id, o.size_id)),
        };
        let first_fixed = match attr {
            Attribute::Shape => (first.color_id, first.material_id, first.size_id),
            Attribute::Color => (first.shape_id, first.material_id, first.size_id),
        };
        if fixed != first_fixed {
            return false;
        }
        varying.push(vary);
    }
    varying.sort_unstable();
    varying.windows(2).all(|w| w[0] != w[1])
}

/// Pick `n` distinct values from `0..count` by partial Fisher-Yates.
fn distinct_ids<R: Rng>(count: usize, n: usize, rng: &mut R) -> Vec<usize> {
    debug_assert!(n <= count);
    let mut ids: Vec<usize> = (0..count).collect();
    for i in 0..n {
        let j = rng.random_range(i..count);
        ids.swap(i, j);
    }
    ids.truncate(n);
    ids
}

fn assemble<R: Rng>(
    target: ObjectSpec,
    distractor_objects: Vec<ObjectSpec>,
    kind: GameKind,
    cfg: &WorldConfig,
    split: &Split,
    rng: &mut R,
) -> Game {
    let (speaker_view, listener_view) = split.two_views_of(target.object_id(cfg), rng);
    let k = distractor_objects.len();
    let target_index = rng.random_range(0..=k);
    let mut candidates = Vec::with_capacity(k + 1);
    let mut distractor_views = distractor_objects
        .into_iter()
        .map(|obj| split.view_of(obj.object_id(cfg), rng));
    for slot in 0..=k {
        if slot == target_index {
            candidates.push(listener_view);
        } else {
            candidates.push(distractor_views.next().expect("one view per distractor"));
        }
    }
    Game { speaker_view, candidates, target_index, kind }
}

fn attribute_game<R: Rng>(
    attr: Attribute,
    cfg: &WorldConfig,
    game_cfg: &GameConfig,
    split: &Split,
    rng: &mut R,
) -> Result<Game, GameError> {
    let needed = game_cfg.n_distractors + 1;
    let (available, name) = match attr {
        Attribute::Shape => (cfg.n_shapes, "shape"),
        Attribute::Color => (cfg.n_colors, "color"),
    };
    if available < needed {
        return Err(GameError::WorldTooSmall { attribute: name, available, needed });
    }

    let varying = distinct_ids(available, needed, rng);
    let color = rng.random_range(0..cfg.n_colors) as u16;
    let shape = rng.random_range(0..cfg.n_shapes) as u16;
    let material = rng.random_range(0..cfg.n_materials) as u16;
    let size = rng.random_range(0..cfg.n_sizes) as u16;

    let make = |v: usize| match attr {
        Attribute::Shape => ObjectSpec { shape_id: v as u16, color_id: color, material_id: material, size_id: size },
        Attribute::Color => ObjectSpec { shape_id: shape, color_id: v as u16, material_id: material, size_id: size },
    };
    let target = make(varying[0]);
    let distractors: Vec<ObjectSpec> = varying[1..].iter().map(|&v| make(v)).collect();
    let kind = match attr {
        Attribute::Shape => GameKind::Shape,
        Attribute::Color => GameKind::Color,
    };
    Ok(assemble(target, distractors, kind, cfg, split, rng))
}

/// All candidates share color/material/size and carry pairwise distinct
/// shapes.
pub fn make_shape_game<R: Rng>(
    cfg: &WorldConfig,
    game_cfg: &GameConfig,
    split: &Split,
    rng: &mut R,
) -> Result<Game, GameError> {
    attribute_game(Attribute::Shape, cfg, game_cfg, split, rng)
}

/// All candidates share shape/material/size and carry pairwise distinct
/// colors.
pub fn make_color_game<R: Rng>(
    cfg: &WorldConfig,
    game_cfg: &GameConfig,
    split: &Split,
    rng: &mut R,
) -> Result<Game, GameError> {
    attribute_game(Attribute::Color, cfg, game_cfg, split, rng)
}

/// Candidate objects drawn i.i.d.-uniform over the object space, resampled
/// until pairwise distinct. The kind label records the generator; a random
/// game may still incidentally qualify as a shape or color game.
pub fn make_random_game<R: Rng>(
    cfg: &WorldConfig,
    game_cfg: &GameConfig,
    split: &Split,
    rng: &mut R,
) -> Result<Game, GameError> {
    let object_ids = sample_random_object_ids(cfg, game_cfg.n_distractors + 1, rng)?;
    let target = ObjectSpec::from_id(cfg, object_ids[0]);
    let distractors: Vec<ObjectSpec> =
        object_ids[1..].iter().map(|&id| ObjectSpec::from_id(cfg, id)).collect();
    Ok(assemble(target, distractors, GameKind::Random, cfg, split, rng))
}

/// The object-sampling core of [`make_random_game`], exposed so incidence
/// statistics can be estimated without building views.
pub fn sample_random_object_ids<R: Rng>(
    cfg: &WorldConfig,
    n: usize,
    rng: &mut R,
) -> Result<Vec<usize>, GameError> {
    let total = cfg.object_count();
    if total < n {
        return Err(GameError::TooFewObjects { objects: total, needed: n });
    }
    let mut ids: Vec<usize> = Vec::with_capacity(n);
    while ids.len() < n {
        let id = rng.random_range(0..total);
        if !ids.contains(&id) {
            ids.push(id);
        }
    }
    Ok(ids)
}

/// One training batch: each game is independently a shape game with
/// probability `p_shape_games`, a color game with `p_color_games`, and a
/// random game otherwise.
pub fn sample_batch<R: Rng>(
    game_cfg: &GameConfig,
    cfg: &WorldConfig,
    split: &Split,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<Game>, GameError> {
    game_cfg.validate()?;
    let mut out = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let u: f64 = rng.random();
        let game = if u < game_cfg.p_shape_games {
            make_shape_game(cfg, game_cfg, split, rng)?
        } else if u < game_cfg.p_shape_games + game_cfg.p_color_games {
            make_color_game(cfg, game_cfg, split, rng)?
        } else {
            make_random_game(cfg, game_cfg, split, rng)?
        };
        out.push(game);
    }
    Ok(out)
}

/// Fixed evaluation sets of each kind, drawn from one split (test views
/// only) and reproducible from the seed.
pub struct ProbeSets {
    pub shape: Vec<Game>,
    pub color: Vec<Game>,
    pub random: Vec<Game>,
}

pub fn build_probe_sets(
    cfg: &WorldConfig,
    game_cfg: &GameConfig,
    test_split: &Split,
    n_per_kind: usize,
    seed: u64,
) -> Result<ProbeSets, GameError> {
    let mut shape_rng = stream(seed, "probe-shape", &[]);
    let mut color_rng = stream(seed, "probe-color", &[]);
    let mut random_rng = stream(seed, "probe-random", &[]);
    let mut shape = Vec::with_capacity(n_per_kind);
    let mut color = Vec::with_capacity(n_per_kind);
    let mut random = Vec::with_capacity(n_per_kind);
    for _ in 0..n_per_kind {
        shape.push(make_shape_game(cfg, game_cfg, test_split, &mut shape_rng)?);
        color.push(make_color_game(cfg, game_cfg, test_split, &mut color_rng)?);
        random.push(make_random_game(cfg, game_cfg, test_split, &mut random_rng)?);
    }
    Ok(ProbeSets { shape, color, random })
}
