use shapelex_core::agent::*;
use shapelex_core::game::GameConfig;
use shapelex_core::learning::*;
use shapelex_core::perception::{init_perception, PerceptionConfig, PerceptTable};
use shapelex_core::worldgen::{make_splits, WorldConfig};
use std::time::Instant;

#[test]
fn curve() {
    let world = WorldConfig::default();
    let (train, _) = make_splits(&world, 17).unwrap();
    let pcfg = PerceptionConfig { feature_dim: 64, mixing_seed: 23, ..PerceptionConfig::default() };
    let perception = init_perception(&pcfg, &world).unwrap();
    let table = PerceptTable::build(&perception, train.views()).unwrap();
    let agent_cfg = AgentConfig { feature_dim: 64, compression_size: 128, hidden_size: 64, hidden_mlp_size: 64, embedding_size: 64, vocab_size: 60, max_message_len: 7 };
    let gc = GameConfig { n_distractors: 3, p_shape_games: 0.2, p_color_games: 0.0 };

    for (batch, games, lr, escale) in [(64usize, 12_800usize, 0.003f64, 4.0f32), (32, 12_800, 0.003, 4.0), (64, 25_600, 0.003, 4.0), (64, 25_600, 0.001, 1.0)] {
        let t0 = Instant::now();
        let train_cfg = TrainConfig { epochs_per_phase: 8, games_per_epoch: games / 8, batch_size: batch, lr, ..TrainConfig::default() };
        let ctx = TrainContext { world: &world, agent_cfg: &agent_cfg, train_cfg: &train_cfg, split: &train, percepts: &table };
        let mut a = init_agent::<f32>(&agent_cfg, 1001);
        a.embed = a.embed.map(|x| x * escale);
        let rows = run_selfplay_phase(&ctx, &gc, &mut a, "sp", 11).unwrap();
        let series: Vec<String> = rows.iter().map(|r| format!("{:.2}", r.mean_reward)).collect();
        println!("batch {} games {} lr {} embed x{}: {} ({:?})", batch, games, lr, escale, series.join(" "), t0.elapsed());
    }
}
