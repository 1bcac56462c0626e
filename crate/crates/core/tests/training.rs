use ramp::diffusion::GuidanceConfig;
use ramp::geometry::{Environment, Obstacle};
use ramp::model::Model;
use ramp::nn::NetConfig;
use ramp::trajectory::Trajectory;
use ramp::training::{train, TrainConfig, TrainItem};

fn demo() -> (Environment, Vec<f64>) {
    let env = Environment::new("smoke", 2, vec![Obstacle::circle(&[0.1, 0.2], 0.15)], 1).unwrap();
    let pos: Vec<Vec<f64>> = (0..48).map(|k| vec![-0.8 + 1.6 * k as f64 / 47.0, 0.6 - 0.3 * k as f64 / 47.0]).collect();
    (env, Trajectory::from_positions(2, &pos, 0.1).into_vec())
}

fn loss_ratio(steps: usize) -> f64 {
    let (env, tau) = demo();
    let items = [TrainItem { traj: &tau, cloud: 0 }];
    let model = Model::init(NetConfig::new(2, 48), 100, 5).unwrap();
    let cfg = TrainConfig { epochs: steps, batch_size: 64, lr: 1e-3, n_steps: 100, seed: 9, envs_per_batch: 8, ..TrainConfig::default() };
    let out = train(&model, &items, &[&env.cloud], &cfg, &GuidanceConfig::default(), |_, _| {}).unwrap();
    let s = &out.step_losses;
    let head = s[..10].iter().sum::<f64>() / 10.0;
    let tail = s[s.len() - 10..].iter().sum::<f64>() / 10.0;
    tail / head
}

#[test]
fn overfit_one_demo_in_500_steps() {
    let r = loss_ratio(500);
    assert!(r < 0.2, "loss ratio after 500 steps: {r:.3}");
}

#[test]
fn overfit_one_demo_in_3000_steps() {
    let r = loss_ratio(3000);
    assert!(r < 0.2, "loss ratio after 3000 steps: {r:.3}");
}

#[test]
fn resumed_training_continues_the_curve() {
    let (env, tau) = demo();
    let items = [TrainItem { traj: &tau, cloud: 0 }];
    let model = Model::init(NetConfig::new(2, 48), 100, 5).unwrap();
    let cfg = TrainConfig { epochs: 200, batch_size: 64, lr: 1e-3, n_steps: 100, seed: 9, envs_per_batch: 8, ..TrainConfig::default() };
    let g = GuidanceConfig::default();
    let first = train(&model, &items, &[&env.cloud], &cfg, &g, |_, _| {}).unwrap();
    let reloaded = Model::from_bytes(&first.model.to_bytes()).unwrap();
    assert_eq!(reloaded.meta.train_steps, 200);
    let second = train(&reloaded, &items, &[&env.cloud], &TrainConfig { epochs: 20, ..cfg }, &g, |_, _| {}).unwrap();
    let before = first.step_losses[190..].iter().sum::<f64>() / 10.0;
    let after = second.step_losses[..10].iter().sum::<f64>() / 10.0;
    assert!(after < 2.0 * before && before < 2.0 * after, "before {before} after {after}");
    assert_eq!(second.model.meta.train_steps, 220);
}
