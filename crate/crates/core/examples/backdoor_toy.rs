//! A three-duration toy world where long durations are shown mostly with one
//! video. The observational mean mixes durations by exposure; the backdoor
//! estimate reweights them by P(D), and a D2Q fit recovers it.

use d2q::model::ModelConfig;
use d2q::predictors::{backdoor_estimate, backdoor_with_predictor, train_predictor, MethodKind};
use d2q::synthgen::{make_toy_world, ToyWorldSpec};

fn main() -> d2q::Result<()> {
    let durations = vec![10.0, 30.0, 60.0];
    let mut expected = Vec::new();
    for cell in 0..4 {
        for d in &durations {
            expected.push(d * (0.25 + 0.15 * cell as f64));
        }
    }
    let world = make_toy_world(ToyWorldSpec {
        n_users: 2,
        n_videos: 2,
        durations,
        p_duration: vec![0.4, 0.35, 0.25],
        expected_watch: expected,
        exposure: Some(vec![0.8, 0.2, 0.5, 0.5, 0.3, 0.7]),
        relative_noise: 0.1,
    })?;

    let data = world.sample(500_000, 3)?;
    let p = train_predictor(MethodKind::D2q, &data, 3, &ModelConfig::desk())?;
    for u in 0..2 {
        for v in 0..2 {
            println!(
                "u={u} v={v} observational {:6.2} backdoor {:6.2} d2q {:6.2}",
                world.observational_mean(u, v)?,
                backdoor_estimate(&world, u, v)?,
                backdoor_with_predictor(&p, &world, u, v)?
            );
        }
    }
    Ok(())
}
