//! Train every method on a small logged sample and score it on uniform test
//! data, with the oracle expected watch time as a reference row.

use d2q::grouping::fit_duration_groups;
use d2q::metrics::evaluate;
use d2q::model::ModelConfig;
use d2q::predictors::{train_predictor, MethodKind};
use d2q::synthgen::{
    generate_world, sample_logged_interactions, sample_unbiased_test, true_expected_watch_time, GenConfig,
};

fn main() -> d2q::Result<()> {
    let world = generate_world(&GenConfig {
        n_users: 100,
        n_videos: 300,
        ..GenConfig::default()
    })?;
    let train = sample_logged_interactions(&world, 30_000, 1)?;
    let test = sample_unbiased_test(&world, 8_000, 2)?;
    let truth = test.watch_times();
    let users = test.user_ids();
    let durations = test.durations();
    let diag = fit_duration_groups(&durations, 4)?;
    let config = ModelConfig {
        epochs: 3,
        seed: 1,
        ..ModelConfig::desk()
    };

    let oracle = test
        .records()
        .iter()
        .map(|r| true_expected_watch_time(&world, r.user_id as usize, r.video_id as usize))
        .collect::<d2q::Result<Vec<_>>>()?;
    let r = evaluate(&oracle, &truth, &users, &durations, &diag, 80_000, 1)?;
    println!(
        "{:8} m={:2} mae {:7.3} xauc {:.4} xgauc {:.4}",
        "oracle", "-", r.mae, r.xauc, r.xgauc
    );

    for (kind, m) in [
        (MethodKind::Vr, 1),
        (MethodKind::Wlr, 1),
        (MethodKind::D2q, 1),
        (MethodKind::D2q, 16),
        (MethodKind::Resd2q, 16),
    ] {
        let p = train_predictor(kind, &train, m, &config)?;
        let pred = p.predict_dataset(&test)?;
        let r = evaluate(&pred, &truth, &users, &durations, &diag, 80_000, 1)?;
        println!(
            "{:8} m={m:2} mae {:7.3} xauc {:.4} xgauc {:.4}",
            kind.display_name(),
            r.mae,
            r.xauc,
            r.xgauc
        );
    }
    Ok(())
}
