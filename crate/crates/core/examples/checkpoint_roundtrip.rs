//! Write a trained predictor to a checkpoint, read it back and confirm the
//! predictions are bit-identical.

use d2q::harness::{read_checkpoint, write_checkpoint};
use d2q::model::ModelConfig;
use d2q::predictors::{train_predictor, MethodKind};
use d2q::synthgen::{generate_world, sample_logged_interactions, sample_unbiased_test, GenConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let world = generate_world(&GenConfig {
        n_users: 50,
        n_videos: 200,
        ..GenConfig::default()
    })?;
    let train = sample_logged_interactions(&world, 10_000, 1)?;
    let test = sample_unbiased_test(&world, 1_000, 2)?;
    let p = train_predictor(
        MethodKind::Resd2q,
        &train,
        8,
        &ModelConfig {
            epochs: 2,
            ..ModelConfig::desk()
        },
    )?;

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("resd2q_m8.d2qc");
    write_checkpoint(&path, &p, train.schema(), "example", Some(1))?;
    let (header, loaded) = read_checkpoint(&path)?;
    println!(
        "{} bytes, method {}, m={}, {} tensors",
        std::fs::metadata(&path)?.len(),
        header.method,
        header.m,
        header.tensors.len()
    );

    let a = p.predict_dataset(&test)?;
    let b = loaded.predict_dataset(&test)?;
    let same = a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits());
    println!("predictions identical after reload: {same}");
    assert!(same);
    Ok(())
}
