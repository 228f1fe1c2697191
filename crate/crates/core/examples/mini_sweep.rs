//! A scaled-down sweep over methods and group counts, writing the same
//! reports as `dq sweep`.

use d2q::harness::{cmd_sweep_with, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let mut config = RunConfig {
        output_dir: dir.path().to_path_buf(),
        train_size: 20_000,
        test_size: 4_000,
        seeds: vec![1],
        group_counts: vec![1, 4, 16],
        ..RunConfig::default()
    };
    config.gen.n_users = 100;
    config.gen.n_videos = 300;
    config.model.epochs = 2;

    let result = cmd_sweep_with(&config, |row| {
        eprintln!("{} m={} xgauc={:.4}", row.method, row.m, row.xgauc)
    })?;
    print!("{}", result.summary_markdown());
    for entry in std::fs::read_dir(dir.path())? {
        println!("wrote {}", entry?.file_name().to_string_lossy());
    }
    Ok(())
}
