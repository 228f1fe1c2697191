//! Build a confounded world, then compare the logged (duration-biased) sample
//! with the uniform test sample.

use d2q::synthgen::{
    generate_world, sample_logged_interactions, sample_unbiased_test, true_expected_watch_time, GenConfig,
};

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn main() -> d2q::Result<()> {
    let config = GenConfig {
        n_users: 100,
        n_videos: 300,
        ..GenConfig::default()
    };
    let world = generate_world(&config)?;
    let logged = sample_logged_interactions(&world, 20_000, 1)?;
    let test = sample_unbiased_test(&world, 20_000, 2)?;

    println!("world mean duration   {:8.2}", mean(&world.durations));
    println!("logged mean duration  {:8.2}", mean(&logged.durations()));
    println!("test mean duration    {:8.2}", mean(&test.durations()));
    println!("logged mean watch     {:8.2}", mean(&logged.watch_times()));
    println!("test mean watch       {:8.2}", mean(&test.watch_times()));

    for r in &test.records()[..5] {
        let (u, v) = (r.user_id as usize, r.video_id as usize);
        println!(
            "user {u:3} video {v:3} d={:6.1} s={:.3} w={:6.2} E[w]={:6.2}",
            r.duration,
            world.interest(u, v),
            r.watch_time,
            true_expected_watch_time(&world, u, v)?
        );
    }
    Ok(())
}
