//! MAE, exact and sampled XAUC, per-user XGAUC and the per-duration-group
//! diagnostic on a hand-sized example.

use d2q::grouping::fit_duration_groups;
use d2q::metrics::{duration_bias_report, mae, mae_spread, xauc_exact, xauc_sampled, xgauc};

fn main() -> d2q::Result<()> {
    let truth = [3.0, 8.0, 1.0, 12.0, 5.0, 7.0, 2.0, 9.0];
    let pred = [2.5, 6.0, 2.0, 10.0, 6.0, 5.0, 1.0, 11.0];
    let users = [1, 1, 1, 1, 2, 2, 2, 2];
    let durations = [10.0, 20.0, 10.0, 60.0, 20.0, 30.0, 10.0, 60.0];

    println!("mae          {:.4}", mae(&pred, &truth)?);
    println!("xauc exact   {:.4}", xauc_exact(&pred, &truth)?);
    println!("xauc sampled {:.4}", xauc_sampled(&pred, &truth, 100_000, 7)?);
    println!("xgauc        {:.4}", xgauc(&pred, &truth, &users)?);

    let g = fit_duration_groups(&durations, 2)?;
    let report = duration_bias_report(&pred, &truth, &durations, &g)?;
    for row in &report {
        println!(
            "group {} n={} mae {:?} xauc {:?}",
            row.group, row.count, row.mae, row.xauc
        );
    }
    println!("mae spread   {:?}", mae_spread(&report));
    Ok(())
}
