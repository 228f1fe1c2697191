//! Equal-frequency duration groups and the per-group ECDF labels that D2Q
//! regresses on, plus the inverse that turns a quantile back into seconds.

use d2q::data::{Dataset, InteractionRecord};
use d2q::distribution::{fit_group_cdfs, inverse_cdf};
use d2q::grouping::{fit_duration_groups, group_sizes};
use d2q::predictors::make_d2q_labels;

fn main() -> d2q::Result<()> {
    let durations = [
        10.0, 12.0, 15.0, 30.0, 45.0, 60.0, 90.0, 120.0, 180.0, 240.0, 300.0, 600.0,
    ];
    let records = durations
        .iter()
        .enumerate()
        .map(|(i, &d)| InteractionRecord {
            user_id: (i % 3) as u64,
            video_id: i as u64,
            duration: d,
            watch_time: d * (0.2 + 0.07 * i as f64),
            dense_features: vec![],
            id_features: vec![],
        })
        .collect();
    let ds = Dataset::with_inferred_schema(records)?;

    let groups = fit_duration_groups(&ds.durations(), 3)?;
    println!("boundaries {:?}", groups.boundaries());
    println!("group sizes {:?}", group_sizes(&groups, &ds.durations()));

    let cdfs = fit_group_cdfs(&ds, &groups, 1)?;
    let labels = make_d2q_labels(&ds, &groups, &cdfs)?;
    for (r, q) in ds.records().iter().zip(&labels) {
        let k = groups.assign(r.duration);
        let back = inverse_cdf(cdfs.get(k), *q)?;
        println!(
            "d={:5.0} group {k} w={:7.2} label {q:.3} inverse {back:7.2}",
            r.duration, r.watch_time
        );
    }
    Ok(())
}
