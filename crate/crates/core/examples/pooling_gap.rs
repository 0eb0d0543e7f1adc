//! Gain from pooling under deterministic arrivals: closed form vs solver.

use bandshare::baselines::{lemma3_gap, no_sharing_config, solve_opt_ss_star};
use bandshare::oracle::equal_split_objective;
use bandshare::scenario::{generate_range, ArrivalLaw, ScenarioSpec};
use bandshare::SystemConfig;

fn main() -> bandshare::Result<()> {
    let cfg = SystemConfig::table2();
    let counts = vec![vec![3, 27], vec![27, 3]];
    let flat: Vec<usize> = (0..cfg.num_cells())
        .map(|c| {
            let (i, r) = cfg.cell_coords(c);
            counts[i][r]
        })
        .collect();
    for capacity in [2e6, 10e6, 100e6, 1e9] {
        let scenario = ScenarioSpec {
            arrivals: ArrivalLaw::Deterministic {
                counts: counts.clone(),
            },
            capacities: vec![vec![capacity; 2]; 2],
            switches: Vec::new(),
            seed: 0,
            horizon: 1,
        };
        let opt = match solve_opt_ss_star(&cfg, &generate_range(&scenario, &cfg, 0..1)) {
            Ok(o) => o,
            Err(e) => {
                println!("c = {:>6} Mb: {e}", capacity / 1e6);
                continue;
            }
        };
        let ns = equal_split_objective(&no_sharing_config(&cfg), &flat, capacity, &[20.0; 4])
            .unwrap_or(f64::NAN);
        let gap = lemma3_gap(&counts, &cfg, capacity)?;
        println!(
            "c = {:>6} Mb: solver {:>8.4}  exact {:>8.4}  large-capacity {:>8.4}",
            capacity / 1e6,
            opt.objective - ns,
            gap.exact,
            gap.large_capacity
        );
    }
    Ok(())
}
