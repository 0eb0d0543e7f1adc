//! One cell's slot allocation: bisection on the price vs grid search.

use bandshare::oracle::brute_force_ra;
use bandshare::ra::{cell_objective, solve_cell, CellParams};
use bandshare::SystemConfig;

fn main() -> bandshare::Result<()> {
    let cfg = SystemConfig::table2();
    let params = CellParams::from_config(&cfg);
    let caps = [2e6, 4e6, 25e6];
    for queues in [[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 5.0, 0.0]] {
        for budget in [4.0, 20.0, 40.0] {
            let fast = solve_cell(&params, budget, &caps, &queues)?;
            let slow = brute_force_ra(&params, budget, &caps, &queues)?;
            println!(
                "P={queues:?} b={budget:>4}: tau {:.3?} price {:.4}  objective {:.6} (grid {:.6})",
                fast.tau,
                fast.lambda,
                cell_objective(&params, &caps, &queues, &fast.tau),
                slow.objective
            );
        }
    }
    Ok(())
}
