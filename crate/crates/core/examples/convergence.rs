//! ABS from no sharing on the default world, printed every 25 hyperperiods
//! against the best static sharing for the same arrivals.

use bandshare::abs::run_abs;
use bandshare::experiment::reference_objective;
use bandshare::scenario::{min_satisfaction, Detail, ScenarioSpec};
use bandshare::{SharingMatrix, SystemConfig};

fn main() -> bandshare::Result<()> {
    let cfg = SystemConfig::table2();
    let scenario = ScenarioSpec::mirrored(&cfg, 0.1, 0.9, 10e6, 2024, 300);
    let trace = run_abs(
        &cfg,
        &scenario,
        300,
        &SharingMatrix::no_sharing(&cfg),
        Detail::Hyperperiod,
    )?;
    let opt = reference_objective(&cfg, &scenario, 150..300)?;

    println!("hyperperiod  qoe      shared  max_queue");
    for h in trace.hyperperiods.iter().step_by(25) {
        println!(
            "{:>11}  {:>7.3}  {:>6.2}  {:>9.3}",
            h.index,
            h.total_qoe,
            h.sharing.total_shared(),
            h.max_queue
        );
    }
    println!("static optimum over [150, 300): {opt:.3}");
    println!(
        "ABS mean over [150, 300):       {:.3}",
        trace.mean_qoe(150..300)
    );
    println!(
        "worst satisfied fraction:       {:.4}",
        min_satisfaction(&trace).unwrap_or(f64::NAN)
    );
    Ok(())
}
