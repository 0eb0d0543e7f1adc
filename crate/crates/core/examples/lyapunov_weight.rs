//! Larger V trades longer virtual queues for a smaller gap to the static optimum.

use bandshare::abs::run_abs;
use bandshare::experiment::reference_objective;
use bandshare::scenario::{Detail, ScenarioSpec};
use bandshare::{SharingMatrix, SystemConfig};

fn main() -> bandshare::Result<()> {
    let base = SystemConfig::table2();
    let scenario = ScenarioSpec::mirrored(&base, 0.1, 0.9, 10e6, 2024, 300);
    let opt = reference_objective(&base, &scenario, 150..300)?;
    for v in [0.3, 1.0, 3.0, 10.0, 30.0, 100.0] {
        // duals scale with V; keep eta * V fixed
        let cfg = SystemConfig {
            v_weight: v,
            step_size: base.step_size / v,
            ..base.clone()
        };
        let trace = run_abs(
            &cfg,
            &scenario,
            300,
            &SharingMatrix::no_sharing(&cfg),
            Detail::Hyperperiod,
        )?;
        let q = trace
            .hyperperiods
            .iter()
            .map(|h| h.max_queue)
            .fold(0.0, f64::max);
        let gap = (trace.mean_qoe(150..300) - opt) / opt;
        println!("V {v:>5}: gap {:+.3}%  max queue {q:.2}", 100.0 * gap);
    }
    Ok(())
}
