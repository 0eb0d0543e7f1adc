//! All four policies on one mirrored rate pair.

use bandshare::baselines::PolicyKind;
use bandshare::experiment::run_policy;
use bandshare::scenario::{improvement, Detail, ScenarioSpec};
use bandshare::{SharingMatrix, SystemConfig};

fn main() -> bandshare::Result<()> {
    let low: f64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0.2);
    let cfg = SystemConfig::table2();
    let scenario = ScenarioSpec::mirrored(&cfg, low, 1.0 - low, 10e6, 2024, 300);
    let start = SharingMatrix::no_sharing(&cfg);

    let mut base = None;
    for policy in PolicyKind::ALL {
        let trace = run_policy(&cfg, &scenario, policy, 300, &start, Detail::Hyperperiod)?;
        let qoe = trace.mean_qoe(150..300);
        let base = *base.get_or_insert(qoe);
        println!(
            "{:<12} {qoe:>8.3}  {:>+7.2}%",
            policy.as_str(),
            improvement(qoe, base).value
        );
    }
    Ok(())
}
