//! One-off feasibility probe for the engine benchmark (single multiplier tuple).

use lpvsd::engine::{build_afr_plant, EngineConfig};
use lpvsd::lpv::make_grid;
use lpvsd::synthesis::{check_certificate, lambda_search, SynthesisOptions};
use std::time::Instant;

fn main() {
    let cfg = EngineConfig::default();
    let plant = build_afr_plant(&cfg).unwrap();
    let opts = if std::env::var_os("PROBE_FULL").is_some() {
        SynthesisOptions::default()
    } else {
        SynthesisOptions {
            lambda2: vec![1.0],
            lambda3: vec![1.0],
            lambda4: vec![1.0],
            ..SynthesisOptions::default()
        }
    };
    let t0 = Instant::now();
    let outcome = lambda_search(&plant, &opts).unwrap();
    println!("search time: {:?}", t0.elapsed());
    for t in &outcome.trials {
        println!(
            "lambda={:?} status={:?} gamma={:?} max_residual={:?} iters={} time={:.2}s",
            t.lambda, t.status, t.gamma, t.max_residual, t.iterations, t.solve_time_s
        );
    }
    if let Some(cert) = outcome.certificate {
        let dense = make_grid(&plant.schedule, &[50]).unwrap();
        let t1 = Instant::now();
        let report = check_certificate(&cert, &plant, &dense).unwrap();
        println!("dense check time: {:?}", t1.elapsed());
        println!(
            "pass={} max_lmi_eig={:.3e} at rho={:?} signs={:?}",
            report.pass, report.max_lmi_eig, report.worst_point, report.worst_signs
        );
        println!(
            "min_lyap={:.3e} min_coupling={:.3e} min_weight={:.3e}",
            report.min_lyap_eig, report.min_coupling_eig, report.min_weight_eig
        );
    } else {
        println!("no certificate");
    }
}
