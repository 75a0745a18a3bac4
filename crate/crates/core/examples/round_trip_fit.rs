//! Synthesize a noisy spiral scan from the bundled model, perturb the model,
//! and anneal back.
//!
//! cargo run --example round_trip_fit -- [seed]

use std::time::Instant;

use spinham::fit::{anneal, FitConfig, InitJitter};
use spinham::model::HamiltonianModel;
use spinham::spectra::{synthesize_dataset, SpiralScan};

fn main() -> spinham::error::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let truth = HamiltonianModel::site2_table1();
    let data = synthesize_dataset(&truth, &SpiralScan::default(), 9.0, seed)?;
    let config = FitConfig {
        seed,
        init_jitter: InitJitter {
            angle_deg: 5.0,
            relative: 0.05,
        },
        ..FitConfig::default()
    };
    let start = Instant::now();
    let fit = anneal(&data, &config, &truth)?;
    println!(
        "rms {:.3} kHz over {} peaks ({} unmatched), {} evaluations in {:.1} s",
        fit.rms_khz,
        fit.matched,
        fit.unmatched,
        fit.evaluations,
        start.elapsed().as_secs_f64()
    );
    for stage in &fit.stages {
        println!(
            "  stage {:<10} T0 {:>10.3} kHz  {:>6} evals  best {:.4} kHz",
            stage.name, stage.initial_temperature_khz, stage.evaluations, stage.best_objective_khz
        );
    }
    let truth_v = spinham::fit::params::to_vector(&truth);
    for (name, value, err) in fit.parameter_table() {
        let k = spinham::fit::params::PARAMS.iter().position(|p| p.name == name).unwrap();
        println!("  {name:<22} {value:>12.5} +- {err:<10.5} (true {:.5})", truth_v[k]);
    }
    if let Some(e) = &fit.covariance_error {
        println!("  covariance unavailable: {e}");
    }
    Ok(())
}
