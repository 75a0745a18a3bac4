//! Stretched-exponential fit of a synthetic echo decay with 3% noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use spinham::echo::{fit_decay, DecayTrace, EchoParams};

fn main() -> spinham::error::Result<()> {
    let truth = EchoParams {
        i0: 1000.0,
        t2_ms: 2.6,
        n: 1.73,
        offset: 27.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let noise = Normal::new(0.0, 0.03).unwrap();
    let t: Vec<f64> = (0..20).map(|k| 0.2 * 50f64.powf(k as f64 / 19.0)).collect();
    let y: Vec<f64> = t.iter().map(|&x| truth.eval(x) * (1.0 + noise.sample(&mut rng))).collect();
    let fit = fit_decay(&DecayTrace::from_columns(&t, &y)?, None)?;
    let (p, e) = (fit.params, fit.errors);
    println!("T2     = {:.4} +/- {:.4} ms (true 2.6)", p.t2_ms, e.t2_ms);
    println!("n      = {:.4} +/- {:.4} (true 1.73)", p.n, e.n);
    println!("I0     = {:.2} +/- {:.2}", p.i0, e.i0);
    println!("offset = {:.2} +/- {:.2}", p.offset, e.offset);
    println!("residual norm {:.3} (start {:.3})", fit.residual_norm, fit.initial_residual_norm);
    Ok(())
}
