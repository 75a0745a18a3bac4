//! Grid search for ZEFOZ fields of the ground state of the bundled model.
//!
//! cargo run --example zefoz_search -- [half_width_g] [step_g]

use std::time::Instant;

use spinham::model::HamiltonianModel;
use spinham::zefoz::{grid_search, GridSpec};

fn main() -> spinham::error::Result<()> {
    let mut args = std::env::args().skip(1).map(|s| s.parse::<f64>().ok());
    let half = args.next().flatten().unwrap_or(600.0);
    let step = args.next().flatten().unwrap_or(25.0);
    let model = HamiltonianModel::site2_table1();
    let spec = GridSpec::cube(half, step);
    let start = Instant::now();
    let cands = grid_search(&model, &spec)?;
    println!("{} candidates in {:.1} s", cands.len(), start.elapsed().as_secs_f64());
    println!("{:>9} {:>9} {:>9} sub pair  {:>9} {:>10} {:>10} {:>8}", "bx", "by", "bz", "f MHz", "|S1| Hz/G", "S2 Hz/G2", "T2 s");
    for c in cands.iter().take(15) {
        println!(
            "{:>9.2} {:>9.2} {:>9.2} {:>3} {}-{}   {:>9.5} {:>10.4} {:>10.3} {:>8.3}",
            c.field.bx, c.field.by, c.field.bz, c.subsite.number(), c.level_i, c.level_j,
            c.f_mhz, c.s1_norm, c.s2_scalar, c.projected_t2_s
        );
    }
    Ok(())
}
