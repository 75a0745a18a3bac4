//! Predicted Raman heterodyne peaks of both subsites at one field.
//!
//! cargo run --example predict_spectrum -- [bx by bz]

use spinham::model::{HamiltonianModel, MagneticField};
use spinham::spectra::{predict_peaks, Band};

fn main() -> spinham::error::Result<()> {
    let v: Vec<f64> = std::env::args().skip(1).filter_map(|s| s.parse().ok()).collect();
    let b = match v[..] {
        [x, y, z] => MagneticField::new(x, y, z),
        _ => MagneticField::new(-40.0, -13.0, 68.0),
    };
    let peaks = predict_peaks(&HamiltonianModel::site2_table1(), b)?;
    println!("B = {b}");
    for band in Band::ALL {
        let list = peaks.band(band);
        println!("{} ({} peaks)", band.label(), list.len());
        for p in list {
            match p.origin {
                Some(o) => println!("  {:.5} MHz  subsite {} levels {}-{}", p.freq_mhz, o.subsite.number(), o.lower, o.upper),
                None => println!("  {:.5} MHz", p.freq_mhz),
            }
        }
    }
    Ok(())
}
