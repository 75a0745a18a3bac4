//! Writes a noisy 80 G spiral dataset as CSV plus JSON metadata.
//!
//! cargo run --example spiral_dataset -- [out.csv]

use std::path::PathBuf;

use spinham::dataset::{read_dataset, write_dataset};
use spinham::model::HamiltonianModel;
use spinham::spectra::{synthesize_dataset, SpiralScan};

fn main() -> spinham::error::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("spiral_80g.csv"));
    let data = synthesize_dataset(&HamiltonianModel::site2_table1(), &SpiralScan::default(), 9.0, 1)?;
    write_dataset(&data, &path)?;
    let back = read_dataset(&path)?;
    println!("{} points, {} peaks written to {}", back.points.len(), back.total_peaks(), path.display());
    let first = &back.points[0].peaks;
    println!("first field {} has band counts {:?}", first.field, first.counts());
    Ok(())
}
