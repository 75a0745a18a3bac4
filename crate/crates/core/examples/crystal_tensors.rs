//! M and Q tensors of the bundled model in the lab and crystal frames.

use spinham::cli::{tensor_table, Basis};
use spinham::model::{HamiltonianModel, Subsite};

fn main() -> spinham::error::Result<()> {
    let model = HamiltonianModel::site2_table1();
    for basis in [Basis::Lab, Basis::D1D2b] {
        for t in tensor_table(&model, basis)?.iter().filter(|t| t.subsite == Subsite::One) {
            println!("{} {} [{}] in {} basis", t.state.name(), t.kind, t.unit, t.basis);
            for r in 0..3 {
                println!("  {:>9.4} {:>9.4} {:>9.4}", t.matrix[(r, 0)], t.matrix[(r, 1)], t.matrix[(r, 2)]);
            }
        }
    }
    Ok(())
}
