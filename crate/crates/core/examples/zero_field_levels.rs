//! Zero-field hyperfine levels of both electronic states.

use spinham::eigen::eigenvalues;
use spinham::model::{HamiltonianModel, MagneticField, State, Subsite};

fn main() {
    let model = HamiltonianModel::site2_table1();
    for state in State::ALL {
        let e = eigenvalues(&model.hamiltonian(state, Subsite::One, MagneticField::ZERO));
        println!("{} levels (MHz): {:?}", state.name(), e.map(|x| (x * 1e4).round() / 1e4));
        // At zero field the levels form three degenerate ±m doublets.
        let doublets = [0.5 * (e[0] + e[1]), 0.5 * (e[2] + e[3]), 0.5 * (e[4] + e[5])];
        println!(
            "  doublet splittings: {:.4} MHz and {:.4} MHz",
            doublets[1] - doublets[0],
            doublets[2] - doublets[1]
        );
    }
}
