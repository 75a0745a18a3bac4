//! Parameter sets that give exactly the same spectra as the bundled model.

use spinham::fit::canonical_ambiguity_report;
use spinham::model::HamiltonianModel;

fn main() {
    for eq in canonical_ambiguity_report(&HamiltonianModel::site2_table1()) {
        let g = eq.model.ground.g();
        let (e, d) = eq.model.ground.e_d();
        println!(
            "{:<34} max dev {:.1e} MHz  verified {}  ground g = [{:.4}, {:.4}, {:.4}]  E = {:.5}  D = {:.5}",
            eq.label, eq.max_deviation_mhz, eq.verified, g[0], g[1], g[2], e, d
        );
    }
}
