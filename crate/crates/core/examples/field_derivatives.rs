//! First and second field derivatives of one transition, analytic versus
//! finite differences.

use spinham::model::{HamiltonianModel, MagneticField, State, Subsite};
use spinham::zefoz::{fd_curvature, fd_gradient, sensitivity};

fn main() -> spinham::error::Result<()> {
    let model = HamiltonianModel::site2_table1();
    let ham = model.spin_hamiltonian(State::Ground, Subsite::One);
    let b = MagneticField::new(120.0, -35.0, 210.0);
    let pair = (2, 3);
    let s = sensitivity(&ham, pair, b)?;
    let g = fd_gradient(&ham, pair, b, 1e-3);
    let c = fd_curvature(&ham, pair, b, 0.05);
    println!("f = {:.6} MHz at {b}", s.f_mhz);
    println!("S1 analytic {:?}", s.s1.as_slice());
    println!("S1 FD       {:?}", g.as_slice());
    println!("max |S2 analytic - FD| = {:.3e} Hz/G^2 (scale {:.3e})", (s.s2 - c).amax(), s.s2.amax());
    Ok(())
}
