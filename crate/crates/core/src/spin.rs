//! Angular momentum operators for a single I = 5/2 nuclear spin.
//!
//! Basis order is m = +5/2, +3/2, ..., -5/2 (row/column 0 is m = +5/2).
//! Any consistent order gives identical spectra; this one is used everywhere
//! in the crate.

use std::sync::OnceLock;

use nalgebra::Matrix6;
use num_complex::Complex64;

pub type CMatrix6 = Matrix6<Complex64>;

/// Nuclear spin quantum number handled by this crate.
pub const SPIN: f64 = 2.5;

/// Dimension of the nuclear spin space, 2I + 1.
pub const DIM: usize = 6;

#[derive(Debug, Clone)]
pub struct SpinOperators {
    pub ix: CMatrix6,
    pub iy: CMatrix6,
    pub iz: CMatrix6,
    /// `products[a][b] = I_a * I_b`, cached for building `I.Q.I`.
    products: [[CMatrix6; 3]; 3],
}

impl SpinOperators {
    fn build() -> Self {
        let m = |k: usize| SPIN - k as f64;
        let mut iz = CMatrix6::zeros();
        let mut iplus = CMatrix6::zeros();
        for k in 0..DIM {
            iz[(k, k)] = Complex64::new(m(k), 0.0);
        }
        // <m+1| I+ |m> = sqrt(I(I+1) - m(m+1)); row k-1 holds m(k)+1.
        for k in 1..DIM {
            let mk = m(k);
            iplus[(k - 1, k)] = Complex64::new((SPIN * (SPIN + 1.0) - mk * (mk + 1.0)).sqrt(), 0.0);
        }
        let iminus = iplus.adjoint();
        let ix = (iplus + iminus).scale(0.5);
        let iy = (iplus - iminus) * Complex64::new(0.0, -0.5);

        let ops = [ix, iy, iz];
        let mut products = [[CMatrix6::zeros(); 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                products[a][b] = ops[a] * ops[b];
            }
        }
        SpinOperators { ix, iy, iz, products }
    }

    /// Shared instance; the operators are constants.
    pub fn get() -> &'static SpinOperators {
        static OPS: OnceLock<SpinOperators> = OnceLock::new();
        OPS.get_or_init(SpinOperators::build)
    }

    pub fn component(&self, axis: usize) -> &CMatrix6 {
        match axis {
            0 => &self.ix,
            1 => &self.iy,
            2 => &self.iz,
            _ => panic!("spin component index {axis} out of range"),
        }
    }

    pub fn product(&self, a: usize, b: usize) -> &CMatrix6 {
        &self.products[a][b]
    }
}
