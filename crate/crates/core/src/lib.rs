pub mod certificate;
pub mod decay;
pub mod divisors;
pub mod error;
pub mod evolve;
pub mod family;
pub mod fft;
pub mod flows;
pub mod grid;
pub mod jet;
pub mod lattice;
pub mod ledger;
pub mod linear;
pub mod linalg;
pub mod model;
pub mod mult;
pub mod steps;
pub mod sublinear;
pub mod symbol;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
