//! Exact p-adic cell measures, symbolic integration of constructible
//! functions with values in `A_q`, and certified rational Poincaré series of
//! congruence counts. Every symbolic path has a brute-force counterpart.

pub mod aqring;
pub mod error;
pub mod integrate;
pub mod kcells;
pub mod mpoly;
pub mod poincare;
pub mod padic;
pub mod parse;
pub mod presburger;
pub mod validate;

pub use aqring::AqElem;
pub use error::{Error, Result};
pub use padic::{ExtendedInteger, PAdicPoint, Prime, Rational};
