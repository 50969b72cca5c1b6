pub mod blowup_lab;
pub mod epd_solver;
pub mod error;
pub mod exponents;
pub mod fit;
pub mod quadrature;
pub mod special_functions;
pub mod test_functions;

pub use error::{Error, Result};
