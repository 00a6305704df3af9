//! Numerical verification of higher-order Hopf lemmas for one-dimensional
//! linear and nonlinear differential inequalities.

pub mod barriers;
pub mod comparison;
pub mod error;
pub mod expr;
pub mod gallery;
pub mod hopf;
pub mod jet;
pub mod odeint;
pub mod operator;
pub mod oracle;
pub mod problem;
pub mod quadrature;
pub mod reduction;
pub mod report;
pub mod selftest;
pub mod verdict;

pub use error::{Error, Result};
pub use jet::Jet;
pub use operator::LinearOperator;
pub use oracle::{FunctionOracle, Oracle};
