//! AC power flow in rectangular coordinates, circuit-theoretic line outage
//! sensitivities and N-1 contingency screening, with a DC distribution
//! factor baseline.

pub mod case;
pub mod cli;
pub mod dcmodel;
pub mod screening;
pub mod sensitivity;
pub mod error;
pub mod linalg;
pub mod powerflow;
pub mod ybus;

pub use error::{Error, Result};
