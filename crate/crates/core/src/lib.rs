//! Low-resource solar PV nowcasting toolkit.

pub mod blob;
pub mod carbon;
pub mod data;
pub mod error;
pub mod eval;
pub mod models;
pub mod solar;
pub mod tensor;
pub mod train;
pub mod tune;

pub use error::{Error, Result};
