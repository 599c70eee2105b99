pub mod error;
pub mod grid;
pub mod exact;
pub mod ground_state;
pub mod noise;
pub mod evolution;
pub mod diagnostics;
pub mod scenario;

pub use error::{LabError, Result};
pub use grid::{ComplexField, GridSpec};
pub use rustfft::num_complex::Complex64;
