pub mod analysis;
pub mod conditioning;
pub mod density;
pub mod diffusion;
pub mod error;
pub mod inversion;
pub mod optim;
pub mod par;
pub mod params;
pub mod synthcorpus;
pub mod tensor;

pub use error::{Error, ErrorCategory, Result};
