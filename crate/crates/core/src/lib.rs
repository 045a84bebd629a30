mod cholesky;
pub mod detector;
pub mod dictionary;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod homotopy;
pub mod linalg;
pub mod oracles;
pub mod run;
