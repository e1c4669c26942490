pub mod conic;
pub mod linalg;
pub mod poly;
pub mod gram;
pub mod colgen;
pub mod basispursuit;
pub mod polya;
pub mod apps;
pub mod io;
pub mod instances;

pub use apps::GraphInstance;
pub use conic::{Cone, ConeProgram, ConicSolution, SolveStatus};
pub use gram::{ConeTag, GramCertificate};
pub use linalg::{Mat, SymMatrix};
pub use poly::{Monomial, Polynomial};
pub use polya::PopInstance;
