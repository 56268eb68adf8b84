pub mod adjoint;
pub mod cycle;
pub mod floquet;
pub mod model;
pub mod oracle;
pub mod quadrature;
pub mod spectral;

pub use cycle::{seed_from_ansatz, solve_cycle, PeriodicOrbit, Seed, SolveOptions};
pub use floquet::{det_scan, eigenfunction, floquet_spectrum, refine_exponent, FloquetMode};
pub use model::ModelSpec;
pub use spectral::{FourierSeries, SpectralGrid, SpectralOperators};
