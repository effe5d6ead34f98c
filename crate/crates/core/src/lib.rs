//! Koopman–van Hove classical wavefunctions and hybrid classical–quantum
//! wave dynamics on periodic phase-space grids.

pub mod error;
pub mod exact;
pub mod gauge;
pub mod hamiltonian;
pub mod hybrid;
pub mod kvh;
pub mod meanfield;
pub mod phase_space;

pub use error::{KhsError, Result};
pub use exact::{DiagonalizationResult, ExactModelParams, HybridInitialState, Jet2};
pub use gauge::{GaugeKind, GaugePotential};
pub use hamiltonian::{HamiltonianTerm, Polynomial};
pub use hybrid::{CMatrix, DensityMatrix, HybridDensityField, HybridField, HybridHamiltonian, MatrixField};
pub use kvh::KvhPropagator;
pub use meanfield::MeanFieldState;
pub use phase_space::{make_grid, PhaseSpaceGrid, ScalarField, VectorField, C64};
