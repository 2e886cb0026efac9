//! Simulation toolkit for the double-shunted flux qubit.
//!
//! Energies are E/h in GHz and times are in ns throughout.

pub mod circuit;
pub mod coherence;
pub mod error;
pub mod evolve;
pub mod gates;
pub mod gradiometric;
pub mod linalg;
pub mod readout;
pub mod spectrum;
pub mod units;

pub use circuit::{
    build_hamiltonian, build_operator, to_phase_grid, Basis, CircuitSpec, CoupledSpec,
    CouplingConvention, HermitianOperator, ModePair, OperatorKind, PhaseField, Sector, Variant,
};
pub use error::{Error, Result};
pub use faer::Mat;
pub use num_complex::Complex64;
pub use spectrum::{diagonalize, qubit_params, EigenSolution, QubitParams};
pub use coherence::{coherence, ChannelKind, CoherenceReport, Environment, NoiseChannel};
pub use evolve::{AlphaProfile, DrivePulse, PropagationMethod, PropagationSettings, Trajectory};
pub use gates::{FidelityMode, FsimParams, GateReport};
pub use gradiometric::LoopGeometry;
pub use readout::{DispersiveShift, ResonatorSpec};
