//! Autonomous optomechanical heat engine: Fock-space oracle, linearized
//! phase-space model and work/efficiency accounting.

pub mod hilbert;
pub mod baths;
pub mod lindblad;
pub mod phasespace;
pub mod thermo;
pub mod scenario;
