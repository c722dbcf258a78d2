//! Markov chains on permuted superpositions of electrical networks.
//!
//! The library is organised around a single construction: two electrical
//! networks living on disjoint halves of a common state space, glued by a
//! uniformly random matching of the halves. [`network`] builds and validates
//! the environment and its transition kernels, [`kernel`] evolves exact
//! distributions and measures total-variation mixing, [`walk`] simulates
//! trajectories with half-integer steps and estimates trace weights,
//! [`quasitree`] runs the chain on the lazily generated infinite limit
//! environment and extracts its regeneration structure, [`coupling`] grows
//! both environments jointly and measures when the identification fails,
//! [`renewal`] provides generic Markov renewal utilities, and
//! [`multilinear`] implements concentration machinery for low-degree
//! multilinear functions of a uniform permutation.

pub mod coupling;
pub mod kernel;
pub mod multilinear;
pub mod network;
pub mod parallel;
pub mod quasitree;
pub mod renewal;
pub mod rng;
pub mod stats;
pub mod walk;

pub use kernel::{Distribution, MixingProfile, SparseKernel};
pub use network::{ElectricalNetwork, TwoLiftEnvironment, ValidationReport};
pub use walk::{LoopErasedTrace, PathClassParams, Trajectory};
