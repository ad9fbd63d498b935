//! Generalized Chung-Lu random matrices: ensemble sampling, self-consistent
//! equations for the limiting Stieltjes transform, dense spectral statistics
//! and the Monte Carlo harness that compares them.
//!
//! Numerical code is generic over [`scalar::Real`] (`f32`, `f64`); the
//! harness works in `f64`, for which the aliases below are provided.

pub mod ensemble;
pub mod fixed_point;
pub mod harness;
pub mod qve;
pub mod rng;
pub mod scalar;
pub mod sce;
pub mod spectral;
pub mod stats;

pub type Complex64 = num_complex::Complex<f64>;
pub type LowRankProfile64 = ensemble::LowRankProfile<f64>;
pub type EnsembleSpec64 = ensemble::EnsembleSpec<f64>;
pub type SampledMatrix64 = ensemble::SampledMatrix<f64>;
pub type SolverOptions64 = sce::SolverOptions<f64>;
pub type SceSolution64 = sce::SceSolution<f64>;
pub type KernelGrid64 = qve::KernelGrid<f64>;
pub type QveSolution64 = qve::QveSolution<f64>;
pub type Spectrum64 = spectral::Spectrum<f64>;
pub type LocalLawRecord64 = spectral::LocalLawRecord<f64>;
