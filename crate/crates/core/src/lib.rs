//! Mean-field stochastic functional differential equations with memory and jumps:
//! particle simulation, Picard iteration, backward adjoint equations and the
//! stochastic maximum principle for two control problems.

pub mod adjoint;
pub mod error;
pub mod grid;
pub mod jumps;
pub mod lq;
pub mod mean_variance;
pub mod measure;
pub mod noise;
pub mod picard;
pub mod num;
pub mod quadrature;
pub mod regression;
pub mod segments;
pub mod sfde;

pub use error::{Error, Result};
pub use measure::Law;
pub use num::Real;

pub type TimeMesh = grid::TimeMesh<f64>;
pub type SimGrid = grid::SimGrid<f64>;
pub type GridPath = segments::GridPath<f64>;
pub type Segment = segments::Segment<f64>;
pub type EmpiricalMeasure = measure::EmpiricalMeasure<f64>;
pub type MeasureSegment = measure::MeasureSegment<f64>;
pub type QuadratureRule = quadrature::QuadratureRule<f64>;
pub type Estimate = num::Estimate<f64>;

pub type ParticleEnsemble = sfde::ParticleEnsemble<f64>;
pub type Simulator = sfde::Simulator<f64>;
pub type JumpModel = jumps::JumpModel<f64>;
pub type SegmentFunctional = adjoint::SegmentFunctional<f64>;
pub type AdjointTriple = adjoint::AdjointTriple<f64>;
pub type MeanVarSpec = mean_variance::MeanVarSpec<f64>;
pub type MeanVarSolution = mean_variance::MeanVarSolution<f64>;
pub type LQSpec = lq::LQSpec<f64>;
pub type LQSolution = lq::LQSolution<f64>;
pub type FBSDEIterationReport = lq::FBSDEIterationReport<f64>;

pub type SegmentF32 = segments::Segment<f32>;
pub type EmpiricalMeasureF32 = measure::EmpiricalMeasure<f32>;
