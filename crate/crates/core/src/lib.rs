//! Joint clustering and registration of functional data.
//!
//! Curves are modelled as level/amplitude transformations of cluster shape
//! functions evaluated on curve-specific monotone time warps. Shapes are
//! B-spline expansions whose coefficients follow a Dirichlet process mixture;
//! warps are B-spline expansions with ordered coefficients. Posterior
//! simulation is Metropolis-within-Gibbs.

pub mod checks;
pub mod datagen;
pub mod dist;
pub mod model;
pub mod posterior;
pub mod rng;
pub mod sampler;
pub mod splines;

pub use datagen::{simulate, true_shape, SimSpec, Truth};
pub use model::{
    ChainState, Curve, CurveParams, Dataset, Hyperparams, Mode, Model, ModelConfig, ModelError,
    Priors, ShapeAtom,
};
pub use posterior::{BandKind, FunctionalSummary, PartitionEstimate};
pub use sampler::{
    run_chain, CopyStrategy, Draw, InitStrategy, McmcConfig, Sampler, SamplerError, Trace,
};
pub use splines::{KnotPlacement, KnotVector, OutOfDomain, SplineError, WarpBasis};
