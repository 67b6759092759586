//! Total variation distance between mixtures of product distributions.
//!
//! * [`model`]: mixtures over `[q]^n`, validation and probability evaluation.
//! * [`coupling`]: the recursive coupling as an explicit state graph, with
//!   failure probabilities, conditional sampling and pointwise failure mass.
//! * [`estimator`]: the `(1 ± ε)` Monte Carlo estimate built on the coupling.
//! * [`subcube`]: exact distance for mixtures of Boolean subcubes.
//! * [`oracle`]: exhaustive references, random instances and the 3-CNF
//!   reduction used as a test generator.

pub mod coupling;
pub mod error;
pub mod estimator;
pub mod model;
pub mod oracle;
pub mod subcube;

pub use coupling::{build_dag, simulate_coupling, CouplingDag, Transition, TransitionKind};
pub use error::{Error, Result};
pub use estimator::{approximate_tv, f_value, EstimatorConfig, TvEstimate};
pub use model::{Configuration, Instance, InstanceDocument, Mixture, RawMixture};
pub use num_bigint::BigUint;
pub use oracle::{brute_force_tv, random_instance, CnfFormula, Family};
pub use subcube::{exact_subcube_tv, ChiTable};
