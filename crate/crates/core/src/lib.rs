//! Finite-volume simulation of the degenerate chemotaxis-consumption system
//!
//! ```text
//! u_t = Δ(u^m φ(v)),    v_t = Δv − u v,    zero-flux boundaries,
//! ```
//!
//! through its regularization `u_t = Δ((u + ε)^m φ(v))`,
//! `v_t = Δv − u v / (1 + ε u)`, together with monitors for the discrete
//! analogues of its a priori estimates and checks of the weak formulation.

pub mod config;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod field;
pub mod grid;
pub mod monitors;
pub mod motility;
pub mod snapshot;
pub mod stepper;
pub mod verification;

pub use error::{FieldError, HypothesisError, StepError, StudyError};
pub use field::{gradient_energy, inner_product, laplacian_noflux, lp_norm, FaceGradient, ScalarField};
pub use grid::Grid;
pub use motility::{builtin_motility, compute_bounds, Motility, MotilityBounds};
pub use stepper::{ModelParams, State, StepControl};
