//! Disordered semiflexible chains built from products of random rotations.
//!
//! The crate simulates quenched chains `X_n = v_0 + sum_j (R w_1 r_1 ... w_j r_j) e^d`
//! where the `r_j` are iid rotations (thermal noise) and the `w_j` form a
//! fixed stationary-ergodic backbone (the disorder). On top of the sampler
//! it provides
//!
//! - the diffusion constant of the rescaled chain, both as a certified
//!   truncated series and in closed form for the special cases that admit
//!   one ([`diffusion`]);
//! - numeric certification of the contraction hypotheses behind the
//!   invariance principle, via operator norms and spectral radii of the
//!   moment superoperators ([`tensor`], [`diffusion`]);
//! - Fourier-side mixing diagnostics on SO(2) and on conjugation-invariant
//!   laws on SO(3): spectra, the mixing constant, total-variation decay
//!   bounds, and an independent 2D route to the diffusion constant
//!   ([`harmonics`]);
//! - Monte Carlo machinery with quenched-reproducible disorder streams and
//!   thread-count-independent reductions ([`disorder`], [`chain`]).

pub mod chain;
pub mod diffusion;
pub mod disorder;
pub mod error;
pub mod harmonics;
pub mod numeric;
pub mod rng;
pub mod rotgroup;
pub(crate) mod smallmat;
pub mod stats;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::{RngStream, StreamDomain};
pub use rotgroup::{
    cube_group_rotations, reorthonormalize, window_halfwidth_for_mean_cos, AngleDensity,
    AngleLaw, AxisLaw, LawKind, LawSpec, MomentMode, Moments, Rotation, RotationLaw, UnitVector,
};
pub use tensor::{
    op_norm_mat, spectral_radius, LinOp, SpectralRadius, SubspaceBasis, SubspaceBlock, SuperOp,
};
