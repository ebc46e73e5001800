//! Two-hand reconstruction pipeline on a parametric hand rig.
//!
//! The crate covers the full loop needed to study collision-aware two-hand
//! recovery without any learned backbone:
//!
//! * [`rig`]: a deterministic articulated hand rig (16 joints, 778 vertices,
//!   linear blend skinning, shape basis, joint regressor) plus a JSON loader
//!   for external rigs.
//! * [`hand`]: per-hand parameters (16x6 rotation entries, 10 shape
//!   coefficients, weak-perspective camera), 6D rotation decoding, forward
//!   kinematics, skinning, joint regression, projection, bone lengths and
//!   the analytic joint Jacobian.
//! * [`maps`]: the dense map stack (parameter, center, part, cross-hand
//!   channels) and its rendering/softmax operations.
//! * [`aggregate`]: collision-aware center disentanglement, interaction
//!   intensity, and attention-based feature aggregation into per-hand
//!   parameter vectors.
//! * [`loss`]: center focal loss, part cross entropy, parameter/joint/bone
//!   losses, similarity alignment, and the weighted total.
//! * [`synth`]: seeded synthetic scenes whose oracle maps replace a CNN.
//! * [`fit`]: finite-difference descent that recovers hand parameters from
//!   a scene's ground truth targets.
//! * [`tensor`], [`export`]: the binary tensor container and OBJ/PGM export.

// Validation guards are written `!(x > eps)` on purpose: the negation also
// rejects NaN, which a flipped comparison would silently accept.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregate;
pub mod error;
pub mod export;
pub mod fit;
pub mod hand;
pub mod loss;
pub mod maps;
pub mod rig;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use hand::{Camera, HandParams, Handedness};
pub use rig::HandRig;
