//! Event-camera obstacle avoidance in procedurally generated forests.
//!
//! The crate covers the whole loop at desk scale:
//!
//! * [`world`]: seeded tree fields and planar clearance/collision queries.
//! * [`render`]: raycast grayscale and depth frames from the vehicle's pose.
//! * [`events`]: threshold-crossing and difference-of-log event synthesis,
//!   time-window batching, binary event masks and mask augmentation.
//! * [`control`]: first-order vehicle dynamics, the privileged
//!   receding-horizon expert and lateral-velocity command decomposition.
//! * [`learner`]: a small encoder / recurrent bottleneck / decoder depth
//!   predictor with a velocity head, trained with explicit backpropagation.
//! * [`harness`]: closed-loop rollouts, dataset collection, collision
//!   metrics and the command-line front end.

pub mod control;
pub mod error;
pub mod events;
pub mod formats;
pub mod geom;
pub mod harness;
pub mod learner;
pub mod render;
pub mod world;

pub use error::{Error, Result};
