//! Trajectory tailness analytics: intrinsic and interactive metrics, the
//! Tail Index perceiver, prototype memory adaptation and worst-case
//! forecast evaluation.

pub mod batch;
pub mod error;
pub mod eval;
pub mod geom;
pub mod interaction;
pub mod intrinsic;
pub mod memory;
pub mod perceiver;
pub mod pipeline;
pub mod scene_csv;
pub mod synth;
pub mod trajectory;

pub use error::{Error, Result};
pub use interaction::{InteractiveMetrics, RssParams};
pub use intrinsic::IntrinsicMetrics;
pub use trajectory::{AgentKind, AgentState, Scene, Trajectory};
