//! Transient frequency control for power networks: swing dynamics, a
//! barrier-based reference law, convexified receding-horizon optimization,
//! and centralized or regional closed-loop controllers.

pub mod controller;
pub mod dynamics;
pub mod harness;
pub mod network;
pub mod optimizer;
pub mod qp;
pub mod reference;
pub mod signals;
