//! Single-track train dispatching laboratory.
//!
//! A deterministic event-driven railway simulator ([`simcore`]) over a static
//! line model ([`topology`]), state encoders for local and whole-line views
//! ([`encoding`]), Q-function approximators ([`qmodel`]), experience memories
//! ([`replay`]), instance generation ([`traingen`]) and the training and
//! evaluation loops that bind them together ([`harness`]).

pub mod encoding;
pub mod error;
pub mod harness;
pub mod instance;
pub mod qmodel;
pub mod replay;
pub mod simcore;
pub mod topology;
pub mod traingen;

pub use error::{Error, Result};
