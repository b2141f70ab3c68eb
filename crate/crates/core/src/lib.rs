//! Encrypted-traffic behavior fingerprinting from side-channel metadata:
//! flow features, app similarity filtering, burst-level URI classification and
//! URI-map matching, plus a seeded synthetic traffic generator.

pub mod burst;
pub mod error;
pub mod features;
pub mod learn;
pub mod pipeline;
pub mod stage1;
pub mod synth;
pub mod traffic;
pub mod urimap;

pub use error::{Error, Result};
