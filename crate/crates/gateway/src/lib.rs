//! Operational front ends for the vaxcard protocol: a CLI covering every
//! role and an HTTP service for the scanner console.

pub mod cli;
pub mod config;
pub mod failure;
pub mod http;
pub mod keystore;
pub mod service;

pub use config::GatewayConfig;
pub use failure::Failure;
pub use service::Gateway;
