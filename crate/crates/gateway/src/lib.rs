//! Operator surface for txforge: the `txforge` command line and an HTTP
//! server with a server-sent event feed. Both are thin layers over
//! [`session`], and print the JSON built in [`views`].

pub mod cli;
pub mod error;
pub mod http;
pub mod session;
pub mod views;

pub use error::GatewayError;
