//! Stateful authoring sessions and their HTTP interface.

pub mod http;
pub mod session;
pub mod store;

pub use http::router;
pub use session::{Session, SessionConfig, SessionError};
pub use store::{GatewayFactory, NewSession, SessionStore};
