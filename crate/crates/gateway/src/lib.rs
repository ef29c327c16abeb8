//! HTTP and websocket front end for the exam service. The [`Gateway`] holds
//! no business rules: every request maps onto one exam-service operation.

pub mod channel;
pub mod error;
pub mod gateway;
pub mod routes;
pub mod server;

pub use channel::{ChannelId, ClientEvent, CloseReason, ServerEvent};
pub use error::ApiError;
pub use gateway::{Gateway, GatewayConfig, HttpRequest, HttpResponse, TokenSource, WebSession};
pub use server::{router, serve, Engine};
