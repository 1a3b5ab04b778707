//! Command-line tools and the clinician intervention service.
//!
//! HTTP routes:
//!
//! | method | path | body |
//! |---|---|---|
//! | GET | `/patients/{id}/record` | [`payload::RecordPayload`] |
//! | GET | `/patients/{id}/explanation` | [`payload::ExplanationPayload`] |
//! | POST | `/patients/{id}/intervene` | [`intervention::InterveneRequest`] → [`intervention::InterveneResponse`] |
//! | GET | `/sessions/{id}[?revision=n]` | [`session::InterventionSession`] or one [`session::Revision`] |
//! | GET | `/codes/{icd9}` | [`payload::CodeInfo`] |

pub mod api;
pub mod cli;
pub mod error;
pub mod intervention;
pub mod payload;
pub mod session;
pub mod state;

pub use error::ServiceError;
pub use state::{AppState, ModelHandle};
