//! Scheduled-events polling client.

use std::time::Duration;

use spoton_core::eviction::EventsDocument;
use thiserror::Error;

/// Every poll failure is transient from the coordinator's point of view: it
/// is logged and the next tick tries again.
#[derive(Debug, Error)]
pub enum PollError {
    #[error("metadata request failed: {0}")]
    Transport(String),
    #[error("metadata endpoint answered HTTP {0}")]
    Status(u16),
    #[error("malformed events document: {0}")]
    Body(String),
}

#[derive(Debug, Clone)]
pub struct EventsClient {
    agent: ureq::Agent,
    url: String,
    api_version: String,
    metadata_header: bool,
}

impl EventsClient {
    pub fn new(url: impl Into<String>, api_version: impl Into<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            // the metadata service is link-local; never route it through a proxy
            .proxy(None)
            .build()
            .into();
        EventsClient { agent, url: url.into(), api_version: api_version.into(), metadata_header: true }
    }

    /// Leaves out the `Metadata: true` header (conformance testing only).
    pub fn without_metadata_header(mut self) -> Self {
        self.metadata_header = false;
        self
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn poll(&self) -> Result<EventsDocument, PollError> {
        let mut req = self.agent.get(&self.url).query("api-version", &self.api_version);
        if self.metadata_header {
            req = req.header("Metadata", "true");
        }
        let mut resp = req.call().map_err(|e| PollError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(PollError::Status(status));
        }
        let body = resp.body_mut().read_to_vec().map_err(|e| PollError::Transport(e.to_string()))?;
        EventsDocument::from_json(&body).map_err(|e| PollError::Body(e.to_string()))
    }
}
