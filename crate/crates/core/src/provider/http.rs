use std::io::BufRead;
use std::thread;
use std::time::Duration;

use super::{Fetched, SubstituteDistribution, SubstituteProvider, SubstituteRecord};
use crate::error::{Error, Result};
use crate::jsonl;
use crate::patterns::MaskedPrompt;

/// Client for a substitute sidecar.
///
/// Sends `POST {endpoint}/substitutes?top_k=K` with one prompt record per
/// line and expects substitute records back, one per line. Transport
/// failures, 429 and 5xx responses are retried; anything else fails the
/// batch at once.
pub struct HttpProvider {
    endpoint: String,
    top_k: usize,
    attempts: u32,
    backoff: Duration,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(
        endpoint: impl Into<String>,
        top_k: usize,
        attempts: u32,
        timeout: Duration,
    ) -> Self {
        Self {
            endpoint: endpoint.into().trim_end_matches('/').to_owned(),
            top_k,
            attempts: attempts.max(1),
            backoff: Duration::from_millis(200),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }

    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    fn post(&self, body: &str) -> Result<String> {
        let url = format!("{}/substitutes?top_k={}", self.endpoint, self.top_k);
        let mut last = String::new();
        for attempt in 1..=self.attempts {
            let result = self
                .agent
                .post(&url)
                .set("Content-Type", "application/x-ndjson")
                .send_string(body);
            match result {
                Ok(resp) => {
                    return resp
                        .into_string()
                        .map_err(|e| Error::Provider(e.to_string()));
                }
                Err(ureq::Error::Status(code, resp)) if code != 429 && code < 500 => {
                    let detail = resp.into_string().unwrap_or_default();
                    return Err(Error::Provider(format!("{url}: HTTP {code}: {detail}")));
                }
                Err(e) => {
                    log::warn!("{url}: attempt {attempt}/{}: {e}", self.attempts);
                    last = e.to_string();
                }
            }
            if attempt < self.attempts {
                thread::sleep(self.backoff * attempt);
            }
        }
        Err(Error::Provider(format!(
            "{url}: gave up after {} attempts: {last}",
            self.attempts
        )))
    }
}

impl SubstituteProvider for HttpProvider {
    fn fetch(&self, prompts: &[MaskedPrompt]) -> Result<Fetched> {
        if prompts.is_empty() {
            return Ok(Fetched::default());
        }
        let mut body = Vec::new();
        jsonl::write_records(&mut body, prompts)?;
        let body = String::from_utf8(body).expect("serde_json emits UTF-8");
        let response = self.post(&body)?;
        let mut found = std::collections::BTreeMap::new();
        for (i, line) in response.as_bytes().lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: SubstituteRecord = serde_json::from_str(&line)
                .map_err(|e| Error::Provider(format!("response line {}: {e}", i + 1)))?;
            match SubstituteDistribution::new(record.prompt_id, record.entries) {
                Ok(d) => {
                    found.insert(d.prompt_id.clone(), d);
                }
                Err(e) => log::warn!("response line {}: {e}; record rejected", i + 1),
            }
        }
        let wanted: std::collections::BTreeSet<&str> =
            prompts.iter().map(|p| p.prompt_id.as_str()).collect();
        found.retain(|id, _| wanted.contains(id.as_str()));
        let missing = wanted
            .into_iter()
            .filter(|id| !found.contains_key(*id))
            .map(str::to_owned)
            .collect();
        Ok(Fetched { found, missing })
    }
}
