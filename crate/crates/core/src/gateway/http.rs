//! Chat-completion wire client: JSON `{model, messages, temperature,
//! max_tokens}` in, `choices[0].message.content` out, with bounded retries
//! and exponential backoff.

use std::thread;
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{GatewayError, LlmRequest};

#[derive(Clone, Debug)]
pub struct HttpBackend {
    pub endpoint: String,
    pub model: String,
    pub auth_token: Option<String>,
    pub retries: u32,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: String,
}

impl HttpBackend {
    pub fn new(
        endpoint: String,
        model: String,
        auth_token: Option<String>,
        timeout: Duration,
        retries: u32,
    ) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        Ok(HttpBackend {
            endpoint,
            model,
            auth_token,
            retries,
            client,
        })
    }

    pub fn complete(&self, req: &LlmRequest) -> Result<String, GatewayError> {
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        let mut last_err = GatewayError::Transport("no attempt made".into());
        for attempt in 0..=self.retries {
            if attempt > 0 {
                thread::sleep(Duration::from_millis(250 * (1 << (attempt - 1))));
            }
            let mut request = self.client.post(&self.endpoint).json(&body);
            if let Some(token) = &self.auth_token {
                request = request.bearer_auth(token);
            }
            match request.send() {
                Ok(response) => {
                    let status = response.status();
                    if !status.is_success() {
                        let body = response.text().unwrap_or_default();
                        last_err = GatewayError::HttpStatus {
                            status: status.as_u16(),
                            body: body.chars().take(400).collect(),
                        };
                        // Client errors won't improve on retry.
                        if status.is_client_error() {
                            return Err(last_err);
                        }
                        continue;
                    }
                    let parsed: ChatResponse = match response.json() {
                        Ok(p) => p,
                        Err(e) => {
                            last_err = GatewayError::MalformedResponse(e.to_string());
                            continue;
                        }
                    };
                    return match parsed.choices.into_iter().next() {
                        Some(choice) => Ok(choice.message.content),
                        None => Err(GatewayError::MalformedResponse("empty choices".into())),
                    };
                }
                Err(e) => {
                    last_err = GatewayError::Transport(e.to_string());
                }
            }
        }
        Err(last_err)
    }
}
