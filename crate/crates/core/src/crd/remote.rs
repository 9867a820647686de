//! HTTP client for an external vision-language describer.
//!
//! Wire format: `POST <endpoint>` with JSON `{"image_b64": ..., "prompt": ...}`,
//! answered by `{"text": ...}`.

use std::time::Duration;

use base64::Engine;
use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::data::{Provenance, SegMask};
use crate::error::{Error, Result};

use super::describe::describe_regions;

pub const DEFAULT_PROMPT: &str = "Describe the shape and the relative position of every colored \
region in this image. Refer to each region by its color.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RemoteDescriberConfig {
    pub endpoint: String,
    pub timeout_secs: f64,
    pub retries: u32,
    pub prompt: String,
    /// Upper bound on concurrent requests during a build.
    pub max_in_flight: usize,
}

impl Default for RemoteDescriberConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            timeout_secs: 30.0,
            retries: 2,
            prompt: DEFAULT_PROMPT.to_string(),
            max_in_flight: 4,
        }
    }
}

impl RemoteDescriberConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.endpoint.is_empty() {
            return Err(Error::InvalidArgument("describer endpoint is empty".into()));
        }
        if !(self.timeout_secs > 0.0) {
            return Err(Error::InvalidArgument("describer timeout must be positive".into()));
        }
        if self.max_in_flight == 0 {
            return Err(Error::InvalidArgument("max_in_flight must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct DescribeRequest<'a> {
    image_b64: &'a str,
    prompt: &'a str,
}

#[derive(Deserialize)]
struct DescribeReply {
    text: String,
}

pub fn encode_rgb_png(rgb: &Array3<u8>) -> Result<Vec<u8>> {
    let (h, w, _) = rgb.dim();
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let data: Vec<u8> = rgb.iter().copied().collect();
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::InvalidData(format!("png encode: {e}")))?;
        writer
            .write_image_data(&data)
            .map_err(|e| Error::InvalidData(format!("png encode: {e}")))?;
    }
    Ok(out)
}

fn attempt(agent: &ureq::Agent, config: &RemoteDescriberConfig, payload: &str) -> Result<String> {
    let request = DescribeRequest {
        image_b64: payload,
        prompt: &config.prompt,
    };
    let mut response = agent
        .post(&config.endpoint)
        .send_json(&request)
        .map_err(|e| Error::Remote(e.to_string()))?;
    let status = response.status();
    if !status.is_success() {
        return Err(Error::Remote(format!("status {status}")));
    }
    let reply: DescribeReply = response
        .body_mut()
        .read_json()
        .map_err(|e| Error::Remote(format!("malformed response: {e}")))?;
    if reply.text.trim().is_empty() {
        return Err(Error::Remote("malformed response: empty text".into()));
    }
    Ok(reply.text)
}

/// Sends a colorized mask to the describer, retrying up to `config.retries`
/// extra times. Returns the service text verbatim.
pub fn remote_describe(colored: &Array3<u8>, config: &RemoteDescriberConfig) -> Result<String> {
    config.validate()?;
    let payload = base64::engine::general_purpose::STANDARD.encode(encode_rgb_png(colored)?);
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
        .http_status_as_error(false)
        .build()
        .into();
    let mut last = None;
    for n in 0..=config.retries {
        match attempt(&agent, config, &payload) {
            Ok(text) => return Ok(text),
            Err(e) => {
                log::debug!("describer attempt {} failed: {e}", n + 1);
                last = Some(e);
            }
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Remote description with the deterministic describer as fallback.
pub fn describe_with_fallback(
    colored: &Array3<u8>,
    mask: &SegMask,
    config: &RemoteDescriberConfig,
) -> (String, Provenance) {
    match remote_describe(colored, config) {
        Ok(text) => (text, Provenance::Remote),
        Err(e) => {
            log::warn!("remote describer failed, using deterministic description: {e}");
            (describe_regions(mask).0, Provenance::Fallback)
        }
    }
}
