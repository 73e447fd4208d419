//! HTTP adapters for external detector and VQA services.

use std::io::Cursor;
use std::time::Duration;

use base64::Engine as _;
use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::engine::{Detection, EngineClient};
use crate::error::{Error, Result};

pub const ENV_DETECTOR_URL: &str = "C2VL_DETECTOR_URL";
pub const ENV_VQA_URL: &str = "C2VL_VQA_URL";
pub const ENV_API_TOKEN: &str = "C2VL_API_TOKEN";
pub const ENV_TIMEOUT_SECS: &str = "C2VL_TIMEOUT_SECS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectRequest {
    pub image_png_b64: String,
    pub text_prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectResponse {
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaRequest {
    pub image_png_b64: String,
    pub question: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaResponse {
    pub answer: String,
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)?;
    Ok(buf.into_inner())
}

fn b64_png(img: &RgbImage) -> Result<String> {
    Ok(base64::engine::general_purpose::STANDARD.encode(encode_png(img)?))
}

pub fn detect_request(frame: &RgbImage, text_prompt: &str) -> Result<DetectRequest> {
    Ok(DetectRequest {
        image_png_b64: b64_png(frame)?,
        text_prompt: text_prompt.to_string(),
    })
}

pub fn vqa_request(image: &RgbImage, question: &str) -> Result<VqaRequest> {
    Ok(VqaRequest {
        image_png_b64: b64_png(image)?,
        question: question.to_string(),
    })
}

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub detector_url: String,
    pub vqa_url: String,
    pub token: Option<String>,
    pub timeout: Duration,
}

impl RemoteConfig {
    pub fn from_env() -> Result<Self> {
        let var = |k: &str| std::env::var(k).map_err(|_| Error::config(k, "environment variable not set"));
        let timeout = match std::env::var(ENV_TIMEOUT_SECS) {
            Ok(v) => v
                .parse::<f64>()
                .map_err(|_| Error::config(ENV_TIMEOUT_SECS, "expected seconds"))?,
            Err(_) => 30.0,
        };
        Ok(RemoteConfig {
            detector_url: var(ENV_DETECTOR_URL)?,
            vqa_url: var(ENV_VQA_URL)?,
            token: std::env::var(ENV_API_TOKEN).ok(),
            timeout: Duration::from_secs_f64(timeout),
        })
    }
}

/// Detector/VQA client speaking JSON over HTTP.
pub struct RemoteEngine {
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteEngine {
    pub fn new(config: RemoteConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        RemoteEngine { config, agent }
    }

    fn post<Req: Serialize, Resp: for<'de> Deserialize<'de>>(&self, url: &str, body: &Req) -> Result<Resp> {
        let mut req = self.agent.post(url);
        if let Some(token) = &self.config.token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req.send_json(body).map_err(|e| Error::Transport(format!("{url}: {e}")))?;
        let status = resp.status().as_u16();
        if status >= 500 || status == 429 {
            return Err(Error::Transport(format!("{url}: HTTP {status}")));
        }
        if status >= 400 {
            return Err(Error::Data(format!("{url}: HTTP {status}")));
        }
        resp.body_mut()
            .read_json()
            .map_err(|e| Error::Data(format!("{url}: malformed response: {e}")))
    }
}

impl EngineClient for RemoteEngine {
    fn detector_name(&self) -> &str {
        &self.config.detector_url
    }

    fn vqa_name(&self) -> &str {
        &self.config.vqa_url
    }

    fn detect(&self, frame: &RgbImage, text_prompt: &str) -> Result<Vec<Detection>> {
        let resp: DetectResponse = self.post(&self.config.detector_url, &detect_request(frame, text_prompt)?)?;
        Ok(resp.detections)
    }

    fn answer(&self, image: &RgbImage, question: &str) -> Result<String> {
        let resp: VqaResponse = self.post(&self.config.vqa_url, &vqa_request(image, question)?)?;
        Ok(resp.answer)
    }
}
