//! Vision and language knowledge-prompt generation and caching.

mod cache;
mod engine;
mod pipeline;
mod remote;
mod render;
mod types;

pub use cache::{CacheLine, CorruptLine, PromptCache, PROMPT_SCHEMA};
pub use engine::{Detection, EngineClient, StubEngine};
pub use pipeline::{
    generate_language_prompt, generate_prompts, generate_record, generate_vision_prompt, with_retry, FramePolicy,
    PipelineOptions, PipelineStats, RetryPolicy,
};
pub use remote::{
    detect_request, encode_png, vqa_request, DetectRequest, DetectResponse, RemoteConfig, RemoteEngine, VqaRequest,
    VqaResponse, ENV_API_TOKEN, ENV_DETECTOR_URL, ENV_TIMEOUT_SECS, ENV_VQA_URL,
};
pub use render::{hsv_to_rgb, FrameDir, SkeletonRenderer, VideoSource, BACKGROUND};
pub use types::{
    EngineMeta, LanguagePrompt, NormBox, PromptRecord, VisionPrompt, DETECTOR_TEXT_PROMPT, VQA_QUESTION,
};
