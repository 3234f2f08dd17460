pub mod analytic;
pub mod denoiser;
pub mod embed;
pub mod format;
pub mod guidance;
pub mod metrics;
pub mod noise;
pub mod prompts;
pub mod remote;
pub mod sampler;
pub mod schedule;
pub mod tensor;
pub mod verify;
pub mod view;
