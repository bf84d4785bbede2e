//! Joint speech and text training for attention encoder-decoder models.
//!
//! A speech encoder and a phoneme text encoder feed one shared decoder.
//! Training alternates speech-to-text batches with text-to-text batches
//! (denoising on masked phoneme input, or translation), so unpaired text
//! improves the decoder used for speech recognition and translation.

pub mod text;
pub mod audio;
pub mod model;
pub mod trainer;
pub mod synth;
pub mod eval;
