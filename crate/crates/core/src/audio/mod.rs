//! Level-1 audio stage: PCM input and prosodic descriptors.

mod pcm;
mod prosody;

pub use pcm::{decode_pcm, encode_pcm, read_pcm, write_pcm, PcmSignal, PCM_HEADER_LEN, PCM_MAGIC};
pub use prosody::{
    estimate_f0_shs, extract_prosody, frame_count, frame_signal, hann_window, loudness,
    voicing_probability, PitchEstimate, ProsodyAnalyzer, ProsodyConfig, ProsodyFrame,
    ProsodyTrack, AUDIO_DESCRIPTOR_DIM,
};
