//! Waveform loading, padded batches, and run artifacts on disk.

mod batch;
mod records;
mod wav;

pub use batch::{batch_and_pad, FrameGeometry, MaskedBatch};
pub use records::{
    config_hash, read_metrics, Checkpoint, MetricsRow, MetricsWriter, CHECKPOINT_VERSION,
};
pub use wav::{
    load_dir, load_wav, to_pcm16, wav_paths, write_wav, AudioSample, Provenance, MAX_AMPLITUDE,
    SAMPLE_RATE_HZ,
};
