use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // graph
    #[error("shape mismatch at node #{node} ({op}): {detail}")]
    Shape {
        node: usize,
        op: &'static str,
        detail: String,
    },
    #[error("non-finite value produced at node #{node} ({op})")]
    NonFinite { node: usize, op: &'static str },
    #[error("loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("no graph input named `{0}`")]
    UnknownInput(String),
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    // audio io
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("wav file is not mono ({channels} channels)")]
    NotMono { channels: u16 },
    #[error("wav file is not 16-bit PCM ({detail})")]
    NotPcm16 { detail: String },
    #[error("wav file is truncated or malformed: {0}")]
    MalformedWav(String),
    #[error("audio sample `{0}` is empty")]
    EmptyAudio(String),
    #[error("sample value {value} at index {index} of `{id}` is outside [-1, 1)")]
    SampleOutOfRange { id: String, index: usize, value: f32 },
    #[error("mixed sample rates in batch: {expected} Hz vs {found} Hz")]
    SampleRateMismatch { expected: u32, found: u32 },
    #[error("cannot batch an empty list of samples")]
    EmptyBatch,

    // augmentation
    #[error("crop fraction must lie in [0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("{0} is silent; SNR is undefined")]
    Silent(&'static str),
    #[error("impulse response is empty")]
    EmptyImpulseResponse,
    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    // model
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("waveform of {samples} samples is shorter than the receptive field ({receptive_field})")]
    TooShort {
        samples: usize,
        receptive_field: usize,
    },
    #[error("mask span {span} exceeds frame count {frames}")]
    SpanTooLong { span: usize, frames: usize },
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("views disagree: {0}")]
    ViewMismatch(String),

    // clustering / loss
    #[error("index {index} out of range for {len} points")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("need at least 2 masked steps to draw a distractor, got {0}")]
    TooFewMaskedSteps(usize),
    #[error("similarity is NaN")]
    NanSimilarity,
    #[error("row {row} is not a probability distribution (sums to {sum})")]
    NotADistribution { row: usize, sum: f64 },

    // trainer
    #[error("non-finite loss at step {step} (batch {batch:?})")]
    NonFiniteLoss { step: usize, batch: Vec<String> },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("probe needs at least 2 classes, found {0}")]
    TooFewClasses(usize),
    #[error("corpus is empty: {0}")]
    EmptyCorpus(String),
}

impl From<hound::Error> for Error {
    fn from(e: hound::Error) -> Self {
        match e {
            hound::Error::IoError(io) => match io.kind() {
                // hound reports short reads as `Other`
                std::io::ErrorKind::UnexpectedEof | std::io::ErrorKind::Other => {
                    Error::MalformedWav(io.to_string())
                }
                _ => Error::Io(io),
            },
            hound::Error::Unsupported => Error::NotPcm16 {
                detail: "unsupported encoding".into(),
            },
            other => Error::MalformedWav(other.to_string()),
        }
    }
}
