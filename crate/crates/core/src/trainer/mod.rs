//! Pre-training loop, diagnostics and the built-in synthetic corpus.

mod config;
mod gradcheck;
mod optim;
mod probe;
mod run;
mod synth;

pub use config::{LrSchedule, OptimizerConfig, Paths, QuantizerChoice, TrainConfig};
pub use gradcheck::{gradcheck_cmd, gradcheck_configs, tiny_model, GradcheckRow, GRADCHECK_EPSILON};
pub use optim::AdamW;
pub use probe::{context_frames, labeled_corpus, labeled_dir, probe, probe_checkpoint, ProbeReport};
pub use run::{
    batch_for_step, build_augmenter, checkpoint_name, eval_step, initial_params, load_checkpoint, load_corpus,
    loss_graph, make_batches, prepare_views, pretrain, pretrain_with, quantizer_mode, save_checkpoint,
    PretrainSummary, FINAL_CHECKPOINT, METRICS_FILE, SYNTHETIC_CLIPS,
};
pub use synth::{read_labels, synth_clip, synthetic_corpus, write_synthetic, LabelRow, CLASS_NAMES, LABELS_FILE};
