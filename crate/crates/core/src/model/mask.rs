use rand::Rng;

use crate::audio_io::MaskedBatch;
use crate::error::{Error, Result};
use crate::model::MaskConfig;

/// Span mask over `nf` frames: every frame independently starts a span of
/// `span` frames with probability `p_start`; spans are cut at `nf` and
/// merged. An empty draw is replaced by a single span with a uniform start.
/// Returns sorted frame indices.
pub fn sample_mask(nf: usize, p_start: f64, span: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if nf == 0 || span > nf {
        return Err(Error::SpanTooLong { span, frames: nf });
    }
    let mut masked = vec![false; nf];
    for start in 0..nf {
        if rng.gen::<f64>() < p_start {
            masked[start..(start + span).min(nf)].iter_mut().for_each(|m| *m = true);
        }
    }
    if !masked.contains(&true) {
        let start = rng.gen_range(0..=nf - span);
        masked[start..start + span].iter_mut().for_each(|m| *m = true);
    }
    Ok((0..nf).filter(|f| masked[*f]).collect())
}

/// Draws one mask per utterance over its valid frames; padding frames are
/// never masked.
pub fn mask_batch(batch: &mut MaskedBatch, config: &MaskConfig, rng: &mut impl Rng) -> Result<()> {
    batch.mask_indices = batch
        .frame_counts
        .iter()
        .map(|&n| sample_mask(n, config.p_start, config.span_length, rng))
        .collect::<Result<_>>()?;
    Ok(())
}
