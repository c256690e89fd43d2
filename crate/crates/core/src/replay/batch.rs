use rand::Rng;

use super::buffer::{PrioritizedBuffer, Sampled};
use super::transition::Transition;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Actor,
    Expert,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchItem {
    pub id: u64,
    pub source: Source,
    pub transition: Transition,
    pub probability: f64,
    /// Importance weight `(N P(i))^-b`, divided by the batch maximum.
    pub weight: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampledBatch {
    pub items: Vec<BatchItem>,
}

impl SampledBatch {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn count(&self, source: Source) -> usize {
        self.items.iter().filter(|i| i.source == source).count()
    }
}

fn tag(buffer: &PrioritizedBuffer, draws: Vec<Sampled>, source: Source, out: &mut Vec<BatchItem>) {
    let n = buffer.len() as f64;
    let b = buffer.config().importance_exponent;
    out.extend(draws.into_iter().map(|d| BatchItem {
        id: d.id,
        source,
        weight: (n * d.probability).powf(-b),
        probability: d.probability,
        transition: d.transition,
    }));
}

fn normalize(items: &mut [BatchItem]) {
    let max = items.iter().map(|i| i.weight).fold(0.0, f64::max);
    if max > 0.0 {
        items.iter_mut().for_each(|i| i.weight /= max);
    }
}

/// Exactly three quarters actor and one quarter expert transitions, actor items
/// first. `batch_size` must be a multiple of 4.
pub fn sample_mixed_batch(
    actor: &PrioritizedBuffer,
    expert: &PrioritizedBuffer,
    batch_size: usize,
    rng: &mut impl Rng,
) -> Result<SampledBatch> {
    if batch_size == 0 || batch_size % 4 != 0 {
        return Err(Error::invalid(format!(
            "mixed batch size must be a positive multiple of 4, got {batch_size}"
        )));
    }
    if actor.is_empty() || expert.is_empty() {
        return Err(Error::InvalidState("mixed batch needs both buffers nonempty".into()));
    }
    let n_expert = batch_size / 4;
    let mut items = Vec::with_capacity(batch_size);
    tag(actor, actor.sample_proportional(batch_size - n_expert, rng)?, Source::Actor, &mut items);
    tag(expert, expert.sample_proportional(n_expert, rng)?, Source::Expert, &mut items);
    normalize(&mut items);
    Ok(SampledBatch { items })
}

/// Mixed batch when an expert buffer is supplied, otherwise a pure actor batch.
pub fn sample_batch(
    actor: &PrioritizedBuffer,
    expert: Option<&PrioritizedBuffer>,
    batch_size: usize,
    rng: &mut impl Rng,
) -> Result<SampledBatch> {
    match expert {
        Some(expert) => sample_mixed_batch(actor, expert, batch_size, rng),
        None => {
            if batch_size == 0 {
                return Err(Error::invalid("batch size must be positive"));
            }
            let mut items = Vec::with_capacity(batch_size);
            tag(actor, actor.sample_proportional(batch_size, rng)?, Source::Actor, &mut items);
            normalize(&mut items);
            Ok(SampledBatch { items })
        }
    }
}
