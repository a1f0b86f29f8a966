//! Contrastive mutual-information alignment between aligned ego and
//! neighbor features: pair construction, the pair discriminator and the
//! logistic contrastive loss with its `ln k - L` estimate.

mod discriminator;
mod loss;
mod pairs;

pub use discriminator::DiscriminatorParams;
pub use loss::{contrast_loss, contrast_loss_from_scores, dami_loss, DamiReport, ScoreAggregation};
pub use pairs::{build_pairs, plan_pairs, AlignedScene, NegativeSource, PairBatch, PairEntry, Provenance};
