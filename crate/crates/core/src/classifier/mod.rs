//! Pluggable probabilistic classifier with a built-in hashed-feature logistic regression.

mod eval;
mod features;
mod model;
pub mod objective;
mod prediction;

pub use eval::{evaluate, per_class_counts, score_labels, ClassCounts, Metrics};
pub use features::{featurize, featurize_token, hash_index, tokenize, FeatureVector, TOKEN_WINDOW};
pub use model::{
    build_samples, input_features, train, Classifier, Learner, LogisticLearner, LogisticModel, TrainConfig,
    MODEL_FORMAT_VERSION,
};
pub use prediction::{sequence_label_prob, Distribution, Prediction};
