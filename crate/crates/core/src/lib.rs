//! Uncertainty-aware deep metric learning at desk scale.
//!
//! The crate covers the full pipeline around per-sample scale prediction:
//!
//! * [`losses`] — angular-margin softmax losses with a fixed or per-sample
//!   scale and closed-form gradients;
//! * [`gradnet`] — a minimal dense network with backprop, Adam, and
//!   finite-difference gradient checking;
//! * [`embeddings`] — the embedding data model, binary I/O, and a synthetic
//!   heteroscedastic Gaussian generator;
//! * [`scale_head`] — a trainable MLP head predicting a per-sample scale
//!   from a unit embedding, with checkpointing;
//! * [`similarity`] — cosine and scale-and-mu-modified pair/template
//!   similarity plus mu calibration;
//! * [`evaluation`] — TAR@FAR, the reject-verification protocol, retrieval
//!   precision-recall, and confidence baselines;
//! * [`gaussian`] — a closed-form error-probability oracle and a
//!   Monte-Carlo simulator for the generative model;
//! * [`experiments`] — scripted end-to-end scenarios.
//!
//! Everything is deterministic per seed and single-threaded by contract.

pub mod embeddings;
pub mod error;
pub mod evaluation;
pub mod experiments;
pub mod gaussian;
pub mod gradnet;
pub mod linalg;
pub mod losses;
pub mod scale_head;
pub mod similarity;

pub use embeddings::{
    generate_synthetic, generate_synthetic_with, make_pairs, normalize, read_embeddings,
    read_pairs, write_embeddings, write_pairs, CentroidMatrix, EmbeddingSet, PairSet,
    SyntheticData, SyntheticSpec, UnitEmbeddings,
};
pub use error::{Error, Result};
pub use evaluation::{
    curve_auc, default_rejection_grid, oracle_uncertainty, pair_uncertainty, precision_recall,
    reject_verification, spearman, tar_at_far, Normalization, Provenance, RejectionCurve,
    RetrievalEval, UncertaintyScores,
};
pub use experiments::{
    exp_crossview_retrieval, exp_heteroscedastic_verification, exp_mu_improvement,
    ExperimentReport,
};
pub use gaussian::{
    analytic_error_prob, erf, erfc, error_prob_sweep, simulate_error_prob, standard_normal_cdf,
    GaussianModelSpec, SimulationResult,
};
pub use gradnet::{
    adam_step, finite_diff_check, net_backward, net_forward, Activation, DenseNet,
    GradCheckReport, OptimizerState,
};
pub use linalg::Matrix;
pub use losses::{
    angular_margin_loss_free, arcface_loss, scaleface_loss, softmax_loss, LossConfig, LossResult,
    ScaleMode,
};
pub use scale_head::{
    head_forward, predict_scales, read_head, train_head, write_head, ActivationFamily,
    ScaleHead, ScaleHeadConfig, ScalePrediction, TrainConfig, TrainReport,
};
pub use similarity::{
    build_templates, calibrate_mu, cosine_pairs, fuse_template, modified_similarity, pair_scale,
    read_scores, template_similarity, write_scores, PairScores, SimilarityConfig, SimilarityMode,
    TemplateSet,
};
