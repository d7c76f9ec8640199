//! The CNN-EMD forecaster, the fusion inlet predictor and residual-based
//! anomaly detection.

pub mod anomaly;
pub mod forecaster;
pub mod fusion;
pub mod imf_matrix;

pub use crate::data::AnomalyEvent;
pub use anomaly::{
    detect, evaluate, evaluate_events, forecast_metrics, residual_scores, DetectConfig, DetectionMetrics,
    ForecastMetrics, Metrics,
};
pub use forecaster::{build_cnn_emd, forecast_pressure, train_forecaster, CnnEmdConfig, ForecasterBundle};
pub use fusion::{build_fusion, predict_inlet, train_fusion, FusionBundle, FusionConfig};
pub use imf_matrix::{prepare_imf_matrix, reconcile_channels, ImfMatrix, PaddingReport};
