//! Confusion-matrix metrics, k-fold cross-validation and Grad-CAM.

mod cv;
mod gradcam;
mod metrics;

pub use cv::{cross_validate, cross_validate_config, CVReport, FoldResult};
pub use gradcam::{
    blend, colormap, grad_cam, normalize_map, overlay, overlay_filename, weighted_activation_map,
    Heatmap, OVERLAY_ALPHA,
};
pub use metrics::{predict_class, quantile, summarize, ConfusionMatrix, MetricsReport, Summary};
