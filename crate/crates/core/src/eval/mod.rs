//! Metrics, imputation baselines, evaluation protocols and reports.

pub mod impute;
pub mod metrics;
pub mod protocol;
pub mod report;

pub use impute::{
    impute_average, impute_nn, impute_zero, nearest_neighbor, AverageImputer, Completer, ModelCompleter,
    ModelSegmenter, NearestNeighborImputer, Oracle, Segmenter, ZeroImputer,
};
pub use metrics::{dice_score, mae, nrmse, psnr, ssim, DiceScores, ImageMetrics, PSNR_CAP};
pub use protocol::{
    all_subsets, run_protocol, run_protocol_random_k, run_protocol_single_missing, DiceSummary, DomainMetrics,
    MetricsReport, Protocol,
};
pub use report::format_table;
