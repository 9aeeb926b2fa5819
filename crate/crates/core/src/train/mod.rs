//! Training, datasets and evaluation metrics.

pub mod bdrate;
pub mod dataset;
pub mod metrics;
pub mod report;
pub mod stats;
pub mod trainer;

pub use bdrate::{bd_rate, RdPoint};
pub use dataset::{load_dataset, synthetic_image, write_synthetic_corpus, CropStream, Dataset};
pub use metrics::{ms_ssim, psnr};
pub use stats::{channel_stats, ChannelStats};
pub use trainer::{evaluate_loss, train, LossTerms, TrainConfig, Trainer};
