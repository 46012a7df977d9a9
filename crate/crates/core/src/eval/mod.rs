//! Image-quality metrics, synthetic phantoms and summary statistics.

mod metrics;
mod phantom;
mod stats;

pub use metrics::{psnr, ssim, PSNR_CAP};
pub use phantom::{generate_phantoms, PhantomKind, PhantomSpec};
pub use stats::{gaussian_kde, quantile, silverman_bandwidth, trimmed, TrimmedSummary};
