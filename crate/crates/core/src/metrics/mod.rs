//! Image-quality metrics: point-target FWHM, Nakagami shape, SSIM/PSNR,
//! plus the small statistics and CSV helpers the reports need.

mod nakagami;
mod report;
mod resolution;
mod similarity;
mod stats;

pub use nakagami::{nakagami_m, NakagamiEstimate, MIN_NAKAGAMI_SAMPLES};
pub use report::{
    read_rois, write_nakagami_csv, write_resolution_csv, write_rows, write_similarity_csv, NakagamiRow,
    ResolutionRow, Roi,
    SimilarityRow, NAKAGAMI_HEADER, RESOLUTION_HEADER, SIMILARITY_HEADER,
};
pub use resolution::{fwhm, fwhm_profile, measure_target, Direction, ResolutionMeasurement, UPSAMPLE};
pub use similarity::{psnr, psnr_grid, ssim, ssim_grid, ssim_map, ssim_masked, SsimParams};
pub use stats::{mean_std, paired_t_test, PairedTTest};
