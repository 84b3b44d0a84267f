use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::write_atomic;
use crate::error::{Error, Result};
use crate::image::{EnvelopeImage, Grid};

/// Named rectangle in frame millimetres (top-left corner plus size).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roi {
    pub name: String,
    pub axial_mm: f64,
    pub lateral_mm: f64,
    pub height_mm: f64,
    pub width_mm: f64,
}

impl Roi {
    /// Pixel window `(r0, c0, h, w)` on `img`, clamped to the frame.
    pub fn pixels(&self, img: &EnvelopeImage) -> Result<(usize, usize, usize, usize)> {
        let sp = img.spacing;
        let r0 = (self.axial_mm / sp.axial).round().max(0.0) as usize;
        let c0 = (self.lateral_mm / sp.lateral).round().max(0.0) as usize;
        let r1 = (((self.axial_mm + self.height_mm) / sp.axial).round() as usize).min(img.rows());
        let c1 = (((self.lateral_mm + self.width_mm) / sp.lateral).round() as usize).min(img.cols());
        if r1 <= r0 || c1 <= c0 {
            return Err(Error::Metric(format!("ROI {:?} does not overlap the frame", self.name)));
        }
        Ok((r0, c0, r1 - r0, c1 - c0))
    }

    pub fn crop(&self, img: &EnvelopeImage) -> Result<Grid> {
        let (r0, c0, h, w) = self.pixels(img)?;
        img.samples().crop(r0, c0, h, w)
    }
}

/// Reads a ROI file: CSV with header `name,axial_mm,lateral_mm,height_mm,width_mm`.
pub fn read_rois(path: &Path) -> Result<Vec<Roi>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let rois = rdr
        .deserialize()
        .collect::<std::result::Result<Vec<Roi>, _>>()
        .map_err(|e| Error::format(path, e.to_string()))?;
    if rois.is_empty() {
        return Err(Error::format(path, "no ROIs defined"));
    }
    for r in &rois {
        if !(r.height_mm > 0.0 && r.width_mm > 0.0) {
            return Err(Error::format(path, format!("ROI {:?} has non-positive size", r.name)));
        }
    }
    Ok(rois)
}

pub const RESOLUTION_HEADER: &str =
    "frame,target_id,depth_mm,peak_axial_mm,peak_lateral_mm,axial_fwhm_mm,lateral_fwhm_mm";
pub const NAKAGAMI_HEADER: &str = "roi,frames,m_mean,m_std,samples_per_frame";
pub const SIMILARITY_HEADER: &str = "frame,ssim,psnr_db";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionRow {
    pub frame: u32,
    pub target_id: String,
    pub depth_mm: f64,
    pub peak_axial_mm: f64,
    pub peak_lateral_mm: f64,
    pub axial_fwhm_mm: f64,
    pub lateral_fwhm_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NakagamiRow {
    pub roi: String,
    pub frames: usize,
    pub m_mean: f64,
    pub m_std: f64,
    pub samples_per_frame: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRow {
    pub frame: u32,
    pub ssim: f64,
    /// `inf` when the frames are identical.
    pub psnr_db: f64,
}

/// Serializes rows under a fixed header; an empty table still gets its
/// header.
pub fn write_rows<R: Serialize>(path: &Path, header: &str, rows: &[R]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header.split(','))
        .map_err(|e| Error::format(path, e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::format(path, e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format(path, e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn write_resolution_csv(path: &Path, rows: &[ResolutionRow]) -> Result<()> {
    write_rows(path, RESOLUTION_HEADER, rows)
}

pub fn write_nakagami_csv(path: &Path, rows: &[NakagamiRow]) -> Result<()> {
    write_rows(path, NAKAGAMI_HEADER, rows)
}

pub fn write_similarity_csv(path: &Path, rows: &[SimilarityRow]) -> Result<()> {
    write_rows(path, SIMILARITY_HEADER, rows)
}
