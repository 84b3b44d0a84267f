use crate::error::{Error, Result};
use crate::image::{DomainTag, EnvelopeImage, Grid};
use crate::networks::Generator;
use crate::nn::Real;

use super::step::batch_tensor;

/// Inference pass of `generator` over `frames`, `batch` frames at a time.
/// Inputs must lie in `[0, 1]`; outputs are clamped to `[0, 1]`, tagged
/// [`DomainTag::Generated`] and returned in input order.
pub fn translate<T: Real>(generator: &Generator<T>, frames: &[EnvelopeImage], batch: usize) -> Result<Vec<EnvelopeImage>> {
    if batch == 0 {
        return Err(Error::Config("translation batch must be at least 1".into()));
    }
    for f in frames {
        let s = f.samples();
        if s.max() > 1.0 || s.min() < 0.0 {
            return Err(Error::InvalidInput(format!(
                "frame {} is not normalized to [0, 1] (range {}..{})",
                f.frame_index,
                s.min(),
                s.max()
            )));
        }
    }
    let mut out = Vec::with_capacity(frames.len());
    let mut start = 0;
    while start < frames.len() {
        // a batch holds consecutive frames of one shape
        let shape = frames[start].shape();
        let mut end = start + 1;
        while end < frames.len() && end - start < batch && frames[end].shape() == shape {
            end += 1;
        }
        let refs: Vec<&EnvelopeImage> = frames[start..end].iter().collect();
        let y = generator.forward(&batch_tensor::<T>(&refs)?)?;
        if !y.is_finite() {
            return Err(Error::NonFinite("generator output".into()));
        }
        for (i, f) in refs.iter().enumerate() {
            let data = y.sample(i).iter().map(|v| v.f64().clamp(0.0, 1.0)).collect();
            let grid = Grid::new(shape.0, shape.1, data)?;
            out.push(f.with_samples(grid)?.with_domain(DomainTag::Generated));
        }
        start = end;
    }
    Ok(out)
}
