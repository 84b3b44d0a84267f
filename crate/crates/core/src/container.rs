//! Self-describing binary container for frames, masks and displacement
//! fields.
//!
//! Layout, little-endian throughout:
//!
//! | offset | size | field                                        |
//! |--------|------|----------------------------------------------|
//! | 0      | 4    | magic `USEF`                                 |
//! | 4      | 2    | format version (1)                           |
//! | 6      | 1    | kind (0 frame, 1 mask, 2 displacement field) |
//! | 7      | 1    | dtype (1 = f32)                              |
//! | 8      | 1    | domain tag (0 phased, 1 linear, 2 generated) |
//! | 9      | 3    | reserved, zero                               |
//! | 12     | 4    | frame index                                  |
//! | 16     | 4    | plane count                                  |
//! | 20     | 4    | rows (axial)                                 |
//! | 24     | 4    | cols (lateral)                               |
//! | 28     | 8    | axial spacing, mm (f64)                      |
//! | 36     | 8    | lateral spacing, mm (f64)                    |
//! | 44     | 16   | grid origin in samples (row, col) (f64 × 2)  |
//! | 60     | 16   | grid step in samples (row, col) (f64 × 2)    |
//! | 76     | ...  | planes × rows × cols f32, row-major          |
//!
//! Samples are stored as f32, so a frame round-trips bit-exactly when its
//! samples are f32-representable.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{DomainTag, EnvelopeImage, Grid, Spacing};

pub const MAGIC: &[u8; 4] = b"USEF";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 76;
const DTYPE_F32: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContainerKind {
    Frame,
    Mask,
    DisplacementField,
}

impl ContainerKind {
    fn code(self) -> u8 {
        match self {
            ContainerKind::Frame => 0,
            ContainerKind::Mask => 1,
            ContainerKind::DisplacementField => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(ContainerKind::Frame),
            1 => Some(ContainerKind::Mask),
            2 => Some(ContainerKind::DisplacementField),
            _ => None,
        }
    }
}

/// Decoded container contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: ContainerKind,
    pub domain: DomainTag,
    pub frame_index: u32,
    pub rows: usize,
    pub cols: usize,
    pub spacing: Spacing,
    pub origin: (f64, f64),
    pub step: (f64, f64),
    pub planes: Vec<Vec<f32>>,
}

impl Container {
    pub fn encode(&self) -> Vec<u8> {
        let n = self.rows * self.cols;
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * n * self.planes.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.kind.code());
        out.push(DTYPE_F32);
        out.push(self.domain.code());
        out.extend_from_slice(&[0, 0, 0]);
        out.extend_from_slice(&self.frame_index.to_le_bytes());
        out.extend_from_slice(&(self.planes.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        for v in [
            self.spacing.axial,
            self.spacing.lateral,
            self.origin.0,
            self.origin.1,
            self.step.0,
            self.step.1,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        debug_assert_eq!(out.len(), HEADER_LEN);
        for plane in &self.planes {
            debug_assert_eq!(plane.len(), n);
            for v in plane {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |d: &str| Error::format(path, d);
        if bytes.len() < HEADER_LEN {
            return Err(bad("truncated header"));
        }
        if &bytes[0..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let kind = ContainerKind::from_code(bytes[6]).ok_or_else(|| bad("unknown kind"))?;
        if bytes[7] != DTYPE_F32 {
            return Err(bad("unsupported dtype"));
        }
        let domain = DomainTag::from_code(bytes[8]).ok_or_else(|| bad("unknown domain tag"))?;
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let frame_index = u32_at(12);
        let n_planes = u32_at(16) as usize;
        let rows = u32_at(20) as usize;
        let cols = u32_at(24) as usize;
        let spacing = Spacing {
            axial: f64_at(28),
            lateral: f64_at(36),
        };
        let origin = (f64_at(44), f64_at(52));
        let step = (f64_at(60), f64_at(68));
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(n_planes))
            .ok_or_else(|| bad("dimension overflow"))?;
        if bytes.len() != HEADER_LEN + 4 * n {
            return Err(bad(&format!(
                "payload is {} bytes, header implies {}",
                bytes.len() - HEADER_LEN,
                4 * n
            )));
        }
        let payload = &bytes[HEADER_LEN..];
        let planes = (0..n_planes)
            .map(|p| {
                let off = p * rows * cols * 4;
                payload[off..off + rows * cols * 4]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect()
            })
            .collect();
        Ok(Self {
            kind,
            domain,
            frame_index,
            rows,
            cols,
            spacing,
            origin,
            step,
            planes,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }

    pub fn plane_grid(&self, p: usize) -> Grid {
        Grid::new(
            self.rows,
            self.cols,
            self.planes[p].iter().map(|&v| v as f64).collect(),
        )
        .expect("plane length checked at decode")
    }
}

/// Writes through a temporary sibling and renames over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn frame_container(img: &EnvelopeImage) -> Container {
    Container {
        kind: ContainerKind::Frame,
        domain: img.domain,
        frame_index: img.frame_index,
        rows: img.rows(),
        cols: img.cols(),
        spacing: img.spacing,
        origin: (0.0, 0.0),
        step: (1.0, 1.0),
        planes: vec![img.samples().as_slice().iter().map(|&v| v as f32).collect()],
    }
}

pub fn write_frame(path: &Path, img: &EnvelopeImage) -> Result<()> {
    frame_container(img).write(path)
}

pub fn read_frame(path: &Path) -> Result<EnvelopeImage> {
    let c = Container::read(path)?;
    if c.kind != ContainerKind::Frame || c.planes.len() != 1 {
        return Err(Error::format(path, "not a single-plane frame container"));
    }
    EnvelopeImage::new(c.plane_grid(0), c.spacing, c.domain, c.frame_index)
}

/// Binary region mask stored as a one-plane container of 0/1 values.
pub fn write_mask(path: &Path, mask: &[bool], rows: usize, cols: usize, spacing: Spacing) -> Result<()> {
    if mask.len() != rows * cols {
        return Err(Error::shape(rows * cols, mask.len()));
    }
    Container {
        kind: ContainerKind::Mask,
        domain: DomainTag::Generated,
        frame_index: 0,
        rows,
        cols,
        spacing,
        origin: (0.0, 0.0),
        step: (1.0, 1.0),
        planes: vec![mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()],
    }
    .write(path)
}

pub fn read_mask(path: &Path) -> Result<(Vec<bool>, usize, usize)> {
    let c = Container::read(path)?;
    if c.kind != ContainerKind::Mask || c.planes.len() != 1 {
        return Err(Error::format(path, "not a mask container"));
    }
    Ok((c.planes[0].iter().map(|&v| v > 0.5).collect(), c.rows, c.cols))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_frame(vals: Vec<f32>, rows: usize, cols: usize) -> EnvelopeImage {
        EnvelopeImage::new(
            Grid::new(rows, cols, vals.into_iter().map(|v| v as f64).collect()).unwrap(),
            Spacing::new(0.05, 0.25).unwrap(),
            DomainTag::Linear,
            7,
        )
        .unwrap()
    }

    #[test]
    fn header_layout_is_fixed() {
        let img = sample_frame(vec![0.0, 0.5, 1.0, 0.25], 2, 2);
        let bytes = frame_container(&img).encode();
        assert_eq!(&bytes[..4], b"USEF");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(bytes[6], 0);
        assert_eq!(bytes[7], 1);
        assert_eq!(bytes[8], 1);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 7);
        assert_eq!(u32::from_le_bytes(bytes[20..24].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(bytes[36..44].try_into().unwrap()), 0.25);
        assert_eq!(bytes.len(), HEADER_LEN + 16);
        assert_eq!(f32::from_le_bytes(bytes[80..84].try_into().unwrap()), 0.5);
    }

    #[test]
    fn rejects_truncated_and_corrupt() {
        let img = sample_frame(vec![1.0; 9], 3, 3);
        let bytes = frame_container(&img).encode();
        let p = Path::new("x.usef");
        assert!(Container::decode(&bytes[..HEADER_LEN - 1], p).is_err());
        assert!(Container::decode(&bytes[..bytes.len() - 1], p).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Container::decode(&bad, p).is_err());
    }

    #[test]
    fn file_round_trip_and_mask() {
        let dir = tempfile::tempdir().unwrap();
        let img = sample_frame((0..12).map(|i| i as f32 / 11.0).collect(), 3, 4);
        let p = dir.path().join("f.usef");
        write_frame(&p, &img).unwrap();
        assert_eq!(read_frame(&p).unwrap(), img);

        let m = vec![true, false, false, true];
        let mp = dir.path().join("m.usef");
        write_mask(&mp, &m, 2, 2, img.spacing).unwrap();
        assert_eq!(read_mask(&mp).unwrap(), (m, 2, 2));
        assert!(read_frame(&mp).is_err());
    }

    proptest! {
        #[test]
        fn encode_decode_is_bit_exact(
            rows in 1usize..12,
            cols in 1usize..12,
            seed in any::<u64>(),
        ) {
            let vals: Vec<f32> = (0..rows * cols)
                .map(|i| ((seed.wrapping_mul(i as u64 + 1) >> 40) as f32) / 16777216.0)
                .collect();
            let img = sample_frame(vals, rows, cols);
            let c = frame_container(&img);
            let back = Container::decode(&c.encode(), Path::new("p")).unwrap();
            prop_assert_eq!(&back, &c);
            prop_assert_eq!(back.encode(), c.encode());
        }
    }
}
