//! Dataset manifests and the unpaired two-domain collection.
//!
//! A manifest is plain text, one record per line:
//!
//! ```text
//! # path<TAB>domain_tag<TAB>frame_index
//! frames/a_0000.usef	phased	0
//! frames/b_0000.usef	linear	0
//! @cycle 12 40
//! ```
//!
//! Relative paths resolve against the manifest's directory. Blank lines and
//! `#` comments are ignored. An optional `@cycle <first> <last>` directive
//! annotates an inclusive frame-index range (one cardiac cycle, chosen
//! upstream); it is carried through but does not filter records.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::container::{read_frame, write_atomic};
use crate::error::{Error, Result};
use crate::image::{DomainTag, EnvelopeImage, MODEL_GRID};

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub path: PathBuf,
    pub domain: DomainTag,
    pub frame_index: u32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
    pub cycle: Option<(u32, u32)>,
}

impl Manifest {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut m = Manifest::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |d: &str| Error::format(base, format!("manifest line {}: {d}", lineno + 1));
            if let Some(rest) = line.strip_prefix("@cycle") {
                let nums: Vec<u32> = rest
                    .split_whitespace()
                    .map(|t| t.parse::<u32>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| err("bad @cycle range"))?;
                match nums.as_slice() {
                    [a, b] if a <= b => m.cycle = Some((*a, *b)),
                    _ => return Err(err("@cycle needs two ordered indices")),
                }
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(err("expected path, domain_tag, frame_index separated by tabs"));
            }
            let path = PathBuf::from(fields[0]);
            let path = if path.is_absolute() { path } else { base.join(path) };
            let domain: DomainTag = fields[1].parse()?;
            let frame_index = fields[2].trim().parse().map_err(|_| err("bad frame index"))?;
            m.records.push(ManifestRecord {
                path,
                domain,
                frame_index,
            });
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base)
    }

    /// Serializes with paths relative to `base` when possible.
    pub fn render(&self, base: &Path) -> String {
        let mut s = String::from("# path\tdomain_tag\tframe_index\n");
        for r in &self.records {
            let p = r.path.strip_prefix(base).unwrap_or(&r.path);
            let _ = writeln!(s, "{}\t{}\t{}", p.display(), r.domain, r.frame_index);
        }
        if let Some((a, b)) = self.cycle {
            let _ = writeln!(s, "@cycle {a} {b}");
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        write_atomic(path, self.render(base).as_bytes())
    }
}

/// Two independent frame collections. Index `i` of one domain has no
/// relation to index `i` of the other.
#[derive(Debug, Clone, Default)]
pub struct UnpairedDataset {
    pub domain_a: Vec<EnvelopeImage>,
    pub domain_b: Vec<EnvelopeImage>,
}

impl UnpairedDataset {
    pub fn new(domain_a: Vec<EnvelopeImage>, domain_b: Vec<EnvelopeImage>) -> Result<Self> {
        let ds = Self { domain_a, domain_b };
        ds.validate()?;
        Ok(ds)
    }

    /// Loads phased frames into domain A and linear frames into domain B.
    pub fn from_manifest(manifest: &Manifest) -> Result<Self> {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for r in &manifest.records {
            let mut img = read_frame(&r.path)?;
            img.frame_index = r.frame_index;
            img.domain = r.domain;
            match r.domain {
                DomainTag::Phased => a.push(img),
                DomainTag::Linear => b.push(img),
                DomainTag::Generated => {}
            }
        }
        Self::new(a, b)
    }

    pub fn frame_shape(&self) -> Option<(usize, usize)> {
        self.domain_a.first().or(self.domain_b.first()).map(|f| f.shape())
    }

    fn validate(&self) -> Result<()> {
        if let Some(f) = self.domain_a.iter().find(|f| f.domain != DomainTag::Phased) {
            return Err(Error::InvalidInput(format!("domain A holds a {} frame", f.domain)));
        }
        if let Some(f) = self.domain_b.iter().find(|f| f.domain != DomainTag::Linear) {
            return Err(Error::InvalidInput(format!("domain B holds a {} frame", f.domain)));
        }
        if let Some(shape) = self.frame_shape() {
            if let Some(f) = self
                .domain_a
                .iter()
                .chain(&self.domain_b)
                .find(|f| f.shape() != shape)
            {
                return Err(Error::shape(shape, f.shape()));
            }
        }
        Ok(())
    }

    /// Errors unless every frame has the 256×256 model shape.
    pub fn require_model_shape(&self) -> Result<()> {
        match self.frame_shape() {
            Some(s) if s != (MODEL_GRID, MODEL_GRID) => Err(Error::shape((MODEL_GRID, MODEL_GRID), s)),
            _ => Ok(()),
        }
    }

    pub fn len(&self) -> usize {
        self.domain_a.len() + self.domain_b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Holds out `floor(fraction · |domain|)` frames from each domain,
    /// chosen by a seeded shuffle. Returns `(train, validation)`.
    pub fn split_validation(&self, fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::InvalidInput(format!("validation fraction {fraction} not in [0, 1)")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut split = |frames: &[EnvelopeImage]| {
            let n_val = (frames.len() as f64 * fraction).floor() as usize;
            let mut idx: Vec<usize> = (0..frames.len()).collect();
            idx.shuffle(&mut rng);
            let mut val_idx = idx[..n_val].to_vec();
            let mut train_idx = idx[n_val..].to_vec();
            val_idx.sort_unstable();
            train_idx.sort_unstable();
            (
                train_idx.iter().map(|&i| frames[i].clone()).collect::<Vec<_>>(),
                val_idx.iter().map(|&i| frames[i].clone()).collect::<Vec<_>>(),
            )
        };
        let (ta, va) = split(&self.domain_a);
        let (tb, vb) = split(&self.domain_b);
        Ok((
            Self {
                domain_a: ta,
                domain_b: tb,
            },
            Self {
                domain_a: va,
                domain_b: vb,
            },
        ))
    }
}

/// Number of frames a validation split holds out from a single pool.
pub fn held_out_count(total: usize, fraction: f64) -> usize {
    (total as f64 * fraction).floor() as usize
}
