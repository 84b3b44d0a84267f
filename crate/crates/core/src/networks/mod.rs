//! Generator and discriminator networks plus their weight files.

pub mod discriminator;
pub mod generator;

pub use discriminator::{
    build_discriminator, receptive_field, spec_receptive_field, Discriminator, DiscriminatorSpec,
};
pub use generator::{build_generator, Generator, GeneratorSpec, GeneratorTrace};

use std::path::Path;

use crate::container::write_atomic;
use crate::error::{Error, Result};
use crate::nn::{InitRecord, Param, Real, WeightSet};

const WEIGHT_MAGIC: &[u8; 4] = b"CCGW";
const WEIGHT_VERSION: u16 = 1;

/// What a weight archive holds; doubles as the spec echo in the header.
#[derive(Debug, Clone, PartialEq)]
pub enum ArchiveKind {
    Generator(GeneratorSpec),
    Discriminator(DiscriminatorSpec),
    /// Optimizer moments or other auxiliary grids.
    Auxiliary,
}

/// Encodes a weight archive:
///
/// `CCGW`, version u16, kind u8, spec echo, init std f64, init seed u64,
/// param count u32, then per grid: name (u16 length + UTF-8), trainable u8,
/// rank u8, dims u32 × rank, f32 values. Little-endian throughout.
pub fn encode_weights<T: Real>(kind: &ArchiveKind, ws: &WeightSet<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHT_MAGIC);
    out.extend_from_slice(&WEIGHT_VERSION.to_le_bytes());
    let put_u32 = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    match kind {
        ArchiveKind::Generator(s) => {
            out.push(0);
            for v in [s.base_channels, s.n_modules, s.convs_per_module, s.kernel] {
                put_u32(&mut out, v);
            }
        }
        ArchiveKind::Discriminator(s) => {
            out.push(1);
            put_u32(&mut out, s.channels.len());
            for &c in &s.channels {
                put_u32(&mut out, c);
            }
            for &st in &s.strides {
                put_u32(&mut out, st);
            }
            put_u32(&mut out, s.kernel);
            put_u32(&mut out, s.pad);
            out.extend_from_slice(&s.leaky_slope.to_le_bytes());
            put_u32(&mut out, s.min_input);
        }
        ArchiveKind::Auxiliary => out.push(2),
    }
    out.extend_from_slice(&ws.init.kernel_std.to_le_bytes());
    out.extend_from_slice(&ws.init.seed.to_le_bytes());
    put_u32(&mut out, ws.params.len());
    for p in &ws.params {
        out.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(p.trainable as u8);
        out.push(p.shape.len() as u8);
        for &d in &p.shape {
            put_u32(&mut out, d);
        }
        for v in &p.data {
            out.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.path, "truncated weight file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_weights<T: Real>(bytes: &[u8], path: &Path) -> Result<(ArchiveKind, WeightSet<T>)> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4)? != WEIGHT_MAGIC {
        return Err(Error::format(path, "bad weight-file magic"));
    }
    let version = r.u16()?;
    if version != WEIGHT_VERSION {
        return Err(Error::format(path, format!("unsupported weight-file version {version}")));
    }
    let kind = match r.u8()? {
        0 => ArchiveKind::Generator(GeneratorSpec {
            base_channels: r.u32()?,
            n_modules: r.u32()?,
            convs_per_module: r.u32()?,
            kernel: r.u32()?,
        }),
        1 => {
            let n = r.u32()?;
            if n > 64 {
                return Err(Error::format(path, "implausible layer count"));
            }
            let channels = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let strides = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            ArchiveKind::Discriminator(DiscriminatorSpec {
                channels,
                strides,
                kernel: r.u32()?,
                pad: r.u32()?,
                leaky_slope: r.f64()?,
                min_input: r.u32()?,
            })
        }
        2 => ArchiveKind::Auxiliary,
        k => return Err(Error::format(path, format!("unknown archive kind {k}"))),
    };
    let init = InitRecord {
        kernel_std: r.f64()?,
        seed: r.u64()?,
    };
    let count = r.u32()?;
    let mut params = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::format(path, "non-UTF-8 name"))?;
        let trainable = r.u8()? != 0;
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(4 * n)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        params.push(Param {
            name,
            shape,
            data,
            trainable,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after weight grids"));
    }
    Ok((kind, WeightSet::from_params(params, init)))
}

pub fn save_generator<T: Real>(path: &Path, g: &Generator<T>) -> Result<()> {
    write_atomic(path, &encode_weights(&ArchiveKind::Generator(*g.spec()), &g.weights))
}

pub fn load_generator<T: Real>(path: &Path) -> Result<Generator<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    match decode_weights(&bytes, path)? {
        (ArchiveKind::Generator(spec), ws) => Generator::from_weights(spec, ws),
        _ => Err(Error::format(path, "not a generator weight file")),
    }
}

pub fn save_discriminator<T: Real>(path: &Path, d: &Discriminator<T>) -> Result<()> {
    write_atomic(path, &encode_weights(&ArchiveKind::Discriminator(d.spec().clone()), &d.weights))
}

pub fn load_discriminator<T: Real>(path: &Path) -> Result<Discriminator<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    match decode_weights(&bytes, path)? {
        (ArchiveKind::Discriminator(spec), ws) => Discriminator::from_weights(spec, ws),
        _ => Err(Error::format(path, "not a discriminator weight file")),
    }
}
