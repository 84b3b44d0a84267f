//! Resume checkpoints: one directory per epoch, written to a temporary
//! sibling and renamed into place so a crash never leaves a half-written
//! checkpoint under its final name.
//!
//! ```text
//! epoch-0010/
//!   g_a.ccgw  g_b.ccgw  d_a.ccgw  d_b.ccgw     network weights
//!   adam_g_a.ccgw … adam_d_b.ccgw               first/second moments
//!   meta.json                                   epoch, step, log offsets, config echo
//! ```
//!
//! Weight grids are stored as f32, so a checkpoint round-trips an f32 run
//! bit-exactly and an f64 run to single precision.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::container::write_atomic;
use crate::error::{Error, Result};
use crate::networks::{
    decode_weights, encode_weights, load_discriminator, load_generator, save_discriminator, save_generator,
    ArchiveKind,
};
use crate::nn::{AdamState, Param, Real, WeightSet};

use super::{TrainConfig, TrainState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub step: usize,
    /// Byte length of `losses.csv` when the checkpoint was taken.
    pub loss_log_offset: u64,
    /// Byte length of `validation.csv` when the checkpoint was taken.
    pub validation_log_offset: u64,
    /// Adam step counts for G_A, G_B, D_A, D_B.
    pub adam_steps: [u64; 4],
    pub config: TrainConfig,
}

const NETS: [&str; 4] = ["g_a", "g_b", "d_a", "d_b"];

fn moments_archive<T: Real>(ws: &WeightSet<T>, opt: &AdamState<T>) -> WeightSet<T> {
    let mut params = Vec::new();
    for (i, p) in ws.params.iter().enumerate().filter(|(_, p)| p.trainable) {
        for (tag, src) in [("m", &opt.m[i]), ("v", &opt.v[i])] {
            params.push(Param {
                name: format!("{tag}.{}", p.name),
                shape: p.shape.clone(),
                data: src.clone(),
                trainable: false,
            });
        }
    }
    WeightSet::from_params(params, ws.init)
}

fn restore_moments<T: Real>(path: &Path, ws: &WeightSet<T>, step: u64) -> Result<AdamState<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (kind, archive) = decode_weights::<T>(&bytes, path)?;
    if kind != ArchiveKind::Auxiliary {
        return Err(Error::format(path, "not an optimizer archive"));
    }
    let mut state = AdamState::new(ws);
    state.step = step;
    let mut grids = archive.params.into_iter();
    for (i, p) in ws.params.iter().enumerate().filter(|(_, p)| p.trainable) {
        for (tag, dst) in [("m", &mut state.m[i]), ("v", &mut state.v[i])] {
            let g = grids
                .next()
                .ok_or_else(|| Error::format(path, format!("missing {tag}.{}", p.name)))?;
            if g.name != format!("{tag}.{}", p.name) || g.data.len() != dst.len() {
                return Err(Error::format(path, format!("unexpected grid {} for {tag}.{}", g.name, p.name)));
            }
            *dst = g.data;
        }
    }
    if grids.next().is_some() {
        return Err(Error::format(path, "extra optimizer grids"));
    }
    Ok(state)
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("epoch-{epoch:04}")
}

/// Writes `dir/epoch-XXXX` atomically and returns its path.
pub fn save_checkpoint<T: Real>(dir: &Path, state: &TrainState<T>, meta: &CheckpointMeta) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = checkpoint_name(meta.epoch);
    let final_path = dir.join(&name);
    let tmp = dir.join(format!(".{name}.partial"));
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::create_dir(&tmp).map_err(|e| Error::io(&tmp, e))?;

    save_generator(&tmp.join("g_a.ccgw"), &state.g_a)?;
    save_generator(&tmp.join("g_b.ccgw"), &state.g_b)?;
    save_discriminator(&tmp.join("d_a.ccgw"), &state.d_a)?;
    save_discriminator(&tmp.join("d_b.ccgw"), &state.d_b)?;
    let opts = [
        (&state.g_a.weights, &state.opt_g_a),
        (&state.g_b.weights, &state.opt_g_b),
        (&state.d_a.weights, &state.opt_d_a),
        (&state.d_b.weights, &state.opt_d_b),
    ];
    for (net, (ws, opt)) in NETS.iter().zip(opts) {
        let bytes = encode_weights(&ArchiveKind::Auxiliary, &moments_archive(ws, opt));
        write_atomic(&tmp.join(format!("adam_{net}.ccgw")), &bytes)?;
    }
    let json = serde_json::to_vec_pretty(meta).map_err(|e| Error::InvalidInput(e.to_string()))?;
    write_atomic(&tmp.join("meta.json"), &json)?;

    if final_path.exists() {
        fs::remove_dir_all(&final_path).map_err(|e| Error::io(&final_path, e))?;
    }
    fs::rename(&tmp, &final_path).map_err(|e| Error::io(&final_path, e))?;
    Ok(final_path)
}

pub fn read_meta(path: &Path) -> Result<CheckpointMeta> {
    let p = path.join("meta.json");
    let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(&p, e.to_string()))
}

/// Restores the full training state from a checkpoint directory.
pub fn load_checkpoint<T: Real>(path: &Path) -> Result<(TrainState<T>, CheckpointMeta)> {
    let meta = read_meta(path)?;
    let g_a = load_generator::<T>(&path.join("g_a.ccgw"))?;
    let g_b = load_generator::<T>(&path.join("g_b.ccgw"))?;
    let d_a = load_discriminator::<T>(&path.join("d_a.ccgw"))?;
    let d_b = load_discriminator::<T>(&path.join("d_b.ccgw"))?;
    if *g_a.spec() != meta.config.generator || *d_a.spec() != meta.config.discriminator {
        return Err(Error::format(path, "network specs disagree with the config echo"));
    }
    let [sga, sgb, sda, sdb] = meta.adam_steps;
    let opt_g_a = restore_moments(&path.join("adam_g_a.ccgw"), &g_a.weights, sga)?;
    let opt_g_b = restore_moments(&path.join("adam_g_b.ccgw"), &g_b.weights, sgb)?;
    let opt_d_a = restore_moments(&path.join("adam_d_a.ccgw"), &d_a.weights, sda)?;
    let opt_d_b = restore_moments(&path.join("adam_d_b.ccgw"), &d_b.weights, sdb)?;
    let state = TrainState {
        g_a,
        g_b,
        d_a,
        d_b,
        opt_g_a,
        opt_g_b,
        opt_d_a,
        opt_d_b,
        step: meta.step,
        epoch: meta.epoch,
    };
    Ok((state, meta))
}
