//! Checkpoint files. Body layout, all little-endian:
//!
//! ```text
//! config:   run config as TOML (u64 length + utf-8)
//! task:     n_cls, n_part, n_regions, iterations (u64); mode (str);
//!           cls, det, part enabled (u64 0/1)
//! seed:     u64
//! epoch:    u64, completed epochs
//! rng:      seed u64, stream u64, word position (u64 low, u64 high)
//! history:  u64 count, { epoch u64, lr f64, mean_loss f64 }*
//! params:   u64 count, { name str, rank u64, dims u64*, values f64* }*
//! ```
//!
//! Plain SGD keeps no optimizer state, so none is stored.

use std::fs;
use std::path::Path;

use super::config::RunConfig;
use super::train::{EpochLog, Trainer};
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::multinet::{Multinet, TaskConfig, TaskSet};
use crate::tensor::{SeedStream, StreamState};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MNCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn checkpoint_to_bytes(tr: &Trainer) -> Vec<u8> {
    let mut w = Writer::default();
    w.str(&tr.cfg.to_toml());
    let task = tr.net.task_config();
    for v in [task.n_cls, task.n_part, task.n_regions, task.iterations] {
        w.usize(v);
    }
    w.str(task.mode.as_str());
    for on in [task.tasks.cls, task.tasks.det, task.tasks.part] {
        w.u64(on as u64);
    }
    w.u64(tr.seed);
    w.usize(tr.epoch);
    let s = tr.rng.state();
    w.u64(s.seed);
    w.u64(s.stream);
    w.u64(s.word_pos as u64);
    w.u64((s.word_pos >> 64) as u64);
    w.usize(tr.history.len());
    for h in &tr.history {
        w.usize(h.epoch);
        w.f64(h.lr);
        w.f64(h.mean_loss);
    }
    w.usize(tr.net.params().len());
    for p in tr.net.params().iter() {
        w.str(&p.name);
        w.tensor(&p.value);
    }
    w.seal(CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
}

fn flag(r: &mut Reader<'_>) -> Result<bool> {
    match r.u64()? {
        0 => Ok(false),
        1 => Ok(true),
        v => Err(Error::InvalidArgument(format!("checkpoint: bad flag {v}"))),
    }
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Trainer> {
    let mut r = Reader::open(bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, "checkpoint")?;
    let cfg = RunConfig::from_toml(&r.str()?)?;
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = r.usize()?;
    }
    let mode = r.str()?.parse()?;
    let tasks = TaskSet {
        cls: flag(&mut r)?,
        det: flag(&mut r)?,
        part: flag(&mut r)?,
    };
    let task = TaskConfig {
        n_cls: dims[0],
        n_part: dims[1],
        n_regions: dims[2],
        iterations: dims[3],
        mode,
        tasks,
    };
    let seed = r.u64()?;
    let epoch = r.usize()?;
    let rng_seed = r.u64()?;
    let stream = r.u64()?;
    let lo = r.u64()? as u128;
    let hi = r.u64()? as u128;
    let rng = SeedStream::restore(StreamState {
        seed: rng_seed,
        stream,
        word_pos: lo | (hi << 64),
    });
    let n = r.count(24)?;
    let mut history = Vec::with_capacity(n);
    for _ in 0..n {
        history.push(EpochLog {
            epoch: r.usize()?,
            lr: r.f64()?,
            mean_loss: r.f64()?,
        });
    }

    let mut net = Multinet::new(task, cfg.arch.clone(), seed)?;
    let n = r.count(16)?;
    if n != net.params().len() {
        return Err(Error::InvalidArgument(format!(
            "checkpoint: {n} parameters stored, network has {}",
            net.params().len()
        )));
    }
    for i in 0..n {
        let name = r.str()?;
        let value = r.tensor()?;
        let expected = net.params().by_index(i);
        if expected.name != name || expected.value.shape() != value.shape() {
            return Err(Error::InvalidArgument(format!(
                "checkpoint: parameter {i} is `{name}` {:?}, expected `{}` {:?}",
                value.shape(),
                expected.name,
                expected.value.shape()
            )));
        }
        net.params_mut().get_mut(&name).unwrap().value = value;
    }
    r.finish()?;
    Ok(Trainer {
        cfg,
        seed,
        net,
        epoch,
        rng,
        history,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, tr: &Trainer) -> Result<()> {
    fs::write(path, checkpoint_to_bytes(tr))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Trainer> {
    checkpoint_from_bytes(&fs::read(path)?)
}
