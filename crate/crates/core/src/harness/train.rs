use std::io::Write;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::multinet::{ForwardOptions, Multinet, TaskConfig, TaskSet};
use crate::synthdata::{propose_regions, RegionSet, Scene, SceneSpec};
use crate::tasks::{assign_regions, AssignConfig, RegionTargets, SceneTruth};
use crate::tensor::{sgd_step, SeedStream, Tape, Tensor, Var};

/// Proposal labelling used for training: every region below the
/// foreground threshold is background, including ones far from any box.
pub const TRAIN_ASSIGN: AssignConfig = AssignConfig {
    fg_iou: 0.5,
    bg_lo: 0.0,
    bg_hi: 0.5,
};

const PROPOSAL_STREAM: u64 = 0x7072_6f70;
const SHUFFLE_STREAM: u64 = 0x7368_7566;

/// A scene with its proposals and region supervision.
#[derive(Clone, Debug)]
pub struct Example {
    pub image: Tensor,
    pub regions: RegionSet,
    pub det: RegionTargets,
    pub part: RegionTargets,
    pub truth: SceneTruth,
}

/// Scenes of one dataset, ready for training and evaluation.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub spec: SceneSpec,
    pub examples: Vec<Example>,
}

impl Prepared {
    /// Draws `n_regions` proposals per scene. Proposals depend only on the
    /// dataset seed and scene index, so every run on a dataset sees the
    /// same regions.
    pub fn new(spec: &SceneSpec, scenes: &[Scene], n_regions: usize) -> Result<Self> {
        let mut seeds = SeedStream::derived(spec.seed, PROPOSAL_STREAM);
        let mut examples = Vec::with_capacity(scenes.len());
        for scene in scenes {
            scene.validate(spec)?;
            let regions = propose_regions(scene, n_regions, seeds.rng().next_u64())?;
            let objects = scene.object_targets();
            let parts = scene.part_targets();
            let truth = SceneTruth {
                width: scene.width() as f64,
                height: scene.height() as f64,
                proposals: regions.boxes.clone(),
                img_label: scene.img_label.clone(),
                objects: objects.clone(),
                parts: parts.clone(),
            };
            examples.push(Example {
                image: scene.image.clone(),
                det: assign_regions(&regions.boxes, &objects, &TRAIN_ASSIGN)?,
                part: assign_regions(&regions.boxes, &parts, &TRAIN_ASSIGN)?,
                regions,
                truth,
            });
        }
        Ok(Self {
            spec: spec.clone(),
            examples,
        })
    }

    /// Whether any scene carries part annotations.
    pub fn has_parts(&self) -> bool {
        self.examples.iter().any(|e| !e.truth.parts.is_empty())
    }

    /// Task layout for this data; the part task is dropped when there is
    /// nothing to supervise it with.
    pub fn task_config(&self, cfg: &RunConfig) -> TaskConfig {
        let part = self.has_parts() && self.spec.n_part_classes() > 0;
        TaskConfig {
            n_cls: self.spec.n_classes,
            n_part: self.spec.n_part_classes(),
            n_regions: cfg.n_regions,
            iterations: cfg.iterations,
            mode: cfg.mode,
            tasks: TaskSet {
                part,
                ..TaskSet::ALL
            },
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Mean training loss of one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
}

pub fn write_loss_curve<W: Write>(out: W, logs: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for l in logs {
        w.serialize(l).map_err(|e| Error::Config(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Builds the summed loss over every iteration's outputs:
/// `w_cls·BCE + w_det·(CE + smooth-L1) + w_part·(CE + smooth-L1)`.
/// Terms with weight 0 are left out of the graph.
pub fn record_loss(
    tape: &mut Tape,
    net: &Multinet,
    cfg: &RunConfig,
    ex: &Example,
    params: Vec<Var>,
) -> Result<Var> {
    let opts = ForwardOptions {
        iterations: cfg.iterations,
        truncate: cfg.truncate,
        grounding: None,
    };
    let pass = net.unroll(tape, params, &ex.image, &ex.regions, &opts)?;
    let mut terms = Vec::new();
    let mut push = |tape: &mut Tape, v: Var, w: f64| -> Result<()> {
        if w != 0.0 {
            terms.push(if w == 1.0 { v } else { tape.mul_scalar(v, w) });
        }
        Ok(())
    };
    for step in &pass.steps {
        if let Some(y) = step.cls {
            let l = tape.bce_multilabel(y, &ex.truth.img_label)?;
            push(tape, l, cfg.cls_weight)?;
        }
        for (out, targets, w) in [
            (step.det, &ex.det, cfg.det_weight),
            (step.part, &ex.part, cfg.part_weight),
        ] {
            if let Some((scores, deltas)) = out {
                let ce = tape.softmax_ce(scores, &targets.labels)?;
                let reg = tape.smooth_l1(deltas, targets)?;
                let l = tape.add(ce, reg)?;
                push(tape, l, w)?;
            }
        }
    }
    if terms.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    tape.add_all(&terms)
}

/// Training state: parameters, position in the schedule and the shuffle
/// stream.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub cfg: RunConfig,
    pub seed: u64,
    pub net: Multinet,
    /// Completed epochs.
    pub epoch: usize,
    pub rng: SeedStream,
    pub history: Vec<EpochLog>,
}

impl Trainer {
    pub fn new(cfg: RunConfig, seed: u64, task: TaskConfig) -> Result<Self> {
        cfg.validate()?;
        let net = Multinet::new(task, cfg.arch.clone(), seed)?;
        Ok(Self {
            cfg,
            seed,
            net,
            epoch: 0,
            rng: SeedStream::derived(seed, SHUFFLE_STREAM),
            history: Vec::new(),
        })
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.cfg.total_epochs()
    }

    /// Loss and parameter gradients for one scene.
    pub fn loss_and_grads(&self, ex: &Example) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let params = self.net.params().load(&mut tape, true);
        let loss = record_loss(&mut tape, &self.net, &self.cfg, ex, params.clone())?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Ok((value, Vec::new()));
        }
        tape.backward(loss)?;
        Ok((value, self.net.params().grads(&tape, &params)))
    }

    /// Loss for one scene without building gradients.
    pub fn loss(&self, ex: &Example) -> Result<f64> {
        let mut tape = Tape::new();
        let params = self.net.params().load(&mut tape, false);
        let loss = record_loss(&mut tape, &self.net, &self.cfg, ex, params)?;
        Ok(tape.value(loss).item())
    }

    pub fn mean_loss(&self, data: &Prepared) -> Result<f64> {
        let mut total = 0.0;
        for ex in &data.examples {
            total += self.loss(ex)?;
        }
        Ok(total / data.len().max(1) as f64)
    }

    /// One pass over the data in a fresh random order, one scene per
    /// update.
    pub fn train_epoch(&mut self, data: &Prepared) -> Result<EpochLog> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("training set is empty".into()));
        }
        let lr = self.cfg.lr_at(self.epoch);
        let order = self.rng.permutation(data.len());
        let mut total = 0.0;
        for (batch, &i) in order.iter().enumerate() {
            let (loss, grads) = self.loss_and_grads(&data.examples[i])?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: self.epoch,
                    batch,
                });
            }
            sgd_step(self.net.params_mut(), &grads, lr)?;
            total += loss;
        }
        let log = EpochLog {
            epoch: self.epoch,
            lr,
            mean_loss: total / data.len() as f64,
        };
        self.epoch += 1;
        self.history.push(log);
        Ok(log)
    }

    /// Trains until `stop_after` completed epochs (or the end of the
    /// schedule), calling `on_epoch` after each.
    pub fn run(
        &mut self,
        data: &Prepared,
        stop_after: Option<usize>,
        mut on_epoch: impl FnMut(&Trainer) -> Result<()>,
    ) -> Result<()> {
        let end = stop_after
            .unwrap_or(usize::MAX)
            .min(self.cfg.total_epochs());
        while self.epoch < end {
            self.train_epoch(data)?;
            on_epoch(self)?;
        }
        Ok(())
    }
}
