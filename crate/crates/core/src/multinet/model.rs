use super::config::{ArchConfig, Mode, Task, TaskConfig, TaskSet};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::nnops::{ConvLayer, FCLayer, SppGrid};
use crate::synthdata::RegionSet;
use crate::tasks::{ImagePrediction, RegionPrediction};
use crate::tensor::{
    rng_tensor, Distribution, ParamGroup, SeedStream, Tape, Tensor, Var, BIAS_LR_MULT,
    WEIGHT_LR_MULT,
};

/// Predictions of every enabled task at one iteration.
pub type MultinetOutput = ImagePrediction;

const SCORE_STD: f64 = 0.01;
const BBOX_STD: f64 = 0.001;
const BOTTLENECK_STD: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq)]
struct Layer {
    w: usize,
    b: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct Head {
    fc6: Layer,
    fc7: Layer,
    score: Layer,
    bbox: Option<Layer>,
}

#[derive(Clone, Debug, PartialEq)]
struct Indices {
    backbones: Vec<Vec<Layer>>,
    /// Heads and the backbone each reads from, indexed cls, det, part.
    heads: [Option<(Head, usize)>; 3],
    bottleneck: Option<Layer>,
    /// Channels the decoders expect.
    rep_channels: usize,
}

fn slot(task: Task) -> usize {
    match task {
        Task::Cls => 0,
        Task::Det => 1,
        Task::Part => 2,
    }
}

/// Label substituted for a prediction at the first re-encoding.
#[derive(Clone, Debug, PartialEq)]
pub enum Grounding {
    /// Binary class-presence vector of length `n_cls`.
    Cls(Vec<f64>),
    /// `M×(n_cls+1)` region label rows.
    Det(Tensor),
    /// `M×(n_part+1)` region label rows.
    Part(Tensor),
}

impl Grounding {
    pub fn task(&self) -> Task {
        match self {
            Grounding::Cls(_) => Task::Cls,
            Grounding::Det(_) => Task::Det,
            Grounding::Part(_) => Task::Part,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ForwardOptions {
    pub iterations: usize,
    /// Detach re-encoded labels (and `h_{t−1}`) so no gradient crosses
    /// iterations.
    pub truncate: bool,
    pub grounding: Option<Grounding>,
}

impl ForwardOptions {
    pub fn new(iterations: usize) -> Self {
        Self {
            iterations,
            ..Default::default()
        }
    }
}

/// Tape handles for one iteration.
#[derive(Clone, Debug)]
pub struct StepVars {
    /// Shared representation, one per backbone (several only in
    /// independent mode).
    pub reps: Vec<Var>,
    pub cls: Option<Var>,
    /// `(scores, deltas)`.
    pub det: Option<(Var, Var)>,
    pub part: Option<(Var, Var)>,
}

#[derive(Clone, Debug)]
pub struct ForwardPass {
    /// Parameters in group order.
    pub params: Vec<Var>,
    pub r_img: Vec<Var>,
    pub steps: Vec<StepVars>,
}

impl ForwardPass {
    pub fn outputs(&self, tape: &Tape) -> Vec<MultinetOutput> {
        let region = |p: Option<(Var, Var)>| {
            p.map(|(s, d)| RegionPrediction {
                scores: tape.value(s).clone(),
                deltas: tape.value(d).clone(),
            })
        };
        self.steps
            .iter()
            .map(|s| MultinetOutput {
                cls: s.cls.map(|v| tape.value(v).data().to_vec()),
                det: region(s.det),
                part: region(s.part),
            })
            .collect()
    }
}

/// The network: backbone(s), per-task decoders and, for `update2`, the
/// 1×1 bottleneck `A`.
#[derive(Clone, Debug, PartialEq)]
pub struct Multinet {
    task: TaskConfig,
    arch: ArchConfig,
    params: ParamGroup,
    idx: Indices,
}

struct Init<'a> {
    group: ParamGroup,
    rng: &'a mut SeedStream,
}

impl Init<'_> {
    fn layer(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        std: Option<f64>,
    ) -> Result<Layer> {
        let std = std.unwrap_or_else(|| (2.0 / fan_in as f64).sqrt());
        let w = rng_tensor(self.rng, shape, Distribution::Gaussian { mean: 0.0, std });
        let w = self.group.add(format!("{name}.w"), w, WEIGHT_LR_MULT)?;
        let out = *shape.last().unwrap();
        let b = self
            .group
            .add(format!("{name}.b"), Tensor::zeros(&[out]), BIAS_LR_MULT)?;
        Ok(Layer { w, b })
    }

    fn dense(&mut self, name: &str, din: usize, dout: usize, std: Option<f64>) -> Result<Layer> {
        self.layer(name, &[din, dout], din, std)
    }
}

impl Multinet {
    /// Fresh network. Backbone and hidden dense layers use He
    /// initialisation; score layers `N(0, 0.01²)`, box layers
    /// `N(0, 0.001²)`, the bottleneck `N(0, 0.01²)`; biases start at 0.
    pub fn new(task: TaskConfig, arch: ArchConfig, seed: u64) -> Result<Self> {
        task.validate()?;
        arch.validate()?;
        let mut rng = SeedStream::derived(seed, 0x6d6e);
        let mut init = Init {
            group: ParamGroup::new(),
            rng: &mut rng,
        };

        let prefixes: Vec<String> = if task.mode == Mode::Independent {
            task.tasks
                .iter()
                .map(|t| format!("{}.img", t.as_str()))
                .collect()
        } else {
            vec!["img".into()]
        };
        let mut backbones = Vec::new();
        for prefix in &prefixes {
            let mut layers = Vec::new();
            let mut cin = 3;
            for (i, &cout) in arch
                .conv_channels
                .iter()
                .chain([&arch.channels])
                .enumerate()
            {
                layers.push(init.layer(
                    &format!("{prefix}.conv{}", i + 1),
                    &[3, 3, cin, cout],
                    9 * cin,
                    None,
                )?);
                cin = cout;
            }
            backbones.push(layers);
        }

        let c = arch.channels;
        let rep_channels = if task.mode == Mode::Update1 {
            c + task.task_channels()
        } else {
            c
        };
        let (d, g) = (arch.hidden, arch.spp_grid);
        let mut heads: [Option<(Head, usize)>; 3] = [None, None, None];
        for (bi, t) in task.tasks.iter().enumerate() {
            let name = t.as_str();
            let backbone = if task.mode == Mode::Independent {
                bi
            } else {
                0
            };
            let head = match t {
                Task::Cls => Head {
                    fc6: init.dense(&format!("{name}.fc6"), rep_channels, d, None)?,
                    fc7: init.dense(&format!("{name}.fc7"), d, d, None)?,
                    score: init.dense(&format!("{name}.score"), d, task.n_cls, Some(SCORE_STD))?,
                    bbox: None,
                },
                Task::Det | Task::Part => {
                    let k1 = task.encoded_channels(t);
                    Head {
                        fc6: init.dense(&format!("{name}.fc6"), g * g * rep_channels, d, None)?,
                        fc7: init.dense(&format!("{name}.fc7"), d, d, None)?,
                        score: init.dense(&format!("{name}.score"), d, k1, Some(SCORE_STD))?,
                        bbox: Some(init.dense(
                            &format!("{name}.bbox"),
                            d,
                            4 * k1,
                            Some(BBOX_STD),
                        )?),
                    }
                }
            };
            heads[slot(t)] = Some((head, backbone));
        }
        let bottleneck = if task.mode == Mode::Update2 {
            let cin = 2 * c + task.task_channels();
            Some(init.layer("bottleneck", &[1, 1, cin, c], cin, Some(BOTTLENECK_STD))?)
        } else {
            None
        };
        let params = init.group;
        Ok(Self {
            task,
            arch,
            params,
            idx: Indices {
                backbones,
                heads,
                bottleneck,
                rep_channels,
            },
        })
    }

    pub fn task_config(&self) -> &TaskConfig {
        &self.task
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn mode(&self) -> Mode {
        self.task.mode
    }

    pub fn tasks(&self) -> TaskSet {
        self.task.tasks
    }

    pub fn params(&self) -> &ParamGroup {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamGroup {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Channels of the representation the decoders read.
    pub fn rep_channels(&self) -> usize {
        self.idx.rep_channels
    }

    /// Same parameters under another mode. Allowed when the parameter
    /// layout supports it: `shared` runs any single-backbone network at
    /// `t = 0` (zero task channels for an `update1` layout); `update1`
    /// needs decoders over stacked channels; `update2` needs `A`.
    pub fn with_mode(&self, mode: Mode) -> Result<Self> {
        let c = self.arch.channels;
        let ok = match mode {
            Mode::Independent => self.task.mode == Mode::Independent,
            Mode::Shared => self.task.mode != Mode::Independent,
            Mode::Update1 => self.idx.rep_channels == c + self.task.task_channels(),
            Mode::Update2 => self.idx.bottleneck.is_some(),
        };
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "parameters built for {} cannot run as {mode}",
                self.task.mode
            )));
        }
        let mut out = self.clone();
        out.task.mode = mode;
        Ok(out)
    }

    fn conv(&self, p: &[Var], l: Layer, padding: usize) -> ConvLayer {
        ConvLayer {
            filters: p[l.w],
            bias: p[l.b],
            stride: 1,
            padding,
        }
    }

    fn fc(p: &[Var], l: Layer) -> FCLayer {
        FCLayer {
            weight: p[l.w],
            bias: p[l.b],
        }
    }

    fn head(&self, task: Task) -> Result<&(Head, usize)> {
        self.idx.heads[slot(task)]
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("task {} is not enabled", task.as_str())))
    }

    /// Image encoder: 3×3 convolutions with ReLU, each but the last
    /// followed by 2×2 max pooling. Output is `H/s × W/s × C`.
    pub fn encode_image(
        &self,
        tape: &mut Tape,
        p: &[Var],
        image: Var,
        backbone: usize,
    ) -> Result<Var> {
        let shape = tape.shape(image).to_vec();
        if shape != [self.arch.height, self.arch.width, 3] {
            return Err(Error::ShapeMismatch {
                op: "encode_image",
                left: shape,
                right: vec![self.arch.height, self.arch.width, 3],
            });
        }
        let layers = &self.idx.backbones[backbone];
        let mut x = image;
        for (i, &l) in layers.iter().enumerate() {
            x = tape.conv2d(x, &self.conv(p, l, 1))?;
            x = tape.relu(x);
            if i + 1 < layers.len() {
                x = tape.max_pool2d(x, 2, 2)?;
            }
        }
        Ok(x)
    }

    /// Global max pool, two ReLU dense layers, sigmoid.
    pub fn decode_cls(&self, tape: &mut Tape, p: &[Var], h: Var) -> Result<Var> {
        let (head, _) = self.head(Task::Cls)?;
        let x = tape.global_max_pool(h)?;
        let x = tape.fully_connected(x, &Self::fc(p, head.fc6))?;
        let x = tape.relu(x);
        let x = tape.fully_connected(x, &Self::fc(p, head.fc7))?;
        let x = tape.relu(x);
        let x = tape.fully_connected(x, &Self::fc(p, head.score))?;
        Ok(tape.sigmoid(x))
    }

    /// SPP per region, two ReLU dense layers, then softmax scores and
    /// linear box deltas.
    pub fn decode_regions(
        &self,
        tape: &mut Tape,
        p: &[Var],
        h: Var,
        boxes: &[BBox],
        task: Task,
    ) -> Result<(Var, Var)> {
        if task == Task::Cls {
            return Err(Error::InvalidArgument(
                "decode_regions: cls is not a region task".into(),
            ));
        }
        let (head, _) = self.head(task)?;
        let grid = SppGrid {
            grid: self.arch.spp_grid,
            feature_stride: self.arch.feature_stride(),
        };
        let x = tape.spp_pool(h, boxes, grid)?;
        let x = tape.fully_connected(x, &Self::fc(p, head.fc6))?;
        let x = tape.relu(x);
        let x = tape.fully_connected(x, &Self::fc(p, head.fc7))?;
        let x = tape.relu(x);
        let s = tape.fully_connected(x, &Self::fc(p, head.score))?;
        let s = tape.softmax_rows(s)?;
        let d = tape.fully_connected(x, &Self::fc(p, head.bbox.unwrap()))?;
        Ok((s, d))
    }

    /// `h = stack(r_img, r_cls, r_det, r_part)` over enabled tasks.
    pub fn integrate_stack(&self, tape: &mut Tape, r_img: Var, encoded: &[Var]) -> Result<Var> {
        let mut parts = vec![r_img];
        parts.extend_from_slice(encoded);
        tape.stack_channels(&parts)
    }

    /// `h = relu(A ∗ stack(h_prev, r_img, r_cls, r_det, r_part))`.
    pub fn integrate_bottleneck(
        &self,
        tape: &mut Tape,
        p: &[Var],
        h_prev: Var,
        r_img: Var,
        encoded: &[Var],
    ) -> Result<Var> {
        let a = self
            .idx
            .bottleneck
            .ok_or_else(|| Error::InvalidArgument("no bottleneck in these parameters".into()))?;
        let mut parts = vec![h_prev, r_img];
        parts.extend_from_slice(encoded);
        let s = tape.stack_channels(&parts)?;
        let y = tape.conv2d(s, &self.conv(p, a, 0))?;
        Ok(tape.relu(y))
    }

    /// Re-encodes one iteration's predictions (or the grounding truth) as
    /// maps on the feature grid, in task order.
    pub fn encode_step(
        &self,
        tape: &mut Tape,
        step: &StepVars,
        boxes: &[BBox],
        truncate: bool,
        grounding: Option<&Grounding>,
    ) -> Result<Vec<Var>> {
        let (fh, fw) = self.arch.feature_dims();
        let stride = self.arch.feature_stride();
        let mut out = Vec::new();
        for task in self.task.tasks.iter() {
            let ground = grounding.filter(|g| g.task() == task);
            let label = match (ground, task) {
                (Some(Grounding::Cls(v)), _) => {
                    if v.len() != self.task.n_cls {
                        return Err(Error::ShapeMismatch {
                            op: "ground_label",
                            left: vec![v.len()],
                            right: vec![self.task.n_cls],
                        });
                    }
                    tape.constant(Tensor::from_vec(v.clone()))
                }
                (Some(Grounding::Det(t) | Grounding::Part(t)), _) => {
                    let want = [boxes.len(), self.task.encoded_channels(task)];
                    if t.shape() != want {
                        return Err(Error::ShapeMismatch {
                            op: "ground_label",
                            left: t.shape().to_vec(),
                            right: want.to_vec(),
                        });
                    }
                    tape.constant(t.clone())
                }
                (None, Task::Cls) => step.cls.unwrap(),
                (None, Task::Det) => step.det.unwrap().0,
                (None, Task::Part) => step.part.unwrap().0,
            };
            let label = if truncate { tape.detach(label) } else { label };
            out.push(match task {
                Task::Cls => tape.encode_cls(label, fh, fw)?,
                Task::Det | Task::Part => tape.encode_regions(label, boxes, fh, fw, stride)?,
            });
        }
        Ok(out)
    }

    fn decode_all(
        &self,
        tape: &mut Tape,
        p: &[Var],
        reps: Vec<Var>,
        boxes: &[BBox],
    ) -> Result<StepVars> {
        let mut step = StepVars {
            reps,
            cls: None,
            det: None,
            part: None,
        };
        for task in self.task.tasks.iter() {
            let (_, b) = self.head(task)?;
            let h = step.reps[*b];
            match task {
                Task::Cls => step.cls = Some(self.decode_cls(tape, p, h)?),
                Task::Det => step.det = Some(self.decode_regions(tape, p, h, boxes, task)?),
                Task::Part => step.part = Some(self.decode_regions(tape, p, h, boxes, task)?),
            }
        }
        Ok(step)
    }

    /// Records the unrolled network on `tape`. Returns `T + 1` steps for
    /// recurrent modes and one step otherwise; `t = 0` is ordinary
    /// multi-task prediction with all task channels at 0.
    pub fn forward_on(
        &self,
        tape: &mut Tape,
        image: &Tensor,
        regions: &RegionSet,
        opts: &ForwardOptions,
        requires_grad: bool,
    ) -> Result<ForwardPass> {
        let params = self.params.load(tape, requires_grad);
        self.unroll(tape, params, image, regions, opts)
    }

    /// [`forward_on`](Self::forward_on) with parameters already on the
    /// tape, in group order.
    pub fn unroll(
        &self,
        tape: &mut Tape,
        params: Vec<Var>,
        image: &Tensor,
        regions: &RegionSet,
        opts: &ForwardOptions,
    ) -> Result<ForwardPass> {
        if params.len() != self.params.len() {
            return Err(Error::InvalidArgument(format!(
                "forward: {} parameters supplied, network has {}",
                params.len(),
                self.params.len()
            )));
        }
        if regions.is_empty() {
            return Err(Error::InvalidArgument("forward: empty region set".into()));
        }
        if let Some(g) = &opts.grounding {
            if !self.task.mode.is_recurrent() || opts.iterations == 0 {
                return Err(Error::InvalidArgument(format!(
                    "grounding needs a recurrent mode and T ≥ 1 (mode {}, T = {})",
                    self.task.mode, opts.iterations
                )));
            }
            self.head(g.task())?;
        }
        let boxes = &regions.boxes;
        let p = &params[..];
        let img = tape.constant(image.clone());
        let r_img = (0..self.idx.backbones.len())
            .map(|b| self.encode_image(tape, p, img, b))
            .collect::<Result<Vec<_>>>()?;

        let c = self.arch.channels;
        let h0 = if self.idx.rep_channels > c {
            let (fh, fw) = self.arch.feature_dims();
            let zeros = tape.constant(Tensor::zeros(&[fh, fw, self.idx.rep_channels - c]));
            vec![tape.stack_channels(&[r_img[0], zeros])?]
        } else {
            r_img.clone()
        };
        let mut steps = vec![self.decode_all(tape, p, h0, boxes)?];

        for t in 1..=self.task.effective_iterations(opts.iterations) {
            let prev = &steps[t - 1];
            let ground = if t == 1 {
                opts.grounding.as_ref()
            } else {
                None
            };
            let encoded = self.encode_step(tape, prev, boxes, opts.truncate, ground)?;
            let h = match self.task.mode {
                Mode::Update1 => self.integrate_stack(tape, r_img[0], &encoded)?,
                Mode::Update2 => {
                    let h_prev = if opts.truncate {
                        tape.detach(prev.reps[0])
                    } else {
                        prev.reps[0]
                    };
                    self.integrate_bottleneck(tape, p, h_prev, r_img[0], &encoded)?
                }
                Mode::Shared | Mode::Independent => {
                    unreachable!("non-recurrent modes stop at t = 0")
                }
            };
            steps.push(self.decode_all(tape, p, vec![h], boxes)?);
        }
        Ok(ForwardPass {
            params,
            r_img,
            steps,
        })
    }

    /// Inference: outputs for `t = 0..=T` (only `t = 0` in non-recurrent
    /// modes).
    pub fn predict(
        &self,
        image: &Tensor,
        regions: &RegionSet,
        iterations: usize,
    ) -> Result<Vec<MultinetOutput>> {
        let mut tape = Tape::new();
        let pass = self.forward_on(
            &mut tape,
            image,
            regions,
            &ForwardOptions::new(iterations),
            false,
        )?;
        Ok(pass.outputs(&tape))
    }

    /// Replaces one task's label with `truth` at the first re-encoding and
    /// returns the outputs of `t = 0` and `t = 1`.
    pub fn ground_label(
        &self,
        image: &Tensor,
        regions: &RegionSet,
        truth: Grounding,
    ) -> Result<Vec<MultinetOutput>> {
        let opts = ForwardOptions {
            iterations: 1,
            truncate: false,
            grounding: Some(truth),
        };
        let mut tape = Tape::new();
        let pass = self.forward_on(&mut tape, image, regions, &opts, false)?;
        Ok(pass.outputs(&tape))
    }
}
