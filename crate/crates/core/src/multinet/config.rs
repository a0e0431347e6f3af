use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the shared representation is built and iterated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// One backbone per task, no recurrence.
    Independent,
    /// One shared backbone and independent heads; only `t = 0` is run.
    Shared,
    /// `h_t = stack(r_img, r_cls, r_det, r_part)`.
    #[default]
    Update1,
    /// `h_t = relu(A ∗ stack(h_{t−1}, r_img, r_cls, r_det, r_part))`.
    Update2,
}

impl Mode {
    pub const ALL: [Mode; 4] = [
        Mode::Independent,
        Mode::Shared,
        Mode::Update1,
        Mode::Update2,
    ];

    pub fn is_recurrent(self) -> bool {
        matches!(self, Mode::Update1 | Mode::Update2)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Independent => "independent",
            Mode::Shared => "shared",
            Mode::Update1 => "update1",
            Mode::Update2 => "update2",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown mode `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    Cls,
    Det,
    Part,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Cls, Task::Det, Task::Part];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Cls => "cls",
            Task::Det => "det",
            Task::Part => "part",
        }
    }
}

/// Which tasks a network carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSet {
    pub cls: bool,
    pub det: bool,
    pub part: bool,
}

impl Default for TaskSet {
    fn default() -> Self {
        Self::ALL
    }
}

impl TaskSet {
    pub const ALL: TaskSet = TaskSet {
        cls: true,
        det: true,
        part: true,
    };

    pub fn only(task: Task) -> Self {
        let mut s = TaskSet {
            cls: false,
            det: false,
            part: false,
        };
        s.set(task, true);
        s
    }

    pub fn has(&self, task: Task) -> bool {
        match task {
            Task::Cls => self.cls,
            Task::Det => self.det,
            Task::Part => self.part,
        }
    }

    pub fn set(&mut self, task: Task, on: bool) {
        match task {
            Task::Cls => self.cls = on,
            Task::Det => self.det = on,
            Task::Part => self.part = on,
        }
    }

    pub fn iter(self) -> impl Iterator<Item = Task> {
        Task::ALL.into_iter().filter(move |t| self.has(*t))
    }

    pub fn count(&self) -> usize {
        self.iter().count()
    }
}

/// Label-space sizes, recursion depth and mode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub n_cls: usize,
    pub n_part: usize,
    /// Region proposals per image.
    pub n_regions: usize,
    pub iterations: usize,
    pub mode: Mode,
    pub tasks: TaskSet,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            n_cls: 5,
            n_part: 10,
            n_regions: 64,
            iterations: 2,
            mode: Mode::Update1,
            tasks: TaskSet::ALL,
        }
    }
}

impl TaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_cls == 0 || self.n_regions == 0 {
            return Err(Error::InvalidArgument(format!(
                "task config needs n_cls ≥ 1 and n_regions ≥ 1, got {self:?}"
            )));
        }
        if self.tasks.part && self.n_part == 0 {
            return Err(Error::InvalidArgument(
                "part task enabled with n_part = 0".into(),
            ));
        }
        if self.tasks.count() == 0 {
            return Err(Error::InvalidArgument("no task enabled".into()));
        }
        Ok(())
    }

    /// Channels the enabled task encoders add to the stacked representation.
    pub fn task_channels(&self) -> usize {
        self.tasks.iter().map(|t| self.encoded_channels(t)).sum()
    }

    pub fn encoded_channels(&self, task: Task) -> usize {
        match task {
            Task::Cls => self.n_cls,
            Task::Det => self.n_cls + 1,
            Task::Part => self.n_part + 1,
        }
    }

    /// Recursion depth actually run: non-recurrent modes stop at `t = 0`.
    pub fn effective_iterations(&self, requested: usize) -> usize {
        if self.mode.is_recurrent() {
            requested
        } else {
            0
        }
    }
}

/// Backbone and head sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub height: usize,
    pub width: usize,
    /// Output channels of the 3×3 convolutions before the last one; each
    /// is followed by 2×2 max pooling.
    pub conv_channels: Vec<usize>,
    /// Channels `C` of the image representation (last convolution).
    pub channels: usize,
    /// Width of the two hidden dense layers in every decoder.
    pub hidden: usize,
    pub spp_grid: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            conv_channels: vec![16, 32, 32],
            channels: 32,
            hidden: 64,
            spp_grid: 6,
        }
    }
}

impl ArchConfig {
    pub fn feature_stride(&self) -> usize {
        1 << self.conv_channels.len()
    }

    pub fn feature_dims(&self) -> (usize, usize) {
        let s = self.feature_stride();
        (self.height / s, self.width / s)
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.feature_stride();
        if self.height == 0 || self.width == 0 || !self.height.is_multiple_of(s) || !self.width.is_multiple_of(s) {
            return Err(Error::InvalidArgument(format!(
                "canvas {}×{} is not divisible by the backbone stride {s}",
                self.height, self.width
            )));
        }
        if self.channels == 0
            || self.hidden == 0
            || self.spp_grid == 0
            || self.conv_channels.contains(&0)
        {
            return Err(Error::InvalidArgument(format!(
                "zero-sized layer in {self:?}"
            )));
        }
        Ok(())
    }
}
