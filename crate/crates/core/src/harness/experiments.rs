use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::checkpoint::save_checkpoint;
use super::config::RunConfig;
use super::train::{write_loss_curve, Prepared, Trainer};
use crate::error::{Error, Result};
use crate::multinet::{ForwardOptions, Grounding, Mode, Multinet, MultinetOutput};
use crate::synthdata::{generate_scenes, write_dataset, SceneSpec};
use crate::tasks::{evaluate, EvalConfig, ImagePrediction, MetricRow, Metrics, SceneTruth};
use crate::tensor::Tape;

/// Headline metric names, in table order.
pub const METRIC_NAMES: [&str; 3] = ["cls-mAP", "det-AP@0.5", "part-AP@0.4"];

pub fn headline(m: &Metrics) -> [Option<f64>; 3] {
    [m.cls_map(), m.det_ap(), m.part_ap()]
}

/// Scene spec from TOML; missing keys take their defaults.
pub fn parse_scene_spec(text: &str) -> Result<SceneSpec> {
    let spec: SceneSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

/// Writes `count` scenes of `spec` to `out`.
pub fn cmd_generate(spec: &SceneSpec, count: usize, out: impl AsRef<Path>) -> Result<()> {
    spec.validate()?;
    let scenes = generate_scenes(spec, 0, count)?;
    write_dataset(out, spec, &scenes)
}

/// Outputs for `t = 0..=T` on every scene.
pub fn predict_all(
    net: &Multinet,
    data: &Prepared,
    iterations: usize,
) -> Result<Vec<Vec<MultinetOutput>>> {
    data.examples
        .iter()
        .map(|ex| net.predict(&ex.image, &ex.regions, iterations))
        .collect()
}

fn eval_config(net: &Multinet) -> EvalConfig {
    let t = net.task_config();
    EvalConfig::new(t.n_cls, t.n_part)
}

fn truths(data: &Prepared) -> Vec<SceneTruth> {
    data.examples.iter().map(|e| e.truth.clone()).collect()
}

/// Metrics of the final iteration at depth `iterations`.
pub fn evaluate_model(net: &Multinet, data: &Prepared, iterations: usize) -> Result<Metrics> {
    let outs = predict_all(net, data, iterations)?;
    let last: Vec<ImagePrediction> = outs.into_iter().map(|mut o| o.pop().unwrap()).collect();
    evaluate(&last, &truths(data), &eval_config(net))
}

/// One row per headline metric plus one per class.
pub fn metric_rows(
    run_id: &str,
    mode: Mode,
    iterations: usize,
    seed: u64,
    m: &Metrics,
) -> Vec<MetricRow> {
    let mut rows = Vec::new();
    let per_class = ["cls-AP", "det-AP", "part-AP"];
    for (i, aps) in [&m.cls, &m.det, &m.part].into_iter().enumerate() {
        let Some(aps) = aps else { continue };
        let row = |metric: &str, class: String, value: f64| MetricRow {
            run_id: run_id.to_string(),
            mode: mode.as_str().to_string(),
            iterations,
            seed,
            metric: metric.to_string(),
            class,
            value,
        };
        rows.push(row(METRIC_NAMES[i], "all".into(), aps.mean()));
        for (c, &v) in aps.per_class.iter().enumerate() {
            rows.push(row(per_class[i], c.to_string(), v));
        }
    }
    rows
}

/// Trains one configuration from scratch, writing the checkpoint and
/// loss curve into `out_dir` when given.
pub fn cmd_train(
    cfg: &RunConfig,
    seed: u64,
    train: &Prepared,
    out_dir: Option<&Path>,
) -> Result<Trainer> {
    let mut tr = Trainer::new(cfg.clone(), seed, train.task_config(cfg))?;
    tr.run(train, None, |_| Ok(()))?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        save_checkpoint(dir.join("model.mnck"), &tr)?;
        write_loss_curve(fs::File::create(dir.join("loss_curve.csv"))?, &tr.history)?;
    }
    Ok(tr)
}

/// Evaluates a trained network at its configured depth.
pub fn cmd_eval(tr: &Trainer, data: &Prepared, run_id: &str) -> Result<Vec<MetricRow>> {
    let t = tr.net.task_config().effective_iterations(tr.cfg.iterations);
    let m = evaluate_model(&tr.net, data, t)?;
    Ok(metric_rows(run_id, tr.net.mode(), t, tr.seed, &m))
}

/// Headline metrics per seed for one mode.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub mode: Mode,
    pub per_seed: Vec<[Option<f64>; 3]>,
}

impl ComparisonRow {
    pub fn median(&self, metric: usize) -> Option<f64> {
        let vals: Option<Vec<f64>> = self.per_seed.iter().map(|s| s[metric]).collect();
        vals.map(|v| median(&v))
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub seeds: Vec<u64>,
    pub rows: Vec<ComparisonRow>,
    /// Every per-class and headline metric of every run.
    pub metrics: Vec<MetricRow>,
}

impl Comparison {
    pub fn row(&self, mode: Mode) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }

    /// Long-format table: `mode, metric, seed-<s>…, median`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Config(e.to_string());
        let mut header = vec!["mode".to_string(), "metric".to_string()];
        header.extend(self.seeds.iter().map(|s| format!("seed-{s}")));
        header.push("median".into());
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.rows {
            for (i, name) in METRIC_NAMES.iter().enumerate() {
                let mut rec = vec![r.mode.as_str().to_string(), name.to_string()];
                rec.extend(r.per_seed.iter().map(|s| fmt_opt(s[i])));
                rec.push(fmt_opt(r.median(i)));
                w.write_record(&rec).map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// One row per mode, one column per metric (median over seeds).
    pub fn to_markdown(&self) -> String {
        let mut s =
            String::from("| mode | cls mAP | det AP@0.5 | part AP@0.4 |\n|---|---|---|---|\n");
        for r in &self.rows {
            let cells: Vec<String> = (0..3)
                .map(|i| {
                    r.median(i)
                        .map_or("-".into(), |v| format!("{:.1}", 100.0 * v))
                })
                .collect();
            let _ = writeln!(s, "| {} | {} |", r.mode, cells.join(" | "));
        }
        s
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| format!("{v}"))
}

/// Trains every mode on every seed and evaluates each on `val`.
pub fn cmd_compare(
    cfg: &RunConfig,
    train: &Prepared,
    val: &Prepared,
    modes: &[Mode],
    mut progress: impl FnMut(Mode, u64, &Metrics),
) -> Result<(Comparison, Vec<Trainer>)> {
    let mut rows = Vec::new();
    let mut metrics = Vec::new();
    let mut trained = Vec::new();
    for &mode in modes {
        let mut per_seed = Vec::new();
        for &seed in &cfg.seeds {
            let run_cfg = RunConfig {
                mode,
                ..cfg.clone()
            };
            let tr = cmd_train(&run_cfg, seed, train, None)?;
            let t = tr
                .net
                .task_config()
                .effective_iterations(run_cfg.iterations);
            let m = evaluate_model(&tr.net, val, t)?;
            progress(mode, seed, &m);
            metrics.extend(metric_rows(&format!("{mode}-{seed}"), mode, t, seed, &m));
            per_seed.push(headline(&m));
            trained.push(tr);
        }
        rows.push(ComparisonRow { mode, per_seed });
    }
    Ok((
        Comparison {
            seeds: cfg.seeds.clone(),
            rows,
            metrics,
        },
        trained,
    ))
}

/// Paired metrics with and without the ground-truth class label
/// substituted at the first re-encoding.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundingResult {
    pub ungrounded: Metrics,
    pub grounded: Metrics,
}

impl GroundingResult {
    pub fn deltas(&self) -> [Option<f64>; 3] {
        let (a, b) = (headline(&self.ungrounded), headline(&self.grounded));
        [0, 1, 2].map(|i| Some(b[i]? - a[i]?))
    }
}

/// Which label replaces the prediction in [`cmd_ground_experiment`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroundSource {
    Truth,
    /// The network's own `t = 0` prediction; the result must equal the
    /// ungrounded run.
    OwnPrediction,
}

/// Runs both conditions at the network's trained depth. Needs a recurrent
/// network with `T ≥ 1`.
pub fn cmd_ground_experiment(
    net: &Multinet,
    iterations: usize,
    data: &Prepared,
    source: GroundSource,
) -> Result<GroundingResult> {
    if !net.mode().is_recurrent() || iterations == 0 {
        return Err(Error::InvalidArgument(format!(
            "grounding needs a recurrent checkpoint with T ≥ 1 (mode {}, T = {iterations})",
            net.mode()
        )));
    }
    if !net.tasks().cls {
        return Err(Error::InvalidArgument(
            "grounding needs the cls task".into(),
        ));
    }
    let mut plain = Vec::new();
    let mut grounded = Vec::new();
    for ex in &data.examples {
        let outs = net.predict(&ex.image, &ex.regions, iterations)?;
        let label = match source {
            GroundSource::Truth => ex.truth.img_label.clone(),
            GroundSource::OwnPrediction => outs[0].cls.clone().unwrap(),
        };
        let opts = ForwardOptions {
            iterations,
            truncate: false,
            grounding: Some(Grounding::Cls(label)),
        };
        let mut tape = Tape::new();
        let pass = net.forward_on(&mut tape, &ex.image, &ex.regions, &opts, false)?;
        grounded.push(pass.outputs(&tape).pop().unwrap());
        plain.push(outs.into_iter().last().unwrap());
    }
    let (t, cfg) = (truths(data), eval_config(net));
    Ok(GroundingResult {
        ungrounded: evaluate(&plain, &t, &cfg)?,
        grounded: evaluate(&grounded, &t, &cfg)?,
    })
}

/// Metrics of the same network read out at every `t = 0..=T_max`.
pub fn cmd_recurrence_sweep(net: &Multinet, data: &Prepared, t_max: usize) -> Result<Vec<Metrics>> {
    if t_max < 2 {
        return Err(Error::InvalidArgument(format!(
            "sweep needs T_max ≥ 2, got {t_max}"
        )));
    }
    if !net.mode().is_recurrent() {
        return Err(Error::InvalidArgument(format!(
            "sweep needs a recurrent network, got {}",
            net.mode()
        )));
    }
    // Outputs at t do not depend on the unrolled depth, so one pass to
    // T_max gives the whole curve.
    let outs = predict_all(net, data, t_max)?;
    let (truth, cfg) = (truths(data), eval_config(net));
    (0..=t_max)
        .map(|t| {
            let preds: Vec<ImagePrediction> = outs.iter().map(|o| o[t].clone()).collect();
            evaluate(&preds, &truth, &cfg)
        })
        .collect()
}

/// `t, metric, value` rows of a sweep.
pub fn write_sweep_csv<W: Write>(out: W, curve: &[Metrics]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Config(e.to_string());
    w.write_record(["t", "metric", "value"]).map_err(csv_err)?;
    for (t, m) in curve.iter().enumerate() {
        for (name, v) in METRIC_NAMES.iter().zip(headline(m)) {
            if let Some(v) = v {
                w.write_record([t.to_string(), name.to_string(), v.to_string()])
                    .map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
