use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentKind;
use crate::error::{Error, Result};
use crate::online_adapt::ControllerKind;
use crate::trace::RolloutTrace;

/// Thresholds and windows used by the metrics, copied into every summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Definitions {
    /// cart-pole success band: |p| ≤ position, |θ| ≤ angle, |ṗ|, |θ̇| ≤ velocity,
    /// for every sample from the settle time to the end
    pub success_position: f64,
    pub success_angle: f64,
    pub success_velocity: f64,
    /// quadrotor regulation tolerance on the Euclidean (x, z) error
    pub position_tolerance: f64,
    /// seconds allowed to reach and then stay within the tolerance
    pub regulation_deadline: f64,
    /// trailing window of the steady-state error, seconds
    pub steady_window: f64,
    /// tracking error windows `[start, end)`, seconds
    pub early_window: [f64; 2],
    pub late_window: [f64; 2],
    pub bin_width: f64,
}

impl Default for Definitions {
    fn default() -> Self {
        Self {
            success_position: 0.1,
            success_angle: 0.05,
            success_velocity: 0.1,
            position_tolerance: 0.05,
            regulation_deadline: 4.0,
            steady_window: 1.0,
            early_window: [0.0, 5.0],
            late_window: [5.0, 15.0],
            bin_width: 0.1,
        }
    }
}

/// Written by every run next to its per-trial CSVs; lists what
/// [`aggregate`] reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: ExperimentKind,
    pub trials: usize,
    pub seed: u64,
    pub controllers: Vec<ControllerKind>,
    pub duration: f64,
    pub control_period: f64,
    pub record_wall_time: bool,
    pub definitions: Definitions,
    /// per controller kind, one closed-loop trace per trial (relative paths)
    #[serde(default)]
    pub traces: BTreeMap<String, Vec<PathBuf>>,
    /// prediction tables of the Van der Pol benchmark, one per trial
    #[serde(default)]
    pub predictions: Vec<PathBuf>,
}

pub const MANIFEST: &str = "manifest.json";
pub const SUMMARY: &str = "summary.json";

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(MANIFEST), self)
    }

    pub fn expected_rows(&self) -> usize {
        (self.duration / self.control_period).round() as usize
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Stat {
            mean,
            std: var.sqrt(),
            count: values.len(),
        })
    }
}

/// Linear-interpolated percentile, `p` in [0, 100].
pub fn percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = p / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub median: f64,
    pub p95: f64,
}

impl Percentiles {
    pub fn of(values: &[f64]) -> Option<Self> {
        Some(Self {
            median: percentile(values, 50.0)?,
            p95: percentile(values, 95.0)?,
        })
    }
}

/// Mean ± std over trials of per-trial bin averages.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BinnedSeries {
    pub t: Vec<f64>,
    pub series: BTreeMap<String, Band>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Band {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Per-trial values; fields not produced by the experiment are omitted.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub trial: usize,
    pub failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub settle_time: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steady_state_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steady_state_z_error: Option<f64>,
    /// censored at the trial duration when never reached
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_to_tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub early_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub late_error: Option<f64>,
    pub finetune_events: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finetune_improved: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct KindMetrics {
    pub trials: usize,
    pub failures: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rmse: Option<Stat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub settle_time: Option<Stat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steady_state_error: Option<Stat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steady_state_z_error: Option<Stat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_to_tolerance: Option<Stat>,
    /// fraction of trials settled within the tolerance by the deadline
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regulated_by_deadline: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub early_error: Option<Stat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub late_error: Option<Stat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<BinnedSeries>,
    pub per_trial: Vec<TrialMetrics>,
}

/// Reference figures from the original hardware, for comparison only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceThroughput {
    pub control_hz: [f64; 2],
    pub prediction_hz_nominal: f64,
    pub prediction_hz_learning: f64,
}

impl Default for ReferenceThroughput {
    fn default() -> Self {
        Self {
            control_hz: [45.0, 50.0],
            prediction_hz_nominal: 10500.0,
            prediction_hz_learning: 6200.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct KindThroughput {
    /// per-step solver time (closed loop) or per-window prediction time
    pub solve_ms: Option<Percentiles>,
    /// per fine-tune event; null when there were none
    pub ft_ms: Option<Percentiles>,
    /// 1000 / median solve time
    pub control_hz: Option<f64>,
    /// steps per second including amortized fine-tuning
    pub loop_hz: Option<f64>,
    /// model steps predicted per second (prediction benchmark)
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_steps_per_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub wall_time_recorded: bool,
    pub kinds: BTreeMap<String, KindThroughput>,
    pub reference: ReferenceThroughput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub experiment: ExperimentKind,
    pub trials: usize,
    pub seed: u64,
    pub definitions: Definitions,
    pub kinds: BTreeMap<String, KindMetrics>,
    /// trials on which meta < fresh < nominal in RMSE (prediction benchmark)
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ordering_holds: Option<usize>,
    pub throughput: Throughput,
}

impl MetricsSummary {
    pub fn kind(&self, kind: ControllerKind) -> Option<&KindMetrics> {
        self.kinds.get(kind.name())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(SUMMARY);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn err_vec(tr: &RolloutTrace, idx: usize) -> Vec<f64> {
    tr.rows.iter().map(|r| r.x_true[idx] - r.x_ref[idx]).collect()
}

/// Earliest time from which `ok` holds on every remaining row, if the trace
/// is complete and ends inside the band.
pub fn settle_time(tr: &RolloutTrace, expected_rows: usize, ok: impl Fn(usize) -> bool) -> Option<f64> {
    if tr.rows.len() < expected_rows || tr.rows.is_empty() {
        return None;
    }
    let mut first = None;
    for i in (0..tr.rows.len()).rev() {
        if ok(i) {
            first = Some(i);
        } else {
            break;
        }
    }
    first.map(|i| tr.rows[i].t)
}

/// Cart-pole success: inside the band from some time on.
pub fn cartpole_settle(tr: &RolloutTrace, expected_rows: usize, d: &Definitions) -> Option<f64> {
    let (p, v, th, w) = (err_vec(tr, 0), err_vec(tr, 1), err_vec(tr, 2), err_vec(tr, 3));
    settle_time(tr, expected_rows, |i| {
        p[i].abs() <= d.success_position
            && th[i].abs() <= d.success_angle
            && v[i].abs() <= d.success_velocity
            && w[i].abs() <= d.success_velocity
    })
}

/// Euclidean (x, z) distance to the reference per row.
pub fn position_error(tr: &RolloutTrace) -> Vec<f64> {
    let (ex, ez) = (err_vec(tr, 0), err_vec(tr, 2));
    ex.iter().zip(&ez).map(|(a, b)| a.hypot(*b)).collect()
}

fn window_mean(tr: &RolloutTrace, values: &[f64], [lo, hi]: [f64; 2]) -> Option<f64> {
    let eps = 1e-9;
    let picked: Vec<f64> = tr
        .rows
        .iter()
        .zip(values)
        .filter(|(r, _)| r.t >= lo - eps && r.t < hi - eps)
        .map(|(_, v)| *v)
        .collect();
    if picked.is_empty() {
        None
    } else {
        Some(picked.iter().sum::<f64>() / picked.len() as f64)
    }
}

fn binned(traces: &[RolloutTrace], duration: f64, width: f64, series: &[(&str, fn(&RolloutTrace) -> Vec<f64>)]) -> BinnedSeries {
    let bins = (duration / width).round().max(1.0) as usize;
    let mut out = BinnedSeries {
        t: (0..bins).map(|b| b as f64 * width).collect(),
        series: BTreeMap::new(),
    };
    for (name, f) in series {
        let mut band = Band::default();
        let per_trial: Vec<(Vec<f64>, &RolloutTrace)> = traces.iter().map(|tr| (f(tr), tr)).collect();
        for b in 0..bins {
            let (lo, hi) = (b as f64 * width - 1e-9, (b + 1) as f64 * width - 1e-9);
            let means: Vec<f64> = per_trial
                .iter()
                .filter_map(|(vals, tr)| {
                    let v: Vec<f64> = tr
                        .rows
                        .iter()
                        .zip(vals)
                        .filter(|(r, _)| r.t >= lo && r.t < hi)
                        .map(|(_, v)| *v)
                        .collect();
                    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
                })
                .collect();
            let s = Stat::of(&means);
            band.mean.push(s.map_or(f64::NAN, |s| s.mean));
            band.std.push(s.map_or(f64::NAN, |s| s.std));
        }
        out.series.insert(name.to_string(), band);
    }
    out
}

fn abs_err(idx: usize) -> impl Fn(&RolloutTrace) -> Vec<f64> {
    move |tr| err_vec(tr, idx).iter().map(|v| v.abs()).collect()
}

fn trace_throughput(traces: &[RolloutTrace], recorded: bool) -> KindThroughput {
    if !recorded {
        return KindThroughput::default();
    }
    let solve: Vec<f64> = traces
        .iter()
        .flat_map(|t| t.rows.iter().map(|r| r.solve_ms))
        .filter(|v| v.is_finite())
        .collect();
    let ft: Vec<f64> = traces
        .iter()
        .flat_map(|t| t.rows.iter().filter(|r| r.finetune_event).map(|r| r.ft_ms))
        .filter(|v| v.is_finite())
        .collect();
    let solve_p = Percentiles::of(&solve);
    let steps = solve.len() as f64;
    let total = solve.iter().sum::<f64>() + ft.iter().sum::<f64>();
    KindThroughput {
        solve_ms: solve_p,
        ft_ms: Percentiles::of(&ft),
        control_hz: solve_p.and_then(|p| (p.median > 0.0).then(|| 1000.0 / p.median)),
        loop_hz: (total > 0.0).then(|| 1000.0 * steps / total),
        predicted_steps_per_s: None,
    }
}

fn resolve(dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}

/// Recomputes the summary of the run in `dir` from its manifest and
/// per-trial CSVs, and writes `summary.json`.
pub fn aggregate(dir: &Path) -> Result<MetricsSummary> {
    let m = Manifest::load(dir)?;
    let summary = match m.experiment {
        ExperimentKind::VdpPredict => aggregate_predictions(dir, &m)?,
        ExperimentKind::MetaTrain => {
            return Err(Error::Config("meta-training runs have no trial files to aggregate".into()))
        }
        _ => aggregate_traces(dir, &m)?,
    };
    write_json(&dir.join(SUMMARY), &summary)?;
    Ok(summary)
}

fn aggregate_traces(dir: &Path, m: &Manifest) -> Result<MetricsSummary> {
    let d = &m.definitions;
    let expected = m.expected_rows();
    let mut kinds = BTreeMap::new();
    let mut throughput = BTreeMap::new();
    for kind in &m.controllers {
        let files = m
            .traces
            .get(kind.name())
            .ok_or_else(|| Error::Config(format!("manifest lists no traces for {}", kind.name())))?;
        if files.is_empty() {
            return Err(Error::Config(format!("no trial files for {}", kind.name())));
        }
        let mut traces = Vec::with_capacity(files.len());
        for f in files {
            let path = resolve(dir, f);
            let tr = RolloutTrace::read_csv(&path)?;
            let n = match m.experiment {
                ExperimentKind::CartpoleStab => 4,
                _ => 6,
            };
            if tr.state_dim != n {
                return Err(Error::Ingestion {
                    file: path,
                    column: "x_true".into(),
                    msg: format!("expected {n} state columns, found {}", tr.state_dim),
                });
            }
            traces.push(tr);
        }
        let mut km = KindMetrics {
            trials: traces.len(),
            ..Default::default()
        };
        for (i, tr) in traces.iter().enumerate() {
            let failed = tr.rows.len() < expected;
            let mut t = TrialMetrics {
                trial: i,
                failed,
                finetune_events: tr.finetune_events(),
                ..Default::default()
            };
            match m.experiment {
                ExperimentKind::CartpoleStab => {
                    let s = cartpole_settle(tr, expected, d);
                    t.success = Some(s.is_some());
                    t.settle_time = s;
                }
                ExperimentKind::QuadStab => {
                    let e = position_error(tr);
                    if !failed {
                        let win = [m.duration - d.steady_window, m.duration + 1.0];
                        t.steady_state_error = window_mean(tr, &e, win);
                        let ez = abs_err(2)(tr);
                        t.steady_state_z_error = window_mean(tr, &ez, win);
                    }
                    t.time_to_tolerance =
                        Some(settle_time(tr, expected, |k| e[k] < d.position_tolerance).unwrap_or(m.duration));
                }
                ExperimentKind::QuadTrack => {
                    if !failed {
                        let e = position_error(tr);
                        t.early_error = window_mean(tr, &e, d.early_window);
                        t.late_error = window_mean(tr, &e, d.late_window);
                    }
                }
                _ => unreachable!("trace experiments only"),
            }
            km.per_trial.push(t);
        }
        km.failures = km.per_trial.iter().filter(|t| t.failed).count();
        let collect = |f: fn(&TrialMetrics) -> Option<f64>| -> Vec<f64> { km.per_trial.iter().filter_map(f).collect() };
        match m.experiment {
            ExperimentKind::CartpoleStab => {
                let ok = km.per_trial.iter().filter(|t| t.success == Some(true)).count();
                km.success_rate = Some(ok as f64 / km.trials as f64);
                km.settle_time = Stat::of(&collect(|t| t.settle_time));
                km.bins = Some(binned(
                    &traces,
                    m.duration,
                    d.bin_width,
                    &[("abs_p", |tr| abs_err(0)(tr)), ("abs_theta", |tr| abs_err(2)(tr))],
                ));
            }
            ExperimentKind::QuadStab | ExperimentKind::QuadTrack => {
                if m.experiment == ExperimentKind::QuadStab {
                    km.steady_state_error = Stat::of(&collect(|t| t.steady_state_error));
                    km.steady_state_z_error = Stat::of(&collect(|t| t.steady_state_z_error));
                    let tt = collect(|t| t.time_to_tolerance);
                    km.time_to_tolerance = Stat::of(&tt);
                    let within = km
                        .per_trial
                        .iter()
                        .filter(|t| !t.failed && t.time_to_tolerance.is_some_and(|v| v <= d.regulation_deadline))
                        .count();
                    km.regulated_by_deadline = Some(within as f64 / km.trials as f64);
                } else {
                    km.early_error = Stat::of(&collect(|t| t.early_error));
                    km.late_error = Stat::of(&collect(|t| t.late_error));
                }
                km.bins = Some(binned(
                    &traces,
                    m.duration,
                    d.bin_width,
                    &[
                        ("abs_x", |tr| abs_err(0)(tr)),
                        ("abs_z", |tr| abs_err(2)(tr)),
                        ("euclidean", position_error),
                    ],
                ));
            }
            _ => unreachable!(),
        }
        throughput.insert(kind.name().to_string(), trace_throughput(&traces, m.record_wall_time));
        kinds.insert(kind.name().to_string(), km);
    }
    Ok(MetricsSummary {
        experiment: m.experiment,
        trials: m.trials,
        seed: m.seed,
        definitions: m.definitions.clone(),
        kinds,
        ordering_holds: None,
        throughput: Throughput {
            wall_time_recorded: m.record_wall_time,
            kinds: throughput,
            reference: ReferenceThroughput::default(),
        },
    })
}

/// Columns of a CSV by header name.
pub struct CsvTable {
    pub path: PathBuf,
    pub header: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::Ingestion {
            file: path.to_path_buf(),
            column: "-".into(),
            msg: e.to_string(),
        })?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let mut columns = vec![Vec::new(); header.len()];
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::Ingestion {
                file: path.to_path_buf(),
                column: "-".into(),
                msg: e.to_string(),
            })?;
            for (i, field) in rec.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| Error::Ingestion {
                    file: path.to_path_buf(),
                    column: header[i].clone(),
                    msg: format!("not a number: {field:?}"),
                })?;
                columns[i].push(v);
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            header,
            columns,
        })
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.header
            .iter()
            .position(|h| h == name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| Error::Ingestion {
                file: self.path.clone(),
                column: name.to_string(),
                msg: "missing column".into(),
            })
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }
}

/// Root mean square of pooled errors.
pub fn rmse(errors: &[f64]) -> f64 {
    (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
}

fn aggregate_predictions(dir: &Path, m: &Manifest) -> Result<MetricsSummary> {
    if m.predictions.is_empty() {
        return Err(Error::Config("manifest lists no prediction files".into()));
    }
    let tables: Vec<CsvTable> = m
        .predictions
        .iter()
        .map(|p| CsvTable::read(&resolve(dir, p)))
        .collect::<Result<_>>()?;
    let mut kinds = BTreeMap::new();
    let mut throughput = BTreeMap::new();
    let mut per_kind_rmse: BTreeMap<ControllerKind, Vec<f64>> = BTreeMap::new();
    for kind in &m.controllers {
        let name = kind.name();
        let mut km = KindMetrics {
            trials: tables.len(),
            ..Default::default()
        };
        let mut predict_ms = Vec::new();
        let mut ft_ms = Vec::new();
        let mut steps = 0usize;
        for (i, tab) in tables.iter().enumerate() {
            let step = tab.column("step")?;
            let mut errors = Vec::new();
            for c in 0..2 {
                let truth = tab.column(&format!("x_true[{c}]"))?;
                let pred = tab.column(&format!("{name}[{c}]"))?;
                for r in 0..tab.rows() {
                    if step[r] > 0.0 {
                        errors.push(pred[r] - truth[r]);
                    }
                }
            }
            let pm = tab.column(&format!("{name}_predict_ms"))?;
            let fm = tab.column(&format!("{name}_ft_ms"))?;
            let before = tab.column(&format!("{name}_ft_loss_before"))?;
            let after = tab.column(&format!("{name}_ft_loss_after"))?;
            let mut events = 0;
            let mut improved = 0;
            for r in 0..tab.rows() {
                if step[r] == 0.0 {
                    predict_ms.push(pm[r]);
                    if fm[r].is_finite() {
                        ft_ms.push(fm[r]);
                    }
                    if before[r].is_finite() {
                        events += 1;
                        if after[r] < before[r] {
                            improved += 1;
                        }
                    }
                } else {
                    steps += 1;
                }
            }
            let failed = errors.iter().any(|e| !e.is_finite());
            let value = rmse(&errors);
            km.per_trial.push(TrialMetrics {
                trial: i,
                failed,
                rmse: Some(value),
                finetune_events: events,
                finetune_improved: (*kind != ControllerKind::Nominal).then_some(improved),
                ..Default::default()
            });
            per_kind_rmse.entry(*kind).or_default().push(value);
        }
        km.failures = km.per_trial.iter().filter(|t| t.failed).count();
        km.rmse = Stat::of(&per_kind_rmse[kind]);
        let tp = if m.record_wall_time {
            let p = Percentiles::of(&predict_ms);
            let total: f64 = predict_ms.iter().sum();
            KindThroughput {
                solve_ms: p,
                ft_ms: Percentiles::of(&ft_ms),
                control_hz: p.and_then(|p| (p.median > 0.0).then(|| 1000.0 / p.median)),
                loop_hz: None,
                predicted_steps_per_s: (total > 0.0).then(|| 1000.0 * steps as f64 / total),
            }
        } else {
            KindThroughput::default()
        };
        throughput.insert(name.to_string(), tp);
        kinds.insert(name.to_string(), km);
    }
    let ordering_holds = match (
        per_kind_rmse.get(&ControllerKind::Nominal),
        per_kind_rmse.get(&ControllerKind::ResidualMlp),
        per_kind_rmse.get(&ControllerKind::MetaMlp),
    ) {
        (Some(n), Some(f), Some(me)) => Some((0..n.len()).filter(|&i| me[i] < f[i] && f[i] < n[i]).count()),
        _ => None,
    };
    Ok(MetricsSummary {
        experiment: m.experiment,
        trials: m.trials,
        seed: m.seed,
        definitions: m.definitions.clone(),
        kinds,
        ordering_holds,
        throughput: Throughput {
            wall_time_recorded: m.record_wall_time,
            kinds: throughput,
            reference: ReferenceThroughput::default(),
        },
    })
}
