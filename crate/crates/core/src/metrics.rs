//! Steady-state and transient performance metrics computed from logs alone.

use serde::{Deserialize, Serialize};

use crate::controller::{split_error, ErrorSplit};
use crate::error::{Error, Result};
use crate::log::{CycleRecord, TrajectoryLog};

/// Minimum number of cycles for the terminal window to be meaningful.
pub const MIN_STEADY_STATE_CYCLES: usize = 10;

/// Rise/settle thresholds as fractions of the initial error norm.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransientCriterion {
    /// Rise from 90% to 10%, settle below 5%.
    #[default]
    Stringent,
    /// Rise from 80% to 20%, settle below 10%.
    Relaxed,
}

impl TransientCriterion {
    /// `(upper, lower, settle)` fractions.
    pub fn fractions(&self) -> (f64, f64, f64) {
        match self {
            TransientCriterion::Stringent => (0.9, 0.1, 0.05),
            TransientCriterion::Relaxed => (0.8, 0.2, 0.10),
        }
    }

    /// Stringent for up to two sections, relaxed beyond.
    pub fn for_sections(n: usize) -> Self {
        if n <= 2 {
            TransientCriterion::Stringent
        } else {
            TransientCriterion::Relaxed
        }
    }
}

impl std::str::FromStr for TransientCriterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stringent" => Ok(TransientCriterion::Stringent),
            "relaxed" => Ok(TransientCriterion::Relaxed),
            other => Err(Error::InvalidConfig(format!("unknown criterion {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    /// End-effector feature only.
    pub task: ErrorSplit,
    /// All features.
    pub configuration: ErrorSplit,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Transient {
    /// `None` when the lower threshold is never crossed.
    pub rise_time: Option<f64>,
    /// `None` when the signal does not settle (not-settled).
    pub settling_time: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub steady_state: SteadyState,
    pub transient: Transient,
    pub criterion: TransientCriterion,
    pub converged: bool,
    pub cycles: usize,
}

/// Number of cycles in the terminal window (last 10%, at least one).
pub fn steady_state_window(len: usize) -> usize {
    len.div_ceil(10).max(1)
}

fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// RMS over the terminal window of the task and configuration error splits.
pub fn steady_state_metrics(log: &TrajectoryLog) -> Result<SteadyState> {
    if log.len() < MIN_STEADY_STATE_CYCLES {
        return Err(Error::EpisodeTooShort(log.len()));
    }
    let n = log.sections;
    let tail = &log.records[log.len() - steady_state_window(log.len())..];
    let task: Vec<ErrorSplit> = tail
        .iter()
        .map(|r| split_error(&r.error, &r.reference, n - 1..n))
        .collect();
    let conf: Vec<ErrorSplit> = tail
        .iter()
        .map(|r| split_error(&r.error, &r.reference, 0..n))
        .collect();
    Ok(SteadyState {
        task: ErrorSplit {
            image_px: rms(task.iter().map(|s| s.image_px)),
            depth_mm: rms(task.iter().map(|s| s.depth_mm)),
        },
        configuration: ErrorSplit {
            image_px: rms(conf.iter().map(|s| s.image_px)),
            depth_mm: rms(conf.iter().map(|s| s.depth_mm)),
        },
    })
}

/// Time at which `signal` first drops to `level`, linearly interpolated.
fn first_crossing(times: &[f64], signal: &[f64], level: f64) -> Option<f64> {
    if signal.first()? <= &level {
        return Some(times[0]);
    }
    signal.windows(2).zip(times.windows(2)).find_map(|(s, t)| {
        (s[0] > level && s[1] <= level)
            .then(|| t[0] + (t[1] - t[0]) * (s[0] - level) / (s[0] - s[1]))
    })
}

/// Time after which `signal` stays at or below `level`; `None` if it ends above.
fn settling(times: &[f64], signal: &[f64], level: f64) -> Option<f64> {
    if *signal.last()? > level {
        return None;
    }
    match signal.iter().rposition(|&v| v > level) {
        None => Some(times[0]),
        Some(k) => {
            let (s0, s1) = (signal[k], signal[k + 1]);
            Some(times[k] + (times[k + 1] - times[k]) * (s0 - level) / (s0 - s1))
        }
    }
}

/// Rise and settling times of a sampled error-norm signal, measured from `times[0]`.
pub fn transient_from_signal(
    times: &[f64],
    signal: &[f64],
    criterion: TransientCriterion,
) -> Result<Transient> {
    if times.len() != signal.len() {
        return Err(Error::LengthMismatch {
            expected: times.len(),
            actual: signal.len(),
        });
    }
    let e0 = *signal.first().ok_or(Error::EpisodeTooShort(0))?;
    if !(e0 > 0.0) {
        return Err(Error::InvalidConfig(
            "initial error norm must be positive".into(),
        ));
    }
    let (hi, lo, settle) = criterion.fractions();
    let t_hi = first_crossing(times, signal, hi * e0);
    let t_lo = first_crossing(times, signal, lo * e0);
    let rise_time = match (t_hi, t_lo) {
        (Some(a), Some(b)) => Some(b - a),
        _ => None,
    };
    let settling_time = settling(times, signal, settle * e0).map(|t| t - times[0]);
    Ok(Transient {
        rise_time,
        settling_time,
    })
}

/// Records of the first reference, up to the first switch.
fn first_segment(log: &TrajectoryLog) -> &[CycleRecord] {
    let end = log
        .records
        .iter()
        .position(|r| r.reference_index != log.records[0].reference_index)
        .unwrap_or(log.len());
    &log.records[..end]
}

/// Transient metrics of the error norm while tracking the first reference.
pub fn transient_metrics(log: &TrajectoryLog, criterion: TransientCriterion) -> Result<Transient> {
    let seg = first_segment(log);
    let times: Vec<f64> = seg.iter().map(|r| r.time).collect();
    let signal: Vec<f64> = seg.iter().map(|r| r.error_norm).collect();
    transient_from_signal(&times, &signal, criterion)
}

/// True when the final reference was reached below its threshold.
pub fn log_converged(log: &TrajectoryLog) -> bool {
    log.records
        .iter()
        .any(|r| r.final_reference && r.error_norm < r.threshold)
}

/// Full report; a pure function of the log.
pub fn metrics_report(log: &TrajectoryLog, criterion: TransientCriterion) -> Result<MetricsReport> {
    Ok(MetricsReport {
        steady_state: steady_state_metrics(log)?,
        transient: transient_metrics(log, criterion)?,
        criterion,
        converged: log_converged(log),
        cycles: log.len(),
    })
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            count: values.len(),
        }
    }
}

/// Aggregate of several episode reports.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub episodes: usize,
    pub converged: usize,
    pub task_px: MeanStd,
    pub task_mm: MeanStd,
    pub configuration_px: MeanStd,
    pub configuration_mm: MeanStd,
    /// Over episodes where the time is defined.
    pub rise_time: MeanStd,
    pub settling_time: MeanStd,
}

impl AggregateReport {
    pub fn convergence_rate(&self) -> f64 {
        if self.episodes == 0 {
            0.0
        } else {
            self.converged as f64 / self.episodes as f64
        }
    }
}

pub fn aggregate(reports: &[MetricsReport]) -> AggregateReport {
    let col =
        |f: &dyn Fn(&MetricsReport) -> f64| MeanStd::of(&reports.iter().map(f).collect::<Vec<_>>());
    let opt = |f: &dyn Fn(&MetricsReport) -> Option<f64>| {
        MeanStd::of(&reports.iter().filter_map(f).collect::<Vec<_>>())
    };
    AggregateReport {
        episodes: reports.len(),
        converged: reports.iter().filter(|r| r.converged).count(),
        task_px: col(&|r| r.steady_state.task.image_px),
        task_mm: col(&|r| r.steady_state.task.depth_mm),
        configuration_px: col(&|r| r.steady_state.configuration.image_px),
        configuration_mm: col(&|r| r.steady_state.configuration.depth_mm),
        rise_time: opt(&|r| r.transient.rise_time),
        settling_time: opt(&|r| r.transient.settling_time),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{FeatureVector, ShapeFeature};
    use crate::log::SwitchKind;

    fn exp_signal(dt: f64, steps: usize) -> (Vec<f64>, Vec<f64>) {
        let t: Vec<f64> = (0..steps).map(|k| k as f64 * dt).collect();
        let s = t.iter().map(|t| 100.0 * (-t).exp()).collect();
        (t, s)
    }

    #[test]
    fn exponential_fixture() {
        let dt = 0.1;
        let (t, s) = exp_signal(dt, 100);
        let st = transient_from_signal(&t, &s, TransientCriterion::Stringent).unwrap();
        assert!((st.rise_time.unwrap() - 9f64.ln()).abs() < dt);
        assert!((st.settling_time.unwrap() - 20f64.ln()).abs() < dt);
        let rl = transient_from_signal(&t, &s, TransientCriterion::Relaxed).unwrap();
        assert!((rl.rise_time.unwrap() - 4f64.ln()).abs() < dt);
        assert!((rl.settling_time.unwrap() - 10f64.ln()).abs() < dt);
    }

    #[test]
    fn never_settling_signal() {
        let t: Vec<f64> = (0..50).map(|k| k as f64 * 0.1).collect();
        let s: Vec<f64> = t.iter().map(|t| 1.0 - 0.01 * t).collect();
        let tr = transient_from_signal(&t, &s, TransientCriterion::Stringent).unwrap();
        assert_eq!(tr.settling_time, None);
        assert_eq!(tr.rise_time, None);
    }

    #[test]
    fn zero_initial_error_is_rejected() {
        assert!(
            transient_from_signal(&[0.0, 0.1], &[0.0, 0.0], TransientCriterion::Stringent).is_err()
        );
    }

    fn record(cycle: usize, error: Vec<f64>) -> CycleRecord {
        let n = error.len() / 3;
        let reference = FeatureVector(vec![
            ShapeFeature {
                x: 640.0,
                y: 360.0,
                logz: 0.0
            };
            n
        ]);
        let norm = error.iter().map(|v| v * v).sum::<f64>().sqrt();
        CycleRecord {
            cycle,
            time: cycle as f64 * 0.1,
            reference_index: 0,
            threshold: 0.5,
            final_reference: true,
            switch: SwitchKind::None,
            cables: vec![80.0; 3 * n],
            arcs: vec![crate::kinematics::ArcParams::straight(80.0); n],
            features: reference.clone(),
            reference,
            error,
            error_norm: norm,
            task_error: ErrorSplit::default(),
            configuration_error: ErrorSplit::default(),
            commands: vec![0.0; 3 * n],
            command_clamped: false,
            cable_clamped: vec![false; 3 * n],
        }
    }

    #[test]
    fn constant_end_effector_offset() {
        let mut log = TrajectoryLog::new(2, 0.1);
        log.records = (0..20)
            .map(|k| record(k, vec![0.0, 0.0, 0.0, 3.0, 0.0, 0.0]))
            .collect();
        let ss = steady_state_metrics(&log).unwrap();
        assert_eq!(ss.task.image_px, 3.0);
        assert_eq!(ss.task.depth_mm, 0.0);
        assert_eq!(ss.configuration.image_px, 3.0);
    }

    #[test]
    fn converged_log_reports_zero() {
        let mut log = TrajectoryLog::new(1, 0.1);
        log.records = (0..10).map(|k| record(k, vec![0.0; 3])).collect();
        let ss = steady_state_metrics(&log).unwrap();
        assert_eq!(ss, SteadyState::default());
        assert!(log_converged(&log));
    }

    #[test]
    fn log_depth_error_converts_about_reference_depth() {
        // reference depth e^0 = 1 m, so a log error of 0.002 is 2 mm
        let mut log = TrajectoryLog::new(1, 0.1);
        log.records = (0..10).map(|k| record(k, vec![0.0, 0.0, 0.002])).collect();
        let ss = steady_state_metrics(&log).unwrap();
        assert!((ss.task.depth_mm - 2.0).abs() < 1e-12);
    }

    #[test]
    fn short_logs_are_rejected() {
        let mut log = TrajectoryLog::new(1, 0.1);
        log.records = (0..9).map(|k| record(k, vec![1.0, 0.0, 0.0])).collect();
        assert_eq!(steady_state_metrics(&log), Err(Error::EpisodeTooShort(9)));
    }

    #[test]
    fn single_report_aggregate() {
        let mut log = TrajectoryLog::new(1, 0.1);
        log.records = (0..30)
            .map(|k| record(k, vec![100.0 * (-(k as f64) * 0.1).exp(), 0.0, 0.0]))
            .collect();
        let r = metrics_report(&log, TransientCriterion::Stringent).unwrap();
        let agg = aggregate(&[r]);
        assert_eq!(agg.episodes, 1);
        assert_eq!(agg.task_px.mean, r.steady_state.task.image_px);
        assert_eq!(agg.task_px.std, 0.0);
        assert_eq!(agg.rise_time.mean, r.transient.rise_time.unwrap());
    }

    #[test]
    fn criterion_by_section_count() {
        assert_eq!(
            TransientCriterion::for_sections(2),
            TransientCriterion::Stringent
        );
        assert_eq!(
            TransientCriterion::for_sections(3),
            TransientCriterion::Relaxed
        );
    }
}
