//! Per-cycle trajectory records and their CSV form.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a log read
//! back from CSV is bit-identical to the one written.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::camera::FeatureVector;
use crate::controller::ErrorSplit;
use crate::error::{Error, Result};
use crate::kinematics::ArcParams;

/// How the active reference of a cycle was reached from the previous cycle.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchKind {
    #[default]
    None,
    /// The previous reference converged below its threshold.
    Auto,
    /// An operator forced the switch.
    Manual,
}

impl SwitchKind {
    fn as_str(&self) -> &'static str {
        match self {
            SwitchKind::None => "none",
            SwitchKind::Auto => "auto",
            SwitchKind::Manual => "manual",
        }
    }
}

impl FromStr for SwitchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(SwitchKind::None),
            "auto" => Ok(SwitchKind::Auto),
            "manual" => Ok(SwitchKind::Manual),
            other => Err(Error::LogFormat(format!("unknown switch kind {other:?}"))),
        }
    }
}

/// Everything observed and commanded in one control cycle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: usize,
    /// Time at the start of the cycle (s).
    pub time: f64,
    pub reference_index: usize,
    /// Switching threshold of the active reference.
    pub threshold: f64,
    /// The active reference is the last of the scenario.
    pub final_reference: bool,
    pub switch: SwitchKind,
    /// Ground-truth tendon lengths (mm), flattened per section.
    pub cables: Vec<f64>,
    /// Arcs estimated from the image.
    pub arcs: Vec<ArcParams>,
    /// Observed features.
    pub features: FeatureVector,
    pub reference: FeatureVector,
    /// `features - reference`, flattened.
    pub error: Vec<f64>,
    pub error_norm: f64,
    pub task_error: ErrorSplit,
    pub configuration_error: ErrorSplit,
    /// Commanded tendon rates (mm/s).
    pub commands: Vec<f64>,
    pub command_clamped: bool,
    /// Tendons that hit a length limit during this cycle's plant step.
    pub cable_clamped: Vec<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub sections: usize,
    pub dt: f64,
    pub records: Vec<CycleRecord>,
}

impl TrajectoryLog {
    pub fn new(sections: usize, dt: f64) -> Self {
        Self {
            sections,
            dt,
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&CycleRecord> {
        self.records.last()
    }

    pub fn header(sections: usize) -> String {
        let mut cols: Vec<String> = vec![
            "cycle".into(),
            "time".into(),
            "reference_index".into(),
            "threshold".into(),
            "final_reference".into(),
            "switch".into(),
        ];
        for i in 0..sections {
            for k in 1..=3 {
                cols.push(format!("cable_{i}_{k}"));
            }
        }
        for i in 0..sections {
            cols.extend(["s", "kappa", "phi"].iter().map(|n| format!("arc_{i}_{n}")));
        }
        for prefix in ["feature", "reference", "error"] {
            for i in 0..sections {
                cols.extend(
                    ["x", "y", "logz"]
                        .iter()
                        .map(|n| format!("{prefix}_{i}_{n}")),
                );
            }
        }
        cols.extend(
            [
                "error_norm",
                "task_px",
                "task_mm",
                "configuration_px",
                "configuration_mm",
            ]
            .iter()
            .map(|s| s.to_string()),
        );
        for i in 0..sections {
            for k in 1..=3 {
                cols.push(format!("command_{i}_{k}"));
            }
        }
        cols.push("command_clamped".into());
        for i in 0..sections {
            for k in 1..=3 {
                cols.push(format!("cable_clamped_{i}_{k}"));
            }
        }
        cols.join(",")
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# sections={} dt={}", self.sections, self.dt)?;
        writeln!(out, "{}", Self::header(self.sections))?;
        let mut line = String::new();
        for r in &self.records {
            line.clear();
            write!(
                line,
                "{},{},{},{},{},{}",
                r.cycle,
                r.time,
                r.reference_index,
                r.threshold,
                u8::from(r.final_reference),
                r.switch.as_str()
            )
            .unwrap();
            for v in &r.cables {
                write!(line, ",{v}").unwrap();
            }
            for a in &r.arcs {
                write!(line, ",{},{},{}", a.s, a.kappa, a.phi).unwrap();
            }
            for fv in [&r.features, &r.reference] {
                for f in fv.features() {
                    write!(line, ",{},{},{}", f.x, f.y, f.logz).unwrap();
                }
            }
            for v in &r.error {
                write!(line, ",{v}").unwrap();
            }
            write!(
                line,
                ",{},{},{},{},{}",
                r.error_norm,
                r.task_error.image_px,
                r.task_error.depth_mm,
                r.configuration_error.image_px,
                r.configuration_error.depth_mm
            )
            .unwrap();
            for v in &r.commands {
                write!(line, ",{v}").unwrap();
            }
            write!(line, ",{}", u8::from(r.command_clamped)).unwrap();
            for c in &r.cable_clamped {
                write!(line, ",{}", u8::from(*c)).unwrap();
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV is UTF-8")
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let meta = lines
            .next()
            .ok_or_else(|| Error::LogFormat("empty log".into()))??;
        let (sections, dt) = parse_meta(&meta)?;
        let header = lines
            .next()
            .ok_or_else(|| Error::LogFormat("missing header".into()))??;
        if header != Self::header(sections) {
            return Err(Error::LogFormat(
                "header does not match the section count".into(),
            ));
        }
        let width = header.split(',').count();
        let mut log = TrajectoryLog::new(sections, dt);
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != width {
                return Err(Error::LogFormat(format!(
                    "row {} has {} fields, expected {width}",
                    lineno + 1,
                    fields.len()
                )));
            }
            log.records.push(parse_row(&fields, sections)?);
        }
        Ok(log)
    }

    pub fn from_csv_str(s: &str) -> Result<Self> {
        Self::read_csv(s.as_bytes())
    }
}

fn parse_meta(line: &str) -> Result<(usize, f64)> {
    let bad = || Error::LogFormat(format!("bad metadata line {line:?}"));
    let rest = line.strip_prefix("# ").ok_or_else(bad)?;
    let mut sections = None;
    let mut dt = None;
    for kv in rest.split_whitespace() {
        match kv.split_once('=') {
            Some(("sections", v)) => sections = v.parse().ok(),
            Some(("dt", v)) => dt = v.parse().ok(),
            _ => return Err(bad()),
        }
    }
    Ok((sections.ok_or_else(bad)?, dt.ok_or_else(bad)?))
}

struct Fields<'a> {
    items: std::slice::Iter<'a, &'a str>,
}

impl<'a> Fields<'a> {
    fn next<T: FromStr>(&mut self) -> Result<T> {
        let raw = self
            .items
            .next()
            .ok_or_else(|| Error::LogFormat("row too short".into()))?;
        raw.parse()
            .map_err(|_| Error::LogFormat(format!("cannot parse {raw:?}")))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.next::<f64>()).collect()
    }

    fn flag(&mut self) -> Result<bool> {
        match self.next::<u8>()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(Error::LogFormat(format!("bad flag {v}"))),
        }
    }
}

fn parse_row(fields: &[&str], n: usize) -> Result<CycleRecord> {
    let mut f = Fields {
        items: fields.iter(),
    };
    let cycle = f.next()?;
    let time = f.next()?;
    let reference_index = f.next()?;
    let threshold = f.next()?;
    let final_reference = f.flag()?;
    let switch: SwitchKind = f.next::<String>()?.parse()?;
    let cables = f.floats(3 * n)?;
    let arcs = f
        .floats(3 * n)?
        .chunks_exact(3)
        .map(|c| ArcParams::new(c[0], c[1], c[2]))
        .collect();
    let features = FeatureVector::from_flat(&f.floats(3 * n)?)?;
    let reference = FeatureVector::from_flat(&f.floats(3 * n)?)?;
    let error = f.floats(3 * n)?;
    let error_norm = f.next()?;
    let task_error = ErrorSplit {
        image_px: f.next()?,
        depth_mm: f.next()?,
    };
    let configuration_error = ErrorSplit {
        image_px: f.next()?,
        depth_mm: f.next()?,
    };
    let commands = f.floats(3 * n)?;
    let command_clamped = f.flag()?;
    let cable_clamped = (0..3 * n).map(|_| f.flag()).collect::<Result<Vec<_>>>()?;
    Ok(CycleRecord {
        cycle,
        time,
        reference_index,
        threshold,
        final_reference,
        switch,
        cables,
        arcs,
        features,
        reference,
        error,
        error_norm,
        task_error,
        configuration_error,
        commands,
        command_clamped,
        cable_clamped,
    })
}
