use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "iter,loss_d,loss_g,reg_g,reg_d,cls,acc_src";

/// Loss components and gradient norms of one iteration. `loss_d` is
/// `gan_d + β·reg_d + γ·cls` and `loss_g` is `gan_g + λ·reg_g`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub iter: u64,
    pub loss_d: f64,
    pub loss_g: f64,
    pub gan_d: f64,
    pub gan_g: f64,
    pub reg_g: f64,
    pub reg_d: f64,
    /// Present in domain-adaptation mode only.
    pub cls: Option<f64>,
    pub acc_src: Option<f64>,
    pub grad_norm_d: f64,
    pub grad_norm_g: f64,
}

/// One parsed line of a metrics CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub iter: u64,
    pub loss_d: f64,
    pub loss_g: f64,
    pub reg_g: f64,
    pub reg_d: f64,
    pub cls: Option<f64>,
    pub acc_src: Option<f64>,
}

impl StepMetrics {
    pub fn row(&self) -> MetricsRow {
        MetricsRow {
            iter: self.iter,
            loss_d: self.loss_d,
            loss_g: self.loss_g,
            reg_g: self.reg_g,
            reg_d: self.reg_d,
            cls: self.cls,
            acc_src: self.acc_src,
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV text; floats use the shortest round-trip representation.
pub fn metrics_csv(metrics: &[StepMetrics]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for m in metrics {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            m.iter,
            m.loss_d,
            m.loss_g,
            m.reg_g,
            m.reg_d,
            opt(m.cls),
            opt(m.acc_src)
        );
    }
    s
}

pub fn write_metrics_csv(path: &Path, metrics: &[StepMetrics]) -> Result<()> {
    std::fs::write(path, metrics_csv(metrics))?;
    Ok(())
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Config("metrics CSV header mismatch".into()));
    }
    let bad = |line: &str| Error::Config(format!("bad metrics line: {line}"));
    let num = |s: &str, line: &str| s.parse::<f64>().map_err(|_| bad(line));
    let opt = |s: &str, line: &str| if s.is_empty() { Ok(None) } else { num(s, line).map(Some) };
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad(line));
            }
            Ok(MetricsRow {
                iter: f[0].parse().map_err(|_| bad(line))?,
                loss_d: num(f[1], line)?,
                loss_g: num(f[2], line)?,
                reg_g: num(f[3], line)?,
                reg_d: num(f[4], line)?,
                cls: opt(f[5], line)?,
                acc_src: opt(f[6], line)?,
            })
        })
        .collect()
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    parse_metrics_csv(&std::fs::read_to_string(path)?)
}
