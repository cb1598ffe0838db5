//! CSV sinks for training logs and loss surfaces.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::write_text;
use crate::error::Result;
use crate::landscape::SurfaceResult;
use crate::train::EpochMetrics;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub history: Vec<EpochMetrics>,
}

impl MetricsReport {
    pub fn new(history: Vec<EpochMetrics>) -> Self {
        Self { history }
    }

    /// Header `epoch,loss,accuracy,nmi`; unmonitored metrics are left empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,accuracy,nmi\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for m in &self.history {
            let _ = writeln!(out, "{},{},{},{}", m.epoch, m.loss, opt(m.accuracy), opt(m.nmi));
        }
        out
    }
}

/// Header `alpha,beta,loss`, one row per cell with `beta` varying fastest.
pub fn surface_csv(surface: &SurfaceResult) -> String {
    let mut out = String::from("alpha,beta,loss\n");
    for (a, row) in surface.alphas.iter().zip(&surface.values) {
        for (b, v) in surface.betas.iter().zip(row) {
            let _ = writeln!(out, "{a},{b},{v}");
        }
    }
    out
}

pub fn write_metrics_csv(report: &MetricsReport, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &report.to_csv())
}

pub fn write_surface_csv(surface: &SurfaceResult, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &surface_csv(surface))
}
