use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::stats::{mann_whitney_u, shapiro_wilk, welch_t_test, TestResult};
use crate::metrics::trajectory::{
    average_speed, collision_count, gracefulness, smoothness, time_of_completion, Trajectory,
};

/// The five objective metrics of one run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Average speed, µm/s.
    pub va: f64,
    /// Time of completion, s.
    pub toc: f64,
    /// Gracefulness, log₁₀ curvature.
    pub g: f64,
    /// Smoothness, log₁₀ dimensionless jerk.
    pub s: f64,
    /// Collision events.
    pub c: u32,
}

impl MetricsReport {
    pub fn compute(traj: &Trajectory, sigma: f64) -> Result<Self> {
        Ok(Self {
            va: average_speed(traj)?,
            toc: time_of_completion(traj)?,
            g: gracefulness(traj)?,
            s: smoothness(traj, sigma)?,
            c: collision_count(traj),
        })
    }

    pub const NAMES: [&'static str; 5] = ["Va", "TOC", "G", "S", "C"];

    pub fn values(&self) -> [f64; 5] {
        [self.va, self.toc, self.g, self.s, self.c as f64]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestKind {
    Welch,
    MannWhitney,
}

impl TestKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TestKind::Welch => "welch_t",
            TestKind::MannWhitney => "mann_whitney_u",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub metric: &'static str,
    pub mean_a: f64,
    pub mean_b: f64,
    /// Shapiro-Wilk p per group; `None` when the test could not run.
    pub normality_a: Option<f64>,
    pub normality_b: Option<f64>,
    pub test: TestKind,
    pub result: TestResult,
}

/// Normality level for choosing the t-test.
pub const NORMALITY_ALPHA: f64 = 0.05;

fn normality_p(v: &[f64]) -> Option<f64> {
    shapiro_wilk(v).ok().map(|r| r.p)
}

/// Per metric: means, Shapiro-Wilk on each group, then Welch's t-test when
/// both groups pass at `NORMALITY_ALPHA`, else Mann-Whitney U.
pub fn compare_report(a: &[MetricsReport], b: &[MetricsReport]) -> Result<Vec<ComparisonRow>> {
    if a.len() < 3 || b.len() < 3 {
        return Err(Error::Insufficient(format!(
            "need at least 3 runs per group, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let mut rows = Vec::with_capacity(5);
    for (k, metric) in MetricsReport::NAMES.iter().enumerate() {
        let va: Vec<f64> = a.iter().map(|r| r.values()[k]).collect();
        let vb: Vec<f64> = b.iter().map(|r| r.values()[k]).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (na, nb) = (normality_p(&va), normality_p(&vb));
        let normal = |p: Option<f64>| p.is_some_and(|p| p > NORMALITY_ALPHA);
        let (test, result) = if normal(na) && normal(nb) {
            (TestKind::Welch, welch_t_test(&va, &vb)?)
        } else {
            (TestKind::MannWhitney, mann_whitney_u(&va, &vb)?)
        };
        rows.push(ComparisonRow {
            metric,
            mean_a: mean(&va),
            mean_b: mean(&vb),
            normality_a: na,
            normality_b: nb,
            test,
            result,
        });
    }
    Ok(rows)
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("metric,mean_a,mean_b,test,stat,p\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.metric,
            r.mean_a,
            r.mean_b,
            r.test.as_str(),
            r.result.statistic,
            r.result.p
        );
    }
    out
}

pub fn comparison_table(rows: &[ComparisonRow]) -> String {
    let mut out = format!(
        "{:<6} {:>12} {:>12} {:<15} {:>10} {:>10}\n",
        "metric", "mean_a", "mean_b", "test", "stat", "p"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<6} {:>12.4} {:>12.4} {:<15} {:>10.4} {:>10.4}",
            r.metric,
            r.mean_a,
            r.mean_b,
            r.test.as_str(),
            r.result.statistic,
            r.result.p
        );
    }
    out
}
