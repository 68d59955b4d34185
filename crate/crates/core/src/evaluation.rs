//! Fidelity and cost metrics for truncated system matrices, plus the
//! report tables built from them.

use std::fmt::Write as _;
use std::hint::black_box;
use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::edmd::{solve_from_factors, svd_thin, truncate, IdentifiedModel, RankRule, SnapshotPair, SvdFactors};
use crate::error::{Error, Result};
use crate::observables::BasisSpec;

pub fn frobenius_norm(b: &DMatrix<f64>) -> f64 {
    b.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `100·‖A − Ã‖_F / ‖A‖_F`.
pub fn reconstruction_error(a: &DMatrix<f64>, a_tilde: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != a_tilde.shape() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: a_tilde.len(),
        });
    }
    let norm = frobenius_norm(a);
    if norm == 0.0 {
        return Err(Error::Domain("reference system matrix has zero norm".into()));
    }
    Ok(100.0 * frobenius_norm(&(a - a_tilde)) / norm)
}

/// `‖X' − A·X‖_F`.
pub fn lifted_residual(a: &DMatrix<f64>, pair: &SnapshotPair) -> f64 {
    frobenius_norm(&(&pair.x_shift - a * &pair.x))
}

/// RMSE of the one-step prediction after projecting back to `(s, y_L)`.
pub fn one_step_rmse(model: &IdentifiedModel, pair: &SnapshotPair) -> f64 {
    let pred = model.a.rows(0, 2) * &pair.x;
    let target = pair.x_shift.rows(0, 2);
    let m = pair.columns().max(1) as f64;
    ((pred - target).norm_squared() / m).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Full,
    Truncated,
}

/// Region covered by the wall-clock measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TimeScope {
    /// Pseudo-inverse application and the `X'` product on shared factors.
    #[default]
    #[serde(rename = "solve")]
    Solve,
    /// Additionally recomputes the SVD of `X` inside the timed region.
    #[serde(rename = "svd+solve")]
    SvdAndSolve,
}

impl std::str::FromStr for TimeScope {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "solve" => Ok(TimeScope::Solve),
            "svd+solve" => Ok(TimeScope::SvdAndSolve),
            _ => Err(format!("unknown time scope `{s}` (expected solve or svd+solve)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingSample {
    pub route: Route,
    pub durations_ns: Vec<u64>,
    pub repeats: usize,
    pub warmups: usize,
}

impl TimingSample {
    pub fn min_ns(&self) -> u64 {
        self.durations_ns.iter().copied().min().unwrap_or(0)
    }

    pub fn median_ns(&self) -> f64 {
        let v: Vec<f64> = self.durations_ns.iter().map(|d| *d as f64).collect();
        crate::edmd::median(&v)
    }

    pub fn stddev_ns(&self) -> f64 {
        let n = self.durations_ns.len() as f64;
        if n < 2.0 {
            return 0.0;
        }
        let mean = self.durations_ns.iter().map(|d| *d as f64).sum::<f64>() / n;
        let var = self
            .durations_ns
            .iter()
            .map(|d| (*d as f64 - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        var.sqrt()
    }
}

/// One evaluation of the timed region. `rank = None` means full rank.
pub fn solve_once(
    pair: &SnapshotPair,
    f: &SvdFactors,
    rank: Option<usize>,
    scope: TimeScope,
) -> Result<(DMatrix<f64>, u64)> {
    match scope {
        TimeScope::Solve => solve_from_factors(&pair.x_shift, f, rank.unwrap_or(f.r_max())),
        TimeScope::SvdAndSolve => {
            let fresh = svd_thin(&pair.x)?;
            let r = rank.unwrap_or(fresh.r_max());
            let t = truncate(&fresh, r)?;
            solve_from_factors(&pair.x_shift, &t, r)
        }
    }
}

/// Wall-clock samples of the solve stage on identical inputs. Runs on the
/// calling thread; results pass through `black_box` so the work is kept.
pub fn benchmark_solve(
    pair: &SnapshotPair,
    f: &SvdFactors,
    rank: Option<usize>,
    repeats: usize,
    warmups: usize,
    scope: TimeScope,
) -> Result<TimingSample> {
    let route = match rank {
        Some(r) if r < f.r_max() => Route::Truncated,
        _ => Route::Full,
    };
    for _ in 0..warmups {
        black_box(solve_once(black_box(pair), black_box(f), rank, scope)?);
    }
    let mut durations_ns = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        let out = solve_once(black_box(pair), black_box(f), rank, scope)?;
        let elapsed = start.elapsed();
        black_box(out);
        durations_ns.push((elapsed.as_nanos() as u64).max(1));
    }
    Ok(TimingSample {
        route,
        durations_ns,
        repeats,
        warmups,
    })
}

/// `100·min(truncated)/min(full)`, unclamped.
pub fn relative_time(truncated: &TimingSample, full: &TimingSample) -> f64 {
    100.0 * truncated.min_ns() as f64 / full.min_ns() as f64
}

pub fn relative_time_median(truncated: &TimingSample, full: &TimingSample) -> f64 {
    100.0 * truncated.median_ns() / full.median_ns()
}

/// Full-rank model for one basis together with its data summary.
#[derive(Debug, Clone)]
pub struct Reference {
    pub basis: BasisSpec,
    pub model: IdentifiedModel,
    pub timing: TimingSample,
    pub sigma: Vec<f64>,
}

impl Reference {
    pub fn r_max(&self) -> usize {
        self.sigma.len()
    }
}

/// A rule-selected model awaiting comparison against its reference.
#[derive(Debug, Clone)]
pub struct ModelRun {
    pub basis: BasisSpec,
    pub model: IdentifiedModel,
    /// `None` when the run used full rank and shares the reference timing.
    pub timing: Option<TimingSample>,
    pub one_step_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub basis_label: String,
    pub rule_label: String,
    pub rank: usize,
    pub r_max: usize,
    pub re_percent: f64,
    pub t_rel_min_percent: f64,
    pub t_rel_median_percent: f64,
    pub flops_full: u64,
    pub flops_trunc: u64,
    pub energy: Vec<f64>,
    pub sigma: Vec<f64>,
    pub condition_number: f64,
    pub one_step_rmse: f64,
}

impl EvalRow {
    pub fn is_full_rank(&self) -> bool {
        self.rank == self.r_max
    }
}

fn basis_order(b: &BasisSpec) -> u8 {
    match b {
        BasisSpec::Monomial { .. } => 0,
        BasisSpec::ThinPlateRadial { .. } => 1,
    }
}

fn rule_order(r: &RankRule) -> (u8, f64) {
    match *r {
        RankRule::Energy { threshold_percent } => (0, threshold_percent),
        RankRule::HardThreshold => (1, 0.0),
        RankRule::Fixed { r } => (2, r as f64),
        RankRule::Full => (3, 0.0),
    }
}

/// One row per run, monomial rows first, rules ordered energy (ascending),
/// hard threshold, fixed, full. Full-rank rows reuse the reference timing,
/// so their relative time is exactly 100.
pub fn build_table(
    runs: &[ModelRun],
    references: &[Reference],
    energy_squared: bool,
) -> Result<Vec<EvalRow>> {
    let mut ordered: Vec<&ModelRun> = runs.iter().collect();
    ordered.sort_by(|a, b| {
        basis_order(&a.basis)
            .cmp(&basis_order(&b.basis))
            .then(rule_order(&a.model.rule).partial_cmp(&rule_order(&b.model.rule)).unwrap())
    });
    ordered
        .into_iter()
        .map(|run| {
            let reference = references
                .iter()
                .find(|r| r.basis == run.basis)
                .ok_or_else(|| Error::MissingReference(run.basis.to_string()))?;
            let full_rank = run.model.rank_used == reference.r_max();
            let timing = match (&run.timing, full_rank) {
                (Some(t), false) => t,
                _ => &reference.timing,
            };
            let energy = if energy_squared {
                crate::edmd::energy_profile_squared(&reference.sigma)
            } else {
                crate::edmd::energy_profile(&reference.sigma)
            };
            Ok(EvalRow {
                basis_label: run.basis.label().to_string(),
                rule_label: run.model.rule.label(),
                rank: run.model.rank_used,
                r_max: reference.r_max(),
                re_percent: reconstruction_error(&reference.model.a, &run.model.a)?,
                t_rel_min_percent: relative_time(timing, &reference.timing),
                t_rel_median_percent: relative_time_median(timing, &reference.timing),
                flops_full: reference.model.flops,
                flops_trunc: run.model.flops,
                energy,
                sigma: reference.sigma.clone(),
                condition_number: reference.sigma[0] / reference.sigma[reference.r_max() - 1],
                one_step_rmse: run.one_step_rmse,
            })
        })
        .collect()
}

pub const TABLE_HEADER: [&str; 8] = [
    "basis",
    "rule",
    "rank",
    "re_percent",
    "t_rel_min_percent",
    "t_rel_median_percent",
    "flops_full",
    "flops_trunc",
];

/// Columns of `table1.csv` that carry wall-clock measurements.
pub const TIMING_COLUMNS: [&str; 2] = ["t_rel_min_percent", "t_rel_median_percent"];

fn csv_io(e: csv::Error) -> Error {
    Error::io("<csv>", std::io::Error::other(e.to_string()))
}

pub fn write_table_csv<W: Write>(out: W, rows: &[EvalRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TABLE_HEADER).map_err(csv_io)?;
    for r in rows {
        w.write_record([
            r.basis_label.clone(),
            r.rule_label.clone(),
            r.rank.to_string(),
            r.re_percent.to_string(),
            r.t_rel_min_percent.to_string(),
            r.t_rel_median_percent.to_string(),
            r.flops_full.to_string(),
            r.flops_trunc.to_string(),
        ])
        .map_err(csv_io)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

/// Singular values and energy profile per basis (`basis,r,sigma,energy_percent`).
pub fn write_spectrum_csv<W: Write>(out: W, spectra: &[(BasisSpec, Vec<f64>, Vec<f64>)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["basis", "r", "sigma", "energy_percent"])
        .map_err(csv_io)?;
    for (basis, sigma, energy) in spectra {
        for (i, (s, e)) in sigma.iter().zip(energy).enumerate() {
            w.write_record([
                basis.label().to_string(),
                (i + 1).to_string(),
                s.to_string(),
                e.to_string(),
            ])
            .map_err(csv_io)?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

/// Human-readable table with the columns basis, rank r, RE %, min t̃ %.
pub fn format_summary(rows: &[EvalRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<10} {:<8} {:>10} {:>10} {:>12}", "basis", "rule", "rank r", "RE %", "min t~ %");
    for r in rows {
        let rank = if r.is_full_rank() {
            format!("{} (full)", r.rank)
        } else {
            r.rank.to_string()
        };
        let _ = writeln!(
            s,
            "{:<10} {:<8} {:>10} {:>10.2} {:>12.2}",
            r.basis_label, r.rule_label, rank, r.re_percent, r.t_rel_min_percent
        );
    }
    s
}

/// Acceptance invariants over a finished table; each entry is one failure.
pub fn table_violations(rows: &[EvalRow]) -> Vec<String> {
    let mut out = Vec::new();
    for r in rows {
        if !(r.re_percent >= 0.0) || !r.re_percent.is_finite() {
            out.push(format!("{}/{}: RE {} is not a finite percentage", r.basis_label, r.rule_label, r.re_percent));
        }
        if r.is_full_rank() {
            if r.re_percent > 1e-8 {
                out.push(format!("{}/{}: full-rank RE {} % exceeds 1e-8 %", r.basis_label, r.rule_label, r.re_percent));
            }
            if r.t_rel_min_percent != 100.0 {
                out.push(format!("{}/{}: full-rank relative time {} % is not 100 %", r.basis_label, r.rule_label, r.t_rel_min_percent));
            }
        } else if r.flops_trunc >= r.flops_full {
            out.push(format!(
                "{}/{}: truncated solve used {} flops, full used {}",
                r.basis_label, r.rule_label, r.flops_trunc, r.flops_full
            ));
        }
    }
    out
}
