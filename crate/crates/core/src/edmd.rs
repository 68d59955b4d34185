//! Snapshot assembly, thin SVD, rank selection and (truncated) system
//! matrices for extended dynamic mode decomposition.
//!
//! All routes that produce a system matrix share one kernel,
//! [`solve_from_factors`], so the full and truncated models differ only in
//! how many singular triplets they consume.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observables::{retrieve_state, BasisSpec, LiftedState};

/// Singular values below `SVD_RANK_TOL · σ₁` are treated as zero.
pub const SVD_RANK_TOL: f64 = 1e-12;
/// Largest condition number of `X·Xᵀ` accepted by the normal-equation route.
pub const NORMAL_COND_LIMIT: f64 = 1e12;
/// Rollout aborts once any lifted entry exceeds this magnitude.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Lifted data matrix `X` and its time-shifted partner `X'`.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotPair {
    pub x: DMatrix<f64>,
    pub x_shift: DMatrix<f64>,
}

impl SnapshotPair {
    pub fn dim(&self) -> usize {
        self.x.nrows()
    }

    pub fn columns(&self) -> usize {
        self.x.ncols()
    }
}

/// Stacks the per-trajectory snapshot blocks side by side. Trajectory `i`
/// with states `0..=k_max` contributes states `0..k_max` to `X` and
/// `1..=k_max` to `X'`, so no column pair crosses a trajectory boundary.
pub fn build_snapshots(lifted: &[Vec<LiftedState>]) -> Result<SnapshotPair> {
    let first = lifted
        .first()
        .and_then(|t| t.first())
        .ok_or_else(|| Error::Domain("no lifted trajectories".into()))?;
    let d = first.values.len();
    let mut m = 0;
    for (index, traj) in lifted.iter().enumerate() {
        if traj.len() < 2 {
            return Err(Error::TooShort {
                index,
                len: traj.len(),
            });
        }
        if let Some(bad) = traj.iter().find(|s| s.values.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: bad.values.len(),
            });
        }
        m += traj.len() - 1;
    }
    let mut x = DMatrix::zeros(d, m);
    let mut x_shift = DMatrix::zeros(d, m);
    let mut col = 0;
    for traj in lifted {
        for pair in traj.windows(2) {
            x.column_mut(col).copy_from_slice(&pair[0].values);
            x_shift.column_mut(col).copy_from_slice(&pair[1].values);
            col += 1;
        }
    }
    Ok(SnapshotPair { x, x_shift })
}

/// Thin SVD `X = U·diag(σ)·Vᵀ` restricted to the numerical rank.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    /// `d × r` with orthonormal columns.
    pub u: DMatrix<f64>,
    /// Descending, strictly positive.
    pub sigma: DVector<f64>,
    /// `m × r` with orthonormal columns.
    pub v: DMatrix<f64>,
}

impl SvdFactors {
    pub fn r_max(&self) -> usize {
        self.sigma.len()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (j, s) in self.sigma.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * self.v.transpose()
    }
}

/// One-sided (Hestenes) Jacobi SVD of a matrix with at least as many rows as
/// columns. Returns the rotated columns and the accumulated rotations: on
/// exit the columns of `a` are mutually orthogonal and `a_in = a·vᵀ`.
fn jacobi_one_sided(mut a: DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    const TOL: f64 = 1e-15;
    const MAX_SWEEPS: usize = 80;
    let n = a.ncols();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dot(&a.column(q));
                if gamma == 0.0 || gamma.abs() <= TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_columns(&mut a, p, q, c, s);
                rotate_columns(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    (a, v)
}

fn rotate_columns(m: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    for i in 0..m.nrows() {
        let xp = m[(i, p)];
        let xq = m[(i, q)];
        m[(i, p)] = c * xp - s * xq;
        m[(i, q)] = s * xp + c * xq;
    }
}

/// Thin SVD with descending singular values, σ below `1e-12·σ₁` dropped,
/// and the largest-magnitude entry of every `U` column made positive.
pub fn svd_thin(x: &DMatrix<f64>) -> Result<SvdFactors> {
    if x.iter().all(|v| *v == 0.0) {
        return Err(Error::ZeroMatrix);
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("snapshot matrix has non-finite entries".into()));
    }
    // Work on the tall orientation. For wide X, Xᵀ = Ua·Σ·Vaᵀ gives
    // X = Va·Σ·Uaᵀ.
    let wide = x.nrows() < x.ncols();
    let tall = if wide { x.transpose() } else { x.clone() };
    let (cols, rot) = jacobi_one_sided(tall);
    let norms: Vec<f64> = (0..cols.ncols()).map(|j| cols.column(j).norm()).collect();

    let mut order: Vec<usize> = (0..norms.len()).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    let s1 = norms[order[0]];
    let keep: Vec<usize> = order
        .into_iter()
        .filter(|&i| norms[i] > 0.0 && norms[i] >= SVD_RANK_TOL * s1)
        .collect();

    let r = keep.len();
    let mut u = DMatrix::zeros(x.nrows(), r);
    let mut v = DMatrix::zeros(x.ncols(), r);
    let mut sigma = DVector::zeros(r);
    for (j, &i) in keep.iter().enumerate() {
        let left = cols.column(i) / norms[i];
        let right = rot.column(i).clone_owned();
        let (mut uc, mut vc) = if wide { (right, left) } else { (left, right) };
        let pivot = uc.iter().fold(0.0f64, |best, &val| {
            if val.abs() > best.abs() {
                val
            } else {
                best
            }
        });
        if pivot < 0.0 {
            uc.neg_mut();
            vc.neg_mut();
        }
        u.set_column(j, &uc);
        v.set_column(j, &vc);
        sigma[j] = norms[i];
    }
    Ok(SvdFactors { u, sigma, v })
}

/// `Xᵀ(X·Xᵀ)⁻¹`; refuses when `X·Xᵀ` is too ill-conditioned.
pub fn pseudo_inverse_normal(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let gram = x * x.transpose();
    let eig = SymmetricEigen::new(gram.clone());
    let lmax = eig.eigenvalues.max();
    let lmin = eig.eigenvalues.min();
    let cond = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
    if !(cond <= NORMAL_COND_LIMIT) {
        return Err(Error::IllConditioned { cond });
    }
    let inv = gram
        .cholesky()
        .ok_or(Error::IllConditioned { cond })?
        .inverse();
    Ok(x.transpose() * inv)
}

/// `V·diag(1/σ)·Uᵀ`.
pub fn pseudo_inverse_svd(f: &SvdFactors) -> DMatrix<f64> {
    let mut v = f.v.clone();
    for (j, s) in f.sigma.iter().enumerate() {
        v.column_mut(j).scale_mut(1.0 / s);
    }
    v * f.u.transpose()
}

/// Multiply-add count of the solve kernel at rank `r`: `X'·V_r` costs
/// `2·d·m·r`, the `1/σ` scaling `d·r`, and the product with `U_rᵀ` `2·d²·r`.
pub fn solve_flops(d: usize, m: usize, r: usize) -> u64 {
    let (d, m, r) = (d as u64, m as u64, r as u64);
    2 * d * m * r + d * r + 2 * d * d * r
}

/// Product `a·b` that adds its own multiply-add count to `flops`.
fn counted_mul<SA, SB>(
    a: &nalgebra::Matrix<f64, nalgebra::Dyn, nalgebra::Dyn, SA>,
    b: &nalgebra::Matrix<f64, nalgebra::Dyn, nalgebra::Dyn, SB>,
    flops: &mut u64,
) -> DMatrix<f64>
where
    SA: nalgebra::storage::Storage<f64, nalgebra::Dyn, nalgebra::Dyn>,
    SB: nalgebra::storage::Storage<f64, nalgebra::Dyn, nalgebra::Dyn>,
{
    *flops += 2 * (a.nrows() * a.ncols() * b.ncols()) as u64;
    a * b
}

/// `X'·V_r·diag(1/σ_r)·U_rᵀ` using only the leading `r` triplets.
/// Returns the matrix and the multiply-adds actually performed.
pub fn solve_from_factors(
    x_shift: &DMatrix<f64>,
    f: &SvdFactors,
    r: usize,
) -> Result<(DMatrix<f64>, u64)> {
    check_rank(r, f.r_max())?;
    if x_shift.ncols() != f.v.nrows() {
        return Err(Error::DimensionMismatch {
            expected: f.v.nrows(),
            got: x_shift.ncols(),
        });
    }
    let mut flops = 0;
    let mut w = counted_mul(x_shift, &f.v.columns(0, r), &mut flops);
    for j in 0..r {
        w.column_mut(j).scale_mut(1.0 / f.sigma[j]);
    }
    flops += (w.nrows() * r) as u64;
    let a = counted_mul(&w, &f.u.columns(0, r).transpose(), &mut flops);
    Ok((a, flops))
}

fn check_rank(r: usize, r_max: usize) -> Result<()> {
    if r == 0 || r > r_max {
        Err(Error::RankOutOfRange { rank: r, r_max })
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum RankRule {
    Energy { threshold_percent: f64 },
    HardThreshold,
    Fixed { r: usize },
    Full,
}

impl RankRule {
    pub fn label(&self) -> String {
        match self {
            RankRule::Energy { threshold_percent } => format!("E{threshold_percent}%"),
            RankRule::HardThreshold => "HT".into(),
            RankRule::Fixed { r } => format!("r{r}"),
            RankRule::Full => "full".into(),
        }
    }

    /// File-name friendly form, e.g. `energy90`, `ht`, `fixed3`, `full`.
    pub fn slug(&self) -> String {
        match self {
            RankRule::Energy { threshold_percent } => {
                format!("energy{}", threshold_percent.to_string().replace('.', "p"))
            }
            RankRule::HardThreshold => "ht".into(),
            RankRule::Fixed { r } => format!("fixed{r}"),
            RankRule::Full => "full".into(),
        }
    }

    pub fn is_valid(&self) -> bool {
        match *self {
            RankRule::Energy { threshold_percent } => {
                threshold_percent > 0.0 && threshold_percent <= 100.0
            }
            RankRule::Fixed { r } => r >= 1,
            _ => true,
        }
    }
}

impl fmt::Display for RankRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for RankRule {
    type Err = String;

    /// Accepts `energy:90`, `energy90`, `ht`, `hard_threshold`, `full`,
    /// `fixed:3` and `fixed3`.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase();
        let rule = match t.as_str() {
            "ht" | "hard_threshold" | "hardthreshold" => RankRule::HardThreshold,
            "full" => RankRule::Full,
            _ => {
                if let Some(p) = t.strip_prefix("energy") {
                    let p = p.trim_start_matches(':').trim_end_matches('%');
                    let threshold_percent: f64 = p
                        .parse()
                        .map_err(|_| format!("bad energy threshold in rule `{s}`"))?;
                    RankRule::Energy { threshold_percent }
                } else if let Some(r) = t.strip_prefix("fixed") {
                    let r: usize = r
                        .trim_start_matches(':')
                        .parse()
                        .map_err(|_| format!("bad rank in rule `{s}`"))?;
                    RankRule::Fixed { r }
                } else {
                    return Err(format!(
                        "unknown rank rule `{s}` (expected energy:P, ht, fixed:R or full)"
                    ));
                }
            }
        };
        if rule.is_valid() {
            Ok(rule)
        } else {
            Err(format!("rank rule `{s}` out of range"))
        }
    }
}

/// Cumulative share of the singular-value sum, in percent. Plain sums of σ,
/// not σ².
pub fn energy_profile(sigma: &[f64]) -> Vec<f64> {
    cumulative_percent(sigma.iter().copied())
}

/// Same as [`energy_profile`] but over σ².
pub fn energy_profile_squared(sigma: &[f64]) -> Vec<f64> {
    cumulative_percent(sigma.iter().map(|s| s * s))
}

fn cumulative_percent(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let values: Vec<f64> = values.collect();
    let total: f64 = values.iter().sum();
    let mut acc = 0.0;
    let mut out: Vec<f64> = values
        .iter()
        .map(|v| {
            acc += v;
            100.0 * acc / total
        })
        .collect();
    if let Some(last) = out.last_mut() {
        *last = 100.0;
    }
    out
}

/// Cubic approximation of the optimal hard-threshold coefficient for an
/// unknown noise level, `ω(β) ≈ 0.56β³ − 0.95β² + 1.82β + 1.43`.
pub fn omega_beta(beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidBeta(beta));
    }
    Ok(((0.56 * beta - 0.95) * beta + 1.82) * beta + 1.43)
}

/// Aspect ratio `min(n, m) / max(n, m)`.
pub fn aspect_ratio(n: usize, m: usize) -> f64 {
    n.min(m) as f64 / n.max(m) as f64
}

/// Median of the (already positive) singular values.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Hard-threshold value `τ = ω(β)·σ_med`.
pub fn hard_threshold(sigma: &[f64], dims: (usize, usize)) -> Result<f64> {
    Ok(omega_beta(aspect_ratio(dims.0, dims.1))? * median(sigma))
}

/// Tunables for [`RankSelector::select`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankSelector {
    /// Percentage points subtracted from an energy target before comparing.
    pub energy_slack: f64,
    /// Use σ² in the energy profile.
    pub energy_squared: bool,
    /// Fall back to full rank when the threshold value `τ` itself exceeds
    /// `r_max`, in addition to when every σ lies above `τ`.
    pub ht_rank_fallback: bool,
}

impl Default for RankSelector {
    fn default() -> Self {
        Self {
            energy_slack: 0.0,
            energy_squared: false,
            ht_rank_fallback: true,
        }
    }
}

impl RankSelector {
    pub fn select(&self, f: &SvdFactors, rule: RankRule, dims: (usize, usize)) -> Result<usize> {
        let r_max = f.r_max();
        let sigma = f.sigma.as_slice();
        let rank = match rule {
            RankRule::Full => r_max,
            RankRule::Fixed { r } => r.clamp(1, r_max),
            RankRule::Energy { threshold_percent } => {
                let profile = if self.energy_squared {
                    energy_profile_squared(sigma)
                } else {
                    energy_profile(sigma)
                };
                let target = threshold_percent - self.energy_slack;
                profile
                    .iter()
                    .position(|e| *e >= target)
                    .map_or(r_max, |i| i + 1)
            }
            RankRule::HardThreshold => {
                let tau = hard_threshold(sigma, dims)?;
                let count = sigma.iter().filter(|s| **s > tau).count();
                if count >= r_max || (self.ht_rank_fallback && tau > r_max as f64) {
                    r_max
                } else {
                    count.max(1)
                }
            }
        };
        Ok(rank)
    }
}

/// Rank chosen by `rule` with strict energy comparison.
pub fn select_rank(f: &SvdFactors, rule: RankRule, dims: (usize, usize)) -> Result<usize> {
    RankSelector::default().select(f, rule, dims)
}

/// Leading `r` singular triplets.
pub fn truncate(f: &SvdFactors, r: usize) -> Result<SvdFactors> {
    check_rank(r, f.r_max())?;
    Ok(SvdFactors {
        u: f.u.columns(0, r).into_owned(),
        sigma: f.sigma.rows(0, r).into_owned(),
        v: f.v.columns(0, r).into_owned(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentifiedModel {
    pub a: DMatrix<f64>,
    pub rank_used: usize,
    pub rule: RankRule,
    pub basis: Option<BasisSpec>,
    /// Wall time of the solve stage alone.
    pub timing_ns: u64,
    /// Multiply-adds performed by the solve.
    pub flops: u64,
}

impl IdentifiedModel {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn with_basis(mut self, basis: BasisSpec) -> Self {
        self.basis = Some(basis);
        self
    }

    pub fn with_rule(mut self, rule: RankRule) -> Self {
        self.rule = rule;
        self
    }
}

/// `Ã = X'·Ṽ·Σ̃⁻¹·Ũᵀ` at rank `r`, timed over the solve only.
pub fn truncated_system_matrix(
    pair: &SnapshotPair,
    f: &SvdFactors,
    r: usize,
) -> Result<IdentifiedModel> {
    let start = Instant::now();
    let (a, flops) = solve_from_factors(&pair.x_shift, f, r)?;
    let timing_ns = start.elapsed().as_nanos().max(1) as u64;
    Ok(IdentifiedModel {
        a,
        rank_used: r,
        rule: RankRule::Fixed { r },
        basis: None,
        timing_ns,
        flops,
    })
}

/// Full-rank system matrix from precomputed factors.
pub fn full_system_matrix_from(pair: &SnapshotPair, f: &SvdFactors) -> Result<IdentifiedModel> {
    Ok(truncated_system_matrix(pair, f, f.r_max())?.with_rule(RankRule::Full))
}

/// `A = X'·X†` with `X†` from the thin SVD of `X`.
pub fn full_system_matrix(pair: &SnapshotPair) -> Result<IdentifiedModel> {
    let f = svd_thin(&pair.x)?;
    full_system_matrix_from(pair, &f)
}

pub fn predict_next(model: &IdentifiedModel, lifted: &LiftedState) -> Result<LiftedState> {
    if lifted.values.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: lifted.values.len(),
        });
    }
    let next = &model.a * DVector::from_column_slice(&lifted.values);
    Ok(LiftedState {
        values: next.as_slice().to_vec(),
        basis: lifted.basis,
    })
}

/// Iterates the lifted dynamics and projects every state, including the
/// start, back to `(s, y_L)`. The lifted state is propagated as-is and is
/// never re-lifted from the projected coordinates.
pub fn rollout(
    model: &IdentifiedModel,
    start: &LiftedState,
    steps: usize,
) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::with_capacity(steps + 1);
    out.push(retrieve_state(start));
    let mut state = start.clone();
    for step in 1..=steps {
        state = predict_next(model, &state)?;
        if state
            .values
            .iter()
            .any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT)
        {
            return Err(Error::Diverged { step });
        }
        out.push(retrieve_state(&state));
    }
    Ok(out)
}

/// Identifies the dataset a model was trained on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub seed: u64,
    pub n_traj: usize,
    pub config_hash: String,
}

/// On-disk form of an [`IdentifiedModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub basis: BasisSpec,
    pub rule: RankRule,
    pub rank: usize,
    pub d: usize,
    /// Row-major entries of `A`.
    pub a: Vec<f64>,
    pub timing_ns: u64,
    pub flops: u64,
    pub fingerprint: Fingerprint,
}

impl ModelDocument {
    pub fn new(model: &IdentifiedModel, basis: BasisSpec, fingerprint: Fingerprint) -> Self {
        let d = model.dim();
        let a = (0..d)
            .flat_map(|i| (0..d).map(move |j| (i, j)))
            .map(|(i, j)| model.a[(i, j)])
            .collect();
        Self {
            basis,
            rule: model.rule,
            rank: model.rank_used,
            d,
            a,
            timing_ns: model.timing_ns,
            flops: model.flops,
            fingerprint,
        }
    }

    pub fn to_model(&self) -> Result<IdentifiedModel> {
        if self.a.len() != self.d * self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d * self.d,
                got: self.a.len(),
            });
        }
        Ok(IdentifiedModel {
            a: DMatrix::from_row_slice(self.d, self.d, &self.a),
            rank_used: self.rank,
            rule: self.rule,
            basis: Some(self.basis),
            timing_ns: self.timing_ns,
            flops: self.flops,
        })
    }
}
