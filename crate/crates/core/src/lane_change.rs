//! Stochastic lane-change trajectory model.
//!
//! The longitudinal motion follows a constant-acceleration model driven by
//! scalar acceleration noise. The lateral motion is a half period of a
//! sinusoid that carries the vehicle from the middle of the right lane to
//! the middle of the left lane; its phase and length are set by the sampled
//! initial lateral offset and yaw.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Consecutive rejections tolerated by the rejection samplers.
pub const MAX_REJECTIONS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneConfig {
    /// Lane width (m).
    pub w_l: f64,
    /// Vehicle width (m).
    pub w_v: f64,
    /// Longitudinal acceleration noise std (m/s²).
    pub sigma_a: f64,
    /// Initial lateral offset std (m).
    pub sigma_y: f64,
    /// Sample time (s).
    pub t: f64,
    /// Maximum initial yaw (rad).
    pub psi0_max: f64,
    pub s0: f64,
    pub v0: f64,
    pub a0: f64,
    pub n_traj: usize,
    /// Hard cap on samples per trajectory; longer runs are cut off here.
    pub max_samples: usize,
}

impl Default for LaneConfig {
    fn default() -> Self {
        let w_l = 3.5;
        let w_v = 1.5;
        Self {
            w_l,
            w_v,
            sigma_a: 0.2 / 3.0,
            sigma_y: (w_l - w_v) / 6.0,
            t: 0.1,
            psi0_max: 15f64.to_radians(),
            s0: 0.0,
            v0: 10.0,
            a0: 0.0,
            n_traj: 100,
            max_samples: 20_000,
        }
    }
}

impl LaneConfig {
    /// Every violated invariant, empty when the config is usable.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let finite = [
            ("w_L", self.w_l),
            ("w_V", self.w_v),
            ("sigma_a_s", self.sigma_a),
            ("sigma_y_L", self.sigma_y),
            ("T", self.t),
            ("psi_0_max", self.psi0_max),
            ("s_0", self.s0),
            ("v_0", self.v0),
            ("a_0", self.a0),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                out.push(format!("{name} must be finite (got {v})"));
            }
        }
        if !(self.w_l > 0.0) {
            out.push(format!("w_L must be > 0 (got {})", self.w_l));
        }
        if !(self.t > 0.0) {
            out.push(format!("T must be > 0 (got {})", self.t));
        }
        if !(self.psi0_max > 0.0 && self.psi0_max < FRAC_PI_2) {
            out.push(format!(
                "psi_0_max must lie in (0, 90) degrees (got {} deg)",
                self.psi0_max.to_degrees()
            ));
        }
        if !(self.sigma_a >= 0.0) {
            out.push(format!("sigma_a_s must be >= 0 (got {})", self.sigma_a));
        }
        if !(self.sigma_y >= 0.0) {
            out.push(format!("sigma_y_L must be >= 0 (got {})", self.sigma_y));
        }
        if self.n_traj < 1 {
            out.push("N_T must be >= 1".to_string());
        }
        if self.max_samples < 2 {
            out.push("max_samples must be >= 2".to_string());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }
}

/// Longitudinal kinematic state `[s, v_s, a_s]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LongState {
    pub s: f64,
    pub v: f64,
    pub a: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneGeometry {
    pub y_l0: f64,
    pub psi0: f64,
    /// Longitudinal length of the full sinusoid.
    pub d_l: f64,
    /// Longitudinal offset of the start point within the sinusoid.
    pub x_l: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `(s, y_L)` pairs in time order.
    pub samples: Vec<(f64, f64)>,
    pub geometry: LaneGeometry,
    pub seed_id: u64,
    /// Geometry draws discarded before this one was accepted.
    pub rejections: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Draws `y_L0 ~ N(w_L/2, σ_y²)` restricted to `(w_L/2, 3·w_L/2]`.
pub fn sample_initial_lateral<R: Rng + ?Sized>(cfg: &LaneConfig, rng: &mut R) -> Result<f64> {
    let lo = 0.5 * cfg.w_l;
    let hi = 1.5 * cfg.w_l;
    let normal = Normal::new(lo, cfg.sigma_y)
        .map_err(|e| Error::Domain(format!("lateral offset distribution: {e}")))?;
    for _ in 0..MAX_REJECTIONS {
        let y = normal.sample(rng);
        if y > lo && y <= hi {
            return Ok(y);
        }
    }
    Err(Error::Sampling {
        what: "initial lateral offset",
        attempts: MAX_REJECTIONS,
    })
}

/// Draws `ψ0 ~ U(0, ψ0_max]`; zero is excluded.
pub fn sample_initial_yaw<R: Rng + ?Sized>(cfg: &LaneConfig, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    cfg.psi0_max * (1.0 - u)
}

/// Sinusoid length `d_L` and start offset `x_L` for a start pose.
pub fn lane_change_geometry(y_l0: f64, psi0: f64, w_l: f64) -> Result<(f64, f64)> {
    let z = 2.0 * y_l0 / w_l - 2.0;
    if !(-1.0..=1.0).contains(&z) {
        return Err(Error::Domain(format!(
            "2·y_L0/w_L − 2 = {z} outside [−1, 1] (y_L0 = {y_l0}, w_L = {w_l})"
        )));
    }
    if !(psi0 > 0.0 && psi0 < FRAC_PI_2) {
        return Err(Error::Domain(format!("ψ0 = {psi0} outside (0, π/2)")));
    }
    let phase = z.asin();
    // cos(asin z) written as sqrt(1 − z²) so the endpoint z = 1 gives exactly 0.
    let d_l = w_l * PI / (2.0 * psi0.tan()) * ((1.0 - z) * (1.0 + z)).sqrt();
    let x_l = (0.5 + phase / PI) * d_l;
    Ok((d_l, x_l))
}

/// One constant-acceleration step with acceleration noise `w ~ N(0, σ_a²)`
/// entering through `g = [T²/2, T, 1]ᵀ`.
pub fn step_longitudinal<R: Rng + ?Sized>(
    state: LongState,
    t: f64,
    sigma_a: f64,
    rng: &mut R,
) -> LongState {
    let w: f64 = if sigma_a > 0.0 {
        let z: f64 = StandardNormal.sample(rng);
        sigma_a * z
    } else {
        0.0
    };
    let half_t2 = 0.5 * t * t;
    LongState {
        s: state.s + t * state.v + half_t2 * state.a + half_t2 * w,
        v: state.v + t * state.a + t * w,
        a: state.a + w,
    }
}

/// Lateral position at sinusoid arc length `arc = s_k + x_L`.
pub fn lateral_position(arc: f64, d_l: f64, w_l: f64) -> Result<f64> {
    if !(d_l > 0.0) {
        return Err(Error::Domain(format!("d_L = {d_l} must be > 0")));
    }
    if !(0.0..=d_l).contains(&arc) {
        return Err(Error::Domain(format!("arc {arc} outside [0, d_L = {d_l}]")));
    }
    Ok(0.5 * w_l * (PI * (arc / d_l) - FRAC_PI_2).sin() + w_l)
}

/// Rolls the kinematics forward for a fixed geometry, keeping samples while
/// `0 ≤ s_k + x_L ≤ d_L`.
pub fn trajectory_samples<R: Rng + ?Sized>(
    cfg: &LaneConfig,
    geometry: &LaneGeometry,
    rng: &mut R,
) -> Vec<(f64, f64)> {
    let mut samples = Vec::new();
    if !(geometry.d_l > 0.0) {
        return samples;
    }
    let mut state = LongState {
        s: cfg.s0,
        v: cfg.v0,
        a: cfg.a0,
    };
    while samples.len() < cfg.max_samples {
        let arc = state.s + geometry.x_l;
        let Ok(y) = lateral_position(arc, geometry.d_l, cfg.w_l) else {
            break;
        };
        samples.push((state.s, y));
        state = step_longitudinal(state, cfg.t, cfg.sigma_a, rng);
    }
    samples
}

/// Samples a start pose and generates one trajectory; poses that would give
/// fewer than two samples are redrawn.
pub fn generate_trajectory<R: Rng + ?Sized>(
    cfg: &LaneConfig,
    rng: &mut R,
    seed_id: u64,
) -> Result<Trajectory> {
    for rejections in 0..MAX_REJECTIONS {
        let y_l0 = sample_initial_lateral(cfg, rng)?;
        let psi0 = sample_initial_yaw(cfg, rng);
        let (d_l, x_l) = lane_change_geometry(y_l0, psi0, cfg.w_l)?;
        let geometry = LaneGeometry {
            y_l0,
            psi0,
            d_l,
            x_l,
        };
        let samples = trajectory_samples(cfg, &geometry, rng);
        if samples.len() >= 2 {
            return Ok(Trajectory {
                samples,
                geometry,
                seed_id,
                rejections,
            });
        }
    }
    Err(Error::Sampling {
        what: "trajectory geometry with at least 2 samples",
        attempts: MAX_REJECTIONS,
    })
}

/// `cfg.n_traj` trajectories; trajectory `i` draws only from child stream `i`.
pub fn generate_dataset(cfg: &LaneConfig, master_seed: u64) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    (0..cfg.n_traj as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng: Stream = rng::trajectory_stream(master_seed, i);
            generate_trajectory(cfg, &mut rng, i).map_err(|e| match e {
                Error::Sampling { .. } | Error::Domain(_) => {
                    Error::Domain(format!("trajectory {i}: {e}"))
                }
                e => e,
            })
        })
        .collect()
}

const TRAJ_HEADER: [&str; 4] = ["traj_id", "k", "s", "y_L"];
const META_HEADER: [&str; 7] = ["traj_id", "y_L0", "psi0", "d_L", "x_L", "seed", "rejections"];

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io("<csv>", io),
        other => Error::Format {
            path: "<csv>".into(),
            message: format!("{other:?}"),
        },
    }
}

/// Writes the sample table (`traj_id,k,s,y_L`).
pub fn write_samples_csv<W: Write>(out: W, trajectories: &[Trajectory]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAJ_HEADER).map_err(csv_err)?;
    for (id, traj) in trajectories.iter().enumerate() {
        for (k, (s, y)) in traj.samples.iter().enumerate() {
            w.write_record([id.to_string(), k.to_string(), s.to_string(), y.to_string()])
                .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

/// Writes one metadata record per trajectory.
pub fn write_metadata_csv<W: Write>(out: W, trajectories: &[Trajectory]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(META_HEADER).map_err(csv_err)?;
    for (id, traj) in trajectories.iter().enumerate() {
        let g = &traj.geometry;
        w.write_record([
            id.to_string(),
            g.y_l0.to_string(),
            g.psi0.to_string(),
            g.d_l.to_string(),
            g.x_l.to_string(),
            traj.seed_id.to_string(),
            traj.rejections.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, line: u64) -> Result<T> {
    rec.get(idx)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Format {
            path: "<csv>".into(),
            message: format!("line {line}: bad or missing column {idx}"),
        })
}

/// Reads back a dataset written by [`write_samples_csv`] and
/// [`write_metadata_csv`].
pub fn read_dataset<S: Read, M: Read>(samples: S, metadata: M) -> Result<Vec<Trajectory>> {
    let mut trajectories = Vec::new();
    let mut meta = csv::Reader::from_reader(metadata);
    for (row, rec) in meta.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = row as u64 + 2;
        let id: usize = parse_field(&rec, 0, line)?;
        if id != trajectories.len() {
            return Err(Error::Format {
                path: "<metadata>".into(),
                message: format!("line {line}: expected traj_id {}", trajectories.len()),
            });
        }
        trajectories.push(Trajectory {
            samples: Vec::new(),
            geometry: LaneGeometry {
                y_l0: parse_field(&rec, 1, line)?,
                psi0: parse_field(&rec, 2, line)?,
                d_l: parse_field(&rec, 3, line)?,
                x_l: parse_field(&rec, 4, line)?,
            },
            seed_id: parse_field(&rec, 5, line)?,
            rejections: parse_field(&rec, 6, line)?,
        });
    }
    let mut rdr = csv::Reader::from_reader(samples);
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = row as u64 + 2;
        let id: usize = parse_field(&rec, 0, line)?;
        let k: usize = parse_field(&rec, 1, line)?;
        let traj = trajectories.get_mut(id).ok_or_else(|| Error::Format {
            path: "<samples>".into(),
            message: format!("line {line}: unknown traj_id {id}"),
        })?;
        if k != traj.samples.len() {
            return Err(Error::Format {
                path: "<samples>".into(),
                message: format!("line {line}: samples of trajectory {id} out of order"),
            });
        }
        traj.samples
            .push((parse_field(&rec, 2, line)?, parse_field(&rec, 3, line)?));
    }
    Ok(trajectories)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn quiet(cfg: LaneConfig) -> LaneConfig {
        LaneConfig {
            sigma_a: 0.0,
            ..cfg
        }
    }

    #[test]
    fn defaults_match_setup_values() {
        let c = LaneConfig::default();
        assert_eq!(c.w_l, 3.5);
        assert_abs_diff_eq!(c.sigma_y, 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.sigma_a, 0.2 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.psi0_max, 0.261_799_387_799_149_4, epsilon = 1e-15);
        assert!(c.violations().is_empty());
    }

    #[test]
    fn initial_lateral_in_range_and_reproducible() {
        let cfg = LaneConfig::default();
        for seed in 0..200 {
            let y = sample_initial_lateral(&cfg, &mut rng::stream(seed)).unwrap();
            assert!(y > 1.75 && y <= 5.25, "{y}");
            let y2 = sample_initial_lateral(&cfg, &mut rng::stream(seed)).unwrap();
            assert_eq!(y.to_bits(), y2.to_bits());
        }
    }

    #[test]
    fn zero_lateral_spread_exhausts_rejections() {
        let cfg = LaneConfig {
            sigma_y: 0.0,
            ..LaneConfig::default()
        };
        let err = sample_initial_lateral(&cfg, &mut rng::stream(1)).unwrap_err();
        assert!(matches!(err, Error::Sampling { attempts: MAX_REJECTIONS, .. }));
    }

    #[test]
    fn initial_yaw_half_open_interval() {
        let cfg = LaneConfig::default();
        let mut rng = rng::stream(3);
        for _ in 0..10_000 {
            let psi = sample_initial_yaw(&cfg, &mut rng);
            assert!(psi > 0.0 && psi <= 0.261_799_387_799_149_4);
        }
        let a = sample_initial_yaw(&cfg, &mut rng::stream(9));
        let b = sample_initial_yaw(&cfg, &mut rng::stream(9));
        assert_eq!(a, b);
    }

    #[test]
    fn geometry_at_lane_center_and_far_end() {
        let (d, x) = lane_change_geometry(3.5, 45f64.to_radians(), 3.5).unwrap();
        assert_abs_diff_eq!(d, 3.5 * PI / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d, 5.497_787_143_782_138, epsilon = 1e-12);
        assert_abs_diff_eq!(x, d / 2.0, epsilon = 1e-12);

        let (d, x) = lane_change_geometry(5.25, 0.2, 3.5).unwrap();
        assert_eq!(d, 0.0);
        assert_eq!(x, 0.0);
    }

    #[test]
    fn geometry_rejects_out_of_domain() {
        assert!(lane_change_geometry(1.0, 0.1, 3.5).is_err());
        assert!(lane_change_geometry(5.3, 0.1, 3.5).is_err());
        assert!(lane_change_geometry(3.0, 0.0, 3.5).is_err());
    }

    #[test]
    fn offset_fraction_monotone_in_initial_lateral() {
        let w = 3.5;
        let mut prev = -1.0;
        for i in 1..1000 {
            let y = 0.5 * w + w * (i as f64) / 1000.0;
            let (d, x) = lane_change_geometry(y, 0.1, w).unwrap();
            let frac = x / d;
            assert!(frac > prev, "not increasing at y={y}");
            assert!((0.0..=1.0).contains(&frac));
            prev = frac;
        }
    }

    #[test]
    fn noiseless_kinematics() {
        let mut rng = rng::stream(0);
        let s = step_longitudinal(LongState { s: 0.0, v: 10.0, a: 0.0 }, 0.1, 0.0, &mut rng);
        assert_abs_diff_eq!(s.s, 1.0, epsilon = 1e-12);
        assert_eq!((s.v, s.a), (10.0, 0.0));
        let s = step_longitudinal(LongState { s: 0.0, v: 10.0, a: 2.0 }, 0.1, 0.0, &mut rng);
        assert_abs_diff_eq!(s.s, 1.01, epsilon = 1e-12);
        assert_abs_diff_eq!(s.v, 10.2, epsilon = 1e-12);
        assert_eq!(s.a, 2.0);
    }

    #[test]
    fn noise_factorization_matches_covariance() {
        for &t in &[0.01f64, 0.1, 0.5, 1.0, 2.0] {
            let sigma: f64 = 0.2 / 3.0;
            let g = [0.5 * t * t, t, 1.0];
            let cov = [
                [t.powi(4) / 4.0, t.powi(3) / 2.0, t * t / 2.0],
                [t.powi(3) / 2.0, t * t, t],
                [t * t / 2.0, t, 1.0],
            ];
            for i in 0..3 {
                for j in 0..3 {
                    let lhs = sigma * sigma * g[i] * g[j];
                    let rhs = cov[i][j] * sigma * sigma;
                    assert!((lhs - rhs).abs() <= 1e-12, "T={t} ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn noisy_step_mean_matches_transition() {
        let sigma_a = 0.2 / 3.0;
        let t = 0.1;
        let n = 100_000;
        let start = LongState { s: 1.0, v: 10.0, a: 0.5 };
        let mut rng = rng::stream(11);
        let mean = (0..n)
            .map(|_| step_longitudinal(start, t, sigma_a, &mut rng).s)
            .sum::<f64>()
            / n as f64;
        let expected = 1.0 + 10.0 * t + 0.5 * 0.5 * t * t;
        let tol = 4.0 * (sigma_a * t * t / 2.0) / (n as f64).sqrt();
        assert!((mean - expected).abs() <= tol, "{mean} vs {expected}");
    }

    #[test]
    fn lateral_position_endpoints() {
        let w = 3.5;
        let d = 20.0;
        assert_abs_diff_eq!(lateral_position(0.0, d, w).unwrap(), w / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(lateral_position(d, d, w).unwrap(), 1.5 * w, epsilon = 1e-12);
        assert_abs_diff_eq!(lateral_position(d / 2.0, d, w).unwrap(), w, epsilon = 1e-12);
        assert!(lateral_position(1.0, 0.0, w).is_err());
    }

    #[test]
    fn noiseless_sample_count() {
        let cfg = quiet(LaneConfig::default());
        for &(d_l, x_l) in &[(5.0, 0.25), (5.0, 1.7), (12.3, 0.05), (40.0, 13.4)] {
            let geometry = LaneGeometry { y_l0: 3.5, psi0: 0.1, d_l, x_l };
            let samples = trajectory_samples(&cfg, &geometry, &mut rng::stream(0));
            let expected = 1 + ((d_l - x_l) / (cfg.v0 * cfg.t)).floor() as usize;
            assert_eq!(samples.len(), expected, "d_L={d_l} x_L={x_l}");
            for (k, (s, _)) in samples.iter().enumerate() {
                assert_abs_diff_eq!(*s, k as f64 * cfg.v0 * cfg.t, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn sample_cap_truncates() {
        let cfg = LaneConfig {
            max_samples: 7,
            ..quiet(LaneConfig::default())
        };
        let geometry = LaneGeometry { y_l0: 3.5, psi0: 0.01, d_l: 500.0, x_l: 250.0 };
        assert_eq!(trajectory_samples(&cfg, &geometry, &mut rng::stream(0)).len(), 7);
    }

    #[test]
    fn generated_trajectory_invariants_and_determinism() {
        let cfg = LaneConfig::default();
        let a = generate_trajectory(&cfg, &mut rng::stream(5), 0).unwrap();
        let b = generate_trajectory(&cfg, &mut rng::stream(5), 0).unwrap();
        assert_eq!(a, b);
        assert!(a.len() >= 2);
        let g = a.geometry;
        assert_abs_diff_eq!(a.samples[0].1, g.y_l0, epsilon = 1e-9);
        for &(s, y) in &a.samples {
            assert!((1.75..=5.25).contains(&y), "{y}");
            assert!(s + g.x_l <= g.d_l && s + g.x_l >= 0.0);
        }
    }

    #[test]
    fn dataset_is_order_independent() {
        let cfg = LaneConfig {
            n_traj: 12,
            ..LaneConfig::default()
        };
        let all = generate_dataset(&cfg, 42).unwrap();
        assert_eq!(all.len(), 12);
        for i in [11u64, 3, 7] {
            let single = generate_trajectory(&cfg, &mut rng::trajectory_stream(42, i), i).unwrap();
            assert_eq!(all[i as usize], single);
        }
        let one = generate_dataset(&LaneConfig { n_traj: 1, ..cfg }, 42).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0], all[0]);
    }

    #[test]
    fn csv_round_trip() {
        let cfg = LaneConfig {
            n_traj: 4,
            ..LaneConfig::default()
        };
        let data = generate_dataset(&cfg, 8).unwrap();
        let mut samples = Vec::new();
        let mut meta = Vec::new();
        write_samples_csv(&mut samples, &data).unwrap();
        write_metadata_csv(&mut meta, &data).unwrap();
        let back = read_dataset(samples.as_slice(), meta.as_slice()).unwrap();
        assert_eq!(back, data);
    }
}
