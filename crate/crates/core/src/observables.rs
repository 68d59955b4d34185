//! Observable dictionaries used to lift `(s, y_L)` into the EDMD space.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::lane_change::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisSpec {
    /// `[s, y_L, s², y_L², …, s^N, y_L^N]`.
    Monomial { order: u32 },
    /// `[s, y_L, ρ(s, c_s), ρ(y_L, c_y)]` with the thin-plate kernel ρ.
    ThinPlateRadial { c_s: f64, c_y: f64 },
}

impl BasisSpec {
    pub fn dimension(&self) -> usize {
        match *self {
            BasisSpec::Monomial { order } => 2 * order as usize,
            BasisSpec::ThinPlateRadial { .. } => 4,
        }
    }

    /// Short label used in file names and report rows.
    pub fn label(&self) -> &'static str {
        match self {
            BasisSpec::Monomial { .. } => "monomial",
            BasisSpec::ThinPlateRadial { .. } => "radial",
        }
    }

    pub fn is_valid(&self) -> bool {
        match *self {
            BasisSpec::Monomial { order } => order >= 1,
            BasisSpec::ThinPlateRadial { c_s, c_y } => c_s.is_finite() && c_y.is_finite(),
        }
    }
}

impl fmt::Display for BasisSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BasisSpec::Monomial { order } => write!(f, "monomial(N_m={order})"),
            BasisSpec::ThinPlateRadial { c_s, c_y } => {
                write!(f, "radial(c_s={c_s:.6}, c_y={c_y:.6})")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiftedState {
    pub values: Vec<f64>,
    pub basis: BasisSpec,
}

/// Thin-plate kernel `|u − c|²·ln|u − c|`, zero at `u = c`.
pub fn thin_plate(u: f64, c: f64) -> f64 {
    let r = (u - c).abs();
    if r == 0.0 {
        0.0
    } else {
        r * r * r.ln()
    }
}

pub fn lift(point: (f64, f64), basis: &BasisSpec) -> LiftedState {
    let (s, y) = point;
    let values = match *basis {
        BasisSpec::Monomial { order } => {
            let mut v = Vec::with_capacity(2 * order as usize);
            let (mut sp, mut yp) = (1.0, 1.0);
            for _ in 0..order {
                sp *= s;
                yp *= y;
                v.push(sp);
                v.push(yp);
            }
            v
        }
        BasisSpec::ThinPlateRadial { c_s, c_y } => {
            vec![s, y, thin_plate(s, c_s), thin_plate(y, c_y)]
        }
    };
    LiftedState {
        values,
        basis: *basis,
    }
}

pub fn lift_trajectory(traj: &Trajectory, basis: &BasisSpec) -> Vec<LiftedState> {
    traj.samples.iter().map(|&p| lift(p, basis)).collect()
}

/// Projects a lifted state back onto `(s, y_L)`.
///
/// Both dictionaries carry the identity observables first, so this is the
/// exact inverse of [`lift`]. Model predictions are projected as-is; the
/// higher observables are not checked for consistency with the leading two.
pub fn retrieve_state(lifted: &LiftedState) -> (f64, f64) {
    (lifted.values[0], lifted.values[1])
}

/// Radial centers `c_s, c_y ~ U[−w_L/2, w_L/2]`.
pub fn sample_radial_centers<R: Rng + ?Sized>(w_l: f64, rng: &mut R) -> (f64, f64) {
    let half = 0.5 * w_l;
    let c_s = rng.random_range(-half..=half);
    let c_y = rng.random_range(-half..=half);
    (c_s, c_y)
}
