//! Friction computed from the cylinder's equation of motion.
//!
//! With both chamber pressures, piston kinematics, and the moving mass known,
//! the friction force is the only unknown in the force balance and can be
//! solved for sample by sample:
//!
//! `f = p1*A1 - p2*A2 - K_eq*x_p - m*a`
//!
//! The result is signed (positive while sliding toward the rod side), which
//! keeps the same expression exact in both sliding directions; the direction
//! only determines the regime tag. Two kinds of samples get masked out of
//! training targets: near zero velocity the balance no longer separates
//! friction from stiction load ([`FrictionRegime::NearZeroVelocity`]), and
//! within [`STOP_MARGIN`] of either end of the stroke the cushion can carry
//! part of the load ([`FrictionRegime::TravelLimit`]).
//!
//! The `K_eq*x_p` term models the trapped-oil stiffness of the two columns.
//! For valve-driven recordings the measured pressures already carry the
//! compressibility transients, so labeling those datasets normally passes a
//! zero-stiffness model (`bulk_modulus = 0`) to avoid double counting.

use crate::plant::CylinderGeometry;
use crate::signal::KinematicFrame;
use crate::{Error, Matrix, Result, Scalar};

/// Default half-width of the near-zero-velocity dead band, m/s.
pub const DEFAULT_EPS_V: f64 = 1e-4;

/// Distance from either stroke end, m, inside which a frame counts as
/// resting on the cushion. There the stop reacts part of the pressure load
/// and the force balance stops isolating friction. The margin is sized for
/// filtered position estimates, whose group delay makes a piston that has
/// already reached the stop read up to `|v| * delay` short of it (about
/// 14 mm at 0.55 m/s through the default smoothing chain).
pub const STOP_MARGIN: f64 = 15e-3;

/// Trapped-oil stiffness description: two fluid columns in parallel.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StiffnessModel<T> {
    /// Effective bulk modulus of the oil, Pa. Zero disables the spring term.
    pub bulk_modulus: T,
    /// Oil column length at `x_p = 0` on the cap side, m.
    pub dead_length_1: T,
    /// Oil column length at `x_p = stroke` on the rod side, m.
    pub dead_length_2: T,
    /// Stroke length, m.
    pub stroke: T,
}

impl<T: Scalar> StiffnessModel<T> {
    /// Stiffness model matching a cylinder's geometry.
    #[must_use]
    pub fn from_geometry(geom: &CylinderGeometry<T>) -> Self {
        Self {
            bulk_modulus: geom.bulk_modulus,
            dead_length_1: geom.dead_length_1,
            dead_length_2: geom.dead_length_2,
            stroke: geom.stroke,
        }
    }

    /// Same columns with the spring disabled (`bulk_modulus = 0`).
    #[must_use]
    pub fn disabled(geom: &CylinderGeometry<T>) -> Self {
        Self {
            bulk_modulus: T::zero(),
            ..Self::from_geometry(geom)
        }
    }

    /// Oil column lengths `(L1, L2)` at piston position `x_p`.
    #[must_use]
    pub fn chamber_lengths(&self, x_p: T) -> (T, T) {
        (
            self.dead_length_1 + x_p,
            self.dead_length_2 + (self.stroke - x_p),
        )
    }
}

/// Per-chamber stiffnesses `(K1, K2) = (beta*A1/L1, beta*A2/L2)`.
///
/// Errors with [`Error::OutOfRange`] when a column length is not positive.
pub fn chamber_stiffnesses<T: Scalar>(
    geom: &CylinderGeometry<T>,
    stiffness: &StiffnessModel<T>,
    x_p: T,
) -> Result<(T, T)> {
    let (l1, l2) = stiffness.chamber_lengths(x_p);
    if !(l1 > T::zero()) || !(l2 > T::zero()) {
        return Err(Error::OutOfRange(format!(
            "oil column length must be positive at x_p = {x_p} (L1 = {l1}, L2 = {l2})"
        )));
    }
    let beta = stiffness.bulk_modulus;
    Ok((
        beta * geom.area_cap() / l1,
        beta * geom.area_rod() / l2,
    ))
}

/// Equivalent stiffness of the two oil columns acting in parallel.
pub fn equivalent_stiffness<T: Scalar>(
    geom: &CylinderGeometry<T>,
    stiffness: &StiffnessModel<T>,
    x_p: T,
) -> Result<T> {
    let (k1, k2) = chamber_stiffnesses(geom, stiffness, x_p)?;
    Ok(k1 + k2)
}

/// Sliding regime of one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum FrictionRegime {
    /// `v > eps_v`: extending.
    SlidingRight,
    /// `v < -eps_v`: retracting.
    SlidingLeft,
    /// `|v| <= eps_v`: force balance does not isolate friction.
    NearZeroVelocity,
    /// Piston within [`STOP_MARGIN`] of a stroke end, where the cushion can
    /// carry load regardless of the apparent velocity.
    TravelLimit,
}

/// Friction solved from one frame's force balance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrictionLabel<T> {
    pub t: T,
    /// Signed friction force, N.
    pub f: T,
    pub regime: FrictionRegime,
}

/// Solves the force balance of a single frame for the friction force.
///
/// Errors when `eps_v <= 0` or the stiffness evaluation fails.
pub fn friction_from_motion<T: Scalar>(
    frame: &KinematicFrame<T>,
    geom: &CylinderGeometry<T>,
    stiffness: &StiffnessModel<T>,
    eps_v: T,
) -> Result<FrictionLabel<T>> {
    if !(eps_v > T::zero()) {
        return Err(Error::invalid("velocity dead band must be positive"));
    }
    let k_eq = equivalent_stiffness(geom, stiffness, frame.x_p)?;
    let f = frame.p1 * geom.area_cap() - frame.p2 * geom.area_rod()
        - k_eq * frame.x_p
        - geom.moving_mass * frame.a;
    let margin = T::from_f64(STOP_MARGIN);
    let regime = if frame.x_p <= margin || frame.x_p >= geom.stroke - margin {
        FrictionRegime::TravelLimit
    } else if frame.v > eps_v {
        FrictionRegime::SlidingRight
    } else if frame.v < -eps_v {
        FrictionRegime::SlidingLeft
    } else {
        FrictionRegime::NearZeroVelocity
    };
    Ok(FrictionLabel {
        t: frame.t,
        f,
        regime,
    })
}

/// Labeled training data for one contiguous recording.
///
/// Rows stay aligned with the source frames; `included[k]` is false for
/// rows whose target is unreliable, either near zero velocity or against a
/// travel stop (their features remain usable as window context). Feature
/// columns are `[p1, p2, v]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset<T> {
    pub t: Vec<T>,
    /// Smoothed piston position, kept so streaming inference can be replayed
    /// from a labeled file.
    pub x_p: Vec<T>,
    /// `[p1, p2, v]` per row.
    pub features: Matrix<T>,
    /// Signed friction force, N.
    pub target: Vec<T>,
    /// Whether the row's target is usable for fitting/evaluation.
    pub included: Vec<bool>,
    /// Sample interval, s.
    pub dt: T,
}

impl<T: Scalar> LabeledDataset<T> {
    #[must_use]
    pub fn len(&self) -> usize {
        self.t.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    #[must_use]
    pub fn n_included(&self) -> usize {
        self.included.iter().filter(|&&m| m).count()
    }

    /// Velocity column view.
    #[must_use]
    pub fn velocity(&self, row: usize) -> T {
        self.features.get(row, 2)
    }

    /// Indices of rows with usable targets.
    #[must_use]
    pub fn included_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.included[k]).collect()
    }

    /// Keeps rows `range.start..range.end`, preserving alignment.
    #[must_use]
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        let idx: Vec<usize> = (start..end).collect();
        Self {
            t: self.t[start..end].to_vec(),
            x_p: self.x_p[start..end].to_vec(),
            features: self.features.select_rows(&idx),
            target: self.target[start..end].to_vec(),
            included: self.included[start..end].to_vec(),
            dt: self.dt,
        }
    }
}

/// Labels every frame of a recording and assembles the training table.
///
/// Errors: fewer than 2 frames, a non-uniform frame grid, or (with
/// [`Error::EmptyDataset`]) a recording where no row slides clear of the
/// dead band and the travel stops.
pub fn label_dataset<T: Scalar>(
    frames: &[KinematicFrame<T>],
    geom: &CylinderGeometry<T>,
    stiffness: &StiffnessModel<T>,
    eps_v: T,
) -> Result<LabeledDataset<T>> {
    if frames.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "labeling needs at least 2 frames, got {}",
            frames.len()
        )));
    }
    let dt = frames[1].t - frames[0].t;
    if !(dt > T::zero()) {
        return Err(Error::invalid("frame timestamps must strictly increase"));
    }
    let tol = T::from_f64(crate::signal::GRID_TOLERANCE);
    let mut t = Vec::with_capacity(frames.len());
    let mut x_p = Vec::with_capacity(frames.len());
    let mut features = Matrix::zeros(0, 3);
    let mut target = Vec::with_capacity(frames.len());
    let mut included = Vec::with_capacity(frames.len());
    for (k, frame) in frames.iter().enumerate() {
        if k > 0 {
            let step = frame.t - frames[k - 1].t;
            if (step - dt).abs() > tol {
                return Err(Error::invalid(format!(
                    "non-uniform frame interval at frame {k}"
                )));
            }
        }
        let label = friction_from_motion(frame, geom, stiffness, eps_v)?;
        t.push(frame.t);
        x_p.push(frame.x_p);
        features.push_row(&[frame.p1, frame.p2, frame.v])?;
        target.push(label.f);
        included.push(matches!(
            label.regime,
            FrictionRegime::SlidingRight | FrictionRegime::SlidingLeft
        ));
    }
    if !included.iter().any(|&m| m) {
        return Err(Error::EmptyDataset(
            "no row slides clear of the dead band and the travel stops".into(),
        ));
    }
    Ok(LabeledDataset {
        t,
        x_p,
        features,
        target,
        included,
        dt,
    })
}
