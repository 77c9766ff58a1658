//! Gaze geometry: angle/vector conversion, the angular-error metric, and
//! the two regression losses.
//!
//! Conventions:
//! - Gaze is parameterized as `(pitch, yaw)` in **radians**; degrees appear
//!   only in the reported metric.
//! - The 3-D gaze vector for `(pitch p, yaw y)` is
//!   `(-cos(p) sin(y), -sin(p), -cos(p) cos(y))`, a unit vector pointing out
//!   of the face toward the camera-frame target: `(0, 0)` maps to
//!   `(0, 0, -1)`.
//! - Angular error is `acos` of the cosine similarity of the two derived
//!   vectors, in degrees, with the cosine clamped to `[-1, 1]` so rounding
//!   can never push `acos` out of its domain.

use crate::math;

/// A gaze direction as pitch and yaw, in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GazeAngles {
    /// Vertical rotation (radians); positive looks up in angle space.
    pub pitch: f64,
    /// Horizontal rotation (radians).
    pub yaw: f64,
}

impl GazeAngles {
    /// Construct from radians.
    pub fn new(pitch: f64, yaw: f64) -> Self {
        GazeAngles { pitch, yaw }
    }

    /// True when both components are finite.
    pub fn is_finite(&self) -> bool {
        self.pitch.is_finite() && self.yaw.is_finite()
    }
}

/// A 3-D gaze direction vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazeVector {
    /// Rightward component.
    pub x: f64,
    /// Downward component.
    pub y: f64,
    /// Depth component (negative toward the camera).
    pub z: f64,
}

impl GazeVector {
    /// Dot product.
    pub fn dot(&self, other: &GazeVector) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    /// Euclidean norm.
    pub fn norm(&self) -> f64 {
        math::sqrt(self.dot(self))
    }
}

/// Errors from geometry operations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GeometryError {
    /// An angle input was NaN or infinite.
    NonFiniteAngle,
    /// Prediction and ground-truth batches differ in length.
    LengthMismatch {
        /// Number of predictions supplied.
        predictions: usize,
        /// Number of ground-truth entries supplied.
        truths: usize,
    },
    /// A batch operation received no samples.
    EmptyBatch,
}

impl core::fmt::Display for GeometryError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            GeometryError::NonFiniteAngle => write!(f, "gaze angles must be finite"),
            GeometryError::LengthMismatch { predictions, truths } => {
                write!(f, "batch length mismatch: {predictions} predictions vs {truths} ground-truth entries")
            }
            GeometryError::EmptyBatch => write!(f, "batch operation received no samples"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for GeometryError {}

/// Convert `(pitch, yaw)` to the unit 3-D gaze vector.
///
/// `x = -cos(pitch) sin(yaw)`, `y = -sin(pitch)`,
/// `z = -cos(pitch) cos(yaw)`.
pub fn angles_to_vector(angles: GazeAngles) -> Result<GazeVector, GeometryError> {
    if !angles.is_finite() {
        return Err(GeometryError::NonFiniteAngle);
    }
    let cp = math::cos(angles.pitch);
    Ok(GazeVector {
        x: -cp * math::sin(angles.yaw),
        y: -math::sin(angles.pitch),
        z: -cp * math::cos(angles.yaw),
    })
}

/// Angular error between predicted and ground-truth gaze, in degrees.
///
/// Both angle pairs are converted to 3-D vectors; the error is
/// `acos(clamp(dot / (|a| |b|), -1, 1))` in degrees. Identical derived
/// vectors short-circuit to exactly `0.0` (the rounded cosine is not
/// otherwise guaranteed to reach `1.0` bit-exactly).
pub fn angular_error_deg(predicted: GazeAngles, truth: GazeAngles) -> Result<f64, GeometryError> {
    let a = angles_to_vector(predicted)?;
    let b = angles_to_vector(truth)?;
    if a == b {
        return Ok(0.0);
    }
    let cosine = a.dot(&b) / (a.norm() * b.norm());
    let clamped = cosine.clamp(-1.0, 1.0);
    Ok(math::to_degrees(math::acos(clamped)))
}

/// Mean angular error over a batch, in degrees.
pub fn mean_angular_error_deg(
    predicted: &[GazeAngles],
    truth: &[GazeAngles],
) -> Result<f64, GeometryError> {
    check_batch(predicted, truth)?;
    let mut sum = 0.0;
    for (p, t) in predicted.iter().zip(truth.iter()) {
        sum += angular_error_deg(*p, *t)?;
    }
    Ok(sum / predicted.len() as f64)
}

/// Mean absolute error over all pitch/yaw components of a batch.
///
/// Normalizes by the number of scalar components (`2n`), so pitch and yaw
/// contribute symmetrically regardless of batch size.
pub fn l1_loss(predicted: &[GazeAngles], truth: &[GazeAngles]) -> Result<f64, GeometryError> {
    check_batch(predicted, truth)?;
    let mut sum = 0.0;
    for (p, t) in predicted.iter().zip(truth.iter()) {
        sum += math::abs(p.pitch - t.pitch) + math::abs(p.yaw - t.yaw);
    }
    Ok(sum / (2 * predicted.len()) as f64)
}

/// Mean squared error over all pitch/yaw components of a batch
/// (normalized by `2n`, as in [`l1_loss`]).
pub fn l2_loss(predicted: &[GazeAngles], truth: &[GazeAngles]) -> Result<f64, GeometryError> {
    check_batch(predicted, truth)?;
    let mut sum = 0.0;
    for (p, t) in predicted.iter().zip(truth.iter()) {
        let dp = p.pitch - t.pitch;
        let dy = p.yaw - t.yaw;
        sum += dp * dp + dy * dy;
    }
    Ok(sum / (2 * predicted.len()) as f64)
}

fn check_batch(predicted: &[GazeAngles], truth: &[GazeAngles]) -> Result<(), GeometryError> {
    if predicted.len() != truth.len() {
        return Err(GeometryError::LengthMismatch {
            predictions: predicted.len(),
            truths: truth.len(),
        });
    }
    if predicted.is_empty() {
        return Err(GeometryError::EmptyBatch);
    }
    for a in predicted.iter().chain(truth.iter()) {
        if !a.is_finite() {
            return Err(GeometryError::NonFiniteAngle);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use core::f64::consts::{FRAC_PI_2, FRAC_PI_4, FRAC_PI_6};

    #[test]
    fn straight_ahead_maps_to_negative_z() {
        let v = angles_to_vector(GazeAngles::new(0.0, 0.0)).unwrap();
        assert_eq!(v, GazeVector { x: 0.0, y: -0.0, z: -1.0 });
    }

    #[test]
    fn pitch_yaw_quadrant_oracle() {
        // (pi/6, pi/4): x = -cos(30deg) sin(45deg) = -sqrt(6)/4,
        // y = -sin(30deg) = -1/2, z = -cos(30deg) cos(45deg) = -sqrt(6)/4.
        // Reference decimals computed with 200-bit arithmetic on the exact
        // f64 inputs.
        let v = angles_to_vector(GazeAngles::new(FRAC_PI_6, FRAC_PI_4)).unwrap();
        assert!((v.x - (-0.6123724356957945)).abs() < 1e-14);
        assert!((v.y - (-0.5)).abs() < 1e-14);
        assert!((v.z - (-0.6123724356957946)).abs() < 1e-14);
        let algebraic = -math::sqrt(6.0) / 4.0;
        assert!((v.x - algebraic).abs() < 1e-12);
        assert!((v.z - algebraic).abs() < 1e-12);
        assert!((v.x - v.z).abs() < 1e-12);
    }

    #[test]
    fn derived_vectors_are_unit_norm() {
        let mut p = -FRAC_PI_2;
        while p <= FRAC_PI_2 {
            let mut y = -FRAC_PI_2;
            while y <= FRAC_PI_2 {
                let v = angles_to_vector(GazeAngles::new(p, y)).unwrap();
                assert!((v.norm() - 1.0).abs() < 1e-12, "norm off at ({p}, {y})");
                y += 0.37;
            }
            p += 0.41;
        }
    }

    #[test]
    fn angular_error_reference_value() {
        // Reference computed with 200-bit arithmetic on the exact f64 inputs:
        // error((0.1, 0.2), (-0.05, 0.35)) = 12.14665687186182681... degrees.
        let e = angular_error_deg(GazeAngles::new(0.1, 0.2), GazeAngles::new(-0.05, 0.35)).unwrap();
        assert!((e - 12.146656871861827).abs() < 1e-10, "got {e}");
    }

    #[test]
    fn identical_angles_give_exactly_zero() {
        let cases = [
            GazeAngles::new(0.0, 0.0),
            GazeAngles::new(0.3, -0.7),
            GazeAngles::new(-1.2, 1.5),
            GazeAngles::new(1e-9, -1e-9),
        ];
        for a in cases {
            assert_eq!(angular_error_deg(a, a).unwrap(), 0.0);
        }
    }

    #[test]
    fn quarter_turn_is_ninety_degrees() {
        let e = angular_error_deg(GazeAngles::new(0.0, 0.0), GazeAngles::new(0.0, FRAC_PI_2)).unwrap();
        assert!((e - 90.0).abs() < 1e-9, "got {e}");
    }

    #[test]
    fn metric_is_symmetric_bitwise() {
        let a = GazeAngles::new(0.21, -0.83);
        let b = GazeAngles::new(-0.4, 0.95);
        assert_eq!(angular_error_deg(a, b).unwrap(), angular_error_deg(b, a).unwrap());
    }

    #[test]
    fn opposite_vectors_clamp_to_180() {
        // pitch 0, yaw 0 vs yaw pi: vectors (0,0,-1) and ~(0,0,1).
        let e = angular_error_deg(
            GazeAngles::new(0.0, 0.0),
            GazeAngles::new(0.0, core::f64::consts::PI),
        )
        .unwrap();
        assert!((e - 180.0).abs() < 1e-9, "got {e}");
    }

    #[test]
    fn non_finite_angles_are_rejected() {
        assert_eq!(
            angles_to_vector(GazeAngles::new(f64::NAN, 0.0)),
            Err(GeometryError::NonFiniteAngle)
        );
        assert_eq!(
            angular_error_deg(GazeAngles::new(0.0, f64::INFINITY), GazeAngles::new(0.0, 0.0)),
            Err(GeometryError::NonFiniteAngle)
        );
    }

    #[test]
    fn l1_loss_hand_oracle() {
        // Component deviations: |0.1-0.0|=0.1, |0.2-0.4|=0.2, |{-0.3}-0.3|=0.6, |0.0-0.0|=0.
        // Mean over 4 components = 0.225.
        let pred = vec![GazeAngles::new(0.1, 0.2), GazeAngles::new(-0.3, 0.0)];
        let truth = vec![GazeAngles::new(0.0, 0.4), GazeAngles::new(0.3, 0.0)];
        let l = l1_loss(&pred, &truth).unwrap();
        assert!((l - 0.225).abs() < 1e-15);
    }

    #[test]
    fn l2_loss_hand_oracle() {
        // Squared deviations: 0.01, 0.04, 0.36, 0.0; mean over 4 = 0.1025.
        let pred = vec![GazeAngles::new(0.1, 0.2), GazeAngles::new(-0.3, 0.0)];
        let truth = vec![GazeAngles::new(0.0, 0.4), GazeAngles::new(0.3, 0.0)];
        let l = l2_loss(&pred, &truth).unwrap();
        assert!((l - 0.1025).abs() < 1e-15);
    }

    #[test]
    fn zero_loss_on_perfect_prediction() {
        let batch = vec![GazeAngles::new(0.5, -0.25); 3];
        assert_eq!(l1_loss(&batch, &batch).unwrap(), 0.0);
        assert_eq!(l2_loss(&batch, &batch).unwrap(), 0.0);
        assert_eq!(mean_angular_error_deg(&batch, &batch).unwrap(), 0.0);
    }

    #[test]
    fn batch_contract_violations() {
        let one = vec![GazeAngles::new(0.0, 0.0)];
        let two = vec![GazeAngles::new(0.0, 0.0); 2];
        assert_eq!(
            l1_loss(&one, &two),
            Err(GeometryError::LengthMismatch { predictions: 1, truths: 2 })
        );
        assert_eq!(l2_loss(&[], &[]), Err(GeometryError::EmptyBatch));
        let nan = vec![GazeAngles::new(f64::NAN, 0.0)];
        assert_eq!(l1_loss(&nan, &one), Err(GeometryError::NonFiniteAngle));
    }
}
