use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default end-point stretch: `a(t) = 1 + 1.5 t`, so modes (2,0) and (0,1) cross at t = 2/3.
pub const DEFAULT_STRETCH_END: f64 = 2.5;
pub const DEFAULT_BUMP_AMPLITUDE: f64 = 0.3;

/// Smooth deformation `Φ_t` of the unit square, `t ∈ [0, 1]`.
///
/// The mesh topology is fixed; only the geometry seen through `Φ_t` changes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MappingFamily {
    /// `Φ_t(x, y) = (a(t) x, y)` with `a(t) = 1 + (a₁ − 1) t`.
    AffineStretch { stretch_end: f64 },
    /// `Φ_t(x, y) = (x, y (1 + t β sin πx))`.
    SineBump { amplitude: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyKind {
    Identity,
    AffineStretch,
    SineBump,
}

impl FromStr for FamilyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Self::Identity),
            "affine-stretch" => Ok(Self::AffineStretch),
            "sine-bump" => Ok(Self::SineBump),
            other => Err(Error::Config(format!(
                "unknown mapping family `{other}` (expected identity, affine-stretch or sine-bump)"
            ))),
        }
    }
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Identity => "identity",
            Self::AffineStretch => "affine-stretch",
            Self::SineBump => "sine-bump",
        })
    }
}

impl MappingFamily {
    pub fn identity() -> Self {
        Self::AffineStretch { stretch_end: 1.0 }
    }

    pub fn affine_stretch(stretch_end: f64) -> Result<Self> {
        if !(stretch_end > 0.0) || !stretch_end.is_finite() {
            return Err(Error::InvalidInput(format!(
                "stretch end value must be positive, got {stretch_end}"
            )));
        }
        Ok(Self::AffineStretch { stretch_end })
    }

    /// Amplitudes with `|β| < 1` keep the Jacobian determinant positive.
    pub fn sine_bump(amplitude: f64) -> Result<Self> {
        if !(amplitude.abs() < 1.0) {
            return Err(Error::InvalidInput(format!(
                "bump amplitude must satisfy |beta| < 1, got {amplitude}"
            )));
        }
        Ok(Self::SineBump { amplitude })
    }

    pub fn from_kind(kind: FamilyKind, stretch_end: f64, amplitude: f64) -> Result<Self> {
        match kind {
            FamilyKind::Identity => Ok(Self::identity()),
            FamilyKind::AffineStretch => Self::affine_stretch(stretch_end),
            FamilyKind::SineBump => Self::sine_bump(amplitude),
        }
    }

    /// Affine maps have a constant Jacobian on the whole square.
    pub fn is_affine(&self) -> bool {
        matches!(self, Self::AffineStretch { .. })
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, Self::AffineStretch { stretch_end } if *stretch_end == 1.0)
    }

    /// Stretch factor `a(t)` of the affine family, 1 for the bump.
    pub fn stretch(&self, t: f64) -> f64 {
        match *self {
            Self::AffineStretch { stretch_end } => 1.0 + (stretch_end - 1.0) * t,
            Self::SineBump { .. } => 1.0,
        }
    }

    /// `a'(t)`.
    pub fn stretch_rate(&self) -> f64 {
        match *self {
            Self::AffineStretch { stretch_end } => stretch_end - 1.0,
            Self::SineBump { .. } => 0.0,
        }
    }

    pub fn map(&self, t: f64, p: [f64; 2]) -> [f64; 2] {
        match *self {
            Self::AffineStretch { .. } => [self.stretch(t) * p[0], p[1]],
            Self::SineBump { amplitude } => {
                [p[0], p[1] * (1.0 + t * amplitude * (PI * p[0]).sin())]
            }
        }
    }

    /// `J[r][c] = ∂Φ_r/∂x̂_c`.
    pub fn jacobian(&self, t: f64, p: [f64; 2]) -> [[f64; 2]; 2] {
        match *self {
            Self::AffineStretch { .. } => [[self.stretch(t), 0.0], [0.0, 1.0]],
            Self::SineBump { amplitude } => {
                let s = t * amplitude;
                [
                    [1.0, 0.0],
                    [p[1] * s * PI * (PI * p[0]).cos(), 1.0 + s * (PI * p[0]).sin()],
                ]
            }
        }
    }

    pub fn kind(&self) -> FamilyKind {
        if self.is_identity() {
            FamilyKind::Identity
        } else if self.is_affine() {
            FamilyKind::AffineStretch
        } else {
            FamilyKind::SineBump
        }
    }
}

pub fn det2(j: &[[f64; 2]; 2]) -> f64 {
    j[0][0] * j[1][1] - j[0][1] * j[1][0]
}

/// `J⁻¹ J⁻ᵀ`, the metric pulling physical dot products of covariant fields back.
pub fn inverse_metric(j: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let d = det2(j);
    let inv = [[j[1][1] / d, -j[0][1] / d], [-j[1][0] / d, j[0][0] / d]];
    let mut out = [[0.0; 2]; 2];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, slot) in row.iter_mut().enumerate() {
            *slot = inv[r][0] * inv[c][0] + inv[r][1] * inv[c][1];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_start_is_identity() {
        let f = MappingFamily::affine_stretch(DEFAULT_STRETCH_END).unwrap();
        let p = [0.3, 0.7];
        assert_eq!(f.map(0.0, p), p);
        assert_eq!(f.jacobian(0.0, p), [[1.0, 0.0], [0.0, 1.0]]);
        assert!((f.stretch(2.0 / 3.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn bump_jacobian_matches_finite_differences() {
        let f = MappingFamily::sine_bump(DEFAULT_BUMP_AMPLITUDE).unwrap();
        let (t, p, h) = (0.8, [0.37, 0.61], 1e-6);
        let j = f.jacobian(t, p);
        for c in 0..2 {
            let mut pp = p;
            let mut pm = p;
            pp[c] += h;
            pm[c] -= h;
            let (fp, fm) = (f.map(t, pp), f.map(t, pm));
            for r in 0..2 {
                assert!(((fp[r] - fm[r]) / (2.0 * h) - j[r][c]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn determinant_positive_on_grid() {
        let f = MappingFamily::sine_bump(DEFAULT_BUMP_AMPLITUDE).unwrap();
        for it in 0..=10 {
            for ix in 0..=20 {
                for iy in 0..=20 {
                    let p = [ix as f64 / 20.0, iy as f64 / 20.0];
                    assert!(det2(&f.jacobian(it as f64 / 10.0, p)) > 0.0);
                }
            }
        }
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(MappingFamily::sine_bump(1.2).is_err());
        assert!(MappingFamily::affine_stretch(-1.0).is_err());
        assert!("warp".parse::<FamilyKind>().is_err());
    }
}
