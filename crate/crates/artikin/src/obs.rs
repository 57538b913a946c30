//! Observation model for noisy pose measurements.
//!
//! An observed relative pose `z` is explained as either an inlier — the
//! model prediction `Δ̂` corrupted by zero-mean Gaussian noise in a 6-D
//! residual chart — or an outlier drawn uniformly from the workspace. With
//! outlier ratio `γ` the density is the two-component mixture
//!
//! `p(z | Δ̂) = (1 − γ) · N(resid(z, Δ̂); 0, Σ_z) + γ · u`,
//!
//! where `u` is a constant uniform density over workspace poses. An
//! exponential prior `p(γ) ∝ exp(−w·γ)` expresses that outliers should be
//! rare; it is applied once per observation sequence (see
//! [`crate::estimate::sequence_log_lik`]).
//!
//! The residual chart stacks the position difference and the rotation
//! vector of the relative orientation:
//! `resid(z, Δ̂) = (z.pos − Δ̂.pos; rotvec(Δ̂.rot⁻¹ · z.rot))`.

use nalgebra::Vector6;

use crate::se3::{rotation_vector, Pose};
use crate::{Error, Result};

/// Default weight of the exponential outlier-ratio prior.
pub const DEFAULT_OUTLIER_W: f64 = 10.0;

/// Default initial outlier ratio used when fitting starts.
pub const DEFAULT_GAMMA_INIT: f64 = 0.1;

/// Measurement-noise description shared by the whole pipeline.
///
/// `sigma_pos`/`sigma_orient` parametrize the diagonal covariance
/// `Σ_z = diag(σ_pos²·I₃, σ_orient²·I₃)` of the relative-pose residual.
/// `sigma_y_pos`/`sigma_y_orient` play the same role for whole-part poses
/// when scoring kinematic graphs (`Σ_y`); by default they equal the
/// relative-pose values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// Positional noise of relative-pose observations, in meters.
    pub sigma_pos: f64,
    /// Orientational noise of relative-pose observations, in radians.
    pub sigma_orient: f64,
    /// Diameter of the workspace, in meters; sets the uniform outlier
    /// density.
    pub workspace_diameter: f64,
    /// Positional noise of whole-part pose observations, in meters.
    pub sigma_y_pos: f64,
    /// Orientational noise of whole-part pose observations, in radians.
    pub sigma_y_orient: f64,
}

impl NoiseSpec {
    /// Builds a spec with `Σ_y = Σ_z`. All values must be positive and
    /// finite.
    pub fn new(sigma_pos: f64, sigma_orient: f64, workspace_diameter: f64) -> Result<Self> {
        for (name, v) in [
            ("sigma_pos", sigma_pos),
            ("sigma_orient", sigma_orient),
            ("workspace_diameter", workspace_diameter),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(Self {
            sigma_pos,
            sigma_orient,
            workspace_diameter,
            sigma_y_pos: sigma_pos,
            sigma_y_orient: sigma_orient,
        })
    }

    /// Builds a spec from *per-part* measurement noise by first-order error
    /// propagation through the relative-pose map `z = y_i ⊖ y_j`.
    ///
    /// With independent per-part errors — isotropic position noise
    /// `sigma_pos` per axis and a rotation by an angle of standard
    /// deviation `sigma_orient` about a uniform random axis — the
    /// relative observation sees, per residual axis:
    ///
    /// - orientation: `√(2/3)·σ_orient` (two parts contribute, and a
    ///   random-axis angle spreads over three rotation-vector components);
    /// - position: `√(2·σ_pos² + (2/9)·(σ_orient·baseline)²)`, where
    ///   `baseline` is the typical distance between the two parts'
    ///   origins — the reference part's orientation error sweeps the other
    ///   part sideways by angle × distance.
    ///
    /// The whole-part noise `Σ_y` keeps the per-part values
    /// (`σ_orient/√3` per rotation-vector axis).
    pub fn propagated(
        sigma_pos: f64,
        sigma_orient: f64,
        workspace_diameter: f64,
        baseline: f64,
    ) -> Result<Self> {
        if !baseline.is_finite() || baseline < 0.0 {
            return Err(Error::Invalid(format!(
                "baseline must be non-negative, got {baseline}"
            )));
        }
        let rel_pos =
            (2.0 * sigma_pos * sigma_pos + 2.0 / 9.0 * (sigma_orient * baseline).powi(2)).sqrt();
        let rel_orient = (2.0f64 / 3.0).sqrt() * sigma_orient;
        Self::new(rel_pos, rel_orient, workspace_diameter)?
            .with_pose_noise(sigma_pos, sigma_orient / 3.0f64.sqrt())
    }

    /// Overrides the whole-part pose noise `Σ_y`.
    pub fn with_pose_noise(mut self, sigma_y_pos: f64, sigma_y_orient: f64) -> Result<Self> {
        for (name, v) in [("sigma_y_pos", sigma_y_pos), ("sigma_y_orient", sigma_y_orient)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        self.sigma_y_pos = sigma_y_pos;
        self.sigma_y_orient = sigma_y_orient;
        Ok(self)
    }
}

/// Outlier-mixture parameters: the ratio `γ` of outlier observations and
/// the weight `w` of the exponential prior over `γ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutlierSpec {
    /// Outlier ratio in `[0, 1]`.
    pub gamma: f64,
    /// Prior weight; larger values penalize explaining data as outliers.
    pub w: f64,
}

impl OutlierSpec {
    pub fn new(gamma: f64, w: f64) -> Result<Self> {
        if !gamma.is_finite() || !(0.0..=1.0).contains(&gamma) {
            return Err(Error::Invalid(format!("gamma must lie in [0, 1], got {gamma}")));
        }
        if !w.is_finite() || w < 0.0 {
            return Err(Error::Invalid(format!("w must be non-negative, got {w}")));
        }
        Ok(Self { gamma, w })
    }

    /// Same mixture with a different outlier ratio.
    pub fn with_gamma(self, gamma: f64) -> Self {
        Self { gamma, w: self.w }
    }
}

/// Median distance between the two parts' origins over a relative-pose
/// sequence — the `baseline` input of [`NoiseSpec::propagated`]. The median
/// shrugs off outlier poses. Returns zero for an empty sequence.
pub fn median_baseline(zs: &[Pose]) -> f64 {
    if zs.is_empty() {
        return 0.0;
    }
    let mut dists: Vec<f64> = zs.iter().map(|z| z.position.norm()).collect();
    dists.sort_by(|a, b| a.total_cmp(b));
    let mid = dists.len() / 2;
    if dists.len() % 2 == 1 {
        dists[mid]
    } else {
        0.5 * (dists[mid - 1] + dists[mid])
    }
}

/// The 6-D residual between an observation and a prediction: position
/// difference stacked on the rotation vector of the relative orientation.
pub fn residual(z: &Pose, delta_hat: &Pose) -> Vector6<f64> {
    let dp = z.position - delta_hat.position;
    let dr = rotation_vector(&(delta_hat.rotation().inverse() * z.rotation()));
    Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z)
}

/// Log-density of the zero-mean Gaussian with covariance
/// `diag(σ_pos²·I₃, σ_orient²·I₃)` evaluated at `resid`.
pub fn log_gaussian_with(resid: &Vector6<f64>, sigma_pos: f64, sigma_orient: f64) -> f64 {
    let mut quad = 0.0;
    for i in 0..3 {
        quad += (resid[i] / sigma_pos).powi(2);
    }
    for i in 3..6 {
        quad += (resid[i] / sigma_orient).powi(2);
    }
    -0.5 * quad + log_gaussian_peak(sigma_pos, sigma_orient)
}

/// Log-density of the observation Gaussian at `resid` under `Σ_z`.
pub fn log_gaussian(resid: &Vector6<f64>, noise: &NoiseSpec) -> f64 {
    log_gaussian_with(resid, noise.sigma_pos, noise.sigma_orient)
}

/// The Gaussian log-density at zero residual:
/// `−½·log((2π)⁶ · det Σ)` with `det Σ = σ_pos⁶ · σ_orient⁶`.
pub fn log_gaussian_peak(sigma_pos: f64, sigma_orient: f64) -> f64 {
    let log_two_pi = (2.0 * std::f64::consts::PI).ln();
    -0.5 * (6.0 * log_two_pi + 6.0 * sigma_pos.ln() + 6.0 * sigma_orient.ln())
}

/// The constant density of the uniform outlier component: one over the
/// volume of workspace poses, `1 / (diameter³ · π² · 8)`.
pub fn uniform_density(noise: &NoiseSpec) -> f64 {
    1.0 / (noise.workspace_diameter.powi(3) * std::f64::consts::PI.powi(2) * 8.0)
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Log of the inlier/outlier mixture density,
/// `log[(1 − γ)·N(resid; 0, Σ_z) + γ·u]`, computed in log space.
pub fn log_mixture(z: &Pose, delta_hat: &Pose, noise: &NoiseSpec, outlier: &OutlierSpec) -> f64 {
    let resid = residual(z, delta_hat);
    let inlier = if outlier.gamma < 1.0 {
        (1.0 - outlier.gamma).ln() + log_gaussian(&resid, noise)
    } else {
        f64::NEG_INFINITY
    };
    let out = if outlier.gamma > 0.0 {
        outlier.gamma.ln() + uniform_density(noise).ln()
    } else {
        f64::NEG_INFINITY
    };
    log_sum_exp(inlier, out)
}

/// Log of the (unnormalized) exponential prior over the outlier ratio:
/// `log p(γ) = −w·γ`.
pub fn log_gamma_prior(outlier: &OutlierSpec) -> f64 {
    -outlier.w * outlier.gamma
}

/// Log-likelihood of a single observation including the outlier-ratio
/// prior: `log_mixture + log p(γ)`.
///
/// Sequence-level scoring applies the prior once per sequence rather than
/// once per observation; use [`log_mixture`] there.
pub fn log_lik_observation(
    z: &Pose,
    delta_hat: &Pose,
    noise: &NoiseSpec,
    outlier: &OutlierSpec,
) -> f64 {
    log_mixture(z, delta_hat, noise, outlier) + log_gamma_prior(outlier)
}

/// Posterior probability that an observation is an inlier:
/// `(1 − γ)·N / ((1 − γ)·N + γ·u)`.
pub fn inlier_responsibility(
    z: &Pose,
    delta_hat: &Pose,
    noise: &NoiseSpec,
    outlier: &OutlierSpec,
) -> f64 {
    if outlier.gamma <= 0.0 {
        return 1.0;
    }
    if outlier.gamma >= 1.0 {
        return 0.0;
    }
    let resid = residual(z, delta_hat);
    let log_in = (1.0 - outlier.gamma).ln() + log_gaussian(&resid, noise);
    let log_out = outlier.gamma.ln() + uniform_density(noise).ln();
    // 1 / (1 + exp(log_out − log_in)) without overflow.
    let d = log_out - log_in;
    if d > 700.0 {
        0.0
    } else {
        1.0 / (1.0 + d.exp())
    }
}
