//! Candidate link models describing how one rigid part moves relative to
//! another.
//!
//! Four families cover the mechanisms found on everyday articulated
//! objects:
//!
//! - **rigid**: a fixed transform, no degrees of freedom;
//! - **prismatic**: translation along a fixed axis (drawers, sliders);
//! - **revolute**: rotation about a fixed axis (doors, hinges);
//! - **gp**: a nonparametric Gaussian-process model over a low-dimensional
//!   latent configuration, for mechanisms none of the parametric templates
//!   explain (garage-door linkages, planar tables).
//!
//! Each model maps a configuration `q` to a predicted relative pose
//! (`forward`) and projects an observed pose back to a configuration
//! (`inverse`). Parametric models additionally support closed-form fits
//! from minimal sample sets, which seed the robust estimation loop.

mod gp;

pub use gp::{GpHyper, GpModel, GP_TRAIN_BUDGETS, MAX_GP_TRAIN};

use nalgebra::{DMatrix, Matrix3, UnitQuaternion, Vector3};
use std::f64::consts::PI;

use crate::obs::residual;
use crate::se3::{orthonormalize, rotation_vector, wrap_angle, Pose};
use crate::{Error, Result};

/// Two prismatic samples closer than this (meters) do not determine an
/// axis.
pub const MIN_PRISMATIC_SEPARATION: f64 = 1e-6;

/// Three revolute samples spanning a triangle smaller than this (square
/// meters) do not determine a rotation plane.
pub const MIN_REVOLUTE_TRIANGLE_AREA: f64 = 1e-9;

/// Two revolute samples whose orientations differ by less than this
/// (radians) do not determine a rotation axis.
pub const MIN_REVOLUTE_PAIR_ANGLE: f64 = 1e-7;

/// Step used for the central-difference configuration Jacobian.
pub const JACOBIAN_STEP: f64 = 1e-5;

/// The model families, in fixed complexity order (fewest to most
/// parameters). This order breaks ties during model selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModelKind {
    Rigid,
    Prismatic,
    Revolute,
    Gp,
}

impl ModelKind {
    /// All kinds in canonical order.
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Rigid,
        ModelKind::Prismatic,
        ModelKind::Revolute,
        ModelKind::Gp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Rigid => "rigid",
            ModelKind::Prismatic => "prismatic",
            ModelKind::Revolute => "revolute",
            ModelKind::Gp => "gp",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rigid" => Ok(ModelKind::Rigid),
            "prismatic" => Ok(ModelKind::Prismatic),
            "revolute" => Ok(ModelKind::Revolute),
            "gp" => Ok(ModelKind::Gp),
            other => Err(Error::Invalid(format!("unknown model kind {other:?}"))),
        }
    }

    /// Number of samples a closed-form minimal fit needs, or `None` for the
    /// GP, which is trained on the full data set instead.
    pub fn minimal_sample_count(self) -> Option<usize> {
        match self {
            ModelKind::Rigid => Some(1),
            ModelKind::Prismatic => Some(2),
            ModelKind::Revolute => Some(3),
            ModelKind::Gp => None,
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Observed configuration interval per degree of freedom, widened as new
/// configurations are seen. Empty until the first update.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConfigRange {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ConfigRange {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.min.is_empty()
    }

    /// Widens the range to include `q`. The first update initializes it.
    pub fn update(&mut self, q: &[f64]) {
        if self.min.is_empty() {
            self.min = q.to_vec();
            self.max = q.to_vec();
            return;
        }
        debug_assert_eq!(self.min.len(), q.len());
        for (i, &v) in q.iter().enumerate() {
            self.min[i] = self.min[i].min(v);
            self.max[i] = self.max[i].max(v);
        }
    }
}

/// Family-specific parameters of a fitted link model.
#[derive(Debug, Clone)]
pub enum LinkParams {
    /// A constant relative transform.
    Rigid {
        offset: Pose,
    },
    /// Translation by `q` along `axis` (unit length, expressed in the frame
    /// of `origin`): `f(q) = origin ∘ translate(q·axis)`.
    Prismatic {
        origin: Pose,
        axis: Vector3<f64>,
    },
    /// Rotation by `q` about the Z axis of `center`, then the fixed
    /// transform `radial`: `f(q) = center ∘ rot_z(q) ∘ radial`.
    Revolute {
        center: Pose,
        radial: Pose,
    },
    /// Nonparametric model; see [`GpModel`].
    Gp(GpModel),
}

/// A fitted link model: family parameters plus the observed configuration
/// range.
#[derive(Debug, Clone)]
pub struct LinkModel {
    pub params: LinkParams,
    pub range: ConfigRange,
}

impl LinkModel {
    pub fn new(params: LinkParams) -> Self {
        Self {
            params,
            range: ConfigRange::empty(),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match &self.params {
            LinkParams::Rigid { .. } => ModelKind::Rigid,
            LinkParams::Prismatic { .. } => ModelKind::Prismatic,
            LinkParams::Revolute { .. } => ModelKind::Revolute,
            LinkParams::Gp(_) => ModelKind::Gp,
        }
    }

    /// Degrees of freedom of the configuration space.
    pub fn dof(&self) -> usize {
        match &self.params {
            LinkParams::Rigid { .. } => 0,
            LinkParams::Prismatic { .. } | LinkParams::Revolute { .. } => 1,
            LinkParams::Gp(gp) => gp.latent_dim,
        }
    }

    /// Number of free parameters `k` counted by the BIC: 6 (rigid),
    /// 6 + 3 (prismatic), 6 + 6 (revolute), and `(1 + d) + 6·n` for a GP
    /// with `n` training poses.
    pub fn param_count(&self) -> usize {
        match &self.params {
            LinkParams::Rigid { .. } => 6,
            LinkParams::Prismatic { .. } => 9,
            LinkParams::Revolute { .. } => 12,
            LinkParams::Gp(gp) => (1 + gp.latent_dim) + 6 * gp.train_len(),
        }
    }

    /// Predicted relative pose at configuration `q` (`q.len()` must equal
    /// [`LinkModel::dof`]).
    pub fn forward(&self, q: &[f64]) -> Result<Pose> {
        if q.len() != self.dof() {
            return Err(Error::Invalid(format!(
                "configuration has {} entries, model has {} dof",
                q.len(),
                self.dof()
            )));
        }
        match &self.params {
            LinkParams::Rigid { offset } => Ok(*offset),
            LinkParams::Prismatic { origin, axis } => {
                Ok(origin.compose(&Pose::from_translation(axis * q[0])))
            }
            LinkParams::Revolute { center, radial } => {
                Ok(center.compose(&Pose::rot_z(q[0])).compose(radial))
            }
            LinkParams::Gp(gp) => gp.forward(q),
        }
    }

    /// Projects an observed relative pose to the best-matching
    /// configuration.
    pub fn inverse(&self, z: &Pose) -> Vec<f64> {
        match &self.params {
            LinkParams::Rigid { .. } => Vec::new(),
            LinkParams::Prismatic { origin, axis } => {
                vec![axis.dot(&origin.relative(z).translation_part())]
            }
            LinkParams::Revolute { center, radial } => {
                vec![revolute_config(center, radial, z)]
            }
            LinkParams::Gp(gp) => gp.inverse(z),
        }
    }

    /// The model's explanation of an observation:
    /// `forward(inverse(z))`, i.e. the nearest pose on the learned motion
    /// manifold.
    pub fn predict(&self, z: &Pose) -> Result<Pose> {
        self.forward(&self.inverse(z))
    }

    /// Central-difference Jacobian of `forward` in the 6-D residual chart,
    /// one column per degree of freedom.
    pub fn jacobian(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        let d = self.dof();
        let mut j = DMatrix::zeros(6, d);
        let mut plus = q.to_vec();
        let mut minus = q.to_vec();
        for col in 0..d {
            plus[col] = q[col] + JACOBIAN_STEP;
            minus[col] = q[col] - JACOBIAN_STEP;
            let hi = self.forward(&plus)?;
            let lo = self.forward(&minus)?;
            let r = residual(&hi, &lo) / (2.0 * JACOBIAN_STEP);
            j.set_column(col, &r);
            plus[col] = q[col];
            minus[col] = q[col];
        }
        Ok(j)
    }

    /// Widens the observed configuration range.
    pub fn update_range(&mut self, q: &[f64]) {
        self.range.update(q);
    }

    /// Closed-form fit from a minimal sample set. Returns a degenerate-
    /// geometry error when the samples do not determine the parameters, and
    /// an invalid-input error for the GP (which has no minimal form).
    pub fn fit_minimal(kind: ModelKind, samples: &[Pose]) -> Result<LinkModel> {
        let needed = kind.minimal_sample_count().ok_or_else(|| {
            Error::Invalid("gp has no minimal fit; it is trained on the full data".into())
        })?;
        if samples.len() < needed {
            return Err(Error::TooFewSamples {
                needed,
                got: samples.len(),
            });
        }
        match kind {
            ModelKind::Rigid => Ok(LinkModel::new(LinkParams::Rigid { offset: samples[0] })),
            ModelKind::Prismatic => fit_minimal_prismatic(&samples[0], &samples[1]),
            ModelKind::Revolute => fit_minimal_revolute(&samples[0], &samples[1], &samples[2]),
            ModelKind::Gp => unreachable!("handled by minimal_sample_count"),
        }
    }
}

/// Configuration of an observation under a revolute model: the angle
/// minimizing the squared 6-D residual between the observation and the
/// manifold point `forward(q)`, on the same meters-and-radians chart as
/// [`LinkModel::jacobian`]. Minimizing the full residual lets whichever
/// component is informative pin the angle: position for a large-radius arc
/// (where the co-rotation is a sliver of the orientation spread), the
/// orientation twist for a part sitting on or near the axis.
///
/// In the center frame the squared residual is, up to constants,
/// `-2 rho cos(q - theta_p) + 4 acos^2(rho_q cos(q/2 - phi))`: the first
/// term compares in-plane bearings (`rho` is the product of the in-plane
/// radii), the second is the squared geodesic angle to the observed
/// rotation, read off the scalar part of the quaternion product with
/// `rot_z(-q)`. A coarse scan followed by Newton polish finds the global
/// minimum of this smooth periodic function.
fn revolute_config(center: &Pose, radial: &Pose, z: &Pose) -> f64 {
    let rel = center.relative(z);
    let (ox, oy) = (rel.position.x, rel.position.y);
    let (rx, ry) = (radial.position.x, radial.position.y);
    let rho = ox.hypot(oy) * rx.hypot(ry);
    let theta_p = f64::atan2(oy, ox) - f64::atan2(ry, rx);
    let t = rel.rotation() * radial.rotation().inverse();
    let rho_q = t.w.hypot(t.k).min(1.0);
    let phi = f64::atan2(t.k, t.w);
    let f = |q: f64| {
        let c = (rho_q * (0.5 * q - phi).cos()).abs().min(1.0);
        let ang = 2.0 * c.acos();
        ang * ang - 2.0 * rho * (q - theta_p).cos()
    };
    // Both closed-form seeds are exact in their own noise-free limit; the
    // grid covers observations far from the manifold, where neither is.
    let mut best = (f64::INFINITY, 0.0);
    let seeds = (0..24).map(|k| -PI + f64::from(k) * (PI / 12.0));
    for q in seeds.chain([wrap_angle(theta_p), wrap_angle(2.0 * phi)]) {
        let v = f(q);
        if v < best.0 {
            best = (v, q);
        }
    }
    let (mut fq, mut q) = best;
    let h = 1e-5;
    for _ in 0..12 {
        let (lo, hi) = (f(q - h), f(q + h));
        let grad = (hi - lo) / (2.0 * h);
        let curv = (hi - 2.0 * fq + lo) / (h * h);
        if !(curv > 0.0) {
            break;
        }
        let step = (-grad / curv).clamp(-0.3, 0.3);
        let cand = f(q + step);
        if cand >= fq {
            break;
        }
        q += step;
        fq = cand;
        if step.abs() < 1e-12 {
            break;
        }
    }
    wrap_angle(q)
}

/// Prismatic minimal fit: the first sample anchors the origin pose; the
/// axis is the direction towards the second sample, expressed in the
/// origin's frame (so that `inverse(forward(q)) == q`).
fn fit_minimal_prismatic(first: &Pose, second: &Pose) -> Result<LinkModel> {
    let local = first.relative(second).translation_part();
    let dist = local.norm();
    if dist < MIN_PRISMATIC_SEPARATION {
        return Err(Error::Degenerate(format!(
            "prismatic samples are {dist} m apart; axis is undetermined"
        )));
    }
    Ok(LinkModel::new(LinkParams::Prismatic {
        origin: *first,
        axis: local / dist,
    }))
}

/// Revolute minimal fit from three samples: the rotation plane is spanned
/// by the three positions, the axis is the plane normal through their
/// circumcenter, and the sign is chosen so the first → second sample
/// rotation is positive. The first sample is reproduced exactly at `q = 0`.
fn fit_minimal_revolute(s1: &Pose, s2: &Pose, s3: &Pose) -> Result<LinkModel> {
    let p1 = s1.position;
    let a = s2.position - p1;
    let b = s3.position - p1;
    let axb = a.cross(&b);
    // |a × b| is twice the triangle area.
    if axb.norm() < 2.0 * MIN_REVOLUTE_TRIANGLE_AREA {
        return Err(Error::Degenerate(
            "revolute samples are collinear; rotation plane is undetermined".into(),
        ));
    }
    let mut axis = axb.normalize();
    // Circumcenter of the three positions (lies in their plane).
    let c0 = p1
        + (a.norm_squared() * b.cross(&axb) + b.norm_squared() * axb.cross(&a))
            / (2.0 * axb.norm_squared());
    // Orient the axis so that rotating from the first towards the second
    // sample is a positive angle.
    let u1 = s1.position - c0;
    let u2 = s2.position - c0;
    if axis.dot(&u1.cross(&u2)) < 0.0 {
        axis = -axis;
    }
    revolute_about_axis(axis, c0, s1)
}

/// Assembles a revolute model from an axis direction, a point on the axis,
/// and the sample that anchors `q = 0`: the center frame puts Z along the
/// axis and X towards that sample.
fn revolute_about_axis(axis: Vector3<f64>, c0: Vector3<f64>, s1: &Pose) -> Result<LinkModel> {
    let u1 = s1.position - c0;
    let radial_dir = u1 - axis * u1.dot(&axis);
    if radial_dir.norm() < MIN_PRISMATIC_SEPARATION {
        return Err(Error::Degenerate(
            "first revolute sample lies on the rotation axis".into(),
        ));
    }
    let x = radial_dir.normalize();
    let y = axis.cross(&x);
    let rot = orthonormalize(&Matrix3::from_columns(&[x, y, axis]))?;
    let center = Pose::from_position_rotation(c0, rot);
    let radial = center.relative(s1);
    Ok(LinkModel::new(LinkParams::Revolute { center, radial }))
}

/// Revolute hypothesis from two samples, driven by orientation instead of
/// position: the axis and travel come from the relative rotation between
/// the two orientations, and the center is the point about which that
/// rotation carries the first position onto the second (its free component
/// along the axis is pinned beside the chord midpoint).
///
/// An arc through both positions needs an axis perpendicular to their
/// chord, so the relative rotation vector is first projected onto the
/// chord-normal plane: exact for a true revolute pair (whose axis is
/// already perpendicular to any chord), and on noisy straight-line data it
/// discards the useless twist about the travel direction. Because the
/// radius comes out as `chord / rotation`, a small perpendicular rotation
/// over a long chord proposes a large, nearly flat arc — a regime the
/// three-position circumcircle cannot reach there, since the sagitta it
/// measures is pure noise.
pub(crate) fn fit_revolute_pair(s1: &Pose, s2: &Pose) -> Result<LinkModel> {
    let dq = s2.rotation() * s1.rotation().inverse();
    let mut eta = rotation_vector(&dq);
    let chord = s2.position - s1.position;
    if chord.norm() >= MIN_PRISMATIC_SEPARATION {
        let chat = chord / chord.norm();
        eta -= chat * eta.dot(&chat);
    }
    let angle = eta.norm();
    if angle < MIN_REVOLUTE_PAIR_ANGLE {
        return Err(Error::Degenerate(format!(
            "revolute samples are {angle} rad apart about the chord normal; \
             rotation axis is undetermined"
        )));
    }
    let n = eta / angle;
    // Solve (I - R) c = p2 - R p1 in the plane perpendicular to the axis;
    // the in-plane 2x2 system is always invertible for a non-zero angle.
    let b = s2.position - UnitQuaternion::from_scaled_axis(eta) * s1.position;
    let e1 = if n.x.abs() < 0.9 {
        n.cross(&Vector3::x())
    } else {
        n.cross(&Vector3::y())
    }
    .normalize();
    let e2 = n.cross(&e1);
    let (cth, sth) = (angle.cos(), angle.sin());
    let det = 2.0 * (1.0 - cth);
    let (bx, by) = (b.dot(&e1), b.dot(&e2));
    let cx = ((1.0 - cth) * bx - sth * by) / det;
    let cy = (sth * bx + (1.0 - cth) * by) / det;
    let mid = 0.5 * (s1.position + s2.position);
    let c0 = cx * e1 + cy * e2 + mid.dot(&n) * n;
    revolute_about_axis(n, c0, s1)
}
