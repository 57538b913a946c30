//! Ground-truth simulator for articulated objects.
//!
//! A [`Scenario`] produces exact part poses for any point of its motion
//! schedule; [`generate`] samples a schedule, corrupts the poses with
//! Gaussian observation noise, injects uniform workspace outliers, and
//! returns both the observed trajectory and the ground truth. Everything is
//! driven by a single seeded RNG stream, so a `(scenario, spec)` pair always
//! produces bit-identical output.
//!
//! The library covers doors, drawers, a two-drawer cabinet, a two-bar
//! garage-door linkage, a planar table, open and closed four-part chains
//! ("yardsticks"), a car door with its window, and five single-link
//! mechanisms used for building model databases.

use std::sync::Arc;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::graph::ObjectTrajectory;
use crate::model::{LinkModel, ModelKind};
use crate::obs::NoiseSpec;
use crate::se3::{pose_error, Pose};
use crate::{Error, Result};

/// Maximum closure violation tolerated when solving loop scenarios.
pub const CLOSURE_TOL: f64 = 1e-9;

/// Schedule amplitudes are scaled by a per-seed factor drawn uniformly from
/// this range, so different recordings of the same object articulate it by
/// different amounts.
const AMP_RANGE: (f64, f64) = (0.75, 1.0);

type PosesFn = Arc<dyn Fn(f64, f64) -> Result<Vec<Pose>> + Send + Sync>;
type ConfigFn = Arc<dyn Fn(f64, f64) -> Vec<f64> + Send + Sync>;

/// A named articulated-object setup: exact part poses as a function of
/// normalized time, plus the ground-truth structure metadata.
#[derive(Clone)]
pub struct Scenario {
    pub name: &'static str,
    pub parts: usize,
    /// True connectivity, `(i, j, kind)` with `i < j` (0-based parts) and
    /// the model family an ideal learner selects for the link.
    pub true_edges: Vec<(usize, usize, ModelKind)>,
    /// Independent degrees of freedom of the whole object.
    pub true_dof: usize,
    /// Workspace diameter that comfortably contains the motion, in meters.
    pub workspace_diameter: f64,
    poses_fn: PosesFn,
    config_fn: ConfigFn,
}

impl std::fmt::Debug for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scenario")
            .field("name", &self.name)
            .field("parts", &self.parts)
            .field("true_dof", &self.true_dof)
            .finish()
    }
}

impl Scenario {
    /// Exact part poses at normalized time `tau ∈ [0, 1]` with schedule
    /// amplitude factor `amp`.
    pub fn true_poses(&self, tau: f64, amp: f64) -> Result<Vec<Pose>> {
        (self.poses_fn)(tau, amp)
    }

    /// Schedule configuration at normalized time `tau`.
    pub fn config(&self, tau: f64, amp: f64) -> Vec<f64> {
        (self.config_fn)(tau, amp)
    }
}

/// Sampling parameters for [`generate`].
#[derive(Debug, Clone)]
pub struct SimSpec {
    /// Number of timesteps (at least 2).
    pub n: usize,
    pub noise: NoiseSpec,
    /// Probability that an observation is replaced by a uniform workspace
    /// pose, in `[0, 1)`.
    pub outlier_rate: f64,
    pub seed: u64,
}

/// Ground truth accompanying a generated trajectory.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub scenario: String,
    /// Noise-free part poses.
    pub truth: ObjectTrajectory,
    /// `outliers[t][i]` marks observation `(t, i)` as replaced by an
    /// outlier.
    pub outliers: Vec<Vec<bool>>,
    pub true_edges: Vec<(usize, usize, ModelKind)>,
    pub true_dof: usize,
    /// Schedule configuration per timestep.
    pub schedule: Vec<Vec<f64>>,
    /// Amplitude factor drawn for this recording.
    pub amp: f64,
}

/// All scenario names in the library.
pub fn scenario_names() -> Vec<&'static str> {
    vec![
        "microwave",
        "drawer",
        "cabinet",
        "garage-door",
        "table",
        "yardstick-open",
        "yardstick-closed",
        "car",
        "prior-microwave",
        "prior-cabinet-door",
        "prior-room-door",
        "prior-drawer",
        "prior-board",
    ]
}

/// Smooth open-then-close ramp: 0 at `tau ∈ {0, 1}`, 1 at `tau = 0.5`.
fn ramp(tau: f64) -> f64 {
    0.5 * (1.0 - (2.0 * std::f64::consts::PI * tau).cos())
}

/// Builds a two-part scenario whose second part follows `pose_of(q)` for a
/// scalar schedule `q(tau, amp)`.
fn single_link(
    name: &'static str,
    kind: ModelKind,
    diameter: f64,
    schedule: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    pose_of: impl Fn(f64) -> Pose + Send + Sync + 'static,
) -> Scenario {
    let schedule = Arc::new(schedule);
    let sched2 = Arc::clone(&schedule);
    Scenario {
        name,
        parts: 2,
        true_edges: vec![(0, 1, kind)],
        true_dof: 1,
        workspace_diameter: diameter,
        poses_fn: Arc::new(move |tau, amp| {
            Ok(vec![Pose::identity(), pose_of(schedule(tau, amp))])
        }),
        config_fn: Arc::new(move |tau, amp| vec![sched2(tau, amp)]),
    }
}

fn revolute_pose(center: Pose, radial: Pose) -> impl Fn(f64) -> Pose + Send + Sync {
    move |q| center.compose(&Pose::rot_z(q)).compose(&radial)
}

fn prismatic_pose(origin: Pose, axis: Vector3<f64>) -> impl Fn(f64) -> Pose + Send + Sync {
    move |q| origin.compose(&Pose::from_translation(axis * q))
}

/// Positions of the four-bar linkage vertices for drive angle `theta`:
/// ground joints `A = (0,0,0)` and `B = (g,0,0)`, crank tip `C`, coupler
/// tip `D`. Errors when the legs cannot close the loop.
fn four_bar_points(
    g: f64,
    a: f64,
    b: f64,
    c: f64,
    theta: f64,
) -> Result<(Vector3<f64>, Vector3<f64>, Vector3<f64>, Vector3<f64>)> {
    let pa = Vector3::zeros();
    let pb = Vector3::new(g, 0.0, 0.0);
    let pc = Vector3::new(a * theta.cos(), a * theta.sin(), 0.0);
    let e = pb - pc;
    let l = e.norm();
    if l < 1e-12 {
        return Err(Error::Degenerate("four-bar crank tip coincides with ground joint".into()));
    }
    let cos_alpha = (b * b + l * l - c * c) / (2.0 * b * l);
    if cos_alpha.abs() > 1.0 {
        return Err(Error::Degenerate(format!(
            "four-bar loop does not close at drive angle {theta} (cos α = {cos_alpha})"
        )));
    }
    let sin_alpha = (1.0 - cos_alpha * cos_alpha).sqrt();
    let u = e / l;
    // Rotate u by +α about Z: the "open" assembly branch.
    let dir = Vector3::new(
        u.x * cos_alpha - u.y * sin_alpha,
        u.x * sin_alpha + u.y * cos_alpha,
        0.0,
    );
    let pd = pc + dir * b;
    debug_assert!(((pd - pb).norm() - c).abs() < CLOSURE_TOL);
    Ok((pa, pb, pc, pd))
}

/// Bar poses of the four-bar linkage: each bar's frame sits at its
/// midpoint with the X axis pointing along the bar. (Midpoints — not the
/// joints themselves — so that every bar's position moves on a circle of
/// half the bar length relative to its neighbors.)
fn four_bar_poses(g: f64, a: f64, b: f64, c: f64, theta: f64) -> Result<Vec<Pose>> {
    let (pa, pb, pc, pd) = four_bar_points(g, a, b, c, theta)?;
    let angle_of = |v: Vector3<f64>| v.y.atan2(v.x);
    let bar = |from: Vector3<f64>, to: Vector3<f64>| {
        Pose::from_position_rotation(
            (from + to) / 2.0,
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), angle_of(to - from)),
        )
    };
    // Ground A→B, crank A→C, coupler C→D, rocker D→B.
    Ok(vec![bar(pa, pb), bar(pa, pc), bar(pc, pd), bar(pd, pb)])
}

/// Looks up a scenario by name.
pub fn scenario(name: &str) -> Result<Scenario> {
    let rx = |angle: f64| UnitQuaternion::from_axis_angle(&Vector3::x_axis(), angle);
    match name {
        "microwave" => {
            let center = Pose::from_translation(Vector3::new(0.22, -0.18, 0.05));
            let radial = Pose::from_translation(Vector3::new(0.35, 0.0, 0.0));
            Ok(single_link(
                "microwave",
                ModelKind::Revolute,
                4.0,
                |tau, amp| amp * 2.2 * ramp(tau),
                revolute_pose(center, radial),
            ))
        }
        "drawer" => {
            let origin = Pose::from_position_rotation(
                Vector3::new(0.25, -0.15, 0.3),
                UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 0.4),
            );
            Ok(single_link(
                "drawer",
                ModelKind::Prismatic,
                4.0,
                |tau, amp| amp * 0.45 * ramp(tau),
                prismatic_pose(origin, Vector3::new(1.0, 0.0, 0.0)),
            ))
        }
        "cabinet" => {
            let slide1 = prismatic_pose(
                Pose::from_translation(Vector3::new(0.2, 0.3, 0.2)),
                Vector3::new(1.0, 0.0, 0.0),
            );
            let slide2 = prismatic_pose(
                Pose::from_position_rotation(
                    Vector3::new(0.2, -0.3, 0.5),
                    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 0.6),
                ),
                Vector3::new(1.0, 0.0, 0.0),
            );
            let q1 = |tau: f64, amp: f64| amp * 0.35 * ramp(tau);
            let q2 = |tau: f64, amp: f64| amp * 0.4 * ramp(2.0 * tau % 1.0);
            Ok(Scenario {
                name: "cabinet",
                parts: 3,
                true_edges: vec![(0, 1, ModelKind::Prismatic), (0, 2, ModelKind::Prismatic)],
                true_dof: 2,
                workspace_diameter: 4.0,
                poses_fn: Arc::new(move |tau, amp| {
                    Ok(vec![
                        Pose::identity(),
                        slide1(q1(tau, amp)),
                        slide2(q2(tau, amp)),
                    ])
                }),
                config_fn: Arc::new(move |tau, amp| vec![q1(tau, amp), q2(tau, amp)]),
            })
        }
        "garage-door" => {
            // Two-bar linkage: the panel is carried by two rotating arms
            // whose angles are rigidly coupled. The fast counter-rotating
            // second arm puts an inflection in the coupler curve, so no
            // line or circle stays within 0.4 m of it.
            let base = Vector3::new(-0.5, -0.6, 0.3);
            let (l1, l2) = (0.8, 0.6);
            let (theta0, coupling, phase) = (0.3, -2.2, 0.8);
            let pose_of = move |q: f64| {
                let t1 = theta0 + q;
                let t2 = phase + coupling * q;
                let p = base
                    + Vector3::new(l1 * t1.cos(), l1 * t1.sin(), 0.0)
                    + Vector3::new(l2 * t2.cos(), l2 * t2.sin(), 0.0);
                Pose::from_position_rotation(
                    p,
                    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 0.9 * q),
                )
            };
            Ok(single_link(
                "garage-door",
                ModelKind::Gp,
                4.0,
                |tau, amp| amp * 1.9 * ramp(tau),
                pose_of,
            ))
        }
        "table" => {
            let base = Pose::from_position_rotation(
                Vector3::new(0.1, 0.2, 0.75),
                UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 0.25),
            );
            let qx = |tau: f64, amp: f64| {
                amp * 0.4 * (2.0 * std::f64::consts::PI * tau).sin()
            };
            let qy = |tau: f64, amp: f64| {
                amp * 0.3 * (4.0 * std::f64::consts::PI * tau + 0.9).sin()
            };
            Ok(Scenario {
                name: "table",
                parts: 2,
                true_edges: vec![(0, 1, ModelKind::Gp)],
                true_dof: 2,
                workspace_diameter: 4.0,
                poses_fn: Arc::new(move |tau, amp| {
                    Ok(vec![
                        Pose::identity(),
                        base.compose(&Pose::from_translation(Vector3::new(
                            qx(tau, amp),
                            qy(tau, amp),
                            0.0,
                        ))),
                    ])
                }),
                config_fn: Arc::new(move |tau, amp| vec![qx(tau, amp), qy(tau, amp)]),
            })
        }
        "yardstick-open" => {
            // Four hinged segments of length 0.3 m on a plane. Each
            // segment's frame sits at its midpoint, so neighbors move on
            // half-segment circles around the shared hinge.
            let half = 0.15;
            let amps = [0.9, 0.7, 1.1];
            let freqs = [1.0, 2.0, 3.0];
            let phases = [0.0, 0.8, 1.7];
            let qs = move |tau: f64, amp: f64| -> Vec<f64> {
                (0..3)
                    .map(|k| {
                        amp * amps[k]
                            * (2.0 * std::f64::consts::PI * freqs[k] * tau + phases[k]).sin()
                    })
                    .collect()
            };
            Ok(Scenario {
                name: "yardstick-open",
                parts: 4,
                true_edges: vec![
                    (0, 1, ModelKind::Revolute),
                    (1, 2, ModelKind::Revolute),
                    (2, 3, ModelKind::Revolute),
                ],
                true_dof: 3,
                workspace_diameter: 4.0,
                poses_fn: Arc::new(move |tau, amp| {
                    let q = qs(tau, amp);
                    let step = Pose::from_translation(Vector3::new(half, 0.0, 0.0));
                    let mut poses = vec![Pose::identity()];
                    for k in 0..3 {
                        let prev = *poses.last().expect("nonempty");
                        poses.push(prev.compose(&step).compose(&Pose::rot_z(q[k])).compose(&step));
                    }
                    Ok(poses)
                }),
                config_fn: Arc::new(move |tau, amp| qs(tau, amp)),
            })
        }
        "yardstick-closed" => {
            // Parallel-crank four-bar loop; one degree of freedom drives
            // all four bars. With equal cranks and coupler equal to the
            // ground bar, every hinge angle is an affine function of the
            // drive angle, so the loop's configuration manifold is exactly
            // a line in the stacked angle space.
            let (g, a, b, c) = (0.5, 0.25, 0.5, 0.25);
            let theta = |tau: f64, amp: f64| {
                1.0 + amp * 0.8 * (2.0 * std::f64::consts::PI * tau).sin()
            };
            Ok(Scenario {
                name: "yardstick-closed",
                parts: 4,
                true_edges: vec![
                    (0, 1, ModelKind::Revolute),
                    (0, 3, ModelKind::Revolute),
                    (1, 2, ModelKind::Revolute),
                    (2, 3, ModelKind::Revolute),
                ],
                true_dof: 1,
                workspace_diameter: 4.0,
                poses_fn: Arc::new(move |tau, amp| four_bar_poses(g, a, b, c, theta(tau, amp))),
                config_fn: Arc::new(move |tau, amp| vec![theta(tau, amp)]),
            })
        }
        "car" => {
            // Door on a vertical hinge; window on a virtual rotational axis
            // of radius 1.9 m inside the door.
            let hinge = Pose::from_translation(Vector3::new(-0.8, 0.5, 0.2));
            let door_radial = Pose::from_translation(Vector3::new(0.55, 0.0, -0.1));
            let win_center = Pose::from_position_rotation(
                Vector3::new(-1.65, 0.05, 0.25),
                rx(-std::f64::consts::FRAC_PI_2),
            );
            let win_radial = Pose::from_translation(Vector3::new(1.9, 0.0, 0.0));
            let q_door = |tau: f64, amp: f64| amp * 1.1 * ramp(tau);
            let q_win = |tau: f64, amp: f64| amp * 0.26 * ramp(2.0 * tau % 1.0);
            Ok(Scenario {
                name: "car",
                parts: 3,
                true_edges: vec![(0, 1, ModelKind::Revolute), (1, 2, ModelKind::Revolute)],
                true_dof: 2,
                workspace_diameter: 6.0,
                poses_fn: Arc::new(move |tau, amp| {
                    let door = hinge
                        .compose(&Pose::rot_z(q_door(tau, amp)))
                        .compose(&door_radial);
                    let window = door
                        .compose(&win_center)
                        .compose(&Pose::rot_z(q_win(tau, amp)))
                        .compose(&win_radial);
                    Ok(vec![Pose::identity(), door, window])
                }),
                config_fn: Arc::new(move |tau, amp| vec![q_door(tau, amp), q_win(tau, amp)]),
            })
        }
        "prior-microwave" => {
            let center = Pose::from_translation(Vector3::new(0.2, -0.2, 0.1));
            let radial = Pose::from_translation(Vector3::new(0.32, 0.0, 0.0));
            Ok(single_link(
                "prior-microwave",
                ModelKind::Revolute,
                4.0,
                |tau, amp| amp * 2.0 * ramp(tau),
                revolute_pose(center, radial),
            ))
        }
        "prior-cabinet-door" => {
            let center = Pose::from_position_rotation(
                Vector3::new(-0.3, 0.25, 0.0),
                UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 1.1),
            );
            let radial = Pose::from_translation(Vector3::new(0.5, 0.0, 0.05));
            Ok(single_link(
                "prior-cabinet-door",
                ModelKind::Revolute,
                4.0,
                |tau, amp| amp * 1.8 * ramp(tau),
                revolute_pose(center, radial),
            ))
        }
        "prior-room-door" => {
            let center = Pose::from_translation(Vector3::new(0.5, 0.4, -0.1));
            let radial = Pose::from_translation(Vector3::new(1.05, 0.0, 0.0));
            Ok(single_link(
                "prior-room-door",
                ModelKind::Revolute,
                5.0,
                |tau, amp| amp * 1.5 * ramp(tau),
                revolute_pose(center, radial),
            ))
        }
        "prior-drawer" => {
            let origin = Pose::from_position_rotation(
                Vector3::new(-0.2, 0.35, 0.4),
                UnitQuaternion::from_axis_angle(&Vector3::z_axis(), -0.7),
            );
            Ok(single_link(
                "prior-drawer",
                ModelKind::Prismatic,
                4.0,
                |tau, amp| amp * 0.42 * ramp(tau),
                prismatic_pose(origin, Vector3::new(1.0, 0.0, 0.0)),
            ))
        }
        "prior-board" => {
            let origin = Pose::from_position_rotation(
                Vector3::new(0.4, 0.1, 0.9),
                rx(0.35),
            );
            Ok(single_link(
                "prior-board",
                ModelKind::Prismatic,
                4.0,
                |tau, amp| amp * 0.28 * ramp(tau),
                prismatic_pose(origin, Vector3::new(0.0, 0.0, -1.0)),
            ))
        }
        other => Err(Error::Invalid(format!(
            "unknown scenario {other:?}; known: {}",
            scenario_names().join(", ")
        ))),
    }
}

/// Samples a noisy observed trajectory plus ground truth.
///
/// One RNG stream seeded by `spec.seed` drives the amplitude factor, the
/// observation noise, and the outlier process, in a fixed draw order; the
/// output is bit-identical across runs, platforms, and thread counts.
pub fn generate(scn: &Scenario, spec: &SimSpec) -> Result<(ObjectTrajectory, GroundTruth)> {
    if spec.n < 2 {
        return Err(Error::Invalid(format!(
            "trajectory needs at least 2 timesteps, got {}",
            spec.n
        )));
    }
    if !(0.0..1.0).contains(&spec.outlier_rate) {
        return Err(Error::Invalid(format!(
            "outlier rate must lie in [0, 1), got {}",
            spec.outlier_rate
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let amp = AMP_RANGE.0 + (AMP_RANGE.1 - AMP_RANGE.0) * rng.gen::<f64>();
    let pos_noise = Normal::new(0.0, spec.noise.sigma_pos).map_err(|e| {
        Error::Invalid(format!("invalid position noise: {e}"))
    })?;
    let ang_noise = Normal::new(0.0, spec.noise.sigma_orient).map_err(|e| {
        Error::Invalid(format!("invalid orientation noise: {e}"))
    })?;
    let std_normal: Normal<f64> = Normal::new(0.0, 1.0).expect("unit normal");
    let half = spec.noise.workspace_diameter / 2.0;

    let mut truth_steps = Vec::with_capacity(spec.n);
    let mut obs_steps = Vec::with_capacity(spec.n);
    let mut outliers = Vec::with_capacity(spec.n);
    let mut schedule = Vec::with_capacity(spec.n);
    for t in 0..spec.n {
        let tau = t as f64 / (spec.n - 1) as f64;
        let truth = scn.true_poses(tau, amp)?;
        schedule.push(scn.config(tau, amp));
        let mut obs = Vec::with_capacity(scn.parts);
        let mut flags = Vec::with_capacity(scn.parts);
        for part_pose in &truth {
            if rng.gen::<f64>() < spec.outlier_rate {
                // Uniform workspace pose: position in the centered cube,
                // orientation uniform on the rotation group.
                let p = Vector3::new(
                    rng.gen_range(-half..half),
                    rng.gen_range(-half..half),
                    rng.gen_range(-half..half),
                );
                let q = loop {
                    let v = [
                        std_normal.sample(&mut rng),
                        std_normal.sample(&mut rng),
                        std_normal.sample(&mut rng),
                        std_normal.sample(&mut rng),
                    ];
                    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2] + v[3] * v[3]).sqrt();
                    if n > 1e-6 {
                        break nalgebra::Quaternion::new(v[0] / n, v[1] / n, v[2] / n, v[3] / n);
                    }
                };
                obs.push(Pose::from_position_rotation(
                    p,
                    UnitQuaternion::new_normalize(q),
                ));
                flags.push(true);
            } else {
                let dp = Vector3::new(
                    pos_noise.sample(&mut rng),
                    pos_noise.sample(&mut rng),
                    pos_noise.sample(&mut rng),
                );
                // Rotation noise: uniform axis, Gaussian angle, applied in
                // the world frame.
                let axis = loop {
                    let v = Vector3::new(
                        std_normal.sample(&mut rng),
                        std_normal.sample(&mut rng),
                        std_normal.sample(&mut rng),
                    );
                    if v.norm() > 1e-9 {
                        break nalgebra::Unit::new_normalize(v);
                    }
                };
                let angle = ang_noise.sample(&mut rng);
                let dq = UnitQuaternion::from_axis_angle(&axis, angle);
                obs.push(Pose::from_position_rotation(
                    part_pose.position + dp,
                    dq * part_pose.rotation(),
                ));
                flags.push(false);
            }
        }
        truth_steps.push(truth);
        obs_steps.push(obs);
        outliers.push(flags);
    }
    let observed = ObjectTrajectory::new(scn.parts, obs_steps)?;
    let truth = ObjectTrajectory::new(scn.parts, truth_steps)?;
    Ok((
        observed,
        GroundTruth {
            scenario: scn.name.to_string(),
            truth,
            outliers,
            true_edges: scn.true_edges.clone(),
            true_dof: scn.true_dof,
            schedule,
            amp,
        },
    ))
}

/// Held-out prediction quality of a link model against noise-free relative
/// poses: each true pose is projected onto the model's motion manifold via
/// `forward(inverse(z))` and compared back.
#[derive(Debug, Clone, Copy)]
pub struct LinkEval {
    pub mean_pos_err: f64,
    pub mean_orient_err: f64,
    pub max_pos_err: f64,
    pub max_orient_err: f64,
    pub count: usize,
}

pub fn evaluate_link(model: &LinkModel, truth_rel: &[Pose]) -> Result<LinkEval> {
    if truth_rel.is_empty() {
        return Err(Error::Invalid("no poses to evaluate against".into()));
    }
    let mut sum_p = 0.0;
    let mut sum_a = 0.0;
    let mut max_p: f64 = 0.0;
    let mut max_a: f64 = 0.0;
    for z in truth_rel {
        let pred = model.predict(z)?;
        let (dp, da) = pose_error(&pred, z);
        sum_p += dp;
        sum_a += da;
        max_p = max_p.max(dp);
        max_a = max_a.max(da);
    }
    let n = truth_rel.len() as f64;
    Ok(LinkEval {
        mean_pos_err: sum_p / n,
        mean_orient_err: sum_a / n,
        max_pos_err: max_p,
        max_orient_err: max_a,
        count: truth_rel.len(),
    })
}
