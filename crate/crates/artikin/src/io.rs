//! Deterministic, human-diffable text formats for every pipeline artifact.
//!
//! Trajectories, ground-truth sidecars, link models, kinematic graphs, and
//! prior databases are all stored as line-oriented text. Numbers are
//! rendered with Rust's shortest round-trip formatting, so a written file
//! parses back to bit-identical values and re-running a command produces
//! byte-identical output.
//!
//! Shared conventions:
//!
//! - the first line is a header `artikin <format> v1`;
//! - one whitespace-separated record per line, keyed by its first token;
//! - timesteps and part ids count from 1 in files (they are zero-based in
//!   memory);
//! - a pose is seven numbers `px py pz qw qx qy qz` (meters, unit
//!   quaternion with scalar first).
//!
//! Parse failures carry the 1-based line number of the offending line.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector3};
use sha2::{Digest as _, Sha256};

use crate::estimate::FitResult;
use crate::graph::{DofProjection, EdgeFit, KinematicGraph, ObjectTrajectory};
use crate::model::{ConfigRange, GpHyper, GpModel, LinkModel, LinkParams, ModelKind};
use crate::prior::{PriorDatabase, PriorEntry};
use crate::se3::Pose;
use crate::sim::GroundTruth;
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Shared formatting and parsing helpers
// ---------------------------------------------------------------------------

fn perr(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_f64(line: usize, tok: &str) -> Result<f64> {
    tok.parse()
        .map_err(|_| perr(line, format!("expected a number, got {tok:?}")))
}

fn parse_usize(line: usize, tok: &str) -> Result<usize> {
    tok.parse()
        .map_err(|_| perr(line, format!("expected a non-negative integer, got {tok:?}")))
}

fn parse_floats(line: usize, toks: &[&str]) -> Result<Vec<f64>> {
    toks.iter().map(|t| parse_f64(line, t)).collect()
}

/// A 1-based part or timestep id from a file, converted to its zero-based
/// in-memory index.
fn parse_id(line: usize, tok: &str, what: &str, count: usize) -> Result<usize> {
    let id = parse_usize(line, tok)?;
    if id == 0 || id > count {
        return Err(perr(line, format!("{what} {id} outside 1..={count}")));
    }
    Ok(id - 1)
}

fn parse_pose(line: usize, toks: &[&str]) -> Result<Pose> {
    if toks.len() != 7 {
        return Err(perr(
            line,
            format!("expected 7 pose numbers, got {}", toks.len()),
        ));
    }
    let v = parse_floats(line, toks)?;
    Pose::new(Vector3::new(v[0], v[1], v[2]), [v[3], v[4], v[5], v[6]])
        .map_err(|e| perr(line, format!("invalid pose: {e}")))
}

/// The seven serialized fields of a pose.
fn pose_fields(p: &Pose) -> [f64; 7] {
    let q = p.quaternion_wxyz();
    [p.position.x, p.position.y, p.position.z, q[0], q[1], q[2], q[3]]
}

fn push_floats(line: &mut String, xs: &[f64]) {
    for x in xs {
        let _ = write!(line, " {x}");
    }
}

/// Line cursor over a file's non-empty lines, tracking 1-based numbers.
struct Cursor<'a> {
    lines: std::vec::IntoIter<(usize, &'a str)>,
    peeked: Option<(usize, &'a str)>,
    /// One past the last line, blamed when the file ends too early.
    end: usize,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str) -> Self {
        let mut end = 1;
        let lines: Vec<(usize, &'a str)> = text
            .lines()
            .enumerate()
            .map(|(i, l)| {
                end = i + 2;
                (i + 1, l.trim_end())
            })
            .filter(|(_, l)| !l.is_empty())
            .collect();
        Self {
            lines: lines.into_iter(),
            peeked: None,
            end,
        }
    }

    fn peek(&mut self) -> Option<(usize, &'a str)> {
        if self.peeked.is_none() {
            self.peeked = self.lines.next();
        }
        self.peeked
    }

    fn next(&mut self) -> Option<(usize, &'a str)> {
        self.peek();
        self.peeked.take()
    }

    /// True when the next line's first token is `key`.
    fn at(&mut self, key: &str) -> bool {
        self.peek()
            .is_some_and(|(_, l)| l.split_whitespace().next() == Some(key))
    }

    /// Consumes the next line, which must start with `key`; returns its line
    /// number and the remaining tokens.
    fn field(&mut self, key: &str) -> Result<(usize, Vec<&'a str>)> {
        let end = self.end;
        let (line, text) = self
            .next()
            .ok_or_else(|| perr(end, format!("missing `{key}` line")))?;
        let mut toks = text.split_whitespace();
        let first = toks.next().unwrap_or("");
        if first != key {
            return Err(perr(line, format!("expected `{key}`, got {first:?}")));
        }
        Ok((line, toks.collect()))
    }

    /// A `key <integer>` line.
    fn usize_field(&mut self, key: &str) -> Result<usize> {
        let (line, toks) = self.field(key)?;
        if toks.len() != 1 {
            return Err(perr(line, format!("expected one value after `{key}`")));
        }
        parse_usize(line, toks[0])
    }

    /// A `key <number>` line.
    fn f64_field(&mut self, key: &str) -> Result<f64> {
        let (line, toks) = self.field(key)?;
        if toks.len() != 1 {
            return Err(perr(line, format!("expected one value after `{key}`")));
        }
        parse_f64(line, toks[0])
    }

    /// The `key` line's text after the key itself, verbatim (labels and
    /// history notes may contain spaces).
    fn rest_field(&mut self, key: &str) -> Result<String> {
        let end = self.end;
        let (line, text) = self
            .next()
            .ok_or_else(|| perr(end, format!("missing `{key}` line")))?;
        match text.split_whitespace().next() {
            Some(first) if first == key => {}
            other => {
                return Err(perr(
                    line,
                    format!("expected `{key}`, got {:?}", other.unwrap_or("")),
                ))
            }
        }
        Ok(text[key.len()..].trim_start().to_string())
    }

    /// A bare marker line such as `model-begin`.
    fn marker(&mut self, key: &str) -> Result<usize> {
        let (line, toks) = self.field(key)?;
        if !toks.is_empty() {
            return Err(perr(line, format!("unexpected tokens after `{key}`")));
        }
        Ok(line)
    }

    fn header(&mut self, format: &str) -> Result<()> {
        let (line, text) = self.next().ok_or_else(|| perr(1, "empty file"))?;
        let want = format!("artikin {format} v1");
        if text != want {
            return Err(perr(line, format!("expected header {want:?}, got {text:?}")));
        }
        Ok(())
    }

    fn finish(&mut self) -> Result<()> {
        match self.next() {
            None => Ok(()),
            Some((line, text)) => Err(perr(
                line,
                format!("unexpected trailing content {text:?}"),
            )),
        }
    }
}

// ---------------------------------------------------------------------------
// Trajectory files
// ---------------------------------------------------------------------------

/// Renders a trajectory: header (`parts`, `steps`, `units`), then one
/// `obs <t> <part> <pose>` record per observation, dense and in order.
pub fn trajectory_to_string(traj: &ObjectTrajectory) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "artikin trajectory v1");
    let _ = writeln!(out, "parts {}", traj.parts);
    let _ = writeln!(out, "steps {}", traj.len());
    let _ = writeln!(out, "units m rad");
    for (t, step) in traj.steps.iter().enumerate() {
        for (i, pose) in step.iter().enumerate() {
            let mut line = format!("obs {} {}", t + 1, i + 1);
            push_floats(&mut line, &pose_fields(pose));
            let _ = writeln!(out, "{line}");
        }
    }
    out
}

pub fn parse_trajectory(text: &str) -> Result<ObjectTrajectory> {
    let mut cur = Cursor::new(text);
    cur.header("trajectory")?;
    let parts = cur.usize_field("parts")?;
    let steps = cur.usize_field("steps")?;
    let (line, units) = cur.field("units")?;
    if units != ["m", "rad"] {
        return Err(perr(line, "expected `units m rad`"));
    }
    if parts == 0 || steps == 0 {
        return Err(perr(line, "trajectory must have at least one part and one timestep"));
    }
    let mut grid: Vec<Vec<Option<Pose>>> = vec![vec![None; parts]; steps];
    while let Some((line, text)) = cur.next() {
        let toks: Vec<&str> = text.split_whitespace().collect();
        if toks[0] != "obs" {
            return Err(perr(line, format!("expected an `obs` record, got {:?}", toks[0])));
        }
        if toks.len() != 10 {
            return Err(perr(
                line,
                format!("expected `obs t part` plus 7 pose numbers, got {} tokens", toks.len()),
            ));
        }
        let t = parse_id(line, toks[1], "timestep", steps)?;
        let i = parse_id(line, toks[2], "part", parts)?;
        if grid[t][i].is_some() {
            return Err(perr(
                line,
                format!("duplicate observation for timestep {}, part {}", t + 1, i + 1),
            ));
        }
        grid[t][i] = Some(parse_pose(line, &toks[3..])?);
    }
    let end = cur.end;
    let mut rows = Vec::with_capacity(steps);
    for (t, row) in grid.into_iter().enumerate() {
        let mut step = Vec::with_capacity(parts);
        for (i, slot) in row.into_iter().enumerate() {
            step.push(slot.ok_or_else(|| {
                perr(end, format!("missing observation for timestep {}, part {}", t + 1, i + 1))
            })?);
        }
        rows.push(step);
    }
    ObjectTrajectory::new(parts, rows)
}

pub fn write_trajectory(path: impl AsRef<Path>, traj: &ObjectTrajectory) -> Result<()> {
    std::fs::write(path, trajectory_to_string(traj))?;
    Ok(())
}

pub fn read_trajectory(path: impl AsRef<Path>) -> Result<ObjectTrajectory> {
    parse_trajectory(&std::fs::read_to_string(path)?)
}

// ---------------------------------------------------------------------------
// Ground-truth sidecar files
// ---------------------------------------------------------------------------

/// Renders the simulator's ground truth: scenario metadata, true edges with
/// their mechanism kinds, the per-timestep configuration schedule, which
/// observations were replaced by outliers, and the noise-free poses.
pub fn truth_to_string(gt: &GroundTruth) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "artikin truth v1");
    let _ = writeln!(out, "scenario {}", gt.scenario);
    let _ = writeln!(out, "parts {}", gt.truth.parts);
    let _ = writeln!(out, "steps {}", gt.truth.len());
    let _ = writeln!(out, "amp {}", gt.amp);
    let _ = writeln!(out, "dof {}", gt.true_dof);
    for &(i, j, kind) in &gt.true_edges {
        let _ = writeln!(out, "edge {} {} {}", i + 1, j + 1, kind.name());
    }
    for (t, row) in gt.schedule.iter().enumerate() {
        let mut line = format!("config {}", t + 1);
        push_floats(&mut line, row);
        let _ = writeln!(out, "{line}");
    }
    for (t, row) in gt.outliers.iter().enumerate() {
        for (i, &marked) in row.iter().enumerate() {
            if marked {
                let _ = writeln!(out, "outlier {} {}", t + 1, i + 1);
            }
        }
    }
    for (t, step) in gt.truth.steps.iter().enumerate() {
        for (i, pose) in step.iter().enumerate() {
            let mut line = format!("pose {} {}", t + 1, i + 1);
            push_floats(&mut line, &pose_fields(pose));
            let _ = writeln!(out, "{line}");
        }
    }
    out
}

pub fn parse_truth(text: &str) -> Result<GroundTruth> {
    let mut cur = Cursor::new(text);
    cur.header("truth")?;
    let scenario = cur.rest_field("scenario")?;
    let parts = cur.usize_field("parts")?;
    let steps = cur.usize_field("steps")?;
    let amp = cur.f64_field("amp")?;
    let true_dof = cur.usize_field("dof")?;
    let mut true_edges = Vec::new();
    let mut schedule: Vec<Option<Vec<f64>>> = vec![None; steps];
    let mut outliers = vec![vec![false; parts]; steps];
    let mut poses: Vec<Vec<Option<Pose>>> = vec![vec![None; parts]; steps];
    while let Some((line, text)) = cur.next() {
        let toks: Vec<&str> = text.split_whitespace().collect();
        match toks[0] {
            "edge" => {
                if toks.len() != 4 {
                    return Err(perr(line, "expected `edge i j kind`"));
                }
                let i = parse_id(line, toks[1], "part", parts)?;
                let j = parse_id(line, toks[2], "part", parts)?;
                let kind = ModelKind::parse(toks[3]).map_err(|e| perr(line, e.to_string()))?;
                true_edges.push((i, j, kind));
            }
            "config" => {
                if toks.len() < 2 {
                    return Err(perr(line, "expected `config t q...`"));
                }
                let t = parse_id(line, toks[1], "timestep", steps)?;
                if schedule[t].is_some() {
                    return Err(perr(line, format!("duplicate config for timestep {}", t + 1)));
                }
                schedule[t] = Some(parse_floats(line, &toks[2..])?);
            }
            "outlier" => {
                if toks.len() != 3 {
                    return Err(perr(line, "expected `outlier t part`"));
                }
                let t = parse_id(line, toks[1], "timestep", steps)?;
                let i = parse_id(line, toks[2], "part", parts)?;
                outliers[t][i] = true;
            }
            "pose" => {
                if toks.len() != 10 {
                    return Err(perr(
                        line,
                        format!("expected `pose t part` plus 7 pose numbers, got {} tokens", toks.len()),
                    ));
                }
                let t = parse_id(line, toks[1], "timestep", steps)?;
                let i = parse_id(line, toks[2], "part", parts)?;
                if poses[t][i].is_some() {
                    return Err(perr(line, format!("duplicate pose for timestep {}, part {}", t + 1, i + 1)));
                }
                poses[t][i] = Some(parse_pose(line, &toks[3..])?);
            }
            other => return Err(perr(line, format!("unknown record {other:?}"))),
        }
    }
    let end = cur.end;
    let schedule: Vec<Vec<f64>> = schedule
        .into_iter()
        .enumerate()
        .map(|(t, row)| row.ok_or_else(|| perr(end, format!("missing config for timestep {}", t + 1))))
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(steps);
    for (t, row) in poses.into_iter().enumerate() {
        let mut step = Vec::with_capacity(parts);
        for (i, slot) in row.into_iter().enumerate() {
            step.push(slot.ok_or_else(|| {
                perr(end, format!("missing pose for timestep {}, part {}", t + 1, i + 1))
            })?);
        }
        rows.push(step);
    }
    Ok(GroundTruth {
        scenario,
        truth: ObjectTrajectory::new(parts, rows)?,
        outliers,
        true_edges,
        true_dof,
        schedule,
        amp,
    })
}

pub fn write_truth(path: impl AsRef<Path>, gt: &GroundTruth) -> Result<()> {
    std::fs::write(path, truth_to_string(gt))?;
    Ok(())
}

pub fn read_truth(path: impl AsRef<Path>) -> Result<GroundTruth> {
    parse_truth(&std::fs::read_to_string(path)?)
}

// ---------------------------------------------------------------------------
// Model blocks (shared by model, graph, and database files)
// ---------------------------------------------------------------------------

/// Appends a fitted model as a `model-begin` … `model-end` block: fit
/// statistics, the observed configuration range, and the family parameters.
/// Gaussian-process models store their full training state; the regression
/// weights are rebuilt when the block is read back.
fn push_model_block(out: &mut String, fit: &FitResult) {
    let _ = writeln!(out, "model-begin");
    let _ = writeln!(out, "kind {}", fit.model.kind().name());
    let _ = writeln!(out, "samples {}", fit.n);
    let _ = writeln!(out, "gamma {}", fit.gamma);
    let _ = writeln!(out, "loglik {}", fit.log_lik);
    let _ = writeln!(out, "bic {}", fit.bic);
    if !fit.model.range.is_empty() {
        let mut line = String::from("range-min");
        push_floats(&mut line, &fit.model.range.min);
        let _ = writeln!(out, "{line}");
        let mut line = String::from("range-max");
        push_floats(&mut line, &fit.model.range.max);
        let _ = writeln!(out, "{line}");
    }
    match &fit.model.params {
        LinkParams::Rigid { offset } => {
            let mut line = String::from("pose offset");
            push_floats(&mut line, &pose_fields(offset));
            let _ = writeln!(out, "{line}");
        }
        LinkParams::Prismatic { origin, axis } => {
            let mut line = String::from("pose origin");
            push_floats(&mut line, &pose_fields(origin));
            let _ = writeln!(out, "{line}");
            let mut line = String::from("vec axis");
            push_floats(&mut line, axis.as_slice());
            let _ = writeln!(out, "{line}");
        }
        LinkParams::Revolute { center, radial } => {
            let mut line = String::from("pose center");
            push_floats(&mut line, &pose_fields(center));
            let _ = writeln!(out, "{line}");
            let mut line = String::from("pose radial");
            push_floats(&mut line, &pose_fields(radial));
            let _ = writeln!(out, "{line}");
        }
        LinkParams::Gp(gp) => {
            let _ = writeln!(out, "gp-latent {}", gp.latent_dim);
            let mut line = String::from("gp-mean");
            push_floats(&mut line, &gp.mean);
            let _ = writeln!(out, "{line}");
            for c in 0..gp.latent_dim {
                let mut line = String::from("gp-axis");
                let col: Vec<f64> = gp.axes.column(c).iter().copied().collect();
                push_floats(&mut line, &col);
                let _ = writeln!(out, "{line}");
            }
            let mut line = format!("gp-hyper {}", gp.hyper.signal_var);
            push_floats(&mut line, &gp.hyper.length_scales);
            let _ = writeln!(out, "{line}");
            let _ = writeln!(out, "gp-noise {} {}", gp.noise_var_rot, gp.noise_var_pos);
            let _ = writeln!(out, "gp-train {}", gp.train_q.nrows());
            for r in 0..gp.train_q.nrows() {
                let mut line = String::from("gp-q");
                let row: Vec<f64> = gp.train_q.row(r).iter().copied().collect();
                push_floats(&mut line, &row);
                let _ = writeln!(out, "{line}");
            }
            for r in 0..gp.train_y.nrows() {
                let mut line = String::from("gp-y");
                let row: Vec<f64> = gp.train_y.row(r).iter().copied().collect();
                push_floats(&mut line, &row);
                let _ = writeln!(out, "{line}");
            }
        }
    }
    let _ = writeln!(out, "model-end");
}

/// A `pose <name> <7 numbers>` line inside a model block.
fn pose_param(cur: &mut Cursor, name: &str) -> Result<Pose> {
    let (line, toks) = cur.field("pose")?;
    if toks.first() != Some(&name) {
        return Err(perr(
            line,
            format!("expected `pose {name}`, got `pose {}`", toks.first().unwrap_or(&"")),
        ));
    }
    parse_pose(line, &toks[1..])
}

/// A `key <count numbers>` line.
fn float_row(cur: &mut Cursor, key: &str, count: usize) -> Result<Vec<f64>> {
    let (line, toks) = cur.field(key)?;
    if toks.len() != count {
        return Err(perr(
            line,
            format!("expected {count} numbers after `{key}`, got {}", toks.len()),
        ));
    }
    parse_floats(line, &toks)
}

fn parse_model_block(cur: &mut Cursor) -> Result<FitResult> {
    let begin = cur.marker("model-begin")?;
    let (line, toks) = cur.field("kind")?;
    if toks.len() != 1 {
        return Err(perr(line, "expected one value after `kind`"));
    }
    let kind = ModelKind::parse(toks[0]).map_err(|e| perr(line, e.to_string()))?;
    let n = cur.usize_field("samples")?;
    let gamma = cur.f64_field("gamma")?;
    let log_lik = cur.f64_field("loglik")?;
    let bic = cur.f64_field("bic")?;
    let mut range = ConfigRange::empty();
    if cur.at("range-min") {
        let (line, toks) = cur.field("range-min")?;
        range.min = parse_floats(line, &toks)?;
        range.max = float_row(cur, "range-max", range.min.len())?;
    }
    let params = match kind {
        ModelKind::Rigid => LinkParams::Rigid {
            offset: pose_param(cur, "offset")?,
        },
        ModelKind::Prismatic => {
            let origin = pose_param(cur, "origin")?;
            let (line, toks) = cur.field("vec")?;
            if toks.len() != 4 || toks[0] != "axis" {
                return Err(perr(line, "expected `vec axis x y z`"));
            }
            let v = parse_floats(line, &toks[1..])?;
            LinkParams::Prismatic {
                origin,
                axis: Vector3::new(v[0], v[1], v[2]),
            }
        }
        ModelKind::Revolute => LinkParams::Revolute {
            center: pose_param(cur, "center")?,
            radial: pose_param(cur, "radial")?,
        },
        ModelKind::Gp => {
            let latent_dim = cur.usize_field("gp-latent")?;
            let mean = float_row(cur, "gp-mean", 12)?;
            let mut axes = DMatrix::zeros(12, latent_dim);
            for c in 0..latent_dim {
                let col = float_row(cur, "gp-axis", 12)?;
                axes.set_column(c, &DVector::from_vec(col));
            }
            let (line, toks) = cur.field("gp-hyper")?;
            if toks.len() != latent_dim + 1 {
                return Err(perr(
                    line,
                    format!("expected signal variance plus {latent_dim} length scales"),
                ));
            }
            let hv = parse_floats(line, &toks)?;
            let hyper = GpHyper {
                signal_var: hv[0],
                length_scales: hv[1..].to_vec(),
            };
            let noise = float_row(cur, "gp-noise", 2)?;
            let rows = cur.usize_field("gp-train")?;
            let mut train_q = DMatrix::zeros(rows, latent_dim);
            for r in 0..rows {
                let row = float_row(cur, "gp-q", latent_dim)?;
                train_q.set_row(r, &DVector::from_vec(row).transpose());
            }
            let mut train_y = DMatrix::zeros(rows, 12);
            for r in 0..rows {
                let row = float_row(cur, "gp-y", 12)?;
                train_y.set_row(r, &DVector::from_vec(row).transpose());
            }
            let gp = GpModel::from_parts(
                latent_dim, mean, axes, train_q, train_y, hyper, noise[0], noise[1],
            )
            .map_err(|e| perr(begin, format!("invalid gp model: {e}")))?;
            LinkParams::Gp(gp)
        }
    };
    cur.marker("model-end")?;
    let mut model = LinkModel::new(params);
    model.range = range;
    Ok(FitResult {
        model,
        gamma,
        log_lik,
        bic,
        n,
    })
}

// ---------------------------------------------------------------------------
// Model files
// ---------------------------------------------------------------------------

/// Renders a fitted link model with its per-candidate BIC table. Candidates
/// that could not be fitted (too few samples, degenerate geometry) appear
/// as `unfittable`.
pub fn model_to_string(fit: &FitResult, candidates: &[(ModelKind, Option<f64>)]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "artikin model v1");
    push_candidates(&mut out, candidates);
    push_model_block(&mut out, fit);
    out
}

pub fn parse_model(text: &str) -> Result<(FitResult, Vec<(ModelKind, Option<f64>)>)> {
    let mut cur = Cursor::new(text);
    cur.header("model")?;
    let candidates = parse_candidates(&mut cur)?;
    let fit = parse_model_block(&mut cur)?;
    cur.finish()?;
    Ok((fit, candidates))
}

pub fn write_model(
    path: impl AsRef<Path>,
    fit: &FitResult,
    candidates: &[(ModelKind, Option<f64>)],
) -> Result<()> {
    std::fs::write(path, model_to_string(fit, candidates))?;
    Ok(())
}

pub fn read_model(path: impl AsRef<Path>) -> Result<(FitResult, Vec<(ModelKind, Option<f64>)>)> {
    parse_model(&std::fs::read_to_string(path)?)
}

fn push_candidates(out: &mut String, candidates: &[(ModelKind, Option<f64>)]) {
    for (kind, bic) in candidates {
        match bic {
            Some(b) => {
                let _ = writeln!(out, "candidate {} {b}", kind.name());
            }
            None => {
                let _ = writeln!(out, "candidate {} unfittable", kind.name());
            }
        }
    }
}

fn parse_candidates(cur: &mut Cursor) -> Result<Vec<(ModelKind, Option<f64>)>> {
    let mut candidates = Vec::new();
    while cur.at("candidate") {
        let (line, toks) = cur.field("candidate")?;
        if toks.len() != 2 {
            return Err(perr(line, "expected `candidate kind <bic|unfittable>`"));
        }
        let kind = ModelKind::parse(toks[0]).map_err(|e| perr(line, e.to_string()))?;
        let bic = if toks[1] == "unfittable" {
            None
        } else {
            Some(parse_f64(line, toks[1])?)
        };
        candidates.push((kind, bic));
    }
    Ok(candidates)
}

// ---------------------------------------------------------------------------
// Graph files
// ---------------------------------------------------------------------------

/// Renders a learned kinematic graph: global fit statistics, the selected
/// structure, the degree-of-freedom projection when one was estimated, and
/// every pairwise candidate fit with its model.
pub fn graph_to_string(g: &KinematicGraph) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "artikin graph v1");
    let _ = writeln!(out, "parts {}", g.parts);
    let _ = writeln!(out, "dof-total {}", g.dof_total);
    let _ = writeln!(out, "dof {}", g.dof);
    let _ = writeln!(out, "loglik {}", g.log_lik);
    let _ = writeln!(out, "bic {}", g.bic);
    let _ = writeln!(out, "converged {}", g.converged);
    for &(i, j) in &g.selected {
        let _ = writeln!(out, "selected {} {}", i + 1, j + 1);
    }
    if let Some(proj) = &g.projection {
        let mut line = String::from("projection-mean");
        let mean: Vec<f64> = proj.mean.iter().copied().collect();
        push_floats(&mut line, &mean);
        let _ = writeln!(out, "{line}");
        for c in 0..proj.basis.ncols() {
            let mut line = String::from("projection-axis");
            let col: Vec<f64> = proj.basis.column(c).iter().copied().collect();
            push_floats(&mut line, &col);
            let _ = writeln!(out, "{line}");
        }
    }
    for e in &g.edges {
        let _ = writeln!(out, "edge {} {}", e.i + 1, e.j + 1);
        push_candidates(&mut out, &e.candidates);
        push_model_block(&mut out, &e.fit);
    }
    out
}

pub fn parse_graph(text: &str) -> Result<KinematicGraph> {
    let mut cur = Cursor::new(text);
    cur.header("graph")?;
    let parts = cur.usize_field("parts")?;
    let dof_total = cur.usize_field("dof-total")?;
    let dof = cur.usize_field("dof")?;
    let log_lik = cur.f64_field("loglik")?;
    let bic = cur.f64_field("bic")?;
    let (line, toks) = cur.field("converged")?;
    let converged = match toks.as_slice() {
        ["true"] => true,
        ["false"] => false,
        _ => return Err(perr(line, "expected `converged true` or `converged false`")),
    };
    let mut selected = Vec::new();
    while cur.at("selected") {
        let (line, toks) = cur.field("selected")?;
        if toks.len() != 2 {
            return Err(perr(line, "expected `selected i j`"));
        }
        selected.push((
            parse_id(line, toks[0], "part", parts)?,
            parse_id(line, toks[1], "part", parts)?,
        ));
    }
    let projection = if cur.at("projection-mean") {
        let mean = float_row(&mut cur, "projection-mean", dof_total)?;
        let mut cols = Vec::new();
        while cur.at("projection-axis") {
            cols.push(DVector::from_vec(float_row(&mut cur, "projection-axis", dof_total)?));
        }
        let mut basis = DMatrix::zeros(dof_total, cols.len());
        for (c, col) in cols.iter().enumerate() {
            basis.set_column(c, col);
        }
        Some(DofProjection {
            mean: DVector::from_vec(mean),
            basis,
        })
    } else {
        None
    };
    let mut edges = Vec::new();
    while cur.at("edge") {
        let (line, toks) = cur.field("edge")?;
        if toks.len() != 2 {
            return Err(perr(line, "expected `edge i j`"));
        }
        let i = parse_id(line, toks[0], "part", parts)?;
        let j = parse_id(line, toks[1], "part", parts)?;
        let candidates = parse_candidates(&mut cur)?;
        let fit = parse_model_block(&mut cur)?;
        edges.push(EdgeFit {
            i,
            j,
            fit,
            candidates,
        });
    }
    cur.finish()?;
    Ok(KinematicGraph {
        parts,
        edges,
        selected,
        dof_total,
        dof,
        projection,
        log_lik,
        bic,
        converged,
    })
}

pub fn write_graph(path: impl AsRef<Path>, g: &KinematicGraph) -> Result<()> {
    std::fs::write(path, graph_to_string(g))?;
    Ok(())
}

pub fn read_graph(path: impl AsRef<Path>) -> Result<KinematicGraph> {
    parse_graph(&std::fs::read_to_string(path)?)
}

// ---------------------------------------------------------------------------
// Prior database files
// ---------------------------------------------------------------------------

/// Renders a prior database: assimilation history, then one block per entry
/// with its provenance labels, fitted model, and pooled observations. Each
/// entry's data lines are protected by a SHA-256 digest that is checked on
/// load.
pub fn db_to_string(db: &PriorDatabase) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "artikin priordb v1");
    let _ = writeln!(out, "entries {}", db.entries.len());
    for note in &db.history {
        let _ = writeln!(out, "history {note}");
    }
    for entry in &db.entries {
        let _ = writeln!(out, "entry-begin");
        for label in &entry.provenance {
            let _ = writeln!(out, "provenance {label}");
        }
        let _ = writeln!(out, "pool-bic {}", entry.pool_bic);
        let _ = writeln!(out, "samples {}", entry.data.len());
        let mut data_lines = String::new();
        for z in &entry.data {
            let mut line = String::from("data");
            push_floats(&mut line, &pose_fields(z));
            data_lines.push_str(&line);
            data_lines.push('\n');
        }
        let digest = Sha256::digest(data_lines.as_bytes());
        let _ = writeln!(out, "digest {digest:x}");
        push_model_block(&mut out, &entry.fit);
        out.push_str(&data_lines);
        let _ = writeln!(out, "entry-end");
    }
    out
}

pub fn parse_db(text: &str) -> Result<PriorDatabase> {
    let mut cur = Cursor::new(text);
    cur.header("priordb")?;
    let count = cur.usize_field("entries")?;
    let mut history = Vec::new();
    while cur.at("history") {
        history.push(cur.rest_field("history")?);
    }
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        cur.marker("entry-begin")?;
        let mut provenance = Vec::new();
        while cur.at("provenance") {
            provenance.push(cur.rest_field("provenance")?);
        }
        let pool_bic = cur.f64_field("pool-bic")?;
        let samples = cur.usize_field("samples")?;
        let (digest_line, toks) = cur.field("digest")?;
        if toks.len() != 1 {
            return Err(perr(digest_line, "expected one value after `digest`"));
        }
        let stored_digest = toks[0].to_string();
        let fit = parse_model_block(&mut cur)?;
        let mut data = Vec::with_capacity(samples);
        let mut hasher = Sha256::new();
        for _ in 0..samples {
            let end = cur.end;
            let (line, text) = cur
                .next()
                .ok_or_else(|| perr(end, "missing `data` line"))?;
            hasher.update(text.as_bytes());
            hasher.update(b"\n");
            let toks: Vec<&str> = text.split_whitespace().collect();
            if toks[0] != "data" {
                return Err(perr(line, format!("expected `data`, got {:?}", toks[0])));
            }
            data.push(parse_pose(line, &toks[1..])?);
        }
        let computed = format!("{:x}", hasher.finalize());
        if computed != stored_digest {
            return Err(perr(
                digest_line,
                "data digest mismatch: database entry is corrupted",
            ));
        }
        cur.marker("entry-end")?;
        entries.push(PriorEntry {
            fit,
            pool_bic,
            data,
            provenance,
        });
    }
    cur.finish()?;
    Ok(PriorDatabase { entries, history })
}

pub fn write_db(path: impl AsRef<Path>, db: &PriorDatabase) -> Result<()> {
    std::fs::write(path, db_to_string(db))?;
    Ok(())
}

pub fn read_db(path: impl AsRef<Path>) -> Result<PriorDatabase> {
    parse_db(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::{self, FitConfig};
    use crate::graph::{self, StructureConfig, StructureMode};
    use crate::obs::NoiseSpec;
    use crate::sim::{self, SimSpec};

    fn pose_bits(p: &Pose) -> [u64; 7] {
        pose_fields(p).map(f64::to_bits)
    }

    fn assert_pose_bits(a: &Pose, b: &Pose) {
        assert_eq!(pose_bits(a), pose_bits(b));
    }

    fn simulate(name: &str, n: usize, seed: u64) -> (ObjectTrajectory, GroundTruth) {
        let scn = sim::scenario(name).unwrap();
        let spec = SimSpec {
            n,
            noise: NoiseSpec::new(0.004, 0.01, scn.workspace_diameter).unwrap(),
            outlier_rate: 0.15,
            seed,
        };
        sim::generate(&scn, &spec).unwrap()
    }

    fn cfg() -> FitConfig {
        FitConfig::light(NoiseSpec::new(0.004, 0.01, 4.0).unwrap()).with_seed(9)
    }

    #[test]
    fn trajectory_roundtrip_is_bit_exact() {
        let (traj, _) = simulate("microwave", 6, 5);
        let text = trajectory_to_string(&traj);
        let back = parse_trajectory(&text).unwrap();
        assert_eq!(back.parts, traj.parts);
        assert_eq!(back.len(), traj.len());
        for (a, b) in traj.steps.iter().flatten().zip(back.steps.iter().flatten()) {
            assert_pose_bits(a, b);
        }
        assert_eq!(trajectory_to_string(&back), text);
    }

    #[test]
    fn truth_sidecar_roundtrips_every_field() {
        let (_, gt) = simulate("yardstick-closed", 7, 3);
        assert!(gt.outliers.iter().flatten().any(|&o| o));
        let text = truth_to_string(&gt);
        let back = parse_truth(&text).unwrap();
        assert_eq!(back.scenario, gt.scenario);
        assert_eq!(back.true_edges, gt.true_edges);
        assert_eq!(back.true_dof, gt.true_dof);
        assert_eq!(back.outliers, gt.outliers);
        assert_eq!(back.amp.to_bits(), gt.amp.to_bits());
        assert_eq!(back.schedule.len(), gt.schedule.len());
        for (a, b) in gt.schedule.iter().flatten().zip(back.schedule.iter().flatten()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in gt.truth.steps.iter().flatten().zip(back.truth.steps.iter().flatten()) {
            assert_pose_bits(a, b);
        }
        assert_eq!(truth_to_string(&back), text);
    }

    #[test]
    fn model_files_reload_every_family_exactly() {
        let (traj, _) = simulate("drawer", 14, 2);
        let zs = traj.relative_sequence(0, 1);
        let fits = estimate::fit_all_candidates(&zs, &cfg());
        let candidates: Vec<(ModelKind, Option<f64>)> = fits
            .iter()
            .map(|(k, r)| (*k, r.as_ref().ok().map(|f| f.bic)))
            .collect();
        let mut checked = 0;
        for (kind, fit) in &fits {
            let Ok(fit) = fit else { continue };
            let text = model_to_string(fit, &candidates);
            let (back, back_cands) = parse_model(&text).unwrap();
            assert_eq!(back.model.kind(), *kind);
            assert_eq!(back.n, fit.n);
            assert_eq!(back.gamma.to_bits(), fit.gamma.to_bits());
            assert_eq!(back.log_lik.to_bits(), fit.log_lik.to_bits());
            assert_eq!(back.bic.to_bits(), fit.bic.to_bits());
            assert_eq!(back_cands, candidates);
            let d = fit.model.dof();
            let q: Vec<f64> = (0..d)
                .map(|k| 0.5 * (fit.model.range.min[k] + fit.model.range.max[k]))
                .collect();
            assert_pose_bits(
                &back.model.forward(&q).unwrap(),
                &fit.model.forward(&q).unwrap(),
            );
            assert_eq!(model_to_string(&back, &back_cands), text);
            checked += 1;
        }
        assert_eq!(checked, 4);
    }

    #[test]
    fn unfittable_candidates_survive_roundtrip() {
        let (traj, _) = simulate("microwave", 8, 4);
        let zs = traj.relative_sequence(0, 1);
        let fit = estimate::fit_link(&zs, &cfg()).unwrap();
        let candidates = vec![
            (ModelKind::Rigid, Some(120.5)),
            (ModelKind::Prismatic, None),
            (ModelKind::Revolute, Some(fit.bic)),
            (ModelKind::Gp, None),
        ];
        let text = model_to_string(&fit, &candidates);
        assert_eq!(text.matches("unfittable").count(), 2);
        let (_, back) = parse_model(&text).unwrap();
        assert_eq!(back, candidates);
    }

    #[test]
    fn graph_file_roundtrips_structure_and_projection() {
        let (traj, _) = simulate("cabinet", 10, 6);
        let scfg = StructureConfig {
            mode: StructureMode::Tree,
            dof_estimation: true,
        };
        let mut g = graph::learn_structure(&traj, &cfg(), &scfg).unwrap();
        // Attach a projection so the optional block is exercised too.
        let dt = g.dof_total;
        let axis = DVector::from_element(dt, 1.0 / (dt as f64).sqrt());
        g.projection = Some(DofProjection {
            mean: DVector::from_fn(dt, |r, _| 0.1 * (r as f64 + 1.0)),
            basis: DMatrix::from_columns(&[axis]),
        });
        g.dof = 1;
        let text = graph_to_string(&g);
        let back = parse_graph(&text).unwrap();
        assert_eq!(back.parts, g.parts);
        assert_eq!(back.selected, g.selected);
        assert_eq!(back.dof_total, g.dof_total);
        assert_eq!(back.dof, g.dof);
        assert_eq!(back.converged, g.converged);
        assert_eq!(back.log_lik.to_bits(), g.log_lik.to_bits());
        assert_eq!(back.bic.to_bits(), g.bic.to_bits());
        let (bp, gp) = (back.projection.as_ref().unwrap(), g.projection.as_ref().unwrap());
        assert_eq!(bp.mean, gp.mean);
        assert_eq!(bp.basis, gp.basis);
        assert_eq!(back.edges.len(), g.edges.len());
        for (a, b) in g.edges.iter().zip(&back.edges) {
            assert_eq!((a.i, a.j), (b.i, b.j));
            assert_eq!(a.candidates, b.candidates);
            assert_eq!(a.fit.bic.to_bits(), b.fit.bic.to_bits());
            let d = a.fit.model.dof();
            let q = vec![0.1; d];
            if let (Ok(pa), Ok(pb)) = (a.fit.model.forward(&q), b.fit.model.forward(&q)) {
                assert_pose_bits(&pa, &pb);
            }
        }
        assert_eq!(graph_to_string(&back), text);
    }

    #[test]
    fn prior_database_roundtrips_and_rejects_corruption() {
        let mut db = PriorDatabase::new();
        for (seed, name) in [(1, "drawer"), (2, "microwave")] {
            let (traj, _) = simulate(name, 12, seed);
            db.assimilate(&format!("{name}-{seed}"), &traj.relative_sequence(0, 1), &cfg())
                .unwrap();
        }
        let text = db_to_string(&db);
        let back = parse_db(&text).unwrap();
        assert_eq!(back.entries.len(), db.entries.len());
        assert_eq!(back.history, db.history);
        for (a, b) in db.entries.iter().zip(&back.entries) {
            assert_eq!(a.provenance, b.provenance);
            assert_eq!(a.pool_bic.to_bits(), b.pool_bic.to_bits());
            assert_eq!(a.data.len(), b.data.len());
            for (x, y) in a.data.iter().zip(&b.data) {
                assert_pose_bits(x, y);
            }
        }
        assert_eq!(db_to_string(&back), text);

        // Flip one digit inside the last data line: the digest must catch it.
        let line_start = text.rfind("\ndata ").unwrap() + 1;
        let line_end = line_start + text[line_start..].find('\n').unwrap();
        let line = &text[line_start..line_end];
        let (at, digit) = line
            .char_indices()
            .rev()
            .find(|&(_, c)| c.is_ascii_digit())
            .unwrap();
        let swapped = if digit == '1' { '2' } else { '1' };
        let mut corrupted = text.clone();
        corrupted.replace_range(line_start + at..line_start + at + 1, &swapped.to_string());
        match parse_db(&corrupted) {
            Err(Error::Parse { msg, .. }) => assert!(msg.contains("digest")),
            other => panic!("corruption not detected: {other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let bad_float = "artikin trajectory v1\nparts 1\nsteps 1\nunits m rad\nobs 1 1 x 0 0 1 0 0 0\n";
        match parse_trajectory(bad_float) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 5);
                assert!(msg.contains("number"));
            }
            other => panic!("expected a parse error, got {other:?}"),
        }

        let (traj, _) = simulate("microwave", 3, 8);
        let text = trajectory_to_string(&traj);
        let lines: Vec<&str> = text.lines().collect();
        let duplicated = [&lines[..], &lines[5..6]].concat().join("\n");
        match parse_trajectory(&duplicated) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, lines.len() + 1);
                assert!(msg.contains("duplicate"));
            }
            other => panic!("expected a duplicate error, got {other:?}"),
        }

        let truncated = lines[..lines.len() - 1].join("\n");
        match parse_trajectory(&truncated) {
            Err(Error::Parse { msg, .. }) => assert!(msg.contains("missing observation")),
            other => panic!("expected a missing-record error, got {other:?}"),
        }

        match parse_trajectory("artikin graph v1\n") {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 1);
                assert!(msg.contains("header"));
            }
            other => panic!("expected a header error, got {other:?}"),
        }
    }
}
