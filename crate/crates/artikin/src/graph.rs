//! Kinematic structure of multi-part objects: which pairs of parts are
//! connected by links, what the links are, and how many degrees of freedom
//! the object as a whole has.
//!
//! Structure discovery proceeds in three stages. Every part pair gets a
//! link model fitted to its relative motion ([`fit_all_edges`]); a
//! minimum-cost spanning tree over the per-edge BIC scores gives the best
//! tree-shaped structure ([`spanning_tree`]); and a local search over
//! adding/removing edges, scoring whole structures with a pose-level BIC,
//! finds closed kinematic chains and the object's effective number of
//! degrees of freedom ([`learn_structure`]).
//!
//! Part indices are 0-based throughout the library; the file formats and
//! reports print them 1-based.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::estimate::{self, FitConfig, FitResult};
use crate::exec;
use crate::model::ModelKind;
use crate::obs::{self, NoiseSpec};
use crate::optim::{gauss_newton, GaussNewtonOptions};
use crate::se3::{wrap_angle, Pose};
use crate::{Error, Result};

/// Synchronized world-frame pose observations of all parts of one object.
#[derive(Debug, Clone)]
pub struct ObjectTrajectory {
    /// Number of observed parts.
    pub parts: usize,
    /// `steps[t][i]` is the observed pose of part `i` at timestep `t`.
    pub steps: Vec<Vec<Pose>>,
}

impl ObjectTrajectory {
    pub fn new(parts: usize, steps: Vec<Vec<Pose>>) -> Result<Self> {
        let traj = Self { parts, steps };
        traj.validate()?;
        Ok(traj)
    }

    pub fn validate(&self) -> Result<()> {
        if self.parts == 0 {
            return Err(Error::Invalid("trajectory has no parts".into()));
        }
        if self.steps.is_empty() {
            return Err(Error::Invalid("trajectory has no timesteps".into()));
        }
        for (t, step) in self.steps.iter().enumerate() {
            if step.len() != self.parts {
                return Err(Error::Invalid(format!(
                    "timestep {t} has {} poses, expected {}",
                    step.len(),
                    self.parts
                )));
            }
        }
        Ok(())
    }

    /// Number of timesteps.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// The relative pose sequence of part `j` expressed in part `i`'s
    /// frame, one entry per timestep.
    pub fn relative_sequence(&self, i: usize, j: usize) -> Vec<Pose> {
        self.steps.iter().map(|s| s[i].relative(&s[j])).collect()
    }

    /// The first `n` timesteps as a new trajectory.
    pub fn prefix(&self, n: usize) -> ObjectTrajectory {
        ObjectTrajectory {
            parts: self.parts,
            steps: self.steps[..n.min(self.steps.len())].to_vec(),
        }
    }
}

/// The selected link model for one part pair, plus the per-family scores
/// that selection was based on.
#[derive(Debug, Clone)]
pub struct EdgeFit {
    pub i: usize,
    pub j: usize,
    /// BIC winner among the candidate families.
    pub fit: FitResult,
    /// BIC per candidate family (`None` when the family was unfittable on
    /// this pair's data).
    pub candidates: Vec<(ModelKind, Option<f64>)>,
}

/// Fits link models to every part pair `(i, j)` with `i < j`. Pairs are
/// processed in parallel; each draws from a seed derived from the pair, so
/// results are independent of scheduling.
pub fn fit_all_edges(traj: &ObjectTrajectory, cfg: &FitConfig) -> Result<Vec<EdgeFit>> {
    traj.validate()?;
    if traj.parts < 2 {
        return Err(Error::Invalid(
            "structure discovery needs at least 2 parts".into(),
        ));
    }
    let pairs: Vec<(usize, usize)> = (0..traj.parts)
        .flat_map(|i| (i + 1..traj.parts).map(move |j| (i, j)))
        .collect();
    let fits = exec::map_collect(&pairs, |&(i, j)| -> Result<EdgeFit> {
        let zs = traj.relative_sequence(i, j);
        let salt = ((i as u64) << 32) | j as u64;
        let ecfg = cfg.clone().with_seed(estimate::derive_seed(cfg.rng_seed, salt));
        let results = estimate::fit_all_candidates(&zs, &ecfg);
        let candidates = results
            .iter()
            .map(|(k, r)| (*k, r.as_ref().ok().map(|f| f.bic)))
            .collect();
        let fit = estimate::select_model(results)?;
        Ok(EdgeFit {
            i,
            j,
            fit,
            candidates,
        })
    });
    fits.into_iter().collect()
}

struct Dsu {
    parent: Vec<usize>,
}

impl Dsu {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        if self.parent[x] != x {
            let root = self.find(self.parent[x]);
            self.parent[x] = root;
        }
        self.parent[x]
    }

    /// Joins two sets; `false` if already joined.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }
}

fn sorted_by_cost<'e>(edges: &'e [EdgeFit]) -> Vec<&'e EdgeFit> {
    let mut order: Vec<&EdgeFit> = edges.iter().collect();
    order.sort_by(|a, b| {
        a.fit
            .bic
            .partial_cmp(&b.fit.bic)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.i.cmp(&b.i))
            .then(a.j.cmp(&b.j))
    });
    order
}

/// Minimum-cost spanning tree over the fitted edges, cost = per-edge BIC.
/// Ties break on the part indices, so the result is unique. Returns the
/// selected pairs sorted ascending.
pub fn spanning_tree(parts: usize, edges: &[EdgeFit]) -> Result<Vec<(usize, usize)>> {
    let mut dsu = Dsu::new(parts);
    let mut selected = Vec::with_capacity(parts.saturating_sub(1));
    for e in sorted_by_cost(edges) {
        if dsu.union(e.i, e.j) {
            selected.push((e.i, e.j));
        }
    }
    if selected.len() + 1 != parts {
        return Err(Error::Invalid(
            "edge set does not connect all parts".into(),
        ));
    }
    selected.sort_unstable();
    Ok(selected)
}

fn is_spanning(parts: usize, edges: &[(usize, usize)]) -> bool {
    let mut dsu = Dsu::new(parts);
    let mut merged = 0;
    for &(i, j) in edges {
        if dsu.union(i, j) {
            merged += 1;
        }
    }
    merged + 1 == parts
}

/// Per-timestep configuration estimates for the given edges, one row per
/// timestep, edge blocks concatenated in the given order. Revolute
/// coordinates are unwrapped over time (each value shifted by the multiple
/// of 2π nearest to its predecessor) so projections see continuous curves.
pub fn config_matrix(traj: &ObjectTrajectory, edges: &[&EdgeFit]) -> DMatrix<f64> {
    let slots: usize = edges.iter().map(|e| e.fit.model.dof()).sum();
    let mut m = DMatrix::zeros(traj.len(), slots);
    let mut col0 = 0;
    for e in edges {
        let d = e.fit.model.dof();
        let revolute = e.fit.model.kind() == ModelKind::Revolute;
        for (t, z) in traj.relative_sequence(e.i, e.j).iter().enumerate() {
            let q = e.fit.model.inverse(z);
            for (k, &v) in q.iter().enumerate() {
                m[(t, col0 + k)] = if revolute && t > 0 {
                    let prev = m[(t - 1, col0 + k)];
                    prev + wrap_angle(v - prev)
                } else {
                    v
                };
            }
        }
        col0 += d;
    }
    m
}

/// An affine subspace of the stacked link configurations: the object's
/// effective degrees of freedom.
#[derive(Debug, Clone)]
pub struct DofProjection {
    /// Mean stacked configuration (length = total link dof).
    pub mean: DVector<f64>,
    /// Orthonormal basis, one column per retained degree of freedom.
    pub basis: DMatrix<f64>,
}

impl DofProjection {
    /// Nearest point of the subspace.
    pub fn project(&self, q: &DVector<f64>) -> DVector<f64> {
        let c = self.basis.transpose() * (q - &self.mean);
        &self.mean + &self.basis * c
    }

    /// Subspace coordinates of a stacked configuration.
    pub fn coords(&self, q: &DVector<f64>) -> DVector<f64> {
        self.basis.transpose() * (q - &self.mean)
    }
}

/// Principal axes of the rows of `m`: mean, axes as columns (descending
/// variance), singular values. Axis signs are canonicalized (largest-
/// magnitude entry positive) so the decomposition is reproducible.
fn principal_axes(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>, Vec<f64>) {
    let n = m.nrows();
    let d = m.ncols();
    let mut mean = DVector::zeros(d);
    for c in 0..d {
        mean[c] = m.column(c).sum() / n as f64;
    }
    let mut centered = m.clone();
    for r in 0..n {
        for c in 0..d {
            centered[(r, c)] -= mean[c];
        }
    }
    let svd = centered.svd(false, true);
    let v_t = svd.v_t.expect("thin SVD with V requested");
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut axes = DMatrix::zeros(d, idx.len());
    let mut sigmas = Vec::with_capacity(idx.len());
    for (out, &k) in idx.iter().enumerate() {
        let mut axis: Vec<f64> = v_t.row(k).iter().copied().collect();
        let lead = (0..d)
            .max_by(|&a, &b| {
                axis[a]
                    .abs()
                    .partial_cmp(&axis[b].abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap_or(0);
        if axis[lead] < 0.0 {
            for v in &mut axis {
                *v = -*v + 0.0;
            }
        }
        for (r, &v) in axis.iter().enumerate() {
            axes[(r, out)] = v + 0.0;
        }
        sigmas.push(svd.singular_values[k]);
    }
    (mean, axes, sigmas)
}

/// How candidate structures are searched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StructureMode {
    /// Best spanning tree only.
    Tree,
    /// Local search from the spanning tree: add or remove one edge at a
    /// time while the whole-structure BIC improves.
    Heuristic,
    /// Score every connected structure (supported up to 5 parts).
    Exhaustive,
}

impl StructureMode {
    pub fn name(self) -> &'static str {
        match self {
            StructureMode::Tree => "tree",
            StructureMode::Heuristic => "heuristic",
            StructureMode::Exhaustive => "exhaustive",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tree" => Ok(StructureMode::Tree),
            "heuristic" => Ok(StructureMode::Heuristic),
            "exhaustive" => Ok(StructureMode::Exhaustive),
            other => Err(Error::Invalid(format!(
                "unknown structure mode {other:?}; expected tree, heuristic or exhaustive"
            ))),
        }
    }
}

/// Structure-search options.
#[derive(Debug, Clone)]
pub struct StructureConfig {
    pub mode: StructureMode,
    /// When set, structures containing loops are scored at their best
    /// reduced number of degrees of freedom; otherwise the link dofs are
    /// taken at face value. Trees always keep all link dofs — every link
    /// of a tree can be articulated independently, so observed correlation
    /// between its configurations is history, not mechanism.
    pub dof_estimation: bool,
}

impl Default for StructureConfig {
    fn default() -> Self {
        Self {
            mode: StructureMode::Heuristic,
            dof_estimation: true,
        }
    }
}

/// Pose-level score of one candidate structure.
#[derive(Debug, Clone)]
pub struct StructureScore {
    pub log_lik: f64,
    pub bic: f64,
    /// Effective degrees of freedom the structure was scored at.
    pub dof: usize,
    /// Sum of the selected links' dofs.
    pub dof_total: usize,
    /// Present when `dof < dof_total`.
    pub projection: Option<DofProjection>,
    /// BIC per candidate dof, for reporting.
    pub per_dof: Vec<(usize, f64)>,
    /// Whether every per-timestep pose adjustment converged.
    pub converged: bool,
}

/// A learned kinematic structure: all pairwise fits, the selected edges,
/// and the whole-object score.
#[derive(Debug, Clone)]
pub struct KinematicGraph {
    pub parts: usize,
    /// Every pairwise fit, sorted by `(i, j)`.
    pub edges: Vec<EdgeFit>,
    /// Selected structure, sorted ascending.
    pub selected: Vec<(usize, usize)>,
    pub dof_total: usize,
    /// Estimated effective degrees of freedom.
    pub dof: usize,
    pub projection: Option<DofProjection>,
    pub log_lik: f64,
    pub bic: f64,
    pub converged: bool,
}

impl KinematicGraph {
    /// The fit for a selected or candidate edge.
    pub fn edge(&self, i: usize, j: usize) -> Option<&EdgeFit> {
        self.edges.iter().find(|e| (e.i, e.j) == (i, j))
    }
}

/// Reconstruction plan: edges of a spanning tree of the selected structure
/// in breadth-first order from part 0, with the traversal direction.
struct ChainStep {
    known: usize,
    new: usize,
    /// Index into the selected-edge list.
    edge: usize,
    /// True when traversing i→j (the edge's stored direction).
    forward: bool,
}

fn chain_plan(parts: usize, selected: &[(usize, usize)], costs: &[f64]) -> Result<Vec<ChainStep>> {
    // Spanning tree of the selected structure, cheapest edges first.
    let mut order: Vec<usize> = (0..selected.len()).collect();
    order.sort_by(|&a, &b| {
        costs[a]
            .partial_cmp(&costs[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(selected[a].cmp(&selected[b]))
    });
    let mut dsu = Dsu::new(parts);
    let mut tree: Vec<usize> = Vec::with_capacity(parts - 1);
    for &e in &order {
        if dsu.union(selected[e].0, selected[e].1) {
            tree.push(e);
        }
    }
    if tree.len() + 1 != parts {
        return Err(Error::Invalid(
            "selected structure does not connect all parts".into(),
        ));
    }
    // Breadth-first traversal from part 0.
    let mut plan = Vec::with_capacity(parts - 1);
    let mut seen = vec![false; parts];
    seen[0] = true;
    let mut frontier = vec![0usize];
    while let Some(part) = frontier.pop() {
        for &e in &tree {
            let (i, j) = selected[e];
            let (next, forward) = if i == part {
                (j, true)
            } else if j == part {
                (i, false)
            } else {
                continue;
            };
            if !seen[next] {
                seen[next] = true;
                plan.push(ChainStep {
                    known: part,
                    new: next,
                    edge: e,
                    forward,
                });
                frontier.push(next);
            }
        }
    }
    Ok(plan)
}

/// Evaluates a candidate structure: reconstructs part poses from the link
/// models at (optionally projected) configurations and scores how well the
/// reconstruction explains the observed poses.
///
/// Per timestep: estimate each selected link's configuration from the
/// observed relative pose, project the stacked configuration onto the
/// retained subspace, chain part poses from part 0 through a spanning tree
/// of the structure, and — when the structure has loops — adjust all
/// non-anchor poses by damped least squares so every selected link is
/// honored. The log-likelihood sums the observed-vs-reconstructed pose
/// densities minus `dof·ln n` per timestep for the estimated configuration.
pub fn score_structure(
    traj: &ObjectTrajectory,
    edges: &[EdgeFit],
    selected: &[(usize, usize)],
    noise: &NoiseSpec,
    dof_estimation: bool,
) -> Result<StructureScore> {
    let by_pair: BTreeMap<(usize, usize), &EdgeFit> =
        edges.iter().map(|e| ((e.i, e.j), e)).collect();
    let sel_edges: Vec<&EdgeFit> = selected
        .iter()
        .map(|p| {
            by_pair
                .get(p)
                .copied()
                .ok_or_else(|| Error::Invalid(format!("no fit for edge ({}, {})", p.0, p.1)))
        })
        .collect::<Result<_>>()?;
    if !is_spanning(traj.parts, selected) {
        return Err(Error::Invalid(
            "selected structure does not connect all parts".into(),
        ));
    }
    let dof_total: usize = sel_edges.iter().map(|e| e.fit.model.dof()).sum();
    let q_raw = config_matrix(traj, &sel_edges);
    let costs: Vec<f64> = sel_edges.iter().map(|e| e.fit.bic).collect();
    let plan = chain_plan(traj.parts, selected, &costs)?;
    let k_edges: usize = sel_edges.iter().map(|e| e.fit.model.param_count()).sum();
    let n = traj.len();

    // Loop closures couple the links, so a structure with loops may move
    // in fewer directions than its links suggest; sweep the candidate
    // subspace dimensions and keep the BIC winner. A tree's links are
    // independent, so its object dof is pinned at the sum of link dofs.
    let loopy = selected.len() + 1 > traj.parts;
    let mut candidates: Vec<(usize, Option<DofProjection>)> = Vec::new();
    if dof_estimation && loopy && dof_total > 1 && n >= 2 {
        let (mean, axes, _) = principal_axes(&q_raw);
        for d in 1..dof_total {
            candidates.push((
                d,
                Some(DofProjection {
                    mean: mean.clone(),
                    basis: axes.columns(0, d).into_owned(),
                }),
            ));
        }
    }
    candidates.push((dof_total, None));

    let mut per_dof = Vec::with_capacity(candidates.len());
    let mut best: Option<StructureScore> = None;
    for (d, projection) in candidates {
        let q_used = match &projection {
            Some(p) => {
                let mut q = q_raw.clone();
                for t in 0..n {
                    let row = p.project(&q_raw.row(t).transpose());
                    q.row_mut(t).copy_from(&row.transpose());
                }
                q
            }
            None => q_raw.clone(),
        };
        let (log_lik, converged) =
            structure_log_lik(traj, &sel_edges, selected, &plan, &q_used, d, noise)?;
        let k = k_edges
            + if d < dof_total {
                d * dof_total + dof_total
            } else {
                0
            };
        let bic = -2.0 * log_lik + k as f64 * ((n * traj.parts) as f64).ln();
        per_dof.push((d, bic));
        let score = StructureScore {
            log_lik,
            bic,
            dof: d,
            dof_total,
            projection,
            per_dof: Vec::new(),
            converged,
        };
        let better = match &best {
            None => true,
            Some(b) => score.bic < b.bic || (score.bic == b.bic && score.dof < b.dof),
        };
        if better {
            best = Some(score);
        }
    }
    let mut best = best.expect("at least one dof candidate");
    best.per_dof = per_dof;
    Ok(best)
}

/// Column ranges of each selected edge inside the stacked configuration.
fn config_slots(sel_edges: &[&EdgeFit]) -> Vec<std::ops::Range<usize>> {
    let mut slots = Vec::with_capacity(sel_edges.len());
    let mut col = 0;
    for e in sel_edges {
        let d = e.fit.model.dof();
        slots.push(col..col + d);
        col += d;
    }
    slots
}

fn structure_log_lik(
    traj: &ObjectTrajectory,
    sel_edges: &[&EdgeFit],
    selected: &[(usize, usize)],
    plan: &[ChainStep],
    q: &DMatrix<f64>,
    dof: usize,
    noise: &NoiseSpec,
) -> Result<(f64, bool)> {
    let n = traj.len();
    let parts = traj.parts;
    let slots = config_slots(sel_edges);
    let loopy = selected.len() + 1 > parts;
    let config_penalty = dof as f64 * (n as f64).ln();

    let per_t: Vec<Result<(f64, bool)>> = exec::map_indices(n, |t| {
        let y = &traj.steps[t];
        let q_row: Vec<f64> = q.row(t).iter().copied().collect();
        // Chain poses outward from the anchored part 0.
        let mut x = vec![Pose::identity(); parts];
        x[0] = y[0];
        for step in plan {
            let e = sel_edges[step.edge];
            let f = e.fit.model.forward(&q_row[slots[step.edge].clone()])?;
            x[step.new] = if step.forward {
                x[step.known].compose(&f)
            } else {
                x[step.known].compose(&f.inverse())
            };
        }
        let mut converged = true;
        if loopy {
            // Distribute loop-closure error: adjust all

            // non-anchor poses so every selected link is honored as well as
            // possible.
            let base = x.clone();
            let residual = |dx: &[f64]| -> DVector<f64> {
                let mut poses = base.clone();
                for (p, pose) in poses.iter_mut().enumerate().skip(1) {
                    *pose = estimate::perturb_pose(pose, &dx[6 * (p - 1)..6 * p]);
                }
                let mut r = DVector::zeros(6 * selected.len());
                for (k, e) in sel_edges.iter().enumerate() {
                    let f = e
                        .fit
                        .model
                        .forward(&q_row[slots[k].clone()])
                        .expect("dof-consistent slice");
                    let rel = poses[e.i].relative(&poses[e.j]);
                    let res = obs::residual(&rel, &f);
                    for m in 0..3 {
                        r[6 * k + m] = res[m] / noise.sigma_pos;
                        r[6 * k + 3 + m] = res[3 + m] / noise.sigma_orient;
                    }
                }
                r
            };
            let solved = gauss_newton(
                &residual,
                &vec![0.0; 6 * (parts - 1)],
                &GaussNewtonOptions::default(),
            );
            for (p, pose) in x.iter_mut().enumerate().skip(1) {
                *pose = estimate::perturb_pose(pose, &solved.x[6 * (p - 1)..6 * p]);
            }
            converged = solved.converged;
        }
        let mut ll = 0.0;
        for i in 0..parts {
            let r = obs::residual(&y[i], &x[i]);
            ll += obs::log_gaussian_with(&r, noise.sigma_y_pos, noise.sigma_y_orient);
        }
        Ok((ll - config_penalty, converged))
    });

    let mut total = 0.0;
    let mut all_converged = true;
    for r in per_t {
        let (ll, conv) = r?;
        total += ll;
        all_converged &= conv;
    }
    Ok((total, all_converged))
}

/// Candidate structures one edit away: add one unselected pair, or drop one
/// selected pair if the structure stays connected.
fn neighbors(
    parts: usize,
    selected: &[(usize, usize)],
    all_pairs: &[(usize, usize)],
) -> Vec<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    for &p in all_pairs {
        if !selected.contains(&p) {
            let mut s = selected.to_vec();
            s.push(p);
            s.sort_unstable();
            out.push(s);
        }
    }
    if selected.len() + 1 > parts {
        for k in 0..selected.len() {
            let mut s = selected.to_vec();
            s.remove(k);
            if is_spanning(parts, &s) {
                out.push(s);
            }
        }
    }
    out
}

/// All connected structures over the fitted pairs (up to 5 parts).
fn all_connected_structures(
    parts: usize,
    all_pairs: &[(usize, usize)],
) -> Result<Vec<Vec<(usize, usize)>>> {
    if parts > 5 {
        return Err(Error::Invalid(format!(
            "exhaustive structure search supports up to 5 parts, got {parts}"
        )));
    }
    let m = all_pairs.len();
    let mut out = Vec::new();
    for mask in 1u32..(1 << m) {
        let sel: Vec<(usize, usize)> = (0..m)
            .filter(|k| mask & (1 << k) != 0)
            .map(|k| all_pairs[k])
            .collect();
        if sel.len() + 1 >= parts && is_spanning(parts, &sel) {
            out.push(sel);
        }
    }
    Ok(out)
}

/// Learns the kinematic structure of a multi-part object.
pub fn learn_structure(
    traj: &ObjectTrajectory,
    cfg: &FitConfig,
    scfg: &StructureConfig,
) -> Result<KinematicGraph> {
    let edges = fit_all_edges(traj, cfg)?;
    let all_pairs: Vec<(usize, usize)> = edges.iter().map(|e| (e.i, e.j)).collect();
    let tree = spanning_tree(traj.parts, &edges)?;
    let mut best_sel = tree;
    let mut best = score_structure(traj, &edges, &best_sel, &cfg.noise, scfg.dof_estimation)?;

    match scfg.mode {
        StructureMode::Tree => {}
        StructureMode::Heuristic => {
            let mut scored: BTreeMap<Vec<(usize, usize)>, f64> = BTreeMap::new();
            scored.insert(best_sel.clone(), best.bic);
            loop {
                let mut round: Option<(Vec<(usize, usize)>, StructureScore)> = None;
                for cand in neighbors(traj.parts, &best_sel, &all_pairs) {
                    if scored.contains_key(&cand) {
                        continue;
                    }
                    let sc =
                        score_structure(traj, &edges, &cand, &cfg.noise, scfg.dof_estimation)?;
                    scored.insert(cand.clone(), sc.bic);
                    let take = match &round {
                        None => true,
                        Some((_, b)) => sc.bic < b.bic,
                    };
                    if take {
                        round = Some((cand, sc));
                    }
                }
                match round {
                    Some((sel, sc)) if sc.bic < best.bic => {
                        best_sel = sel;
                        best = sc;
                    }
                    _ => break,
                }
            }
        }
        StructureMode::Exhaustive => {
            for cand in all_connected_structures(traj.parts, &all_pairs)? {
                if cand == best_sel {
                    continue;
                }
                let sc = score_structure(traj, &edges, &cand, &cfg.noise, scfg.dof_estimation)?;
                let take = sc.bic < best.bic
                    || (sc.bic == best.bic && cand.len() < best_sel.len())
                    || (sc.bic == best.bic && cand.len() == best_sel.len() && cand < best_sel);
                if take {
                    best_sel = cand;
                    best = sc;
                }
            }
        }
    }

    Ok(KinematicGraph {
        parts: traj.parts,
        edges,
        selected: best_sel,
        dof_total: best.dof_total,
        dof: best.dof,
        projection: best.projection,
        log_lik: best.log_lik,
        bic: best.bic,
        converged: best.converged,
    })
}

#[cfg(test)]
mod trajectory_tests {
    use super::*;
    use crate::se3::pose_error;
    use nalgebra::Vector3;

    #[test]
    fn validation_catches_ragged_steps() {
        assert!(ObjectTrajectory::new(2, vec![]).is_err());
        assert!(ObjectTrajectory::new(0, vec![vec![]]).is_err());
        assert!(ObjectTrajectory::new(2, vec![vec![Pose::identity()]]).is_err());
        assert!(ObjectTrajectory::new(1, vec![vec![Pose::identity()]]).is_ok());
    }

    #[test]
    fn relative_sequence_is_frame_change() {
        let a = Pose::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let b = Pose::rot_z(0.3).compose(&Pose::from_translation(Vector3::new(0.0, 2.0, 0.0)));
        let traj = ObjectTrajectory::new(2, vec![vec![a, b]]).unwrap();
        let rel = traj.relative_sequence(0, 1);
        let (dp, dq) = pose_error(&a.compose(&rel[0]), &b);
        assert!(dp < 1e-12 && dq < 1e-12);
        // Relative motion is invariant to a common world transform.
        let w = Pose::rot_z(1.1).compose(&Pose::from_translation(Vector3::new(0.3, -0.4, 0.2)));
        let moved = ObjectTrajectory::new(2, vec![vec![w.compose(&a), w.compose(&b)]]).unwrap();
        let rel_moved = moved.relative_sequence(0, 1);
        let (dp, dq) = pose_error(&rel[0], &rel_moved[0]);
        assert!(dp < 1e-9 && dq < 1e-9);
    }

    #[test]
    fn prefix_truncates() {
        let step = vec![Pose::identity()];
        let traj = ObjectTrajectory::new(1, vec![step.clone(); 10]).unwrap();
        assert_eq!(traj.prefix(4).len(), 4);
        assert_eq!(traj.prefix(100).len(), 10);
    }
}

#[cfg(test)]
mod structure_tests {
    use super::*;
    use crate::model::{LinkModel, LinkParams};
    use crate::obs::OutlierSpec;
    use crate::sim::{self, SimSpec};
    use approx::assert_relative_eq;
    use rand::{Rng as _, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dummy_edge(i: usize, j: usize, bic: f64) -> EdgeFit {
        EdgeFit {
            i,
            j,
            fit: FitResult {
                model: LinkModel::new(LinkParams::Rigid {
                    offset: Pose::identity(),
                }),
                gamma: 0.0,
                log_lik: 0.0,
                bic,
                n: 1,
            },
            candidates: Vec::new(),
        }
    }

    /// Decodes a Prüfer sequence into the edge list of a labeled tree.
    fn prufer_decode(parts: usize, seq: &[usize]) -> Vec<(usize, usize)> {
        let mut degree = vec![1usize; parts];
        for &s in seq {
            degree[s] += 1;
        }
        let mut edges = Vec::with_capacity(parts - 1);
        let mut used = vec![false; parts];
        for &s in seq {
            let leaf = (0..parts).find(|&v| degree[v] == 1 && !used[v]).unwrap();
            edges.push((leaf.min(s), leaf.max(s)));
            used[leaf] = true;
            degree[s] -= 1;
        }
        let rest: Vec<usize> = (0..parts).filter(|&v| !used[v] && degree[v] == 1).collect();
        edges.push((rest[0], rest[1]));
        edges.sort_unstable();
        edges
    }

    /// All labeled trees on `parts` vertices via Prüfer sequences.
    fn all_trees(parts: usize) -> Vec<Vec<(usize, usize)>> {
        if parts == 2 {
            return vec![vec![(0, 1)]];
        }
        let len = parts - 2;
        let mut out = Vec::new();
        let mut seq = vec![0usize; len];
        loop {
            out.push(prufer_decode(parts, &seq));
            // Odometer increment over base `parts`.
            let mut k = 0;
            loop {
                seq[k] += 1;
                if seq[k] < parts {
                    break;
                }
                seq[k] = 0;
                k += 1;
                if k == len {
                    return out;
                }
            }
        }
    }

    #[test]
    fn spanning_tree_matches_exhaustive_tree_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for parts in 3..=5 {
            for _ in 0..20 {
                let mut edges = Vec::new();
                for i in 0..parts {
                    for j in i + 1..parts {
                        edges.push(dummy_edge(i, j, rng.gen_range(-50.0..50.0)));
                    }
                }
                let got = spanning_tree(parts, &edges).unwrap();
                let cost = |tree: &[(usize, usize)]| -> f64 {
                    tree.iter()
                        .map(|p| {
                            edges
                                .iter()
                                .find(|e| (e.i, e.j) == *p)
                                .map(|e| e.fit.bic)
                                .unwrap()
                        })
                        .sum()
                };
                let best = all_trees(parts)
                    .into_iter()
                    .map(|t| (cost(&t), t))
                    .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
                    .unwrap();
                assert!(
                    (cost(&got) - best.0).abs() < 1e-9,
                    "{parts} parts: got cost {} vs optimal {}",
                    cost(&got),
                    best.0
                );
            }
        }
    }

    #[test]
    fn config_matrix_unwraps_hinge_angles() {
        // A hinge swinging through the ±π seam must produce a continuous
        // configuration column.
        let door = LinkModel::new(LinkParams::Revolute {
            center: Pose::from_translation(nalgebra::Vector3::new(0.2, 0.1, 0.0)),
            radial: Pose::from_translation(nalgebra::Vector3::new(0.4, 0.0, 0.0)),
        });
        let qs: Vec<f64> = (0..12).map(|t| 2.5 + 0.2 * t as f64).collect();
        let steps: Vec<Vec<Pose>> = qs
            .iter()
            .map(|&q| vec![Pose::identity(), door.forward(&[q]).unwrap()])
            .collect();
        let traj = ObjectTrajectory::new(2, steps).unwrap();
        let edge = EdgeFit {
            i: 0,
            j: 1,
            fit: FitResult {
                model: door.clone(),
                gamma: 0.0,
                log_lik: 0.0,
                bic: 0.0,
                n: qs.len(),
            },
            candidates: Vec::new(),
        };
        let m = config_matrix(&traj, &[&edge]);
        for (t, &q) in qs.iter().enumerate() {
            // Recovered values stay on the continuous branch of the true
            // schedule up to a common 2π offset fixed by the first sample.
            assert_relative_eq!(m[(t, 0)], q, epsilon = 1e-9);
        }
    }

    #[test]
    fn two_part_structure_score_matches_link_likelihood() {
        // With two parts the pose-level score must reduce to the link
        // likelihood plus the constant density of the anchored part.
        let scn = sim::scenario("drawer").unwrap();
        let noise = crate::obs::NoiseSpec::new(0.004, 0.009, scn.workspace_diameter).unwrap();
        let (obs_traj, _) = sim::generate(
            &scn,
            &SimSpec {
                n: 20,
                noise,
                outlier_rate: 0.0,
                seed: 40,
            },
        )
        .unwrap();
        let cfg = FitConfig::new(noise).with_seed(5);
        let edges = fit_all_edges(&obs_traj, &cfg).unwrap();
        let score = score_structure(&obs_traj, &edges, &[(0, 1)], &noise, false).unwrap();

        let zs = obs_traj.relative_sequence(0, 1);
        let gaussian_only = OutlierSpec::new(0.0, 10.0).unwrap();
        let link_ll =
            estimate::sequence_log_lik(&edges[0].fit.model, &zs, &noise, &gaussian_only).unwrap();
        let anchor = 20.0 * obs::log_gaussian_peak(noise.sigma_y_pos, noise.sigma_y_orient);
        assert_relative_eq!(score.log_lik, link_ll + anchor, epsilon = 1e-6);
        assert!(score.converged);
        assert_eq!(score.dof, score.dof_total);
    }

    #[test]
    fn cabinet_structure_is_two_drawers() {
        let scn = sim::scenario("cabinet").unwrap();
        let noise = crate::obs::NoiseSpec::new(0.003, 0.008, scn.workspace_diameter).unwrap();
        let (obs_traj, _) = sim::generate(
            &scn,
            &SimSpec {
                n: 25,
                noise,
                outlier_rate: 0.0,
                seed: 77,
            },
        )
        .unwrap();
        let cfg = FitConfig::new(noise).with_seed(6);
        let g = learn_structure(&obs_traj, &cfg, &StructureConfig::default()).unwrap();
        assert_eq!(g.selected, vec![(0, 1), (0, 2)]);
        for &(i, j) in &g.selected {
            assert_eq!(g.edge(i, j).unwrap().fit.model.kind(), ModelKind::Prismatic);
        }
        assert_eq!(g.dof, 2);
        assert!(g.converged);
    }

    #[test]
    fn open_chain_keeps_all_link_dofs() {
        let scn = sim::scenario("yardstick-open").unwrap();
        let noise = crate::obs::NoiseSpec::new(0.003, 0.008, scn.workspace_diameter).unwrap();
        let (obs_traj, _) = sim::generate(
            &scn,
            &SimSpec {
                n: 30,
                noise,
                outlier_rate: 0.0,
                seed: 78,
            },
        )
        .unwrap();
        let cfg = FitConfig::new(noise).with_seed(7);
        let g = learn_structure(&obs_traj, &cfg, &StructureConfig::default()).unwrap();
        assert_eq!(g.selected, vec![(0, 1), (1, 2), (2, 3)]);
        assert_eq!(g.dof_total, 3);
        assert_eq!(g.dof, 3, "independent hinges must not be collapsed");
    }

    #[test]
    fn closed_chain_discovers_loop_and_single_dof() {
        let scn = sim::scenario("yardstick-closed").unwrap();
        let noise = crate::obs::NoiseSpec::new(0.003, 0.008, scn.workspace_diameter).unwrap();
        let (obs_traj, _) = sim::generate(
            &scn,
            &SimSpec {
                n: 30,
                noise,
                outlier_rate: 0.0,
                seed: 79,
            },
        )
        .unwrap();
        let cfg = FitConfig::new(noise).with_seed(8);
        let g = learn_structure(&obs_traj, &cfg, &StructureConfig::default()).unwrap();
        assert_eq!(
            g.selected,
            vec![(0, 1), (0, 3), (1, 2), (2, 3)],
            "the four bars form one loop"
        );
        assert_eq!(g.dof, 1, "a four-bar linkage has a single degree of freedom");
        // The loop must beat the best tree.
        let edges = g.edges.clone();
        let tree = spanning_tree(4, &edges).unwrap();
        let tree_score = score_structure(&obs_traj, &edges, &tree, &noise, true).unwrap();
        assert!(g.bic < tree_score.bic);
    }

    #[test]
    fn structure_learning_is_deterministic() {
        let scn = sim::scenario("cabinet").unwrap();
        let noise = crate::obs::NoiseSpec::new(0.004, 0.01, scn.workspace_diameter).unwrap();
        let (obs_traj, _) = sim::generate(
            &scn,
            &SimSpec {
                n: 20,
                noise,
                outlier_rate: 0.1,
                seed: 80,
            },
        )
        .unwrap();
        let cfg = FitConfig::new(noise).with_seed(9);
        let a = learn_structure(&obs_traj, &cfg, &StructureConfig::default()).unwrap();
        let b = learn_structure(&obs_traj, &cfg, &StructureConfig::default()).unwrap();
        assert_eq!(a.selected, b.selected);
        assert_eq!(a.dof, b.dof);
        assert_eq!(a.bic.to_bits(), b.bic.to_bits());
        assert_eq!(a.log_lik.to_bits(), b.log_lik.to_bits());
    }

    #[test]
    fn rejects_disconnected_and_undersized_inputs() {
        let traj = ObjectTrajectory::new(
            1,
            vec![vec![Pose::identity()], vec![Pose::identity()]],
        )
        .unwrap();
        let noise = crate::obs::NoiseSpec::new(0.01, 0.02, 4.0).unwrap();
        let cfg = FitConfig::new(noise);
        assert!(fit_all_edges(&traj, &cfg).is_err());
        // A structure that skips part 2 is rejected.
        let edges = vec![dummy_edge(0, 1, 1.0), dummy_edge(0, 2, 2.0), dummy_edge(1, 2, 3.0)];
        let traj3 = ObjectTrajectory::new(
            3,
            vec![vec![Pose::identity(); 3], vec![Pose::identity(); 3]],
        )
        .unwrap();
        assert!(score_structure(&traj3, &edges, &[(0, 1)], &noise, false).is_err());
        assert!(StructureMode::parse("tree").is_ok());
        assert!(StructureMode::parse("mst").is_err());
    }
}
