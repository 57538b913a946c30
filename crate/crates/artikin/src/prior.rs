//! Learning from experience: a database of link models pooled across
//! previously observed mechanisms.
//!
//! Trajectories arrive one at a time. Each either becomes a new database
//! entry or is merged into an existing one — whichever alternative yields
//! the lower total BIC. Merged entries refit their model on the pooled
//! observations, so a recurring mechanism ends up with one model estimated
//! from everything ever seen of it. A partial trajectory of a known
//! mechanism can then borrow that pooled model, which predicts far better
//! than a model fitted to the fragment alone ([`PriorDatabase::predict_with_prior`]).

use crate::estimate::{fit_link, FitConfig, FitResult};
use crate::obs::{self, OutlierSpec};
use crate::se3::Pose;
use crate::Result;

/// Upper bound on an entry's pooled sample count. Pools beyond the cap are
/// thinned uniformly, keeping refit cost bounded.
pub const MAX_POOLED: usize = 2000;

/// One representative mechanism: its fitted model and the pooled
/// observations it was estimated from.
#[derive(Debug, Clone)]
pub struct PriorEntry {
    pub fit: FitResult,
    /// BIC of the model against the pool under the plain observation
    /// likelihood; see [`observation_bic`].
    pub pool_bic: f64,
    /// Pooled relative-pose observations (thinned to [`MAX_POOLED`]).
    pub data: Vec<Pose>,
    /// Labels of the trajectories absorbed into this entry.
    pub provenance: Vec<String>,
}

/// Where a prior-backed prediction came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorSource {
    /// No entry helped; the model was fitted to the new data alone.
    Fresh,
    /// Pooled with the entry at this index.
    Entry(usize),
}

/// An experience database of link models.
#[derive(Debug, Clone, Default)]
pub struct PriorDatabase {
    pub entries: Vec<PriorEntry>,
    /// One line per assimilated trajectory, recording the decision.
    pub history: Vec<String>,
}

/// Evenly spaced subsample bringing `data` under `cap` elements.
fn thin_uniform(data: &[Pose], cap: usize) -> Vec<Pose> {
    if data.len() <= cap {
        return data.to_vec();
    }
    (0..cap)
        .map(|i| data[i * data.len() / cap])
        .collect()
}

fn pool(a: &[Pose], b: &[Pose]) -> Vec<Pose> {
    let mut joined = Vec::with_capacity(a.len() + b.len());
    joined.extend_from_slice(a);
    joined.extend_from_slice(b);
    thin_uniform(&joined, MAX_POOLED)
}

/// BIC of a fitted model against a pool, from the plain observation
/// mixture likelihood: `−2·Σ log p(z | M) + k·ln n`.
///
/// The sequence score used for family selection additionally charges
/// `d·ln n` per observation for the latent configuration. That charge
/// grows with the pool, so under it a pool of two same-mechanism
/// recordings always scores worse than the two halves separately (by
/// `2·d·n_total·H(n_a/n_total)` nats, an entropy term linear in the pool
/// size) and no merge could ever win. Pool comparisons therefore score
/// parameters only.
pub fn observation_bic(fit: &FitResult, zs: &[Pose], cfg: &FitConfig) -> Result<f64> {
    let outlier = OutlierSpec::new(fit.gamma, cfg.outliers.w)?;
    let mut ll = 0.0;
    for z in zs {
        let pred = fit.model.predict(z)?;
        ll += obs::log_mixture(z, &pred, &cfg.noise, &outlier);
    }
    Ok(-2.0 * ll + fit.model.param_count() as f64 * (zs.len() as f64).ln())
}

fn fit_pool(zs: &[Pose], cfg: &FitConfig) -> Result<(FitResult, f64)> {
    let fit = fit_link(zs, cfg)?;
    let bic = observation_bic(&fit, zs, cfg)?;
    Ok((fit, bic))
}

/// Whether one model over the pooled observations explains both datasets
/// better than two separate models: `BIC(joint) < BIC(a) + BIC(b)`.
/// Returns the decision together with the joint fit.
pub fn merge_beneficial(
    a: &PriorEntry,
    b: &PriorEntry,
    cfg: &FitConfig,
) -> Result<(bool, FitResult)> {
    let (joint, joint_bic) = fit_pool(&pool(&a.data, &b.data), cfg)?;
    Ok((joint_bic < a.pool_bic + b.pool_bic, joint))
}

impl PriorDatabase {
    pub fn new() -> Self {
        Self::default()
    }

    /// Absorbs one trajectory's relative-pose observations: the new data
    /// becomes its own entry, or merges into the existing entry for which
    /// pooling lowers the total BIC the most. Returns the index of the
    /// entry the trajectory ended up in.
    pub fn assimilate(&mut self, label: &str, zs: &[Pose], cfg: &FitConfig) -> Result<usize> {
        let data = thin_uniform(zs, MAX_POOLED);
        let (fresh, fresh_bic) = fit_pool(&data, cfg)?;
        // Marginal total-BIC cost of each alternative: a new entry costs
        // its own BIC; merging into entry `j` replaces BIC(j) with
        // BIC(joint), i.e. costs their difference.
        let mut best_cost = fresh_bic;
        let mut best: Option<(usize, FitResult, f64)> = None;
        for (j, entry) in self.entries.iter().enumerate() {
            let (joint, joint_bic) = fit_pool(&pool(&entry.data, &data), cfg)?;
            let cost = joint_bic - entry.pool_bic;
            if cost < best_cost {
                best_cost = cost;
                best = Some((j, joint, joint_bic));
            }
        }
        match best {
            Some((j, joint, joint_bic)) => {
                let entry = &mut self.entries[j];
                entry.data = pool(&entry.data, &data);
                entry.fit = joint;
                entry.pool_bic = joint_bic;
                entry.provenance.push(label.to_string());
                self.history.push(format!(
                    "{label}: merged into entry {j} ({}, bic {:.3})",
                    entry.fit.model.kind().name(),
                    entry.pool_bic
                ));
                Ok(j)
            }
            None => {
                self.entries.push(PriorEntry {
                    fit: fresh,
                    pool_bic: fresh_bic,
                    data,
                    provenance: vec![label.to_string()],
                });
                let j = self.entries.len() - 1;
                self.history.push(format!(
                    "{label}: new entry {j} ({}, bic {:.3})",
                    self.entries[j].fit.model.kind().name(),
                    self.entries[j].pool_bic
                ));
                Ok(j)
            }
        }
    }

    /// Fits the given (typically partial) observations with the database's
    /// help: if pooling them into some entry lowers the total BIC below
    /// fitting them alone, the returned model is estimated from that
    /// entry's pooled data plus the new observations. The database is not
    /// modified.
    pub fn predict_with_prior(
        &self,
        zs: &[Pose],
        cfg: &FitConfig,
    ) -> Result<(FitResult, PriorSource)> {
        let data = thin_uniform(zs, MAX_POOLED);
        let (fresh, fresh_bic) = fit_pool(&data, cfg)?;
        let mut best_cost = fresh_bic;
        let mut best = (fresh, PriorSource::Fresh);
        for (j, entry) in self.entries.iter().enumerate() {
            let (joint, joint_bic) = fit_pool(&pool(&entry.data, &data), cfg)?;
            let cost = joint_bic - entry.pool_bic;
            if cost < best_cost {
                best_cost = cost;
                best = (joint, PriorSource::Entry(j));
            }
        }
        Ok(best)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelKind;
    use crate::obs::NoiseSpec;
    use crate::sim::{self, evaluate_link, SimSpec};

    fn relative_obs(name: &str, n: usize, seed: u64) -> (Vec<Pose>, Vec<Pose>) {
        let scn = sim::scenario(name).unwrap();
        let spec = SimSpec {
            n,
            noise: NoiseSpec::new(0.003, 0.008, scn.workspace_diameter).unwrap(),
            outlier_rate: 0.0,
            seed,
        };
        let (obs, truth) = sim::generate(&scn, &spec).unwrap();
        (obs.relative_sequence(0, 1), truth.truth.relative_sequence(0, 1))
    }

    fn cfg() -> FitConfig {
        FitConfig::new(NoiseSpec::new(0.003, 0.008, 4.0).unwrap()).with_seed(11)
    }

    fn entry_for(name: &str, n: usize, seed: u64) -> PriorEntry {
        let (zs, _) = relative_obs(name, n, seed);
        let data = thin_uniform(&zs, MAX_POOLED);
        let (fit, pool_bic) = fit_pool(&data, &cfg()).unwrap();
        PriorEntry {
            fit,
            pool_bic,
            data,
            provenance: vec![format!("{name}-{seed}")],
        }
    }

    #[test]
    fn thinning_is_even_and_idempotent_below_cap() {
        let data: Vec<Pose> = (0..10)
            .map(|i| Pose::from_translation(nalgebra::Vector3::new(i as f64, 0.0, 0.0)))
            .collect();
        assert_eq!(thin_uniform(&data, 20).len(), 10);
        let thinned = thin_uniform(&data, 4);
        let xs: Vec<f64> = thinned.iter().map(|p| p.position.x).collect();
        assert_eq!(xs, vec![0.0, 2.0, 5.0, 7.0]);
    }

    #[test]
    fn same_mechanism_merges_different_mechanisms_do_not() {
        let a = entry_for("prior-drawer", 60, 1);
        let b = entry_for("prior-drawer", 60, 2);
        let (merge, joint) = merge_beneficial(&a, &b, &cfg()).unwrap();
        assert!(merge, "two recordings of one drawer share a model");
        assert_eq!(joint.model.kind(), ModelKind::Prismatic);
        assert_eq!(joint.n, 120);

        let c = entry_for("prior-microwave", 60, 3);
        let (merge, _) = merge_beneficial(&a, &c, &cfg()).unwrap();
        assert!(!merge, "a drawer and a hinged door need separate models");

        // Distinct hinges of different radii stay separate too.
        let d = entry_for("prior-room-door", 60, 4);
        let (merge, _) = merge_beneficial(&c, &d, &cfg()).unwrap();
        assert!(!merge);
    }

    #[test]
    fn duplicated_data_always_merges() {
        let a = entry_for("prior-board", 25, 5);
        let (merge, _) = merge_beneficial(&a, &a.clone(), &cfg()).unwrap();
        assert!(merge, "identical data twice: same likelihood, half the parameters");
    }

    #[test]
    fn assimilation_clusters_by_mechanism() {
        let mut db = PriorDatabase::new();
        // Interleaved recordings of two mechanisms.
        let runs = [
            ("prior-microwave", 7u64),
            ("prior-drawer", 8),
            ("prior-microwave", 9),
            ("prior-drawer", 10),
            ("prior-microwave", 11),
            ("prior-drawer", 12),
        ];
        for (name, seed) in runs {
            let (zs, _) = relative_obs(name, 60, seed);
            db.assimilate(&format!("{name}-{seed}"), &zs, &cfg()).unwrap();
        }
        assert_eq!(db.entries.len(), 2);
        assert_eq!(db.history.len(), 6);
        for entry in &db.entries {
            assert_eq!(entry.provenance.len(), 3);
            let mechanisms: std::collections::BTreeSet<&str> = entry
                .provenance
                .iter()
                .map(|l| l.rsplit_once('-').unwrap().0)
                .collect();
            assert_eq!(mechanisms.len(), 1, "entries must not mix mechanisms");
        }
        // Each trajectory is recorded in exactly one entry.
        let total: usize = db.entries.iter().map(|e| e.provenance.len()).sum();
        assert_eq!(total, runs.len());
    }

    #[test]
    fn prior_prediction_beats_fresh_fit_on_a_prefix() {
        let mut db = PriorDatabase::new();
        for seed in [20, 21, 22] {
            let (zs, _) = relative_obs("prior-room-door", 60, seed);
            db.assimilate(&format!("door-{seed}"), &zs, &cfg()).unwrap();
        }
        assert_eq!(db.entries.len(), 1);

        // Half of a new recording of the same door.
        let (zs, truth_rel) = relative_obs("prior-room-door", 60, 23);
        let prefix = &zs[..30];
        let (with_prior, source) = db.predict_with_prior(prefix, &cfg()).unwrap();
        assert_eq!(source, PriorSource::Entry(0));
        let fresh = fit_link(prefix, &cfg()).unwrap();

        let err_prior = evaluate_link(&with_prior.model, &truth_rel).unwrap();
        let err_fresh = evaluate_link(&fresh.model, &truth_rel).unwrap();
        assert!(
            err_prior.mean_pos_err < err_fresh.mean_pos_err,
            "pooled fit {:.5} must beat fragment fit {:.5}",
            err_prior.mean_pos_err,
            err_fresh.mean_pos_err
        );
    }

    #[test]
    fn unseen_mechanism_gets_a_fresh_model() {
        let mut db = PriorDatabase::new();
        let (zs, _) = relative_obs("prior-board", 30, 30);
        let (_, source) = db.predict_with_prior(&zs[..15], &cfg()).unwrap();
        assert_eq!(source, PriorSource::Fresh, "empty database cannot help");

        db.assimilate("board-30", &zs, &cfg()).unwrap();
        let (hinge, _) = relative_obs("prior-cabinet-door", 30, 31);
        let (_, source) = db.predict_with_prior(&hinge[..15], &cfg()).unwrap();
        assert_eq!(source, PriorSource::Fresh, "a hinge cannot borrow a sliding board");
    }
}
