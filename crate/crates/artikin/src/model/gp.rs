//! Nonparametric link model: Gaussian-process regression over a
//! PCA-derived latent configuration.
//!
//! Training flattens each observed relative pose into the 12 free entries
//! of its 3×4 transform (rotation matrix row-major, then translation). PCA
//! over the flattened poses yields a `d`-dimensional latent configuration;
//! the inverse map is the linear PCA projection. The forward map is carried
//! by 12 independent GP regressors with a shared squared-exponential kernel
//! `k(q, q') = σ_f² · exp(−½ Σ_m ((q_m − q'_m)/ℓ_m)²)`; the predicted
//! rotation block is projected back onto the nearest rotation, so forward
//! predictions are always valid poses.
//!
//! Hyperparameters maximize the summed marginal likelihood of the 12
//! regressors via a deterministic log-space grid followed by coordinate-wise
//! refinement. Per-output noise variances are tied to the observation noise:
//! rotation entries use `σ_orient²`, translation entries `σ_pos²`.

use nalgebra::{DMatrix, DVector, Dyn, Matrix3, Vector3};

use crate::obs::NoiseSpec;
use crate::se3::{orthonormalize, Pose};
use crate::{Error, Result};

/// Largest latent dimension the model accepts.
pub const MAX_LATENT_DIM: usize = 5;

/// Training sets larger than this are uniformly thinned before GP
/// training; kernel algebra is cubic in the training size while the model
/// gains little beyond this many support points.
pub const MAX_GP_TRAIN: usize = 120;

/// Training budgets tried when fitting the nonparametric family. Each kept
/// point costs six parameters in the selection score, so the right budget
/// depends on how the curvature of the motion compares with the noise; the
/// ladder lets the score decide instead of fixing the trade a priori.
pub const GP_TRAIN_BUDGETS: [usize; 8] = [8, 12, 18, 27, 40, 60, 90, MAX_GP_TRAIN];

/// Variance floor below which the flattened training data is considered
/// constant and no latent axis can be extracted.
const EPS_VARIANCE: f64 = 1e-9;

/// Kernel hyperparameters shared by the 12 output regressors.
#[derive(Debug, Clone, PartialEq)]
pub struct GpHyper {
    /// Signal variance `σ_f²`.
    pub signal_var: f64,
    /// One length scale per latent dimension.
    pub length_scales: Vec<f64>,
}

/// A trained Gaussian-process link model.
#[derive(Debug, Clone)]
pub struct GpModel {
    /// Latent configuration dimension `d`.
    pub latent_dim: usize,
    /// Mean of the flattened training poses (12 entries); doubles as the
    /// GP prior mean per output.
    pub mean: Vec<f64>,
    /// PCA axes, one column per latent dimension (12×d, orthonormal).
    pub axes: DMatrix<f64>,
    /// Latent training inputs (n×d).
    pub train_q: DMatrix<f64>,
    /// Flattened training outputs (n×12).
    pub train_y: DMatrix<f64>,
    pub hyper: GpHyper,
    /// Noise variance of the nine rotation-entry outputs.
    pub noise_var_rot: f64,
    /// Noise variance of the three translation outputs.
    pub noise_var_pos: f64,
    /// Cached regression weights `(K + σ²I)⁻¹ (y_o − mean_o)` per output
    /// (n×12); rebuilt on load, never serialized.
    alpha: DMatrix<f64>,
}

/// Flattens a pose into the 12 free entries of its 3×4 transform:
/// rotation row-major, then translation.
pub(crate) fn flatten_pose(p: &Pose) -> [f64; 12] {
    let r = p.rotation().to_rotation_matrix();
    let m = r.matrix();
    [
        m[(0, 0)],
        m[(0, 1)],
        m[(0, 2)],
        m[(1, 0)],
        m[(1, 1)],
        m[(1, 2)],
        m[(2, 0)],
        m[(2, 1)],
        m[(2, 2)],
        p.position.x,
        p.position.y,
        p.position.z,
    ]
}

fn unflatten_pose(v: &[f64]) -> Result<Pose> {
    let m = Matrix3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]);
    let rot = orthonormalize(&m)?;
    Ok(Pose::from_position_rotation(Vector3::new(v[9], v[10], v[11]), rot))
}

fn kernel(a: &[f64], b: &[f64], hyper: &GpHyper) -> f64 {
    let mut s = 0.0;
    for m in 0..a.len() {
        let d = (a[m] - b[m]) / hyper.length_scales[m];
        s += d * d;
    }
    hyper.signal_var * (-0.5 * s).exp()
}

/// Evenly spaced indices keeping at most `cap` of `n` items (always keeps
/// the first and last).
pub(crate) fn thinning_indices(n: usize, cap: usize) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    (0..cap)
        .map(|i| (i as f64 * (n - 1) as f64 / (cap - 1) as f64).round() as usize)
        .collect()
}

fn cholesky_with_jitter(k: &DMatrix<f64>, scale: f64) -> Result<nalgebra::Cholesky<f64, Dyn>> {
    if let Some(c) = k.clone().cholesky() {
        return Ok(c);
    }
    let mut jitter = 1e-10 * scale.max(1e-12);
    for _ in 0..7 {
        let mut kj = k.clone();
        for i in 0..k.nrows() {
            kj[(i, i)] += jitter;
        }
        if let Some(c) = kj.cholesky() {
            return Ok(c);
        }
        jitter *= 10.0;
    }
    Err(Error::Numerical("kernel matrix is not positive definite".into()))
}

/// Marginal log-likelihood of one GP output given the Cholesky factor of
/// its kernel matrix: `−½·yᵀα − Σᵢ ln Lᵢᵢ − (n/2)·ln 2π`.
fn marginal_log_lik(chol: &nalgebra::Cholesky<f64, Dyn>, y: &DVector<f64>) -> f64 {
    let alpha = chol.solve(y);
    let l = chol.l();
    let mut log_det_half = 0.0;
    for i in 0..l.nrows() {
        log_det_half += l[(i, i)].ln();
    }
    -0.5 * y.dot(&alpha)
        - log_det_half
        - 0.5 * y.len() as f64 * (2.0 * std::f64::consts::PI).ln()
}

impl GpModel {
    /// Trains on the observed relative poses with a fixed latent dimension.
    pub fn train(data: &[Pose], latent_dim: usize, noise: &NoiseSpec) -> Result<Self> {
        Self::train_with_budget(data, latent_dim, noise, MAX_GP_TRAIN)
    }

    /// Like [`GpModel::train`], but keeping at most `budget` uniformly
    /// thinned training points (clamped to [`MAX_GP_TRAIN`] and up to the
    /// minimum the latent dimensionality needs). Every kept point bills six
    /// parameters in the selection score, so a small budget buys a cheaper
    /// model at the cost of interpolation fidelity between the kept points.
    pub fn train_with_budget(
        data: &[Pose],
        latent_dim: usize,
        noise: &NoiseSpec,
        budget: usize,
    ) -> Result<Self> {
        if latent_dim == 0 || latent_dim > MAX_LATENT_DIM {
            return Err(Error::Invalid(format!(
                "latent dimension must lie in 1..={MAX_LATENT_DIM}, got {latent_dim}"
            )));
        }
        let needed = latent_dim + 3;
        if data.len() < needed {
            return Err(Error::TooFewSamples {
                needed,
                got: data.len(),
            });
        }
        let kept = thinning_indices(data.len(), budget.clamp(needed, MAX_GP_TRAIN));
        let n = kept.len();
        let mut train_y = DMatrix::zeros(n, 12);
        for (row, &i) in kept.iter().enumerate() {
            let f = flatten_pose(&data[i]);
            for (col, &v) in f.iter().enumerate() {
                train_y[(row, col)] = v;
            }
        }
        let mean: Vec<f64> = (0..12).map(|c| train_y.column(c).mean()).collect();
        let mut centered = train_y.clone();
        for c in 0..12 {
            for r in 0..n {
                centered[(r, c)] -= mean[c];
            }
        }
        let axes = principal_axes(&centered, latent_dim)?;
        let train_q = &centered * &axes;

        let hyper = search_hyperparameters(&train_q, &centered, noise)?;
        Self::from_parts(
            latent_dim,
            mean,
            axes,
            train_q,
            train_y,
            hyper,
            noise.sigma_orient.powi(2),
            noise.sigma_pos.powi(2),
        )
    }

    /// Rebuilds a model from its stored fields, recomputing the cached
    /// regression weights.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        latent_dim: usize,
        mean: Vec<f64>,
        axes: DMatrix<f64>,
        train_q: DMatrix<f64>,
        train_y: DMatrix<f64>,
        hyper: GpHyper,
        noise_var_rot: f64,
        noise_var_pos: f64,
    ) -> Result<Self> {
        let n = train_q.nrows();
        if mean.len() != 12
            || axes.nrows() != 12
            || axes.ncols() != latent_dim
            || train_q.ncols() != latent_dim
            || train_y.nrows() != n
            || train_y.ncols() != 12
            || hyper.length_scales.len() != latent_dim
        {
            return Err(Error::Invalid("inconsistent gp model dimensions".into()));
        }
        let k = kernel_matrix(&train_q, &hyper);
        let chol_rot = add_diag_and_factor(&k, noise_var_rot, hyper.signal_var)?;
        let chol_pos = add_diag_and_factor(&k, noise_var_pos, hyper.signal_var)?;
        let mut alpha = DMatrix::zeros(n, 12);
        for o in 0..12 {
            let y = DVector::from_fn(n, |r, _| train_y[(r, o)] - mean[o]);
            let chol = if o < 9 { &chol_rot } else { &chol_pos };
            alpha.set_column(o, &chol.solve(&y));
        }
        Ok(Self {
            latent_dim,
            mean,
            axes,
            train_q,
            train_y,
            hyper,
            noise_var_rot,
            noise_var_pos,
            alpha,
        })
    }

    /// Number of GP support points.
    pub fn train_len(&self) -> usize {
        self.train_q.nrows()
    }

    /// Posterior-mean pose at latent configuration `q`, projected onto a
    /// valid rotation.
    pub fn forward(&self, q: &[f64]) -> Result<Pose> {
        let n = self.train_len();
        let mut k_star = DVector::zeros(n);
        for i in 0..n {
            let qi: Vec<f64> = (0..self.latent_dim).map(|m| self.train_q[(i, m)]).collect();
            k_star[i] = kernel(q, &qi, &self.hyper);
        }
        let mut out = [0.0; 12];
        for o in 0..12 {
            out[o] = self.mean[o] + k_star.dot(&self.alpha.column(o).into_owned());
        }
        unflatten_pose(&out)
    }

    /// Latent configuration of an observed pose: the PCA projection of its
    /// flattened transform.
    pub fn inverse(&self, z: &Pose) -> Vec<f64> {
        let f = flatten_pose(z);
        let mut q = vec![0.0; self.latent_dim];
        for (m, qm) in q.iter_mut().enumerate() {
            let mut s = 0.0;
            for (c, &fc) in f.iter().enumerate() {
                s += (fc - self.mean[c]) * self.axes[(c, m)];
            }
            *qm = s;
        }
        q
    }
}

fn kernel_matrix(train_q: &DMatrix<f64>, hyper: &GpHyper) -> DMatrix<f64> {
    let n = train_q.nrows();
    let d = train_q.ncols();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..d).map(|m| train_q[(i, m)]).collect())
        .collect();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = kernel(&rows[i], &rows[j], hyper);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

fn add_diag_and_factor(
    k: &DMatrix<f64>,
    noise_var: f64,
    scale: f64,
) -> Result<nalgebra::Cholesky<f64, Dyn>> {
    let mut kn = k.clone();
    for i in 0..k.nrows() {
        kn[(i, i)] += noise_var;
    }
    cholesky_with_jitter(&kn, scale)
}

/// Top-`d` principal axes of the centered data, with a deterministic sign
/// convention (the largest-magnitude entry of each axis is positive).
fn principal_axes(centered: &DMatrix<f64>, d: usize) -> Result<DMatrix<f64>> {
    let svd = centered.clone().svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Numerical("svd failed to produce singular vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    if svd.singular_values[order[0]] < EPS_VARIANCE {
        return Err(Error::Degenerate(
            "observations have zero variance; no latent axis exists".into(),
        ));
    }
    if d > order.len() || svd.singular_values[order[d - 1]] < 1e-12 {
        return Err(Error::Degenerate(format!(
            "observations support fewer than {d} latent dimensions"
        )));
    }
    let mut axes = DMatrix::zeros(12, d);
    for (col, &idx) in order.iter().take(d).enumerate() {
        let mut axis: Vec<f64> = (0..12).map(|c| v_t[(idx, c)]).collect();
        let mut pivot = 0;
        for (i, v) in axis.iter().enumerate() {
            if v.abs() > axis[pivot].abs() {
                pivot = i;
            }
        }
        if axis[pivot] < 0.0 {
            for v in axis.iter_mut() {
                *v = -*v;
            }
        }
        for (row, &v) in axis.iter().enumerate() {
            axes[(row, col)] = v + 0.0;
        }
    }
    Ok(axes)
}

/// Summed marginal log-likelihood of the 12 regressors for one
/// hyperparameter setting, or `-inf` when the kernel cannot be factored.
fn total_marginal_log_lik(
    train_q: &DMatrix<f64>,
    centered_y: &DMatrix<f64>,
    noise: &NoiseSpec,
    hyper: &GpHyper,
) -> f64 {
    let k = kernel_matrix(train_q, hyper);
    let Ok(chol_rot) = add_diag_and_factor(&k, noise.sigma_orient.powi(2), hyper.signal_var)
    else {
        return f64::NEG_INFINITY;
    };
    let Ok(chol_pos) = add_diag_and_factor(&k, noise.sigma_pos.powi(2), hyper.signal_var) else {
        return f64::NEG_INFINITY;
    };
    let mut total = 0.0;
    for o in 0..12 {
        let y = centered_y.column(o).into_owned();
        let chol = if o < 9 { &chol_rot } else { &chol_pos };
        total += marginal_log_lik(chol, &y);
    }
    if total.is_nan() {
        f64::NEG_INFINITY
    } else {
        total
    }
}

/// Deterministic hyperparameter search: a multiplicative grid around
/// data-derived base values, then coordinate-wise refinement.
fn search_hyperparameters(
    train_q: &DMatrix<f64>,
    centered_y: &DMatrix<f64>,
    noise: &NoiseSpec,
) -> Result<GpHyper> {
    let d = train_q.ncols();
    let n = train_q.nrows() as f64;
    let base_var = ((0..12)
        .map(|o| centered_y.column(o).norm_squared() / n)
        .sum::<f64>()
        / 12.0)
        .max(1e-10);
    let base_scales: Vec<f64> = (0..d)
        .map(|m| {
            let col = train_q.column(m);
            ((col.max() - col.min()) / 2.0).max(1e-9)
        })
        .collect();

    let grid = [0.25, 1.0, 4.0];
    let mut best = GpHyper {
        signal_var: base_var,
        length_scales: base_scales.clone(),
    };
    let mut best_score = f64::NEG_INFINITY;
    // Cartesian grid over (signal, ℓ_1..ℓ_d) multipliers, enumerated in a
    // fixed order.
    let combos = grid.len().pow(d as u32 + 1);
    for code in 0..combos {
        let mut c = code;
        let sv = base_var * grid[c % grid.len()];
        c /= grid.len();
        let mut ls = Vec::with_capacity(d);
        for base in base_scales.iter() {
            ls.push(base * grid[c % grid.len()]);
            c /= grid.len();
        }
        let hyper = GpHyper {
            signal_var: sv,
            length_scales: ls,
        };
        let score = total_marginal_log_lik(train_q, centered_y, noise, &hyper);
        if score > best_score {
            best_score = score;
            best = hyper;
        }
    }
    if best_score == f64::NEG_INFINITY {
        return Err(Error::Numerical(
            "no hyperparameter setting produced a valid kernel".into(),
        ));
    }
    // Coordinate-wise multiplicative refinement.
    let factors = [0.5, 0.8, 1.25, 2.0];
    for _ in 0..3 {
        for param in 0..=d {
            for &f in &factors {
                let mut cand = best.clone();
                if param == 0 {
                    cand.signal_var *= f;
                } else {
                    cand.length_scales[param - 1] *= f;
                }
                let score = total_marginal_log_lik(train_q, centered_y, noise, &cand);
                if score > best_score {
                    best_score = score;
                    best = cand;
                }
            }
        }
    }
    Ok(best)
}
