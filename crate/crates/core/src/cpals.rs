//! CP decomposition by alternating least squares over any MTTKRP variant.
//!
//! Each sweep updates the factors mode by mode: `G = MTTKRP(Y, [1; A], k)`,
//! `Γ = ⊛_{m≠k} A_mᵀ A_m`, solve `A_k Γ = G` by Cholesky (with a diagonal
//! shift if Γ is not numerically positive definite), then normalize the
//! columns of `A_k` into λ. After a sweep the fit
//! `1 − ‖Y − M‖_F / ‖Y‖_F` is evaluated and the run stops once the absolute
//! fit change drops below the tolerance.

use std::time::{Duration, Instant};

use nalgebra::{Cholesky, DMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kruskal::KruskalTensor;
use crate::mttkrp::{mttkrp, tile_volume_for_width, MttkrpPlan, Variant};
use crate::tensor::{DenseTensor, Matrix};

/// Below this relative residual the Gram-matrix residual formula loses too
/// many digits to cancellation, so the residual is summed element by element.
const DIRECT_RESIDUAL_BELOW: f64 = 1e-4;

/// First diagonal shift tried, relative to the mean diagonal of Γ.
const REGULARIZATION: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Init {
    /// Factor entries i.i.d. uniform on `[0, 1)` from a seeded ChaCha8 stream.
    #[default]
    RandomUniform,
}

#[derive(Clone, Debug)]
pub struct AlsConfig {
    pub rank: usize,
    /// Absolute fit-change tolerance.
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
    /// Kernel settings; the mode is overwritten for every update.
    pub plan: MttkrpPlan,
    /// TILE edge length. When set, every mode uses `N_T = width^{d−1}`
    /// clamped to its slice volume, replacing `plan.tile_volume`.
    pub tile_width: Option<usize>,
    pub init: Init,
}

impl AlsConfig {
    pub fn new(rank: usize) -> Self {
        AlsConfig {
            rank,
            tol: 1e-4,
            max_iters: 100,
            seed: 0,
            plan: MttkrpPlan::new(Variant::Tile, 0),
            tile_width: None,
            init: Init::RandomUniform,
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.plan.variant = variant;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.plan.workers = workers;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::Parameter("rank must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Parameter("tolerance must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Parameter("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Wall time spent in each phase of a run, in seconds.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AlsTiming {
    pub mttkrp: f64,
    /// Hadamard Gram products and the linear solves.
    pub solve: f64,
    pub normalize: f64,
    pub fit: f64,
    /// Everything else: initialization, bookkeeping.
    pub other: f64,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AlsTrace {
    pub fits: Vec<f64>,
    /// `mttkrp_seconds[t][k]`: time of the mode-k MTTKRP in sweep t.
    pub mttkrp_seconds: Vec<Vec<f64>>,
    pub converged: bool,
    /// Weights of the returned model.
    pub lambda: Vec<f64>,
    pub timing: AlsTiming,
}

impl AlsTrace {
    pub fn iterations(&self) -> usize {
        self.fits.len()
    }

    pub fn final_fit(&self) -> Option<f64> {
        self.fits.last().copied()
    }
}

/// Solves `A Γ = G` for symmetric positive semi-definite Γ.
fn solve_normal_equations(gamma: &Matrix, g: &Matrix) -> Result<Matrix> {
    let r = gamma.rows();
    let gamma = DMatrix::from_row_slice(r, r, gamma.data());
    // Row-major G (I_k × R) is column-major Gᵀ, the right-hand side of Γ Aᵀ = Gᵀ.
    let rhs = DMatrix::from_column_slice(r, g.rows(), g.data());
    let scale = (gamma.trace() / r as f64).max(f64::MIN_POSITIVE);
    let mut shift = 0.0;
    for _ in 0..12 {
        let mut shifted = gamma.clone();
        for i in 0..r {
            shifted[(i, i)] += shift * scale;
        }
        if let Some(chol) = Cholesky::new(shifted) {
            let x = chol.solve(&rhs);
            if x.iter().all(|v| v.is_finite()) {
                return Matrix::new(g.rows(), r, x.as_slice().to_vec());
            }
        }
        shift = if shift == 0.0 { REGULARIZATION } else { shift * 100.0 };
    }
    Err(Error::Input("normal equations are singular even after regularization".into()))
}

/// Scales every column of `a` to unit norm and returns the norms. Zero
/// columns stay zero with weight zero.
fn normalize(a: &mut Matrix) -> Vec<f64> {
    let (rows, cols) = (a.rows(), a.cols());
    let mut norms = vec![0.0; cols];
    for i in 0..rows {
        for (n, x) in norms.iter_mut().zip(a.row(i)) {
            *n += x * x;
        }
    }
    norms.iter_mut().for_each(|n| *n = n.sqrt());
    let inv: Vec<f64> = norms.iter().map(|&n| if n > 0.0 { 1.0 / n } else { 1.0 }).collect();
    for i in 0..rows {
        a.row_mut(i).iter_mut().zip(&inv).for_each(|(x, s)| *x *= s);
    }
    norms
}

/// `‖Y − M‖²_F` summed element by element.
fn residual_squared(y: &DenseTensor, m: &KruskalTensor) -> f64 {
    let shape = y.shape();
    let rank = m.rank();
    let mut coords = vec![0usize; shape.ndims()];
    let mut prod = vec![0.0; rank];
    let mut total = 0.0;
    for &x in y.data() {
        prod.copy_from_slice(m.lambda());
        for (f, &i) in m.factors().iter().zip(&coords) {
            prod.iter_mut().zip(f.row(i)).for_each(|(p, a)| *p *= a);
        }
        let diff = x - prod.iter().sum::<f64>();
        total += diff * diff;
        for (c, &n) in coords.iter_mut().zip(shape.dims()) {
            *c += 1;
            if *c < n {
                break;
            }
            *c = 0;
        }
    }
    total
}

/// Fits a rank-R CP model to `y`. Returns the model (unit-norm factor
/// columns, weights in λ) and the per-sweep trace.
pub fn cp_als(y: &DenseTensor, cfg: &AlsConfig) -> Result<(KruskalTensor, AlsTrace)> {
    let start = Instant::now();
    cfg.validate()?;
    if !y.is_finite() {
        return Err(Error::Input("tensor has NaN or infinite entries".into()));
    }
    let norm_y2 = y.norm_squared();
    if norm_y2 == 0.0 {
        return Err(Error::Input("cannot fit a tensor that is identically zero".into()));
    }
    let norm_y = norm_y2.sqrt();
    let d = y.ndims();
    let rank = cfg.rank;
    let ones = vec![1.0; rank];

    let mut model = match cfg.init {
        Init::RandomUniform => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            KruskalTensor::random(y.shape().dims(), rank, &mut rng)?
        }
    };
    let mut trace = AlsTrace::default();
    let mut spent = [Duration::ZERO; 4];
    let mut lambda = ones.clone();
    let mut previous_fit: Option<f64> = None;

    for _ in 0..cfg.max_iters {
        model.set_weights(ones.clone())?;
        let mut times = Vec::with_capacity(d);
        let mut last_g = None;
        for k in 0..d {
            let t = Instant::now();
            let mut plan = MttkrpPlan { mode: k, ..cfg.plan.clone() };
            if let Some(w) = cfg.tile_width {
                plan.tile_volume = Some(tile_volume_for_width(y.shape(), k, w)?);
            }
            let g = mttkrp(y, &model, &plan)?.g;
            let elapsed = t.elapsed();
            spent[0] += elapsed;
            times.push(elapsed.as_secs_f64());

            let t = Instant::now();
            let gamma = model.hadamard_gram(k)?;
            let mut a = solve_normal_equations(&gamma, &g)?;
            spent[1] += t.elapsed();

            let t = Instant::now();
            lambda = normalize(&mut a);
            model.set_factor(k, a)?;
            spent[2] += t.elapsed();
            last_g = Some(g);
        }
        trace.mttkrp_seconds.push(times);

        let t = Instant::now();
        model.set_weights(lambda.clone())?;
        let mut g = last_g.expect("at least one mode");
        g.scale_columns(&lambda);
        let inner = model.inner(y, d - 1, &g)?;
        let residual2 = (norm_y2 - 2.0 * inner + model.norm_squared()).max(0.0);
        let mut relative = residual2.sqrt() / norm_y;
        if relative < DIRECT_RESIDUAL_BELOW {
            relative = residual_squared(y, &model).sqrt() / norm_y;
        }
        let fit = 1.0 - relative;
        spent[3] += t.elapsed();

        trace.fits.push(fit);
        if let Some(prev) = previous_fit {
            if (fit - prev).abs() < cfg.tol {
                trace.converged = true;
                break;
            }
        }
        previous_fit = Some(fit);
    }

    trace.lambda = lambda;
    let total = start.elapsed().as_secs_f64();
    let [mttkrp_s, solve_s, normalize_s, fit_s] = spent.map(|d| d.as_secs_f64());
    trace.timing = AlsTiming {
        mttkrp: mttkrp_s,
        solve: solve_s,
        normalize: normalize_s,
        fit: fit_s,
        other: (total - mttkrp_s - solve_s - normalize_s - fit_s).max(0.0),
        total,
    };
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn low_rank(dims: &[usize], rank: usize, seed: u64) -> DenseTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        KruskalTensor::random(dims, rank, &mut rng).unwrap().full().unwrap()
    }

    #[test]
    fn rank_one_is_exact_within_a_few_sweeps() {
        let y = low_rank(&[4, 5, 3], 1, 1);
        let (m, trace) = cp_als(&y, &AlsConfig::new(1).with_seed(7)).unwrap();
        assert!(trace.iterations() <= 5);
        assert!((trace.final_fit().unwrap() - 1.0).abs() < 1e-10);
        let residual = residual_squared(&y, &m).sqrt() / y.norm();
        assert!((residual - (1.0 - trace.final_fit().unwrap())).abs() < 1e-10);
    }

    #[test]
    fn recovers_exact_low_rank_tensor() {
        let y = low_rank(&[5, 5, 5, 5], 2, 4);
        let cfg = AlsConfig::new(2).with_seed(0).with_tol(1e-12);
        let (_, trace) = cp_als(&y, &cfg).unwrap();
        assert!(trace.final_fit().unwrap() >= 1.0 - 1e-6, "{:?}", trace.final_fit());
        for w in trace.fits.windows(2) {
            assert!(w[1] >= w[0] - 1e-10);
        }
    }

    #[test]
    fn solver_regularizes_singular_gram() {
        let gamma = Matrix::filled(2, 2, 1.0);
        let g = Matrix::new(1, 2, vec![1.0, 1.0]).unwrap();
        let a = solve_normal_equations(&gamma, &g).unwrap();
        assert!(a.data().iter().all(|x| x.is_finite()));
        assert!((a.get(0, 0) + a.get(0, 1) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_input() {
        let mut y = low_rank(&[2, 2], 1, 4);
        assert!(cp_als(&y, &AlsConfig::new(0)).is_err());
        assert!(cp_als(&y, &AlsConfig::new(1).with_tol(0.0)).is_err());
        y.data_mut()[0] = f64::NAN;
        assert!(matches!(cp_als(&y, &AlsConfig::new(1)), Err(Error::Input(_))));
        let zero = DenseTensor::zeros(Shape::new(vec![2, 2]).unwrap());
        assert!(matches!(cp_als(&zero, &AlsConfig::new(1)), Err(Error::Input(_))));
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let y = low_rank(&[5, 4, 3], 2, 5);
        let cfg = AlsConfig::new(2).with_seed(11).with_workers(1);
        let (m1, t1) = cp_als(&y, &cfg).unwrap();
        let (m2, t2) = cp_als(&y, &cfg).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(t1.fits, t2.fits);
    }
}
