//! Random-projection checks for the hidden-width compression `R`.
//!
//! For `A` (d_p × d), `B` (d × d_p) and `R` (d × d_in) with i.i.d.
//! `N(0, 1/d_in)` entries, the relative gap `‖A R Rᵀ B − A B‖_F / ‖A B‖_F`
//! should exceed ε with probability at most `2 d_p² exp(−(ε²−ε³) d_in / 4)`.
//!
//! `log` in the minimum-dimension rule is the natural logarithm.

use rayon::prelude::*;

use crate::attention::{dynamic_projections, AttentionConfig, DbaParams};
use crate::error::{DbaError, Result};
use crate::rng::{split_seed, Rng};
use crate::tensor::Tensor;

pub const MIN_TRIALS: usize = 100;

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(DbaError::Parameter(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    Ok(())
}

/// `ceil(10 ln(d_p) / (ε² − ε³))`.
pub fn jl_minimum_dim(d_p: usize, epsilon: f64) -> Result<usize> {
    check_epsilon(epsilon)?;
    if d_p < 2 {
        return Err(DbaError::Parameter(format!("d_p must be >= 2, got {d_p}")));
    }
    let e = epsilon * epsilon - epsilon.powi(3);
    Ok((10.0 * (d_p as f64).ln() / e).ceil() as usize)
}

/// Failure probability `2 d_p² exp(−(ε²−ε³) d_in / 4)`, clamped to [0, 1].
pub fn jl_bound(d_p: usize, d_in: usize, epsilon: f64) -> f64 {
    let e = epsilon * epsilon - epsilon.powi(3);
    let dp = d_p as f64;
    (2.0 * dp * dp * (-e * d_in as f64 / 4.0).exp()).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct JlTrialReport {
    pub d: usize,
    pub d_p: usize,
    pub d_in: usize,
    pub epsilon: f64,
    pub trials: usize,
    pub failures: usize,
    pub bound: f64,
    /// The bound clamped to 1 and says nothing.
    pub vacuous: bool,
}

impl JlTrialReport {
    fn new(d: usize, d_p: usize, d_in: usize, epsilon: f64, trials: usize, failures: usize) -> Self {
        let bound = jl_bound(d_p, d_in, epsilon);
        Self {
            d,
            d_p,
            d_in,
            epsilon,
            trials,
            failures,
            bound,
            vacuous: bound >= 1.0,
        }
    }

    pub fn rate(&self) -> f64 {
        self.failures as f64 / self.trials as f64
    }

    /// 3σ binomial noise plus 0.01.
    pub fn allowance(&self) -> f64 {
        self.bound + 3.0 * (self.bound * (1.0 - self.bound) / self.trials as f64).sqrt() + 0.01
    }

    pub fn pass(&self) -> bool {
        self.rate() <= self.allowance()
    }
}

/// How `R` is drawn per trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Projection {
    /// i.i.d. `N(0, 1/d_in)`.
    Gaussian,
    /// `R = I`; needs `d_in == d`.
    Identity,
}

fn relative_gap(a: &Tensor, b: &Tensor, r: &Tensor) -> Result<f64> {
    let exact = a.matmul(b)?;
    let ar = a.matmul(r)?;
    let rb = r.transpose().matmul(b)?;
    let approx = ar.matmul(&rb)?;
    Ok(approx.sub(&exact)?.frobenius_norm() / exact.frobenius_norm())
}

fn draw_r(rng: &mut Rng, d: usize, d_in: usize, projection: Projection) -> Result<Tensor> {
    match projection {
        Projection::Gaussian => rng.gaussian(d, d_in, 1.0 / d_in as f64),
        Projection::Identity => Ok(Tensor::eye(d)),
    }
}

pub fn jl_monte_carlo(d: usize, d_p: usize, d_in: usize, epsilon: f64, trials: usize, seed: u64) -> Result<JlTrialReport> {
    jl_monte_carlo_with(d, d_p, d_in, epsilon, trials, seed, Projection::Gaussian)
}

/// Trials fan out over threads; trial `t` draws from `split_seed(seed, t)`,
/// so the result does not depend on scheduling.
pub fn jl_monte_carlo_with(
    d: usize,
    d_p: usize,
    d_in: usize,
    epsilon: f64,
    trials: usize,
    seed: u64,
    projection: Projection,
) -> Result<JlTrialReport> {
    check_epsilon(epsilon)?;
    if trials < MIN_TRIALS {
        return Err(DbaError::Parameter(format!("need at least {MIN_TRIALS} trials, got {trials}")));
    }
    if d == 0 || d_p == 0 || d_in == 0 {
        return Err(DbaError::Parameter("d, d_p and d_in must be >= 1".into()));
    }
    if projection == Projection::Identity && d_in != d {
        return Err(DbaError::Parameter(format!("identity projection needs d_in == d, got {d_in} vs {d}")));
    }
    let outcomes: Vec<Result<bool>> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = Rng::new(split_seed(seed, t));
            let a = rng.gaussian(d_p, d, 1.0)?;
            let b = rng.gaussian(d, d_p, 1.0)?;
            let r = draw_r(&mut rng, d, d_in, projection)?;
            Ok(relative_gap(&a, &b, &r)? > epsilon)
        })
        .collect();
    let mut failures = 0;
    for o in outcomes {
        failures += o? as usize;
    }
    Ok(JlTrialReport::new(d, d_p, d_in, epsilon, trials, failures))
}

/// Same check on the scores of an actual layer: `A = W_r Q_h`, `B = K_hᵀ W_cᵀ`
/// from head 0 of a randomly initialized layer on a random input, with `R`
/// (d_h × d_in) resampled per trial.
pub fn score_approximation_trials(
    cfg: &AttentionConfig,
    epsilon: f64,
    trials: usize,
    seed: u64,
) -> Result<JlTrialReport> {
    check_epsilon(epsilon)?;
    if trials < MIN_TRIALS {
        return Err(DbaError::Parameter(format!("need at least {MIN_TRIALS} trials, got {trials}")));
    }
    cfg.validate()?;
    let mut rng = Rng::new(seed);
    let params = DbaParams::init(cfg, &mut rng)?;
    let x = rng.gaussian(cfg.n, cfg.d, 1.0)?;
    let dh = cfg.head_dim();
    let q = x.matmul(&params.wq)?.slice_cols(0, dh)?;
    let k = x.matmul(&params.wk)?.slice_cols(0, dh)?;
    let z = params.z.slice_cols(0, dh)?;
    let (w_r, w_c) = dynamic_projections(&z, &q, &k)?;
    let a = w_r.matmul(&q)?;
    let b = w_c.matmul(&k)?.transpose();
    let d_in = cfg.d_in;
    let failures: Result<Vec<bool>> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = Rng::child(seed, t + 1);
            let r = rng.gaussian(dh, d_in, 1.0 / d_in as f64)?;
            Ok(relative_gap(&a, &b, &r)? > epsilon)
        })
        .collect();
    let failures = failures?.into_iter().filter(|&f| f).count();
    Ok(JlTrialReport::new(dh, cfg.d_p, d_in, epsilon, trials, failures))
}
