//! Reference-based imputation (jump to reference, copy increments in
//! reference, copy reference) from a Bayesian repeated-measures model
//! fitted to on-treatment data.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::config::{Arm, N_POST};
use crate::dgm::TrialDataset;
use crate::error::{Error, Result};
use crate::estimate::{EstimateResult, Method};
use crate::mi::{analyse_completed, CompletedDataset, MiOptions};
use crate::numcore::{chol_inverse, cholesky_checked, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Assumption {
    J2r,
    Cir,
    Cr,
}

impl Assumption {
    pub const ALL: [Assumption; 3] = [Assumption::J2r, Assumption::Cir, Assumption::Cr];

    pub fn method(self) -> Method {
        match self {
            Assumption::J2r => Method::J2r,
            Assumption::Cir => Method::Cir,
            Assumption::Cr => Method::Cr,
        }
    }

    pub fn from_method(m: Method) -> Option<Self> {
        match m {
            Method::J2r => Some(Assumption::J2r),
            Method::Cir => Some(Assumption::Cir),
            Method::Cr => Some(Assumption::Cr),
            _ => None,
        }
    }
}

/// Sampler settings: burn-in iterations and thinning interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GibbsSettings {
    pub burn_in: usize,
    pub thin: usize,
}

impl Default for GibbsSettings {
    fn default() -> Self {
        Self { burn_in: 200, thin: 2 }
    }
}

/// Lag-1 autocorrelation of retained draws above which mixing is flagged.
pub const MIXING_WARN_THRESHOLD: f64 = 0.3;

/// Flag level for `n` retained draws: the fixed threshold, raised to three
/// null standard errors (3/sqrt(n)) when the chain is too short to tell.
pub fn mixing_warn_level(n: usize) -> f64 {
    MIXING_WARN_THRESHOLD.max(3.0 / (n as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraw {
    /// Visit means at the grand-mean baseline, indexed by `Arm::index()`.
    pub cell_means: [[f64; N_POST]; 2],
    pub baseline_slopes: [f64; N_POST],
    pub sigma: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct BayesianMmrm {
    pub draws: Vec<PosteriorDraw>,
    pub baseline_mean: f64,
    /// Lag-1 autocorrelation of the retained treatment-arm final-visit mean.
    pub lag1_autocorrelation: f64,
}

impl BayesianMmrm {
    pub fn mixing_ok(&self) -> bool {
        self.lag1_autocorrelation <= mixing_warn_level(self.draws.len())
    }
}

struct PreIeRow {
    x: [f64; 3],
    y: [f64; N_POST],
    /// Number of leading observed visits (pre-IE data are monotone).
    n_obs: usize,
}

/// Conditional law of visits `k..5` given visits `1..k` under `sigma`.
struct Conditioner {
    k: usize,
    /// `Sigma_mo Sigma_oo^{-1}`
    gain: DMatrix<f64>,
    chol: DMatrix<f64>,
}

impl Conditioner {
    fn new(sigma: &DMatrix<f64>, k: usize) -> Result<Self> {
        let m = N_POST - k;
        let s_mm = sigma.view((k, k), (m, m)).into_owned();
        if k == 0 {
            return Ok(Self { k, gain: DMatrix::zeros(m, 0), chol: cholesky_checked(&s_mm)? });
        }
        let s_oo = sigma.view((0, 0), (k, k)).into_owned();
        let s_mo = sigma.view((k, 0), (m, k)).into_owned();
        let inv = chol_inverse(&cholesky_checked(&s_oo)?);
        let gain = &s_mo * inv;
        let cov = &s_mm - &gain * s_mo.transpose();
        let cov = (&cov + cov.transpose()) * 0.5;
        Ok(Self { k, gain, chol: cholesky_checked(&cov)? })
    }

    /// Fills `y[k..]` from the conditional given `y[..k]` and the mean vector.
    fn sample<R: Rng + ?Sized>(&self, mean: &[f64; N_POST], y: &mut [f64; N_POST], rng: &mut R) {
        let mut z = [0.0; N_POST];
        for v in z.iter_mut().take(N_POST - self.k) {
            *v = rng.sample(StandardNormal);
        }
        self.sample_with(mean, y, &z);
    }

    /// As `sample`, with the standard normal deviates supplied.
    fn sample_with(&self, mean: &[f64; N_POST], y: &mut [f64; N_POST], z: &[f64; N_POST]) {
        let m = N_POST - self.k;
        for a in 0..m {
            let mut v = mean[self.k + a];
            for b in 0..self.k {
                v += self.gain[(a, b)] * (y[b] - mean[b]);
            }
            for b in 0..=a {
                v += self.chol[(a, b)] * z[b];
            }
            y[self.k + a] = v;
        }
    }
}

/// Inverse-Wishart draw with scale `s` and `df` degrees of freedom
/// (Bartlett decomposition of the Wishart precision).
fn inverse_wishart<R: Rng + ?Sized>(s: &DMatrix<f64>, df: f64, rng: &mut R) -> Result<DMatrix<f64>> {
    let q = s.nrows();
    let l = cholesky_checked(s)?;
    let mut a = DMatrix::zeros(q, q);
    for i in 0..q {
        a[(i, i)] = ChiSquared::new(df - i as f64).map_err(|e| Error::InvalidParameter(e.to_string()))?.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let a_inv = a
        .solve_lower_triangular(&DMatrix::identity(q, q))
        .ok_or_else(|| Error::NotPositiveDefinite { dim: q, pivot: 0, value: 0.0 })?;
    let t = &l * a_inv.transpose();
    let sigma = &t * t.transpose();
    Ok((&sigma + sigma.transpose()) * 0.5)
}

/// Gibbs sampler with data augmentation for the on-treatment model
/// `Y_j = mu_{arm,j} + beta_j (baseline - mean) + e`, `e ~ N(0, Sigma)`,
/// under the prior `p(mu, beta, Sigma) ∝ |Sigma|^{-(q+1)/2}`.
pub fn fit_bayesian_mmrm(
    data: &TrialDataset,
    n_draws: usize,
    settings: GibbsSettings,
    rng: &mut ChaCha8Rng,
) -> Result<BayesianMmrm> {
    let bm = data.mean_baseline();
    let mut rows: Vec<PreIeRow> = Vec::with_capacity(data.n());
    for p in &data.patients {
        let limit = p.ie_visit.map_or(N_POST, |t| t - 1);
        let n_obs = (1..=limit).take_while(|&j| !p.is_missing(j)).count();
        if n_obs == 0 {
            continue;
        }
        let mut y = [0.0; N_POST];
        for j in 0..n_obs {
            y[j] = p.y_tilde[j + 1];
        }
        let t = (p.arm == Arm::Treatment) as u8 as f64;
        rows.push(PreIeRow { x: [1.0 - t, t, p.baseline() - bm], y, n_obs });
    }
    let n = rows.len();
    if n < 3 + N_POST + 1 {
        return Err(Error::InsufficientData(format!("{n} subjects with on-treatment data")));
    }
    for k in 1..=N_POST {
        for arm_col in 0..2 {
            if !rows.iter().any(|r| r.n_obs >= k && r.x[arm_col] == 1.0) {
                return Err(Error::InsufficientData(format!("no on-treatment outcome at visit {k} in one arm")));
            }
        }
    }
    let x = DMatrix::from_fn(n, 3, |i, k| rows[i].x[k]);
    let xtx_inv = chol_inverse(&cholesky_checked(&x.tr_mul(&x))?);
    let xtx_inv_chol = cholesky_checked(&xtx_inv)?;
    // initial fill: visit means of observed values
    let mut fill = [0.0; N_POST];
    for (j, f) in fill.iter_mut().enumerate() {
        let obs: Vec<f64> = rows.iter().filter(|r| r.n_obs > j).map(|r| r.y[j]).collect();
        *f = obs.iter().sum::<f64>() / obs.len() as f64;
    }
    for r in rows.iter_mut() {
        for j in r.n_obs..N_POST {
            r.y[j] = fill[j];
        }
    }
    let df = (n - 3) as f64;
    let total = settings.burn_in + n_draws * settings.thin.max(1);
    let mut draws = Vec::with_capacity(n_draws);
    let mut conds: Vec<Option<Conditioner>> = (0..N_POST).map(|_| None).collect();
    for it in 1..=total {
        let y = DMatrix::from_fn(n, N_POST, |i, j| rows[i].y[j]);
        let bhat = &xtx_inv * x.tr_mul(&y);
        let resid = &y - &x * &bhat;
        let s = resid.tr_mul(&resid);
        let sigma = inverse_wishart(&((&s + s.transpose()) * 0.5), df, rng)?;
        let ls = cholesky_checked(&sigma)?;
        let z = DMatrix::from_fn(3, N_POST, |_, _| rng.sample::<f64, _>(StandardNormal));
        let b = &bhat + &xtx_inv_chol * z * ls.transpose();
        // augment the post-IE (and withdrawn) on-treatment cells
        for c in conds.iter_mut() {
            *c = None;
        }
        for r in rows.iter_mut() {
            if r.n_obs == N_POST {
                continue;
            }
            if conds[r.n_obs].is_none() {
                conds[r.n_obs] = Some(Conditioner::new(&sigma, r.n_obs)?);
            }
            let mut mean = [0.0; N_POST];
            for (j, m) in mean.iter_mut().enumerate() {
                *m = r.x[0] * b[(0, j)] + r.x[1] * b[(1, j)] + r.x[2] * b[(2, j)];
            }
            conds[r.n_obs].as_ref().unwrap().sample(&mean, &mut r.y, rng);
        }
        if it > settings.burn_in && (it - settings.burn_in) % settings.thin.max(1) == 0 {
            draws.push(PosteriorDraw {
                cell_means: [
                    std::array::from_fn(|j| b[(0, j)]),
                    std::array::from_fn(|j| b[(1, j)]),
                ],
                baseline_slopes: std::array::from_fn(|j| b[(2, j)]),
                sigma,
            });
        }
    }
    let trace: Vec<f64> = draws.iter().map(|d| d.cell_means[Arm::Treatment.index()][N_POST - 1]).collect();
    let lag1 = lag1_autocorrelation(&trace);
    if lag1 > mixing_warn_level(trace.len()) {
        log::warn!("Bayesian MMRM retained draws have lag-1 autocorrelation {lag1:.3}");
    }
    Ok(BayesianMmrm { draws, baseline_mean: bm, lag1_autocorrelation: lag1 })
}

pub fn lag1_autocorrelation(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 3 {
        return 0.0;
    }
    let m = x.iter().sum::<f64>() / n as f64;
    let v: f64 = x.iter().map(|a| (a - m).powi(2)).sum();
    if v == 0.0 {
        return 0.0;
    }
    x.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum::<f64>() / v
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginalImputationDistribution {
    pub mean: [f64; N_POST],
    pub cov: DMatrix<f64>,
}

/// Patient-level joint distribution of visits 1..=5 under an assumption.
/// `tau` is the first visit affected by the intercurrent event; the
/// reference arm is control.
pub fn build_marginal(
    assumption: Assumption,
    arm: Arm,
    tau: Option<usize>,
    draw: &PosteriorDraw,
    baseline_centred: f64,
) -> MarginalImputationDistribution {
    let own = &draw.cell_means[arm.index()];
    let reference = &draw.cell_means[Arm::Control.index()];
    let mut mean = [0.0; N_POST];
    for j in 1..=N_POST {
        let k = j - 1;
        let m = match tau {
            None => own[k],
            // the reference arm keeps its own profile under every assumption
            Some(_) if arm == Arm::Control => own[k],
            Some(t) => match assumption {
                Assumption::Cr => reference[k],
                _ if j < t => own[k],
                Assumption::J2r => reference[k],
                Assumption::Cir if t == 1 => reference[k],
                Assumption::Cir => own[t - 2] + reference[k] - reference[t - 2],
            },
        };
        mean[k] = m + draw.baseline_slopes[k] * baseline_centred;
    }
    MarginalImputationDistribution { mean, cov: draw.sigma.clone() }
}

/// Imputations for all three assumptions from shared draws and shared
/// normal deviates. Returns completed datasets indexed like `Assumption::ALL`.
pub fn impute_rbi_all(
    data: &TrialDataset,
    model: &BayesianMmrm,
    stream: &RngStream,
) -> Result<[Vec<CompletedDataset>; 3]> {
    let m = model.draws.len();
    let mut out: [Vec<CompletedDataset>; 3] = Default::default();
    for (k, draw) in model.draws.iter().enumerate() {
        let mut rng = stream.child(k as u64).rng();
        let mut conds: Vec<Option<Conditioner>> = (0..N_POST).map(|_| None).collect();
        let mut completed: Vec<CompletedDataset> =
            (0..3).map(|_| CompletedDataset::from_observed(data, k + 1)).collect();
        for (i, p) in data.patients.iter().enumerate() {
            let n_obs = p.n_observed();
            if n_obs == N_POST {
                continue;
            }
            if (n_obs + 1..=N_POST).any(|j| !p.is_missing(j)) {
                return Err(Error::InvalidParameter("reference-based imputation requires monotone missingness".into()));
            }
            if conds[n_obs].is_none() {
                conds[n_obs] = Some(Conditioner::new(&draw.sigma, n_obs)?);
            }
            let cond = conds[n_obs].as_ref().unwrap();
            let z: [f64; N_POST] = std::array::from_fn(|_| rng.sample(StandardNormal));
            for (a, assumption) in Assumption::ALL.iter().enumerate() {
                let marg = build_marginal(*assumption, p.arm, p.ie_visit, draw, p.baseline() - model.baseline_mean);
                let mut y: [f64; N_POST] = std::array::from_fn(|j| p.y_tilde[j + 1]);
                cond.sample_with(&marg.mean, &mut y, &z);
                for j in n_obs..N_POST {
                    completed[a].outcomes[i][j + 1] = y[j];
                }
            }
        }
        for (a, c) in completed.into_iter().enumerate() {
            out[a].push(c);
        }
    }
    debug_assert!(out.iter().all(|v| v.len() == m));
    Ok(out)
}

/// Settings for one reference-based analysis.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RbiOptions {
    pub mi: MiOptions,
    pub gibbs: GibbsSettings,
}

/// J2R, CIR and CR estimates sharing one posterior sample.
pub fn estimate_rbi_all(data: &TrialDataset, opts: &RbiOptions, stream: &RngStream) -> Result<[EstimateResult; 3]> {
    let mut rng = stream.child(0).rng();
    let model = fit_bayesian_mmrm(data, opts.mi.imputations, opts.gibbs, &mut rng)?;
    let completed = impute_rbi_all(data, &model, &stream.child(1))?;
    let r: Vec<EstimateResult> = Assumption::ALL
        .iter()
        .zip(completed.iter())
        .map(|(a, c)| analyse_completed(a.method(), c, opts.mi.margin))
        .collect::<Result<_>>()?;
    Ok([r[0].clone(), r[1].clone(), r[2].clone()])
}

pub fn estimate_rbi(data: &TrialDataset, assumption: Assumption, opts: &RbiOptions, stream: &RngStream) -> Result<EstimateResult> {
    let all = estimate_rbi_all(data, opts, stream)?;
    let k = Assumption::ALL.iter().position(|a| *a == assumption).unwrap();
    Ok(all[k].clone())
}
