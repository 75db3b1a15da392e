//! Sequential regression multiple imputation for monotone missingness,
//! ANCOVA of the completed data and Rubin's rules.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::collapse::{collapse, CodingTarget, PatternCoding};
use crate::config::{Arm, N_POST, N_VISITS};
use crate::dgm::TrialDataset;
use crate::error::{Error, Result};
use crate::estimate::{EstimateResult, Method, DEFAULT_MARGIN};
use crate::numcore::{bayes_lm_draw, ols, RngStream};

pub const DEFAULT_IMPUTATIONS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiOptions {
    pub imputations: usize,
    pub margin: f64,
}

impl Default for MiOptions {
    fn default() -> Self {
        Self {
            imputations: DEFAULT_IMPUTATIONS,
            margin: DEFAULT_MARGIN,
        }
    }
}

/// One imputed copy of a trial.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletedDataset {
    /// 1-based imputation index.
    pub imputation_index: usize,
    pub treated: Vec<bool>,
    /// Outcomes at visits 0..=5.
    pub outcomes: Vec<[f64; N_VISITS]>,
    /// Whether the cell at visit 1..=5 was imputed.
    pub imputed: Vec<[bool; N_POST]>,
}

impl CompletedDataset {
    /// Observed values copied from `data`; missing cells hold NaN until filled.
    pub fn from_observed(data: &TrialDataset, imputation_index: usize) -> Self {
        let mut outcomes = Vec::with_capacity(data.n());
        let mut imputed = Vec::with_capacity(data.n());
        for p in &data.patients {
            let mut o = [f64::NAN; N_VISITS];
            o[0] = p.baseline();
            for j in 1..N_VISITS {
                if let Some(v) = p.observed(j) {
                    o[j] = v;
                }
            }
            outcomes.push(o);
            imputed.push(p.miss);
        }
        Self {
            imputation_index,
            treated: data.patients.iter().map(|p| p.arm == Arm::Treatment).collect(),
            outcomes,
            imputed,
        }
    }

    pub fn n(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_complete(&self) -> bool {
        self.outcomes.iter().all(|o| o.iter().all(|v| v.is_finite()))
    }

    /// CSV in the dataset layout plus a per-visit provenance flag.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["imputation", "patient", "arm", "visit", "value", "provenance"])?;
        for (i, o) in self.outcomes.iter().enumerate() {
            for j in 0..N_VISITS {
                let prov = if j > 0 && self.imputed[i][j - 1] { "imputed" } else { "observed" };
                wr.write_record([
                    self.imputation_index.to_string(),
                    (i + 1).to_string(),
                    if self.treated[i] { "T" } else { "C" }.to_string(),
                    j.to_string(),
                    format!("{:.10}", o[j]),
                    prov.to_string(),
                ])?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// ANCOVA of the final-visit change on arm and baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AncovaFit {
    pub estimate: f64,
    pub se: f64,
    pub df: usize,
}

pub fn ancova(c: &CompletedDataset) -> Result<AncovaFit> {
    ancova_rows(c.n(), |i| (c.treated[i], c.outcomes[i][0], c.outcomes[i][N_POST]))
}

/// Same analysis on the full (no-missingness) trial.
pub fn ancova_full(data: &TrialDataset) -> Result<AncovaFit> {
    ancova_rows(data.n(), |i| {
        let p = &data.patients[i];
        (p.arm == Arm::Treatment, p.baseline(), p.y_tilde[N_POST])
    })
}

fn ancova_rows(n: usize, row: impl Fn(usize) -> (bool, f64, f64)) -> Result<AncovaFit> {
    let mut x = DMatrix::zeros(n, 3);
    let mut y = DVector::zeros(n);
    for i in 0..n {
        let (t, b, yj) = row(i);
        if !yj.is_finite() {
            return Err(Error::InvalidParameter(format!("final-visit outcome missing for row {i}")));
        }
        x[(i, 0)] = 1.0;
        x[(i, 1)] = if t { 1.0 } else { 0.0 };
        x[(i, 2)] = b;
        y[i] = yj - b;
    }
    let f = ols(&x, &y)?;
    Ok(AncovaFit {
        estimate: f.coefficients[1],
        se: f.std_error(1),
        df: f.residual_df,
    })
}

/// Rubin's-rules combination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PooledResult {
    pub qbar: f64,
    pub ubar: f64,
    pub b: f64,
    pub total_var: f64,
    pub df: f64,
    pub m: usize,
}

/// Pools `m >= 2` estimates with Barnard-Rubin degrees of freedom for
/// complete-data df `df_com`.
pub fn rubin_pool(estimates: &[f64], variances: &[f64], df_com: f64) -> Result<PooledResult> {
    let m = estimates.len();
    if m < 2 || variances.len() != m {
        return Err(Error::InvalidParameter(format!(
            "pooling needs at least two estimates with variances, got {m} and {}",
            variances.len()
        )));
    }
    let mf = m as f64;
    // centred on the first value so identical inputs pool exactly
    let q0 = estimates[0];
    let qbar = q0 + estimates.iter().map(|q| q - q0).sum::<f64>() / mf;
    let u0 = variances[0];
    let ubar = u0 + variances.iter().map(|u| u - u0).sum::<f64>() / mf;
    let b = estimates.iter().map(|q| (q - qbar).powi(2)).sum::<f64>() / (mf - 1.0);
    let total_var = ubar + (1.0 + 1.0 / mf) * b;
    let lambda = if total_var > 0.0 { (1.0 + 1.0 / mf) * b / total_var } else { 0.0 };
    let nu_obs = (df_com + 1.0) / (df_com + 3.0) * df_com * (1.0 - lambda);
    let df = if lambda == 0.0 {
        nu_obs
    } else {
        let nu_old = (mf - 1.0) / (lambda * lambda);
        nu_old * nu_obs / (nu_old + nu_obs)
    };
    Ok(PooledResult { qbar, ubar, b, total_var, df, m })
}

/// ANCOVA on every completed dataset, pooled.
pub fn analyse_completed(method: Method, completed: &[CompletedDataset], margin: f64) -> Result<EstimateResult> {
    let mut est = Vec::with_capacity(completed.len());
    let mut var = Vec::with_capacity(completed.len());
    let mut df_com = 0;
    for c in completed {
        let a = ancova(c)?;
        est.push(a.estimate);
        var.push(a.se * a.se);
        df_com = a.df;
    }
    let p = rubin_pool(&est, &var, df_com as f64)?;
    EstimateResult::from_t(method, p.qbar, p.total_var.sqrt(), p.df, margin)
}

fn imputation_rngs(stream: &RngStream, m: usize) -> Vec<ChaCha8Rng> {
    (0..m).map(|k| stream.child(k as u64).rng()).collect()
}

/// MI1: regression of each visit on arm, baseline and earlier outcomes.
pub fn impute_mi1(data: &TrialDataset, m: usize, stream: &RngStream) -> Result<Vec<CompletedDataset>> {
    let mut out: Vec<CompletedDataset> = (1..=m).map(|k| CompletedDataset::from_observed(data, k)).collect();
    let mut rngs = imputation_rngs(stream, m);
    let n = data.n();
    for j in 1..N_VISITS {
        let missing: Vec<usize> = (0..n).filter(|&i| data.patients[i].is_missing(j)).collect();
        if missing.is_empty() {
            continue;
        }
        // under monotone missingness the fitting rows are fully observed up
        // to j, so the fit is shared by every imputation
        let rows: Vec<usize> = (0..n).filter(|&i| !data.patients[i].is_missing(j)).collect();
        let p = 2 + j;
        let reference = &out[0];
        let design_row = |c: &CompletedDataset, i: usize, k: usize| match k {
            0 => 1.0,
            1 => c.treated[i] as u8 as f64,
            _ => c.outcomes[i][k - 2],
        };
        for &i in &rows {
            if (1..j).any(|v| data.patients[i].is_missing(v)) {
                return Err(Error::InvalidParameter("MI1 requires monotone missingness".into()));
            }
        }
        let x = DMatrix::from_fn(rows.len(), p, |r, k| design_row(reference, rows[r], k));
        let y = DVector::from_fn(rows.len(), |r, _| reference.outcomes[rows[r]][j]);
        let fit = ols(&x, &y).map_err(|e| Error::InsufficientData(format!("MI1 visit {j}: {e}")))?;
        for (c, rng) in out.iter_mut().zip(rngs.iter_mut()) {
            let (beta, s2) = bayes_lm_draw(&fit, rng)?;
            let sd = s2.sqrt();
            for &i in &missing {
                let mean: f64 = (0..p).map(|k| design_row(c, i, k) * beta[k]).sum();
                let z: f64 = StandardNormal.sample(rng);
                c.outcomes[i][j] = mean + sd * z;
            }
        }
    }
    Ok(out)
}

/// MI2 / MI3: arm-by-level cells, baseline and residuals of earlier visits
/// from the completed-data prediction models.
pub fn impute_retrieved(
    data: &TrialDataset,
    coding: &PatternCoding,
    m: usize,
    stream: &RngStream,
) -> Result<Vec<CompletedDataset>> {
    let n = data.n();
    let mut rngs = imputation_rngs(stream, m);
    // arm-by-level cell index per patient and visit
    let mut cell_of = vec![[0usize; N_POST]; n];
    let mut n_cells = [0usize; N_POST];
    for j in 1..N_VISITS {
        let mut seen: Vec<(Arm, u8)> = Vec::new();
        for (i, p) in data.patients.iter().enumerate() {
            let key = (p.arm, coding.level(j, p.pattern()));
            let idx = match seen.iter().position(|k| *k == key) {
                Some(ix) => ix,
                None => {
                    seen.push(key);
                    seen.len() - 1
                }
            };
            cell_of[i][j - 1] = idx;
        }
        n_cells[j - 1] = seen.len();
    }
    let mut out = Vec::with_capacity(m);
    for (k, rng) in rngs.iter_mut().enumerate() {
        let mut c = CompletedDataset::from_observed(data, k + 1);
        let mut resid = vec![[0.0f64; N_POST]; n];
        for j in 1..N_VISITS {
            let nc = n_cells[j - 1];
            let p = nc + j;
            // columns: cells, baseline, R_1..R_{j-1}
            let fill = |x: &mut DMatrix<f64>, r: usize, i: usize, lagged: &[f64; N_POST]| {
                x[(r, cell_of[i][j - 1])] = 1.0;
                x[(r, nc)] = data.patients[i].baseline();
                for v in 1..j {
                    x[(r, nc + v)] = lagged[v - 1];
                }
            };
            let missing: Vec<usize> = (0..n).filter(|&i| data.patients[i].is_missing(j)).collect();
            if !missing.is_empty() {
                let rows: Vec<usize> = (0..n).filter(|&i| !data.patients[i].is_missing(j)).collect();
                let mut x = DMatrix::zeros(rows.len(), p);
                for (r, &i) in rows.iter().enumerate() {
                    fill(&mut x, r, i, &resid[i]);
                }
                let y = DVector::from_fn(rows.len(), |r, _| c.outcomes[rows[r]][j]);
                let fit = ols(&x, &y).map_err(|e| Error::InsufficientData(format!("imputation model, visit {j}: {e}")))?;
                let (beta, s2) = bayes_lm_draw(&fit, rng)?;
                let sd = s2.sqrt();
                let mut xm = DMatrix::zeros(missing.len(), p);
                for (r, &i) in missing.iter().enumerate() {
                    fill(&mut xm, r, i, &resid[i]);
                }
                let mean = &xm * &beta;
                for (r, &i) in missing.iter().enumerate() {
                    let z: f64 = StandardNormal.sample(rng);
                    c.outcomes[i][j] = mean[r] + sd * z;
                }
            }
            if j < N_POST {
                // completed-data prediction from the imputation regressors, so
                // R_j stays a residual from the marginal cell means
                let mut x = DMatrix::zeros(n, p);
                for i in 0..n {
                    fill(&mut x, i, i, &resid[i]);
                }
                let y = DVector::from_fn(n, |i, _| c.outcomes[i][j]);
                let fit = ols(&x, &y).map_err(|e| Error::InsufficientData(format!("prediction model, visit {j}: {e}")))?;
                let pred = &x * &fit.coefficients;
                for i in 0..n {
                    resid[i][j - 1] = y[i] - pred[i];
                }
            }
        }
        out.push(c);
    }
    Ok(out)
}

/// MI1, MI2 or MI3 estimate with Rubin pooling.
pub fn estimate_mi(data: &TrialDataset, method: Method, opts: &MiOptions, stream: &RngStream) -> Result<EstimateResult> {
    let tag = |e: Error| match e {
        Error::InsufficientData(s) => Error::InsufficientData(format!("{method}: {s}")),
        Error::RankDeficient(s) => Error::RankDeficient(format!("{method}: {s}")),
        other => other,
    };
    match method {
        Method::Mi1 => {
            let c = impute_mi1(data, opts.imputations, stream).map_err(tag)?;
            analyse_completed(method, &c, opts.margin)
        }
        Method::Mi2 | Method::Mi3 => {
            let target = if method == Method::Mi2 { CodingTarget::Status } else { CodingTarget::Pattern };
            let coding = collapse(data, target)?;
            let c = impute_retrieved(data, &coding, opts.imputations, stream).map_err(tag)?;
            Ok(analyse_completed(method, &c, opts.margin)?.with_coding(coding.n_patterns(), coding.label()))
        }
        other => Err(Error::InvalidParameter(format!("{other} is not a sequential MI method"))),
    }
}
