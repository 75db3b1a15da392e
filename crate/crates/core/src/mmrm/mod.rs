//! Repeated-measures models fitted by REML with a shared unstructured
//! covariance, Kenward-Roger inference and policy standardization.

mod design;
mod kr;
mod policy;
mod reml;

pub use design::{Cell, DesignSpec, MmrmDesign};
pub use kr::KenwardRoger;
pub use policy::{policy_mean, policy_variance, PolicyVariance};
pub use reml::{reml_fit, reml_objective, sigma_to_theta, theta_to_sigma, IterationRecord, MmrmFit, N_COV_PARAMS};

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::collapse::{collapse, CodingTarget};
use crate::config::{Arm, N_POST};
use crate::dgm::TrialDataset;
use crate::error::{Error, Result};
use crate::estimate::{DfMethod, EstimateResult, Method, DEFAULT_MARGIN};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmrmOptions {
    pub df_method: DfMethod,
    pub margin: f64,
}

impl Default for MmrmOptions {
    fn default() -> Self {
        Self {
            df_method: DfMethod::KenwardRoger,
            margin: DEFAULT_MARGIN,
        }
    }
}

/// Builds the design and fits it.
pub fn fit(data: &TrialDataset, spec: &DesignSpec) -> Result<MmrmFit> {
    reml_fit(MmrmDesign::build(data, spec)?)
}

/// Cell means at `visit` (baseline at the grand mean) and their covariance.
pub fn lsmeans(fit: &MmrmFit, visit: usize, cells: &[Cell]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let idx: Vec<usize> = cells
        .iter()
        .map(|c| {
            if c.visit != visit {
                return Err(Error::InvalidParameter(format!("cell {c:?} is not at visit {visit}")));
            }
            fit.design
                .cell_column(*c)
                .ok_or_else(|| Error::InvalidParameter(format!("cell {c:?} not in the model")))
        })
        .collect::<Result<_>>()?;
    let means = DVector::from_iterator(idx.len(), idx.iter().map(|&i| fit.coefficients[i]));
    let cov = DMatrix::from_fn(idx.len(), idx.len(), |a, b| fit.coef_cov[(idx[a], idx[b])]);
    Ok((means, cov))
}

/// Standardized per-arm means and their contrast.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyEstimate {
    /// Indexed by `Arm::index()`.
    pub arm_means: [f64; 2],
    pub arm_variances: [PolicyVariance; 2],
    /// `(level, proportion)` at the final visit, per arm.
    pub proportions: [Vec<(u8, f64)>; 2],
    pub contrast: f64,
    pub se: f64,
    pub df: f64,
}

/// Final-visit policy estimate from a fit, with proportions taken from all
/// randomized subjects.
pub fn policy_estimate(fit: &MmrmFit, data: &TrialDataset, df_method: DfMethod) -> Result<PolicyEstimate> {
    let design = &fit.design;
    // df always come from the KR machinery; the adjusted covariance only
    // under Kenward-Roger
    let kr = KenwardRoger::new(fit)?;
    let phi = match df_method {
        DfMethod::KenwardRoger => &kr.phi_adj,
        DfMethod::Satterthwaite => &fit.coef_cov,
    };
    let p = design.n_fixed();
    let mut arm_means = [0.0; 2];
    let mut arm_variances = [PolicyVariance { proportion: 0.0, mean: 0.0 }; 2];
    let mut proportions: [Vec<(u8, f64)>; 2] = [Vec::new(), Vec::new()];
    let mut contrast_l = DVector::zeros(p);
    for arm in Arm::BOTH {
        let n = data.arm_size(arm) as f64;
        let mut counts: Vec<(u8, usize)> = Vec::new();
        for pt in data.arm_patients(arm) {
            let lv = design.spec.level(N_POST, pt.pattern());
            match counts.iter_mut().find(|c| c.0 == lv) {
                Some(c) => c.1 += 1,
                None => counts.push((lv, 1)),
            }
        }
        counts.sort();
        let theta: Vec<f64> = counts.iter().map(|c| c.1 as f64 / n).collect();
        let cols: Vec<usize> = counts
            .iter()
            .map(|c| {
                design
                    .cell_column(Cell { visit: N_POST, arm, level: c.0 })
                    .ok_or_else(|| Error::RankDeficient(format!("missing final-visit cell for arm {}", arm.label())))
            })
            .collect::<Result<_>>()?;
        let means: Vec<f64> = cols.iter().map(|&c| fit.coefficients[c]).collect();
        let mut w = DVector::zeros(p);
        for (&c, &t) in cols.iter().zip(&theta) {
            w[c] = t;
        }
        let mean_cov = DMatrix::from_fn(cols.len(), cols.len(), |a, b| phi[(cols[a], cols[b])]);
        let k = arm.index();
        arm_means[k] = policy_mean(&means, &theta);
        arm_variances[k] = policy_variance(&means, &mean_cov, &theta, n);
        proportions[k] = counts.iter().zip(&theta).map(|(c, &t)| (c.0, t)).collect();
        let sign = if arm == Arm::Treatment { 1.0 } else { -1.0 };
        contrast_l += w * sign;
    }
    let df = kr.df(&contrast_l);
    let var = arm_variances[0].total() + arm_variances[1].total();
    Ok(PolicyEstimate {
        contrast: arm_means[Arm::Treatment.index()] - arm_means[Arm::Control.index()],
        se: var.sqrt(),
        df,
        arm_means,
        arm_variances,
        proportions,
    })
}

/// Inference for a linear contrast of the fixed effects.
pub fn infer(fit: &MmrmFit, l: &DVector<f64>, method: Method, opts: &MmrmOptions) -> Result<EstimateResult> {
    let kr = KenwardRoger::new(fit)?;
    let est = l.dot(&fit.coefficients);
    let var = match opts.df_method {
        DfMethod::KenwardRoger => kr.adjusted_variance(l),
        DfMethod::Satterthwaite => l.dot(&(&fit.coef_cov * l)),
    };
    EstimateResult::from_t(method, est, var.max(0.0).sqrt(), kr.df(l), opts.margin)
}

/// Final-visit treatment-minus-control contrast of the simple model.
pub fn simple_contrast(fit: &MmrmFit) -> Result<DVector<f64>> {
    let d = &fit.design;
    let col = |arm| {
        d.cell_column(Cell { visit: N_POST, arm, level: 1 })
            .ok_or_else(|| Error::RankDeficient(format!("no final-visit cell for arm {}", arm.label())))
    };
    let mut l = DVector::zeros(d.n_fixed());
    l[col(Arm::Treatment)?] = 1.0;
    l[col(Arm::Control)?] = -1.0;
    Ok(l)
}

/// MMRM1 (simple), MMRM2 (status) or MMRM3 (pattern) treatment effect at the
/// final visit.
pub fn estimate_mmrm(data: &TrialDataset, method: Method, opts: &MmrmOptions) -> Result<EstimateResult> {
    let tag = |e: Error| match e {
        Error::InvalidParameter(s) => Error::InvalidParameter(format!("{method}: {s}")),
        Error::RankDeficient(s) => Error::RankDeficient(format!("{method}: {s}")),
        Error::InsufficientData(s) => Error::InsufficientData(format!("{method}: {s}")),
        other => other,
    };
    let target = match method {
        Method::Mmrm1 => None,
        Method::Mmrm2 => Some(CodingTarget::Status),
        Method::Mmrm3 => Some(CodingTarget::Pattern),
        other => return Err(Error::InvalidParameter(format!("{other} is not an MMRM method"))),
    };
    let Some(target) = target else {
        let f = fit(data, &DesignSpec::Simple).map_err(tag)?;
        return infer(&f, &simple_contrast(&f)?, method, opts);
    };
    let coding = collapse(data, target)?;
    let level = coding.n_patterns();
    let label = coding.label();
    if level == 1 {
        let f = fit(data, &DesignSpec::Simple).map_err(tag)?;
        let r = infer(&f, &simple_contrast(&f)?, method, opts)?;
        return Ok(r.with_coding(level, label));
    }
    let f = fit(data, &DesignSpec::Coded(coding)).map_err(tag)?;
    let pe = policy_estimate(&f, data, opts.df_method).map_err(tag)?;
    Ok(EstimateResult::from_t(method, pe.contrast, pe.se, pe.df, opts.margin)?.with_coding(level, label))
}

/// Plain-text fit diagnostics: iteration trace, final gradient norm and Sigma.
pub fn write_diagnostics<W: Write>(fit: &MmrmFit, mut w: W) -> Result<()> {
    writeln!(w, "iteration,loglik,grad_norm")?;
    for r in &fit.trace {
        writeln!(w, "{},{:.10},{:.3e}", r.iteration, r.loglik, r.grad_norm)?;
    }
    writeln!(w, "# converged={} iterations={} grad_norm={:.3e} reml_loglik={:.10}", fit.converged, fit.n_iterations, fit.grad_norm, fit.reml_loglik)?;
    writeln!(w, "# sigma")?;
    let s = fit.sigma.matrix();
    for i in 0..s.nrows() {
        let row: Vec<String> = (0..s.ncols()).map(|j| format!("{:.8}", s[(i, j)])).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}
