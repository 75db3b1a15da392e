use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::design::MmrmDesign;
use crate::config::N_POST;
use crate::error::{Error, Result};
use crate::numcore::{chol_inverse, chol_logdet, cholesky_checked, CovMatrix};

pub const N_COV_PARAMS: usize = N_POST * (N_POST + 1) / 2;

const MAX_ITER: usize = 200;
const MAX_RESTARTS: usize = 3;
const REL_TOL: f64 = 1e-8;
const GRAD_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub loglik: f64,
    pub grad_norm: f64,
}

/// REML fit of the repeated-measures model.
#[derive(Debug, Clone)]
pub struct MmrmFit {
    pub coefficients: DVector<f64>,
    /// Model-based covariance of the fixed effects, `(X' V^-1 X)^-1`.
    pub coef_cov: DMatrix<f64>,
    pub sigma: CovMatrix,
    pub reml_loglik: f64,
    pub converged: bool,
    pub n_iterations: usize,
    pub grad_norm: f64,
    pub trace: Vec<IterationRecord>,
    pub(crate) design: MmrmDesign,
}

impl MmrmFit {
    pub fn design(&self) -> &MmrmDesign {
        &self.design
    }
}

/// Cached inverse and log-determinant of `sigma` restricted to each
/// observed-visit mask.
pub(crate) struct MaskInverses {
    inv: Vec<Option<(DMatrix<f64>, f64)>>,
}

impl MaskInverses {
    pub fn new(design: &MmrmDesign, sigma: &DMatrix<f64>) -> Result<Self> {
        let mut inv: Vec<Option<(DMatrix<f64>, f64)>> = vec![None; 1 << N_POST];
        for t in &design.types {
            if inv[t.mask].is_some() {
                continue;
            }
            let k = t.dim();
            let sub = DMatrix::from_fn(k, k, |a, b| sigma[(t.visits[a], t.visits[b])]);
            let l = cholesky_checked(&sub)?;
            inv[t.mask] = Some((chol_inverse(&l), chol_logdet(&l)));
        }
        Ok(Self { inv })
    }

    pub fn get(&self, mask: usize) -> &DMatrix<f64> {
        &self.inv[mask].as_ref().expect("mask cached").0
    }

    fn logdet(&self, mask: usize) -> f64 {
        self.inv[mask].as_ref().expect("mask cached").1
    }
}

/// GLS solution and REML log-likelihood at a fixed covariance.
pub(crate) struct Evaluation {
    pub loglik: f64,
    pub beta: DVector<f64>,
    pub c: DMatrix<f64>,
    /// `d loglik / d Sigma` as a symmetric matrix (`dl = tr(G dSigma)`).
    pub grad_sigma: Option<DMatrix<f64>>,
    pub inverses: MaskInverses,
}

pub(crate) fn evaluate(design: &MmrmDesign, sigma: &DMatrix<f64>, want_grad: bool) -> Result<Evaluation> {
    let p = design.n_fixed();
    let inverses = MaskInverses::new(design, sigma)?;
    let mut a = DMatrix::zeros(p, p);
    let mut xy = DVector::zeros(p);
    let mut ld_v = 0.0;
    let mut ywy = 0.0;
    for t in &design.types {
        let w = inverses.get(t.mask);
        design.add_xmx(t, w, &mut a);
        let t1 = w * &t.sy;
        let t2 = w * &t.sby;
        for k in 0..t.dim() {
            xy[t.cells[k]] += t1[k];
            xy[design.slope_column(t.visits[k])] += t2[k];
        }
        ld_v += t.n * inverses.logdet(t.mask);
        ywy += w.component_mul(&t.syy).sum();
    }
    let la = cholesky_checked(&a).map_err(|_| {
        Error::RankDeficient("fixed-effect information matrix is singular".into())
    })?;
    let c = chol_inverse(&la);
    let beta = &c * &xy;
    let rvr = ywy - xy.dot(&beta);
    let n_minus_p = (design.n_obs - p) as f64;
    let loglik = -0.5 * (ld_v + chol_logdet(&la) + rvr + n_minus_p * (2.0 * std::f64::consts::PI).ln());
    let grad_sigma = want_grad.then(|| {
        let mut g = DMatrix::zeros(N_POST, N_POST);
        for t in &design.types {
            let w = inverses.get(t.mask);
            let inner = design.residual_ss(t, &beta) + design.xcx(t, &c);
            let m = w * t.n - w * inner * w;
            for (a_, &va) in t.visits.iter().enumerate() {
                for (b_, &vb) in t.visits.iter().enumerate() {
                    g[(va, vb)] += -0.5 * m[(a_, b_)];
                }
            }
        }
        g
    });
    Ok(Evaluation {
        loglik,
        beta,
        c,
        grad_sigma,
        inverses,
    })
}

/// Log-Cholesky parameters: row-major lower triangle with logged diagonal.
pub fn sigma_to_theta(sigma: &DMatrix<f64>) -> Result<DVector<f64>> {
    let l = cholesky_checked(sigma)?;
    let mut th = DVector::zeros(N_COV_PARAMS);
    let mut k = 0;
    for i in 0..N_POST {
        for j in 0..=i {
            th[k] = if i == j { l[(i, i)].ln() } else { l[(i, j)] };
            k += 1;
        }
    }
    Ok(th)
}

fn theta_to_chol(th: &DVector<f64>) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(N_POST, N_POST);
    let mut k = 0;
    for i in 0..N_POST {
        for j in 0..=i {
            l[(i, j)] = if i == j { th[k].exp() } else { th[k] };
            k += 1;
        }
    }
    l
}

pub fn theta_to_sigma(th: &DVector<f64>) -> DMatrix<f64> {
    let l = theta_to_chol(th);
    let s = &l * l.transpose();
    (&s + s.transpose()) * 0.5
}

/// REML log-likelihood and its gradient in the log-Cholesky parameters.
pub fn reml_objective(design: &MmrmDesign, theta: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
    let l = theta_to_chol(theta);
    let sigma = theta_to_sigma(theta);
    let ev = evaluate(design, &sigma, true)?;
    let g = ev.grad_sigma.expect("gradient requested");
    let dl = (&g * &l) * 2.0;
    let mut grad = DVector::zeros(N_COV_PARAMS);
    let mut k = 0;
    for i in 0..N_POST {
        for j in 0..=i {
            grad[k] = if i == j { dl[(i, i)] * l[(i, i)] } else { dl[(i, j)] };
            k += 1;
        }
    }
    Ok((ev.loglik, grad))
}

/// Complete-pairs covariance of per-visit least-squares residuals.
pub(crate) fn starting_sigma(design: &MmrmDesign) -> DMatrix<f64> {
    let eye = DMatrix::identity(N_POST, N_POST);
    let Ok(ev) = evaluate(design, &eye, false) else {
        return eye;
    };
    let mut ss = DMatrix::<f64>::zeros(N_POST, N_POST);
    for t in &design.types {
        let r = design.residual_ss(t, &ev.beta);
        for (a, &va) in t.visits.iter().enumerate() {
            for (b, &vb) in t.visits.iter().enumerate() {
                ss[(va, vb)] += r[(a, b)];
            }
        }
    }
    let counts = design.pair_counts();
    let s = DMatrix::from_fn(N_POST, N_POST, |i, j| ss[(i, j)] / (counts[(i, j)] - 1.0).max(1.0));
    if cholesky_checked(&s).is_ok() {
        s
    } else {
        DMatrix::from_diagonal(&s.diagonal().map(|v| v.max(1e-3)))
    }
}

struct BfgsOutcome {
    theta: DVector<f64>,
    loglik: f64,
    grad_norm: f64,
    converged: bool,
    iterations: usize,
}

fn bfgs(design: &MmrmDesign, start: DVector<f64>, trace: &mut Vec<IterationRecord>, it0: usize) -> Result<BfgsOutcome> {
    let n = start.len();
    let mut x = start;
    let (mut f, mut g) = reml_objective(design, &x)?;
    // minimise -loglik
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut first = true;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITER {
        let gnorm = g.norm();
        trace.push(IterationRecord { iteration: it0 + iterations, loglik: f, grad_norm: gnorm });
        if gnorm <= GRAD_TOL {
            converged = true;
            break;
        }
        let mut d = &h * &g;
        if d.dot(&g) <= 0.0 {
            h = DMatrix::identity(n, n);
            d = g.clone();
        }
        if first {
            let scale = d.amax();
            if scale > 0.5 {
                d *= 0.5 / scale;
            }
        }
        let slope = d.dot(&g);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let xn = &x + &d * step;
            if let Ok((fnew, gnew)) = reml_objective(design, &xn) {
                // near the optimum the objective change drops below rounding
                // noise; accept a step that reduces the gradient instead
                let flat = (fnew - f).abs() <= 1e-10 * f.abs().max(1.0) && gnew.norm() < g.norm();
                if fnew.is_finite() && (fnew >= f + 1e-4 * step * slope || flat) {
                    accepted = Some((xn, fnew, gnew));
                    break;
                }
            }
            step *= 0.5;
        }
        iterations += 1;
        let Some((xn, fnew, gnew)) = accepted else {
            break;
        };
        let s = &xn - &x;
        // gradient of the minimised function is -g
        let y = &g - &gnew;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if first {
                h *= sy / y.dot(&y);
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            h += (&s * s.transpose()) * (rho * rho * yhy + rho) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
            first = false;
        }
        let rel = (fnew - f).abs() / f.abs().max(1.0);
        x = xn;
        f = fnew;
        g = gnew;
        if rel <= REL_TOL && g.norm() <= GRAD_TOL {
            converged = true;
            trace.push(IterationRecord { iteration: it0 + iterations, loglik: f, grad_norm: g.norm() });
            break;
        }
    }
    Ok(BfgsOutcome {
        grad_norm: g.norm(),
        theta: x,
        loglik: f,
        converged,
        iterations,
    })
}

/// Restricted maximum-likelihood fit with a shared unstructured covariance.
pub fn reml_fit(design: MmrmDesign) -> Result<MmrmFit> {
    let start = starting_sigma(&design);
    let mut theta = sigma_to_theta(&start)?;
    let mut trace = Vec::new();
    let mut total = 0;
    let mut best: Option<BfgsOutcome> = None;
    let mut jitter = ChaCha8Rng::seed_from_u64(0x5eed);
    for attempt in 0..=MAX_RESTARTS {
        let out = bfgs(&design, theta.clone(), &mut trace, total)?;
        total += out.iterations;
        let done = out.converged;
        if best.as_ref().map_or(true, |b| out.loglik > b.loglik) {
            best = Some(out);
        }
        if done {
            break;
        }
        if attempt < MAX_RESTARTS {
            // restart from the best point with a perturbed log-diagonal
            theta = best.as_ref().unwrap().theta.clone();
            let mut k = 0;
            for i in 0..N_POST {
                for j in 0..=i {
                    if i == j {
                        theta[k] += 0.05 * (jitter.gen::<f64>() - 0.5);
                    }
                    k += 1;
                }
            }
        }
    }
    let best = best.expect("at least one attempt");
    if !best.converged {
        return Err(Error::NonConvergence {
            iterations: total,
            loglik: best.loglik,
            grad_norm: best.grad_norm,
        });
    }
    let sigma_m = theta_to_sigma(&best.theta);
    let ev = evaluate(&design, &sigma_m, false)?;
    Ok(MmrmFit {
        coefficients: ev.beta,
        coef_cov: ev.c,
        sigma: CovMatrix::new(sigma_m)?,
        reml_loglik: ev.loglik,
        converged: true,
        n_iterations: total,
        grad_norm: best.grad_norm,
        trace,
        design,
    })
}
