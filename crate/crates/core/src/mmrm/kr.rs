//! Kenward-Roger small-sample adjustment for linear contrasts of the fixed
//! effects, with the covariance parameters taken as the entries of Sigma.

use nalgebra::{DMatrix, DVector};

use super::reml::{evaluate, MmrmFit, N_COV_PARAMS};
use crate::config::N_POST;
use crate::error::{Error, Result};

/// Visit pairs `(i, j)`, `i >= j`, in the same order as the log-Cholesky
/// parameters.
fn param_pairs() -> Vec<(usize, usize)> {
    let mut v = Vec::with_capacity(N_COV_PARAMS);
    for i in 0..N_POST {
        for j in 0..=i {
            v.push((i, j));
        }
    }
    v
}

/// Nonzero entries `(r, s)` of `dSigma / dsigma_k` in type-local positions.
fn local_support(pair: (usize, usize), visits: &[usize]) -> Vec<(usize, usize)> {
    let pos = |v: usize| visits.iter().position(|&x| x == v);
    match (pos(pair.0), pos(pair.1)) {
        (Some(a), Some(b)) if a == b => vec![(a, a)],
        (Some(a), Some(b)) => vec![(a, b), (b, a)],
        _ => Vec::new(),
    }
}

/// `tr(M E_k N E_l)` from the supports of `E_k` and `E_l`.
fn trace_pair(m: &DMatrix<f64>, n: &DMatrix<f64>, sk: &[(usize, usize)], sl: &[(usize, usize)]) -> f64 {
    let mut acc = 0.0;
    for &(r, s) in sk {
        for &(t, u) in sl {
            acc += m[(u, r)] * n[(s, t)];
        }
    }
    acc
}

#[derive(Debug, Clone)]
pub struct KenwardRoger {
    /// Inverse expected information of the covariance parameters.
    pub w: DMatrix<f64>,
    /// Adjusted fixed-effect covariance.
    pub phi_adj: DMatrix<f64>,
    /// `X' V^-1 E_k V^-1 X` for each covariance parameter.
    m: Vec<DMatrix<f64>>,
    phi: DMatrix<f64>,
}

impl KenwardRoger {
    pub fn new(fit: &MmrmFit) -> Result<Self> {
        let design = &fit.design;
        let p = design.n_fixed();
        let ev = evaluate(design, fit.sigma.matrix(), false)?;
        let c = &fit.coef_cov;
        let pairs = param_pairs();
        let q = pairs.len();
        let mut m = vec![DMatrix::zeros(p, p); q];
        let mut t1 = DMatrix::<f64>::zeros(q, q);
        let mut t2 = DMatrix::<f64>::zeros(q, q);
        let mut supports: Vec<Vec<Vec<(usize, usize)>>> = Vec::with_capacity(design.types.len());
        for t in &design.types {
            let w = ev.inverses.get(t.mask);
            let sup: Vec<Vec<(usize, usize)>> = pairs.iter().map(|&pr| local_support(pr, &t.visits)).collect();
            let h = w * design.xcx(t, c) * w;
            for k in 0..q {
                if sup[k].is_empty() {
                    continue;
                }
                let mut ek = DMatrix::zeros(t.dim(), t.dim());
                for &(r, s) in &sup[k] {
                    ek[(r, s)] = 1.0;
                }
                let wew = w * ek * w;
                design.add_xmx(t, &wew, &mut m[k]);
                for l in 0..q {
                    if sup[l].is_empty() {
                        continue;
                    }
                    t1[(k, l)] += t.n * trace_pair(w, w, &sup[k], &sup[l]);
                    t2[(k, l)] += trace_pair(w, &h, &sup[k], &sup[l]) + trace_pair(&h, w, &sup[k], &sup[l]);
                }
            }
            supports.push(sup);
        }
        let cm: Vec<DMatrix<f64>> = m.iter().map(|mk| c * mk).collect();
        let mut info = DMatrix::<f64>::zeros(q, q);
        for k in 0..q {
            for l in k..q {
                let t3 = cm[k].component_mul(&cm[l].transpose()).sum();
                let v = 0.5 * (t1[(k, l)] - t2[(k, l)] + t3);
                info[(k, l)] = v;
                info[(l, k)] = v;
            }
        }
        let w_info = info
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite {
                dim: q,
                pivot: 0,
                value: f64::NAN,
            })?
            .inverse();
        // Lambda = sum_kl W_kl (Q_kl - P_k Phi P_l)
        let mut lambda = DMatrix::zeros(p, p);
        for (ti, t) in design.types.iter().enumerate() {
            let w = ev.inverses.get(t.mask);
            let sup = &supports[ti];
            let mut psi = DMatrix::zeros(t.dim(), t.dim());
            for k in 0..q {
                for &(r, s) in &sup[k] {
                    for l in 0..q {
                        let wkl = w_info[(k, l)];
                        for &(tt, u) in &sup[l] {
                            psi[(r, u)] += wkl * w[(s, tt)];
                        }
                    }
                }
            }
            let wpw = w * psi * w;
            design.add_xmx(t, &wpw, &mut lambda);
        }
        for k in 0..q {
            let mut acc = DMatrix::zeros(p, p);
            for l in 0..q {
                acc += &cm[l] * w_info[(k, l)];
            }
            lambda -= &m[k] * acc;
        }
        let lambda = (&lambda + lambda.transpose()) * 0.5;
        let phi_adj = c + (c * lambda * c) * 2.0;
        let phi_adj = (&phi_adj + phi_adj.transpose()) * 0.5;
        Ok(Self {
            w: w_info,
            phi_adj,
            m,
            phi: c.clone(),
        })
    }

    /// Denominator degrees of freedom for the scalar contrast `l' beta`.
    pub fn df(&self, l: &DVector<f64>) -> f64 {
        let u = &self.phi * l;
        let theta = l.dot(&u);
        let g = DVector::from_iterator(self.m.len(), self.m.iter().map(|mk| u.dot(&(mk * &u))));
        let gwg = g.dot(&(&self.w * &g));
        2.0 * theta * theta / gwg
    }

    pub fn adjusted_variance(&self, l: &DVector<f64>) -> f64 {
        l.dot(&(&self.phi_adj * l))
    }
}
