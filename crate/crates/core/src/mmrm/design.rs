use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::collapse::PatternCoding;
use crate::config::{Arm, N_POST};
use crate::dgm::TrialDataset;
use crate::error::{Error, Result};

/// Fixed-effect structure of the repeated-measures model.
#[derive(Debug, Clone, PartialEq)]
pub enum DesignSpec {
    /// Visit by arm.
    Simple,
    /// Visit by arm by IE level, levels from a status or pattern coding.
    Coded(PatternCoding),
}

impl DesignSpec {
    pub fn level(&self, visit: usize, pattern: usize) -> u8 {
        match self {
            DesignSpec::Simple => 1,
            DesignSpec::Coded(c) => c.level(visit, pattern),
        }
    }
}

/// One cell-mean column: visit (1..=5), arm and model level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub visit: usize,
    pub arm: Arm,
    pub level: u8,
}

/// Subjects sharing the same observed visits and cell columns, reduced to
/// sufficient statistics. Each observation row is `e_cell + b * e_slope(visit)`
/// with `b` the centred baseline.
#[derive(Debug, Clone)]
pub(crate) struct SubjectType {
    pub mask: usize,
    pub visits: Vec<usize>,
    pub cells: Vec<usize>,
    pub n: f64,
    pub sb: f64,
    pub sbb: f64,
    pub sy: DVector<f64>,
    pub sby: DVector<f64>,
    pub syy: DMatrix<f64>,
}

impl SubjectType {
    fn new(mask: usize, visits: Vec<usize>, cells: Vec<usize>) -> Self {
        let k = visits.len();
        Self {
            mask,
            visits,
            cells,
            n: 0.0,
            sb: 0.0,
            sbb: 0.0,
            sy: DVector::zeros(k),
            sby: DVector::zeros(k),
            syy: DMatrix::zeros(k, k),
        }
    }

    fn add(&mut self, b: f64, y: &[f64]) {
        self.n += 1.0;
        self.sb += b;
        self.sbb += b * b;
        for (a, &ya) in y.iter().enumerate() {
            self.sy[a] += ya;
            self.sby[a] += b * ya;
            for (c, &yc) in y.iter().enumerate() {
                self.syy[(a, c)] += ya * yc;
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.visits.len()
    }
}

/// Model matrix of a repeated-measures fit in compressed form.
#[derive(Debug, Clone)]
pub struct MmrmDesign {
    pub(crate) spec: DesignSpec,
    pub(crate) cells: Vec<Cell>,
    pub(crate) types: Vec<SubjectType>,
    pub(crate) baseline_mean: f64,
    pub(crate) n_subjects: usize,
    pub(crate) n_obs: usize,
}

impl MmrmDesign {
    pub fn build(data: &TrialDataset, spec: &DesignSpec) -> Result<Self> {
        let baseline_mean = data.mean_baseline();
        let mut cell_index: HashMap<Cell, usize> = HashMap::new();
        let mut cells: Vec<Cell> = Vec::new();
        // enumerate cells from every randomized patient so empty cells are detected
        for p in &data.patients {
            for j in 1..=N_POST {
                let c = Cell { visit: j, arm: p.arm, level: spec.level(j, p.pattern()) };
                if !cell_index.contains_key(&c) {
                    cell_index.insert(c, 0);
                    cells.push(c);
                }
            }
        }
        cells.sort();
        for (i, c) in cells.iter().enumerate() {
            cell_index.insert(*c, i);
        }
        let mut obs_per_cell = vec![0usize; cells.len()];
        let mut type_index: HashMap<(usize, Vec<usize>), usize> = HashMap::new();
        let mut types: Vec<SubjectType> = Vec::new();
        let mut n_subjects = 0;
        let mut n_obs = 0;
        let mut y = Vec::with_capacity(N_POST);
        for p in &data.patients {
            let mut visits = Vec::with_capacity(N_POST);
            let mut cols = Vec::with_capacity(N_POST);
            y.clear();
            let mut mask = 0usize;
            for j in 1..=N_POST {
                if let Some(v) = p.observed_change(j) {
                    let c = Cell { visit: j, arm: p.arm, level: spec.level(j, p.pattern()) };
                    let ci = cell_index[&c];
                    obs_per_cell[ci] += 1;
                    visits.push(j - 1);
                    cols.push(ci);
                    y.push(v);
                    mask |= 1 << (j - 1);
                }
            }
            if visits.is_empty() {
                continue;
            }
            n_subjects += 1;
            n_obs += visits.len();
            let key = (mask, cols.clone());
            let t = *type_index.entry(key).or_insert_with(|| {
                types.push(SubjectType::new(mask, visits.clone(), cols.clone()));
                types.len() - 1
            });
            types[t].add(p.baseline() - baseline_mean, &y);
        }
        if let Some(i) = obs_per_cell.iter().position(|&k| k == 0) {
            let c = cells[i];
            return Err(Error::RankDeficient(format!(
                "no observed outcome for arm {} level {} at visit {}",
                c.arm.label(),
                c.level,
                c.visit
            )));
        }
        let d = Self {
            spec: spec.clone(),
            cells,
            types,
            baseline_mean,
            n_subjects,
            n_obs,
        };
        if d.n_subjects < d.n_fixed() + N_POST + 1 || d.n_obs <= d.n_fixed() {
            return Err(Error::InsufficientData(format!(
                "{} subjects / {} observations for {} fixed effects",
                d.n_subjects,
                d.n_obs,
                d.n_fixed()
            )));
        }
        Ok(d)
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn spec(&self) -> &DesignSpec {
        &self.spec
    }

    /// Number of fixed-effect columns: cell means plus one baseline slope per visit.
    pub fn n_fixed(&self) -> usize {
        self.cells.len() + N_POST
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_subjects(&self) -> usize {
        self.n_subjects
    }

    /// Grand mean of baseline over all randomized subjects; LS-means are
    /// evaluated here.
    pub fn baseline_mean(&self) -> f64 {
        self.baseline_mean
    }

    pub fn cell_column(&self, cell: Cell) -> Option<usize> {
        self.cells.binary_search(&cell).ok()
    }

    pub(crate) fn slope_column(&self, visit0: usize) -> usize {
        self.cells.len() + visit0
    }

    /// Accumulates `sum_i X_i' M X_i` for a type-level weight matrix `m`.
    pub(crate) fn add_xmx(&self, t: &SubjectType, m: &DMatrix<f64>, out: &mut DMatrix<f64>) {
        for a in 0..t.dim() {
            let ca = t.cells[a];
            let sa = self.slope_column(t.visits[a]);
            for c in 0..t.dim() {
                let w = m[(a, c)];
                if w == 0.0 {
                    continue;
                }
                let cc = t.cells[c];
                let sc = self.slope_column(t.visits[c]);
                out[(ca, cc)] += t.n * w;
                out[(ca, sc)] += t.sb * w;
                out[(sa, cc)] += t.sb * w;
                out[(sa, sc)] += t.sbb * w;
            }
        }
    }

    /// `sum_i X_i C X_i'` for the type, a `dim x dim` matrix.
    pub(crate) fn xcx(&self, t: &SubjectType, c: &DMatrix<f64>) -> DMatrix<f64> {
        let k = t.dim();
        DMatrix::from_fn(k, k, |a, b| {
            let (ca, sa) = (t.cells[a], self.slope_column(t.visits[a]));
            let (cb, sb) = (t.cells[b], self.slope_column(t.visits[b]));
            t.n * c[(ca, cb)] + t.sb * (c[(ca, sb)] + c[(sa, cb)]) + t.sbb * c[(sa, sb)]
        })
    }

    /// Mean-row and slope-row parts of `X_i v`: returns `(Z v, B v)`.
    pub(crate) fn x_parts(&self, t: &SubjectType, v: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let z = DVector::from_fn(t.dim(), |a, _| v[t.cells[a]]);
        let s = DVector::from_fn(t.dim(), |a, _| v[self.slope_column(t.visits[a])]);
        (z, s)
    }

    /// `sum_i r_i r_i'` for residuals `r_i = y_i - X_i beta`.
    pub(crate) fn residual_ss(&self, t: &SubjectType, beta: &DVector<f64>) -> DMatrix<f64> {
        let (m, s) = self.x_parts(t, beta);
        let mut r = t.syy.clone();
        r -= &t.sy * m.transpose() + &m * t.sy.transpose();
        r -= &t.sby * s.transpose() + &s * t.sby.transpose();
        r += &m * m.transpose() * t.n;
        r += (&m * s.transpose() + &s * m.transpose()) * t.sb;
        r += &s * s.transpose() * t.sbb;
        r
    }

    /// Number of subjects observed at both visits, 5 x 5.
    pub(crate) fn pair_counts(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(N_POST, N_POST);
        for t in &self.types {
            for &a in &t.visits {
                for &b in &t.visits {
                    out[(a, b)] += t.n;
                }
            }
        }
        out
    }
}
