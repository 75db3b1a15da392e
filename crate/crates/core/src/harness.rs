//! Scenario runner and operating-characteristics calculator.
//!
//! A [`RunPlan`] names a grid of scenarios and a list of methods. Each
//! replicate generates one trial, runs every requested method on it and
//! produces one [`ReplicateRecord`] per method. Records are aggregated per
//! (scenario, method) into [`OperatingCharacteristics`].
//!
//! Replicates are independent: the trial for replicate `r` is drawn from the
//! stream `root/r` and method `k` draws from `root/r/METHOD_STAGE/k`, so the
//! output does not depend on thread count or execution order.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{self, File};
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collapse::{collapse, CodingTarget};
use crate::config::{IeMechanism, ScenarioConfig, ShiftModel};
use crate::dgm::{generate_trial, true_estimand, TrialDataset};
use crate::error::{Error, Result};
use crate::estimate::{DfMethod, EstimateResult, Method, DEFAULT_MARGIN};
use crate::mi::{ancova_full, estimate_mi, impute_mi1, impute_retrieved, MiOptions, DEFAULT_IMPUTATIONS};
use crate::mmrm::{self, estimate_mmrm, DesignSpec, MmrmOptions};
use crate::numcore::RngStream;
use crate::rbi::{estimate_rbi_all, fit_bayesian_mmrm, impute_rbi_all, Assumption, GibbsSettings, RbiOptions};

/// Stream index below the replicate root reserved for the analysis methods.
pub const METHOD_STAGE: u64 = 16;

/// Desk-scale replicate count.
pub const DEFAULT_REPLICATES: usize = 500;

/// Patients per arm for the large-sample true effect.
pub const DEFAULT_TRUTH_N: usize = 200_000;

/// How a replicate counts towards power.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PowerRule {
    /// Upper bound of the two-sided CI below the margin.
    #[default]
    Ci,
    /// One-sided t-test against the margin at level `alpha`.
    TTest,
}

impl FromStr for PowerRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ci" => Ok(PowerRule::Ci),
            "ttest" | "t-test" => Ok(PowerRule::TTest),
            _ => Err(Error::Config(format!("unknown power rule `{s}` (ci, ttest)"))),
        }
    }
}

/// One cell of the scenario grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioSpec {
    pub mechanism: IeMechanism,
    pub shift: ShiftModel,
    pub theta: f64,
}

impl ScenarioSpec {
    pub fn new(mechanism: IeMechanism, shift: ShiftModel, theta: f64) -> Self {
        Self { mechanism, shift, theta }
    }

    /// Every combination, mechanisms outermost and theta innermost.
    pub fn grid(mechanisms: &[IeMechanism], shifts: &[ShiftModel], thetas: &[f64]) -> Vec<Self> {
        let mut out = Vec::new();
        for &m in mechanisms {
            for &s in shifts {
                for &t in thetas {
                    out.push(Self::new(m, s, t));
                }
            }
        }
        out
    }

    pub fn config(&self, base: &ScenarioConfig) -> ScenarioConfig {
        let mut cfg = base.clone();
        cfg.ie_mechanism = self.mechanism;
        cfg.shift_model = self.shift;
        cfg.missingness_theta = self.theta;
        cfg
    }

    /// Stable identifier such as `DAR-Instant-S3`, or `DAR-Instant-t0.7` off the grid.
    pub fn id(&self, null_mode: bool) -> String {
        let pos = match crate::config::scenario_index(self.theta) {
            Some(i) => format!("S{}", i + 1),
            None => format!("t{}", self.theta),
        };
        let suffix = if null_mode { "-null" } else { "" };
        format!("{}-{}-{}{}", self.mechanism.label(), self.shift.label(), pos, suffix)
    }
}

/// Everything needed to reproduce a simulation run.
#[derive(Debug, Clone)]
pub struct RunPlan {
    /// Template configuration; mechanism, shift and theta are overwritten per scenario.
    pub base: ScenarioConfig,
    pub scenarios: Vec<ScenarioSpec>,
    pub methods: Vec<Method>,
    pub n_reps: usize,
    pub imputations: usize,
    pub margin: f64,
    pub alpha: f64,
    pub truth_n: usize,
    pub df_method: DfMethod,
    pub power_rule: PowerRule,
    pub gibbs: GibbsSettings,
    /// When false the `seconds` column is written as zero so output is byte-stable.
    pub record_timing: bool,
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
}

impl RunPlan {
    /// Desk-scale plan over `scenarios` with every method.
    pub fn new(base: ScenarioConfig, scenarios: Vec<ScenarioSpec>) -> Self {
        Self {
            base,
            scenarios,
            methods: Method::ALL.to_vec(),
            n_reps: DEFAULT_REPLICATES,
            imputations: DEFAULT_IMPUTATIONS,
            margin: DEFAULT_MARGIN,
            alpha: 0.05,
            truth_n: DEFAULT_TRUTH_N,
            df_method: DfMethod::default(),
            power_rule: PowerRule::default(),
            gibbs: GibbsSettings::default(),
            record_timing: true,
            threads: None,
        }
    }

    /// Checks the settings and every scenario of the grid.
    pub fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() {
            return Err(Error::Config("scenario grid is empty".into()));
        }
        self.validate_settings()?;
        for s in &self.scenarios {
            s.config(&self.base).validate()?;
        }
        Ok(())
    }

    /// Checks everything except the scenario grid.
    pub fn validate_settings(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("method list is empty".into()));
        }
        if !(self.margin < 0.0) {
            return Err(Error::Config(format!("margin must be negative, got {}", self.margin)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.n_reps < 2 {
            return Err(Error::Config("at least 2 replicates are required".into()));
        }
        if self.imputations < 2 {
            return Err(Error::Config("at least 2 imputations are required".into()));
        }
        if self.truth_n < 2 {
            return Err(Error::Config("truth_n must be at least 2".into()));
        }
        if self.gibbs.thin == 0 {
            return Err(Error::Config("Gibbs thinning must be positive".into()));
        }
        Ok(())
    }

    pub fn null_mode(&self) -> bool {
        self.base.null_mode
    }

    fn rules(&self) -> MetricRules {
        MetricRules {
            margin: self.margin,
            alpha: self.alpha,
            power_rule: self.power_rule,
            null_mode: self.null_mode(),
        }
    }

    fn mmrm_options(&self) -> MmrmOptions {
        MmrmOptions { df_method: self.df_method, margin: self.margin }
    }

    fn rbi_options(&self) -> RbiOptions {
        RbiOptions {
            mi: MiOptions { imputations: self.imputations, margin: self.margin },
            gibbs: self.gibbs,
        }
    }
}

/// One method applied to one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub scenario_id: String,
    pub replicate: u64,
    #[serde(with = "method_label")]
    pub method: Method,
    pub estimate: f64,
    pub se: f64,
    pub df: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub p_zero: f64,
    pub p_margin: f64,
    pub collapse_level: Option<usize>,
    pub seconds: f64,
    pub coding: Option<String>,
    pub error: Option<String>,
}

mod method_label {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::estimate::Method;

    pub fn serialize<S: Serializer>(m: &Method, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(m.label())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Method, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl ReplicateRecord {
    fn success(scenario_id: &str, replicate: u64, r: EstimateResult, seconds: f64) -> Self {
        Self {
            scenario_id: scenario_id.to_string(),
            replicate,
            method: r.method,
            estimate: r.estimate,
            se: r.se,
            df: r.df,
            ci_lo: r.ci_lo,
            ci_hi: r.ci_hi,
            p_zero: r.p_zero,
            p_margin: r.p_margin,
            collapse_level: r.collapse_level,
            seconds,
            coding: r.coding,
            error: None,
        }
    }

    fn failure(scenario_id: &str, replicate: u64, method: Method, err: &Error, seconds: f64) -> Self {
        Self {
            scenario_id: scenario_id.to_string(),
            replicate,
            method,
            estimate: f64::NAN,
            se: f64::NAN,
            df: f64::NAN,
            ci_lo: f64::NAN,
            ci_hi: f64::NAN,
            p_zero: f64::NAN,
            p_margin: f64::NAN,
            collapse_level: None,
            seconds,
            coding: None,
            error: Some(err.to_string()),
        }
    }

    pub fn is_success(&self) -> bool {
        self.error.is_none() && self.estimate.is_finite()
    }
}

/// Decision rules applied when aggregating.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRules {
    pub margin: f64,
    pub alpha: f64,
    pub power_rule: PowerRule,
    pub null_mode: bool,
}

impl Default for MetricRules {
    fn default() -> Self {
        Self {
            margin: DEFAULT_MARGIN,
            alpha: 0.05,
            power_rule: PowerRule::Ci,
            null_mode: false,
        }
    }
}

/// Summary of one method across the replicates of one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingCharacteristics {
    pub n_reps: usize,
    pub n_failed: usize,
    pub mean: f64,
    pub bias: f64,
    pub bias_mcse: f64,
    pub sd: f64,
    pub mean_se: f64,
    pub power: f64,
    pub power_mcse: f64,
    pub type1: Option<f64>,
    pub type1_mcse: Option<f64>,
    pub coverage: f64,
    pub coverage_mcse: f64,
    pub rmse: f64,
    pub collapse_counts: BTreeMap<usize, usize>,
}

impl OperatingCharacteristics {
    fn unavailable(n_reps: usize, n_failed: usize) -> Self {
        Self {
            n_reps,
            n_failed,
            mean: f64::NAN,
            bias: f64::NAN,
            bias_mcse: f64::NAN,
            sd: f64::NAN,
            mean_se: f64::NAN,
            power: f64::NAN,
            power_mcse: f64::NAN,
            type1: None,
            type1_mcse: None,
            coverage: f64::NAN,
            coverage_mcse: f64::NAN,
            rmse: f64::NAN,
            collapse_counts: BTreeMap::new(),
        }
    }

    /// Encoded as `6:408|5:88`, highest level first.
    pub fn collapse_counts_label(&self) -> String {
        self.collapse_counts
            .iter()
            .rev()
            .map(|(l, n)| format!("{l}:{n}"))
            .collect::<Vec<_>>()
            .join("|")
    }

    /// Share of successful replicates that kept `level` patterns.
    pub fn collapse_rate(&self, level: usize) -> f64 {
        self.collapse_counts.get(&level).copied().unwrap_or(0) as f64 / self.n_reps as f64
    }
}

fn binomial_mcse(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

// exact for constant input
fn anchored_mean(mut xs: impl Iterator<Item = f64>) -> f64 {
    let Some(x0) = xs.next() else { return f64::NAN };
    let (mut s, mut n) = (0.0, 1.0);
    for x in xs {
        s += x - x0;
        n += 1.0;
    }
    x0 + s / n
}

/// Operating characteristics of one method from its replicate records.
///
/// Failed records only count towards `n_failed`.
pub fn aggregate(records: &[ReplicateRecord], delta_true: f64, rules: &MetricRules) -> Result<OperatingCharacteristics> {
    let ok: Vec<&ReplicateRecord> = records.iter().filter(|r| r.is_success()).collect();
    let n_failed = records.len() - ok.len();
    let m = ok.len();
    if m < 2 {
        return Err(Error::InsufficientData(format!(
            "{m} successful replicates ({n_failed} failed); at least 2 are needed"
        )));
    }
    let mf = m as f64;
    let mean = anchored_mean(ok.iter().map(|r| r.estimate));
    let ss = ok.iter().map(|r| (r.estimate - mean).powi(2)).sum::<f64>();
    let sd = (ss / (mf - 1.0)).sqrt();
    let mse = ok.iter().map(|r| (r.estimate - delta_true).powi(2)).sum::<f64>() / mf;
    let rate = |f: &dyn Fn(&ReplicateRecord) -> bool| ok.iter().filter(|r| f(r)).count() as f64 / mf;
    let power = match rules.power_rule {
        PowerRule::Ci => rate(&|r| r.ci_hi < rules.margin),
        PowerRule::TTest => rate(&|r| r.p_margin < rules.alpha),
    };
    let coverage = rate(&|r| r.ci_lo <= delta_true && delta_true <= r.ci_hi);
    let type1 = rules.null_mode.then(|| rate(&|r| r.p_zero < rules.alpha));
    let mut collapse_counts = BTreeMap::new();
    for r in &ok {
        if let Some(l) = r.collapse_level {
            *collapse_counts.entry(l).or_insert(0) += 1;
        }
    }
    Ok(OperatingCharacteristics {
        n_reps: m,
        n_failed,
        mean,
        bias: mean - delta_true,
        bias_mcse: sd / mf.sqrt(),
        sd,
        mean_se: anchored_mean(ok.iter().map(|r| r.se)),
        power,
        power_mcse: binomial_mcse(power, m),
        type1,
        type1_mcse: type1.map(|p| binomial_mcse(p, m)),
        coverage,
        coverage_mcse: binomial_mcse(coverage, m),
        rmse: mse.sqrt(),
        collapse_counts,
    })
}

/// All output for one scenario.
#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub id: String,
    pub spec: ScenarioSpec,
    pub delta_true: f64,
    pub null_mode: bool,
    pub summaries: Vec<(Method, OperatingCharacteristics)>,
    /// Replicate-major, methods in plan order.
    pub records: Vec<ReplicateRecord>,
}

impl ScenarioResult {
    pub fn summary(&self, method: Method) -> Option<&OperatingCharacteristics> {
        self.summaries.iter().find(|(m, _)| *m == method).map(|(_, oc)| oc)
    }

    pub fn method_records(&self, method: Method) -> impl Iterator<Item = &ReplicateRecord> {
        self.records.iter().filter(move |r| r.method == method)
    }
}

fn method_stream(root_seed: u64, replicate: u64, method: Method) -> RngStream {
    let k = Method::ALL.iter().position(|m| *m == method).unwrap() as u64;
    RngStream::new(root_seed).child(replicate).child(METHOD_STAGE).child(k)
}

fn run_one(method: Method, data: &TrialDataset, plan: &RunPlan, replicate: u64) -> Result<EstimateResult> {
    match method {
        Method::Full => {
            let a = ancova_full(data)?;
            EstimateResult::from_t(Method::Full, a.estimate, a.se, a.df as f64, plan.margin)
        }
        Method::Mmrm1 | Method::Mmrm2 | Method::Mmrm3 => estimate_mmrm(data, method, &plan.mmrm_options()),
        Method::Mi1 | Method::Mi2 | Method::Mi3 => {
            let stream = method_stream(plan.base.root_seed, replicate, method);
            estimate_mi(data, method, &plan.rbi_options().mi, &stream)
        }
        Method::J2r | Method::Cir | Method::Cr => {
            Err(Error::InvalidParameter(format!("{method} is run jointly with the other reference-based methods")))
        }
    }
}

/// Generates one trial and applies every method in the plan.
///
/// Reference-based methods share one posterior sample; their wall time is
/// split evenly between them.
pub fn run_replicate(plan: &RunPlan, cfg: &ScenarioConfig, scenario_id: &str, replicate: u64) -> Vec<ReplicateRecord> {
    let clock = |t: Instant| if plan.record_timing { t.elapsed().as_secs_f64() } else { 0.0 };
    let data = match generate_trial(cfg, replicate) {
        Ok(d) => d,
        Err(e) => {
            return plan
                .methods
                .iter()
                .map(|&m| ReplicateRecord::failure(scenario_id, replicate, m, &e, 0.0))
                .collect()
        }
    };
    let mut rbi: Option<(Result<[EstimateResult; 3]>, f64)> = None;
    let n_rbi = plan.methods.iter().filter(|m| m.is_reference_based()).count().max(1);
    let mut out = Vec::with_capacity(plan.methods.len());
    for &method in &plan.methods {
        if let Some(a) = Assumption::from_method(method) {
            let (res, secs) = rbi.get_or_insert_with(|| {
                let t = Instant::now();
                let stream = method_stream(plan.base.root_seed, replicate, Method::J2r);
                let r = estimate_rbi_all(&data, &plan.rbi_options(), &stream);
                (r, clock(t) / n_rbi as f64)
            });
            let k = Assumption::ALL.iter().position(|x| *x == a).unwrap();
            out.push(match res {
                Ok(all) => ReplicateRecord::success(scenario_id, replicate, all[k].clone(), *secs),
                Err(e) => ReplicateRecord::failure(scenario_id, replicate, method, e, *secs),
            });
            continue;
        }
        let t = Instant::now();
        let r = run_one(method, &data, plan, replicate);
        let secs = clock(t);
        out.push(match r {
            Ok(r) => ReplicateRecord::success(scenario_id, replicate, r, secs),
            Err(e) => {
                log::debug!("{scenario_id} replicate {replicate} {method}: {e}");
                ReplicateRecord::failure(scenario_id, replicate, method, &e, secs)
            }
        });
    }
    out
}

fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Runs all replicates of one scenario and aggregates them per method.
pub fn run_scenario(plan: &RunPlan, spec: &ScenarioSpec, delta_true: f64) -> Result<ScenarioResult> {
    plan.validate_settings()?;
    let cfg = spec.config(&plan.base);
    cfg.validate()?;
    let id = spec.id(plan.null_mode());
    let started = Instant::now();
    let per_rep: Vec<Vec<ReplicateRecord>> = with_pool(plan.threads, || {
        (0..plan.n_reps as u64)
            .into_par_iter()
            .map(|r| run_replicate(plan, &cfg, &id, r))
            .collect()
    })?;
    let records: Vec<ReplicateRecord> = per_rep.into_iter().flatten().collect();
    let rules = plan.rules();
    let summaries = plan
        .methods
        .iter()
        .map(|&m| {
            let recs: Vec<ReplicateRecord> = records.iter().filter(|r| r.method == m).cloned().collect();
            let oc = aggregate(&recs, delta_true, &rules).unwrap_or_else(|e| {
                log::warn!("{id} {m}: {e}");
                let n_ok = recs.iter().filter(|r| r.is_success()).count();
                OperatingCharacteristics::unavailable(n_ok, recs.len() - n_ok)
            });
            (m, oc)
        })
        .collect();
    log::info!("{id}: {} replicates in {:.1}s", plan.n_reps, started.elapsed().as_secs_f64());
    Ok(ScenarioResult {
        id,
        spec: *spec,
        delta_true,
        null_mode: plan.null_mode(),
        summaries,
        records,
    })
}

/// True effect for each scenario of the plan (exactly zero under the null).
pub fn scenario_truths(plan: &RunPlan) -> Result<Vec<f64>> {
    let mut cache: HashMap<(IeMechanism, ShiftModel), f64> = HashMap::new();
    let mut out = Vec::with_capacity(plan.scenarios.len());
    for s in &plan.scenarios {
        if plan.null_mode() {
            out.push(0.0);
            continue;
        }
        let key = (s.mechanism, s.shift);
        let d = match cache.get(&key) {
            Some(d) => *d,
            None => {
                let t = true_estimand(&s.config(&plan.base), plan.truth_n)?;
                log::info!("true effect {} {}: {:.5} (MC SE {:.5})", s.mechanism.label(), s.shift.label(), t.delta, t.mcse);
                cache.insert(key, t.delta);
                t.delta
            }
        };
        out.push(d);
    }
    Ok(out)
}

/// Runs every scenario of the plan.
pub fn run_plan(plan: &RunPlan) -> Result<Vec<ScenarioResult>> {
    plan.validate()?;
    let truths = scenario_truths(plan)?;
    plan.scenarios
        .iter()
        .zip(truths)
        .map(|(s, d)| run_scenario(plan, s, d))
        .collect()
}

/// One row of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario_id: String,
    pub mechanism: String,
    pub shift_model: String,
    pub theta: f64,
    pub method: String,
    pub n_reps: usize,
    pub n_failed: usize,
    pub bias: f64,
    pub bias_mcse: f64,
    pub sd: f64,
    pub mean_se: f64,
    pub power: f64,
    pub power_mcse: f64,
    pub type1: Option<f64>,
    pub type1_mcse: Option<f64>,
    pub coverage: f64,
    pub coverage_mcse: f64,
    pub rmse: f64,
    pub collapse_level_counts: String,
    pub delta_true: f64,
}

impl ResultRow {
    fn new(s: &ScenarioResult, method: Method, oc: &OperatingCharacteristics) -> Self {
        Self {
            scenario_id: s.id.clone(),
            mechanism: s.spec.mechanism.label().to_string(),
            shift_model: s.spec.shift.label().to_string(),
            theta: s.spec.theta,
            method: method.label().to_string(),
            n_reps: oc.n_reps,
            n_failed: oc.n_failed,
            bias: oc.bias,
            bias_mcse: oc.bias_mcse,
            sd: oc.sd,
            mean_se: oc.mean_se,
            power: oc.power,
            power_mcse: oc.power_mcse,
            type1: oc.type1,
            type1_mcse: oc.type1_mcse,
            coverage: oc.coverage,
            coverage_mcse: oc.coverage_mcse,
            rmse: oc.rmse,
            collapse_level_counts: oc.collapse_counts_label(),
            delta_true: s.delta_true,
        }
    }
}

pub const RESULTS_FILE: &str = "results.csv";
pub const REPLICATES_FILE: &str = "replicates.csv";

/// Writes `results.csv` and `replicates.csv` into `dir`, creating it if needed.
pub fn write_results(results: &[ScenarioResult], dir: &Path) -> Result<()> {
    if results.is_empty() {
        return Err(Error::Config("no scenario results to write".into()));
    }
    if results.iter().any(|s| s.summaries.is_empty()) {
        return Err(Error::Config("method list is empty".into()));
    }
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join(RESULTS_FILE))?;
    for s in results {
        for (m, oc) in &s.summaries {
            w.serialize(ResultRow::new(s, *m, oc))?;
        }
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join(REPLICATES_FILE))?;
    for s in results {
        for r in &s.records {
            w.serialize(r)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn read_replicates(path: &Path) -> Result<Vec<ReplicateRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Dumps the intermediate objects behind one replicate: the dataset, the
/// MMRM fit traces and the first completed dataset of each imputation method.
pub fn write_replicate_diagnostics(plan: &RunPlan, spec: &ScenarioSpec, replicate: u64, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let cfg = spec.config(&plan.base);
    let data = generate_trial(&cfg, replicate)?;
    data.write_csv(File::create(dir.join("dataset.csv"))?)?;
    let mut notes = File::create(dir.join("codings.txt"))?;
    for &method in &plan.methods {
        let name = method.label().to_ascii_lowercase();
        let target = match method {
            Method::Mmrm2 | Method::Mi2 => Some(CodingTarget::Status),
            Method::Mmrm3 | Method::Mi3 => Some(CodingTarget::Pattern),
            _ => None,
        };
        let coding = target.map(|t| collapse(&data, t)).transpose()?;
        if let Some(c) = &coding {
            writeln!(notes, "{method}: {}", c.label())?;
        }
        match method {
            Method::Mmrm1 | Method::Mmrm2 | Method::Mmrm3 => {
                let spec = match coding {
                    Some(c) if c.n_patterns() > 1 => DesignSpec::Coded(c),
                    _ => DesignSpec::Simple,
                };
                match mmrm::fit(&data, &spec) {
                    Ok(f) => mmrm::write_diagnostics(&f, File::create(dir.join(format!("{name}_fit.csv")))?)?,
                    Err(e) => writeln!(notes, "{method}: fit failed: {e}")?,
                }
            }
            Method::Mi1 | Method::Mi2 | Method::Mi3 => {
                let stream = method_stream(plan.base.root_seed, replicate, method);
                let completed = match &coding {
                    None => impute_mi1(&data, plan.imputations, &stream),
                    Some(c) => impute_retrieved(&data, c, plan.imputations, &stream),
                };
                match completed {
                    Ok(c) => c[0].write_csv(File::create(dir.join(format!("{name}_imputation1.csv")))?)?,
                    Err(e) => writeln!(notes, "{method}: imputation failed: {e}")?,
                }
            }
            Method::J2r | Method::Cir | Method::Cr | Method::Full => {}
        }
    }
    if plan.methods.iter().any(|m| m.is_reference_based()) {
        let stream = method_stream(plan.base.root_seed, replicate, Method::J2r);
        let opts = plan.rbi_options();
        let model = fit_bayesian_mmrm(&data, opts.mi.imputations, opts.gibbs, &mut stream.child(0).rng())?;
        writeln!(notes, "gibbs lag-1 autocorrelation: {:.4}", model.lag1_autocorrelation)?;
        let completed = impute_rbi_all(&data, &model, &stream.child(1))?;
        for (a, c) in Assumption::ALL.iter().zip(completed.iter()) {
            let name = a.method().label().to_ascii_lowercase();
            c[0].write_csv(File::create(dir.join(format!("{name}_imputation1.csv")))?)?;
        }
    }
    Ok(())
}

impl fmt::Display for OperatingCharacteristics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "n={} failed={} bias={:.4} sd={:.4} se={:.4} power={:.3} coverage={:.3} rmse={:.4}",
            self.n_reps, self.n_failed, self.bias, self.sd, self.mean_se, self.power, self.coverage, self.rmse
        )?;
        if let Some(t) = self.type1 {
            write!(f, " type1={t:.4}")?;
        }
        if !self.collapse_counts.is_empty() {
            write!(f, " levels={}", self.collapse_counts_label())?;
        }
        Ok(())
    }
}
