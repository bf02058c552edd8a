//! Update rules with per-step instrumentation.
//!
//! A [`Runner`] owns one training run. Every step evaluates the gradient
//! difference `g_t = ∇f(W_{t−1}, S) − ∇f(W_{t−1}, S_J)` (or its mini-batch
//! analogue) whether or not the update itself needs it, so that any
//! trajectory can be certified afterwards.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::datasets::{self, BatchMode, BatchSpec, Dataset, IndexSplit};
use crate::discrete_noise::{floor_vec, round_vec};
use crate::error::{Error, Result};
use crate::models::{self, ModelArch, ParamVector};
use crate::rng::{self, Stream, RNG_ALGORITHM};

/// A per-step sequence indexed from `t = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Rate {
    Constant(f64),
    List(Vec<f64>),
    Rule(RateRule),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RateRule {
    /// `initial · factor^⌊(t−1)/every⌋`
    StepDecay { initial: f64, factor: f64, every: usize },
    /// `scale / t`
    InverseT { scale: f64 },
}

impl Rate {
    pub fn at(&self, t: usize) -> f64 {
        match self {
            Rate::Constant(v) => *v,
            Rate::List(values) => values[t - 1],
            Rate::Rule(RateRule::StepDecay { initial, factor, every }) => {
                initial * factor.powi(((t - 1) / (*every).max(1)) as i32)
            }
            Rate::Rule(RateRule::InverseT { scale }) => scale / t as f64,
        }
    }

    fn validate(&self, name: &str, steps: usize, allow_zero: bool) -> Result<()> {
        if let Rate::List(values) = self {
            if values.len() < steps {
                return Err(Error::config(name, format!("{} entries for {steps} steps", values.len())));
            }
        }
        if let Rate::Rule(RateRule::StepDecay { every: 0, .. }) = self {
            return Err(Error::config(name, "`every` must be at least 1"));
        }
        for t in 1..=steps {
            let v = self.at(t);
            if !(v.is_finite() && (v > 0.0 || (allow_zero && v == 0.0))) {
                return Err(Error::config(name, format!("value {v} at step {t} is not positive")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CldSettings {
    /// inverse temperature β
    pub beta: f64,
    /// ℓ2 coefficient λ
    pub lambda_reg: f64,
    /// Euler–Maruyama step
    pub dt: f64,
    /// bound `C` on `|f|`, used for the decay rate `α = λ/e^{8βC}`
    pub loss_bound: f64,
}

impl CldSettings {
    pub fn alpha(&self) -> f64 {
        self.lambda_reg / (8.0 * self.beta * self.loss_bound).exp()
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [("cld.beta", self.beta), ("cld.lambda_reg", self.lambda_reg), ("cld.dt", self.dt)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.loss_bound > 0.0 && self.loss_bound.is_finite()) {
            return Err(Error::domain(format!("cld.loss_bound must be positive, got {}", self.loss_bound)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub steps: usize,
    pub gamma: Rate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<Rate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Rate>,
    /// momentum coefficient
    #[serde(default)]
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cld: Option<CldSettings>,
}

impl Schedule {
    pub fn constant(steps: usize, gamma: f64) -> Self {
        Schedule { steps, gamma: Rate::Constant(gamma), eps: None, sigma: None, alpha: 0.0, cld: None }
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = Some(Rate::Constant(eps));
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = Some(Rate::Constant(sigma));
        self
    }

    pub fn with_momentum(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_cld(mut self, cld: CldSettings) -> Self {
        self.cld = Some(cld);
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Gd,
    Sgd,
    Fgd,
    Fsgd,
    Rgd,
    Gld,
    Sgld,
    Cld,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Gd => "gd",
            Algorithm::Sgd => "sgd",
            Algorithm::Fgd => "fgd",
            Algorithm::Fsgd => "fsgd",
            Algorithm::Rgd => "rgd",
            Algorithm::Gld => "gld",
            Algorithm::Sgld => "sgld",
            Algorithm::Cld => "cld",
        }
    }

    fn uses_batches(self) -> bool {
        matches!(self, Algorithm::Sgd | Algorithm::Fsgd | Algorithm::Sgld)
    }

    fn uses_momentum(self) -> bool {
        matches!(self, Algorithm::Gd | Algorithm::Sgd | Algorithm::Fgd | Algorithm::Fsgd)
    }

    fn tracks_lipschitz(self) -> bool {
        matches!(self, Algorithm::Gld | Algorithm::Sgld | Algorithm::Cld)
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Everything needed to reproduce a run apart from the data itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub algorithm: Algorithm,
    pub arch: ModelArch,
    pub schedule: Schedule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<BatchSpec>,
    pub seed: u64,
    /// Evaluate risks every this many steps; 0 keeps only the initial and final values.
    #[serde(default)]
    pub risk_every: usize,
    /// Store a parameter snapshot every this many steps; 0 disables snapshots.
    #[serde(default)]
    pub snapshot_every: usize,
}

impl RunSpec {
    pub fn new(algorithm: Algorithm, arch: ModelArch, schedule: Schedule, seed: u64) -> Self {
        RunSpec { algorithm, arch, schedule, batch: None, seed, risk_every: 0, snapshot_every: 0 }
    }

    pub fn with_batch(mut self, batch: BatchSpec) -> Self {
        self.batch = Some(batch);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let s = &self.schedule;
        s.gamma.validate(
            "schedule.gamma",
            s.steps,
            self.algorithm == Algorithm::Gld || self.algorithm == Algorithm::Sgld,
        )?;
        let needs_eps = matches!(self.algorithm, Algorithm::Fgd | Algorithm::Fsgd | Algorithm::Rgd);
        let needs_sigma = matches!(self.algorithm, Algorithm::Gld | Algorithm::Sgld);
        match (&s.eps, needs_eps) {
            (Some(eps), true) => eps.validate("schedule.eps", s.steps, false)?,
            (None, true) => return Err(Error::config("schedule.eps", format!("required by {}", self.algorithm))),
            _ => {}
        }
        match (&s.sigma, needs_sigma) {
            (Some(sigma), true) => sigma.validate("schedule.sigma", s.steps, false)?,
            (None, true) => return Err(Error::config("schedule.sigma", format!("required by {}", self.algorithm))),
            _ => {}
        }
        if !(s.alpha >= 0.0 && s.alpha.is_finite()) {
            return Err(Error::config("schedule.alpha", "momentum must be non-negative"));
        }
        if s.alpha > 0.0 && !self.algorithm.uses_momentum() {
            return Err(Error::config("schedule.alpha", format!("{} has no momentum variant", self.algorithm)));
        }
        if self.algorithm == Algorithm::Cld {
            s.cld.ok_or_else(|| Error::config("schedule.cld", "required by cld"))?.validate()?;
        }
        match (&self.batch, self.algorithm.uses_batches()) {
            (None, true) => return Err(Error::config("batch", format!("required by {}", self.algorithm))),
            (Some(b), true) => {
                let ok = match self.algorithm {
                    Algorithm::Sgld => b.mode == BatchMode::WithReplacement,
                    _ => b.mode != BatchMode::WithReplacement,
                };
                if !ok {
                    return Err(Error::contract(format!("{} cannot use batch mode {:?}", self.algorithm, b.mode)));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Training data, prior split and optional held-out sample.
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a> {
    pub train: &'a Dataset,
    pub split: &'a IndexSplit,
    pub test: Option<&'a Dataset>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Risks {
    pub train_s: f64,
    pub train_i: f64,
    /// absent when `m = 0`
    pub train_j: Option<f64>,
    pub test: Option<f64>,
}

/// Quantities logged at step `t` (parameters move from `W_{t−1}` to `W_t`).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub gamma: f64,
    pub eps: Option<f64>,
    pub sigma: Option<f64>,
    /// loss at `W_{t−1}` on the data the update used
    pub loss: f64,
    /// `‖g_t‖²`, unfloored
    pub grad_diff_sq: f64,
    /// `(γ_t/ε_t)²‖g_t‖²`
    pub grad_diff_sq_weighted_eps: f64,
    /// `γ_t²‖g_t‖²`
    pub grad_diff_sq_weighted_gamma: f64,
    /// `(γ_t/σ_t)²‖g_t‖²`
    pub grad_diff_sq_weighted_sigma: f64,
    /// `L(W_{t−1}) = max_i ‖∇f(W_{t−1}, z_i)‖`, Langevin runs only
    pub lw: f64,
    /// `(γ_t/σ_t)² L(W_{t−1})²`
    pub lw_sq_weighted: f64,
    /// `γ_t²/σ_t²`
    pub gamma_sq_over_sigma_sq: f64,
    /// `e^{α((t−1)dt − T dt)} ‖g_t‖² dt`, CLD only
    pub cld_quadrature: f64,
    /// largest coordinate of the floor/round residual
    pub quant_residual_max: f64,
    /// `‖∇f(S_B) − ∇f(S)‖²` for mini-batch methods
    pub batch_dev_sq: f64,
    /// FSGD step whose batch missed `J`; the prior gradient was taken as zero
    pub empty_intersection: bool,
    pub risks: Option<Risks>,
}

pub const CSV_COLUMNS: [&str; 21] = [
    "t",
    "gamma",
    "eps",
    "sigma",
    "loss",
    "grad_diff_sq",
    "grad_diff_sq_weighted_eps",
    "grad_diff_sq_weighted_gamma",
    "grad_diff_sq_weighted_sigma",
    "lw",
    "lw_sq_weighted",
    "gamma_sq_over_sigma_sq",
    "cld_quadrature",
    "quant_residual_max",
    "batch_dev_sq",
    "empty_intersection",
    "train_risk_s",
    "train_risk_i",
    "train_risk_j",
    "test_risk",
    "has_risks",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogMeta {
    pub algorithm: Algorithm,
    pub arch: ModelArch,
    pub schedule: Schedule,
    pub batch: Option<BatchSpec>,
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub steps: usize,
    pub seed: u64,
    pub rng_algorithm: String,
    #[serde(default)]
    pub config_digest: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: usize,
    pub params: ParamVector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub meta: LogMeta,
    pub initial_risks: Risks,
    pub records: Vec<StepRecord>,
    pub final_risks: Risks,
    pub final_params: ParamVector,
    #[serde(default)]
    pub snapshots: Vec<Snapshot>,
}

/// Cumulative sums over all steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Sums {
    pub grad_diff_sq: f64,
    pub grad_diff_sq_weighted_eps: f64,
    pub grad_diff_sq_weighted_gamma: f64,
    pub grad_diff_sq_weighted_sigma: f64,
    pub lw_sq_weighted: f64,
    pub gamma_sq_over_sigma_sq: f64,
    pub cld_quadrature: f64,
}

impl Sums {
    pub fn of(records: &[StepRecord]) -> Sums {
        let mut s = Sums::default();
        for r in records {
            s.grad_diff_sq += r.grad_diff_sq;
            s.grad_diff_sq_weighted_eps += r.grad_diff_sq_weighted_eps;
            s.grad_diff_sq_weighted_gamma += r.grad_diff_sq_weighted_gamma;
            s.grad_diff_sq_weighted_sigma += r.grad_diff_sq_weighted_sigma;
            s.lw_sq_weighted += r.lw_sq_weighted;
            s.gamma_sq_over_sigma_sq += r.gamma_sq_over_sigma_sq;
            s.cld_quadrature += r.cld_quadrature;
        }
        s
    }

    fn scale(self, k: f64) -> Sums {
        Sums {
            grad_diff_sq: self.grad_diff_sq * k,
            grad_diff_sq_weighted_eps: self.grad_diff_sq_weighted_eps * k,
            grad_diff_sq_weighted_gamma: self.grad_diff_sq_weighted_gamma * k,
            grad_diff_sq_weighted_sigma: self.grad_diff_sq_weighted_sigma * k,
            lw_sq_weighted: self.lw_sq_weighted * k,
            gamma_sq_over_sigma_sq: self.gamma_sq_over_sigma_sq * k,
            cld_quadrature: self.cld_quadrature * k,
        }
    }

    fn add(self, o: Sums) -> Sums {
        Sums {
            grad_diff_sq: self.grad_diff_sq + o.grad_diff_sq,
            grad_diff_sq_weighted_eps: self.grad_diff_sq_weighted_eps + o.grad_diff_sq_weighted_eps,
            grad_diff_sq_weighted_gamma: self.grad_diff_sq_weighted_gamma + o.grad_diff_sq_weighted_gamma,
            grad_diff_sq_weighted_sigma: self.grad_diff_sq_weighted_sigma + o.grad_diff_sq_weighted_sigma,
            lw_sq_weighted: self.lw_sq_weighted + o.lw_sq_weighted,
            gamma_sq_over_sigma_sq: self.gamma_sq_over_sigma_sq + o.gamma_sq_over_sigma_sq,
            cld_quadrature: self.cld_quadrature + o.cld_quadrature,
        }
    }
}

/// Whether a summary describes one trajectory or a seed average.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SumProvenance {
    SingleRealization,
    Averaged { seeds: usize },
}

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

/// The JSON summary of a run: everything the certifier consumes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogSummary {
    pub schema_version: u32,
    pub meta: LogMeta,
    pub initial_risks: Risks,
    pub final_risks: Risks,
    pub sums: Sums,
    /// `max_t L(W_{t−1})`, zero when not tracked
    pub max_lw: f64,
    pub empty_intersection_steps: usize,
    pub provenance: SumProvenance,
}

impl TrajectoryLog {
    pub fn sums(&self) -> Sums {
        Sums::of(&self.records)
    }

    pub fn summary(&self) -> LogSummary {
        LogSummary {
            schema_version: SUMMARY_SCHEMA_VERSION,
            meta: self.meta.clone(),
            initial_risks: self.initial_risks,
            final_risks: self.final_risks,
            sums: self.sums(),
            max_lw: self.records.iter().map(|r| r.lw).fold(0.0, f64::max),
            empty_intersection_steps: self.records.iter().filter(|r| r.empty_intersection).count(),
            provenance: SumProvenance::SingleRealization,
        }
    }

    /// One row per step in [`CSV_COLUMNS`] order; absent values are empty.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", CSV_COLUMNS.join(","))?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for r in &self.records {
            let risks = r.risks;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.t,
                r.gamma,
                opt(r.eps),
                opt(r.sigma),
                r.loss,
                r.grad_diff_sq,
                r.grad_diff_sq_weighted_eps,
                r.grad_diff_sq_weighted_gamma,
                r.grad_diff_sq_weighted_sigma,
                r.lw,
                r.lw_sq_weighted,
                r.gamma_sq_over_sigma_sq,
                r.cld_quadrature,
                r.quant_residual_max,
                r.batch_dev_sq,
                u8::from(r.empty_intersection),
                opt(risks.map(|k| k.train_s)),
                opt(risks.map(|k| k.train_i)),
                opt(risks.and_then(|k| k.train_j)),
                opt(risks.and_then(|k| k.test)),
                u8::from(risks.is_some()),
            )?;
        }
        Ok(())
    }
}

/// Average summaries of runs that differ only in their seeds.
pub fn average_summaries(runs: &[LogSummary]) -> Result<LogSummary> {
    let first = runs.first().ok_or_else(|| Error::contract("no summaries to average"))?;
    for r in runs {
        if r.meta.algorithm != first.meta.algorithm
            || r.meta.schedule != first.meta.schedule
            || (r.meta.n, r.meta.m, r.meta.d, r.meta.steps)
                != (first.meta.n, first.meta.m, first.meta.d, first.meta.steps)
        {
            return Err(Error::contract("summaries to average must share algorithm, schedule and sizes"));
        }
    }
    let k = runs.len() as f64;
    let mean = |f: &dyn Fn(&LogSummary) -> f64| runs.iter().map(f).sum::<f64>() / k;
    let mean_opt = |f: &dyn Fn(&LogSummary) -> Option<f64>| -> Option<f64> {
        runs.iter().map(f).collect::<Option<Vec<f64>>>().map(|v| v.iter().sum::<f64>() / k)
    };
    let avg_risks = |g: &dyn Fn(&LogSummary) -> Risks| Risks {
        train_s: mean(&|r| g(r).train_s),
        train_i: mean(&|r| g(r).train_i),
        train_j: mean_opt(&|r| g(r).train_j),
        test: mean_opt(&|r| g(r).test),
    };
    let sums = runs.iter().fold(Sums::default(), |acc, r| acc.add(r.sums)).scale(1.0 / k);
    Ok(LogSummary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        meta: first.meta.clone(),
        initial_risks: avg_risks(&|r| r.initial_risks),
        final_risks: avg_risks(&|r| r.final_risks),
        sums,
        max_lw: runs.iter().map(|r| r.max_lw).fold(0.0, f64::max),
        empty_intersection_steps: runs.iter().map(|r| r.empty_intersection_steps).sum(),
        provenance: SumProvenance::Averaged { seeds: runs.len() },
    })
}

pub fn risks_at(arch: &ModelArch, w: &[f64], data: &TrainData) -> Result<Risks> {
    let all = data.train.all_indices();
    let prior = data.split.prior();
    Ok(Risks {
        train_s: models::zero_one_risk(arch, w, data.train, &all)?,
        train_i: models::zero_one_risk(arch, w, data.train, data.split.complement())?,
        train_j: if prior.is_empty() { None } else { Some(models::zero_one_risk(arch, w, data.train, prior)?) },
        test: match data.test {
            Some(test) => Some(models::zero_one_risk(arch, w, test, &test.all_indices())?),
            None => None,
        },
    })
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// One training run, advanced a step at a time.
pub struct Runner<'a> {
    spec: RunSpec,
    data: TrainData<'a>,
    all: Vec<usize>,
    member: Vec<bool>,
    w: ParamVector,
    w_prev: ParamVector,
    t: usize,
    batch_rng: Stream,
    noise_rng: Stream,
    rounding_rng: Stream,
    g_full: ParamVector,
    g_prior: ParamVector,
    g_batch: ParamVector,
    diff: ParamVector,
    scratch: ParamVector,
    initial_risks: Risks,
    records: Vec<StepRecord>,
    snapshots: Vec<Snapshot>,
}

impl<'a> Runner<'a> {
    pub fn new(spec: RunSpec, data: TrainData<'a>) -> Result<Self> {
        spec.validate()?;
        if data.split.n() != data.train.len() {
            return Err(Error::contract(format!(
                "split over n = {} but dataset has {} rows",
                data.split.n(),
                data.train.len()
            )));
        }
        if let Some(b) = &spec.batch {
            b.validate(data.split)?;
        }
        let d = spec.arch.param_count();
        let w = if spec.algorithm == Algorithm::Cld {
            // W_0 ~ N(0, (λβ)^{-1} I)
            let cld = spec.schedule.cld.unwrap();
            let sd = 1.0 / (cld.lambda_reg * cld.beta).sqrt();
            let mut init = rng::stream(spec.seed, rng::streams::INIT);
            let mut w = vec![0.0; d];
            rng::fill_standard_normal(&mut init, &mut w);
            w.iter_mut().for_each(|v| *v *= sd);
            w
        } else {
            models::init_params(&spec.arch, spec.seed)?
        };
        let initial_risks = risks_at(&spec.arch, &w, &data)?;
        let mut snapshots = Vec::new();
        if spec.snapshot_every > 0 {
            snapshots.push(Snapshot { t: 0, params: w.clone() });
        }
        Ok(Runner {
            all: data.train.all_indices(),
            member: data.split.membership(),
            w_prev: w.clone(),
            w,
            t: 0,
            batch_rng: rng::stream(spec.seed, rng::streams::BATCH),
            noise_rng: rng::stream(spec.seed, rng::streams::NOISE),
            rounding_rng: rng::stream(spec.seed, rng::streams::ROUNDING),
            g_full: vec![0.0; d],
            g_prior: vec![0.0; d],
            g_batch: vec![0.0; d],
            diff: vec![0.0; d],
            scratch: vec![0.0; d],
            initial_risks,
            records: Vec::with_capacity(spec.schedule.steps),
            snapshots,
            spec,
            data,
        })
    }

    pub fn params(&self) -> &[f64] {
        &self.w
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.t >= self.spec.schedule.steps
    }

    pub fn spec(&self) -> &RunSpec {
        &self.spec
    }

    /// The unfloored gradient difference `g_t` of the most recent step.
    pub fn last_grad_diff(&self) -> &[f64] {
        &self.diff
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn current_risks(&self) -> Result<Risks> {
        risks_at(&self.spec.arch, &self.w, &self.data)
    }

    /// Advance one step; errors carry the step index.
    pub fn step(&mut self) -> Result<&StepRecord> {
        if self.is_done() {
            return Err(Error::contract("run already finished"));
        }
        let t = self.t + 1;
        let record = self.advance(t).map_err(|e| e.at_step(t))?;
        self.t = t;
        self.records.push(record);
        Ok(self.records.last().unwrap())
    }

    pub fn finish(mut self) -> Result<TrajectoryLog> {
        while !self.is_done() {
            self.step()?;
        }
        let final_risks = self.current_risks()?;
        if let Some(last) = self.records.last_mut() {
            last.risks = Some(final_risks);
        }
        Ok(TrajectoryLog {
            meta: LogMeta {
                algorithm: self.spec.algorithm,
                arch: self.spec.arch.clone(),
                schedule: self.spec.schedule.clone(),
                batch: self.spec.batch,
                n: self.data.split.n(),
                m: self.data.split.m(),
                d: self.w.len(),
                steps: self.spec.schedule.steps,
                seed: self.spec.seed,
                rng_algorithm: RNG_ALGORITHM.to_string(),
                config_digest: None,
            },
            initial_risks: self.initial_risks,
            records: self.records,
            final_risks,
            final_params: self.w,
            snapshots: self.snapshots,
        })
    }

    /// Mean gradient over `rows` into `buf`; an empty view yields zero.
    fn grad_into(&self, rows: &[usize], buf: &mut [f64]) -> Result<f64> {
        if rows.is_empty() {
            buf.fill(0.0);
            return Ok(0.0);
        }
        models::loss_grad_into(&self.spec.arch, &self.w, self.data.train, rows, buf)
    }

    fn full_and_prior(&mut self) -> Result<f64> {
        let mut g_full = std::mem::take(&mut self.g_full);
        let mut g_prior = std::mem::take(&mut self.g_prior);
        let loss = self.grad_into(&self.all, &mut g_full);
        let prior = self.grad_into(self.data.split.prior(), &mut g_prior);
        self.g_full = g_full;
        self.g_prior = g_prior;
        prior?;
        let loss = loss?;
        for ((d, a), b) in self.diff.iter_mut().zip(&self.g_full).zip(&self.g_prior) {
            *d = a - b;
        }
        Ok(loss)
    }

    fn advance(&mut self, t: usize) -> Result<StepRecord> {
        let sched = &self.spec.schedule;
        let gamma = sched.gamma.at(t);
        let eps = sched.eps.as_ref().map(|r| r.at(t));
        let sigma = sched.sigma.as_ref().map(|r| r.at(t));
        let alpha = sched.alpha;
        let cld_settings = sched.cld;
        let total_steps = sched.steps;
        let algorithm = self.spec.algorithm;
        let mut rec = StepRecord { t, gamma, eps, sigma, ..StepRecord::default() };

        // Per-coordinate displacement W_{t−1} − W_t before momentum and noise.
        let mut update = std::mem::take(&mut self.scratch);
        match algorithm {
            Algorithm::Gd | Algorithm::Fgd | Algorithm::Rgd | Algorithm::Gld | Algorithm::Cld => {
                rec.loss = self.full_and_prior()?;
            }
            Algorithm::Sgd | Algorithm::Fsgd | Algorithm::Sgld => {
                let batch =
                    datasets::sample_batch(self.data.split, self.spec.batch.as_ref().unwrap(), &mut self.batch_rng)?;
                let mut g_batch = std::mem::take(&mut self.g_batch);
                let loss = self.grad_into(&batch, &mut g_batch);
                self.g_batch = g_batch;
                rec.loss = loss?;
                if algorithm == Algorithm::Fsgd {
                    // J ∩ B_t as a set of positions in B_t
                    let inter: Vec<usize> = batch.iter().copied().filter(|&i| self.member[i]).collect();
                    rec.empty_intersection = inter.is_empty();
                    let mut g_prior = std::mem::take(&mut self.g_prior);
                    let r = self.grad_into(&inter, &mut g_prior);
                    self.g_prior = g_prior;
                    r?;
                    for ((d, a), b) in self.diff.iter_mut().zip(&self.g_batch).zip(&self.g_prior) {
                        *d = a - b;
                    }
                } else {
                    self.full_and_prior()?;
                    rec.batch_dev_sq = sq_dist(&self.g_batch, &self.g_full);
                }
            }
        }

        match algorithm {
            Algorithm::Gd | Algorithm::Gld => {
                for (u, g) in update.iter_mut().zip(&self.g_full) {
                    *u = gamma * g;
                }
            }
            Algorithm::Sgd | Algorithm::Sgld => {
                for (u, g) in update.iter_mut().zip(&self.g_batch) {
                    *u = gamma * g;
                }
            }
            Algorithm::Fgd | Algorithm::Fsgd => {
                let eps = eps.unwrap();
                let scaled: Vec<f64> = self.diff.iter().map(|g| gamma * g / eps).collect();
                let q = floor_vec(&scaled)?;
                let mut resid = 0.0f64;
                for (k, u) in update.iter_mut().enumerate() {
                    let step = eps * q.0[k] as f64;
                    resid = resid.max((gamma * self.diff[k] - step).abs());
                    *u = gamma * self.g_prior[k] + step;
                }
                rec.quant_residual_max = resid;
            }
            Algorithm::Rgd => {
                let eps = eps.unwrap();
                let scaled: Vec<f64> = self.g_full.iter().map(|g| gamma * g / eps).collect();
                let q = round_vec(&scaled, &mut self.rounding_rng)?;
                let mut resid = 0.0f64;
                for (k, u) in update.iter_mut().enumerate() {
                    *u = eps * q.0[k] as f64;
                    resid = resid.max((gamma * self.g_full[k] - *u).abs());
                }
                rec.quant_residual_max = resid;
            }
            Algorithm::Cld => {
                let cld = cld_settings.unwrap();
                for ((u, g), w) in update.iter_mut().zip(&self.g_full).zip(&self.w) {
                    *u = (g + cld.lambda_reg * w) * cld.dt;
                }
            }
        }

        let gd_sq = sq_norm(&self.diff);
        rec.grad_diff_sq = gd_sq;
        rec.grad_diff_sq_weighted_gamma = gamma * gamma * gd_sq;
        if let Some(eps) = eps {
            rec.grad_diff_sq_weighted_eps = (gamma / eps).powi(2) * gd_sq;
        }
        if algorithm.tracks_lipschitz() {
            rec.lw = models::per_example_grad_norm_max(&self.spec.arch, &self.w, self.data.train)?;
        }
        if let Some(sigma) = sigma {
            let ratio = (gamma / sigma).powi(2);
            rec.gamma_sq_over_sigma_sq = ratio;
            rec.grad_diff_sq_weighted_sigma = ratio * gd_sq;
            rec.lw_sq_weighted = ratio * rec.lw * rec.lw;
        }
        if algorithm == Algorithm::Cld {
            let cld = cld_settings.unwrap();
            let horizon = total_steps as f64 * cld.dt;
            let left = (t - 1) as f64 * cld.dt;
            rec.cld_quadrature = (cld.alpha() * (left - horizon)).exp() * gd_sq * cld.dt;
        }

        // W_t = W_{t−1} − update + α(W_{t−1} − W_{t−2}) + noise
        let noise_scale = match algorithm {
            Algorithm::Gld | Algorithm::Sgld => sigma.unwrap(),
            Algorithm::Cld => {
                let cld = cld_settings.unwrap();
                (2.0 * cld.dt / cld.beta).sqrt()
            }
            _ => 0.0,
        };
        // indexes four buffers while drawing from self.noise_rng
        #[allow(clippy::needless_range_loop)]
        for k in 0..self.w.len() {
            let w = self.w[k];
            let mut next = w - update[k];
            if alpha != 0.0 {
                next += alpha * (w - self.w_prev[k]);
            }
            if noise_scale != 0.0 {
                next += noise_scale * rng::standard_normal(&mut self.noise_rng);
            }
            self.w_prev[k] = w;
            self.w[k] = next;
        }
        self.scratch = update;
        if let Some(k) = self.w.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("parameter {k} became non-finite")));
        }

        let every = self.spec.risk_every;
        if every > 0 && t.is_multiple_of(every) {
            rec.risks = Some(self.current_risks()?);
        }
        let snap = self.spec.snapshot_every;
        if snap > 0 && (t.is_multiple_of(snap) || t == self.spec.schedule.steps) {
            self.snapshots.push(Snapshot { t, params: self.w.clone() });
        }
        Ok(rec)
    }
}

/// Run to completion.
pub fn run(spec: &RunSpec, data: TrainData) -> Result<TrajectoryLog> {
    Runner::new(spec.clone(), data)?.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{sample_prior_indices, synth_blobs};

    fn one_d(features: &[f64]) -> Dataset {
        Dataset::new(features.to_vec(), 1, vec![0; features.len()], 1).unwrap()
    }

    #[test]
    fn hand_traced_fgd_step() {
        // Quadratic toy: ∇f(w, x) = w − x. With w₀ = 0 we need mean(−x) over S
        // to be 0.77 and over S_J to be 0.30.
        let ds = one_d(&[-0.30, -1.24]);
        let split = IndexSplit::from_prior(2, vec![0]).unwrap();
        let data = TrainData { train: &ds, split: &split, test: None };
        let spec = RunSpec::new(Algorithm::Fgd, ModelArch::quadratic(1), Schedule::constant(1, 1.0).with_eps(0.2), 0);
        let mut runner = Runner::new(spec, data).unwrap();
        runner.w = vec![0.0];
        runner.w_prev = vec![0.0];
        let rec = runner.step().unwrap().clone();
        assert!((runner.params()[0] + 0.70).abs() < 1e-12);
        assert!((rec.grad_diff_sq - 0.47f64.powi(2)).abs() < 1e-12);
        assert!((rec.grad_diff_sq_weighted_eps - (0.47f64 / 0.2).powi(2)).abs() < 1e-9);
    }

    #[test]
    fn large_eps_gives_prior_step() {
        let ds = synth_blobs(40, 2, 2, 3.0, 1).unwrap();
        let split = sample_prior_indices(40, 20, 1).unwrap();
        let data = TrainData { train: &ds, split: &split, test: None };
        let arch = ModelArch::linear(2, 2);
        let spec = RunSpec::new(Algorithm::Fgd, arch.clone(), Schedule::constant(1, 0.1).with_eps(1e6), 3);
        let log = run(&spec, data).unwrap();
        let w0 = models::init_params(&arch, 3).unwrap();
        let g = models::loss_grad(&arch, &w0, &ds, split.prior()).unwrap().grad;
        for k in 0..w0.len() {
            assert!((log.final_params[k] - (w0[k] - 0.1 * g[k])).abs() < 1e-15);
        }
    }

    #[test]
    fn fgd_is_bit_deterministic() {
        let ds = synth_blobs(60, 2, 2, 2.0, 4).unwrap();
        let split = sample_prior_indices(60, 30, 4).unwrap();
        let data = TrainData { train: &ds, split: &split, test: None };
        let spec =
            RunSpec::new(Algorithm::Fgd, ModelArch::mlp(2, &[4], 2), Schedule::constant(30, 0.1).with_eps(1e-3), 9);
        let a = run(&spec, data).unwrap();
        let b = run(&spec, data).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gld_without_gradient_is_a_random_walk() {
        let ds = one_d(&[0.0, 0.0]);
        let split = IndexSplit::from_prior(2, vec![1]).unwrap();
        let data = TrainData { train: &ds, split: &split, test: None };
        let mut sched = Schedule::constant(4, 0.0).with_sigma(0.5);
        sched.sigma = Some(Rate::List(vec![0.1, 0.2, 0.3, 0.4]));
        let spec = RunSpec::new(Algorithm::Gld, ModelArch::quadratic(1), sched, 2);
        let log = run(&spec, data).unwrap();
        assert_eq!(log.records.len(), 4);
        assert_eq!(log.sums().lw_sq_weighted, 0.0);
    }

    #[test]
    fn sgld_rejects_wrong_batch_mode() {
        let spec =
            RunSpec::new(Algorithm::Sgld, ModelArch::linear(2, 2), Schedule::constant(3, 0.1).with_sigma(0.1), 0)
                .with_batch(BatchSpec { size: 4, mode: BatchMode::WithoutReplacement });
        assert!(matches!(spec.validate(), Err(Error::Contract(_))));
    }

    #[test]
    fn missing_eps_is_a_config_error() {
        let spec = RunSpec::new(Algorithm::Fgd, ModelArch::linear(2, 2), Schedule::constant(3, 0.1), 0);
        match spec.validate() {
            Err(Error::Config { path, .. }) => assert_eq!(path, "schedule.eps"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_steps_keeps_initial_risks() {
        let ds = synth_blobs(20, 2, 2, 3.0, 0).unwrap();
        let split = sample_prior_indices(20, 5, 0).unwrap();
        let data = TrainData { train: &ds, split: &split, test: Some(&ds) };
        let spec = RunSpec::new(Algorithm::Gd, ModelArch::linear(2, 2), Schedule::constant(0, 0.1), 0);
        let log = run(&spec, data).unwrap();
        assert!(log.records.is_empty());
        assert_eq!(log.initial_risks, log.final_risks);
        assert_eq!(log.final_risks.test, Some(log.final_risks.train_s));
    }

    #[test]
    fn fsgd_flags_empty_intersection() {
        let ds = synth_blobs(20, 2, 2, 3.0, 0).unwrap();
        let split = IndexSplit::from_prior(20, vec![0]).unwrap();
        let data = TrainData { train: &ds, split: &split, test: None };
        let spec =
            RunSpec::new(Algorithm::Fsgd, ModelArch::linear(2, 2), Schedule::constant(20, 0.1).with_eps(1e-4), 0)
                .with_batch(BatchSpec { size: 2, mode: BatchMode::WithoutReplacement });
        let log = run(&spec, data).unwrap();
        assert!(log.summary().empty_intersection_steps > 0);
    }

    #[test]
    fn step_index_attached_to_errors() {
        let ds = one_d(&[1e300, 1e300]);
        let split = IndexSplit::from_prior(2, vec![0]).unwrap();
        let data = TrainData { train: &ds, split: &split, test: None };
        let spec = RunSpec::new(Algorithm::Gd, ModelArch::quadratic(1), Schedule::constant(5, 1e10), 0);
        match run(&spec, data) {
            Err(Error::Step { step, .. }) => assert!(step >= 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_header_is_stable() {
        let ds = synth_blobs(10, 2, 2, 3.0, 0).unwrap();
        let split = sample_prior_indices(10, 5, 0).unwrap();
        let data = TrainData { train: &ds, split: &split, test: None };
        let spec = RunSpec::new(Algorithm::Fgd, ModelArch::linear(2, 2), Schedule::constant(2, 0.1).with_eps(0.01), 0);
        let mut buf = Vec::new();
        run(&spec, data).unwrap().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap().split(',').count(), CSV_COLUMNS.len());
        assert_eq!(lines.count(), 2);
    }
}
