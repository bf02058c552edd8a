//! Multi-run experiments: prior-size sweeps, random-label curves, floored vs
//! plain comparisons and the high-probability validity check.
//!
//! Runs fan out over rayon; results are gathered in input order, so every
//! table is independent of thread scheduling.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{certify, BoundReport};
use crate::config::{DataSource, Materialized, RunConfig};
use crate::error::{Error, Result};
use crate::optimizers::{Algorithm, Runner, TrainData, TrajectoryLog};
use crate::scalar_bounds::CatoniParams;

/// Run `cfg` once, stamping the config digest into the log.
pub fn execute(cfg: &RunConfig) -> Result<(TrajectoryLog, Materialized)> {
    let data = cfg.materialize()?;
    let train = TrainData { train: &data.train, split: &data.split, test: data.test.as_ref() };
    let mut log = Runner::new(cfg.run_spec(), train)?.finish()?;
    log.meta.config_digest = Some(cfg.digest());
    Ok((log, data))
}

/// Certify a finished run with the config's theorem and parameters.
pub fn certify_log(cfg: &RunConfig, log: &TrajectoryLog) -> Result<BoundReport> {
    let params = CatoniParams::new(cfg.certify.eta, log.meta.n, log.meta.m, cfg.certify.delta)?;
    certify(&log.summary(), cfg.theorem(), &params, &cfg.certify.extras)
}

pub fn execute_and_certify(cfg: &RunConfig) -> Result<(TrajectoryLog, BoundReport)> {
    let (log, _) = execute(cfg)?;
    let report = certify_log(cfg, &log)?;
    Ok((log, report))
}

/// Aggregate over seeds at one sweep value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub runs: usize,
    pub sum_mean: f64,
    pub sum_std: f64,
    pub total_mean: f64,
    pub total_std: f64,
    pub train_i_mean: f64,
    pub train_i_std: f64,
    pub train_s_mean: f64,
    pub test_mean: Option<f64>,
    pub test_std: Option<f64>,
    pub vacuous_runs: usize,
    /// `seed: message` for runs that failed
    pub failures: Vec<String>,
}

/// Mean and sample standard deviation; a single value has deviation 0.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn aggregate(value: f64, seeds: &[u64], results: Vec<Result<BoundReport>>) -> SweepRow {
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (seed, r) in seeds.iter().zip(results) {
        match r {
            Ok(rep) => reports.push(rep),
            Err(e) => failures.push(format!("{seed}: {e}")),
        }
    }
    let col = |f: &dyn Fn(&BoundReport) -> f64| -> Vec<f64> { reports.iter().map(f).collect() };
    let (sum_mean, sum_std) = mean_std(&col(&|r| r.inputs.sum));
    let (total_mean, total_std) = mean_std(&col(&|r| r.breakdown.total));
    let (train_i_mean, train_i_std) = mean_std(&col(&|r| r.risks.train_i));
    let (train_s_mean, _) = mean_std(&col(&|r| r.risks.train_s));
    let tests: Option<Vec<f64>> = reports.iter().map(|r| r.risks.test).collect();
    let (test_mean, test_std) = match tests {
        Some(t) if !t.is_empty() => {
            let (m, s) = mean_std(&t);
            (Some(m), Some(s))
        }
        _ => (None, None),
    };
    SweepRow {
        value,
        runs: reports.len(),
        sum_mean,
        sum_std,
        total_mean,
        total_std,
        train_i_mean,
        train_i_std,
        train_s_mean,
        test_mean,
        test_std,
        vacuous_runs: reports.iter().filter(|r| r.vacuous).count(),
        failures,
    }
}

/// Run `make(value, seed)` for every pair, in parallel, keeping failures.
pub fn sweep_collect<F>(values: &[f64], seeds: &[u64], make: F) -> Vec<SweepRow>
where
    F: Fn(f64, u64) -> Result<BoundReport> + Sync,
{
    let jobs: Vec<(usize, u64)> = (0..values.len()).flat_map(|i| seeds.iter().map(move |&s| (i, s))).collect();
    let mut results: Vec<Result<BoundReport>> = jobs.par_iter().map(|&(i, s)| make(values[i], s)).collect();
    let mut rows = Vec::with_capacity(values.len());
    for &v in values.iter() {
        let rest = results.split_off(seeds.len());
        rows.push(aggregate(v, seeds, std::mem::replace(&mut results, rest)));
    }
    rows
}

fn fail_fast(axis: &str, rows: Vec<SweepRow>) -> Result<Vec<SweepRow>> {
    for row in &rows {
        if let Some(first) = row.failures.first() {
            return Err(Error::Run {
                context: format!("{axis} = {}, seed {}", row.value, first.split(':').next().unwrap_or("?")),
                source: Box::new(Error::contract(first.clone())),
            });
        }
    }
    Ok(rows)
}

pub fn sweep_m_collect(base: &RunConfig, m_values: &[usize], seeds: &[u64]) -> Result<Vec<SweepRow>> {
    if m_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::domain("m values must be strictly increasing"));
    }
    if let DataSource::Blobs { n, .. } = base.data {
        if let Some(&m) = m_values.iter().find(|&&m| m >= n) {
            return Err(Error::domain(format!("m = {m} must be < n = {n}")));
        }
    }
    let values: Vec<f64> = m_values.iter().map(|&m| m as f64).collect();
    Ok(sweep_collect(&values, seeds, |m, seed| {
        let mut cfg = base.with_seed(seed);
        cfg.split.m = m as usize;
        execute_and_certify(&cfg).map(|(_, r)| r)
    }))
}

/// Per `m`: mean ± std over seeds of the theorem's logged sum and bound total.
pub fn sweep_m(base: &RunConfig, m_values: &[usize], seeds: &[u64]) -> Result<Vec<SweepRow>> {
    fail_fast("m", sweep_m_collect(base, m_values, seeds)?)
}

pub fn random_label_collect(base: &RunConfig, portions: &[f64], seeds: &[u64]) -> Result<Vec<SweepRow>> {
    if let Some(p) = portions.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::domain(format!("portion {p} outside [0, 1]")));
    }
    Ok(sweep_collect(portions, seeds, |p, seed| {
        let mut cfg = base.with_seed(seed);
        cfg.label_noise = p;
        execute_and_certify(&cfg).map(|(_, r)| r)
    }))
}

/// Per label-noise portion: final risks and bound totals over seeds.
pub fn random_label_curve(base: &RunConfig, portions: &[f64], seeds: &[u64]) -> Result<Vec<SweepRow>> {
    fail_fast("portion", random_label_collect(base, portions, seeds)?)
}

/// The same runs certified at several `η`.
pub fn sweep_eta(base: &RunConfig, etas: &[f64], seeds: &[u64]) -> Result<Vec<SweepRow>> {
    let logs: Vec<Result<TrajectoryLog>> =
        seeds.par_iter().map(|&s| execute(&base.with_seed(s)).map(|(l, _)| l)).collect();
    let rows = etas
        .iter()
        .map(|&eta| {
            let mut cfg = base.clone();
            cfg.certify.eta = eta;
            let results = logs
                .iter()
                .map(|l| match l {
                    Ok(log) => certify_log(&cfg, log),
                    Err(e) => Err(Error::contract(e.to_string())),
                })
                .collect();
            aggregate(eta, seeds, results)
        })
        .collect();
    Ok(rows)
}

pub const SWEEP_CSV_COLUMNS: [&str; 12] = [
    "sum_mean",
    "sum_std",
    "total_mean",
    "total_std",
    "train_i_mean",
    "train_i_std",
    "train_s_mean",
    "test_mean",
    "test_std",
    "runs",
    "vacuous_runs",
    "failures",
];

/// `axis,` followed by [`SWEEP_CSV_COLUMNS`].
pub fn write_sweep_csv<W: Write>(axis: &str, rows: &[SweepRow], mut out: W) -> Result<()> {
    writeln!(out, "{axis},{}", SWEEP_CSV_COLUMNS.join(","))?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.value,
            r.sum_mean,
            r.sum_std,
            r.total_mean,
            r.total_std,
            r.train_i_mean,
            r.train_i_std,
            r.train_s_mean,
            opt(r.test_mean),
            opt(r.test_std),
            r.runs,
            r.vacuous_runs,
            r.failures.len(),
        )?;
    }
    Ok(())
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, _) = mean_std(&rx);
    let (my, _) = mean_std(&ry);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantPair {
    FgdVsGd,
    FsgdVsSgd,
}

impl VariantPair {
    fn algorithms(self) -> (Algorithm, Algorithm) {
        match self {
            VariantPair::FgdVsGd => (Algorithm::Fgd, Algorithm::Gd),
            VariantPair::FsgdVsSgd => (Algorithm::Fsgd, Algorithm::Sgd),
        }
    }
}

/// The plain counterpart of a floored config.
pub fn baseline_for(cfg: &RunConfig) -> Result<RunConfig> {
    let algorithm = match cfg.algorithm {
        Algorithm::Fgd => Algorithm::Gd,
        Algorithm::Fsgd => Algorithm::Sgd,
        other => return Err(Error::contract(format!("{other} has no plain counterpart"))),
    };
    let mut base = cfg.clone();
    base.algorithm = algorithm;
    base.schedule.eps = None;
    Ok(base)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceRow {
    pub seed: u64,
    pub t: usize,
    /// `‖W_t^floored − W_t^plain‖∞`
    pub linf: f64,
    pub l2: f64,
    pub train_s_delta: Option<f64>,
    pub test_delta: Option<f64>,
}

/// Step-by-step distance between a floored run and its plain counterpart on
/// the same data, split, initialisation and batches.
pub fn compare_variants(
    floored: &RunConfig,
    plain: &RunConfig,
    pair: VariantPair,
    seeds: &[u64],
) -> Result<Vec<DivergenceRow>> {
    let (fa, pa) = pair.algorithms();
    if floored.algorithm != fa || plain.algorithm != pa {
        return Err(Error::contract(format!("{pair:?} compares {fa} with {pa}")));
    }
    let (fs, ps) = (&floored.schedule, &plain.schedule);
    if fs.steps != ps.steps || fs.gamma != ps.gamma || fs.alpha != ps.alpha {
        return Err(Error::contract("both sides must share steps, learning rates and momentum"));
    }
    if floored.batch != plain.batch
        || floored.model != plain.model
        || floored.data != plain.data
        || floored.split != plain.split
    {
        return Err(Error::contract("both sides must share model, data, split and batches"));
    }
    let per_seed: Vec<Result<Vec<DivergenceRow>>> = seeds
        .par_iter()
        .map(|&seed| {
            let fcfg = floored.with_seed(seed);
            let data = fcfg.materialize()?;
            let train = TrainData { train: &data.train, split: &data.split, test: data.test.as_ref() };
            let mut a = Runner::new(fcfg.run_spec(), train)?;
            let mut b = Runner::new(plain.with_seed(seed).run_spec(), train)?;
            let every = floored.risk_every;
            let steps = floored.schedule.steps;
            let mut rows = Vec::with_capacity(steps);
            while !a.is_done() {
                a.step()?;
                b.step()?;
                let t = a.t();
                let (mut linf, mut l2) = (0.0f64, 0.0);
                for (x, y) in a.params().iter().zip(b.params()) {
                    linf = linf.max((x - y).abs());
                    l2 += (x - y) * (x - y);
                }
                let (train_s_delta, test_delta) = if (every > 0 && t % every == 0) || t == steps {
                    let (ra, rb) = (a.current_risks()?, b.current_risks()?);
                    (Some(ra.train_s - rb.train_s), ra.test.zip(rb.test).map(|(x, y)| x - y))
                } else {
                    (None, None)
                };
                rows.push(DivergenceRow { seed, t, linf, l2: l2.sqrt(), train_s_delta, test_delta });
            }
            Ok(rows)
        })
        .collect();
    let mut out = Vec::new();
    for (seed, r) in seeds.iter().zip(per_seed) {
        out.extend(r.map_err(|e| e.in_run(format!("seed {seed}")))?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidityRun {
    pub seed: u64,
    pub total: f64,
    pub test_estimate: f64,
    /// one-sided Hoeffding upper confidence limit on the true risk
    pub test_upper: f64,
    pub violated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub runs: Vec<ValidityRun>,
    pub violations: usize,
    pub violation_rate: f64,
    /// `δ + 3·√(δ(1−δ)/k)`
    pub allowed_rate: f64,
    pub fresh_size: usize,
    pub ci_alpha: f64,
    pub max_total: f64,
    pub pass: bool,
}

/// Train on `seeds.len()` independent samples and count how often the
/// certificate falls below the true risk, estimated on a fresh sample of
/// `fresh_size` points. A run counts as a violation when the Hoeffding upper
/// limit `estimate + √(ln(1/α)/(2N))` exceeds the bound, which can only
/// overcount violations.
pub fn validity_experiment(cfg: &RunConfig, seeds: &[u64], fresh_size: usize, ci_alpha: f64) -> Result<ValidityReport> {
    if seeds.is_empty() || fresh_size == 0 || !(ci_alpha > 0.0 && ci_alpha < 1.0) {
        return Err(Error::domain("need seeds, a fresh sample and ci_alpha in (0, 1)"));
    }
    let mut cfg = cfg.clone();
    match &mut cfg.data {
        DataSource::Blobs { test_size, .. } => *test_size = fresh_size,
        _ => return Err(Error::contract("validity needs a generative data source (blobs)")),
    }
    let half_width = ((1.0 / ci_alpha).ln() / (2.0 * fresh_size as f64)).sqrt();
    let runs: Vec<Result<ValidityRun>> = seeds
        .par_iter()
        .map(|&seed| {
            let (_, report) =
                execute_and_certify(&cfg.with_seed(seed)).map_err(|e| e.in_run(format!("seed {seed}")))?;
            let test = report.risks.test.expect("fresh sample requested");
            let upper = test + half_width;
            Ok(ValidityRun {
                seed,
                total: report.breakdown.total,
                test_estimate: test,
                test_upper: upper,
                violated: upper > report.breakdown.total,
            })
        })
        .collect();
    let runs: Vec<ValidityRun> = runs.into_iter().collect::<Result<_>>()?;
    let k = runs.len() as f64;
    let violations = runs.iter().filter(|r| r.violated).count();
    let delta = cfg.certify.delta;
    let allowed_rate = delta + 3.0 * (delta * (1.0 - delta) / k).sqrt();
    let violation_rate = violations as f64 / k;
    Ok(ValidityReport {
        max_total: runs.iter().map(|r| r.total).fold(0.0, f64::max),
        runs,
        violations,
        violation_rate,
        allowed_rate,
        fresh_size,
        ci_alpha,
        pass: violation_rate <= allowed_rate,
    })
}
