//! Exact-enumeration and Monte Carlo checks of the concentration lemmas and
//! proof identities the certificates rest on.
//!
//! Every verifier returns a [`VerificationReport`]. Monte Carlo points carry a
//! 4σ sampling band; exact points carry an absolute tolerance of `1e-12`
//! unless stated otherwise. Trials run in a fixed number of chunks, each with
//! its own stream, so results do not depend on the thread count.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Binomial, Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{self, Dataset, IndexSplit};
use crate::discrete_noise::{self as dn, GridNoiseSpec};
use crate::error::{Error, Result};
use crate::models::{self, ModelArch};
use crate::optimizers::{Algorithm, CldSettings, RunSpec, Runner, Schedule, TrainData};
use crate::rng::{self, Stream};
use crate::scalar_bounds::{self as sb, CatoniParams};

pub const SAMPLING_SIGMAS: f64 = 4.0;
pub const EXACT_TOL: f64 = 1e-12;
/// Tolerance of the per-sample Catoni identity.
pub const IDENTITY_TOL: f64 = 1e-13;
/// Constant of the bounded-norm to norm-subGaussian step.
pub const NORM_SUBG_C_CLAIM: f64 = 1.7;
/// Constant in the with-replacement tail `2Td exp(−εm/(6.3 L²))`.
pub const NORM_SUBG_TAIL_CONST: f64 = 6.3;

const CHUNKS: usize = 64;

// stream tags, one per verifier
const TAG_MCD: u64 = 1;
const TAG_CATONI: u64 = 2;
const TAG_DATA_PAC: u64 = 3;
const TAG_NORM: u64 = 4;
const TAG_EEXP: u64 = 5;
const TAG_CHAIN: u64 = 6;
const TAG_CLD: u64 = 7;
const TAG_OU: u64 = 8;
const TAG_VARIANCE: u64 = 9;

pub fn norm_subgaussian_constant() -> f64 {
    (2.0 / std::f64::consts::LN_2).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// `observed ≤ claimed + slack`
    AtMost,
    /// `|observed − claimed| ≤ slack`
    Equal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub label: String,
    pub claimed: f64,
    pub observed: f64,
    pub slack: f64,
    pub relation: Relation,
    pub ok: bool,
}

impl GridPoint {
    pub fn at_most(label: impl Into<String>, claimed: f64, observed: f64, slack: f64) -> Self {
        let mut p = GridPoint { label: label.into(), claimed, observed, slack, relation: Relation::AtMost, ok: false };
        p.ok = p.holds();
        p
    }

    pub fn equal(label: impl Into<String>, claimed: f64, observed: f64, tol: f64) -> Self {
        let mut p =
            GridPoint { label: label.into(), claimed, observed, slack: tol, relation: Relation::Equal, ok: false };
        p.ok = p.holds();
        p
    }

    /// Recompute the verdict from the stored numbers.
    pub fn holds(&self) -> bool {
        match self.relation {
            Relation::AtMost => self.observed <= self.claimed + self.slack,
            Relation::Equal => (self.observed - self.claimed).abs() <= self.slack,
        }
    }

    /// Distance to failure; negative means violated.
    pub fn margin(&self) -> f64 {
        let m = match self.relation {
            Relation::AtMost => self.claimed + self.slack - self.observed,
            Relation::Equal => self.slack - (self.observed - self.claimed).abs(),
        };
        if m.is_nan() {
            f64::NEG_INFINITY
        } else {
            m
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub lemma_id: String,
    pub description: String,
    /// sampling regime of the index sequence, where one is involved
    pub regime: String,
    /// Monte Carlo trials or size of the enumeration
    pub trials: u64,
    pub slack_rule: String,
    pub points: Vec<GridPoint>,
    /// counterexample found while checking the premises
    pub witness: Option<String>,
    pub pass: bool,
}

impl VerificationReport {
    fn new(lemma_id: &str, description: impl Into<String>, regime: &str, trials: u64, slack_rule: &str) -> Self {
        VerificationReport {
            lemma_id: lemma_id.to_string(),
            description: description.into(),
            regime: regime.to_string(),
            trials,
            slack_rule: slack_rule.to_string(),
            points: Vec::new(),
            witness: None,
            pass: true,
        }
    }

    fn push(&mut self, p: GridPoint) {
        self.pass &= p.ok;
        self.points.push(p);
    }

    fn fail_with(&mut self, witness: String) {
        self.pass = false;
        self.witness = Some(witness);
    }

    /// `pass` recomputed from the points and the witness.
    pub fn recheck(&self) -> bool {
        self.witness.is_none() && self.points.iter().all(GridPoint::holds)
    }

    /// The point closest to (or furthest past) failure.
    pub fn worst(&self) -> Option<&GridPoint> {
        self.points.iter().min_by(|a, b| a.margin().total_cmp(&b.margin()))
    }

    pub fn summary_line(&self) -> String {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        let detail = match (&self.witness, self.worst()) {
            (Some(w), _) => format!("witness: {w}"),
            (None, Some(p)) => format!(
                "worst {}: observed {:.6e} vs claimed {:.6e} (slack {:.2e})",
                p.label, p.observed, p.claimed, p.slack
            ),
            (None, None) => "no points".to_string(),
        };
        format!(
            "{verdict} {:<18} {} | {} points, {} trials, slack: {} | {detail}",
            self.lemma_id,
            self.description,
            self.points.len(),
            self.trials,
            self.slack_rule
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Run `f` once per trial over a fixed chunking of independent streams and
/// return the results in trial order.
fn par_trials<T, F>(trials: usize, seed: u64, tag: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut Stream) -> T + Sync,
{
    (0..CHUNKS)
        .into_par_iter()
        .map(|c| {
            let (lo, hi) = (trials * c / CHUNKS, trials * (c + 1) / CHUNKS);
            let mut r = rng::stream(seed, rng::streams::VERIFY + tag * 1000 + c as u64);
            (lo..hi).map(|_| f(&mut r)).collect::<Vec<T>>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

fn binomial_slack(p: f64, trials: usize) -> f64 {
    let p = p.clamp(0.0, 1.0);
    SAMPLING_SIGMAS * (p * (1.0 - p) / trials as f64).sqrt()
}

fn mean_slack(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, SAMPLING_SIGMAS * (var / n).sqrt())
}

fn frac(values: &[f64], pred: impl Fn(f64) -> bool) -> f64 {
    values.iter().filter(|&&v| pred(v)).count() as f64 / values.len() as f64
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn mean_of(rows: &[Vec<f64>], idx: impl Iterator<Item = usize> + Clone) -> Vec<f64> {
    let dim = rows.first().map_or(0, Vec::len);
    let mut out = vec![0.0; dim];
    let mut count = 0usize;
    for i in idx {
        count += 1;
        for (o, v) in out.iter_mut().zip(&rows[i]) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= count as f64);
    out
}

// ---------------------------------------------------------------------------
// variance of a without-replacement mean

fn check_wor(vectors: &[Vec<f64>], m: usize) -> Result<usize> {
    let n = vectors.len();
    if m == 0 || m > n {
        return Err(Error::domain(format!("need 1 ≤ m ≤ n, got m = {m}, n = {n}")));
    }
    let dim = vectors[0].len();
    if let Some(i) = vectors.iter().position(|v| v.len() != dim) {
        return Err(Error::contract(format!("vector {i} has length {}, expected {dim}", vectors[i].len())));
    }
    Ok(n)
}

/// `E_J ‖μ − (1/m) Σ_k g[J_k]‖²` for `J` drawn without replacement, by the
/// closed form `(σ̄²/m)·(n−m)/(n−1)` on the centred vectors.
pub fn exact_variance_wor(gradients: &[Vec<f64>], m: usize) -> Result<f64> {
    let n = check_wor(gradients, m)?;
    if m == n {
        return Ok(0.0);
    }
    let mu = mean_of(gradients, 0..n);
    let spread = gradients.iter().map(|g| sq_dist(g, &mu)).sum::<f64>() / n as f64;
    Ok(spread / m as f64 * (n - m) as f64 / (n - 1) as f64)
}

/// `E_J ‖(1/m) Σ_k g[J_k]‖²` without centring:
/// `(1/m) E‖g[J_1]‖² + (m−1)/(m n (n−1)) (‖Σ g‖² − Σ ‖g‖²)`.
pub fn wor_second_moment(gradients: &[Vec<f64>], m: usize) -> Result<f64> {
    let n = check_wor(gradients, m)?;
    let diag: f64 = gradients.iter().map(|g| sq_norm(g)).sum();
    let first = diag / (n as f64 * m as f64);
    if m == 1 {
        return Ok(first);
    }
    let total = sq_norm(&mean_of(gradients, 0..n)) * (n * n) as f64;
    Ok(first + (m - 1) as f64 / (m as f64 * n as f64 * (n - 1) as f64) * (total - diag))
}

/// Average over all `C(n, m)` subsets; `n ≤ 20`.
pub fn enumerate_variance_wor(gradients: &[Vec<f64>], m: usize) -> Result<f64> {
    let n = check_wor(gradients, m)?;
    if n > 20 {
        return Err(Error::domain(format!("enumeration over 2^{n} masks refused; n must be ≤ 20")));
    }
    let mu = mean_of(gradients, 0..n);
    let (mut sum, mut count) = (0.0, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != m {
            continue;
        }
        let sub = mean_of(gradients, (0..n).filter(|i| mask >> i & 1 == 1));
        sum += sq_dist(&sub, &mu);
        count += 1;
    }
    Ok(sum / count as f64)
}

/// `4L²/m` with `L = max_i ‖g_i‖`.
pub fn variance_bound_wor(gradients: &[Vec<f64>], m: usize) -> Result<f64> {
    check_wor(gradients, m)?;
    let l_sq = gradients.iter().map(|g| sq_norm(g)).fold(0.0, f64::max);
    Ok(4.0 * l_sq / m as f64)
}

/// Closed form against enumeration for every `1 ≤ m ≤ n ≤ max_n` on random
/// (uncentred) vectors of dimension 3.
pub fn verify_variance_wor(max_n: usize, seed: u64) -> Result<VerificationReport> {
    let mut r = rng::stream(seed, rng::streams::VERIFY + TAG_VARIANCE * 1000);
    let mut report = VerificationReport::new(
        "variance-wor",
        "closed-form variance of a without-replacement mean vs enumeration, and the 4L²/m bound",
        "J without replacement",
        0,
        "1e-12 relative to max(1, value)",
    );
    let mut enumerated = 0u64;
    for n in 1..=max_n {
        for m in 1..=n {
            let g: Vec<Vec<f64>> =
                (0..n).map(|_| (0..3).map(|_| rng::standard_normal(&mut r) + 0.5).collect()).collect();
            let closed = exact_variance_wor(&g, m)?;
            let brute = enumerate_variance_wor(&g, m)?;
            enumerated += (0u32..(1 << n)).filter(|k| k.count_ones() as usize == m).count() as u64;
            let tol = EXACT_TOL * brute.abs().max(1.0);
            report.push(GridPoint::equal(format!("n={n} m={m} closed"), brute, closed, tol));
            let mu = mean_of(&g, 0..n);
            let centred: Vec<Vec<f64>> = g.iter().map(|v| v.iter().zip(&mu).map(|(a, b)| a - b).collect()).collect();
            report.push(GridPoint::equal(format!("n={n} m={m} two-term"), brute, wor_second_moment(&centred, m)?, tol));
            report.push(GridPoint::at_most(format!("n={n} m={m} 4L²/m"), variance_bound_wor(&g, m)?, closed, 0.0));
        }
    }
    report.trials = enumerated;
    Ok(report)
}

// ---------------------------------------------------------------------------
// modified McDiarmid for without-replacement sequences

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McdForm {
    /// `exp(−2ε²/(m c²))`
    Stated,
    /// `exp(−2ε²/(c² Σ_{i≤m} ((n−i−1)/(n−i))²))`, the form the proof reaches
    ProofTight,
}

impl McdForm {
    pub fn tail(self, eps: f64, n: usize, m: usize, c: f64) -> f64 {
        let denom = match self {
            McdForm::Stated => m as f64 * c * c,
            McdForm::ProofTight => c * c * (1..=m).map(|i| ((n - i - 1) as f64 / (n - i) as f64).powi(2)).sum::<f64>(),
        };
        if denom == 0.0 {
            return if eps > 0.0 { 0.0 } else { 1.0 };
        }
        (-2.0 * eps * eps / denom).exp()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McdiarmidSetup {
    pub n: usize,
    pub m: usize,
    /// claimed bounded-difference constant
    pub c: f64,
    pub eps_grid: Vec<f64>,
    pub trials: usize,
    pub form: McdForm,
    /// `E[Φ(J)]` if known; otherwise estimated from an independent batch
    pub exact_mean: Option<f64>,
    /// random permutations and adjacent pairs used to test the premises
    pub structure_checks: usize,
    pub seed: u64,
}

impl McdiarmidSetup {
    pub fn new(n: usize, m: usize, c: f64, eps_grid: Vec<f64>) -> Self {
        McdiarmidSetup {
            n,
            m,
            c,
            eps_grid,
            trials: 100_000,
            form: McdForm::Stated,
            exact_mean: None,
            structure_checks: 2_000,
            seed: 0,
        }
    }
}

fn draw_wor(r: &mut Stream, n: usize, m: usize) -> Vec<usize> {
    index::sample(r, n, m).into_vec()
}

/// Check `Φ(J) − E[Φ] > ε` frequencies against the modified McDiarmid tail.
///
/// Order independence and the bounded-difference constant are tested first
/// on random permutations and random neighbouring sequences; a violation
/// fails the report with a witness and skips the tail check.
pub fn verify_mcdiarmid_wor<F>(phi: F, setup: &McdiarmidSetup) -> Result<VerificationReport>
where
    F: Fn(&[usize]) -> f64 + Sync,
{
    let McdiarmidSetup { n, m, c, trials, form, .. } = *setup;
    if m == 0 || m >= n {
        return Err(Error::domain(format!("need 1 ≤ m < n, got m = {m}, n = {n}")));
    }
    if !(c >= 0.0 && c.is_finite()) || trials == 0 {
        return Err(Error::domain("c must be finite and non-negative, trials positive"));
    }
    let mut report = VerificationReport::new(
        "new-mcd",
        format!("order-independent Φ on [{n}]^{m}, c = {c:.4e}, {form:?} tail"),
        "J without replacement",
        trials as u64,
        "4σ binomial at the claimed tail",
    );

    let mut r = rng::stream(setup.seed, rng::streams::VERIFY + TAG_MCD * 1000 + 999);
    for _ in 0..setup.structure_checks {
        let j = draw_wor(&mut r, n, m);
        let v = phi(&j);
        if !(v.is_finite() && v >= 0.0) {
            report.fail_with(format!("Φ({j:?}) = {v} is not a finite non-negative value"));
            return Ok(report);
        }
        let mut perm = j.clone();
        perm.shuffle(&mut r);
        let vp = phi(&perm);
        if (vp - v).abs() > 1e-12 * (1.0 + v.abs()) {
            report.fail_with(format!("order dependence: Φ({j:?}) = {v} but Φ({perm:?}) = {vp}"));
            return Ok(report);
        }
        let pos = r.random_range(0..m);
        let fresh = loop {
            let x = r.random_range(0..n);
            if !j.contains(&x) {
                break x;
            }
        };
        let mut nb = j.clone();
        nb[pos] = fresh;
        let vn = phi(&nb);
        if (vn - v).abs() > c * (1.0 + 1e-12) + 1e-15 {
            report.fail_with(format!(
                "bounded difference broken: |Φ({j:?}) − Φ({nb:?})| = {:.6e} > c = {c:.6e}",
                (vn - v).abs()
            ));
            return Ok(report);
        }
    }

    let mean = match setup.exact_mean {
        Some(mu) => mu,
        None => {
            let est = par_trials(trials, setup.seed ^ 0x6d63_6430, TAG_MCD, |r| phi(&draw_wor(r, n, m)));
            est.iter().sum::<f64>() / trials as f64
        }
    };
    let values = par_trials(trials, setup.seed, TAG_MCD, |r| phi(&draw_wor(r, n, m)) - mean);
    for &eps in &setup.eps_grid {
        let claimed = form.tail(eps, n, m, c);
        let observed = frac(&values, |v| v > eps);
        report.push(GridPoint::at_most(format!("eps={eps:.4e}"), claimed, observed, binomial_slack(claimed, trials)));
    }
    Ok(report)
}

/// Per-example gradients along a fixed trajectory, stacked over steps with
/// weight `√w_t` so that `Σ_t w_t ‖a_t − b_t‖²` becomes a squared Euclidean
/// distance between stacked rows.
#[derive(Clone, Debug, PartialEq)]
pub struct StackedGradients {
    /// one row of length `T·d` per example
    pub rows: Vec<Vec<f64>>,
    pub steps: usize,
    pub d: usize,
    /// `Σ_t w_t L_t²` with `L_t = max_i ‖∇f(W_{t−1}, z_i)‖`
    pub weighted_lipschitz_sq: f64,
    /// `max_t L_t`
    pub max_lipschitz: f64,
}

impl StackedGradients {
    /// `path[t]` is `W_t` for `t = 0..T−1`; `weights[t]` multiplies step `t+1`.
    pub fn from_path(arch: &ModelArch, data: &Dataset, path: &[Vec<f64>], weights: &[f64]) -> Result<Self> {
        if path.len() != weights.len() {
            return Err(Error::contract(format!("{} iterates but {} weights", path.len(), weights.len())));
        }
        let d = arch.param_count();
        let n = data.len();
        let mut rows = vec![Vec::with_capacity(d * path.len()); n];
        let (mut wl, mut max_l) = (0.0, 0.0f64);
        for (w, &wt) in path.iter().zip(weights) {
            if !(wt >= 0.0 && wt.is_finite()) {
                return Err(Error::domain(format!("weight {wt} must be finite and non-negative")));
            }
            let scale = wt.sqrt();
            let mut l_sq = 0.0f64;
            for (i, row) in rows.iter_mut().enumerate() {
                let g = models::per_example_grad(arch, w, data, i)?;
                l_sq = l_sq.max(sq_norm(&g));
                row.extend(g.iter().map(|v| scale * v));
            }
            wl += wt * l_sq;
            max_l = max_l.max(l_sq.sqrt());
        }
        Ok(StackedGradients { rows, steps: path.len(), d, weighted_lipschitz_sq: wl, max_lipschitz: max_l })
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn mean(&self) -> Vec<f64> {
        mean_of(&self.rows, 0..self.n())
    }

    /// `‖μ − (1/|J|) Σ_{j∈J} G_j‖²`
    pub fn deviation_sq(&self, mean: &[f64], idx: &[usize]) -> f64 {
        sq_dist(mean, &mean_of(&self.rows, idx.iter().copied()))
    }

    /// `(2/m)·√(Σ_t w_t L_t²)`, the neighbour constant of `Φ(J) = √deviation_sq`.
    pub fn mcd_constant(&self, m: usize) -> f64 {
        2.0 / m as f64 * self.weighted_lipschitz_sq.sqrt()
    }
}

/// Iterates `W_0..W_{T−1}` of full-batch gradient descent; the path does not
/// depend on any prior split.
pub fn frozen_gd_path(arch: &ModelArch, data: &Dataset, steps: usize, gamma: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    frozen_path(RunSpec::new(Algorithm::Gd, arch.clone(), Schedule::constant(steps, gamma), seed), data)
}

fn frozen_path(mut spec: RunSpec, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    spec.snapshot_every = 1;
    if data.len() < 2 {
        return Err(Error::domain("need at least two examples"));
    }
    // the update rules used here read only the full-sample gradient
    let split = IndexSplit::from_prior(data.len(), vec![0])?;
    let steps = spec.schedule.steps;
    let log = Runner::new(spec, TrainData { train: data, split: &split, test: None })?.finish()?;
    Ok(log.snapshots.into_iter().filter(|s| s.t < steps).map(|s| s.params).collect())
}

// ---------------------------------------------------------------------------
// Catoni moment identity

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatoniSetup {
    pub q_grid: Vec<f64>,
    pub eta_grid: Vec<f64>,
    /// holdout sizes; `k ≤ 20` is enumerated, larger `k` is sampled
    pub ks: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
}

fn binomial_coefficients(k: usize) -> Vec<f64> {
    let mut row = vec![1.0f64];
    for _ in 0..k {
        let mut next = vec![1.0; row.len() + 1];
        for j in 1..row.len() {
            next[j] = row[j - 1] + row[j];
        }
        row = next;
    }
    row
}

/// `E[exp(ηk (Φ(q) − b̄))]` for `b̄` the mean of `k` Bernoulli(q) draws, by
/// summing over the binomial count.
pub fn catoni_moment_exact(q: f64, eta: f64, k: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) || k == 0 || k > 60 {
        return Err(Error::domain(format!("need q ∈ [0, 1] and 1 ≤ k ≤ 60, got q = {q}, k = {k}")));
    }
    let lam = eta * k as f64;
    let phi_q = sb::phi(q, lam, k)?;
    let coeff = binomial_coefficients(k);
    Ok(coeff
        .iter()
        .enumerate()
        .map(|(j, c)| c * q.powi(j as i32) * (1.0 - q).powi((k - j) as i32) * (lam * phi_q - eta * j as f64).exp())
        .sum())
}

/// Per-sample identity on the `(q, η)` grid and the `k`-sample moment.
pub fn verify_catoni_mmt(setup: &CatoniSetup) -> Result<VerificationReport> {
    let sampled = setup.ks.iter().any(|&k| k > 20);
    let mut report = VerificationReport::new(
        "catoni-mmt",
        "E exp((λ/k)(Φ(q) − b)) = 1 per sample and the k-sample moment ≤ 1",
        "i.i.d. Bernoulli losses",
        if sampled { setup.trials as u64 } else { 0 },
        "1e-13 per sample, 1e-12 enumerated, 4σ sampled",
    );
    for &q in &setup.q_grid {
        for &eta in &setup.eta_grid {
            // E[e^{η(Φ(q) − b)}] assembled from phi() directly
            let direct = (eta * sb::phi(q, eta, 1)?).exp() * (1.0 - q + q * (-eta).exp());
            report.push(GridPoint::equal(format!("q={q} eta={eta} direct"), 1.0, direct, IDENTITY_TOL));
            if q > 0.0 && q < 1.0 {
                let closed = sb::per_sample_multiplier(q, eta)?;
                report.push(GridPoint::equal(format!("q={q} eta={eta} multiplier"), 1.0, closed, IDENTITY_TOL));
            }
        }
    }
    for &k in &setup.ks {
        for &q in &setup.q_grid {
            for &eta in &setup.eta_grid {
                if k <= 20 {
                    let moment = catoni_moment_exact(q, eta, k)?;
                    report.push(GridPoint::at_most(format!("k={k} q={q} eta={eta} exact"), 1.0, moment, EXACT_TOL));
                } else {
                    let lam = eta * k as f64;
                    let phi_q = sb::phi(q, lam, k)?;
                    let bin = Binomial::new(k as u64, q).map_err(|e| Error::domain(e.to_string()))?;
                    let draws = par_trials(setup.trials, setup.seed, TAG_CATONI, |r| {
                        let b = bin.sample(r) as f64 / k as f64;
                        (lam * (phi_q - b)).exp()
                    });
                    let (mean, slack) = mean_slack(&draws);
                    report.push(GridPoint::at_most(format!("k={k} q={q} eta={eta} sampled"), 1.0, mean, slack));
                }
            }
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// end-to-end validity of the data-dependent bound

/// Posterior used in the threshold-classifier toy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyPosterior {
    /// `Q = P(S_J)`, so `KL = 0`
    Prior,
    /// equal mass on the two thresholds with the lowest error on `S`
    TwoPoint,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataPacSetup {
    pub n: usize,
    pub m: usize,
    pub delta: f64,
    pub eta: f64,
    /// label flip probability
    pub flip: f64,
    pub posterior: ToyPosterior,
    pub replicas: usize,
    pub seed: u64,
}

impl DataPacSetup {
    pub fn new(n: usize, m: usize, delta: f64, posterior: ToyPosterior) -> Self {
        DataPacSetup { n, m, delta, eta: 1.0, flip: 0.2, posterior, replicas: 10_000, seed: 0 }
    }
}

/// Thresholds `θ ∈ {0, 0.1, …, 1}`.
pub const TOY_THRESHOLDS: usize = 11;

fn theta(j: usize) -> f64 {
    j as f64 / (TOY_THRESHOLDS - 1) as f64
}

/// Risk of `x ↦ 1[x > θ]` when `X ~ U[0,1]` and `Y = 1[X > 1/2]` flipped with
/// probability `flip`.
pub fn toy_true_risk(theta: f64, flip: f64) -> f64 {
    flip + (1.0 - 2.0 * flip) * (theta - 0.5).abs()
}

struct ToyOutcome {
    risk: f64,
    linear: f64,
    exact: f64,
}

fn toy_replica(s: &DataPacSetup, params: &CatoniParams, r: &mut Stream) -> Result<ToyOutcome> {
    let n = s.n;
    let xs: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
    let ys: Vec<bool> = xs.iter().map(|&x| (x > 0.5) ^ (r.random::<f64>() < s.flip)).collect();
    let mut member = vec![false; n];
    for j in draw_wor_allow_empty(r, n, s.m) {
        member[j] = true;
    }
    let mut err_j = [0usize; TOY_THRESHOLDS];
    let mut err_i = [0usize; TOY_THRESHOLDS];
    for (h, (ej, ei)) in err_j.iter_mut().zip(err_i.iter_mut()).enumerate() {
        let t = theta(h);
        for i in 0..n {
            if (xs[i] > t) != ys[i] {
                if member[i] {
                    *ej += 1;
                } else {
                    *ei += 1;
                }
            }
        }
    }
    // Gibbs prior on S_J with inverse temperature 1 per example; uniform if m = 0
    let logits: Vec<f64> = err_j.iter().map(|&e| -(e as f64)).collect();
    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - top).exp()).sum();
    let prior: Vec<f64> = logits.iter().map(|l| (l - top).exp() / z).collect();

    let (q, kl) = match s.posterior {
        ToyPosterior::Prior => (prior.clone(), 0.0),
        ToyPosterior::TwoPoint => {
            let mut order: Vec<usize> = (0..TOY_THRESHOLDS).collect();
            order.sort_by_key(|&h| (err_j[h] + err_i[h], h));
            let mut q = vec![0.0; TOY_THRESHOLDS];
            q[order[0]] = 0.5;
            q[order[1]] = 0.5;
            let kl = [order[0], order[1]].iter().map(|&h| 0.5 * (0.5 / prior[h]).ln()).sum::<f64>();
            (q, kl.max(0.0))
        }
    };
    let holdout = (n - s.m) as f64;
    let emp: f64 = q.iter().zip(&err_i).map(|(w, &e)| w * e as f64 / holdout).sum();
    let risk: f64 = q.iter().enumerate().map(|(h, w)| w * toy_true_risk(theta(h), s.flip)).sum();
    let emp = emp.clamp(0.0, 1.0);
    Ok(ToyOutcome {
        risk,
        linear: sb::data_pac_bound(kl, emp, params)?.total,
        exact: sb::data_pac_bound_exact(kl, emp, params)?,
    })
}

fn draw_wor_allow_empty(r: &mut Stream, n: usize, m: usize) -> Vec<usize> {
    if m == 0 {
        Vec::new()
    } else {
        draw_wor(r, n, m)
    }
}

/// Violation frequency of the data-dependent bound over fresh `(S, J)`.
pub fn verify_data_pac_end_to_end(setup: &DataPacSetup) -> Result<VerificationReport> {
    let params = CatoniParams::new(setup.eta, setup.n, setup.m, setup.delta)?;
    if !(0.0..0.5).contains(&setup.flip) || setup.replicas == 0 {
        return Err(Error::domain("flip must lie in [0, 1/2) and replicas be positive"));
    }
    let outcomes = par_trials(setup.replicas, setup.seed, TAG_DATA_PAC, |r| toy_replica(setup, &params, r));
    let outcomes: Vec<ToyOutcome> = outcomes.into_iter().collect::<Result<_>>()?;
    let mut report = VerificationReport::new(
        "data-pac",
        format!(
            "threshold toy, n = {}, m = {}, δ = {}, η = {}, posterior {:?}",
            setup.n, setup.m, setup.delta, setup.eta, setup.posterior
        ),
        "J without replacement",
        setup.replicas as u64,
        "4σ binomial at δ",
    );
    let slack = binomial_slack(setup.delta, setup.replicas);
    let linear = outcomes.iter().filter(|o| o.risk > o.linear).count() as f64 / outcomes.len() as f64;
    let exact = outcomes.iter().filter(|o| o.risk > o.exact).count() as f64 / outcomes.len() as f64;
    report.push(GridPoint::at_most("violation rate, linear bound", setup.delta, linear, slack));
    report.push(GridPoint::at_most("violation rate, inverse-Φ bound", setup.delta, exact, slack));
    Ok(report)
}

// ---------------------------------------------------------------------------
// with-replacement tail of stacked gradient differences

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormSubgSetup {
    pub m: usize,
    pub steps: usize,
    pub d: usize,
    /// grid of `s = εm/(6.3 L²)`
    pub scales: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
}

/// `Pr[‖(1/m) Σ G_{J_k} − μ‖² ≥ ε] ≤ 2Td exp(−εm/(6.3L²))` for `J` drawn
/// with replacement, plus the single-draw norm-subGaussian tail (enumerated
/// exactly over the `n` rows) and the numeric claim `√(2/ln 2) < 1.7`.
pub fn verify_norm_subgaussian(vectors: &[Vec<f64>], setup: &NormSubgSetup) -> Result<VerificationReport> {
    let n = vectors.len();
    let dim = setup.steps * setup.d;
    if n == 0 || setup.m == 0 || setup.trials == 0 || dim == 0 {
        return Err(Error::domain("need n, m, T·d and trials positive"));
    }
    if let Some(i) = vectors.iter().position(|v| v.len() != dim) {
        return Err(Error::contract(format!("row {i} has length {}, expected T·d = {dim}", vectors[i].len())));
    }
    let mu = mean_of(vectors, 0..n);
    let l = vectors.iter().map(|g| sq_norm(g)).fold(0.0, f64::max).sqrt();
    let m = setup.m;
    let mut report = VerificationReport::new(
        "norm-subgaussian",
        format!("stacked gradient deviation, n = {n}, m = {m}, T·d = {dim}"),
        "J with replacement",
        setup.trials as u64,
        "4σ binomial for the m-sample tail, 1e-12 for enumerated single draws",
    );
    let c = norm_subgaussian_constant();
    report.push(GridPoint::at_most("c = sqrt(2/ln 2)", NORM_SUBG_C_CLAIM, c, 0.0));

    for s in [0.25, 0.5, 1.0, 1.5, 2.0] {
        let radius = s * l;
        let observed = vectors.iter().filter(|g| sq_dist(g, &mu).sqrt() >= radius).count() as f64 / n as f64;
        let claimed = if l == 0.0 { 1.0 } else { 2.0 * (-radius * radius / (2.0 * c * c * l * l)).exp() };
        report.push(GridPoint::at_most(format!("single draw, r = {s}·L"), claimed, observed, EXACT_TOL));
    }

    let dev = par_trials(setup.trials, setup.seed, TAG_NORM, |r| {
        let idx: Vec<usize> = (0..m).map(|_| r.random_range(0..n)).collect();
        sq_dist(&mu, &mean_of(vectors, idx.into_iter()))
    });
    let td = dim as f64;
    for &s in &setup.scales {
        let eps = s * NORM_SUBG_TAIL_CONST * l * l / m as f64;
        let claimed = (2.0 * td * (-s).exp()).min(1.0);
        let observed = frac(&dev, |v| v >= eps);
        report.push(GridPoint::at_most(format!("s={s}"), claimed, observed, binomial_slack(claimed, setup.trials)));
    }
    // the expectation form with constant 5·6.3; a fixed path makes E_W trivial
    for delta in [0.05, 0.2] {
        let threshold = sb::sgld_subg_expectation_bound(l, 1.0, setup.steps, setup.d, delta, m)?;
        let observed = frac(&dev, |v| v > threshold);
        report.push(GridPoint::at_most(
            format!("expectation form, δ={delta}"),
            delta,
            observed,
            binomial_slack(delta, setup.trials),
        ));
    }
    Ok(report)
}

/// `n` independent uniform points on the unit sphere in `R^dim`.
pub fn random_unit_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::stream(seed, rng::streams::VERIFY + TAG_NORM * 1000 + 999);
    (0..n)
        .map(|_| {
            let mut v = vec![0.0; dim];
            rng::fill_standard_normal(&mut r, &mut v);
            let norm = sq_norm(&v).sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            v
        })
        .collect()
}

// ---------------------------------------------------------------------------
// tail/MGF conversions

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EexpCase {
    /// `A = 0` with probability `1 − mix`, else `shift + Exp(1)`; checks `E[e^{A/5}] ≤ 8K`
    TailToMgf { mix: f64, shift: f64 },
    /// `A = shift + Exp(rate)` with `rate > 1`; checks `Pr[A ≥ ε] ≤ 2K e^{−ε}`
    MgfToTail { rate: f64, shift: f64 },
}

impl EexpCase {
    /// Smallest `K` for which the premise of the conversion holds.
    pub fn min_k(&self) -> f64 {
        match *self {
            EexpCase::TailToMgf { mix, shift } => (mix * shift.exp() / 2.0).max(0.5),
            EexpCase::MgfToTail { rate, shift } => shift.exp() * rate / (rate - 1.0) / 2.0,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            EexpCase::TailToMgf { mix, shift } if (0.0..=1.0).contains(&mix) && shift >= 0.0 && shift.is_finite() => {
                Ok(())
            }
            EexpCase::MgfToTail { rate, shift }
                if rate > 1.0 && rate.is_finite() && shift >= 0.0 && shift.is_finite() =>
            {
                Ok(())
            }
            other => Err(Error::domain(format!("unsupported family {other:?}"))),
        }
    }

    fn sample(&self, r: &mut Stream) -> f64 {
        match *self {
            EexpCase::TailToMgf { mix, shift } => {
                if r.random::<f64>() < mix {
                    shift + Exp::new(1.0).unwrap().sample(r)
                } else {
                    0.0
                }
            }
            EexpCase::MgfToTail { rate, shift } => shift + Exp::new(rate).unwrap().sample(r),
        }
    }
}

pub fn verify_prob_eexp(case: &EexpCase, k: f64, trials: usize, seed: u64) -> Result<VerificationReport> {
    case.validate()?;
    if !(k >= case.min_k() && k.is_finite()) {
        return Err(Error::domain(format!("K = {k} does not satisfy the premise; need K ≥ {}", case.min_k())));
    }
    if trials < 2 {
        return Err(Error::domain("need at least two trials"));
    }
    let draws = par_trials(trials, seed, TAG_EEXP, |r| case.sample(r));
    let mut report = VerificationReport::new(
        "prob-eexp",
        format!("{case:?}, K = {k}"),
        "not applicable",
        trials as u64,
        "exact for closed forms, 4σ sampled",
    );
    match *case {
        EexpCase::TailToMgf { mix, shift } => {
            // Pr[A ≥ ε] against 2K e^{−ε} on a grid, from the closed form
            for i in 0..=20 {
                let eps = i as f64 * 0.5;
                let tail = if eps <= 0.0 { 1.0 } else { mix * (shift - eps).exp().min(1.0) };
                report.push(GridPoint::at_most(format!("premise eps={eps}"), 2.0 * k * (-eps).exp(), tail, EXACT_TOL));
            }
            let closed = (1.0 - mix) + mix * (shift / 5.0).exp() * 1.25;
            report.push(GridPoint::at_most("E[e^(A/5)] closed form", 8.0 * k, closed, 0.0));
            let mgf: Vec<f64> = draws.iter().map(|a| (a / 5.0).exp()).collect();
            let (mean, slack) = mean_slack(&mgf);
            report.push(GridPoint::at_most("E[e^(A/5)] sampled", 8.0 * k, mean, slack));
            report.push(GridPoint::equal("sampled vs closed form", closed, mean, slack.max(EXACT_TOL)));
        }
        EexpCase::MgfToTail { rate, shift } => {
            let mgf = shift.exp() * rate / (rate - 1.0);
            report.push(GridPoint::at_most("E[e^A] closed form", 2.0 * k, mgf, 0.0));
            for i in 0..=16 {
                let eps = i as f64 * 0.5;
                let claimed = (2.0 * k * (-eps).exp()).min(1.0);
                let observed = frac(&draws, |a| a >= eps);
                report.push(GridPoint::at_most(
                    format!("tail eps={eps}"),
                    claimed,
                    observed,
                    binomial_slack(claimed, trials),
                ));
            }
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// chain rule of KL on finite Markov chains

pub const MAX_STATES: usize = 8;
pub const MAX_HORIZON: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkovChain {
    pub init: Vec<f64>,
    /// `trans[a][b] = Pr[X_t = b | X_{t−1} = a]`
    pub trans: Vec<Vec<f64>>,
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|&v| !(v >= 0.0 && v.is_finite())) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return Err(Error::domain(format!("{what} is not a probability vector")));
    }
    Ok(())
}

impl MarkovChain {
    pub fn new(init: Vec<f64>, trans: Vec<Vec<f64>>) -> Result<Self> {
        let s = init.len();
        if s == 0 || s > MAX_STATES || trans.len() != s || trans.iter().any(|row| row.len() != s) {
            return Err(Error::domain(format!("need a square chain with 1..={MAX_STATES} states")));
        }
        check_distribution(&init, "initial law")?;
        for (a, row) in trans.iter().enumerate() {
            check_distribution(row, &format!("transition row {a}"))?;
        }
        Ok(MarkovChain { init, trans })
    }

    /// Strictly positive random chain.
    pub fn random(states: usize, r: &mut Stream) -> Self {
        let mut draw = || {
            let v: Vec<f64> = (0..states).map(|_| r.random_range(0.05..1.0)).collect();
            let z: f64 = v.iter().sum();
            v.into_iter().map(|x| x / z).collect::<Vec<f64>>()
        };
        let init = draw();
        let trans = (0..states).map(|_| draw()).collect();
        MarkovChain { init, trans }
    }

    pub fn states(&self) -> usize {
        self.init.len()
    }

    /// Law of `X_t`.
    pub fn marginal(&self, t: usize) -> Vec<f64> {
        let s = self.states();
        let mut p = self.init.clone();
        for _ in 0..t {
            let mut next = vec![0.0; s];
            for (a, pa) in p.iter().enumerate() {
                for (b, nb) in next.iter_mut().enumerate() {
                    *nb += pa * self.trans[a][b];
                }
            }
            p = next;
        }
        p
    }

    fn log_path(&self, path: &[usize]) -> f64 {
        let mut lp = self.init[path[0]].ln();
        for w in path.windows(2) {
            lp += self.trans[w[0]][w[1]].ln();
        }
        lp
    }
}

/// `Σ p ln(p/q)`; undefined when `q` misses mass of `p`.
pub fn kl_discrete(p: &[f64], q: &[f64]) -> Result<f64> {
    let mut kl = 0.0;
    for (i, (&a, &b)) in p.iter().zip(q).enumerate() {
        if a > 0.0 {
            if b <= 0.0 {
                return Err(Error::domain(format!("KL undefined: outcome {i} has mass {a} under P and none under Q")));
            }
            kl += a * (a / b).ln();
        }
    }
    Ok(kl)
}

fn check_pair(p: &MarkovChain, q: &MarkovChain, horizon: usize) -> Result<()> {
    if p.states() != q.states() {
        return Err(Error::contract("chains have different state spaces"));
    }
    if horizon > MAX_HORIZON {
        return Err(Error::domain(format!("horizon {horizon} exceeds {MAX_HORIZON}")));
    }
    Ok(())
}

/// KL between the laws of `(X_0, …, X_T)`, by enumerating every path.
pub fn joint_kl(p: &MarkovChain, q: &MarkovChain, horizon: usize) -> Result<f64> {
    check_pair(p, q, horizon)?;
    let s = p.states();
    let len = horizon + 1;
    let mut path = vec![0usize; len];
    let mut total = 0.0;
    loop {
        let lp = p.log_path(&path);
        if lp > f64::NEG_INFINITY {
            let lq = q.log_path(&path);
            if lq == f64::NEG_INFINITY {
                return Err(Error::domain(format!("KL undefined: path {path:?} has zero mass under the second chain")));
            }
            total += lp.exp() * (lp - lq);
        }
        // odometer increment
        let mut k = len;
        loop {
            if k == 0 {
                return Ok(total);
            }
            k -= 1;
            path[k] += 1;
            if path[k] < s {
                break;
            }
            path[k] = 0;
        }
    }
}

/// `KL(P_0‖Q_0) + Σ_{t=1}^T E_{x∼P_{t−1}} KL(P(·|x)‖Q(·|x))`.
pub fn chain_rule_kl(p: &MarkovChain, q: &MarkovChain, horizon: usize) -> Result<f64> {
    check_pair(p, q, horizon)?;
    let per_state: Vec<f64> = p.trans.iter().zip(&q.trans).map(|(a, b)| kl_discrete(a, b)).collect::<Result<_>>()?;
    let mut total = kl_discrete(&p.init, &q.init)?;
    for t in 1..=horizon {
        total += p.marginal(t - 1).iter().zip(&per_state).map(|(w, k)| w * k).sum::<f64>();
    }
    Ok(total)
}

/// `count` pairs of random chains with `states` states.
pub fn random_chain_pairs(count: usize, states: usize, seed: u64) -> Vec<(MarkovChain, MarkovChain)> {
    let mut r = rng::stream(seed, rng::streams::VERIFY + TAG_CHAIN * 1000);
    (0..count).map(|_| (MarkovChain::random(states, &mut r), MarkovChain::random(states, &mut r))).collect()
}

pub fn verify_kl_chain_rule(pairs: &[(MarkovChain, MarkovChain)], horizon: usize) -> Result<VerificationReport> {
    let states = pairs.first().map_or(0, |(p, _)| p.states());
    let mut report = VerificationReport::new(
        "chain-kl",
        format!("joint KL by path enumeration vs chain rule, T = {horizon}"),
        "not applicable",
        pairs.len() as u64 * (states as u64).pow(horizon as u32 + 1),
        "1e-12 relative to max(1, value)",
    );
    for (i, (p, q)) in pairs.iter().enumerate() {
        let joint = joint_kl(p, q, horizon)?;
        let chain = chain_rule_kl(p, q, horizon)?;
        report.push(GridPoint::equal(format!("pair {i} chain rule"), joint, chain, EXACT_TOL * joint.abs().max(1.0)));
        let marginal = kl_discrete(&p.marginal(horizon), &q.marginal(horizon))?;
        report.push(GridPoint::at_most(format!("pair {i} marginal ≤ joint"), joint, marginal, EXACT_TOL));
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// pathwise KL of floored gradient descent

#[derive(Clone, Debug)]
pub struct PathwiseSetup {
    pub arch: ModelArch,
    pub data: Dataset,
    pub split: IndexSplit,
    pub steps: usize,
    pub gamma: f64,
    pub eps: f64,
    /// lattice parameter; `None` uses `1/(Td)`
    pub p: Option<f64>,
    pub seed: u64,
}

/// Prefix sums along one FGD run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathwiseTrace {
    pub p: f64,
    pub d: usize,
    /// `Σ_{s≤t} ln(1/Pr[ξ = a_s])`
    pub exact: Vec<f64>,
    /// `Σ_{s≤t} (3dp + ln(1/p)(γ/ε)²‖g_s‖²)`
    pub stepwise: Vec<f64>,
    /// `3Tdp + ln(1/p) Σ_{s≤t} (γ/ε)²‖g_s‖²`
    pub closed: Vec<f64>,
    /// `3Tdp`
    pub lattice_constant: f64,
}

pub fn fgd_kl_path(setup: &PathwiseSetup) -> Result<PathwiseTrace> {
    let d = setup.arch.param_count();
    let p = match setup.p {
        Some(p) => p,
        None => dn::default_p(setup.steps, d)?,
    };
    let grid = GridNoiseSpec::new(p, d)?;
    let schedule = Schedule::constant(setup.steps, setup.gamma).with_eps(setup.eps);
    let spec = RunSpec::new(Algorithm::Fgd, setup.arch.clone(), schedule, setup.seed);
    let mut runner = Runner::new(spec, TrainData { train: &setup.data, split: &setup.split, test: None })?;
    let lattice_constant = 3.0 * setup.steps as f64 * d as f64 * p;
    let ln_inv_p = (1.0 / p).ln();
    let mut trace = PathwiseTrace { p, d, exact: vec![], stepwise: vec![], closed: vec![], lattice_constant };
    let (mut exact, mut stepwise, mut sum) = (0.0, 0.0, 0.0);
    while !runner.is_done() {
        runner.step()?;
        let g = runner.last_grad_diff();
        let scaled: Vec<f64> = g.iter().map(|v| setup.gamma * v / setup.eps).collect();
        exact += dn::per_step_kl_exact(&dn::floor_vec(&scaled)?, &grid)?;
        stepwise += dn::per_step_kl_bound(g, setup.gamma, setup.eps, &grid)?;
        sum += (setup.gamma / setup.eps).powi(2) * sq_norm(g);
        trace.exact.push(exact);
        trace.stepwise.push(stepwise);
        trace.closed.push(lattice_constant + ln_inv_p * sum);
    }
    Ok(trace)
}

/// Exact floored-step KL ≤ per-step bound ≤ closed form, at every prefix.
pub fn verify_fgd_kl_pathwise(setup: &PathwiseSetup) -> Result<VerificationReport> {
    let trace = fgd_kl_path(setup)?;
    let mut report = VerificationReport::new(
        "fgd-kl-pathwise",
        format!("floored GD, d = {}, T = {}, p = {:.3e}", trace.d, setup.steps, trace.p),
        "fixed J",
        setup.steps as u64,
        "1e-9 relative for accumulated sums",
    );
    let tol = |v: f64| 1e-9 * v.abs().max(1.0);
    let worst =
        |lhs: &[f64], rhs: &[f64]| (0..lhs.len()).min_by(|&a, &b| (rhs[a] - lhs[a]).total_cmp(&(rhs[b] - lhs[b])));
    if let Some(t) = worst(&trace.exact, &trace.stepwise) {
        let (c, o) = (trace.stepwise[t], trace.exact[t]);
        report.push(GridPoint::at_most(format!("exact ≤ per-step bound, tightest t={}", t + 1), c, o, tol(c)));
    }
    if let Some(t) = worst(&trace.stepwise, &trace.closed) {
        let (c, o) = (trace.closed[t], trace.stepwise[t]);
        report.push(GridPoint::at_most(format!("per-step bound ≤ closed form, tightest t={}", t + 1), c, o, tol(c)));
    }
    if setup.p.is_none() {
        report.push(GridPoint::equal("3Tdp at p = 1/(Td)", 3.0, trace.lattice_constant, EXACT_TOL));
    }
    Ok(report)
}

/// Blobs split in half; `ε` small enough that floors are mostly non-zero.
pub fn blobs_pathwise_setup(seed: u64) -> Result<PathwiseSetup> {
    let data = datasets::synth_blobs(200, 2, 2, 2.0, seed)?;
    let split = datasets::sample_prior_indices(200, 100, seed)?;
    Ok(PathwiseSetup { arch: ModelArch::linear(2, 2), data, split, steps: 200, gamma: 0.1, eps: 1e-3, p: None, seed })
}

/// Every example appears twice and `J` holds one copy of each, so the prior
/// gradient equals the full gradient and every floored step is zero.
pub fn duplicated_pathwise_setup(seed: u64) -> Result<PathwiseSetup> {
    let base = datasets::synth_blobs(50, 2, 2, 2.0, seed)?;
    let idx: Vec<usize> = (0..50).chain(0..50).collect();
    let data = base.subset(&idx);
    let split = IndexSplit::from_prior(100, (0..50).collect())?;
    Ok(PathwiseSetup { arch: ModelArch::linear(2, 2), data, split, steps: 50, gamma: 0.1, eps: 1e-3, p: None, seed })
}

// ---------------------------------------------------------------------------
// continuous Langevin: gradient integral and stationary law

#[derive(Clone, Debug)]
pub struct CldIntegralSetup {
    pub arch: ModelArch,
    pub data: Dataset,
    pub cld: CldSettings,
    pub steps: usize,
    pub m: usize,
    pub deltas: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
}

/// `C_δ L² (1 − e^{−αT}) / (α m)`.
pub fn cld_integral_bound(delta: f64, lipschitz: f64, alpha: f64, horizon: f64, m: usize) -> Result<f64> {
    Ok(sb::c_delta(delta)? * lipschitz * lipschitz * -(-alpha * horizon).exp_m1() / (alpha * m as f64))
}

/// Empirical `(1−δ)`-quantile over `J` of the left-endpoint discretisation of
/// `∫ e^{α(t−T)} ‖∇F_S − ∇F_{S_J}‖² dt` along a frozen Euler–Maruyama path,
/// against the concentration bound.
pub fn verify_cld_grad_integral(setup: &CldIntegralSetup) -> Result<VerificationReport> {
    let n = setup.data.len();
    if setup.m == 0 || setup.m >= n || setup.trials == 0 {
        return Err(Error::domain(format!("need 1 ≤ m < n and trials > 0, got m = {}, n = {n}", setup.m)));
    }
    let alpha = setup.cld.alpha();
    let dt = setup.cld.dt;
    let horizon = setup.steps as f64 * dt;
    let mut report = VerificationReport::new(
        "cld-grad-con",
        format!("discretised gradient integral, n = {n}, m = {}, T = {horizon}, α = {alpha:.3e}", setup.m),
        "J without replacement",
        setup.trials as u64,
        "quantile compared directly",
    );
    if setup.steps == 0 {
        for &delta in &setup.deltas {
            report.push(GridPoint::at_most(format!("delta={delta} quantile"), 0.0, 0.0, 0.0));
        }
        return Ok(report);
    }
    let schedule = Schedule::constant(setup.steps, 1.0).with_cld(setup.cld);
    let path = frozen_path(RunSpec::new(Algorithm::Cld, setup.arch.clone(), schedule, setup.seed), &setup.data)?;
    let weights: Vec<f64> = (1..=setup.steps).map(|t| (alpha * ((t - 1) as f64 * dt - horizon)).exp() * dt).collect();
    let stacked = StackedGradients::from_path(&setup.arch, &setup.data, &path, &weights)?;
    let mu = stacked.mean();
    let mut values =
        par_trials(setup.trials, setup.seed, TAG_CLD, |r| stacked.deviation_sq(&mu, &draw_wor(r, n, setup.m)));
    values.sort_by(f64::total_cmp);
    for &delta in &setup.deltas {
        let rank = (((1.0 - delta) * setup.trials as f64).ceil() as usize).clamp(1, setup.trials) - 1;
        let bound = cld_integral_bound(delta, stacked.max_lipschitz, alpha, horizon, setup.m)?;
        report.push(GridPoint::at_most(format!("delta={delta} quantile"), bound, values[rank], 0.0));
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuSetup {
    pub beta: f64,
    pub lambda_reg: f64,
    pub dt: f64,
    pub steps: usize,
    pub chains: usize,
    pub seed: u64,
}

/// Euler–Maruyama for `dW = −λW dt + √(2/β) dB` started at `N(0, 1/(λβ))`;
/// the second moment at the horizon against `1/(λβ)`.
pub fn verify_ou_stationary(setup: &OuSetup) -> Result<VerificationReport> {
    let OuSetup { beta, lambda_reg, dt, steps, chains, seed } = *setup;
    for (name, v) in [("beta", beta), ("lambda_reg", lambda_reg), ("dt", dt)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::domain(format!("{name} must be positive")));
        }
    }
    if chains < 2 || lambda_reg * dt >= 1.0 {
        return Err(Error::domain("need at least two chains and λ·dt < 1"));
    }
    let target = 1.0 / (lambda_reg * beta);
    let noise = (2.0 * dt / beta).sqrt();
    let finals = par_trials(chains, seed, TAG_OU, |r| {
        let mut w = target.sqrt() * rng::standard_normal(r);
        for _ in 0..steps {
            w += -lambda_reg * w * dt + noise * rng::standard_normal(r);
        }
        w * w
    });
    let mut report = VerificationReport::new(
        "ou-stationary",
        format!("Euler–Maruyama OU, λ = {lambda_reg}, β = {beta}, dt = {dt}, {steps} steps"),
        "not applicable",
        chains as u64,
        "4σ of the second-moment estimate",
    );
    let (mean, slack) = mean_slack(&finals);
    report.push(GridPoint::equal("E[W_T²] vs 1/(λβ)", target, mean, slack));
    Ok(report)
}

// ---------------------------------------------------------------------------
// suite

pub const SELECTORS: [&str; 10] = [
    "variance-wor",
    "new-mcd",
    "catoni-mmt",
    "data-pac",
    "norm-subgaussian",
    "prob-eexp",
    "chain-kl",
    "fgd-kl-pathwise",
    "cld-grad-con",
    "ou-stationary",
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Monte Carlo trials for tail checks
    pub tail_trials: usize,
    /// replicas for end-to-end checks
    pub replicas: usize,
    /// Run the McDiarmid check with a bounded-difference constant ten times
    /// too small; the suite must then fail.
    pub inject_bug: bool,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions { seed: 0, tail_trials: 100_000, replicas: 10_000, inject_bug: false }
    }
}

/// Mean of `m` values drawn without replacement from `[0, range]`.
pub fn mean_functional_check(n: usize, m: usize, range: f64, opts: &SuiteOptions) -> Result<VerificationReport> {
    let mut r = rng::stream(opts.seed, rng::streams::VERIFY + TAG_MCD * 1000 + 998);
    let values: Vec<f64> = (0..n).map(|_| r.random::<f64>() * range).collect();
    let exact = values.iter().sum::<f64>() / n as f64;
    let mut c = range / m as f64;
    if opts.inject_bug {
        c /= 10.0;
    }
    let eps_grid = (1..=8).map(|i| i as f64 * 0.025 * range).collect();
    let setup = McdiarmidSetup {
        trials: opts.tail_trials,
        exact_mean: Some(exact),
        seed: opts.seed,
        ..McdiarmidSetup::new(n, m, c, eps_grid)
    };
    verify_mcdiarmid_wor(|j| j.iter().map(|&i| values[i]).sum::<f64>() / j.len() as f64, &setup)
}

/// `Φ(J) = √(Σ_t w_t ‖∇f(W_{t−1},S) − ∇f(W_{t−1},S_J)‖²)` on a frozen GD path.
pub fn trajectory_functional_check(opts: &SuiteOptions) -> Result<VerificationReport> {
    let (n, m) = (50, 10);
    let arch = ModelArch::linear(2, 2);
    let data = datasets::synth_blobs(n, 2, 2, 2.0, opts.seed)?;
    let gamma = 0.5;
    let path = frozen_gd_path(&arch, &data, 20, gamma, opts.seed)?;
    // γ_t²/σ_t² with σ_t = 1
    let stacked = StackedGradients::from_path(&arch, &data, &path, &vec![gamma * gamma; path.len()])?;
    let mu = stacked.mean();
    let c = stacked.mcd_constant(m);
    let eps_grid = [0.25, 0.5, 1.0, 1.5, 2.0].iter().map(|s| s * c * (m as f64).sqrt()).collect();
    let setup = McdiarmidSetup { trials: opts.tail_trials, seed: opts.seed, ..McdiarmidSetup::new(n, m, c, eps_grid) };
    verify_mcdiarmid_wor(|j| stacked.deviation_sq(&mu, j).sqrt(), &setup)
}

pub fn default_cld_setup(m: usize, trials: usize, seed: u64) -> Result<CldIntegralSetup> {
    let data = datasets::synth_blobs(100, 2, 2, 2.0, seed)?;
    Ok(CldIntegralSetup {
        arch: ModelArch::linear(2, 2),
        data,
        cld: CldSettings { beta: 1.0, lambda_reg: 1.0, dt: 0.01, loss_bound: 0.25 },
        steps: 200,
        m,
        deltas: vec![0.1, 0.05],
        trials,
        seed,
    })
}

fn run_selector(name: &str, opts: &SuiteOptions) -> Result<Vec<VerificationReport>> {
    let seed = opts.seed;
    Ok(match name {
        "variance-wor" => vec![verify_variance_wor(8, seed)?],
        "new-mcd" => vec![mean_functional_check(50, 10, 1.0, opts)?, trajectory_functional_check(opts)?],
        "catoni-mmt" => {
            let q_grid = (0..10).map(|i| 0.05 + 0.1 * i as f64).collect();
            let eta_grid = (0..10).map(|i| 0.1 * 1.5f64.powi(i)).collect();
            let exact = CatoniSetup { q_grid, eta_grid, ks: vec![1, 5, 20], trials: 0, seed };
            let sampled = CatoniSetup {
                q_grid: vec![0.1, 0.4],
                eta_grid: vec![0.5, 1.0],
                ks: vec![200],
                trials: opts.tail_trials,
                seed,
            };
            vec![verify_catoni_mmt(&exact)?, verify_catoni_mmt(&sampled)?]
        }
        "data-pac" => {
            let base = DataPacSetup {
                replicas: opts.replicas,
                seed,
                ..DataPacSetup::new(200, 100, 0.1, ToyPosterior::TwoPoint)
            };
            vec![
                verify_data_pac_end_to_end(&base)?,
                verify_data_pac_end_to_end(&DataPacSetup { posterior: ToyPosterior::Prior, ..base })?,
                verify_data_pac_end_to_end(&DataPacSetup { delta: 0.5, ..base })?,
                verify_data_pac_end_to_end(&DataPacSetup { m: 0, ..base })?,
            ]
        }
        "norm-subgaussian" => {
            let (steps, d) = (4, 5);
            let vectors = random_unit_vectors(100, steps * d, seed);
            let setup = NormSubgSetup {
                m: 25,
                steps,
                d,
                scales: vec![0.5, 1.0, 2.0, 3.0, 4.0, 6.0],
                trials: opts.tail_trials,
                seed,
            };
            vec![verify_norm_subgaussian(&vectors, &setup)?]
        }
        "prob-eexp" => vec![
            verify_prob_eexp(&EexpCase::TailToMgf { mix: 1.0, shift: 0.0 }, 1.0, opts.tail_trials, seed)?,
            verify_prob_eexp(&EexpCase::TailToMgf { mix: 0.0, shift: 0.0 }, 1.0, opts.tail_trials, seed)?,
            verify_prob_eexp(&EexpCase::TailToMgf { mix: 0.5, shift: 1.0 }, 1.0, opts.tail_trials, seed)?,
            verify_prob_eexp(&EexpCase::MgfToTail { rate: 2.0, shift: 0.0 }, 1.0, opts.tail_trials, seed)?,
        ],
        "chain-kl" => {
            let mut pairs = random_chain_pairs(20, 3, seed);
            let same = pairs[0].0.clone();
            pairs.push((same.clone(), same));
            vec![verify_kl_chain_rule(&pairs, 4)?]
        }
        "fgd-kl-pathwise" => vec![
            verify_fgd_kl_pathwise(&blobs_pathwise_setup(seed)?)?,
            verify_fgd_kl_pathwise(&duplicated_pathwise_setup(seed)?)?,
        ],
        "cld-grad-con" => {
            let trials = opts.replicas;
            vec![
                verify_cld_grad_integral(&default_cld_setup(20, trials, seed)?)?,
                verify_cld_grad_integral(&default_cld_setup(99, trials, seed)?)?,
            ]
        }
        "ou-stationary" => vec![verify_ou_stationary(&OuSetup {
            beta: 2.0,
            lambda_reg: 1.0,
            dt: 0.005,
            steps: 400,
            chains: opts.tail_trials,
            seed,
        })?],
        other => {
            return Err(Error::config(
                "selector",
                format!("unknown verifier `{other}`; expected `all` or one of {}", SELECTORS.join(", ")),
            ))
        }
    })
}

/// `selector` is `all` or one entry of [`SELECTORS`].
pub fn run_suite(selector: &str, opts: &SuiteOptions) -> Result<Vec<VerificationReport>> {
    if selector == "all" {
        let mut out = Vec::new();
        for name in SELECTORS {
            out.extend(run_selector(name, opts)?);
        }
        Ok(out)
    } else {
        run_selector(selector, opts)
    }
}
