//! Scalar mathematics of the certificates: Catoni's transform, the constants
//! `C_η` and `C_δ`, and the right-hand-side evaluators of every bound.
//!
//! All bounds share the three-term shape
//!
//! ```text
//! total = empirical_term + confidence_term + kl_term
//! ```
//!
//! where the empirical term is always evaluated on the complement split `S_I`.
//! The temperature `λ` of the transform is never passed by callers; it is
//! derived as `λ = η·(n − m)`.
//!
//! Nothing is clamped: a bound above one is returned as-is and reported as
//! vacuous by [`BoundBreakdown::is_vacuous`].

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// `(η, n, m, δ)`: temperature, sample count, prior size and confidence level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatoniParams {
    pub eta: f64,
    pub n: usize,
    pub m: usize,
    pub delta: f64,
}

impl CatoniParams {
    pub fn new(eta: f64, n: usize, m: usize, delta: f64) -> Result<Self> {
        let params = CatoniParams { eta, n, m, delta };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::domain(format!("eta must be positive and finite, got {}", self.eta)));
        }
        check_delta(self.delta)?;
        if self.m >= self.n {
            return Err(Error::domain(format!("prior size m = {} must be < n = {}", self.m, self.n)));
        }
        Ok(())
    }

    /// Number of held-out samples `n − m`.
    pub fn holdout(&self) -> usize {
        self.n - self.m
    }

    pub fn lambda(&self) -> f64 {
        self.eta * self.holdout() as f64
    }

    pub fn c_eta(&self) -> f64 {
        1.0 / -(-self.eta).exp_m1()
    }

    fn ln_inv_delta(&self) -> f64 {
        -self.delta.ln()
    }
}

/// Which certificate a breakdown or report belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TheoremId {
    DataPac,
    Fgd,
    Fsgd,
    Gld,
    Sgld,
    SgldSubg,
    Cld,
    Rgd,
}

impl TheoremId {
    pub const ALL: [TheoremId; 8] = [
        TheoremId::DataPac,
        TheoremId::Fgd,
        TheoremId::Fsgd,
        TheoremId::Gld,
        TheoremId::Sgld,
        TheoremId::SgldSubg,
        TheoremId::Cld,
        TheoremId::Rgd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TheoremId::DataPac => "data-pac",
            TheoremId::Fgd => "fgd",
            TheoremId::Fsgd => "fsgd",
            TheoremId::Gld => "gld",
            TheoremId::Sgld => "sgld",
            TheoremId::SgldSubg => "sgld-subg",
            TheoremId::Cld => "cld",
            TheoremId::Rgd => "rgd",
        }
    }
}

impl std::fmt::Display for TheoremId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TheoremId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TheoremId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::domain(format!("unknown theorem `{s}`")))
    }
}

/// Term-by-term right-hand side of a certificate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundBreakdown {
    pub empirical_term: f64,
    pub confidence_term: f64,
    pub kl_term: f64,
    pub total: f64,
    pub theorem_id: TheoremId,
}

impl BoundBreakdown {
    fn assemble(theorem_id: TheoremId, empirical: f64, confidence: f64, kl: f64) -> Result<Self> {
        for (name, v) in [("empirical term", empirical), ("confidence term", confidence), ("kl term", kl)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::domain(format!("{theorem_id}: {name} is {v}")));
            }
        }
        Ok(BoundBreakdown {
            empirical_term: empirical,
            confidence_term: confidence,
            kl_term: kl,
            total: empirical + confidence + kl,
            theorem_id,
        })
    }

    pub fn is_vacuous(&self) -> bool {
        self.total >= 1.0
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("delta must lie in (0, 1), got {delta}")))
    }
}

fn check_risk(emp: f64) -> Result<()> {
    if (0.0..=1.0).contains(&emp) {
        Ok(())
    } else {
        Err(Error::domain(format!("empirical risk must lie in [0, 1], got {emp}")))
    }
}

fn check_sum(name: &str, sum: f64) -> Result<()> {
    if sum.is_finite() && sum >= 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must be finite and non-negative, got {sum}")))
    }
}

fn check_positive(name: &str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must be positive and finite, got {x}")))
    }
}

/// `C_η = 1 / (1 − e^{−η})`.
pub fn c_eta(eta: f64) -> Result<f64> {
    check_positive("eta", eta)?;
    Ok(1.0 / -(-eta).exp_m1())
}

/// `C_δ = 4 + 2 ln(1/δ) + 5.66 √ln(1/δ)`.
pub fn c_delta(delta: f64) -> Result<f64> {
    check_delta(delta)?;
    let l = -delta.ln();
    Ok(4.0 + 2.0 * l + 5.66 * l.sqrt())
}

/// Catoni's transform `Φ(x) = −(k/λ) ln(1 − (1 − e^{−λ/k}) x)`.
pub fn phi(x: f64, lambda: f64, k: usize) -> Result<f64> {
    ensure_finite("x", x)?;
    check_positive("lambda", lambda)?;
    if k == 0 {
        return Err(Error::domain("k must be at least 1"));
    }
    let r = lambda / k as f64;
    // 1 − (1 − e^{−r}) x, written as 1 + expm1(−r)·x
    let shrink = (-r).exp_m1() * x;
    if shrink.is_nan() || shrink <= -1.0 {
        return Err(Error::domain(format!("phi: log argument non-positive at x = {x}")));
    }
    Ok(-shrink.ln_1p() / r)
}

/// Inverse transform `Φ⁻¹(y) = (1 − e^{−yλ/k}) / (1 − e^{−λ/k})`.
pub fn phi_inv(y: f64, lambda: f64, k: usize) -> Result<f64> {
    ensure_finite("y", y)?;
    check_positive("lambda", lambda)?;
    if k == 0 {
        return Err(Error::domain("k must be at least 1"));
    }
    let r = lambda / k as f64;
    Ok((-y * r).exp_m1() / (-r).exp_m1())
}

/// The per-sample moment multiplier for a Bernoulli(q) risk; identically one.
pub fn per_sample_multiplier(q: f64, eta: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::domain(format!("q must lie in (0, 1), got {q}")));
    }
    check_positive("eta", eta)?;
    let decay = (-eta).exp();
    Ok((q * decay + (1.0 - q)) / (1.0 - (1.0 - decay) * q))
}

/// Data-dependent Catoni bound for an arbitrary `KL(Q‖P(S_J))`.
pub fn data_pac_bound(kl: f64, emp_risk_i: f64, params: &CatoniParams) -> Result<BoundBreakdown> {
    params.validate()?;
    check_sum("kl", kl)?;
    check_risk(emp_risk_i)?;
    let c = params.c_eta();
    let k = params.holdout() as f64;
    BoundBreakdown::assemble(TheoremId::DataPac, params.eta * c * emp_risk_i, c * params.ln_inv_delta() / k, c * kl / k)
}

/// The un-linearised bound `Φ⁻¹(R(Q,S_I) + (KL + ln(1/δ))/λ)`; never larger
/// than [`data_pac_bound`].
pub fn data_pac_bound_exact(kl: f64, emp_risk_i: f64, params: &CatoniParams) -> Result<f64> {
    params.validate()?;
    check_sum("kl", kl)?;
    check_risk(emp_risk_i)?;
    let lambda = params.lambda();
    phi_inv(emp_risk_i + (kl + params.ln_inv_delta()) / lambda, lambda, params.holdout())
}

fn log_dim_steps(d: usize, steps: usize) -> Result<f64> {
    let dt = d as f64 * steps as f64;
    if dt <= 1.0 {
        return Err(Error::domain(format!("d·T must exceed 1, got d = {d}, T = {steps}")));
    }
    Ok(dt.ln())
}

fn floored_bound(
    theorem_id: TheoremId,
    emp_risk_i: f64,
    weighted_sum: f64,
    d: usize,
    steps: usize,
    params: &CatoniParams,
) -> Result<BoundBreakdown> {
    params.validate()?;
    check_risk(emp_risk_i)?;
    check_sum("weighted gradient-difference sum", weighted_sum)?;
    let ln_dt = log_dim_steps(d, steps)?;
    let c = params.c_eta();
    let k = params.holdout() as f64;
    BoundBreakdown::assemble(
        theorem_id,
        params.eta * c * emp_risk_i,
        c * (params.ln_inv_delta() + 3.0) / k,
        c * ln_dt / k * weighted_sum,
    )
}

/// Floored gradient descent (plain or momentum).
///
/// `grad_diff_weighted_sum` is `Σ_t (γ_t/ε_t)² ‖∇f(W_{t−1},S) − ∇f(W_{t−1},S_J)‖²`.
pub fn fgd_bound(
    emp_risk_i: f64,
    grad_diff_weighted_sum: f64,
    d: usize,
    steps: usize,
    params: &CatoniParams,
) -> Result<BoundBreakdown> {
    floored_bound(TheoremId::Fgd, emp_risk_i, grad_diff_weighted_sum, d, steps, params)
}

/// Floored SGD. Identical arithmetic to [`fgd_bound`]; the sum is an
/// expectation over batch sequences, supplied by the caller.
pub fn fsgd_bound(
    emp_risk_i: f64,
    expected_grad_diff_weighted_sum: f64,
    d: usize,
    steps: usize,
    params: &CatoniParams,
) -> Result<BoundBreakdown> {
    floored_bound(TheoremId::Fsgd, emp_risk_i, expected_grad_diff_weighted_sum, d, steps, params)
}

/// Gradient Langevin dynamics. `weighted_gradnorm_sum` is
/// `E Σ_t (γ_t/σ_t)² L(W_{t−1})²` with `L(w)` the largest per-example gradient norm.
pub fn gld_bound(emp_risk_i: f64, weighted_gradnorm_sum: f64, params: &CatoniParams) -> Result<BoundBreakdown> {
    params.validate()?;
    check_risk(emp_risk_i)?;
    check_sum("weighted gradient-norm sum", weighted_gradnorm_sum)?;
    if params.m == 0 {
        return Err(Error::domain("GLD bound requires m ≥ 1"));
    }
    let c = params.c_eta();
    let k = params.holdout() as f64;
    let cd = c_delta(params.delta)?;
    BoundBreakdown::assemble(
        TheoremId::Gld,
        params.eta * c * emp_risk_i,
        c * params.ln_inv_delta() / k,
        c * cd / (2.0 * k * params.m as f64) * weighted_gradnorm_sum,
    )
}

/// GLD with the preset constants `5.1`, `1.01` and `0.505·C_δ`
/// (global Lipschitz constant `L`, `schedule_sum = Σ γ_t²/σ_t²`).
///
/// These constants correspond to `η ≈ 5.05`; `params.eta` is ignored.
pub fn gld_bound_printed(
    emp_risk_i: f64,
    lipschitz: f64,
    schedule_sum: f64,
    params: &CatoniParams,
) -> Result<BoundBreakdown> {
    params.validate()?;
    check_risk(emp_risk_i)?;
    check_sum("lipschitz constant", lipschitz)?;
    check_sum("schedule sum", schedule_sum)?;
    if params.m == 0 {
        return Err(Error::domain("GLD bound requires m ≥ 1"));
    }
    let k = params.holdout() as f64;
    let cd = c_delta(params.delta)?;
    BoundBreakdown::assemble(
        TheoremId::Gld,
        5.1 * emp_risk_i,
        1.01 * params.ln_inv_delta() / k,
        0.505 * cd * lipschitz * lipschitz / (k * params.m as f64) * schedule_sum,
    )
}

/// Stochastic gradient Langevin dynamics with batch size `b`.
pub fn sgld_bound(
    emp_risk_i: f64,
    weighted_gradnorm_sum: f64,
    batch_size: usize,
    params: &CatoniParams,
) -> Result<BoundBreakdown> {
    params.validate()?;
    check_risk(emp_risk_i)?;
    check_sum("weighted gradient-norm sum", weighted_gradnorm_sum)?;
    if batch_size == 0 {
        return Err(Error::domain("batch size must be at least 1"));
    }
    if params.m == 0 {
        return Err(Error::domain("SGLD bound requires m ≥ 1"));
    }
    let c = params.c_eta();
    let k = params.holdout() as f64;
    let cd = c_delta(params.delta)?;
    let factor = 4.0 / batch_size as f64 + cd / (2.0 * params.m as f64);
    BoundBreakdown::assemble(
        TheoremId::Sgld,
        params.eta * c * emp_risk_i,
        c * params.ln_inv_delta() / k,
        c / k * factor * weighted_gradnorm_sum,
    )
}

/// SGLD through the norm-subGaussian concentration path, with the preset
/// constants `5.1`, `1.01` and `16`. `params.eta` is ignored.
pub fn sgld_bound_subgaussian(
    emp_risk_i: f64,
    l0: f64,
    schedule_sum: f64,
    steps: usize,
    d: usize,
    params: &CatoniParams,
) -> Result<BoundBreakdown> {
    params.validate()?;
    check_risk(emp_risk_i)?;
    check_sum("L0", l0)?;
    check_sum("schedule sum", schedule_sum)?;
    if steps == 0 || d == 0 {
        return Err(Error::domain("T·d must be positive"));
    }
    if params.m == 0 {
        return Err(Error::domain("SGLD bound requires m ≥ 1"));
    }
    let k = params.holdout() as f64;
    let log_term = (8.0 * steps as f64 * d as f64 / params.delta).ln();
    BoundBreakdown::assemble(
        TheoremId::SgldSubg,
        5.1 * emp_risk_i,
        1.01 * params.ln_inv_delta() / k,
        16.0 * log_term * l0 * l0 * schedule_sum / (k * params.m as f64),
    )
}

/// Constant of the per-sample expectation bound on the weighted gradient
/// deviation, `5 · 6.3`. The assembled SGLD certificate above uses `16` instead;
/// both are kept as stated.
pub const SGLD_SUBG_EXPECTATION_CONST: f64 = 31.5;

/// `31.5 ln(8Td/δ) L0² Σγ²/σ² / m`: with probability `1 − δ` over `J`, the
/// expected weighted squared gradient deviation along an SGLD path is at most this.
pub fn sgld_subg_expectation_bound(
    l0: f64,
    schedule_sum: f64,
    steps: usize,
    d: usize,
    delta: f64,
    m: usize,
) -> Result<f64> {
    check_sum("L0", l0)?;
    check_sum("schedule sum", schedule_sum)?;
    if steps == 0 || d == 0 || m == 0 {
        return Err(Error::domain("T·d and m must be positive"));
    }
    check_delta(delta)?;
    let log_term = (8.0 * steps as f64 * d as f64 / delta).ln();
    Ok(SGLD_SUBG_EXPECTATION_CONST * log_term * l0 * l0 * schedule_sum / m as f64)
}

/// Scale parameters of the continuous Langevin diffusion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CldInputs {
    /// inverse temperature β
    pub beta: f64,
    /// ℓ2 coefficient λ
    pub lambda_reg: f64,
    /// `|f(w, z)| ≤ C`
    pub loss_bound: f64,
    /// global Lipschitz constant of f
    pub lipschitz: f64,
    /// time horizon T
    pub horizon: f64,
}

impl CldInputs {
    /// Decay rate `α = λ / e^{8βC}` of the gradient-difference integral.
    pub fn alpha(&self) -> f64 {
        self.lambda_reg / (8.0 * self.beta * self.loss_bound).exp()
    }
}

pub fn cld_bound(emp_risk_i: f64, inputs: &CldInputs, params: &CatoniParams) -> Result<BoundBreakdown> {
    params.validate()?;
    check_risk(emp_risk_i)?;
    check_positive("beta", inputs.beta)?;
    check_positive("lambda_reg", inputs.lambda_reg)?;
    check_positive("loss bound C", inputs.loss_bound)?;
    check_sum("lipschitz constant", inputs.lipschitz)?;
    check_sum("horizon", inputs.horizon)?;
    if params.m == 0 {
        return Err(Error::domain("CLD bound requires m ≥ 1"));
    }
    let c = params.c_eta();
    let k = params.holdout() as f64;
    let cd = c_delta(params.delta)?;
    let growth = (8.0 * inputs.beta * inputs.loss_bound).exp();
    let saturation = -(-inputs.lambda_reg * inputs.horizon / growth).exp_m1();
    let kl = c * cd * inputs.beta * inputs.lipschitz.powi(2) * growth * saturation
        / (2.0 * inputs.lambda_reg * k * params.m as f64);
    BoundBreakdown::assemble(TheoremId::Cld, params.eta * c * emp_risk_i, c * params.ln_inv_delta() / k, kl)
}

/// Rounded gradient descent with fixed precision `eps`.
///
/// `grad_diff_sum` is `Σ_t E[γ_t² ‖∇f(W_{t−1},S) − ∇f(W_{t−1},S_J)‖²]`. The
/// lattice parameter `p` enters as `3Tdp` in the confidence term and `ln(1/p)`
/// in the KL term; `p = 1/(Td)` recovers the `+3` / `ln(dT)` form.
pub fn rgd_bound(
    emp_risk_i: f64,
    grad_diff_sum: f64,
    eps: f64,
    p: f64,
    d: usize,
    steps: usize,
    params: &CatoniParams,
) -> Result<BoundBreakdown> {
    params.validate()?;
    check_risk(emp_risk_i)?;
    check_sum("gradient-difference sum", grad_diff_sum)?;
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::domain(format!("eps must lie in (0, 1), got {eps}")));
    }
    if !(p > 0.0 && p < 1.0 / 3.0) {
        return Err(Error::domain(format!("p must lie in (0, 1/3), got {p}")));
    }
    if d == 0 || steps == 0 {
        return Err(Error::domain("d and T must be positive"));
    }
    let c = params.c_eta();
    let k = params.holdout() as f64;
    let lattice_mass = 3.0 * steps as f64 * d as f64 * p;
    BoundBreakdown::assemble(
        TheoremId::Rgd,
        params.eta * c * emp_risk_i,
        c * (params.ln_inv_delta() + lattice_mass) / k,
        c * (1.0 / p).ln() / (k * eps * eps) * grad_diff_sum,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values below were produced with 40-digit arithmetic.
    const C_ETA_1: f64 = 1.581_976_706_869_326_4;
    const C_ETA_2: f64 = 1.156_517_642_749_665_7;
    const C_DELTA_01: f64 = 17.193_807_738_308_02;
    const C_DELTA_001: f64 = 25.356_508_080_773_89;

    fn params(eta: f64, n: usize, m: usize, delta: f64) -> CatoniParams {
        CatoniParams::new(eta, n, m, delta).unwrap()
    }

    #[test]
    fn c_eta_reference_values() {
        assert!((c_eta(1.0).unwrap() - C_ETA_1).abs() < 1e-15);
        assert!((c_eta(2.0).unwrap() - C_ETA_2).abs() < 1e-15);
        assert!(c_eta(50.0).unwrap() - 1.0 < 1e-20);
        assert!(c_eta(0.0).is_err());
        assert!(c_eta(-1.0).is_err());
        assert!(c_eta(f64::NAN).is_err());
    }

    #[test]
    fn c_delta_reference_values() {
        assert!((c_delta(0.1).unwrap() - C_DELTA_01).abs() < 1e-13);
        assert!((c_delta(0.01).unwrap() - C_DELTA_001).abs() < 1e-13);
        assert!((c_delta(1.0 - 1e-15).unwrap() - 4.0).abs() < 1e-6);
        assert!(c_delta(0.0).is_err());
        assert!(c_delta(1.0).is_err());
    }

    #[test]
    fn phi_endpoints_and_reference() {
        for &(lambda, k) in &[(0.5, 1usize), (50.0, 100), (500.0, 100)] {
            assert_eq!(phi(0.0, lambda, k).unwrap(), 0.0);
            assert!((phi(1.0, lambda, k).unwrap() - 1.0).abs() < 1e-14);
            assert_eq!(phi_inv(0.0, lambda, k).unwrap(), 0.0);
            assert!((phi_inv(1.0, lambda, k).unwrap() - 1.0).abs() < 1e-14);
        }
        let v = phi(0.3, 50.0, 100).unwrap();
        assert!((v - 0.251_218_969_828_263_1).abs() < 1e-15);
        assert!((phi_inv(v, 50.0, 100).unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn phi_domain_errors() {
        // 1/(1 − e^{−1}) ≈ 1.58 is the pole for λ/k = 1
        assert!(phi(1.6, 1.0, 1).is_err());
        assert!(phi(0.5, 0.0, 1).is_err());
        assert!(phi(0.5, 1.0, 0).is_err());
        assert!(phi_inv(f64::INFINITY, 1.0, 1).is_err());
    }

    #[test]
    fn multiplier_is_one() {
        assert!((per_sample_multiplier(0.3, 0.5).unwrap() - 1.0).abs() < 1e-14);
        assert!((per_sample_multiplier(0.5, 2.0).unwrap() - 1.0).abs() < 1e-14);
        assert!((per_sample_multiplier(1e-12, 2.0).unwrap() - 1.0).abs() < 1e-14);
        assert!(per_sample_multiplier(0.0, 1.0).is_err());
    }

    #[test]
    fn data_pac_reference() {
        let b = data_pac_bound(0.0, 0.0, &params(1.0, 1000, 500, 0.1)).unwrap();
        assert!((b.total - 0.007_285_271_965_402_244).abs() < 1e-15);
        assert_eq!(b.theorem_id, TheoremId::DataPac);
        assert!(CatoniParams::new(1.0, 10, 10, 0.1).is_err());
    }

    #[test]
    fn data_pac_grows_with_eta_beyond_optimum() {
        // with emp = 1 the ηC_η factor is increasing for all η
        let mut prev = 0.0;
        for i in 1..40 {
            let eta = 0.25 * i as f64;
            let t = data_pac_bound(0.0, 1.0, &params(eta, 100, 50, 0.1)).unwrap().empirical_term;
            assert!(t > prev);
            prev = t;
        }
    }

    #[test]
    fn fgd_reference() {
        let p = params(1.0, 60000, 30000, 0.1);
        let b = fgd_bound(0.02, 5.0, 1_000_000, 1000, &p).unwrap();
        assert!((b.total - 0.037_383_106_981_548_515).abs() < 1e-14);
        let zero = fgd_bound(0.0, 0.0, 1_000_000, 1000, &p).unwrap();
        assert!((zero.total - C_ETA_1 * ((10f64).ln() + 3.0) / 30000.0).abs() < 1e-16);
        assert!(fgd_bound(0.0, 0.0, 1, 1, &p).is_err());
        let fs = fsgd_bound(0.02, 5.0, 1_000_000, 1000, &p).unwrap();
        assert_eq!(fs.total, b.total);
        assert_eq!(fs.theorem_id, TheoremId::Fsgd);
    }

    #[test]
    fn gld_reference_and_m_scaling() {
        let b = gld_bound(0.1, 100.0, &params(1.0, 2000, 1000, 0.1)).unwrap();
        assert!((b.kl_term - 1.360_010_167_219_643e-3).abs() < 1e-16);
        assert_eq!(gld_bound(0.1, 0.0, &params(1.0, 2000, 1000, 0.1)).unwrap().kl_term, 0.0);
        assert!(gld_bound(0.1, 1.0, &params(1.0, 2000, 0, 0.1)).is_err());
        // m = 500 → 1000 (n fixed): kl_term ratio (1500·500)/(1000·1000)
        let a = gld_bound(0.1, 100.0, &params(1.0, 2000, 500, 0.1)).unwrap();
        let ratio = b.kl_term / a.kl_term;
        assert!((ratio - (1500.0 * 500.0) / (1000.0 * 1000.0)).abs() < 1e-12);
        assert!((b.confidence_term / a.confidence_term - 1500.0 / 1000.0).abs() < 1e-12);
    }

    #[test]
    fn gld_printed_constants() {
        let p = params(1.0, 2000, 1000, 0.1);
        let b = gld_bound_printed(0.1, 2.0, 10.0, &p).unwrap();
        assert!((b.empirical_term - 0.51).abs() < 1e-15);
        assert!((b.confidence_term - 1.01 * (10f64).ln() / 1000.0).abs() < 1e-16);
        assert!((b.kl_term - 0.505 * C_DELTA_01 * 4.0 * 10.0 / 1e6).abs() < 1e-16);
    }

    #[test]
    fn sgld_reference_and_large_batch_limit() {
        let p = params(1.0, 2000, 1000, 0.1);
        let b = sgld_bound(0.1, 100.0, 4, &p).unwrap();
        assert!((b.kl_term - 0.159_557_680_854_152_3).abs() < 1e-15);
        let huge = sgld_bound(0.1, 100.0, usize::MAX, &p).unwrap();
        let g = gld_bound(0.1, 100.0, &p).unwrap();
        assert!((huge.kl_term - g.kl_term).abs() < 1e-15);
        assert!(sgld_bound(0.1, 1.0, 0, &p).is_err());
    }

    #[test]
    fn sgld_subgaussian_reference() {
        let p = params(1.0, 2000, 1000, 0.1);
        let b = sgld_bound_subgaussian(0.0, 1.0, 10.0, 100, 10, &p).unwrap();
        assert!((b.kl_term - 1.806_365_106_184_963e-3).abs() < 1e-16);
        assert_eq!(sgld_bound_subgaussian(0.0, 0.0, 10.0, 100, 10, &p).unwrap().kl_term, 0.0);
        assert!(sgld_bound_subgaussian(0.0, 1.0, 1.0, 0, 10, &p).is_err());
    }

    #[test]
    fn sgld_subgaussian_expectation_reference() {
        assert_eq!(SGLD_SUBG_EXPECTATION_CONST, 5.0 * 6.3);
        let e = sgld_subg_expectation_bound(1.0, 10.0, 100, 10, 0.1, 1000).unwrap();
        assert!((e - 3.556_281_302_801_645_3).abs() < 1e-14);
        // same inputs, k = m = 1000: only the constant separates the two forms
        let p = params(1.0, 2000, 1000, 0.1);
        let kl = sgld_bound_subgaussian(0.0, 1.0, 10.0, 100, 10, &p).unwrap().kl_term;
        assert!((e / kl / 1000.0 - 31.5 / 16.0).abs() < 1e-12);
        assert!(sgld_subg_expectation_bound(1.0, 1.0, 1, 1, 1.0, 1).is_err());
    }

    #[test]
    fn cld_reference_and_limits() {
        let p = params(1.0, 2000, 1000, 0.1);
        let inputs = CldInputs { beta: 1.0, lambda_reg: 1.0, loss_bound: 0.5, lipschitz: 1.0, horizon: 10.0 };
        let b = cld_bound(0.0, &inputs, &p).unwrap();
        assert!((b.kl_term - 1.242_730_968_163_810_3e-4).abs() < 1e-17);
        let zero = cld_bound(0.0, &CldInputs { horizon: 0.0, ..inputs }, &p).unwrap();
        assert_eq!(zero.kl_term, 0.0);
        let sat = cld_bound(0.0, &CldInputs { horizon: 1e9, ..inputs }, &p).unwrap();
        assert!((sat.kl_term - 7.425_403_915_645_966e-4).abs() < 1e-17);
        assert!(cld_bound(0.0, &CldInputs { beta: 0.0, ..inputs }, &p).is_err());
    }

    #[test]
    fn rgd_matches_fgd_at_default_lattice() {
        let p = params(1.0, 60000, 30000, 0.1);
        let (d, steps, eps) = (1000usize, 100usize, 0.01);
        let lattice = 1.0 / (d * steps) as f64;
        let sum_gamma = 5.0 * eps * eps;
        let r = rgd_bound(0.02, sum_gamma, eps, lattice, d, steps, &p).unwrap();
        let f = fgd_bound(0.02, 5.0, d, steps, &p).unwrap();
        assert!((r.kl_term - f.kl_term).abs() < 1e-15);
        assert!((r.confidence_term - f.confidence_term).abs() < 1e-15);
        let half = rgd_bound(0.02, sum_gamma, eps / 2.0, lattice, d, steps, &p).unwrap();
        assert!((half.kl_term / r.kl_term - 4.0).abs() < 1e-12);
        assert!(rgd_bound(0.02, 1.0, 1.5, lattice, d, steps, &p).is_err());
        assert!(rgd_bound(0.02, 1.0, 0.1, 0.4, d, steps, &p).is_err());
    }

    #[test]
    fn theorem_id_round_trip() {
        for t in TheoremId::ALL {
            assert_eq!(t.as_str().parse::<TheoremId>().unwrap(), t);
        }
        assert!("nope".parse::<TheoremId>().is_err());
    }
}
