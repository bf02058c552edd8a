//! Certificates from trajectory summaries.
//!
//! [`certify`] picks the quantities a theorem consumes out of a
//! [`LogSummary`], echoes them into the report and evaluates the bound. The
//! same echoed inputs are evaluated again when the report is checked, so a
//! report read back from disk can be verified on its own.

pub mod experiments;
pub mod shape;

use serde::{Deserialize, Serialize};

use crate::discrete_noise::default_p;
use crate::error::{Error, Result};
use crate::optimizers::{Algorithm, LogSummary, Risks, SumProvenance};
use crate::scalar_bounds::{self as sb, BoundBreakdown, CatoniParams, CldInputs, TheoremId};

/// Theorem inputs that a trajectory does not record.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Extras {
    /// `KL(Q‖P(S_J))` for the generic data-dependent bound
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kl: Option<f64>,
    /// global Lipschitz constant; CLD falls back to the largest logged `L(W)`
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<f64>,
    /// `L0` for the norm-subGaussian SGLD bound; falls back to the largest logged `L(W)`
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l0: Option<f64>,
    /// lattice parameter of the rounding prior; defaults to `1/(Td)`
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rgd_p: Option<f64>,
}

/// Every number a bound evaluation depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportInputs {
    pub eta: f64,
    pub delta: f64,
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub steps: usize,
    pub emp_risk_i: f64,
    /// name of the logged cumulative sum the KL term uses
    pub sum_name: String,
    pub sum: f64,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub l0: Option<f64>,
    #[serde(default)]
    pub cld: Option<CldInputs>,
    #[serde(default)]
    pub rgd_p: Option<f64>,
    #[serde(default)]
    pub kl: Option<f64>,
}

impl ReportInputs {
    pub fn params(&self) -> Result<CatoniParams> {
        CatoniParams::new(self.eta, self.n, self.m, self.delta)
    }
}

fn need<T>(v: Option<T>, field: &str) -> Result<T> {
    v.ok_or_else(|| Error::contract(format!("missing input `{field}`")))
}

/// Evaluate `theorem` on echoed inputs.
pub fn evaluate(theorem: TheoremId, inputs: &ReportInputs) -> Result<BoundBreakdown> {
    let p = inputs.params()?;
    let emp = inputs.emp_risk_i;
    match theorem {
        TheoremId::DataPac => sb::data_pac_bound(need(inputs.kl, "kl")?, emp, &p),
        TheoremId::Fgd => sb::fgd_bound(emp, inputs.sum, inputs.d, inputs.steps, &p),
        TheoremId::Fsgd => sb::fsgd_bound(emp, inputs.sum, inputs.d, inputs.steps, &p),
        TheoremId::Gld => sb::gld_bound(emp, inputs.sum, &p),
        TheoremId::Sgld => sb::sgld_bound(emp, inputs.sum, need(inputs.batch_size, "batch_size")?, &p),
        TheoremId::SgldSubg => {
            sb::sgld_bound_subgaussian(emp, need(inputs.l0, "l0")?, inputs.sum, inputs.steps, inputs.d, &p)
        }
        TheoremId::Cld => sb::cld_bound(emp, &need(inputs.cld, "cld")?, &p),
        // The logged sum already carries 1/ε_t², so the precision enters as 1.
        TheoremId::Rgd => sb::rgd_bound(emp, inputs.sum, 1.0, need(inputs.rgd_p, "rgd_p")?, inputs.d, inputs.steps, &p),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub rng_algorithm: String,
    pub config_digest: Option<String>,
    pub provenance: SumProvenance,
    /// where a Lipschitz-type constant came from, when one was needed
    #[serde(default)]
    pub constant_source: Option<String>,
    /// FSGD steps whose batch missed `J`
    #[serde(default)]
    pub empty_intersection_steps: usize,
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub schema_version: u32,
    pub theorem_id: TheoremId,
    pub breakdown: BoundBreakdown,
    pub inputs: ReportInputs,
    /// final risks of the certified trajectory
    pub risks: Risks,
    /// `R(W_T, S) − R(W_T, S_I)`
    pub full_sample_gap: f64,
    pub vacuous: bool,
    pub metadata: ReportMeta,
}

impl BoundReport {
    /// Absolute difference between the stored total and a fresh evaluation.
    pub fn recheck(&self) -> Result<f64> {
        let again = evaluate(self.theorem_id, &self.inputs)?;
        Ok((again.total - self.breakdown.total).abs())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Term-by-term table for terminals.
    pub fn summary_table(&self) -> String {
        let b = &self.breakdown;
        let mut out = String::new();
        out.push_str(&format!("theorem            {}\n", self.theorem_id));
        out.push_str(&format!(
            "n, m, d, T         {}, {}, {}, {}\n",
            self.inputs.n, self.inputs.m, self.inputs.d, self.inputs.steps
        ));
        out.push_str(&format!("eta, delta         {}, {}\n", self.inputs.eta, self.inputs.delta));
        out.push_str(&format!("{:<18} {}\n", self.inputs.sum_name, self.inputs.sum));
        out.push_str(&format!("R(W_T, S_I)        {:.6}\n", self.inputs.emp_risk_i));
        out.push_str(&format!("R(W_T, S)          {:.6}  (gap {:+.6})\n", self.risks.train_s, self.full_sample_gap));
        if let Some(test) = self.risks.test {
            out.push_str(&format!("test risk          {test:.6}\n"));
        }
        out.push_str("----------------------------------------\n");
        out.push_str(&format!("empirical term     {:.6}\n", b.empirical_term));
        out.push_str(&format!("confidence term    {:.6}\n", b.confidence_term));
        out.push_str(&format!("KL term            {:.6}\n", b.kl_term));
        out.push_str(&format!("complexity part    {:.6}  (confidence + KL)\n", b.confidence_term + b.kl_term));
        out.push_str(&format!("total              {:.6}{}\n", b.total, if self.vacuous { "  (vacuous)" } else { "" }));
        out
    }
}

fn expected_algorithms(theorem: TheoremId) -> &'static [Algorithm] {
    match theorem {
        TheoremId::DataPac => &[],
        TheoremId::Fgd => &[Algorithm::Fgd],
        TheoremId::Fsgd => &[Algorithm::Fsgd],
        TheoremId::Rgd => &[Algorithm::Rgd],
        TheoremId::Gld => &[Algorithm::Gld],
        TheoremId::Sgld | TheoremId::SgldSubg => &[Algorithm::Sgld],
        TheoremId::Cld => &[Algorithm::Cld],
    }
}

/// Certify a trajectory summary under `theorem`.
pub fn certify(
    summary: &LogSummary,
    theorem: TheoremId,
    params: &CatoniParams,
    extras: &Extras,
) -> Result<BoundReport> {
    params.validate()?;
    let meta = &summary.meta;
    if (params.n, params.m) != (meta.n, meta.m) {
        return Err(Error::contract(format!(
            "parameters describe n = {}, m = {} but the trajectory has n = {}, m = {}",
            params.n, params.m, meta.n, meta.m
        )));
    }
    let allowed = expected_algorithms(theorem);
    if !allowed.is_empty() && !allowed.contains(&meta.algorithm) {
        return Err(Error::contract(format!("theorem {theorem} does not apply to a {} trajectory", meta.algorithm)));
    }
    let sums = &summary.sums;
    let mut constant_source = None;
    let mut inputs = ReportInputs {
        eta: params.eta,
        delta: params.delta,
        n: meta.n,
        m: meta.m,
        d: meta.d,
        steps: meta.steps,
        emp_risk_i: summary.final_risks.train_i,
        sum_name: String::new(),
        sum: 0.0,
        batch_size: None,
        l0: None,
        cld: None,
        rgd_p: None,
        kl: None,
    };
    let mut use_sum = |name: &str, value: f64, present: bool| -> Result<()> {
        if !present {
            return Err(Error::contract(format!("trajectory does not record `{name}`")));
        }
        inputs.sum_name = name.to_string();
        inputs.sum = value;
        Ok(())
    };
    let has_eps = meta.schedule.eps.is_some();
    let has_sigma = meta.schedule.sigma.is_some();
    match theorem {
        TheoremId::DataPac => {
            use_sum("kl", extras.kl.unwrap_or(f64::NAN), extras.kl.is_some())?;
            inputs.kl = extras.kl;
        }
        TheoremId::Fgd | TheoremId::Fsgd | TheoremId::Rgd => {
            use_sum("grad_diff_sq_weighted_eps", sums.grad_diff_sq_weighted_eps, has_eps)?;
            if theorem == TheoremId::Rgd {
                inputs.rgd_p = Some(match extras.rgd_p {
                    Some(p) => p,
                    None => default_p(meta.steps, meta.d)?,
                });
            }
        }
        TheoremId::Gld => use_sum("lw_sq_weighted", sums.lw_sq_weighted, has_sigma)?,
        TheoremId::Sgld => {
            use_sum("lw_sq_weighted", sums.lw_sq_weighted, has_sigma)?;
            inputs.batch_size = Some(need(meta.batch.map(|b| b.size), "batch.size")?);
        }
        TheoremId::SgldSubg => {
            use_sum("gamma_sq_over_sigma_sq", sums.gamma_sq_over_sigma_sq, has_sigma)?;
            inputs.l0 = Some(match extras.l0 {
                Some(l0) => {
                    constant_source = Some("l0 supplied".to_string());
                    l0
                }
                None => {
                    constant_source = Some("l0 = largest logged L(W)".to_string());
                    summary.max_lw
                }
            });
        }
        TheoremId::Cld => {
            let cld = need(meta.schedule.cld, "schedule.cld")?;
            use_sum("cld_quadrature", sums.cld_quadrature, true)?;
            let lipschitz = match extras.lipschitz {
                Some(l) => {
                    constant_source = Some("lipschitz supplied".to_string());
                    l
                }
                None => {
                    constant_source = Some("lipschitz = largest logged L(W)".to_string());
                    summary.max_lw
                }
            };
            inputs.cld = Some(CldInputs {
                beta: cld.beta,
                lambda_reg: cld.lambda_reg,
                loss_bound: cld.loss_bound,
                lipschitz,
                horizon: cld.dt * meta.steps as f64,
            });
        }
    }
    let breakdown = evaluate(theorem, &inputs)?;
    let risks = summary.final_risks;
    Ok(BoundReport {
        schema_version: REPORT_SCHEMA_VERSION,
        theorem_id: theorem,
        vacuous: breakdown.is_vacuous(),
        breakdown,
        inputs,
        risks,
        full_sample_gap: risks.train_s - risks.train_i,
        metadata: ReportMeta {
            algorithm: meta.algorithm,
            seed: meta.seed,
            rng_algorithm: meta.rng_algorithm.clone(),
            config_digest: meta.config_digest.clone(),
            provenance: summary.provenance,
            constant_source,
            empty_intersection_steps: summary.empty_intersection_steps,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{sample_prior_indices, synth_blobs};
    use crate::models::ModelArch;
    use crate::optimizers::{run, RunSpec, Schedule, TrainData};

    fn fgd_summary(steps: usize) -> LogSummary {
        let ds = synth_blobs(200, 2, 2, 4.0, 1).unwrap();
        let split = sample_prior_indices(200, 100, 1).unwrap();
        let spec =
            RunSpec::new(Algorithm::Fgd, ModelArch::linear(2, 2), Schedule::constant(steps, 0.1).with_eps(0.01), 1);
        run(&spec, TrainData { train: &ds, split: &split, test: None }).unwrap().summary()
    }

    #[test]
    fn zero_kl_log_reduces_to_confidence_form() {
        let mut s = fgd_summary(1);
        s.sums.grad_diff_sq_weighted_eps = 0.0;
        let p = CatoniParams::new(1.0, 200, 100, 0.1).unwrap();
        let r = certify(&s, TheoremId::Fgd, &p, &Extras::default()).unwrap();
        let c = sb::c_eta(1.0).unwrap();
        let want = c * s.final_risks.train_i + c * ((10f64).ln() + 3.0) / 100.0;
        assert!((r.breakdown.total - want).abs() < 1e-15);
        assert_eq!(r.breakdown.kl_term, 0.0);
    }

    #[test]
    fn report_rechecks_and_round_trips() {
        let s = fgd_summary(20);
        let p = CatoniParams::new(1.0, 200, 100, 0.1).unwrap();
        let r = certify(&s, TheoremId::Fgd, &p, &Extras::default()).unwrap();
        assert!(r.recheck().unwrap() <= 1e-12);
        let back: BoundReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
        assert!(r.summary_table().contains("KL term"));
    }

    #[test]
    fn wrong_theorem_or_sizes_are_contract_errors() {
        let s = fgd_summary(3);
        let p = CatoniParams::new(1.0, 200, 100, 0.1).unwrap();
        assert!(matches!(certify(&s, TheoremId::Gld, &p, &Extras::default()), Err(Error::Contract(_))));
        let wrong = CatoniParams::new(1.0, 200, 50, 0.1).unwrap();
        assert!(matches!(certify(&s, TheoremId::Fgd, &wrong, &Extras::default()), Err(Error::Contract(_))));
        match certify(&s, TheoremId::DataPac, &p, &Extras::default()) {
            Err(Error::Contract(msg)) => assert!(msg.contains("kl")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn monotone_in_delta_and_sum() {
        let s = fgd_summary(10);
        let at = |delta: f64, scale: f64| {
            let mut s = s.clone();
            s.sums.grad_diff_sq_weighted_eps *= scale;
            let p = CatoniParams::new(1.0, 200, 100, delta).unwrap();
            certify(&s, TheoremId::Fgd, &p, &Extras::default()).unwrap().breakdown.total
        };
        assert!(at(0.2, 1.0) < at(0.1, 1.0));
        assert!(at(0.1, 2.0) > at(0.1, 1.0));
    }
}
