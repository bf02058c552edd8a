//! Exact coefficient structure of the floored-gradient bounds.
//!
//! A floored bound reads
//! `C_η [ a·R + (ln(1/δ) + c)/h + k·Σ ]` with `C_η = 1/(1 − e^{−η})`.
//! [`BoundShape`] keeps `η`, `a`, `1/δ`, `c`, `h` and `k` as exact values so
//! that a printed formula can be compared with the one the certifier
//! evaluates without any floating-point tolerance.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar_bounds::{self as sb, CatoniParams};

/// A reduced fraction with positive denominator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ratio {
    num: i64,
    den: i64,
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

impl Ratio {
    pub fn new(num: i64, den: i64) -> Result<Self> {
        if den == 0 {
            return Err(Error::domain("zero denominator"));
        }
        let g = gcd(num, den).max(1) * den.signum();
        Ok(Ratio { num: num / g, den: den / g })
    }

    pub const fn int(v: i64) -> Self {
        Ratio { num: v, den: 1 }
    }

    pub fn recip(self) -> Result<Self> {
        Ratio::new(self.den, self.num)
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

/// Coefficient in front of `Σ (γ_t/ε_t)² ‖g_t‖²`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SumCoefficient {
    /// `ln(dT) / h`
    LogDtOver { holdout: u64 },
    /// printed without any coefficient
    Unit,
}

impl fmt::Display for SumCoefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SumCoefficient::LogDtOver { holdout } => write!(f, "ln(dT)/{holdout}"),
            SumCoefficient::Unit => f.write_str("1"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundShape {
    /// `η` inside the outer factor `1/(1 − e^{−η})`
    pub outer_eta: Ratio,
    /// coefficient of `R(W_T, S_I)` inside the bracket
    pub risk_coeff: Ratio,
    /// argument of the logarithm in the confidence term, `1/δ`
    pub conf_log_arg: Ratio,
    /// additive constant next to the logarithm
    pub conf_const: i64,
    /// denominator of the confidence term
    pub conf_holdout: u64,
    pub sum: SumCoefficient,
}

impl BoundShape {
    /// Value of the formula; `d` and `steps` feed `ln(dT)`.
    pub fn evaluate(&self, emp_risk_i: f64, sum: f64, d: usize, steps: usize) -> Result<f64> {
        let outer = sb::c_eta(self.outer_eta.to_f64())?;
        let conf = (self.conf_log_arg.to_f64().ln() + self.conf_const as f64) / self.conf_holdout as f64;
        let k = match self.sum {
            SumCoefficient::LogDtOver { holdout } => (d as f64 * steps as f64).ln() / holdout as f64,
            SumCoefficient::Unit => 1.0,
        };
        Ok(outer * (self.risk_coeff.to_f64() * emp_risk_i + conf + k * sum))
    }
}

/// The structure the floored bounds evaluate for exact `η`, `δ`, `n`, `m`.
pub fn floored_shape(eta: Ratio, delta: Ratio, n: u64, m: u64) -> Result<BoundShape> {
    if m >= n {
        return Err(Error::domain("m must be < n"));
    }
    Ok(BoundShape {
        outer_eta: eta,
        risk_coeff: eta,
        conf_log_arg: delta.recip()?,
        conf_const: 3,
        conf_holdout: n - m,
        sum: SumCoefficient::LogDtOver { holdout: n - m },
    })
}

/// `1/(1−e^{−1}) [ R + (ln 10 + 3)/30000 + ln(dT)/30000 · Σ ]`
pub const MNIST_PRINTED: BoundShape = BoundShape {
    outer_eta: Ratio::int(1),
    risk_coeff: Ratio::int(1),
    conf_log_arg: Ratio::int(10),
    conf_const: 3,
    conf_holdout: 30000,
    sum: SumCoefficient::LogDtOver { holdout: 30000 },
};

/// `1/(1−e^{−3}) [ 3R + (ln 10 + 3)/40000 + Σ ]`
pub const CIFAR_PRINTED: BoundShape = BoundShape {
    outer_eta: Ratio::int(3),
    risk_coeff: Ratio::int(3),
    conf_log_arg: Ratio::int(10),
    conf_const: 3,
    conf_holdout: 40000,
    sum: SumCoefficient::Unit,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermComparison {
    pub term: String,
    pub printed: String,
    pub derived: String,
    pub matches: bool,
}

pub fn compare(printed: &BoundShape, derived: &BoundShape) -> Vec<TermComparison> {
    let row = |term: &str, p: String, d: String| TermComparison {
        term: term.to_string(),
        matches: p == d,
        printed: p,
        derived: d,
    };
    vec![
        row("outer 1/(1-e^-eta)", printed.outer_eta.to_string(), derived.outer_eta.to_string()),
        row("risk coefficient", printed.risk_coeff.to_string(), derived.risk_coeff.to_string()),
        row(
            "confidence term",
            format!("(ln({}) + {})/{}", printed.conf_log_arg, printed.conf_const, printed.conf_holdout),
            format!("(ln({}) + {})/{}", derived.conf_log_arg, derived.conf_const, derived.conf_holdout),
        ),
        row("sum coefficient", printed.sum.to_string(), derived.sum.to_string()),
    ]
}

/// One printed formula checked against the certifier at a chosen `η`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeCase {
    pub name: String,
    pub eta: Ratio,
    pub terms: Vec<TermComparison>,
    /// largest gap between [`BoundShape::evaluate`] on the derived shape and
    /// the numeric bound, over a small grid of risks and sums
    pub numeric_gap: f64,
}

impl ShapeCase {
    pub fn all_match(&self) -> bool {
        self.terms.iter().all(|t| t.matches)
    }
}

fn case(name: &str, printed: &BoundShape, eta: Ratio, n: u64, m: u64, d: usize, steps: usize) -> Result<ShapeCase> {
    let delta = Ratio::new(1, 10)?;
    let derived = floored_shape(eta, delta, n, m)?;
    let params = CatoniParams::new(eta.to_f64(), n as usize, m as usize, delta.to_f64())?;
    let mut gap = 0.0f64;
    for &emp in &[0.0, 0.011, 0.3] {
        for &sum in &[0.0, 1.0, 250.0] {
            let numeric = sb::fsgd_bound(emp, sum, d, steps, &params)?.total;
            gap = gap.max((numeric - derived.evaluate(emp, sum, d, steps)?).abs());
        }
    }
    Ok(ShapeCase { name: name.to_string(), eta, terms: compare(printed, &derived), numeric_gap: gap })
}

/// The printed experiment formulas against the certifier, at the `η` each
/// formula implies and at the `η` stated next to it.
pub fn printed_cases() -> Result<Vec<ShapeCase>> {
    Ok(vec![
        case("mnist, eta = 1", &MNIST_PRINTED, Ratio::int(1), 60000, 30000, 1_407_370, 990)?,
        case("mnist, eta = 3/2", &MNIST_PRINTED, Ratio::new(3, 2)?, 60000, 30000, 1_407_370, 990)?,
        case("cifar, eta = 3", &CIFAR_PRINTED, Ratio::int(3), 50000, 10000, 18_072_202, 8000)?,
        case("cifar, eta = 2", &CIFAR_PRINTED, Ratio::int(2), 50000, 10000, 18_072_202, 8000)?,
    ])
}
