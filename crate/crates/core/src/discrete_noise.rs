//! Lattice primitives behind the floored and rounded methods.
//!
//! Two integer maps are provided and deliberately named apart:
//! [`floor_vec`] truncates toward zero (sign-magnitude floor) and is what the
//! floored updates use, while [`round_vec`] adds a fair coin to the ordinary
//! floor toward −∞ and is what the rounded update uses.
//!
//! The prior increment `ξ` is a product of independent one-dimensional
//! lattice laws `Pr[a] ∝ p^{a²}` on `ℤ`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;

/// Terms `p^{i²}` below this are dropped from every lattice series.
pub const SERIES_CUTOFF: f64 = 1e-16;

/// Integer lattice point.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntVector(pub Vec<i64>);

impl IntVector {
    pub fn zeros(d: usize) -> Self {
        IntVector(vec![0; d])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn squared_norm(&self) -> f64 {
        self.0.iter().map(|&a| (a as f64) * (a as f64)).sum()
    }

    pub fn count_nonzero(&self) -> usize {
        self.0.iter().filter(|&&a| a != 0).count()
    }
}

/// Parameters of the discrete prior increment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridNoiseSpec {
    pub p: f64,
    pub d: usize,
    pub truncation_radius: usize,
}

impl GridNoiseSpec {
    pub fn new(p: f64, d: usize) -> Result<Self> {
        check_p(p)?;
        if d == 0 {
            return Err(Error::domain("lattice dimension must be positive"));
        }
        Ok(GridNoiseSpec { p, d, truncation_radius: truncation_radius(p)? })
    }

    pub fn log_normalizer(&self) -> f64 {
        series(self.p, self.truncation_radius).ln()
    }
}

fn check_p(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 / 3.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("p must lie in (0, 1/3), got {p}")))
    }
}

fn check_finite_vec(x: &[f64]) -> Result<()> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::domain(format!("component {i} is not finite ({})", x[i]))),
        None => Ok(()),
    }
}

/// Smallest `r ≥ 1` with `p^{r²} < 1e-16`.
pub fn truncation_radius(p: f64) -> Result<usize> {
    check_p(p)?;
    let ln_p = p.ln();
    let mut r = 1usize;
    while ((r * r) as f64) * ln_p >= SERIES_CUTOFF.ln() {
        r += 1;
    }
    Ok(r)
}

fn series(p: f64, radius: usize) -> f64 {
    // summed from the tail so the small terms are not absorbed
    let ln_p = p.ln();
    let tail: f64 = (1..=radius).rev().map(|i| ((i * i) as f64 * ln_p).exp()).sum();
    1.0 + 2.0 * tail
}

/// Sign-magnitude floor: `⌊x⌋` for `x ≥ 0`, `−⌊−x⌋` for `x < 0`.
pub fn floor_vec(x: &[f64]) -> Result<IntVector> {
    check_finite_vec(x)?;
    Ok(IntVector(x.iter().map(|v| v.trunc() as i64).collect()))
}

/// Stochastic rounding `⌊x⌋ + R` with `R` a fair coin per component.
pub fn round_vec(x: &[f64], rng: &mut Stream) -> Result<IntVector> {
    check_finite_vec(x)?;
    Ok(IntVector(x.iter().map(|v| v.floor() as i64 + i64::from(rng.random::<bool>())).collect()))
}

/// `Z(p) = Σ_{i∈ℤ} p^{i²}`.
pub fn xi_normalizer(p: f64) -> Result<f64> {
    Ok(series(p, truncation_radius(p)?))
}

/// `ln Pr[ξ = a] = −d ln Z(p) − ln(1/p) Σ_k a_k²`.
pub fn xi_log_pmf(a: &IntVector, spec: &GridNoiseSpec) -> Result<f64> {
    if a.len() != spec.d {
        return Err(Error::contract(format!("lattice point has length {}, expected d = {}", a.len(), spec.d)));
    }
    Ok(-(spec.d as f64) * spec.log_normalizer() + spec.p.ln() * a.squared_norm())
}

/// One-dimensional inverse-CDF table over `[-r, r]` (ascending).
#[derive(Clone, Debug)]
pub struct LatticeSampler {
    spec: GridNoiseSpec,
    cdf: Vec<f64>,
}

impl LatticeSampler {
    pub fn new(spec: GridNoiseSpec) -> Self {
        let r = spec.truncation_radius as i64;
        let ln_p = spec.p.ln();
        let weights: Vec<f64> = (-r..=r).map(|a| ((a * a) as f64 * ln_p).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut acc = 0.0;
        let cdf = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        LatticeSampler { spec, cdf }
    }

    pub fn spec(&self) -> &GridNoiseSpec {
        &self.spec
    }

    pub fn sample_scalar(&self, rng: &mut Stream) -> i64 {
        let u: f64 = rng.random();
        let idx = self.cdf.partition_point(|&c| c < u).min(self.cdf.len() - 1);
        idx as i64 - self.spec.truncation_radius as i64
    }

    pub fn sample(&self, rng: &mut Stream) -> IntVector {
        IntVector((0..self.spec.d).map(|_| self.sample_scalar(rng)).collect())
    }
}

/// Draw `ξ` componentwise from the truncated one-dimensional lattice law.
pub fn xi_sample(spec: &GridNoiseSpec, rng: &mut Stream) -> IntVector {
    LatticeSampler::new(*spec).sample(rng)
}

/// `ln(1/Pr[ξ = a])`: the KL of one floored step against the lattice prior.
pub fn per_step_kl_exact(a: &IntVector, spec: &GridNoiseSpec) -> Result<f64> {
    Ok(-xi_log_pmf(a, spec)?)
}

/// `3dp + ln(1/p)·(γ/ε)²‖g‖²`, which dominates
/// `per_step_kl_exact(floor_vec(γ g / ε))`.
pub fn per_step_kl_bound(grad_diff: &[f64], gamma: f64, eps: f64, spec: &GridNoiseSpec) -> Result<f64> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::domain(format!("eps must be positive, got {eps}")));
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::domain(format!("gamma must be non-negative, got {gamma}")));
    }
    check_finite_vec(grad_diff)?;
    let norm_sq: f64 = grad_diff.iter().map(|g| g * g).sum();
    let scale = gamma / eps;
    Ok(3.0 * spec.d as f64 * spec.p + (1.0 / spec.p).ln() * scale * scale * norm_sq)
}

/// `p = 1/(T·d)`.
pub fn default_p(steps: usize, d: usize) -> Result<f64> {
    let td = steps as f64 * d as f64;
    if td <= 3.0 {
        return Err(Error::domain(format!("T·d = {td} ≤ 3 would give p ≥ 1/3")));
    }
    Ok(1.0 / td)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    // 40-digit series evaluations
    const Z_025: f64 = 1.507_820_129_860_194_3;
    const LN_Z_025: f64 = 0.410_664_985_190_625_5;
    const LN_Z_001: f64 = 0.019_802_646_904_022_66;

    #[test]
    fn sign_magnitude_floor() {
        assert_eq!(floor_vec(&[2.7, -2.7, -0.3, 0.0, 2.0]).unwrap().0, vec![2, -2, 0, 0, 2]);
        assert!(floor_vec(&[f64::NAN]).is_err());
    }

    #[test]
    fn stochastic_round_support() {
        let mut rng = stream(3, 0);
        for _ in 0..100 {
            let r = round_vec(&[2.0, -1.5, 0.25], &mut rng).unwrap().0;
            assert!(r[0] == 2 || r[0] == 3);
            assert!(r[1] == -2 || r[1] == -1);
            assert!(r[2] == 0 || r[2] == 1);
        }
        let a = round_vec(&[0.5; 16], &mut stream(9, 1)).unwrap();
        let b = round_vec(&[0.5; 16], &mut stream(9, 1)).unwrap();
        assert_eq!(a, b);
        assert!(round_vec(&[f64::INFINITY], &mut rng).is_err());
    }

    #[test]
    fn normalizer_reference() {
        assert!((xi_normalizer(0.25).unwrap() - Z_025).abs() < 1e-15);
        assert!((xi_normalizer(0.25).unwrap().ln() - LN_Z_025).abs() < 1e-15);
        assert!((xi_normalizer(0.01).unwrap().ln() - LN_Z_001).abs() < 1e-15);
        assert!((xi_normalizer(1e-300).unwrap() - 1.0).abs() < 1e-15);
        assert!(xi_normalizer(0.34).is_err());
        assert!(xi_normalizer(0.0).is_err());
    }

    #[test]
    fn log_pmf_reference_and_symmetry() {
        let spec = GridNoiseSpec::new(0.25, 1).unwrap();
        assert!((xi_log_pmf(&IntVector(vec![0]), &spec).unwrap() + LN_Z_025).abs() < 1e-15);
        assert!((xi_log_pmf(&IntVector(vec![1]), &spec).unwrap() + 1.796_959_346_310_516).abs() < 1e-14);
        let spec3 = GridNoiseSpec::new(0.1, 3).unwrap();
        let a = IntVector(vec![1, -2, 3]);
        let neg = IntVector(vec![-1, 2, -3]);
        assert_eq!(xi_log_pmf(&a, &spec3).unwrap(), xi_log_pmf(&neg, &spec3).unwrap());
        assert!(xi_log_pmf(&IntVector(vec![0, 0]), &spec3).is_err());
    }

    #[test]
    fn per_step_kl_reference() {
        let spec = GridNoiseSpec::new(0.1, 5).unwrap();
        let kl = per_step_kl_exact(&IntVector::zeros(5), &spec).unwrap();
        assert!((kl - 0.912_441_056_198_322_6).abs() < 1e-14);
        let spec2 = GridNoiseSpec::new(0.2, 2).unwrap();
        let kl2 = per_step_kl_exact(&IntVector(vec![2, 0]), &spec2).unwrap();
        assert!((kl2 - 7.115_263_794_547_209).abs() < 1e-13);
    }

    #[test]
    fn per_step_bound_example() {
        let spec = GridNoiseSpec::new(0.01, 1).unwrap();
        let g = [0.05];
        let a = floor_vec(&[1.0 * 0.05 / 0.1]).unwrap();
        assert_eq!(a.0, vec![0]);
        let bound = per_step_kl_bound(&g, 1.0, 0.1, &spec).unwrap();
        assert!((bound - 1.181_292_546_497_022_8).abs() < 1e-14);
        let exact = per_step_kl_exact(&a, &spec).unwrap();
        assert!((exact - LN_Z_001).abs() < 1e-15);
        assert!(exact <= bound);
        assert!(per_step_kl_bound(&g, 1.0, 0.0, &spec).is_err());
        let zero = per_step_kl_bound(&[0.0, 0.0], 1.0, 0.1, &GridNoiseSpec::new(0.2, 2).unwrap()).unwrap();
        assert!((zero - 3.0 * 2.0 * 0.2).abs() < 1e-15);
    }

    #[test]
    fn default_p_boundaries() {
        assert_eq!(default_p(1000, 1_000_000).unwrap(), 1e-9);
        assert_eq!(default_p(2, 2).unwrap(), 0.25);
        assert!(default_p(1, 3).is_err());
    }

    #[test]
    fn truncation_radius_is_minimal() {
        for &p in &[0.01, 0.1, 0.25, 0.33] {
            let r = truncation_radius(p).unwrap();
            assert!(p.powi((r * r) as i32) < SERIES_CUTOFF);
            if r > 1 {
                assert!(p.powi(((r - 1) * (r - 1)) as i32) >= SERIES_CUTOFF);
            }
        }
    }

    #[test]
    fn sampler_frequencies() {
        let spec = GridNoiseSpec::new(0.25, 1).unwrap();
        let sampler = LatticeSampler::new(spec);
        let mut rng = stream(11, 0);
        let trials = 200_000;
        let zeros = (0..trials).filter(|_| sampler.sample_scalar(&mut rng) == 0).count();
        let expect = 0.663_209_079_250_534;
        let sd = (expect * (1.0 - expect) / trials as f64).sqrt();
        assert!(((zeros as f64 / trials as f64) - expect).abs() < 4.0 * sd);
    }
}
