//! Property-based checks on the bound arithmetic, the lattice prior and the
//! without-replacement moments.

use itertools::Itertools;
use proptest::prelude::*;

use pacgrad::concentration_lab as lab;
use pacgrad::discrete_noise::{self as dn, GridNoiseSpec};
use pacgrad::scalar_bounds::{self as sb, CatoniParams};

fn unit_interval() -> impl Strategy<Value = f64> {
    (0u32..=10_000).prop_map(|i| f64::from(i) / 10_000.0)
}

fn params() -> impl Strategy<Value = CatoniParams> {
    (0.05f64..4.0, 10usize..5000, 0.0f64..0.95, 1e-4f64..0.5).prop_map(|(eta, n, frac, delta)| {
        let m = ((n as f64 * frac) as usize).max(1).min(n - 1);
        CatoniParams::new(eta, n, m, delta).unwrap()
    })
}

fn gradients(max_n: usize) -> impl Strategy<Value = (Vec<Vec<f64>>, usize)> {
    (1..=max_n, 1usize..=3)
        .prop_flat_map(|(n, dim)| (prop::collection::vec(prop::collection::vec(-3.0f64..3.0, dim), n), 1..=n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn phi_inverts(x in unit_interval(), ratio in 1e-3f64..8.0, k in 1usize..2000) {
        let lambda = ratio * k as f64;
        let y = sb::phi(x, lambda, k).unwrap();
        // convex with Φ(0) = 0 and Φ(1) = 1
        prop_assert!(y <= x + 1e-15, "Φ(x) ≤ x fails: {y} > {x}");
        prop_assert!((sb::phi_inv(y, lambda, k).unwrap() - x).abs() <= 1e-12);
    }

    #[test]
    fn phi_is_monotone(a in unit_interval(), b in unit_interval(), ratio in 1e-3f64..8.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(sb::phi(lo, ratio * 100.0, 100).unwrap() <= sb::phi(hi, ratio * 100.0, 100).unwrap());
    }

    #[test]
    fn data_pac_terms_add_up(p in params(), kl in 0.0f64..1e4, risk in unit_interval()) {
        let b = sb::data_pac_bound(kl, risk, &p).unwrap();
        prop_assert_eq!(b.total, b.empirical_term + b.confidence_term + b.kl_term);
        let exact = sb::data_pac_bound_exact(kl, risk, &p).unwrap();
        // the inverse-Φ form is never looser than the linearised one
        prop_assert!(exact <= b.total + 1e-12, "{} > {}", exact, b.total);
    }

    #[test]
    fn floored_bound_grows_with_the_sum(p in params(), risk in unit_interval(), s in 0.0f64..1e3, extra in 0.0f64..1e3) {
        let lo = sb::fgd_bound(risk, s, 10, 100, &p).unwrap().total;
        let hi = sb::fgd_bound(risk, s + extra, 10, 100, &p).unwrap().total;
        prop_assert!(lo <= hi);
        prop_assert_eq!(lo, sb::fsgd_bound(risk, s, 10, 100, &p).unwrap().total);
    }

    #[test]
    fn rgd_at_default_p_matches_fgd(p in params(), risk in unit_interval(), s in 0.0f64..1e2, eps in 1e-4f64..1.0) {
        let (d, steps) = (7, 40);
        let rgd = sb::rgd_bound(risk, s, eps, dn::default_p(steps, d).unwrap(), d, steps, &p).unwrap().total;
        let fgd = sb::fgd_bound(risk, s / (eps * eps), d, steps, &p).unwrap().total;
        prop_assert!((rgd - fgd).abs() <= 1e-9 * fgd.max(1.0), "{rgd} vs {fgd}");
    }

    #[test]
    fn floor_moves_toward_zero(x in prop::collection::vec(-1e6f64..1e6, 1..8)) {
        let a = dn::floor_vec(&x).unwrap();
        for (v, k) in x.iter().zip(&a.0) {
            prop_assert!((*k as f64).abs() <= v.abs());
            prop_assert!((v - *k as f64).abs() < 1.0);
            prop_assert!(*k == 0 || k.signum() as f64 == v.signum());
        }
    }

    #[test]
    fn floored_kl_is_dominated(
        g in prop::collection::vec(-10.0f64..10.0, 1..6),
        gamma in 1e-3f64..1.0,
        eps in 1e-4f64..1.0,
        p in 1e-4f64..0.33,
    ) {
        let spec = GridNoiseSpec::new(p, g.len()).unwrap();
        let scaled: Vec<f64> = g.iter().map(|v| gamma * v / eps).collect();
        let exact = dn::per_step_kl_exact(&dn::floor_vec(&scaled).unwrap(), &spec).unwrap();
        prop_assert!(exact <= dn::per_step_kl_bound(&g, gamma, eps, &spec).unwrap());
    }

    #[test]
    fn log_normalizer_below_three_p(p in 1e-6f64..0.333) {
        let z = dn::xi_normalizer(p).unwrap();
        prop_assert!(z >= 1.0 + 2.0 * p);
        prop_assert!(z.ln() <= 3.0 * p);
    }

    #[test]
    fn wor_variance_matches_subsets((g, m) in gradients(7)) {
        let n = g.len();
        let dim = g[0].len();
        let mu: Vec<f64> = (0..dim).map(|k| g.iter().map(|v| v[k]).sum::<f64>() / n as f64).collect();
        let subsets: Vec<Vec<usize>> = (0..n).combinations(m).collect();
        let brute = subsets
            .iter()
            .map(|s| (0..dim).map(|k| (s.iter().map(|&i| g[i][k]).sum::<f64>() / m as f64 - mu[k]).powi(2)).sum::<f64>())
            .sum::<f64>()
            / subsets.len() as f64;
        prop_assert!((lab::exact_variance_wor(&g, m).unwrap() - brute).abs() <= 1e-12);
        prop_assert!(brute <= lab::variance_bound_wor(&g, m).unwrap() + 1e-12);
        let second = subsets
            .iter()
            .map(|s| (0..dim).map(|k| (s.iter().map(|&i| g[i][k]).sum::<f64>() / m as f64).powi(2)).sum::<f64>())
            .sum::<f64>()
            / subsets.len() as f64;
        prop_assert!((lab::wor_second_moment(&g, m).unwrap() - second).abs() <= 1e-11 * second.max(1.0));
    }

    #[test]
    fn catoni_moment_is_one(q in 0.01f64..0.99, eta in 0.01f64..5.0, k in 1usize..=20) {
        prop_assert!((lab::catoni_moment_exact(q, eta, k).unwrap() - 1.0).abs() <= 1e-12);
    }
}
