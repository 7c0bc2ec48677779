mod common;

use std::f64::consts::PI;

use common::*;
use fhcal_core::model::{log_joint, posterior_predictive_draw, simulate_fh, simulate_fhv, standardized_counts};
use fhcal_core::parallel::rng_from_seed;
use fhcal_core::{
    CoefPrior, Dataset, DomainObservation, FhParams, FhTruthConfig, FhvParams, FhvTruthConfig, HyperPriorSpec,
    ModelSpec, ParamVector, ScalePrior,
};
use statrs::function::gamma::ln_gamma;

fn three_domains(z: bool) -> Dataset {
    let rows = [(0.4, 0.7, 1.0, 3), (-1.2, 1.3, 0.5, 10), (2.5, 0.2, 1.7, 40)];
    Dataset::new(
        rows.iter()
            .enumerate()
            .map(|(i, &(y, v, x, n))| DomainObservation {
                domain_id: i + 1,
                y,
                v,
                x: vec![1.0, x],
                z: if z { vec![1.0, (n as f64).ln()] } else { vec![] },
                n,
            })
            .collect(),
    )
    .unwrap()
}

fn ln_norm(x: f64, m: f64, var: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - (x - m).powi(2) / (2.0 * var)
}

#[test]
fn fh_log_joint_matches_hand_computation() {
    let data = three_domains(false);
    let p = FhParams {
        theta: vec![0.1, -0.8, 2.0],
        beta: vec![0.3, 0.9],
        tau_u2: 0.8,
    };
    let hyper = HyperPriorSpec::default();
    let got = log_joint(&ParamVector::Fh(p.clone()), &data, &hyper).unwrap();

    let mut want = 0.0;
    for (i, o) in data.observations().iter().enumerate() {
        let mu = p.beta[0] * o.x[0] + p.beta[1] * o.x[1];
        want += ln_norm(o.y, p.theta[i], o.v) + ln_norm(p.theta[i], mu, p.tau_u2);
    }
    want += p.beta.iter().map(|b| ln_norm(*b, 0.0, 100.0)).sum::<f64>();
    // √τ² ~ half-normal(5): p(τ²) = 2 φ(√τ²; 0, 25) / (2 √τ²)
    let s = p.tau_u2.sqrt();
    want += (2.0f64).ln() + ln_norm(s, 0.0, 25.0) - (2.0 * s).ln();
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
}

#[test]
fn fhv_log_joint_matches_hand_computation() {
    let data = three_domains(true);
    let p = FhvParams {
        theta: vec![0.1, -0.8, 2.0],
        beta: vec![0.3, 0.9],
        tau_u2: 0.8,
        sigma2: vec![0.9, 1.4, 0.3],
        a: 12.0,
        gamma: vec![0.4, -0.3],
    };
    let hyper = HyperPriorSpec::default();
    let got = log_joint(&ParamVector::Fhv(p.clone()), &data, &hyper).unwrap();

    // n = 3, 10, 40: n* = (n - 2) / 37, floored at 1/40
    let n_star = [1.0 / 37.0, 8.0 / 37.0, 1.0];
    let mut want = 0.0;
    for (i, o) in data.observations().iter().enumerate() {
        let mu = p.beta[0] * o.x[0] + p.beta[1] * o.x[1];
        let s2 = p.sigma2[i];
        let shape = p.a * n_star[i] / 2.0;
        let rate = shape / s2;
        let b = (p.gamma[0] * o.z[0] + p.gamma[1] * o.z[1]).exp();
        want += ln_norm(o.y, p.theta[i], s2)
            + shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * o.v.ln() - rate * o.v
            + 2.0 * b.ln() - 3.0 * s2.ln() - b / s2
            + ln_norm(p.theta[i], mu, p.tau_u2);
    }
    want += p.beta.iter().map(|b| ln_norm(*b, 0.0, 100.0)).sum::<f64>();
    let s = p.tau_u2.sqrt();
    want += (2.0f64).ln() + ln_norm(s, 0.0, 25.0) - (2.0 * s).ln();
    want += (2.0f64).ln() + ln_norm(p.a, 0.0, 25.0);
    want += p.gamma.iter().map(|g| ln_norm(*g, 0.0, 1.0)).sum::<f64>();
    assert!((got - want).abs() < 1e-10, "{got} vs {want}");
}

#[test]
fn standardized_counts_follow_the_formula() {
    let n_star = standardized_counts(&[3, 10, 40]);
    let want = [1.0 / 37.0, 8.0 / 37.0, 1.0];
    for (a, b) in n_star.iter().zip(want) {
        assert!((a - b).abs() < 1e-15);
    }
    assert_eq!(standardized_counts(&[5, 5, 5]), vec![1.0; 3]);
}

#[test]
fn simulated_fh_noise_is_gaussian() {
    let truth = FhTruthConfig::default();
    let (p, data) = simulate_fh(&truth, 4000, &mut rng_from_seed(11)).unwrap();
    let errors: Vec<f64> = data.y().iter().zip(&p.theta).map(|(y, t)| y - t).collect();
    let effects: Vec<f64> = data
        .observations()
        .iter()
        .zip(&p.theta)
        .map(|(o, t)| t - o.x[0])
        .collect();
    // 1% critical value of the one-sample KS statistic
    let crit = 1.63 / (4000f64).sqrt();
    assert!(ks_normal(&errors) < crit);
    assert!(ks_normal(&effects) < crit);
    for o in data.observations() {
        assert!(o.x[0] >= 0.0 && o.x[0] < 2.0);
        assert_eq!(o.v, 1.0);
    }
}

#[test]
fn fh_predictive_mean_is_theta() {
    let data = three_domains(false);
    let truth = ParamVector::Fh(FhParams {
        theta: vec![1.0, -2.0, 0.5],
        beta: vec![0.0, 0.0],
        tau_u2: 1.0,
    });
    let spec = ModelSpec::fh(HyperPriorSpec::default());
    let mut rng = rng_from_seed(5);
    let reps = 20_000;
    let mut sums = [0.0; 3];
    for _ in 0..reps {
        let d = posterior_predictive_draw(&spec, &truth, &data, &mut rng).unwrap();
        for (s, y) in sums.iter_mut().zip(d.y()) {
            *s += y;
        }
    }
    for i in 0..3 {
        let se = (data.v()[i] / reps as f64).sqrt();
        assert!((sums[i] / reps as f64 - truth.theta()[i]).abs() < 4.0 * se);
    }
}

#[test]
fn fhv_predictive_variance_mean_is_sigma2() {
    let data = three_domains(true);
    let sigma2 = vec![0.9, 1.4, 0.3];
    let a = 12.0;
    let truth = ParamVector::Fhv(FhvParams {
        theta: vec![0.0; 3],
        beta: vec![0.0, 0.0],
        tau_u2: 1.0,
        sigma2: sigma2.clone(),
        a,
        gamma: vec![0.0, 0.0],
    });
    let spec = ModelSpec::fhv(HyperPriorSpec::default());
    let mut rng = rng_from_seed(6);
    let reps = 20_000;
    let mut sums = [0.0; 3];
    for _ in 0..reps {
        let d = posterior_predictive_draw(&spec, &truth, &data, &mut rng).unwrap();
        for (s, v) in sums.iter_mut().zip(d.v()) {
            *s += v;
        }
    }
    for i in 0..3 {
        // Var(v) = σ⁴ / shape
        let shape = a * data.n_star()[i] / 2.0;
        let se = sigma2[i] / (shape * reps as f64).sqrt();
        assert!((sums[i] / reps as f64 - sigma2[i]).abs() < 4.0 * se, "domain {i}");
    }
}

#[test]
fn simulated_fhv_is_well_formed() {
    let (p, data) = simulate_fhv(&FhvTruthConfig::default(), 300, &mut rng_from_seed(2)).unwrap();
    assert_eq!(p.sigma2.len(), 300);
    for o in data.observations() {
        assert!((1..=247).contains(&o.n));
        assert_eq!(o.z, vec![1.0, (o.n as f64).ln()]);
        assert!(o.v > 0.0);
    }
}

#[test]
fn log_joint_is_translation_covariant_under_flat_priors() {
    // intercept-only FH: shifting y, θ and β by δ leaves the density unchanged
    let hyper = HyperPriorSpec {
        beta: CoefPrior::Flat,
        tau_u2: ScalePrior::Flat,
        ..HyperPriorSpec::default()
    };
    let data = Dataset::new(
        (0..4)
            .map(|i| DomainObservation {
                domain_id: i + 1,
                y: i as f64 * 0.7 - 1.0,
                v: 0.5 + i as f64 * 0.1,
                x: vec![1.0],
                z: vec![],
                n: 1,
            })
            .collect(),
    )
    .unwrap();
    let p = FhParams {
        theta: vec![-0.5, 0.1, 0.2, 1.4],
        beta: vec![0.3],
        tau_u2: 0.6,
    };
    let delta = 3.25;
    let shifted = FhParams {
        theta: p.theta.iter().map(|t| t + delta).collect(),
        beta: vec![p.beta[0] + delta],
        tau_u2: p.tau_u2,
    };
    let a = log_joint(&ParamVector::Fh(p), &data, &hyper).unwrap();
    let b = log_joint(&ParamVector::Fh(shifted), &data.shifted(delta), &hyper).unwrap();
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn invalid_datasets_are_rejected() {
    let bad_v = DomainObservation {
        domain_id: 1,
        y: 0.0,
        v: -1.0,
        x: vec![1.0],
        z: vec![],
        n: 1,
    };
    assert!(Dataset::new(vec![bad_v]).is_err());
    assert!(Dataset::new(vec![]).is_err());
    let mut ragged = three_domains(false).observations().to_vec();
    ragged[1].x.push(1.0);
    assert!(Dataset::new(ragged).is_err());
}
