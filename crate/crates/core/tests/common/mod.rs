#![allow(dead_code)]

use fhcal_core::model::{simulate_fh, simulate_fhv};
use fhcal_core::parallel::rng_from_seed;
use fhcal_core::{
    CoefPrior, Dataset, DomainObservation, FhTruthConfig, FhvTruthConfig, HyperPriorSpec, ScalePrior,
};

pub fn fh_data(n: usize, seed: u64) -> Dataset {
    simulate_fh(&FhTruthConfig::default(), n, &mut rng_from_seed(seed)).unwrap().1
}

pub fn fhv_data(n: usize, seed: u64) -> Dataset {
    simulate_fhv(&FhvTruthConfig::default(), n, &mut rng_from_seed(seed)).unwrap().1
}

pub fn one_domain(y: f64, v: f64) -> Dataset {
    Dataset::new(vec![DomainObservation {
        domain_id: 1,
        y,
        v,
        x: vec![1.0],
        z: vec![],
        n: 1,
    }])
    .unwrap()
}

/// β = 0 and τ² = 1 held fixed.
pub fn fixed_hyper() -> HyperPriorSpec {
    HyperPriorSpec {
        beta: CoefPrior::Fixed { values: vec![0.0] },
        tau_u2: ScalePrior::Fixed { value: 1.0 },
        ..HyperPriorSpec::default()
    }
}

/// Conjugate priors the Gibbs sampler accepts.
pub fn conjugate_hyper() -> HyperPriorSpec {
    HyperPriorSpec {
        tau_u2: ScalePrior::InverseGamma { shape: 1.0, scale: 1.0 },
        ..HyperPriorSpec::default()
    }
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (x.len() - 1) as f64
}

/// Standard normal CDF via the complementary error function.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Kolmogorov-Smirnov distance of a sample from N(0, 1).
pub fn ks_normal(sample: &[f64]) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(k, &x)| {
            let f = norm_cdf(x);
            (f - k as f64 / n).abs().max(((k + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Worst relative error between the reparameterization gradient of the
/// common-random-numbers ELBO and central differences (step `h`) over
/// `points` random `(mu, omega)`. Relative error is
/// `|g - fd| / max(1, |fd|)` per coordinate.
pub fn worst_gradient_error(spec: &fhcal_core::ModelSpec, data: &Dataset, points: usize, h: f64, seed: u64) -> f64 {
    use fhcal_core::target::{LogDensity, ModelTarget};
    use fhcal_core::vb::{elbo_at, elbo_gradient_at};
    use fhcal_core::VariationalParams;
    use rand::Rng;
    use rand_distr::StandardNormal;

    let target = ModelTarget::new(spec, data).unwrap();
    let dim = target.dim();
    let mut rng = rng_from_seed(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let mut vp = VariationalParams::new(dim, 0.0, 0.0);
        for d in 0..dim {
            vp.mu[d] = 0.5 * rng.sample::<f64, _>(StandardNormal);
            vp.omega[d] = rng.random_range(-2.0..-0.5);
        }
        let eta: Vec<f64> = (0..dim * 5).map(|_| rng.sample(StandardNormal)).collect();
        let (gm, go, _) = elbo_gradient_at(&target, &vp, &eta).unwrap();
        for d in 0..dim {
            for (which, g) in [(0, gm[d]), (1, go[d])] {
                let bump = |delta: f64| {
                    let mut q = vp.clone();
                    if which == 0 {
                        q.mu[d] += delta;
                    } else {
                        q.omega[d] += delta;
                    }
                    elbo_at(&target, &q, &eta).unwrap()
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                worst = worst.max((g - fd).abs() / fd.abs().max(1.0));
            }
        }
    }
    worst
}

pub mod mocks {
    use fhcal_core::fit::{DrawMatrix, EstimatorKind, PosteriorFit};
    use fhcal_core::parallel::rng_from_seed;
    use fhcal_core::{Dataset, Error, Estimator, ModelKind, ModelSpec, Result};
    use rand::Rng;
    use rand_distr::StandardNormal;

    /// Exact FH posterior for known `β` (intercept only) and `τ²`:
    /// `θ_i | y ~ N(B_i y_i + (1 - B_i) β, B_i v_i)`. With `tau2 = ∞` this
    /// is the unpooled posterior `N(y_i, v_i)`, whose pivots are exactly
    /// standard normal.
    pub struct Shrinkage {
        pub beta: f64,
        pub tau2: f64,
        pub draws: usize,
    }

    impl Shrinkage {
        pub fn direct(draws: usize) -> Self {
            Shrinkage {
                beta: 0.0,
                tau2: f64::INFINITY,
                draws,
            }
        }
    }

    impl Estimator for Shrinkage {
        fn estimate(&self, spec: &ModelSpec, data: &Dataset, seed: u64) -> Result<PosteriorFit> {
            assert_eq!(spec.kind, ModelKind::Fh);
            let n = data.len();
            let mut rng = rng_from_seed(seed);
            let mut draws = DrawMatrix::new(n + data.px() + 1);
            let moments: Vec<(f64, f64)> = data
                .observations()
                .iter()
                .map(|o| {
                    let b = if self.tau2.is_infinite() { 1.0 } else { self.tau2 / (self.tau2 + o.v) };
                    (b * o.y + (1.0 - b) * self.beta, (b * o.v).sqrt())
                })
                .collect();
            let mut row = vec![self.beta; n + data.px() + 1];
            row[n + data.px()] = if self.tau2.is_infinite() { 1.0 } else { self.tau2 };
            for _ in 0..self.draws {
                for (i, (m, s)) in moments.iter().enumerate() {
                    row[i] = m + s * rng.sample::<f64, _>(StandardNormal);
                }
                draws.push_row(&row);
            }
            PosteriorFit::from_draws(ModelKind::Fh, n, data.px(), 0, EstimatorKind::Gibbs, draws)
        }
    }

    /// Fails whenever the supplied seed is in `bad_seeds`.
    pub struct FailOn<E> {
        pub inner: E,
        pub bad_seeds: Vec<u64>,
    }

    impl<E: Estimator> Estimator for FailOn<E> {
        fn estimate(&self, spec: &ModelSpec, data: &Dataset, seed: u64) -> Result<PosteriorFit> {
            if self.bad_seeds.contains(&seed) {
                return Err(Error::FitFailure("injected".into()));
            }
            self.inner.estimate(spec, data, seed)
        }
    }
}
