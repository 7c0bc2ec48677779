//! Log densities on the unconstrained space, with closed-form gradients.

use statrs::function::gamma::{digamma, ln_gamma};

use crate::density::ln_2pi;
use crate::error::Result;
use crate::model::{log_joint, Dataset, HyperPriorSpec, ModelKind, ModelSpec};
use crate::transform::{Block, UnconstrainedMap};

/// A differentiable log density over `R^dim`.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Log density at `u`; writes the gradient into `grad`.
    fn value_and_grad(&self, u: &[f64], grad: &mut [f64]) -> f64;

    /// Log density at `u`.
    fn value(&self, u: &[f64]) -> f64 {
        let mut g = vec![0.0; self.dim()];
        self.value_and_grad(u, &mut g)
    }
}

/// Posterior of an FH or FHV model on the unconstrained space:
/// `log p(data, constrain(u)) + log |J(u)|`.
#[derive(Clone, Debug)]
pub struct ModelTarget {
    map: UnconstrainedMap,
    data: Dataset,
    hyper: HyperPriorSpec,
    y: Vec<f64>,
    v: Vec<f64>,
    ln_v: Vec<f64>,
    x: Vec<f64>,
    z: Vec<f64>,
    n_star: Vec<f64>,
    fixed_beta: Vec<f64>,
    fixed_gamma: Vec<f64>,
}

impl ModelTarget {
    pub fn new(spec: &ModelSpec, data: &Dataset) -> Result<Self> {
        let map = UnconstrainedMap::new(spec, data)?;
        let beta0 = flat_constrained_beta(&map);
        let gamma0 = flat_constrained_gamma(&map);
        let obs = data.observations();
        Ok(ModelTarget {
            y: obs.iter().map(|o| o.y).collect(),
            v: obs.iter().map(|o| o.v).collect(),
            ln_v: obs.iter().map(|o| o.v.ln()).collect(),
            x: obs.iter().flat_map(|o| o.x.iter().copied()).collect(),
            z: obs.iter().flat_map(|o| o.z.iter().copied()).collect(),
            n_star: data.n_star().to_vec(),
            fixed_beta: beta0,
            fixed_gamma: gamma0,
            hyper: spec.hyper.clone(),
            data: data.clone(),
            map,
        })
    }

    pub fn map(&self) -> &UnconstrainedMap {
        &self.map
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    /// Log density evaluated through the model's log-joint (no gradient).
    pub fn value_via_log_joint(&self, u: &[f64]) -> f64 {
        match self.map.constrain(u) {
            Ok(p) => match log_joint(&p, &self.data, &self.hyper) {
                Ok(lj) => lj + self.map.log_abs_det_jacobian(u),
                Err(_) => f64::NAN,
            },
            Err(_) => f64::NAN,
        }
    }
}

fn flat_constrained_beta(map: &UnconstrainedMap) -> Vec<f64> {
    let u = vec![0.0; map.dim()];
    match map.constrain(&u) {
        Ok(crate::model::ParamVector::Fh(p)) => p.beta,
        Ok(crate::model::ParamVector::Fhv(p)) => p.beta,
        Err(_) => vec![0.0; map.px()],
    }
}

fn flat_constrained_gamma(map: &UnconstrainedMap) -> Vec<f64> {
    let u = vec![0.0; map.dim()];
    match map.constrain(&u) {
        Ok(crate::model::ParamVector::Fhv(p)) => p.gamma,
        _ => vec![0.0; map.pz()],
    }
}

impl LogDensity for ModelTarget {
    fn dim(&self) -> usize {
        self.map.dim()
    }

    fn value(&self, u: &[f64]) -> f64 {
        self.value_via_log_joint(u)
    }

    fn value_and_grad(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        let map = &self.map;
        let n = map.n_domains();
        let px = map.px();
        let pz = map.pz();
        grad.iter_mut().for_each(|g| *g = 0.0);

        let theta_off = map.slot(Block::Theta).map(|s| s.offset).unwrap_or(0);
        let beta_slot = map.slot(Block::Beta).map(|s| s.offset);
        let beta: &[f64] = match beta_slot {
            Some(o) => &u[o..o + px],
            None => &self.fixed_beta,
        };
        let tau_slot = map.slot(Block::TauU2).map(|s| s.offset);
        let tau2 = match tau_slot {
            Some(o) => u[o].exp(),
            None => self.hyper.tau_u2.fixed_value().unwrap_or(1.0),
        };
        let fhv = map.kind() == ModelKind::Fhv;
        let sigma_off = map.slot(Block::Sigma2).map(|s| s.offset);
        let a_slot = map.slot(Block::A).map(|s| s.offset);
        let a = match a_slot {
            Some(o) => u[o].exp(),
            None => self.hyper.a.fixed_value().unwrap_or(1.0),
        };
        let gamma_slot = map.slot(Block::Gamma).map(|s| s.offset);
        let gamma: &[f64] = match gamma_slot {
            Some(o) => &u[o..o + pz],
            None => &self.fixed_gamma,
        };

        let ln_tau2 = tau2.ln();
        let mut lp = 0.0;
        let mut g_tau2 = 0.0;
        let mut g_a = 0.0;
        let mut g_beta = vec![0.0; px];
        let mut g_gamma = vec![0.0; pz];

        for i in 0..n {
            let xi = &self.x[i * px..(i + 1) * px];
            let mean: f64 = xi.iter().zip(beta).map(|(a, b)| a * b).sum();
            let th = u[theta_off + i];
            let r = self.y[i] - th;
            let d = th - mean;

            // theta_i | beta, tau
            lp += -0.5 * (ln_2pi() + ln_tau2) - 0.5 * d * d / tau2;
            let mut g_th = -d / tau2;
            for (g, &xv) in g_beta.iter_mut().zip(xi) {
                *g += d / tau2 * xv;
            }
            g_tau2 += -0.5 / tau2 + 0.5 * d * d / (tau2 * tau2);

            if !fhv {
                let v = self.v[i];
                lp += -0.5 * (ln_2pi() + self.ln_v[i]) - 0.5 * r * r / v;
                g_th += r / v;
                grad[theta_off + i] = g_th;
                continue;
            }

            let so = sigma_off.expect("FHV map has a sigma2 block");
            let ln_s2 = u[so + i];
            let s2 = ln_s2.exp();
            // y_i | theta_i, sigma2_i
            lp += -0.5 * (ln_2pi() + ln_s2) - 0.5 * r * r / s2;
            g_th += r / s2;
            let mut g_s2 = -0.5 / s2 + 0.5 * r * r / (s2 * s2);

            // v_i | a, sigma2_i ~ G(k, k / sigma2)
            let ns = self.n_star[i];
            let k = a * ns / 2.0;
            let ln_rate = k.ln() - ln_s2;
            let rate = k / s2;
            let v = self.v[i];
            lp += k * ln_rate - ln_gamma(k) + (k - 1.0) * self.ln_v[i] - rate * v;
            g_s2 += (-k + rate * v) / s2;
            g_a += 0.5 * ns * (ln_rate + 1.0 - digamma(k) + self.ln_v[i] - v / s2);

            // sigma2_i | gamma ~ IG(2, exp(z'gamma))
            let zi = &self.z[i * pz..(i + 1) * pz];
            let ln_sc: f64 = zi.iter().zip(gamma).map(|(a, b)| a * b).sum();
            let sc = ln_sc.exp();
            lp += 2.0 * ln_sc - 3.0 * ln_s2 - sc / s2;
            g_s2 += -3.0 / s2 + sc / (s2 * s2);
            for (g, &zv) in g_gamma.iter_mut().zip(zi) {
                *g += (2.0 - sc / s2) * zv;
            }

            // log transform
            lp += ln_s2;
            grad[so + i] = g_s2 * s2 + 1.0;
            grad[theta_off + i] = g_th;
        }

        if let Some(o) = beta_slot {
            lp += self.hyper.beta.ln_pdf(beta);
            for p in 0..px {
                grad[o + p] = g_beta[p] + self.hyper.beta.d_ln_pdf(beta[p]);
            }
        }
        if let Some(o) = tau_slot {
            lp += self.hyper.tau_u2.ln_pdf(tau2) + u[o];
            grad[o] = (g_tau2 + self.hyper.tau_u2.d_ln_pdf(tau2)) * tau2 + 1.0;
        }
        if fhv {
            if let Some(o) = a_slot {
                lp += self.hyper.a.ln_pdf(a) + u[o];
                grad[o] = (g_a + self.hyper.a.d_ln_pdf(a)) * a + 1.0;
            }
            if let Some(o) = gamma_slot {
                lp += self.hyper.gamma.ln_pdf(gamma);
                for p in 0..pz {
                    grad[o + p] = g_gamma[p] + self.hyper.gamma.d_ln_pdf(gamma[p]);
                }
            }
        }
        lp
    }
}
