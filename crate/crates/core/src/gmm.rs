//! Diagonal-covariance Gaussian mixtures fitted by EM, with seeded k-means++
//! initialization and log-space responsibilities.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{ensure_finite, RngSeed};

const LN_2PI: f64 = 1.8378770664093453;

/// EM fitting knobs. All numerics are explicit so fits are reproducible.
#[derive(Debug, Clone)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Stop when the log-likelihood improvement falls below
    /// `rel_tol * max(|previous log-likelihood|, 1)`.
    pub rel_tol: f64,
    pub var_floor: f64,
    pub seed: RngSeed,
    /// Number of k-means++ seeding passes; the one with the lowest potential
    /// (sum of squared distances to the nearest chosen center) wins.
    pub init_rounds: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            rel_tol: 1e-6,
            var_floor: 1e-6,
            seed: RngSeed(0),
            init_rounds: 1,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("em max_iters must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol.is_finite()) {
            return Err(Error::Config(format!(
                "em rel_tol must be positive, got {}",
                self.rel_tol
            )));
        }
        if !(self.var_floor > 0.0 && self.var_floor.is_finite()) {
            return Err(Error::Config(format!(
                "em var_floor must be positive, got {}",
                self.var_floor
            )));
        }
        if self.init_rounds == 0 {
            return Err(Error::Config("em init_rounds must be at least 1".into()));
        }
        Ok(())
    }
}

/// A fitted mixture: component weights, means and per-dimension variances,
/// plus the log-likelihood recorded at each E-step.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    /// One entry per EM iteration; non-decreasing up to float slack.
    pub log_likelihood_trace: Vec<f64>,
}

impl GmmModel {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    /// Unnormalized log posterior `ln w_k + ln N(x | mu_k, C_k)` per component.
    pub fn log_joint(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(self.means.iter().zip(&self.variances))
            .map(|(&w, (mean, var))| {
                let mut log_density = 0.0;
                for ((&xi, &mi), &vi) in x.iter().zip(mean).zip(var) {
                    let d = xi - mi;
                    log_density += -0.5 * (LN_2PI + vi.ln() + d * d / vi);
                }
                // Dead components (w = 0) stay selectable never: -inf log weight.
                if w > 0.0 {
                    w.ln() + log_density
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect()
    }

    /// Posterior responsibilities normalized with log-sum-exp; sums to 1.
    pub fn responsibilities(&self, x: &[f64]) -> Vec<f64> {
        let joints = self.log_joint(x);
        let max = joints.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = joints.iter().map(|&j| (j - max).exp()).sum();
        joints.iter().map(|&j| (j - max).exp() / sum).collect()
    }

    /// Index of the maximal responsibility; ties resolve to the lowest index.
    pub fn assign(&self, x: &[f64]) -> usize {
        let joints = self.log_joint(x);
        let mut best = 0;
        for (i, &j) in joints.iter().enumerate().skip(1) {
            if j > joints[best] {
                best = i;
            }
        }
        best
    }

    /// Total log-likelihood of a point set under the mixture.
    pub fn log_likelihood(&self, points: &[Vec<f64>]) -> f64 {
        points
            .iter()
            .map(|x| {
                let joints = self.log_joint(x);
                let max = joints.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                max + joints.iter().map(|&j| (j - max).exp()).sum::<f64>().ln()
            })
            .sum()
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// One k-means++ seeding pass; returns chosen indices and the potential.
fn kmeans_pp_round(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> (Vec<usize>, f64) {
    let n = points.len();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut min_sq: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &points[chosen[0]]))
        .collect();
    while chosen.len() < k {
        let total: f64 = min_sq.iter().sum();
        let next = if total > 0.0 {
            // Weighted draw proportional to squared distance.
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &w) in min_sq.iter().enumerate() {
                acc += w;
                if acc >= target {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // Every point coincides with a chosen center; take the first
            // index not yet selected so the pass stays deterministic.
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            let d = squared_distance(p, &points[next]);
            if d < min_sq[i] {
                min_sq[i] = d;
            }
        }
    }
    let potential = min_sq.iter().sum();
    (chosen, potential)
}

/// Fits a `k`-component diagonal GMM to `features` by EM.
///
/// Means are seeded with k-means++ from `cfg.seed`; weights start uniform and
/// variances at the per-dimension sample variance (floored). Iteration stops
/// when the log-likelihood improvement drops below
/// `rel_tol * max(|previous|, 1)` or after `max_iters`.
pub fn fit_gmm(features: &[Vec<f64>], k: usize, cfg: &EmConfig) -> Result<GmmModel> {
    cfg.validate()?;
    if k == 0 {
        return Err(Error::Config("component count must be at least 1".into()));
    }
    if features.len() < k {
        return Err(Error::Data(format!(
            "{} points cannot support {k} components",
            features.len()
        )));
    }
    let dim = features[0].len();
    if dim == 0 {
        return Err(Error::Dimension(
            "features must have dimension at least 1".into(),
        ));
    }
    for f in features {
        if f.len() != dim {
            return Err(Error::Dimension(format!(
                "feature dimension {} does not match first point dimension {dim}",
                f.len()
            )));
        }
        ensure_finite(f, "gmm feature")?;
    }
    if k > 1 && features.iter().all(|f| f == &features[0]) {
        return Err(Error::Degenerate(format!(
            "all {} points are identical; cannot fit {k} components",
            features.len()
        )));
    }

    let n = features.len();
    let n_f = n as f64;

    // Seeding: best potential across init_rounds passes of one rng stream.
    let mut rng = cfg.seed.rng();
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..cfg.init_rounds {
        let (chosen, potential) = kmeans_pp_round(features, k, &mut rng);
        if best.as_ref().is_none_or(|(_, p)| potential < *p) {
            best = Some((chosen, potential));
        }
    }
    let chosen = best.unwrap().0;

    let mut overall_mean = vec![0.0; dim];
    for f in features {
        for (m, &x) in overall_mean.iter_mut().zip(f) {
            *m += x / n_f;
        }
    }
    let mut overall_var = vec![0.0; dim];
    for f in features {
        for ((v, &x), &m) in overall_var.iter_mut().zip(f).zip(&overall_mean) {
            *v += (x - m) * (x - m) / n_f;
        }
    }
    for v in &mut overall_var {
        *v = v.max(cfg.var_floor);
    }

    let mut model = GmmModel {
        weights: vec![1.0 / k as f64; k],
        means: chosen.iter().map(|&i| features[i].clone()).collect(),
        variances: vec![overall_var.clone(); k],
        log_likelihood_trace: Vec::new(),
    };

    let mut responsibilities = vec![vec![0.0; k]; n];
    let mut prev_ll = f64::NEG_INFINITY;
    for _ in 0..cfg.max_iters {
        // E-step in log space.
        let mut ll = 0.0;
        for (x, resp) in features.iter().zip(&mut responsibilities) {
            let joints = model.log_joint(x);
            let max = joints.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = joints.iter().map(|&j| (j - max).exp()).sum();
            ll += max + sum.ln();
            for (r, &j) in resp.iter_mut().zip(&joints) {
                *r = (j - max).exp() / sum;
            }
        }
        if !ll.is_finite() {
            return Err(Error::Numeric(format!("EM log-likelihood became {ll}")));
        }
        model.log_likelihood_trace.push(ll);
        if prev_ll.is_finite() && ll - prev_ll < cfg.rel_tol * prev_ll.abs().max(1.0) {
            break;
        }
        prev_ll = ll;

        // M-step.
        for comp in 0..k {
            let nk: f64 = responsibilities.iter().map(|r| r[comp]).sum();
            if nk < 1e-12 {
                // Dead component: keep its parameters, let the weight vanish.
                model.weights[comp] = nk / n_f;
                continue;
            }
            model.weights[comp] = nk / n_f;
            let mut mean = vec![0.0; dim];
            for (x, r) in features.iter().zip(&responsibilities) {
                for (m, &xi) in mean.iter_mut().zip(x) {
                    *m += r[comp] * xi;
                }
            }
            for m in &mut mean {
                *m /= nk;
            }
            let mut var = vec![0.0; dim];
            for (x, r) in features.iter().zip(&responsibilities) {
                for ((v, &xi), &mi) in var.iter_mut().zip(x).zip(&mean) {
                    let d = xi - mi;
                    *v += r[comp] * d * d;
                }
            }
            for v in &mut var {
                *v = (*v / nk).max(cfg.var_floor);
            }
            model.means[comp] = mean;
            model.variances[comp] = var;
        }
    }
    Ok(model)
}
