//! Gaussian mixtures over RGB colors.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::{Real, Rgb};

pub type Mat3<T> = [[T; 3]; 3];

pub const EM_TOL: f64 = 1e-4;
pub const EM_MAX_ITER: usize = 100;

/// Lower-triangular Cholesky factor, or `None` if `m` is not positive
/// definite.
fn cholesky<T: Real>(m: &Mat3<T>) -> Option<Mat3<T>> {
    let mut l = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..=i {
            let mut s = m[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if !(s > T::zero()) {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

/// One weighted Gaussian with cached inverse factor and normalizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Component<T> {
    pub weight: T,
    pub mean: Rgb<T>,
    pub cov: Mat3<T>,
    chol: Mat3<T>,
    /// `-1.5 ln(2π) - 0.5 ln det(cov)`
    log_norm: T,
}

impl<T: Real> Component<T> {
    pub fn new(weight: T, mean: Rgb<T>, cov: Mat3<T>) -> Result<Self> {
        let sym = (0..3).all(|i| (0..3).all(|j| cov[i][j] == cov[j][i]));
        if !sym {
            return Err(Error::InvalidInput("covariance is not symmetric".into()));
        }
        let chol = cholesky(&cov)
            .ok_or_else(|| Error::InvalidInput("covariance is not positive definite".into()))?;
        let log_det = T::lit(2.0) * (chol[0][0].ln() + chol[1][1].ln() + chol[2][2].ln());
        let log_norm = T::lit(-1.5 * (2.0 * std::f64::consts::PI).ln()) - T::lit(0.5) * log_det;
        Ok(Component {
            weight,
            mean,
            cov,
            chol,
            log_norm,
        })
    }

    /// Log of the (unweighted) normal density at `x`.
    #[inline]
    pub fn log_pdf(&self, x: &Rgb<T>) -> T {
        let l = &self.chol;
        let d = [x[0] - self.mean[0], x[1] - self.mean[1], x[2] - self.mean[2]];
        // Solve L z = d; the Mahalanobis term is |z|².
        let z0 = d[0] / l[0][0];
        let z1 = (d[1] - l[1][0] * z0) / l[1][1];
        let z2 = (d[2] - l[2][0] * z0 - l[2][1] * z1) / l[2][2];
        self.log_norm - T::lit(0.5) * (z0 * z0 + z1 * z1 + z2 * z2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture<T> {
    components: Vec<Component<T>>,
}

impl<T: Real> GaussianMixture<T> {
    pub fn new(components: Vec<Component<T>>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidInput("mixture has no components".into()));
        }
        if components.iter().any(|c| !(c.weight > T::zero())) {
            return Err(Error::InvalidInput("mixture weights must be positive".into()));
        }
        let total: T = components.iter().map(|c| c.weight).sum();
        let tol = T::lit(1e-9).max(T::epsilon() * T::lit(64.0));
        if (total - T::one()).abs() > tol {
            return Err(Error::InvalidInput(format!("mixture weights sum to {total}")));
        }
        Ok(GaussianMixture { components })
    }

    pub fn components(&self) -> &[Component<T>] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// `ln Σ_k w_k N(x; μ_k, Σ_k)`, computed with log-sum-exp so it stays
    /// finite far from every component.
    pub fn log_density(&self, x: &Rgb<T>) -> T {
        let mut best = T::neg_infinity();
        let mut terms = [T::zero(); 16];
        let many = self.components.len() > terms.len();
        let mut buf = Vec::new();
        for (k, c) in self.components.iter().enumerate() {
            let t = c.weight.ln() + c.log_pdf(x);
            if many {
                buf.push(t);
            } else {
                terms[k] = t;
            }
            best = best.max(t);
        }
        let ts: &[T] = if many { &buf } else { &terms[..self.components.len()] };
        best + ts.iter().map(|&t| (t - best).exp()).sum::<T>().ln()
    }

    /// The mixture density itself. May underflow to zero far from the
    /// data; energy terms use [`Self::log_density`].
    pub fn density(&self, x: &Rgb<T>) -> T {
        self.log_density(x).exp()
    }
}

/// Mixture density at `x`.
pub fn gmm_density<T: Real>(g: &GaussianMixture<T>, x: &Rgb<T>) -> T {
    g.density(x)
}

fn sq_dist3<T: Real>(a: &Rgb<T>, b: &Rgb<T>) -> T {
    (a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2])
}

/// k-means++ seeding. Stops early when every remaining sample coincides
/// with a chosen center.
fn kmeans_pp<T: Real>(samples: &[Rgb<T>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Rgb<T>> {
    let mut centers = vec![samples[rng.random_range(0..samples.len())]];
    let mut d2: Vec<f64> = samples.iter().map(|s| sq_dist3(s, &centers[0]).as_f64()).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        if !(total > 0.0) {
            break;
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = samples.len() - 1;
        for (i, &d) in d2.iter().enumerate() {
            acc += d;
            if acc > target && d > 0.0 {
                pick = i;
                break;
            }
        }
        let c = samples[pick];
        centers.push(c);
        for (d, s) in d2.iter_mut().zip(samples) {
            *d = d.min(sq_dist3(s, &c).as_f64());
        }
    }
    centers
}

/// Weighted moments of `samples` under per-component responsibilities.
/// `resp[n * k + j]` is the weight of sample `n` in component `j`.
/// Components with negligible mass are dropped.
fn m_step<T: Real>(samples: &[Rgb<T>], resp: &[T], k: usize, reg: T) -> Result<GaussianMixture<T>> {
    let n = samples.len();
    let mut mass = vec![T::zero(); k];
    let mut sum = vec![[T::zero(); 3]; k];
    for (s, r) in samples.iter().zip(resp.chunks_exact(k)) {
        for j in 0..k {
            mass[j] += r[j];
            for c in 0..3 {
                sum[j][c] += r[j] * s[c];
            }
        }
    }
    let means: Vec<Rgb<T>> = (0..k)
        .map(|j| {
            if mass[j] > T::zero() {
                sum[j].map(|v| v / mass[j])
            } else {
                [T::zero(); 3]
            }
        })
        .collect();
    let mut cov = vec![[[T::zero(); 3]; 3]; k];
    for (s, r) in samples.iter().zip(resp.chunks_exact(k)) {
        for j in 0..k {
            if r[j] == T::zero() {
                continue;
            }
            let d = [s[0] - means[j][0], s[1] - means[j][1], s[2] - means[j][2]];
            for a in 0..3 {
                for b in a..3 {
                    cov[j][a][b] += r[j] * d[a] * d[b];
                }
            }
        }
    }
    let floor = T::lit(1e-10) * T::lit(n as f64);
    let kept: Vec<usize> = (0..k).filter(|&j| mass[j] > floor).collect();
    let total: T = kept.iter().map(|&j| mass[j]).sum();
    let mut comps = Vec::with_capacity(kept.len());
    for &j in &kept {
        let mut c = [[T::zero(); 3]; 3];
        for a in 0..3 {
            for b in a..3 {
                let v = cov[j][a][b] / mass[j];
                c[a][b] = v;
                c[b][a] = v;
            }
            c[a][a] += reg;
        }
        comps.push(Component::new(mass[j] / total, means[j], c)?);
    }
    GaussianMixture::new(comps)
}

/// Fits a `k`-component mixture: seeded k-means++ centers, one hard
/// assignment to initialize, then EM until the mean log-likelihood gains
/// less than 1e-4 or 100 iterations pass. Every covariance gets `reg·I`
/// added. Deterministic for a fixed `seed`.
pub fn fit_gmm<T: Real>(samples: &[Rgb<T>], k: usize, seed: u64, reg: T) -> Result<GaussianMixture<T>> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("cannot fit a mixture to zero samples".into()));
    }
    if k == 0 {
        return Err(Error::InvalidInput("mixture needs at least one component".into()));
    }
    if !(reg > T::zero()) {
        return Err(Error::InvalidInput(format!("regularization {reg} must be positive")));
    }
    let k = if samples.len() < k {
        warn!("only {} samples for {k} components; reducing k", samples.len());
        samples.len()
    } else {
        k
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = kmeans_pp(samples, k, &mut rng);
    let k0 = centers.len();
    let mut resp = vec![T::zero(); samples.len() * k0];
    for (s, r) in samples.iter().zip(resp.chunks_exact_mut(k0)) {
        let mut best = 0;
        let mut best_d = sq_dist3(s, &centers[0]);
        for (j, c) in centers.iter().enumerate().skip(1) {
            let d = sq_dist3(s, c);
            if d < best_d {
                best = j;
                best_d = d;
            }
        }
        r[best] = T::one();
    }
    let mut model = m_step(samples, &resp, k0, reg)?;

    let mut prev_ll = f64::NEG_INFINITY;
    let mut logs = vec![T::zero(); k0];
    for _ in 0..EM_MAX_ITER {
        let kc = model.len();
        resp.resize(samples.len() * kc, T::zero());
        let mut ll = 0.0f64;
        for (s, r) in samples.iter().zip(resp.chunks_exact_mut(kc)) {
            let mut best = T::neg_infinity();
            for (j, c) in model.components.iter().enumerate() {
                logs[j] = c.weight.ln() + c.log_pdf(s);
                best = best.max(logs[j]);
            }
            let mut z = T::zero();
            for j in 0..kc {
                r[j] = (logs[j] - best).exp();
                z += r[j];
            }
            for v in r.iter_mut() {
                *v /= z;
            }
            ll += (best + z.ln()).as_f64();
        }
        ll /= samples.len() as f64;
        if ll - prev_ll < EM_TOL {
            break;
        }
        prev_ll = ll;
        model = m_step(samples, &resp[..samples.len() * kc], kc, reg)?;
    }
    Ok(model)
}
