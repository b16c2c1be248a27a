//! Gradient ascent on the training statistic over test locations and the
//! log-bandwidth.
//!
//! The objective is `s/n = wᵀ(Σ + γI)⁻¹w` of the paired difference features.
//! ME locations are updated in bandwidth units (`U = T/θ`) so a step in
//! `log θ` does not drag the locations away from the data; SCF frequencies
//! already live in scaled input space.

use nalgebra::DVector;

use crate::error::{invalid, Error, Result};
use crate::features::{difference_features, Dataset, FeatureMatrix, TestLocations, Variant};
use crate::linalg::sym_solve;
use crate::statistic::summarize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerParams {
    pub steps: usize,
    pub rate: f64,
}

impl Default for OptimizerParams {
    fn default() -> Self {
        Self { steps: 200, rate: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizedLocations {
    pub locations: TestLocations,
    /// `s_train/n_train` at the initial locations.
    pub initial_objective: f64,
    /// `s_train/n_train` at the returned locations.
    pub objective: f64,
    pub steps_taken: usize,
}

/// Flat parameter vector: per-location coordinates (`U` for ME, `T` for SCF)
/// followed by `log θ`.
#[derive(Debug, Clone)]
struct Params {
    coords: Vec<f64>,
    log_bw: f64,
}

impl Params {
    fn from_locations(loc: &TestLocations) -> Self {
        let bw = loc.bandwidth();
        let coords = loc
            .points()
            .iter()
            .flat_map(|p| p.iter().map(move |v| match loc.variant() {
                Variant::Me => v / bw,
                Variant::Scf => *v,
            }))
            .collect();
        Self { coords, log_bw: bw.ln() }
    }

    fn to_locations(&self, template: &TestLocations) -> Result<TestLocations> {
        let bw = self.log_bw.exp();
        let d = template.dim();
        let scale = match template.variant() {
            Variant::Me => bw,
            Variant::Scf => 1.0,
        };
        let points = self.coords.chunks_exact(d).map(|c| c.iter().map(|v| v * scale).collect()).collect();
        TestLocations::with_smoothing(points, template.variant(), bw, template.smoothing())
    }
}

/// `s/n` for paired data at `loc`.
pub fn train_objective(x: &Dataset, y: &Dataset, loc: &TestLocations, gamma: f64) -> Result<f64> {
    let s = summarize(&difference_features(x, y, loc)?);
    crate::statistic::statistic(&s, gamma).map(|v| v / s.n as f64)
}

/// `∂(s/n)/∂z_i = (2a/n)(1 − n/(n−1)·aᵀ(z_i − w))`, `a = (Σ + γI)⁻¹w`.
fn feature_gradient(z: &FeatureMatrix, gamma: f64) -> Result<(f64, Vec<f64>)> {
    let s = summarize(z);
    let j = z.n_features();
    let mut reg = s.sigma.clone();
    for k in 0..j {
        reg[(k, k)] += gamma;
    }
    let a: DVector<f64> = sym_solve(&reg, &s.w)?;
    let objective = s.w.dot(&a);
    let nf = z.n() as f64;
    let c = nf / (nf - 1.0);
    let mut g = Vec::with_capacity(z.n() * j);
    for row in z.rows() {
        let ci: f64 = (0..j).map(|k| a[k] * (row[k] - s.w[k])).sum();
        let f = 2.0 / nf * (1.0 - c * ci);
        g.extend(a.iter().map(|ak| f * ak));
    }
    Ok((objective, g))
}

/// Objective and its gradient with respect to [`Params`].
fn objective_and_gradient(x: &Dataset, y: &Dataset, loc: &TestLocations, gamma: f64) -> Result<(f64, Params)> {
    let z = difference_features(x, y, loc)?;
    let (obj, g) = feature_gradient(&z, gamma)?;
    let grad = match loc.variant() {
        Variant::Me => me_gradient(x, y, loc, &g),
        Variant::Scf => scf_gradient(x, y, loc, &g),
    };
    Ok((obj, grad))
}

fn me_gradient(x: &Dataset, y: &Dataset, loc: &TestLocations, g: &[f64]) -> Params {
    let (bw, d) = (loc.bandwidth(), loc.dim());
    let pts = loc.points();
    let jn = pts.len();
    let inv2 = 1.0 / (2.0 * bw * bw);
    let inv_bw2 = 1.0 / (bw * bw);
    let mut g_t = vec![0.0; jn * d];
    let mut g_logbw = 0.0;
    // Contribution of one owner with sign ±1 on the features.
    let mut accumulate = |data: &Dataset, sign: f64| {
        for (i, row) in data.rows().enumerate() {
            for (jj, t) in pts.iter().enumerate() {
                let mut sq = 0.0;
                for (a, b) in row.iter().zip(t) {
                    sq += (a - b) * (a - b);
                }
                let k = (-sq * inv2).exp();
                let w = sign * g[i * jn + jj] * k * inv_bw2;
                g_logbw += w * sq;
                let out = &mut g_t[jj * d..(jj + 1) * d];
                for ((o, a), b) in out.iter_mut().zip(row).zip(t) {
                    *o += w * (a - b);
                }
            }
        }
    };
    accumulate(x, 1.0);
    accumulate(y, -1.0);
    // Chain rule to U = T/θ: ∂/∂U = θ·∂/∂T and ∂/∂logθ|_U = ∂/∂logθ|_T + Σ T·∂/∂T.
    for (jj, t) in pts.iter().enumerate() {
        for (o, tv) in g_t[jj * d..(jj + 1) * d].iter_mut().zip(t) {
            g_logbw += *o * tv;
            *o *= bw;
        }
    }
    Params {
        coords: g_t,
        log_bw: g_logbw,
    }
}

fn scf_gradient(x: &Dataset, y: &Dataset, loc: &TestLocations, g: &[f64]) -> Params {
    let (bw, d) = (loc.bandwidth(), loc.dim());
    let pts = loc.points();
    let jf = 2 * pts.len();
    let gaussian = matches!(loc.smoothing(), crate::features::Smoothing::Gaussian);
    let mut g_t = vec![0.0; pts.len() * d];
    let mut g_logbw = 0.0;
    let mut u = vec![0.0; d];
    let mut accumulate = |data: &Dataset, sign: f64| {
        for (i, row) in data.rows().enumerate() {
            for (uv, v) in u.iter_mut().zip(row) {
                *uv = v / bw;
            }
            let sq: f64 = u.iter().map(|v| v * v).sum();
            let wgt = loc.smoothing().weight(sq);
            let dsq = if gaussian { sq } else { 0.0 };
            for (jj, t) in pts.iter().enumerate() {
                let phase: f64 = u.iter().zip(t).map(|(a, b)| a * b).sum();
                let (sin, cos) = phase.sin_cos();
                let gc = sign * g[i * jf + 2 * jj];
                let gs = sign * g[i * jf + 2 * jj + 1];
                g_logbw += gc * wgt * (dsq * cos + phase * sin) + gs * wgt * (dsq * sin - phase * cos);
                let coef = wgt * (gs * cos - gc * sin);
                for (o, uv) in g_t[jj * d..(jj + 1) * d].iter_mut().zip(&u) {
                    *o += coef * uv;
                }
            }
        }
    };
    accumulate(x, 1.0);
    accumulate(y, -1.0);
    Params {
        coords: g_t,
        log_bw: g_logbw,
    }
}

/// Maximises the paired training statistic from `init`; returns the best
/// iterate seen. A non-finite objective or failed solve reverts to the
/// previous iterate and halves the step.
pub fn optimize_locations(
    x: &Dataset,
    y: &Dataset,
    init: &TestLocations,
    gamma: f64,
    params: OptimizerParams,
) -> Result<OptimizedLocations> {
    if x.n() != y.n() {
        return Err(Error::SampleCountMismatch {
            left: x.n(),
            right: y.n(),
        });
    }
    if !(params.rate > 0.0) {
        return Err(invalid("rate", format!("must be positive, got {}", params.rate)));
    }
    let initial_objective = train_objective(x, y, init, gamma)?;
    let mut best = (initial_objective, init.clone());
    let mut current = Params::from_locations(init);
    let mut rate = params.rate;
    let mut steps_taken = 0;
    for _ in 0..params.steps {
        let here = current.to_locations(init)?;
        let (obj, grad) = match objective_and_gradient(x, y, &here, gamma) {
            Ok(v) if v.0.is_finite() => v,
            _ => break,
        };
        if obj > best.0 {
            best = (obj, here);
        }
        let mut next = current.clone();
        for (p, gv) in next.coords.iter_mut().zip(&grad.coords) {
            *p += rate * gv;
        }
        next.log_bw += rate * grad.log_bw;
        let usable = next.coords.iter().all(|v| v.is_finite())
            && next.log_bw.is_finite()
            && next
                .to_locations(init)
                .and_then(|l| train_objective(x, y, &l, gamma))
                .is_ok_and(f64::is_finite);
        if usable {
            current = next;
        } else {
            rate *= 0.5;
        }
        steps_taken += 1;
    }
    if steps_taken > 0 {
        let last = current.to_locations(init)?;
        if let Ok(obj) = train_objective(x, y, &last, gamma) {
            if obj > best.0 {
                best = (obj, last);
            }
        }
    }
    Ok(OptimizedLocations {
        locations: best.1,
        initial_objective,
        objective: best.0,
        steps_taken,
    })
}
