//! Two- and three-parameter spectral decay MLEs.
//!
//! With `tau_i = (c1 + c2 h_i) f_i(alpha)` and `f_i(alpha) = exp(alpha h_i)`,
//! the estimating equations are `(2/N)` times the gradient of the
//! log-likelihood in the original parameter coordinates.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use super::{loglik_diagonal, FitReport, SufficientStats};
use crate::error::{Error, Result};
use crate::model::{decay_variances, DecayFamily, DecayModel, DecayParams, DiagonalCovariance};

const MAX_ITER: usize = 200;
const MAX_HALVINGS: usize = 50;
/// Relative residual at which a fit counts as converged.
const RESIDUAL_TOL: f64 = 1e-8;
/// Relative residual required of the decay-rate root.
const RATE_TOL: f64 = 1e-10;
/// Newton keeps polishing until this level or until no step makes progress.
const POLISH_TOL: f64 = 1e-15;
const BRACKET_START: f64 = 1e-6;
const BRACKET_LIMIT: f64 = 1e3;
/// Scaled curvature above which a stationary point is treated as a saddle.
const SADDLE_CURVATURE: f64 = 1e-9;
const MAX_ESCAPE_DEPTH: usize = 2;

fn check_inputs(stats: &SufficientStats, model: &DecayModel, family: DecayFamily) -> Result<()> {
    if model.family() != family {
        return Err(Error::FamilyMismatch {
            expected: match family {
                DecayFamily::TwoParam => "TwoParam",
                DecayFamily::ThreeParam => "ThreeParam",
            },
        });
    }
    if stats.dim() != model.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} sums of squares", model.dim()),
            actual: format!("{}", stats.dim()),
        });
    }
    Ok(())
}

/// Log-likelihood of the decay model at `params`.
pub fn decay_loglik(params: &DecayParams, stats: &SufficientStats, model: &DecayModel) -> Result<f64> {
    if stats.dim() != model.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} sums of squares", model.dim()),
            actual: format!("{}", stats.dim()),
        });
    }
    let d = decay_variances(model.h(), params).map_err(|_| Error::InfeasibleParams)?;
    loglik_diagonal(&DiagonalCovariance::new(d)?, stats)
}

/// Two-parameter estimating equations `(n/c - sum s_i f_i, sum h_i (1 - c s_i f_i))`,
/// with `s_i = S_i^2 / N`.
pub fn decay_score2(params: [f64; 2], stats: &SufficientStats, model: &DecayModel) -> Result<[f64; 2]> {
    check_inputs(stats, model, DecayFamily::TwoParam)?;
    let [c, alpha] = params;
    if !(c > 0.0) {
        return Err(Error::InfeasibleParams);
    }
    let s = stats.mean_squares();
    let mut out = [model.dim() as f64 / c, 0.0];
    for (&hi, si) in model.h().iter().zip(&s) {
        let sf = si * (alpha * hi).exp();
        out[0] -= sf;
        out[1] += hi * (1.0 - c * sf);
    }
    Ok(out)
}

/// Left-hand sides of the three estimating equations for `(c1, c2, alpha)`,
/// in that order. Equal to `(2/N)` times the log-likelihood gradient.
pub fn decay_score3(params: [f64; 3], stats: &SufficientStats, model: &DecayModel) -> Result<[f64; 3]> {
    check_inputs(stats, model, DecayFamily::ThreeParam)?;
    let e = eval3(model.h(), &stats.mean_squares(), &Vector3::from(params)).ok_or(Error::InfeasibleParams)?;
    Ok([e.score[0], e.score[1], e.score[2]])
}

/// Two-parameter MLE `(c, alpha)`: brackets the decay-rate equation from
/// `alpha = 0` outwards, refines by safeguarded Newton, then solves for `c`.
pub fn fit_decay2(stats: &SufficientStats, model: &DecayModel) -> Result<FitReport> {
    check_inputs(stats, model, DecayFamily::TwoParam)?;
    if !model.is_identifiable() {
        return Err(Error::Unidentifiable);
    }
    fit_rate(model.h(), &stats.mean_squares())
}

/// Three-parameter MLE `(c1, c2, alpha)` by damped Newton on the
/// estimating equations, starting from the two-parameter fit by default.
pub fn fit_decay3(stats: &SufficientStats, model: &DecayModel, init: Option<[f64; 3]>) -> Result<FitReport> {
    check_inputs(stats, model, DecayFamily::ThreeParam)?;
    if !model.is_identifiable() {
        return Err(Error::Unidentifiable);
    }
    let h = model.h();
    let s = stats.mean_squares();
    let (start, mut iterations) = match init {
        Some(p) => (Vector3::from(p), 0),
        None => {
            let two = fit_rate(h, &s)?;
            (Vector3::new(two.params[0], 0.0, two.params[1]), two.iterations)
        }
    };
    if eval3(h, &s, &start).is_none() {
        return Err(Error::InfeasibleInit);
    }
    let fit = newton3(h, &s, start, 0)?;
    iterations += fit.iterations;
    Ok(FitReport {
        params: fit.x.iter().copied().collect(),
        iterations,
        residual_norm: fit.eval.rel,
        converged: fit.eval.rel <= RESIDUAL_TOL,
    })
}

struct RateEval {
    /// Weighted mean of `h - mean(h)` under weights `s_i f_i(alpha)`.
    r: f64,
    /// Derivative of `r`: the weighted variance of `h`.
    dr: f64,
    rel: f64,
}

fn rate_eval(alpha: f64, log_s: &[f64], h: &[f64], h_mean: f64) -> RateEval {
    let top = log_s
        .iter()
        .zip(h)
        .filter(|(l, _)| l.is_finite())
        .map(|(l, hi)| l + alpha * hi)
        .fold(f64::NEG_INFINITY, f64::max);
    let (mut w, mut m1, mut m2, mut abs) = (0.0, 0.0, 0.0, 0.0);
    for (l, hi) in log_s.iter().zip(h) {
        if !l.is_finite() {
            continue;
        }
        let wi = (l + alpha * hi - top).exp();
        let dev = hi - h_mean;
        w += wi;
        m1 += wi * dev;
        m2 += wi * dev * dev;
        abs += wi * dev.abs();
    }
    let mean = m1 / w;
    RateEval {
        r: mean,
        dr: m2 / w - mean * mean,
        rel: if abs > 0.0 { m1.abs() / abs } else { 0.0 },
    }
}

fn fit_rate(h: &[f64], s: &[f64]) -> Result<FitReport> {
    if s.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateSample);
    }
    let n = h.len() as f64;
    let h_mean = h.iter().sum::<f64>() / n;
    let log_s: Vec<f64> = s.iter().map(|v| v.ln()).collect();
    let mut iterations = 0;

    let r0 = rate_eval(0.0, &log_s, h, h_mean);
    let mut alpha = 0.0;
    if r0.r != 0.0 && r0.rel > POLISH_TOL {
        let dir = -r0.r.signum();
        let (mut prev, mut step) = (0.0, BRACKET_START);
        let far = loop {
            iterations += 1;
            let a = dir * step;
            let ra = rate_eval(a, &log_s, h, h_mean);
            if ra.r == 0.0 || ra.r.signum() != r0.r.signum() {
                break a;
            }
            if step >= BRACKET_LIMIT {
                return Err(Error::NoBracket {
                    limit: BRACKET_LIMIT,
                });
            }
            prev = a;
            step = (2.0 * step).min(BRACKET_LIMIT);
        };
        // r is increasing in alpha
        let (mut lo, mut hi) = if far < prev { (far, prev) } else { (prev, far) };
        alpha = 0.5 * (lo + hi);
        loop {
            iterations += 1;
            let e = rate_eval(alpha, &log_s, h, h_mean);
            if e.r == 0.0 || e.rel <= POLISH_TOL {
                break;
            }
            if e.r < 0.0 {
                lo = alpha;
            } else {
                hi = alpha;
            }
            if hi - lo <= 4.0 * f64::EPSILON * lo.abs().max(hi.abs()) || iterations >= MAX_ITER {
                break;
            }
            let newton = alpha - e.r / e.dr;
            alpha = if e.dr > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
        }
    }

    // 1/c = (1/n) sum s_i f_i(alpha), evaluated in log space
    let terms: Vec<f64> = log_s
        .iter()
        .zip(h)
        .filter(|(l, _)| l.is_finite())
        .map(|(l, hi)| l + alpha * hi)
        .collect();
    let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln();
    let c = (n.ln() - lse).exp();
    let mean_sf = s.iter().zip(h).map(|(si, hi)| si * (alpha * hi).exp()).sum::<f64>() / n;
    let rel_c = (1.0 / c - mean_sf).abs() / (1.0 / c + mean_sf);
    let rel_alpha = rate_eval(alpha, &log_s, h, h_mean).rel;
    let residual_norm = rel_c.max(rel_alpha);
    if !(c > 0.0 && c.is_finite()) || residual_norm > RATE_TOL {
        return Err(Error::NotConverged {
            iterations,
            residual: residual_norm,
        });
    }
    Ok(FitReport {
        params: vec![c, alpha],
        iterations,
        residual_norm,
        converged: true,
    })
}

#[derive(Debug, Clone)]
struct Eval3 {
    /// `sum_i log tau_i - tau_i s_i`, the log-likelihood up to scale and shift.
    merit: f64,
    score: Vector3<f64>,
    jac: Matrix3<f64>,
    /// Max over equations of `|F_j| / sum_i |terms_ij|`.
    rel: f64,
}

fn eval3(h: &[f64], s: &[f64], p: &Vector3<f64>) -> Option<Eval3> {
    let (c1, c2, alpha) = (p[0], p[1], p[2]);
    let mut merit = 0.0;
    let mut f = Vector3::<f64>::zeros();
    let mut scale = Vector3::<f64>::zeros();
    let mut j = Matrix3::<f64>::zeros();
    for (&hi, &si) in h.iter().zip(s) {
        let a = c1 + c2 * hi;
        if !(a > 0.0) {
            return None;
        }
        let lf = alpha * hi;
        let sf = si * lf.exp();
        let inv_a = 1.0 / a;
        merit += a.ln() + lf - sf * a;
        f[0] += inv_a - sf;
        f[1] += hi * (inv_a - sf);
        f[2] += hi * (1.0 - sf * a);
        scale[0] += inv_a + sf;
        scale[1] += hi * (inv_a + sf);
        scale[2] += hi * (1.0 + sf * a);
        let inv_a2 = inv_a * inv_a;
        j[(0, 0)] -= inv_a2;
        j[(0, 1)] -= hi * inv_a2;
        j[(0, 2)] -= sf * hi;
        j[(1, 1)] -= hi * hi * inv_a2;
        j[(1, 2)] -= sf * hi * hi;
        j[(2, 2)] -= sf * a * hi * hi;
    }
    j[(1, 0)] = j[(0, 1)];
    j[(2, 0)] = j[(0, 2)];
    j[(2, 1)] = j[(1, 2)];
    let rel = (0..3)
        .map(|k| if scale[k] > 0.0 { f[k].abs() / scale[k] } else { 0.0 })
        .fold(0.0, f64::max);
    if !(merit.is_finite() && f.iter().all(|v| v.is_finite()) && j.iter().all(|v| v.is_finite())) {
        return None;
    }
    Some(Eval3 {
        merit,
        score: f,
        jac: j,
        rel,
    })
}

fn jacobi_scaling(jac: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::from_fn(|i, _| {
        let v = jac[(i, i)].abs();
        if v > 0.0 {
            1.0 / v.sqrt()
        } else {
            1.0
        }
    })
}

/// Newton ascent direction; Levenberg-damped when the Hessian is not
/// negative definite.
fn ascent_direction(jac: &Matrix3<f64>, score: &Vector3<f64>) -> Option<Vector3<f64>> {
    let d = jacobi_scaling(jac);
    let neg = Matrix3::from_fn(|i, j| -jac[(i, j)] * d[i] * d[j]);
    let g = score.component_mul(&d);
    let mut mu = 0.0;
    while mu <= 1e10 {
        if let Some(ch) = (neg + Matrix3::identity() * mu).cholesky() {
            let step = ch.solve(&g).component_mul(&d);
            if step.iter().all(|v| v.is_finite()) {
                return Some(step);
            }
        }
        mu = if mu == 0.0 { 1e-10 } else { mu * 10.0 };
    }
    None
}

/// Direction of positive curvature at a stationary point, if any.
fn saddle_direction(jac: &Matrix3<f64>) -> Option<Vector3<f64>> {
    let d = jacobi_scaling(jac);
    let scaled = Matrix3::from_fn(|i, j| jac[(i, j)] * d[i] * d[j]);
    let eig = SymmetricEigen::new(scaled);
    let (k, &top) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))?;
    (top > SADDLE_CURVATURE).then(|| eig.eigenvectors.column(k).component_mul(&d))
}

fn acceptable(old: &Eval3, new: &Eval3) -> bool {
    new.merit > old.merit
        || (new.merit >= old.merit - 1e-12 * (1.0 + old.merit.abs()) && new.rel < old.rel)
}

struct Newton3 {
    x: Vector3<f64>,
    eval: Eval3,
    iterations: usize,
}

fn newton3(h: &[f64], s: &[f64], start: Vector3<f64>, depth: usize) -> Result<Newton3> {
    let mut x = start;
    let mut ev = eval3(h, s, &x).ok_or(Error::InfeasibleInit)?;
    let mut iterations = 0;
    while ev.rel > POLISH_TOL {
        if iterations >= MAX_ITER {
            return Err(Error::NotConverged {
                iterations,
                residual: ev.rel,
            });
        }
        iterations += 1;
        let dir = ascent_direction(&ev.jac, &ev.score).ok_or(Error::SingularHessian)?;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let xn = x + dir * t;
            if let Some(en) = eval3(h, s, &xn) {
                if acceptable(&ev, &en) {
                    x = xn;
                    ev = en;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            if ev.rel <= RESIDUAL_TOL {
                break;
            }
            return Err(Error::NotConverged {
                iterations,
                residual: ev.rel,
            });
        }
    }

    // A stationary point with positive curvature is a saddle: restart from
    // both sides of it and keep the better maximum.
    if depth < MAX_ESCAPE_DEPTH {
        if let Some(u) = saddle_direction(&ev.jac) {
            let mut best: Option<Newton3> = None;
            for sign in [1.0, -1.0] {
                let Some(xs) = escape_point(h, s, &x, &ev, &(u * sign)) else {
                    continue;
                };
                if let Ok(found) = newton3(h, s, xs, depth + 1) {
                    if best.as_ref().is_none_or(|b| found.eval.merit > b.eval.merit) {
                        best = Some(found);
                    }
                }
            }
            if let Some(b) = best {
                if b.eval.merit > ev.merit {
                    return Ok(Newton3 {
                        iterations: iterations + b.iterations,
                        ..b
                    });
                }
            }
        }
    }
    Ok(Newton3 { x, eval: ev, iterations })
}

fn escape_point(h: &[f64], s: &[f64], x: &Vector3<f64>, ev: &Eval3, u: &Vector3<f64>) -> Option<Vector3<f64>> {
    let mut t = 1.0;
    for _ in 0..=MAX_HALVINGS {
        let xn = x + u * t;
        if let Some(en) = eval3(h, s, &xn) {
            if en.merit > ev.merit + 1e-12 * (1.0 + ev.merit.abs()) {
                return Some(xn);
            }
        }
        t *= 0.5;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::sufficient_stats;
    use crate::model::{decay_diagonal, laplace_eigenvalues, SampleSet};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model2(m: usize, k: usize, c: f64, alpha: f64) -> DecayModel {
        DecayModel::on_grid(m, k, DecayParams::Two { c, alpha }).unwrap()
    }

    fn model3(m: usize, k: usize, c1: f64, c2: f64, alpha: f64) -> DecayModel {
        DecayModel::on_grid(m, k, DecayParams::Three { c1, c2, alpha }).unwrap()
    }

    fn draw_stats(d: &DiagonalCovariance, big_n: usize, seed: u64) -> SufficientStats {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = DMatrix::from_fn(d.len(), big_n, |i, _| {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            z * d.variances()[i].sqrt()
        });
        sufficient_stats(&SampleSet::new(data, None).unwrap())
    }

    #[test]
    fn decay2_noiseless_recovery() {
        for &(c, alpha) in &[(30.0, 0.002), (1.0, 0.0), (5.0, -0.004), (0.2, 0.01)] {
            let m = model2(10, 10, c, alpha);
            let stats = SufficientStats::noiseless(&decay_diagonal(&m), 20).unwrap();
            let fit = fit_decay2(&stats, &m).unwrap();
            assert!(fit.converged && fit.residual_norm <= 1e-10);
            assert!((fit.params[0] - c).abs() <= 1e-9 * c, "{:?}", fit.params);
            assert!((fit.params[1] - alpha).abs() <= 1e-10, "{:?}", fit.params);
        }
    }

    #[test]
    fn decay2_rejects_equal_eigenvalues() {
        let m = DecayModel::new(vec![-2.0; 4], DecayParams::Two { c: 1.0, alpha: 0.0 }).unwrap();
        let stats = SufficientStats::new(vec![1.0; 4], 3).unwrap();
        assert!(matches!(fit_decay2(&stats, &m), Err(Error::Unidentifiable)));
    }

    #[test]
    fn decay2_no_bracket_when_mass_sits_on_one_extreme() {
        // all weight on the smallest h: the rate equation stays negative
        let m = DecayModel::new(vec![-1.0, -2.0, -3.0], DecayParams::Two { c: 1.0, alpha: 0.0 }).unwrap();
        let stats = SufficientStats::new(vec![1.0, 0.0, 0.0], 3).unwrap();
        assert!(matches!(fit_decay2(&stats, &m), Err(Error::NoBracket { .. })));
    }

    #[test]
    fn decay2_matches_profile_likelihood_grid() {
        let m = model2(10, 10, 30.0, 0.002);
        let stats = draw_stats(&decay_diagonal(&m), 20, 2024);
        let fit = fit_decay2(&stats, &m).unwrap();
        // profile log-likelihood over alpha, c eliminated in closed form
        let s = stats.mean_squares();
        let h = m.h();
        let profile = |alpha: f64| {
            let inv_c = s.iter().zip(h).map(|(si, hi)| si * (alpha * hi).exp()).sum::<f64>() / 100.0;
            let c = 1.0 / inv_c;
            s.iter()
                .zip(h)
                .map(|(si, hi)| {
                    let tau = c * (alpha * hi).exp();
                    tau.ln() - tau * si
                })
                .sum::<f64>()
        };
        let (mut best, mut arg) = (f64::NEG_INFINITY, 0.0);
        for i in 0..=20_000 {
            let a = -0.01 + 0.02 * i as f64 / 20_000.0;
            let v = profile(a);
            if v > best {
                best = v;
                arg = a;
            }
        }
        assert!((fit.params[1] - arg).abs() <= 1e-4, "{} vs {}", fit.params[1], arg);
    }

    #[test]
    fn score3_vanishes_at_noiseless_truth() {
        let m = model3(6, 5, 30.0, 0.5, 0.002);
        let stats = SufficientStats::noiseless(&decay_diagonal(&m), 10).unwrap();
        let f = decay_score3([30.0, 0.5, 0.002], &stats, &m).unwrap();
        assert!(f.iter().all(|v| v.abs() < 1e-9), "{f:?}");
    }

    #[test]
    fn score3_infeasible() {
        let m = model3(3, 3, 1.0, 0.0, 0.0);
        let stats = SufficientStats::new(vec![1.0; 9], 4).unwrap();
        assert!(matches!(
            decay_score3([1.0, -1.0, 0.0], &stats, &m),
            Err(Error::InfeasibleParams)
        ));
    }

    #[test]
    fn score3_matches_finite_differences() {
        let m = model3(4, 3, 2.0, 0.1, 0.01);
        let stats = draw_stats(&decay_diagonal(&m), 6, 17);
        let big_n = stats.n_samples() as f64;
        let p = [1.7, 0.13, 0.008];
        let f = decay_score3(p, &stats, &m).unwrap();
        let ll = |q: [f64; 3]| {
            let params = DecayParams::Three { c1: q[0], c2: q[1], alpha: q[2] };
            decay_loglik(&params, &stats, &m).unwrap()
        };
        let step = 1e-6;
        for j in 0..3 {
            let (mut up, mut dn) = (p, p);
            up[j] += step;
            dn[j] -= step;
            let fd = (2.0 / big_n) * (ll(up) - ll(dn)) / (2.0 * step);
            assert!((f[j] - fd).abs() <= 1e-5 * fd.abs(), "{j}: {} vs {fd}", f[j]);
        }
    }

    #[test]
    fn decay3_noiseless_recovery() {
        let m = model3(10, 10, 30.0, 0.5, 0.002);
        let stats = SufficientStats::noiseless(&decay_diagonal(&m), 20).unwrap();
        let fit = fit_decay3(&stats, &m, None).unwrap();
        assert!(fit.converged);
        for (got, want) in fit.params.iter().zip([30.0, 0.5, 0.002]) {
            assert!((got - want).abs() <= 1e-6 * want, "{:?}", fit.params);
        }
        let f = decay_score3([fit.params[0], fit.params[1], fit.params[2]], &stats, &m).unwrap();
        assert!(f.iter().all(|v| v.abs() < 1e-8), "{f:?}");
    }

    #[test]
    fn decay3_on_two_param_truth_keeps_c2_near_zero() {
        let m = model3(10, 10, 30.0, 0.0, 0.002);
        let stats = SufficientStats::noiseless(&decay_diagonal(&m), 20).unwrap();
        let fit = fit_decay3(&stats, &m, None).unwrap();
        let hmax = m.h().iter().copied().fold(0.0, f64::max);
        assert!(fit.params[1].abs() * hmax / fit.params[0] < 1e-6, "{:?}", fit.params);
    }

    #[test]
    fn decay3_infeasible_init() {
        let m = model3(3, 3, 1.0, 0.0, 0.0);
        let stats = SufficientStats::new(vec![1.0; 9], 4).unwrap();
        assert!(matches!(
            fit_decay3(&stats, &m, Some([1.0, -10.0, 0.0])),
            Err(Error::InfeasibleInit)
        ));
    }

    #[test]
    fn family_is_checked() {
        let m = model2(3, 3, 1.0, 0.0);
        let stats = SufficientStats::new(vec![1.0; 9], 4).unwrap();
        assert!(matches!(
            fit_decay3(&stats, &m, None),
            Err(Error::FamilyMismatch { .. })
        ));
    }

    /// For fixed alpha the likelihood is concave in (c1, c2); maximize it
    /// by a coarse-to-fine search in the feasible region.
    fn inner_max(h: &[f64], s: &[f64], alpha: f64, c1: f64, c2: f64) -> f64 {
        let merit = |c1: f64, c2: f64| -> f64 {
            let mut acc = 0.0;
            for (&hi, &si) in h.iter().zip(s) {
                let a = c1 + c2 * hi;
                if a <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                let tau = a * (alpha * hi).exp();
                acc += tau.ln() - tau * si;
            }
            acc
        };
        let (mut x, mut y) = (c1, c2);
        let (mut dx, mut dy) = (0.5 * c1.abs().max(1.0), 0.05 * c1.abs().max(1.0) / 100.0);
        let mut best = merit(x, y);
        for _ in 0..60 {
            let mut improved = true;
            while improved {
                improved = false;
                for (ax, ay) in [(dx, 0.0), (-dx, 0.0), (0.0, dy), (0.0, -dy), (dx, -dy), (-dx, dy)] {
                    let v = merit(x + ax, y + ay);
                    if v > best {
                        best = v;
                        x += ax;
                        y += ay;
                        improved = true;
                    }
                }
            }
            dx *= 0.5;
            dy *= 0.5;
        }
        best
    }

    #[test]
    fn decay3_is_not_beaten_by_profile_search() {
        let truth = model3(10, 10, 30.0, 0.0, 0.002);
        let d = decay_diagonal(&truth);
        for seed in 0..6 {
            let stats = draw_stats(&d, 10, 300 + seed);
            let fit = fit_decay3(&stats, &truth, None).unwrap();
            let p = [fit.params[0], fit.params[1], fit.params[2]];
            let s = stats.mean_squares();
            let got = eval3(truth.h(), &s, &Vector3::from(p)).unwrap().merit;
            for i in -20..=20 {
                let alpha = p[2] + i as f64 * 2e-4;
                let best = inner_max(truth.h(), &s, alpha, p[0], p[1]);
                assert!(best <= got + 1e-7 * got.abs(), "seed {seed}, alpha {alpha}: {best} > {got}");
            }
        }
    }

    #[test]
    fn attained_likelihoods_are_nested() {
        let truth = model3(10, 10, 30.0, 0.0, 0.002);
        let two = model2(10, 10, 30.0, 0.002);
        let d = decay_diagonal(&truth);
        for seed in 0..20 {
            let stats = draw_stats(&d, 5 + seed as usize % 16, 900 + seed);
            let f2 = fit_decay2(&stats, &two).unwrap();
            let f3 = fit_decay3(&stats, &truth, None).unwrap();
            let l2 = decay_loglik(&DecayParams::from_slice(DecayFamily::TwoParam, &f2.params).unwrap(), &stats, &two).unwrap();
            let l3 = decay_loglik(&DecayParams::from_slice(DecayFamily::ThreeParam, &f3.params).unwrap(), &stats, &truth).unwrap();
            let l1 = loglik_diagonal(&crate::estimators::diagonal_mle(&stats).unwrap(), &stats).unwrap();
            let tol = 1e-9 * l1.abs();
            assert!(l1 + tol >= l3 && l3 + tol >= l2, "seed {seed}: {l1} {l3} {l2}");
            let raw = decay_score3([f3.params[0], f3.params[1], f3.params[2]], &stats, &truth).unwrap();
            assert!(raw.iter().all(|v| v.abs() <= 1e-8), "{raw:?}");
        }
    }

    #[test]
    fn score2_is_gradient() {
        let m = model2(4, 4, 3.0, 0.01);
        let stats = draw_stats(&decay_diagonal(&m), 7, 8);
        let p = [2.5, 0.012];
        let f = decay_score2(p, &stats, &m).unwrap();
        let big_n = stats.n_samples() as f64;
        let ll = |q: [f64; 2]| decay_loglik(&DecayParams::Two { c: q[0], alpha: q[1] }, &stats, &m).unwrap();
        for j in 0..2 {
            let (mut up, mut dn) = (p, p);
            up[j] += 1e-6;
            dn[j] -= 1e-6;
            let fd = (2.0 / big_n) * (ll(up) - ll(dn)) / 2e-6;
            assert!((f[j] - fd).abs() <= 1e-5 * fd.abs());
        }
    }

    #[test]
    fn lambda_helper_sanity() {
        assert_eq!(laplace_eigenvalues(10, 10).unwrap().len(), 100);
    }
}
