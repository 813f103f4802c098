//! Derivative-free simplex search with random restarts, followed by a
//! quasi-Newton polish on central-difference gradients.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::util::stream_rng;

#[derive(Debug, Clone)]
pub struct OptimOptions {
    /// Random restarts in addition to the run from the initial point.
    pub restarts: usize,
    /// Standard deviation of the restart perturbation (unconstrained scale).
    pub restart_spread: f64,
    pub seed: u64,
    /// Simplex diameter tolerance on parameters.
    pub xtol: f64,
    pub ftol: f64,
    /// Evaluation budget per simplex run.
    pub max_evals: usize,
    /// Run BFGS from the best simplex point.
    pub polish: bool,
    /// Gradient infinity-norm tolerance for the polish.
    pub gtol: f64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self {
            restarts: 5,
            restart_spread: 0.5,
            seed: 0x5eed,
            xtol: 1e-8,
            ftol: 1e-12,
            max_evals: 4000,
            polish: true,
            gtol: 1e-7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    /// Whether the final stage met its stopping tolerance.
    pub converged: bool,
    /// Infinity norm of the numerical gradient at `x`.
    pub grad_norm: f64,
    pub evaluations: usize,
}

fn eval<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64]) -> f64 {
    let v = f(x);
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

/// Nelder–Mead with dimension-adaptive coefficients.
pub fn nelder_mead<F>(f: &F, x0: &[f64], step: f64, xtol: f64, ftol: f64, max_evals: usize) -> Minimum
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    let nf = n as f64;
    let (alpha, gamma) = (1.0, 1.0 + 2.0 / nf);
    let (rho, sigma) = (0.75 - 1.0 / (2.0 * nf), 1.0 - 1.0 / nf);

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += if v[i].abs() > 1e-3 { step * v[i].abs().max(1.0) } else { step };
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(f, v)).collect();
    let mut evals = n + 1;
    let mut converged = false;

    let mut centroid = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial2 = vec![0.0; n];

    while evals < max_evals {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let diameter = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        let spread = (values[n] - values[0]).abs();
        if diameter <= xtol && (spread <= ftol * (1.0 + values[0].abs()) || !values[n].is_finite()) {
            converged = true;
            break;
        }
        if diameter <= xtol * 1e-3 {
            converged = true;
            break;
        }

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / nf;
            }
        }

        for j in 0..n {
            trial[j] = centroid[j] + alpha * (centroid[j] - simplex[n][j]);
        }
        let fr = eval(f, &trial);
        evals += 1;

        if fr < values[0] {
            for j in 0..n {
                trial2[j] = centroid[j] + gamma * (trial[j] - centroid[j]);
            }
            let fe = eval(f, &trial2);
            evals += 1;
            if fe < fr {
                simplex[n].copy_from_slice(&trial2);
                values[n] = fe;
            } else {
                simplex[n].copy_from_slice(&trial);
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n].copy_from_slice(&trial);
            values[n] = fr;
            continue;
        }

        // contraction, outside if the reflection improved on the worst
        let outside = fr < values[n];
        for j in 0..n {
            trial2[j] = if outside {
                centroid[j] + rho * (trial[j] - centroid[j])
            } else {
                centroid[j] + rho * (simplex[n][j] - centroid[j])
            };
        }
        let fc = eval(f, &trial2);
        evals += 1;
        if fc < values[n].min(fr) {
            simplex[n].copy_from_slice(&trial2);
            values[n] = fc;
            continue;
        }

        // shrink towards the best vertex
        for i in 1..=n {
            for j in 0..n {
                simplex[i][j] = simplex[0][j] + sigma * (simplex[i][j] - simplex[0][j]);
            }
            values[i] = eval(f, &simplex[i]);
        }
        evals += n;
    }

    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    Minimum {
        x: simplex[best].clone(),
        value: values[best],
        converged,
        grad_norm: f64::NAN,
        evaluations: evals,
    }
}

/// Central-difference gradient with relative steps.
pub fn numerical_gradient<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64]) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = 1e-5 * x[i].abs().max(1.0);
            xp[i] = x[i] + h;
            let fp = f(&xp);
            xp[i] = x[i] - h;
            let fm = f(&xp);
            xp[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// BFGS with backtracking line search and numerical gradients.
pub fn bfgs<F: Fn(&[f64]) -> f64>(f: &F, x0: &[f64], gtol: f64, max_iter: usize) -> Minimum {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = eval(f, &x);
    let mut g = numerical_gradient(f, &x);
    let mut evals = 1 + 2 * n;
    let mut h_inv = identity(n);
    let mut converged = inf_norm(&g) <= gtol;

    for _ in 0..max_iter {
        if converged || !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
            break;
        }
        let mut dir: Vec<f64> = (0..n)
            .map(|i| -(0..n).map(|j| h_inv[i][j] * g[j]).sum::<f64>())
            .collect();
        let mut slope: f64 = dir.iter().zip(&g).map(|(d, gi)| d * gi).sum();
        if slope >= 0.0 {
            h_inv = identity(n);
            dir = g.iter().map(|v| -v).collect();
            slope = -g.iter().map(|v| v * v).sum::<f64>();
        }

        let mut step = 1.0;
        let mut x_new = vec![0.0; n];
        let mut f_new = f64::INFINITY;
        let mut accepted = false;
        for _ in 0..60 {
            for i in 0..n {
                x_new[i] = x[i] + step * dir[i];
            }
            f_new = eval(f, &x_new);
            evals += 1;
            if f_new <= fx + 1e-4 * step * slope {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted || f_new > fx {
            break;
        }
        let g_new = numerical_gradient(f, &x_new);
        evals += 2 * n;
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let df = fx - f_new;
        x = x_new.clone();
        fx = f_new;
        g = g_new;
        if inf_norm(&g) <= gtol {
            converged = true;
            break;
        }
        if inf_norm(&s) < 1e-15 || df.abs() < 1e-16 * fx.abs().max(1.0) {
            break;
        }
        if sy > 1e-12 {
            // H <- (I - r s y^T) H (I - r y s^T) + r s s^T
            let r = 1.0 / sy;
            let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h_inv[i][j] * y[j]).sum()).collect();
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            for i in 0..n {
                for j in 0..n {
                    h_inv[i][j] += (1.0 + yhy * r) * r * s[i] * s[j] - r * (hy[i] * s[j] + s[i] * hy[j]);
                }
            }
        }
    }

    Minimum {
        grad_norm: inf_norm(&g),
        x,
        value: fx,
        converged,
        evaluations: evals,
    }
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

/// Multi-start simplex search plus optional quasi-Newton polish.
pub fn minimize<F: Fn(&[f64]) -> f64>(f: &F, x0: &[f64], opts: &OptimOptions) -> Minimum {
    let mut rng = stream_rng(opts.seed, 0x0b7);
    let mut best = nelder_mead(f, x0, 0.2, opts.xtol, opts.ftol, opts.max_evals);
    let mut evals = best.evaluations;
    let mut any_converged = best.converged;

    for _ in 0..opts.restarts {
        let start: Vec<f64> = x0
            .iter()
            .map(|v| v + opts.restart_spread * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let run = nelder_mead(f, &start, 0.2, opts.xtol, opts.ftol, opts.max_evals);
        evals += run.evaluations;
        any_converged |= run.converged;
        if run.value < best.value {
            best = run;
        }
    }
    // one more simplex from the incumbent guards against premature collapse
    let again = nelder_mead(f, &best.x, 0.05, opts.xtol, opts.ftol, opts.max_evals);
    evals += again.evaluations;
    if again.value <= best.value {
        best = again;
    }

    if opts.polish && best.value.is_finite() {
        let polished = bfgs(f, &best.x, opts.gtol, 200);
        evals += polished.evaluations;
        if polished.value <= best.value {
            best = Minimum {
                converged: polished.converged || any_converged,
                ..polished
            };
        } else {
            best.grad_norm = inf_norm(&numerical_gradient(f, &best.x));
        }
    } else {
        best.grad_norm = inf_norm(&numerical_gradient(f, &best.x));
        best.converged = any_converged;
    }
    best.evaluations = evals;
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    #[test]
    fn simplex_finds_rosenbrock_minimum() {
        let m = nelder_mead(&rosenbrock, &[-1.2, 1.0], 0.2, 1e-10, 1e-14, 20_000);
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6, "{:?}", m.x);
    }

    #[test]
    fn bfgs_converges_on_quadratic() {
        let f = |x: &[f64]| (x[0] - 3.0).powi(2) + 10.0 * (x[1] + 1.0).powi(2) + x[0] * x[1];
        let m = bfgs(&f, &[0.0, 0.0], 1e-8, 200);
        assert!(m.converged);
        // stationary point of the quadratic
        let x1 = -23.0 / 19.5;
        let x0 = 3.0 - x1 / 2.0;
        assert!((m.x[0] - x0).abs() < 1e-6, "{:?}", m.x);
        assert!((m.x[1] - x1).abs() < 1e-6);
    }

    #[test]
    fn minimize_is_deterministic_and_polishes() {
        let opts = OptimOptions::default();
        let a = minimize(&rosenbrock, &[-1.0, 2.0], &opts);
        let b = minimize(&rosenbrock, &[-1.0, 2.0], &opts);
        assert_eq!(a.x, b.x);
        assert!(a.grad_norm < 1e-5, "{}", a.grad_norm);
    }

    #[test]
    fn non_finite_objective_is_treated_as_infinite() {
        let f = |x: &[f64]| if x[0] < 0.0 { f64::NAN } else { (x[0] - 1.0).powi(2) };
        let m = minimize(&f, &[0.5], &OptimOptions::default());
        assert!((m.x[0] - 1.0).abs() < 1e-6);
    }
}
