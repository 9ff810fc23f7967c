//! Quasi-Newton maximization with backtracking line search, plus the
//! finite-difference and Latin-hypercube helpers the estimators share.

/// A smooth objective to maximize over an unconstrained space.
pub trait Objective {
    fn value(&self, x: &[f64]) -> f64;
    fn value_grad(&self, x: &[f64]) -> (f64, Vec<f64>);
}

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self { max_iter: 500, grad_tol: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsReport {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// BFGS with inverse-Hessian updates and Armijo backtracking.
///
/// Maximizes `f`; the report carries the best point seen, so the achieved
/// value never falls below the value at `x0`.
pub fn maximize<F: Objective>(f: &F, x0: &[f64], opts: &BfgsOptions) -> BfgsReport {
    let d = x0.len();
    let mut x = x0.to_vec();
    let (v0, g0) = f.value_grad(&x);
    // Work in minimization form internally.
    let mut fx = -v0;
    let mut grad: Vec<f64> = g0.iter().map(|g| -g).collect();

    let mut best_x = x.clone();
    let mut best_fx = fx;

    // Inverse Hessian approximation, row-major d*d.
    let mut h_inv = vec![0.0; d * d];
    for i in 0..d {
        h_inv[i * d + i] = 1.0;
    }
    let mut first_update_pending = true;

    let mut iterations = 0;
    let mut converged = norm2(&grad) <= opts.grad_tol;

    while !converged && iterations < opts.max_iter {
        iterations += 1;

        // Search direction -H g.
        let mut dir = vec![0.0; d];
        for i in 0..d {
            let mut acc = 0.0;
            for j in 0..d {
                acc += h_inv[i * d + j] * grad[j];
            }
            dir[i] = -acc;
        }
        let mut slope: f64 = dir.iter().zip(&grad).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            // Not a descent direction; restart from steepest descent.
            for i in 0..d {
                for j in 0..d {
                    h_inv[i * d + j] = if i == j { 1.0 } else { 0.0 };
                }
            }
            first_update_pending = true;
            for i in 0..d {
                dir[i] = -grad[i];
            }
            slope = -grad.iter().map(|g| g * g).sum::<f64>();
            if !(slope < 0.0) {
                break;
            }
        }

        // Armijo backtracking.
        const C1: f64 = 1e-4;
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            let ft = -f.value(&trial);
            if ft.is_finite() && ft <= fx + C1 * step * slope {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            break; // line search exhausted; best point stands
        };

        let (v_new, g_new_pos) = f.value_grad(&x_new);
        let f_new = if v_new.is_finite() { -v_new } else { f_new };
        let grad_new: Vec<f64> = g_new_pos.iter().map(|g| -g).collect();

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = grad_new.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let s_norm = norm2(&s);
        let y_norm = norm2(&y);

        if sy > 1e-12 * s_norm * y_norm {
            if first_update_pending {
                // Oren-Luenberger scaling before the first update.
                let yy: f64 = y.iter().map(|v| v * v).sum();
                if yy > 0.0 {
                    let scale = sy / yy;
                    for i in 0..d {
                        for j in 0..d {
                            h_inv[i * d + j] = if i == j { scale } else { 0.0 };
                        }
                    }
                }
                first_update_pending = false;
            }
            // h_inv = (I - rho s y') h_inv (I - rho y s') + rho s s'
            let rho = 1.0 / sy;
            let mut hy = vec![0.0; d];
            for i in 0..d {
                let mut acc = 0.0;
                for j in 0..d {
                    acc += h_inv[i * d + j] * y[j];
                }
                hy[i] = acc;
            }
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            for i in 0..d {
                for j in 0..d {
                    h_inv[i * d + j] += rho * rho * yhy * s[i] * s[j]
                        - rho * (hy[i] * s[j] + s[i] * hy[j])
                        + rho * s[i] * s[j];
                }
            }
        }

        x = x_new;
        fx = f_new;
        grad = grad_new;
        if fx < best_fx {
            best_fx = fx;
            best_x = x.clone();
        }
        converged = norm2(&grad) <= opts.grad_tol;
    }

    // Report at the best point seen; refresh the gradient there if the
    // final iterate moved elsewhere.
    let grad_norm = if best_x == x {
        norm2(&grad)
    } else {
        let (_, g) = f.value_grad(&best_x);
        norm2(&g)
    };
    BfgsReport { x: best_x, value: -best_fx, grad_norm, iterations, converged }
}

/// Central-difference gradient with per-coordinate step
/// `cbrt(eps) * max(1, |x_i|)`, optionally clamped by `max_step`.
pub fn central_difference_gradient<V: Fn(&[f64]) -> f64>(
    value: V,
    x: &[f64],
    max_step: Option<&[f64]>,
) -> Vec<f64> {
    let base = f64::EPSILON.cbrt();
    let mut grad = vec![0.0; x.len()];
    let mut work = x.to_vec();
    for i in 0..x.len() {
        let mut h = base * x[i].abs().max(1.0);
        if let Some(caps) = max_step {
            h = h.min(caps[i]);
        }
        work[i] = x[i] + h;
        let fp = value(&work);
        work[i] = x[i] - h;
        let fm = value(&work);
        work[i] = x[i];
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Latin hypercube: `n` points stratified per coordinate over `bounds`.
pub fn latin_hypercube(
    bounds: &[(f64, f64)],
    n: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Vec<Vec<f64>> {
    use rand::seq::SliceRandom;
    use rand::Rng;
    let d = bounds.len();
    let strata: Vec<Vec<usize>> = (0..d)
        .map(|_| {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(rng);
            order
        })
        .collect();
    let mut points = Vec::with_capacity(n);
    for k in 0..n {
        let mut p = Vec::with_capacity(d);
        for (j, (lo, hi)) in bounds.iter().enumerate() {
            let cell = strata[j][k] as f64;
            let u: f64 = rng.random();
            p.push(lo + (hi - lo) * (cell + u) / n as f64);
        }
        points.push(p);
    }
    points
}
