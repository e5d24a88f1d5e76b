//! Derivative-free minimization and nonlinear least squares used by the
//! fitting routines.

/// Result of a scalar minimization.
#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Stop when the simplex spread in function value falls below this.
    pub ftol: f64,
    /// Stop when every vertex is within this distance of the best one.
    pub xtol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_evals: 2000,
            ftol: 1e-12,
            xtol: 1e-10,
        }
    }
}

/// Nelder–Mead simplex with the standard coefficients (1, 2, 1/2, 1/2).
/// `step[i]` sets the initial simplex extent along coordinate `i`.
pub fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    step: &[f64],
    opts: NelderMeadOptions,
) -> Minimum {
    let n = x0.len();
    assert_eq!(step.len(), n);
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let v0 = eval(x0, &mut evals);
    simplex.push((x0.to_vec(), v0));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step[i];
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }

    let mut converged = false;
    while evals < opts.max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let spread = simplex
            .iter()
            .skip(1)
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread <= opts.xtol || (worst - best).abs() <= opts.ftol * (1.0 + best.abs()) {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };

        let xr = along(-1.0);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = eval(&xe, &mut evals);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[n].1 {
                let xc = along(-0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let x_best = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = vertex
                        .0
                        .iter()
                        .zip(&x_best)
                        .map(|(v, b)| b + 0.5 * (v - b))
                        .collect();
                    let v = eval(&x, &mut evals);
                    *vertex = (x, v);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    Minimum {
        x,
        value,
        evals,
        converged,
    }
}

/// Result of a least-squares fit.
#[derive(Clone, Debug)]
pub struct LeastSquaresFit {
    pub params: Vec<f64>,
    /// Sum of squared residuals.
    pub sse: f64,
    /// One-sigma parameter uncertainties from `s² (JᵀJ)⁻¹`; `NaN` when the
    /// normal matrix is singular or there are no spare degrees of freedom.
    pub std_errors: Vec<f64>,
    pub iterations: usize,
}

/// Levenberg–Marquardt with a central-difference Jacobian.
pub fn levenberg_marquardt(
    residuals: impl Fn(&[f64]) -> Vec<f64>,
    p0: &[f64],
    max_iter: usize,
) -> LeastSquaresFit {
    let n = p0.len();
    let mut p = p0.to_vec();
    let mut r = residuals(&p);
    let m = r.len();
    let sse = |r: &[f64]| r.iter().map(|x| x * x).sum::<f64>();
    let mut cost = sse(&r);
    let mut lambda = 1e-3;
    let mut iterations = 0;

    let jacobian = |p: &[f64]| -> Vec<Vec<f64>> {
        (0..n)
            .map(|j| {
                let h = 1e-7 * p[j].abs().max(1e-6);
                let mut up = p.to_vec();
                let mut dn = p.to_vec();
                up[j] += h;
                dn[j] -= h;
                let (ru, rd) = (residuals(&up), residuals(&dn));
                ru.iter().zip(&rd).map(|(a, b)| (a - b) / (2.0 * h)).collect()
            })
            .collect()
    };

    for _ in 0..max_iter {
        iterations += 1;
        let jac = jacobian(&p);
        let mut jtj = vec![vec![0.0; n]; n];
        let mut jtr = vec![0.0; n];
        for a in 0..n {
            for b in 0..n {
                jtj[a][b] = (0..m).map(|k| jac[a][k] * jac[b][k]).sum();
            }
            jtr[a] = (0..m).map(|k| jac[a][k] * r[k]).sum();
        }
        let mut improved = false;
        for _ in 0..40 {
            let mut lhs = jtj.clone();
            for (a, row) in lhs.iter_mut().enumerate() {
                row[a] += lambda * jtj[a][a].max(1e-30);
            }
            let Some(delta) = solve(lhs, jtr.iter().map(|x| -x).collect()) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(&delta).map(|(a, d)| a + d).collect();
            let rt = residuals(&trial);
            let ct = sse(&rt);
            if ct.is_finite() && ct < cost {
                let rel = (cost - ct) / cost.max(1e-300);
                p = trial;
                r = rt;
                cost = ct;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                if rel < 1e-14 {
                    improved = false;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved || cost == 0.0 {
            break;
        }
    }

    let jac = jacobian(&p);
    let mut jtj = vec![vec![0.0; n]; n];
    for a in 0..n {
        for b in 0..n {
            jtj[a][b] = (0..m).map(|k| jac[a][k] * jac[b][k]).sum();
        }
    }
    let dof = m.saturating_sub(n);
    let std_errors = match (invert(jtj), dof) {
        (Some(inv), d) if d > 0 => {
            let s2 = cost / d as f64;
            (0..n).map(|a| (s2 * inv[a][a]).max(0.0).sqrt()).collect()
        }
        _ => vec![f64::NAN; n],
    };
    LeastSquaresFit {
        params: p,
        sse: cost,
        std_errors,
        iterations,
    }
}

/// Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in (col + 1)..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = ((row + 1)..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn invert(a: Vec<Vec<f64>>) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        cols.push(solve(a.clone(), e)?);
    }
    Some((0..n).map(|i| (0..n).map(|j| cols[j][i]).collect()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nelder_mead_rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = nelder_mead(
            f,
            &[-1.2, 1.0],
            &[0.5, 0.5],
            NelderMeadOptions {
                max_evals: 5000,
                ftol: 1e-16,
                xtol: 1e-9,
            },
        );
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4, "{m:?}");
    }

    #[test]
    fn lm_recovers_exponential() {
        let ts: Vec<f64> = (0..30).map(|k| k as f64 * 0.2).collect();
        let data: Vec<f64> = ts.iter().map(|t| 2.0 * (-0.7 * t).exp() + 0.1).collect();
        let fit = levenberg_marquardt(
            |p| ts.iter().zip(&data).map(|(t, y)| p[0] * (-p[1] * t).exp() + p[2] - y).collect(),
            &[1.0, 0.3, 0.0],
            200,
        );
        assert!((fit.params[0] - 2.0).abs() < 1e-8);
        assert!((fit.params[1] - 0.7).abs() < 1e-8);
        assert!((fit.params[2] - 0.1).abs() < 1e-8);
    }

    #[test]
    fn solve_singular() {
        assert!(solve(vec![vec![1.0, 2.0], vec![2.0, 4.0]], vec![1.0, 1.0]).is_none());
        let x = solve(vec![vec![2.0, 1.0], vec![1.0, 3.0]], vec![3.0, 5.0]).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-12 && (x[1] - 1.4).abs() < 1e-12);
    }
}
