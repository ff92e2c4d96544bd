//! Derivative-free local minimization (Nelder-Mead with standard coefficients).

pub(crate) struct NelderMead {
    pub max_evals: usize,
    pub f_tol: f64,
    pub initial_step: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        Self { max_evals: 4000, f_tol: 1e-14, initial_step: 0.1 }
    }
}

impl NelderMead {
    /// Returns the best vertex and its value. Non-finite objective values are
    /// treated as `+inf`, so infeasible regions simply repel the simplex.
    pub fn minimize(&self, f: impl Fn(&[f64]) -> f64, x0: &[f64]) -> (Vec<f64>, f64) {
        let eval = |x: &[f64]| {
            let v = f(x);
            if v.is_finite() {
                v
            } else {
                f64::INFINITY
            }
        };
        let n = x0.len();
        if n == 0 {
            return (Vec::new(), eval(x0));
        }
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        simplex.push((x0.to_vec(), eval(x0)));
        for i in 0..n {
            let mut x = x0.to_vec();
            x[i] += self.initial_step * (1.0 + x[i].abs());
            let v = eval(&x);
            simplex.push((x, v));
        }
        let mut evals = n + 1;
        while evals < self.max_evals {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let best = simplex[0].1;
            let worst = simplex[n].1;
            if best.is_finite() && (worst - best).abs() <= self.f_tol * (1.0 + best.abs()) {
                break;
            }
            let centroid: Vec<f64> =
                (0..n).map(|k| simplex[..n].iter().map(|(x, _)| x[k]).sum::<f64>() / n as f64).collect();
            let toward =
                |t: f64| -> Vec<f64> { centroid.iter().zip(&simplex[n].0).map(|(c, w)| c + t * (w - c)).collect() };
            let xr = toward(-1.0);
            let fr = eval(&xr);
            evals += 1;
            if fr < simplex[0].1 {
                let xe = toward(-2.0);
                let fe = eval(&xe);
                evals += 1;
                simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else if fr < simplex[n - 1].1 {
                simplex[n] = (xr, fr);
            } else {
                let (xc, fc) = if fr < simplex[n].1 {
                    let xc = toward(-0.5);
                    let fc = eval(&xc);
                    (xc, fc)
                } else {
                    let xc = toward(0.5);
                    let fc = eval(&xc);
                    (xc, fc)
                };
                evals += 1;
                if fc < simplex[n].1.min(fr) {
                    simplex[n] = (xc, fc);
                } else {
                    let x_best = simplex[0].0.clone();
                    for vertex in simplex.iter_mut().skip(1) {
                        let x: Vec<f64> = x_best.iter().zip(&vertex.0).map(|(b, v)| b + 0.5 * (v - b)).collect();
                        let v = eval(&x);
                        *vertex = (x, v);
                    }
                    evals += n;
                }
            }
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        simplex.swap_remove(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_rosenbrock_minimum() {
        let nm = NelderMead { max_evals: 20_000, f_tol: 1e-20, initial_step: 0.5 };
        let (x, v) = nm.minimize(|x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2), &[-1.2, 1.0]);
        assert!(v < 1e-12, "{v}");
        assert!((x[0] - 1.0).abs() < 1e-5 && (x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn one_dimensional_hyperbola_curvature() {
        let (x, v) = NelderMead::default().minimize(|x| x[0] * x[0] + 1.0 / (x[0] * x[0]), &[3.0]);
        assert!((v - 2.0).abs() < 1e-12);
        assert!((x[0].abs() - 1.0).abs() < 1e-5);
    }
}
