//! Nelder–Mead simplex minimizer used by every fit in the crate.
//!
//! Constraints are handled by the callers through reparameterization, so the
//! minimizer itself is unconstrained. Non-finite objective values are treated
//! as `+inf`.

#[derive(Debug, Clone)]
pub struct NelderMead {
    pub max_iter: usize,
    /// Converged when the best value improved by less than `stall_tol` over
    /// the last `stall_window` iterations.
    pub stall_window: usize,
    pub stall_tol: f64,
    /// Converged when the simplex spread in `f` and `x` both fall below these.
    pub f_tol: f64,
    pub x_tol: f64,
    /// Stop as converged once the best value drops to this level.
    pub f_target: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        NelderMead {
            max_iter: 5_000,
            stall_window: 200,
            stall_tol: 1e-9,
            f_tol: 1e-14,
            x_tol: 1e-10,
            f_target: f64::NEG_INFINITY,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

impl NelderMead {
    pub fn minimize<F>(&self, mut f: F, x0: &[f64], step: &[f64]) -> Minimum
    where
        F: FnMut(&[f64]) -> f64,
    {
        let n = x0.len();
        assert_eq!(step.len(), n);
        let mut evals = 0usize;
        let mut eval = |x: &[f64]| {
            evals += 1;
            let v = f(x);
            if v.is_nan() {
                f64::INFINITY
            } else {
                v
            }
        };

        let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        simplex.push(x0.to_vec());
        for i in 0..n {
            let mut p = x0.to_vec();
            p[i] += if step[i] != 0.0 { step[i] } else { 1e-3 };
            simplex.push(p);
        }
        let mut values: Vec<f64> = simplex.iter().map(|p| eval(p)).collect();

        let mut history: Vec<f64> = Vec::with_capacity(self.max_iter + 1);
        let mut converged = false;
        let mut iter = 0;
        while iter < self.max_iter {
            order(&mut simplex, &mut values);
            history.push(values[0]);
            if values[0] <= self.f_target {
                converged = true;
                break;
            }
            if history.len() > self.stall_window {
                let then = history[history.len() - 1 - self.stall_window];
                if then - values[0] < self.stall_tol {
                    converged = true;
                    break;
                }
            }
            let spread_f = values[n] - values[0];
            let spread_x = simplex[1..]
                .iter()
                .flat_map(|p| p.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
                .fold(0.0, f64::max);
            if spread_f <= self.f_tol * (values[0].abs() + 1e-300) && spread_x <= self.x_tol {
                converged = true;
                break;
            }
            iter += 1;

            let centroid: Vec<f64> = (0..n)
                .map(|j| simplex[..n].iter().map(|p| p[j]).sum::<f64>() / n as f64)
                .collect();
            let along = |t: f64| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(&simplex[n])
                    .map(|(c, w)| c + t * (w - c))
                    .collect()
            };

            let xr = along(-1.0);
            let fr = eval(&xr);
            if fr < values[0] {
                let xe = along(-2.0);
                let fe = eval(&xe);
                if fe < fr {
                    simplex[n] = xe;
                    values[n] = fe;
                } else {
                    simplex[n] = xr;
                    values[n] = fr;
                }
                continue;
            }
            if fr < values[n - 1] {
                simplex[n] = xr;
                values[n] = fr;
                continue;
            }
            let (xc, fc) = if fr < values[n] {
                let xc = along(-0.5);
                let fc = eval(&xc);
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = eval(&xc);
                (xc, fc)
            };
            if fc < values[n].min(fr) {
                simplex[n] = xc;
                values[n] = fc;
                continue;
            }
            // shrink toward the best vertex
            let best = simplex[0].clone();
            for i in 1..=n {
                for j in 0..n {
                    simplex[i][j] = best[j] + 0.5 * (simplex[i][j] - best[j]);
                }
                values[i] = eval(&simplex[i]);
            }
        }
        order(&mut simplex, &mut values);
        Minimum {
            x: simplex.swap_remove(0),
            f: values[0],
            iterations: iter,
            evaluations: evals,
            converged,
        }
    }

    /// Runs from each start in turn, then polishes from the overall best.
    pub fn minimize_restarts<F>(&self, mut f: F, starts: &[Vec<f64>], step: &[f64]) -> Minimum
    where
        F: FnMut(&[f64]) -> f64,
    {
        assert!(!starts.is_empty());
        let mut best: Option<Minimum> = None;
        let mut any_converged = false;
        let mut iterations = 0;
        let mut evaluations = 0;
        for s in starts {
            let m = self.minimize(&mut f, s, step);
            any_converged |= m.converged;
            iterations += m.iterations;
            evaluations += m.evaluations;
            if best.as_ref().is_none_or(|b| m.f < b.f) {
                best = Some(m);
            }
        }
        let best = best.expect("at least one start");
        let polish = self.minimize(&mut f, &best.x, &step.iter().map(|s| 0.1 * s).collect::<Vec<_>>());
        iterations += polish.iterations;
        evaluations += polish.evaluations;
        let mut out = if polish.f <= best.f { polish } else { best };
        out.converged |= any_converged;
        out.iterations = iterations;
        out.evaluations = evaluations;
        out
    }
}

fn order(simplex: &mut [Vec<f64>], values: &mut [f64]) {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let s: Vec<Vec<f64>> = idx.iter().map(|&i| simplex[i].clone()).collect();
    let v: Vec<f64> = idx.iter().map(|&i| values[i]).collect();
    simplex.clone_from_slice(&s);
    values.copy_from_slice(&v);
}
