//! Derivative-free minimization.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NelderMeadOptions {
    /// Iteration cap; `None` means `200 * dim`.
    pub max_iter: Option<usize>,
    /// Stop once the simplex fits in a box of this half-width around its
    /// best vertex.
    pub x_tol: f64,
    /// Stop once vertex objective values span less than this.
    pub f_tol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self { max_iter: None, x_tol: 1e-6, f_tol: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// Whether a tolerance was met before the iteration cap.
    pub converged: bool,
    /// Best vertex after each iteration, starting with the initial simplex.
    pub trace: Vec<TraceRow>,
}

impl OptimResult {
    /// Writes the trace as CSV: `iteration,objective,x0,x1,...`.
    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let dim = self.x.len();
        let mut header = vec!["iteration".to_string(), "objective".to_string()];
        header.extend((0..dim).map(|i| format!("x{i}")));
        wtr.write_record(&header)?;
        for row in &self.trace {
            let mut rec = vec![row.iteration.to_string(), row.objective.to_string()];
            rec.extend(row.x.iter().map(|v| v.to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// A minimizer over unconstrained real vectors. Non-finite objective values
/// are treated as rejections.
pub trait Minimizer {
    fn minimize(&self, f: &mut dyn FnMut(&[f64]) -> f64, x0: &[f64]) -> Result<OptimResult>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NelderMead {
    pub options: NelderMeadOptions,
}

impl Minimizer for NelderMead {
    fn minimize(&self, f: &mut dyn FnMut(&[f64]) -> f64, x0: &[f64]) -> Result<OptimResult> {
        nelder_mead(f, x0, &self.options)
    }
}

fn initial_simplex(x0: &[f64]) -> Vec<Vec<f64>> {
    let mut simplex = vec![x0.to_vec()];
    for i in 0..x0.len() {
        let mut v = x0.to_vec();
        v[i] = if x0[i] == 0.0 { 0.05 } else { 1.05 * x0[i] };
        simplex.push(v);
    }
    simplex
}

fn along(c: &[f64], from: &[f64], coef: f64) -> Vec<f64> {
    c.iter().zip(from).map(|(ci, fi)| ci + coef * (ci - fi)).collect()
}

/// Minimizes `f` with the standard Nelder-Mead simplex method (reflection 1,
/// expansion 2, contraction 0.5, shrink 0.5).
pub fn nelder_mead(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x0: &[f64],
    opts: &NelderMeadOptions,
) -> Result<OptimResult> {
    let dim = x0.len();
    if dim == 0 {
        return Err(Error::Config("cannot optimize over zero parameters".into()));
    }
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() { v } else { f64::INFINITY }
    };
    let f0 = eval(x0, &mut evals);
    if !f0.is_finite() {
        return Err(Error::NonFiniteStart);
    }
    let max_iter = opts.max_iter.unwrap_or(200 * dim);

    let mut simplex = initial_simplex(x0);
    let mut values: Vec<f64> = Vec::with_capacity(dim + 1);
    values.push(f0);
    for v in &simplex[1..] {
        values.push(eval(v, &mut evals));
    }

    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    loop {
        // stable sort keeps the earlier vertex first on ties
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        trace.push(TraceRow { iteration: iterations, objective: values[0], x: simplex[0].clone() });

        let spread = values[dim] - values[0];
        let diameter = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if (spread.is_finite() && spread < opts.f_tol) || diameter < opts.x_tol {
            converged = true;
            break;
        }
        if iterations >= max_iter {
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; dim];
        for v in &simplex[..dim] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / dim as f64;
            }
        }
        let worst = simplex[dim].clone();
        let fw = values[dim];
        let xr = along(&centroid, &worst, 1.0);
        let fr = eval(&xr, &mut evals);
        if fr < values[0] {
            let xe = along(&centroid, &worst, 2.0);
            let fe = eval(&xe, &mut evals);
            if fe < fr {
                simplex[dim] = xe;
                values[dim] = fe;
            } else {
                simplex[dim] = xr;
                values[dim] = fr;
            }
            continue;
        }
        if fr < values[dim - 1] {
            simplex[dim] = xr;
            values[dim] = fr;
            continue;
        }
        let (xc, fc, accept) = if fr < fw {
            let xc = along(&centroid, &worst, 0.5);
            let fc = eval(&xc, &mut evals);
            (xc, fc, fc <= fr)
        } else {
            let xc = along(&centroid, &worst, -0.5);
            let fc = eval(&xc, &mut evals);
            (xc, fc, fc < fw)
        };
        if accept {
            simplex[dim] = xc;
            values[dim] = fc;
            continue;
        }
        let best = simplex[0].clone();
        for i in 1..=dim {
            simplex[i] = best.iter().zip(&simplex[i]).map(|(b, x)| b + 0.5 * (x - b)).collect();
            values[i] = eval(&simplex[i], &mut evals);
        }
    }
    Ok(OptimResult {
        x: simplex[0].clone(),
        f: values[0],
        iterations,
        evaluations: evals,
        converged,
        trace,
    })
}
