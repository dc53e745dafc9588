//! Central finite-difference oracle for tape gradients.

use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Scalar, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tol: f64,
    /// Coordinates checked per input; inputs with fewer entries are checked in full.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-3,
            tol: 1e-2,
            max_coords: 32,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct InputReport {
    pub name: String,
    pub checked: usize,
    pub worst_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub inputs: Vec<InputReport>,
    pub tol: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&InputReport> {
        self.inputs
            .iter()
            .max_by(|a, b| a.worst_rel_error.total_cmp(&b.worst_rel_error))
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.inputs {
            writeln!(
                f,
                "{:<28} coords={:<4} worst_rel={:.3e} at [{}] analytic={:+.6e} numeric={:+.6e} {}",
                r.name,
                r.checked,
                r.worst_rel_error,
                r.worst_index,
                r.analytic,
                r.numeric,
                if r.worst_rel_error < self.tol { "ok" } else { "FAIL" }
            )?;
        }
        if let Some(w) = self.worst() {
            write!(
                f,
                "worst offender: {} ({:.3e}, tol {:.1e}) -> {}",
                w.name,
                w.worst_rel_error,
                self.tol,
                if self.passed { "PASS" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the tape gradient of scalar `f` against central differences
/// `(f(x+h) − f(x−h)) / 2h` on a seeded subset of coordinates of every input.
pub fn grad_check<T, F>(f: F, inputs: &[(String, Tensor<T>)], cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<T>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars = values
            .iter()
            .map(|t| g.constant(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = f(&mut g, &vars)?;
        let v = g.value(out);
        if v.len() != 1 {
            return Err(Error::NotScalar(v.shape().to_vec()));
        }
        Ok(v.data()[0].as_f64())
    };

    let mut values: Vec<Tensor<T>> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let base = eval(&values)?;
    let again = eval(&values)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::NonDeterministic(format!(
            "re-evaluation gave {again:e} after {base:e}"
        )));
    }

    let analytic: Vec<Tensor<T>> = {
        let mut g = Graph::new();
        let vars = values
            .iter()
            .map(|t| g.param(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = f(&mut g, &vars)?;
        g.backward(out)?;
        vars.iter()
            .zip(&values)
            .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect()
    };

    let h = T::lit(cfg.step);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut reports = Vec::with_capacity(inputs.len());
    for (i, (name, _)) in inputs.iter().enumerate() {
        let n = values[i].len();
        let coords: Vec<usize> = if n <= cfg.max_coords {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, cfg.max_coords).into_vec();
            c.sort_unstable();
            c
        };
        let mut report = InputReport {
            name: name.clone(),
            checked: coords.len(),
            worst_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for &c in &coords {
            let orig = values[i].data()[c];
            values[i].data_mut()[c] = orig + h;
            let plus = eval(&values)?;
            values[i].data_mut()[c] = orig - h;
            let minus = eval(&values)?;
            values[i].data_mut()[c] = orig;
            let step = ((orig + h) - (orig - h)).as_f64();
            let numeric = (plus - minus) / step;
            let a = analytic[i].data()[c].as_f64();
            let err = relative_error(a, numeric);
            if err >= report.worst_rel_error {
                report.worst_rel_error = err;
                report.worst_index = c;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
        reports.push(report);
    }
    let passed = reports.iter().all(|r| r.worst_rel_error < cfg.tol);
    Ok(GradCheckReport {
        inputs: reports,
        tol: cfg.tol,
        passed,
    })
}
