//! Central finite-difference checking of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

#[derive(Debug, Clone)]
pub struct GradcheckConfig {
    /// Finite-difference step.
    pub step: f64,
    pub rel_tol: f64,
    /// Errors are measured relative to `max(|analytic|, |numeric|, floor)`
    /// where `floor = floor_frac * max |numeric|` over all checked elements.
    pub floor_frac: f64,
    /// Check at most this many elements per input (sampled with `seed`).
    pub max_per_input: Option<usize>,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            step: 1e-5,
            rel_tol: 1e-6,
            floor_frac: 1e-3,
            max_per_input: None,
            seed: 0,
        }
    }
}

impl GradcheckConfig {
    pub fn with_tol(rel_tol: f64) -> Self {
        GradcheckConfig {
            rel_tol,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// `(input index, flat element)` of the worst relative error.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub rel_tol: f64,
    pub passed: bool,
}

/// Compares the analytic gradient of the scalar produced by `f` against
/// central differences, for every element of every input (or a sample).
///
/// `f` must build its graph from the given leaves only and be deterministic.
pub fn gradcheck<F>(f: F, inputs: &[Tensor<f64>], cfg: &GradcheckConfig) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        scalar_of(&tape, out)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    scalar_of(&tape, out)?;
    tape.backward(out)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pairs = Vec::new();
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (ii, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let analytic = tape.grad(vars[ii]).map(<[f64]>::to_vec).unwrap_or(vec![0.0; n]);
        let elems: Vec<usize> = match cfg.max_per_input {
            Some(m) if m < n => {
                let mut e = sample(&mut rng, n, m).into_vec();
                e.sort_unstable();
                e
            }
            _ => (0..n).collect(),
        };
        for e in elems {
            let orig = input.data()[e];
            work[ii].data_mut()[e] = orig + cfg.step;
            let plus = eval(&work)?;
            work[ii].data_mut()[e] = orig - cfg.step;
            let minus = eval(&work)?;
            work[ii].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            if !numeric.is_finite() {
                return Err(Error::Numeric {
                    op: "gradcheck",
                    detail: format!("non-finite difference quotient at input {ii} element {e}"),
                });
            }
            pairs.push((ii, e, analytic[e], numeric));
        }
    }

    let scale = pairs.iter().map(|p| p.3.abs()).fold(0.0, f64::max);
    let floor = (cfg.floor_frac * scale).max(f64::MIN_POSITIVE);
    let mut report = GradcheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst: None,
        checked: pairs.len(),
        rel_tol: cfg.rel_tol,
        passed: true,
    };
    for (ii, e, a, n) in pairs {
        let abs = (a - n).abs();
        let rel = abs / a.abs().max(n.abs()).max(floor);
        report.max_abs_err = report.max_abs_err.max(abs);
        if rel > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = rel;
            report.worst = Some((ii, e));
        }
    }
    report.passed = report.max_rel_err <= cfg.rel_tol;
    Ok(report)
}

fn scalar_of(tape: &Tape<f64>, v: Var) -> Result<f64> {
    let t = tape.value(v);
    if t.numel() != 1 {
        return Err(Error::contract(format!(
            "gradcheck needs a scalar output, got shape {:?}",
            t.shape()
        )));
    }
    let x = t.item();
    if !x.is_finite() {
        return Err(Error::Numeric {
            op: "gradcheck",
            detail: "non-finite output".into(),
        });
    }
    Ok(x)
}
