use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{BackwardFault, ParamSet, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference half step.
    pub eps: f64,
    /// Check at most this many coordinates per parameter (seeded sample).
    pub max_coords_per_param: Option<usize>,
    pub seed: u64,
    /// Backward-rule corruption for negative controls.
    pub fault: Option<BackwardFault>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { eps: 1e-4, max_coords_per_param: None, seed: 0, fault: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub coords_checked: usize,
    pub max_rel_error: f64,
    pub worst_coord: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }

    pub fn max_rel_error(&self) -> f64 {
        self.worst().map_or(0.0, |p| p.max_rel_error)
    }
}

/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compares tape gradients of `forward` against central finite differences
/// for every parameter in `params`.
pub fn grad_check<Fw>(forward: Fw, params: &mut ParamSet<f64>, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    Fw: Fn(&mut Tape<f64>, &ParamSet<f64>) -> Result<Var>,
{
    let eval = |params: &ParamSet<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = forward(&mut tape, params)?;
        Ok(tape.item(loss))
    };
    let base = eval(params)?;
    let again = eval(params)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::Unreliable(format!(
            "forward function is not deterministic: {base} vs {again}"
        )));
    }

    let mut tape = match opts.fault {
        Some(f) => Tape::with_fault(f),
        None => Tape::new(),
    };
    let loss = forward(&mut tape, params)?;
    let grads = tape.backward(loss)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let ids: Vec<_> = params.ids().collect();
    let mut report = GradCheckReport::default();
    for id in ids {
        let numel = params.get(id).numel();
        let analytic: Vec<f64> = match tape.bound_var(id).and_then(|v| grads.wrt(v)) {
            Some(g) => g.to_vec(),
            None => vec![0.0; numel],
        };
        let coords: Vec<usize> = match opts.max_coords_per_param {
            Some(k) if k < numel => {
                let mut c = sample(&mut rng, numel, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..numel).collect(),
        };
        let mut check = ParamCheck {
            name: params.name(id).to_string(),
            coords_checked: coords.len(),
            max_rel_error: 0.0,
            worst_coord: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for c in coords {
            let orig = params.get(id).data()[c];
            params.get_mut(id).data_mut()[c] = orig + opts.eps;
            let plus = eval(params);
            params.get_mut(id).data_mut()[c] = orig - opts.eps;
            let minus = eval(params);
            params.get_mut(id).data_mut()[c] = orig;
            let numeric = (plus? - minus?) / (2.0 * opts.eps);
            let err = relative_error(analytic[c], numeric);
            if err > check.max_rel_error || check.max_rel_error.is_nan() {
                check.max_rel_error = err;
                check.worst_coord = c;
                check.analytic = analytic[c];
                check.numeric = numeric;
            }
        }
        report.params.push(check);
    }
    Ok(report)
}
