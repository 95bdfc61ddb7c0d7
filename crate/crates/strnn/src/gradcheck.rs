//! Central finite-difference gradient verification.
//!
//! Used by the test suites to validate the tape against an independent
//! numerical estimate. The loss callback is re-evaluated with single
//! elements perturbed by ±step, so it must be a deterministic function of
//! the parameter set (dropout off, batch norm statistics unaffected by the
//! perturbation or recomputed from scratch).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::Result;
use crate::graph::Gradients;
use crate::params::{ParamId, ParamSet};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Relative error with a floor so that near-zero pairs compare absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-2)
}

/// Compare analytic gradients against central finite differences.
///
/// At most `samples_per_tensor` elements of each listed parameter are
/// perturbed (all of them when the tensor is small), chosen by the seeded rng
/// so runs are reproducible.
pub fn finite_diff_check(
    params: &mut ParamSet,
    ids: &[ParamId],
    analytic: &Gradients,
    mut eval_loss: impl FnMut(&ParamSet) -> Result<f64>,
    step: f64,
    samples_per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut report = GradCheckReport { checked: 0, max_rel_err: 0.0, worst: String::new() };
    for &id in ids {
        let n = params.get(id).len();
        let mut elems: Vec<usize> = (0..n).collect();
        if n > samples_per_tensor {
            elems.shuffle(&mut rng);
            elems.truncate(samples_per_tensor);
        }
        let ga = analytic.get(id, params);
        for e in elems {
            let original = params.get(id).data()[e];
            params.get_mut(id).data_mut()[e] = original + step;
            let plus = eval_loss(params)?;
            params.get_mut(id).data_mut()[e] = original - step;
            let minus = eval_loss(params)?;
            params.get_mut(id).data_mut()[e] = original;
            let fd = (plus - minus) / (2.0 * step);
            let an = ga.data()[e];
            let err = rel_err(an, fd);
            report.checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = format!(
                    "{}[{}]: analytic {an:.6e} vs fd {fd:.6e}",
                    params.name(id),
                    e
                );
            }
        }
    }
    Ok(report)
}
