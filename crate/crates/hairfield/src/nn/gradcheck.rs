//! Finite-difference verification of tape gradients (f64, central differences).

use crate::err::Result;
use crate::nn::params::ParamStore;
use crate::nn::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use std::collections::HashMap;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: String,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tol
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "grad_check: {} entries, max rel err {:.3e} (tol {:.1e}) worst at {} -> {}",
            self.checked,
            self.max_rel_err,
            self.tol,
            self.worst,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

/// Compare analytic gradients against central finite differences on a random
/// subset of parameter entries (at least one entry per parameter tensor).
///
/// `loss_fn` must be a pure function of the store; it returns the scalar loss
/// and, when asked, the analytic gradients from a tape backward pass.
pub fn grad_check<F>(
    params: &mut ParamStore<f64>,
    mut loss_fn: F,
    fraction: f64,
    h: f64,
    tol: f64,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore<f64>, bool) -> Result<(f64, Option<HashMap<usize, Tensor<f64>>>)>,
{
    let (_, grads) = loss_fn(params, true)?;
    let grads = grads.expect("loss_fn must return gradients when requested");

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel = 0.0f64;
    let mut worst = String::from("-");
    let mut checked = 0usize;

    let n_params = params.len();
    for pid in 0..n_params {
        let len = params.tensor(pid).len();
        if len == 0 {
            continue;
        }
        let want = ((len as f64 * fraction).ceil() as usize).clamp(1, len);
        let mut picks: Vec<usize> = (0..want).map(|_| rng.gen_range(0..len)).collect();
        picks.sort_unstable();
        picks.dedup();
        for i in picks {
            let orig = params.tensor(pid).data()[i];
            params.tensor_mut(pid).data_mut()[i] = orig + h;
            let (lp, _) = loss_fn(params, false)?;
            params.tensor_mut(pid).data_mut()[i] = orig - h;
            let (lm, _) = loss_fn(params, false)?;
            params.tensor_mut(pid).data_mut()[i] = orig;

            let fd = (lp - lm) / (2.0 * h);
            let ad = grads.get(&pid).map(|g| g.data()[i]).unwrap_or(0.0);
            let denom = fd.abs().max(ad.abs()).max(1e-8);
            let rel = (fd - ad).abs() / denom;
            checked += 1;
            if rel > max_rel {
                max_rel = rel;
                worst = format!("{}[{}] fd={:.6e} ad={:.6e}", params.name(pid), i, fd, ad);
            }
        }
    }

    Ok(GradCheckReport {
        checked,
        max_rel_err: max_rel,
        worst,
        tol,
    })
}
