//! Gradient verification against central finite differences.
//!
//! The analytic side instantiates the shared backprop kernels at `f64`; the
//! finite-difference side perturbs an `f64` copy of the parameters and
//! re-evaluates the loss. Running both sides in 64-bit keeps floating-point
//! noise orders of magnitude below the tolerance, so the comparison actually
//! measures the correctness of the gradient formulas.

use super::{
    check_labels, forward_into, loss_and_grads_into, mean_ce_loss, new_activations, BatchScratch,
    Network, ParamSet,
};
use crate::error::{Error, Result};
use crate::rng::{self, Domain};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub pass: bool,
    pub max_rel_err: f64,
    pub coords_checked: usize,
    /// Flat parameter index with the largest relative error.
    pub worst_coord: usize,
}

/// Compares analytic gradients of `mean CE + weight_decay/2 * ||w||^2`
/// against central finite differences with the given step, on a random
/// subset of at least 50 coordinates (all coordinates for small networks).
///
/// Per-coordinate relative error uses `max(|analytic|, |fd|, tol)` as the
/// denominator; the `tol` floor keeps finite-difference noise on near-zero
/// gradients from dominating the ratio.
pub fn grad_check(
    net: &Network,
    features: &[f32],
    labels: &[usize],
    weight_decay: f32,
    step: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    if !(step > 0.0) {
        return Err(Error::invalid("grad_check step must be > 0"));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("grad_check tol must be > 0"));
    }
    if features.len() % net.arch().input != 0 {
        return Err(Error::ShapeMismatch(format!(
            "batch of {} values is not a multiple of input dim {}",
            features.len(),
            net.arch().input
        )));
    }
    let rows = features.len() / net.arch().input;
    if rows == 0 {
        return Err(Error::invalid("grad_check needs a nonempty batch"));
    }
    check_labels(labels, rows, net.arch().classes)?;

    let mut params = net.params().to_f64();
    let x64: Vec<f64> = features.iter().map(|&v| v as f64).collect();
    let wd = weight_decay as f64;

    let mut scratch = BatchScratch::for_params(&params);
    loss_and_grads_into(&params, &x64, rows, labels, wd, &mut scratch);
    let analytic: Vec<f64> = scratch.grads.flat_iter().collect();

    let coords = pick_coords(analytic.len(), 64.max(50));
    let (max_rel_err, worst_coord) = fd_max_rel_err(
        &analytic, &mut params, &x64, rows, labels, wd, step, tol, &coords,
    );
    Ok(GradCheckReport {
        pass: max_rel_err < tol,
        max_rel_err,
        coords_checked: coords.len(),
        worst_coord,
    })
}

fn pick_coords(total: usize, want: usize) -> Vec<usize> {
    if total <= want {
        return (0..total).collect();
    }
    let mut rng = rng::stream(0x6772_6463, Domain::Aux, total as u64);
    let mut coords = rand::seq::index::sample(&mut rng, total, want).into_vec();
    coords.sort_unstable();
    coords
}

/// Central-difference comparison for the given flat coordinates. Exposed for
/// tests so a deliberately corrupted gradient can be shown to fail.
pub(crate) fn fd_max_rel_err(
    analytic: &[f64],
    params: &mut ParamSet<f64>,
    x: &[f64],
    rows: usize,
    labels: &[usize],
    weight_decay: f64,
    step: f64,
    floor: f64,
    coords: &[usize],
) -> (f64, usize) {
    let mut max_rel = 0.0f64;
    let mut worst = 0usize;
    for &i in coords {
        let orig = params.get_flat(i);
        params.set_flat(i, orig + step);
        let plus = loss_only(params, x, rows, labels, weight_decay);
        params.set_flat(i, orig - step);
        let minus = loss_only(params, x, rows, labels, weight_decay);
        params.set_flat(i, orig);
        let fd = (plus - minus) / (2.0 * step);
        let g = analytic[i];
        let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(floor);
        if rel > max_rel {
            max_rel = rel;
            worst = i;
        }
    }
    (max_rel, worst)
}

fn loss_only(params: &ParamSet<f64>, x: &[f64], rows: usize, labels: &[usize], wd: f64) -> f64 {
    let mut acts = new_activations(params, rows);
    forward_into(params, x, rows, &mut acts);
    let classes = params.layers.last().expect("nonempty").out_dim;
    mean_ce_loss(acts.last().expect("nonempty"), rows, classes, labels)
        + 0.5 * wd * params.sq_norm_f64()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Architecture;
    use rand::Rng;

    fn random_case(seed: u64) -> (Network, Vec<f32>, Vec<usize>) {
        let arch = Architecture {
            input: 7,
            hidden: vec![6, 5],
            classes: 4,
        };
        let net = Network::seeded(arch, seed).unwrap();
        let mut rng = rng::stream(seed, Domain::Aux, 1);
        let rows = 9;
        let x: Vec<f32> = (0..rows * 7).map(|_| rng.random_range(-1.5..1.5)).collect();
        let y: Vec<usize> = (0..rows).map(|_| rng.random_range(0..4)).collect();
        (net, x, y)
    }

    #[test]
    fn correct_gradients_pass() {
        let (net, x, y) = random_case(11);
        let report = grad_check(&net, &x, &y, 1e-4, 1e-4, 1e-4).unwrap();
        assert!(
            report.pass,
            "max rel err {} at coord {}",
            report.max_rel_err, report.worst_coord
        );
        assert!(report.coords_checked >= 50);
    }

    #[test]
    fn corrupted_gradient_fails() {
        let (net, x, y) = random_case(12);
        let mut params = net.params().to_f64();
        let x64: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let mut scratch = BatchScratch::for_params(&params);
        loss_and_grads_into(&params, &x64, x64.len() / 7, &y, 1e-4, &mut scratch);
        let mut analytic: Vec<f64> = scratch.grads.flat_iter().collect();
        // Double the largest-magnitude coordinate.
        let (worst, _) = analytic
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap();
        analytic[worst] *= 2.0;
        let coords: Vec<usize> = (0..analytic.len()).collect();
        let (max_rel, at) = fd_max_rel_err(
            &analytic,
            &mut params,
            &x64,
            x64.len() / 7,
            &y,
            1e-4,
            1e-4,
            1e-4,
            &coords,
        );
        assert!(max_rel > 1e-4, "corruption not detected: {max_rel}");
        assert_eq!(at, worst);
    }

    #[test]
    fn debug_seed12_coord78() {
        let (net, x, y) = random_case(12);
        let mut params = net.params().to_f64();
        let x64: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let mut scratch = BatchScratch::for_params(&params);
        loss_and_grads_into(&params, &x64, x64.len() / 7, &y, 1e-4, &mut scratch);
        let analytic: Vec<f64> = scratch.grads.flat_iter().collect();
        let coords: Vec<usize> = (0..analytic.len()).collect();
        let (max_rel, at) = fd_max_rel_err(
            &analytic, &mut params, &x64, x64.len() / 7, &y, 1e-4, 1e-4, 1e-4, &coords,
        );
        eprintln!("uncorrupted: max_rel={max_rel} at coord {at}, analytic[{at}]={}", analytic[at]);
        // fd at that coord
        let orig = params.get_flat(at);
        params.set_flat(at, orig + 1e-4);
        let plus = loss_only(&params, &x64, x64.len() / 7, &y, 1e-4);
        params.set_flat(at, orig - 1e-4);
        let minus = loss_only(&params, &x64, x64.len() / 7, &y, 1e-4);
        params.set_flat(at, orig);
        eprintln!("fd={} (plus={plus}, minus={minus})", (plus - minus) / 2e-4);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let (net, _, _) = random_case(13);
        let err = grad_check(&net, &[], &[], 0.0, 1e-4, 1e-4).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn nonpositive_step_is_rejected() {
        let (net, x, y) = random_case(14);
        assert!(grad_check(&net, &x, &y, 0.0, 0.0, 1e-4).is_err());
        assert!(grad_check(&net, &x, &y, 0.0, -1e-4, 1e-4).is_err());
    }

    #[test]
    fn f32_and_f64_gradients_agree_loosely() {
        // Binds the production f32 instantiation to the f64 one the oracle
        // checks: a divergence between the two would slip past grad_check.
        let (net, x, y) = random_case(15);
        let (_, grads32) = net.loss_and_grads(&x, &y, 1e-4).unwrap();
        let mut params = net.params().to_f64();
        let x64: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let mut scratch = BatchScratch::for_params(&params);
        loss_and_grads_into(&params, &x64, x64.len() / 7, &y, 1e-4, &mut scratch);
        let g64: Vec<f64> = scratch.grads.flat_iter().collect();
        for (a, b) in grads32.flat().iter().zip(&g64) {
            let diff = (*a as f64 - b).abs();
            assert!(
                diff <= 1e-4 + 1e-3 * b.abs(),
                "f32 grad {a} vs f64 grad {b}"
            );
        }
    }
}
