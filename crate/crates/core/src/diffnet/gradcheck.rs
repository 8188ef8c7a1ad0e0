use rand::Rng as _;

use super::ParamStore;
use crate::rng::rng;

pub const FD_STEP: f64 = 1e-5;

/// Compares the gradients already stored in `params` against central finite
/// differences of `f` on a random subsample of coordinates. Returns the max
/// of `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn grad_check(params: &ParamStore, f: impl Fn(&ParamStore) -> f64, samples: usize, seed: u64) -> f64 {
    let coords: Vec<(String, usize)> = params
        .iter()
        .flat_map(|(k, p)| (0..p.value.len()).map(move |i| (k.clone(), i)))
        .collect();
    let mut r = rng(seed);
    let picks: Vec<usize> = if coords.len() <= samples {
        (0..coords.len()).collect()
    } else {
        (0..samples).map(|_| r.random_range(0..coords.len())).collect()
    };
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for idx in picks {
        let (path, i) = &coords[idx];
        let analytic = params.param(path).grad.data()[*i];
        let orig = params.get(path).data()[*i];
        probe.param_mut(path).value.data_mut()[*i] = orig + FD_STEP;
        let up = f(&probe);
        probe.param_mut(path).value.data_mut()[*i] = orig - FD_STEP;
        let down = f(&probe);
        probe.param_mut(path).value.data_mut()[*i] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let err = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::Tensor;

    #[test]
    fn exact_for_linear_functions() {
        let mut s = ParamStore::new();
        s.insert("a", Tensor::new(&[3], vec![0.2, -1.0, 4.0]).unwrap());
        let coef = [1.5, -2.0, 0.25];
        s.param_mut("a").grad.data_mut().copy_from_slice(&coef);
        let f = |p: &ParamStore| p.get("a").data().iter().zip(coef).map(|(x, c)| x * c).sum();
        assert!(grad_check(&s, f, 100, 0) < 1e-9);
    }

    #[test]
    fn detects_a_corrupted_gradient() {
        let mut s = ParamStore::new();
        s.insert("a", Tensor::new(&[2], vec![0.5, 1.0]).unwrap());
        // true gradient of x^2 is 2x; report 3x instead
        s.param_mut("a").grad.data_mut().copy_from_slice(&[1.5, 3.0]);
        let f = |p: &ParamStore| p.get("a").data().iter().map(|x| x * x).sum();
        assert!(grad_check(&s, f, 100, 0) > 1e-2);
    }
}
