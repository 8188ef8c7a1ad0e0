use super::Tensor;
use crate::error::Result;

pub const BCE_CLAMP: f64 = 1e-7;

/// `0.5 * sum_k (mu^2 + exp(logvar) - logvar - 1)`, averaged over the batch.
pub fn kl_gaussian(mu: &Tensor, logvar: &Tensor) -> Result<f64> {
    mu.expect_shape(logvar.shape())?;
    let batch = mu.shape()[0] as f64;
    let total: f64 = mu
        .data()
        .iter()
        .zip(logvar.data())
        .map(|(m, lv)| m * m + lv.exp() - lv - 1.0)
        .sum();
    Ok(0.5 * total / batch)
}

/// Returns `(dmu, dlogvar)` for [`kl_gaussian`].
pub fn kl_gaussian_backward(mu: &Tensor, logvar: &Tensor) -> (Tensor, Tensor) {
    let batch = mu.shape()[0] as f64;
    (
        mu.map(|m| m / batch),
        logvar.map(|lv| 0.5 * (lv.exp() - 1.0) / batch),
    )
}

/// Mean binary cross-entropy with predictions clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce(pred: &Tensor, target: &Tensor) -> Result<f64> {
    pred.expect_shape(target.shape())?;
    let n = pred.len() as f64;
    let total: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            t * p.ln() + (1.0 - t) * (1.0 - p).ln()
        })
        .sum();
    Ok(-total / n)
}

pub fn bce_backward(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    let n = pred.len() as f64;
    pred.zip_map(target, |p, t| {
        if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&p) {
            0.0
        } else {
            (-(t / p) + (1.0 - t) / (1.0 - p)) / n
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::{grad_check, ParamStore};
    use crate::rng::rng;
    use rand::Rng as _;

    #[test]
    fn kl_closed_forms() {
        let z = Tensor::zeros(&[2, 15]);
        assert_eq!(kl_gaussian(&z, &z).unwrap(), 0.0);
        let one = Tensor::full(&[1, 1], 1.0);
        assert!((kl_gaussian(&one, &Tensor::zeros(&[1, 1])).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kl_is_nonnegative() {
        let mut r = rng(3);
        for _ in 0..10_000 {
            let mu = Tensor::new(&[1, 2], vec![r.random_range(-5.0..5.0), r.random_range(-5.0..5.0)]).unwrap();
            let lv = Tensor::new(&[1, 2], vec![r.random_range(-8.0..4.0), r.random_range(-8.0..4.0)]).unwrap();
            assert!(kl_gaussian(&mu, &lv).unwrap() >= 0.0);
        }
    }

    #[test]
    fn bce_closed_forms() {
        let half = Tensor::full(&[4], 0.5);
        assert!((bce(&half, &half).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        let t = Tensor::new(&[2], vec![0.0, 1.0]).unwrap();
        assert!(bce(&t, &t).unwrap() < 1e-6);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut r = rng(4);
        let mut store = ParamStore::new();
        let shape = [3, 4];
        let gen = |r: &mut crate::rng::Rng, lo: f64, hi: f64| {
            Tensor::new(&shape, (0..12).map(|_| r.random_range(lo..hi)).collect()).unwrap()
        };
        store.insert("p", gen(&mut r, 0.05, 0.95));
        store.insert("mu", gen(&mut r, -2.0, 2.0));
        store.insert("lv", gen(&mut r, -2.0, 1.0));
        let target = gen(&mut r, 0.0, 1.0);
        let g = bce_backward(store.get("p"), &target).unwrap();
        store.accumulate("p", &g).unwrap();
        let (dmu, dlv) = kl_gaussian_backward(store.get("mu"), store.get("lv"));
        store.accumulate("mu", &dmu).unwrap();
        store.accumulate("lv", &dlv).unwrap();
        let f = |s: &ParamStore| {
            bce(s.get("p"), &target).unwrap() + kl_gaussian(s.get("mu"), s.get("lv")).unwrap()
        };
        assert!(grad_check(&store, f, 100, 9) < 1e-6);
    }
}
