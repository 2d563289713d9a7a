//! Adversarial and reconstruction losses.

use sgan_tensor::{Element, Rng, Tensor, Var};

use crate::error::{Error, Result};

/// Lower clamp applied to `p` and `1 - p` inside the logarithms.
pub const BCE_CLAMP: f64 = 1e-7;

/// Added under the square root of the gradient norm so its derivative stays finite.
const NORM_FLOOR: f64 = 1e-12;

fn flat<'t, T: Element>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    let n = x.shape().iter().product::<usize>();
    Ok(x.reshape(&[n])?)
}

/// Mean binary cross-entropy against a constant target in `[0, 1]`.
pub fn bce<'t, T: Element>(p: Var<'t, T>, target: f64) -> Result<Var<'t, T>> {
    let targets = Tensor::full(&p.shape(), T::from_f64(target));
    bce_targets(p, &targets)
}

/// Mean of `-[t log p + (1 - t) log(1 - p)]`, with both arguments clamped at [`BCE_CLAMP`].
pub fn bce_targets<'t, T: Element>(p: Var<'t, T>, targets: &Tensor<T>) -> Result<Var<'t, T>> {
    let lo = T::from_f64(BCE_CLAMP);
    let clamped = p
        .value()
        .data()
        .iter()
        .filter(|&&v| v < lo || T::one() - v < lo)
        .count();
    if clamped > 0 {
        log::debug!("bce: {clamped} prediction(s) clamped at {BCE_CLAMP}");
    }
    let log_p = p.clamp_min(BCE_CLAMP).log();
    let log_q = p.neg().add_scalar(1.0).clamp_min(BCE_CLAMP).log();
    let complement = targets.map(|t| T::one() - t);
    let ll = log_p.mul_const(targets)?.add(log_q.mul_const(&complement)?)?;
    Ok(flat(ll)?.mean().neg())
}

/// Non-saturating generator objective `-log D(G(z))`.
pub fn bce_generator<'t, T: Element>(d_fake: Var<'t, T>) -> Result<Var<'t, T>> {
    bce(d_fake, 1.0)
}

/// `mean(d_fake) - mean(d_real)`.
pub fn wasserstein_critic<'t, T: Element>(d_real: Var<'t, T>, d_fake: Var<'t, T>) -> Result<Var<'t, T>> {
    Ok(flat(d_fake)?.mean().sub(flat(d_real)?.mean())?)
}

/// `-mean(d_fake)`.
pub fn wasserstein_generator<'t, T: Element>(d_fake: Var<'t, T>) -> Result<Var<'t, T>> {
    Ok(flat(d_fake)?.mean().neg())
}

/// Mean absolute difference.
pub fn l1<'t, T: Element>(a: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
    Ok(flat(a.sub(b)?.abs())?.mean())
}

/// One interpolation weight per sample on the exact grid, so `1 - e` is exact too.
pub fn penalty_weights<T: Element>(n: usize, rng: &mut Rng) -> Vec<T> {
    (0..n).map(|_| rng.uniform_grid::<T>()).collect()
}

/// `lambda * mean((|grad_x critic(x_hat)| - 1)^2)` with `x_hat = e real + (1 - e) fake`.
///
/// `eps` holds one weight per sample. The result stays differentiable with
/// respect to the critic parameters.
pub fn gradient_penalty_with<'t, T, F>(
    critic: F,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    lambda: f64,
    eps: &[T],
    tape: &'t sgan_tensor::Tape<T>,
) -> Result<Var<'t, T>>
where
    T: Element,
    F: FnOnce(Var<'t, T>) -> Result<Var<'t, T>>,
{
    if !tape.recording() {
        return Err(Error::Invalid(
            "gradient penalty needs a recording tape for second-order gradients".into(),
        ));
    }
    if real.shape() != fake.shape() {
        return Err(Error::Dimension(format!(
            "gradient penalty: real {:?} vs fake {:?}",
            real.shape(),
            fake.shape()
        )));
    }
    let n = real.shape()[0];
    if eps.len() != n {
        return Err(Error::Dimension(format!("{} weights for batch {n}", eps.len())));
    }
    let per = real.numel() / n.max(1);
    let mut mixed = Vec::with_capacity(real.numel());
    for (b, &e) in eps.iter().enumerate() {
        let c = T::one() - e;
        let range = b * per..(b + 1) * per;
        for (&r, &f) in real.data()[range.clone()].iter().zip(&fake.data()[range]) {
            mixed.push(e * r + c * f);
        }
    }
    let x_hat = tape.param(Tensor::new(real.shape(), mixed)?);
    let score = critic(x_hat)?;
    let grad = tape.grad(flat(score)?.sum(), &[x_hat], true)?[0];
    let norms = grad
        .square()
        .reshape(&[n, per])?
        .sum_to_axis(0)?
        .add_scalar(NORM_FLOOR)
        .sqrt();
    Ok(norms.add_scalar(-1.0).square().mean().scale(lambda))
}

/// Gradient penalty with interpolation weights drawn from `rng`.
pub fn gradient_penalty<'t, T, F>(
    critic: F,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    lambda: f64,
    rng: &mut Rng,
    tape: &'t sgan_tensor::Tape<T>,
) -> Result<Var<'t, T>>
where
    T: Element,
    F: FnOnce(Var<'t, T>) -> Result<Var<'t, T>>,
{
    let eps = penalty_weights(real.shape().first().copied().unwrap_or(0), rng);
    gradient_penalty_with(critic, real, fake, lambda, &eps, tape)
}

#[cfg(test)]
mod tests {
    use super::*;
    use sgan_tensor::Tape;

    #[test]
    fn bce_closed_forms() {
        let tape = Tape::<f64>::new();
        let half = tape.constant(Tensor::full(&[4, 1], 0.5));
        for t in [0.0, 1.0] {
            let l = bce(half, t).unwrap().item();
            assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        }
        let one = tape.constant(Tensor::ones(&[3]));
        assert_eq!(bce(one, 1.0).unwrap().item(), 0.0);
        // exact 0 on target 1 is clamped, not infinite
        let zero = tape.constant(Tensor::zeros(&[1]));
        let l = bce(zero, 1.0).unwrap().item();
        assert!((l - (-(1e-7f64).ln())).abs() < 1e-9);
    }

    #[test]
    fn wasserstein_equal_scores_cancel() {
        let tape = Tape::<f64>::new();
        let s = tape.constant(Rng::new(1).normal_tensor(&[8, 1]));
        assert_eq!(wasserstein_critic(s, s).unwrap().item(), 0.0);
    }

    #[test]
    fn penalty_requires_recording() {
        let tape = Tape::<f64>::new();
        let x = Tensor::<f64>::ones(&[2, 3]);
        let r = tape.no_grad(|| gradient_penalty_with(|v| Ok(v.sum()), &x, &x, 10.0, &[0.5, 0.5], &tape));
        assert!(r.is_err());
    }
}
