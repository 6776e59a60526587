//! Training objectives. Every loss is a scalar tensor averaged over the batch
//! (and over elements for the feature and pixel losses), so it can be
//! differentiated and also read back as a number.

use tch::Tensor;

use crate::error::{Error, Result};

/// Lower clamp for arguments of `log`.
pub const LOG_EPS: f64 = 1e-7;

fn safe_log(t: &Tensor) -> Tensor {
    t.clamp(LOG_EPS, f64::INFINITY).log()
}

fn same_shape(what: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.size() == b.size() {
        Ok(())
    } else {
        Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.size(), b.size())))
    }
}

/// `mean(log d_real) + mean(log(1 - d_fake))`. The discriminator ascends it; the
/// generating networks descend it.
pub fn image_adversarial_loss(d_real: &Tensor, d_fake: &Tensor) -> Result<Tensor> {
    same_shape("adversarial loss batches", d_real, d_fake)?;
    Ok(real_term(d_real) + fake_term(d_fake))
}

/// Same form as [`image_adversarial_loss`] with codes drawn from the prior in the
/// real role and encoder outputs in the fake role.
pub fn code_adversarial_loss(d_prior: &Tensor, d_enc: &Tensor) -> Result<Tensor> {
    same_shape("code adversarial loss batches", d_prior, d_enc)?;
    Ok(real_term(d_prior) + fake_term(d_enc))
}

/// `mean(log d)` for samples in the real role.
pub fn real_term(d: &Tensor) -> Tensor {
    safe_log(d).mean(d.kind())
}

/// `mean(log(1 - d))` for samples in the fake role.
pub fn fake_term(d: &Tensor) -> Tensor {
    safe_log(&(1.0 - d)).mean(d.kind())
}

/// Generator-side objective on discriminator outputs for generated samples.
///
/// The saturating form descends `mean(log(1 - d))`, the literal fake-role term.
/// The non-saturating form descends `-mean(log d)` instead.
pub fn generator_loss(d_fake: &Tensor, nonsaturating: bool) -> Tensor {
    if nonsaturating {
        -real_term(d_fake)
    } else {
        fake_term(d_fake)
    }
}

/// Mean squared difference between feature maps; `features_orig` is detached.
pub fn perceptual_loss(features_recon: &Tensor, features_orig: &Tensor) -> Result<Tensor> {
    same_shape("perceptual loss features", features_recon, features_orig)?;
    Ok((features_recon - features_orig.detach())
        .square()
        .mean(features_recon.kind()))
}

/// Mean squared error over every pixel.
pub fn pixel_mse_loss(x_recon: &Tensor, x: &Tensor) -> Result<Tensor> {
    same_shape("pixel loss images", x_recon, x)?;
    Ok((x_recon - x).square().mean(x_recon.kind()))
}

/// Cross-entropy of the auxiliary classifier against the one-hot category that
/// generated each sample: `mean(-log q[s])`.
pub fn mi_category_loss(q: &Tensor, s: &Tensor) -> Result<Tensor> {
    same_shape("category loss", q, s)?;
    let picked = (q * s.to_kind(q.kind())).sum_dim_intlist(1, false, q.kind());
    Ok(-safe_log(&picked).mean(q.kind()))
}

pub fn scalar(t: &Tensor) -> f64 {
    t.double_value(&[])
}

#[cfg(test)]
mod tests {
    use super::*;
    use tch::{Device, Kind};

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_slice(v).reshape([v.len() as i64, 1])
    }

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn adversarial_at_one_half() {
        let half = t(&[0.5, 0.5, 0.5]);
        close(scalar(&image_adversarial_loss(&half, &half).unwrap()), -1.386294, 1e-6);
        close(scalar(&code_adversarial_loss(&half, &half).unwrap()), -1.386294, 1e-6);
    }

    #[test]
    fn adversarial_supremum_at_perfect_discriminator() {
        let v = scalar(&image_adversarial_loss(&t(&[1.0, 1.0]), &t(&[0.0, 0.0])).unwrap());
        assert!(v <= 0.0 && v > -1e-6, "{v}");
    }

    #[test]
    fn adversarial_hand_computed_cases() {
        // (ln .9 + ln .8)/2 + (ln .9 + ln .8)/2
        let expected = (0.9f64.ln() + 0.8f64.ln()) / 2.0 * 2.0;
        let v = scalar(&image_adversarial_loss(&t(&[0.9, 0.8]), &t(&[0.1, 0.2])).unwrap());
        close(v, expected, 1e-12);
        close(v, -0.328504, 1e-6);
        let v = scalar(&code_adversarial_loss(&t(&[0.7]), &t(&[0.4])).unwrap());
        close(v, 0.7f64.ln() + 0.6f64.ln(), 1e-12);
        close(v, -0.867501, 1e-6);
    }

    #[test]
    fn clamped_probabilities_stay_finite() {
        let v = scalar(&image_adversarial_loss(&t(&[0.0]), &t(&[1.0])).unwrap());
        assert!(v.is_finite());
        close(v, 2.0 * LOG_EPS.ln(), 1e-6);
    }

    #[test]
    fn batch_size_mismatch_is_rejected() {
        assert!(image_adversarial_loss(&t(&[0.5]), &t(&[0.5, 0.5])).is_err());
        assert!(perceptual_loss(&t(&[0.5]), &t(&[0.5, 0.5])).is_err());
    }

    #[test]
    fn feature_and_pixel_losses() {
        let a = Tensor::from_slice(&[0.1f64, -0.3, 0.7, 0.2, 0.0, -1.0]).reshape([2, 3]);
        close(scalar(&perceptual_loss(&a, &a).unwrap()), 0.0, 0.0);
        close(scalar(&perceptual_loss(&(&a + 0.5), &a).unwrap()), 0.25, 1e-12);
        let x = Tensor::zeros([2, 1, 32, 32], (Kind::Double, Device::Cpu));
        close(scalar(&pixel_mse_loss(&(&x + 0.1), &x).unwrap()), 0.01, 1e-12);
    }

    #[test]
    fn feature_loss_matches_elementwise_sum() {
        let a = [0.3f64, -1.2, 0.5, 2.0, 0.1, -0.7];
        let b = [1.0f64, 0.2, -0.4, 1.5, 0.0, 0.3];
        let brute: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / 6.0;
        let v = perceptual_loss(
            &Tensor::from_slice(&a).reshape([2, 3]),
            &Tensor::from_slice(&b).reshape([2, 3]),
        )
        .unwrap();
        close(scalar(&v), brute, 1e-12);
    }

    #[test]
    fn category_loss_cases() {
        let s = crate::rng::one_hot(&[3, 7], 10).to_kind(Kind::Double);
        let uniform = Tensor::full([2, 10], 0.1, (Kind::Double, Device::Cpu));
        close(scalar(&mi_category_loss(&uniform, &s).unwrap()), 10f64.ln(), 1e-12);
        close(scalar(&mi_category_loss(&s, &s).unwrap()), 0.0, 1e-12);
        let q = Tensor::from_slice(&[0.25f64, 0.75, 0.5, 0.5]).reshape([2, 2]);
        let s = crate::rng::one_hot(&[0, 0], 2).to_kind(Kind::Double);
        let expected = (4f64.ln() + 2f64.ln()) / 2.0;
        close(scalar(&mi_category_loss(&q, &s).unwrap()), expected, 1e-12);
        let q = Tensor::from_slice(&[0.25f64, 0.75]).reshape([1, 2]);
        let s = crate::rng::one_hot(&[0], 2).to_kind(Kind::Double);
        close(scalar(&mi_category_loss(&q, &s).unwrap()), 1.386294, 1e-6);
    }

    #[test]
    fn generator_forms() {
        let d = t(&[0.25]);
        close(scalar(&generator_loss(&d, false)), 0.75f64.ln(), 1e-12);
        close(scalar(&generator_loss(&d, true)), -(0.25f64.ln()), 1e-12);
    }
}
