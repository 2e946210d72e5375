use super::Tensor;
use crate::error::Result;

/// Prediction clamp keeping the log terms finite.
pub const BCE_EPS: f64 = 1e-7;

/// Summed pixel-wise binary cross-entropy over every element of the batch.
pub fn bce_loss(prediction: &Tensor, target: &Tensor) -> Result<f64> {
    prediction.check_same_shape(target)?;
    Ok(prediction
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            -t * p.ln() - (1.0 - t) * (1.0 - p).ln()
        })
        .sum())
}

/// Gradient of [`bce_loss`] with respect to the pre-sigmoid logits, given the
/// sigmoid outputs: `sigmoid(z) - t`.
pub fn bce_logit_grad(prediction: &Tensor, target: &Tensor) -> Result<Tensor> {
    prediction.check_same_shape(target)?;
    let data = prediction.data().iter().zip(target.data()).map(|(p, t)| p - t).collect();
    Tensor::new(prediction.shape().to_vec(), data)
}

/// Mean of squared elementwise differences.
pub fn mse_loss(prediction: &Tensor, target: &Tensor) -> Result<f64> {
    prediction.check_same_shape(target)?;
    let n = prediction.len() as f64;
    Ok(prediction
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n)
}

pub fn mse_grad(prediction: &Tensor, target: &Tensor) -> Result<Tensor> {
    prediction.check_same_shape(target)?;
    let scale = 2.0 / prediction.len() as f64;
    let data = prediction
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| scale * (p - t))
        .collect();
    Tensor::new(prediction.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn bce_reference_values() {
        assert!(bce_loss(&t(&[1.0 - BCE_EPS]), &t(&[1.0])).unwrap() < 1e-6);
        // -ln 0.5
        let half = bce_loss(&t(&[0.5]), &t(&[1.0])).unwrap();
        assert!((half - 0.693147).abs() < 1e-6);
        assert_eq!(half, bce_loss(&t(&[0.5]), &t(&[0.0])).unwrap());
        assert!(bce_loss(&t(&[0.0, 1.0]), &t(&[1.0, 0.0])).unwrap().is_finite());
    }

    #[test]
    fn mse_reference_values() {
        assert_eq!(mse_loss(&t(&[1.0, 2.0]), &t(&[1.0, 2.0])).unwrap(), 0.0);
        assert_eq!(mse_loss(&t(&[2.0, 3.0, 4.0]), &t(&[1.0, 2.0, 3.0])).unwrap(), 1.0);
        assert_eq!(mse_loss(&t(&[0.0, 0.0]), &t(&[1.0, 2.0])).unwrap(), 2.5);
        assert!(mse_loss(&t(&[0.0]), &t(&[0.0, 1.0])).is_err());
    }
}
