use crate::error::{Error, Result};
use crate::linalg::Scalar;
use crate::model::{latent_penalty_grad, loss_logit_grad, scatter_features, Evaluation, LatentNorm, NearModel};

/// Gradients congruent with the model parameters and the active latent code.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTape<T> {
    pub model: NearModel<T>,
    pub latent: Vec<T>,
}

impl<T: Scalar> GradientTape<T> {
    pub fn zeros_like(model: &NearModel<T>) -> Self {
        Self {
            model: NearModel::zeros(&model.arch),
            latent: vec![T::zero(); model.arch.latent_dim],
        }
    }

    /// Every gradient tensor by checkpoint name, the latent last.
    pub fn named(&self) -> Vec<(String, &[T])> {
        let mut v: Vec<(String, &[T])> = self.model.dense_layers().into_iter().map(|(n, d)| (n, d.w.as_slice())).collect();
        v.push(("latents".to_owned(), &self.latent));
        v
    }

    fn check_finite(&self) -> Result<()> {
        for (name, g) in self.named() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("grad {name}")));
            }
        }
        Ok(())
    }
}

/// Exact gradients of the training loss for one recorded forward pass.
///
/// Appearance values and query coordinates are inputs, not parameters; no
/// gradient is produced for them.
pub fn backward<T: Scalar>(
    model: &NearModel<T>,
    eval: &Evaluation<T>,
    labels: &[u8],
    lambda: f64,
    norm: LatentNorm,
) -> Result<GradientTape<T>> {
    if labels.len() != eval.head.n {
        return Err(Error::ShapeMismatch(format!("{} labels for {} points", labels.len(), eval.head.n)));
    }
    if eval.head.logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    let mut tape = GradientTape::zeros_like(model);
    let dlogits = loss_logit_grad(&eval.head.logits, labels);
    let dinputs = model.head.backward(&eval.head, &dlogits, &mut tape.model.head);
    let width = model.head.input_width();
    let dfeatures = scatter_features(&eval.decoder.pyramid, &eval.stencils, &dinputs, width);
    let dz = model.decoder.backward(&eval.decoder, &dfeatures, &mut tape.model.decoder);
    let dp = latent_penalty_grad(&eval.decoder.z, lambda, norm);
    tape.latent = dz.iter().zip(&dp).map(|(a, b)| *a + *b).collect();
    tape.check_finite()?;
    Ok(tape)
}
