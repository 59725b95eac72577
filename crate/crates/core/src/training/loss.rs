use crate::data::PAD;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Tensor, Var};

/// Mean negative log-likelihood of `targets` under row-wise softmax of
/// `logits [L, V]`, skipping PAD positions.
pub fn xe_loss<T: Scalar>(g: &mut Graph<'_, T>, logits: Var, targets: &[usize]) -> Result<Var> {
    let rows = match g.shape(logits) {
        [m, _] => *m,
        s => {
            return Err(Error::invalid_shape(
                "xe_loss",
                s,
                "expected [positions, vocabulary]",
            ))
        }
    };
    if rows != targets.len() {
        return Err(Error::shape("xe_loss", g.shape(logits), &[targets.len()]));
    }
    let kept = targets.iter().filter(|&&t| t != PAD).count();
    if kept == 0 {
        return Err(Error::EmptyInput("xe_loss targets (all PAD)"));
    }
    let logp = g.log_softmax(logits, 1)?;
    let picked = g.pick(logp, targets)?;
    let total = if kept == targets.len() {
        g.sum(picked)
    } else {
        let mask = targets
            .iter()
            .map(|&t| if t == PAD { T::zero() } else { T::one() })
            .collect();
        let mask = g.constant(Tensor::new(vec![rows, 1], mask)?);
        let masked = g.mul(picked, mask)?;
        g.sum(masked)
    };
    Ok(g.scale(total, -T::one() / T::of(kept as f64)))
}
