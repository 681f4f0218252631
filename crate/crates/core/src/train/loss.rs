use crate::autodiff::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::TensorResult;

/// Graph nodes of the training objective.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub total: Var,
    pub cross_entropy: Var,
    pub importance: Option<Var>,
    pub load: Option<Var>,
}

/// `CE + alpha * (L_importance + L_load)`; absent balancing terms count as 0.
pub fn total_loss<T: Scalar>(
    g: &mut Graph<T>,
    logits: Var,
    labels: &[usize],
    importance: Option<Var>,
    load: Option<Var>,
    alpha: f64,
) -> TensorResult<LossParts> {
    let ce = g.cross_entropy(logits, labels)?;
    let balance = match (importance, load) {
        (Some(a), Some(b)) => Some(g.add(a, b)?),
        (a, b) => a.or(b),
    };
    let total = match balance {
        Some(b) if alpha != 0.0 => {
            let weighted = g.scale(b, T::lit(alpha));
            g.add(ce, weighted)?
        }
        _ => ce,
    };
    Ok(LossParts {
        total,
        cross_entropy: ce,
        importance,
        load,
    })
}
