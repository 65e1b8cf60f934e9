use super::loss::loss_and_gradient_unchecked;
use super::{assemble_loss, LossBreakdown, PinnModel, PinnProblem};
use crate::error::{Error, Result};
use crate::optim::{lbfgs_minimize, LbfgsConfig, TrainReport};

/// A trained model with its optimizer record and final loss terms.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: PinnModel,
    pub report: TrainReport,
    pub breakdown: LossBreakdown,
}

/// Minimizes the composite loss of `problem` over all parameters of `model`
/// with L-BFGS, starting from the current parameters.
pub fn train(problem: &PinnProblem, model: PinnModel, config: &LbfgsConfig) -> Result<TrainOutcome> {
    if problem.kind != model.kind {
        return Err(Error::InvalidConfig(format!(
            "model is for the {:?} problem but the problem is {:?}",
            model.kind, problem.kind
        )));
    }
    problem.validate()?;
    let mut work = model.clone();
    let mut objective = |x: &[f64]| {
        work.set_flat(x);
        let (value, _, grad) = loss_and_gradient_unchecked(problem, &work)?;
        Ok((value, grad))
    };
    let (best, report) = lbfgs_minimize(&mut objective, &model.to_flat(), config)?;
    let mut model = model;
    model.set_flat(&best);
    let (_, breakdown) = assemble_loss(problem, &model)?;
    Ok(TrainOutcome {
        model,
        report,
        breakdown,
    })
}
