use crate::error::Result;
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Smoothing term of the Dice loss.
pub const DICE_SMOOTH: f64 = 1.0;

/// Mean binary cross-entropy; predictions are clamped to `[1e-7, 1 - 1e-7]`
/// before the logarithm.
pub fn bce_loss<T: Scalar>(tape: &mut Tape<T>, pred: Var, target: &Tensor<T>) -> Result<Var> {
    tape.bce(pred, target)
}

/// Batch mean of `1 - (2 sum(p y) + s) / (sum p + sum y + s)`, one Dice score
/// per sample along the first axis.
pub fn dice_loss<T: Scalar>(
    tape: &mut Tape<T>,
    pred: Var,
    target: &Tensor<T>,
    smooth: f64,
) -> Result<Var> {
    tape.dice(pred, target, T::from_f64(smooth))
}

/// Training objective: BCE plus Dice with equal weights.
pub fn combined_loss<T: Scalar>(tape: &mut Tape<T>, pred: Var, target: &Tensor<T>) -> Result<Var> {
    let bce = bce_loss(tape, pred, target)?;
    let dice = dice_loss(tape, pred, target, DICE_SMOOTH)?;
    tape.add(bce, dice)
}
