//! Segmentation losses and the mIoU metric.

mod losses;
mod miou;

pub use losses::{bce_loss, combined_loss, dice_loss, DICE_SMOOTH};
pub use miou::{
    binarize, binarize_batch, miou, miou_batch, ClassCounts, ConfusionCounts, BACKGROUND,
    FOREGROUND,
};
