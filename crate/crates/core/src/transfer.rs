//! Frequency-component transfer: swap the variant planes of a source stack
//! for those of a target stack, keep the invariant planes, and reconstruct.
//!
//! Output intensities may leave the input range; nothing in this module
//! clamps. Callers clamp at save time only.

use crate::error::{Error, Result};
use crate::fcs::{FcSet, FcStack, FC_COUNT};
use crate::image::Image2D;
use crate::nsct::{nsct_inverse, NsctPlan};

/// Plane-wise swap: plane `k` comes from `src` when `k` is in `invariant`,
/// from `tgt` otherwise.
pub fn transfer_stack(src: &FcStack, tgt: &FcStack, invariant: FcSet) -> Result<FcStack> {
    if src.shape() != tgt.shape() {
        return Err(Error::ShapeMismatch {
            expected: src.shape(),
            got: tgt.shape(),
        });
    }
    let planes = (0..FC_COUNT)
        .map(|k| {
            if invariant.contains(k) {
                src.plane(k).clone()
            } else {
                tgt.plane(k).clone()
            }
        })
        .collect();
    FcStack::new(planes)
}

/// Swap-and-sum without materializing the intermediate stack; equal to
/// `nsct_inverse(transfer_stack(src, tgt, invariant))` addition for addition.
pub fn swap_reconstruct(src: &FcStack, tgt: &FcStack, invariant: FcSet) -> Result<Image2D> {
    if src.shape() != tgt.shape() {
        return Err(Error::ShapeMismatch {
            expected: src.shape(),
            got: tgt.shape(),
        });
    }
    let mut out = Image2D::zeros(src.height(), src.width());
    for k in 0..FC_COUNT {
        let plane = if invariant.contains(k) {
            src.plane(k)
        } else {
            tgt.plane(k)
        };
        for (o, v) in out.data_mut().iter_mut().zip(plane.data()) {
            *o += v;
        }
    }
    Ok(out)
}

/// Decompose both images, swap the variant planes, reconstruct.
pub fn freq_transfer_image(
    src: &Image2D,
    tgt: &Image2D,
    invariant: FcSet,
    feather: Option<f64>,
) -> Result<Image2D> {
    src.check_same_shape(tgt)?;
    let plan = NsctPlan::new(src.height(), src.width(), feather)?;
    let src_stack = plan.forward(src)?;
    let tgt_stack = plan.forward(tgt)?;
    Ok(nsct_inverse(&transfer_stack(&src_stack, &tgt_stack, invariant)?))
}
