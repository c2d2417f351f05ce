//! Closed-form operation-count predictions for the packed primitives.
//!
//! The predictor mirrors the per-operation accounting: masks and rotations
//! for the row layout, one multiplication per diagonal for the diagonal
//! layout, and a rotation-only transpose whose budget shrinks from `q*M` to
//! `M` once the parts are pre-rotated. Measured counters may come in under
//! these bounds (rotations by zero are free); multiplication counts are
//! exact for unpadded shapes.

use crate::error::{Error, Result};
use crate::packing::Layout;

/// Which packed operation is being estimated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PackedOp {
    Matvec,
    Transpose,
}

/// Predicted operation counts and level consumption.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CostEstimate {
    pub mults: u64,
    pub rotations: u64,
    pub depth: u32,
}

/// Predict the cost of `op` on an `N x M` pack (`n >= m >= 1`) in the given
/// layout.
pub fn predict_cost(layout: Layout, op: PackedOp, n: usize, m: usize) -> Result<CostEstimate> {
    if m == 0 || n < m {
        return Err(Error::Shape(format!(
            "cost prediction needs n >= m >= 1, got n = {n}, m = {m}"
        )));
    }
    let (n64, m64) = (n as u64, m as u64);
    let q = n64 / m64;
    let est = match (layout, op) {
        // one row product and one unit-vector mask per row, a full
        // register of rotations per row
        (Layout::Row, PackedOp::Matvec) => CostEstimate {
            mults: 2 * m64,
            rotations: m64 * n64,
            depth: 2,
        },
        // one product per diagonal against a rotated input
        (Layout::Diagonal | Layout::DiagonalStepped, PackedOp::Matvec) => CostEstimate {
            mults: n64,
            rotations: n64 - 1,
            depth: 1,
        },
        // one mask and one placing rotation per logical element
        (Layout::Row, PackedOp::Transpose) => CostEstimate {
            mults: n64 * m64,
            rotations: n64 * m64,
            depth: 1,
        },
        // q rotated pieces per output diagonal, no multiplications
        (Layout::Diagonal, PackedOp::Transpose) => CostEstimate {
            mults: 0,
            rotations: q * m64,
            depth: 0,
        },
        // pre-rotated pieces; at most the wrapping piece turns per output
        (Layout::DiagonalStepped, PackedOp::Transpose) => CostEstimate {
            mults: 0,
            rotations: m64,
            depth: 0,
        },
    };
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transpose_predictions_follow_the_layout() {
        let diag = predict_cost(Layout::Diagonal, PackedOp::Transpose, 6, 3).unwrap();
        assert_eq!((diag.mults, diag.rotations, diag.depth), (0, 6, 0));

        let stepped = predict_cost(Layout::DiagonalStepped, PackedOp::Transpose, 6, 3).unwrap();
        assert_eq!((stepped.mults, stepped.rotations, stepped.depth), (0, 3, 0));

        let row = predict_cost(Layout::Row, PackedOp::Transpose, 4, 3).unwrap();
        assert_eq!((row.mults, row.rotations, row.depth), (12, 12, 1));
    }

    #[test]
    fn matvec_predictions_follow_the_layout() {
        let scalar = predict_cost(Layout::Diagonal, PackedOp::Matvec, 1, 1).unwrap();
        assert_eq!((scalar.mults, scalar.rotations, scalar.depth), (1, 0, 1));

        let diag = predict_cost(Layout::Diagonal, PackedOp::Matvec, 6, 3).unwrap();
        assert_eq!((diag.mults, diag.rotations, diag.depth), (6, 5, 1));

        let row = predict_cost(Layout::Row, PackedOp::Matvec, 6, 3).unwrap();
        assert_eq!((row.mults, row.rotations, row.depth), (6, 18, 2));
    }

    #[test]
    fn degenerate_shapes_are_rejected() {
        assert!(predict_cost(Layout::Row, PackedOp::Matvec, 2, 3).is_err());
        assert!(predict_cost(Layout::Row, PackedOp::Matvec, 2, 0).is_err());
    }
}
