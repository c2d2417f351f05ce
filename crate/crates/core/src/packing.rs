//! Matrix packings over slot registers and the packed operations on them.
//!
//! A dense matrix enters the engine in one of three layouts:
//!
//! - `Row`: one register per logical row; a matrix-vector product needs a
//!   rotate-and-sum inner product per row plus a unit-vector mask to place
//!   each result slot, costing two multiplications per row.
//! - `Diagonal`: one register per generalized (wrapping) diagonal; the
//!   product needs only slotwise multiplications against rotated inputs, no
//!   masking, and the packed transpose becomes a pure rotate-and-add.
//! - `DiagonalStepped`: diagonal layout with each part pre-rotated by its
//!   own index at the plaintext stage, which removes the on-the-fly
//!   rotations from the packed transpose.
//!
//! Shapes are described by the larger axis `N` and the smaller axis `M`,
//! with `N = q*M + r`. The default packing policy pads the larger axis with
//! zero rows so that `r = 0`; the rotate-and-add transpose then tiles the
//! cyclic register exactly. The unpadded `r > 0` route is kept behind
//! [`transpose_diag_ragged`] for diagnostics and does not reproduce the
//! dense transpose (see the crate tests).
//!
//! Diagonal packs come in two orientations. Packing a matrix produces the
//! "tall" form: one short, zero-padded diagonal per big-axis index, whose
//! product maps a big-axis vector to a small-axis vector. Transposing yields
//! the "wide" form: one full diagonal per small-axis index, whose product
//! maps a (period-replicated) small-axis vector back to the big axis. A
//! training step uses one of each per layer, which is why the transpose sits
//! on the critical path.

use crate::engine::{EngineContext, SlotRegister};
use crate::error::{Error, Result};

/// How a matrix is packed into registers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    Row,
    Diagonal,
    DiagonalStepped,
}

impl Layout {
    pub fn name(&self) -> &'static str {
        match self {
            Layout::Row => "row",
            Layout::Diagonal => "diagonal",
            Layout::DiagonalStepped => "diagonal-stepped",
        }
    }
}

/// Which logical axis of the layer the big packing axis `N` belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// The input axis is the big axis (input dimension >= output dimension).
    InToOut,
    /// The output axis is the big axis.
    OutToIn,
}

/// Which shape axis indexes the parts of a pack.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Big,
    Small,
}

/// Whether the big axis is padded to a multiple of the small axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PadPolicy {
    /// Pad the big axis with zero rows until the small axis divides it.
    PadToMultiple,
    /// Keep the logical size; `r` may be nonzero and the rotate-and-add
    /// transpose is not exact.
    Ragged,
}

/// Packed dimensions: `n_big = q * m_small + r`, plus the original
/// (unpadded) layer dimensions and which logical axis the big axis is.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MatrixShape {
    pub n_big: usize,
    pub m_small: usize,
    pub q: usize,
    pub r: usize,
    pub orig_in: usize,
    pub orig_out: usize,
    pub direction: Direction,
}

impl MatrixShape {
    /// Shape for a layer mapping `in_dim` inputs to `out_dim` outputs. The
    /// larger logical dimension becomes the big axis and, under
    /// [`PadPolicy::PadToMultiple`], grows to the next multiple of the
    /// smaller one.
    pub fn for_layer(in_dim: usize, out_dim: usize, policy: PadPolicy) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Shape(format!(
                "layer dimensions must be positive, got {in_dim}x{out_dim}"
            )));
        }
        let direction = if in_dim >= out_dim {
            Direction::InToOut
        } else {
            Direction::OutToIn
        };
        let (big, small) = match direction {
            Direction::InToOut => (in_dim, out_dim),
            Direction::OutToIn => (out_dim, in_dim),
        };
        let n_big = match policy {
            PadPolicy::PadToMultiple => big.div_ceil(small) * small,
            PadPolicy::Ragged => big,
        };
        Ok(MatrixShape {
            n_big,
            m_small: small,
            q: n_big / small,
            r: n_big % small,
            orig_in: in_dim,
            orig_out: out_dim,
            direction,
        })
    }

    /// Original (unpadded) size of the big axis.
    pub fn orig_big(&self) -> usize {
        match self.direction {
            Direction::InToOut => self.orig_in,
            Direction::OutToIn => self.orig_out,
        }
    }

    /// Original size of the small axis. Never padded, so this equals
    /// `m_small`.
    pub fn orig_small(&self) -> usize {
        match self.direction {
            Direction::InToOut => self.orig_out,
            Direction::OutToIn => self.orig_in,
        }
    }
}

/// Plaintext masks `u_0..u_{len-1}`, where `u_j` has a one in slot `j`.
#[derive(Clone, Debug)]
pub struct UnitVectorSet {
    units: Vec<SlotRegister>,
}

impl UnitVectorSet {
    pub fn new(len: usize) -> Self {
        Self {
            units: (0..len).map(|j| SlotRegister::unit(j, len)).collect(),
        }
    }

    pub fn get(&self, index: usize) -> &SlotRegister {
        &self.units[index]
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }
}

/// A matrix packed into slot registers.
#[derive(Clone, Debug)]
pub struct PackedMatrix {
    pub layout: Layout,
    pub shape: MatrixShape,
    parts: Vec<SlotRegister>,
    parts_axis: Axis,
}

impl PackedMatrix {
    pub fn parts(&self) -> &[SlotRegister] {
        &self.parts
    }

    pub fn parts_mut(&mut self) -> &mut [SlotRegister] {
        &mut self.parts
    }

    pub fn parts_axis(&self) -> Axis {
        self.parts_axis
    }

    /// Rebuild a pack from raw pieces, used by checkpoint loading.
    pub fn from_parts(
        layout: Layout,
        shape: MatrixShape,
        parts: Vec<SlotRegister>,
        parts_axis: Axis,
    ) -> Self {
        Self {
            layout,
            shape,
            parts,
            parts_axis,
        }
    }

    /// Every part has this slot length.
    pub fn register_length(&self) -> usize {
        self.shape.n_big
    }

    /// Minimum level across the ciphertext parts.
    pub fn min_level(&self) -> u32 {
        self.parts
            .iter()
            .map(SlotRegister::level)
            .min()
            .unwrap_or(0)
    }

    fn logical_parts(&self) -> usize {
        match self.parts_axis {
            Axis::Big => self.shape.orig_big(),
            Axis::Small => self.shape.orig_small(),
        }
    }

    fn logical_cols(&self) -> usize {
        match self.parts_axis {
            Axis::Big => self.shape.orig_small(),
            Axis::Small => self.shape.orig_big(),
        }
    }

    /// Read the packed values back into a dense matrix, first axis along the
    /// parts. Simulation-side convenience: it inspects slot values directly
    /// regardless of kind.
    pub fn unpack(&self) -> Vec<Vec<f64>> {
        let rows = self.logical_parts();
        let cols = self.logical_cols();
        let n = self.register_length();
        let mut dense = vec![vec![0.0; cols]; rows];
        match (self.layout, self.parts_axis) {
            (Layout::Row, _) => {
                for (i, part) in self.parts.iter().enumerate().take(rows) {
                    dense[i][..cols].copy_from_slice(&part.slots()[..cols]);
                }
            }
            (Layout::Diagonal, Axis::Big) | (Layout::DiagonalStepped, Axis::Big) => {
                let step = self.layout == Layout::DiagonalStepped;
                for (a, row) in dense.iter_mut().enumerate() {
                    for (b, v) in row.iter_mut().enumerate() {
                        let k = (a + n - b) % n;
                        let slot = if step { (b + k) % n } else { b };
                        *v = self.parts[k].slots()[slot];
                    }
                }
            }
            (Layout::Diagonal, Axis::Small) => {
                let m = self.shape.m_small;
                for (a, row) in dense.iter_mut().enumerate() {
                    for (b, v) in row.iter_mut().enumerate() {
                        let i = (a + m - b % m) % m;
                        *v = self.parts[i].slots()[b];
                    }
                }
            }
            (Layout::DiagonalStepped, Axis::Small) => {
                unreachable!("stepped packs are only stored along the big axis")
            }
        }
        dense
    }
}

fn pad_dense(dense: &[Vec<f64>], rows: usize, cols: usize) -> Result<Vec<Vec<f64>>> {
    if dense.is_empty() || dense[0].is_empty() {
        return Err(Error::Shape("matrix must be non-empty".into()));
    }
    let width = dense[0].len();
    for (i, row) in dense.iter().enumerate() {
        if row.len() != width {
            return Err(Error::Shape(format!(
                "matrix is not rectangular: row {i} has {} entries, expected {width}",
                row.len()
            )));
        }
    }
    let mut out = vec![vec![0.0; cols]; rows];
    for (i, row) in dense.iter().enumerate() {
        out[i][..width].copy_from_slice(row);
    }
    Ok(out)
}

/// Plaintext-stage cyclic right rotation, used for stepped preprocessing.
fn rotate_plain_slots(slots: &[f64], k: usize) -> Vec<f64> {
    let n = slots.len();
    let k = k % n;
    let mut out = vec![0.0; n];
    for (j, v) in slots.iter().enumerate() {
        out[(j + k) % n] = *v;
    }
    out
}

/// Pack each row of `dense` into its own encrypted register. The register
/// length is the padded big axis, so row and diagonal packs of the same layer
/// are directly comparable.
pub fn pack_row(dense: &[Vec<f64>], ctx: &EngineContext) -> Result<PackedMatrix> {
    if dense.is_empty() || dense.first().is_none_or(Vec::is_empty) {
        return Err(Error::Shape("matrix must be non-empty".into()));
    }
    let rows = dense.len();
    let cols = dense[0].len();
    // rows act as the layer output
    let shape = MatrixShape::for_layer(cols, rows, PadPolicy::PadToMultiple)?;
    pack_row_shaped(dense, shape, ctx)
}

/// Row packing with an explicit shape; parts follow the output axis.
pub fn pack_row_shaped(
    dense: &[Vec<f64>],
    shape: MatrixShape,
    ctx: &EngineContext,
) -> Result<PackedMatrix> {
    let rows = dense.len();
    let n = shape.n_big;
    let padded = pad_dense(dense, rows, n)?;
    let parts = padded
        .iter()
        .map(|row| ctx.encrypt(&SlotRegister::encode(row, n)?))
        .collect::<Result<Vec<_>>>()?;
    let parts_axis = match shape.direction {
        Direction::InToOut => Axis::Small,
        Direction::OutToIn => Axis::Big,
    };
    Ok(PackedMatrix {
        layout: Layout::Row,
        shape,
        parts,
        parts_axis,
    })
}

/// Pack `dense` along its generalized diagonals. The first axis of `dense`
/// is the big axis; part `k` holds `dense[(k + j) mod N][j]` in slots
/// `0..M`, zeros elsewhere. With `stepped` set, part `k` is additionally
/// rotated right by `k` before encryption (free plaintext preprocessing).
pub fn pack_diag(dense: &[Vec<f64>], stepped: bool, ctx: &EngineContext) -> Result<PackedMatrix> {
    pack_diag_with(dense, stepped, PadPolicy::PadToMultiple, ctx)
}

/// Diagonal packing with an explicit padding policy.
pub fn pack_diag_with(
    dense: &[Vec<f64>],
    stepped: bool,
    policy: PadPolicy,
    ctx: &EngineContext,
) -> Result<PackedMatrix> {
    if dense.is_empty() || dense.first().is_none_or(Vec::is_empty) {
        return Err(Error::Shape("matrix must be non-empty".into()));
    }
    let rows = dense.len();
    let cols = dense[0].len();
    if rows < cols {
        return Err(Error::Shape(format!(
            "diagonal packing expects the first axis to dominate, got {rows}x{cols}"
        )));
    }
    // treat the first axis as the layer input for shape bookkeeping
    let shape = MatrixShape::for_layer(rows, cols, policy)?;
    pack_diag_shaped(dense, shape, stepped, ctx)
}

/// Diagonal packing with an explicit shape; the first axis of `dense` is the
/// big axis.
pub fn pack_diag_shaped(
    dense: &[Vec<f64>],
    shape: MatrixShape,
    stepped: bool,
    ctx: &EngineContext,
) -> Result<PackedMatrix> {
    let n = shape.n_big;
    let m = shape.m_small;
    let padded = pad_dense(dense, n, m)?;
    let mut parts = Vec::with_capacity(n);
    for k in 0..n {
        let mut slots = vec![0.0; n];
        for (j, slot) in slots.iter_mut().enumerate().take(m) {
            *slot = padded[(k + j) % n][j];
        }
        if stepped {
            slots = rotate_plain_slots(&slots, k);
        }
        parts.push(ctx.encrypt(&SlotRegister::encode(&slots, n)?)?);
    }
    Ok(PackedMatrix {
        layout: if stepped {
            Layout::DiagonalStepped
        } else {
            Layout::Diagonal
        },
        shape,
        parts,
        parts_axis: Axis::Big,
    })
}

fn expect_diagonal(w: &PackedMatrix) -> Result<()> {
    match w.layout {
        Layout::Diagonal | Layout::DiagonalStepped => Ok(()),
        Layout::Row => Err(Error::Layout {
            expected: "diagonal",
            got: "row",
        }),
    }
}

/// Packed matrix-vector product for diagonal layouts.
///
/// Tall packs map a big-axis vector (length-`N` register) to the small axis:
/// the result occupies slots `0..M`. Wide packs map a small-axis vector,
/// replicated with period `M` across the register (see
/// [`replicate_period`]), back to the big axis and fill all `N` slots.
/// Either way the product is a sum of one slotwise multiplication per part
/// against a rotated operand, consuming one level and no masking.
pub fn matvec_diag(
    w: &PackedMatrix,
    x: &SlotRegister,
    ctx: &EngineContext,
) -> Result<SlotRegister> {
    expect_diagonal(w)?;
    if x.len() != w.register_length() {
        return Err(Error::Dimension {
            expected: w.register_length(),
            got: x.len(),
        });
    }
    let stepped = w.layout == Layout::DiagonalStepped;
    let mut acc: Option<SlotRegister> = None;
    for (k, part) in w.parts().iter().enumerate() {
        let term = if stepped {
            // rot(a, -k) * rot(b, -k) = rot(a * b, -k): multiply against the
            // unrotated input, then rotate the product into place.
            let prod = ctx.mul(part, x)?;
            ctx.rotate(&prod, -(k as i64))
        } else {
            let rotated = ctx.rotate(x, -(k as i64));
            ctx.mul(part, &rotated)?
        };
        acc = Some(match acc {
            None => term,
            Some(a) => ctx.add(&a, &term)?,
        });
    }
    acc.ok_or_else(|| Error::Shape("packed matrix has no parts".into()))
}

/// Packed matrix-vector product for the row layout.
///
/// For each row: multiply by the input, rotate-and-sum so every slot holds
/// the inner product, rotate the result to the row's slot and isolate it
/// with a plaintext unit-vector mask. Two multiplications and roughly one
/// register length of rotations per row.
pub fn matvec_row(
    w: &PackedMatrix,
    x: &SlotRegister,
    units: &UnitVectorSet,
    ctx: &EngineContext,
) -> Result<SlotRegister> {
    if w.layout != Layout::Row {
        return Err(Error::Layout {
            expected: "row",
            got: w.layout.name(),
        });
    }
    let n = w.register_length();
    if x.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: x.len(),
        });
    }
    if units.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: units.len(),
        });
    }
    let mut acc: Option<SlotRegister> = None;
    for (i, row) in w.parts().iter().enumerate() {
        let prod = ctx.mul(row, x)?;
        let mut inner = prod.clone();
        for s in 1..n {
            inner = ctx.add(&inner, &ctx.rotate(&prod, -(s as i64)))?;
        }
        let placed = ctx.rotate(&inner, i as i64);
        let masked = ctx.mul(&placed, units.get(i))?;
        acc = Some(match acc {
            None => masked,
            Some(a) => ctx.add(&a, &masked)?,
        });
    }
    acc.ok_or_else(|| Error::Shape("packed matrix has no parts".into()))
}

/// Rotation-only transpose of a tall diagonal pack.
///
/// Each wide diagonal is assembled from `q` short diagonals rotated into
/// place: `D_i = sum_s rot(C_{(s*M - i) mod N}, s*M - i)` with `s` ranging
/// over exactly the pieces that tile the `N` cyclic slots once. No
/// multiplication is involved, so no level is consumed.
pub fn transpose_diag(w: &PackedMatrix, ctx: &EngineContext) -> Result<PackedMatrix> {
    if w.layout != Layout::Diagonal {
        return Err(Error::Layout {
            expected: "diagonal",
            got: w.layout.name(),
        });
    }
    if w.parts_axis == Axis::Small {
        // A wide pack of a strictly rectangular matrix cannot be split back
        // into short diagonals by rotations and additions alone; square
        // packs take the tall path since both orientations coincide there.
        return Err(Error::Shape(
            "transpose of a wide diagonal pack requires masking; repack instead".into(),
        ));
    }
    if w.shape.r != 0 {
        return Err(Error::Shape(format!(
            "rotate-only transpose needs the small axis to divide the big one (r = {})",
            w.shape.r
        )));
    }
    let n = w.shape.n_big;
    let m = w.shape.m_small;
    let q = w.shape.q;
    let mut parts = Vec::with_capacity(m);
    for i in 0..m {
        let mut acc: Option<SlotRegister> = None;
        for s in 0..q {
            let offset = (s * m) as i64 - i as i64;
            let src = offset.rem_euclid(n as i64) as usize;
            let piece = ctx.rotate(&w.parts[src], offset);
            acc = Some(match acc {
                None => piece,
                Some(a) => ctx.add(&a, &piece)?,
            });
        }
        parts.push(acc.expect("q >= 1"));
    }
    Ok(PackedMatrix {
        layout: Layout::Diagonal,
        shape: w.shape,
        parts,
        parts_axis: Axis::Small,
    })
}

/// Transpose of a stepped diagonal pack.
///
/// The pre-rotation carried by each stepped part already places it for the
/// tiling, including the wrapping piece, whose residual rotation is a full
/// cycle of the register. The assembly therefore costs additions only; the
/// result is a plain wide pack.
pub fn transpose_diag_stepped(w: &PackedMatrix, ctx: &EngineContext) -> Result<PackedMatrix> {
    if w.layout != Layout::DiagonalStepped {
        return Err(Error::Layout {
            expected: "diagonal-stepped",
            got: w.layout.name(),
        });
    }
    if w.shape.r != 0 {
        return Err(Error::Shape(format!(
            "rotate-only transpose needs the small axis to divide the big one (r = {})",
            w.shape.r
        )));
    }
    let n = w.shape.n_big;
    let m = w.shape.m_small;
    let q = w.shape.q;
    let mut parts = Vec::with_capacity(m);
    for i in 0..m {
        let mut acc: Option<SlotRegister> = None;
        for s in 0..q {
            let offset = (s * m) as i64 - i as i64;
            let src = offset.rem_euclid(n as i64) as usize;
            // part `src` is pre-rotated by `src`; the remaining turn is
            // offset - src, a multiple of the register length, i.e. free.
            let piece = ctx.rotate(&w.parts[src], offset - src as i64);
            acc = Some(match acc {
                None => piece,
                Some(a) => ctx.add(&a, &piece)?,
            });
        }
        parts.push(acc.expect("q >= 1"));
    }
    Ok(PackedMatrix {
        layout: Layout::Diagonal,
        shape: w.shape,
        parts,
        parts_axis: Axis::Small,
    })
}

/// Diagnostic transpose for unpadded shapes, using the closed-form piece
/// bounds `e_i = q` (or `q + 1` past the wrap boundary) taken verbatim.
///
/// When `r > 0` the length-`M` pieces over-tile the `N` cyclic slots, so
/// some output slots receive two contributions and the result does not match
/// the dense transpose; the crate tests pin this behaviour down. Kept for
/// experimentation with ragged shapes.
pub fn transpose_diag_ragged(w: &PackedMatrix, ctx: &EngineContext) -> Result<PackedMatrix> {
    if w.layout != Layout::Diagonal {
        return Err(Error::Layout {
            expected: "diagonal",
            got: w.layout.name(),
        });
    }
    let n = w.shape.n_big;
    let m = w.shape.m_small;
    let q = w.shape.q;
    let r = w.shape.r;
    let mut parts = Vec::with_capacity(m);
    for i in 0..m {
        let pieces = if i <= m.saturating_sub(r) { q } else { q + 1 };
        let mut acc: Option<SlotRegister> = None;
        for s in 0..=pieces {
            let offset = (s * m) as i64 - i as i64;
            let src = offset.rem_euclid(n as i64) as usize;
            let piece = ctx.rotate(&w.parts[src], offset);
            acc = Some(match acc {
                None => piece,
                Some(a) => ctx.add(&a, &piece)?,
            });
        }
        parts.push(acc.expect("at least one piece"));
    }
    Ok(PackedMatrix {
        layout: Layout::Diagonal,
        shape: w.shape,
        parts,
        parts_axis: Axis::Small,
    })
}

/// Transpose of a row pack: every element is isolated with a unit-vector
/// mask and rotated to its transposed slot, then the pieces are summed per
/// output row. One plaintext multiplication and up to one rotation per
/// logical element, consuming one level.
pub fn transpose_row(
    w: &PackedMatrix,
    units: &UnitVectorSet,
    ctx: &EngineContext,
) -> Result<PackedMatrix> {
    if w.layout != Layout::Row {
        return Err(Error::Layout {
            expected: "row",
            got: w.layout.name(),
        });
    }
    let n = w.register_length();
    if units.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: units.len(),
        });
    }
    let rows = w.logical_parts();
    let cols = w.logical_cols();
    let mut out: Vec<Option<SlotRegister>> = vec![None; cols];
    for (i, row) in w.parts().iter().enumerate().take(rows) {
        for (j, slot) in out.iter_mut().enumerate() {
            let isolated = ctx.mul(row, units.get(j))?;
            let placed = ctx.rotate(&isolated, i as i64 - j as i64);
            *slot = Some(match slot.take() {
                None => placed,
                Some(a) => ctx.add(&a, &placed)?,
            });
        }
    }
    let parts = out
        .into_iter()
        .map(|p| p.ok_or_else(|| Error::Shape("packed matrix has no parts".into())))
        .collect::<Result<Vec<_>>>()?;
    Ok(PackedMatrix {
        layout: Layout::Row,
        shape: w.shape,
        parts,
        parts_axis: match w.parts_axis {
            Axis::Big => Axis::Small,
            Axis::Small => Axis::Big,
        },
    })
}

/// Diagonal pack of the outer product `big_vec[a] * small_vec[b]`.
///
/// Produces the same tall layout (and stepping) as a weight pack of the
/// given shape, so a gradient built this way adds directly onto the weights.
/// `small_vec` must be zero outside its logical slots, which keeps the short
/// diagonals zero-padded. Costs one multiplication per part and one level.
pub fn outer_product_diag(
    big_vec: &SlotRegister,
    small_vec: &SlotRegister,
    shape: MatrixShape,
    stepped: bool,
    ctx: &EngineContext,
) -> Result<PackedMatrix> {
    let n = shape.n_big;
    if big_vec.len() != n || small_vec.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: big_vec.len().max(small_vec.len()),
        });
    }
    debug_assert!(
        ctx.noise_std() > 0.0 || small_vec.slots()[shape.m_small..].iter().all(|v| *v == 0.0),
        "small-axis vector must be zero beyond its logical slots"
    );
    let mut parts = Vec::with_capacity(n);
    for k in 0..n {
        // rot(small * rot(big, -k), k) = rot(small, k) * big: stepped parts
        // come out of a single product against a rotated small-axis vector.
        let part = if stepped {
            ctx.mul(&ctx.rotate(small_vec, k as i64), big_vec)?
        } else {
            ctx.mul(small_vec, &ctx.rotate(big_vec, -(k as i64)))?
        };
        parts.push(part);
    }
    Ok(PackedMatrix {
        layout: if stepped {
            Layout::DiagonalStepped
        } else {
            Layout::Diagonal
        },
        shape,
        parts,
        parts_axis: Axis::Big,
    })
}

/// Fill a register with copies of its first `period` slots:
/// `sum_t rot(x, t * period)` for `t` up to `len / period`. The input must
/// be zero outside `0..period`. Costs `len/period - 1` rotations.
pub fn replicate_period(
    x: &SlotRegister,
    period: usize,
    ctx: &EngineContext,
) -> Result<SlotRegister> {
    let len = x.len();
    if period == 0 || !len.is_multiple_of(period) {
        return Err(Error::Shape(format!(
            "period {period} must divide the register length {len}"
        )));
    }
    debug_assert!(
        ctx.noise_std() > 0.0 || x.slots()[period..].iter().all(|v| *v == 0.0),
        "replication input must be zero beyond one period"
    );
    let copies = len / period;
    let mut acc = x.clone();
    for t in 1..copies {
        acc = ctx.add(&acc, &ctx.rotate(x, (t * period) as i64))?;
    }
    Ok(acc)
}
