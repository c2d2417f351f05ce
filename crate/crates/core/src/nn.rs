//! Dense networks with square activations trained by SGD on packed
//! registers.
//!
//! Every layer stores its weights as one pack (tall diagonals, stepped
//! diagonals, or rows) plus an encrypted bias register. A batch step runs:
//!
//! 1. transition: each stored pack is transposed into its complementary
//!    form (rotation-only for diagonal layouts);
//! 2. per sample: forward through matvec + bias + square, then backward
//!    through the chain rule, the transposed matvec and an outer-product
//!    gradient in the same layout as the weights;
//! 3. gradients are averaged and applied server-side, with the learning
//!    rate over the batch size folded into a single plaintext scale;
//! 4. the model is repacked (decrypted and re-encrypted client-side) to
//!    restore the level budget for the next batch.
//!
//! Forward/backward passes of the samples in one batch are independent and
//! may run on worker threads; gradient reduction happens in sample order so
//! results do not depend on the worker count.
//!
//! Level usage per batch step, counting multiplications on the deepest
//! chain: the diagonal layouts need 9 levels for a two-layer network (two
//! matvecs, two squares, two chain products, one transposed matvec, the
//! outer product and the update scale), while the row layout needs 12
//! because every matvec and the row transpose spend an extra unit-vector
//! mask. The row gradient folds the update scale into its mask to stay at
//! 12.

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::engine::{derive_seed, EngineContext, SlotRegister};
use crate::error::{Error, Result};
use crate::metrics::{EpochRecord, TrainingMetrics};
use crate::packing::{
    self, Direction, Layout, MatrixShape, PackedMatrix, PadPolicy, UnitVectorSet,
};

const SHUFFLE_SALT: u64 = 0x5348_5546; // "SHUF"
const TRAIN_SALT: u64 = 0x5452_4149;
const EVAL_SALT: u64 = 0x4556_414c;

/// Training hyperparameters.
#[derive(Clone, Copy, Debug)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

/// Plaintext initialization of one dense layer, weights in output-major
/// order. Shared between the packed trainer and the plaintext reference so
/// both start from identical parameters.
#[derive(Clone, Debug)]
pub struct DenseInit {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `weights[o][i]` maps input `i` to output `o`.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

/// Draw Gaussian layer parameters for the given dimensions.
pub fn gaussian_init(dims: &[usize], init_std: f64, seed: u64) -> Result<Vec<DenseInit>> {
    if dims.len() < 2 {
        return Err(Error::Config(format!(
            "network needs at least two dimensions, got {dims:?}"
        )));
    }
    if dims.contains(&0) {
        return Err(Error::Config(format!("zero-sized layer in {dims:?}")));
    }
    let mut rng = StdRng::seed_from_u64(derive_seed(seed, 0x494e_4954));
    let normal = Normal::new(0.0, init_std.max(0.0))
        .map_err(|e| Error::Config(format!("bad init_std: {e}")))?;
    let mut layers = Vec::new();
    for w in dims.windows(2) {
        let (in_dim, out_dim) = (w[0], w[1]);
        let weights = (0..out_dim)
            .map(|_| (0..in_dim).map(|_| normal.sample(&mut rng)).collect())
            .collect();
        let bias = (0..out_dim).map(|_| normal.sample(&mut rng)).collect();
        layers.push(DenseInit {
            in_dim,
            out_dim,
            weights,
            bias,
        });
    }
    Ok(layers)
}

/// One dense layer: packed weights, encrypted bias and shape metadata.
#[derive(Clone, Debug)]
pub struct DenseLayer {
    pub weights: PackedMatrix,
    pub bias: SlotRegister,
    pub in_dim: usize,
    pub out_dim: usize,
    pub(crate) units: Option<UnitVectorSet>,
}

impl DenseLayer {
    pub fn shape(&self) -> MatrixShape {
        self.weights.shape
    }

    fn units(&self) -> &UnitVectorSet {
        self.units.as_ref().expect("row layers carry unit vectors")
    }

    /// Weight values as an output-major dense matrix.
    pub fn dense_weights(&self) -> Vec<Vec<f64>> {
        let unpacked = self.weights.unpack();
        match self.weights.layout {
            Layout::Row => unpacked,
            Layout::Diagonal | Layout::DiagonalStepped => match self.shape().direction {
                // tall packs put the big axis first
                Direction::InToOut => {
                    let mut out = vec![vec![0.0; self.in_dim]; self.out_dim];
                    for (i, row) in unpacked.iter().enumerate() {
                        for (o, v) in row.iter().enumerate() {
                            out[o][i] = *v;
                        }
                    }
                    out
                }
                Direction::OutToIn => unpacked,
            },
        }
    }

    pub fn bias_values(&self) -> Vec<f64> {
        self.bias.slots()[..self.out_dim].to_vec()
    }
}

/// The packed model: ordered dense layers, each followed by a square
/// activation, plus the hyperparameters of the run.
#[derive(Clone, Debug)]
pub struct NetworkState {
    pub layers: Vec<DenseLayer>,
    pub layout: Layout,
    pub hyper: Hyperparams,
    pub dims: Vec<usize>,
    pub seed: u64,
    pub pad_policy: PadPolicy,
}

/// Pack pre-drawn layer parameters into a network.
pub fn build_network(
    inits: &[DenseInit],
    layout: Layout,
    hyper: Hyperparams,
    seed: u64,
    pad_policy: PadPolicy,
    ctx: &EngineContext,
) -> Result<NetworkState> {
    let mut layers = Vec::new();
    let mut dims = vec![
        inits
            .first()
            .ok_or_else(|| Error::Config("network needs at least one layer".into()))?
            .in_dim,
    ];
    for (idx, init) in inits.iter().enumerate() {
        if init.in_dim != *dims.last().unwrap() {
            return Err(Error::Config(format!(
                "layer {idx} expects {} inputs, previous layer emits {}",
                init.in_dim,
                dims.last().unwrap()
            )));
        }
        dims.push(init.out_dim);
        let shape = MatrixShape::for_layer(init.in_dim, init.out_dim, pad_policy)?;
        let n = shape.n_big;
        let (weights, units) = match layout {
            Layout::Row => {
                let packed = packing::pack_row_shaped(&init.weights, shape, ctx)?;
                (packed, Some(UnitVectorSet::new(n)))
            }
            Layout::Diagonal | Layout::DiagonalStepped => {
                // orient the dense matrix big-axis first
                let dense = match shape.direction {
                    Direction::InToOut => transpose_dense(&init.weights),
                    Direction::OutToIn => init.weights.clone(),
                };
                let stepped = layout == Layout::DiagonalStepped;
                (
                    packing::pack_diag_shaped(&dense, shape, stepped, ctx)?,
                    None,
                )
            }
        };
        let bias = ctx.encrypt(&SlotRegister::encode(&init.bias, n)?)?;
        layers.push(DenseLayer {
            weights,
            bias,
            in_dim: init.in_dim,
            out_dim: init.out_dim,
            units,
        });
    }
    Ok(NetworkState {
        layers,
        layout,
        hyper,
        dims,
        seed,
        pad_policy,
    })
}

/// Draw Gaussian parameters and pack them.
pub fn init_network(
    dims: &[usize],
    layout: Layout,
    hyper: Hyperparams,
    init_std: f64,
    seed: u64,
    ctx: &EngineContext,
) -> Result<NetworkState> {
    let inits = gaussian_init(dims, init_std, seed)?;
    build_network(&inits, layout, hyper, seed, PadPolicy::PadToMultiple, ctx)
}

fn transpose_dense(w: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let rows = w.len();
    let cols = w[0].len();
    (0..cols)
        .map(|j| (0..rows).map(|i| w[i][j]).collect())
        .collect()
}

/// Per-batch complements of the stored packs: the transposed form each
/// layer needs for the pass the stored form cannot serve.
pub struct TransitionForms {
    pub(crate) forms: Vec<PackedMatrix>,
}

/// Transpose one layer's stored pack into its complementary form.
pub(crate) fn transpose_layer(
    layer: &DenseLayer,
    layout: Layout,
    ctx: &EngineContext,
) -> Result<PackedMatrix> {
    match layout {
        Layout::Row => packing::transpose_row(&layer.weights, layer.units(), ctx),
        Layout::Diagonal => {
            if layer.weights.shape.r != 0 {
                packing::transpose_diag_ragged(&layer.weights, ctx)
            } else {
                packing::transpose_diag(&layer.weights, ctx)
            }
        }
        Layout::DiagonalStepped => packing::transpose_diag_stepped(&layer.weights, ctx),
    }
}

/// Transpose every layer's stored pack. For diagonal layouts this is the
/// rotation-only assembly and adds no multiplications.
pub fn transition(net: &NetworkState, ctx: &EngineContext) -> Result<TransitionForms> {
    let forms = net
        .layers
        .iter()
        .map(|layer| transpose_layer(layer, net.layout, ctx))
        .collect::<Result<Vec<_>>>()?;
    Ok(TransitionForms { forms })
}

/// Forward/backward record for one sample.
struct LayerTrace {
    /// Layer input, zero beyond the logical input slots.
    input: SlotRegister,
    /// Pre-activation `W x + b`.
    preact: SlotRegister,
}

/// A sample's forward state; backward consumes it.
pub struct SamplePass {
    traces: Vec<LayerTrace>,
    activation: SlotRegister,
}

impl SamplePass {
    /// Decrypted prediction over the logical output slots.
    pub fn prediction(&self, net: &NetworkState, ctx: &EngineContext) -> Result<Vec<f64>> {
        let out_dim = *net.dims.last().unwrap();
        let plain = ctx.decrypt(&self.activation)?;
        Ok(plain.slots()[..out_dim].to_vec())
    }
}

/// Square activation `u * u`; one ciphertext multiplication, one level.
pub fn square_forward(u: &SlotRegister, ctx: &EngineContext) -> Result<SlotRegister> {
    ctx.mul(u, u)
}

/// Dense transform only: `W x + b` in the layer's layout.
pub(crate) fn dense_forward(
    layer: &DenseLayer,
    form: &PackedMatrix,
    layout: Layout,
    x: &SlotRegister,
    ctx: &EngineContext,
) -> Result<SlotRegister> {
    match layout {
        Layout::Row => {
            let prod = packing::matvec_row(&layer.weights, x, layer.units(), ctx)?;
            ctx.add(&prod, &layer.bias)
        }
        Layout::Diagonal | Layout::DiagonalStepped => match layer.shape().direction {
            Direction::InToOut => {
                let prod = packing::matvec_diag(&layer.weights, x, ctx)?;
                ctx.add(&prod, &layer.bias)
            }
            Direction::OutToIn => {
                // the stored pack maps outputs to inputs; the transposed
                // form drives this layer forward on a replicated input
                let rep = packing::replicate_period(x, layer.shape().m_small, ctx)?;
                let prod = packing::matvec_diag(form, &rep, ctx)?;
                ctx.add(&prod, &layer.bias)
            }
        },
    }
}

/// One dense layer followed by the square activation.
fn layer_forward(
    layer: &DenseLayer,
    form: &PackedMatrix,
    layout: Layout,
    x: &SlotRegister,
    ctx: &EngineContext,
) -> Result<(LayerTrace, SlotRegister)> {
    let z = dense_forward(layer, form, layout, x, ctx)?;
    let a = square_forward(&z, ctx)?;
    Ok((
        LayerTrace {
            input: x.clone(),
            preact: z,
        },
        a,
    ))
}

/// Encode and encrypt one feature vector for the first layer.
fn encode_input(net: &NetworkState, features: &[f64], ctx: &EngineContext) -> Result<SlotRegister> {
    let first = &net.layers[0];
    if features.len() != first.in_dim {
        return Err(Error::Dimension {
            expected: first.in_dim,
            got: features.len(),
        });
    }
    let n = first.shape().n_big;
    ctx.encrypt(&SlotRegister::encode(features, n)?)
}

/// Run one sample through the network.
pub fn forward_sample(
    net: &NetworkState,
    forms: &TransitionForms,
    features: &[f64],
    ctx: &EngineContext,
) -> Result<SamplePass> {
    let mut x = encode_input(net, features, ctx)?;
    let mut traces = Vec::with_capacity(net.layers.len());
    for (layer, form) in net.layers.iter().zip(&forms.forms) {
        let x_in = x.resized(layer.shape().n_big);
        debug_assert!(
            ctx.noise_std() > 0.0
                || x.slots()[x.len().min(x_in.len())..]
                    .iter()
                    .all(|v| *v == 0.0)
        );
        let (trace, a) = layer_forward(layer, form, net.layout, &x_in, ctx)?;
        traces.push(trace);
        x = a;
    }
    Ok(SamplePass {
        traces,
        activation: x,
    })
}

/// Mean-squared-error loss over the logical output slots and its gradient.
///
/// The label is plaintext client data; its register is zero in the padded
/// slots, and the prediction is zero there by construction, so the
/// subtraction already leaves a gradient register that is zero outside the
/// logical outputs. The loss value itself is client-side bookkeeping.
pub fn mse_loss_grad(
    pred: &SlotRegister,
    label: &[f64],
    out_dim: usize,
    ctx: &EngineContext,
) -> Result<(f64, SlotRegister)> {
    if label.len() != out_dim {
        return Err(Error::Dimension {
            expected: out_dim,
            got: label.len(),
        });
    }
    if pred.len() < out_dim {
        return Err(Error::Dimension {
            expected: out_dim,
            got: pred.len(),
        });
    }
    let neg_label: Vec<f64> = label.iter().map(|v| -v).collect();
    let delta = ctx.add(pred, &SlotRegister::encode(&neg_label, pred.len())?)?;
    let pred_plain = if pred.is_cipher() {
        ctx.decrypt(pred)?
    } else {
        pred.clone()
    };
    let loss = pred_plain.slots()[..out_dim]
        .iter()
        .zip(label)
        .map(|(p, y)| (p - y) * (p - y))
        .sum::<f64>()
        / out_dim as f64;
    Ok((loss, delta))
}

/// Gradients produced by one sample.
pub struct SampleGrad {
    pub weight_grads: Vec<PackedMatrix>,
    pub bias_grads: Vec<SlotRegister>,
    pub loss: f64,
    pub correct: bool,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Row-layout weight gradient: isolate each output's error with a scaled
/// unit-vector mask, broadcast it across the register and multiply by the
/// layer input. The SGD scale rides along in the mask so the update itself
/// is a pure addition.
fn row_weight_grad(
    layer: &DenseLayer,
    delta_z: &SlotRegister,
    input: &SlotRegister,
    scale: f64,
    ctx: &EngineContext,
) -> Result<PackedMatrix> {
    let n = layer.shape().n_big;
    let mut parts = Vec::with_capacity(layer.out_dim);
    for j in 0..layer.out_dim {
        let mut mask = vec![0.0; n];
        mask[j] = scale;
        let isolated = ctx.mul(delta_z, &SlotRegister::encode(&mask, n)?)?;
        let mut broadcast = isolated.clone();
        for t in 1..n {
            broadcast = ctx.add(&broadcast, &ctx.rotate(&isolated, t as i64))?;
        }
        parts.push(ctx.mul(&broadcast, input)?);
    }
    Ok(PackedMatrix::from_parts(
        Layout::Row,
        layer.shape(),
        parts,
        layer.weights.parts_axis(),
    ))
}

/// Chain rule through the square activation: multiply the incoming error by
/// `2 z`, the factor two formed by a free addition. One ciphertext
/// multiplication.
pub(crate) fn chain_through_square(
    delta_a: &SlotRegister,
    preact: &SlotRegister,
    ctx: &EngineContext,
) -> Result<SlotRegister> {
    let two_z = ctx.add(preact, preact)?;
    ctx.mul(delta_a, &two_z)
}

/// Error for the layer below: the matrix-vector product against the
/// complementary (transposed) form.
pub(crate) fn backward_delta(
    layer: &DenseLayer,
    form: &PackedMatrix,
    layout: Layout,
    delta_z: &SlotRegister,
    ctx: &EngineContext,
) -> Result<SlotRegister> {
    match layout {
        Layout::Row => packing::matvec_row(form, delta_z, layer.units(), ctx),
        Layout::Diagonal | Layout::DiagonalStepped => match layer.shape().direction {
            Direction::InToOut => {
                let rep = packing::replicate_period(delta_z, layer.shape().m_small, ctx)?;
                packing::matvec_diag(form, &rep, ctx)
            }
            // the stored tall pack maps the output axis back to inputs
            Direction::OutToIn => packing::matvec_diag(&layer.weights, delta_z, ctx),
        },
    }
}

/// Weight gradient in the layer's own layout. `row_grad_scale` is folded
/// into the row layout's masks; diagonal gradients come back unscaled.
pub(crate) fn weight_gradient(
    layer: &DenseLayer,
    layout: Layout,
    input: &SlotRegister,
    delta_z: &SlotRegister,
    row_grad_scale: f64,
    ctx: &EngineContext,
) -> Result<PackedMatrix> {
    match layout {
        Layout::Row => row_weight_grad(layer, delta_z, input, row_grad_scale, ctx),
        Layout::Diagonal | Layout::DiagonalStepped => {
            let stepped = layout == Layout::DiagonalStepped;
            let shape = layer.shape();
            match shape.direction {
                Direction::InToOut => {
                    packing::outer_product_diag(input, delta_z, shape, stepped, ctx)
                }
                Direction::OutToIn => {
                    packing::outer_product_diag(delta_z, input, shape, stepped, ctx)
                }
            }
        }
    }
}

/// Backward pass for one sample. `row_grad_scale` is folded into the row
/// layout's gradient masks (use the negated learning rate over the batch
/// size during training, or 1.0 to read raw gradients); diagonal-layout
/// gradients are returned unscaled.
pub fn backward_sample(
    net: &NetworkState,
    forms: &TransitionForms,
    pass: &SamplePass,
    label: &[f64],
    row_grad_scale: f64,
    ctx: &EngineContext,
) -> Result<SampleGrad> {
    if pass.traces.len() != net.layers.len() {
        return Err(Error::MissingForward);
    }
    let out_dim = *net.dims.last().unwrap();
    let pred = pass.prediction(net, ctx)?;
    let (loss, mut delta_a) = mse_loss_grad(&pass.activation, label, out_dim, ctx)?;
    let correct = argmax(&pred) == argmax(label);

    let mut weight_grads: Vec<Option<PackedMatrix>> = (0..net.layers.len()).map(|_| None).collect();
    let mut bias_grads: Vec<Option<SlotRegister>> = (0..net.layers.len()).map(|_| None).collect();

    for (l, layer) in net.layers.iter().enumerate().rev() {
        let trace = &pass.traces[l];
        let delta_z = chain_through_square(&delta_a, &trace.preact, ctx)?;
        let grad = weight_gradient(
            layer,
            net.layout,
            &trace.input,
            &delta_z,
            row_grad_scale,
            ctx,
        )?;
        weight_grads[l] = Some(grad);
        bias_grads[l] = Some(delta_z.clone());

        let delta_x = backward_delta(layer, &forms.forms[l], net.layout, &delta_z, ctx)?;
        if l > 0 {
            delta_a = delta_x.resized(net.layers[l - 1].shape().n_big);
        }
    }

    Ok(SampleGrad {
        weight_grads: weight_grads.into_iter().map(Option::unwrap).collect(),
        bias_grads: bias_grads.into_iter().map(Option::unwrap).collect(),
        loss,
        correct,
    })
}

/// Apply averaged gradients: `w <- w - (lr / batch) * grad_sum`.
///
/// Diagonal gradients are scaled here with one plaintext multiplication per
/// part; row gradients arrive pre-scaled through their masks and are only
/// added. Bias updates scale with the same plaintext constant in either
/// layout.
pub fn apply_update(
    net: &mut NetworkState,
    grad_sums: Vec<PackedMatrix>,
    bias_sums: Vec<SlotRegister>,
    lr_over_batch: f64,
    ctx: &EngineContext,
) -> Result<()> {
    for ((layer, grad), bias_grad) in net.layers.iter_mut().zip(grad_sums).zip(bias_sums) {
        if grad.layout != layer.weights.layout {
            return Err(Error::Layout {
                expected: layer.weights.layout.name(),
                got: grad.layout.name(),
            });
        }
        let n = layer.weights.register_length();
        let neg_scale = SlotRegister::constant(-lr_over_batch, n);
        match net.layout {
            Layout::Row => {
                for (part, gpart) in layer.weights.parts_mut().iter_mut().zip(grad.parts()) {
                    *part = ctx.add(part, gpart)?;
                }
            }
            Layout::Diagonal | Layout::DiagonalStepped => {
                for (part, gpart) in layer.weights.parts_mut().iter_mut().zip(grad.parts()) {
                    let scaled = ctx.mul(gpart, &neg_scale)?;
                    *part = ctx.add(part, &scaled)?;
                }
            }
        }
        let scaled_bias = ctx.mul(&bias_grad, &neg_scale)?;
        layer.bias = ctx.add(&layer.bias, &scaled_bias)?;
    }
    Ok(())
}

/// Client-side refresh: decrypt and re-encrypt every model register at the
/// full level budget. Slot values are untouched and no homomorphic
/// operation is counted.
pub fn repack(net: &mut NetworkState, ctx: &EngineContext) -> Result<()> {
    for layer in &mut net.layers {
        for part in layer.weights.parts_mut() {
            *part = ctx.encrypt(&ctx.decrypt(part)?)?;
        }
        layer.bias = ctx.encrypt(&ctx.decrypt(&layer.bias)?)?;
    }
    Ok(())
}

/// Feature/label pairs for a training run.
#[derive(Clone, Debug, Default)]
pub struct DataSplit {
    pub train_features: Vec<Vec<f64>>,
    pub train_labels: Vec<Vec<f64>>,
    pub test_features: Vec<Vec<f64>>,
    pub test_labels: Vec<Vec<f64>>,
}

/// Runtime knobs for [`train`] beyond the network's own hyperparameters.
#[derive(Clone, Copy, Debug)]
pub struct TrainOptions {
    pub threads: usize,
    /// Refresh levels after every batch. Disabling this exhausts the level
    /// budget after a handful of batches; it exists to demonstrate exactly
    /// that.
    pub repack_each_batch: bool,
    /// First epoch index, used when resuming from a checkpoint.
    pub start_epoch: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            threads: 1,
            repack_each_batch: true,
            start_epoch: 0,
        }
    }
}

/// Deterministic per-epoch sample order shared with the plaintext trainer.
pub fn epoch_permutation(seed: u64, epoch: usize, len: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = StdRng::seed_from_u64(derive_seed(seed, SHUFFLE_SALT + epoch as u64));
    order.shuffle(&mut rng);
    order
}

fn sample_salt(kind: u64, epoch: usize, index: usize) -> u64 {
    derive_seed(kind, ((epoch as u64) << 32) | index as u64)
}

struct BatchOutcome {
    loss_sum: f64,
    correct: usize,
}

/// One batch: transition, per-sample passes, gradient averaging, update and
/// (by default) repacking.
fn run_batch(
    net: &mut NetworkState,
    features: &[&[f64]],
    labels: &[&[f64]],
    salts: &[u64],
    opts: &TrainOptions,
    ctx: &EngineContext,
) -> Result<BatchOutcome> {
    let forms = transition(net, ctx)?;
    let batch = features.len();
    let scale = net.hyper.learning_rate / batch as f64;
    let row_scale = -scale;

    let run_one = |i: usize| -> Result<SampleGrad> {
        let sctx = ctx.fork(salts[i]);
        let pass = forward_sample(net, &forms, features[i], &sctx)?;
        backward_sample(net, &forms, &pass, labels[i], row_scale, &sctx)
    };
    let grads: Vec<SampleGrad> = if opts.threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| {
            (0..batch)
                .into_par_iter()
                .map(run_one)
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        (0..batch).map(run_one).collect::<Result<Vec<_>>>()?
    };

    // reduce in sample order so results are independent of scheduling
    let mut iter = grads.into_iter();
    let first = iter
        .next()
        .ok_or_else(|| Error::Config("empty batch".into()))?;
    let mut weight_sums = first.weight_grads;
    let mut bias_sums = first.bias_grads;
    let mut loss_sum = first.loss;
    let mut correct = usize::from(first.correct);
    for g in iter {
        for (acc, part) in weight_sums.iter_mut().zip(g.weight_grads) {
            for (a, p) in acc.parts_mut().iter_mut().zip(part.parts()) {
                *a = ctx.add(a, p)?;
            }
        }
        for (acc, b) in bias_sums.iter_mut().zip(g.bias_grads) {
            *acc = ctx.add(acc, &b)?;
        }
        loss_sum += g.loss;
        correct += usize::from(g.correct);
    }

    apply_update(net, weight_sums, bias_sums, scale, ctx)?;
    if opts.repack_each_batch {
        repack(net, ctx)?;
    }
    Ok(BatchOutcome { loss_sum, correct })
}

/// Forward-only evaluation: mean loss and accuracy over a sample set.
pub fn evaluate(
    net: &NetworkState,
    features: &[Vec<f64>],
    labels: &[Vec<f64>],
    epoch: usize,
    ctx: &EngineContext,
) -> Result<(f64, f64)> {
    if features.is_empty() {
        return Ok((0.0, 0.0));
    }
    let forms = transition(net, ctx)?;
    let out_dim = *net.dims.last().unwrap();
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for (i, (x, y)) in features.iter().zip(labels).enumerate() {
        let sctx = ctx.fork(sample_salt(EVAL_SALT, epoch, i));
        let pass = forward_sample(net, &forms, x, &sctx)?;
        let (loss, _) = mse_loss_grad(&pass.activation, y, out_dim, &sctx)?;
        loss_sum += loss;
        let pred = pass.prediction(net, &sctx)?;
        if argmax(&pred) == argmax(y) {
            correct += 1;
        }
    }
    Ok((
        loss_sum / features.len() as f64,
        correct as f64 / features.len() as f64,
    ))
}

/// Full training loop: seeded shuffles, batched SGD with per-batch
/// repacking, and per-epoch train/test metrics with cumulative operation
/// counters.
pub fn train(
    net: &mut NetworkState,
    data: &DataSplit,
    opts: &TrainOptions,
    ctx: &EngineContext,
) -> Result<TrainingMetrics> {
    if data.train_features.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let n_train = data.train_features.len();
    let batch_size = net.hyper.batch_size.max(1);
    let mut records = Vec::with_capacity(net.hyper.epochs);

    for epoch in opts.start_epoch..opts.start_epoch + net.hyper.epochs {
        let order = epoch_permutation(net.seed, epoch, n_train);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (b, chunk) in order.chunks(batch_size).enumerate() {
            let features: Vec<&[f64]> = chunk
                .iter()
                .map(|&i| data.train_features[i].as_slice())
                .collect();
            let labels: Vec<&[f64]> = chunk
                .iter()
                .map(|&i| data.train_labels[i].as_slice())
                .collect();
            let salts: Vec<u64> = (0..chunk.len())
                .map(|j| sample_salt(TRAIN_SALT, epoch, b * batch_size + j))
                .collect();
            let outcome =
                run_batch(net, &features, &labels, &salts, opts, ctx).map_err(|e| match e {
                    Error::DepthBudget { needed, available } => Error::DepthBudgetAt {
                        epoch,
                        batch: b,
                        needed,
                        available,
                    },
                    other => other,
                })?;
            loss_sum += outcome.loss_sum;
            correct += outcome.correct;
        }
        let (test_loss, test_acc) =
            evaluate(net, &data.test_features, &data.test_labels, epoch, ctx)?;
        let counters = ctx.counters();
        records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n_train as f64,
            test_loss,
            train_acc: correct as f64 / n_train as f64,
            test_acc,
            cum_mults: counters.mults(),
            cum_rotations: counters.rotations,
            min_level: ctx.min_level_seen(),
        });
    }
    Ok(TrainingMetrics::new(
        records,
        ctx.counters(),
        ctx.min_level_seen(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hyper() -> Hyperparams {
        Hyperparams {
            learning_rate: 0.1,
            batch_size: 1,
            epochs: 1,
        }
    }

    fn layer_init(weights: Vec<Vec<f64>>, bias: Vec<f64>) -> DenseInit {
        DenseInit {
            in_dim: weights[0].len(),
            out_dim: weights.len(),
            weights,
            bias,
        }
    }

    #[test]
    fn init_is_deterministic_under_seed() {
        let ctx = EngineContext::exact(9);
        let a = init_network(&[4, 10, 3], Layout::Diagonal, hyper(), 0.1, 7, &ctx).unwrap();
        let b = init_network(&[4, 10, 3], Layout::Diagonal, hyper(), 0.1, 7, &ctx).unwrap();
        for (x, y) in a.layers.iter().zip(&b.layers) {
            assert_eq!(x.dense_weights(), y.dense_weights());
            assert_eq!(x.bias_values(), y.bias_values());
        }
    }

    #[test]
    fn zero_init_gives_bias_only_output() {
        let ctx = EngineContext::exact(9);
        let net = init_network(&[3, 2], Layout::Diagonal, hyper(), 0.0, 1, &ctx).unwrap();
        let forms = transition(&net, &ctx).unwrap();
        let pass = forward_sample(&net, &forms, &[1.0, 2.0, 3.0], &ctx).unwrap();
        let pred = pass.prediction(&net, &ctx).unwrap();
        assert_eq!(pred, vec![0.0, 0.0]);
    }

    #[test]
    fn table2_layer_shapes() {
        let ctx = EngineContext::exact(9);
        let net = init_network(&[6, 3, 1], Layout::Diagonal, hyper(), 0.1, 1, &ctx).unwrap();
        assert_eq!(
            (net.layers[0].shape().n_big, net.layers[0].shape().m_small),
            (6, 3)
        );
        assert_eq!(
            (net.layers[1].shape().n_big, net.layers[1].shape().m_small),
            (3, 1)
        );
    }

    #[test]
    fn dense_forward_matches_hand_example() {
        let ctx = EngineContext::exact(9);
        let init = layer_init(vec![vec![1.0, 2.0], vec![3.0, 4.0]], vec![1.0, 1.0]);
        for layout in [Layout::Row, Layout::Diagonal, Layout::DiagonalStepped] {
            let net = build_network(
                std::slice::from_ref(&init),
                layout,
                hyper(),
                1,
                PadPolicy::PadToMultiple,
                &ctx,
            )
            .unwrap();
            let forms = transition(&net, &ctx).unwrap();
            let layer = &net.layers[0];
            let x = encode_input(&net, &[1.0, 1.0], &ctx).unwrap();
            let (trace, _a) = layer_forward(layer, &forms.forms[0], layout, &x, &ctx).unwrap();
            let z = ctx.decrypt(&trace.preact).unwrap();
            assert!((z.slots()[0] - 4.0).abs() < 1e-12, "{layout:?}");
            assert!((z.slots()[1] - 8.0).abs() < 1e-12, "{layout:?}");
        }
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let ctx = EngineContext::exact(9);
        let eye = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        let net = build_network(
            &[layer_init(eye, vec![0.0; 3])],
            Layout::Diagonal,
            hyper(),
            1,
            PadPolicy::PadToMultiple,
            &ctx,
        )
        .unwrap();
        let forms = transition(&net, &ctx).unwrap();
        let x = encode_input(&net, &[5.0, 6.0, 7.0], &ctx).unwrap();
        let (trace, _) =
            layer_forward(&net.layers[0], &forms.forms[0], Layout::Diagonal, &x, &ctx).unwrap();
        let z = ctx.decrypt(&trace.preact).unwrap();
        assert_eq!(&z.slots()[..3], &[5.0, 6.0, 7.0]);
    }

    #[test]
    fn square_forward_squares_and_costs_a_level() {
        let ctx = EngineContext::exact(9);
        let u = ctx
            .encrypt(&SlotRegister::encode(&[1.0, 2.0, 3.0], 3).unwrap())
            .unwrap();
        let a = square_forward(&u, &ctx).unwrap();
        assert_eq!(a.slots(), &[1.0, 4.0, 9.0]);
        assert_eq!(a.level(), 8);
        let zero = ctx.encrypt(&SlotRegister::zeros(4)).unwrap();
        assert!(square_forward(&zero, &ctx)
            .unwrap()
            .slots()
            .iter()
            .all(|v| *v == 0.0));
    }

    #[test]
    fn mse_matches_hand_example_and_ignores_padding() {
        let ctx = EngineContext::exact(9);
        let pred = ctx
            .encrypt(&SlotRegister::encode(&[1.0, 0.0, 0.0], 3).unwrap())
            .unwrap();
        let (loss, delta) = mse_loss_grad(&pred, &[0.0, 1.0, 0.0], 3, &ctx).unwrap();
        assert!((loss - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(ctx.decrypt(&delta).unwrap().slots(), &[1.0, -1.0, 0.0]);

        // equal pred and label: zero loss, zero gradient
        let pred = ctx
            .encrypt(&SlotRegister::encode(&[0.25, 0.5], 4).unwrap())
            .unwrap();
        let (loss, delta) = mse_loss_grad(&pred, &[0.25, 0.5], 2, &ctx).unwrap();
        assert_eq!(loss, 0.0);
        assert!(ctx
            .decrypt(&delta)
            .unwrap()
            .slots()
            .iter()
            .all(|v| *v == 0.0));
    }

    /// Scalar network, worked by hand: w = 2, b = 0, x = 3, label 1.
    /// z = 6, a = 36, loss = 1225, d_pred = 35, d_z = 35 * 12 = 420,
    /// grad_w = 420 * 3 = 1260, grad_b = 420, d_x = 2 * 420 = 840.
    #[test]
    fn scalar_chain_rule_matches_hand_computation() {
        for layout in [Layout::Row, Layout::Diagonal, Layout::DiagonalStepped] {
            let ctx = EngineContext::exact(9);
            let init = layer_init(vec![vec![2.0]], vec![0.0]);
            let net =
                build_network(&[init], layout, hyper(), 1, PadPolicy::PadToMultiple, &ctx).unwrap();
            let forms = transition(&net, &ctx).unwrap();
            let pass = forward_sample(&net, &forms, &[3.0], &ctx).unwrap();
            let grad = backward_sample(&net, &forms, &pass, &[1.0], 1.0, &ctx).unwrap();
            assert!((grad.loss - 1225.0).abs() < 1e-9, "{layout:?}");
            let gw = grad.weight_grads[0].unpack()[0][0];
            assert!((gw - 1260.0).abs() < 1e-9, "{layout:?}: grad_w = {gw}");
            let gb = ctx.decrypt(&grad.bias_grads[0]).unwrap().slots()[0];
            assert!((gb - 420.0).abs() < 1e-9, "{layout:?}: grad_b = {gb}");
        }
    }

    #[test]
    fn zero_error_gives_zero_gradients() {
        let ctx = EngineContext::exact(9);
        let init = layer_init(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0]);
        let net = build_network(
            &[init],
            Layout::Diagonal,
            hyper(),
            1,
            PadPolicy::PadToMultiple,
            &ctx,
        )
        .unwrap();
        let forms = transition(&net, &ctx).unwrap();
        let pass = forward_sample(&net, &forms, &[2.0, 3.0], &ctx).unwrap();
        // label equals prediction (4, 9), so nothing propagates
        let grad = backward_sample(&net, &forms, &pass, &[4.0, 9.0], 1.0, &ctx).unwrap();
        assert!(grad.weight_grads[0]
            .unpack()
            .iter()
            .flatten()
            .all(|v| *v == 0.0));
        assert_eq!(grad.loss, 0.0);
    }

    #[test]
    fn sgd_update_matches_hand_arithmetic() {
        let ctx = EngineContext::exact(9);
        let init = layer_init(vec![vec![1.0]], vec![0.0]);
        let mut net = build_network(
            &[init],
            Layout::Diagonal,
            hyper(),
            1,
            PadPolicy::PadToMultiple,
            &ctx,
        )
        .unwrap();
        let shape = net.layers[0].shape();
        let grad_part = ctx
            .encrypt(&SlotRegister::encode(&[2.0], 1).unwrap())
            .unwrap();
        let grads = vec![PackedMatrix::from_parts(
            Layout::Diagonal,
            shape,
            vec![grad_part],
            packing::Axis::Big,
        )];
        let bias = vec![ctx.encrypt(&SlotRegister::zeros(1)).unwrap()];
        apply_update(&mut net, grads, bias, 0.1, &ctx).unwrap();
        assert!((net.layers[0].dense_weights()[0][0] - 0.8).abs() < 1e-12);

        // zero learning rate leaves the weights alone
        let grads = vec![PackedMatrix::from_parts(
            Layout::Diagonal,
            shape,
            vec![ctx
                .encrypt(&SlotRegister::encode(&[5.0], 1).unwrap())
                .unwrap()],
            packing::Axis::Big,
        )];
        let bias = vec![ctx.encrypt(&SlotRegister::zeros(1)).unwrap()];
        apply_update(&mut net, grads, bias, 0.0, &ctx).unwrap();
        assert!((net.layers[0].dense_weights()[0][0] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn repack_restores_levels_and_preserves_values() {
        let ctx = EngineContext::exact(9);
        let mut net = init_network(&[4, 2], Layout::Diagonal, hyper(), 0.1, 3, &ctx).unwrap();
        let before = net.layers[0].dense_weights();
        // burn a level on every part
        let ones = SlotRegister::constant(1.0, net.layers[0].shape().n_big);
        for part in net.layers[0].weights.parts_mut() {
            *part = ctx.mul(part, &ones).unwrap();
        }
        assert_eq!(net.layers[0].weights.min_level(), 8);
        let counters = ctx.counters();
        repack(&mut net, &ctx).unwrap();
        assert_eq!(net.layers[0].weights.min_level(), 9);
        assert_eq!(net.layers[0].dense_weights(), before);
        // repacking is client work and counts nothing
        assert_eq!(ctx.counters(), counters);
    }

    #[test]
    fn training_without_repack_exhausts_the_budget() {
        let data = DataSplit {
            train_features: vec![vec![0.5; 6]; 4],
            train_labels: vec![vec![1.0, 0.0, 0.0]; 4],
            ..Default::default()
        };
        let mk_net = |ctx: &EngineContext| {
            let h = Hyperparams {
                learning_rate: 0.1,
                batch_size: 1,
                epochs: 2,
            };
            init_network(&[6, 3], Layout::Diagonal, h, 0.1, 1, ctx).unwrap()
        };
        let ctx = EngineContext::exact(9);
        let mut net = mk_net(&ctx);
        let opts = TrainOptions {
            repack_each_batch: false,
            ..TrainOptions::default()
        };
        assert!(train(&mut net, &data, &opts, &ctx).is_err());

        let ctx = EngineContext::exact(9);
        let mut net = mk_net(&ctx);
        assert!(train(&mut net, &data, &TrainOptions::default(), &ctx).is_ok());
    }

    #[test]
    fn lr_zero_keeps_metrics_flat() {
        let ctx = EngineContext::exact(9);
        let h = Hyperparams {
            learning_rate: 0.0,
            batch_size: 2,
            epochs: 3,
        };
        let mut net = init_network(&[4, 2], Layout::Diagonal, h, 0.1, 11, &ctx).unwrap();
        let data = DataSplit {
            train_features: vec![vec![0.1, 0.2, 0.3, 0.4]; 4],
            train_labels: vec![vec![1.0, 0.0]; 4],
            test_features: vec![vec![0.4, 0.3, 0.2, 0.1]; 2],
            test_labels: vec![vec![0.0, 1.0]; 2],
        };
        let metrics = train(&mut net, &data, &TrainOptions::default(), &ctx).unwrap();
        let first = &metrics.epochs[0];
        for rec in &metrics.epochs {
            assert!((rec.train_loss - first.train_loss).abs() < 1e-12);
            assert!((rec.test_loss - first.test_loss).abs() < 1e-12);
        }
    }

    #[test]
    fn thread_count_does_not_change_the_trajectory() {
        let data = DataSplit {
            train_features: (0..8)
                .map(|i| (0..4).map(|j| ((i * 4 + j) as f64) / 32.0).collect())
                .collect(),
            train_labels: (0..8)
                .map(|i| {
                    vec![
                        f64::from(u8::from(i % 2 == 0)),
                        f64::from(u8::from(i % 2 == 1)),
                    ]
                })
                .collect(),
            test_features: vec![vec![0.1, 0.5, 0.2, 0.7]; 2],
            test_labels: vec![vec![1.0, 0.0]; 2],
        };
        let h = Hyperparams {
            learning_rate: 0.1,
            batch_size: 4,
            epochs: 3,
        };
        let run = |threads: usize| {
            let ctx = EngineContext::new(9, 1e-6, 5);
            let mut net = init_network(&[4, 2], Layout::Diagonal, h, 0.1, 5, &ctx).unwrap();
            let opts = TrainOptions {
                threads,
                ..TrainOptions::default()
            };
            let m = train(&mut net, &data, &opts, &ctx).unwrap();
            (
                net.layers[0].dense_weights(),
                m.epochs.last().unwrap().train_loss,
            )
        };
        let (w1, l1) = run(1);
        let (w4, l4) = run(4);
        assert_eq!(w1, w4);
        assert_eq!(l1, l4);
    }
}
