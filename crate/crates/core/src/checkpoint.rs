//! Versioned JSON checkpoints for packed networks.
//!
//! The document stores decrypted slot values (checkpointing is client work),
//! layer shapes with both original and padded dimensions, the
//! hyperparameters and the run seed, so a load can re-encrypt the model and
//! continue the exact training trajectory.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::{EngineContext, SlotRegister};
use crate::error::{Error, Result};
use crate::nn::{Hyperparams, NetworkState};
use crate::packing::{Axis, Direction, Layout, MatrixShape, PackedMatrix, PadPolicy};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ShapeDoc {
    n_big: usize,
    m_small: usize,
    q: usize,
    r: usize,
    orig_in: usize,
    orig_out: usize,
    direction: String,
}

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    shape: ShapeDoc,
    parts: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    version: u32,
    layout: String,
    dims: Vec<usize>,
    seed: u64,
    epochs_done: usize,
    learning_rate: f64,
    batch_size: usize,
    epochs: usize,
    pad_policy: String,
    layers: Vec<LayerDoc>,
}

fn layout_name(layout: Layout) -> &'static str {
    match layout {
        Layout::Row => "row",
        Layout::Diagonal => "diag",
        Layout::DiagonalStepped => "diag-stepped",
    }
}

fn layout_from(name: &str) -> Result<Layout> {
    match name {
        "row" => Ok(Layout::Row),
        "diag" => Ok(Layout::Diagonal),
        "diag-stepped" => Ok(Layout::DiagonalStepped),
        other => Err(Error::Data(format!("unknown layout '{other}'"))),
    }
}

/// Serialize a network (plus the number of epochs already run) to JSON.
pub fn to_json(net: &NetworkState, epochs_done: usize, ctx: &EngineContext) -> Result<String> {
    let layers = net
        .layers
        .iter()
        .map(|layer| -> Result<LayerDoc> {
            let shape = layer.shape();
            let parts = layer
                .weights
                .parts()
                .iter()
                .map(|p| Ok(ctx.decrypt(p)?.slots().to_vec()))
                .collect::<Result<Vec<_>>>()?;
            let bias = ctx.decrypt(&layer.bias)?.slots().to_vec();
            Ok(LayerDoc {
                shape: ShapeDoc {
                    n_big: shape.n_big,
                    m_small: shape.m_small,
                    q: shape.q,
                    r: shape.r,
                    orig_in: shape.orig_in,
                    orig_out: shape.orig_out,
                    direction: match shape.direction {
                        Direction::InToOut => "in_to_out".into(),
                        Direction::OutToIn => "out_to_in".into(),
                    },
                },
                parts,
                bias,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let doc = CheckpointDoc {
        version: CHECKPOINT_VERSION,
        layout: layout_name(net.layout).into(),
        dims: net.dims.clone(),
        seed: net.seed,
        epochs_done,
        learning_rate: net.hyper.learning_rate,
        batch_size: net.hyper.batch_size,
        epochs: net.hyper.epochs,
        pad_policy: match net.pad_policy {
            PadPolicy::PadToMultiple => "pad".into(),
            PadPolicy::Ragged => "ragged".into(),
        },
        layers,
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

pub fn save(
    net: &NetworkState,
    epochs_done: usize,
    ctx: &EngineContext,
    path: &Path,
) -> Result<()> {
    std::fs::write(path, to_json(net, epochs_done, ctx)?)?;
    Ok(())
}

/// Rebuild a network from a checkpoint document, re-encrypting every
/// register at the context's full budget. Returns the network and the number
/// of epochs it had already trained.
pub fn from_json(text: &str, ctx: &EngineContext) -> Result<(NetworkState, usize)> {
    let doc: CheckpointDoc = serde_json::from_str(text)?;
    if doc.version != CHECKPOINT_VERSION {
        return Err(Error::Data(format!(
            "unsupported checkpoint version {}",
            doc.version
        )));
    }
    let layout = layout_from(&doc.layout)?;
    let pad_policy = match doc.pad_policy.as_str() {
        "pad" => PadPolicy::PadToMultiple,
        "ragged" => PadPolicy::Ragged,
        other => return Err(Error::Data(format!("unknown pad policy '{other}'"))),
    };
    let mut layers = Vec::with_capacity(doc.layers.len());
    for (idx, layer) in doc.layers.iter().enumerate() {
        let direction = match layer.shape.direction.as_str() {
            "in_to_out" => Direction::InToOut,
            "out_to_in" => Direction::OutToIn,
            other => return Err(Error::Data(format!("unknown direction '{other}'"))),
        };
        let shape = MatrixShape {
            n_big: layer.shape.n_big,
            m_small: layer.shape.m_small,
            q: layer.shape.q,
            r: layer.shape.r,
            orig_in: layer.shape.orig_in,
            orig_out: layer.shape.orig_out,
            direction,
        };
        let parts = layer
            .parts
            .iter()
            .map(|slots| ctx.encrypt(&SlotRegister::encode(slots, shape.n_big)?))
            .collect::<Result<Vec<_>>>()?;
        let parts_axis = match layout {
            Layout::Diagonal | Layout::DiagonalStepped => Axis::Big,
            Layout::Row => match direction {
                Direction::InToOut => Axis::Small,
                Direction::OutToIn => Axis::Big,
            },
        };
        let weights = PackedMatrix::from_parts(layout, shape, parts, parts_axis);
        let bias = ctx.encrypt(&SlotRegister::encode(&layer.bias, shape.n_big)?)?;
        let expected_parts = match layout {
            Layout::Diagonal | Layout::DiagonalStepped => shape.n_big,
            Layout::Row => shape.orig_out,
        };
        if weights.parts().len() != expected_parts {
            return Err(Error::Data(format!(
                "layer {idx}: expected {expected_parts} parts, found {}",
                weights.parts().len()
            )));
        }
        layers.push(crate::nn::DenseLayer {
            weights,
            bias,
            in_dim: shape.orig_in,
            out_dim: shape.orig_out,
            units: match layout {
                Layout::Row => Some(crate::packing::UnitVectorSet::new(shape.n_big)),
                _ => None,
            },
        });
    }
    let net = NetworkState {
        layers,
        layout,
        hyper: Hyperparams {
            learning_rate: doc.learning_rate,
            batch_size: doc.batch_size,
            epochs: doc.epochs,
        },
        dims: doc.dims,
        seed: doc.seed,
        pad_policy,
    };
    Ok((net, doc.epochs_done))
}

pub fn load(path: &Path, ctx: &EngineContext) -> Result<(NetworkState, usize)> {
    let text = std::fs::read_to_string(path)?;
    from_json(&text, ctx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_network, Hyperparams};

    #[test]
    fn checkpoint_round_trip_is_slotwise_identical() {
        let ctx = EngineContext::exact(9);
        let hyper = Hyperparams {
            learning_rate: 0.1,
            batch_size: 20,
            epochs: 400,
        };
        for layout in [Layout::Row, Layout::Diagonal, Layout::DiagonalStepped] {
            let net = init_network(&[4, 10, 3], layout, hyper, 0.1, 42, &ctx).unwrap();
            let json = to_json(&net, 7, &ctx).unwrap();
            let (restored, done) = from_json(&json, &ctx).unwrap();
            assert_eq!(done, 7);
            assert_eq!(restored.dims, net.dims);
            for (a, b) in restored.layers.iter().zip(&net.layers) {
                assert_eq!(a.weights.parts().len(), b.weights.parts().len());
                for (pa, pb) in a.weights.parts().iter().zip(b.weights.parts()) {
                    assert_eq!(pa.slots(), pb.slots());
                }
                assert_eq!(
                    ctx.decrypt(&a.bias).unwrap().slots(),
                    ctx.decrypt(&b.bias).unwrap().slots()
                );
            }
        }
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let ctx = EngineContext::exact(9);
        let hyper = Hyperparams {
            learning_rate: 0.1,
            batch_size: 1,
            epochs: 1,
        };
        let net = init_network(&[2, 1], Layout::Diagonal, hyper, 0.1, 1, &ctx).unwrap();
        let json = to_json(&net, 0, &ctx)
            .unwrap()
            .replace("\"version\": 1", "\"version\": 99");
        assert!(from_json(&json, &ctx).is_err());
    }
}
