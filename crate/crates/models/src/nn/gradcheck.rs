//! Central-difference check of the hand-written backward pass.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::network::{cross_entropy, Mode, Network};
use super::Tensor;
use crate::ModelError;

pub const FD_STEP: f64 = 1e-6;

/// Gradients smaller than this are compared in absolute rather than
/// relative terms: with a 1e-6 step the finite difference itself carries
/// roughly 1e-10 of rounding noise.
pub const RELATIVE_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerCheck {
    pub kind: String,
    pub checked: usize,
    pub max_relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    /// Keyed by layer kind (`dense`, `conv1d`, `batch_norm`).
    pub per_kind: BTreeMap<String, LayerCheck>,
    pub max_relative_error: f64,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

fn loss_at(net: &Network, x: &Tensor, y: &[usize], seed: u64) -> Result<f64, ModelError> {
    let pass = net.forward(x, Mode::Train, seed)?;
    Ok(cross_entropy(&pass.logits, y))
}

/// Compares analytic gradients with central differences on up to
/// `per_kind` randomly chosen parameters of each layer kind. Train mode is
/// used with a fixed `seed`, so dropout masks are identical across the
/// perturbed evaluations.
pub fn grad_check(net: &Network, x: &Tensor, y: &[usize], seed: u64, per_kind: usize) -> Result<GradCheckReport, ModelError> {
    if net.n_parameters() > 10_000 {
        return Err(ModelError::Parameter(format!(
            "gradient check needs at most 10000 parameters, network has {}",
            net.n_parameters()
        )));
    }
    let pass = net.forward(x, Mode::Train, seed)?;
    let (_, grads) = net.backward(&pass, y)?;

    // every (layer, tensor, index) grouped by layer kind
    let mut slots: BTreeMap<&'static str, Vec<(usize, usize, usize)>> = BTreeMap::new();
    for (li, layer) in net.layers.iter().enumerate() {
        let kind = net.spec.layers[li].kind_name();
        for (ti, (t, _)) in layer.trainable().iter().enumerate() {
            for k in 0..t.len() {
                slots.entry(kind).or_default().push((li, ti, k));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut probe = net.clone();
    let mut per_kind_report = BTreeMap::new();
    let mut overall: f64 = 0.0;
    for (kind, all) in slots {
        let chosen = sample(&mut rng, all.len(), per_kind.min(all.len())).into_vec();
        let mut worst: f64 = 0.0;
        for &c in &chosen {
            let (li, ti, k) = all[c];
            let original = probe.layers[li].trainable()[ti].0[k];
            probe.layers[li].trainable_mut()[ti].0[k] = original + FD_STEP;
            let plus = loss_at(&probe, x, y, seed)?;
            probe.layers[li].trainable_mut()[ti].0[k] = original - FD_STEP;
            let minus = loss_at(&probe, x, y, seed)?;
            probe.layers[li].trainable_mut()[ti].0[k] = original;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let analytic = grads[li].trainable()[ti].0[k];
            worst = worst.max(relative_error(analytic, numeric));
        }
        overall = overall.max(worst);
        per_kind_report.insert(
            kind.to_string(),
            LayerCheck {
                kind: kind.to_string(),
                checked: chosen.len(),
                max_relative_error: worst,
            },
        );
    }
    Ok(GradCheckReport {
        per_kind: per_kind_report,
        max_relative_error: overall,
    })
}
