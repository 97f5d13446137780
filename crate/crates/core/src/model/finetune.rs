use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Activation, Layer, MlpModel};
use crate::error::{Error, Result};
use crate::rng;

/// Hidden widths of the trainable head appended for fine-tuning. A linear
/// output layer is always added after them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadSpec {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for HeadSpec {
    fn default() -> Self {
        Self { hidden: vec![16], activation: Activation::Tanh }
    }
}

/// Replaces the base model's output layer with a fresh trainable head and
/// freezes every retained base layer.
pub fn extend_for_finetune(base: &MlpModel, head: &HeadSpec, seed: u64) -> Result<MlpModel> {
    if head.hidden.is_empty() || head.hidden.contains(&0) {
        return Err(Error::config(format!("head spec needs at least one non-zero hidden width, got {:?}", head.hidden)));
    }
    if base.len() < 2 {
        return Err(Error::config("base model needs a hidden layer to extend"));
    }
    let mut layers: Vec<Layer> = base.layers()[..base.len() - 1].iter().cloned().map(|l| l.frozen(true)).collect();
    let mut width = layers.last().expect("at least one retained layer").outputs();
    let mut rng = rng::stream(seed, "head-init");
    for &h in &head.hidden {
        layers.push(Layer::xavier(width, h, head.activation, &mut rng));
        width = h;
    }
    layers.push(Layer::xavier(width, base.output_dim(), Activation::Linear, &mut rng));
    MlpModel::new(layers)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_shapes_chain_from_last_hidden_layer() {
        let base = MlpModel::thermal_default(1);
        let ext = extend_for_finetune(&base, &HeadSpec::default(), 2).unwrap();
        assert_eq!(ext.len(), 4);
        assert_eq!(ext.layer(2).weights.shape(), (16, 32));
        assert_eq!(ext.layer(3).weights.shape(), (1, 16));
        assert_eq!(ext.frozen_mask(), vec![true, true, false, false]);
        assert_eq!(ext.layer(0).weights, base.layer(0).weights);
        assert_eq!(ext.output_dim(), 1);
    }

    #[test]
    fn empty_head_is_rejected() {
        let base = MlpModel::thermal_default(1);
        let spec = HeadSpec { hidden: vec![], ..Default::default() };
        assert!(matches!(extend_for_finetune(&base, &spec, 0), Err(Error::Config(_))));
    }
}
