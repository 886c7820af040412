//! Named parameter table and deterministic initialization.

use super::{EncoderSpec, LayerKind, LayerSpec, NetworkSpec};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{build_tensor, Scalar, Shape, Tensor};
use std::collections::HashMap;

/// Flat ordered table of named weight/bias tensors plus switch omegas.
/// Order is the canonical spec-walk order and is stable for checkpoints.
#[derive(Clone, Debug)]
pub struct ModelParams<T: Scalar = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn from_pairs(pairs: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let mut p = ModelParams {
            names: Vec::with_capacity(pairs.len()),
            tensors: Vec::with_capacity(pairs.len()),
            index: HashMap::new(),
        };
        for (name, t) in pairs {
            if p.index.insert(name.clone(), p.names.len()).is_some() {
                return Err(Error::usage(format!("duplicate parameter name {name}")));
            }
            p.names.push(name);
            p.tensors.push(t);
        }
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn set(&mut self, name: &str, t: Tensor<T>) -> Result<()> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| Error::usage(format!("unknown parameter {name}")))?;
        if self.tensors[i].shape() != t.shape() {
            return Err(Error::usage(format!("parameter {name} shape change")));
        }
        self.tensors[i] = t;
        Ok(())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(|s| s.as_str()).zip(self.tensors.iter())
    }

    /// Total scalar count, switch omegas included (unlike `count_params`).
    pub fn total_values(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
            index: self.index.clone(),
        }
    }
}

/// Segments of a spec in canonical walk order.
pub(crate) fn segments(spec: &NetworkSpec) -> Vec<(&'static str, &[LayerSpec])> {
    let mut out: Vec<(&'static str, &[LayerSpec])> = Vec::new();
    match &spec.encoder {
        EncoderSpec::TwoBranch { trunk, shape_head, texture_head } => {
            out.push(("enc.trunk", trunk));
            out.push(("enc.shape", shape_head));
            out.push(("enc.tex", texture_head));
        }
        EncoderSpec::SingleBranch { layers } => out.push(("enc", layers)),
    }
    out.push(("man", &spec.manipulator));
    out.push(("dec", &spec.decoder));
    out
}

/// Stable per-layer names within a segment (conv0, rb1, resize0, ...).
pub(crate) fn segment_layer_names(prefix: &str, layers: &[LayerSpec]) -> Vec<String> {
    let (mut ci, mut ri, mut zi) = (0, 0, 0);
    layers
        .iter()
        .map(|l| match l.kind {
            LayerKind::Conv => {
                let n = format!("{prefix}.conv{ci}");
                ci += 1;
                n
            }
            LayerKind::Resblock => {
                let n = format!("{prefix}.rb{ri}");
                ri += 1;
                n
            }
            LayerKind::Resize => {
                let n = format!("{prefix}.resize{zi}");
                zi += 1;
                n
            }
            LayerKind::Concat => format!("{prefix}.concat"),
        })
        .collect()
}

/// Canonical (name, shape) layout of every parameter of a spec.
pub(crate) fn param_layout(spec: &NetworkSpec) -> Vec<(String, Shape)> {
    let mut out = Vec::new();
    for (prefix, layers) in segments(spec) {
        let names = segment_layer_names(prefix, layers);
        for (l, name) in layers.iter().zip(&names) {
            match l.kind {
                LayerKind::Conv => {
                    out.push((format!("{name}.w"), Shape::new(l.out_ch, l.in_ch, l.kernel, l.kernel)));
                    out.push((format!("{name}.b"), Shape::new(1, l.out_ch, 1, 1)));
                }
                LayerKind::Resblock => {
                    let ch = l.out_ch;
                    out.push((format!("{name}.conv1.w"), Shape::new(ch, ch, 3, 3)));
                    out.push((format!("{name}.conv1.b"), Shape::new(1, ch, 1, 1)));
                    out.push((format!("{name}.conv2.w"), Shape::new(ch, ch, 3, 3)));
                    out.push((format!("{name}.conv2.b"), Shape::new(1, ch, 1, 1)));
                    for sw in &l.switches {
                        out.push((format!("{name}.sw.{}.omega", sw.kind.name()), Shape::new(1, 1, 1, 1)));
                    }
                }
                LayerKind::Resize | LayerKind::Concat => {}
            }
        }
    }
    out
}

/// Deterministic He-style initialization. Residual-branch output convs are
/// scaled down so deep decoders start near the identity; biases get a small
/// uniform jitter so activations are not dead at zero input.
pub fn init_params(spec: &NetworkSpec, seed: u64) -> ModelParams<f32> {
    let mut rng = Rng::new(seed ^ 0x6d6f_6d61_675f_0001u64);
    let mut pairs = Vec::new();
    for (name, shape) in param_layout(spec) {
        let t = if name.ends_with(".omega") {
            Tensor::scalar(0.0)
        } else if name.ends_with(".b") {
            build_tensor(shape, |d| {
                for v in d.iter_mut() {
                    *v = rng.range(-0.01, 0.01) as f32;
                }
            })
        } else {
            let fan_in = (shape.c * shape.h * shape.w) as f64;
            let mut std = (2.0 / fan_in).sqrt();
            if name.ends_with(".conv2.w") {
                std *= 0.1;
            }
            build_tensor(shape, |d| {
                for v in d.iter_mut() {
                    *v = (rng.normal() * std) as f32;
                }
            })
        };
        pairs.push((name, t));
    }
    ModelParams::from_pairs(pairs).expect("layout names unique")
}

/// Rebuild the canonical table for `spec`, keeping every existing tensor and
/// creating zero-initialized omegas for newly attached switches.
pub fn sync_switch_params<T: Scalar>(spec: &NetworkSpec, old: &ModelParams<T>) -> Result<ModelParams<T>> {
    let mut pairs = Vec::new();
    for (name, shape) in param_layout(spec) {
        match old.get(&name) {
            Some(t) => {
                if t.shape() != shape {
                    return Err(Error::usage(format!("parameter {name} has shape {} but spec wants {shape}", t.shape())));
                }
                pairs.push((name, t.clone()));
            }
            None if name.ends_with(".omega") => pairs.push((name, Tensor::scalar(T::zero()))),
            None => return Err(Error::usage(format!("parameter {name} missing from table"))),
        }
    }
    ModelParams::from_pairs(pairs)
}

#[cfg(test)]
mod tests {
    use super::super::{build_baseline, build_proposed};
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let spec = build_proposed();
        let a = init_params(&spec, 3);
        let b = init_params(&spec, 3);
        for ((na, ta), (nb, tb)) in a.iter().zip(b.iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.data(), tb.data());
        }
        let c = init_params(&spec, 4);
        assert_ne!(a.iter().next().unwrap().1.data(), c.iter().next().unwrap().1.data());
    }

    #[test]
    fn layout_matches_init() {
        for spec in [build_baseline(), build_proposed()] {
            let layout = param_layout(&spec);
            let params = init_params(&spec, 0);
            assert_eq!(layout.len(), params.len());
            for ((name, shape), (pname, t)) in layout.iter().zip(params.iter()) {
                assert_eq!(name, pname);
                assert_eq!(*shape, t.shape());
            }
        }
    }

    #[test]
    fn names_are_unique() {
        let spec = build_baseline();
        let layout = param_layout(&spec);
        let mut seen = std::collections::HashSet::new();
        for (name, _) in &layout {
            assert!(seen.insert(name.clone()), "duplicate {name}");
        }
    }
}
