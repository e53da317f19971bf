use indexmap::IndexMap;

use super::ModelConfig;
use crate::autograd::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Embedding,
    /// Dense weight `[fan_in, fan_out]`.
    Weight,
    Bias,
    /// Layer-norm scale, initialized to one.
    Gain,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

struct Layout(Vec<ParamSpec>);

impl Layout {
    fn push(&mut self, name: String, shape: Vec<usize>, kind: ParamKind) {
        self.0.push(ParamSpec { name, shape, kind });
    }

    fn linear(&mut self, prefix: &str, w: &str, b: &str, fan_in: usize, fan_out: usize) {
        self.push(format!("{prefix}.{w}"), vec![fan_in, fan_out], ParamKind::Weight);
        self.push(format!("{prefix}.{b}"), vec![fan_out], ParamKind::Bias);
    }

    fn norm(&mut self, prefix: &str, d: usize) {
        self.push(format!("{prefix}.gamma"), vec![d], ParamKind::Gain);
        self.push(format!("{prefix}.beta"), vec![d], ParamKind::Bias);
    }

    fn attention(&mut self, prefix: &str, d: usize) {
        for (w, b) in [("wq", "bq"), ("wk", "bk"), ("wv", "bv"), ("wo", "bo")] {
            self.linear(prefix, w, b, d, d);
        }
    }

    fn ffn(&mut self, prefix: &str, d: usize, f: usize) {
        self.linear(prefix, "w1", "b1", d, f);
        self.linear(prefix, "w2", "b2", f, d);
    }

    fn decoder_block(&mut self, p: &str, d: usize, f: usize) {
        self.norm(&format!("{p}.ln1"), d);
        self.attention(&format!("{p}.self_attn"), d);
        self.norm(&format!("{p}.ln2"), d);
        self.attention(&format!("{p}.cross_attn"), d);
        self.norm(&format!("{p}.ln3"), d);
        self.ffn(&format!("{p}.ffn"), d, f);
        self.norm(&format!("{p}.ln_f"), d);
    }
}

/// Every named tensor of the model, in a fixed order.
pub fn param_layout(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let (d, f) = (cfg.d_model, cfg.ffn_dim);
    let mut l = Layout(Vec::new());
    l.push("embedding".into(), vec![cfg.vocab_size, cfg.embed_dim], ParamKind::Embedding);
    if cfg.embed_dim != d {
        l.push("embed_proj".into(), vec![cfg.embed_dim, d], ParamKind::Weight);
    }
    for i in 0..cfg.n_layers {
        let p = format!("encoder.{i}");
        l.norm(&format!("{p}.ln1"), d);
        l.attention(&format!("{p}.self_attn"), d);
        l.norm(&format!("{p}.ln2"), d);
        l.ffn(&format!("{p}.ffn"), d, f);
    }
    l.norm("encoder.ln_f", d);
    l.linear("sentiment", "w", "b", d, cfg.n_sentiments);
    if !cfg.single_enc_dec {
        for k in 0..cfg.n_sentiments {
            let p = format!("expert.{k}");
            l.norm(&format!("{p}.ln_q"), d);
            l.norm(&format!("{p}.ln_kv"), d);
            l.attention(&format!("{p}.cross_attn"), d);
            l.norm(&format!("{p}.ln2"), d);
            l.ffn(&format!("{p}.ffn"), d, f);
            l.norm(&format!("{p}.ln_f"), d);
        }
    }
    l.linear("emotion", "w", "b", d, cfg.n_emotions);
    if !cfg.single_enc_dec {
        for m in 0..cfg.n_emotions {
            l.decoder_block(&format!("listener.{m}"), d, f);
        }
    }
    l.decoder_block("meta", d, f);
    l.linear("output", "w", "b", d, cfg.vocab_size);
    l.0
}

/// Named parameter tensors in layout order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterStore<T> {
    tensors: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> Default for ParameterStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParameterStore<T> {
    pub fn new() -> Self {
        ParameterStore {
            tensors: IndexMap::new(),
        }
    }

    /// Zero tensors for every entry of the layout.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let mut s = Self::new();
        for spec in param_layout(cfg) {
            s.insert(spec.name, Tensor::zeros(&spec.shape));
        }
        s
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        let name = name.into();
        assert!(
            self.tensors.insert(name.clone(), tensor).is_none(),
            "duplicate parameter {name}"
        );
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn expect(&self, name: &str) -> &Tensor<T> {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count.
    pub fn num_elements(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParameterStore<U> {
        ParameterStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Name of the first tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.tensors
            .iter()
            .find(|(_, t)| !t.is_finite())
            .map(|(k, _)| k.as_str())
    }

    /// Checks that names and shapes match the layout of `cfg`.
    pub fn matches_layout(&self, cfg: &ModelConfig) -> bool {
        let layout = param_layout(cfg);
        layout.len() == self.tensors.len()
            && layout
                .iter()
                .all(|spec| self.get(&spec.name).is_some_and(|t| t.shape() == spec.shape.as_slice()))
    }
}
