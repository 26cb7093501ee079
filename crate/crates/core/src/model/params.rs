use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Family, ModelConfig, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Embedding,
    Weight,
    Bias,
    NormScale,
    NormShift,
}

impl ParamKind {
    /// Biases and LayerNorm parameters are exempt from weight decay.
    pub fn decays(self) -> bool {
        matches!(self, ParamKind::Embedding | ParamKind::Weight)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopField {
    WordEmbeddings,
    PositionEmbeddings,
    TypeEmbeddings,
    EmbeddingNormScale,
    EmbeddingNormShift,
    MappingWeight,
    MappingBias,
    ClassifierWeight,
    ClassifierBias,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerField {
    QueryWeight,
    QueryBias,
    KeyWeight,
    KeyBias,
    ValueWeight,
    ValueBias,
    DenseWeight,
    DenseBias,
    AttentionNormScale,
    AttentionNormShift,
    FfnWeight,
    FfnBias,
    FfnOutputWeight,
    FfnOutputBias,
    OutputNormScale,
    OutputNormShift,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Top(TopField),
    Layer(usize, LayerField),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    pub slot: Slot,
}

fn layer_names(family: Family) -> &'static [(LayerField, &'static str)] {
    use LayerField::*;
    match family {
        Family::Albert => &[
            (OutputNormScale, "full.layer.layer.norm.weight"),
            (OutputNormShift, "full.layer.layer.norm.bias"),
            (QueryWeight, "attention.query.weight"),
            (QueryBias, "attention.query.bias"),
            (KeyWeight, "attention.key.weight"),
            (KeyBias, "attention.key.bias"),
            (ValueWeight, "attention.value.weight"),
            (ValueBias, "attention.value.bias"),
            (DenseWeight, "attention.dense.weight"),
            (DenseBias, "attention.dense.bias"),
            (AttentionNormScale, "attention.LayerNorm.weight"),
            (AttentionNormShift, "attention.LayerNorm.bias"),
            (FfnWeight, "ffn.weight"),
            (FfnBias, "ffn.bias"),
            (FfnOutputWeight, "ffn.output.weight"),
            (FfnOutputBias, "ffn.output.bias"),
        ],
        Family::Bert | Family::Roberta => &[
            (QueryWeight, "attention.self.query.weight"),
            (QueryBias, "attention.self.query.bias"),
            (KeyWeight, "attention.self.key.weight"),
            (KeyBias, "attention.self.key.bias"),
            (ValueWeight, "attention.self.value.weight"),
            (ValueBias, "attention.self.value.bias"),
            (DenseWeight, "attention.output.dense.weight"),
            (DenseBias, "attention.output.dense.bias"),
            (AttentionNormScale, "attention.output.LayerNorm.weight"),
            (AttentionNormShift, "attention.output.LayerNorm.bias"),
            (FfnWeight, "intermediate.dense.weight"),
            (FfnBias, "intermediate.dense.bias"),
            (FfnOutputWeight, "output.dense.weight"),
            (FfnOutputBias, "output.dense.bias"),
            (OutputNormScale, "output.LayerNorm.weight"),
            (OutputNormShift, "output.LayerNorm.bias"),
        ],
    }
}

fn layer_shape(config: &ModelConfig, field: LayerField) -> (ParamKind, Vec<usize>) {
    use LayerField::*;
    let h = config.hidden_dim;
    let f = config.ffn_dim;
    match field {
        QueryWeight | KeyWeight | ValueWeight | DenseWeight => (ParamKind::Weight, vec![h, h]),
        QueryBias | KeyBias | ValueBias | DenseBias | FfnOutputBias => (ParamKind::Bias, vec![h]),
        AttentionNormScale | OutputNormScale => (ParamKind::NormScale, vec![h]),
        AttentionNormShift | OutputNormShift => (ParamKind::NormShift, vec![h]),
        FfnWeight => (ParamKind::Weight, vec![h, f]),
        FfnBias => (ParamKind::Bias, vec![f]),
        FfnOutputWeight => (ParamKind::Weight, vec![f, h]),
    }
}

/// Every parameter tensor of a config, in ledger order. Matrices are stored
/// `[in, out]` so that a layer computes `x W + b`.
pub(crate) fn layout(config: &ModelConfig) -> Vec<ParamSpec> {
    use TopField::*;
    let prefix = match config.family {
        Family::Bert => "bert",
        Family::Roberta => "roberta",
        Family::Albert => "albert",
    };
    let (e, h) = (config.embedding_dim, config.hidden_dim);
    let top = |name: String, kind, shape: Vec<usize>, field| ParamSpec {
        name,
        kind,
        shape,
        slot: Slot::Top(field),
    };
    let mut specs = vec![
        top(format!("{prefix}.embeddings.word.embeddings.weight"), ParamKind::Embedding, vec![config.vocab_size, e], WordEmbeddings),
        top(format!("{prefix}.embeddings.position.embeddings.weight"), ParamKind::Embedding, vec![config.max_positions, e], PositionEmbeddings),
        top(format!("{prefix}.embeddings.token.type.embeddings.weight"), ParamKind::Embedding, vec![config.type_vocab, e], TypeEmbeddings),
        top(format!("{prefix}.embeddings.LayerNorm.weight"), ParamKind::NormScale, vec![e], EmbeddingNormScale),
        top(format!("{prefix}.embeddings.LayerNorm.bias"), ParamKind::NormShift, vec![e], EmbeddingNormShift),
    ];
    if config.factorized_embedding {
        specs.push(top(format!("{prefix}.encoder.embedding.hidden.mapping.in.weight"), ParamKind::Weight, vec![e, h], MappingWeight));
        specs.push(top(format!("{prefix}.encoder.embedding.hidden.mapping.in.bias"), ParamKind::Bias, vec![h], MappingBias));
    }
    for layer in 0..config.layer_sets() {
        let layer_prefix = match config.family {
            Family::Albert => format!("albert.encoder.albert.layer.groups.0.albert.layers.{layer}"),
            _ => format!("{prefix}.encoder.layer.{layer}"),
        };
        for &(field, suffix) in layer_names(config.family) {
            let (kind, shape) = layer_shape(config, field);
            specs.push(ParamSpec {
                name: format!("{layer_prefix}.{suffix}"),
                kind,
                shape,
                slot: Slot::Layer(layer, field),
            });
        }
    }
    specs.push(top("classifier.weight".into(), ParamKind::Weight, vec![h, config.num_labels], ClassifierWeight));
    specs.push(top("classifier.bias".into(), ParamKind::Bias, vec![config.num_labels], ClassifierBias));
    specs
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub query_w: Array2<T>,
    pub query_b: Array1<T>,
    pub key_w: Array2<T>,
    pub key_b: Array1<T>,
    pub value_w: Array2<T>,
    pub value_b: Array1<T>,
    pub dense_w: Array2<T>,
    pub dense_b: Array1<T>,
    pub attn_norm_g: Array1<T>,
    pub attn_norm_b: Array1<T>,
    pub ffn_w: Array2<T>,
    pub ffn_b: Array1<T>,
    pub ffn_out_w: Array2<T>,
    pub ffn_out_b: Array1<T>,
    pub out_norm_g: Array1<T>,
    pub out_norm_b: Array1<T>,
}

impl<T: Real> Layer<T> {
    fn zeros(h: usize, f: usize) -> Self {
        Layer {
            query_w: Array2::zeros((h, h)),
            query_b: Array1::zeros(h),
            key_w: Array2::zeros((h, h)),
            key_b: Array1::zeros(h),
            value_w: Array2::zeros((h, h)),
            value_b: Array1::zeros(h),
            dense_w: Array2::zeros((h, h)),
            dense_b: Array1::zeros(h),
            attn_norm_g: Array1::zeros(h),
            attn_norm_b: Array1::zeros(h),
            ffn_w: Array2::zeros((h, f)),
            ffn_b: Array1::zeros(f),
            ffn_out_w: Array2::zeros((f, h)),
            ffn_out_b: Array1::zeros(h),
            out_norm_g: Array1::zeros(h),
            out_norm_b: Array1::zeros(h),
        }
    }

    fn field(&self, field: LayerField) -> &[T] {
        use LayerField::*;
        let s = match field {
            QueryWeight => self.query_w.as_slice(),
            QueryBias => self.query_b.as_slice(),
            KeyWeight => self.key_w.as_slice(),
            KeyBias => self.key_b.as_slice(),
            ValueWeight => self.value_w.as_slice(),
            ValueBias => self.value_b.as_slice(),
            DenseWeight => self.dense_w.as_slice(),
            DenseBias => self.dense_b.as_slice(),
            AttentionNormScale => self.attn_norm_g.as_slice(),
            AttentionNormShift => self.attn_norm_b.as_slice(),
            FfnWeight => self.ffn_w.as_slice(),
            FfnBias => self.ffn_b.as_slice(),
            FfnOutputWeight => self.ffn_out_w.as_slice(),
            FfnOutputBias => self.ffn_out_b.as_slice(),
            OutputNormScale => self.out_norm_g.as_slice(),
            OutputNormShift => self.out_norm_b.as_slice(),
        };
        s.expect("parameters are contiguous")
    }

    fn field_mut(&mut self, field: LayerField) -> &mut [T] {
        use LayerField::*;
        let s = match field {
            QueryWeight => self.query_w.as_slice_mut(),
            QueryBias => self.query_b.as_slice_mut(),
            KeyWeight => self.key_w.as_slice_mut(),
            KeyBias => self.key_b.as_slice_mut(),
            ValueWeight => self.value_w.as_slice_mut(),
            ValueBias => self.value_b.as_slice_mut(),
            DenseWeight => self.dense_w.as_slice_mut(),
            DenseBias => self.dense_b.as_slice_mut(),
            AttentionNormScale => self.attn_norm_g.as_slice_mut(),
            AttentionNormShift => self.attn_norm_b.as_slice_mut(),
            FfnWeight => self.ffn_w.as_slice_mut(),
            FfnBias => self.ffn_b.as_slice_mut(),
            FfnOutputWeight => self.ffn_out_w.as_slice_mut(),
            FfnOutputBias => self.ffn_out_b.as_slice_mut(),
            OutputNormScale => self.out_norm_g.as_slice_mut(),
            OutputNormShift => self.out_norm_b.as_slice_mut(),
        };
        s.expect("parameters are contiguous")
    }
}

/// All learnable tensors. The same type holds gradients.
///
/// With `share_layers` there is a single entry in `layers` and every depth
/// reads it.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggerModel<T> {
    pub config: ModelConfig,
    pub word_emb: Array2<T>,
    pub pos_emb: Array2<T>,
    pub type_emb: Array2<T>,
    pub emb_norm_g: Array1<T>,
    pub emb_norm_b: Array1<T>,
    pub mapping: Option<(Array2<T>, Array1<T>)>,
    pub layers: Vec<Layer<T>>,
    pub cls_w: Array2<T>,
    pub cls_b: Array1<T>,
}

impl<T: Real> TaggerModel<T> {
    pub fn zeros(config: &ModelConfig) -> Self {
        let (e, h) = (config.embedding_dim, config.hidden_dim);
        TaggerModel {
            config: config.clone(),
            word_emb: Array2::zeros((config.vocab_size, e)),
            pos_emb: Array2::zeros((config.max_positions, e)),
            type_emb: Array2::zeros((config.type_vocab, e)),
            emb_norm_g: Array1::zeros(e),
            emb_norm_b: Array1::zeros(e),
            mapping: config
                .factorized_embedding
                .then(|| (Array2::zeros((e, h)), Array1::zeros(h))),
            layers: (0..config.layer_sets())
                .map(|_| Layer::zeros(h, config.ffn_dim))
                .collect(),
            cls_w: Array2::zeros((h, config.num_labels)),
            cls_b: Array1::zeros(config.num_labels),
        }
    }

    /// Parameter set used at depth `depth`.
    pub fn layer(&self, depth: usize) -> &Layer<T> {
        if self.config.share_layers {
            &self.layers[0]
        } else {
            &self.layers[depth]
        }
    }

    pub fn layer_mut(&mut self, depth: usize) -> &mut Layer<T> {
        if self.config.share_layers {
            &mut self.layers[0]
        } else {
            &mut self.layers[depth]
        }
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        layout(&self.config)
    }

    pub fn get(&self, slot: Slot) -> &[T] {
        use TopField::*;
        let s = match slot {
            Slot::Layer(l, f) => return self.layers[l].field(f),
            Slot::Top(WordEmbeddings) => self.word_emb.as_slice(),
            Slot::Top(PositionEmbeddings) => self.pos_emb.as_slice(),
            Slot::Top(TypeEmbeddings) => self.type_emb.as_slice(),
            Slot::Top(EmbeddingNormScale) => self.emb_norm_g.as_slice(),
            Slot::Top(EmbeddingNormShift) => self.emb_norm_b.as_slice(),
            Slot::Top(MappingWeight) => self.mapping.as_ref().and_then(|m| m.0.as_slice()),
            Slot::Top(MappingBias) => self.mapping.as_ref().and_then(|m| m.1.as_slice()),
            Slot::Top(ClassifierWeight) => self.cls_w.as_slice(),
            Slot::Top(ClassifierBias) => self.cls_b.as_slice(),
        };
        s.expect("slot exists for this config")
    }

    pub fn get_mut(&mut self, slot: Slot) -> &mut [T] {
        use TopField::*;
        let s = match slot {
            Slot::Layer(l, f) => return self.layers[l].field_mut(f),
            Slot::Top(WordEmbeddings) => self.word_emb.as_slice_mut(),
            Slot::Top(PositionEmbeddings) => self.pos_emb.as_slice_mut(),
            Slot::Top(TypeEmbeddings) => self.type_emb.as_slice_mut(),
            Slot::Top(EmbeddingNormScale) => self.emb_norm_g.as_slice_mut(),
            Slot::Top(EmbeddingNormShift) => self.emb_norm_b.as_slice_mut(),
            Slot::Top(MappingWeight) => self.mapping.as_mut().and_then(|m| m.0.as_slice_mut()),
            Slot::Top(MappingBias) => self.mapping.as_mut().and_then(|m| m.1.as_slice_mut()),
            Slot::Top(ClassifierWeight) => self.cls_w.as_slice_mut(),
            Slot::Top(ClassifierBias) => self.cls_b.as_slice_mut(),
        };
        s.expect("slot exists for this config")
    }

    pub fn num_parameters(&self) -> usize {
        self.specs().iter().map(|s| self.get(s.slot).len()).sum()
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &TaggerModel<T>) {
        for spec in self.specs() {
            let src = other.get(spec.slot);
            for (d, s) in self.get_mut(spec.slot).iter_mut().zip(src) {
                *d = *d + *s;
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for spec in self.specs() {
            for v in self.get_mut(spec.slot) {
                *v = *v * factor;
            }
        }
    }

    pub fn cast<U: Real>(&self) -> TaggerModel<U> {
        let mut out = TaggerModel::<U>::zeros(&self.config);
        for spec in self.specs() {
            for (d, s) in out.get_mut(spec.slot).iter_mut().zip(self.get(spec.slot)) {
                *d = U::of(s.as_f64());
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.specs()
            .iter()
            .all(|s| self.get(s.slot).iter().all(|v| v.is_finite()))
    }
}

/// Truncated normal (σ = 0.02, cut at 2σ) weights and embeddings, zero biases,
/// LayerNorm scale 1 and shift 0.
pub fn init_model<T: Real>(config: &ModelConfig, seed: u64) -> Result<TaggerModel<T>> {
    config.validate()?;
    let std = 0.02;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, std).expect("valid std");
    let mut model = TaggerModel::zeros(config);
    for spec in layout(config) {
        let values = model.get_mut(spec.slot);
        match spec.kind {
            ParamKind::Embedding | ParamKind::Weight => {
                for v in values {
                    let x = loop {
                        let x: f64 = normal.sample(&mut rng);
                        if x.abs() <= 2.0 * std {
                            break x;
                        }
                    };
                    *v = T::of(x);
                }
            }
            ParamKind::NormScale => values.fill(T::one()),
            ParamKind::Bias | ParamKind::NormShift => values.fill(T::zero()),
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::count_parameters;

    #[test]
    fn init_is_deterministic_and_matches_ledger() {
        let mut c = ModelConfig::tiny(60, 32);
        c.share_layers = true;
        c.factorized_embedding = true;
        c.embedding_dim = 8;
        let a: TaggerModel<f32> = init_model(&c, 9).unwrap();
        let b: TaggerModel<f32> = init_model(&c, 9).unwrap();
        assert_eq!(a, b);
        let ledger = count_parameters(&c);
        assert_eq!(a.num_parameters() as u64, ledger.total);
        for (spec, entry) in a.specs().iter().zip(&ledger.entries) {
            assert_eq!(spec.name, entry.name);
            assert_eq!(a.get(spec.slot).len() as u64, entry.count);
        }
        assert!(a.emb_norm_g.iter().all(|&g| g == 1.0));
        assert!(a.layers[0].attn_norm_g.iter().all(|&g| g == 1.0));
        assert!(a.cls_b.iter().all(|&b| b == 0.0));
        assert!(a.word_emb.iter().all(|&w| w.abs() <= 0.04));
    }

    #[test]
    fn seeds_differ() {
        let c = ModelConfig::tiny(60, 32);
        let a: TaggerModel<f64> = init_model(&c, 1).unwrap();
        let b: TaggerModel<f64> = init_model(&c, 2).unwrap();
        assert_ne!(a, b);
    }
}
