//! Relational pair representation from the template `[CLS] q IS A i [SEP]`.
//!
//! Two providers stand behind one interface: a desk-scale reference encoder
//! whose token embeddings are pretrained with concept masking over a UGC
//! corpus, and a precomputed provider that serves per-concept vectors from a
//! file and projects concatenated pairs. Position embeddings gate token
//! embeddings multiplicatively, so the pair vector is direction-sensitive
//! while a zeroed position table collapses to an order-blind encoding.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;

use crate::corpus::{load_embeddings, ConceptId, ConceptVocabulary};
use crate::error::{Error, Result};
use crate::nn::{affine, affine_backward, relu, relu_backward, softmax_rows, Matrix, Parameter};
use crate::rng::{derive_seed, rng_from};

pub const TOKEN_CLS: usize = 0;
pub const TOKEN_SEP: usize = 1;
pub const TOKEN_IS: usize = 2;
pub const TOKEN_A: usize = 3;
pub const SPECIAL_TOKENS: usize = 4;

/// Slot count of the pair template.
pub const TEMPLATE_SLOTS: usize = 6;

/// Token ids for `[CLS] q IS A i [SEP]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateInput {
    pub tokens: [usize; TEMPLATE_SLOTS],
}

fn concept_token(c: ConceptId, vocab_size: usize) -> Result<usize> {
    if c.0 >= vocab_size {
        return Err(Error::UnknownConcept {
            surface: format!("id {}", c.0),
        });
    }
    Ok(SPECIAL_TOKENS + c.0)
}

/// Order encodes direction: the query fills slot 1, the item slot 4.
pub fn build_template(q: ConceptId, i: ConceptId, vocab_size: usize) -> Result<TemplateInput> {
    Ok(TemplateInput {
        tokens: [
            TOKEN_CLS,
            concept_token(q, vocab_size)?,
            TOKEN_IS,
            TOKEN_A,
            concept_token(i, vocab_size)?,
            TOKEN_SEP,
        ],
    })
}

/// Reference pair encoder: token embeddings gated by slot-position
/// embeddings, mean-pooled, then one affine + relu projection.
#[derive(Debug, Clone)]
pub struct ReferenceEncoder {
    pub d_r: usize,
    vocab_size: usize,
    pub token_table: Parameter,
    pub pos_table: Parameter,
    pub proj_w: Parameter,
    pub proj_b: Parameter,
}

/// Cached forward state for the backward pass of one pair.
#[derive(Debug, Clone)]
pub enum PairTrace {
    Reference {
        tokens: Vec<usize>,
        pooled: Matrix,
        out: Matrix,
    },
    Precomputed {
        concat: Matrix,
    },
}

impl ReferenceEncoder {
    pub fn new(vocab_size: usize, d_r: usize, seed: u64) -> Self {
        let mut rng = rng_from(derive_seed(seed, "rel-init"));
        ReferenceEncoder {
            d_r,
            vocab_size,
            token_table: Parameter::new(
                "rel.token_table",
                Matrix::glorot(SPECIAL_TOKENS + vocab_size, d_r, &mut rng),
            ),
            pos_table: Parameter::new(
                "rel.pos_table",
                Matrix::glorot(TEMPLATE_SLOTS, d_r, &mut rng),
            ),
            proj_w: Parameter::new("rel.proj_w", Matrix::glorot(d_r, d_r, &mut rng)),
            proj_b: Parameter::new("rel.proj_b", Matrix::zeros(1, d_r)),
        }
    }

    /// Mean over slots of token_emb ∘ (1 + pos_emb), projected and rectified.
    fn encode_slots(&self, slots: &[(usize, usize)]) -> Result<(Matrix, PairTrace)> {
        let mut pooled = Matrix::zeros(1, self.d_r);
        for &(token, pos) in slots {
            let t = self.token_table.value.row(token);
            let p = self.pos_table.value.row(pos);
            for k in 0..self.d_r {
                pooled.data[k] += t[k] * (1.0 + p[k]);
            }
        }
        let inv = 1.0 / slots.len() as f64;
        pooled.data.iter_mut().for_each(|v| *v *= inv);
        let z = affine(&pooled, &self.proj_w, &self.proj_b)?;
        let out = relu(&z);
        Ok((
            out.clone(),
            PairTrace::Reference {
                tokens: slots.iter().map(|&(t, _)| t).collect(),
                pooled,
                out,
            },
        ))
    }

    fn pair_slots(&self, q: ConceptId, i: ConceptId) -> Result<Vec<(usize, usize)>> {
        let template = build_template(q, i, self.vocab_size)?;
        Ok(template.tokens.iter().copied().zip(0..TEMPLATE_SLOTS).collect())
    }

    /// `[CLS] c [SEP]` with the CLS/SEP slots of the pair template.
    fn concept_slots(&self, c: ConceptId) -> Result<Vec<(usize, usize)>> {
        let token = concept_token(c, self.vocab_size)?;
        Ok(vec![(TOKEN_CLS, 0), (token, 1), (TOKEN_SEP, 5)])
    }
}

/// Per-concept vectors served verbatim from a file; pair vectors are the
/// concatenation projected by a trainable affine.
#[derive(Debug, Clone)]
pub struct PrecomputedProvider {
    pub d_r: usize,
    pub concept_dim: usize,
    vocab_surfaces: Vec<String>,
    vectors: Vec<Option<Vec<f64>>>,
    pub pair_w: Parameter,
    pub pair_b: Parameter,
}

impl PrecomputedProvider {
    pub fn load(path: &Path, vocab: &ConceptVocabulary, d_r: usize, seed: u64) -> Result<Self> {
        let table = load_embeddings(path, vocab)?;
        let mut vectors = vec![None; vocab.len()];
        for (id, v) in table.vectors {
            vectors[id.0] = Some(v);
        }
        let mut rng = rng_from(derive_seed(seed, "rel-precomputed-init"));
        Ok(PrecomputedProvider {
            d_r,
            concept_dim: table.dim,
            vocab_surfaces: vocab.iter().map(|c| c.surface.clone()).collect(),
            vectors,
            pair_w: Parameter::new("rel.pair_w", Matrix::glorot(2 * table.dim, d_r, &mut rng)),
            pair_b: Parameter::new("rel.pair_b", Matrix::zeros(1, d_r)),
        })
    }

    fn vector(&self, c: ConceptId) -> Result<&Vec<f64>> {
        self.vectors
            .get(c.0)
            .and_then(|v| v.as_ref())
            .ok_or_else(|| Error::MissingEmbedding {
                surface: self
                    .vocab_surfaces
                    .get(c.0)
                    .cloned()
                    .unwrap_or_else(|| format!("id {}", c.0)),
            })
    }
}

/// Which encoder serves relational representations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderSpec {
    Reference,
    Precomputed(PathBuf),
}

impl FromStr for ProviderSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "reference" {
            Ok(ProviderSpec::Reference)
        } else if let Some(path) = s.strip_prefix("precomputed:") {
            Ok(ProviderSpec::Precomputed(PathBuf::from(path)))
        } else {
            Err(Error::ConfigInvalid {
                message: format!("unknown encoder provider {s:?}"),
            })
        }
    }
}

#[derive(Debug, Clone)]
pub enum RelProvider {
    Reference(ReferenceEncoder),
    Precomputed(PrecomputedProvider),
}

/// Instantiate the configured provider.
pub fn provider_select(
    spec: &ProviderSpec,
    vocab: &ConceptVocabulary,
    d_r: usize,
    seed: u64,
) -> Result<RelProvider> {
    match spec {
        ProviderSpec::Reference => Ok(RelProvider::Reference(ReferenceEncoder::new(
            vocab.len(),
            d_r,
            seed,
        ))),
        ProviderSpec::Precomputed(path) => Ok(RelProvider::Precomputed(PrecomputedProvider::load(
            path, vocab, d_r, seed,
        )?)),
    }
}

impl RelProvider {
    /// Dimension of the pair vector r.
    pub fn pair_dim(&self) -> usize {
        match self {
            RelProvider::Reference(e) => e.d_r,
            RelProvider::Precomputed(p) => p.d_r,
        }
    }

    /// Dimension of per-concept vectors (seeds the structural encoder).
    pub fn concept_dim(&self) -> usize {
        match self {
            RelProvider::Reference(e) => e.d_r,
            RelProvider::Precomputed(p) => p.concept_dim,
        }
    }

    pub fn encode_pair(&self, q: ConceptId, i: ConceptId) -> Result<Vec<f64>> {
        self.encode_pair_traced(q, i).map(|(out, _)| out)
    }

    pub fn encode_pair_traced(&self, q: ConceptId, i: ConceptId) -> Result<(Vec<f64>, PairTrace)> {
        match self {
            RelProvider::Reference(e) => {
                let slots = e.pair_slots(q, i)?;
                let (out, trace) = e.encode_slots(&slots)?;
                Ok((out.data, trace))
            }
            RelProvider::Precomputed(p) => {
                let vq = p.vector(q)?;
                let vi = p.vector(i)?;
                let mut concat = Vec::with_capacity(2 * p.concept_dim);
                concat.extend_from_slice(vq);
                concat.extend_from_slice(vi);
                let concat = Matrix::row_vector(concat);
                let out = affine(&concat, &p.pair_w, &p.pair_b)?;
                Ok((out.data, PairTrace::Precomputed { concat }))
            }
        }
    }

    /// Accumulate gradients for one pair. Embedding tables only receive
    /// gradient when `tune_tables` is set; the projection always does.
    pub fn backward_pair(&mut self, trace: &PairTrace, dout: &[f64], tune_tables: bool) {
        match (self, trace) {
            (
                RelProvider::Reference(e),
                PairTrace::Reference {
                    tokens,
                    pooled,
                    out,
                },
            ) => {
                let dout = Matrix::row_vector(dout.to_vec());
                let dz = relu_backward(out, &dout);
                let dpooled = affine_backward(pooled, &mut e.proj_w, &mut e.proj_b, &dz);
                let inv = 1.0 / tokens.len() as f64;
                for (slot, &token) in tokens.iter().enumerate() {
                    // Concept slots sit at template positions; the 3-slot
                    // concept sequence reuses positions (0, 1, 5).
                    let pos = if tokens.len() == TEMPLATE_SLOTS {
                        slot
                    } else {
                        [0, 1, 5][slot]
                    };
                    for k in 0..e.d_r {
                        let g = dpooled.data[k] * inv;
                        let t = e.token_table.value.at(token, k);
                        let p = e.pos_table.value.at(pos, k);
                        *e.pos_table.grad.at_mut(pos, k) += g * t;
                        if tune_tables {
                            *e.token_table.grad.at_mut(token, k) += g * (1.0 + p);
                        }
                    }
                }
            }
            (RelProvider::Precomputed(p), PairTrace::Precomputed { concat }) => {
                let dout = Matrix::row_vector(dout.to_vec());
                affine_backward(concat, &mut p.pair_w, &mut p.pair_b, &dout);
            }
            _ => unreachable!("trace kind always matches provider kind"),
        }
    }

    /// CLS-role vector for `[CLS] c [SEP]`; the precomputed provider returns
    /// the file vector verbatim.
    pub fn encode_concept(&self, c: ConceptId) -> Result<Vec<f64>> {
        match self {
            RelProvider::Reference(e) => {
                let slots = e.concept_slots(c)?;
                let (out, _) = e.encode_slots(&slots)?;
                Ok(out.data)
            }
            RelProvider::Precomputed(p) => p.vector(c).cloned(),
        }
    }

    /// Projection parameters, plus embedding/position tables when requested.
    pub fn params_mut(&mut self, include_tables: bool) -> Vec<&mut Parameter> {
        match self {
            RelProvider::Reference(e) => {
                let mut params = vec![&mut e.proj_w, &mut e.proj_b, &mut e.pos_table];
                if include_tables {
                    params.push(&mut e.token_table);
                }
                params
            }
            RelProvider::Precomputed(p) => vec![&mut p.pair_w, &mut p.pair_b],
        }
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut(true) {
            p.zero_grad();
        }
    }
}

/// Mean per-epoch masking loss, returned for inspection.
pub type PretrainHistory = Vec<f64>;

/// CBOW-style concept masking: each concept occurrence is masked with
/// probability `mask_prob` and predicted over the concept vocabulary from
/// the mean embedding of the sentence's unmasked concept tokens. Only the
/// token table is updated; filler rows never receive gradient because
/// sentences contain concept tokens only.
pub fn pretrain_concept_masking(
    encoder: &mut ReferenceEncoder,
    corpus: &[Vec<ConceptId>],
    epochs: usize,
    mask_prob: f64,
    lr: f64,
    seed: u64,
) -> Result<PretrainHistory> {
    let sentences: Vec<Vec<usize>> = corpus
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.iter()
                .map(|c| concept_token(*c, encoder.vocab_size))
                .collect::<Result<Vec<usize>>>()
        })
        .collect::<Result<_>>()?;
    if sentences.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let vocab_size = encoder.vocab_size;
    let d_r = encoder.d_r;
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut rng = rng_from(derive_seed(seed, &format!("mask:{epoch}")));
        let mut epoch_loss = 0.0;
        let mut epoch_terms = 0usize;
        for tokens in &sentences {
            let masked: Vec<bool> = tokens.iter().map(|_| rng.gen::<f64>() < mask_prob).collect();
            if !masked.iter().any(|&m| m) {
                continue;
            }
            let context_tokens: Vec<usize> = tokens
                .iter()
                .zip(&masked)
                .filter(|(_, &m)| !m)
                .map(|(&t, _)| t)
                .collect();
            let mut context = Matrix::zeros(1, d_r);
            if !context_tokens.is_empty() {
                for &t in &context_tokens {
                    let row = encoder.token_table.value.row(t);
                    for k in 0..d_r {
                        context.data[k] += row[k];
                    }
                }
                let inv = 1.0 / context_tokens.len() as f64;
                context.data.iter_mut().for_each(|v| *v *= inv);
            }

            // Tied-weight softmax over concept rows of the token table.
            let mut logits = Matrix::zeros(1, vocab_size);
            for c in 0..vocab_size {
                let row = encoder.token_table.value.row(SPECIAL_TOKENS + c);
                logits.data[c] = row.iter().zip(&context.data).map(|(a, b)| a * b).sum();
            }
            let probs = softmax_rows(&logits);

            let mut dcontext = vec![0.0; d_r];
            let mut targets = 0usize;
            for (j, (&token, &is_masked)) in tokens.iter().zip(&masked).enumerate() {
                let _ = j;
                if !is_masked {
                    continue;
                }
                targets += 1;
                let target_concept = token - SPECIAL_TOKENS;
                epoch_loss -= probs.data[target_concept].max(1e-300).ln();
                for c in 0..vocab_size {
                    let delta = probs.data[c] - f64::from(c == target_concept);
                    let row = encoder.token_table.value.row(SPECIAL_TOKENS + c).to_vec();
                    for k in 0..d_r {
                        dcontext[k] += delta * row[k];
                        *encoder.token_table.grad.at_mut(SPECIAL_TOKENS + c, k) +=
                            delta * context.data[k];
                    }
                }
            }
            epoch_terms += targets;
            if !context_tokens.is_empty() {
                let inv = 1.0 / context_tokens.len() as f64;
                for &t in &context_tokens {
                    for k in 0..d_r {
                        *encoder.token_table.grad.at_mut(t, k) += dcontext[k] * inv;
                    }
                }
            }
            // Per-sentence SGD step on the token table only.
            let grad = encoder.token_table.grad.clone();
            encoder.token_table.value.add_scaled(&grad, -lr);
            encoder.token_table.zero_grad();
        }
        history.push(if epoch_terms == 0 {
            0.0
        } else {
            epoch_loss / epoch_terms as f64
        });
    }
    Ok(history)
}

/// Map whitespace-pretokenized sentences onto vocabulary concepts, dropping
/// tokens outside the vocabulary and empty sentences.
pub fn tokenize_corpus(lines: &[String], vocab: &ConceptVocabulary) -> Vec<Vec<ConceptId>> {
    lines
        .iter()
        .map(|line| {
            line.split_whitespace()
                .filter_map(|t| vocab.lookup(&crate::text::normalize(t)))
                .collect::<Vec<ConceptId>>()
        })
        .filter(|s: &Vec<ConceptId>| !s.is_empty())
        .collect()
}
