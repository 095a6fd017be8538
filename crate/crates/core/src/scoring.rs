//! Embedding maps and the two triple scorers.
//!
//! Images are never looked up: an image subject is embedded by a bias-free
//! linear map of its feature code (`e_s = c_X · Wx`). Findings and relations
//! are rows of `Ef` and `Er`. Scores stay raw; the sigmoid is applied by the
//! loss and by inference.
//!
//! ConvE reshapes `e_s` and `r_r` into `k × k` squares (`k² = d`), stacks
//! subject above relation into a `2k × k` image, applies a valid `5 × 5`
//! convolution with `C` channels and a ReLU, flattens, projects with `Wc`,
//! applies a second ReLU and takes the dot product with `e_o`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kg::RelationKind;
use crate::tensor::{self, accumulate_outer, linear_grad_input, linear_slice, ConvSpec, Tensor};

pub const DEFAULT_EMBED_DIM: usize = 100;
pub const DEFAULT_CHANNELS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScorerKind {
    DistMult,
    ConvE,
}

impl ScorerKind {
    pub fn code(self) -> u8 {
        match self {
            ScorerKind::DistMult => 0,
            ScorerKind::ConvE => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ScorerKind::DistMult),
            1 => Some(ScorerKind::ConvE),
            _ => None,
        }
    }
}

impl fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScorerKind::DistMult => "distmult",
            ScorerKind::ConvE => "conve",
        })
    }
}

impl FromStr for ScorerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "distmult" => Ok(ScorerKind::DistMult),
            "conve" => Ok(ScorerKind::ConvE),
            other => Err(Error::Config(format!(
                "unknown scorer `{other}` (expected distmult or conve)"
            ))),
        }
    }
}

/// Sizes of every parameter block. `channels` is 0 for DistMult.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelDims {
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub findings: usize,
    pub channels: usize,
    pub relations: Vec<RelationKind>,
}

/// Reshape geometry of ConvE for a given embedding size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvEGeometry {
    pub side: usize,
    pub conv: ConvSpec,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvEGeometry {
    pub fn new(embed_dim: usize, channels: usize) -> Result<Self> {
        let side = (embed_dim as f64).sqrt().round() as usize;
        if side * side != embed_dim {
            return Err(Error::Config(format!(
                "ConvE needs a square embedding size, got d={embed_dim}"
            )));
        }
        if channels == 0 {
            return Err(Error::Config("ConvE needs at least one channel".into()));
        }
        let conv = ConvSpec::new(channels);
        let (out_h, out_w) = conv.output_hw(2 * side, side).ok_or_else(|| {
            Error::Config(format!(
                "ConvE input {}×{side} is smaller than the {}×{} kernel (d={embed_dim})",
                2 * side,
                conv.kernel,
                conv.kernel
            ))
        })?;
        Ok(Self {
            side,
            conv,
            out_h,
            out_w,
        })
    }

    /// Length of the flattened convolution output, the row count of `Wc`.
    pub fn flat_len(&self) -> usize {
        self.conv.channels * self.out_h * self.out_w
    }
}

impl ModelDims {
    pub fn new(
        feature_dim: usize,
        embed_dim: usize,
        findings: usize,
        channels: usize,
        relations: Vec<RelationKind>,
    ) -> Self {
        Self {
            feature_dim,
            embed_dim,
            findings,
            channels,
            relations,
        }
    }

    fn validate(&self, kind: ScorerKind) -> Result<Option<ConvEGeometry>> {
        if self.feature_dim == 0 || self.embed_dim == 0 || self.findings == 0 {
            return Err(Error::Config(format!("model dimensions must be positive: {self:?}")));
        }
        if self.relations.is_empty() {
            return Err(Error::Config("model needs at least one relation".into()));
        }
        let mut sorted = self.relations.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.relations.len() {
            return Err(Error::Config(format!("duplicate relations in {:?}", self.relations)));
        }
        match kind {
            ScorerKind::DistMult if self.channels != 0 => {
                Err(Error::Config("DistMult has no convolution channels".into()))
            }
            ScorerKind::DistMult => Ok(None),
            ScorerKind::ConvE => ConvEGeometry::new(self.embed_dim, self.channels).map(Some),
        }
    }
}

/// Every learnable parameter of a scorer.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    kind: ScorerKind,
    dims: ModelDims,
    geometry: Option<ConvEGeometry>,
    /// `D × d` subject projection.
    wx: Tensor,
    /// `n × d` finding embeddings.
    ef: Tensor,
    /// `|R| × d` relation embeddings, row order as in `dims.relations`.
    er: Tensor,
    /// `C × 5 × 5`, empty for DistMult.
    kernels: Tensor,
    /// `flat × d`, empty for DistMult.
    wc: Tensor,
}

pub const BLOCK_NAMES: [&str; 5] = ["Wx", "Ef", "Er", "kernels", "Wc"];

fn block_shapes(kind: ScorerKind, dims: &ModelDims, geometry: Option<&ConvEGeometry>) -> [Vec<usize>; 5] {
    let d = dims.embed_dim;
    let k = ConvSpec::KERNEL;
    let (kernels, wc) = match (kind, geometry) {
        (ScorerKind::ConvE, Some(g)) => (vec![dims.channels, k, k], vec![g.flat_len(), d]),
        _ => (vec![0, k, k], vec![0, d]),
    };
    [
        vec![dims.feature_dim, d],
        vec![dims.findings, d],
        vec![dims.relations.len(), d],
        kernels,
        wc,
    ]
}

/// Subject of a triple: an image given by its feature code, or a finding.
#[derive(Debug, Clone, Copy)]
pub enum Subject<'a> {
    Image(&'a [f64]),
    Finding(usize),
}

impl EmbeddingModel {
    /// Builds a model from its five parameter blocks, in `BLOCK_NAMES` order.
    pub fn from_blocks(kind: ScorerKind, dims: ModelDims, blocks: [Vec<f64>; 5]) -> Result<Self> {
        let geometry = dims.validate(kind)?;
        let shapes = block_shapes(kind, &dims, geometry.as_ref());
        let mut tensors = Vec::with_capacity(5);
        for ((shape, data), name) in shapes.into_iter().zip(blocks).zip(BLOCK_NAMES) {
            let expected: usize = shape.iter().product();
            if data.len() != expected {
                return Err(Error::shape(
                    "EmbeddingModel",
                    format!("{expected} values in {name}"),
                    data.len(),
                ));
            }
            tensors.push(Tensor::new(shape, data)?);
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("five blocks");
        Ok(Self {
            kind,
            dims,
            geometry,
            wx: next(),
            ef: next(),
            er: next(),
            kernels: next(),
            wc: next(),
        })
    }

    pub fn kind(&self) -> ScorerKind {
        self.kind
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn geometry(&self) -> Option<&ConvEGeometry> {
        self.geometry.as_ref()
    }

    pub fn relations(&self) -> &[RelationKind] {
        &self.dims.relations
    }

    pub fn blocks(&self) -> [&Tensor; 5] {
        [&self.wx, &self.ef, &self.er, &self.kernels, &self.wc]
    }

    pub fn blocks_mut(&mut self) -> [&mut Tensor; 5] {
        [
            &mut self.wx,
            &mut self.ef,
            &mut self.er,
            &mut self.kernels,
            &mut self.wc,
        ]
    }

    pub fn subject_projection(&self) -> &Tensor {
        &self.wx
    }

    pub fn finding_embeddings(&self) -> &Tensor {
        &self.ef
    }

    pub fn relation_embeddings(&self) -> &Tensor {
        &self.er
    }

    pub fn relation_row(&self, relation: RelationKind) -> Result<usize> {
        self.dims
            .relations
            .iter()
            .position(|r| *r == relation)
            .ok_or_else(|| Error::Config(format!("model has no embedding for relation {relation}")))
    }

    pub fn relation_embedding(&self, relation: RelationKind) -> Result<&[f64]> {
        Ok(self.er.row(self.relation_row(relation)?))
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.data().iter().all(|v| v.is_finite()))
    }

    pub fn embed_subject(&self, code: &[f64]) -> Result<Vec<f64>> {
        if code.len() != self.dims.feature_dim {
            return Err(Error::shape("embed_subject", self.dims.feature_dim, code.len()));
        }
        Ok(linear_slice(code, self.wx.data(), self.dims.embed_dim))
    }

    pub fn embed_object(&self, j: usize) -> Result<&[f64]> {
        if j >= self.dims.findings {
            return Err(Error::OutOfBounds {
                what: "finding",
                index: j,
                len: self.dims.findings,
            });
        }
        Ok(self.ef.row(j))
    }

    fn embed(&self, subject: Subject<'_>) -> Result<Vec<f64>> {
        match subject {
            Subject::Image(code) => self.embed_subject(code),
            Subject::Finding(j) => self.embed_object(j).map(<[f64]>::to_vec),
        }
    }

    /// Forward pass of ConvE up to the vector dotted with `e_o`.
    pub fn conve_trace(&self, es: &[f64], rr: &[f64]) -> Result<ConvETrace> {
        let g = self
            .geometry
            .ok_or_else(|| Error::Config("conve_trace called on a DistMult model".into()))?;
        let d = self.dims.embed_dim;
        if es.len() != d || rr.len() != d {
            return Err(Error::shape("score_conve", d, format!("{}/{}", es.len(), rr.len())));
        }
        let mut stacked = Vec::with_capacity(2 * d);
        stacked.extend_from_slice(es);
        stacked.extend_from_slice(rr);
        let stacked = Tensor::new(vec![2 * g.side, g.side], stacked)?;
        let conv_pre = tensor::conv2d_fwd(&stacked, &g.conv, &self.kernels)?;
        let conv_act = tensor::relu(&conv_pre);
        let proj_pre = linear_slice(conv_act.data(), self.wc.data(), d);
        let hidden = proj_pre.iter().map(|v| v.max(0.0)).collect();
        Ok(ConvETrace {
            stacked,
            conv_pre,
            conv_act,
            proj_pre,
            hidden,
        })
    }

    /// Vector `q` with `ψ(s, r, F_j) = q · Ef_j` for every object.
    fn query(&self, es: &[f64], rr: &[f64]) -> Result<(Vec<f64>, Option<ConvETrace>)> {
        match self.kind {
            ScorerKind::DistMult => Ok((es.iter().zip(rr).map(|(a, b)| a * b).collect(), None)),
            ScorerKind::ConvE => {
                let trace = self.conve_trace(es, rr)?;
                Ok((trace.hidden.clone(), Some(trace)))
            }
        }
    }

    /// Score of a single triple through this model's scorer.
    pub fn score(&self, subject: Subject<'_>, relation: RelationKind, object: usize) -> Result<f64> {
        let es = self.embed(subject)?;
        let rr = self.relation_embedding(relation)?;
        let eo = self.embed_object(object)?;
        match self.kind {
            ScorerKind::DistMult => score_distmult(&es, rr, eo),
            ScorerKind::ConvE => score_conve(self, &es, rr, eo),
        }
    }

    /// Scores `(subject, relation, F_j)` for every finding `j`. The subject
    /// side is computed once; each entry equals the single-triple score.
    pub fn score_all_objects(&self, subject: Subject<'_>, relation: RelationKind) -> Result<Vec<f64>> {
        let es = self.embed(subject)?;
        let rr = self.relation_embedding(relation)?;
        let (q, _) = self.query(&es, rr)?;
        Ok((0..self.dims.findings)
            .map(|j| dot_ordered(&q, self.ef.row(j)))
            .collect())
    }

    /// Accumulates `Σ_j upstream[j]·∂ψ_j/∂θ` into `grads` for the completion
    /// query `(subject, relation, ?)` and returns `∂/∂e_s` of the same sum.
    pub fn backward_all_objects(
        &self,
        subject: Subject<'_>,
        relation: RelationKind,
        upstream: &[f64],
        grads: &mut Gradients,
    ) -> Result<Vec<f64>> {
        let n = self.dims.findings;
        let d = self.dims.embed_dim;
        if upstream.len() != n {
            return Err(Error::shape("backward_all_objects", n, upstream.len()));
        }
        let es = self.embed(subject)?;
        let r_row = self.relation_row(relation)?;
        let rr = self.er.row(r_row);
        let (q, trace) = self.query(&es, rr)?;

        // ψ_j = q · Ef_j
        let mut dq = vec![0.0; d];
        for (j, g) in upstream.iter().enumerate() {
            if *g == 0.0 {
                continue;
            }
            let ef_j = self.ef.row(j);
            let gef = &mut grads.ef[j * d..(j + 1) * d];
            for k in 0..d {
                gef[k] += g * q[k];
                dq[k] += g * ef_j[k];
            }
        }

        let (des, drr) = match trace {
            None => (
                dq.iter().zip(rr).map(|(a, b)| a * b).collect::<Vec<_>>(),
                dq.iter().zip(&es).map(|(a, b)| a * b).collect::<Vec<_>>(),
            ),
            Some(trace) => {
                let g = self.geometry.expect("ConvE geometry");
                let dz: Vec<f64> = dq
                    .iter()
                    .zip(&trace.proj_pre)
                    .map(|(g, z)| if *z > 0.0 { *g } else { 0.0 })
                    .collect();
                accumulate_outer(&mut grads.wc, trace.conv_act.data(), &dz);
                let dflat = linear_grad_input(self.wc.data(), &dz);
                let dconv: Vec<f64> = dflat
                    .iter()
                    .zip(trace.conv_pre.data())
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect();
                let dconv = Tensor::new(trace.conv_pre.shape().to_vec(), dconv)?;
                let (dstack, dk) = tensor::conv2d_bwd(&trace.stacked, &g.conv, &self.kernels, &dconv)?;
                for (a, b) in grads.kernels.iter_mut().zip(dk.data()) {
                    *a += b;
                }
                let (top, bottom) = dstack.data().split_at(d);
                (top.to_vec(), bottom.to_vec())
            }
        };

        for (a, b) in grads.er[r_row * d..(r_row + 1) * d].iter_mut().zip(&drr) {
            *a += b;
        }
        match subject {
            Subject::Image(code) => accumulate_outer(&mut grads.wx, code, &des),
            Subject::Finding(i) => {
                for (a, b) in grads.ef[i * d..(i + 1) * d].iter_mut().zip(&des) {
                    *a += b;
                }
            }
        }
        Ok(des)
    }
}

fn dot_ordered(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Intermediate values of one ConvE forward pass.
#[derive(Debug, Clone)]
pub struct ConvETrace {
    /// `2k × k`, subject rows on top.
    pub stacked: Tensor,
    /// `C × (2k−4) × (k−4)` before the ReLU.
    pub conv_pre: Tensor,
    pub conv_act: Tensor,
    /// Projection output before the outer ReLU.
    pub proj_pre: Vec<f64>,
    pub hidden: Vec<f64>,
}

impl ConvETrace {
    /// Shapes along the pipeline: stacked input, conv output, flattened
    /// conv output, projection, score.
    pub fn shapes(&self) -> Vec<Vec<usize>> {
        vec![
            self.stacked.shape().to_vec(),
            self.conv_pre.shape().to_vec(),
            vec![self.conv_act.len()],
            vec![self.hidden.len()],
            vec![],
        ]
    }

    /// Smallest pre-activation magnitude over both ReLUs.
    pub fn min_abs_preactivation(&self) -> f64 {
        self.conv_pre
            .data()
            .iter()
            .chain(&self.proj_pre)
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

/// `ψ = Σ_k e_s[k]·r[k]·e_o[k]`
pub fn score_distmult(es: &[f64], rr: &[f64], eo: &[f64]) -> Result<f64> {
    if es.len() != rr.len() || rr.len() != eo.len() {
        return Err(Error::shape(
            "score_distmult",
            es.len(),
            format!("{}/{}", rr.len(), eo.len()),
        ));
    }
    let mut acc = 0.0;
    for k in 0..es.len() {
        acc += es[k] * rr[k] * eo[k];
    }
    Ok(acc)
}

pub fn score_conve(model: &EmbeddingModel, es: &[f64], rr: &[f64], eo: &[f64]) -> Result<f64> {
    if eo.len() != model.dims.embed_dim {
        return Err(Error::shape("score_conve", model.dims.embed_dim, eo.len()));
    }
    let trace = model.conve_trace(es, rr)?;
    Ok(dot_ordered(&trace.hidden, eo))
}

/// Gradient buffers mirroring the model's parameter blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub wx: Vec<f64>,
    pub ef: Vec<f64>,
    pub er: Vec<f64>,
    pub kernels: Vec<f64>,
    pub wc: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(model: &EmbeddingModel) -> Self {
        let [wx, ef, er, kernels, wc] = model.blocks().map(|b| vec![0.0; b.len()]);
        Self {
            wx,
            ef,
            er,
            kernels,
            wc,
        }
    }

    pub fn blocks(&self) -> [&[f64]; 5] {
        [&self.wx, &self.ef, &self.er, &self.kernels, &self.wc]
    }

    pub fn blocks_mut(&mut self) -> [&mut Vec<f64>; 5] {
        [
            &mut self.wx,
            &mut self.ef,
            &mut self.er,
            &mut self.kernels,
            &mut self.wc,
        ]
    }

    pub fn fill_zero(&mut self) {
        for b in self.blocks_mut() {
            b.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for b in self.blocks_mut() {
            b.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| *v == 0.0))
    }
}

/// Gradients of a single triple score.
#[derive(Debug, Clone)]
pub struct ScoreGradients {
    pub params: Gradients,
    /// `∂ψ/∂e_s`.
    pub subject_embedding: Vec<f64>,
    /// `∂ψ/∂c_X`, present for image subjects.
    pub code: Option<Vec<f64>>,
}

/// Analytic gradient of `upstream · ψ(subject, relation, F_object)`.
pub fn grad_score(
    model: &EmbeddingModel,
    subject: Subject<'_>,
    relation: RelationKind,
    object: usize,
    upstream: f64,
) -> Result<ScoreGradients> {
    model.embed_object(object)?;
    let mut up = vec![0.0; model.dims.findings];
    up[object] = upstream;
    let mut params = Gradients::zeros_like(model);
    let des = model.backward_all_objects(subject, relation, &up, &mut params)?;
    let code = match subject {
        Subject::Image(_) => Some(linear_grad_input(model.wx.data(), &des)),
        Subject::Finding(_) => None,
    };
    Ok(ScoreGradients {
        params,
        subject_embedding: des,
        code,
    })
}

/// Glorot-uniform initialisation per block, deterministic in `seed`.
pub fn init_model(dims: ModelDims, kind: ScorerKind, seed: u64) -> Result<EmbeddingModel> {
    let geometry = dims.validate(kind)?;
    let shapes = block_shapes(kind, &dims, geometry.as_ref());
    let k2 = ConvSpec::KERNEL * ConvSpec::KERNEL;
    let fans = [
        (shapes[0][0], shapes[0][1]),
        (shapes[1][0], shapes[1][1]),
        (shapes[2][0], shapes[2][1]),
        (k2, dims.channels * k2),
        (shapes[4][0], shapes[4][1]),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocks = std::array::from_fn(|b| {
        let len: usize = shapes[b].iter().product();
        let (fan_in, fan_out) = fans[b];
        let bound = init_bound(fan_in, fan_out);
        (0..len).map(|_| rng.random_range(-bound..=bound)).collect()
    });
    EmbeddingModel::from_blocks(kind, dims, blocks)
}

/// `sqrt(6 / (fan_in + fan_out))`
pub fn init_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out).max(1) as f64).sqrt()
}

/// Scalar parameter count of each block, in `BLOCK_NAMES` order.
pub fn param_counts(model: &EmbeddingModel) -> [usize; 5] {
    model.blocks().map(Tensor::len)
}

pub fn param_count(model: &EmbeddingModel) -> usize {
    param_counts(model).iter().sum()
}
