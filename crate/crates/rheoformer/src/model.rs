//! The operator model: encoder (softmax-free self-attention blocks),
//! decoder (random Fourier projection + cross-attention to arbitrary query
//! points), and a residual latent propagator for time marching.
//!
//! Inference decodes from a latent state that is advanced entirely in
//! latent space: the encoder and the cross-attention run once per rollout,
//! each propagation step reuses a fixed-size latent, so the working memory
//! of a rollout does not grow with the horizon.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{cross_attention, fourier_attention, galerkin_attention, FourierFeatureMap};
use crate::error::{Result, RheoError};
use crate::tensor::{Matrix, Tape, TensorId};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKind {
    Fourier,
    Galerkin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    Gelu,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub coord_dim: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_encoder_layers: usize,
    pub attention: AttentionKind,
    /// Hidden width of the encoder/decoder feed-forward blocks.
    pub ffn_hidden: usize,
    /// Hidden width of the point-wise residual propagator.
    pub propagator_hidden: usize,
    /// Number of linear layers in the propagator (2 = one hidden layer).
    pub propagator_layers: usize,
    /// Output dimension of the random Fourier projection (d2 cos + d2 sin).
    pub fourier_d2: usize,
    /// Scale of the Gaussian draw for the frozen projection matrix.
    pub fourier_sigma: f64,
    pub nonlinearity: Nonlinearity,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            out_channels: 1,
            coord_dim: 1,
            d_model: 96,
            n_heads: 4,
            n_encoder_layers: 3,
            attention: AttentionKind::Galerkin,
            ffn_hidden: 192,
            propagator_hidden: 192,
            propagator_layers: 2,
            fourier_d2: 48,
            fourier_sigma: 1.0,
            nonlinearity: Nonlinearity::Gelu,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            self.in_channels,
            self.out_channels,
            self.coord_dim,
            self.d_model,
            self.n_heads,
            self.n_encoder_layers,
            self.ffn_hidden,
            self.propagator_hidden,
            self.propagator_layers,
            self.fourier_d2,
        ];
        if pos.iter().any(|&v| v == 0) || !(self.fourier_sigma > 0.0) {
            return Err(RheoError::Config(format!("invalid model config: {self:?}")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(RheoError::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Parameter registry
// ---------------------------------------------------------------------------

pub type ParamId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    /// Frozen arrays (the random Fourier projection) are persisted but
    /// excluded from optimization.
    pub trainable: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    pub entries: Vec<Param>,
}

impl ParamSet {
    pub fn matrix(&self, id: ParamId) -> Matrix {
        let p = &self.entries[id];
        Matrix::new(p.rows, p.cols, p.data.clone())
    }

    pub fn n_trainable_values(&self) -> usize {
        self.entries.iter().filter(|p| p.trainable).map(|p| p.data.len()).sum()
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.entries.iter().find(|p| p.name == name)
    }

    pub fn load_named(&mut self, name: &str, data: &[f64]) -> Result<()> {
        let p = self
            .entries
            .iter_mut()
            .find(|p| p.name == name)
            .ok_or_else(|| RheoError::MissingArray(name.to_string()))?;
        if p.data.len() != data.len() {
            return Err(RheoError::Config(format!(
                "array {name}: expected {} values, got {}",
                p.data.len(),
                data.len()
            )));
        }
        p.data.copy_from_slice(data);
        Ok(())
    }
}

struct ParamBuilder {
    set: ParamSet,
    rng: ChaCha8Rng,
}

impl ParamBuilder {
    fn new(seed: u64) -> Self {
        Self { set: ParamSet::default(), rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    fn push(&mut self, name: String, rows: usize, cols: usize, data: Vec<f64>, trainable: bool) -> ParamId {
        self.set.entries.push(Param { name, rows, cols, data, trainable });
        self.set.entries.len() - 1
    }

    fn xavier(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data: Vec<f64> = (0..rows * cols).map(|_| self.rng.random_range(-bound..bound)).collect();
        self.push(name.into(), rows, cols, data, true)
    }

    fn zeros(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.push(name.into(), rows, cols, vec![0.0; rows * cols], true)
    }

    fn ones(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.push(name.into(), rows, cols, vec![1.0; rows * cols], true)
    }

    fn frozen(&mut self, name: &str, m: Matrix) -> ParamId {
        self.push(name.into(), m.rows, m.cols, m.data, false)
    }
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    fn new(pb: &mut ParamBuilder, name: &str, din: usize, dout: usize) -> Self {
        Self {
            w: pb.xavier(&format!("{name}.w"), din, dout),
            b: pb.zeros(&format!("{name}.b"), 1, dout),
        }
    }

    fn new_zero(pb: &mut ParamBuilder, name: &str, din: usize, dout: usize) -> Self {
        Self {
            w: pb.zeros(&format!("{name}.w"), din, dout),
            b: pb.zeros(&format!("{name}.b"), 1, dout),
        }
    }

    fn forward(&self, tape: &mut Tape, ids: &[TensorId], x: TensorId) -> Result<TensorId> {
        let h = tape.matmul(x, ids[self.w])?;
        tape.add_row_bias(h, ids[self.b])
    }
}

/// Point-wise multi-layer perceptron with GELU between layers.
#[derive(Debug, Clone)]
struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    fn new(pb: &mut ParamBuilder, name: &str, dims: &[usize], zero_last: bool) -> Self {
        let layers = (0..dims.len() - 1)
            .map(|i| {
                let lname = format!("{name}.{i}");
                if zero_last && i == dims.len() - 2 {
                    Linear::new_zero(pb, &lname, dims[i], dims[i + 1])
                } else {
                    Linear::new(pb, &lname, dims[i], dims[i + 1])
                }
            })
            .collect();
        Self { layers }
    }

    fn forward(&self, tape: &mut Tape, ids: &[TensorId], x: TensorId) -> Result<TensorId> {
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(tape, ids, h)?;
            if i + 1 < self.layers.len() {
                h = tape.gelu(h);
            }
        }
        Ok(h)
    }
}

#[derive(Debug, Clone)]
struct NormLayer {
    gain: ParamId,
    bias: ParamId,
}

impl NormLayer {
    fn new(pb: &mut ParamBuilder, name: &str, d: usize) -> Self {
        Self { gain: pb.ones(&format!("{name}.gain"), 1, d), bias: pb.zeros(&format!("{name}.bias"), 1, d) }
    }

    fn rows(&self, tape: &mut Tape, ids: &[TensorId], x: TensorId) -> Result<TensorId> {
        tape.layer_norm(x, ids[self.gain], ids[self.bias], LAYER_NORM_EPS)
    }

    fn cols(&self, tape: &mut Tape, ids: &[TensorId], x: TensorId) -> Result<TensorId> {
        tape.col_norm(x, ids[self.gain], ids[self.bias], LAYER_NORM_EPS)
    }
}

/// Multi-head softmax-free attention. Galerkin kind column-normalizes K
/// and V; Fourier kind column-normalizes Q and K.
#[derive(Debug, Clone)]
struct MultiHeadAttention {
    kind: AttentionKind,
    n_heads: usize,
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    norm_a: NormLayer,
    norm_b: NormLayer,
}

impl MultiHeadAttention {
    fn new(pb: &mut ParamBuilder, name: &str, d_model: usize, n_heads: usize, kind: AttentionKind) -> Self {
        Self {
            kind,
            n_heads,
            wq: Linear::new(pb, &format!("{name}.wq"), d_model, d_model),
            wk: Linear::new(pb, &format!("{name}.wk"), d_model, d_model),
            wv: Linear::new(pb, &format!("{name}.wv"), d_model, d_model),
            wo: Linear::new(pb, &format!("{name}.wo"), d_model, d_model),
            norm_a: NormLayer::new(pb, &format!("{name}.norm_a"), d_model),
            norm_b: NormLayer::new(pb, &format!("{name}.norm_b"), d_model),
        }
    }

    /// `queries` and `context` coincide for self-attention.
    fn forward(&self, tape: &mut Tape, ids: &[TensorId], queries: TensorId, context: TensorId) -> Result<TensorId> {
        let d_model = tape.shape(queries).1;
        let d_head = d_model / self.n_heads;
        let mut q = self.wq.forward(tape, ids, queries)?;
        let mut k = self.wk.forward(tape, ids, context)?;
        let mut v = self.wv.forward(tape, ids, context)?;
        match self.kind {
            AttentionKind::Galerkin => {
                k = self.norm_a.cols(tape, ids, k)?;
                v = self.norm_b.cols(tape, ids, v)?;
            }
            AttentionKind::Fourier => {
                q = self.norm_a.cols(tape, ids, q)?;
                k = self.norm_b.cols(tape, ids, k)?;
            }
        }
        let cross = tape.shape(queries).0 != tape.shape(context).0;
        let mut heads = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let qh = tape.slice_cols(q, h * d_head, d_head);
            let kh = tape.slice_cols(k, h * d_head, d_head);
            let vh = tape.slice_cols(v, h * d_head, d_head);
            let zh = if cross {
                cross_attention(tape, qh, kh, vh)?
            } else {
                match self.kind {
                    AttentionKind::Galerkin => galerkin_attention(tape, qh, kh, vh)?,
                    AttentionKind::Fourier => fourier_attention(tape, qh, kh, vh)?,
                }
            };
            heads.push(zh);
        }
        let z = tape.concat_cols(&heads)?;
        self.wo.forward(tape, ids, z)
    }
}

/// Self-attention block with post-norm residuals:
/// `x = LN(x + attn(x)); x = LN(x + ffn(x))`.
#[derive(Debug, Clone)]
struct EncoderLayer {
    attn: MultiHeadAttention,
    norm1: NormLayer,
    ffn: Mlp,
    norm2: NormLayer,
}

impl EncoderLayer {
    fn new(pb: &mut ParamBuilder, name: &str, cfg: &ModelConfig) -> Self {
        Self {
            attn: MultiHeadAttention::new(pb, &format!("{name}.attn"), cfg.d_model, cfg.n_heads, cfg.attention),
            norm1: NormLayer::new(pb, &format!("{name}.norm1"), cfg.d_model),
            ffn: Mlp::new(pb, &format!("{name}.ffn"), &[cfg.d_model, cfg.ffn_hidden, cfg.d_model], false),
            norm2: NormLayer::new(pb, &format!("{name}.norm2"), cfg.d_model),
        }
    }

    fn forward(&self, tape: &mut Tape, ids: &[TensorId], x: TensorId) -> Result<TensorId> {
        let a = self.attn.forward(tape, ids, x, x)?;
        let s = tape.add(x, a)?;
        let x = self.norm1.rows(tape, ids, s)?;
        let f = self.ffn.forward(tape, ids, x)?;
        let s = tape.add(x, f)?;
        self.norm2.rows(tape, ids, s)
    }
}

/// Statistics of one inference rollout, used to verify that working memory
/// stays flat in the horizon length.
#[derive(Debug, Clone, Copy, Default)]
pub struct RolloutStats {
    /// Peak number of f64 values resident on any single tape during the
    /// rollout (encoder pass included).
    pub peak_tape_elems: usize,
    pub steps: usize,
}

/// Latent values at the query locations plus a step counter.
#[derive(Debug, Clone)]
pub struct LatentState {
    pub z: Matrix,
    pub t_index: usize,
}

pub struct RheoModel {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub seed: u64,
    lift: Mlp,
    layers: Vec<EncoderLayer>,
    rff_b: ParamId,
    query_mlp: Mlp,
    cross_attn: MultiHeadAttention,
    cross_norm1: NormLayer,
    cross_ffn: Mlp,
    cross_norm2: NormLayer,
    propagator: Mlp,
    decoder: Mlp,
}

impl RheoModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut pb = ParamBuilder::new(seed);
        let d = config.d_model;
        let lift = Mlp::new(&mut pb, "lift", &[config.in_channels + config.coord_dim, d, d], false);
        let layers = (0..config.n_encoder_layers)
            .map(|i| EncoderLayer::new(&mut pb, &format!("enc.{i}"), &config))
            .collect();
        let rff = FourierFeatureMap::new(config.coord_dim, config.fourier_d2, config.fourier_sigma, seed ^ 0x5eed_f00d);
        let rff_b = pb.frozen("rff.b", rff.b);
        let query_mlp = Mlp::new(&mut pb, "query_mlp", &[2 * config.fourier_d2, d, d], false);
        let cross_attn = MultiHeadAttention::new(&mut pb, "cross.attn", d, config.n_heads, config.attention);
        let cross_norm1 = NormLayer::new(&mut pb, "cross.norm1", d);
        let cross_ffn = Mlp::new(&mut pb, "cross.ffn", &[d, config.ffn_hidden, d], false);
        let cross_norm2 = NormLayer::new(&mut pb, "cross.norm2", d);
        let mut prop_dims = vec![d];
        for _ in 0..config.propagator_layers - 1 {
            prop_dims.push(config.propagator_hidden);
        }
        prop_dims.push(d);
        // zero-initialized last layer: the propagator starts as the identity
        let propagator = Mlp::new(&mut pb, "propagator", &prop_dims, true);
        let decoder = Mlp::new(&mut pb, "decoder", &[d, config.ffn_hidden, config.out_channels], false);
        Ok(Self {
            config,
            params: pb.set,
            seed,
            lift,
            layers,
            rff_b,
            query_mlp,
            cross_attn,
            cross_norm1,
            cross_ffn,
            cross_norm2,
            propagator,
            decoder,
        })
    }

    pub fn fourier_map(&self) -> FourierFeatureMap {
        FourierFeatureMap::from_matrix(self.params.matrix(self.rff_b), self.config.fourier_sigma)
    }

    /// Inserts every parameter as a leaf on the tape; `with_grad` marks
    /// trainable parameters for gradient accumulation.
    pub fn bind(&self, tape: &mut Tape, with_grad: bool) -> Vec<TensorId> {
        self.params
            .entries
            .iter()
            .map(|p| tape.leaf(p.rows, p.cols, p.data.clone(), with_grad && p.trainable))
            .collect()
    }

    /// Encoder: concatenated (values, coords) lifted to `d_model` and passed
    /// through the self-attention blocks.
    pub fn encode(&self, tape: &mut Tape, ids: &[TensorId], values: TensorId, coords: TensorId) -> Result<TensorId> {
        let (n, c) = tape.shape(values);
        let (nc, cd) = tape.shape(coords);
        if n != nc || c != self.config.in_channels || cd != self.config.coord_dim {
            return Err(RheoError::ShapeMismatch { op: "encode", lhs: (n, c), rhs: (nc, cd) });
        }
        if tape.value(values).iter().any(|v| !v.is_finite()) {
            return Err(RheoError::NonFinite("encoder input"));
        }
        let x = tape.concat_cols(&[values, coords])?;
        let mut h = self.lift.forward(tape, ids, x)?;
        for layer in &self.layers {
            h = layer.forward(tape, ids, h)?;
        }
        Ok(h)
    }

    /// Decoder front half: query coordinates through the frozen Fourier
    /// projection and a feed-forward network, then cross-attention against
    /// the encoded input features.
    pub fn initial_latent(
        &self,
        tape: &mut Tape,
        ids: &[TensorId],
        encoded: TensorId,
        query_coords: &Matrix,
    ) -> Result<TensorId> {
        let gamma = self.fourier_map().project(query_coords)?;
        let gamma_id = tape.leaf_matrix(&gamma, false);
        let q_feat = self.query_mlp.forward(tape, ids, gamma_id)?;
        let a = self.cross_attn.forward(tape, ids, q_feat, encoded)?;
        let s = tape.add(q_feat, a)?;
        let x = self.cross_norm1.rows(tape, ids, s)?;
        let f = self.cross_ffn.forward(tape, ids, x)?;
        let s = tape.add(x, f)?;
        self.cross_norm2.rows(tape, ids, s)
    }

    /// One residual latent step: `z + N(z)`.
    pub fn propagate(&self, tape: &mut Tape, ids: &[TensorId], z: TensorId) -> Result<TensorId> {
        let n = self.propagator.forward(tape, ids, z)?;
        tape.add(z, n)
    }

    /// Point-wise decoding of a latent state to output channels.
    pub fn decode(&self, tape: &mut Tape, ids: &[TensorId], z: TensorId) -> Result<TensorId> {
        self.decoder.forward(tape, ids, z)
    }

    // -- plain-matrix inference API ------------------------------------------------

    pub fn encode_matrix(&self, values: &Matrix, coords: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let ids = self.bind(&mut tape, false);
        let v = tape.leaf_matrix(values, false);
        let c = tape.leaf_matrix(coords, false);
        let h = self.encode(&mut tape, &ids, v, c)?;
        Ok(tape.value_matrix(h))
    }

    pub fn make_initial_latent(&self, encoded: &Matrix, query_coords: &Matrix) -> Result<LatentState> {
        let mut tape = Tape::new();
        let ids = self.bind(&mut tape, false);
        let e = tape.leaf_matrix(encoded, false);
        let z = self.initial_latent(&mut tape, &ids, e, query_coords)?;
        Ok(LatentState { z: tape.value_matrix(z), t_index: 0 })
    }

    pub fn propagate_state(&self, state: &LatentState) -> Result<LatentState> {
        if !state.z.is_finite() {
            return Err(RheoError::Diverged { step: state.t_index });
        }
        let mut tape = Tape::new();
        let ids = self.bind(&mut tape, false);
        let z = tape.leaf_matrix(&state.z, false);
        let z1 = self.propagate(&mut tape, &ids, z)?;
        let out = tape.value_matrix(z1);
        if !out.is_finite() {
            return Err(RheoError::Diverged { step: state.t_index + 1 });
        }
        Ok(LatentState { z: out, t_index: state.t_index + 1 })
    }

    pub fn decode_field(&self, state: &LatentState) -> Result<Matrix> {
        if !state.z.is_finite() {
            return Err(RheoError::Diverged { step: state.t_index });
        }
        let mut tape = Tape::new();
        let ids = self.bind(&mut tape, false);
        let z = tape.leaf_matrix(&state.z, false);
        let y = self.decode(&mut tape, &ids, z)?;
        Ok(tape.value_matrix(y))
    }

    /// Single-pass function-to-function prediction (the rheometric mode):
    /// no time marching, the propagator is bypassed.
    pub fn predict_function(&self, values: &Matrix, coords: &Matrix, query_coords: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let ids = self.bind(&mut tape, false);
        let v = tape.leaf_matrix(values, false);
        let c = tape.leaf_matrix(coords, false);
        let h = self.encode(&mut tape, &ids, v, c)?;
        let z = self.initial_latent(&mut tape, &ids, h, query_coords)?;
        let y = self.decode(&mut tape, &ids, z)?;
        Ok(tape.value_matrix(y))
    }

    /// Stacks `k` conditioning snapshots channel-wise into one encoder
    /// input (`k * channels` features per point; no explicit time
    /// coordinate).
    pub fn stack_snapshots(snapshots: &[Matrix]) -> Result<Matrix> {
        if snapshots.is_empty() {
            return Err(RheoError::Config("need at least one conditioning snapshot".into()));
        }
        let n = snapshots[0].rows;
        let c = snapshots[0].cols;
        let mut out = Matrix::zeros(n, snapshots.len() * c);
        for (s, snap) in snapshots.iter().enumerate() {
            if snap.rows != n || snap.cols != c {
                return Err(RheoError::ShapeMismatch {
                    op: "stack_snapshots",
                    lhs: (n, c),
                    rhs: (snap.rows, snap.cols),
                });
            }
            for r in 0..n {
                for j in 0..c {
                    out.set(r, s * c + j, snap.get(r, j));
                }
            }
        }
        Ok(out)
    }

    /// Open-loop latent rollout: encode once, form the initial latent at
    /// the query points, then alternate propagate/decode. Each step runs on
    /// a fresh tape seeded with the previous latent values, so the peak
    /// working set is independent of `n_future`.
    pub fn rollout(
        &self,
        input_snapshots: &[Matrix],
        coords: &Matrix,
        query_coords: &Matrix,
        n_future: usize,
    ) -> Result<(Vec<Matrix>, RolloutStats)> {
        let values = Self::stack_snapshots(input_snapshots)?;
        let mut stats = RolloutStats::default();

        let mut z = {
            let mut tape = Tape::new();
            let ids = self.bind(&mut tape, false);
            let v = tape.leaf_matrix(&values, false);
            let c = tape.leaf_matrix(coords, false);
            let h = self.encode(&mut tape, &ids, v, c)?;
            let z0 = self.initial_latent(&mut tape, &ids, h, query_coords)?;
            stats.peak_tape_elems = stats.peak_tape_elems.max(tape.live_value_elems());
            LatentState { z: tape.value_matrix(z0), t_index: 0 }
        };

        let mut outputs = Vec::with_capacity(n_future);
        for _ in 0..n_future {
            let mut tape = Tape::new();
            let ids = self.bind(&mut tape, false);
            let zi = tape.leaf_matrix(&z.z, false);
            let z1 = self.propagate(&mut tape, &ids, zi)?;
            let y = self.decode(&mut tape, &ids, z1)?;
            stats.peak_tape_elems = stats.peak_tape_elems.max(tape.live_value_elems());
            let znew = tape.value_matrix(z1);
            if !znew.is_finite() {
                return Err(RheoError::Diverged { step: z.t_index + 1 });
            }
            z = LatentState { z: znew, t_index: z.t_index + 1 };
            outputs.push(tape.value_matrix(y));
            stats.steps += 1;
        }
        Ok((outputs, stats))
    }

    /// Same rollout on a caller-owned tape, keeping every step
    /// differentiable (the training path).
    #[allow(clippy::too_many_arguments)]
    pub fn rollout_on_tape(
        &self,
        tape: &mut Tape,
        ids: &[TensorId],
        stacked_values: &Matrix,
        coords: &Matrix,
        query_coords: &Matrix,
        n_future: usize,
    ) -> Result<Vec<TensorId>> {
        let v = tape.leaf_matrix(stacked_values, false);
        let c = tape.leaf_matrix(coords, false);
        let h = self.encode(tape, ids, v, c)?;
        let mut z = self.initial_latent(tape, ids, h, query_coords)?;
        let mut outputs = Vec::with_capacity(n_future);
        for _ in 0..n_future {
            z = self.propagate(tape, ids, z)?;
            outputs.push(self.decode(tape, ids, z)?);
        }
        Ok(outputs)
    }
}
