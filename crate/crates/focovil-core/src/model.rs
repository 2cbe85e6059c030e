//! The shared auto-encoder backbone: a stacked bidirectional GRU encoder,
//! a two-layer projection head, and a zero-input GRU decoder.
//!
//! Layout. Rows are batch entries throughout; a linear map is `x·W + b`
//! with `W` stored (input, output). The encoder stacks [`ModelHyper::n_layers`]
//! bidirectional layers; layer ℓ consumes the per-frame concatenation of
//! layer ℓ−1's forward and backward states. The latent code is the
//! concatenation of the top layer's final forward state (after the last
//! frame) and final backward state (after the first frame), so the latent
//! dimension is twice the hidden size.
//!
//! The projection squeezes the latent to half its size and expands back
//! (affine → tanh → affine). The decoder turns a code into an initial
//! hidden state through an affine adapter, then runs a single GRU cell fed
//! a zero pose vector at every step; because the input is identically
//! zero, the input weight matrices of the decoder cell contribute nothing
//! and receive no gradient, but they remain part of the parameter set so
//! the cell is a complete GRU.
//!
//! All shapes, including batched ones, run through one graph-building code
//! path, so a batched encode equals the per-sequence encode bit for bit.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng;
use crate::skeleton::ActionSequence;

/// Architecture sizes. `input_dim` is the flattened pose width 3N.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct ModelHyper {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub n_layers: usize,
}

impl ModelHyper {
    pub fn new(input_dim: usize, hidden_dim: usize, n_layers: usize) -> Result<Self> {
        let h = Self {
            input_dim,
            hidden_dim,
            n_layers,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.n_layers == 0 {
            return Err(Error::InvalidConfig {
                reason: "model dimensions must be positive".to_string(),
            });
        }
        Ok(())
    }

    /// Latent width: both directions of the top layer.
    pub fn latent_dim(&self) -> usize {
        2 * self.hidden_dim
    }

    /// Projection bottleneck: half the latent width.
    pub fn projection_mid(&self) -> usize {
        self.latent_dim() / 2
    }

    /// Decoder hidden size; matches the latent width so the adapter is
    /// square.
    pub fn decoder_hidden(&self) -> usize {
        self.latent_dim()
    }
}

/// One GRU cell's parameters; `T` is [`Tensor`] for values and [`Var`] for
/// graph nodes.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GruCell<T> {
    pub w_z: T,
    pub u_z: T,
    pub b_z: T,
    pub w_r: T,
    pub u_r: T,
    pub b_r: T,
    pub w_h: T,
    pub u_h: T,
    pub b_h: T,
}

/// Affine map `x·w + b`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Affine<T> {
    pub w: T,
    pub b: T,
}

/// One bidirectional encoder layer.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BiLayer<T> {
    pub fwd: GruCell<T>,
    pub bwd: GruCell<T>,
}

/// Every parameter of the model, generic over the leaf type so the same
/// traversal serves values, graph nodes, and optimizer state.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelShape<T> {
    pub encoder: Vec<BiLayer<T>>,
    pub proj_in: Affine<T>,
    pub proj_out: Affine<T>,
    pub dec_adapter: Affine<T>,
    pub dec_cell: GruCell<T>,
    pub dec_out: Affine<T>,
}

impl<T> GruCell<T> {
    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> GruCell<U> {
        GruCell {
            w_z: f(&self.w_z),
            u_z: f(&self.u_z),
            b_z: f(&self.b_z),
            w_r: f(&self.w_r),
            u_r: f(&self.u_r),
            b_r: f(&self.b_r),
            w_h: f(&self.w_h),
            u_h: f(&self.u_h),
            b_h: f(&self.b_h),
        }
    }

    fn leaves<'a>(&'a self, out: &mut Vec<&'a T>) {
        out.extend([
            &self.w_z, &self.u_z, &self.b_z, &self.w_r, &self.u_r, &self.b_r, &self.w_h,
            &self.u_h, &self.b_h,
        ]);
    }

    fn leaves_mut<'a>(&'a mut self, out: &mut Vec<&'a mut T>) {
        out.extend([
            &mut self.w_z,
            &mut self.u_z,
            &mut self.b_z,
            &mut self.w_r,
            &mut self.u_r,
            &mut self.b_r,
            &mut self.w_h,
            &mut self.u_h,
            &mut self.b_h,
        ]);
    }
}

impl<T> Affine<T> {
    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> Affine<U> {
        Affine {
            w: f(&self.w),
            b: f(&self.b),
        }
    }

    fn leaves<'a>(&'a self, out: &mut Vec<&'a T>) {
        out.extend([&self.w, &self.b]);
    }

    fn leaves_mut<'a>(&'a mut self, out: &mut Vec<&'a mut T>) {
        out.extend([&mut self.w, &mut self.b]);
    }
}

impl<T> ModelShape<T> {
    /// Applies `f` to every leaf, preserving structure. The traversal
    /// order is fixed and shared with [`Self::leaves`].
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> ModelShape<U> {
        ModelShape {
            encoder: self
                .encoder
                .iter()
                .map(|layer| BiLayer {
                    fwd: layer.fwd.map(&mut f),
                    bwd: layer.bwd.map(&mut f),
                })
                .collect(),
            proj_in: self.proj_in.map(&mut f),
            proj_out: self.proj_out.map(&mut f),
            dec_adapter: self.dec_adapter.map(&mut f),
            dec_cell: self.dec_cell.map(&mut f),
            dec_out: self.dec_out.map(&mut f),
        }
    }

    /// Every leaf in the fixed traversal order.
    pub fn leaves(&self) -> Vec<&T> {
        let mut out = Vec::new();
        for layer in &self.encoder {
            layer.fwd.leaves(&mut out);
            layer.bwd.leaves(&mut out);
        }
        self.proj_in.leaves(&mut out);
        self.proj_out.leaves(&mut out);
        self.dec_adapter.leaves(&mut out);
        self.dec_cell.leaves(&mut out);
        self.dec_out.leaves(&mut out);
        out
    }

    /// Mutable access to every leaf, same order as [`Self::leaves`].
    pub fn leaves_mut(&mut self) -> Vec<&mut T> {
        let mut out = Vec::new();
        for layer in &mut self.encoder {
            layer.fwd.leaves_mut(&mut out);
            layer.bwd.leaves_mut(&mut out);
        }
        self.proj_in.leaves_mut(&mut out);
        self.proj_out.leaves_mut(&mut out);
        self.dec_adapter.leaves_mut(&mut out);
        self.dec_cell.leaves_mut(&mut out);
        self.dec_out.leaves_mut(&mut out);
        out
    }
}

/// Concrete parameter values.
pub type ModelParams = ModelShape<Tensor>;
/// The same parameters as nodes of a graph.
pub type ModelVars = ModelShape<Var>;
/// Per-parameter optimizer statistics share the parameter layout.
pub type AdamMoments = ModelShape<Tensor>;

fn init_matrix(r: &mut impl Rng, d_in: usize, d_out: usize) -> Tensor {
    let lim = 1.0 / crate::math::sqrt(d_in as f64);
    let data = (0..d_in * d_out).map(|_| r.gen_range(-lim..lim)).collect();
    Tensor::new([d_in, d_out], data).expect("consistent shape")
}

fn init_cell(r: &mut impl Rng, d_in: usize, d_h: usize) -> GruCell<Tensor> {
    GruCell {
        w_z: init_matrix(r, d_in, d_h),
        u_z: init_matrix(r, d_h, d_h),
        b_z: Tensor::zeros([d_h]),
        w_r: init_matrix(r, d_in, d_h),
        u_r: init_matrix(r, d_h, d_h),
        b_r: Tensor::zeros([d_h]),
        w_h: init_matrix(r, d_in, d_h),
        u_h: init_matrix(r, d_h, d_h),
        b_h: Tensor::zeros([d_h]),
    }
}

fn init_affine(r: &mut impl Rng, d_in: usize, d_out: usize) -> Affine<Tensor> {
    Affine {
        w: init_matrix(r, d_in, d_out),
        b: Tensor::zeros([d_out]),
    }
}

impl ModelParams {
    /// Seeded uniform(−1/√fan_in, 1/√fan_in) weights, zero biases.
    pub fn init(hyper: &ModelHyper, seed: u64) -> Result<ModelParams> {
        hyper.validate()?;
        let mut r = rng::stream(seed, "model-init", 0, 0);
        let (d_h, d) = (hyper.hidden_dim, hyper.latent_dim());
        let encoder = (0..hyper.n_layers)
            .map(|layer| {
                let d_in = if layer == 0 { hyper.input_dim } else { d };
                BiLayer {
                    fwd: init_cell(&mut r, d_in, d_h),
                    bwd: init_cell(&mut r, d_in, d_h),
                }
            })
            .collect();
        Ok(ModelShape {
            encoder,
            proj_in: init_affine(&mut r, d, hyper.projection_mid()),
            proj_out: init_affine(&mut r, hyper.projection_mid(), d),
            dec_adapter: init_affine(&mut r, d, hyper.decoder_hidden()),
            dec_cell: init_cell(&mut r, hyper.input_dim, hyper.decoder_hidden()),
            dec_out: init_affine(&mut r, hyper.decoder_hidden(), hyper.input_dim),
        })
    }

    /// All-zero parameters with the architecture's shapes (closed-form
    /// test fixtures).
    pub fn zeros(hyper: &ModelHyper) -> Result<ModelParams> {
        let mut template = Self::init(hyper, 0)?;
        for leaf in template.leaves_mut() {
            *leaf = Tensor::zeros(leaf.shape().to_vec());
        }
        Ok(template)
    }

    /// Checks every leaf against the shapes `hyper` implies.
    pub fn validate_shapes(&self, hyper: &ModelHyper) -> Result<()> {
        hyper.validate()?;
        let reference = Self::zeros(hyper)?;
        let (a, b) = (self.leaves(), reference.leaves());
        if a.len() != b.len() {
            return Err(Error::ShapeMismatch {
                op: "model_params",
                detail: format!("{} leaves, architecture has {}", a.len(), b.len()),
            });
        }
        for (i, (x, y)) in a.iter().zip(&b).enumerate() {
            if x.shape() != y.shape() {
                return Err(Error::ShapeMismatch {
                    op: "model_params",
                    detail: format!(
                        "leaf {i}: shape {:?}, architecture wants {:?}",
                        x.shape(),
                        y.shape()
                    ),
                });
            }
        }
        Ok(())
    }
}

/// Registers every parameter as a differentiable graph leaf.
pub fn insert_params(g: &mut Graph, params: &ModelParams) -> ModelVars {
    params.map(|t| g.param(t.clone()))
}

/// Registers every parameter as a constant (inference only; no gradient
/// bookkeeping).
pub fn insert_constants(g: &mut Graph, params: &ModelParams) -> ModelVars {
    params.map(|t| g.constant(t.clone()))
}

/// One GRU update. `x` is B×d_in, `h` is B×d_h.
pub fn gru_step(g: &mut Graph, x: Var, h: Var, cell: &GruCell<Var>) -> Result<Var> {
    let zx = g.matmul(x, cell.w_z)?;
    let zh = g.matmul(h, cell.u_z)?;
    let zs = g.add(zx, zh)?;
    let z = {
        let a = g.add_bias(zs, cell.b_z)?;
        g.sigmoid(a)?
    };
    let rx = g.matmul(x, cell.w_r)?;
    let rh = g.matmul(h, cell.u_r)?;
    let rs = g.add(rx, rh)?;
    let r = {
        let a = g.add_bias(rs, cell.b_r)?;
        g.sigmoid(a)?
    };
    let gated = g.mul(r, h)?;
    let cx = g.matmul(x, cell.w_h)?;
    let ch = g.matmul(gated, cell.u_h)?;
    let cs = g.add(cx, ch)?;
    let cand = {
        let a = g.add_bias(cs, cell.b_h)?;
        g.tanh(a)?
    };
    // h' = (1−z)⊙h + z⊙cand, written as h + z⊙(cand − h).
    let delta = g.sub(cand, h)?;
    let step = g.mul(z, delta)?;
    g.add(h, step)
}

/// GRU update with the input pinned to the zero vector: the x·W terms
/// vanish exactly, so they are omitted rather than multiplied out.
pub fn gru_step_zero_input(g: &mut Graph, h: Var, cell: &GruCell<Var>) -> Result<Var> {
    let zh = g.matmul(h, cell.u_z)?;
    let z = {
        let a = g.add_bias(zh, cell.b_z)?;
        g.sigmoid(a)?
    };
    let rh = g.matmul(h, cell.u_r)?;
    let r = {
        let a = g.add_bias(rh, cell.b_r)?;
        g.sigmoid(a)?
    };
    let gated = g.mul(r, h)?;
    let ch = g.matmul(gated, cell.u_h)?;
    let cand = {
        let a = g.add_bias(ch, cell.b_h)?;
        g.tanh(a)?
    };
    let delta = g.sub(cand, h)?;
    let step = g.mul(z, delta)?;
    g.add(h, step)
}

fn run_direction(
    g: &mut Graph,
    steps: &[Var],
    cell: &GruCell<Var>,
    d_h: usize,
    reverse: bool,
) -> Result<Vec<Var>> {
    let b = g.value(steps[0]).rows();
    let mut h = g.constant(Tensor::zeros([b, d_h]));
    let mut states = alloc::vec![h; steps.len()];
    let order: Vec<usize> = if reverse {
        (0..steps.len()).rev().collect()
    } else {
        (0..steps.len()).collect()
    };
    for t in order {
        h = gru_step(g, steps[t], h, cell)?;
        states[t] = h;
    }
    Ok(states)
}

/// Runs the stacked bidirectional encoder over per-frame inputs (each
/// B×3N) and returns the B×2d_h latent code.
pub fn encode_steps(g: &mut Graph, steps: &[Var], vars: &ModelVars) -> Result<Var> {
    if steps.is_empty() {
        return Err(Error::InvalidInput {
            reason: "encoder needs at least one frame".to_string(),
        });
    }
    let d_h = g.value(vars.encoder[0].fwd.b_z).numel();
    let mut inputs: Vec<Var> = steps.to_vec();
    let mut final_pair = None;
    for layer in &vars.encoder {
        let fwd = run_direction(g, &inputs, &layer.fwd, d_h, false)?;
        let bwd = run_direction(g, &inputs, &layer.bwd, d_h, true)?;
        // Forward summary: state after the last frame. Backward summary:
        // state after the first frame (the end of its sweep).
        final_pair = Some((fwd[fwd.len() - 1], bwd[0]));
        inputs = fwd
            .iter()
            .zip(&bwd)
            .map(|(&f, &b)| g.concat(&[f, b], 1))
            .collect::<Result<Vec<_>>>()?;
    }
    let (f_last, b_first) = final_pair.expect("n_layers >= 1");
    g.concat(&[f_last, b_first], 1)
}

/// Projection head: affine squeeze, tanh, affine expand.
pub fn project_var(g: &mut Graph, z: Var, vars: &ModelVars) -> Result<Var> {
    let m = g.matmul(z, vars.proj_in.w)?;
    let m = g.add_bias(m, vars.proj_in.b)?;
    let m = g.tanh(m)?;
    let o = g.matmul(m, vars.proj_out.w)?;
    g.add_bias(o, vars.proj_out.b)
}

/// Decodes a code into `t_len` pose frames. Returns the frames stacked
/// frame-major: rows [frame 0 of every sequence, frame 1 of every
/// sequence, ...], shape (t_len·B)×3N.
pub fn decode_steps(g: &mut Graph, code: Var, t_len: usize, vars: &ModelVars) -> Result<Var> {
    if t_len == 0 {
        return Err(Error::InvalidTargetLength { len: 0 });
    }
    let h0 = g.matmul(code, vars.dec_adapter.w)?;
    let mut h = g.add_bias(h0, vars.dec_adapter.b)?;
    let mut frames = Vec::with_capacity(t_len);
    for _ in 0..t_len {
        h = gru_step_zero_input(g, h, &vars.dec_cell)?;
        let out = g.matmul(h, vars.dec_out.w)?;
        frames.push(g.add_bias(out, vars.dec_out.b)?);
    }
    g.concat(&frames, 0)
}

/// Per-frame input constants for a batch of equal-length sequences:
/// element t is the B×3N matrix of frame t.
pub fn sequence_steps(g: &mut Graph, seqs: &[&ActionSequence]) -> Result<Vec<Var>> {
    let (t_len, width) = check_batch(seqs)?;
    let b = seqs.len();
    (0..t_len)
        .map(|t| {
            let mut m = Tensor::zeros([b, width]);
            for (row, seq) in seqs.iter().enumerate() {
                for (j, joint) in seq.frames[t].coords().iter().enumerate() {
                    for a in 0..3 {
                        m.data_mut()[row * width + 3 * j + a] = joint[a];
                    }
                }
            }
            Ok(g.constant(m))
        })
        .collect()
}

/// The same batch stacked frame-major as one (T·B)×3N constant, matching
/// the row order [`decode_steps`] emits.
pub fn stacked_frames(g: &mut Graph, seqs: &[&ActionSequence]) -> Result<Var> {
    let (t_len, width) = check_batch(seqs)?;
    let b = seqs.len();
    let mut m = Tensor::zeros([t_len * b, width]);
    for t in 0..t_len {
        for (row, seq) in seqs.iter().enumerate() {
            for (j, joint) in seq.frames[t].coords().iter().enumerate() {
                for a in 0..3 {
                    m.data_mut()[(t * b + row) * width + 3 * j + a] = joint[a];
                }
            }
        }
    }
    Ok(g.constant(m))
}

fn check_batch(seqs: &[&ActionSequence]) -> Result<(usize, usize)> {
    let first = seqs.first().ok_or(Error::InvalidInput {
        reason: "empty sequence batch".to_string(),
    })?;
    let (t_len, n) = (first.len(), first.n_joints());
    for s in seqs {
        if s.len() != t_len || s.n_joints() != n {
            return Err(Error::ShapeMismatch {
                op: "sequence_batch",
                detail: format!(
                    "expected {t_len} frames x {n} joints, got {} x {}",
                    s.len(),
                    s.n_joints()
                ),
            });
        }
    }
    Ok((t_len, 3 * n))
}

/// Full forward pass: encode, optionally project, decode.
pub struct AutoencodeOut {
    /// f_e(X), the representation evaluation consumes. B×2d_h.
    pub latent: Var,
    /// What the contrastive loss and decoder consume: g(f_e(X)), or the
    /// latent itself when the projection is bypassed.
    pub code: Var,
    /// Reconstructed frames, frame-major (T·B)×3N.
    pub reconstruction: Var,
}

/// Encodes a batch and decodes it back to `t_len` frames.
/// `use_projection` routes both the contrastive code and the decoder
/// input through the projection head; bypassing it is the no-projection
/// ablation.
pub fn autoencode(
    g: &mut Graph,
    steps: &[Var],
    t_len: usize,
    vars: &ModelVars,
    use_projection: bool,
) -> Result<AutoencodeOut> {
    let latent = encode_steps(g, steps, vars)?;
    let code = if use_projection {
        project_var(g, latent, vars)?
    } else {
        latent
    };
    let reconstruction = decode_steps(g, code, t_len, vars)?;
    Ok(AutoencodeOut {
        latent,
        code,
        reconstruction,
    })
}

// ---- value-level wrappers (single graph path, constants in, values out) ----

fn rank1_to_row(t: &Tensor) -> Result<Tensor> {
    if t.rank() != 1 {
        return Err(Error::ShapeMismatch {
            op: "rank1_to_row",
            detail: format!("expected rank-1, got {:?}", t.shape()),
        });
    }
    Tensor::new([1, t.numel()], t.data().to_vec())
}

fn row_to_rank1(t: &Tensor) -> Tensor {
    Tensor::new([t.numel()], t.data().to_vec()).expect("flatten")
}

/// One GRU update on rank-1 state vectors.
pub fn gru_cell(x: &Tensor, h: &Tensor, cell: &GruCell<Tensor>) -> Result<Tensor> {
    let mut g = Graph::new();
    let xv = g.constant(rank1_to_row(x)?);
    let hv = g.constant(rank1_to_row(h)?);
    let mut lift = |t: &Tensor| g.constant(t.clone());
    let cv = cell.map(&mut lift);
    let out = gru_step(&mut g, xv, hv, &cv)?;
    Ok(row_to_rank1(g.value(out)))
}

/// Latent code of one sequence, as a rank-1 tensor of width 2d_h.
pub fn encode(seq: &ActionSequence, params: &ModelParams) -> Result<Tensor> {
    let codes = encode_batch(core::slice::from_ref(&seq), params)?;
    Ok(row_to_rank1(&codes))
}

/// Latent codes of a batch of equal-length sequences, one row each.
pub fn encode_batch(seqs: &[&ActionSequence], params: &ModelParams) -> Result<Tensor> {
    let mut g = Graph::new();
    let vars = insert_constants(&mut g, params);
    let steps = sequence_steps(&mut g, seqs)?;
    let code = encode_steps(&mut g, &steps, &vars)?;
    Ok(g.value(code).clone())
}

/// Projection of a rank-1 latent code.
pub fn project(z: &Tensor, params: &ModelParams) -> Result<Tensor> {
    let mut g = Graph::new();
    let vars = insert_constants(&mut g, params);
    let zv = g.constant(rank1_to_row(z)?);
    let out = project_var(&mut g, zv, &vars)?;
    Ok(row_to_rank1(g.value(out)))
}

/// Decodes a rank-1 code into a T×3N pose tensor.
pub fn decode(code: &Tensor, t_len: usize, params: &ModelParams) -> Result<Tensor> {
    let mut g = Graph::new();
    let vars = insert_constants(&mut g, params);
    let zv = g.constant(rank1_to_row(code)?);
    let out = decode_steps(&mut g, zv, t_len, &vars)?;
    Ok(g.value(out).clone())
}
