//! Minibatch construction, Adam, and the training loop.
//!
//! Batching. A minibatch is I distinct scenes; every available view of a
//! sampled scene enters the batch, so the contrastive loss sees V aligned
//! I-row view matrices and the reconstruction loss sees all I·V
//! sequences. Scenes are shuffled once per epoch and consumed in chunks;
//! a trailing chunk with fewer than two scenes is skipped because the
//! contrastive loss needs at least two.
//!
//! Reproducibility. Each epoch draws its shuffle from a stream keyed by
//! (seed, epoch), and the learning rate for epoch e is computed in closed
//! form as lr·decay^e, so resuming from a checkpoint at any epoch
//! boundary replays the exact arithmetic of an uninterrupted run.
//!
//! Training never sees class labels: [`TrainingSet`] strips them when it
//! ingests a corpus.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::losses::{self, ContrastMode, LossConfig};
use crate::model::{self, AdamMoments, ModelParams};
use crate::rng;
use crate::skeleton::{ActionSequence, MultiViewCorpus};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
/// Global gradient-norm ceiling; recurrent nets under exp-based losses
/// occasionally spike, and clipping keeps seeds comparable.
pub const CLIP_NORM: f64 = 5.0;

/// Which training variant to run. Besides the full objective, each
/// variant removes one ingredient so their contributions can be compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Ablation {
    /// Focalized contrastive loss plus reconstruction.
    Full,
    /// Unweighted contrastive loss plus reconstruction.
    Covil,
    /// Negative-pair term only, plus reconstruction.
    NoPlus,
    /// Positive-pair term only, plus reconstruction.
    NoMinus,
    /// Contrastive loss on the encoder output directly; the projection
    /// head is bypassed everywhere.
    NoG,
    /// Reconstruction only, on view-aligned input.
    AlignReconst,
    /// Reconstruction only, on unaligned input.
    RawReconst,
}

impl Ablation {
    /// All variants, weakest baseline first; report tables follow this order.
    pub const ALL: [Ablation; 7] = [
        Ablation::RawReconst,
        Ablation::AlignReconst,
        Ablation::NoG,
        Ablation::NoPlus,
        Ablation::NoMinus,
        Ablation::Covil,
        Ablation::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::Covil => "covil",
            Ablation::NoPlus => "no_plus",
            Ablation::NoMinus => "no_minus",
            Ablation::NoG => "no_g",
            Ablation::AlignReconst => "align_reconst",
            Ablation::RawReconst => "raw_reconst",
        }
    }

    pub fn parse(s: &str) -> Result<Ablation> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidConfig {
                reason: format!("unknown ablation variant {s:?}"),
            })
    }

    /// Whether preprocessing should rotate views into the shared frame.
    pub fn aligns_views(self) -> bool {
        !matches!(self, Ablation::RawReconst)
    }

    /// Whether the projection head sits between encoder and both the
    /// contrastive loss and the decoder.
    pub fn uses_projection(self) -> bool {
        !matches!(self, Ablation::NoG)
    }

    /// The contrastive term this variant trains, if any.
    pub fn contrast_mode(self) -> Option<ContrastMode> {
        match self {
            Ablation::Full | Ablation::Covil | Ablation::NoG => Some(ContrastMode::Full),
            Ablation::NoPlus => Some(ContrastMode::NegativesOnly),
            Ablation::NoMinus => Some(ContrastMode::PositivesOnly),
            Ablation::AlignReconst | Ablation::RawReconst => None,
        }
    }

    /// Whether the contrastive term carries focal weights.
    pub fn focalized(self) -> bool {
        matches!(self, Ablation::Full)
    }
}

/// Fields with documented defaults (`batch_anchors`, `lr`, `lr_decay`,
/// `loss`) may be omitted when deserializing; `epochs`, `seed`, and
/// `ablation` must always be stated.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct TrainConfig {
    /// Scenes per minibatch (I).
    #[cfg_attr(feature = "serde", serde(default = "default_batch_anchors"))]
    pub batch_anchors: usize,
    pub epochs: usize,
    #[cfg_attr(feature = "serde", serde(default = "default_lr"))]
    pub lr: f64,
    /// Multiplicative per-epoch learning-rate decay.
    #[cfg_attr(feature = "serde", serde(default = "default_lr_decay"))]
    pub lr_decay: f64,
    pub seed: u64,
    #[cfg_attr(feature = "serde", serde(default))]
    pub loss: LossConfig,
    pub ablation: Ablation,
}

fn default_batch_anchors() -> usize {
    64
}

fn default_lr() -> f64 {
    1e-4
}

fn default_lr_decay() -> f64 {
    0.95
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_anchors: 64,
            epochs: 200,
            lr: 1e-4,
            lr_decay: 0.95,
            seed: 0,
            loss: LossConfig::default(),
            ablation: Ablation::Full,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_anchors < 2 {
            return Err(Error::InvalidConfig {
                reason: "batch_anchors must be at least 2".to_string(),
            });
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig {
                reason: "lr must be positive and finite".to_string(),
            });
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::InvalidConfig {
                reason: "lr_decay must lie in (0, 1]".to_string(),
            });
        }
        self.loss.validate()
    }

    /// Learning rate used throughout epoch `epoch` (0-based). Closed form
    /// so an interrupted and resumed run sees identical values.
    pub fn lr_for_epoch(&self, epoch: usize) -> f64 {
        self.lr * crate::math::powi(self.lr_decay, epoch as i32)
    }
}

/// All views of one scene, labels removed.
#[derive(Debug, Clone)]
pub struct SceneGroup {
    pub scene_id: u64,
    /// Sorted by view id.
    pub views: Vec<ActionSequence>,
}

/// A label-free, scene-grouped view of a corpus. Training consumes only
/// this type, so no code path under `train` can read a class label.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    groups: Vec<SceneGroup>,
    n_views: usize,
    t_len: usize,
    input_dim: usize,
}

impl TrainingSet {
    /// Groups sequences by scene, orders views within each scene, strips
    /// labels. Requires every scene to carry the same view ids and every
    /// sequence the same length (preprocess with resampling first).
    pub fn from_corpus(corpus: &MultiViewCorpus) -> Result<TrainingSet> {
        let mut by_scene: Vec<(u64, Vec<ActionSequence>)> = Vec::new();
        for seq in corpus.sequences() {
            let mut stripped = seq.clone();
            stripped.class_label = None;
            match by_scene.binary_search_by_key(&seq.scene_id, |(id, _)| *id) {
                Ok(i) => by_scene[i].1.push(stripped),
                Err(i) => by_scene.insert(i, (seq.scene_id, alloc::vec![stripped])),
            }
        }
        let first = by_scene.first().ok_or(Error::InvalidInput {
            reason: "empty corpus".to_string(),
        })?;
        let t_len = first.1[0].len();
        let input_dim = 3 * first.1[0].n_joints();
        let mut reference_views: Option<Vec<u32>> = None;
        let mut groups = Vec::with_capacity(by_scene.len());
        for (scene_id, mut views) in by_scene {
            views.sort_by_key(|s| s.view_id);
            let ids: Vec<u32> = views.iter().map(|s| s.view_id).collect();
            match &reference_views {
                None => reference_views = Some(ids),
                Some(r) if *r == ids => {}
                Some(r) => {
                    return Err(Error::InvalidInput {
                        reason: format!(
                            "scene {scene_id} has views {ids:?}, expected {r:?} like the rest"
                        ),
                    })
                }
            }
            for s in &views {
                if s.len() != t_len {
                    return Err(Error::InvalidInput {
                        reason: format!(
                            "scene {scene_id} view {} has {} frames, expected {t_len}",
                            s.view_id,
                            s.len()
                        ),
                    });
                }
            }
            groups.push(SceneGroup { scene_id, views });
        }
        let n_views = reference_views.map(|v| v.len()).unwrap_or(0);
        Ok(TrainingSet {
            groups,
            n_views,
            t_len,
            input_dim,
        })
    }

    pub fn groups(&self) -> &[SceneGroup] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn n_views(&self) -> usize {
        self.n_views
    }

    pub fn t_len(&self) -> usize {
        self.t_len
    }

    /// Flattened pose width 3N.
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }
}

/// Draws `i_anchors` distinct scenes without replacement.
pub fn sample_batch<'a>(
    set: &'a TrainingSet,
    i_anchors: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<&'a SceneGroup>> {
    if set.len() < i_anchors {
        return Err(Error::CorpusTooSmall {
            scenes: set.len(),
            requested: i_anchors,
        });
    }
    let picked = rand::seq::index::sample(rng, set.len(), i_anchors);
    Ok(picked.iter().map(|i| &set.groups[i]).collect())
}

/// First and second moment estimates plus the shared step counter.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamState {
    pub m: AdamMoments,
    pub v: AdamMoments,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> AdamState {
        AdamState {
            m: params.map(|t| Tensor::zeros(t.shape().to_vec())),
            v: params.map(|t| Tensor::zeros(t.shape().to_vec())),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. `grads` aligns with
/// `params.leaves()`; a `None` gradient decays the moments and leaves
/// the leaf effectively untouched.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &[Option<Tensor>],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    let n_leaves = params.leaves().len();
    if grads.len() != n_leaves {
        return Err(Error::ShapeMismatch {
            op: "adam_step",
            detail: format!("{} gradients for {} leaves", grads.len(), n_leaves),
        });
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - crate::math::powi(ADAM_BETA1, t);
    let bc2 = 1.0 - crate::math::powi(ADAM_BETA2, t);
    let p_leaves = params.leaves_mut();
    let m_leaves = state.m.leaves_mut();
    let v_leaves = state.v.leaves_mut();
    for (((p, g), m), v) in p_leaves.into_iter().zip(grads).zip(m_leaves).zip(v_leaves) {
        if let Some(g) = g {
            if g.shape() != p.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    detail: format!("gradient {:?} for parameter {:?}", g.shape(), p.shape()),
                });
            }
        }
        adam_update_inplace(
            p.data_mut(),
            g.as_ref().map(|g| g.data()),
            m.data_mut(),
            v.data_mut(),
            bc1,
            bc2,
            lr,
        );
    }
    Ok(())
}

/// The elementwise Adam rule shared by the model optimizer and the
/// linear probe. `bc1`/`bc2` are the bias-correction denominators
/// 1 − β^t. A `None` gradient is treated as zero.
pub(crate) fn adam_update_inplace(
    p: &mut [f64],
    g: Option<&[f64]>,
    m: &mut [f64],
    v: &mut [f64],
    bc1: f64,
    bc2: f64,
    lr: f64,
) {
    for i in 0..p.len() {
        let gi = g.map_or(0.0, |g| g[i]);
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * gi;
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * gi * gi;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p[i] -= lr * m_hat / (crate::math::sqrt(v_hat) + ADAM_EPS);
    }
}

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Option<Tensor>], max_norm: f64, context: &str) -> Result<f64> {
    let mut sq = 0.0;
    for g in grads.iter().flatten() {
        let n = g.frobenius_norm();
        sq += n * n;
    }
    let norm = crate::math::sqrt(sq);
    if !norm.is_finite() {
        return Err(Error::NonFiniteValue {
            context: format!("gradient norm, {context}"),
        });
    }
    if norm > max_norm {
        let scalefac = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            for x in g.data_mut() {
                *x *= scalefac;
            }
        }
    }
    Ok(norm)
}

/// Averages over one epoch's batches. Contrastive fields are `None` for
/// reconstruction-only variants.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub objective: f64,
    pub contrastive: Option<f64>,
    pub reconstruction: f64,
    pub mean_pos_r: Option<f64>,
    pub mean_neg_r: Option<f64>,
    pub n_batches: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub adam: AdamState,
    pub log: Vec<EpochStats>,
}

struct StepStats {
    objective: f64,
    contrastive: Option<f64>,
    reconstruction: f64,
    mean_pos_r: Option<f64>,
    mean_neg_r: Option<f64>,
}

fn train_step(
    params: &mut ModelParams,
    adam: &mut AdamState,
    groups: &[&SceneGroup],
    cfg: &TrainConfig,
    lr: f64,
    context: &str,
) -> Result<StepStats> {
    let n_views = groups[0].views.len();
    let t_len = groups[0].views[0].len();
    // View-major rows: all scenes under view 0, then view 1, ...
    let batch: Vec<&ActionSequence> = (0..n_views)
        .flat_map(|u| groups.iter().map(move |grp| &grp.views[u]))
        .collect();
    let mut g = Graph::new();
    let vars = model::insert_params(&mut g, params);
    let steps = model::sequence_steps(&mut g, &batch)?;
    let out = model::autoencode(
        &mut g,
        &steps,
        t_len,
        &vars,
        cfg.ablation.uses_projection(),
    )?;
    let target = model::stacked_frames(&mut g, &batch)?;
    let i_rows = groups.len();

    let (objective, stats) = match cfg.ablation.contrast_mode() {
        Some(mode) => {
            let views: Vec<_> = (0..n_views)
                .map(|u| g.slice(out.code, 0, u * i_rows, (u + 1) * i_rows))
                .collect::<Result<_>>()?;
            let mut loss_cfg = cfg.loss.clone();
            loss_cfg.focalize = cfg.ablation.focalized();
            let parts = losses::build_objective(&mut g, &views, out.reconstruction, target, &loss_cfg, mode)?;
            let stats = StepStats {
                objective: g.scalar_value(parts.objective),
                contrastive: Some(parts.contrastive_value),
                reconstruction: parts.reconstruction_value,
                mean_pos_r: Some(parts.mean_pos_r),
                mean_neg_r: Some(parts.mean_neg_r),
            };
            (parts.objective, stats)
        }
        None => {
            let recon = losses::build_reconstruction(&mut g, out.reconstruction, target)?;
            let objective = g.scale(recon, cfg.loss.beta)?;
            let stats = StepStats {
                objective: g.scalar_value(objective),
                contrastive: None,
                reconstruction: g.scalar_value(recon),
                mean_pos_r: None,
                mean_neg_r: None,
            };
            (objective, stats)
        }
    };
    if !stats.objective.is_finite() {
        return Err(Error::NonFiniteValue {
            context: format!("objective, {context}"),
        });
    }
    let mut gradients = g.backward(objective)?;
    let leaf_vars = vars.leaves();
    let mut grads: Vec<Option<Tensor>> = leaf_vars.iter().map(|v| gradients.take(**v)).collect();
    clip_global_norm(&mut grads, CLIP_NORM, context)?;
    adam_step(params, &grads, adam, lr)?;
    Ok(stats)
}

/// Trains from scratch: fresh Adam state, epoch 0.
pub fn train(set: &TrainingSet, params: ModelParams, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let adam = AdamState::new(&params);
    train_from(set, params, adam, 0, cfg)
}

/// Runs epochs `start_epoch..cfg.epochs`. Because the shuffle stream and
/// learning rate are keyed by the absolute epoch index, calling this with
/// a checkpointed state reproduces the uninterrupted run bit for bit.
pub fn train_from(
    set: &TrainingSet,
    mut params: ModelParams,
    mut adam: AdamState,
    start_epoch: usize,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(Error::InvalidInput {
            reason: "empty training set".to_string(),
        });
    }
    let mut log = Vec::new();
    for epoch in start_epoch..cfg.epochs {
        let lr = cfg.lr_for_epoch(epoch);
        let mut order: Vec<usize> = (0..set.len()).collect();
        let mut epoch_rng = rng::stream(cfg.seed, "train-epoch", epoch as u64, 0);
        order.shuffle(&mut epoch_rng);
        let mut sums = EpochStats {
            epoch,
            lr,
            objective: 0.0,
            contrastive: None,
            reconstruction: 0.0,
            mean_pos_r: None,
            mean_neg_r: None,
            n_batches: 0,
        };
        for (batch_idx, chunk) in order.chunks(cfg.batch_anchors).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let groups: Vec<&SceneGroup> = chunk.iter().map(|&i| &set.groups[i]).collect();
            let context = format!("epoch {epoch} batch {batch_idx}");
            let s = train_step(&mut params, &mut adam, &groups, cfg, lr, &context)?;
            sums.objective += s.objective;
            sums.reconstruction += s.reconstruction;
            accumulate(&mut sums.contrastive, s.contrastive);
            accumulate(&mut sums.mean_pos_r, s.mean_pos_r);
            accumulate(&mut sums.mean_neg_r, s.mean_neg_r);
            sums.n_batches += 1;
        }
        if sums.n_batches > 0 {
            let n = sums.n_batches as f64;
            sums.objective /= n;
            sums.reconstruction /= n;
            divide(&mut sums.contrastive, n);
            divide(&mut sums.mean_pos_r, n);
            divide(&mut sums.mean_neg_r, n);
        }
        log.push(sums);
    }
    Ok(TrainOutcome { params, adam, log })
}

fn accumulate(slot: &mut Option<f64>, value: Option<f64>) {
    if let Some(v) = value {
        *slot = Some(slot.unwrap_or(0.0) + v);
    }
}

fn divide(slot: &mut Option<f64>, n: f64) {
    if let Some(v) = slot.as_mut() {
        *v /= n;
    }
}

/// Everything one ablation run needs beyond the shared training
/// template: the evaluation protocol and the model size.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct AblationConfig {
    pub variants: Vec<Ablation>,
    pub seeds: Vec<u64>,
    /// View id held out for evaluation and excluded from training.
    pub held_out_view: u32,
    /// Resample length during preprocessing.
    pub target_len: usize,
    pub hidden_dim: usize,
    pub n_layers: usize,
    /// Template for every run; `seed` and `ablation` are overridden per
    /// (variant, seed) pair.
    pub train: TrainConfig,
    pub cluster_seed: u64,
}

impl AblationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() || self.seeds.is_empty() {
            return Err(Error::InvalidConfig {
                reason: "ablation needs at least one variant and one seed".to_string(),
            });
        }
        if self.target_len < 2 {
            return Err(Error::InvalidTargetLength {
                len: self.target_len,
            });
        }
        if self.hidden_dim == 0 || self.n_layers == 0 {
            return Err(Error::InvalidConfig {
                reason: "model dimensions must be positive".to_string(),
            });
        }
        self.train.validate()
    }
}

/// One trained and evaluated (variant, seed) pair.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AblationRow {
    pub variant: Ablation,
    pub seed: u64,
    pub one_nn_accuracy: f64,
    pub gmm_purity: f64,
    pub log: Vec<EpochStats>,
}

/// Per-variant means across seeds, in the order the variants were
/// requested.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AblationSummary {
    pub variant: Ablation,
    pub n_runs: usize,
    pub mean_one_nn_accuracy: f64,
    pub mean_gmm_purity: f64,
}

/// Trains one variant with one seed and evaluates it under the
/// cross-view protocol: the held-out view is absent from training, 1-NN
/// transfers from the training views to it, and the mixture model
/// clusters its embeddings with k = number of classes.
pub fn run_ablation_single(
    corpus: &MultiViewCorpus,
    variant: Ablation,
    seed: u64,
    cfg: &AblationConfig,
) -> Result<AblationRow> {
    cfg.validate()?;
    let preprocessed =
        crate::skeleton::preprocess_corpus(corpus, cfg.target_len, variant.aligns_views())?;
    let train_corpus = preprocessed.filter_views(|v| v != cfg.held_out_view)?;
    let set = TrainingSet::from_corpus(&train_corpus)?;
    let hyper = crate::model::ModelHyper::new(set.input_dim(), cfg.hidden_dim, cfg.n_layers)?;
    let params = ModelParams::init(&hyper, seed)?;
    let mut run_cfg = cfg.train.clone();
    run_cfg.seed = seed;
    run_cfg.ablation = variant;
    let outcome = train(&set, params, &run_cfg)?;
    let embeddings = crate::evaluation::extract_embeddings(&preprocessed, &outcome.params)?;
    let (train_emb, test_emb) =
        crate::evaluation::split_cross_view(&embeddings, cfg.held_out_view)?;
    let one_nn = crate::evaluation::one_nn_accuracy(&train_emb, &test_emb)?;
    let k = train_emb.n_classes().max(test_emb.n_classes());
    let gm = crate::evaluation::gmm(&test_emb, k, cfg.cluster_seed)?;
    let gmm_purity = crate::evaluation::purity(&gm.assignment, test_emb.labels())?;
    Ok(AblationRow {
        variant,
        seed,
        one_nn_accuracy: one_nn,
        gmm_purity,
        log: outcome.log,
    })
}

/// Runs every requested (variant, seed) pair sequentially. Callers that
/// want parallelism can fan out over [`run_ablation_single`]; rows only
/// depend on their own pair.
pub fn run_ablation(corpus: &MultiViewCorpus, cfg: &AblationConfig) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    let mut rows = Vec::with_capacity(cfg.variants.len() * cfg.seeds.len());
    for &variant in &cfg.variants {
        for &seed in &cfg.seeds {
            rows.push(run_ablation_single(corpus, variant, seed, cfg)?);
        }
    }
    Ok(rows)
}

/// Means per variant, ordered as first encountered in `rows`.
pub fn summarize_ablation(rows: &[AblationRow]) -> Vec<AblationSummary> {
    let mut order: Vec<Ablation> = Vec::new();
    for row in rows {
        if !order.contains(&row.variant) {
            order.push(row.variant);
        }
    }
    order
        .into_iter()
        .map(|variant| {
            let runs: Vec<&AblationRow> = rows.iter().filter(|r| r.variant == variant).collect();
            let n = runs.len() as f64;
            AblationSummary {
                variant,
                n_runs: runs.len(),
                mean_one_nn_accuracy: runs.iter().map(|r| r.one_nn_accuracy).sum::<f64>() / n,
                mean_gmm_purity: runs.iter().map(|r| r.gmm_purity).sum::<f64>() / n,
            }
        })
        .collect()
}

/// Human-readable one-line rendering of an epoch, mirroring the JSON
/// field order.
pub fn format_epoch(stats: &EpochStats) -> String {
    let opt = |v: Option<f64>| match v {
        Some(x) => format!("{x:.6}"),
        None => "-".to_string(),
    };
    format!(
        "epoch {} lr {:.3e} objective {:.6} contrastive {} reconstruction {:.6} pos_r {} neg_r {}",
        stats.epoch,
        stats.lr,
        stats.objective,
        opt(stats.contrastive),
        stats.reconstruction,
        opt(stats.mean_pos_r),
        opt(stats.mean_neg_r),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelHyper;
    use crate::skeleton::Pose;
    use crate::synth::{self, GeneratorConfig};
    use alloc::vec;
    use rand::Rng;

    fn toy_corpus(n_scenes: usize, n_views: usize, t: usize, joints: usize) -> MultiViewCorpus {
        let mut rng = crate::rng::stream(99, "toy-corpus", 0, 0);
        let mut seqs = Vec::new();
        for scene in 0..n_scenes {
            for view in 0..n_views {
                let frames = (0..t)
                    .map(|_| {
                        Pose::new(
                            (0..joints)
                                .map(|_| {
                                    [
                                        rng.gen_range(-1.0..1.0),
                                        rng.gen_range(-1.0..1.0),
                                        rng.gen_range(-1.0..1.0),
                                    ]
                                })
                                .collect(),
                        )
                        .unwrap()
                    })
                    .collect();
                seqs.push(
                    ActionSequence::new(frames, scene as u64, view as u32, Some(0)).unwrap(),
                );
            }
        }
        MultiViewCorpus::new(seqs, n_views, crate::skeleton::test_topology()).unwrap()
    }

    fn small_cfg(ablation: Ablation, epochs: usize) -> TrainConfig {
        TrainConfig {
            batch_anchors: 4,
            epochs,
            lr: 1e-2,
            lr_decay: 0.95,
            seed: 7,
            loss: LossConfig::default(),
            ablation,
        }
    }

    #[test]
    fn ablation_names_round_trip() {
        for a in Ablation::ALL {
            assert_eq!(Ablation::parse(a.name()).unwrap(), a);
        }
        assert!(Ablation::parse("nope").is_err());
    }

    #[test]
    fn first_adam_step_moves_by_about_lr() {
        // With a constant gradient at t = 1, m̂/√v̂ = sign(g), so the
        // update magnitude is lr up to the ε in the denominator.
        let hy = ModelHyper::new(3, 2, 1).unwrap();
        let mut params = ModelParams::zeros(&hy).unwrap();
        let mut state = AdamState::new(&params);
        let grads: Vec<Option<Tensor>> = params
            .leaves()
            .iter()
            .map(|t| Some(Tensor::filled(t.shape().to_vec(), 3.7)))
            .collect();
        adam_step(&mut params, &grads, &mut state, 0.01).unwrap();
        for leaf in params.leaves() {
            for &x in leaf.data() {
                assert!((x + 0.01).abs() < 1e-9, "expected -lr, got {x}");
            }
        }
        assert_eq!(state.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_params_untouched_and_decays_moments() {
        let hy = ModelHyper::new(3, 2, 1).unwrap();
        let mut params = ModelParams::init(&hy, 5).unwrap();
        let mut state = AdamState::new(&params);
        let grads: Vec<Option<Tensor>> = params
            .leaves()
            .iter()
            .map(|t| Some(Tensor::filled(t.shape().to_vec(), 1.0)))
            .collect();
        adam_step(&mut params, &grads, &mut state, 1e-3).unwrap();
        let after_one = params.clone();
        let m_before = state.m.leaves()[0].data()[0];
        let none: Vec<Option<Tensor>> = params.leaves().iter().map(|_| None).collect();
        adam_step(&mut params, &none, &mut state, 1e-3).unwrap();
        let m_after = state.m.leaves()[0].data()[0];
        assert!((m_after - ADAM_BETA1 * m_before).abs() < 1e-15);
        // Moments stay sign-aligned, so the step keeps drifting the same
        // way; what must hold is that it shrinks rather than reverses.
        for (a, b) in params.leaves().iter().zip(after_one.leaves()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 1.1e-3);
            }
        }
        assert_eq!(state.t, 2);
    }

    #[test]
    fn adam_minimizes_a_quadratic_bowl() {
        let hy = ModelHyper::new(1, 1, 1).unwrap();
        let mut params = ModelParams::zeros(&hy).unwrap();
        // Store the optimization variable in one leaf; everything else
        // keeps zero gradients.
        params.proj_in.w = Tensor::new([1, 1], vec![2.5]).unwrap();
        let mut state = AdamState::new(&params);
        for _ in 0..2000 {
            let grads: Vec<Option<Tensor>> = params
                .leaves()
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    // proj_in.w is the first projection leaf; derive its
                    // index from the layout instead of hard-coding.
                    let proj_w_index = params.encoder.len() * 18;
                    (i == proj_w_index).then(|| {
                        Tensor::new(t.shape().to_vec(), vec![2.0 * t.data()[0]]).unwrap()
                    })
                })
                .collect();
            adam_step(&mut params, &grads, &mut state, 0.05).unwrap();
        }
        assert!(params.proj_in.w.data()[0].abs() < 1e-3);
    }

    #[test]
    fn sample_batch_draws_distinct_scenes_deterministically() {
        let corpus = toy_corpus(10, 2, 3, 5);
        let set = TrainingSet::from_corpus(&corpus).unwrap();
        let mut r1 = crate::rng::stream(1, "sample", 0, 0);
        let mut r2 = crate::rng::stream(1, "sample", 0, 0);
        let a = sample_batch(&set, 4, &mut r1).unwrap();
        let b = sample_batch(&set, 4, &mut r2).unwrap();
        let ids: Vec<u64> = a.iter().map(|grp| grp.scene_id).collect();
        assert_eq!(ids, b.iter().map(|grp| grp.scene_id).collect::<Vec<_>>());
        let mut dedup = ids.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), 4);
        assert!(matches!(
            sample_batch(&set, 11, &mut r1),
            Err(Error::CorpusTooSmall { .. })
        ));
    }

    #[test]
    fn sample_batch_frequencies_are_uniform() {
        let corpus = toy_corpus(100, 2, 2, 5);
        let set = TrainingSet::from_corpus(&corpus).unwrap();
        let mut rng = crate::rng::stream(15, "sample-freq", 0, 0);
        let mut counts = [0u32; 100];
        let draws = 10_000;
        for _ in 0..draws {
            for grp in sample_batch(&set, 10, &mut rng).unwrap() {
                counts[grp.scene_id as usize] += 1;
            }
        }
        // Each draw includes a given scene with p = 1/10; over 10k draws
        // the count is Binomial(10000, 0.1): mean 1000, σ = 30.
        for (scene, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - 1000.0).abs() <= 3.0 * 30.0,
                "scene {scene} drawn {c} times"
            );
        }
    }

    #[test]
    fn training_set_strips_labels_and_groups_views() {
        let corpus = toy_corpus(6, 3, 4, 5);
        let set = TrainingSet::from_corpus(&corpus).unwrap();
        assert_eq!(set.len(), 6);
        assert_eq!(set.n_views(), 3);
        assert_eq!(set.t_len(), 4);
        assert_eq!(set.input_dim(), 15);
        for grp in set.groups() {
            assert_eq!(grp.views.len(), 3);
            for (u, s) in grp.views.iter().enumerate() {
                assert_eq!(s.view_id, u as u32);
                assert!(s.class_label.is_none());
            }
        }
    }

    #[test]
    fn zero_epochs_return_initial_params() {
        let corpus = toy_corpus(5, 2, 3, 5);
        let set = TrainingSet::from_corpus(&corpus).unwrap();
        let hy = ModelHyper::new(15, 3, 1).unwrap();
        let params = ModelParams::init(&hy, 2).unwrap();
        let out = train(&set, params.clone(), &small_cfg(Ablation::Full, 0)).unwrap();
        assert_eq!(out.params, params);
        assert!(out.log.is_empty());
        assert_eq!(out.adam.t, 0);
    }

    #[test]
    fn training_is_bit_exact_across_runs() {
        let corpus = toy_corpus(6, 2, 3, 5);
        let set = TrainingSet::from_corpus(&corpus).unwrap();
        let hy = ModelHyper::new(15, 3, 2).unwrap();
        let params = ModelParams::init(&hy, 3).unwrap();
        let cfg = small_cfg(Ablation::Full, 2);
        let a = train(&set, params.clone(), &cfg).unwrap();
        let b = train(&set, params, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.adam.m, b.adam.m);
        assert_eq!(a.adam.v, b.adam.v);
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn resumed_training_matches_uninterrupted_run() {
        let corpus = toy_corpus(6, 2, 3, 5);
        let set = TrainingSet::from_corpus(&corpus).unwrap();
        let hy = ModelHyper::new(15, 3, 1).unwrap();
        let params = ModelParams::init(&hy, 4).unwrap();
        let cfg = small_cfg(Ablation::Full, 4);
        let full = train(&set, params.clone(), &cfg).unwrap();
        let mut half_cfg = cfg.clone();
        half_cfg.epochs = 2;
        let half = train(&set, params, &half_cfg).unwrap();
        let resumed = train_from(&set, half.params, half.adam, 2, &cfg).unwrap();
        assert_eq!(full.params, resumed.params);
        assert_eq!(full.adam.m, resumed.adam.m);
        assert_eq!(full.adam.t, resumed.adam.t);
        assert_eq!(full.log[2..], resumed.log[..]);
    }

    #[test]
    fn learning_rate_schedule_is_geometric() {
        let corpus = toy_corpus(4, 2, 3, 5);
        let set = TrainingSet::from_corpus(&corpus).unwrap();
        let hy = ModelHyper::new(15, 2, 1).unwrap();
        let params = ModelParams::init(&hy, 5).unwrap();
        let cfg = small_cfg(Ablation::AlignReconst, 5);
        let out = train(&set, params, &cfg).unwrap();
        for (e, stats) in out.log.iter().enumerate() {
            assert_eq!(stats.epoch, e);
            assert!((stats.lr - cfg.lr * cfg.lr_decay.powi(e as i32)).abs() < 1e-18);
            assert!(stats.contrastive.is_none());
            assert!(stats.mean_pos_r.is_none());
        }
    }

    #[test]
    fn trailing_single_scene_chunk_is_skipped() {
        let corpus = toy_corpus(5, 2, 3, 5);
        let set = TrainingSet::from_corpus(&corpus).unwrap();
        let hy = ModelHyper::new(15, 2, 1).unwrap();
        let params = ModelParams::init(&hy, 6).unwrap();
        let mut cfg = small_cfg(Ablation::Full, 1);
        cfg.batch_anchors = 2;
        let out = train(&set, params, &cfg).unwrap();
        assert_eq!(out.log[0].n_batches, 2);
    }

    #[test]
    fn ablation_run_produces_metrics_in_range() {
        let gen = GeneratorConfig {
            n_classes: 2,
            scenes_per_class: 6,
            n_views: 3,
            n_joints: 5,
            seq_len: 10,
            view_azimuths_deg: vec![0.0, 50.0, 100.0],
            view_offsets: vec![[0.0; 3]; 3],
            occlusion_noise_std: 0.05,
            rng_seed: 300,
        };
        let corpus = synth::generate_corpus(&gen).unwrap();
        let cfg = AblationConfig {
            variants: vec![Ablation::Full, Ablation::RawReconst],
            seeds: vec![1],
            held_out_view: 2,
            target_len: 8,
            hidden_dim: 4,
            n_layers: 1,
            train: TrainConfig {
                batch_anchors: 6,
                epochs: 2,
                ..TrainConfig::default()
            },
            cluster_seed: 0,
        };
        let rows = run_ablation(&corpus, &cfg).unwrap();
        assert_eq!(rows.len(), 2);
        for row in &rows {
            assert!((0.0..=1.0).contains(&row.one_nn_accuracy));
            assert!((0.0..=1.0).contains(&row.gmm_purity));
            assert_eq!(row.log.len(), 2);
        }
        assert!(rows[0].log[0].contrastive.is_some());
        assert!(rows[1].log[0].contrastive.is_none());
        let summary = summarize_ablation(&rows);
        assert_eq!(summary.len(), 2);
        assert_eq!(summary[0].variant, Ablation::Full);
        assert_eq!(summary[0].n_runs, 1);
        assert_eq!(summary[0].mean_one_nn_accuracy, rows[0].one_nn_accuracy);
    }

    #[test]
    fn pure_reconstruction_overfits_a_tiny_corpus() {
        // α = 0 equivalent: reconstruction-only variant must drive L_r
        // below 10% of its initial value on a 5-scene toy corpus.
        let gen = GeneratorConfig {
            n_classes: 1,
            scenes_per_class: 5,
            n_views: 2,
            n_joints: 5,
            seq_len: 6,
            view_azimuths_deg: vec![0.0, 40.0],
            view_offsets: vec![[0.0; 3]; 2],
            occlusion_noise_std: 0.0,
            rng_seed: 77,
        };
        let corpus = synth::generate_corpus(&gen).unwrap();
        let corpus = crate::skeleton::preprocess_corpus(&corpus, 6, true).unwrap();
        let set = TrainingSet::from_corpus(&corpus).unwrap();
        let hy = ModelHyper::new(15, 8, 1).unwrap();
        let params = ModelParams::init(&hy, 8).unwrap();
        let cfg = TrainConfig {
            batch_anchors: 5,
            epochs: 500,
            lr: 3e-3,
            lr_decay: 1.0,
            seed: 9,
            loss: LossConfig::default(),
            ablation: Ablation::AlignReconst,
        };
        let out = train(&set, params, &cfg).unwrap();
        let first = out.log.first().unwrap().reconstruction;
        let last = out.log.last().unwrap().reconstruction;
        assert!(
            last < 0.1 * first,
            "reconstruction {first:.4} -> {last:.4} did not overfit"
        );
    }
}
