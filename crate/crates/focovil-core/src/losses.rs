//! Objective terms: cosine similarity, the multi-view contrastive loss,
//! its focalized variant, the sequence reconstruction loss, and their
//! weighted combination.
//!
//! Conventions. A minibatch holds I scenes under V views; the embedding of
//! scene i under view v is row i of the view-v matrix. Every (i, u) pair
//! serves as an anchor. For an anchor and each other view v, the positive
//! is scene i under v, and the negatives are all other scenes under u and
//! under v (the positive itself is excluded). Per-anchor losses are summed
//! over v and averaged over the I·V anchors, keeping magnitudes
//! batch-size independent.
//!
//! Focalization multiplies the positive term by w₊ = σ(1 − r₊) and the
//! negative term by w₋ = σ(1 + mean of r over the anchor's negatives), so
//! hard positives (far apart) and hard negatives (close by) dominate.
//! Both weights live in (σ(0), σ(2)) = (0.5, 0.8808) for non-degenerate
//! batches; exactly collinear pairs attain the endpoints. w₋ is one
//! aggregate per anchor: the mean runs over the anchor's whole negative
//! set, which for two views is exactly the 1/(2I−2) normalization of the
//! defining formula.
//!
//! All losses are built on a [`Graph`] so gradients come from the same
//! code path the value-level API exposes. The negative log-sum is
//! stabilized by subtracting a per-row constant shift (the row max of
//! r/τ), making the loss safe for small temperatures; positive-pair
//! diagonal entries are masked before exponentiation so they can never
//! leak into a denominator.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::math;

/// Mask added to diagonal shift entries so exp underflows to exactly 0.
/// Sized so the shifted exponent stays below −745 (the f64 underflow
/// threshold) for any temperature.
fn diag_mask(tau: f64) -> f64 {
    2.0 / tau + 800.0
}

/// Weights and trade-offs of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct LossConfig {
    /// Similarity temperature τ in S = exp(r/τ).
    pub tau: f64,
    /// Contrastive term weight α.
    pub alpha: f64,
    /// Reconstruction term weight β.
    pub beta: f64,
    /// Apply the focal weights w₊/w₋ (off = plain contrastive loss).
    pub focalize: bool,
    /// Treat the focal weights as constants during backprop.
    pub stop_grad_weights: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            alpha: 1.0,
            beta: 1.0,
            focalize: true,
            stop_grad_weights: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidConfig {
                reason: "tau must be positive and finite".to_string(),
            });
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite() && self.beta >= 0.0 && self.beta.is_finite())
        {
            return Err(Error::InvalidConfig {
                reason: "alpha and beta must be non-negative and finite".to_string(),
            });
        }
        Ok(())
    }
}

/// Which contrastive terms participate. The single-term modes are the
/// positives-only / negatives-only ablations and are always unweighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContrastMode {
    /// Positive and negative terms (weighted when focalize is on).
    Full,
    /// Negative term only: push other scenes away, ignore positives.
    NegativesOnly,
    /// Positive term only: pull same-scene views together, ignore negatives.
    PositivesOnly,
}

/// Value-level minibatch: one I×d embedding matrix per view, rows aligned
/// by scene so row i of every view is the same scene.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    views: Vec<Tensor>,
    scene_ids: Vec<u64>,
}

impl ContrastiveBatch {
    pub fn new(views: Vec<Tensor>, scene_ids: Vec<u64>) -> Result<Self> {
        if views.len() < 2 {
            return Err(Error::InvalidInput {
                reason: "contrastive batch needs at least 2 views".to_string(),
            });
        }
        let first = views[0].shape().to_vec();
        if views[0].rank() != 2 {
            return Err(Error::ShapeMismatch {
                op: "contrastive_batch",
                detail: "views must be rank-2 (scenes x dim)".to_string(),
            });
        }
        for v in &views {
            if v.shape() != first.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "contrastive_batch",
                    detail: "views disagree on shape".to_string(),
                });
            }
            if !v.is_all_finite() {
                return Err(Error::NonFiniteValue {
                    context: "contrastive batch embeddings".to_string(),
                });
            }
        }
        let rows = views[0].rows();
        if rows < 2 {
            return Err(Error::BatchTooSmall {
                required: 2,
                got: rows,
            });
        }
        if scene_ids.len() != rows {
            return Err(Error::LengthMismatch {
                left: scene_ids.len(),
                right: rows,
            });
        }
        Ok(Self { views, scene_ids })
    }

    pub fn n_scenes(&self) -> usize {
        self.views[0].rows()
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    pub fn views(&self) -> &[Tensor] {
        &self.views
    }

    pub fn scene_ids(&self) -> &[u64] {
        &self.scene_ids
    }
}

/// Contrastive loss graph plus the similarity statistics training logs.
pub struct ContrastiveParts {
    /// Scalar loss node.
    pub loss: Var,
    /// Per anchor view u: I-vector node of per-anchor losses (summed over v).
    pub per_anchor: Vec<Var>,
    /// Per (u, v) ordered view pair, v ≠ u: I-vector node of w₊.
    pub w_plus: Vec<(usize, usize, Var)>,
    /// Per (u, v) ordered view pair, v ≠ u: I-vector node of w₋.
    pub w_minus: Vec<(usize, usize, Var)>,
    /// Mean cosine over all positive pairs, from forward values.
    pub mean_pos_r: f64,
    /// Mean cosine over all negative pairs, from forward values.
    pub mean_neg_r: f64,
}

/// Externally pinned focal weights, entered into the graph as constants.
/// `w_plus[u][v]` and `w_minus[u][v]` are I-vectors; the `[u][u]` slots
/// are placeholders and never read.
#[derive(Debug, Clone)]
pub struct FixedWeights {
    pub w_plus: Vec<Vec<Tensor>>,
    pub w_minus: Vec<Vec<Tensor>>,
}

impl FixedWeights {
    /// Every weight the same constant; (1, 1) reduces the focalized loss
    /// to the plain contrastive loss.
    pub fn uniform(v_count: usize, i_count: usize, w_plus: f64, w_minus: f64) -> Self {
        Self {
            w_plus: vec![vec![Tensor::filled([i_count], w_plus); v_count]; v_count],
            w_minus: vec![vec![Tensor::filled([i_count], w_minus); v_count]; v_count],
        }
    }
}

impl FocalWeights {
    /// The computed weights as a pinned-constant set, e.g. to check that
    /// stop-grad training differentiates the frozen-weight objective.
    pub fn to_fixed(&self) -> FixedWeights {
        let v_count = self.w_plus.len();
        let i_count = self
            .w_plus
            .iter()
            .flatten()
            .map(Vec::len)
            .max()
            .unwrap_or(0);
        let pack = |table: &Vec<Vec<Vec<f64>>>| -> Vec<Vec<Tensor>> {
            (0..v_count)
                .map(|u| {
                    (0..v_count)
                        .map(|v| {
                            if u == v {
                                Tensor::zeros([i_count])
                            } else {
                                Tensor::new([i_count], table[u][v].clone())
                                    .expect("weight lengths validated at construction")
                            }
                        })
                        .collect()
                })
                .collect()
        };
        FixedWeights {
            w_plus: pack(&self.w_plus),
            w_minus: pack(&self.w_minus),
        }
    }
}

/// How the focal weights enter the loss.
enum WeightPlan {
    /// σ-weights computed from the similarities in-graph.
    Computed { stop_grad: bool },
    /// Pinned constants.
    Fixed(FixedWeights),
}

/// Builds the contrastive loss over projected embeddings already in the
/// graph (`views[v]` is the I×d matrix for view v).
pub fn build_contrastive(
    g: &mut Graph,
    views: &[Var],
    cfg: &LossConfig,
    mode: ContrastMode,
) -> Result<ContrastiveParts> {
    let plan = if cfg.focalize && mode == ContrastMode::Full {
        WeightPlan::Computed {
            stop_grad: cfg.stop_grad_weights,
        }
    } else {
        let shape = g.value(views[0]).shape();
        let (i_count, v_count) = (shape.first().copied().unwrap_or(0), views.len());
        WeightPlan::Fixed(FixedWeights::uniform(v_count, i_count, 1.0, 1.0))
    };
    build_with_plan(g, views, cfg, mode, plan)
}

/// Test hook: like [`build_contrastive`] with the weights pinned to
/// constants. (1, 1) must reproduce the unfocalized loss exactly.
pub fn build_contrastive_forced(
    g: &mut Graph,
    views: &[Var],
    cfg: &LossConfig,
    mode: ContrastMode,
    w_plus: f64,
    w_minus: f64,
) -> Result<ContrastiveParts> {
    let shape = g.value(views[0]).shape();
    let (i_count, v_count) = (shape.first().copied().unwrap_or(0), views.len());
    let fixed = FixedWeights::uniform(v_count, i_count, w_plus, w_minus);
    build_with_plan(g, views, cfg, mode, WeightPlan::Fixed(fixed))
}

/// [`build_contrastive`] with every weight pinned to a supplied constant
/// vector. This is the objective stop-grad training actually
/// differentiates, so its gradient is the reference for that mode.
pub fn build_contrastive_fixed(
    g: &mut Graph,
    views: &[Var],
    cfg: &LossConfig,
    mode: ContrastMode,
    weights: &FixedWeights,
) -> Result<ContrastiveParts> {
    build_with_plan(g, views, cfg, mode, WeightPlan::Fixed(weights.clone()))
}

fn build_with_plan(
    g: &mut Graph,
    views: &[Var],
    cfg: &LossConfig,
    mode: ContrastMode,
    plan: WeightPlan,
) -> Result<ContrastiveParts> {
    cfg.validate()?;
    let v_count = views.len();
    if v_count < 2 {
        return Err(Error::InvalidInput {
            reason: "contrastive loss needs at least 2 views".to_string(),
        });
    }
    let shape = g.value(views[0]).shape().to_vec();
    if shape.len() != 2 {
        return Err(Error::ShapeMismatch {
            op: "contrastive",
            detail: "view embeddings must be rank-2".to_string(),
        });
    }
    for &v in views {
        if g.value(v).shape() != shape.as_slice() {
            return Err(Error::ShapeMismatch {
                op: "contrastive",
                detail: "views disagree on shape".to_string(),
            });
        }
    }
    let i_count = shape[0];
    if i_count < 2 {
        return Err(Error::BatchTooSmall {
            required: 2,
            got: i_count,
        });
    }
    let tau = cfg.tau;

    // Unit-normalized rows, then all pairwise cosine matrices r[u][v].
    let mut normed = Vec::with_capacity(v_count);
    for &e in views {
        let n = g.row_norms(e)?;
        normed.push(g.div_rows(e, n)?);
    }
    let transposed: Vec<Var> = normed
        .iter()
        .map(|&p| g.transpose(p))
        .collect::<Result<Vec<_>>>()?;
    let mut r = Vec::with_capacity(v_count);
    for u in 0..v_count {
        let mut row = Vec::with_capacity(v_count);
        for v in 0..v_count {
            row.push(g.matmul(normed[u], transposed[v])?);
        }
        r.push(row);
    }
    // Weight inputs, possibly cut from the tape.
    let rw: Vec<Vec<Var>> = match plan {
        WeightPlan::Computed { stop_grad: true } => r
            .iter()
            .map(|row| row.iter().map(|&m| g.detach(m)).collect())
            .collect(),
        _ => r.clone(),
    };

    // Each (anchor view, positive view) pair sees 2(I−1) negatives: the
    // other scenes under the anchor's view and under the positive's view.
    let neg_per_pair = (2 * (i_count - 1)) as f64;
    let mut per_anchor = Vec::with_capacity(v_count);
    let mut w_plus_out = Vec::new();
    let mut w_minus_out = Vec::new();
    let mut pos_r_sum = 0.0;
    let mut pos_r_count = 0usize;
    let mut neg_r_sum = 0.0;
    let mut neg_r_count = 0usize;

    for u in 0..v_count {
        accumulate_offdiag(g.value(r[u][u]), &mut neg_r_sum, &mut neg_r_count);

        let mut anchor_terms: Option<Var> = None;
        for v in 0..v_count {
            if v == u {
                continue;
            }
            // w₋ argument: 1 + mean cosine over this pair's negative set.
            let w_minus_uv = match plan {
                WeightPlan::Computed { .. } => {
                    let mut total = {
                        let d = g.diag(rw[u][u])?;
                        let s = g.row_sums(rw[u][u])?;
                        g.sub(s, d)?
                    };
                    {
                        let d = g.diag(rw[u][v])?;
                        let s = g.row_sums(rw[u][v])?;
                        let off = g.sub(s, d)?;
                        total = g.add(total, off)?;
                    }
                    let arg = g.affine_scalar(total, 1.0 / neg_per_pair, 1.0)?;
                    g.sigmoid(arg)?
                }
                WeightPlan::Fixed(ref w) => g.constant(w.w_minus[u][v].clone()),
            };
            w_minus_out.push((u, v, w_minus_uv));

            let r_pos = g.diag(r[u][v])?;
            {
                let vals = g.value(r_pos);
                pos_r_sum += vals.data().iter().sum::<f64>();
                pos_r_count += vals.numel();
            }
            accumulate_offdiag(g.value(r[u][v]), &mut neg_r_sum, &mut neg_r_count);
            // log S₊ = r₊/τ exactly; no need to exp and re-log.
            let pos_term = g.scale(r_pos, 1.0 / tau)?;

            let w_plus_uv = match plan {
                WeightPlan::Computed { .. } => {
                    let rp = g.diag(rw[u][v])?;
                    let arg = g.affine_scalar(rp, -1.0, 1.0)?;
                    g.sigmoid(arg)?
                }
                WeightPlan::Fixed(ref w) => g.constant(w.w_plus[u][v].clone()),
            };
            w_plus_out.push((u, v, w_plus_uv));

            let term = match mode {
                ContrastMode::PositivesOnly => g.scale(pos_term, -1.0)?,
                ContrastMode::NegativesOnly => neg_log_sum(g, r[u][u], r[u][v], tau)?,
                ContrastMode::Full => {
                    let neg_log = neg_log_sum(g, r[u][u], r[u][v], tau)?;
                    let wneg = g.mul(w_minus_uv, neg_log)?;
                    let wpos = g.mul(w_plus_uv, pos_term)?;
                    g.sub(wneg, wpos)?
                }
            };
            anchor_terms = Some(match anchor_terms {
                None => term,
                Some(acc) => g.add(acc, term)?,
            });
        }
        per_anchor.push(anchor_terms.expect("v_count >= 2"));
    }

    let all = g.concat(&per_anchor, 0)?;
    let total = g.sum(all)?;
    let loss = g.scale(total, 1.0 / (i_count * v_count) as f64)?;
    Ok(ContrastiveParts {
        loss,
        per_anchor,
        w_plus: w_plus_out,
        w_minus: w_minus_out,
        mean_pos_r: pos_r_sum / pos_r_count.max(1) as f64,
        mean_neg_r: neg_r_sum / neg_r_count.max(1) as f64,
    })
}

fn accumulate_offdiag(m: &Tensor, sum: &mut f64, count: &mut usize) {
    let n = m.rows();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                *sum += m.at(i, j);
                *count += 1;
            }
        }
    }
}

/// Per-anchor log of the negative-pair similarity sum,
/// log Σ_{j≠i} [exp(r_uu[i,j]/τ) + exp(r_uv[i,j]/τ)],
/// computed as a shifted log-sum-exp: the per-row max of r/τ is subtracted
/// as a constant before exponentiation (so the gradient is exact and the
/// sum stays in range for any τ), and diagonal entries are shifted far
/// enough negative that they underflow to exactly zero.
fn neg_log_sum(g: &mut Graph, r_uu: Var, r_uv: Var, tau: f64) -> Result<Var> {
    let n = g.value(r_uu).rows();
    let mask = diag_mask(tau);
    // Per-row max of the off-diagonal scaled similarities, from values.
    let mut m = vec![f64::NEG_INFINITY; n];
    for (mat, _) in [(g.value(r_uu), 0), (g.value(r_uv), 1)] {
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    m[i] = m[i].max(mat.at(i, j) / tau);
                }
            }
        }
    }
    let shift = |g: &mut Graph, mat: Var| -> Result<Var> {
        let mut sh = Tensor::zeros([n, n]);
        for i in 0..n {
            for j in 0..n {
                *sh.data_mut().get_mut(i * n + j).expect("in range") =
                    if i == j { m[i] + mask } else { m[i] };
            }
        }
        let c = g.constant(sh);
        let scaled = g.scale(mat, 1.0 / tau)?;
        let shifted = g.sub(scaled, c)?;
        g.exp(shifted)
    };
    let z_uu = shift(g, r_uu)?;
    let z_uv = shift(g, r_uv)?;
    let s_uu = g.row_sums(z_uu)?;
    let s_uv = g.row_sums(z_uv)?;
    let sums = g.add(s_uu, s_uv)?;
    // sums ≥ 1 by construction (the max term contributes exp(0)), so the
    // log is never floored.
    let logs = g.log(sums)?;
    let m_const = g.constant(Tensor::new([n], m)?);
    g.add(logs, m_const)
}

/// Mean per-frame Euclidean reconstruction error. Rows are frames (or any
/// stacked collection of frames); an exact zero for a perfect
/// reconstruction.
pub fn build_reconstruction(g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
    let (p, t) = (g.value(pred).shape().to_vec(), g.value(target).shape().to_vec());
    if p != t || p.len() != 2 {
        return Err(Error::ShapeMismatch {
            op: "reconstruction",
            detail: alloc::format!("pred {p:?} vs target {t:?}"),
        });
    }
    let d = g.sub(pred, target)?;
    let norms = g.row_norms(d)?;
    g.mean(norms)
}

/// Combined objective α·L_contrastive + β·L_r with the statistics the
/// training loop logs.
pub struct ObjectiveParts {
    pub objective: Var,
    pub contrastive_value: f64,
    pub reconstruction_value: f64,
    pub mean_pos_r: f64,
    pub mean_neg_r: f64,
}

/// Builds the full objective. `pred`/`target` stack every sequence of the
/// batch as rows (B·T × 3N); the contrastive part follows `mode` and
/// `cfg.focalize`.
pub fn build_objective(
    g: &mut Graph,
    views: &[Var],
    pred: Var,
    target: Var,
    cfg: &LossConfig,
    mode: ContrastMode,
) -> Result<ObjectiveParts> {
    let contrastive = build_contrastive(g, views, cfg, mode)?;
    let recon = build_reconstruction(g, pred, target)?;
    let a = g.scale(contrastive.loss, cfg.alpha)?;
    let b = g.scale(recon, cfg.beta)?;
    let objective = g.add(a, b)?;
    Ok(ObjectiveParts {
        objective,
        contrastive_value: g.scalar_value(contrastive.loss),
        reconstruction_value: g.scalar_value(recon),
        mean_pos_r: contrastive.mean_pos_r,
        mean_neg_r: contrastive.mean_neg_r,
    })
}

/// Cosine similarity with epsilon-floored norms; collinear inputs give ±1.
pub fn cosine_r(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = math::sqrt(a.iter().map(|x| x * x).sum());
    let nb: f64 = math::sqrt(b.iter().map(|x| x * x).sum());
    dot / (na.max(crate::autodiff::EPS_FLOOR) * nb.max(crate::autodiff::EPS_FLOOR))
}

/// exp(r(a, b)/τ).
pub fn similarity_s(a: &[f64], b: &[f64], tau: f64) -> f64 {
    math::exp(cosine_r(a, b) / tau)
}

fn eval_batch(
    batch: &ContrastiveBatch,
    cfg: &LossConfig,
    mode: ContrastMode,
    plan_forced: Option<(f64, f64)>,
) -> Result<(Graph, ContrastiveParts)> {
    let mut g = Graph::new();
    let vars: Vec<Var> = batch
        .views
        .iter()
        .map(|t| g.constant(t.clone()))
        .collect();
    let parts = match plan_forced {
        Some((wp, wm)) => build_contrastive_forced(&mut g, &vars, cfg, mode, wp, wm)?,
        None => build_contrastive(&mut g, &vars, cfg, mode)?,
    };
    Ok((g, parts))
}

/// The unfocalized multi-view contrastive loss L_c.
pub fn contrastive_loss(batch: &ContrastiveBatch, cfg: &LossConfig) -> Result<f64> {
    let (g, parts) = eval_batch(batch, cfg, ContrastMode::Full, Some((1.0, 1.0)))?;
    Ok(g.scalar_value(parts.loss))
}

/// The focalized loss L_fc (σ-weighted positive and negative terms).
pub fn focalized_loss(batch: &ContrastiveBatch, cfg: &LossConfig) -> Result<f64> {
    let (g, parts) = eval_batch(batch, cfg, ContrastMode::Full, None)?;
    Ok(g.scalar_value(parts.loss))
}

/// Per-anchor loss values, flattened as `[u·I + i]`, focalized or not.
pub fn per_anchor_terms(
    batch: &ContrastiveBatch,
    cfg: &LossConfig,
    focalized: bool,
) -> Result<Vec<f64>> {
    let forced = if focalized { None } else { Some((1.0, 1.0)) };
    let (g, parts) = eval_batch(batch, cfg, ContrastMode::Full, forced)?;
    let mut out = Vec::with_capacity(batch.n_scenes() * batch.n_views());
    for &vec_var in &parts.per_anchor {
        out.extend_from_slice(g.value(vec_var).data());
    }
    Ok(out)
}

/// Focal weights per (anchor view, positive view) pair: `w_plus[u][v][i]`
/// and `w_minus[u][v][i]`, both empty where v = u.
#[derive(Debug, Clone, PartialEq)]
pub struct FocalWeights {
    pub w_plus: Vec<Vec<Vec<f64>>>,
    pub w_minus: Vec<Vec<Vec<f64>>>,
}

pub fn focal_weights(batch: &ContrastiveBatch) -> Result<FocalWeights> {
    let cfg = LossConfig::default();
    let (g, parts) = eval_batch(batch, &cfg, ContrastMode::Full, None)?;
    let v_count = batch.n_views();
    let mut w_plus = vec![vec![Vec::new(); v_count]; v_count];
    for &(u, v, var) in &parts.w_plus {
        w_plus[u][v] = g.value(var).data().to_vec();
    }
    let mut w_minus = vec![vec![Vec::new(); v_count]; v_count];
    for &(u, v, var) in &parts.w_minus {
        w_minus[u][v] = g.value(var).data().to_vec();
    }
    Ok(FocalWeights { w_plus, w_minus })
}

/// Mean per-frame Euclidean distance between prediction and target.
pub fn reconstruction_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let p = g.constant(pred.clone());
    let t = g.constant(target.clone());
    let l = build_reconstruction(&mut g, p, t)?;
    Ok(g.scalar_value(l))
}

/// α·(L_fc or L_c, by `cfg.focalize`) + β·L_r.
pub fn total_objective(
    batch: &ContrastiveBatch,
    pred: &Tensor,
    target: &Tensor,
    cfg: &LossConfig,
) -> Result<f64> {
    let contrast = if cfg.focalize {
        focalized_loss(batch, cfg)?
    } else {
        contrastive_loss(batch, cfg)?
    };
    Ok(cfg.alpha * contrast + cfg.beta * reconstruction_loss(pred, target)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    // ---- independent oracle: plain nested loops, no graph, no shared code ----

    fn o_cos(a: &[f64], b: &[f64]) -> f64 {
        let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        d / (na * nb)
    }

    fn o_sigma(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// views[v][i] = embedding of scene i under view v.
    type RawViews = Vec<Vec<Vec<f64>>>;

    fn o_contrastive(views: &RawViews, tau: f64) -> f64 {
        let (v_count, i_count) = (views.len(), views[0].len());
        let mut total = 0.0;
        for u in 0..v_count {
            for i in 0..i_count {
                let anchor = &views[u][i];
                for v in 0..v_count {
                    if v == u {
                        continue;
                    }
                    let s_pos = (o_cos(anchor, &views[v][i]) / tau).exp();
                    let mut den = 0.0;
                    for j in 0..i_count {
                        if j != i {
                            den += (o_cos(anchor, &views[u][j]) / tau).exp();
                            den += (o_cos(anchor, &views[v][j]) / tau).exp();
                        }
                    }
                    total += -(s_pos / den).ln();
                }
            }
        }
        total / (i_count * v_count) as f64
    }

    /// σ of 1 + the mean cosine over the (u, v) pair's 2(I−1) negatives.
    fn o_w_minus(views: &RawViews, u: usize, v: usize, i: usize) -> f64 {
        let i_count = views[0].len();
        let anchor = &views[u][i];
        let mut acc = 0.0;
        for j in 0..i_count {
            if j != i {
                acc += 1.0 + o_cos(anchor, &views[u][j]);
                acc += 1.0 + o_cos(anchor, &views[v][j]);
            }
        }
        o_sigma(acc / (2 * (i_count - 1)) as f64)
    }

    fn o_focalized(views: &RawViews, tau: f64) -> f64 {
        let (v_count, i_count) = (views.len(), views[0].len());
        let mut total = 0.0;
        for u in 0..v_count {
            for i in 0..i_count {
                let anchor = &views[u][i];
                for v in 0..v_count {
                    if v == u {
                        continue;
                    }
                    let wm = o_w_minus(views, u, v, i);
                    let r_pos = o_cos(anchor, &views[v][i]);
                    let wp = o_sigma(1.0 - r_pos);
                    let mut den = 0.0;
                    for j in 0..i_count {
                        if j != i {
                            den += (o_cos(anchor, &views[u][j]) / tau).exp();
                            den += (o_cos(anchor, &views[v][j]) / tau).exp();
                        }
                    }
                    total += -(wp * (r_pos / tau) - wm * den.ln());
                }
            }
        }
        total / (i_count * v_count) as f64
    }

    // ---- helpers ----

    fn batch_from(views: &RawViews) -> ContrastiveBatch {
        let tensors = views
            .iter()
            .map(|rows| Tensor::matrix(rows).unwrap())
            .collect();
        let ids = (0..views[0].len() as u64).collect();
        ContrastiveBatch::new(tensors, ids).unwrap()
    }

    fn random_views(rng: &mut impl Rng, v: usize, i: usize, d: usize) -> RawViews {
        (0..v)
            .map(|_| {
                (0..i)
                    .map(|_| (0..d).map(|_| rng.gen_range(-1.5..1.5)).collect())
                    .collect()
            })
            .collect()
    }

    const LN_2: f64 = core::f64::consts::LN_2;

    #[test]
    fn cosine_hand_values() {
        let x = [0.3, -0.7, 1.1];
        assert!((cosine_r(&x, &x) - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((cosine_r(&x, &neg) + 1.0).abs() < 1e-12);
        assert!((cosine_r(&[1.0, 0.0], &[1.0, 1.0]) - 1.0 / 2.0_f64.sqrt()).abs() < 1e-12);
        // Zero vector: floored denominator gives 0, not NaN.
        assert_eq!(cosine_r(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
    }

    #[test]
    fn similarity_hand_values() {
        let e = [1.0, 0.0];
        assert!((similarity_s(&e, &e, 0.5) - (2.0f64).exp()).abs() < 1e-12);
        assert!((similarity_s(&e, &[0.0, 1.0], 0.5) - 1.0).abs() < 1e-12);
        assert!((similarity_s(&e, &[-1.0, 0.0], 0.5) - (-2.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn contrastive_identical_embeddings_is_ln_two() {
        // I = 2, V = 2, every embedding the same vector: each denominator
        // holds 2 copies of the positive similarity.
        let e = vec![0.6, -0.2, 0.9];
        let views = vec![vec![e.clone(), e.clone()], vec![e.clone(), e]];
        let loss = contrastive_loss(&batch_from(&views), &LossConfig::default()).unwrap();
        assert!((loss - LN_2).abs() <= 1e-9, "got {loss}");
    }

    #[test]
    fn contrastive_antipodal_negatives_closed_form() {
        // Positive pairs identical, all negatives antipodal:
        // per-anchor term = −ln(e² / 2e⁻²) = ln 2 − 4.
        let e = vec![1.0, 0.0];
        let m = vec![-1.0, 0.0];
        let views = vec![vec![e.clone(), m.clone()], vec![e, m]];
        let loss = contrastive_loss(&batch_from(&views), &LossConfig::default()).unwrap();
        assert!((loss - (LN_2 - 4.0)).abs() <= 1e-9, "got {loss}");
    }

    #[test]
    fn contrastive_matches_double_loop_oracle() {
        let mut rng = crate::rng::stream(31, "lc-oracle", 0, 0);
        for trial in 0..60 {
            let v = rng.gen_range(2..=4);
            let i = rng.gen_range(2..=8);
            let d = rng.gen_range(2..=16);
            let views = random_views(&mut rng, v, i, d);
            let ours = contrastive_loss(&batch_from(&views), &LossConfig::default()).unwrap();
            let oracle = o_contrastive(&views, 0.5);
            assert!(
                (ours - oracle).abs() <= 1e-10,
                "trial {trial}: {ours} vs {oracle}"
            );
        }
    }

    #[test]
    fn focalized_matches_double_loop_oracle() {
        let mut rng = crate::rng::stream(32, "lfc-oracle", 0, 0);
        for trial in 0..60 {
            let v = rng.gen_range(2..=4);
            let i = rng.gen_range(2..=8);
            let d = rng.gen_range(2..=16);
            let views = random_views(&mut rng, v, i, d);
            let ours = focalized_loss(&batch_from(&views), &LossConfig::default()).unwrap();
            let oracle = o_focalized(&views, 0.5);
            assert!(
                (ours - oracle).abs() <= 1e-10,
                "trial {trial}: {ours} vs {oracle}"
            );
        }
    }

    #[test]
    fn forced_unit_weights_reduce_focalized_to_contrastive() {
        let mut rng = crate::rng::stream(33, "forced", 0, 0);
        let cfg = LossConfig::default();
        for _ in 0..20 {
            let views = random_views(&mut rng, 3, 5, 8);
            let batch = batch_from(&views);
            let mut g = Graph::new();
            let vars: Vec<Var> = batch
                .views()
                .iter()
                .map(|t| g.constant(t.clone()))
                .collect();
            let forced =
                build_contrastive_forced(&mut g, &vars, &cfg, ContrastMode::Full, 1.0, 1.0)
                    .unwrap();
            let forced_val = g.scalar_value(forced.loss);
            let lc = contrastive_loss(&batch, &cfg).unwrap();
            assert!((forced_val - lc).abs() <= 1e-12);
        }
    }

    #[test]
    fn focalized_identical_embeddings_closed_form() {
        // w₊ = σ(0) = 1/2, w₋ = σ(2); per-anchor term
        // −[1/2·2 − σ(2)·ln(2e²)] = −1 + σ(2)·(2 + ln 2).
        let e = vec![0.3, 0.4, -0.1];
        let views = vec![vec![e.clone(), e.clone()], vec![e.clone(), e]];
        let loss = focalized_loss(&batch_from(&views), &LossConfig::default()).unwrap();
        let sigma2 = 1.0 / (1.0 + (-2.0f64).exp());
        let expect = -1.0 + sigma2 * (2.0 + LN_2);
        assert!((loss - expect).abs() <= 1e-12, "got {loss} want {expect}");
        assert!((loss - 1.372_116_167_201_572_3).abs() <= 1e-9);
    }

    #[test]
    fn focal_weight_closed_forms() {
        // Identical positive pair: w₊ = 1/2 exactly.
        let e = vec![1.0, 0.0, 0.0, 0.0];
        let views = vec![
            vec![e.clone(), vec![0.0, 1.0, 0.0, 0.0]],
            vec![e.clone(), vec![0.0, 0.0, 1.0, 0.0]],
        ];
        let w = focal_weights(&batch_from(&views)).unwrap();
        assert!((w.w_plus[0][1][0] - 0.5).abs() < 1e-12);
        // Anchor (0, 0)'s negatives are all orthogonal: w₋ = σ(1).
        let sigma1 = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((w.w_minus[0][1][0] - sigma1).abs() < 1e-12);

        // Antipodal positive pair: w₊ = σ(2).
        let views = vec![
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![-1.0, 0.0], vec![0.0, -1.0]],
        ];
        let w = focal_weights(&batch_from(&views)).unwrap();
        let sigma2 = 1.0 / (1.0 + (-2.0f64).exp());
        assert!((w.w_plus[0][1][0] - sigma2).abs() < 1e-12);
    }

    #[test]
    fn focal_weights_stay_in_open_interval() {
        let mut rng = crate::rng::stream(34, "w-bounds", 0, 0);
        let hi = 1.0 / (1.0 + (-2.0f64).exp());
        for _ in 0..300 {
            let v = rng.gen_range(2..=3);
            let i = rng.gen_range(2..=6);
            let views = random_views(&mut rng, v, i, 5);
            let w = focal_weights(&batch_from(&views)).unwrap();
            for u in 0..v {
                for vv in 0..v {
                    for &x in &w.w_plus[u][vv] {
                        assert!(x > 0.5 && x < hi, "w+ {x} out of (0.5, {hi})");
                    }
                    for &x in &w.w_minus[u][vv] {
                        assert!(x > 0.5 && x < hi, "w- {x} out of (0.5, {hi})");
                    }
                }
            }
        }
    }

    #[test]
    fn focal_weights_match_oracle() {
        let mut rng = crate::rng::stream(35, "w-oracle", 0, 0);
        for _ in 0..30 {
            let views = random_views(&mut rng, 3, 4, 6);
            let w = focal_weights(&batch_from(&views)).unwrap();
            for u in 0..3 {
                for i in 0..4 {
                    for v in 0..3 {
                        if v != u {
                            let wm = o_w_minus(&views, u, v, i);
                            assert!((w.w_minus[u][v][i] - wm).abs() <= 1e-10);
                            let wp = o_sigma(1.0 - o_cos(&views[u][i], &views[v][i]));
                            assert!((w.w_plus[u][v][i] - wp).abs() <= 1e-10);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn per_anchor_term_monotone_in_positive_and_negative_similarity() {
        // Rotate scene 0's view-1 embedding toward the anchor: anchor
        // (0, 0)'s positive similarity rises, its term must fall.
        let base = |pos_angle: f64, neg_angle: f64| -> RawViews {
            vec![
                vec![vec![1.0, 0.0], vec![neg_angle.cos(), neg_angle.sin()]],
                vec![
                    vec![pos_angle.cos(), pos_angle.sin()],
                    vec![0.0, -1.0],
                ],
            ]
        };
        let cfg = LossConfig::default();
        let term0 = |views: &RawViews| -> f64 {
            per_anchor_terms(&batch_from(views), &cfg, false).unwrap()[0]
        };
        let mut prev = f64::INFINITY;
        for k in 0..5 {
            // angles shrinking toward 0: r_pos increasing
            let t = term0(&base(1.2 - 0.25 * k as f64, 2.0));
            assert!(t < prev, "positive monotonicity violated at step {k}");
            prev = t;
        }
        let mut prev = f64::NEG_INFINITY;
        for k in 0..5 {
            // negative rotating toward anchor: r_neg increasing
            let t = term0(&base(0.9, 2.5 - 0.4 * k as f64));
            assert!(t > prev, "negative monotonicity violated at step {k}");
            prev = t;
        }
    }

    #[test]
    fn losses_are_scale_invariant() {
        let mut rng = crate::rng::stream(36, "scale-inv", 0, 0);
        let cfg = LossConfig::default();
        for _ in 0..20 {
            let views = random_views(&mut rng, 2, 4, 6);
            let c = 10.0f64.powf(rng.gen_range(-3.0..3.0));
            let scaled: RawViews = views
                .iter()
                .map(|rows| {
                    rows.iter()
                        .map(|r| r.iter().map(|x| x * c).collect())
                        .collect()
                })
                .collect();
            let (a, b) = (
                contrastive_loss(&batch_from(&views), &cfg).unwrap(),
                contrastive_loss(&batch_from(&scaled), &cfg).unwrap(),
            );
            assert!((a - b).abs() <= 1e-9, "L_c changed under scale {c}");
            let (fa, fb) = (
                focalized_loss(&batch_from(&views), &cfg).unwrap(),
                focalized_loss(&batch_from(&scaled), &cfg).unwrap(),
            );
            assert!((fa - fb).abs() <= 1e-9, "L_fc changed under scale {c}");
        }
    }

    #[test]
    fn contrastive_gradients_pass_without_stop_grad() {
        let mut rng = crate::rng::stream(37, "loss-grad", 0, 0);
        let views = random_views(&mut rng, 2, 3, 4);
        let tensors: Vec<Tensor> = views.iter().map(|r| Tensor::matrix(r).unwrap()).collect();
        let cfg = LossConfig::default();
        let report = crate::autodiff::grad_check(
            |g, vars| {
                let parts = build_contrastive(g, vars, &cfg, ContrastMode::Full)?;
                Ok(parts.loss)
            },
            &tensors,
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_error);
    }

    #[test]
    fn stop_grad_mode_differentiates_the_frozen_weight_objective() {
        // With stop_grad_weights the tape must produce the gradient of the
        // loss with weights held at their current values. Check that (a)
        // the frozen-weight objective itself passes finite differences and
        // (b) the stop-grad tape agrees with the frozen tape exactly.
        let mut rng = crate::rng::stream(41, "stop-grad", 0, 0);
        let views = random_views(&mut rng, 2, 3, 4);
        let tensors: Vec<Tensor> = views.iter().map(|r| Tensor::matrix(r).unwrap()).collect();
        let batch = batch_from(&views);
        let fixed = focal_weights(&batch).unwrap().to_fixed();
        let cfg = LossConfig {
            stop_grad_weights: true,
            ..LossConfig::default()
        };

        let report = crate::autodiff::grad_check(
            |g, vars| {
                let parts = build_contrastive_fixed(g, vars, &cfg, ContrastMode::Full, &fixed)?;
                Ok(parts.loss)
            },
            &tensors,
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_error);

        let run = |frozen: bool| -> (f64, Vec<Tensor>) {
            let mut g = Graph::new();
            let vars: Vec<Var> = tensors.iter().map(|t| g.param(t.clone())).collect();
            let parts = if frozen {
                build_contrastive_fixed(&mut g, &vars, &cfg, ContrastMode::Full, &fixed).unwrap()
            } else {
                build_contrastive(&mut g, &vars, &cfg, ContrastMode::Full).unwrap()
            };
            let loss = g.scalar_value(parts.loss);
            let grads = g.backward(parts.loss).unwrap();
            let gv = vars
                .iter()
                .map(|&v| grads.get(v).unwrap().clone())
                .collect();
            (loss, gv)
        };
        let (loss_frozen, grads_frozen) = run(true);
        let (loss_stop, grads_stop) = run(false);
        assert!((loss_frozen - loss_stop).abs() <= 1e-12);
        for (a, b) in grads_frozen.iter().zip(&grads_stop) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn single_term_modes_drop_the_other_term() {
        let mut rng = crate::rng::stream(38, "modes", 0, 0);
        let views = random_views(&mut rng, 2, 4, 5);
        let batch = batch_from(&views);
        let cfg = LossConfig::default();
        let run = |mode: ContrastMode| -> f64 {
            let mut g = Graph::new();
            let vars: Vec<Var> = batch
                .views()
                .iter()
                .map(|t| g.constant(t.clone()))
                .collect();
            let parts = build_contrastive(&mut g, &vars, &cfg, mode).unwrap();
            g.scalar_value(parts.loss)
        };
        let full_unweighted = contrastive_loss(&batch, &cfg).unwrap();
        let pos_only = run(ContrastMode::PositivesOnly);
        let neg_only = run(ContrastMode::NegativesOnly);
        // The two single-term losses recompose into the plain loss.
        assert!((pos_only + neg_only - full_unweighted).abs() <= 1e-10);
        // Oracle for the positives-only part: mean of −r₊/τ over anchors.
        let mut acc = 0.0;
        for u in 0..2 {
            for i in 0..4 {
                let v = 1 - u;
                acc += -o_cos(&views[u][i], &views[v][i]) / 0.5;
            }
        }
        assert!((pos_only - acc / 8.0).abs() <= 1e-10);
    }

    #[test]
    fn reconstruction_hand_values() {
        let a = Tensor::matrix(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 2.0]]).unwrap();
        assert_eq!(reconstruction_loss(&a, &a).unwrap(), 0.0);
        let p = Tensor::matrix(&[vec![3.0, 4.0, 0.0]]).unwrap();
        let t = Tensor::matrix(&[vec![0.0, 0.0, 0.0]]).unwrap();
        assert!((reconstruction_loss(&p, &t).unwrap() - 5.0).abs() < 1e-12);
        let bad = Tensor::matrix(&[vec![0.0, 0.0]]).unwrap();
        assert!(reconstruction_loss(&p, &bad).is_err());
    }

    #[test]
    fn reconstruction_matches_direct_formula() {
        let mut rng = crate::rng::stream(39, "recon", 0, 0);
        for _ in 0..20 {
            let (t, n3) = (rng.gen_range(2..6), 3 * rng.gen_range(2..5));
            let mk = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<Vec<f64>> {
                (0..t)
                    .map(|_| (0..n3).map(|_| rng.gen_range(-2.0..2.0)).collect())
                    .collect()
            };
            let (p, q) = (mk(&mut rng), mk(&mut rng));
            let direct: f64 = p
                .iter()
                .zip(&q)
                .map(|(a, b)| {
                    a.iter()
                        .zip(b)
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum::<f64>()
                        .sqrt()
                })
                .sum::<f64>()
                / t as f64;
            let ours = reconstruction_loss(
                &Tensor::matrix(&p).unwrap(),
                &Tensor::matrix(&q).unwrap(),
            )
            .unwrap();
            assert!((ours - direct).abs() <= 1e-12);
        }
    }

    #[test]
    fn total_objective_composes_terms() {
        let mut rng = crate::rng::stream(40, "total", 0, 0);
        let views = random_views(&mut rng, 2, 3, 4);
        let batch = batch_from(&views);
        let p = Tensor::matrix(&[vec![1.0, 0.0, 2.0], vec![0.0, 1.0, 0.0]]).unwrap();
        let t = Tensor::matrix(&[vec![0.5, 0.0, 2.0], vec![0.0, 0.0, 0.0]]).unwrap();
        let lr = reconstruction_loss(&p, &t).unwrap();
        let cfg_a0 = LossConfig {
            alpha: 0.0,
            beta: 2.0,
            ..LossConfig::default()
        };
        let got = total_objective(&batch, &p, &t, &cfg_a0).unwrap();
        assert!((got - 2.0 * lr).abs() <= 1e-12);
        let cfg_b0 = LossConfig {
            alpha: 1.5,
            beta: 0.0,
            focalize: false,
            ..LossConfig::default()
        };
        let lc = contrastive_loss(&batch, &cfg_b0).unwrap();
        let got = total_objective(&batch, &p, &t, &cfg_b0).unwrap();
        assert!((got - 1.5 * lc).abs() <= 1e-12);
        // α = 1, β = 2: sum of separately computed parts.
        let cfg12 = LossConfig {
            beta: 2.0,
            ..LossConfig::default()
        };
        let expect = focalized_loss(&batch, &cfg12).unwrap() + 2.0 * lr;
        let got = total_objective(&batch, &p, &t, &cfg12).unwrap();
        assert!((got - expect).abs() <= 1e-12);
    }

    #[test]
    fn too_small_batches_are_rejected() {
        let one_scene = vec![Tensor::matrix(&[vec![1.0, 0.0]]).unwrap(); 2];
        assert!(matches!(
            ContrastiveBatch::new(one_scene, vec![0]),
            Err(Error::BatchTooSmall { .. })
        ));
        let one_view = vec![Tensor::matrix(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap()];
        assert!(ContrastiveBatch::new(one_view, vec![0, 1]).is_err());
    }

    #[test]
    fn small_temperature_stays_finite() {
        // τ = 0.002 would overflow an unshifted exp(r/τ); the shifted
        // log-sum-exp must survive and still match the per-anchor algebra.
        let views = vec![
            vec![vec![1.0, 0.1], vec![-0.4, 0.9]],
            vec![vec![0.9, 0.2], vec![-0.5, 1.0]],
        ];
        let cfg = LossConfig {
            tau: 0.002,
            ..LossConfig::default()
        };
        let loss = contrastive_loss(&batch_from(&views), &cfg).unwrap();
        assert!(loss.is_finite());
    }
}
