//! Embedding extraction and every downstream evaluator: cosine 1-NN,
//! linear probe, k-means, diagonal-covariance Gaussian mixture, purity,
//! adjusted Rand index, and confusion matrices.
//!
//! Evaluation always consumes the encoder output, never the projection.
//! Labels are mandatory here and only here; training code paths cannot
//! reach them.
//!
//! Protocols. The cross-view split holds out every row of one view id;
//! the scene-disjoint split holds out whole scenes. Both exist at the
//! embedding level and, for the scene split, at the corpus level, keyed
//! identically so a corpus split and an embedding split with the same
//! seed agree on the held-out scenes.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::autodiff::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::math::{abs, exp, ln, sqrt};
use crate::model::{self, ModelParams};
use crate::rng;
use crate::skeleton::{ActionSequence, MultiViewCorpus};

/// Guard against zero rows when normalizing for cosine similarity.
const NORM_FLOOR: f64 = 1e-12;
/// Smallest admissible per-dimension variance in the mixture model.
const GMM_VAR_FLOOR: f64 = 1e-6;
const GMM_MAX_ITERS: usize = 200;
const GMM_LL_TOL: f64 = 1e-6;
const KMEANS_MAX_ITERS: usize = 300;
/// Sequences encoded per forward pass during extraction.
const ENCODE_CHUNK: usize = 64;

/// Embeddings with their provenance; one row per sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    matrix: Tensor,
    scene_ids: Vec<u64>,
    view_ids: Vec<u32>,
    labels: Vec<u32>,
}

impl EmbeddingSet {
    pub fn new(
        matrix: Tensor,
        scene_ids: Vec<u64>,
        view_ids: Vec<u32>,
        labels: Vec<u32>,
    ) -> Result<EmbeddingSet> {
        if matrix.rank() != 2 {
            return Err(Error::ShapeMismatch {
                op: "embedding_set",
                detail: format!("expected a rank-2 matrix, got {:?}", matrix.shape()),
            });
        }
        let rows = matrix.rows();
        for (name, len) in [
            ("scene_ids", scene_ids.len()),
            ("view_ids", view_ids.len()),
            ("labels", labels.len()),
        ] {
            if len != rows {
                return Err(Error::ShapeMismatch {
                    op: "embedding_set",
                    detail: format!("{rows} rows but {len} {name}"),
                });
            }
        }
        if !matrix.is_all_finite() {
            return Err(Error::NonFiniteValue {
                context: "embedding matrix".to_string(),
            });
        }
        Ok(EmbeddingSet {
            matrix,
            scene_ids,
            view_ids,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.matrix.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn scene_ids(&self) -> &[u64] {
        &self.scene_ids
    }

    pub fn view_ids(&self) -> &[u32] {
        &self.view_ids
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Number of distinct class labels, as max + 1.
    pub fn n_classes(&self) -> usize {
        self.labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0)
    }

    pub fn select(&self, rows: &[usize]) -> EmbeddingSet {
        let d = self.dim();
        let mut m = Tensor::zeros([rows.len(), d]);
        for (out_r, &r) in rows.iter().enumerate() {
            for c in 0..d {
                m.data_mut()[out_r * d + c] = self.matrix.at(r, c);
            }
        }
        EmbeddingSet {
            matrix: m,
            scene_ids: rows.iter().map(|&r| self.scene_ids[r]).collect(),
            view_ids: rows.iter().map(|&r| self.view_ids[r]).collect(),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
        }
    }
}

/// Per-row cluster indices, all below `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    clusters: Vec<usize>,
    k: usize,
}

impl ClusterAssignment {
    pub fn new(clusters: Vec<usize>, k: usize) -> Result<ClusterAssignment> {
        if let Some(&bad) = clusters.iter().find(|&&c| c >= k) {
            return Err(Error::InvalidInput {
                reason: format!("cluster index {bad} out of range for k = {k}"),
            });
        }
        Ok(ClusterAssignment { clusters, k })
    }

    pub fn clusters(&self) -> &[usize] {
        &self.clusters
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }
}

/// Encodes every sequence of a corpus; row order follows corpus order.
/// Every sequence must carry a class label.
pub fn extract_embeddings(corpus: &MultiViewCorpus, params: &ModelParams) -> Result<EmbeddingSet> {
    let seqs = corpus.sequences();
    let dim = 2 * params.encoder.last().map_or(0, |l| l.fwd.b_z.numel());
    let mut matrix = Tensor::zeros([seqs.len(), dim]);
    let mut scene_ids = Vec::with_capacity(seqs.len());
    let mut view_ids = Vec::with_capacity(seqs.len());
    let mut labels = Vec::with_capacity(seqs.len());
    for seq in seqs {
        let label = seq.class_label.ok_or(Error::MissingClassLabel {
            scene_id: seq.scene_id,
            view_id: seq.view_id,
        })?;
        scene_ids.push(seq.scene_id);
        view_ids.push(seq.view_id);
        labels.push(label);
    }
    for (chunk_idx, chunk) in seqs.chunks(ENCODE_CHUNK).enumerate() {
        let refs: Vec<&ActionSequence> = chunk.iter().collect();
        let codes = model::encode_batch(&refs, params)?;
        let base = chunk_idx * ENCODE_CHUNK;
        for r in 0..chunk.len() {
            for c in 0..dim {
                matrix.data_mut()[(base + r) * dim + c] = codes.at(r, c);
            }
        }
    }
    EmbeddingSet::new(matrix, scene_ids, view_ids, labels)
}

/// Train = every view except `held_out`, test = the held-out view.
pub fn split_cross_view(
    set: &EmbeddingSet,
    held_out: u32,
) -> Result<(EmbeddingSet, EmbeddingSet)> {
    let (mut train_rows, mut test_rows) = (Vec::new(), Vec::new());
    for (r, &v) in set.view_ids.iter().enumerate() {
        if v == held_out {
            test_rows.push(r);
        } else {
            train_rows.push(r);
        }
    }
    if train_rows.is_empty() {
        return Err(Error::EmptyTrainSet);
    }
    if test_rows.is_empty() {
        return Err(Error::InvalidInput {
            reason: format!("no rows under held-out view {held_out}"),
        });
    }
    Ok((set.select(&train_rows), set.select(&test_rows)))
}

/// The scenes a (fraction, seed) pair holds out, given the sorted
/// distinct scene ids. Shared by the corpus- and embedding-level
/// splitters so they agree.
fn held_out_scenes(mut ids: Vec<u64>, test_fraction: f64, seed: u64) -> Result<BTreeSet<u64>> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidConfig {
            reason: format!("test fraction {test_fraction} must lie in (0, 1)"),
        });
    }
    ids.sort_unstable();
    ids.dedup();
    let n_test = crate::math::ceil((ids.len() as f64) * test_fraction) as usize;
    if n_test == 0 || n_test >= ids.len() {
        return Err(Error::InvalidConfig {
            reason: format!(
                "test fraction {test_fraction} leaves {n_test} of {} scenes for testing",
                ids.len()
            ),
        });
    }
    let mut r = rng::stream(seed, "scene-split", 0, 0);
    ids.shuffle(&mut r);
    Ok(ids.into_iter().take(n_test).collect())
}

/// Scene-disjoint embedding split: whole scenes are held out.
pub fn split_scene_disjoint(
    set: &EmbeddingSet,
    test_fraction: f64,
    seed: u64,
) -> Result<(EmbeddingSet, EmbeddingSet)> {
    let held = held_out_scenes(set.scene_ids.clone(), test_fraction, seed)?;
    let (mut train_rows, mut test_rows) = (Vec::new(), Vec::new());
    for (r, id) in set.scene_ids.iter().enumerate() {
        if held.contains(id) {
            test_rows.push(r);
        } else {
            train_rows.push(r);
        }
    }
    if train_rows.is_empty() {
        return Err(Error::EmptyTrainSet);
    }
    Ok((set.select(&train_rows), set.select(&test_rows)))
}

/// Scene-disjoint corpus split with the same keying as
/// [`split_scene_disjoint`], for holding test scenes out of training.
pub fn split_corpus_scenes(
    corpus: &MultiViewCorpus,
    test_fraction: f64,
    seed: u64,
) -> Result<(MultiViewCorpus, MultiViewCorpus)> {
    let ids: Vec<u64> = corpus.sequences().iter().map(|s| s.scene_id).collect();
    let held = held_out_scenes(ids, test_fraction, seed)?;
    let split = |keep_held: bool| -> Result<MultiViewCorpus> {
        let kept: Vec<ActionSequence> = corpus
            .sequences()
            .iter()
            .filter(|s| held.contains(&s.scene_id) == keep_held)
            .cloned()
            .collect();
        MultiViewCorpus::new(kept, corpus.n_views(), *corpus.topology())
    };
    Ok((split(false)?, split(true)?))
}

/// Rows normalized to unit length, with a floor for zero rows.
fn normalized_rows(m: &Tensor) -> Tensor {
    let (rows, d) = (m.rows(), m.cols());
    let mut out = m.clone();
    for r in 0..rows {
        let mut sq = 0.0;
        for c in 0..d {
            sq += m.at(r, c) * m.at(r, c);
        }
        let n = sqrt(sq).max(NORM_FLOOR);
        for c in 0..d {
            out.data_mut()[r * d + c] /= n;
        }
    }
    out
}

/// Labels each test row with the label of the train row of maximal
/// cosine similarity; similarity ties go to the lowest train index.
pub fn one_nn_predict(train: &EmbeddingSet, test: &EmbeddingSet) -> Result<Vec<u32>> {
    if train.is_empty() {
        return Err(Error::EmptyTrainSet);
    }
    if test.is_empty() {
        return Err(Error::InvalidInput {
            reason: "empty test set".to_string(),
        });
    }
    if train.dim() != test.dim() {
        return Err(Error::ShapeMismatch {
            op: "one_nn",
            detail: format!("train dim {} vs test dim {}", train.dim(), test.dim()),
        });
    }
    let tn = normalized_rows(&train.matrix);
    let sn = normalized_rows(&test.matrix);
    let d = train.dim();
    let mut preds = Vec::with_capacity(test.len());
    for i in 0..test.len() {
        let mut best = (f64::NEG_INFINITY, 0usize);
        for j in 0..train.len() {
            let mut sim = 0.0;
            for c in 0..d {
                sim += sn.at(i, c) * tn.at(j, c);
            }
            // Strict comparison keeps the lowest index on ties.
            if sim > best.0 {
                best = (sim, j);
            }
        }
        preds.push(train.labels[best.1]);
    }
    Ok(preds)
}

pub fn one_nn_accuracy(train: &EmbeddingSet, test: &EmbeddingSet) -> Result<f64> {
    let preds = one_nn_predict(train, test)?;
    accuracy(&preds, &test.labels)
}

/// Fraction of agreeing entries.
pub fn accuracy(pred: &[u32], truth: &[u32]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput {
            reason: "accuracy of an empty prediction list".to_string(),
        });
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Both fields have documented defaults and may be omitted when
/// deserializing.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct ProbeConfig {
    pub lr: f64,
    pub epochs: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            lr: 1e-3,
            epochs: 300,
        }
    }
}

/// Trains one affine + softmax layer on frozen train embeddings with
/// full-batch Adam and reports test accuracy. Weights start at zero, so
/// the run is deterministic without a seed.
pub fn linear_probe(
    train: &EmbeddingSet,
    test: &EmbeddingSet,
    cfg: &ProbeConfig,
) -> Result<f64> {
    if train.is_empty() {
        return Err(Error::EmptyTrainSet);
    }
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(Error::InvalidConfig {
            reason: "probe lr must be positive and finite".to_string(),
        });
    }
    let n_classes = train.n_classes().max(test.n_classes());
    let d = train.dim();
    let targets: Vec<usize> = train.labels.iter().map(|&l| l as usize).collect();
    let mut w = Tensor::zeros([d, n_classes]);
    let mut b = Tensor::zeros([n_classes]);
    let mut m = vec![Tensor::zeros([d, n_classes]), Tensor::zeros([n_classes])];
    let mut v = m.clone();
    for step in 1..=cfg.epochs {
        let mut g = Graph::new();
        let wv = g.param(w.clone());
        let bv = g.param(b.clone());
        let x = g.constant(train.matrix.clone());
        let logits = g.matmul(x, wv)?;
        let logits = g.add_bias(logits, bv)?;
        let loss = g.cross_entropy(logits, &targets)?;
        let mut grads = g.backward(loss)?;
        let gw = grads.take(wv);
        let gb = grads.take(bv);
        let bc1 = 1.0 - crate::math::powi(crate::training::ADAM_BETA1, step as i32);
        let bc2 = 1.0 - crate::math::powi(crate::training::ADAM_BETA2, step as i32);
        crate::training::adam_update_inplace(
            w.data_mut(),
            gw.as_ref().map(|t| t.data()),
            m[0].data_mut(),
            v[0].data_mut(),
            bc1,
            bc2,
            cfg.lr,
        );
        crate::training::adam_update_inplace(
            b.data_mut(),
            gb.as_ref().map(|t| t.data()),
            m[1].data_mut(),
            v[1].data_mut(),
            bc1,
            bc2,
            cfg.lr,
        );
    }
    // Argmax of test logits; ties go to the lowest class index.
    let mut preds = Vec::with_capacity(test.len());
    for i in 0..test.len() {
        let mut best = (f64::NEG_INFINITY, 0usize);
        for c in 0..n_classes {
            let mut logit = b.data()[c];
            for j in 0..d {
                logit += test.matrix.at(i, j) * w.at(j, c);
            }
            if logit > best.0 {
                best = (logit, c);
            }
        }
        preds.push(best.1 as u32);
    }
    accuracy(&preds, &test.labels)
}

/// K-means result: assignment, final centers, and the SSE after every
/// Lloyd iteration (non-increasing).
#[derive(Debug, Clone)]
pub struct KmeansOutcome {
    pub assignment: ClusterAssignment,
    pub centers: Tensor,
    pub sse_trace: Vec<f64>,
}

fn sq_dist(m: &Tensor, r: usize, centers: &Tensor, c: usize) -> f64 {
    let d = m.cols();
    let mut sq = 0.0;
    for j in 0..d {
        let diff = m.at(r, j) - centers.at(c, j);
        sq += diff * diff;
    }
    sq
}

fn nearest_center(m: &Tensor, r: usize, centers: &Tensor) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for c in 0..centers.rows() {
        let sq = sq_dist(m, r, centers, c);
        if sq < best.1 {
            best = (c, sq);
        }
    }
    (best.0, best.1)
}

/// Seeded k-means++ then Lloyd iterations to an assignment fixpoint.
/// A cluster that loses all its points is reseeded to the point farthest
/// from its current center.
pub fn kmeans(set: &EmbeddingSet, k: usize, seed: u64) -> Result<KmeansOutcome> {
    let n = set.len();
    if n < k || k == 0 {
        return Err(Error::TooFewRows { rows: n, k });
    }
    let m = &set.matrix;
    let d = set.dim();
    let mut r = rng::stream(seed, "kmeans-init", 0, 0);
    let mut centers = Tensor::zeros([k, d]);
    let copy_row = |centers: &mut Tensor, c: usize, row: usize, m: &Tensor| {
        for j in 0..d {
            centers.data_mut()[c * d + j] = m.at(row, j);
        }
    };
    // k-means++: first center uniform, later ones D²-weighted.
    copy_row(&mut centers, 0, r.gen_range(0..n), m);
    let mut dist_sq = vec![0.0; n];
    for c in 1..k {
        let mut total = 0.0;
        for (row, slot) in dist_sq.iter_mut().enumerate() {
            let mut best = f64::INFINITY;
            for prev in 0..c {
                best = best.min(sq_dist(m, row, &centers, prev));
            }
            *slot = best;
            total += best;
        }
        let row = if total > 0.0 {
            let mut u = r.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (row, &w) in dist_sq.iter().enumerate() {
                u -= w;
                if u <= 0.0 {
                    chosen = row;
                    break;
                }
            }
            chosen
        } else {
            // All remaining points coincide with a center already.
            r.gen_range(0..n)
        };
        copy_row(&mut centers, c, row, m);
    }

    let mut assignment = vec![0usize; n];
    let mut sse_trace = Vec::new();
    let mut first = true;
    for _ in 0..KMEANS_MAX_ITERS {
        if !first {
            // Update step: means of the current assignment; empty
            // clusters jump to the globally farthest point.
            let mut sums = vec![0.0; k * d];
            let mut counts = vec![0usize; k];
            for (row, &c) in assignment.iter().enumerate() {
                counts[c] += 1;
                for j in 0..d {
                    sums[c * d + j] += m.at(row, j);
                }
            }
            for c in 0..k {
                if counts[c] > 0 {
                    for j in 0..d {
                        centers.data_mut()[c * d + j] = sums[c * d + j] / counts[c] as f64;
                    }
                }
            }
            for c in 0..k {
                if counts[c] == 0 {
                    let far = (0..n)
                        .max_by(|&a, &b| {
                            let da = nearest_center(m, a, &centers).1;
                            let db = nearest_center(m, b, &centers).1;
                            da.partial_cmp(&db).expect("finite distances")
                        })
                        .expect("n >= k >= 1");
                    copy_row(&mut centers, c, far, m);
                }
            }
        }
        first = false;
        let mut next = vec![0usize; n];
        let mut sse = 0.0;
        for (row, slot) in next.iter_mut().enumerate() {
            let (c, sq) = nearest_center(m, row, &centers);
            *slot = c;
            sse += sq;
        }
        sse_trace.push(sse);
        let converged = next == assignment && sse_trace.len() > 1;
        assignment = next;
        if converged {
            break;
        }
    }
    Ok(KmeansOutcome {
        assignment: ClusterAssignment::new(assignment, k)?,
        centers,
        sse_trace,
    })
}

/// Mixture fit: hard assignment plus the log-likelihood after every EM
/// iteration (non-decreasing up to the variance floor).
#[derive(Debug, Clone)]
pub struct GmmOutcome {
    pub assignment: ClusterAssignment,
    pub means: Tensor,
    pub variances: Tensor,
    pub weights: Vec<f64>,
    pub ll_trace: Vec<f64>,
}

/// Diagonal-covariance EM initialized from [`kmeans`]. Stops when the
/// log-likelihood gain drops below 1e-6 or after 200 iterations.
pub fn gmm(set: &EmbeddingSet, k: usize, seed: u64) -> Result<GmmOutcome> {
    let n = set.len();
    if n < k || k == 0 {
        return Err(Error::TooFewRows { rows: n, k });
    }
    let m = &set.matrix;
    let d = set.dim();
    let km = kmeans(set, k, seed)?;
    let mut means = km.centers.clone();
    let mut variances = Tensor::filled([k, d], GMM_VAR_FLOOR);
    let mut weights = vec![0.0; k];
    {
        let mut counts = vec![0usize; k];
        for (row, &c) in km.assignment.clusters().iter().enumerate() {
            counts[c] += 1;
            for j in 0..d {
                let diff = m.at(row, j) - means.at(c, j);
                variances.data_mut()[c * d + j] += diff * diff;
            }
        }
        for c in 0..k {
            let denom = counts[c].max(1) as f64;
            for j in 0..d {
                let v = variances.at(c, j) / denom;
                variances.data_mut()[c * d + j] = v.max(GMM_VAR_FLOOR);
            }
            weights[c] = (counts[c] as f64).max(1e-9);
        }
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
    }

    let log_tau = ln(core::f64::consts::TAU);
    let mut resp = vec![0.0; n * k];
    let mut ll_trace = Vec::new();
    for _ in 0..GMM_MAX_ITERS {
        // E-step in the log domain.
        let mut ll = 0.0;
        for row in 0..n {
            let mut logp = vec![0.0; k];
            for (c, lp) in logp.iter_mut().enumerate() {
                let mut acc = ln(weights[c]);
                for j in 0..d {
                    let var = variances.at(c, j);
                    let diff = m.at(row, j) - means.at(c, j);
                    acc -= 0.5 * (log_tau + ln(var) + diff * diff / var);
                }
                *lp = acc;
            }
            let max = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for lp in &logp {
                total += exp(lp - max);
            }
            let lse = max + ln(total);
            ll += lse;
            for c in 0..k {
                resp[row * k + c] = exp(logp[c] - lse);
            }
        }
        let converged = ll_trace
            .last()
            .is_some_and(|&prev: &f64| abs(ll - prev) < GMM_LL_TOL);
        ll_trace.push(ll);
        if converged {
            break;
        }
        // M-step.
        for c in 0..k {
            let rc: f64 = (0..n).map(|row| resp[row * k + c]).sum();
            weights[c] = rc / n as f64;
            for j in 0..d {
                let mu = (0..n).map(|row| resp[row * k + c] * m.at(row, j)).sum::<f64>() / rc;
                means.data_mut()[c * d + j] = mu;
            }
            for j in 0..d {
                let var = (0..n)
                    .map(|row| {
                        let diff = m.at(row, j) - means.at(c, j);
                        resp[row * k + c] * diff * diff
                    })
                    .sum::<f64>()
                    / rc;
                variances.data_mut()[c * d + j] = var.max(GMM_VAR_FLOOR);
            }
        }
    }

    let mut clusters = Vec::with_capacity(n);
    for row in 0..n {
        let mut best = (f64::NEG_INFINITY, 0usize);
        for c in 0..k {
            let r = resp[row * k + c];
            if r > best.0 {
                best = (r, c);
            }
        }
        clusters.push(best.1);
    }
    Ok(GmmOutcome {
        assignment: ClusterAssignment::new(clusters, k)?,
        means,
        variances,
        weights,
        ll_trace,
    })
}

/// Contingency counts ω_kl: entry (cluster, class).
fn contingency(assign: &ClusterAssignment, labels: &[u32]) -> Result<Vec<Vec<f64>>> {
    if assign.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: assign.len(),
            right: labels.len(),
        });
    }
    if assign.is_empty() {
        return Err(Error::InvalidInput {
            reason: "empty partition".to_string(),
        });
    }
    let n_classes = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    let mut counts = vec![vec![0.0; n_classes]; assign.k()];
    for (&c, &l) in assign.clusters().iter().zip(labels) {
        counts[c][l as usize] += 1.0;
    }
    Ok(counts)
}

/// (1/|X|) Σ_k max_l ω_kl: the fraction of samples matching their
/// cluster's majority class.
pub fn purity(assign: &ClusterAssignment, labels: &[u32]) -> Result<f64> {
    let counts = contingency(assign, labels)?;
    let majority: f64 = counts
        .iter()
        .map(|row| row.iter().cloned().fold(0.0, f64::max))
        .sum();
    Ok(majority / labels.len() as f64)
}

fn comb2(x: f64) -> f64 {
    x * (x - 1.0) * 0.5
}

/// Adjusted Rand index via pair counting over the contingency table.
/// Degenerate partitions where max and expected index coincide score 1.
pub fn ari(assign: &ClusterAssignment, labels: &[u32]) -> Result<f64> {
    if assign.len() < 2 {
        return Err(Error::InvalidInput {
            reason: format!("adjusted Rand index needs >= 2 samples, got {}", assign.len()),
        });
    }
    let counts = contingency(assign, labels)?;
    let n = labels.len() as f64;
    let index: f64 = counts
        .iter()
        .flat_map(|row| row.iter())
        .map(|&c| comb2(c))
        .sum();
    let row_sums: Vec<f64> = counts.iter().map(|row| row.iter().sum()).collect();
    let n_classes = counts.first().map_or(0, |r| r.len());
    let col_sums: Vec<f64> = (0..n_classes)
        .map(|l| counts.iter().map(|row| row[l]).sum())
        .collect();
    let sum_a: f64 = row_sums.iter().map(|&a| comb2(a)).sum();
    let sum_b: f64 = col_sums.iter().map(|&b| comb2(b)).sum();
    let expected = sum_a * sum_b / comb2(n);
    let max = 0.5 * (sum_a + sum_b);
    let denom = max - expected;
    if abs(denom) < 1e-15 {
        return Ok(1.0);
    }
    Ok((index - expected) / denom)
}

/// Entry (l, l′): count of rows with true class l predicted as l′.
pub fn confusion_matrix(
    pred: &[u32],
    truth: &[u32],
    n_classes: usize,
) -> Result<Vec<Vec<usize>>> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    let mut mat = vec![vec![0usize; n_classes]; n_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        for l in [p, t] {
            if l as usize >= n_classes {
                return Err(Error::LabelOutOfRange {
                    label: l,
                    n_classes,
                });
            }
        }
        mat[t as usize][p as usize] += 1;
    }
    Ok(mat)
}

/// Everything the evaluation protocol reports for one train/test split.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsReport {
    pub n_train: usize,
    pub n_test: usize,
    pub n_classes: usize,
    pub one_nn_accuracy: f64,
    pub linear_probe_accuracy: f64,
    pub kmeans_purity: f64,
    pub kmeans_ari: f64,
    pub gmm_purity: f64,
    pub gmm_ari: f64,
    /// Confusion matrix of the 1-NN predictions, rows = true class.
    pub confusion: Vec<Vec<usize>>,
}

/// Runs the full evaluation suite on one split: 1-NN, linear probe, and
/// both clusterings of the test embeddings with k = number of classes.
pub fn full_report(
    train: &EmbeddingSet,
    test: &EmbeddingSet,
    probe: &ProbeConfig,
    cluster_seed: u64,
) -> Result<MetricsReport> {
    let n_classes = train.n_classes().max(test.n_classes());
    let preds = one_nn_predict(train, test)?;
    let one_nn = accuracy(&preds, test.labels())?;
    let confusion = confusion_matrix(&preds, test.labels(), n_classes)?;
    let probe_acc = linear_probe(train, test, probe)?;
    let km = kmeans(test, n_classes, cluster_seed)?;
    let gm = gmm(test, n_classes, cluster_seed)?;
    Ok(MetricsReport {
        n_train: train.len(),
        n_test: test.len(),
        n_classes,
        one_nn_accuracy: one_nn,
        linear_probe_accuracy: probe_acc,
        kmeans_purity: purity(&km.assignment, test.labels())?,
        kmeans_ari: ari(&km.assignment, test.labels())?,
        gmm_purity: purity(&gm.assignment, test.labels())?,
        gmm_ari: ari(&gm.assignment, test.labels())?,
        confusion,
    })
}
