//! Skeleton sequence data model and coarse view alignment.
//!
//! A pose is an N×3 joint array; an action sequence is T poses tagged with
//! scene/view identity. Alignment canonicalizes each sequence from four
//! landmarks of its first frame: the spine direction, the hip axis
//! orthogonalized against it, and their cross product form a right-handed
//! orthonormal basis R; every joint is then translated by the frame-0 root
//! and rotated by R⁻¹ (= Rᵀ). Any proper rigid transform of the input maps
//! to the same canonical output, which is what makes cross-view sequences
//! comparable.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// Norm threshold below which alignment landmarks count as collinear.
pub const DEGENERATE_TOL: f64 = 1e-9;

/// Joint count plus the four landmark indices alignment needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct SkeletonTopology {
    pub n_joints: usize,
    pub root_idx: usize,
    pub spine_idx: usize,
    pub lhip_idx: usize,
    pub rhip_idx: usize,
}

impl SkeletonTopology {
    /// Validates that the four landmarks are distinct and in range.
    pub fn validate(&self) -> Result<()> {
        let idx = [self.root_idx, self.spine_idx, self.lhip_idx, self.rhip_idx];
        for (i, a) in idx.iter().enumerate() {
            if *a >= self.n_joints {
                return Err(Error::InvalidConfig {
                    reason: format!("landmark index {a} out of range for {} joints", self.n_joints),
                });
            }
            if idx[..i].contains(a) {
                return Err(Error::InvalidConfig {
                    reason: "landmark indices must be distinct".to_string(),
                });
            }
        }
        Ok(())
    }
}

/// One frame: 3-D coordinates for every joint.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Pose {
    coords: Vec<[f64; 3]>,
}

impl Pose {
    pub fn new(coords: Vec<[f64; 3]>) -> Result<Self> {
        for c in &coords {
            if !c.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFiniteValue {
                    context: "pose coordinates".to_string(),
                });
            }
        }
        Ok(Self { coords })
    }

    pub fn coords(&self) -> &[[f64; 3]] {
        &self.coords
    }

    pub fn n_joints(&self) -> usize {
        self.coords.len()
    }

    pub fn joint(&self, i: usize) -> [f64; 3] {
        self.coords[i]
    }
}

/// A skeleton sequence with its identity metadata. The class label exists
/// for evaluation only; representation training never reads it.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ActionSequence {
    pub frames: Vec<Pose>,
    pub scene_id: u64,
    pub view_id: u32,
    pub class_label: Option<u32>,
}

impl ActionSequence {
    pub fn new(
        frames: Vec<Pose>,
        scene_id: u64,
        view_id: u32,
        class_label: Option<u32>,
    ) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::SequenceTooShort { len: frames.len() });
        }
        let n = frames[0].n_joints();
        if frames.iter().any(|f| f.n_joints() != n) {
            return Err(Error::InvalidInput {
                reason: "frames disagree on joint count".to_string(),
            });
        }
        Ok(Self {
            frames,
            scene_id,
            view_id,
            class_label,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn n_joints(&self) -> usize {
        self.frames[0].n_joints()
    }

    /// Row-major T×3N flattening: frame-major, joint-major, then x/y/z.
    pub fn flattened(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * self.n_joints() * 3);
        for frame in &self.frames {
            for joint in frame.coords() {
                out.extend_from_slice(joint);
            }
        }
        out
    }
}

/// A set of sequences where every scene appears under at least two views,
/// so every anchor has a positive pair.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewCorpus {
    sequences: Vec<ActionSequence>,
    n_views: usize,
    topology: SkeletonTopology,
}

impl MultiViewCorpus {
    pub fn new(
        sequences: Vec<ActionSequence>,
        n_views: usize,
        topology: SkeletonTopology,
    ) -> Result<Self> {
        topology.validate()?;
        let mut scenes: Vec<(u64, Vec<u32>)> = Vec::new();
        for seq in &sequences {
            if seq.n_joints() != topology.n_joints {
                return Err(Error::InvalidInput {
                    reason: format!(
                        "sequence (scene {}, view {}) has {} joints, topology says {}",
                        seq.scene_id,
                        seq.view_id,
                        seq.n_joints(),
                        topology.n_joints
                    ),
                });
            }
            match scenes.iter_mut().find(|(id, _)| *id == seq.scene_id) {
                Some((_, views)) => {
                    if !views.contains(&seq.view_id) {
                        views.push(seq.view_id);
                    }
                }
                None => scenes.push((seq.scene_id, alloc::vec![seq.view_id])),
            }
        }
        for (id, views) in &scenes {
            if views.len() < 2 {
                return Err(Error::InvalidInput {
                    reason: format!("scene {id} appears under fewer than 2 views"),
                });
            }
        }
        Ok(Self {
            sequences,
            n_views,
            topology,
        })
    }

    pub fn sequences(&self) -> &[ActionSequence] {
        &self.sequences
    }

    pub fn n_views(&self) -> usize {
        self.n_views
    }

    pub fn topology(&self) -> &SkeletonTopology {
        &self.topology
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Sub-corpus keeping only the views accepted by `keep`. Fails if a
    /// scene is left with fewer than two views.
    pub fn filter_views(&self, keep: impl Fn(u32) -> bool) -> Result<MultiViewCorpus> {
        let kept: Vec<ActionSequence> = self
            .sequences
            .iter()
            .filter(|s| keep(s.view_id))
            .cloned()
            .collect();
        MultiViewCorpus::new(kept, self.n_views, self.topology)
    }

    /// Applies `f` to every sequence, keeping metadata and topology.
    pub fn map_sequences(
        &self,
        mut f: impl FnMut(&ActionSequence) -> Result<ActionSequence>,
    ) -> Result<MultiViewCorpus> {
        let sequences = self
            .sequences
            .iter()
            .map(|s| f(s))
            .collect::<Result<Vec<_>>>()?;
        MultiViewCorpus::new(sequences, self.n_views, self.topology)
    }
}

/// 3×3 rotation with orthonormal columns `r̂₀, r̂₁, r̂₂` and determinant +1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix {
    cols: [[f64; 3]; 3],
}

impl RotationMatrix {
    /// Columns of the matrix.
    pub fn columns(&self) -> &[[f64; 3]; 3] {
        &self.cols
    }

    /// R · p.
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let [c0, c1, c2] = &self.cols;
        [
            c0[0] * p[0] + c1[0] * p[1] + c2[0] * p[2],
            c0[1] * p[0] + c1[1] * p[1] + c2[1] * p[2],
            c0[2] * p[0] + c1[2] * p[1] + c2[2] * p[2],
        ]
    }

    /// R⁻¹ · p, using R⁻¹ = Rᵀ for orthonormal R.
    pub fn apply_inverse(&self, p: [f64; 3]) -> [f64; 3] {
        [
            dot(self.cols[0], p),
            dot(self.cols[1], p),
            dot(self.cols[2], p),
        ]
    }

    /// Max absolute entry of RᵀR − I.
    pub fn orthonormality_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let d = dot(self.cols[i], self.cols[j]) - if i == j { 1.0 } else { 0.0 };
                worst = worst.max(math::abs(d));
            }
        }
        worst
    }

    pub fn determinant(&self) -> f64 {
        dot(self.cols[0], cross(self.cols[1], self.cols[2]))
    }
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm3(a: [f64; 3]) -> f64 {
    math::sqrt(dot(a, a))
}

fn unit(a: [f64; 3], n: f64) -> [f64; 3] {
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Centers each axis on its sequence-wide midrange, then applies one
/// uniform scale (the largest per-axis half-extent) so every coordinate
/// lands in [−1, 1] while relative geometry is preserved.
pub fn normalize_coordinates(seq: &ActionSequence) -> Result<ActionSequence> {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for frame in &seq.frames {
        for joint in frame.coords() {
            for a in 0..3 {
                lo[a] = lo[a].min(joint[a]);
                hi[a] = hi[a].max(joint[a]);
            }
        }
    }
    let mid = [
        (lo[0] + hi[0]) / 2.0,
        (lo[1] + hi[1]) / 2.0,
        (lo[2] + hi[2]) / 2.0,
    ];
    let half = [
        (hi[0] - lo[0]) / 2.0,
        (hi[1] - lo[1]) / 2.0,
        (hi[2] - lo[2]) / 2.0,
    ];
    let scale = half[0].max(half[1]).max(half[2]);
    if scale == 0.0 {
        return Err(Error::ZeroExtentSequence);
    }
    let frames = seq
        .frames
        .iter()
        .map(|frame| {
            let coords = frame
                .coords()
                .iter()
                .map(|j| {
                    let mut out = [0.0; 3];
                    for a in 0..3 {
                        // Clamp guards the 1-ulp overshoot division can
                        // introduce at the extremes.
                        out[a] = ((j[a] - mid[a]) / scale).clamp(-1.0, 1.0);
                    }
                    out
                })
                .collect();
            Pose::new(coords)
        })
        .collect::<Result<Vec<_>>>()?;
    ActionSequence::new(frames, seq.scene_id, seq.view_id, seq.class_label)
}

/// Resamples to exactly `target_len` frames by per-joint, per-axis linear
/// interpolation; target frame k samples source time k·(T−1)/(target_len−1).
/// Endpoints are reproduced exactly, and `target_len == T` is the identity.
pub fn resample(seq: &ActionSequence, target_len: usize) -> Result<ActionSequence> {
    let t_in = seq.len();
    if t_in < 2 {
        return Err(Error::SequenceTooShort { len: t_in });
    }
    if target_len < 2 {
        return Err(Error::InvalidTargetLength { len: target_len });
    }
    let n = seq.n_joints();
    let step = (t_in - 1) as f64 / (target_len - 1) as f64;
    let mut frames = Vec::with_capacity(target_len);
    for k in 0..target_len {
        let t = k as f64 * step;
        let i0 = (math::floor(t) as usize).min(t_in - 2);
        let frac = t - i0 as f64;
        let frame = if frac <= 0.0 {
            seq.frames[i0].clone()
        } else if frac >= 1.0 {
            seq.frames[i0 + 1].clone()
        } else {
            let (a, b) = (&seq.frames[i0], &seq.frames[i0 + 1]);
            let coords = (0..n)
                .map(|j| {
                    let (ja, jb) = (a.joint(j), b.joint(j));
                    [
                        ja[0] + frac * (jb[0] - ja[0]),
                        ja[1] + frac * (jb[1] - ja[1]),
                        ja[2] + frac * (jb[2] - ja[2]),
                    ]
                })
                .collect();
            Pose::new(coords)?
        };
        frames.push(frame);
    }
    ActionSequence::new(frames, seq.scene_id, seq.view_id, seq.class_label)
}

/// Canonical facing basis from one frame's landmarks.
///
/// r₀ is the root→spine vector; the hip axis (lhip − rhip) is
/// Gram–Schmidt-orthogonalized against r̂₀ to give r₁; r₂ = r₀ × r₁ closes a
/// right-handed system. Columns are normalized to unit length.
pub fn build_rotation(pose0: &Pose, topo: &SkeletonTopology) -> Result<RotationMatrix> {
    topo.validate()?;
    if pose0.n_joints() != topo.n_joints {
        return Err(Error::InvalidInput {
            reason: format!(
                "pose has {} joints, topology says {}",
                pose0.n_joints(),
                topo.n_joints
            ),
        });
    }
    let r0 = sub3(pose0.joint(topo.spine_idx), pose0.joint(topo.root_idx));
    let n0 = norm3(r0);
    if n0 < DEGENERATE_TOL {
        return Err(Error::DegenerateFrame {
            what: "spine coincides with root",
        });
    }
    let r0_hat = unit(r0, n0);
    let hip = sub3(pose0.joint(topo.lhip_idx), pose0.joint(topo.rhip_idx));
    let proj = dot(hip, r0_hat);
    let r1 = [
        hip[0] - proj * r0_hat[0],
        hip[1] - proj * r0_hat[1],
        hip[2] - proj * r0_hat[2],
    ];
    let n1 = norm3(r1);
    if n1 < DEGENERATE_TOL {
        return Err(Error::DegenerateFrame {
            what: "hip axis parallel to spine",
        });
    }
    let r1_hat = unit(r1, n1);
    let r2 = cross(r0, r1);
    let r2_hat = unit(r2, norm3(r2));
    Ok(RotationMatrix {
        cols: [r0_hat, r1_hat, r2_hat],
    })
}

/// Canonicalizes a sequence: every joint of every frame is translated by
/// −root(frame 0), then rotated by R⁻¹ where R comes from
/// [`build_rotation`] on frame 0. The frame-0 root maps exactly to the
/// origin, and any proper rigid transform of the input yields the same
/// output.
pub fn align_view(seq: &ActionSequence, topo: &SkeletonTopology) -> Result<ActionSequence> {
    let rot = build_rotation(&seq.frames[0], topo)?;
    let origin = seq.frames[0].joint(topo.root_idx);
    let frames = seq
        .frames
        .iter()
        .map(|frame| {
            let coords = frame
                .coords()
                .iter()
                .map(|&j| rot.apply_inverse(sub3(j, origin)))
                .collect();
            Pose::new(coords)
        })
        .collect::<Result<Vec<_>>>()?;
    ActionSequence::new(frames, seq.scene_id, seq.view_id, seq.class_label)
}

/// Standard preprocessing: normalize to [−1,1], resample to `target_len`
/// frames, then (optionally) align. Alignment is skipped by the
/// raw-reconstruction ablation.
pub fn preprocess_sequence(
    seq: &ActionSequence,
    topo: &SkeletonTopology,
    target_len: usize,
    align: bool,
) -> Result<ActionSequence> {
    let normalized = normalize_coordinates(seq)?;
    let resampled = resample(&normalized, target_len)?;
    if align {
        align_view(&resampled, topo)
    } else {
        Ok(resampled)
    }
}

/// [`preprocess_sequence`] over a whole corpus.
pub fn preprocess_corpus(
    corpus: &MultiViewCorpus,
    target_len: usize,
    align: bool,
) -> Result<MultiViewCorpus> {
    let topo = *corpus.topology();
    corpus.map_sequences(|seq| preprocess_sequence(seq, &topo, target_len, align))
}

/// Five-joint topology with landmarks at 0..3, shared by tests across
/// modules.
#[cfg(test)]
pub(crate) fn test_topology() -> SkeletonTopology {
    SkeletonTopology {
        n_joints: 5,
        root_idx: 0,
        spine_idx: 1,
        lhip_idx: 2,
        rhip_idx: 3,
    }
}
