//! Deterministic multi-view skeleton corpus generator.
//!
//! Each class is a parametric motion family: every joint axis follows a
//! sinusoid whose amplitude, frequency, and phase come from a per-class
//! random template, with small per-scene jitter on top. A scene's world
//! sequence is rendered under every view by rotating about the vertical
//! (y) axis by that view's azimuth, translating by its offset, and adding
//! Gaussian "occlusion" noise to a fixed per-view joint subset. The noise
//! is the view-specific nuisance signal alignment cannot remove and the
//! contrastive objective must learn to ignore.
//!
//! All randomness flows through [`crate::rng::stream`] with (label, index)
//! keys, so generation is reproducible and order-independent: any scene or
//! view could be produced in isolation and match the full run bit for bit.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::math;
use crate::rng;
use crate::skeleton::{ActionSequence, MultiViewCorpus, Pose, SkeletonTopology};

/// Joint indices 0..=3 are the alignment landmarks, in this order.
pub const ROOT: usize = 0;
/// Spine landmark index.
pub const SPINE: usize = 1;
/// Left-hip landmark index.
pub const LHIP: usize = 2;
/// Right-hip landmark index.
pub const RHIP: usize = 3;

/// Everything that determines a generated corpus.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct GeneratorConfig {
    pub n_classes: usize,
    pub scenes_per_class: usize,
    pub n_views: usize,
    pub n_joints: usize,
    pub seq_len: usize,
    /// One azimuth per view, degrees, rotation about the vertical axis.
    pub view_azimuths_deg: Vec<f64>,
    /// One world-space translation per view.
    pub view_offsets: Vec<[f64; 3]>,
    /// Std of the additive noise on each view's occluded joint subset.
    pub occlusion_noise_std: f64,
    pub rng_seed: u64,
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || self.scenes_per_class == 0 {
            return Err(Error::InvalidConfig {
                reason: "need at least one class and one scene per class".to_string(),
            });
        }
        if self.n_views < 2 {
            return Err(Error::InvalidConfig {
                reason: format!("need at least 2 views, got {}", self.n_views),
            });
        }
        if self.n_joints < 4 {
            return Err(Error::InvalidConfig {
                reason: format!("need at least 4 joints for landmarks, got {}", self.n_joints),
            });
        }
        if self.seq_len < 2 {
            return Err(Error::InvalidConfig {
                reason: format!("need at least 2 frames, got {}", self.seq_len),
            });
        }
        if self.view_azimuths_deg.len() != self.n_views {
            return Err(Error::InvalidConfig {
                reason: format!(
                    "{} azimuths for {} views",
                    self.view_azimuths_deg.len(),
                    self.n_views
                ),
            });
        }
        if self.view_offsets.len() != self.n_views {
            return Err(Error::InvalidConfig {
                reason: format!(
                    "{} offsets for {} views",
                    self.view_offsets.len(),
                    self.n_views
                ),
            });
        }
        if !(self.occlusion_noise_std >= 0.0 && self.occlusion_noise_std.is_finite()) {
            return Err(Error::InvalidConfig {
                reason: "occlusion_noise_std must be finite and non-negative".to_string(),
            });
        }
        Ok(())
    }

    /// The topology every generated corpus uses.
    pub fn topology(&self) -> SkeletonTopology {
        SkeletonTopology {
            n_joints: self.n_joints,
            root_idx: ROOT,
            spine_idx: SPINE,
            lhip_idx: LHIP,
            rhip_idx: RHIP,
        }
    }
}

/// One joint axis: base + amp · sin(2π · freq · u + phase), u ∈ [0, 1].
#[derive(Debug, Clone, Copy)]
struct Wave {
    base: f64,
    amp: f64,
    freq: f64,
    phase: f64,
}

impl Wave {
    fn eval(&self, u: f64) -> f64 {
        self.base + self.amp * math::sin(core::f64::consts::TAU * self.freq * u + self.phase)
    }
}

/// Rest position of joint `j`. Landmarks form a well-conditioned frame
/// (spine up the vertical axis, hips across it); the rest sit on a ring
/// around the spine.
fn base_position(j: usize, n_joints: usize) -> [f64; 3] {
    match j {
        ROOT => [0.0, 0.0, 0.0],
        SPINE => [0.0, 1.0, 0.0],
        LHIP => [0.35, 0.05, 0.0],
        RHIP => [-0.35, 0.05, 0.0],
        _ => {
            let free = (n_joints - 4).max(1) as f64;
            let angle = core::f64::consts::TAU * (j - 4) as f64 / free;
            [
                0.6 * math::cos(angle),
                0.3 + 0.5 * (j - 4) as f64 / free,
                0.6 * math::sin(angle),
            ]
        }
    }
}

/// Landmarks move a little (so frame-0 geometry stays non-degenerate);
/// free joints move a lot (they carry the class signal).
fn draw_template(cfg: &GeneratorConfig, class: usize) -> Vec<[Wave; 3]> {
    let mut r = rng::stream(cfg.rng_seed, "class-template", class as u64, 0);
    (0..cfg.n_joints)
        .map(|j| {
            let base = base_position(j, cfg.n_joints);
            core::array::from_fn(|a| {
                let amp = if j <= RHIP {
                    r.gen_range(0.01..0.04)
                } else {
                    r.gen_range(0.2..0.5)
                };
                Wave {
                    base: base[a],
                    amp,
                    freq: r.gen_range(0.5..2.5),
                    phase: r.gen_range(0.0..core::f64::consts::TAU),
                }
            })
        })
        .collect()
}

/// Scene-level perturbation of the class template. Kept small relative to
/// inter-class template differences so classes stay separable.
fn jitter_template(template: &[[Wave; 3]], seed: u64, scene_id: u64) -> Vec<[Wave; 3]> {
    let mut r = rng::stream(seed, "scene-jitter", scene_id, 0);
    // Scene-global execution changes: the whole action runs faster or
    // slower and starts at a different point of its cycle. Both preserve
    // the class signature (relative frequencies and amplitude pattern)
    // while moving the raw coordinates substantially.
    let speed = r.gen_range(0.9..1.1);
    let time_shift = r.gen_range(-0.15..0.15);
    template
        .iter()
        .map(|waves| {
            core::array::from_fn(|a| {
                let w = waves[a];
                let freq = w.freq * speed * r.gen_range(0.97..1.03);
                Wave {
                    base: w.base,
                    amp: w.amp * r.gen_range(0.85..1.15),
                    freq,
                    phase: w.phase + r.gen_range(-0.15..0.15)
                        - core::f64::consts::TAU * freq * time_shift,
                }
            })
        })
        .collect()
}

/// The fixed joint subset view `v` occludes: ceil(N/3) joints, landmarks
/// eligible, so occlusion can also wobble the alignment frame.
fn occluded_joints(cfg: &GeneratorConfig, view: u32) -> Vec<usize> {
    // Only non-landmark joints occlude: self-occlusion hits extremities,
    // while the torso landmarks that anchor view alignment stay tracked.
    let free = cfg.n_joints - (RHIP + 1);
    let k = cfg.n_joints.div_ceil(3).min(free);
    let mut r = rng::stream(cfg.rng_seed, "occlusion-joints", view as u64, 0);
    let mut joints: Vec<usize> = rand::seq::index::sample(&mut r, free, k)
        .into_iter()
        .map(|j| j + RHIP + 1)
        .collect();
    joints.sort_unstable();
    joints
}

fn rotate_about_vertical(p: [f64; 3], cos_t: f64, sin_t: f64) -> [f64; 3] {
    [
        cos_t * p[0] + sin_t * p[2],
        p[1],
        -sin_t * p[0] + cos_t * p[2],
    ]
}

/// Generates the full corpus: `n_classes · scenes_per_class` scenes, each
/// rendered under all views. Scene ids are globally unique; class labels
/// are attached for evaluation.
pub fn generate_corpus(cfg: &GeneratorConfig) -> Result<MultiViewCorpus> {
    cfg.validate()?;
    let occlusions: Vec<Vec<usize>> = (0..cfg.n_views)
        .map(|v| occluded_joints(cfg, v as u32))
        .collect();
    let mut sequences = Vec::with_capacity(cfg.n_classes * cfg.scenes_per_class * cfg.n_views);
    for class in 0..cfg.n_classes {
        let template = draw_template(cfg, class);
        for s in 0..cfg.scenes_per_class {
            let scene_id = (class * cfg.scenes_per_class + s) as u64;
            let waves = jitter_template(&template, cfg.rng_seed, scene_id);
            let world: Vec<Vec<[f64; 3]>> = (0..cfg.seq_len)
                .map(|t| {
                    let u = t as f64 / (cfg.seq_len - 1) as f64;
                    waves
                        .iter()
                        .map(|w| [w[0].eval(u), w[1].eval(u), w[2].eval(u)])
                        .collect()
                })
                .collect();
            for v in 0..cfg.n_views {
                let theta = cfg.view_azimuths_deg[v].to_radians();
                let (sin_t, cos_t) = (math::sin(theta), math::cos(theta));
                let offset = cfg.view_offsets[v];
                let mut frames: Vec<Vec<[f64; 3]>> = world
                    .iter()
                    .map(|frame| {
                        frame
                            .iter()
                            .map(|&p| {
                                let q = rotate_about_vertical(p, cos_t, sin_t);
                                [q[0] + offset[0], q[1] + offset[1], q[2] + offset[2]]
                            })
                            .collect()
                    })
                    .collect();
                if cfg.occlusion_noise_std > 0.0 {
                    let mut r =
                        rng::stream(cfg.rng_seed, "occlusion-noise", scene_id, v as u64);
                    let noise = Normal::new(0.0, cfg.occlusion_noise_std)
                        .expect("validated std");
                    for frame in &mut frames {
                        for &j in &occlusions[v] {
                            for axis in 0..3 {
                                frame[j][axis] += noise.sample(&mut r);
                            }
                        }
                    }
                }
                let poses = frames
                    .into_iter()
                    .map(Pose::new)
                    .collect::<Result<Vec<_>>>()?;
                sequences.push(ActionSequence::new(
                    poses,
                    scene_id,
                    v as u32,
                    Some(class as u32),
                )?);
            }
        }
    }
    MultiViewCorpus::new(sequences, cfg.n_views, cfg.topology())
}
