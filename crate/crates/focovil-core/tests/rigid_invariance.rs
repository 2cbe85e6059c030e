//! Property test: view alignment cancels any proper rigid transform.
//!
//! The rotations applied here are built with the Rodrigues formula,
//! independent of the crate's own rotation code, so agreement is evidence
//! rather than tautology.

use focovil_core::skeleton::{align_view, ActionSequence, Pose, SkeletonTopology};
use proptest::prelude::*;

const TOPO: SkeletonTopology = SkeletonTopology {
    n_joints: 6,
    root_idx: 0,
    spine_idx: 1,
    lhip_idx: 2,
    rhip_idx: 3,
};

fn rodrigues(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let k = [axis[0] / n, axis[1] / n, axis[2] / n];
    let (s, c) = angle.sin_cos();
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let eye = if i == j { 1.0 } else { 0.0 };
            // [k]x has entries -eps_ijl k_l.
            let skew = match (i, j) {
                (0, 1) => -k[2],
                (0, 2) => k[1],
                (1, 0) => k[2],
                (1, 2) => -k[0],
                (2, 0) => -k[1],
                (2, 1) => k[0],
                _ => 0.0,
            };
            r[i][j] = c * eye + s * skew + (1.0 - c) * k[i] * k[j];
        }
    }
    r
}

fn transform(seq: &ActionSequence, r: &[[f64; 3]; 3], t: [f64; 3]) -> ActionSequence {
    let frames = seq
        .frames
        .iter()
        .map(|f| {
            let coords = f
                .coords()
                .iter()
                .map(|p| {
                    let mut q = [0.0; 3];
                    for i in 0..3 {
                        q[i] = r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2] + t[i];
                    }
                    q
                })
                .collect();
            Pose::new(coords).unwrap()
        })
        .collect();
    ActionSequence::new(frames, seq.scene_id, seq.view_id, seq.class_label).unwrap()
}

/// A unit vector guaranteed orthogonal to `v`: cross with the basis axis
/// least aligned with it.
fn orthogonal_unit(v: [f64; 3]) -> [f64; 3] {
    let a = [v[0].abs(), v[1].abs(), v[2].abs()];
    let e = if a[0] <= a[1] && a[0] <= a[2] {
        [1.0, 0.0, 0.0]
    } else if a[1] <= a[2] {
        [0.0, 1.0, 0.0]
    } else {
        [0.0, 0.0, 1.0]
    };
    let c = [
        v[1] * e[2] - v[2] * e[1],
        v[2] * e[0] - v[0] * e[2],
        v[0] * e[1] - v[1] * e[0],
    ];
    let n = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
    [c[0] / n, c[1] / n, c[2] / n]
}

fn unit3() -> impl Strategy<Value = [f64; 3]> {
    [-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64].prop_filter_map("too short", |v| {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        (n > 0.2).then(|| [v[0] / n, v[1] / n, v[2] / n])
    })
}

prop_compose! {
    /// Two frames with well-conditioned landmarks (spine length and the
    /// hip component orthogonal to it both bounded away from zero), plus
    /// two free joints per frame.
    fn well_conditioned_sequence()(
        root in [-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64],
        spine_dir in unit3(),
        spine_len in 0.3..2.0f64,
        hip_along in -0.5..0.5f64,
        hip_ortho in 0.3..1.5f64,
        extra in prop::collection::vec(-2.0..2.0f64, 4 * 3 * 2),
    ) -> ActionSequence {
        let spine = [
            root[0] + spine_len * spine_dir[0],
            root[1] + spine_len * spine_dir[1],
            root[2] + spine_len * spine_dir[2],
        ];
        let ortho = orthogonal_unit(spine_dir);
        let half = [
            (hip_along * spine_dir[0] + hip_ortho * ortho[0]) / 2.0,
            (hip_along * spine_dir[1] + hip_ortho * ortho[1]) / 2.0,
            (hip_along * spine_dir[2] + hip_ortho * ortho[2]) / 2.0,
        ];
        let lhip = [root[0] + half[0], root[1] + half[1], root[2] + half[2]];
        let rhip = [root[0] - half[0], root[1] - half[1], root[2] - half[2]];
        let frames = (0..2)
            .map(|f| {
                let j4 = &extra[f * 12..f * 12 + 3];
                let j5 = &extra[f * 12 + 3..f * 12 + 6];
                Pose::new(vec![
                    root,
                    spine,
                    lhip,
                    rhip,
                    [j4[0], j4[1], j4[2]],
                    [j5[0], j5[1], j5[2]],
                ])
                .unwrap()
            })
            .collect();
        ActionSequence::new(frames, 0, 0, None).unwrap()
    }
}

proptest! {
    #[test]
    fn alignment_cancels_rigid_transforms(
        seq in well_conditioned_sequence(),
        axis in unit3(),
        angle in 0.0..core::f64::consts::TAU,
        t in [-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64],
    ) {
        let r = rodrigues(axis, angle);
        let moved = transform(&seq, &r, t);
        let a = align_view(&seq, &TOPO).unwrap();
        let b = align_view(&moved, &TOPO).unwrap();
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            for (ja, jb) in fa.coords().iter().zip(fb.coords()) {
                for axis in 0..3 {
                    prop_assert!(
                        (ja[axis] - jb[axis]).abs() <= 1e-9,
                        "axis {} differs: {} vs {}", axis, ja[axis], jb[axis]
                    );
                }
            }
        }
    }
}
