//! Displacement triads and the descriptors built from them.
//!
//! For an anchor `x`, a partner `x'` and a layer transition `l -> l+1`:
//!
//! ```text
//! sep    = h_l(x')   - h_l(x)
//! detour = h_l+1(x)  - h_l(x')
//! traj   = h_l+1(x)  - h_l(x)        (sep + detour == traj)
//! ```
//!
//! A step descriptor summarizes the triangle with the angle between `sep` and
//! `detour` and the relative excess length of the detour over `traj`.

use std::ops::Range;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feature_pack::FeaturePack;

/// Lower bound for denominators.
pub const EPS: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("zero-norm vector has no direction")]
    ZeroVector,
    #[error("empty window: center {center} with radius {radius} spans no layer transition")]
    EmptyWindow { center: usize, radius: usize },
    #[error("need at least 2 layers, pack has {0}")]
    TooFewLayers(usize),
    #[error("center layer {center} out of range (pack has {num_layers} layers)")]
    CenterOutOfRange { center: usize, num_layers: usize },
    #[error("sample index {index} out of range ({num_samples} samples)")]
    SampleOutOfRange { index: usize, num_samples: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Triad {
    pub sep: Vec<f64>,
    pub detour: Vec<f64>,
    pub traj: Vec<f64>,
}

/// Build the triad for anchor position `h_x`, partner position `h_xp` (both at
/// layer `l`) and the anchor's next-layer position `h_next_x`.
pub fn triad(h_x: &[f64], h_xp: &[f64], h_next_x: &[f64]) -> Result<Triad, GeometryError> {
    check_dims(h_x, h_xp)?;
    check_dims(h_x, h_next_x)?;
    let sep = h_xp.iter().zip(h_x).map(|(b, a)| b - a).collect();
    let detour = h_next_x.iter().zip(h_xp).map(|(c, b)| c - b).collect();
    let traj = h_next_x.iter().zip(h_x).map(|(c, a)| c - a).collect();
    Ok(Triad { sep, detour, traj })
}

fn check_dims<A, B>(a: &[A], b: &[B]) -> Result<(), GeometryError> {
    if a.len() != b.len() {
        return Err(GeometryError::DimensionMismatch(a.len(), b.len()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDescriptor {
    /// Radians in `[0, pi]`.
    pub theta: f64,
    /// Relative excess path length, nonnegative up to rounding.
    pub d: f64,
}

fn acos_clamped(c: f64) -> f64 {
    c.clamp(-1.0, 1.0).acos()
}

fn step_from_norms(dot: f64, n_sep: f64, n_det: f64, n_traj: f64) -> StepDescriptor {
    let theta = acos_clamped(dot / (n_sep * n_det).max(EPS));
    let d = (n_sep + n_det - n_traj) / n_traj.max(EPS);
    StepDescriptor { theta, d }
}

pub fn euclid_descriptor(t: &Triad) -> StepDescriptor {
    let dot: f64 = t.sep.iter().zip(&t.detour).map(|(a, b)| a * b).sum();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    step_from_norms(dot, norm(&t.sep), norm(&t.detour), norm(&t.traj))
}

/// Euclidean step descriptor computed straight from the three positions,
/// without materializing the triad.
pub fn euclid_step<T: Copy + Into<f64>>(h_x: &[T], h_xp: &[T], h_next_x: &[T]) -> StepDescriptor {
    let (mut dot, mut ss, mut dd, mut tt) = (0.0, 0.0, 0.0, 0.0);
    for ((&a, &b), &c) in h_x.iter().zip(h_xp).zip(h_next_x) {
        let (a, b, c): (f64, f64, f64) = (a.into(), b.into(), c.into());
        let sep = b - a;
        let det = c - b;
        let traj = c - a;
        dot += sep * det;
        ss += sep * sep;
        dd += det * det;
        tt += traj * traj;
    }
    step_from_norms(dot, ss.sqrt(), dd.sqrt(), tt.sqrt())
}

/// Great-circle distance between the directions of `u` and `v`, given their
/// norms. Uses the half-chord form, which stays accurate near 0 and pi where
/// `acos` of the normalized dot product loses half its digits.
fn great_circle<T: Copy + Into<f64>>(u: &[T], nu: f64, v: &[T], nv: f64) -> f64 {
    let (mut diff, mut sum) = (0.0, 0.0);
    for (&a, &b) in u.iter().zip(v) {
        let a = a.into() / nu;
        let b = b.into() / nv;
        diff += (a - b) * (a - b);
        sum += (a + b) * (a + b);
    }
    2.0 * diff.sqrt().atan2(sum.sqrt())
}

fn norm_of<T: Copy + Into<f64>>(v: &[T]) -> Result<f64, GeometryError> {
    let n = v.iter().map(|&x| x.into() * x.into()).sum::<f64>().sqrt();
    if n == 0.0 {
        return Err(GeometryError::ZeroVector);
    }
    Ok(n)
}

/// Spherical step descriptor: interior angle at `h_xp` of the spherical
/// triangle (law of cosines) and relative excess arc length.
pub fn geodesic_descriptor<T: Copy + Into<f64>>(
    h_x: &[T],
    h_xp: &[T],
    h_next_x: &[T],
) -> Result<StepDescriptor, GeometryError> {
    check_dims(h_x, h_xp)?;
    check_dims(h_x, h_next_x)?;
    let (na, nb, nc) = (norm_of(h_x)?, norm_of(h_xp)?, norm_of(h_next_x)?);
    let s_sep = great_circle(h_x, na, h_xp, nb);
    let s_det = great_circle(h_xp, nb, h_next_x, nc);
    let s_traj = great_circle(h_x, na, h_next_x, nc);
    let cos_theta = (s_traj.cos() - s_sep.cos() * s_det.cos()) / (s_sep.sin() * s_det.sin()).max(EPS);
    Ok(StepDescriptor {
        theta: acos_clamped(cos_theta),
        d: (s_sep + s_det - s_traj) / s_traj.max(EPS),
    })
}

/// Polar-to-Cartesian projection of a geodesic step descriptor.
pub fn cartesian_project(s: StepDescriptor) -> (f64, f64) {
    (s.d * s.theta.cos(), s.d * s.theta.sin())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SpaceKind {
    #[default]
    Euclidean,
    Geodesic,
    #[serde(rename = "cartesian")]
    PseudoCartesian,
}

impl SpaceKind {
    /// The two descriptor columns emitted per transition.
    pub fn step<T: Copy + Into<f64>>(self, h_x: &[T], h_xp: &[T], h_next_x: &[T]) -> Result<[f64; 2], GeometryError> {
        match self {
            SpaceKind::Euclidean => {
                check_dims(h_x, h_xp)?;
                check_dims(h_x, h_next_x)?;
                let s = euclid_step(h_x, h_xp, h_next_x);
                Ok([s.theta, s.d])
            }
            SpaceKind::Geodesic => {
                let s = geodesic_descriptor(h_x, h_xp, h_next_x)?;
                Ok([s.theta, s.d])
            }
            SpaceKind::PseudoCartesian => {
                let (x, y) = cartesian_project(geodesic_descriptor(h_x, h_xp, h_next_x)?);
                Ok([x, y])
            }
        }
    }
}

/// Layer transitions `t -> t+1` covered by a window of `radius` around
/// `center`, clamped to the pack.
pub fn transition_window(num_layers: usize, center: usize, radius: usize) -> Result<Range<usize>, GeometryError> {
    if num_layers < 2 {
        return Err(GeometryError::TooFewLayers(num_layers));
    }
    if center >= num_layers {
        return Err(GeometryError::CenterOutOfRange { center, num_layers });
    }
    let first = center.saturating_sub(radius);
    let end = (center + radius).min(num_layers - 1);
    if end <= first {
        return Err(GeometryError::EmptyWindow { center, radius });
    }
    Ok(first..end)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDescriptor {
    /// `[a_t0, b_t0, a_t1, b_t1, ...]` in ascending transition order, where
    /// `(a, b)` is `(theta, d)` or `(x, y)` for the pseudo-Cartesian space.
    pub values: Vec<f64>,
    pub center_layer: usize,
    pub radius: usize,
}

fn check_sample(pack: &FeaturePack, index: usize) -> Result<(), GeometryError> {
    if index >= pack.num_samples() {
        return Err(GeometryError::SampleOutOfRange {
            index,
            num_samples: pack.num_samples(),
        });
    }
    Ok(())
}

pub fn trajectory_descriptor(
    pack: &FeaturePack,
    pair: (usize, usize),
    center_layer: usize,
    radius: usize,
    space: SpaceKind,
) -> Result<TrajectoryDescriptor, GeometryError> {
    let window = transition_window(pack.num_layers(), center_layer, radius)?;
    let (anchor, partner) = pair;
    check_sample(pack, anchor)?;
    check_sample(pack, partner)?;
    let mut values = Vec::with_capacity(2 * window.len());
    for t in window {
        let step = space.step(pack.row(t, anchor), pack.row(t, partner), pack.row(t + 1, anchor))?;
        values.extend_from_slice(&step);
    }
    Ok(TrajectoryDescriptor {
        values,
        center_layer,
        radius,
    })
}

/// Descriptor matrix, one row per pair, `2 * T` columns.
pub fn descriptor_batch(
    pack: &FeaturePack,
    pairs: &[(usize, usize)],
    center_layer: usize,
    radius: usize,
    space: SpaceKind,
) -> Result<Array2<f64>, GeometryError> {
    let window = transition_window(pack.num_layers(), center_layer, radius)?;
    let width = 2 * window.len();
    let mut out = Array2::zeros((pairs.len(), width));
    for (mut row, &(anchor, partner)) in out.rows_mut().into_iter().zip(pairs) {
        check_sample(pack, anchor)?;
        check_sample(pack, partner)?;
        for (j, t) in window.clone().enumerate() {
            let step = space.step(pack.row(t, anchor), pack.row(t, partner), pack.row(t + 1, anchor))?;
            row[2 * j] = step[0];
            row[2 * j + 1] = step[1];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_pack::tests::toy_pack;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, PI, SQRT_2};

    #[test]
    fn collinear_triad() {
        let t = triad(&[0.0, 0.0], &[1.0, 0.0], &[2.0, 0.0]).unwrap();
        assert_eq!(t.sep, vec![1.0, 0.0]);
        assert_eq!(t.detour, vec![1.0, 0.0]);
        assert_eq!(t.traj, vec![2.0, 0.0]);
        let s = euclid_descriptor(&t);
        assert_eq!(s.theta, 0.0);
        assert_eq!(s.d, 0.0);
    }

    #[test]
    fn identical_partner_gives_zero_separation() {
        let t = triad(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], &[0.0, 5.0, 1.0]).unwrap();
        assert!(t.sep.iter().all(|&v| v == 0.0));
        assert_eq!(t.detour, t.traj);
        let s = euclid_descriptor(&t);
        assert!((s.theta - FRAC_PI_2).abs() < 1e-15);
        assert_eq!(s.d, 0.0);
    }

    #[test]
    fn right_angle_descriptor() {
        // sep (1,0), detour (0,1), traj (1,1)
        let t = triad(&[0.0, 0.0], &[1.0, 0.0], &[1.0, 1.0]).unwrap();
        let s = euclid_descriptor(&t);
        assert!((s.theta - FRAC_PI_2).abs() < 1e-15);
        assert!((s.d - (SQRT_2 - 1.0)).abs() < 1e-12);
        assert!((s.d - 0.414214).abs() < 1e-6);
    }

    #[test]
    fn triad_rejects_mismatched_dims() {
        assert_eq!(
            triad(&[0.0], &[0.0, 1.0], &[0.0]).unwrap_err(),
            GeometryError::DimensionMismatch(1, 2)
        );
    }

    #[test]
    fn fused_step_matches_triad_path() {
        let a = [0.3, -1.2, 2.0, 0.7];
        let b = [1.1, 0.4, -0.5, 0.2];
        let c = [-0.9, 0.8, 1.5, 2.2];
        let s1 = euclid_descriptor(&triad(&a, &b, &c).unwrap());
        let s2 = euclid_step(&a, &b, &c);
        assert!((s1.theta - s2.theta).abs() < 1e-14);
        assert!((s1.d - s2.d).abs() < 1e-14);
    }

    #[test]
    fn geodesic_great_circle_case() {
        let s = geodesic_descriptor(&[1.0, 0.0], &[0.0, 1.0], &[-1.0, 0.0]).unwrap();
        assert!(s.d.abs() < 1e-12);
        assert!((s.theta - PI).abs() < 1e-6);
    }

    #[test]
    fn geodesic_identical_points() {
        let p = [0.2, -0.4, 0.9];
        let s = geodesic_descriptor(&p, &p, &p).unwrap();
        assert!((s.theta - FRAC_PI_2).abs() < 1e-15);
        assert_eq!(s.d, 0.0);
    }

    #[test]
    fn geodesic_rejects_zero_vector() {
        assert_eq!(
            geodesic_descriptor(&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]).unwrap_err(),
            GeometryError::ZeroVector
        );
    }

    #[test]
    fn cartesian_projection() {
        assert_eq!(cartesian_project(StepDescriptor { theta: 1.3, d: 0.0 }), (0.0, 0.0));
        let (x, y) = cartesian_project(StepDescriptor { theta: FRAC_PI_2, d: 1.0 });
        assert!(x.abs() < 1e-15 && (y - 1.0).abs() < 1e-15);
        let (x, y) = cartesian_project(StepDescriptor { theta: FRAC_PI_3, d: 0.5 });
        assert!((x - 0.25).abs() < 1e-12);
        assert!((y - 0.433013).abs() < 1e-6);
    }

    #[test]
    fn window_lengths() {
        assert_eq!(transition_window(13, 6, 6).unwrap().len(), 12);
        assert_eq!(transition_window(4, 0, 6).unwrap(), 0..3);
        assert_eq!(transition_window(4, 3, 1).unwrap(), 2..3);
        assert_eq!(
            transition_window(4, 0, 0).unwrap_err(),
            GeometryError::EmptyWindow { center: 0, radius: 0 }
        );
        assert_eq!(transition_window(1, 0, 3).unwrap_err(), GeometryError::TooFewLayers(1));
    }

    #[test]
    fn trajectory_descriptor_dims() {
        let pack = toy_pack(&[4; 13], &[3, 3], 2, 11);
        let t = trajectory_descriptor(&pack, (0, 1), 6, 6, SpaceKind::Euclidean).unwrap();
        assert_eq!(t.values.len(), 24);
        let small = toy_pack(&[4; 4], &[3], 2, 12);
        let t = trajectory_descriptor(&small, (0, 2), 0, 6, SpaceKind::Geodesic).unwrap();
        assert_eq!(t.values.len(), 6);
        assert!(trajectory_descriptor(&small, (0, 2), 0, 0, SpaceKind::Euclidean).is_err());

        // batch rows equal single descriptors, bit for bit
        let pairs = [(0, 1), (2, 4), (5, 3)];
        let batch = descriptor_batch(&pack, &pairs, 2, 3, SpaceKind::PseudoCartesian).unwrap();
        for (row, &p) in batch.rows().into_iter().zip(&pairs) {
            let single = trajectory_descriptor(&pack, p, 2, 3, SpaceKind::PseudoCartesian).unwrap();
            assert_eq!(row.to_vec(), single.values);
        }
    }

    fn vec_strategy(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, dim)
    }

    proptest! {
        #[test]
        fn euclid_scale_invariance(a in vec_strategy(6), b in vec_strategy(6), c in vec_strategy(6), k in 0.01f64..100.0) {
            let s1 = euclid_step(&a, &b, &c);
            let scale = |v: &[f64]| v.iter().map(|x| x * k).collect::<Vec<_>>();
            let s2 = euclid_step(&scale(&a), &scale(&b), &scale(&c));
            prop_assert!((s1.theta - s2.theta).abs() < 1e-6);
            prop_assert!((s1.d - s2.d).abs() < 1e-6 * (1.0 + s1.d.abs()));
        }

        #[test]
        fn descriptor_ranges(a in vec_strategy(5), b in vec_strategy(5), c in vec_strategy(5)) {
            let s = euclid_step(&a, &b, &c);
            prop_assert!((0.0..=PI).contains(&s.theta));
            prop_assert!(s.d >= -1e-9);
        }

        #[test]
        fn geodesic_rescaling(a in vec_strategy(4), b in vec_strategy(4), c in vec_strategy(4),
                              ka in 0.1f64..10.0, kb in 0.1f64..10.0, kc in 0.1f64..10.0) {
            prop_assume!(a.iter().any(|&x| x.abs() > 1e-3));
            prop_assume!(b.iter().any(|&x| x.abs() > 1e-3));
            prop_assume!(c.iter().any(|&x| x.abs() > 1e-3));
            let s1 = geodesic_descriptor(&a, &b, &c).unwrap();
            let sc = |v: &[f64], k: f64| v.iter().map(|x| x * k).collect::<Vec<_>>();
            let s2 = geodesic_descriptor(&sc(&a, ka), &sc(&b, kb), &sc(&c, kc)).unwrap();
            prop_assert!((s1.d - s2.d).abs() < 1e-9);
            prop_assert!(s2.d >= -1e-9);
        }
    }
}
