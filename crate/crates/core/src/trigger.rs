//! Poisoning triggers: the weighted local transformation (WLT) and the two
//! classic baselines (ball insertion, z-rotation).
//!
//! `wlt_apply` is a pure function of `(cloud, params)`: the FPS start index
//! comes from `params.seed`, so a poisoned sample can be regenerated exactly
//! from its recorded parameters. Per-sample anchor variation is the caller's
//! job (the dataset layer derives one seed per sample).

use crate::error::{Error, Result};
use crate::exec::{map_indexed, ExecMode};
use crate::geometry::{composed_rotation, farthest_point_sampling, rotation_matrix_axis, Axis, Point, PointCloud};
use crate::rng::{self, Rng};
use nalgebra::Matrix3;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WltParams {
    /// anchor count W
    pub w: usize,
    /// rotation angle α, radians, same for all three axes
    pub alpha: f64,
    /// isotropic scale s
    pub s: f64,
    /// Gaussian kernel bandwidth h
    pub h: f64,
    /// seeds the FPS start draw
    pub seed: u64,
}

impl Default for WltParams {
    fn default() -> Self {
        WltParams { w: 16, alpha: 5f64.to_radians(), s: 5.0, h: 0.5, seed: 0 }
    }
}

impl WltParams {
    pub fn validate(&self) -> Result<()> {
        if self.w < 1 {
            return Err(Error::invalid("W must be at least 1"));
        }
        if !(self.h > 0.0) || !self.h.is_finite() {
            return Err(Error::invalid("bandwidth h must be positive and finite"));
        }
        if !(self.s > 0.0) || !self.s.is_finite() {
            return Err(Error::invalid("scale s must be positive and finite"));
        }
        if !self.alpha.is_finite() {
            return Err(Error::invalid("alpha must be finite"));
        }
        Ok(())
    }

    /// Same trigger, private per-sample anchor stream.
    pub fn for_sample(&self, sample_tag: u64) -> Self {
        WltParams { seed: rng::derive_seed(self.seed, &[sample_tag]), ..*self }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallTriggerParams {
    pub center: [f64; 3],
    pub radius: f64,
    /// trigger points as a fraction of K
    pub ratio: f64,
}

impl Default for BallTriggerParams {
    fn default() -> Self {
        BallTriggerParams { center: [0.05, 0.05, 0.05], radius: 0.05, ratio: 0.01 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationTriggerParams {
    /// radians about +z
    pub angle_z: f64,
}

impl Default for RotationTriggerParams {
    fn default() -> Self {
        RotationTriggerParams { angle_z: 10f64.to_radians() }
    }
}

/// Anchor-centered rotate+scale transform: R·S·(x − a) + a.
pub fn anchor_transform(x: &Point, a: &Point, r: &Matrix3<f64>, s: &Matrix3<f64>) -> Point {
    r * (s * (x - a)) + a
}

/// Gaussian kernel weight exp(−‖x−a‖² / 2h²); 1 exactly when x = a.
pub fn gaussian_weight(x: &Point, a: &Point, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::invalid("bandwidth h must be positive"));
    }
    Ok((-(x - a).norm_squared() / (2.0 * h * h)).exp())
}

/// How per-anchor transforms are blended into the output point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WltWeighting {
    /// kernel-weighted average, weight exp(−‖x−a‖²/2h²)
    Gaussian { h: f64 },
    /// plain mean over anchors
    Uniform,
}

pub fn wlt_apply(cloud: &PointCloud, params: &WltParams) -> Result<PointCloud> {
    wlt_apply_with_mode(cloud, params, ExecMode::default_mode())
}

/// Weighted local transformation: every point is the kernel-weighted average
/// of its W anchor-centered transforms. Output order and size match input.
pub fn wlt_apply_with_mode(cloud: &PointCloud, params: &WltParams, mode: ExecMode) -> Result<PointCloud> {
    params.validate()?;
    let k = cloud.len();
    if params.w > k {
        return Err(Error::invalid(format!("W = {} exceeds cloud size {k}", params.w)));
    }
    let start = rng::from_seed(params.seed).random_range(0..k);
    wlt_with_start(cloud, params.w, start, params.alpha, params.s, WltWeighting::Gaussian { h: params.h }, mode)
}

/// Shared WLT core: anchors are FPS(w) from an explicit start index, then
/// every point is blended across anchors under `weighting`. The adaptive
/// defenses reuse this with their own drawn parameters.
pub fn wlt_with_start(
    cloud: &PointCloud,
    w: usize,
    start: usize,
    alpha: f64,
    s: f64,
    weighting: WltWeighting,
    mode: ExecMode,
) -> Result<PointCloud> {
    let k = cloud.len();
    if w < 1 || w > k {
        return Err(Error::invalid(format!("anchor count {w} out of range 1..={k}")));
    }
    if !(s > 0.0) || !s.is_finite() || !alpha.is_finite() {
        return Err(Error::invalid("alpha must be finite and s positive"));
    }
    if let WltWeighting::Gaussian { h } = weighting {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::invalid("bandwidth h must be positive and finite"));
        }
    }
    let anchor_idx = farthest_point_sampling(cloud, w, start)?;
    let anchors: Vec<Point> = anchor_idx.iter().map(|&i| cloud.points()[i]).collect();
    let r = composed_rotation(alpha)?;
    let s_mat = Matrix3::from_diagonal_element(s);
    let pts = cloud.points();
    let out = map_indexed(mode, k, |i| {
        let x = &pts[i];
        let weights: Vec<f64> = anchors
            .iter()
            .map(|a| match weighting {
                WltWeighting::Gaussian { h } => (-(x - a).norm_squared() / (2.0 * h * h)).exp(),
                WltWeighting::Uniform => 1.0,
            })
            .collect();
        let den: f64 = weights.iter().sum();
        // normalize before accumulating so a single anchor cancels exactly
        let mut out = Point::zeros();
        for (a, wgt) in anchors.iter().zip(&weights) {
            out += (wgt / den) * anchor_transform(x, a, &r, &s_mat);
        }
        out
    });
    Ok(PointCloud::from_points_unchecked(out))
}

/// Insert ⌈ratio·K⌉ points uniform in a small ball, dropping random original
/// points to keep the size at K. Trigger points sit at the end of the cloud.
pub fn ball_trigger_apply(cloud: &PointCloud, params: &BallTriggerParams, rng: &mut Rng) -> Result<PointCloud> {
    let k = cloud.len();
    if !(params.radius > 0.0) {
        return Err(Error::invalid("ball radius must be positive"));
    }
    if !(params.ratio > 0.0 && params.ratio < 1.0) {
        return Err(Error::invalid("ball ratio must lie in (0, 1)"));
    }
    let m = (params.ratio * k as f64).ceil() as usize;
    if m < 1 {
        return Err(Error::invalid("ratio·K must be at least 1"));
    }
    let center = Point::new(params.center[0], params.center[1], params.center[2]);
    let mut trigger = Vec::with_capacity(m);
    for _ in 0..m {
        let dir = Point::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let dir = if dir.norm() == 0.0 { Point::new(1.0, 0.0, 0.0) } else { dir.normalize() };
        let radius = params.radius * rng.random::<f64>().cbrt();
        trigger.push(center + radius * dir);
    }
    let mut keep = rand::seq::index::sample(rng, k, k - m).into_vec();
    keep.sort_unstable();
    let mut points: Vec<Point> = keep.into_iter().map(|i| cloud.points()[i]).collect();
    points.extend(trigger);
    Ok(PointCloud::from_points_unchecked(points))
}

/// Rotate the whole cloud about +z by `angle_z`.
pub fn rotation_trigger_apply(cloud: &PointCloud, params: &RotationTriggerParams) -> Result<PointCloud> {
    let r = rotation_matrix_axis(Axis::Z, params.angle_z)?;
    Ok(PointCloud::from_points_unchecked(
        cloud.points().iter().map(|p| r * p).collect(),
    ))
}

/// Which trigger an experiment uses, with its parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TriggerSpec {
    Wlt(WltParams),
    Ball(BallTriggerParams),
    Rotation(RotationTriggerParams),
}

impl TriggerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            TriggerSpec::Wlt(_) => "wlt",
            TriggerSpec::Ball(_) => "ball",
            TriggerSpec::Rotation(_) => "rotation",
        }
    }

    /// Apply to one sample. `plan_seed`/`sample_tag` pin the per-sample
    /// randomness (WLT anchor start, ball point placement) so poisoning and
    /// inference-time triggering reproduce the same cloud.
    pub fn apply(&self, cloud: &PointCloud, plan_seed: u64, sample_tag: u64) -> Result<PointCloud> {
        match self {
            TriggerSpec::Wlt(p) => {
                let per_sample = WltParams {
                    seed: rng::derive_seed(plan_seed, &[p.seed, sample_tag]),
                    ..*p
                };
                wlt_apply(cloud, &per_sample)
            }
            TriggerSpec::Ball(p) => {
                let mut r = rng::derive(plan_seed, &[sample_tag, 0xba11]);
                ball_trigger_apply(cloud, p, &mut r)
            }
            TriggerSpec::Rotation(p) => rotation_trigger_apply(cloud, p),
        }
    }
}
