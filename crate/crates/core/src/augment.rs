//! Stochastic input transformations for 2-D points and 32×32 rasters.
//!
//! Every transform draws the same number of random values regardless of
//! which branch it takes, so a stream's position after augmenting a batch
//! depends only on the batch size and the policy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

pub const RASTER_SIDE: usize = 32;
pub const RASTER_LEN: usize = RASTER_SIDE * RASTER_SIDE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Modality {
    Point2d,
    Raster32,
}

impl Modality {
    pub fn width(self) -> usize {
        match self {
            Modality::Point2d => 2,
            Modality::Raster32 => RASTER_LEN,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strength {
    None,
    Weak,
    Strong,
}

/// Transform ranges. Defaults follow the stock weak/strong recipes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugParams {
    pub point_weak_sigma: f64,
    pub point_strong_sigma: f64,
    /// Maximum absolute rotation in degrees.
    pub rotation_deg: f64,
    /// Probability of zeroing one coordinate in the strong point policy.
    pub point_cutout_prob: f64,
    pub flip_prob: f64,
    /// Maximum absolute translation in pixels.
    pub translate: usize,
    /// Side of the square zeroed by cutout.
    pub cutout: usize,
    pub contrast_min: f64,
    pub contrast_max: f64,
}

impl Default for AugParams {
    fn default() -> Self {
        Self {
            point_weak_sigma: 0.05,
            point_strong_sigma: 0.1,
            rotation_deg: 15.0,
            point_cutout_prob: 0.2,
            flip_prob: 0.5,
            translate: 2,
            cutout: 8,
            contrast_min: 0.5,
            contrast_max: 1.5,
        }
    }
}

impl AugParams {
    pub fn validate(&self) -> Result<()> {
        let reals = [
            ("point_weak_sigma", self.point_weak_sigma),
            ("point_strong_sigma", self.point_strong_sigma),
            ("rotation_deg", self.rotation_deg),
            ("point_cutout_prob", self.point_cutout_prob),
            ("flip_prob", self.flip_prob),
            ("contrast_min", self.contrast_min),
            ("contrast_max", self.contrast_max),
        ];
        for (name, v) in reals {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(
                    format!("augment.{name}"),
                    format!("must be finite and non-negative, got {v}"),
                ));
            }
        }
        for (name, p) in [
            ("point_cutout_prob", self.point_cutout_prob),
            ("flip_prob", self.flip_prob),
        ] {
            if p > 1.0 {
                return Err(Error::config(format!("augment.{name}"), "probability above 1"));
            }
        }
        if self.contrast_min > self.contrast_max {
            return Err(Error::config("augment.contrast_min", "exceeds contrast_max"));
        }
        if self.cutout > RASTER_SIDE || self.translate >= RASTER_SIDE {
            return Err(Error::config("augment", "cutout or translation larger than the raster"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugPolicy {
    pub modality: Modality,
    pub strength: Strength,
    pub params: AugParams,
    /// Rotation center for the strong point policy.
    pub center: [f64; 2],
}

impl AugPolicy {
    pub fn new(modality: Modality, strength: Strength) -> Self {
        Self {
            modality,
            strength,
            params: AugParams::default(),
            center: [0.0, 0.0],
        }
    }

    pub fn with_params(mut self, params: AugParams) -> Self {
        self.params = params;
        self
    }

    pub fn with_center(mut self, center: [f64; 2]) -> Self {
        self.center = center;
        self
    }
}

/// Applies `policy` to one sample.
pub fn augment(x: &[f64], policy: &AugPolicy, rng: &mut RngStream) -> Result<Vec<f64>> {
    if x.len() != policy.modality.width() {
        return Err(Error::invalid(format!(
            "{:?} policy applied to a sample of {} values",
            policy.modality,
            x.len()
        )));
    }
    let p = &policy.params;
    Ok(match (policy.modality, policy.strength) {
        (_, Strength::None) => x.to_vec(),
        (Modality::Point2d, Strength::Weak) => jitter(x, p.point_weak_sigma, rng),
        (Modality::Point2d, Strength::Strong) => {
            let mut out = jitter(x, p.point_strong_sigma, rng);
            let max = p.rotation_deg.to_radians();
            let angle = rng.uniform_range(-max, max);
            let (s, c) = angle.sin_cos();
            let [cx, cy] = policy.center;
            let (dx, dy) = (out[0] - cx, out[1] - cy);
            out[0] = cx + c * dx - s * dy;
            out[1] = cy + s * dx + c * dy;
            let drop = rng.bernoulli(p.point_cutout_prob);
            let which = rng.below(2);
            if drop {
                out[which] = 0.0;
            }
            out
        }
        (Modality::Raster32, Strength::Weak) => flip_translate(x, p, rng),
        (Modality::Raster32, Strength::Strong) => {
            let mut img = flip_translate(x, p, rng);
            let factor = rng.uniform_range(p.contrast_min, p.contrast_max);
            let mean = img.iter().sum::<f64>() / img.len() as f64;
            for v in &mut img {
                *v = ((*v - mean) * factor + mean).clamp(0.0, 1.0);
            }
            // Cutout goes last so the erased square stays exactly zero.
            let span = RASTER_SIDE - p.cutout + 1;
            let (top, left) = (rng.below(span), rng.below(span));
            for r in top..top + p.cutout {
                img[r * RASTER_SIDE + left..r * RASTER_SIDE + left + p.cutout].fill(0.0);
            }
            img
        }
    })
}

fn jitter(x: &[f64], sigma: f64, rng: &mut RngStream) -> Vec<f64> {
    x.iter().map(|&v| v + sigma * rng.normal()).collect()
}

fn flip_translate(x: &[f64], p: &AugParams, rng: &mut RngStream) -> Vec<f64> {
    let flip = rng.bernoulli(p.flip_prob);
    let t = p.translate as i64;
    let dx = rng.below(2 * p.translate + 1) as i64 - t;
    let dy = rng.below(2 * p.translate + 1) as i64 - t;
    let side = RASTER_SIDE as i64;
    let mut out = vec![0.0; RASTER_LEN];
    for r in 0..side {
        for c in 0..side {
            let (sr, sc) = (r - dy, c - dx);
            if sr < 0 || sr >= side || sc < 0 || sc >= side {
                continue;
            }
            let sc = if flip { side - 1 - sc } else { sc };
            out[(r * side + c) as usize] = x[(sr * side + sc) as usize];
        }
    }
    out
}

/// Two independent views of `x`; the first from `first`, the second from
/// `second`. The views consume consecutive, non-overlapping stretches of
/// `rng`.
pub fn sample_pair(
    x: &[f64],
    first: &AugPolicy,
    second: &AugPolicy,
    rng: &mut RngStream,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let a = augment(x, first, rng)?;
    let b = augment(x, second, rng)?;
    Ok((a, b))
}

/// Row-wise [`augment`] over a `[batch, width]` tensor.
pub fn augment_batch(x: &Tensor, policy: &AugPolicy, rng: &mut RngStream) -> Result<Tensor> {
    let mut data = Vec::with_capacity(x.len());
    for r in 0..x.rows() {
        data.extend(augment(x.row(r), policy, rng)?);
    }
    Tensor::new(x.shape().to_vec(), data)
}

/// Row-wise [`sample_pair`] over a `[batch, width]` tensor.
pub fn sample_pair_batch(
    x: &Tensor,
    first: &AugPolicy,
    second: &AugPolicy,
    rng: &mut RngStream,
) -> Result<(Tensor, Tensor)> {
    let mut a = Vec::with_capacity(x.len());
    let mut b = Vec::with_capacity(x.len());
    for r in 0..x.rows() {
        let (va, vb) = sample_pair(x.row(r), first, second, rng)?;
        a.extend(va);
        b.extend(vb);
    }
    Ok((Tensor::new(x.shape().to_vec(), a)?, Tensor::new(x.shape().to_vec(), b)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raster(seed: u64) -> Vec<f64> {
        let mut rng = RngStream::new(seed, "img");
        (0..RASTER_LEN)
            .map(|_| if rng.bernoulli(0.3) { 1.0 } else { 0.0 })
            .collect()
    }

    #[test]
    fn none_is_identity() {
        let mut rng = RngStream::new(0, "a");
        for m in [Modality::Point2d, Modality::Raster32] {
            let x: Vec<f64> = (0..m.width()).map(|i| i as f64 / 2000.0).collect();
            let p = AugPolicy::new(m, Strength::None);
            assert_eq!(augment(&x, &p, &mut rng).unwrap(), x);
        }
    }

    #[test]
    fn zero_sigma_weak_point_is_identity() {
        let mut rng = RngStream::new(0, "a");
        let params = AugParams {
            point_weak_sigma: 0.0,
            ..Default::default()
        };
        let p = AugPolicy::new(Modality::Point2d, Strength::Weak).with_params(params);
        assert_eq!(augment(&[0.3, -1.7], &p, &mut rng).unwrap(), vec![0.3, -1.7]);
    }

    #[test]
    fn modality_mismatch_rejected() {
        let mut rng = RngStream::new(0, "a");
        let p = AugPolicy::new(Modality::Raster32, Strength::Weak);
        assert!(augment(&[0.0, 1.0], &p, &mut rng).is_err());
    }

    #[test]
    fn strong_raster_has_a_zero_cutout_block() {
        // An all-ones image: the only zeros come from padding or cutout, and
        // cutout always leaves a full 8x8 zero block.
        let img = vec![1.0; RASTER_LEN];
        let p = AugPolicy::new(Modality::Raster32, Strength::Strong);
        for seed in 0..50 {
            let mut rng = RngStream::new(seed, "cut");
            let out = augment(&img, &p, &mut rng).unwrap();
            let found = (0..=24).any(|top| {
                (0..=24).any(|left| (top..top + 8).all(|r| (left..left + 8).all(|c| out[r * 32 + c] == 0.0)))
            });
            assert!(found, "seed {seed}");
        }
    }

    #[test]
    fn pair_views_are_ordered_and_independent() {
        let x = [0.5, 0.25];
        let weak = AugPolicy::new(Modality::Point2d, Strength::Weak);
        let none = AugPolicy::new(Modality::Point2d, Strength::None);
        let mut rng = RngStream::new(1, "pair");
        let (a, b) = sample_pair(&x, &weak, &weak, &mut rng).unwrap();
        assert_ne!(a, b);
        let mut rng = RngStream::new(1, "pair");
        let (a, b) = sample_pair(&x, &none, &weak, &mut rng).unwrap();
        assert_eq!(a, x.to_vec());
        assert_ne!(b, x.to_vec());
        let mut rng = RngStream::new(1, "pair");
        assert_eq!(
            sample_pair(&x, &none, &none, &mut rng).unwrap(),
            (x.to_vec(), x.to_vec())
        );
    }

    #[test]
    fn strong_point_rotates_about_center() {
        let params = AugParams {
            point_strong_sigma: 0.0,
            point_cutout_prob: 0.0,
            ..Default::default()
        };
        let p = AugPolicy::new(Modality::Point2d, Strength::Strong)
            .with_params(params)
            .with_center([1.0, 1.0]);
        let mut rng = RngStream::new(4, "rot");
        let out = augment(&[2.0, 1.0], &p, &mut rng).unwrap();
        let radius = ((out[0] - 1.0).powi(2) + (out[1] - 1.0).powi(2)).sqrt();
        assert!((radius - 1.0).abs() < 1e-12);
        let angle = (out[1] - 1.0).atan2(out[0] - 1.0).to_degrees();
        assert!(angle.abs() <= 15.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn raster_policies_preserve_shape_and_range(seed in 0u64..10_000, strong in any::<bool>()) {
            let strength = if strong { Strength::Strong } else { Strength::Weak };
            let p = AugPolicy::new(Modality::Raster32, strength);
            let mut rng = RngStream::new(seed, "prop");
            let out = augment(&raster(seed), &p, &mut rng).unwrap();
            prop_assert_eq!(out.len(), RASTER_LEN);
            prop_assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn augmentation_replays_bitwise(seed in 0u64..10_000) {
            let p = AugPolicy::new(Modality::Raster32, Strength::Strong);
            let img = raster(seed);
            let a = augment(&img, &p, &mut RngStream::new(seed, "replay")).unwrap();
            let b = augment(&img, &p, &mut RngStream::new(seed, "replay")).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
