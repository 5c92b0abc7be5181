//! Noise-prediction interface and analytic stand-ins for the SR network.
//!
//! A predictor sees the latent `z_t`, the timestep and the low-resolution
//! conditioning image; in the real model the two are concatenated along the
//! channel axis before entering the UNet.

use crate::error::{Error, Result};
use crate::scheduler::AlphaSchedule;
use crate::tensor::{ImageTensor, LatentTensor, Shape, Tensor3};

pub trait NoisePredictor: Send + Sync {
    fn latent_shape(&self) -> Shape;

    fn cond_shape(&self) -> Shape;

    /// Whether concurrent `predict` calls may run in parallel.
    fn share_safe(&self) -> bool {
        true
    }

    fn predict(&self, z_t: &LatentTensor, t: usize, cond: &ImageTensor) -> Result<LatentTensor>;
}

fn check_shapes(p: &dyn NoisePredictor, z_t: &LatentTensor, cond: &ImageTensor) -> Result<()> {
    z_t.tensor().expect_shape(p.latent_shape())?;
    cond.tensor().expect_shape(p.cond_shape())
}

/// Predicts no noise at all.
#[derive(Debug, Clone)]
pub struct ZeroToyPredictor {
    latent: Shape,
    cond: Shape,
}

impl ZeroToyPredictor {
    pub fn new(latent: Shape, cond: Shape) -> Self {
        Self { latent, cond }
    }
}

impl NoisePredictor for ZeroToyPredictor {
    fn latent_shape(&self) -> Shape {
        self.latent
    }

    fn cond_shape(&self) -> Shape {
        self.cond
    }

    fn predict(&self, z_t: &LatentTensor, _t: usize, cond: &ImageTensor) -> Result<LatentTensor> {
        check_shapes(self, z_t, cond)?;
        Ok(LatentTensor::zeros(self.latent))
    }
}

/// `eps = scale * z_t + cond_gain * shrink(cond)`.
///
/// `shrink` averages the pixel channels and nearest-resizes the grey plane to
/// the latent grid, broadcasting it over every latent channel.
#[derive(Debug, Clone)]
pub struct LinearToyPredictor {
    scale: f64,
    cond_gain: f64,
    latent: Shape,
    cond: Shape,
}

impl LinearToyPredictor {
    pub const MAX_SCALE: f64 = 0.5;

    pub fn new(scale: f64, cond_gain: f64, latent: Shape, cond: Shape) -> Result<Self> {
        if !(scale.abs() <= Self::MAX_SCALE) || !cond_gain.is_finite() {
            return Err(Error::invalid(format!(
                "linear toy predictor needs |scale| <= {} and finite gain, got ({scale}, {cond_gain})",
                Self::MAX_SCALE
            )));
        }
        Ok(Self {
            scale,
            cond_gain,
            latent,
            cond,
        })
    }

    /// Picks the conditioning gain so that a full sampling pass over `sched`
    /// lands the conditioning grey level at `flat_response` pixel units per
    /// latent unit, i.e. the decoded image reproduces the conditioning's
    /// brightness.
    pub fn matched(
        scale: f64,
        sched: &AlphaSchedule,
        flat_response: f64,
        latent: Shape,
        cond: Shape,
    ) -> Result<Self> {
        let (_, offset) = sched.affine_response(scale);
        let denom = offset * flat_response;
        if denom == 0.0 || !denom.is_finite() {
            return Err(Error::invalid(
                "schedule has no conditioning response (single-step grid?)",
            ));
        }
        Self::new(scale, 1.0 / denom, latent, cond)
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn cond_gain(&self) -> f64 {
        self.cond_gain
    }
}

pub(crate) fn shrink(cond: &ImageTensor, latent: Shape) -> Tensor3 {
    let grey = cond.grey();
    let gs = grey.shape();
    let src = |dst: usize, n_dst: usize, n_src: usize| {
        (((dst as f64 + 0.5) * n_src as f64 / n_dst as f64) as usize).min(n_src - 1)
    };
    Tensor3::from_fn(latent, |_, y, x| {
        grey.get(
            0,
            src(y, latent.height, gs.height),
            src(x, latent.width, gs.width),
        )
    })
}

impl NoisePredictor for LinearToyPredictor {
    fn latent_shape(&self) -> Shape {
        self.latent
    }

    fn cond_shape(&self) -> Shape {
        self.cond
    }

    fn predict(&self, z_t: &LatentTensor, _t: usize, cond: &ImageTensor) -> Result<LatentTensor> {
        check_shapes(self, z_t, cond)?;
        if self.cond_gain == 0.0 {
            return Ok(z_t.map(|v| self.scale * v));
        }
        let c = shrink(cond, self.latent);
        LatentTensor::new(
            z_t.tensor()
                .zip_map(&c, |z, g| self.scale * z + self.cond_gain * g)?,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn latent() -> LatentTensor {
        LatentTensor::from_fn(Shape::new(4, 8, 8), |c, y, x| {
            (c as f64 - 1.5) * 0.3 + (y as f64) * 0.1 - (x as f64) * 0.07
        })
    }

    #[test]
    fn zero_predictor_outputs_zeros() {
        let p = ZeroToyPredictor::new(Shape::new(4, 8, 8), Shape::new(3, 8, 8));
        let cond = ImageTensor::filled(Shape::new(3, 8, 8), 0.3).unwrap();
        let out = p.predict(&latent(), 10, &cond).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unconditional_linear() {
        let p =
            LinearToyPredictor::new(0.1, 0.0, Shape::new(4, 8, 8), Shape::new(3, 8, 8)).unwrap();
        let cond = ImageTensor::filled(Shape::new(3, 8, 8), 0.9).unwrap();
        let z = latent();
        let out = p.predict(&z, 999, &cond).unwrap();
        for (o, v) in out.data().iter().zip(z.data()) {
            assert_eq!(*o, 0.1 * v);
        }
    }

    #[test]
    fn conditioned_linear_on_grey() {
        let p =
            LinearToyPredictor::new(0.1, 0.05, Shape::new(4, 8, 8), Shape::new(3, 16, 16)).unwrap();
        let cond = ImageTensor::filled(Shape::new(3, 16, 16), 0.5).unwrap();
        let z = latent();
        let out = p.predict(&z, 0, &cond).unwrap();
        for (o, v) in out.data().iter().zip(z.data()) {
            assert!((o - (0.1 * v + 0.025)).abs() < 1e-15);
        }
    }

    #[test]
    fn conditioning_changes_prediction() {
        let p =
            LinearToyPredictor::new(0.1, 0.05, Shape::new(4, 8, 8), Shape::new(3, 8, 8)).unwrap();
        let a = ImageTensor::filled(Shape::new(3, 8, 8), 0.2).unwrap();
        let b = ImageTensor::new(Tensor3::from_fn(Shape::new(3, 8, 8), |c, y, _| {
            0.2 + 0.05 * (c + y) as f64
        }))
        .unwrap();
        let z = latent();
        assert_ne!(p.predict(&z, 5, &a).unwrap(), p.predict(&z, 5, &b).unwrap());
    }

    #[test]
    fn shape_mismatch_is_invalid() {
        let p = ZeroToyPredictor::new(Shape::new(4, 8, 8), Shape::new(3, 8, 8));
        let cond = ImageTensor::filled(Shape::new(3, 16, 16), 0.3).unwrap();
        assert!(matches!(
            p.predict(&latent(), 0, &cond),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn scale_bound_enforced() {
        assert!(
            LinearToyPredictor::new(0.6, 0.0, Shape::new(1, 8, 8), Shape::new(1, 8, 8)).is_err()
        );
        assert!(
            LinearToyPredictor::new(f64::NAN, 0.0, Shape::new(1, 8, 8), Shape::new(1, 8, 8))
                .is_err()
        );
    }

    #[test]
    fn predictions_are_deterministic_and_finite() {
        let p =
            LinearToyPredictor::new(-0.4, 2.0, Shape::new(4, 8, 8), Shape::new(3, 8, 8)).unwrap();
        let cond = ImageTensor::filled(Shape::new(3, 8, 8), 0.7).unwrap();
        let a = p.predict(&latent(), 3, &cond).unwrap();
        assert_eq!(a, p.predict(&latent(), 3, &cond).unwrap());
        assert!(a.tensor().is_finite());
    }
}
