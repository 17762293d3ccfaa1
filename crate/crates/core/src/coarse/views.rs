//! Progressive novel-view sampling: the azimuth window opens from a narrow
//! band around the reference view to the full circle.

use std::f64::consts::TAU;

use rand::Rng;

use crate::error::{Error, Result};
use crate::field::CameraPose;

#[derive(Debug, Clone, PartialEq)]
pub struct ViewSchedule {
    pub total_steps: usize,
    /// Width of the azimuth window at step 0, radians.
    pub range_start: f64,
    /// Fraction of training after which the window spans the full circle.
    pub ramp_fraction: f64,
    pub elevation_min: f64,
    pub elevation_max: f64,
    pub reference: CameraPose,
}

impl ViewSchedule {
    pub fn new(reference: CameraPose, total_steps: usize) -> Self {
        Self {
            total_steps,
            range_start: 30f64.to_radians(),
            ramp_fraction: 0.5,
            elevation_min: reference.elevation - 15f64.to_radians(),
            elevation_max: reference.elevation + 15f64.to_radians(),
            reference,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.reference.validate()?;
        if self.total_steps == 0 {
            return Err(Error::InvalidInput("view schedule needs at least one step".into()));
        }
        if !(0.0..=TAU).contains(&self.range_start) {
            return Err(Error::InvalidInput(format!(
                "initial azimuth range must lie in [0, 2pi], got {}",
                self.range_start
            )));
        }
        if !(self.ramp_fraction > 0.0 && self.ramp_fraction <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "ramp fraction must lie in (0, 1], got {}",
                self.ramp_fraction
            )));
        }
        if self.elevation_min > self.elevation_max {
            return Err(Error::InvalidInput("elevation range is inverted".into()));
        }
        Ok(())
    }

    /// Total azimuth window width allowed at `step`.
    pub fn azimuth_range(&self, step: usize) -> f64 {
        if self.total_steps <= 1 {
            return TAU;
        }
        let progress = step.min(self.total_steps - 1) as f64 / (self.total_steps - 1) as f64;
        let ramp = (progress / self.ramp_fraction).min(1.0);
        self.range_start + (TAU - self.range_start) * ramp
    }

    pub fn sample_camera<R: Rng + ?Sized>(&self, step: usize, rng: &mut R) -> Result<CameraPose> {
        if step >= self.total_steps {
            return Err(Error::InvalidInput(format!(
                "step {step} outside schedule of {} steps",
                self.total_steps
            )));
        }
        let range = self.azimuth_range(step);
        let offset = (rng.random::<f64>() - 0.5) * range;
        let azimuth = (self.reference.azimuth + offset).rem_euclid(TAU);
        let elevation = if self.elevation_max > self.elevation_min {
            rng.random_range(self.elevation_min..=self.elevation_max)
        } else {
            self.elevation_min
        };
        Ok(CameraPose {
            azimuth,
            elevation,
            ..self.reference
        })
    }
}

/// Signed angular difference `a - b` wrapped into (-pi, pi].
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    if d > std::f64::consts::PI {
        d - TAU
    } else {
        d
    }
}
