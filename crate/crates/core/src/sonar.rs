//! Active sonar echo model.
//!
//! Echo margin follows the active sonar equation
//! `EM = SL − 2·TL + TS − (NL − DI) − DT`, with transmission loss from
//! spherical spreading plus linear absorption. A contact shows up in an
//! observation as its echo margin clamped at zero.

use serde::{Deserialize, Serialize};

use crate::env::WorldState;
use crate::error::{Error, Result};
use crate::Vec3;

/// Sonar and target acoustic constants, all in dB except where noted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SonarParams {
    pub source_level: f64,
    pub noise_level: f64,
    pub directivity_index: f64,
    pub detection_threshold: f64,
    pub target_strength_target: f64,
    pub target_strength_auv: f64,
    /// dB/m.
    pub absorption: f64,
    /// m.
    pub reference_range: f64,
}

impl Default for SonarParams {
    fn default() -> Self {
        Self {
            source_level: 200.0,
            noise_level: 70.0,
            directivity_index: 10.0,
            detection_threshold: 10.0,
            target_strength_target: 15.0,
            target_strength_auv: 10.0,
            absorption: 0.05,
            reference_range: 1.0,
        }
    }
}

impl SonarParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.absorption >= 0.0) {
            return Err(Error::Config(format!(
                "sonar absorption must be >= 0, got {}",
                self.absorption
            )));
        }
        if !(self.reference_range > 0.0) {
            return Err(Error::Config(format!(
                "sonar reference_range must be > 0, got {}",
                self.reference_range
            )));
        }
        Ok(())
    }

    /// One-way transmission loss in dB at range `r` metres.
    pub fn transmission_loss(&self, r: f64) -> Result<f64> {
        if !(r > 0.0) {
            return Err(Error::Domain(format!("range must be > 0, got {r}")));
        }
        Ok(20.0 * (r / self.reference_range).log10() + self.absorption * r)
    }

    /// Echo margin for a contact of target strength `ts` at range `r`.
    pub fn echo_margin(&self, r: f64, ts: f64) -> Result<f64> {
        let tl = self.transmission_loss(r)?;
        Ok(self.source_level - 2.0 * tl + ts
            - (self.noise_level - self.directivity_index)
            - self.detection_threshold)
    }

    /// Clamped echo intensity as seen in an observation.
    ///
    /// Coincident contacts (zero range) are treated as sitting at the
    /// reference range.
    pub fn echo_intensity(&self, r: f64, ts: f64) -> f64 {
        let r = if r > 0.0 { r } else { self.reference_range };
        self.echo_margin(r, ts).map(|em| em.max(0.0)).unwrap_or(0.0)
    }
}

/// What one vehicle perceives: its own kinematics and the echo of every
/// other contact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub own_position: Vec3,
    pub own_velocity: Vec3,
    /// One entry per target, in target order.
    pub target_echoes: Vec<f64>,
    /// One entry per other vehicle, in fleet order with `self` skipped.
    pub peer_echoes: Vec<f64>,
}

/// Synthesizes the observation of vehicle `auv_index`.
pub fn sense(world: &WorldState, auv_index: usize, params: &SonarParams) -> Observation {
    let me = &world.auvs[auv_index];
    let target_echoes = world
        .targets
        .iter()
        .map(|t| {
            let r = (t.position - me.position).norm();
            params.echo_intensity(r, params.target_strength_target)
        })
        .collect();
    let peer_echoes = world
        .auvs
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != auv_index)
        .map(|(_, peer)| {
            let r = (peer.position - me.position).norm();
            params.echo_intensity(r, params.target_strength_auv)
        })
        .collect();
    Observation {
        own_position: me.position,
        own_velocity: me.velocity,
        target_echoes,
        peer_echoes,
    }
}
