//! Ocean current model and the hydrodynamic forces it exerts on a vehicle.
//!
//! The current is an analytic superposition of travelling sinusoidal modes on
//! top of a constant background flow:
//!
//! ```text
//! u(p, t) = background + Σ amplitude · sin(k · p − ω t + φ)
//! ```
//!
//! which gives an exact time derivative for the virtual-mass term. Forces
//! follow the usual drag / lift / added-mass laws evaluated on the velocity of
//! the water relative to the vehicle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec3;

/// One travelling wave of the current field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowMode {
    /// Velocity amplitude, m/s.
    pub amplitude: Vec3,
    /// Wave vector, rad/m.
    pub wavevector: Vec3,
    /// rad/s, never negative.
    pub angular_frequency: f64,
    /// rad.
    pub phase: f64,
}

impl FlowMode {
    fn argument(&self, p: &Vec3, t: f64) -> f64 {
        self.wavevector.dot(p) - self.angular_frequency * t + self.phase
    }
}

/// Time-varying 3D current velocity field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowField {
    #[serde(default)]
    pub modes: Vec<FlowMode>,
    #[serde(default = "Vec3::zeros")]
    pub background: Vec3,
}

impl Default for FlowField {
    fn default() -> Self {
        Self::still()
    }
}

impl FlowField {
    /// Still water.
    pub fn still() -> Self {
        Self {
            modes: Vec::new(),
            background: Vec3::zeros(),
        }
    }

    /// A gentle three-mode current used when a scenario enables current
    /// interference without defining its own field.
    pub fn default_current() -> Self {
        Self {
            background: Vec3::new(0.15, 0.05, 0.0),
            modes: vec![
                FlowMode {
                    amplitude: Vec3::new(0.10, 0.05, 0.0),
                    wavevector: Vec3::new(0.010, 0.004, 0.0),
                    angular_frequency: 0.05,
                    phase: 0.0,
                },
                FlowMode {
                    amplitude: Vec3::new(-0.04, 0.08, 0.01),
                    wavevector: Vec3::new(0.0, 0.012, 0.002),
                    angular_frequency: 0.08,
                    phase: 1.3,
                },
                FlowMode {
                    amplitude: Vec3::new(0.02, 0.0, 0.03),
                    wavevector: Vec3::new(0.006, 0.0, 0.02),
                    angular_frequency: 0.11,
                    phase: 2.1,
                },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, mode) in self.modes.iter().enumerate() {
            if !(mode.angular_frequency >= 0.0) {
                return Err(Error::Config(format!(
                    "flow mode {i}: angular_frequency must be >= 0, got {}",
                    mode.angular_frequency
                )));
            }
        }
        Ok(())
    }

    pub fn velocity_at(&self, p: &Vec3, t: f64) -> Vec3 {
        self.modes
            .iter()
            .fold(self.background, |acc, m| acc + m.amplitude * m.argument(p, t).sin())
    }

    /// Analytic ∂u/∂t of [`FlowField::velocity_at`].
    pub fn velocity_time_derivative(&self, p: &Vec3, t: f64) -> Vec3 {
        self.modes.iter().fold(Vec3::zeros(), |acc, m| {
            acc - m.amplitude * (m.angular_frequency * m.argument(p, t).cos())
        })
    }
}

/// Fluid and vehicle constants for the force laws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FluidParams {
    /// Density, kg/m³.
    pub rho: f64,
    /// Dynamic viscosity, Pa·s. Carried for completeness; no force law uses it.
    pub mu: f64,
    pub c_d: f64,
    pub c_l: f64,
    pub c_vm: f64,
    /// Frontal area, m².
    pub frontal_area: f64,
    /// Displaced volume, m³.
    pub volume: f64,
}

impl Default for FluidParams {
    fn default() -> Self {
        Self {
            rho: 1000.0,
            mu: 1e-3,
            c_d: 0.8,
            c_l: 0.3,
            c_vm: 1.0,
            frontal_area: 0.5,
            volume: 0.1,
        }
    }
}

impl FluidParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("rho", self.rho),
            ("mu", self.mu),
            ("c_d", self.c_d),
            ("c_l", self.c_l),
            ("c_vm", self.c_vm),
            ("frontal_area", self.frontal_area),
            ("volume", self.volume),
        ];
        for (name, value) in fields {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::Config(format!(
                    "fluid parameter {name} must be strictly positive, got {value}"
                )));
            }
        }
        Ok(())
    }

    fn dynamic_pressure_area(&self, speed_sq: f64) -> f64 {
        0.5 * self.rho * speed_sq * self.frontal_area
    }
}

/// Forces on a vehicle for one evaluation of the current.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceSample {
    pub drag: Vec3,
    pub lift: Vec3,
    pub virtual_mass: Vec3,
    /// Always `drag + lift + virtual_mass`.
    pub net: Vec3,
}

impl ForceSample {
    pub fn zero() -> Self {
        Self {
            drag: Vec3::zeros(),
            lift: Vec3::zeros(),
            virtual_mass: Vec3::zeros(),
            net: Vec3::zeros(),
        }
    }
}

/// Drag along the relative flow, magnitude ½ρ|u|²C_D·A.
pub fn drag_force(params: &FluidParams, u_rel: &Vec3) -> Vec3 {
    let speed = u_rel.norm();
    if speed == 0.0 {
        return Vec3::zeros();
    }
    u_rel * (params.dynamic_pressure_area(speed * speed) * params.c_d / speed)
}

/// Lift with magnitude ½ρ|u|²C_L·A, directed along the component of +z
/// perpendicular to the relative flow. Zero for vertical or vanishing flow.
pub fn lift_force(params: &FluidParams, u_rel: &Vec3) -> Vec3 {
    let speed = u_rel.norm();
    if speed == 0.0 {
        return Vec3::zeros();
    }
    let unit = u_rel / speed;
    let up = Vec3::z();
    let perp = up - unit * unit.dot(&up);
    let perp_norm = perp.norm();
    if perp_norm < 1e-12 {
        return Vec3::zeros();
    }
    perp * (params.dynamic_pressure_area(speed * speed) * params.c_l / perp_norm)
}

/// Added-mass force ρ·C_VM·V·∂u/∂t.
pub fn virtual_mass_force(params: &FluidParams, du_dt: &Vec3) -> Vec3 {
    du_dt * (params.rho * params.c_vm * params.volume)
}

/// Combined current forcing on a vehicle at `p` moving with `v_auv`.
pub fn net_current_force(
    field: &FlowField,
    params: &FluidParams,
    p: &Vec3,
    v_auv: &Vec3,
    t: f64,
) -> ForceSample {
    let u_rel = field.velocity_at(p, t) - v_auv;
    let du_dt = field.velocity_time_derivative(p, t);
    let drag = drag_force(params, &u_rel);
    let lift = lift_force(params, &u_rel);
    let virtual_mass = virtual_mass_force(params, &du_dt);
    ForceSample {
        drag,
        lift,
        virtual_mass,
        net: drag + lift + virtual_mass,
    }
}
