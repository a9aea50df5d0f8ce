//! Synthetic cylinder rig: simulates piston motion with a known injected
//! friction force so estimators can be scored against ground truth.
//!
//! Two drive modes are supported. The prescribed mode imposes both chamber
//! pressures directly (the cap-side pressure tracks a sinusoidal net force),
//! which makes the force balance analytically transparent. The valve mode
//! drives the cylinder through inlet/outlet orifices from a constant supply,
//! so pressures, speed, and load level emerge from the flow balance the way
//! they do on a real rig.
//!
//! The injected friction is a LuGre element whose force levels grow with
//! chamber pressure (seals squeeze harder as the cylinder is loaded). A
//! fixed-parameter model identified at low load therefore under-predicts at
//! high load, while an estimator that sees the pressures can compensate.

use crate::lugre::LuGreParams;
use crate::signal::TimeSeries;
use crate::{Error, Result, Scalar};
use rand::Rng;

/// Piston and oil-column geometry plus the moving mass.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CylinderGeometry<T> {
    /// Piston diameter, m.
    pub bore: T,
    /// Rod diameter, m.
    pub rod_diameter: T,
    /// Stroke length, m.
    pub stroke: T,
    /// Mass of piston, rod, and attached load, kg.
    pub moving_mass: T,
    /// Effective oil bulk modulus, Pa.
    pub bulk_modulus: T,
    /// Cap-side oil column at full retraction, m.
    pub dead_length_1: T,
    /// Rod-side oil column at full extension, m.
    pub dead_length_2: T,
}

impl<T: Scalar> Default for CylinderGeometry<T> {
    /// 63/28 cylinder with 0.2 m of stroke and a light 5 kg slider, the rig
    /// all bundled scenarios use.
    fn default() -> Self {
        Self {
            bore: T::from_f64(0.063),
            rod_diameter: T::from_f64(0.028),
            stroke: T::from_f64(0.2),
            moving_mass: T::from_f64(5.0),
            bulk_modulus: T::from_f64(1.4e9),
            dead_length_1: T::from_f64(0.01),
            dead_length_2: T::from_f64(0.01),
        }
    }
}

impl<T: Scalar> CylinderGeometry<T> {
    /// Cap-side piston area, m^2.
    #[must_use]
    pub fn area_cap(&self) -> T {
        let r = self.bore / T::from_f64(2.0);
        T::from_f64(std::f64::consts::PI) * r * r
    }

    /// Rod-side annulus area, m^2.
    #[must_use]
    pub fn area_rod(&self) -> T {
        let r = self.rod_diameter / T::from_f64(2.0);
        self.area_cap() - T::from_f64(std::f64::consts::PI) * r * r
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bore > T::zero()) {
            return Err(Error::invalid("bore must be positive"));
        }
        if !(self.rod_diameter > T::zero()) || !(self.rod_diameter < self.bore) {
            return Err(Error::invalid(
                "rod diameter must be positive and smaller than the bore",
            ));
        }
        if !(self.stroke > T::zero()) {
            return Err(Error::invalid("stroke must be positive"));
        }
        if !(self.moving_mass > T::zero()) {
            return Err(Error::invalid("moving mass must be positive"));
        }
        if !(self.bulk_modulus > T::zero()) {
            return Err(Error::invalid("bulk modulus must be positive"));
        }
        if !(self.dead_length_1 > T::zero()) || !(self.dead_length_2 > T::zero()) {
            return Err(Error::invalid("dead lengths must be positive"));
        }
        Ok(())
    }
}

/// Ground-truth friction injected into the plant.
///
/// The LuGre force levels `f_c` and `f_s` are multiplied by
/// `1 + pressure_gain * (p1 + p2) / (2 * reference_pressure)`, so friction
/// stiffens with chamber loading.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct InjectedFriction<T> {
    pub base: LuGreParams<T>,
    /// Relative force increase at the reference pressure level.
    pub pressure_gain: T,
    /// Pressure at which the gain applies fully, Pa.
    pub reference_pressure: T,
}

impl<T: Scalar> Default for InjectedFriction<T> {
    fn default() -> Self {
        Self {
            base: LuGreParams::default(),
            pressure_gain: T::from_f64(0.5),
            reference_pressure: T::from_f64(50.0e5),
        }
    }
}

impl<T: Scalar> InjectedFriction<T> {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if !(self.pressure_gain >= T::zero()) || !self.pressure_gain.is_finite() {
            return Err(Error::invalid("pressure gain must be non-negative"));
        }
        if !(self.reference_pressure > T::zero()) {
            return Err(Error::invalid("reference pressure must be positive"));
        }
        Ok(())
    }

    /// Force-level scale at the given chamber pressures.
    #[must_use]
    pub fn pressure_scale(&self, p1: T, p2: T) -> T {
        T::one()
            + self.pressure_gain * (p1 + p2)
                / (T::from_f64(2.0) * self.reference_pressure)
    }

    /// LuGre parameters effective at the given chamber pressures.
    #[must_use]
    pub fn at_pressure(&self, p1: T, p2: T) -> LuGreParams<T> {
        let s = self.pressure_scale(p1, p2);
        LuGreParams {
            f_c: self.base.f_c * s,
            f_s: self.base.f_s * s,
            ..self.base
        }
    }
}

/// One motion command of a valve-mode duty cycle.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ProfileSegment<T> {
    pub action: ValveAction,
    /// Segment length, s. Rounded to whole sample intervals.
    pub duration: T,
    /// Spool opening as a fraction of the full valve area, in (0, 1].
    pub opening: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ValveAction {
    /// Supply feeds the cap side; the rod side drains through the outlet.
    Extend,
    /// Supply feeds the rod side; the cap side drains through the outlet.
    Retract,
    /// Centered spool: both chambers bleed to tank through the outlet line
    /// (float center), so a parked cylinder relaxes toward zero gauge
    /// pressure instead of holding whatever the last stroke trapped.
    Idle,
}

/// How the cylinder is powered.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum DriveMode<T> {
    /// Both pressures imposed directly: `p2` constant and
    /// `p1 = (p2*A2 + F(t)) / A1` with `F(t) = amplitude * sin(2*pi*f*t)`.
    Prescribed {
        p2: T,
        /// Net force amplitude, N. Must not exceed `p2*A2` so `p1 >= 0`.
        amplitude: T,
        frequency_hz: T,
        duration: T,
    },
    /// Orifice flow from a constant supply, commanded by a duty cycle.
    Valve {
        /// Supply pressure, Pa (gauge).
        supply_pressure: T,
        /// Full spool flow area, m^2.
        valve_area: T,
        /// Fixed outlet restriction emulating the load level, m^2.
        outlet_area: T,
        discharge_coefficient: T,
        /// Oil density, kg/m^3.
        oil_density: T,
        /// Time the commanded opening takes to travel between segment
        /// targets, s. Each segment starts by easing from the previous
        /// command along a smoothstep, so flows (and with them pressures)
        /// stay differentiable. Zero commands hard steps; those kick the
        /// trapped-oil column at frequencies far above the sample rate,
        /// which a real recording chain would never resolve. Must not
        /// exceed any segment duration.
        command_ramp: T,
        profile: Vec<ProfileSegment<T>>,
    },
}

/// Full simulation request.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScenarioConfig<T> {
    pub geometry: CylinderGeometry<T>,
    pub friction: InjectedFriction<T>,
    pub drive: DriveMode<T>,
    /// Sample interval of the recorded series, s.
    pub dt: T,
    /// Internal RK4 subdivisions per sample interval.
    pub substeps: usize,
    /// Initial piston position, m.
    pub x0: T,
    /// Initial piston velocity, m/s.
    pub v0: T,
    /// Initial chamber pressures (valve mode only), Pa.
    pub p1_0: T,
    pub p2_0: T,
}

/// Default subdivisions for prescribed-pressure scenarios.
pub const PRESCRIBED_SUBSTEPS: usize = 50;
/// Default subdivisions for valve scenarios, where small oil volumes make
/// the pressure dynamics much stiffer.
pub const VALVE_SUBSTEPS: usize = 240;

impl<T: Scalar> ScenarioConfig<T> {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.friction.validate()?;
        if !(self.dt > T::zero()) {
            return Err(Error::invalid("sample interval must be positive"));
        }
        if self.substeps == 0 {
            return Err(Error::invalid("substep count must be positive"));
        }
        if self.x0 < T::zero() || self.x0 > self.geometry.stroke {
            return Err(Error::OutOfRange(
                "initial position must lie within the stroke".into(),
            ));
        }
        if !self.v0.is_finite() {
            return Err(Error::invalid("initial velocity must be finite"));
        }
        match &self.drive {
            DriveMode::Prescribed {
                p2,
                amplitude,
                frequency_hz,
                duration,
            } => {
                if !(*p2 >= T::zero()) {
                    return Err(Error::invalid("prescribed p2 must be non-negative"));
                }
                if !(*amplitude >= T::zero()) {
                    return Err(Error::invalid("force amplitude must be non-negative"));
                }
                if *amplitude > *p2 * self.geometry.area_rod() {
                    return Err(Error::OutOfRange(
                        "force amplitude would drive p1 negative; raise p2 or lower it".into(),
                    ));
                }
                if !(*frequency_hz > T::zero()) {
                    return Err(Error::invalid("drive frequency must be positive"));
                }
                if !(*duration >= self.dt) {
                    return Err(Error::invalid(
                        "duration must cover at least one sample interval",
                    ));
                }
            }
            DriveMode::Valve {
                supply_pressure,
                valve_area,
                outlet_area,
                discharge_coefficient,
                oil_density,
                command_ramp,
                profile,
            } => {
                if !(*supply_pressure > T::zero()) {
                    return Err(Error::invalid("supply pressure must be positive"));
                }
                if !(*valve_area > T::zero()) || !(*outlet_area > T::zero()) {
                    return Err(Error::invalid("orifice areas must be positive"));
                }
                if !(*discharge_coefficient > T::zero()) {
                    return Err(Error::invalid("discharge coefficient must be positive"));
                }
                if !(*oil_density > T::zero()) {
                    return Err(Error::invalid("oil density must be positive"));
                }
                if !(*command_ramp >= T::zero()) || !command_ramp.is_finite() {
                    return Err(Error::invalid("command ramp must be non-negative"));
                }
                if profile.is_empty() {
                    return Err(Error::invalid("valve profile must not be empty"));
                }
                for (k, seg) in profile.iter().enumerate() {
                    if !(seg.duration >= self.dt) {
                        return Err(Error::invalid(format!(
                            "profile segment {k} is shorter than one sample interval"
                        )));
                    }
                    if !(seg.duration >= *command_ramp) {
                        return Err(Error::invalid(format!(
                            "profile segment {k} is shorter than the command ramp"
                        )));
                    }
                    let needs_opening = seg.action != ValveAction::Idle;
                    if needs_opening && !(seg.opening > T::zero() && seg.opening <= T::one()) {
                        return Err(Error::OutOfRange(format!(
                            "profile segment {k} opening must lie in (0, 1]"
                        )));
                    }
                }
                if self.p1_0 < T::zero() || self.p2_0 < T::zero() {
                    return Err(Error::invalid("initial pressures must be non-negative"));
                }
            }
        }
        Ok(())
    }
}

/// Work bookkeeping integrated alongside the motion.
///
/// For a run without end-stop or cavitation projections,
/// `hydraulic - spring - friction - kinetic_delta` closes to integrator
/// accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct EnergyAudit<T> {
    /// Work done on the piston by chamber pressures, J.
    pub hydraulic: T,
    /// Energy dissipated (and transiently stored) by friction, J.
    pub friction: T,
    /// Work absorbed by the trapped-oil spring term, J.
    pub spring: T,
    /// Kinetic energy change since the start, J.
    pub kinetic_delta: T,
}

impl<T: Scalar> EnergyAudit<T> {
    /// Unexplained remainder of the balance, J.
    #[must_use]
    pub fn residual(&self) -> T {
        self.hydraulic - self.spring - self.friction - self.kinetic_delta
    }
}

/// Simulation result: the sampled sensor series plus exact internals.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput<T> {
    /// What the sensors would record (noise-free): `t, x_p, p1, p2` with
    /// the injected friction riding along as `f_true`.
    pub series: TimeSeries<T>,
    /// Exact piston velocity at each sample, m/s.
    pub velocity: Vec<T>,
    /// Exact piston acceleration at each sample, m/s^2.
    pub acceleration: Vec<T>,
    /// Substeps that ended clamped against an end stop.
    pub stop_contacts: usize,
    /// Substeps that required clamping a chamber pressure at vacuum.
    pub cavitation_events: usize,
    pub energy: EnergyAudit<T>,
}

impl<T: Scalar> SimOutput<T> {
    /// Injected friction at each sample, N.
    #[must_use]
    pub fn friction(&self) -> &[T] {
        self.series.f_true().expect("simulator always records f_true")
    }
}

/// Integration state; doubles as its own derivative container.
#[derive(Debug, Clone, Copy)]
struct State<T> {
    x: T,
    v: T,
    z: T,
    p1: T,
    p2: T,
    w_hyd: T,
    w_fric: T,
    w_spring: T,
}

impl<T: Scalar> State<T> {
    fn add_scaled(&self, d: &State<T>, h: T) -> Self {
        Self {
            x: self.x + d.x * h,
            v: self.v + d.v * h,
            z: self.z + d.z * h,
            p1: self.p1 + d.p1 * h,
            p2: self.p2 + d.p2 * h,
            w_hyd: self.w_hyd + d.w_hyd * h,
            w_fric: self.w_fric + d.w_fric * h,
            w_spring: self.w_spring + d.w_spring * h,
        }
    }
}

/// Everything the recorder needs from one right-hand-side evaluation.
struct Eval<T> {
    d: State<T>,
    p1: T,
    p2: T,
    friction: T,
}

/// Drive condition resolved for one sample interval.
#[derive(Clone, Copy)]
enum StepDrive<T> {
    Prescribed {
        p2: T,
        amplitude: T,
        omega: T,
    },
    Valve {
        /// Signed commanded opening at the owning segment's start (extend
        /// positive, retract negative, idle zero).
        u_from: T,
        /// Signed commanded opening the segment eases toward.
        u_to: T,
        /// Absolute time the owning segment starts, s.
        t_seg: T,
        /// Transition time from `u_from` to `u_to`, s.
        ramp: T,
        supply: T,
        valve_area: T,
        outlet_area: T,
        cd: T,
        rho: T,
    },
}

/// Cubic ease between 0 and 1 with flat tangents at both ends.
fn smoothstep<T: Scalar>(s: T) -> T {
    let s = s.max(T::zero()).min(T::one());
    s * s * (T::from_f64(3.0) - T::from_f64(2.0) * s)
}

/// Spool-travel fraction over which the work ports transition between the
/// centered (both chambers bled to tank) and driving (feed plus throttled
/// exhaust) routings.
///
/// The exhaust routing flips with the commanded direction, so it has to
/// shut as the command passes through zero; a float center picks up the
/// trapped oil instead, bleeding both chambers through the outlet line.
/// Crossing over within the first few percent of travel keeps every flow
/// continuous without restricting any of the steady openings the duty
/// cycles actually hold.
const EXHAUST_GATE_FRACTION: f64 = 0.05;

/// Pressure drop below which the orifice law is linearized, Pa.
///
/// The square-root law has unbounded slope at zero drop; treating small
/// drops as laminar keeps the pressure dynamics integrable.
const ORIFICE_LINEAR_BAND: f64 = 1.0e5;

/// Signed orifice flow for a pressure drop `dp`, m^3/s.
fn orifice_flow<T: Scalar>(cd: T, area: T, rho: T, dp: T) -> T {
    let band = T::from_f64(ORIFICE_LINEAR_BAND);
    let two = T::from_f64(2.0);
    let mag = dp.abs();
    let coeff = cd * area * (two / rho).sqrt();
    if mag < band {
        coeff * dp / band.sqrt()
    } else {
        coeff * mag.sqrt() * dp.signum()
    }
}

fn rhs<T: Scalar>(
    t: T,
    s: &State<T>,
    drive: &StepDrive<T>,
    geom: &CylinderGeometry<T>,
    friction: &InjectedFriction<T>,
) -> Eval<T> {
    let a1 = geom.area_cap();
    let a2 = geom.area_rod();
    let (p1, p2, dp1, dp2) = match drive {
        StepDrive::Prescribed {
            p2,
            amplitude,
            omega,
        } => {
            let net = *amplitude * (*omega * t).sin();
            let p1 = (*p2 * a2 + net) / a1;
            (p1, *p2, T::zero(), T::zero())
        }
        StepDrive::Valve {
            u_from,
            u_to,
            t_seg,
            ramp,
            supply,
            valve_area,
            outlet_area,
            cd,
            rho,
        } => {
            let blend = if *ramp > T::zero() {
                smoothstep((t - *t_seg) / *ramp)
            } else {
                T::one()
            };
            let u = *u_from + (*u_to - *u_from) * blend;
            let mag = u.abs();
            let gate = smoothstep(mag / T::from_f64(EXHAUST_GATE_FRACTION));
            // Float center: near zero command both chambers bleed to tank,
            // so parking never traps a loaded column against the next stroke.
            let bleed_area = *outlet_area * (T::one() - gate);
            let bleed1 = -orifice_flow(*cd, bleed_area, *rho, s.p1);
            let bleed2 = -orifice_flow(*cd, bleed_area, *rho, s.p2);
            let (q1, q2) = if u > T::zero() {
                (
                    orifice_flow(*cd, *valve_area * mag, *rho, *supply - s.p1) + bleed1,
                    -orifice_flow(*cd, *outlet_area * gate, *rho, s.p2) + bleed2,
                )
            } else if u < T::zero() {
                (
                    -orifice_flow(*cd, *outlet_area * gate, *rho, s.p1) + bleed1,
                    orifice_flow(*cd, *valve_area * mag, *rho, *supply - s.p2) + bleed2,
                )
            } else {
                (bleed1, bleed2)
            };
            let v1 = a1 * (geom.dead_length_1 + s.x);
            let v2 = a2 * (geom.dead_length_2 + geom.stroke - s.x);
            let beta = geom.bulk_modulus;
            let dp1 = beta / v1 * (q1 - a1 * s.v);
            let dp2 = beta / v2 * (q2 + a2 * s.v);
            (s.p1, s.p2, dp1, dp2)
        }
    };

    let params = friction.at_pressure(p1, p2);
    let dz = params.bristle_rate(s.z, s.v);
    let f = params.sigma0 * s.z + params.sigma1 * dz + params.sigma2 * s.v;
    let accel = (p1 * a1 - p2 * a2 - f) / geom.moving_mass;
    let drive_force = p1 * a1 - p2 * a2;

    Eval {
        d: State {
            x: s.v,
            v: accel,
            z: dz,
            p1: dp1,
            p2: dp2,
            w_hyd: drive_force * s.v,
            w_fric: f * s.v,
            w_spring: T::zero(),
        },
        p1,
        p2,
        friction: f,
    }
}

/// Runs a configured scenario and returns the sampled record.
pub fn generate_scenario<T: Scalar>(config: &ScenarioConfig<T>) -> Result<SimOutput<T>> {
    config.validate()?;
    let dt = config.dt;

    // One drive condition per sample interval; segments are quantized to
    // whole intervals so no substep straddles a command change.
    let step_drives: Vec<StepDrive<T>> = match &config.drive {
        DriveMode::Prescribed {
            p2,
            amplitude,
            frequency_hz,
            duration,
        } => {
            let n = (*duration / dt).to_f64().round().max(1.0) as usize;
            let omega = T::from_f64(2.0 * std::f64::consts::PI) * *frequency_hz;
            vec![
                StepDrive::Prescribed {
                    p2: *p2,
                    amplitude: *amplitude,
                    omega,
                };
                n
            ]
        }
        DriveMode::Valve {
            supply_pressure,
            valve_area,
            outlet_area,
            discharge_coefficient,
            oil_density,
            command_ramp,
            profile,
        } => {
            let mut drives = Vec::new();
            let mut u_prev = T::zero();
            for seg in profile {
                let n = (seg.duration / dt).to_f64().round().max(1.0) as usize;
                let t_seg = dt * T::from_f64(drives.len() as f64);
                let u_target = match seg.action {
                    ValveAction::Extend => seg.opening,
                    ValveAction::Retract => -seg.opening,
                    ValveAction::Idle => T::zero(),
                };
                for _ in 0..n {
                    drives.push(StepDrive::Valve {
                        u_from: u_prev,
                        u_to: u_target,
                        t_seg,
                        ramp: *command_ramp,
                        supply: *supply_pressure,
                        valve_area: *valve_area,
                        outlet_area: *outlet_area,
                        cd: *discharge_coefficient,
                        rho: *oil_density,
                    });
                }
                u_prev = u_target;
            }
            drives
        }
    };
    // One sample per drive interval: a requested duration of n*dt yields
    // exactly n rows, t = 0 .. (n-1)*dt.
    let n_samples = step_drives.len();

    let mut state = State {
        x: config.x0,
        v: config.v0,
        z: T::zero(),
        p1: config.p1_0,
        p2: config.p2_0,
        w_hyd: T::zero(),
        w_fric: T::zero(),
        w_spring: T::zero(),
    };
    let kinetic = |v: T| T::from_f64(0.5) * config.geometry.moving_mass * v * v;
    let ke0 = kinetic(state.v);

    let mut t_col = Vec::with_capacity(n_samples);
    let mut x_col = Vec::with_capacity(n_samples);
    let mut p1_col = Vec::with_capacity(n_samples);
    let mut p2_col = Vec::with_capacity(n_samples);
    let mut f_col = Vec::with_capacity(n_samples);
    let mut v_col = Vec::with_capacity(n_samples);
    let mut a_col = Vec::with_capacity(n_samples);
    let mut stop_contacts = 0usize;
    let mut cavitation_events = 0usize;

    let h = dt / T::from_f64(config.substeps as f64);
    let half = T::from_f64(0.5);
    let sixth = T::from_f64(1.0 / 6.0);
    let two = T::from_f64(2.0);
    let is_valve = matches!(config.drive, DriveMode::Valve { .. });

    for k in 0..n_samples {
        let t_k = dt * T::from_f64(k as f64);
        let drive = &step_drives[k];
        let eval = rhs(t_k, &state, drive, &config.geometry, &config.friction);
        t_col.push(t_k);
        x_col.push(state.x);
        p1_col.push(eval.p1);
        p2_col.push(eval.p2);
        f_col.push(eval.friction);
        v_col.push(state.v);
        a_col.push(eval.d.v);

        if k + 1 == n_samples {
            break;
        }
        for sub in 0..config.substeps {
            let t0 = t_k + h * T::from_f64(sub as f64);
            let k1 = rhs(t0, &state, drive, &config.geometry, &config.friction).d;
            let s2 = state.add_scaled(&k1, h * half);
            let k2 = rhs(t0 + h * half, &s2, drive, &config.geometry, &config.friction).d;
            let s3 = state.add_scaled(&k2, h * half);
            let k3 = rhs(t0 + h * half, &s3, drive, &config.geometry, &config.friction).d;
            let s4 = state.add_scaled(&k3, h);
            let k4 = rhs(t0 + h, &s4, drive, &config.geometry, &config.friction).d;
            let combined = State {
                x: k1.x + two * (k2.x + k3.x) + k4.x,
                v: k1.v + two * (k2.v + k3.v) + k4.v,
                z: k1.z + two * (k2.z + k3.z) + k4.z,
                p1: k1.p1 + two * (k2.p1 + k3.p1) + k4.p1,
                p2: k1.p2 + two * (k2.p2 + k3.p2) + k4.p2,
                w_hyd: k1.w_hyd + two * (k2.w_hyd + k3.w_hyd) + k4.w_hyd,
                w_fric: k1.w_fric + two * (k2.w_fric + k3.w_fric) + k4.w_fric,
                w_spring: k1.w_spring + two * (k2.w_spring + k3.w_spring) + k4.w_spring,
            };
            state = state.add_scaled(&combined, h * sixth);

            // End stops: the piston cannot leave the bore. Contact kills the
            // outward velocity component.
            if state.x < T::zero() {
                state.x = T::zero();
                if state.v < T::zero() {
                    state.v = T::zero();
                }
                stop_contacts += 1;
            } else if state.x > config.geometry.stroke {
                state.x = config.geometry.stroke;
                if state.v > T::zero() {
                    state.v = T::zero();
                }
                stop_contacts += 1;
            }
            // Oil cannot sustain tension; clamp at vapor pressure.
            if is_valve {
                if state.p1 < T::zero() {
                    state.p1 = T::zero();
                    cavitation_events += 1;
                }
                if state.p2 < T::zero() {
                    state.p2 = T::zero();
                    cavitation_events += 1;
                }
            }
        }
    }

    let energy = EnergyAudit {
        hydraulic: state.w_hyd,
        friction: state.w_fric,
        spring: state.w_spring,
        kinetic_delta: kinetic(state.v) - ke0,
    };
    let series = TimeSeries::new(t_col, x_col, p1_col, p2_col, Some(f_col))?;
    Ok(SimOutput {
        series,
        velocity: v_col,
        acceleration: a_col,
        stop_contacts,
        cavitation_events,
        energy,
    })
}

/// Benchmark supply pressure, Pa.
pub const BENCH_SUPPLY_PRESSURE: f64 = 100.0e5;
/// Benchmark full spool area, m^2.
pub const BENCH_VALVE_AREA: f64 = 1.5e-5;
/// Outlet restrictions of the four benchmark load levels, m^2. Smaller
/// outlets back the rod chamber up to higher pressure.
pub const BENCH_OUTLET_AREAS: [f64; 4] = [4.0e-5, 1.6e-5, 9.5e-6, 6.0e-6];
/// Spool openings cycled through in each benchmark recording.
pub const BENCH_OPENINGS: [f64; 6] = [1.0, 0.55, 0.3, 0.16, 0.09, 0.05];
/// Commanded-opening transition time of the benchmark recordings, s.
///
/// Sixteen sample intervals: long enough that the pressure transients stay
/// well inside the bandwidth the 200 Hz recording chain can represent,
/// short next to the strokes themselves.
pub const BENCH_COMMAND_RAMP: f64 = 0.08;

impl<T: Scalar> ScenarioConfig<T> {
    /// The four benchmark load levels (1 = lightest outlet restriction,
    /// 4 = heaviest). Each recording cycles extend/retract strokes through
    /// a range of spool openings so it covers slow and fast sliding in both
    /// directions, and runs for roughly `duration` seconds.
    ///
    /// Retract strokes are deliberately over-long so the piston re-seats on
    /// the bottom cushion each cycle. Which orifice limits the speed flips
    /// with load level and opening, so no fixed extend/retract duration
    /// ratio cancels the travel mismatch open-loop; parking against the
    /// cushion resets the position deterministically instead, the way a rig
    /// without a position servo is cycled.
    pub fn load_level(level: u8, duration: T) -> Result<Self> {
        if !(1..=4).contains(&level) {
            return Err(Error::invalid(format!(
                "load level must be 1..=4, got {level}"
            )));
        }
        let geometry: CylinderGeometry<T> = CylinderGeometry::default();
        let dt = T::from_f64(crate::signal::DEFAULT_DT);
        if !(duration > dt) {
            return Err(Error::invalid("duration must exceed one sample interval"));
        }
        let extend_s = 0.26;
        let retract_s = 0.38;
        let idle_s = 0.12;
        let mut profile = Vec::new();
        let mut total = 0.0f64;
        'outer: loop {
            for &opening in &BENCH_OPENINGS {
                let steps: [(ValveAction, f64); 4] = [
                    (ValveAction::Extend, extend_s),
                    (ValveAction::Idle, idle_s),
                    (ValveAction::Retract, retract_s),
                    (ValveAction::Idle, idle_s),
                ];
                for (action, seconds) in steps {
                    profile.push(ProfileSegment {
                        action,
                        duration: T::from_f64(seconds),
                        opening: T::from_f64(opening),
                    });
                    total += seconds;
                    if total >= duration.to_f64() {
                        break 'outer;
                    }
                }
            }
        }
        Ok(Self {
            geometry,
            friction: InjectedFriction::default(),
            drive: DriveMode::Valve {
                supply_pressure: T::from_f64(BENCH_SUPPLY_PRESSURE),
                valve_area: T::from_f64(BENCH_VALVE_AREA),
                outlet_area: T::from_f64(BENCH_OUTLET_AREAS[(level - 1) as usize]),
                discharge_coefficient: T::from_f64(0.7),
                oil_density: T::from_f64(870.0),
                command_ramp: T::from_f64(BENCH_COMMAND_RAMP),
                profile,
            },
            dt,
            substeps: VALVE_SUBSTEPS,
            x0: T::from_f64(0.02),
            v0: T::zero(),
            p1_0: T::zero(),
            p2_0: T::zero(),
        })
    }

    /// Prescribed-pressure scenario with a sinusoidal net force, handy for
    /// analytically checking the labeling chain.
    pub fn prescribed(amplitude: T, frequency_hz: T, duration: T) -> Self {
        Self {
            geometry: CylinderGeometry::default(),
            friction: InjectedFriction {
                pressure_gain: T::zero(),
                ..InjectedFriction::default()
            },
            drive: DriveMode::Prescribed {
                p2: T::from_f64(30.0e5),
                amplitude,
                frequency_hz,
                duration,
            },
            dt: T::from_f64(crate::signal::DEFAULT_DT),
            substeps: PRESCRIBED_SUBSTEPS,
            x0: T::from_f64(0.1),
            v0: T::zero(),
            p1_0: T::zero(),
            p2_0: T::zero(),
        }
    }
}

/// Sensor degradation applied to a clean series.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NoiseConfig<T> {
    /// Gaussian position noise, m (standard deviation).
    pub position_std: T,
    /// Gaussian pressure noise, Pa (standard deviation).
    pub pressure_std: T,
    /// ADC resolution; `None` skips quantization.
    pub quantization_bits: Option<u32>,
    /// Position sensor span `(lo, hi)`, m.
    pub position_range: (T, T),
    /// Pressure transducer span `(lo, hi)`, Pa.
    pub pressure_range: (T, T),
}

impl<T: Scalar> Default for NoiseConfig<T> {
    /// A 12-bit acquisition chain: position over the full 0.2 m stroke,
    /// pressures over a 0..250 bar transducer span.
    fn default() -> Self {
        Self {
            position_std: T::from_f64(5.0e-5),
            pressure_std: T::from_f64(5.0e3),
            quantization_bits: Some(12),
            position_range: (T::zero(), T::from_f64(0.2)),
            pressure_range: (T::zero(), T::from_f64(250.0e5)),
        }
    }
}

impl<T: Scalar> NoiseConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.position_std >= T::zero()) || !(self.pressure_std >= T::zero()) {
            return Err(Error::invalid("noise levels must be non-negative"));
        }
        if let Some(bits) = self.quantization_bits {
            if !(1..=32).contains(&bits) {
                return Err(Error::invalid("quantization bits must be in 1..=32"));
            }
        }
        if !(self.position_range.1 > self.position_range.0)
            || !(self.pressure_range.1 > self.pressure_range.0)
        {
            return Err(Error::invalid("sensor ranges must have positive width"));
        }
        Ok(())
    }
}

/// Clamps to the sensor span and snaps onto the ADC grid.
fn digitize<T: Scalar>(value: T, lo: T, hi: T, bits: Option<u32>) -> T {
    let clamped = value.max(lo).min(hi);
    match bits {
        None => clamped,
        Some(bits) => {
            let levels = T::from_f64(((1u64 << bits) - 1) as f64);
            let q = (hi - lo) / levels;
            lo + ((clamped - lo) / q).round() * q
        }
    }
}

/// Corrupts a clean series the way the acquisition chain would: Gaussian
/// sensor noise, then range clamping and quantization. Timestamps and the
/// ground-truth column pass through untouched.
///
/// Draw order is fixed (x, p1, p2 per sample), so one seeded generator
/// reproduces the same record bit for bit.
pub fn add_noise<T: Scalar, R: Rng + ?Sized>(
    series: &TimeSeries<T>,
    config: &NoiseConfig<T>,
    rng: &mut R,
) -> Result<TimeSeries<T>> {
    config.validate()?;
    let n = series.len();
    let mut x = Vec::with_capacity(n);
    let mut p1 = Vec::with_capacity(n);
    let mut p2 = Vec::with_capacity(n);
    let (x_lo, x_hi) = config.position_range;
    let (p_lo, p_hi) = config.pressure_range;
    for k in 0..n {
        let nx = T::standard_normal(rng) * config.position_std;
        let n1 = T::standard_normal(rng) * config.pressure_std;
        let n2 = T::standard_normal(rng) * config.pressure_std;
        x.push(digitize(
            series.x_p()[k] + nx,
            x_lo,
            x_hi,
            config.quantization_bits,
        ));
        p1.push(digitize(
            series.p1()[k] + n1,
            p_lo,
            p_hi,
            config.quantization_bits,
        ));
        p2.push(digitize(
            series.p2()[k] + n2,
            p_lo,
            p_hi,
            config.quantization_bits,
        ));
    }
    TimeSeries::new(
        series.t().to_vec(),
        x,
        p1,
        p2,
        series.f_true().map(|f| f.to_vec()),
    )
}
