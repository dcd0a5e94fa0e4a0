//! Reduced-order plant: 1-DoF hand, arm pose, cylindrical object and bins.
//!
//! Frame: z up from the force plate, the two bins on the x axis. The fingers
//! point along +y from the palm; the hand closes along x with the thumb on the
//! −x side and the sensorized fingers on the +x side. The object is an upright
//! cylinder; `pos` is its centre.
//!
//! The motor is non-backdrivable and has a linear force–speed curve, so a
//! closing command `u` squeezes until the grip force reaches `u·stall_force`
//! and the aperture holds when the command is zero.

use serde::{Deserialize, Serialize};

use crate::tactile::{FingerFace, FingerSurfacePoint};
use crate::DT;

pub const ALUMINIUM_DENSITY: f64 = 2700.0;
pub const BIN_SEPARATION_M: f64 = 0.175;

pub type Vec3 = [f64; 3];

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("invalid scene: {0}")]
pub struct SceneError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinSpec {
    /// Centre of the bin footprint on the plate, m.
    pub center: [f64; 2],
    /// Half of the square footprint side, m.
    pub half_width: f64,
    pub wall_height: f64,
}

impl BinSpec {
    fn contains_xy(&self, x: f64, y: f64) -> bool {
        (x - self.center[0]).abs() <= self.half_width && (y - self.center[1]).abs() <= self.half_width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectSpec {
    pub length: f64,
    pub diameter: f64,
    pub density: f64,
    /// Overrides the mass derived from the dimensions, kg.
    pub mass: Option<f64>,
}

impl Default for ObjectSpec {
    fn default() -> Self {
        Self {
            length: 0.12,
            diameter: 0.02,
            density: ALUMINIUM_DENSITY,
            mass: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HandSpec {
    pub a_max: f64,
    /// Time to travel from fully open to closed at full voltage, s.
    pub close_time: f64,
    pub v_max: f64,
    /// Grip force at which the motor stalls at full voltage, N.
    pub stall_force: f64,
    /// Fingertip pad stiffness, N/m.
    pub contact_stiffness: f64,
    pub finger_length: f64,
    /// Distance from the wrist reference to the proximal end of the fingers, m.
    pub palm_offset: f64,
    pub finger_thickness: f64,
}

impl Default for HandSpec {
    fn default() -> Self {
        Self {
            a_max: 0.10,
            close_time: 1.0,
            v_max: 6.0,
            stall_force: 35.0,
            contact_stiffness: 2000.0,
            finger_length: 0.08,
            palm_offset: 0.02,
            finger_thickness: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub start_bin: BinSpec,
    pub end_bin: BinSpec,
    pub object: ObjectSpec,
    pub hand: HandSpec,
    pub friction: f64,
    pub eject_force: f64,
    /// Allowed distance of the grip from the finger centre before an
    /// over-squeezed object is ejected, as a fraction of finger length.
    pub eject_offset_tolerance: f64,
    /// Horizontal (along-finger, downward) speed given to an ejected object, m/s.
    pub eject_speed: [f64; 2],
    pub gravity: f64,
    pub vicinity_radius: f64,
    /// Sliding speed at full force deficit, m/s.
    pub slip_speed: f64,
    /// Pad compression lost per metre of sliding.
    pub slip_unloading: f64,
    /// Amplitude of the stick-slip normal-force ripple while sliding, N.
    pub slip_chatter_amplitude: f64,
    /// Sliding distance per stick-slip cycle, m.
    pub slip_chatter_wavelength: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            start_bin: BinSpec {
                center: [0.0, 0.0],
                half_width: 0.019,
                wall_height: 0.076,
            },
            end_bin: BinSpec {
                center: [BIN_SEPARATION_M, 0.0],
                half_width: 0.019,
                wall_height: 0.051,
            },
            object: ObjectSpec::default(),
            hand: HandSpec::default(),
            friction: 0.4,
            eject_force: 25.0,
            eject_offset_tolerance: 0.2,
            eject_speed: [0.5, 0.5],
            gravity: 9.81,
            vicinity_radius: 0.05,
            slip_speed: 0.25,
            slip_unloading: 0.1,
            slip_chatter_amplitude: 3.0,
            slip_chatter_wavelength: 0.002,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SceneError> {
        let dx = self.end_bin.center[0] - self.start_bin.center[0];
        let dy = self.end_bin.center[1] - self.start_bin.center[1];
        if ((dx * dx + dy * dy).sqrt() - BIN_SEPARATION_M).abs() > 1e-9 {
            return Err(SceneError(format!(
                "bin centres must be {BIN_SEPARATION_M} m apart"
            )));
        }
        let positive = [
            ("object.length", self.object.length),
            ("object.diameter", self.object.diameter),
            ("hand.a_max", self.hand.a_max),
            ("hand.close_time", self.hand.close_time),
            ("hand.v_max", self.hand.v_max),
            ("hand.stall_force", self.hand.stall_force),
            ("hand.contact_stiffness", self.hand.contact_stiffness),
            ("hand.finger_length", self.hand.finger_length),
            ("friction", self.friction),
            ("eject_force", self.eject_force),
            ("gravity", self.gravity),
            ("slip_chatter_wavelength", self.slip_chatter_wavelength),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SceneError(format!("{name} must be positive, got {v}")));
            }
        }
        if self.hand.a_max <= self.object.diameter {
            return Err(SceneError("hand must open wider than the object".into()));
        }
        if self.object_mass() <= 0.0 {
            return Err(SceneError("object mass must be positive".into()));
        }
        Ok(())
    }

    pub fn object_mass(&self) -> f64 {
        self.object.mass.unwrap_or_else(|| object_mass_default(self))
    }

    fn radius(&self) -> f64 {
        self.object.diameter / 2.0
    }

    fn half_length(&self) -> f64 {
        self.object.length / 2.0
    }

    /// Initial object state: standing upright at the start-bin centre.
    pub fn initial_object(&self) -> ObjectState {
        let c = self.start_bin.center;
        ObjectState {
            pos: [c[0], c[1], self.half_length()],
            vel: [0.0; 3],
            status: ObjectStatus::InStartBin,
            mass: self.object_mass(),
            friction: self.friction,
            grip_offset: None,
            slip_loss: 0.0,
            slide: 0.0,
        }
    }
}

/// Mass of the solid aluminium cylinder.
pub fn object_mass_default(scene: &SceneSpec) -> f64 {
    let r = scene.object.diameter / 2.0;
    scene.object.density * std::f64::consts::PI * r * r * scene.object.length
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandState {
    pub aperture: f64,
    pub aperture_rate: f64,
    pub grip_force: f64,
    pub wrist_pos: Vec3,
}

impl HandState {
    pub fn open_at(wrist_pos: Vec3, scene: &SceneSpec) -> Self {
        Self {
            aperture: scene.hand.a_max,
            aperture_rate: 0.0,
            grip_force: 0.0,
            wrist_pos,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectStatus {
    InStartBin,
    Held,
    Slipping,
    FreeFall,
    SettledOut,
    InEndBin,
    Ejected,
}

impl ObjectStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ObjectStatus::InStartBin => "in_start_bin",
            ObjectStatus::Held => "held",
            ObjectStatus::Slipping => "slipping",
            ObjectStatus::FreeFall => "free_fall",
            ObjectStatus::SettledOut => "settled_out",
            ObjectStatus::InEndBin => "in_end_bin",
            ObjectStatus::Ejected => "ejected",
        }
    }

    pub fn is_gripped(self) -> bool {
        matches!(self, ObjectStatus::Held | ObjectStatus::Slipping)
    }

    pub fn is_resting(self) -> bool {
        matches!(
            self,
            ObjectStatus::InStartBin | ObjectStatus::InEndBin | ObjectStatus::SettledOut
        )
    }
}

impl std::str::FromStr for ObjectStatus {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "in_start_bin" => ObjectStatus::InStartBin,
            "held" => ObjectStatus::Held,
            "slipping" => ObjectStatus::Slipping,
            "free_fall" => ObjectStatus::FreeFall,
            "settled_out" => ObjectStatus::SettledOut,
            "in_end_bin" => ObjectStatus::InEndBin,
            "ejected" => ObjectStatus::Ejected,
            other => return Err(format!("unknown object status `{other}`")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub pos: Vec3,
    pub vel: Vec3,
    pub status: ObjectStatus,
    pub mass: f64,
    /// Current friction coefficient between object and fingertips.
    pub friction: f64,
    /// Object centre relative to the wrist while gripped.
    pub grip_offset: Option<Vec3>,
    /// Pad compression lost to sliding since the grip formed, m.
    pub slip_loss: f64,
    /// Distance slid through the grip since it formed, m.
    pub slide: f64,
}

impl ObjectState {
    pub fn bottom(&self, scene: &SceneSpec) -> f64 {
        self.pos[2] - scene.half_length()
    }

    /// Horizontal distance of the centre from the end-bin centre, m.
    pub fn displacement_from_end_bin(&self, scene: &SceneSpec) -> f64 {
        let c = scene.end_bin.center;
        (self.pos[0] - c[0]).hypot(self.pos[1] - c[1])
    }
}

/// Contact geometry handed to the tactile sensors.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ContactGeometry {
    pub surface: Option<FingerSurfacePoint>,
    pub touching: bool,
    /// Normal force at the thumb sensor, including stick-slip ripple, N.
    pub grip_force: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "factor")]
pub enum Perturbation {
    MassMultiplier(f64),
    FrictionMultiplier(f64),
}

pub fn apply_perturbation(obj: &mut ObjectState, p: Perturbation) {
    match p {
        Perturbation::MassMultiplier(f) => obj.mass *= f,
        Perturbation::FrictionMultiplier(f) => obj.friction *= f,
    }
}

fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Advance the plant by one 1 ms tick.
pub fn step(
    hand: &HandState,
    obj: &ObjectState,
    motor_voltage: f64,
    arm_vel: Vec3,
    scene: &SceneSpec,
) -> (HandState, ObjectState, ContactGeometry) {
    let hs = &scene.hand;
    let r = scene.radius();
    let half_len = scene.half_length();
    let speed_max = hs.a_max / hs.close_time;

    // motor
    let u = if motor_voltage.is_nan() {
        0.0
    } else {
        (motor_voltage / hs.v_max).clamp(-1.0, 1.0)
    };
    let da_dt = if u > 0.0 {
        -speed_max * (u - hand.grip_force / hs.stall_force).max(0.0)
    } else {
        -speed_max * u
    };
    let aperture = (hand.aperture + da_dt * DT).clamp(0.0, hs.a_max);
    let wrist = add(hand.wrist_pos, [arm_vel[0] * DT, arm_vel[1] * DT, arm_vel[2] * DT]);

    // object kinematics
    let mut o = *obj;
    let weight = o.mass * scene.gravity;
    match o.status {
        ObjectStatus::Held | ObjectStatus::Slipping => {
            let mut offset = o.grip_offset.unwrap_or_else(|| sub(o.pos, hand.wrist_pos));
            if o.status == ObjectStatus::Slipping {
                let deficit = ((weight - 2.0 * o.friction * hand.grip_force) / weight).clamp(0.0, 1.0);
                let v_slip = scene.slip_speed * deficit;
                offset[2] -= v_slip * DT;
                o.slip_loss += scene.slip_unloading * v_slip * DT;
                o.slide += v_slip * DT;
                o.vel = [0.0, 0.0, -v_slip];
            } else {
                o.vel = [0.0; 3];
            }
            o.pos = add(wrist, offset);
            o.grip_offset = Some(offset);
        }
        ObjectStatus::FreeFall | ObjectStatus::Ejected if o.pos[2] - half_len > 0.0 || o.vel[2] > 0.0 => {
            o.vel[2] -= scene.gravity * DT;
            o.pos = add(o.pos, [o.vel[0] * DT, o.vel[1] * DT, o.vel[2] * DT]);
        }
        _ => {}
    }
    let mut landed = false;
    if o.pos[2] - half_len <= 0.0 {
        if o.pos[2] - half_len < 0.0 {
            o.pos[2] = half_len;
            if let Some(off) = o.grip_offset.as_mut() {
                *off = sub(o.pos, wrist);
            }
        }
        if matches!(o.status, ObjectStatus::FreeFall | ObjectStatus::Ejected) {
            landed = true;
            o.vel = [0.0; 3];
        }
    }
    let supported = o.pos[2] - half_len <= 1e-12;

    // geometry relative to the hand
    let half = aperture / 2.0;
    let rel = sub(o.pos, wrist);
    let along = rel[1] - hs.palm_offset;
    let in_span = (0.0..=hs.finger_length).contains(&along)
        && wrist[2] >= o.pos[2] - half_len
        && wrist[2] <= o.pos[2] + half_len;
    let airborne = matches!(o.status, ObjectStatus::FreeFall | ObjectStatus::Ejected) && !landed;
    let mut dx = rel[0];
    let inside = in_span && o.status != ObjectStatus::Ejected && dx.abs() <= half;
    if inside && !airborne {
        // the closing digits push a loose object towards the middle
        let limit = (half - r).max(0.0);
        let pushed = dx.clamp(-limit, limit);
        if pushed != dx {
            o.pos[0] += pushed - dx;
            if let Some(off) = o.grip_offset.as_mut() {
                off[0] += pushed - dx;
            }
            dx = pushed;
        }
    }
    let arc = (along / hs.finger_length).clamp(0.0, 1.0);

    let squeeze = scene.object.diameter - aperture - o.slip_loss;
    let mut grip_force = if inside && !airborne && squeeze > 0.0 {
        hs.contact_stiffness * squeeze
    } else {
        0.0
    };

    // status transitions
    if o.status == ObjectStatus::Ejected {
        grip_force = 0.0;
    } else if grip_force > 0.0 {
        let off_centre = (arc - 0.5).abs() > scene.eject_offset_tolerance;
        if grip_force > scene.eject_force && off_centre {
            let lateral = if arc > 0.5 { 1.0 } else { -1.0 };
            o.status = ObjectStatus::Ejected;
            o.vel = [0.0, lateral * scene.eject_speed[0], -scene.eject_speed[1]];
            o.grip_offset = None;
            o.slip_loss = 0.0;
            o.slide = 0.0;
            grip_force = 0.0;
        } else {
            let holds = supported || 2.0 * o.friction * grip_force >= weight;
            o.status = if holds {
                ObjectStatus::Held
            } else {
                ObjectStatus::Slipping
            };
            if o.grip_offset.is_none() {
                o.grip_offset = Some(sub(o.pos, wrist));
            }
            if supported {
                o.vel = [0.0; 3];
            }
        }
    } else {
        o.grip_offset = None;
        o.slip_loss = 0.0;
        o.slide = 0.0;
        if supported {
            o.vel = [0.0; 3];
            o.status = if scene.start_bin.contains_xy(o.pos[0], o.pos[1]) {
                ObjectStatus::InStartBin
            } else if scene.end_bin.contains_xy(o.pos[0], o.pos[1]) {
                ObjectStatus::InEndBin
            } else {
                ObjectStatus::SettledOut
            };
        } else if o.status != ObjectStatus::FreeFall {
            o.status = ObjectStatus::FreeFall;
        }
    }

    // contact-location sensor sits on the fingers (+x side)
    let surface = if o.status == ObjectStatus::Ejected || !in_span {
        None
    } else if grip_force > 0.0 || (inside && dx >= half - r - 1e-9) {
        Some(FingerSurfacePoint {
            face: FingerFace::Palmar,
            arc_fraction: arc,
        })
    } else if dx > half && dx <= half + hs.finger_thickness + r {
        Some(FingerSurfacePoint {
            face: FingerFace::Dorsal,
            arc_fraction: arc,
        })
    } else {
        None
    };

    let new_hand = HandState {
        aperture,
        aperture_rate: (aperture - hand.aperture) / DT,
        grip_force,
        wrist_pos: wrist,
    };
    // a sliding grip ripples the normal force seen by the thumb sensor
    let sensed_force = if o.status == ObjectStatus::Slipping {
        let phase = std::f64::consts::TAU * o.slide / scene.slip_chatter_wavelength;
        (grip_force + scene.slip_chatter_amplitude * phase.sin()).max(0.0)
    } else {
        grip_force
    };
    let geometry = ContactGeometry {
        touching: surface.is_some(),
        surface,
        grip_force: sensed_force,
    };
    (new_hand, o, geometry)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    InStartBin,
    NearEndBin,
    InEndBin,
    Elsewhere,
}

/// Region used for scoring. `InEndBin` requires the object to rest inside the
/// end bin; `NearEndBin` is anything within the vicinity radius of its centre.
pub fn classify_region(obj: &ObjectState, scene: &SceneSpec) -> Region {
    if obj.status == ObjectStatus::InEndBin {
        return Region::InEndBin;
    }
    let bottom = obj.bottom(scene);
    if scene.start_bin.contains_xy(obj.pos[0], obj.pos[1]) && bottom < scene.start_bin.wall_height {
        return Region::InStartBin;
    }
    if obj.displacement_from_end_bin(scene) <= scene.vicinity_radius {
        return Region::NearEndBin;
    }
    Region::Elsewhere
}

/// Hand and object advanced together.
#[derive(Debug, Clone)]
pub struct Plant {
    pub scene: SceneSpec,
    pub hand: HandState,
    pub object: ObjectState,
    pub geometry: ContactGeometry,
}

impl Plant {
    pub fn new(scene: SceneSpec, wrist_start: Vec3) -> Self {
        Self {
            hand: HandState::open_at(wrist_start, &scene),
            object: scene.initial_object(),
            geometry: ContactGeometry::default(),
            scene,
        }
    }

    pub fn step(&mut self, motor_voltage: f64, arm_vel: Vec3) -> &ContactGeometry {
        let (h, o, g) = step(&self.hand, &self.object, motor_voltage, arm_vel, &self.scene);
        self.hand = h;
        self.object = o;
        self.geometry = g;
        &self.geometry
    }

    pub fn is_finite(&self) -> bool {
        let h = &self.hand;
        let o = &self.object;
        h.aperture.is_finite()
            && h.grip_force.is_finite()
            && h.wrist_pos.iter().chain(o.pos.iter()).chain(o.vel.iter()).all(|v| v.is_finite())
    }
}
