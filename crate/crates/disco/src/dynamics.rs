//! Parameterised discrete-time transition models and the rollout operator.
//!
//! Two environments are provided: a torque-limited pendulum swing-up task and
//! a skid-steer ground vehicle modelled as a unicycle with lateral slip from
//! an offset instant centre of rotation. Both expose the same contract
//! ([`Env`]) so the controller and harness stay environment-generic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const GRAVITY: f64 = 9.81;
pub const PENDULUM_DT: f64 = 0.05;
pub const PENDULUM_MAX_SPEED: f64 = 8.0;
pub const PENDULUM_MAX_TORQUE: f64 = 2.0;
pub const SKIDSTEER_DT: f64 = 0.1;
pub const SKIDSTEER_MAX_WHEEL_SPEED: f64 = 10.0;

/// Latent physical parameters of a simulator, with per-dimension labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams<T> {
    pub values: Vec<T>,
    pub labels: Vec<String>,
}

impl<T: Scalar> SimParams<T> {
    pub fn new(values: Vec<T>, labels: &[&str]) -> Result<Self> {
        if values.len() != labels.len() {
            return Err(Error::invalid("parameter/label length mismatch"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite simulation parameter"));
        }
        Ok(SimParams { values, labels: labels.iter().map(|s| s.to_string()).collect() })
    }

    /// Parameters with the labels an environment declares.
    pub fn for_env<T2: Scalar>(env: &EnvKind<T2>, values: Vec<T>) -> Result<Self> {
        if values.len() != env.param_dim() {
            return Err(Error::invalid(format!(
                "expected {} parameters for {}, got {}",
                env.param_dim(),
                env.name(),
                values.len()
            )));
        }
        SimParams::new(values, env.param_labels())
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Pendulum state; `theta = 0` is upright, positive torque is
/// counter-clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumState<T> {
    pub theta: T,
    pub theta_dot: T,
}

/// Planar pose of the skid-steer platform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkidSteerState<T> {
    pub x: T,
    pub y: T,
    pub phi: T,
}

/// Wrap an angle to `(-pi, pi]`.
pub fn wrap_angle<T: Scalar>(a: T) -> T {
    let pi = T::of(std::f64::consts::PI);
    let two_pi = pi + pi;
    // Float `%` keeps the dividend's sign; shift into [0, 2pi) first.
    let mut rem = (pi - a) % two_pi;
    if rem < T::zero() {
        rem = rem + two_pi;
    }
    pi - rem
}

/// One semi-implicit Euler step of the swing-up pendulum
/// `theta_ddot = (3g / 2l) sin(theta) + 3 / (m l^2) u`,
/// followed by the velocity clamp to `[-8, 8]` rad/s.
///
/// The caller is responsible for clipping `torque` to the actuator bounds.
pub fn pendulum_step<T: Scalar>(
    state: PendulumState<T>,
    torque: T,
    params: &SimParams<T>,
    dt: T,
) -> Result<PendulumState<T>> {
    if !state.theta.is_finite() || !state.theta_dot.is_finite() || !torque.is_finite() {
        return Err(Error::invalid("non-finite pendulum state or torque"));
    }
    if params.dim() != 2 {
        return Err(Error::invalid("pendulum expects parameters (length, mass)"));
    }
    let (l, m) = (params.values[0], params.values[1]);
    if !(l.is_finite() && m.is_finite()) || l <= T::zero() || m <= T::zero() {
        return Err(Error::invalid("pendulum length and mass must be positive and finite"));
    }

    let g = T::of(GRAVITY);
    let three = T::of(3.0);
    let accel = three * g / (T::of(2.0) * l) * state.theta.sin() + three / (m * l * l) * torque;
    // Velocity first, then the angle advances with the new velocity.
    let theta_dot = state.theta_dot + dt * accel;
    let theta = state.theta + dt * theta_dot;
    let max_speed = T::of(PENDULUM_MAX_SPEED);
    Ok(PendulumState { theta, theta_dot: theta_dot.max(-max_speed).min(max_speed) })
}

/// One Euler step of the skid-steer kinematics.
///
/// With wheel radius `r_w`, axial distance `a_w` and ICR offset `x_icr`:
/// `v = r_w (wr + wl) / 2`, `omega = r_w (wr - wl) / a_w`, and the ICR offset
/// slides the platform sideways with `v_y = x_icr * omega`.
pub fn skidsteer_step<T: Scalar>(
    state: SkidSteerState<T>,
    wheel_speeds: (T, T),
    params: &SimParams<T>,
    dt: T,
) -> Result<SkidSteerState<T>> {
    let (wl, wr) = wheel_speeds;
    if ![state.x, state.y, state.phi, wl, wr].iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("non-finite skid-steer state or wheel speed"));
    }
    if params.dim() != 3 {
        return Err(Error::invalid("skid-steer expects parameters (x_icr, r_w, a_w)"));
    }
    let (x_icr, r_w, a_w) = (params.values[0], params.values[1], params.values[2]);
    if !(x_icr.is_finite() && r_w.is_finite() && a_w.is_finite())
        || r_w <= T::zero()
        || a_w <= T::zero()
    {
        return Err(Error::invalid("wheel radius and axial distance must be positive and finite"));
    }

    let half = T::of(0.5);
    let v = r_w * (wr + wl) * half;
    let omega = r_w * (wr - wl) / a_w;
    let v_y = x_icr * omega;
    let (sin_phi, cos_phi) = (state.phi.sin(), state.phi.cos());
    Ok(SkidSteerState {
        x: state.x + dt * (v * cos_phi - v_y * sin_phi),
        y: state.y + dt * (v * sin_phi + v_y * cos_phi),
        phi: wrap_angle(state.phi + dt * omega),
    })
}

/// Elementwise clamp of a control vector to per-dimension `[lo, hi]` bounds.
pub fn clip_control<T: Scalar>(v: &mut [T], bounds: &[(T, T)]) {
    debug_assert_eq!(v.len(), bounds.len());
    for (x, &(lo, hi)) in v.iter_mut().zip(bounds) {
        *x = (*x).max(lo).min(hi);
    }
}

/// State trajectory stored as `len * state_dim` scalars, starting at `x0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory<T> {
    state_dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn state(&self, i: usize) -> &[T] {
        &self.data[i * self.state_dim..(i + 1) * self.state_dim]
    }

    /// Number of states (horizon + 1).
    pub fn len(&self) -> usize {
        self.data.len() / self.state_dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn last(&self) -> &[T] {
        self.state(self.len() - 1)
    }
}

/// Common contract every simulated environment satisfies.
pub trait Env<T: Scalar>: Send + Sync {
    fn name(&self) -> &'static str;
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn param_dim(&self) -> usize;
    fn param_labels(&self) -> &'static [&'static str];
    fn dt(&self) -> T;
    fn control_bounds(&self) -> &[(T, T)];

    /// Advance `state` by one step under `control`, writing into `next`.
    fn step_into(
        &self,
        state: &[T],
        control: &[T],
        params: &SimParams<T>,
        next: &mut [T],
    ) -> Result<()>;
}

/// Torque-limited pendulum; flat state layout `[theta, theta_dot]`.
#[derive(Debug, Clone)]
pub struct PendulumEnv<T> {
    dt: T,
    bounds: [(T, T); 1],
}

impl<T: Scalar> PendulumEnv<T> {
    pub fn new() -> Self {
        Self::with_dt(T::of(PENDULUM_DT))
    }

    pub fn with_dt(dt: T) -> Self {
        let u = T::of(PENDULUM_MAX_TORQUE);
        PendulumEnv { dt, bounds: [(-u, u)] }
    }

    /// Downright and at rest.
    pub fn initial_state(&self) -> Vec<T> {
        vec![T::of(std::f64::consts::PI), T::zero()]
    }
}

impl<T: Scalar> Default for PendulumEnv<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Env<T> for PendulumEnv<T> {
    fn name(&self) -> &'static str {
        "pendulum"
    }
    fn state_dim(&self) -> usize {
        2
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn param_dim(&self) -> usize {
        2
    }
    fn param_labels(&self) -> &'static [&'static str] {
        &["pole length [m]", "pole mass [kg]"]
    }
    fn dt(&self) -> T {
        self.dt
    }
    fn control_bounds(&self) -> &[(T, T)] {
        &self.bounds
    }

    fn step_into(
        &self,
        state: &[T],
        control: &[T],
        params: &SimParams<T>,
        next: &mut [T],
    ) -> Result<()> {
        let s = PendulumState { theta: state[0], theta_dot: state[1] };
        let out = pendulum_step(s, control[0], params, self.dt)?;
        next[0] = out.theta;
        next[1] = out.theta_dot;
        Ok(())
    }
}

/// Skid-steer platform; flat state layout `[x, y, phi]`, controls
/// `[omega_left, omega_right]`.
#[derive(Debug, Clone)]
pub struct SkidSteerEnv<T> {
    dt: T,
    bounds: [(T, T); 2],
}

impl<T: Scalar> SkidSteerEnv<T> {
    pub fn new() -> Self {
        Self::with_dt(T::of(SKIDSTEER_DT))
    }

    pub fn with_dt(dt: T) -> Self {
        let w = T::of(SKIDSTEER_MAX_WHEEL_SPEED);
        SkidSteerEnv { dt, bounds: [(-w, w), (-w, w)] }
    }
}

impl<T: Scalar> Default for SkidSteerEnv<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Env<T> for SkidSteerEnv<T> {
    fn name(&self) -> &'static str {
        "skidsteer"
    }
    fn state_dim(&self) -> usize {
        3
    }
    fn control_dim(&self) -> usize {
        2
    }
    fn param_dim(&self) -> usize {
        3
    }
    fn param_labels(&self) -> &'static [&'static str] {
        &["icr offset [m]", "wheel radius [m]", "axial distance [m]"]
    }
    fn dt(&self) -> T {
        self.dt
    }
    fn control_bounds(&self) -> &[(T, T)] {
        &self.bounds
    }

    fn step_into(
        &self,
        state: &[T],
        control: &[T],
        params: &SimParams<T>,
        next: &mut [T],
    ) -> Result<()> {
        let s = SkidSteerState { x: state[0], y: state[1], phi: state[2] };
        let out = skidsteer_step(s, (control[0], control[1]), params, self.dt)?;
        next[0] = out.x;
        next[1] = out.y;
        next[2] = out.phi;
        Ok(())
    }
}

/// Environment selected by name at runtime.
#[derive(Debug, Clone)]
pub enum EnvKind<T> {
    Pendulum(PendulumEnv<T>),
    SkidSteer(SkidSteerEnv<T>),
}

impl<T: Scalar> EnvKind<T> {
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "pendulum" => Ok(EnvKind::Pendulum(PendulumEnv::new())),
            "skidsteer" => Ok(EnvKind::SkidSteer(SkidSteerEnv::new())),
            other => Err(Error::config(format!("unknown environment '{other}'"))),
        }
    }
}

macro_rules! delegate {
    ($self:ident, $inner:ident => $body:expr) => {
        match $self {
            EnvKind::Pendulum($inner) => $body,
            EnvKind::SkidSteer($inner) => $body,
        }
    };
}

impl<T: Scalar> Env<T> for EnvKind<T> {
    fn name(&self) -> &'static str {
        delegate!(self, e => e.name())
    }
    fn state_dim(&self) -> usize {
        delegate!(self, e => e.state_dim())
    }
    fn control_dim(&self) -> usize {
        delegate!(self, e => e.control_dim())
    }
    fn param_dim(&self) -> usize {
        delegate!(self, e => e.param_dim())
    }
    fn param_labels(&self) -> &'static [&'static str] {
        delegate!(self, e => e.param_labels())
    }
    fn dt(&self) -> T {
        delegate!(self, e => e.dt())
    }
    fn control_bounds(&self) -> &[(T, T)] {
        delegate!(self, e => e.control_bounds())
    }
    fn step_into(
        &self,
        state: &[T],
        control: &[T],
        params: &SimParams<T>,
        next: &mut [T],
    ) -> Result<()> {
        delegate!(self, e => e.step_into(state, control, params, next))
    }
}

/// Apply `controls` (a `T x control_dim` flat sequence) from `x0`,
/// recursively stepping the environment. Pure: identical inputs produce a
/// bit-identical trajectory. Controls are applied as given; saturation is the
/// caller's concern.
pub fn rollout<T: Scalar, E: Env<T>>(
    env: &E,
    x0: &[T],
    controls: &[T],
    params: &SimParams<T>,
) -> Result<Trajectory<T>> {
    let sd = env.state_dim();
    let cd = env.control_dim();
    if x0.len() != sd {
        return Err(Error::invalid("initial state dimension mismatch"));
    }
    if controls.len() % cd != 0 {
        return Err(Error::invalid("control sequence length is not a multiple of control_dim"));
    }
    let horizon = controls.len() / cd;
    let mut data = vec![T::zero(); (horizon + 1) * sd];
    data[..sd].copy_from_slice(x0);
    for t in 0..horizon {
        let (prev, rest) = data[t * sd..].split_at_mut(sd);
        env.step_into(prev, &controls[t * cd..(t + 1) * cd], params, &mut rest[..sd])
            .map_err(|e| Error::Dynamics { step: t, message: e.to_string() })?;
    }
    Ok(Trajectory { state_dim: sd, data })
}
