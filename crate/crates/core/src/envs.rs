//! Get-To-Goal: a bounded 2D arena with a player and a goal, in a family of
//! control variants; plus a two-armed bandit used to sanity check the trainer.
//!
//! Directions use compass degrees: 0 is straight up, 90 straight right,
//! 180 straight down. The unit vector for angle `θ` is `(sin θ, cos θ)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::EnvError;
use crate::spaces::{Action, ActionSpace, Bound};

/// Angles are resolved on a 2^-20 degree grid before trigonometry, so that
/// one direction reached through different arithmetic moves identically.
const ANGLE_GRID: f64 = (1u64 << 20) as f64;

pub fn wrap_degrees(theta: f64) -> f64 {
    let w = theta.rem_euclid(360.0);
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}

fn snap_degrees(theta: f64) -> f64 {
    wrap_degrees((wrap_degrees(theta) * ANGLE_GRID).round() / ANGLE_GRID)
}

/// Unit vector for a compass angle in degrees.
pub fn direction(theta_deg: f64) -> [f64; 2] {
    let r = snap_degrees(theta_deg).to_radians();
    [r.sin(), r.cos()]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionMode {
    Discrete,
    MultiDiscrete,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BogusBase {
    DiscreteXy,
    MultidiscreteXy,
}

fn default_true() -> bool {
    true
}

/// How the agent's action moves the player.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlVariant {
    /// Four independent buttons Up, Down, Left, Right.
    MultidiscreteXy,
    /// One of no-op, Up, Down, Left, Right.
    DiscreteXy,
    /// Direction of the next move in degrees.
    ContinuousAngle,
    /// One of no-op, forward, [backward], turn left, turn right,
    /// [strafe left, strafe right].
    TankDiscrete {
        #[serde(default = "default_true")]
        allow_backward: bool,
        #[serde(default)]
        allow_strafe: bool,
    },
    /// Movement {none, forward, [backward]} x turning {none, left, right}
    /// [x strafe {none, left, right}].
    TankMultidiscrete {
        #[serde(default = "default_true")]
        allow_backward: bool,
        #[serde(default)]
        allow_strafe: bool,
    },
    /// `k` directions equally spaced on the unit circle.
    ExtraDirections { k: usize, mode: ActionMode },
    /// A base XY space with `k` appended actions that do nothing.
    BogusActions { base: BogusBase, k: usize },
}

impl ControlVariant {
    pub fn action_space(&self) -> ActionSpace {
        match *self {
            ControlVariant::MultidiscreteXy => ActionSpace::MultiDiscrete(vec![2; 4]),
            ControlVariant::DiscreteXy => ActionSpace::Discrete(5),
            ControlVariant::ContinuousAngle => ActionSpace::Continuous(vec![Bound {
                low: 0.0,
                high: 360.0,
            }]),
            ControlVariant::TankDiscrete {
                allow_backward,
                allow_strafe,
            } => ActionSpace::Discrete(tank_moves(allow_backward, allow_strafe).len()),
            ControlVariant::TankMultidiscrete {
                allow_backward,
                allow_strafe,
            } => {
                let mut arities = vec![if allow_backward { 3 } else { 2 }, 3];
                if allow_strafe {
                    arities.push(3);
                }
                ActionSpace::MultiDiscrete(arities)
            }
            ControlVariant::ExtraDirections { k, mode } => match mode {
                ActionMode::Discrete => ActionSpace::Discrete(k),
                ActionMode::MultiDiscrete => ActionSpace::MultiDiscrete(vec![2; k]),
            },
            ControlVariant::BogusActions { base, k } => match base {
                BogusBase::DiscreteXy => ActionSpace::Discrete(5 + k),
                BogusBase::MultidiscreteXy => ActionSpace::MultiDiscrete(vec![2; 4 + k]),
            },
        }
    }

    fn validate(&self) -> Result<(), EnvError> {
        match *self {
            ControlVariant::ExtraDirections { k: 0, .. } => Err(EnvError::InvalidParams(
                "extra_directions needs at least one direction".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn is_tank(&self) -> bool {
        matches!(
            self,
            ControlVariant::TankDiscrete { .. } | ControlVariant::TankMultidiscrete { .. }
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum TankMove {
    Noop,
    Forward,
    Backward,
    TurnLeft,
    TurnRight,
    StrafeLeft,
    StrafeRight,
}

fn tank_moves(allow_backward: bool, allow_strafe: bool) -> Vec<TankMove> {
    let mut moves = vec![TankMove::Noop, TankMove::Forward];
    if allow_backward {
        moves.push(TankMove::Backward);
    }
    moves.extend([TankMove::TurnLeft, TankMove::TurnRight]);
    if allow_strafe {
        moves.extend([TankMove::StrafeLeft, TankMove::StrafeRight]);
    }
    moves
}

// Up, Down, Left, Right
const XY_BUTTONS: [[f64; 2]; 4] = [[0.0, 1.0], [0.0, -1.0], [-1.0, 0.0], [1.0, 0.0]];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GetToGoalParams {
    #[serde(default = "GetToGoalParams::default_half_width")]
    pub arena_half_width: f64,
    #[serde(default = "GetToGoalParams::default_step_size")]
    pub step_size: f64,
    #[serde(default = "GetToGoalParams::default_goal_radius")]
    pub goal_radius: f64,
    #[serde(default = "GetToGoalParams::default_timeout")]
    pub timeout_steps: u32,
    #[serde(default = "GetToGoalParams::default_turn_rate")]
    pub turn_rate_deg: f64,
    pub variant: ControlVariant,
}

impl GetToGoalParams {
    fn default_half_width() -> f64 {
        1.0
    }
    fn default_step_size() -> f64 {
        0.05
    }
    fn default_goal_radius() -> f64 {
        0.1
    }
    fn default_timeout() -> u32 {
        100
    }
    fn default_turn_rate() -> f64 {
        15.0
    }

    pub fn new(variant: ControlVariant) -> Self {
        Self {
            arena_half_width: Self::default_half_width(),
            step_size: Self::default_step_size(),
            goal_radius: Self::default_goal_radius(),
            timeout_steps: Self::default_timeout(),
            turn_rate_deg: Self::default_turn_rate(),
            variant,
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let h = self.arena_half_width;
        let bad = |msg: &str| Err(EnvError::InvalidParams(msg.into()));
        if !(h.is_finite() && h > 0.0) {
            return bad("arena_half_width must be positive");
        }
        if !(self.step_size > 0.0 && self.step_size < h) {
            return bad("step_size must lie in (0, arena_half_width)");
        }
        if !(self.goal_radius > 0.0 && self.goal_radius < h) {
            return bad("goal_radius must lie in (0, arena_half_width)");
        }
        if self.timeout_steps == 0 {
            return bad("timeout_steps must be at least 1");
        }
        if !(self.turn_rate_deg > 0.0 && self.turn_rate_deg <= 180.0) {
            return bad("turn_rate_deg must lie in (0, 180]");
        }
        self.variant.validate()
    }

    pub fn action_space(&self) -> ActionSpace {
        self.variant.action_space()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvState {
    pub player: [f64; 2],
    pub heading_deg: f64,
    pub goal: [f64; 2],
    pub steps_elapsed: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Termination {
    None,
    Goal,
    Timeout,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub cause: Termination,
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub fn observe(state: &EnvState, params: &GetToGoalParams) -> Vec<f64> {
    let scale = 2.0 * params.arena_half_width;
    let phi = state.heading_deg.to_radians();
    vec![
        (state.goal[0] - state.player[0]) / scale,
        (state.goal[1] - state.player[1]) / scale,
        phi.cos(),
        phi.sin(),
    ]
}

pub fn reset<R: Rng + ?Sized>(params: &GetToGoalParams, rng: &mut R) -> (EnvState, Vec<f64>) {
    let h = params.arena_half_width;
    let point = |rng: &mut R| [rng.random_range(-h..=h), rng.random_range(-h..=h)];
    let (player, goal) = loop {
        let player = point(rng);
        let goal = point(rng);
        if distance(player, goal) > 2.0 * params.goal_radius {
            break (player, goal);
        }
    };
    let state = EnvState {
        player,
        heading_deg: 0.0,
        goal,
        steps_elapsed: 0,
    };
    let obs = observe(&state, params);
    (state, obs)
}

fn invalid(action: &Action, space: &ActionSpace) -> EnvError {
    EnvError::InvalidAction {
        action: action.to_string(),
        space: space.to_string(),
    }
}

fn sum_unit(vectors: impl IntoIterator<Item = [f64; 2]>) -> Option<[f64; 2]> {
    let mut s = [0.0, 0.0];
    let mut any = false;
    for v in vectors {
        s[0] += v[0];
        s[1] += v[1];
        any = true;
    }
    if !any {
        return None;
    }
    let norm = s[0].hypot(s[1]);
    // opposing buttons cancel out
    (norm > 1e-12).then(|| [s[0] / norm, s[1] / norm])
}

/// Heading change in degrees and unit movement direction for an action.
fn command(
    params: &GetToGoalParams,
    heading: f64,
    action: &Action,
) -> Result<(f64, Option<[f64; 2]>), EnvError> {
    let space = params.action_space();
    let turn = params.turn_rate_deg;
    let pressed = |v: &[usize]| -> Vec<usize> {
        v.iter()
            .enumerate()
            .filter(|(_, &x)| x == 1)
            .map(|(i, _)| i)
            .collect()
    };
    match (params.variant, action) {
        (ControlVariant::ContinuousAngle, Action::Reals(v)) if v.len() == 1 && v[0].is_finite() => {
            Ok((0.0, sum_unit([direction(v[0])])))
        }
        (_, a) if !space.contains(a) => Err(invalid(a, &space)),
        (ControlVariant::DiscreteXy, Action::Index(i)) => {
            Ok((0.0, (*i > 0).then(|| XY_BUTTONS[i - 1]).and_then(|v| sum_unit([v]))))
        }
        (ControlVariant::MultidiscreteXy, Action::Indices(v)) => {
            Ok((0.0, sum_unit(pressed(v).into_iter().map(|b| XY_BUTTONS[b]))))
        }
        (ControlVariant::BogusActions { base, .. }, a) => match (base, a) {
            (BogusBase::DiscreteXy, Action::Index(i)) => Ok((
                0.0,
                (1..=4).contains(i).then(|| XY_BUTTONS[i - 1]).and_then(|v| sum_unit([v])),
            )),
            (BogusBase::MultidiscreteXy, Action::Indices(v)) => Ok((
                0.0,
                sum_unit(pressed(&v[..4]).into_iter().map(|b| XY_BUTTONS[b])),
            )),
            _ => Err(invalid(a, &space)),
        },
        (ControlVariant::ExtraDirections { k, .. }, a) => {
            let angle = |i: usize| 360.0 * i as f64 / k as f64;
            match a {
                Action::Index(i) => Ok((0.0, sum_unit([direction(angle(*i))]))),
                Action::Indices(v) => Ok((
                    0.0,
                    sum_unit(pressed(v).into_iter().map(|i| direction(angle(i)))),
                )),
                _ => Err(invalid(a, &space)),
            }
        }
        (
            ControlVariant::TankDiscrete {
                allow_backward,
                allow_strafe,
            },
            Action::Index(i),
        ) => {
            let mv = tank_moves(allow_backward, allow_strafe)[*i];
            let (dturn, fwd, side) = match mv {
                TankMove::Noop => (0.0, 0, 0),
                TankMove::Forward => (0.0, 1, 0),
                TankMove::Backward => (0.0, -1, 0),
                TankMove::TurnLeft => (-turn, 0, 0),
                TankMove::TurnRight => (turn, 0, 0),
                TankMove::StrafeLeft => (0.0, 0, -1),
                TankMove::StrafeRight => (0.0, 0, 1),
            };
            Ok((dturn, tank_direction(heading + dturn, fwd, side)))
        }
        (
            ControlVariant::TankMultidiscrete {
                allow_backward: _,
                allow_strafe,
            },
            Action::Indices(v),
        ) => {
            let fwd = match v[0] {
                1 => 1,
                2 => -1,
                _ => 0,
            };
            let dturn = match v[1] {
                1 => -turn,
                2 => turn,
                _ => 0.0,
            };
            let side = match (allow_strafe, v.get(2)) {
                (true, Some(1)) => -1,
                (true, Some(2)) => 1,
                _ => 0,
            };
            Ok((dturn, tank_direction(heading + dturn, fwd, side)))
        }
        (_, a) => Err(invalid(a, &space)),
    }
}

/// Sum of forward/backward and strafe vectors relative to `heading`.
fn tank_direction(heading: f64, forward: i32, side: i32) -> Option<[f64; 2]> {
    let mut parts = Vec::with_capacity(2);
    if forward != 0 {
        let d = direction(heading);
        let s = forward as f64;
        parts.push([s * d[0], s * d[1]]);
    }
    if side != 0 {
        parts.push(direction(heading + 90.0 * side as f64));
    }
    sum_unit(parts)
}

/// Advances the game by one step. Continuous angles may be any finite real;
/// they are wrapped modulo 360.
pub fn step(
    state: &EnvState,
    params: &GetToGoalParams,
    action: &Action,
) -> Result<(EnvState, StepResult), EnvError> {
    let (dturn, dir) = command(params, state.heading_deg, action)?;
    let h = params.arena_half_width;
    let mut next = *state;
    next.heading_deg = wrap_degrees(state.heading_deg + dturn);
    if let Some(d) = dir {
        next.player = [
            (state.player[0] + params.step_size * d[0]).clamp(-h, h),
            (state.player[1] + params.step_size * d[1]).clamp(-h, h),
        ];
    }
    next.steps_elapsed += 1;
    let cause = if distance(next.player, next.goal) <= params.goal_radius {
        Termination::Goal
    } else if next.steps_elapsed >= params.timeout_steps {
        Termination::Timeout
    } else {
        Termination::None
    };
    let result = StepResult {
        observation: observe(&next, params),
        reward: if cause == Termination::Goal { 1.0 } else { 0.0 },
        done: cause != Termination::None,
        cause,
    };
    Ok((next, result))
}

/// Reward of the diagnostic bandit: arm 1 pays 1, arm 0 pays nothing.
pub fn bandit_step(arm: usize) -> f64 {
    if arm == 1 {
        1.0
    } else {
        0.0
    }
}

/// An environment the trainer can drive.
pub trait Environment {
    fn action_space(&self) -> ActionSpace;
    fn observation_dim(&self) -> usize;
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64>;
    fn step(&mut self, action: &Action, rng: &mut ChaCha8Rng) -> Result<StepResult, EnvError>;
}

#[derive(Clone, Debug)]
pub struct GetToGoal {
    params: GetToGoalParams,
    state: EnvState,
}

impl GetToGoal {
    pub fn new(params: GetToGoalParams) -> Result<Self, EnvError> {
        params.validate()?;
        Ok(Self {
            params,
            state: EnvState {
                player: [0.0, 0.0],
                heading_deg: 0.0,
                goal: [0.0, 0.0],
                steps_elapsed: 0,
            },
        })
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn params(&self) -> &GetToGoalParams {
        &self.params
    }
}

impl Environment for GetToGoal {
    fn action_space(&self) -> ActionSpace {
        self.params.action_space()
    }

    fn observation_dim(&self) -> usize {
        4
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let (state, obs) = reset(&self.params, rng);
        self.state = state;
        obs
    }

    fn step(&mut self, action: &Action, _rng: &mut ChaCha8Rng) -> Result<StepResult, EnvError> {
        let (state, result) = step(&self.state, &self.params, action)?;
        self.state = state;
        Ok(result)
    }
}

/// Single-step episodes with a constant observation.
#[derive(Clone, Debug, Default)]
pub struct Bandit;

impl Environment for Bandit {
    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete(2)
    }

    fn observation_dim(&self) -> usize {
        1
    }

    fn reset(&mut self, _rng: &mut ChaCha8Rng) -> Vec<f64> {
        vec![1.0]
    }

    fn step(&mut self, action: &Action, _rng: &mut ChaCha8Rng) -> Result<StepResult, EnvError> {
        match action {
            Action::Index(arm @ (0 | 1)) => Ok(StepResult {
                observation: vec![1.0],
                reward: bandit_step(*arm),
                done: true,
                cause: Termination::Timeout,
            }),
            other => Err(invalid(other, &ActionSpace::Discrete(2))),
        }
    }
}

/// Environment description used by experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    GetToGoal(GetToGoalParams),
    Bandit,
}

impl EnvSpec {
    pub fn get_to_goal(variant: ControlVariant) -> Self {
        EnvSpec::GetToGoal(GetToGoalParams::new(variant))
    }

    pub fn build(&self) -> Result<AnyEnv, EnvError> {
        match self {
            EnvSpec::GetToGoal(params) => GetToGoal::new(*params).map(AnyEnv::GetToGoal),
            EnvSpec::Bandit => Ok(AnyEnv::Bandit(Bandit)),
        }
    }

    pub fn action_space(&self) -> ActionSpace {
        match self {
            EnvSpec::GetToGoal(params) => params.action_space(),
            EnvSpec::Bandit => ActionSpace::Discrete(2),
        }
    }

    /// Coarse family label; only results within one family are comparable.
    pub fn family(&self) -> &'static str {
        match self {
            EnvSpec::GetToGoal(_) => "get_to_goal",
            EnvSpec::Bandit => "bandit",
        }
    }
}

#[derive(Clone, Debug)]
pub enum AnyEnv {
    GetToGoal(GetToGoal),
    Bandit(Bandit),
}

impl Environment for AnyEnv {
    fn action_space(&self) -> ActionSpace {
        match self {
            AnyEnv::GetToGoal(e) => e.action_space(),
            AnyEnv::Bandit(e) => e.action_space(),
        }
    }

    fn observation_dim(&self) -> usize {
        match self {
            AnyEnv::GetToGoal(e) => e.observation_dim(),
            AnyEnv::Bandit(e) => e.observation_dim(),
        }
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            AnyEnv::GetToGoal(e) => e.reset(rng),
            AnyEnv::Bandit(e) => e.reset(rng),
        }
    }

    fn step(&mut self, action: &Action, rng: &mut ChaCha8Rng) -> Result<StepResult, EnvError> {
        match self {
            AnyEnv::GetToGoal(e) => e.step(action, rng),
            AnyEnv::Bandit(e) => e.step(action, rng),
        }
    }
}

/// `n` independent environments stepped in lockstep. Environment `i` draws
/// from its own stream seeded with `seed + i`; finished episodes reset
/// immediately and report the fresh observation.
#[derive(Clone, Debug)]
pub struct VecEnv<E> {
    envs: Vec<E>,
    rngs: Vec<ChaCha8Rng>,
    observations: Vec<Vec<f64>>,
}

impl<E: Environment> VecEnv<E> {
    pub fn new(envs: Vec<E>, seed: u64) -> Self {
        let mut rngs: Vec<ChaCha8Rng> = (0..envs.len())
            .map(|i| ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64)))
            .collect();
        let mut envs = envs;
        let observations = envs
            .iter_mut()
            .zip(rngs.iter_mut())
            .map(|(e, r)| e.reset(r))
            .collect();
        Self {
            envs,
            rngs,
            observations,
        }
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn envs(&self) -> &[E] {
        &self.envs
    }

    /// Current observation of every environment.
    pub fn observations(&self) -> &[Vec<f64>] {
        &self.observations
    }

    pub fn step(&mut self, actions: &[Action]) -> Result<Vec<StepResult>, EnvError> {
        if actions.len() != self.envs.len() {
            return Err(EnvError::ActionCount {
                expected: self.envs.len(),
                got: actions.len(),
            });
        }
        let mut results = Vec::with_capacity(actions.len());
        for (i, action) in actions.iter().enumerate() {
            let rng = &mut self.rngs[i];
            let env = &mut self.envs[i];
            let mut r = env.step(action, rng).map_err(|e| EnvError::InEnv {
                env: i,
                source: Box::new(e),
            })?;
            if r.done {
                r.observation = env.reset(rng);
            }
            self.observations[i].clone_from(&r.observation);
            results.push(r);
        }
        Ok(results)
    }
}
