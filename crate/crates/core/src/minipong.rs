//! MiniPong: a small deterministic Pong-like environment.
//!
//! Observations are 210×160 RGB frames. The agent controls the right paddle,
//! a scripted opponent tracks the ball with a capped speed on the left.
//! Actions `0` and `1` leave the paddle still, `2` moves it up and `3` down.
//! Each point yields a reward of ±1; an episode ends when either side reaches
//! `points_to_win` or after `max_timesteps` steps.
//!
//! Physics runs on sub-pixel real coordinates and is only rasterized when a
//! frame is rendered. With stochastic frame skipping every step repeats the
//! chosen action for a number of ticks drawn from the episode's own stream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::imaging::{Frame, RawFrame, Region, CHANNELS, CROP_ROWS, RAW_HEIGHT, RAW_WIDTH};

pub const ACTION_COUNT: usize = 4;
pub const ACTION_NAMES: [&str; ACTION_COUNT] = ["NOP", "FIRE", "UP", "DOWN"];

const COURT_TOP: f64 = CROP_ROWS as f64;
const COURT_BOTTOM: f64 = RAW_HEIGHT as f64;
const OPPONENT_X: f64 = 16.0;
const AGENT_X: f64 = 140.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FrameSkip {
    None,
    Stochastic { min: u32, max: u32 },
}

impl FrameSkip {
    pub fn stochastic_default() -> Self {
        FrameSkip::Stochastic { min: 2, max: 4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub points_to_win: u32,
    pub max_timesteps: u64,
    pub frame_skip: FrameSkip,
    /// Horizontal ball speed at serve (pixels per tick).
    pub ball_speed: f64,
    /// Range of the vertical serve speed magnitude.
    pub serve_vy_min: f64,
    pub serve_vy_max: f64,
    /// Cap on the vertical ball speed.
    pub ball_max_vy: f64,
    /// Vertical speed added per unit of contact offset from the paddle center.
    pub paddle_spin: f64,
    pub paddle_speed: f64,
    pub opponent_speed: f64,
    pub paddle_height: f64,
    pub paddle_width: f64,
    pub ball_size: f64,
    pub agent_color: [u8; 3],
    pub opponent_color: [u8; 3],
    pub ball_color: [u8; 3],
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            points_to_win: 21,
            max_timesteps: 100_000,
            frame_skip: FrameSkip::None,
            ball_speed: 5.0,
            serve_vy_min: 1.0,
            serve_vy_max: 3.0,
            ball_max_vy: 5.0,
            paddle_spin: 3.0,
            paddle_speed: 5.0,
            opponent_speed: 1.5,
            paddle_height: 20.0,
            paddle_width: 6.0,
            ball_size: 4.0,
            agent_color: [40, 230, 40],
            opponent_color: [230, 60, 40],
            ball_color: [236, 236, 236],
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.points_to_win == 0 {
            return Err(invalid("points_to_win must be at least 1"));
        }
        if self.max_timesteps == 0 {
            return Err(invalid("max_timesteps must be at least 1"));
        }
        if let FrameSkip::Stochastic { min, max } = self.frame_skip {
            if min == 0 || min > max {
                return Err(invalid(format!("frame skip bounds {min}..{max} are invalid")));
            }
        }
        let positive = [
            ("ball_speed", self.ball_speed),
            ("paddle_speed", self.paddle_speed),
            ("paddle_height", self.paddle_height),
            ("paddle_width", self.paddle_width),
            ("ball_size", self.ball_size),
            ("ball_max_vy", self.ball_max_vy),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be positive and finite")));
            }
        }
        if !(self.opponent_speed >= 0.0) || self.paddle_spin.is_nan() {
            return Err(invalid("opponent_speed must be non-negative"));
        }
        if !(self.serve_vy_min >= 0.0 && self.serve_vy_min <= self.serve_vy_max) {
            return Err(invalid("serve speed range is invalid"));
        }
        if self.paddle_height >= COURT_BOTTOM - COURT_TOP || self.ball_size >= 20.0 {
            return Err(invalid("entities do not fit in the court"));
        }
        if [self.agent_color, self.opponent_color, self.ball_color]
            .iter()
            .any(|c| c.iter().all(|&v| v == 0))
        {
            return Err(invalid("entity colors must differ from the black background"));
        }
        Ok(())
    }
}

/// Physical state of the court.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub ball_x: f64,
    pub ball_y: f64,
    pub ball_vx: f64,
    pub ball_vy: f64,
    pub agent_y: f64,
    pub opponent_y: f64,
    pub agent_score: u32,
    pub opponent_score: u32,
    pub timestep: u64,
}

/// Result of one agent step.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub observation: RawFrame,
    pub reward: i32,
    pub done: bool,
}

/// One environment instance; single owner, one per episode.
#[derive(Debug, Clone)]
pub struct MiniPong {
    cfg: EnvConfig,
    state: EnvState,
    rng: ChaCha8Rng,
    done: bool,
    ticks: u64,
}

impl MiniPong {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        let mut env = Self {
            cfg,
            state: EnvState {
                ball_x: 0.0,
                ball_y: 0.0,
                ball_vx: 0.0,
                ball_vy: 0.0,
                agent_y: 0.0,
                opponent_y: 0.0,
                agent_score: 0,
                opponent_score: 0,
                timestep: 0,
            },
            rng: ChaCha8Rng::seed_from_u64(0),
            done: false,
            ticks: 0,
        };
        env.reset_state(0);
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Physics ticks simulated since the last reset.
    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    fn reset_state(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let paddle_y = (COURT_TOP + COURT_BOTTOM - self.cfg.paddle_height) / 2.0;
        self.state = EnvState {
            ball_x: 0.0,
            ball_y: 0.0,
            ball_vx: 0.0,
            ball_vy: 0.0,
            agent_y: paddle_y,
            opponent_y: paddle_y,
            agent_score: 0,
            opponent_score: 0,
            timestep: 0,
        };
        self.done = false;
        self.ticks = 0;
        self.serve();
    }

    /// Starts a new episode and returns its first frame.
    pub fn reset(&mut self, seed: u64) -> RawFrame {
        self.reset_state(seed);
        self.render()
    }

    /// [`MiniPong::reset`] without rendering.
    pub fn restart(&mut self, seed: u64) {
        self.reset_state(seed);
    }

    fn serve(&mut self) {
        let s = &mut self.state;
        s.ball_x = (RAW_WIDTH as f64 - self.cfg.ball_size) / 2.0;
        s.ball_y = (COURT_TOP + COURT_BOTTOM - self.cfg.ball_size) / 2.0;
        let toward_agent: bool = self.rng.random();
        s.ball_vx = if toward_agent { self.cfg.ball_speed } else { -self.cfg.ball_speed };
        let mag = if self.cfg.serve_vy_max > self.cfg.serve_vy_min {
            self.rng.random_range(self.cfg.serve_vy_min..self.cfg.serve_vy_max)
        } else {
            self.cfg.serve_vy_min
        };
        let up: bool = self.rng.random();
        s.ball_vy = if up { -mag } else { mag };
    }

    /// Applies `action` for one agent step (one or more physics ticks).
    /// Returns the accumulated reward and whether the episode is over.
    pub fn advance(&mut self, action: usize) -> Result<(i32, bool)> {
        if self.done {
            return Err(Error::Environment("step called on a finished episode".into()));
        }
        if action >= ACTION_COUNT {
            return Err(invalid(format!("action {action} out of range")));
        }
        let repeats = match self.cfg.frame_skip {
            FrameSkip::None => 1,
            FrameSkip::Stochastic { min, max } => self.rng.random_range(min..=max),
        };
        let mut reward = 0;
        for _ in 0..repeats {
            reward += self.tick(action);
            if self.state.agent_score >= self.cfg.points_to_win
                || self.state.opponent_score >= self.cfg.points_to_win
            {
                self.done = true;
                break;
            }
        }
        self.state.timestep += 1;
        if self.state.timestep >= self.cfg.max_timesteps {
            self.done = true;
        }
        Ok((reward, self.done))
    }

    pub fn step(&mut self, action: usize) -> Result<Step> {
        let (reward, done) = self.advance(action)?;
        Ok(Step {
            observation: self.render(),
            reward,
            done,
        })
    }

    fn tick(&mut self, action: usize) -> i32 {
        self.ticks += 1;
        let cfg = self.cfg;
        let s = &mut self.state;
        let max_paddle_y = COURT_BOTTOM - cfg.paddle_height;

        match action {
            2 => s.agent_y -= cfg.paddle_speed,
            3 => s.agent_y += cfg.paddle_speed,
            _ => {}
        }
        s.agent_y = s.agent_y.clamp(COURT_TOP, max_paddle_y);

        let target = s.ball_y + cfg.ball_size / 2.0 - cfg.paddle_height / 2.0;
        let delta = (target - s.opponent_y).clamp(-cfg.opponent_speed, cfg.opponent_speed);
        s.opponent_y = (s.opponent_y + delta).clamp(COURT_TOP, max_paddle_y);

        let (px, py) = (s.ball_x, s.ball_y);
        s.ball_x += s.ball_vx;
        s.ball_y += s.ball_vy;

        let max_ball_y = COURT_BOTTOM - cfg.ball_size;
        if s.ball_y < COURT_TOP {
            s.ball_y = 2.0 * COURT_TOP - s.ball_y;
            s.ball_vy = -s.ball_vy;
        } else if s.ball_y > max_ball_y {
            s.ball_y = 2.0 * max_ball_y - s.ball_y;
            s.ball_vy = -s.ball_vy;
        }

        let hit = |paddle_y: f64, y_at: f64| {
            y_at + cfg.ball_size >= paddle_y && y_at <= paddle_y + cfg.paddle_height
        };
        let spin = |paddle_y: f64, y_at: f64, vy: f64| {
            let offset = (y_at + cfg.ball_size / 2.0 - (paddle_y + cfg.paddle_height / 2.0))
                / ((cfg.paddle_height + cfg.ball_size) / 2.0);
            (vy + cfg.paddle_spin * offset).clamp(-cfg.ball_max_vy, cfg.ball_max_vy)
        };

        let agent_face = AGENT_X - cfg.ball_size;
        let opponent_face = OPPONENT_X + cfg.paddle_width;
        if s.ball_vx > 0.0 && px <= agent_face && s.ball_x > agent_face {
            let t = (agent_face - px) / (s.ball_x - px);
            let y_at = (py + (s.ball_y - py) * t).clamp(COURT_TOP, max_ball_y);
            if hit(s.agent_y, y_at) {
                s.ball_x = 2.0 * agent_face - s.ball_x;
                s.ball_vx = -s.ball_vx;
                s.ball_vy = spin(s.agent_y, y_at, s.ball_vy);
            }
        } else if s.ball_vx < 0.0 && px >= opponent_face && s.ball_x < opponent_face {
            let t = (px - opponent_face) / (px - s.ball_x);
            let y_at = (py + (s.ball_y - py) * t).clamp(COURT_TOP, max_ball_y);
            if hit(s.opponent_y, y_at) {
                s.ball_x = 2.0 * opponent_face - s.ball_x;
                s.ball_vx = -s.ball_vx;
                s.ball_vy = spin(s.opponent_y, y_at, s.ball_vy);
            }
        }

        if s.ball_x + cfg.ball_size < 0.0 {
            s.agent_score += 1;
            self.serve();
            1
        } else if s.ball_x > RAW_WIDTH as f64 {
            s.opponent_score += 1;
            self.serve();
            -1
        } else {
            0
        }
    }

    /// Rasterizes the current state.
    pub fn render(&self) -> RawFrame {
        let mut frame = Frame::filled(RAW_HEIGHT, RAW_WIDTH, 0u8);
        self.render_into(&mut frame);
        frame
    }

    /// Rasterizes into an existing 210×160 frame, overwriting all of it.
    pub fn render_into(&self, frame: &mut RawFrame) {
        debug_assert_eq!((frame.height(), frame.width()), (RAW_HEIGHT, RAW_WIDTH));
        frame.data_mut().fill(0);
        self.for_each_sprite(|r, color| fill_rect(frame, r, color));
    }

    /// Every solid rectangle of the current frame: score ticks, the two
    /// paddles and the ball, clipped to the screen.
    pub fn for_each_sprite(&self, mut f: impl FnMut(Region, [u8; 3])) {
        let cfg = &self.cfg;
        let s = &self.state;
        let clip = |y: usize, x: usize, h: usize, w: usize| {
            let y1 = (y + h).min(RAW_HEIGHT);
            let x1 = (x + w).min(RAW_WIDTH);
            Region::new(y.min(y1), x.min(x1), y1 - y.min(y1), x1 - x.min(x1))
        };

        // Score band: one 2-pixel tick per point, above the court.
        let band_color = [cfg.opponent_color, cfg.agent_color];
        for (side, (&score, x0)) in [s.opponent_score, s.agent_score]
            .iter()
            .zip([8usize, 88])
            .enumerate()
        {
            for p in 0..score.min(21) as usize {
                f(clip(10, x0 + 3 * p, 14, 2), band_color[side]);
            }
        }

        let ph = cfg.paddle_height.round() as usize;
        let pw = cfg.paddle_width.round() as usize;
        let bs = cfg.ball_size.round() as usize;
        f(
            clip(s.opponent_y.round() as usize, OPPONENT_X as usize, ph, pw),
            cfg.opponent_color,
        );
        f(clip(s.agent_y.round() as usize, AGENT_X as usize, ph, pw), cfg.agent_color);
        let bx = s.ball_x.round().max(0.0) as usize;
        let by = s.ball_y.round() as usize;
        f(clip(by, bx.min(RAW_WIDTH - 1), bs, bs), cfg.ball_color);
    }

    /// One CSV row of state scalars (see [`TRACE_HEADER`]).
    pub fn trace_row(&self, action: usize, reward: i32) -> String {
        let s = &self.state;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            s.timestep,
            s.ball_x,
            s.ball_y,
            s.ball_vx,
            s.ball_vy,
            s.agent_y,
            s.opponent_y,
            s.agent_score,
            s.opponent_score,
            action,
            reward
        )
    }
}

pub const TRACE_HEADER: &str =
    "timestep,ball_x,ball_y,ball_vx,ball_vy,agent_y,opponent_y,agent_score,opponent_score,action,reward";

fn fill_rect(frame: &mut RawFrame, r: Region, color: [u8; 3]) {
    let fw = frame.width();
    let data = frame.data_mut();
    for y in r.y..r.y + r.height {
        let row = &mut data[(y * fw + r.x) * CHANNELS..(y * fw + r.x + r.width) * CHANNELS];
        for px in row.chunks_exact_mut(CHANNELS) {
            px.copy_from_slice(&color);
        }
    }
}

/// A frame buffer that repaints only the rectangles touched since the last
/// draw. After [`Canvas::draw`] the frame equals [`MiniPong::render`].
#[derive(Debug, Clone)]
pub struct Canvas {
    frame: RawFrame,
    drawn: Vec<Region>,
}

impl Default for Canvas {
    fn default() -> Self {
        Self::new()
    }
}

impl Canvas {
    pub fn new() -> Self {
        Self {
            frame: Frame::filled(RAW_HEIGHT, RAW_WIDTH, 0),
            drawn: Vec::new(),
        }
    }

    pub fn draw(&mut self, env: &MiniPong) -> &RawFrame {
        for r in self.drawn.drain(..) {
            fill_rect(&mut self.frame, r, [0; 3]);
        }
        let (frame, drawn) = (&mut self.frame, &mut self.drawn);
        env.for_each_sprite(|r, color| {
            fill_rect(frame, r, color);
            drawn.push(r);
        });
        &self.frame
    }

    pub fn frame(&self) -> &RawFrame {
        &self.frame
    }

    /// Rectangles holding every non-zero pixel of the frame.
    pub fn regions(&self) -> &[Region] {
        &self.drawn
    }
}

/// Hand-written reference controller: move the paddle toward the ball.
pub fn tracking_policy(state: &EnvState, cfg: &EnvConfig) -> usize {
    let paddle_center = state.agent_y + cfg.paddle_height / 2.0;
    let ball_center = state.ball_y + cfg.ball_size / 2.0;
    if ball_center < paddle_center - 2.0 {
        2
    } else if ball_center > paddle_center + 2.0 {
        3
    } else {
        0
    }
}
