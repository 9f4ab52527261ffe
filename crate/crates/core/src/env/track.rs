use std::path::Path;

use rand::Rng;

use super::{seeded_rng, wrap_angle, EnvSpec, Environment, EpisodeClock, Observation, StepResult};
use crate::error::{Error, Result};

const DT: f64 = 0.05;
const SUBSTEPS: usize = 40;
const HORIZON: usize = 1000;
/// Path curvature (1/m) per unit of steering command.
pub const STEER_CURVATURE: f64 = 0.2;
/// Longitudinal acceleration (m/s^2) at full throttle.
pub const MAX_ACCEL: f64 = 6.0;
const OFF_CENTER_PENALTY: f64 = 1.0;

/// Closed centerline polyline with a constant track width.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackSpec {
    pub waypoints: Vec<[f64; 2]>,
    pub width: f64,
    pub friction: f64,
}

/// Closest point on the centerline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackProjection {
    pub segment: usize,
    /// Signed lateral offset from the centerline, positive to the left.
    pub lateral: f64,
    /// Heading of the closest segment.
    pub axis_angle: f64,
}

impl TrackSpec {
    pub fn new(waypoints: Vec<[f64; 2]>, width: f64, friction: f64) -> Result<Self> {
        let spec = TrackSpec {
            waypoints,
            width,
            friction,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Elliptical oval, 30 m by 20 m semi-axes, 48 waypoints, 8 m wide.
    pub fn oval() -> Self {
        let n = 48;
        let waypoints = (0..n)
            .map(|i| {
                let a = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                [30.0 * a.cos(), 20.0 * a.sin()]
            })
            .collect();
        TrackSpec {
            waypoints,
            width: 8.0,
            friction: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.waypoints.len();
        if n < 4 {
            return Err(Error::Config(format!("track needs at least 4 waypoints, got {n}")));
        }
        if !(self.width > 0.0) || !self.width.is_finite() {
            return Err(Error::Config("track width must be positive".into()));
        }
        if !(self.friction >= 0.0) || !self.friction.is_finite() {
            return Err(Error::Config("track friction must be non-negative".into()));
        }
        if self.waypoints.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::Config("track waypoint is not finite".into()));
        }
        for i in 0..n {
            let (a, b) = self.segment(i);
            if a == b {
                return Err(Error::Config(format!("track segment {i} has zero length")));
            }
        }
        for i in 0..n {
            for j in (i + 2)..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                let (a, b) = self.segment(i);
                let (c, d) = self.segment(j);
                if segments_intersect(a, b, c, d) {
                    return Err(Error::Config(format!(
                        "track polyline is not simple: segments {i} and {j} cross"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Parses `width W friction F` followed by one `x y` pair per line.
    /// Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let (ln, header) = lines
            .next()
            .ok_or_else(|| Error::Config("empty track file".into()))?;
        let toks: Vec<&str> = header.split_whitespace().collect();
        let (width, friction) = match toks.as_slice() {
            ["width", w, "friction", f] => (parse_num(w, ln)?, parse_num(f, ln)?),
            _ => {
                return Err(Error::Config(format!(
                    "line {ln}: expected header 'width W friction F'"
                )))
            }
        };
        let mut waypoints = Vec::new();
        for (ln, line) in lines {
            let toks: Vec<&str> = line.split_whitespace().collect();
            match toks.as_slice() {
                [x, y] => waypoints.push([parse_num(x, ln)?, parse_num(y, ln)?]),
                _ => return Err(Error::Config(format!("line {ln}: expected 'x y'"))),
            }
        }
        TrackSpec::new(waypoints, width, friction)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("width {:?} friction {:?}\n", self.width, self.friction);
        for [x, y] in &self.waypoints {
            s.push_str(&format!("{x:?} {y:?}\n"));
        }
        s
    }

    fn segment(&self, i: usize) -> ([f64; 2], [f64; 2]) {
        let n = self.waypoints.len();
        (self.waypoints[i], self.waypoints[(i + 1) % n])
    }

    /// Projects a point onto the nearest centerline segment.
    pub fn project(&self, p: [f64; 2]) -> TrackProjection {
        let mut best = TrackProjection {
            segment: 0,
            lateral: f64::INFINITY,
            axis_angle: 0.0,
        };
        let mut best_d2 = f64::INFINITY;
        for i in 0..self.waypoints.len() {
            let (a, b) = self.segment(i);
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let len2 = dx * dx + dy * dy;
            let s = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0);
            let (cx, cy) = (a[0] + s * dx, a[1] + s * dy);
            let d2 = (p[0] - cx).powi(2) + (p[1] - cy).powi(2);
            if d2 < best_d2 {
                best_d2 = d2;
                let len = len2.sqrt();
                let cross = (dx * (p[1] - a[1]) - dy * (p[0] - a[0])) / len;
                best = TrackProjection {
                    segment: i,
                    lateral: d2.sqrt().copysign(cross),
                    axis_angle: dy.atan2(dx),
                };
            }
        }
        best
    }

    /// Point at arc-length fraction `u` in `[0, 1)` along the centerline,
    /// with the heading of its segment.
    pub fn point_at(&self, u: f64) -> ([f64; 2], f64) {
        let n = self.waypoints.len();
        let lens: Vec<f64> = (0..n)
            .map(|i| {
                let (a, b) = self.segment(i);
                ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
            })
            .collect();
        let total: f64 = lens.iter().sum();
        let mut rem = u.rem_euclid(1.0) * total;
        for (i, len) in lens.iter().enumerate() {
            if rem <= *len || i == n - 1 {
                let (a, b) = self.segment(i);
                let s = (rem / len).min(1.0);
                let p = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
                return (p, (b[1] - a[1]).atan2(b[0] - a[0]));
            }
            rem -= len;
        }
        unreachable!()
    }
}

fn parse_num(tok: &str, line: usize) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| Error::Config(format!("line {line}: '{tok}' is not a number")))
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

fn segments_intersect(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let (o1, o2, o3, o4) = (orient(a, b, c), orient(a, b, d), orient(c, d, a), orient(c, d, b));
    if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
        return true;
    }
    (o1 == 0.0 && on_segment(a, b, c))
        || (o2 == 0.0 && on_segment(a, b, d))
        || (o3 == 0.0 && on_segment(c, d, a))
        || (o4 == 0.0 && on_segment(c, d, b))
}

/// Kinematic car on a closed track.
///
/// State `(x, y, heading, speed)`; continuous dynamics
/// `x' = v cos psi`, `y' = v sin psi`, `psi' = 0.2 v steer`, `v' = 6 throttle - friction v`.
/// Observation: angle to the track axis, lateral offset normalised by half
/// the width, and speed along the axis. Reward is `v cos(angle) - |offset|`;
/// the episode terminates when the car leaves the track.
#[derive(Debug, Clone)]
pub struct TrackSim {
    spec: EnvSpec,
    track: TrackSpec,
    x: f64,
    y: f64,
    heading: f64,
    speed: f64,
    clock: EpisodeClock,
}

impl TrackSim {
    pub fn new(track: TrackSpec) -> Result<Self> {
        track.validate()?;
        let mut sim = TrackSim {
            spec: EnvSpec::new(
                "track",
                &["axis_angle", "center_offset", "axis_speed"],
                (vec![-std::f64::consts::PI, -1.0, 0.0], vec![std::f64::consts::PI, 1.0, 12.0]),
                vec![-1.0, 0.0],
                vec![1.0, 1.0],
                DT,
                HORIZON,
            ),
            track,
            x: 0.0,
            y: 0.0,
            heading: 0.0,
            speed: 0.0,
            clock: EpisodeClock::default(),
        };
        sim.reset(0);
        Ok(sim)
    }

    pub fn track(&self) -> &TrackSpec {
        &self.track
    }

    pub fn derivative(state: &[f64; 4], steer: f64, throttle: f64, friction: f64) -> [f64; 4] {
        let [_, _, psi, v] = *state;
        [
            v * psi.cos(),
            v * psi.sin(),
            STEER_CURVATURE * v * steer,
            MAX_ACCEL * throttle - friction * v,
        ]
    }

    fn on_track(&self) -> bool {
        self.track.project([self.x, self.y]).lateral.abs() < 0.5 * self.track.width
    }
}

impl Environment for TrackSim {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Observation {
        let mut rng = seeded_rng(seed);
        let (p, axis) = self.track.point_at(0.0);
        let offset = rng.random_range(-0.1..0.1) * 0.5 * self.track.width;
        self.x = p[0] - offset * axis.sin();
        self.y = p[1] + offset * axis.cos();
        self.heading = axis + rng.random_range(-0.05..0.05);
        self.speed = 0.0;
        self.clock = EpisodeClock::default();
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        self.clock.check(&self.spec, action)?;
        let steer = action[0].clamp(-1.0, 1.0);
        let throttle = action[1].clamp(0.0, 1.0);
        let h = DT / SUBSTEPS as f64;
        let mu = self.track.friction;
        for _ in 0..SUBSTEPS {
            self.speed += h * (MAX_ACCEL * throttle - mu * self.speed);
            self.heading += h * STEER_CURVATURE * self.speed * steer;
            self.x += h * self.speed * self.heading.cos();
            self.y += h * self.speed * self.heading.sin();
        }
        let obs = self.observe();
        let reward = self.speed * obs[0].cos() - OFF_CENTER_PENALTY * obs[1].abs();
        let off = !self.on_track();
        let (done, truncated) = self.clock.tick(&self.spec, off);
        Ok(StepResult {
            obs,
            reward,
            done,
            truncated,
        })
    }

    fn observe(&self) -> Observation {
        let proj = self.track.project([self.x, self.y]);
        let angle = wrap_angle(self.heading - proj.axis_angle);
        vec![
            angle,
            proj.lateral / (0.5 * self.track.width),
            self.speed * angle.cos(),
        ]
    }

    fn state(&self) -> Vec<f64> {
        vec![self.x, self.y, self.heading, self.speed]
    }

    fn set_state(&mut self, state: &[f64]) -> Result<()> {
        if state.len() != 4 || state.iter().any(|s| !s.is_finite()) {
            return Err(Error::Contract("track state is (x, y, heading, speed)".into()));
        }
        self.x = state[0];
        self.y = state[1];
        self.heading = state[2];
        self.speed = state[3];
        self.clock = EpisodeClock::default();
        Ok(())
    }

    fn clone_box(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}
