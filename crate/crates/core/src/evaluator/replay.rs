use serde::{Deserialize, Serialize};

use super::{EvalError, MemoryBuffer, PlannedTrajectory, Planner};
use crate::coarsen::Point;
use crate::corpus::{scene_dim, AgentTrack, Archetype, ScenarioRecord, AGENT_FIELDS, DT, LANE_WIDTH, SCENE_HEADER};
use crate::reasoner::{ReasonerError, ReasonerOutput};

pub const DEFAULT_REUSE_THRESHOLD: f64 = 0.95;

/// A constant-velocity agent in world coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimAgent {
    pub pos: Point,
    pub vel: Point,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Route polyline in world coordinates; the ego starts at its first
    /// vertex facing along the first segment.
    pub route: Vec<Point>,
    pub speed: f64,
    /// Maximum number of planning steps.
    pub steps: usize,
    pub horizon: usize,
    pub k_agents: usize,
    pub agents: Vec<SimAgent>,
    /// Minimum cosine similarity for reusing cached reasoning.
    pub reuse_threshold: f64,
    pub ego_radius: f64,
    /// Lateral distance from the route beyond which the ego is off-route.
    pub route_tolerance: f64,
    /// Distance to the route end that counts as arrival.
    pub goal_tolerance: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            route: vec![[0.0, 0.0], [100.0, 0.0]],
            speed: 8.0,
            steps: 40,
            horizon: 6,
            k_agents: 4,
            agents: Vec::new(),
            reuse_threshold: DEFAULT_REUSE_THRESHOLD,
            ego_radius: super::DEFAULT_EGO_RADIUS,
            route_tolerance: LANE_WIDTH,
            goal_tolerance: 1.0,
        }
    }
}

impl SimConfig {
    fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: &str| Err(EvalError::Sim(m.to_string()));
        if self.route.len() < 2 {
            return bad("route needs at least two points");
        }
        if self.route.windows(2).any(|w| dist(w[0], w[1]) <= 0.0) {
            return bad("route has a zero-length segment");
        }
        if !(self.speed > 0.0) || self.horizon == 0 || self.k_agents == 0 {
            return bad("speed, horizon and k_agents must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub completion_fraction: f64,
    pub infractions: usize,
    /// `completion_fraction · 0.5^infractions`.
    pub score: f64,
    pub steps: usize,
    pub reasoner_calls: usize,
    /// Ego world positions, starting position first.
    pub trajectory: Vec<Point>,
    /// Scene key and the reasoning used at every step.
    pub visited: Vec<(Vec<f64>, ReasonerOutput)>,
}

/// Plans the simulator's expert trajectory, which follows the route at the
/// reference speed.
#[derive(Clone, Copy, Debug, Default)]
pub struct RouteFollower;

impl Planner for RouteFollower {
    fn plan(&self, inputs: &[(&ScenarioRecord, &ReasonerOutput)]) -> Result<Vec<PlannedTrajectory>, EvalError> {
        super::GtReplay.plan(inputs)
    }
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn wrap(a: f64) -> f64 {
    let t = std::f64::consts::TAU;
    (a + std::f64::consts::PI).rem_euclid(t) - std::f64::consts::PI
}

struct Route {
    pts: Vec<Point>,
    cum: Vec<f64>,
}

impl Route {
    fn new(pts: &[Point]) -> Self {
        let mut cum = vec![0.0];
        for w in pts.windows(2) {
            cum.push(cum.last().unwrap() + dist(w[0], w[1]));
        }
        Self { pts: pts.to_vec(), cum }
    }

    fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    fn heading(&self, seg: usize) -> f64 {
        let (a, b) = (self.pts[seg], self.pts[seg + 1]);
        (b[1] - a[1]).atan2(b[0] - a[0])
    }

    /// Arc length, signed lateral offset (left positive) and segment index
    /// of the closest route point.
    fn project(&self, p: Point) -> (f64, f64, usize) {
        let mut best = (f64::INFINITY, 0.0, 0.0, 0);
        for seg in 0..self.pts.len() - 1 {
            let (a, b) = (self.pts[seg], self.pts[seg + 1]);
            let len = self.cum[seg + 1] - self.cum[seg];
            let (ux, uy) = ((b[0] - a[0]) / len, (b[1] - a[1]) / len);
            let (dx, dy) = (p[0] - a[0], p[1] - a[1]);
            let along = (dx * ux + dy * uy).clamp(0.0, len);
            let q = [a[0] + along * ux, a[1] + along * uy];
            let d = dist(p, q);
            if d < best.0 {
                best = (d, self.cum[seg] + along, ux * dy - uy * dx, seg);
            }
        }
        (best.1, best.2, best.3)
    }

    /// Point at arc length `s`, extrapolated along the end segments.
    fn at(&self, s: f64) -> Point {
        let last = self.pts.len() - 2;
        let seg = (0..=last).find(|&i| s <= self.cum[i + 1]).unwrap_or(last);
        let (a, b) = (self.pts[seg], self.pts[seg + 1]);
        let len = self.cum[seg + 1] - self.cum[seg];
        let u = (s - self.cum[seg]) / len;
        [a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1])]
    }
}

struct Ego {
    pos: Point,
    heading: f64,
    speed: f64,
}

impl Ego {
    fn to_local(&self, p: Point) -> Point {
        let (s, c) = self.heading.sin_cos();
        let (dx, dy) = (p[0] - self.pos[0], p[1] - self.pos[1]);
        [c * dx + s * dy, -s * dx + c * dy]
    }

    fn rotate_to_local(&self, v: Point) -> Point {
        let (s, c) = self.heading.sin_cos();
        [c * v[0] + s * v[1], -s * v[0] + c * v[1]]
    }

    fn rotate_to_world(&self, v: Point) -> Point {
        let (s, c) = self.heading.sin_cos();
        [c * v[0] - s * v[1], s * v[0] + c * v[1]]
    }
}

/// Builds the ego-frame scenario record of the current state. Its ground
/// truth is the route-following expert.
fn observe(step: usize, ego: &Ego, agents: &[SimAgent], route: &Route, cfg: &SimConfig) -> ScenarioRecord {
    let (s, lateral, seg) = route.project(ego.pos);
    let rel_heading = wrap(ego.heading - route.heading(seg));

    let mut gt = Vec::with_capacity(cfg.horizon);
    let mut prev = ego.pos;
    for j in 1..=cfg.horizon {
        let p = route.at(s + cfg.speed * DT * j as f64);
        let d = ego.rotate_to_local([p[0] - prev[0], p[1] - prev[1]]);
        gt.push(d);
        prev = p;
    }
    let ahead = route.heading(route.project(route.at(s + cfg.speed * DT * cfg.horizon as f64)).2);
    let turn = wrap(ahead - route.heading(seg));

    let mut order: Vec<usize> = (0..agents.len()).collect();
    order.sort_by(|&a, &b| dist(agents[a].pos, ego.pos).total_cmp(&dist(agents[b].pos, ego.pos)));
    let mut blocked = false;
    let mut pedestrian = false;
    for a in agents {
        let l = ego.to_local(a.pos);
        let static_agent = a.vel[0].hypot(a.vel[1]) < 0.1;
        if static_agent && l[0] > 0.0 && l[0] < 40.0 && l[1].abs() < LANE_WIDTH / 2.0 {
            blocked = true;
        }
        if a.radius < 0.6 && l[0] > 0.0 && l[0] < 30.0 && l[1].abs() < 2.0 * LANE_WIDTH {
            pedestrian = true;
        }
    }

    let mut desc = vec![
        ego.speed,
        rel_heading,
        lateral,
        f64::from(u8::from(blocked)),
        f64::from(u8::from(pedestrian)),
        1.0,
        0.0,
        0.0,
    ];
    let mut agents_future = Vec::with_capacity(cfg.k_agents);
    for k in 0..cfg.k_agents {
        let a = match order.get(k) {
            Some(&i) => agents[i],
            // Padding mirrors the generator's parked far-behind fallback.
            None => {
                let off = ego.rotate_to_world([-80.0 - 10.0 * k as f64, LANE_WIDTH]);
                SimAgent {
                    pos: [ego.pos[0] + off[0], ego.pos[1] + off[1]],
                    vel: [0.0, 0.0],
                    radius: 1.0,
                }
            }
        };
        let l = ego.to_local(a.pos);
        let v = ego.rotate_to_local(a.vel);
        desc.extend_from_slice(&[l[0], l[1], v[0] - ego.speed, v[1], a.radius]);
        agents_future.push(AgentTrack {
            positions: (1..=cfg.horizon)
                .map(|j| {
                    let t = DT * j as f64;
                    ego.to_local([a.pos[0] + a.vel[0] * t, a.pos[1] + a.vel[1] * t])
                })
                .collect(),
            radius: a.radius,
        });
    }
    debug_assert_eq!(desc.len(), SCENE_HEADER + AGENT_FIELDS * cfg.k_agents);
    debug_assert_eq!(desc.len(), scene_dim(cfg.k_agents));

    let tag = if pedestrian {
        Archetype::PedestrianStop
    } else if blocked {
        Archetype::LaneChange
    } else if turn > 0.2 {
        Archetype::LeftTurn
    } else if turn < -0.2 {
        Archetype::RightTurn
    } else {
        Archetype::Straight
    };
    ScenarioRecord {
        id: format!("replay-{step:05}"),
        seed: step as u64,
        scene_descriptor: desc,
        gt_traj: gt,
        agents_future,
        tag,
    }
}

/// Closed-loop rollout: at every step observe, fetch reasoning from the
/// buffer or the reasoner, plan, and advance the ego by the first planned
/// offset. Collisions and route departures each count one infraction per
/// event.
pub fn replay_closedloop(
    planner: &dyn Planner,
    cfg: &SimConfig,
    buffer: &mut MemoryBuffer<ReasonerOutput>,
    reason: &mut dyn FnMut(&ScenarioRecord) -> Result<ReasonerOutput, ReasonerError>,
) -> Result<ReplayReport, EvalError> {
    cfg.validate()?;
    let route = Route::new(&cfg.route);
    let mut ego = Ego {
        pos: cfg.route[0],
        heading: route.heading(0),
        speed: cfg.speed,
    };
    let mut agents = cfg.agents.clone();
    let mut colliding = vec![false; agents.len()];
    let mut off_route = false;
    let mut infractions = 0;
    let mut calls = 0;
    let mut trajectory = vec![ego.pos];
    let mut visited = Vec::new();
    let mut progress = 0.0f64;
    let mut steps = 0;

    for step in 0..cfg.steps {
        if route.length() - progress <= cfg.goal_tolerance {
            break;
        }
        let rec = observe(step, &ego, &agents, &route, cfg);
        let key = rec.scene_descriptor.clone();
        let cached = match buffer.lookup(&key) {
            Ok((_, e, sim)) if sim >= cfg.reuse_threshold => Some(e.payload.clone()),
            Ok(_) | Err(EvalError::EmptyBuffer) | Err(EvalError::ZeroQuery) => None,
            Err(e) => return Err(e),
        };
        let reasoning = match cached {
            Some(r) => r,
            None => {
                calls += 1;
                let r = reason(&rec)?;
                match buffer.insert(key.clone(), r.clone()) {
                    Ok(_) | Err(EvalError::ZeroKey) => {}
                    Err(e) => return Err(e),
                }
                r
            }
        };
        let plan = planner.plan(&[(&rec, &reasoning)])?;
        let first = plan
            .first()
            .and_then(|p| p.fine.first())
            .copied()
            .ok_or_else(|| EvalError::Sim("planner returned an empty trajectory".into()))?;
        if !(first[0].is_finite() && first[1].is_finite()) {
            return Err(EvalError::RolloutNan { step });
        }
        visited.push((key, reasoning));

        let d = ego.rotate_to_world(first);
        let moved = first[0].hypot(first[1]);
        ego.pos = [ego.pos[0] + d[0], ego.pos[1] + d[1]];
        if moved > 1e-9 {
            ego.heading = d[1].atan2(d[0]);
        }
        ego.speed = moved / DT;
        for a in &mut agents {
            a.pos = [a.pos[0] + a.vel[0] * DT, a.pos[1] + a.vel[1] * DT];
        }
        if !(ego.pos[0].is_finite() && ego.pos[1].is_finite() && ego.heading.is_finite()) {
            return Err(EvalError::RolloutNan { step });
        }
        trajectory.push(ego.pos);
        steps += 1;

        for (a, was) in agents.iter().zip(colliding.iter_mut()) {
            let now = dist(a.pos, ego.pos) < cfg.ego_radius + a.radius;
            if now && !*was {
                infractions += 1;
            }
            *was = now;
        }
        let (s, lateral, _) = route.project(ego.pos);
        let now_off = lateral.abs() > cfg.route_tolerance;
        if now_off && !off_route {
            infractions += 1;
        }
        off_route = now_off;
        progress = progress.max(s);
    }

    let completion_fraction = if route.length() - progress <= cfg.goal_tolerance {
        1.0
    } else {
        (progress / route.length()).clamp(0.0, 1.0)
    };
    Ok(ReplayReport {
        completion_fraction,
        infractions,
        score: completion_fraction * 0.5f64.powi(infractions as i32),
        steps,
        reasoner_calls: calls,
        trajectory,
        visited,
    })
}
