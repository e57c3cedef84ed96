//! Synthetic driving scenarios: generation, JSON-lines persistence and the
//! scene encoder that turns a scene descriptor into the initial ego query.
//!
//! Every scenario is expressed in the ego frame at `t = 0`: the ego sits at
//! the origin facing `+x`, `+y` is to the left. Waypoints are spaced
//! [`DT`] seconds apart.
//!
//! Scene descriptor layout (length `8 + 5·K`):
//!
//! | index | field |
//! |-------|-------|
//! | 0 | ego speed, m/s |
//! | 1 | ego heading relative to the lane, rad |
//! | 2 | lateral offset from the lane centre, m |
//! | 3 | lane-blocked flag |
//! | 4 | pedestrian-crossing flag |
//! | 5..8 | traffic signal one-hot `[green, yellow, red]` |
//! | 8 + 5k .. 13 + 5k | agent `k`: rel. x, rel. y, rel. vx, rel. vy, radius |
//!
//! Agents are ordered nearest first.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{row, Graph, Var};
use crate::error::ShapeError;
use crate::jsonfmt;
use crate::nn::{init_mlp2, linear_in, mlp2, ParamStore};

/// Waypoint spacing in seconds.
pub const DT: f64 = 0.5;
pub const LANE_WIDTH: f64 = 3.5;
pub const SCENE_HEADER: usize = 8;
pub const AGENT_FIELDS: usize = 5;
/// Distance kept between the ego and a pedestrian it stops for.
pub const STOP_MARGIN: f64 = 3.0;
/// Ego disc radius assumed while placing agents.
pub const EGO_RADIUS: f64 = 1.0;

pub const SCENE_PREFIX: &str = "scene";

pub fn scene_dim(k_agents: usize) -> usize {
    SCENE_HEADER + AGENT_FIELDS * k_agents
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid corpus config: {0}")]
    InvalidConfig(String),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate record id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("invalid record `{id}`: {message}")]
    InvalidRecord { id: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    Straight,
    LeftTurn,
    RightTurn,
    LaneChange,
    PedestrianStop,
}

impl Archetype {
    pub const ALL: [Archetype; 5] = [
        Archetype::Straight,
        Archetype::LeftTurn,
        Archetype::RightTurn,
        Archetype::LaneChange,
        Archetype::PedestrianStop,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Archetype::Straight => "straight",
            Archetype::LeftTurn => "left_turn",
            Archetype::RightTurn => "right_turn",
            Archetype::LaneChange => "lane_change",
            Archetype::PedestrianStop => "pedestrian_stop",
        }
    }
}

/// Relative sampling weights of the five archetypes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchetypeMix {
    pub straight: f64,
    pub left_turn: f64,
    pub right_turn: f64,
    pub lane_change: f64,
    pub pedestrian_stop: f64,
}

impl Default for ArchetypeMix {
    fn default() -> Self {
        Self {
            straight: 1.0,
            left_turn: 1.0,
            right_turn: 1.0,
            lane_change: 1.0,
            pedestrian_stop: 1.0,
        }
    }
}

impl ArchetypeMix {
    pub fn only(a: Archetype) -> Self {
        let mut m = Self {
            straight: 0.0,
            left_turn: 0.0,
            right_turn: 0.0,
            lane_change: 0.0,
            pedestrian_stop: 0.0,
        };
        *m.weight_mut(a) = 1.0;
        m
    }

    fn weight_mut(&mut self, a: Archetype) -> &mut f64 {
        match a {
            Archetype::Straight => &mut self.straight,
            Archetype::LeftTurn => &mut self.left_turn,
            Archetype::RightTurn => &mut self.right_turn,
            Archetype::LaneChange => &mut self.lane_change,
            Archetype::PedestrianStop => &mut self.pedestrian_stop,
        }
    }

    fn weights(&self) -> [f64; 5] {
        [self.straight, self.left_turn, self.right_turn, self.lane_change, self.pedestrian_stop]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    /// Waypoints per trajectory.
    pub horizon: usize,
    /// Agents encoded in the scene descriptor.
    pub k_agents: usize,
    pub mix: ArchetypeMix,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            horizon: 6,
            k_agents: 4,
            mix: ArchetypeMix::default(),
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.horizon < 2 {
            return Err(CorpusError::InvalidConfig(format!("horizon {} < 2", self.horizon)));
        }
        if self.k_agents < 1 {
            return Err(CorpusError::InvalidConfig("k_agents must be at least 1".into()));
        }
        let w = self.mix.weights();
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) || w.iter().sum::<f64>() <= 0.0 {
            return Err(CorpusError::InvalidConfig(
                "archetype weights must be non-negative with a positive sum".into(),
            ));
        }
        Ok(())
    }

    pub fn scene_dim(&self) -> usize {
        scene_dim(self.k_agents)
    }
}

/// Future track of one surrounding agent: absolute ego-frame positions at
/// the same timestamps as the ego waypoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentTrack {
    pub positions: Vec<[f64; 2]>,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioRecord {
    pub id: String,
    pub seed: u64,
    pub scene_descriptor: Vec<f64>,
    /// Per-step displacements `(Δx, Δy)` in metres.
    pub gt_traj: Vec<[f64; 2]>,
    pub agents_future: Vec<AgentTrack>,
    pub tag: Archetype,
}

impl ScenarioRecord {
    pub fn horizon(&self) -> usize {
        self.gt_traj.len()
    }

    pub fn ego_speed(&self) -> f64 {
        self.scene_descriptor[0]
    }

    pub fn lane_blocked(&self) -> bool {
        self.scene_descriptor[3] > 0.5
    }

    pub fn pedestrian_crossing(&self) -> bool {
        self.scene_descriptor[4] > 0.5
    }

    /// Index of the lit signal: 0 green, 1 yellow, 2 red.
    pub fn signal(&self) -> usize {
        (0..3)
            .max_by(|&a, &b| self.scene_descriptor[5 + a].total_cmp(&self.scene_descriptor[5 + b]))
            .unwrap_or(0)
    }

    /// `[rel x, rel y, rel vx, rel vy, radius]` of the `k`-th nearest agent.
    pub fn agent(&self, k: usize) -> &[f64] {
        let start = SCENE_HEADER + AGENT_FIELDS * k;
        &self.scene_descriptor[start..start + AGENT_FIELDS]
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |message: String| CorpusError::InvalidRecord {
            id: self.id.clone(),
            message,
        };
        let k = self.agents_future.len();
        if self.scene_descriptor.len() != scene_dim(k) {
            return Err(bad(format!(
                "scene_descriptor has {} entries, expected {} for {k} agents",
                self.scene_descriptor.len(),
                scene_dim(k)
            )));
        }
        if self.gt_traj.is_empty() {
            return Err(bad("gt_traj is empty".into()));
        }
        if !self.scene_descriptor.iter().all(|v| v.is_finite())
            || !self.gt_traj.iter().flatten().all(|v| v.is_finite())
        {
            return Err(bad("non-finite value".into()));
        }
        for (i, a) in self.agents_future.iter().enumerate() {
            if a.positions.len() != self.gt_traj.len() {
                return Err(bad(format!("agent {i} has {} positions", a.positions.len())));
            }
            if !(a.radius > 0.0) || !a.positions.iter().flatten().all(|v| v.is_finite()) {
                return Err(bad(format!("agent {i} has a non-positive radius or non-finite position")));
            }
        }
        Ok(())
    }
}

/// Ego manoeuvre in closed form. `offsets` integrates it exactly at the
/// waypoint timestamps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Maneuver {
    Straight { speed: f64 },
    /// Constant speed and yaw rate (positive = left).
    Turn { speed: f64, yaw_rate: f64 },
    /// Smoothstep lateral shift of `lateral` metres completed after `duration` seconds.
    LaneChange { speed: f64, lateral: f64, duration: f64 },
    /// Constant deceleration to rest exactly `stop_distance` metres ahead.
    Stop { speed: f64, stop_distance: f64 },
}

impl Maneuver {
    /// Ego position at time `t` in the initial ego frame.
    pub fn position(&self, t: f64) -> [f64; 2] {
        match *self {
            Maneuver::Straight { speed } => [speed * t, 0.0],
            Maneuver::Turn { speed, yaw_rate } => {
                let r = speed / yaw_rate;
                let th = yaw_rate * t;
                [r * th.sin(), r * (1.0 - th.cos())]
            }
            Maneuver::LaneChange { speed, lateral, duration } => {
                let u = (t / duration).min(1.0);
                [speed * t, lateral * u * u * (3.0 - 2.0 * u)]
            }
            Maneuver::Stop { speed, stop_distance } => {
                let decel = speed * speed / (2.0 * stop_distance);
                let t_stop = speed / decel;
                if t >= t_stop {
                    [stop_distance, 0.0]
                } else {
                    [speed * t - 0.5 * decel * t * t, 0.0]
                }
            }
        }
    }

    /// Per-step displacements over `horizon` steps of [`DT`].
    pub fn offsets(&self, horizon: usize) -> Vec<[f64; 2]> {
        if let Maneuver::Straight { speed } = *self {
            return vec![[speed * DT, 0.0]; horizon];
        }
        let mut prev = [0.0, 0.0];
        (1..=horizon)
            .map(|i| {
                let p = self.position(i as f64 * DT);
                let d = [p[0] - prev[0], p[1] - prev[1]];
                prev = p;
                d
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug)]
struct Agent {
    pos: [f64; 2],
    vel: [f64; 2],
    radius: f64,
}

impl Agent {
    fn at(&self, t: f64) -> [f64; 2] {
        [self.pos[0] + self.vel[0] * t, self.pos[1] + self.vel[1] * t]
    }
}

fn clearance_ok(agent: &Agent, ego: &Maneuver, horizon: usize) -> bool {
    (0..=horizon).all(|i| {
        let t = i as f64 * DT;
        let e = ego.position(t);
        let a = agent.at(t);
        let d = ((e[0] - a[0]).powi(2) + (e[1] - a[1]).powi(2)).sqrt();
        d > EGO_RADIUS + agent.radius + 0.5
    })
}

fn pick_archetype(rng: &mut ChaCha8Rng, mix: &ArchetypeMix) -> Archetype {
    let w = mix.weights();
    let total: f64 = w.iter().sum();
    let mut x = rng.random_range(0.0..total);
    for (a, wi) in Archetype::ALL.iter().zip(w) {
        if x < wi {
            return *a;
        }
        x -= wi;
    }
    *Archetype::ALL
        .iter()
        .zip(w)
        .rev()
        .find(|(_, wi)| *wi > 0.0)
        .map(|(a, _)| a)
        .unwrap()
}

/// Deterministic scenario for `seed` under `config`.
pub fn generate_scenario(seed: u64, config: &CorpusConfig) -> Result<ScenarioRecord, CorpusError> {
    generate_with_maneuver(seed, config).map(|(rec, _)| rec)
}

/// Like [`generate_scenario`], also returning the ego manoeuvre the offsets
/// were integrated from.
pub fn generate_with_maneuver(seed: u64, config: &CorpusConfig) -> Result<(ScenarioRecord, Maneuver), CorpusError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = config.horizon;
    let span = horizon as f64 * DT;
    let archetype = pick_archetype(&mut rng, &config.mix);
    let heading = rng.random_range(-0.05..0.05);
    let lateral = rng.random_range(-0.3..0.3);
    let lane_y = -lateral;

    let mut agents: Vec<Agent> = Vec::new();
    let mut signal = 0usize;
    let (maneuver, lane_blocked, pedestrian) = match archetype {
        Archetype::Straight => (Maneuver::Straight { speed: rng.random_range(3.0..13.0) }, false, false),
        Archetype::LeftTurn | Archetype::RightTurn => {
            let speed = rng.random_range(4.0..8.0);
            let rate = rng.random_range(0.35..0.55);
            let yaw_rate = if archetype == Archetype::LeftTurn { rate } else { -rate };
            (Maneuver::Turn { speed, yaw_rate }, false, false)
        }
        Archetype::LaneChange => {
            let speed = rng.random_range(6.0..12.0);
            let duration = span * rng.random_range(0.83..1.0);
            let m = Maneuver::LaneChange { speed, lateral: LANE_WIDTH, duration };
            let mut obstacle = Agent { pos: [0.0, lane_y], vel: [0.0, 0.0], radius: 1.5 };
            for _ in 0..100 {
                obstacle.pos[0] = speed * span * rng.random_range(0.85..1.15);
                if clearance_ok(&obstacle, &m, horizon) {
                    break;
                }
            }
            agents.push(obstacle);
            (m, true, false)
        }
        Archetype::PedestrianStop => {
            let speed: f64 = rng.random_range(5.0..12.0);
            let scale = span / 3.0;
            let hi = 1.25 * speed * scale;
            let lo = (speed * speed / 16.0).max(0.6 * speed * scale).min(hi);
            let stop_distance = if hi > lo { rng.random_range(lo..hi) } else { hi };
            let m = Maneuver::Stop { speed, stop_distance };
            agents.push(Agent {
                pos: [stop_distance + STOP_MARGIN, -rng.random_range(2.5..4.0)],
                vel: [0.0, rng.random_range(0.8..1.5)],
                radius: 0.4,
            });
            if rng.random_bool(0.5) {
                signal = 2;
            }
            (m, false, true)
        }
    };
    let ego_speed = match maneuver {
        Maneuver::Straight { speed }
        | Maneuver::Turn { speed, .. }
        | Maneuver::LaneChange { speed, .. }
        | Maneuver::Stop { speed, .. } => speed,
    };

    for i in agents.len()..config.k_agents {
        let mut placed = None;
        for _ in 0..100 {
            let lane = rng.random_range(-1i32..=1);
            let x = rng.random_range(-30.0..60.0);
            let v = rng.random_range(3.0..13.0);
            let candidate = Agent {
                pos: [x, lane_y + f64::from(lane) * LANE_WIDTH],
                vel: [v, 0.0],
                radius: rng.random_range(1.0..1.5),
            };
            if clearance_ok(&candidate, &maneuver, horizon) {
                placed = Some(candidate);
                break;
            }
        }
        agents.push(placed.unwrap_or(Agent {
            pos: [-80.0 - 10.0 * i as f64, lane_y + LANE_WIDTH],
            vel: [0.0, 0.0],
            radius: 1.0,
        }));
    }

    agents.sort_by(|a, b| {
        let da = a.pos[0].hypot(a.pos[1]);
        let db = b.pos[0].hypot(b.pos[1]);
        da.total_cmp(&db)
    });

    let mut desc = vec![
        ego_speed,
        heading,
        lateral,
        f64::from(u8::from(lane_blocked)),
        f64::from(u8::from(pedestrian)),
        0.0,
        0.0,
        0.0,
    ];
    desc[5 + signal] = 1.0;
    let mut agents_future = Vec::with_capacity(agents.len());
    for a in &agents {
        // Descriptor velocities are relative to the ego; tracks are absolute.
        desc.extend_from_slice(&[a.pos[0], a.pos[1], a.vel[0] - ego_speed, a.vel[1], a.radius]);
        agents_future.push(AgentTrack {
            positions: (1..=horizon).map(|i| a.at(i as f64 * DT)).collect(),
            radius: a.radius,
        });
    }

    let rec = ScenarioRecord {
        id: format!("scn-{seed:08}"),
        seed,
        scene_descriptor: desc,
        gt_traj: maneuver.offsets(horizon),
        agents_future,
        tag: archetype,
    };
    rec.validate()?;
    Ok((rec, maneuver))
}

/// Generates one record per seed, in seed order. Generation runs on the
/// rayon pool; the result does not depend on scheduling.
pub fn generate_corpus(seeds: std::ops::Range<u64>, config: &CorpusConfig) -> Result<Vec<ScenarioRecord>, CorpusError> {
    config.validate()?;
    seeds.into_par_iter().map(|s| generate_scenario(s, config)).collect()
}

/// Writes one JSON object per line; returns the number of records written.
pub fn write_corpus(records: &[ScenarioRecord], path: impl AsRef<Path>) -> Result<usize, CorpusError> {
    let mut out = BufWriter::new(File::create(path)?);
    for rec in records {
        jsonfmt::to_writer(&mut out, rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(records.len())
}

/// Reads a JSON-lines corpus. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<ScenarioRecord>, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ScenarioRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        rec.validate().map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if !seen.insert(rec.id.clone()) {
            return Err(CorpusError::DuplicateId { line: line_no, id: rec.id });
        }
        records.push(rec);
    }
    Ok(records)
}

/// Initial ego query, length `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct EgoQuery(pub Vec<f64>);

pub fn init_scene_encoder(store: &mut ParamStore, rng: &mut impl Rng, scene_dim: usize, d: usize) {
    init_mlp2(store, rng, SCENE_PREFIX, scene_dim, d, d);
}

/// Graph form of the scene encoder over a `[B, scene_dim]` batch.
pub fn scene_encoder_forward(g: &mut Graph, store: &ParamStore, scene: Var) -> Var {
    mlp2(g, store, SCENE_PREFIX, scene)
}

pub fn encode_scene(rec: &ScenarioRecord, params: &ParamStore) -> Result<EgoQuery, ShapeError> {
    let expected = linear_in(params, &format!("{SCENE_PREFIX}.l1")).unwrap_or(0);
    ShapeError::check("scene descriptor", expected, rec.scene_descriptor.len())?;
    let mut g = Graph::new();
    let x = g.constant(row(&rec.scene_descriptor));
    let q = scene_encoder_forward(&mut g, params, x);
    Ok(EgoQuery(g.value(q).iter().copied().collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn same_seed_gives_identical_bytes() {
        let cfg = CorpusConfig::default();
        let a = jsonfmt::to_string(&generate_scenario(7, &cfg).unwrap()).unwrap();
        let b = jsonfmt::to_string(&generate_scenario(7, &cfg).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn straight_at_five_mps_has_equal_offsets() {
        let offsets = Maneuver::Straight { speed: 5.0 }.offsets(6);
        assert_eq!(offsets, vec![[2.5, 0.0]; 6]);
    }

    #[test]
    fn straight_archetype_offsets_are_constant() {
        let cfg = CorpusConfig { mix: ArchetypeMix::only(Archetype::Straight), ..Default::default() };
        for seed in 0..20 {
            let rec = generate_scenario(seed, &cfg).unwrap();
            let v = rec.ego_speed();
            assert!(rec.gt_traj.iter().all(|o| *o == [v * DT, 0.0]));
        }
    }

    #[test]
    fn pedestrian_stop_flags_and_monotone_offsets() {
        let cfg = CorpusConfig { mix: ArchetypeMix::only(Archetype::PedestrianStop), ..Default::default() };
        for seed in 0..50 {
            let rec = generate_scenario(seed, &cfg).unwrap();
            assert!(rec.pedestrian_crossing());
            let mags: Vec<f64> = rec.gt_traj.iter().map(|o| o[0].hypot(o[1])).collect();
            assert!(mags.windows(2).all(|w| w[1] <= w[0]), "{mags:?}");
        }
    }

    #[test]
    fn turns_change_heading_in_the_right_direction() {
        for (a, sign) in [(Archetype::LeftTurn, 1.0), (Archetype::RightTurn, -1.0)] {
            let cfg = CorpusConfig { mix: ArchetypeMix::only(a), ..Default::default() };
            for seed in 0..20 {
                let rec = generate_scenario(seed, &cfg).unwrap();
                let last = rec.gt_traj.last().unwrap();
                let heading = last[1].atan2(last[0]);
                assert!(sign * heading > 0.3, "{a:?} heading {heading}");
                assert_eq!(rec.tag, a);
            }
        }
    }

    #[test]
    fn offsets_replay_the_manoeuvre_and_agent_tracks() {
        let cfg = CorpusConfig::default();
        for seed in 0..200 {
            let (rec, m) = generate_with_maneuver(seed, &cfg).unwrap();
            let mut p = [0.0, 0.0];
            for (i, o) in rec.gt_traj.iter().enumerate() {
                p = [p[0] + o[0], p[1] + o[1]];
                let t = (i + 1) as f64 * DT;
                let exact = m.position(t);
                assert!((p[0] - exact[0]).abs() < 1e-9 && (p[1] - exact[1]).abs() < 1e-9);
                for (k, a) in rec.agents_future.iter().enumerate() {
                    let d = rec.agent(k);
                    let vx = d[2] + rec.ego_speed();
                    assert!((a.positions[i][0] - (d[0] + vx * t)).abs() < 1e-9);
                    assert!((a.positions[i][1] - (d[1] + d[3] * t)).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn gt_paths_stay_clear_of_agents() {
        let cfg = CorpusConfig::default();
        for seed in 0..300 {
            let rec = generate_scenario(seed, &cfg).unwrap();
            let mut p = [0.0, 0.0];
            for (i, o) in rec.gt_traj.iter().enumerate() {
                p = [p[0] + o[0], p[1] + o[1]];
                for a in &rec.agents_future {
                    let q = a.positions[i];
                    assert!((p[0] - q[0]).hypot(p[1] - q[1]) > EGO_RADIUS + a.radius, "seed {seed}");
                }
            }
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let short = CorpusConfig { horizon: 1, ..Default::default() };
        assert!(matches!(generate_scenario(0, &short), Err(CorpusError::InvalidConfig(_))));
        let none = CorpusConfig { k_agents: 0, ..Default::default() };
        assert!(matches!(generate_scenario(0, &none), Err(CorpusError::InvalidConfig(_))));
    }

    #[test]
    fn descriptor_has_fixed_length_and_positive_radii() {
        let cfg = CorpusConfig::default();
        for seed in 0..100 {
            let rec = generate_scenario(seed, &cfg).unwrap();
            assert_eq!(rec.scene_descriptor.len(), 8 + 5 * 4);
            assert_eq!(rec.gt_traj.len(), 6);
            assert!(rec.agents_future.iter().all(|a| a.radius > 0.0));
        }
    }

    #[test]
    fn zero_encoder_maps_zero_descriptor_to_zero() {
        let mut params = ParamStore::default();
        let sd = scene_dim(4);
        for (name, shape) in [("l1.w", (sd, 16)), ("l1.b", (1, 16)), ("l2.w", (16, 16)), ("l2.b", (1, 16))] {
            params.insert(&format!("{SCENE_PREFIX}.{name}"), Array2::zeros(shape));
        }
        let mut rec = generate_scenario(1, &CorpusConfig::default()).unwrap();
        rec.scene_descriptor = vec![0.0; sd];
        let q = encode_scene(&rec, &params).unwrap();
        assert_eq!(q.0, vec![0.0; 16]);
    }

    #[test]
    fn encoder_rejects_wrong_descriptor_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = ParamStore::default();
        init_scene_encoder(&mut params, &mut rng, scene_dim(3), 8);
        let rec = generate_scenario(1, &CorpusConfig::default()).unwrap();
        assert!(encode_scene(&rec, &params).is_err());
    }
}
