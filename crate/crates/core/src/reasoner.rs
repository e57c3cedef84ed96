//! Strategy text and raw command text for a scenario, either from the
//! built-in rule oracle or from a remote vision-language model server.

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::command_codec::{
    format_commands, parse_commands, parse_probabilistic, CommandDictionaries, CommandSet,
};
use crate::corpus::{Archetype, ScenarioRecord};

pub const STRATEGY_PREFIX: &str = "When driving in the current scenario";
pub const ENDPOINT_ENV: &str = "REALAD_VLM_ENDPOINT";
pub const DEFAULT_MAX_ATTEMPTS: u32 = 5;

const STRATEGY_PROMPT: &str = "There is an image from front camera of the car. Suppose you are driving in this scenario, based on the scene condition and critical objects or traffic signs in the scene, make legal, safe and comfortable driving decisions (may include which traffic participants to pay attention to, which traffic rules to pay attention to, etc.). Answer should be in one paragraph and the format is as follows:
'When driving in the current scenario, the driving decision-making thinking process is:...'.";

const COMMAND_PROMPT: &str = "There is an image from the front camera of the car. Suppose you are driving in this scenario, please analyze the following input image and determine the ego-vehicle's planning commands based on the current road conditions. Strictly adhere to the predefined command types listed below and return the results in the required format. The output must only include the specified options and should not contain any additional content.

Command Types

Primary Direction Control
- LEFT_TURN: Make a left turn at the upcoming intersection or turn
- RIGHT_TURN: Make a right turn at the upcoming intersection or turn
- CONTINUE_STRAIGHT: Proceed straight without changing direction. Maintain the current lane unless a lane change is necessary for traffic flow

Lane Positioning
- KEEP_LANE: Maintain the current lane without changing
- CHANGE_LANE_LEFT: Move to the adjacent lane on the left to facilitate a left turn or overtake slower traffic
- CHANGE_LANE_RIGHT: Move to the adjacent lane on the right to facilitate a right turn or overtake slower traffic

Speed Regulation
- ACCELERATE: Increase the vehicle's speed
- DECELERATE: Decrease the vehicle's speed
- MAINTAIN_SPEED: Keep the current speed constant

Emergency Control
- EMERGENCY_BRAKE: Apply brakes immediately to avoid a collision or hazard
- PARK: Bring the vehicle to a complete stop and park
- NO_ACTION: No emergency control action is required in the current scenario

Output Format
Direction Control: <Direction Control>
Lane Management: <Lane Management>
Speed Control: <Speed Control>
Emergency Control: <Emergency Control>";

const COMMAND_PROB_PROMPT: &str = r#"There is an image from the front camera of the car. Suppose you are driving in this scenario, please analyze the following input image and determine the ego-vehicle's planning commands based on the current road conditions. Strictly adhere to the predefined command types listed below and return the results in the required format. The output must only include the specified options and should not contain any additional content.

Important:
1. You must provide a probability distribution for each command category, ensuring that the probabilities for each category sum up to 1.
2. Use format strictly as shown below without any extra text or explanations.
3. Refer to the provided examples to guide your output format and content.

Command Types

Emergency Control
- EMERGENCY_BRAKE: Immediately apply emergency brakes to avoid a collision or respond to a sudden hazard.
- PARK: Bring the vehicle to a complete stop and park, suitable for situations requiring immediate cessation.
- NO_ACTION: No emergency control action is required in the current scenario, and the vehicle continues normal operation.

Primary Direction Control
- LEFT_TURN: Make a left turn at the upcoming intersection or turn into another street.
- RIGHT_TURN: Make a right turn at the upcoming intersection or turn into a parking area or another street.
- CONTINUE_STRAIGHT: Proceed straight along the current route without changing direction.

Lane Management
- KEEP_LANE: Maintain the current lane without changing, suitable for smooth traffic flow within the lane.
- CHANGE_LANE_LEFT: Move to the adjacent lane on the left, typically for overtaking or preparing for a left turn.
- CHANGE_LANE_RIGHT: Move to the adjacent lane on the right, typically for overtaking or preparing for a right turn.

Speed Control
- ACCELERATE: Increase the vehicle's speed, suitable for smooth traffic flow ahead or when overtaking.
- DECELERATE: Decrease the vehicle's speed, suitable for congested traffic, reduced speed limits, or obstacles ahead.
- MAINTAIN_SPEED: Keep the current speed constant, suitable for stable traffic conditions or when no speed adjustment is needed.

Output Format
{
  "Emergency Control": {
    "EMERGENCY_BRAKE": <probability>,
    "PARK": <probability>,
    "NO_ACTION": <probability>
  },
  "Primary Direction Control": {
    "LEFT_TURN": <probability>,
    "RIGHT_TURN": <probability>,
    "CONTINUE_STRAIGHT": <probability>
  },
  "Lane Management": {
    "KEEP_LANE": <probability>,
    "CHANGE_LANE_LEFT": <probability>,
    "CHANGE_LANE_RIGHT": <probability>
  },
  "Speed Control": {
    "ACCELERATE": <probability>,
    "DECELERATE": <probability>,
    "MAINTAIN_SPEED": <probability>,
    "STOP": <probability>
  }
}"#;

#[derive(Debug, Error)]
pub enum ReasonerError {
    #[error("unknown prompt kind `{0}` (expected strategy, command or command_probabilistic)")]
    UnknownPromptKind(String),
    #[error("max_attempts must be at least 1")]
    NoAttempts,
    #[error("request to {endpoint} failed: {message}")]
    Transport { endpoint: String, message: String },
    #[error("output still invalid after {attempts} attempts; last reply: {last_text:?}")]
    Verification { attempts: u32, last_text: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Strategy,
    Command,
    CommandProbabilistic,
}

impl FromStr for PromptKind {
    type Err = ReasonerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "strategy" => Ok(PromptKind::Strategy),
            "command" => Ok(PromptKind::Command),
            "command_probabilistic" => Ok(PromptKind::CommandProbabilistic),
            other => Err(ReasonerError::UnknownPromptKind(other.to_string())),
        }
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptKind::Strategy => "strategy",
            PromptKind::Command => "command",
            PromptKind::CommandProbabilistic => "command_probabilistic",
        })
    }
}

pub fn render_prompt(kind: PromptKind) -> &'static str {
    match kind {
        PromptKind::Strategy => STRATEGY_PROMPT,
        PromptKind::Command => COMMAND_PROMPT,
        PromptKind::CommandProbabilistic => COMMAND_PROB_PROMPT,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Oracle,
    Remote,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasonerOutput {
    pub strategy_text: String,
    pub raw_command_text: String,
    pub source: Source,
    pub attempts: u32,
}

pub fn verify_strategy(text: &str) -> bool {
    text.trim_start().starts_with(STRATEGY_PREFIX)
}

/// The oracle's rule table.
///
/// | condition | command |
/// |-----------|---------|
/// | tag `left_turn` / `right_turn` | LEFT_TURN / RIGHT_TURN, else CONTINUE_STRAIGHT |
/// | lane-blocked flag | CHANGE_LANE_LEFT, else KEEP_LANE |
/// | pedestrian flag | DECELERATE + EMERGENCY_BRAKE, else MAINTAIN_SPEED + NO_ACTION |
pub fn oracle_commands(rec: &ScenarioRecord) -> CommandSet {
    let direction = match rec.tag {
        Archetype::LeftTurn => 0,
        Archetype::RightTurn => 1,
        _ => 2,
    };
    let lane = if rec.lane_blocked() { 1 } else { 0 };
    let (speed, emergency) = if rec.pedestrian_crossing() { (1, 0) } else { (2, 2) };
    CommandSet::from_indices(&CommandDictionaries::default(), [direction, lane, speed, emergency])
        .expect("rule table indices are in range")
}

/// Hazard-driven strategy paragraph. It names what to attend to, not which
/// way to go; direction is left to the command block.
pub fn oracle_strategy(rec: &ScenarioRecord) -> String {
    let mut clauses = Vec::new();
    if rec.lane_blocked() {
        clauses.push("a static obstacle blocks the current lane, so check the adjacent lane for traffic and move over early to pass it");
    }
    if rec.pedestrian_crossing() {
        clauses.push("a pedestrian is crossing the road ahead, so slow down and yield until the crosswalk is clear");
    }
    if rec.signal() == 2 {
        clauses.push("the traffic light is red, so be prepared to stop before the stop line");
    }
    if matches!(rec.tag, Archetype::LeftTurn | Archetype::RightTurn) {
        clauses.push("an intersection is coming up, so watch for crossing vehicles and keep the turn smooth");
    }
    if clauses.is_empty() {
        clauses.push("the road ahead is clear, so keep a steady speed and a safe following distance");
    }
    format!(
        "{STRATEGY_PREFIX}, the driving decision-making thinking process is: {}.",
        clauses.join("; ")
    )
}

pub fn oracle_reason(rec: &ScenarioRecord) -> ReasonerOutput {
    ReasonerOutput {
        strategy_text: oracle_strategy(rec),
        raw_command_text: format_commands(&oracle_commands(rec)),
        source: Source::Oracle,
        attempts: 1,
    }
}

/// Reads the endpoint from the environment, falling back to `configured`.
pub fn endpoint_from_env(configured: Option<&str>) -> Option<String> {
    match std::env::var(ENDPOINT_ENV) {
        Ok(v) if !v.trim().is_empty() => Some(v),
        _ => configured.map(str::to_string),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RemoteReply {
    pub text: String,
    pub attempts: u32,
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    prompt: &'a str,
    scene_ref: &'a str,
}

#[derive(Deserialize)]
struct GenerateResponse {
    text: String,
}

fn passes(kind: PromptKind, text: &str) -> bool {
    let dicts = CommandDictionaries::default();
    match kind {
        PromptKind::Strategy => verify_strategy(text),
        PromptKind::Command => parse_commands(text, &dicts).is_ok(),
        PromptKind::CommandProbabilistic => parse_probabilistic(text, &dicts).is_ok(),
    }
}

/// POSTs `{prompt, scene_ref}` to `{endpoint}/generate` until the reply
/// verifies for `kind` or `max_attempts` requests have been made.
pub fn query_remote(
    endpoint: &str,
    kind: PromptKind,
    scene_ref: &str,
    max_attempts: u32,
) -> Result<RemoteReply, ReasonerError> {
    if max_attempts == 0 {
        return Err(ReasonerError::NoAttempts);
    }
    let url = format!("{}/generate", endpoint.trim_end_matches('/'));
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(120)))
        .build()
        .into();
    let transport = |message: String| ReasonerError::Transport {
        endpoint: url.clone(),
        message,
    };
    let body = GenerateRequest {
        prompt: render_prompt(kind),
        scene_ref,
    };
    let mut last_text = String::new();
    for attempt in 1..=max_attempts {
        let mut resp = agent.post(&url).send_json(&body).map_err(|e| transport(e.to_string()))?;
        if resp.status() != 200 {
            return Err(transport(format!("status {}", resp.status())));
        }
        let reply: GenerateResponse = resp.body_mut().read_json().map_err(|e| transport(e.to_string()))?;
        if passes(kind, &reply.text) {
            return Ok(RemoteReply {
                text: reply.text,
                attempts: attempt,
            });
        }
        last_text = reply.text;
    }
    Err(ReasonerError::Verification {
        attempts: max_attempts,
        last_text,
    })
}

/// Strategy and command queries against a remote server. `attempts` is the
/// larger of the two queries' attempt counts.
pub fn remote_reason(endpoint: &str, scene_ref: &str, max_attempts: u32) -> Result<ReasonerOutput, ReasonerError> {
    let strategy = query_remote(endpoint, PromptKind::Strategy, scene_ref, max_attempts)?;
    let command = query_remote(endpoint, PromptKind::Command, scene_ref, max_attempts)?;
    Ok(ReasonerOutput {
        strategy_text: strategy.text,
        raw_command_text: command.text,
        source: Source::Remote,
        attempts: strategy.attempts.max(command.attempts),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_scenario, ArchetypeMix, CorpusConfig};

    fn scenario(a: Archetype, seed: u64) -> ScenarioRecord {
        let cfg = CorpusConfig {
            mix: ArchetypeMix::only(a),
            ..Default::default()
        };
        generate_scenario(seed, &cfg).unwrap()
    }

    #[test]
    fn prompts_carry_their_anchors() {
        assert!(render_prompt(PromptKind::Strategy).contains("When driving in the current scenario"));
        let cmd = render_prompt(PromptKind::Command);
        assert!(cmd.contains("Direction Control: <Direction Control>"));
        for h in ["Direction Control", "Lane Management", "Speed Control", "Emergency Control"] {
            assert!(cmd.contains(h));
        }
        assert!(render_prompt(PromptKind::CommandProbabilistic).contains("probability distribution"));
        assert!("vision".parse::<PromptKind>().is_err());
        assert_eq!("command_probabilistic".parse::<PromptKind>().unwrap(), PromptKind::CommandProbabilistic);
    }

    #[test]
    fn strategy_verification() {
        assert!(verify_strategy(
            "When driving in the current scenario, the driving decision-making thinking process is: slow down."
        ));
        assert!(!verify_strategy("I think you should turn left."));
        assert!(verify_strategy("  When driving in the current scenario..."));
    }

    #[test]
    fn rule_table_rows() {
        let lane = oracle_reason(&scenario(Archetype::LaneChange, 1));
        assert!(lane.raw_command_text.contains("Lane Management: CHANGE_LANE_LEFT"));
        assert!(lane.strategy_text.contains("obstacle"));
        let ped = oracle_reason(&scenario(Archetype::PedestrianStop, 2));
        assert!(ped.raw_command_text.contains("Emergency Control: EMERGENCY_BRAKE"));
        assert!(ped.raw_command_text.contains("Speed Control: DECELERATE"));
        assert!(ped.strategy_text.contains("pedestrian"));
        let left = oracle_commands(&scenario(Archetype::LeftTurn, 3));
        assert_eq!(left.direction.option, "LEFT_TURN");
        let straight = oracle_reason(&scenario(Archetype::Straight, 4));
        assert_eq!(
            straight.raw_command_text,
            "Direction Control: CONTINUE_STRAIGHT\nLane Management: KEEP_LANE\nSpeed Control: MAINTAIN_SPEED\nEmergency Control: NO_ACTION"
        );
    }

    #[test]
    fn oracle_outputs_always_verify() {
        let dicts = CommandDictionaries::default();
        let cfg = CorpusConfig::default();
        for seed in 0..200 {
            let rec = generate_scenario(seed, &cfg).unwrap();
            let out = oracle_reason(&rec);
            assert!(verify_strategy(&out.strategy_text));
            assert!(parse_commands(&out.raw_command_text, &dicts).is_ok());
            assert_eq!(out, oracle_reason(&rec));
            assert!(out.attempts >= 1);
        }
    }

    #[test]
    fn zero_attempts_rejected_before_any_request() {
        assert!(matches!(
            query_remote("http://127.0.0.1:9", PromptKind::Strategy, "x", 0),
            Err(ReasonerError::NoAttempts)
        ));
    }
}
