//! Tactical driving commands: parsing from model output, one-hot encoding,
//! learnable embeddings and the reactive/regulatory feature split.

use std::fmt;
use std::sync::OnceLock;

use ndarray::Array2;
use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Graph, Var};
use crate::nn::{init_uniform, ParamStore};

/// Width of one category embedding.
pub const EMBED_DIM: usize = 8;
/// Width of `g_reactive` and `g_regulatory`.
pub const FUSED_DIM: usize = 2 * EMBED_DIM;
pub const EMBED_INIT_BOUND: f64 = 0.1;

pub const CMD_PREFIX: &str = "cmd";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Direction,
    Lane,
    Speed,
    Emergency,
}

impl Category {
    /// Output-block order.
    pub const ALL: [Category; 4] = [Category::Direction, Category::Lane, Category::Speed, Category::Emergency];

    pub fn header(self) -> &'static str {
        match self {
            Category::Direction => "Direction Control",
            Category::Lane => "Lane Management",
            Category::Speed => "Speed Control",
            Category::Emergency => "Emergency Control",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }

    fn param_name(self) -> String {
        let s = match self {
            Category::Direction => "dir",
            Category::Lane => "lane",
            Category::Speed => "speed",
            Category::Emergency => "emerg",
        };
        format!("{CMD_PREFIX}.{s}")
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.header())
    }
}

/// Ordered option lists; the position of an option is its one-hot index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandDictionaries {
    pub direction: Vec<String>,
    pub lane: Vec<String>,
    pub speed: Vec<String>,
    pub emergency: Vec<String>,
}

impl Default for CommandDictionaries {
    fn default() -> Self {
        let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        Self {
            direction: v(&["LEFT_TURN", "RIGHT_TURN", "CONTINUE_STRAIGHT"]),
            lane: v(&["KEEP_LANE", "CHANGE_LANE_LEFT", "CHANGE_LANE_RIGHT"]),
            speed: v(&["ACCELERATE", "DECELERATE", "MAINTAIN_SPEED"]),
            emergency: v(&["EMERGENCY_BRAKE", "PARK", "NO_ACTION"]),
        }
    }
}

impl CommandDictionaries {
    pub fn options(&self, c: Category) -> &[String] {
        match c {
            Category::Direction => &self.direction,
            Category::Lane => &self.lane,
            Category::Speed => &self.speed,
            Category::Emergency => &self.emergency,
        }
    }

    pub fn index_of(&self, c: Category, token: &str) -> Option<usize> {
        self.options(c).iter().position(|o| o == token)
    }
}

/// Speed options of the probabilistic prompt, which adds `STOP`.
pub const PROB_SPEED_OPTIONS: [&str; 4] = ["ACCELERATE", "DECELERATE", "MAINTAIN_SPEED", "STOP"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Command {
    pub option: String,
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandSet {
    pub direction: Command,
    pub lane: Command,
    pub speed: Command,
    pub emergency: Command,
}

impl CommandSet {
    /// Builds a set from option indices `[direction, lane, speed, emergency]`.
    pub fn from_indices(dicts: &CommandDictionaries, idx: [usize; 4]) -> Result<Self, CommandError> {
        let mut cmds = Vec::with_capacity(4);
        for (c, i) in Category::ALL.into_iter().zip(idx) {
            let opts = dicts.options(c);
            let option = opts.get(i).ok_or_else(|| CommandError::UnknownOption {
                header: c.header(),
                token: i.to_string(),
            })?;
            cmds.push(Command { option: option.clone(), index: i });
        }
        let mut it = cmds.into_iter();
        Ok(Self {
            direction: it.next().unwrap(),
            lane: it.next().unwrap(),
            speed: it.next().unwrap(),
            emergency: it.next().unwrap(),
        })
    }

    pub fn get(&self, c: Category) -> &Command {
        match c {
            Category::Direction => &self.direction,
            Category::Lane => &self.lane,
            Category::Speed => &self.speed,
            Category::Emergency => &self.emergency,
        }
    }

    pub fn indices(&self) -> [usize; 4] {
        Category::ALL.map(|c| self.get(c).index)
    }
}

/// One probability vector per category. `speed` has either 3 entries (the
/// one-hot vocabulary) or 4 (with `STOP`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbCommandSet {
    pub direction: Vec<f64>,
    pub lane: Vec<f64>,
    pub speed: Vec<f64>,
    pub emergency: Vec<f64>,
}

impl ProbCommandSet {
    /// The degenerate distribution placing all mass on `set`.
    pub fn degenerate(set: &CommandSet) -> Self {
        let [d, l, s, e] = onehot(set);
        Self {
            direction: d,
            lane: l,
            speed: s,
            emergency: e,
        }
    }

    pub fn get(&self, c: Category) -> &[f64] {
        match c {
            Category::Direction => &self.direction,
            Category::Lane => &self.lane,
            Category::Speed => &self.speed,
            Category::Emergency => &self.emergency,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum CommandError {
    #[error("missing category `{0}`")]
    MissingCategory(&'static str),
    #[error("`{header}`: unknown option `{token}`")]
    UnknownOption { header: &'static str, token: String },
    #[error("category `{0}` appears more than once")]
    DuplicateCategory(&'static str),
    #[error("probabilistic block: {0}")]
    Probabilistic(String),
    #[error("embedding `{name}`: expected {expected_rows}x{EMBED_DIM}, got {rows}x{cols}")]
    EmbeddingShape {
        name: String,
        expected_rows: usize,
        rows: usize,
        cols: usize,
    },
}

impl CommandError {
    /// Parse failures that a fresh generation might fix.
    pub fn needs_regeneration(&self) -> bool {
        matches!(
            self,
            CommandError::MissingCategory(_)
                | CommandError::UnknownOption { .. }
                | CommandError::DuplicateCategory(_)
                | CommandError::Probabilistic(_)
        )
    }
}

fn header_patterns() -> &'static [Regex; 4] {
    static PATS: OnceLock<[Regex; 4]> = OnceLock::new();
    PATS.get_or_init(|| {
        Category::ALL.map(|c| Regex::new(&format!(r"{}:[ \t]*(\S+)", regex::escape(c.header()))).unwrap())
    })
}

/// Extracts all four categories from free text. Each `Header:` must appear
/// exactly once, followed by one dictionary token.
pub fn parse_commands(raw: &str, dicts: &CommandDictionaries) -> Result<CommandSet, CommandError> {
    let mut idx = [0usize; 4];
    for (c, re) in Category::ALL.into_iter().zip(header_patterns()) {
        let mut caps = re.captures_iter(raw);
        let first = caps.next().ok_or(CommandError::MissingCategory(c.header()))?;
        if caps.next().is_some() {
            return Err(CommandError::DuplicateCategory(c.header()));
        }
        let token = &first[1];
        idx[c.slot()] = dicts.index_of(c, token).ok_or_else(|| CommandError::UnknownOption {
            header: c.header(),
            token: token.to_string(),
        })?;
    }
    CommandSet::from_indices(dicts, idx)
}

/// Canonical four-line block, headers in output order, no trailing newline.
pub fn format_commands(set: &CommandSet) -> String {
    Category::ALL
        .iter()
        .map(|&c| format!("{}: {}", c.header(), set.get(c).option))
        .collect::<Vec<_>>()
        .join("\n")
}

/// One-hot vectors `[direction, lane, speed, emergency]`.
pub fn onehot(set: &CommandSet) -> [Vec<f64>; 4] {
    Category::ALL.map(|c| {
        let mut v = vec![0.0; 3];
        v[set.get(c).index] = 1.0;
        v
    })
}

const PROB_KEYS: [(Category, &str); 4] = [
    (Category::Emergency, "Emergency Control"),
    (Category::Direction, "Primary Direction Control"),
    (Category::Lane, "Lane Management"),
    (Category::Speed, "Speed Control"),
];

pub const PROB_SUM_TOLERANCE: f64 = 1e-3;

/// Parses the JSON-shaped block of the probabilistic command prompt. Text
/// outside the outermost braces is ignored.
pub fn parse_probabilistic(raw: &str, dicts: &CommandDictionaries) -> Result<ProbCommandSet, CommandError> {
    let err = |m: String| CommandError::Probabilistic(m);
    let (start, end) = match (raw.find('{'), raw.rfind('}')) {
        (Some(s), Some(e)) if s < e => (s, e),
        _ => return Err(err("no JSON object found".into())),
    };
    let doc: serde_json::Value = serde_json::from_str(&raw[start..=end]).map_err(|e| err(e.to_string()))?;
    let obj = doc.as_object().ok_or_else(|| err("top level is not an object".into()))?;
    let mut out = ProbCommandSet {
        direction: vec![],
        lane: vec![],
        speed: vec![],
        emergency: vec![],
    };
    for (c, key) in PROB_KEYS {
        let entry = obj
            .get(key)
            .and_then(|v| v.as_object())
            .ok_or_else(|| err(format!("missing key `{key}`")))?;
        let options: Vec<&str> = if c == Category::Speed {
            PROB_SPEED_OPTIONS.to_vec()
        } else {
            dicts.options(c).iter().map(String::as_str).collect()
        };
        let mut probs = Vec::with_capacity(options.len());
        for opt in &options {
            let p = entry
                .get(*opt)
                .and_then(|v| v.as_f64())
                .ok_or_else(|| err(format!("`{key}` lacks a numeric `{opt}`")))?;
            if !(p >= 0.0) || !p.is_finite() {
                return Err(err(format!("`{key}.{opt}` = {p} is not a valid probability")));
            }
            probs.push(p);
        }
        if let Some(extra) = entry.keys().find(|k| !options.contains(&k.as_str())) {
            return Err(err(format!("`{key}` has unknown option `{extra}`")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(err(format!("`{key}` sums to {sum}")));
        }
        if sum != 1.0 {
            probs.iter_mut().for_each(|p| *p /= sum);
        }
        match c {
            Category::Direction => out.direction = probs,
            Category::Lane => out.lane = probs,
            Category::Speed => out.speed = probs,
            Category::Emergency => out.emergency = probs,
        }
    }
    Ok(out)
}

/// Emits a probabilistic block in the format [`parse_probabilistic`] reads.
pub fn format_probabilistic(p: &ProbCommandSet, dicts: &CommandDictionaries) -> String {
    let mut root = serde_json::Map::new();
    for (c, key) in PROB_KEYS {
        let opts: Vec<String> = if c == Category::Speed {
            PROB_SPEED_OPTIONS[..p.speed.len()].iter().map(|s| s.to_string()).collect()
        } else {
            dicts.options(c).to_vec()
        };
        let mut m = serde_json::Map::new();
        for (o, v) in opts.iter().zip(p.get(c)) {
            m.insert(o.clone(), serde_json::json!(v));
        }
        if c == Category::Speed && p.speed.len() == 3 {
            m.insert("STOP".into(), serde_json::json!(0.0));
        }
        root.insert(key.to_string(), serde_json::Value::Object(m));
    }
    serde_json::to_string_pretty(&serde_json::Value::Object(root)).unwrap()
}

/// Embedding tables: three options per category plus a separate 4-row
/// speed table for probabilistic input.
pub fn init_embeddings(store: &mut ParamStore, rng: &mut impl Rng) {
    for c in Category::ALL {
        init_uniform(store, rng, &c.param_name(), 3, EMBED_DIM, EMBED_INIT_BOUND);
    }
    init_uniform(store, rng, &speed_prob_name(), 4, EMBED_DIM, EMBED_INIT_BOUND);
}

fn speed_prob_name() -> String {
    format!("{CMD_PREFIX}.speed_prob")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommandFeatures {
    pub e_dir: Vec<f64>,
    pub e_emerg: Vec<f64>,
    pub e_lane: Vec<f64>,
    pub e_speed: Vec<f64>,
    pub g_reactive: Vec<f64>,
    pub g_regulatory: Vec<f64>,
}

/// Input to [`embed`]: hard commands or distributions over options.
#[derive(Clone, Copy, Debug)]
pub enum CommandInput<'a> {
    OneHot(&'a CommandSet),
    Probabilistic(&'a ProbCommandSet),
}

impl CommandInput<'_> {
    fn weights(&self) -> [Vec<f64>; 4] {
        match self {
            CommandInput::OneHot(s) => onehot(s),
            CommandInput::Probabilistic(p) => Category::ALL.map(|c| p.get(c).to_vec()),
        }
    }
}

fn table_for(store: &ParamStore, c: Category, width: usize) -> Result<(String, &Array2<f64>), CommandError> {
    let name = if c == Category::Speed && width == 4 {
        speed_prob_name()
    } else {
        c.param_name()
    };
    let expected_rows = if width == 4 && c == Category::Speed { 4 } else { 3 };
    let shape_err = |rows, cols| CommandError::EmbeddingShape {
        name: name.clone(),
        expected_rows,
        rows,
        cols,
    };
    let t = store.get(&name).ok_or_else(|| shape_err(0, 0))?;
    if t.nrows() != expected_rows || t.ncols() != EMBED_DIM || width != expected_rows {
        return Err(shape_err(t.nrows(), t.ncols()));
    }
    Ok((name, t))
}

/// Plain-vector embedding: each category's weights times its table.
pub fn embed(input: CommandInput<'_>, params: &ParamStore) -> Result<CommandFeatures, CommandError> {
    let w = input.weights();
    let mut e: Vec<Vec<f64>> = Vec::with_capacity(4);
    for (c, wc) in Category::ALL.into_iter().zip(&w) {
        let (_, table) = table_for(params, c, wc.len())?;
        let mut out = vec![0.0; EMBED_DIM];
        for (r, &p) in wc.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for (o, t) in out.iter_mut().zip(table.row(r)) {
                *o += p * t;
            }
        }
        e.push(out);
    }
    let [e_dir, e_lane, e_speed, e_emerg]: [Vec<f64>; 4] = e.try_into().unwrap();
    Ok(CommandFeatures {
        g_reactive: [e_dir.as_slice(), e_emerg.as_slice()].concat(),
        g_regulatory: [e_lane.as_slice(), e_speed.as_slice()].concat(),
        e_dir,
        e_emerg,
        e_lane,
        e_speed,
    })
}

/// Batched graph form: rows of `weights[k]` are per-sample distributions for
/// category `k`. Returns `(g_reactive, g_regulatory)`, each `[B, 16]`.
pub fn embed_graph(
    g: &mut Graph,
    store: &ParamStore,
    weights: &[Array2<f64>; 4],
) -> Result<(Var, Var), CommandError> {
    let mut e = Vec::with_capacity(4);
    for (c, w) in Category::ALL.into_iter().zip(weights) {
        let (name, _) = table_for(store, c, w.ncols())?;
        let table = g.param(store, &name);
        let wv = g.constant(w.clone());
        e.push(g.matmul(wv, table));
    }
    let reactive = g.concat(&[e[0], e[3]]);
    let regulatory = g.concat(&[e[1], e[2]]);
    Ok((reactive, regulatory))
}

/// Stacks per-sample category weights into the batch matrices
/// [`embed_graph`] expects.
pub fn batch_weights(inputs: &[CommandInput<'_>]) -> [Array2<f64>; 4] {
    let per: Vec<[Vec<f64>; 4]> = inputs.iter().map(|i| i.weights()).collect();
    std::array::from_fn(|k| {
        let width = per.first().map_or(3, |p| p[k].len());
        let mut m = Array2::zeros((per.len(), width));
        for (r, p) in per.iter().enumerate() {
            for (j, v) in p[k].iter().enumerate() {
                m[[r, j]] = *v;
            }
        }
        m
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dicts() -> CommandDictionaries {
        CommandDictionaries::default()
    }

    const BLOCK: &str = "Direction Control: LEFT_TURN\nLane Management: KEEP_LANE\nSpeed Control: DECELERATE\nEmergency Control: NO_ACTION";

    #[test]
    fn parses_the_canonical_block() {
        let s = parse_commands(BLOCK, &dicts()).unwrap();
        assert_eq!(s.indices(), [0, 0, 1, 2]);
    }

    #[test]
    fn missing_duplicate_and_unknown() {
        let missing = BLOCK.rsplit_once('\n').unwrap().0;
        assert_eq!(
            parse_commands(missing, &dicts()),
            Err(CommandError::MissingCategory("Emergency Control"))
        );
        let dup = format!("{BLOCK}\nLane Management: KEEP_LANE");
        assert_eq!(parse_commands(&dup, &dicts()), Err(CommandError::DuplicateCategory("Lane Management")));
        let unk = BLOCK.replace("DECELERATE", "SLOW_DOWN");
        assert!(matches!(
            parse_commands(&unk, &dicts()),
            Err(CommandError::UnknownOption { header: "Speed Control", .. })
        ));
    }

    #[test]
    fn parsing_is_case_sensitive_and_position_free() {
        let lower = BLOCK.replace("Direction Control", "direction control");
        assert!(matches!(parse_commands(&lower, &dicts()), Err(CommandError::MissingCategory(_))));
        let noisy = format!("Sure! Here you go.\n{}\nHope this helps.", BLOCK.replace('\n', " | "));
        assert_eq!(parse_commands(&noisy, &dicts()).unwrap().indices(), [0, 0, 1, 2]);
    }

    #[test]
    fn onehot_examples() {
        let s = CommandSet::from_indices(&dicts(), [1, 0, 2, 2]).unwrap();
        let [d, _, _, e] = onehot(&s);
        assert_eq!(d, vec![0.0, 1.0, 0.0]);
        assert_eq!(e, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn format_round_trip_all_combinations() {
        let d = dicts();
        for n in 0..81 {
            let idx = [n % 3, (n / 3) % 3, (n / 9) % 3, n / 27];
            let s = CommandSet::from_indices(&d, idx).unwrap();
            let text = format_commands(&s);
            assert_eq!(text.lines().count(), 4);
            assert_eq!(parse_commands(&text, &d).unwrap(), s);
        }
    }

    fn params() -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = ParamStore::default();
        init_embeddings(&mut p, &mut rng);
        p
    }

    #[test]
    fn identity_table_selects_unit_row() {
        let mut p = params();
        let mut eye = Array2::zeros((3, EMBED_DIM));
        for r in 0..3 {
            eye[[r, r]] = 1.0;
        }
        p.insert("cmd.dir", eye);
        let s = CommandSet::from_indices(&dicts(), [1, 0, 0, 0]).unwrap();
        let f = embed(CommandInput::OneHot(&s), &p).unwrap();
        let mut unit = vec![0.0; EMBED_DIM];
        unit[1] = 1.0;
        assert_eq!(f.e_dir, unit);
    }

    #[test]
    fn lane_change_leaves_reactive_untouched() {
        let p = params();
        let a = CommandSet::from_indices(&dicts(), [2, 0, 1, 0]).unwrap();
        let b = CommandSet::from_indices(&dicts(), [2, 2, 1, 0]).unwrap();
        let fa = embed(CommandInput::OneHot(&a), &p).unwrap();
        let fb = embed(CommandInput::OneHot(&b), &p).unwrap();
        assert_eq!(fa.g_reactive, fb.g_reactive);
        assert_ne!(fa.g_regulatory, fb.g_regulatory);
        assert_eq!(fa.g_reactive.len(), FUSED_DIM);
    }

    #[test]
    fn probabilistic_mix_is_convex_combination() {
        let p = params();
        let d = dicts();
        let s0 = CommandSet::from_indices(&d, [0, 0, 0, 0]).unwrap();
        let s1 = CommandSet::from_indices(&d, [1, 0, 0, 0]).unwrap();
        let r0 = embed(CommandInput::OneHot(&s0), &p).unwrap().e_dir;
        let r1 = embed(CommandInput::OneHot(&s1), &p).unwrap().e_dir;
        let mut prob = ProbCommandSet::degenerate(&s0);
        prob.direction = vec![0.5, 0.5, 0.0];
        let mix = embed(CommandInput::Probabilistic(&prob), &p).unwrap().e_dir;
        for i in 0..EMBED_DIM {
            assert!((mix[i] - 0.5 * (r0[i] + r1[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn degenerate_distribution_matches_onehot_exactly() {
        let p = params();
        let d = dicts();
        for n in 0..81 {
            let s = CommandSet::from_indices(&d, [n % 3, (n / 3) % 3, (n / 9) % 3, n / 27]).unwrap();
            let a = embed(CommandInput::OneHot(&s), &p).unwrap();
            let b = embed(CommandInput::Probabilistic(&ProbCommandSet::degenerate(&s)), &p).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn graph_embedding_matches_vector_embedding() {
        let p = params();
        let d = dicts();
        let s = CommandSet::from_indices(&d, [2, 1, 0, 1]).unwrap();
        let f = embed(CommandInput::OneHot(&s), &p).unwrap();
        let mut g = Graph::new();
        let w = batch_weights(&[CommandInput::OneHot(&s)]);
        let (r, reg) = embed_graph(&mut g, &p, &w).unwrap();
        assert_eq!(g.value(r).iter().copied().collect::<Vec<_>>(), f.g_reactive);
        assert_eq!(g.value(reg).iter().copied().collect::<Vec<_>>(), f.g_regulatory);
    }

    fn prob_block(emerg: [f64; 3], speed: [f64; 4]) -> String {
        format!(
            r#"{{"Emergency Control": {{"EMERGENCY_BRAKE": {}, "PARK": {}, "NO_ACTION": {}}},
"Primary Direction Control": {{"LEFT_TURN": 0.1, "RIGHT_TURN": 0.2, "CONTINUE_STRAIGHT": 0.7}},
"Lane Management": {{"KEEP_LANE": 1.0, "CHANGE_LANE_LEFT": 0.0, "CHANGE_LANE_RIGHT": 0.0}},
"Speed Control": {{"ACCELERATE": {}, "DECELERATE": {}, "MAINTAIN_SPEED": {}, "STOP": {}}}}}"#,
            emerg[0], emerg[1], emerg[2], speed[0], speed[1], speed[2], speed[3]
        )
    }

    #[test]
    fn probabilistic_parsing_rules() {
        let d = dicts();
        let p = parse_probabilistic(&prob_block([0.0, 0.0, 1.0], [0.0, 0.0, 1.0, 0.0]), &d).unwrap();
        assert_eq!(p.emergency, vec![0.0, 0.0, 1.0]);
        assert_eq!(p.speed.len(), 4);

        let p = parse_probabilistic(&prob_block([0.0, 0.0, 1.0], [0.2, 0.2, 0.5995, 0.0]), &d).unwrap();
        assert!((p.speed.iter().sum::<f64>() - 1.0).abs() < 1e-15);

        let neg = parse_probabilistic(&prob_block([-0.1, 0.1, 1.0], [0.0, 0.0, 1.0, 0.0]), &d);
        assert!(matches!(neg, Err(CommandError::Probabilistic(_))));
        let off = parse_probabilistic(&prob_block([0.0, 0.0, 0.9], [0.0, 0.0, 1.0, 0.0]), &d);
        assert!(matches!(off, Err(CommandError::Probabilistic(_))));
        assert!(parse_probabilistic("no json here", &d).is_err());
    }

    #[test]
    fn probabilistic_round_trip() {
        let d = dicts();
        let p = parse_probabilistic(&prob_block([0.25, 0.25, 0.5], [0.1, 0.2, 0.3, 0.4]), &d).unwrap();
        let again = parse_probabilistic(&format_probabilistic(&p, &d), &d).unwrap();
        assert_eq!(p, again);
    }

    #[test]
    fn four_entry_speed_uses_its_own_table() {
        let p = params();
        let d = dicts();
        let mut prob = parse_probabilistic(&prob_block([0.0, 0.0, 1.0], [0.0, 0.0, 0.0, 1.0]), &d).unwrap();
        let f = embed(CommandInput::Probabilistic(&prob), &p).unwrap();
        let stop_row: Vec<f64> = p.get("cmd.speed_prob").unwrap().row(3).to_vec();
        assert_eq!(f.e_speed, stop_row);
        prob.speed = vec![0.5, 0.5];
        assert!(matches!(
            embed(CommandInput::Probabilistic(&prob), &p),
            Err(CommandError::EmbeddingShape { .. })
        ));
    }
}
