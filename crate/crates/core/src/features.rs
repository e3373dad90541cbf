//! Domain data model and its conversion into model inputs.
//!
//! A [`Slate`] is one ranking request: the user's recent interactions, the
//! candidate matches open at request time, and the single clicked match.
//! Encoding happens in two steps. [`SlateFeatures`] extracts the categorical
//! indices and scaled numeric columns once per slate; the graph-level
//! [`embed_slate`] then looks up the learnable embeddings and assembles the
//! history matrix and candidate matrix consumed by the scorer.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{DinParams, ParamVars};

/// Unix seconds.
pub type Timestamp = i64;

/// Length of the candidate window: only matches locking within a day are ranked.
pub const CANDIDATE_WINDOW_SECS: i64 = 86_400;

/// Numeric columns of an encoded history action before the optional
/// time-gap block.
pub const HISTORY_NUMERIC: usize = 5;
/// Numeric columns of an encoded candidate.
pub const CANDIDATE_NUMERIC: usize = 4;

/// Index into a categorical vocabulary. `0` is reserved for unknown values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CategoryId(pub u16);

impl CategoryId {
    pub const UNKNOWN: CategoryId = CategoryId(0);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InteractionType {
    MatchClick,
    TeamSave,
    ContestJoin {
        num_contests: u32,
        total_entry_fee: f64,
    },
}

impl InteractionType {
    pub const COUNT: usize = 3;

    pub fn index(&self) -> usize {
        match self {
            InteractionType::MatchClick => 0,
            InteractionType::TeamSave => 1,
            InteractionType::ContestJoin { .. } => 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            InteractionType::MatchClick => "click",
            InteractionType::TeamSave => "team_save",
            InteractionType::ContestJoin { .. } => "contest_join",
        }
    }
}

/// One past interaction, with the match state as it was at `timestamp`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoricalAction {
    pub sport: CategoryId,
    pub format: CategoryId,
    pub timestamp: Timestamp,
    pub interaction: InteractionType,
    pub ttrl_at_action: i64,
    pub lineups_out_at_action: bool,
    pub max_prize: f64,
}

/// Real-time state of a candidate match at request time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateFeatures {
    pub sport: CategoryId,
    pub format: CategoryId,
    /// Seconds until round lock, in `(0, 86400]`.
    pub ttrl: i64,
    /// `None` until lineups are announced.
    pub time_since_lineups: Option<i64>,
    pub max_prize: f64,
}

impl CandidateFeatures {
    pub fn check_window(&self) -> Result<()> {
        if self.ttrl <= 0 || self.ttrl > CANDIDATE_WINDOW_SECS {
            return Err(Error::WindowViolation(self.ttrl));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slate {
    pub user_id: String,
    pub request_time: Timestamp,
    /// Oldest first.
    pub history: Vec<HistoricalAction>,
    pub candidates: Vec<CandidateFeatures>,
    pub labels: Vec<f64>,
}

impl Slate {
    /// Index of the single positive candidate.
    pub fn positive(&self) -> Option<usize> {
        self.labels.iter().position(|&y| y > 0.0)
    }

    /// Checks every structural invariant of a slate.
    pub fn validate(&self, max_candidates: usize) -> std::result::Result<(), String> {
        let m = self.candidates.len();
        if m < 2 || m > max_candidates {
            return Err(format!("slate has {m} candidates, expected 2..={max_candidates}"));
        }
        if self.labels.len() != m {
            return Err(format!("{} labels for {m} candidates", self.labels.len()));
        }
        let positives = self.labels.iter().filter(|&&y| y == 1.0).count();
        let zeros = self.labels.iter().filter(|&&y| y == 0.0).count();
        if positives != 1 || zeros != m - 1 {
            return Err("labels must contain exactly one 1 and zeros elsewhere".into());
        }
        for c in &self.candidates {
            if c.ttrl <= 0 || c.ttrl > CANDIDATE_WINDOW_SECS {
                return Err(format!("candidate ttrl {} outside (0, 86400]", c.ttrl));
            }
            if c.max_prize < 0.0 || c.time_since_lineups.is_some_and(|t| t < 0) {
                return Err("negative candidate feature".into());
            }
        }
        let mut prev = i64::MIN;
        for a in &self.history {
            if a.timestamp >= self.request_time {
                return Err(format!(
                    "history action at {} does not precede t_c {}",
                    a.timestamp, self.request_time
                ));
            }
            if a.timestamp < prev {
                return Err("history timestamps decrease".into());
            }
            prev = a.timestamp;
            if a.ttrl_at_action < 0 || a.max_prize < 0.0 {
                return Err("negative history feature".into());
            }
            if let InteractionType::ContestJoin {
                num_contests,
                total_entry_fee,
            } = a.interaction
            {
                if num_contests < 1 || total_entry_fee < 0.0 {
                    return Err("contest join enrichment out of range".into());
                }
            }
        }
        Ok(())
    }
}

/// Names of the categorical values; position `i` maps to `CategoryId(i + 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vocabulary {
    pub sports: Vec<String>,
    pub formats: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self {
            sports: ["cricket", "football", "kabaddi", "basketball"]
                .map(String::from)
                .to_vec(),
            formats: ["t10", "t20", "odi", "test", "league", "cup"]
                .map(String::from)
                .to_vec(),
        }
    }
}

impl Vocabulary {
    pub fn sport_id(&self, name: &str) -> CategoryId {
        lookup(&self.sports, name)
    }

    pub fn format_id(&self, name: &str) -> CategoryId {
        lookup(&self.formats, name)
    }

    pub fn sport_name(&self, id: CategoryId) -> &str {
        name_of(&self.sports, id)
    }

    pub fn format_name(&self, id: CategoryId) -> &str {
        name_of(&self.formats, id)
    }
}

fn lookup(names: &[String], name: &str) -> CategoryId {
    names
        .iter()
        .position(|n| n == name)
        .map(|i| CategoryId(i as u16 + 1))
        .unwrap_or(CategoryId::UNKNOWN)
}

fn name_of(names: &[String], id: CategoryId) -> &str {
    match id.index() {
        0 => "unknown",
        i => names.get(i - 1).map(String::as_str).unwrap_or("unknown"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncodingConfig {
    /// Longest history kept; older actions are dropped.
    pub history_len: usize,
    pub max_candidates: usize,
    /// Strictly increasing time-gap bucket boundaries, in seconds.
    pub delta_t_buckets: Vec<i64>,
    pub sport_dim: usize,
    pub format_dim: usize,
    pub interaction_dim: usize,
    pub delta_t_dim: usize,
    /// Divisor applied after `log1p` on durations.
    pub seconds_scale: f64,
    /// Divisor applied after `log1p` on money amounts.
    pub currency_scale: f64,
    pub use_urgency_features: bool,
    pub use_positional_encoding: bool,
    pub vocabulary: Vocabulary,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        Self {
            history_len: 50,
            max_candidates: 20,
            delta_t_buckets: vec![60, 600, 3_600, 21_600, 86_400, 604_800, 2_592_000],
            sport_dim: 4,
            format_dim: 4,
            interaction_dim: 3,
            delta_t_dim: 4,
            seconds_scale: 10.0,
            currency_scale: 10.0,
            use_urgency_features: true,
            use_positional_encoding: true,
            vocabulary: Vocabulary::default(),
        }
    }
}

impl EncodingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.history_len == 0 {
            return Err(Error::Config("history_len must be positive".into()));
        }
        if self.max_candidates < 2 {
            return Err(Error::Config("max_candidates must be at least 2".into()));
        }
        if self.delta_t_buckets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "delta_t_buckets must be strictly increasing".into(),
            ));
        }
        if [self.sport_dim, self.format_dim, self.interaction_dim, self.delta_t_dim].contains(&0) {
            return Err(Error::Config("embedding dimensions must be positive".into()));
        }
        if !(self.seconds_scale > 0.0 && self.currency_scale > 0.0) {
            return Err(Error::Config("numeric scales must be positive".into()));
        }
        Ok(())
    }

    /// Width of an encoded history action.
    pub fn history_width(&self) -> usize {
        let base = self.sport_dim + self.format_dim + self.interaction_dim + HISTORY_NUMERIC;
        if self.use_positional_encoding {
            base + self.delta_t_dim + 1
        } else {
            base
        }
    }

    /// Width of an encoded candidate.
    pub fn candidate_width(&self) -> usize {
        self.sport_dim + self.format_dim + CANDIDATE_NUMERIC
    }

    /// Bucket of a time gap: the number of boundaries `<= dt`, i.e. the index
    /// of the first boundary strictly greater than `dt`.
    pub fn delta_t_bucket(&self, dt: i64) -> usize {
        self.delta_t_buckets.partition_point(|&b| b <= dt)
    }

    pub fn delta_t_vocab(&self) -> usize {
        self.delta_t_buckets.len() + 1
    }

    fn seconds(&self, s: f64) -> f64 {
        s.max(0.0).ln_1p() / self.seconds_scale
    }

    fn currency(&self, c: f64) -> f64 {
        c.max(0.0).ln_1p() / self.currency_scale
    }
}

/// Categorical indices and numeric columns of one slate, ready for embedding.
///
/// History rows are the most recent `history_len` actions, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct SlateFeatures {
    pub history_sport: Vec<usize>,
    pub history_format: Vec<usize>,
    pub history_kind: Vec<usize>,
    pub history_bucket: Vec<usize>,
    /// `history_rows x HISTORY_NUMERIC`
    pub history_numeric: Vec<f64>,
    /// Scaled `log1p(t_c - t_j)` per history row.
    pub history_gap: Vec<f64>,
    pub candidate_sport: Vec<usize>,
    pub candidate_format: Vec<usize>,
    /// `candidates x CANDIDATE_NUMERIC`
    pub candidate_numeric: Vec<f64>,
    pub labels: Vec<f64>,
}

impl SlateFeatures {
    pub fn new(slate: &Slate, cfg: &EncodingConfig) -> Result<Self> {
        let keep = slate.history.len().min(cfg.history_len);
        let recent = &slate.history[slate.history.len() - keep..];
        let mut f = SlateFeatures {
            history_sport: Vec::with_capacity(keep),
            history_format: Vec::with_capacity(keep),
            history_kind: Vec::with_capacity(keep),
            history_bucket: Vec::with_capacity(keep),
            history_numeric: Vec::with_capacity(keep * HISTORY_NUMERIC),
            history_gap: Vec::with_capacity(keep),
            candidate_sport: Vec::with_capacity(slate.candidates.len()),
            candidate_format: Vec::with_capacity(slate.candidates.len()),
            candidate_numeric: Vec::with_capacity(slate.candidates.len() * CANDIDATE_NUMERIC),
            labels: slate.labels.clone(),
        };
        for a in recent {
            let (bucket, gap, numeric) = history_columns(a, slate.request_time, cfg)?;
            f.history_sport.push(a.sport.index());
            f.history_format.push(a.format.index());
            f.history_kind.push(a.interaction.index());
            f.history_bucket.push(bucket);
            f.history_gap.push(gap);
            f.history_numeric.extend_from_slice(&numeric);
        }
        for c in &slate.candidates {
            f.candidate_sport.push(c.sport.index());
            f.candidate_format.push(c.format.index());
            f.candidate_numeric.extend_from_slice(&candidate_columns(c, cfg)?);
        }
        Ok(f)
    }

    pub fn history_rows(&self) -> usize {
        self.history_sport.len()
    }

    pub fn candidates(&self) -> usize {
        self.candidate_sport.len()
    }

    /// Unmasked (`true`) positions of the right-aligned padded history.
    pub fn mask(&self, history_len: usize) -> Vec<bool> {
        let n = self.history_rows();
        (0..history_len).map(|i| i >= history_len - n).collect()
    }
}

fn history_columns(
    a: &HistoricalAction,
    t_c: Timestamp,
    cfg: &EncodingConfig,
) -> Result<(usize, f64, [f64; HISTORY_NUMERIC])> {
    if a.timestamp > t_c {
        return Err(Error::TemporalOrder {
            action: a.timestamp,
            request: t_c,
        });
    }
    let dt = t_c - a.timestamp;
    let (contests, fee) = match a.interaction {
        InteractionType::ContestJoin {
            num_contests,
            total_entry_fee,
        } => ((num_contests as f64).ln_1p(), cfg.currency(total_entry_fee)),
        _ => (0.0, 0.0),
    };
    let numeric = [
        cfg.seconds(a.ttrl_at_action as f64),
        if a.lineups_out_at_action { 1.0 } else { 0.0 },
        cfg.currency(a.max_prize),
        contests,
        fee,
    ];
    Ok((cfg.delta_t_bucket(dt), cfg.seconds(dt as f64), numeric))
}

fn candidate_columns(c: &CandidateFeatures, cfg: &EncodingConfig) -> Result<[f64; CANDIDATE_NUMERIC]> {
    c.check_window()?;
    let prize = cfg.currency(c.max_prize);
    if !cfg.use_urgency_features {
        return Ok([0.0, 0.0, 0.0, prize]);
    }
    let (announced, since) = match c.time_since_lineups {
        Some(s) => (1.0, cfg.seconds(s as f64)),
        None => (0.0, 0.0),
    };
    Ok([cfg.seconds(c.ttrl as f64), announced, since, prize])
}

/// Graph handles of an encoded slate.
#[derive(Debug, Clone)]
pub struct EncodedSlate {
    /// `history_len x d_h`, right-aligned, zero rows where masked.
    pub history: Var,
    pub mask: Vec<bool>,
    /// `m x d_z`
    pub candidates: Var,
    pub labels: Vec<f64>,
}

/// Embeds the valid history rows: `n x d_h`.
pub fn embed_history_rows(
    g: &mut Graph<'_>,
    vars: &ParamVars,
    f: &SlateFeatures,
    cfg: &EncodingConfig,
) -> Result<Var> {
    let n = f.history_rows();
    let sport = g.gather(vars.sport, &f.history_sport)?;
    let format = g.gather(vars.format, &f.history_format)?;
    let kind = g.gather(vars.interaction, &f.history_kind)?;
    let numeric = g.constant(Tensor::matrix(n, HISTORY_NUMERIC, f.history_numeric.clone())?);
    let mut x = g.concat(sport, format)?;
    x = g.concat(x, kind)?;
    x = g.concat(x, numeric)?;
    if cfg.use_positional_encoding {
        let table = vars
            .delta_t
            .ok_or_else(|| Error::Config("positional encoding enabled but no Δt table".into()))?;
        let bucket = g.gather(table, &f.history_bucket)?;
        let gap = g.constant(Tensor::matrix(n, 1, f.history_gap.clone())?);
        x = g.concat(x, bucket)?;
        x = g.concat(x, gap)?;
    }
    Ok(x)
}

/// Embeds all candidates: `m x d_z`.
pub fn embed_candidates(g: &mut Graph<'_>, vars: &ParamVars, f: &SlateFeatures) -> Result<Var> {
    let m = f.candidates();
    let sport = g.gather(vars.sport, &f.candidate_sport)?;
    let format = g.gather(vars.format, &f.candidate_format)?;
    let numeric = g.constant(Tensor::matrix(m, CANDIDATE_NUMERIC, f.candidate_numeric.clone())?);
    let x = g.concat(sport, format)?;
    g.concat(x, numeric)
}

/// Builds the padded history matrix, mask and candidate matrix on `g`.
pub fn embed_slate(
    g: &mut Graph<'_>,
    vars: &ParamVars,
    f: &SlateFeatures,
    cfg: &EncodingConfig,
) -> Result<EncodedSlate> {
    let h_max = cfg.history_len;
    let d_h = cfg.history_width();
    let n = f.history_rows();
    let history = if n == 0 {
        g.constant(Tensor::zeros(vec![h_max, d_h]))
    } else {
        let rows = embed_history_rows(g, vars, f, cfg)?;
        if n == h_max {
            rows
        } else {
            let pad = g.constant(Tensor::zeros(vec![h_max - n, d_h]));
            g.concat_rows(pad, rows)?
        }
    };
    let candidates = embed_candidates(g, vars, f)?;
    Ok(EncodedSlate {
        history,
        mask: f.mask(h_max),
        candidates,
        labels: f.labels.clone(),
    })
}

/// Encoded values of one slate, detached from any graph.
#[derive(Debug, Clone, PartialEq)]
pub struct SlateTensors {
    pub history: Tensor,
    pub mask: Vec<bool>,
    pub candidates: Tensor,
    pub labels: Tensor,
}

/// Encodes one history action relative to request time `t_c`: a `d_h` vector.
pub fn encode_history_action(
    action: &HistoricalAction,
    t_c: Timestamp,
    cfg: &EncodingConfig,
    params: &DinParams,
) -> Result<Tensor> {
    let (bucket, gap, numeric) = history_columns(action, t_c, cfg)?;
    let f = SlateFeatures {
        history_sport: vec![action.sport.index()],
        history_format: vec![action.format.index()],
        history_kind: vec![action.interaction.index()],
        history_bucket: vec![bucket],
        history_numeric: numeric.to_vec(),
        history_gap: vec![gap],
        candidate_sport: Vec::new(),
        candidate_format: Vec::new(),
        candidate_numeric: Vec::new(),
        labels: Vec::new(),
    };
    let mut g = Graph::new();
    let vars = params.record(&mut g);
    let row = embed_history_rows(&mut g, &vars, &f, cfg)?;
    Ok(Tensor::vector(g.value(row).data().to_vec()))
}

/// Encodes one candidate: a `d_z` vector.
pub fn encode_candidate(
    candidate: &CandidateFeatures,
    cfg: &EncodingConfig,
    params: &DinParams,
) -> Result<Tensor> {
    let f = SlateFeatures {
        history_sport: Vec::new(),
        history_format: Vec::new(),
        history_kind: Vec::new(),
        history_bucket: Vec::new(),
        history_numeric: Vec::new(),
        history_gap: Vec::new(),
        candidate_sport: vec![candidate.sport.index()],
        candidate_format: vec![candidate.format.index()],
        candidate_numeric: candidate_columns(candidate, cfg)?.to_vec(),
        labels: Vec::new(),
    };
    let mut g = Graph::new();
    let vars = params.record(&mut g);
    let row = embed_candidates(&mut g, &vars, &f)?;
    Ok(Tensor::vector(g.value(row).data().to_vec()))
}

/// Encodes a whole slate into padded history, mask, candidates and labels.
pub fn encode_slate(slate: &Slate, cfg: &EncodingConfig, params: &DinParams) -> Result<SlateTensors> {
    let f = SlateFeatures::new(slate, cfg)?;
    let mut g = Graph::new();
    let vars = params.record(&mut g);
    let enc = embed_slate(&mut g, &vars, &f, cfg)?;
    Ok(SlateTensors {
        history: g.value(enc.history).clone(),
        mask: enc.mask,
        candidates: g.value(enc.candidates).clone(),
        labels: Tensor::vector(enc.labels),
    })
}
