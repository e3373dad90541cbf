//! Synthetic users, matches and click logs with known ground truth.
//!
//! Every match gets a sport, a format, a round-lock time, a lineup
//! announcement between 15 and 120 minutes before lock, and a log-normal
//! prize. Each user is either a power user or a casual user, which fixes the
//! ranges of three latent parameters: urgency sensitivity `β_u`, the
//! half-life of recency effects, and a sport-affinity vector.
//!
//! At each request time the candidate set is every match locking within the
//! next 24 hours. The user clicks exactly one candidate, drawn from a softmax
//! over
//!
//! ```text
//! u_i = affinity[sport_i]
//!     + β_u · (exp(-ttrl_i / scale) + boost · lineups_out_i)
//!     + γ · Σ_j 2^(-(t_c - t_j) / half_life) · [sport_j = sport_i]
//!     + ρ · (log1p(prize_i) / 10 - 1)
//! ```
//!
//! where the sum runs over the history shown in the slate. A click may
//! escalate to a team save and then to a contest join.
//!
//! All randomness comes from ChaCha streams: stream 0 builds the schedule and
//! stream `u + 1` simulates user `u`, so results do not depend on thread
//! count or platform.

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    CandidateFeatures, CategoryId, HistoricalAction, InteractionType, Slate, Timestamp, CANDIDATE_WINDOW_SECS,
};

/// Start of simulated time (unix seconds).
pub const EPOCH: Timestamp = 1_700_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchetypeConfig {
    /// Urgency sensitivity range.
    pub beta: [f64; 2],
    pub half_life_hours: [f64; 2],
    /// Inclusive range of ranking requests per user.
    pub requests: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Fractions of users assigned to train, validation and test.
    pub user_fractions: [f64; 3],
    /// Period boundaries as fractions of the observed request-time span.
    pub period_cuts: [f64; 2],
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            user_fractions: [0.6, 0.2, 0.2],
            period_cuts: [0.6, 0.8],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub n_users: usize,
    pub n_matches: usize,
    pub horizon_days: f64,
    /// Popularity of each sport, aligned with the encoding vocabulary.
    pub sport_weights: Vec<f64>,
    pub format_weights: Vec<f64>,
    pub power_fraction: f64,
    pub power: ArchetypeConfig,
    pub casual: ArchetypeConfig,
    /// Inclusive candidate-count range; larger candidate sets are subsampled.
    pub slate_size: [usize; 2],
    pub history_len: usize,
    pub affinity_scale: f64,
    pub recency_weight: f64,
    pub prize_weight: f64,
    pub urgency_scale_hours: f64,
    pub lineup_boost: f64,
    pub team_save_prob: f64,
    pub contest_join_prob: f64,
    pub split: SplitConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            n_users: 10_000,
            n_matches: 240,
            horizon_days: 30.0,
            sport_weights: vec![0.55, 0.25, 0.12, 0.08],
            format_weights: vec![0.15, 0.35, 0.15, 0.05, 0.2, 0.1],
            power_fraction: 0.3,
            power: ArchetypeConfig {
                beta: [2.5, 4.5],
                half_life_hours: [24.0, 72.0],
                requests: [8, 16],
            },
            casual: ArchetypeConfig {
                beta: [1.0, 2.5],
                half_life_hours: [48.0, 168.0],
                requests: [3, 8],
            },
            slate_size: [2, 12],
            history_len: 50,
            affinity_scale: 1.0,
            recency_weight: 1.5,
            prize_weight: 0.5,
            urgency_scale_hours: 6.0,
            lineup_boost: 0.5,
            team_save_prob: 0.5,
            contest_join_prob: 0.5,
            split: SplitConfig::default(),
        }
    }
}

fn check_range(name: &str, r: [f64; 2]) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
        return Err(Error::Config(format!("{name} range {r:?} is not ordered")));
    }
    Ok(())
}

fn check_distribution(name: &str, w: &[f64]) -> Result<()> {
    if w.is_empty() || w.iter().any(|&p| !(p >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("{name} must be non-negative and sum to 1")));
    }
    Ok(())
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.n_matches == 0 {
            return Err(Error::Config("n_users and n_matches must be positive".into()));
        }
        if !(self.horizon_days > 0.0) {
            return Err(Error::Config("horizon_days must be positive".into()));
        }
        check_distribution("sport_weights", &self.sport_weights)?;
        check_distribution("format_weights", &self.format_weights)?;
        if !(0.0..=1.0).contains(&self.power_fraction) {
            return Err(Error::Config("power_fraction must lie in [0, 1]".into()));
        }
        for (name, a) in [("power", &self.power), ("casual", &self.casual)] {
            check_range(&format!("{name}.beta"), a.beta)?;
            check_range(&format!("{name}.half_life_hours"), a.half_life_hours)?;
            if a.half_life_hours[0] <= 0.0 {
                return Err(Error::Config(format!("{name}.half_life_hours must be positive")));
            }
            if a.requests[0] == 0 || a.requests[0] > a.requests[1] {
                return Err(Error::Config(format!("{name}.requests range is invalid")));
            }
        }
        if self.slate_size[0] < 2 || self.slate_size[0] > self.slate_size[1] {
            return Err(Error::Config("slate_size must satisfy 2 <= min <= max".into()));
        }
        if self.history_len == 0 {
            return Err(Error::Config("history_len must be positive".into()));
        }
        if !(self.urgency_scale_hours > 0.0) {
            return Err(Error::Config("urgency_scale_hours must be positive".into()));
        }
        for p in [self.team_save_prob, self.contest_join_prob] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config("escalation probabilities must lie in [0, 1]".into()));
            }
        }
        self.split.validate()
    }

    fn horizon_secs(&self) -> i64 {
        (self.horizon_days * 86_400.0).round() as i64
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        let f = self.user_fractions;
        if f.iter().any(|&x| !(x > 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("user_fractions must be positive and sum to 1".into()));
        }
        let [a, b] = self.period_cuts;
        if !(0.0 < a && a < b && b < 1.0) {
            return Err(Error::Config("period_cuts must satisfy 0 < a < b < 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub id: usize,
    pub sport: CategoryId,
    pub format: CategoryId,
    /// Round lock; contests close at match start.
    pub start: Timestamp,
    pub lineups_at: Timestamp,
    pub max_prize: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Archetype {
    Power,
    Casual,
}

/// Latent parameters of one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserTruth {
    pub user_id: String,
    pub archetype: Archetype,
    pub beta: f64,
    pub half_life_secs: f64,
    /// Indexed by sport vocabulary position (category id minus one).
    pub affinity: Vec<f64>,
}

/// Click-model constants shared by all users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickModel {
    pub recency_weight: f64,
    pub prize_weight: f64,
    pub urgency_scale_secs: f64,
    pub lineup_boost: f64,
}

impl ClickModel {
    fn from_config(cfg: &SimConfig) -> Self {
        Self {
            recency_weight: cfg.recency_weight,
            prize_weight: cfg.prize_weight,
            urgency_scale_secs: cfg.urgency_scale_hours * 3600.0,
            lineup_boost: cfg.lineup_boost,
        }
    }

    pub fn urgency(&self, c: &CandidateFeatures) -> f64 {
        let lineups = if c.time_since_lineups.is_some() { self.lineup_boost } else { 0.0 };
        (-(c.ttrl as f64) / self.urgency_scale_secs).exp() + lineups
    }

    /// Click utilities of every candidate; the click distribution is their softmax.
    pub fn utilities(&self, user: &UserTruth, slate: &Slate) -> Vec<f64> {
        self.utilities_with_beta(user, slate, user.beta)
    }

    /// Utilities with the urgency sensitivity replaced by `beta`.
    pub fn utilities_with_beta(&self, user: &UserTruth, slate: &Slate, beta: f64) -> Vec<f64> {
        slate
            .candidates
            .iter()
            .map(|c| {
                let affinity = user.affinity.get(c.sport.index().wrapping_sub(1)).copied().unwrap_or(0.0);
                let recency: f64 = slate
                    .history
                    .iter()
                    .filter(|a| a.sport == c.sport)
                    .map(|a| (-((slate.request_time - a.timestamp) as f64) / user.half_life_secs).exp2())
                    .sum();
                let prize = c.max_prize.max(0.0).ln_1p() / 10.0 - 1.0;
                affinity + beta * self.urgency(c) + self.recency_weight * recency + self.prize_weight * prize
            })
            .collect()
    }

    pub fn log_probs(&self, user: &UserTruth, slate: &Slate) -> Vec<f64> {
        log_softmax(&self.utilities(user, slate))
    }
}

fn log_softmax(u: &[f64]) -> Vec<f64> {
    let max = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + u.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    u.iter().map(|&v| v - lse).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub click_model: ClickModel,
    pub users: Vec<UserTruth>,
}

impl GroundTruth {
    pub fn user(&self, user_id: &str) -> Option<&UserTruth> {
        // User ids are generated in sorted order.
        self.users
            .binary_search_by(|u| u.user_id.as_str().cmp(user_id))
            .ok()
            .map(|i| &self.users[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedData {
    pub matches: Vec<Match>,
    /// Ordered by `(user_id, request_time)`.
    pub slates: Vec<Slate>,
    /// Log-probability of the realized click of each slate.
    pub click_log_probs: Vec<f64>,
    pub truth: GroundTruth,
    /// Requests dropped because fewer than two candidates were open.
    pub skipped: usize,
}

pub fn user_id(index: usize) -> String {
    format!("u{index:07}")
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        return lo;
    }
    lo + (hi - lo) * rng.gen::<f64>()
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; 1 - U keeps the logarithm finite.
    let u1 = 1.0 - rng.gen::<f64>();
    let u2 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn log_normal(rng: &mut ChaCha8Rng, median: f64, sigma: f64) -> f64 {
    median * (sigma * standard_normal(rng)).exp()
}

/// Inverse-CDF draw from a discrete distribution.
fn categorical(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let u = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Failures before the first success, by inverse CDF.
fn geometric(rng: &mut ChaCha8Rng, p: f64) -> u32 {
    let u = 1.0 - rng.gen::<f64>();
    (u.ln() / (1.0 - p).ln()).floor() as u32
}

pub fn generate_matches(cfg: &SimConfig) -> Result<Vec<Match>> {
    cfg.validate()?;
    let mut rng = cfg.rng(0);
    let last_start = cfg.horizon_secs() + CANDIDATE_WINDOW_SECS;
    let mut matches: Vec<Match> = (0..cfg.n_matches)
        .map(|_| {
            let start = EPOCH + rng.gen_range(0..=last_start);
            let lead = (uniform(&mut rng, 15.0, 120.0) * 60.0).round() as i64;
            Match {
                id: 0,
                sport: CategoryId(categorical(&mut rng, &cfg.sport_weights) as u16 + 1),
                format: CategoryId(categorical(&mut rng, &cfg.format_weights) as u16 + 1),
                start,
                lineups_at: start - lead,
                max_prize: log_normal(&mut rng, 50_000.0, 1.0).round(),
            }
        })
        .collect();
    matches.sort_by_key(|m| m.start);
    for (i, m) in matches.iter_mut().enumerate() {
        m.id = i;
    }
    Ok(matches)
}

fn draw_user(cfg: &SimConfig, index: usize, rng: &mut ChaCha8Rng) -> (UserTruth, usize) {
    let power = rng.gen::<f64>() < cfg.power_fraction;
    let a = if power { &cfg.power } else { &cfg.casual };
    let beta = uniform(rng, a.beta[0], a.beta[1]);
    let half_life_secs = uniform(rng, a.half_life_hours[0], a.half_life_hours[1]) * 3600.0;
    let affinity = (0..cfg.sport_weights.len())
        .map(|_| cfg.affinity_scale * standard_normal(rng))
        .collect();
    let requests = rng.gen_range(a.requests[0]..=a.requests[1]);
    let truth = UserTruth {
        user_id: user_id(index),
        archetype: if power { Archetype::Power } else { Archetype::Casual },
        beta,
        half_life_secs,
        affinity,
    };
    (truth, requests)
}

fn action_on(m: &Match, t: Timestamp, interaction: InteractionType) -> HistoricalAction {
    HistoricalAction {
        sport: m.sport,
        format: m.format,
        timestamp: t,
        interaction,
        ttrl_at_action: (m.start - t).max(0),
        lineups_out_at_action: t >= m.lineups_at,
        max_prize: m.max_prize,
    }
}

struct UserStream {
    truth: UserTruth,
    slates: Vec<Slate>,
    log_probs: Vec<f64>,
    skipped: usize,
}

/// Simulates one user's requests, clicks and escalations.
pub fn simulate_user_stream(
    cfg: &SimConfig,
    model: &ClickModel,
    truth: &UserTruth,
    requests: usize,
    schedule: &[Match],
    rng: &mut ChaCha8Rng,
) -> (Vec<Slate>, Vec<f64>, usize) {
    let horizon = cfg.horizon_secs();
    let times: BTreeSet<Timestamp> = (0..requests)
        .map(|_| EPOCH + rng.gen_range(CANDIDATE_WINDOW_SECS..=horizon.max(CANDIDATE_WINDOW_SECS)))
        .collect();
    let mut log: Vec<HistoricalAction> = Vec::new();
    let mut slates = Vec::new();
    let mut log_probs = Vec::new();
    let mut skipped = 0;

    for t_c in times {
        let lo = schedule.partition_point(|m| m.start <= t_c);
        let hi = schedule.partition_point(|m| m.start <= t_c + CANDIDATE_WINDOW_SECS);
        let mut open: Vec<&Match> = schedule[lo..hi].iter().collect();
        if open.len() < cfg.slate_size[0] {
            skipped += 1;
            continue;
        }
        while open.len() > cfg.slate_size[1] {
            let drop = rng.gen_range(0..open.len());
            open.remove(drop);
        }
        let past = log.partition_point(|a| a.timestamp < t_c);
        let keep = past.min(cfg.history_len);
        let history = log[past - keep..past].to_vec();
        let candidates: Vec<CandidateFeatures> = open
            .iter()
            .map(|m| CandidateFeatures {
                sport: m.sport,
                format: m.format,
                ttrl: m.start - t_c,
                time_since_lineups: (t_c >= m.lineups_at).then(|| t_c - m.lineups_at),
                max_prize: m.max_prize,
            })
            .collect();
        let mut slate = Slate {
            user_id: truth.user_id.clone(),
            request_time: t_c,
            history,
            candidates,
            labels: vec![0.0; open.len()],
        };
        let lp = model.log_probs(truth, &slate);
        let probs: Vec<f64> = lp.iter().map(|v| v.exp()).collect();
        let clicked = categorical(rng, &probs);
        slate.labels[clicked] = 1.0;
        log_probs.push(lp[clicked]);
        slates.push(slate);

        let m = open[clicked];
        let mut new_actions = vec![action_on(m, t_c, InteractionType::MatchClick)];
        let mut t = t_c;
        if rng.gen::<f64>() < cfg.team_save_prob {
            t += rng.gen_range(30..=600);
            if t < m.start {
                new_actions.push(action_on(m, t, InteractionType::TeamSave));
                if rng.gen::<f64>() < cfg.contest_join_prob {
                    t += rng.gen_range(30..=600);
                    let num_contests = 1 + geometric(rng, 0.5);
                    let fee = log_normal(rng, 50.0, 1.0).round().max(1.0) * num_contests as f64;
                    if t < m.start {
                        new_actions.push(action_on(
                            m,
                            t,
                            InteractionType::ContestJoin {
                                num_contests,
                                total_entry_fee: fee,
                            },
                        ));
                    }
                }
            }
        }
        for a in new_actions {
            let at = log.partition_point(|x| x.timestamp <= a.timestamp);
            log.insert(at, a);
        }
    }
    (slates, log_probs, skipped)
}

fn simulate_range(cfg: &SimConfig, model: &ClickModel, schedule: &[Match], users: std::ops::Range<usize>) -> Vec<UserStream> {
    users
        .map(|u| {
            let mut rng = cfg.rng(u as u64 + 1);
            let (truth, requests) = draw_user(cfg, u, &mut rng);
            let (slates, log_probs, skipped) = simulate_user_stream(cfg, model, &truth, requests, schedule, &mut rng);
            UserStream {
                truth,
                slates,
                log_probs,
                skipped,
            }
        })
        .collect()
}

/// Generates the full dataset; `threads` only affects speed.
pub fn generate(cfg: &SimConfig, threads: usize) -> Result<GeneratedData> {
    let matches = generate_matches(cfg)?;
    let model = ClickModel::from_config(cfg);
    let threads = threads.max(1).min(cfg.n_users);
    let chunk = cfg.n_users.div_ceil(threads);
    let streams: Vec<UserStream> = if threads == 1 {
        simulate_range(cfg, &model, &matches, 0..cfg.n_users)
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads)
                .map(|t| {
                    let range = t * chunk..((t + 1) * chunk).min(cfg.n_users);
                    let (model, matches) = (&model, &matches);
                    s.spawn(move || simulate_range(cfg, model, matches, range))
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("simulation worker panicked"))
                .collect()
        })
    };
    let mut data = GeneratedData {
        matches,
        slates: Vec::new(),
        click_log_probs: Vec::new(),
        truth: GroundTruth {
            click_model: model,
            users: Vec::with_capacity(cfg.n_users),
        },
        skipped: 0,
    };
    for s in streams {
        data.slates.extend(s.slates);
        data.click_log_probs.extend(s.log_probs);
        data.truth.users.push(s.truth);
        data.skipped += s.skipped;
    }
    Ok(data)
}

/// Train, validation and test slates.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<Slate>,
    pub validation: Vec<Slate>,
    pub test: Vec<Slate>,
}

/// Which part of the split a user belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitPart {
    Train,
    Validation,
    Test,
}

/// Shuffles `users` with `seed` and deals them into the three parts.
pub fn partition_users<'a>(
    users: impl IntoIterator<Item = &'a str>,
    cfg: &SplitConfig,
    seed: u64,
) -> Result<HashMap<&'a str, SplitPart>> {
    cfg.validate()?;
    let users: BTreeSet<&str> = users.into_iter().collect();
    if users.len() < 3 {
        return Err(Error::Config(format!("split needs at least 3 users, found {}", users.len())));
    }
    let mut users: Vec<&str> = users.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    for i in (1..users.len()).rev() {
        let j = rng.gen_range(0..=i);
        users.swap(i, j);
    }
    let n = users.len() as f64;
    let n_train = (cfg.user_fractions[0] * n).round() as usize;
    let n_val = (cfg.user_fractions[1] * n).round() as usize;
    Ok(users
        .into_iter()
        .enumerate()
        .map(|(pos, u)| {
            let part = if pos < n_train {
                SplitPart::Train
            } else if pos < n_train + n_val {
                SplitPart::Validation
            } else {
                SplitPart::Test
            };
            (u, part)
        })
        .collect())
}

/// Disjoint-user, out-of-time split.
///
/// Users are dealt into three groups by [`partition_users`]. Training keeps
/// the training users' requests up to the first cut; validation and test
/// keep their users' requests in the two periods that follow.
pub fn split_dataset(slates: &[Slate], cfg: &SplitConfig, seed: u64) -> Result<DatasetSplit> {
    let group_of = partition_users(slates.iter().map(|s| s.user_id.as_str()), cfg, seed)?;

    let t_min = slates.iter().map(|s| s.request_time).min().unwrap_or(0);
    let t_max = slates.iter().map(|s| s.request_time).max().unwrap_or(0);
    let span = (t_max - t_min) as f64;
    let cut1 = t_min + (cfg.period_cuts[0] * span).round() as i64;
    let cut2 = t_min + (cfg.period_cuts[1] * span).round() as i64;

    let mut out = DatasetSplit {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for s in slates {
        let t = s.request_time;
        match group_of[s.user_id.as_str()] {
            SplitPart::Train if t <= cut1 => out.train.push(s.clone()),
            SplitPart::Validation if t > cut1 && t <= cut2 => out.validation.push(s.clone()),
            SplitPart::Test if t > cut2 => out.test.push(s.clone()),
            _ => {}
        }
    }
    if out.train.is_empty() || out.validation.is_empty() || out.test.is_empty() {
        return Err(Error::Config(format!(
            "degenerate split: {} / {} / {} slates",
            out.train.len(),
            out.validation.len(),
            out.test.len()
        )));
    }
    Ok(out)
}
