//! JSONL slate files, run configuration, and dataset manifests.
//!
//! Each line of a slate file is one JSON object:
//!
//! ```json
//! {"user_id":"u0000001","t_c":1700100000,
//!  "history":[{"sport":"cricket","format":"t20","t":1700090000,"kind":"contest_join",
//!              "num_contests":2,"entry_fee":98.0,"ttrl_at_action":5400,
//!              "lineups_out":false,"max_prize":50000.0}],
//!  "candidates":[{"sport":"football","format":"league","ttrl":3600,
//!                 "time_since_lineups":600,"max_prize":20000.0}],
//!  "label":0}
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{CandidateFeatures, HistoricalAction, InteractionType, Slate, Vocabulary};
use crate::model::ModelConfig;
use crate::sim::{GeneratedData, GroundTruth, Match, SimConfig};
use crate::train::{TrainConfig, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Click,
    TeamSave,
    ContestJoin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionRecord {
    pub sport: String,
    pub format: String,
    pub t: i64,
    pub kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_contests: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entry_fee: Option<f64>,
    pub ttrl_at_action: i64,
    pub lineups_out: bool,
    pub max_prize: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateRecord {
    pub sport: String,
    pub format: String,
    pub ttrl: i64,
    pub time_since_lineups: Option<i64>,
    pub max_prize: f64,
}

/// One line of a slate file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlateRecord {
    pub user_id: String,
    pub t_c: i64,
    pub history: Vec<ActionRecord>,
    pub candidates: Vec<CandidateRecord>,
    pub label: usize,
}

impl SlateRecord {
    pub fn from_slate(slate: &Slate, vocab: &Vocabulary) -> Result<Self> {
        let label = slate.positive().ok_or(Error::DegenerateSlate)?;
        let history = slate
            .history
            .iter()
            .map(|a| {
                let (kind, num_contests, entry_fee) = match a.interaction {
                    InteractionType::MatchClick => (ActionKind::Click, None, None),
                    InteractionType::TeamSave => (ActionKind::TeamSave, None, None),
                    InteractionType::ContestJoin {
                        num_contests,
                        total_entry_fee,
                    } => (ActionKind::ContestJoin, Some(num_contests), Some(total_entry_fee)),
                };
                ActionRecord {
                    sport: vocab.sport_name(a.sport).to_string(),
                    format: vocab.format_name(a.format).to_string(),
                    t: a.timestamp,
                    kind,
                    num_contests,
                    entry_fee,
                    ttrl_at_action: a.ttrl_at_action,
                    lineups_out: a.lineups_out_at_action,
                    max_prize: a.max_prize,
                }
            })
            .collect();
        let candidates = slate
            .candidates
            .iter()
            .map(|c| CandidateRecord {
                sport: vocab.sport_name(c.sport).to_string(),
                format: vocab.format_name(c.format).to_string(),
                ttrl: c.ttrl,
                time_since_lineups: c.time_since_lineups,
                max_prize: c.max_prize,
            })
            .collect();
        Ok(Self {
            user_id: slate.user_id.clone(),
            t_c: slate.request_time,
            history,
            candidates,
            label,
        })
    }

    /// Converts to a [`Slate`] after checking the record invariants.
    pub fn to_slate(&self, vocab: &Vocabulary, max_candidates: usize) -> std::result::Result<Slate, String> {
        let m = self.candidates.len();
        if self.label >= m {
            return Err(format!("label {} out of range for {m} candidates", self.label));
        }
        let mut history = Vec::with_capacity(self.history.len());
        for a in &self.history {
            let interaction = match a.kind {
                ActionKind::Click => InteractionType::MatchClick,
                ActionKind::TeamSave => InteractionType::TeamSave,
                ActionKind::ContestJoin => InteractionType::ContestJoin {
                    num_contests: a.num_contests.ok_or("contest_join without num_contests")?,
                    total_entry_fee: a.entry_fee.ok_or("contest_join without entry_fee")?,
                },
            };
            if a.kind != ActionKind::ContestJoin && (a.num_contests.is_some() || a.entry_fee.is_some()) {
                return Err("num_contests and entry_fee are only allowed on contest_join".into());
            }
            history.push(HistoricalAction {
                sport: vocab.sport_id(&a.sport),
                format: vocab.format_id(&a.format),
                timestamp: a.t,
                interaction,
                ttrl_at_action: a.ttrl_at_action,
                lineups_out_at_action: a.lineups_out,
                max_prize: a.max_prize,
            });
        }
        let candidates = self
            .candidates
            .iter()
            .map(|c| CandidateFeatures {
                sport: vocab.sport_id(&c.sport),
                format: vocab.format_id(&c.format),
                ttrl: c.ttrl,
                time_since_lineups: c.time_since_lineups,
                max_prize: c.max_prize,
            })
            .collect();
        let mut labels = vec![0.0; m];
        labels[self.label] = 1.0;
        let slate = Slate {
            user_id: self.user_id.clone(),
            request_time: self.t_c,
            history,
            candidates,
            labels,
        };
        slate.validate(max_candidates)?;
        Ok(slate)
    }
}

pub fn write_slates(path: impl AsRef<Path>, slates: &[Slate], vocab: &Vocabulary) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in slates {
        serde_json::to_writer(&mut w, &SlateRecord::from_slate(s, vocab)?)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a slate file, stopping at the first malformed or invalid line.
pub fn read_slates(path: impl AsRef<Path>, vocab: &Vocabulary, max_candidates: usize) -> Result<Vec<Slate>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SlateRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let slate = record
            .to_slate(vocab, max_candidates)
            .map_err(|message| Error::Validation { line: i + 1, message })?;
        out.push(slate);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineIssue {
    pub line: usize,
    pub message: String,
}

/// Outcome of checking every line of a slate file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub records: usize,
    pub valid: usize,
    pub issues: Vec<LineIssue>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.issues.is_empty()
    }
}

pub fn validate_slates(path: impl AsRef<Path>, vocab: &Vocabulary, max_candidates: usize) -> Result<ValidationReport> {
    let reader = BufReader::new(File::open(path)?);
    let mut report = ValidationReport {
        records: 0,
        valid: 0,
        issues: Vec::new(),
    };
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        report.records += 1;
        let checked = serde_json::from_str::<SlateRecord>(&line)
            .map_err(|e| format!("parse error: {e}"))
            .and_then(|r| r.to_slate(vocab, max_candidates));
        match checked {
            Ok(_) => report.valid += 1,
            Err(message) => report.issues.push(LineIssue { line: i + 1, message }),
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub out_dir: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3],
            variants: Variant::ALL.to_vec(),
        }
    }
}

/// Everything a command needs, read from one TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides the simulator and training seeds when set.
    pub seed: Option<u64>,
    pub threads: usize,
    pub paths: PathsConfig,
    pub sim: SimConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ablation: AblationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            threads: 1,
            paths: PathsConfig::default(),
            sim: SimConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.apply_overrides(None, None);
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies command-line overrides and propagates seed and thread count.
    pub fn apply_overrides(&mut self, seed: Option<u64>, threads: Option<usize>) {
        if seed.is_some() {
            self.seed = seed;
        }
        if let Some(t) = threads {
            self.threads = t;
        }
        if let Some(s) = self.seed {
            self.sim.seed = s;
            self.train.seed = s;
        }
        self.threads = self.threads.max(1);
        self.train.threads = self.threads;
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.model.validate()?;
        self.model.encoding.validate()?;
        self.train.validate()?;
        let vocab = &self.model.encoding.vocabulary;
        if self.sim.sport_weights.len() != vocab.sports.len() {
            return Err(Error::Config(format!(
                "sim.sport_weights has {} entries for {} sports",
                self.sim.sport_weights.len(),
                vocab.sports.len()
            )));
        }
        if self.sim.format_weights.len() != vocab.formats.len() {
            return Err(Error::Config(format!(
                "sim.format_weights has {} entries for {} formats",
                self.sim.format_weights.len(),
                vocab.formats.len()
            )));
        }
        if self.sim.slate_size[1] > self.model.encoding.max_candidates {
            return Err(Error::Config("sim.slate_size exceeds model.encoding.max_candidates".into()));
        }
        if self.ablation.seeds.is_empty() {
            return Err(Error::Config("ablation.seeds must not be empty".into()));
        }
        Ok(())
    }
}

/// SHA-256 of the canonical JSON form of a value.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetCounts {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub skipped: usize,
    pub users: usize,
    pub matches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub config_hash: String,
    pub counts: DatasetCounts,
    pub files: Vec<String>,
}

pub const TRAIN_FILE: &str = "train.jsonl";
pub const VALIDATION_FILE: &str = "validation.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const TRUTH_FILE: &str = "ground_truth.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Serialize, Deserialize)]
struct TruthFile {
    truth: GroundTruth,
    matches: Vec<Match>,
}

/// Writes the split, the ground-truth sidecar and the manifest into `dir`.
pub fn write_dataset(
    dir: impl AsRef<Path>,
    cfg: &SimConfig,
    vocab: &Vocabulary,
    data: &GeneratedData,
    split: &crate::sim::DatasetSplit,
) -> Result<Manifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    write_slates(dir.join(TRAIN_FILE), &split.train, vocab)?;
    write_slates(dir.join(VALIDATION_FILE), &split.validation, vocab)?;
    write_slates(dir.join(TEST_FILE), &split.test, vocab)?;
    let truth = TruthFile {
        truth: data.truth.clone(),
        matches: data.matches.clone(),
    };
    std::fs::write(dir.join(TRUTH_FILE), serde_json::to_vec(&truth)?)?;
    let manifest = Manifest {
        seed: cfg.seed,
        config_hash: config_hash(&(cfg, vocab))?,
        counts: DatasetCounts {
            train: split.train.len(),
            validation: split.validation.len(),
            test: split.test.len(),
            skipped: data.skipped,
            users: data.truth.users.len(),
            matches: data.matches.len(),
        },
        files: [TRAIN_FILE, VALIDATION_FILE, TEST_FILE, TRUTH_FILE]
            .map(String::from)
            .to_vec(),
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(manifest)
}

pub fn read_ground_truth(path: impl AsRef<Path>) -> Result<(GroundTruth, Vec<Match>)> {
    let file: TruthFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    Ok((file.truth, file.matches))
}
