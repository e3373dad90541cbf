//! Slate fixtures.

use deadline_rank::features::{CandidateFeatures, CategoryId, HistoricalAction, InteractionType, Slate};
use deadline_rank::sim::{generate, SimConfig};

use super::Lcg;

const T_C: i64 = 1_700_500_000;

/// Three candidates and four past actions covering every interaction kind.
pub fn composite_slate() -> Slate {
    let action = |sport, format, ago: i64, interaction, ttrl, out| HistoricalAction {
        sport: CategoryId(sport),
        format: CategoryId(format),
        timestamp: T_C - ago,
        interaction,
        ttrl_at_action: ttrl,
        lineups_out_at_action: out,
        max_prize: 25_000.0,
    };
    let candidate = |sport, format, ttrl, lineups: Option<i64>, prize| CandidateFeatures {
        sport: CategoryId(sport),
        format: CategoryId(format),
        ttrl,
        time_since_lineups: lineups,
        max_prize: prize,
    };
    Slate {
        user_id: "u-composite".into(),
        request_time: T_C,
        history: vec![
            action(1, 2, 400_000, InteractionType::MatchClick, 7_200, false),
            action(2, 5, 90_000, InteractionType::TeamSave, 3_000, false),
            action(
                1,
                2,
                20_000,
                InteractionType::ContestJoin {
                    num_contests: 3,
                    total_entry_fee: 150.0,
                },
                1_200,
                true,
            ),
            action(3, 1, 500, InteractionType::MatchClick, 40_000, false),
        ],
        candidates: vec![
            candidate(1, 2, 2_400, Some(900), 80_000.0),
            candidate(2, 5, 30_000, None, 12_000.0),
            candidate(4, 6, 70_000, None, 5_000.0),
        ],
        labels: vec![0.0, 1.0, 0.0],
    }
}

/// Simulated slates from a small population.
pub fn simulated(n_users: usize, seed: u64) -> Vec<Slate> {
    generate(
        &SimConfig {
            n_users,
            seed,
            ..SimConfig::default()
        },
        1,
    )
    .unwrap()
    .slates
}

/// `m` scores in `[-3, 3]` whose pairwise gaps are all at least `min_gap`.
pub fn separated_scores(rng: &mut Lcg, m: usize, min_gap: f64) -> Vec<f64> {
    loop {
        let s: Vec<f64> = (0..m).map(|_| rng.range(-3.0, 3.0)).collect();
        let ok = (0..m).all(|i| (0..i).all(|j| (s[i] - s[j]).abs() >= min_gap));
        if ok {
            return s;
        }
    }
}

/// Graded labels in `{0, 1, 2}` with at least one positive.
pub fn graded_labels(rng: &mut Lcg, m: usize) -> Vec<f64> {
    loop {
        let y: Vec<f64> = (0..m).map(|_| rng.below(3) as f64).collect();
        if y.iter().any(|&v| v > 0.0) {
            return y;
        }
    }
}

/// One positive at a random position.
pub fn single_positive(rng: &mut Lcg, m: usize) -> Vec<f64> {
    let mut y = vec![0.0; m];
    y[rng.below(m)] = 1.0;
    y
}

/// Scores drawn from a handful of values so ties are common.
pub fn tied_scores(rng: &mut Lcg, m: usize) -> Vec<f64> {
    (0..m).map(|_| rng.below(4) as f64 * 0.5).collect()
}
