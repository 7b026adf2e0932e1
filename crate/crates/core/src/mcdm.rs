//! Stochastic multi-criteria ranking.
//!
//! Every pair of alternatives is compared criterion by criterion
//! ([`win_probability`]), the joint win/lose realizations are split into
//! preferable, indifferent and not-preferable sets by a weighted vote
//! ([`classify_outcomes`]), and each alternative's fitness is its mean
//! superiority over all others ([`rank`]). [`brute_force_rank`] recomputes the
//! same quantities by direct enumeration and serves as a test oracle.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{CriteriaConfig, DomainError};
use crate::scoring::{ScoreDistribution, SCORE_GRID};

/// Tolerance of the `r(n>m) + r(m>n) = 1` consistency check.
pub const COMPLEMENT_TOL: f64 = 1e-9;
/// Largest per-pair joint outcome count [`brute_force_rank`] will enumerate.
pub const BRUTE_FORCE_LIMIT: f64 = 1e6;

#[derive(Debug, Error)]
pub enum McdmError {
    #[error("ranking needs at least 2 alternatives, got {0}")]
    TooFewAlternatives(usize),
    #[error("alternative {index} has {got} criterion scores, expected {expected}")]
    CriteriaMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Config(#[from] DomainError),
    #[error("superiority of {n} over {m} and back sums to {sum}")]
    ComplementViolation { n: usize, m: usize, sum: f64 },
    #[error("instance too large to enumerate: {0:e} joint outcomes for one pair")]
    TooLarge(f64),
    #[error("outcome table for alternative {index}: {reason}")]
    BadTable { index: usize, reason: String },
}

/// Per-criterion probability that alternative `n` outscores `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseComparison {
    pub n: usize,
    pub m: usize,
    pub per_criterion_win_prob: Vec<f64>,
}

/// Masses of the preferable / indifferent / not-preferable outcome sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeClassification {
    pub n: usize,
    pub m: usize,
    pub p_most_preferable: f64,
    pub p_indifferent: f64,
    pub p_not_preferable: f64,
}

impl OutcomeClassification {
    /// `P(S1) + 0.5 P(S2)`.
    pub fn superiority(&self) -> f64 {
        self.p_most_preferable + 0.5 * self.p_indifferent
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlternativeRationale {
    pub expected_scores: Vec<f64>,
    /// Mean over the other alternatives of the per-criterion win probability.
    pub mean_win_prob: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingResult {
    /// Alternative indices, best first.
    pub order: Vec<usize>,
    pub fitness: Vec<f64>,
    /// `superiority[n][m]` is r(n>m); the diagonal holds 0.5.
    pub superiority: Vec<Vec<f64>>,
    pub rationale: Vec<AlternativeRationale>,
}

impl RankingResult {
    /// Position of alternative `index` in the order (0 is best).
    pub fn rank_of(&self, index: usize) -> Option<usize> {
        self.order.iter().position(|i| *i == index)
    }
}

/// `P(X_n > X_m) + 0.5 P(X_n = X_m)` for independent scores; equality is
/// decided on the score grid.
pub fn win_probability(d_n: &ScoreDistribution, d_m: &ScoreDistribution) -> f64 {
    let mut p = 0.0;
    for a in d_n.atoms() {
        let ta = a.ticks();
        for b in d_m.atoms() {
            let tb = b.ticks();
            if ta > tb {
                p += a.prob * b.prob;
            } else if ta == tb {
                p += 0.5 * a.prob * b.prob;
            }
        }
    }
    p.clamp(0.0, 1.0)
}

pub fn compare(
    n: usize,
    m: usize,
    scores_n: &[ScoreDistribution],
    scores_m: &[ScoreDistribution],
) -> PairwiseComparison {
    PairwiseComparison {
        n,
        m,
        per_criterion_win_prob: scores_n
            .iter()
            .zip(scores_m)
            .map(|(a, b)| win_probability(a, b))
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum OutcomeSet {
    Preferable,
    Indifferent,
    NotPreferable,
}

/// Class of every realization `h` in `0..2^A`; bit `a` of `h` set means the
/// first alternative wins criterion `a`.
fn realization_classes(config: &CriteriaConfig) -> Vec<OutcomeSet> {
    let a = config.weights.len();
    let nu = config.threshold;
    (0..1usize << a)
        .map(|h| {
            let vote: f64 = (0..a)
                .filter(|i| h >> i & 1 == 1)
                .map(|i| config.weights[i])
                .sum();
            if vote > nu {
                OutcomeSet::Preferable
            } else if vote < 1.0 - nu {
                OutcomeSet::NotPreferable
            } else {
                OutcomeSet::Indifferent
            }
        })
        .collect()
}

fn classify_with(
    classes: &[OutcomeSet],
    n: usize,
    m: usize,
    win: &[f64],
) -> OutcomeClassification {
    let mut masses = [0.0f64; 3];
    for (h, class) in classes.iter().enumerate() {
        let q: f64 = win
            .iter()
            .enumerate()
            .map(|(i, p)| if h >> i & 1 == 1 { *p } else { 1.0 - p })
            .product();
        masses[*class as usize] += q;
    }
    OutcomeClassification {
        n,
        m,
        p_most_preferable: masses[OutcomeSet::Preferable as usize],
        p_indifferent: masses[OutcomeSet::Indifferent as usize],
        p_not_preferable: masses[OutcomeSet::NotPreferable as usize],
    }
}

/// Enumerates the `2^A` joint win/lose realizations of a comparison and sums
/// their probabilities into the three outcome sets.
pub fn classify_outcomes(
    comp: &PairwiseComparison,
    config: &CriteriaConfig,
) -> Result<OutcomeClassification, McdmError> {
    config.validate()?;
    if comp.per_criterion_win_prob.len() != config.len() {
        return Err(McdmError::CriteriaMismatch {
            index: comp.n,
            expected: config.len(),
            got: comp.per_criterion_win_prob.len(),
        });
    }
    Ok(classify_with(
        &realization_classes(config),
        comp.n,
        comp.m,
        &comp.per_criterion_win_prob,
    ))
}

fn check_scores(scores: &[Vec<ScoreDistribution>], config: &CriteriaConfig) -> Result<(), McdmError> {
    config.validate()?;
    if scores.len() < 2 {
        return Err(McdmError::TooFewAlternatives(scores.len()));
    }
    for (index, s) in scores.iter().enumerate() {
        if s.len() != config.len() {
            return Err(McdmError::CriteriaMismatch {
                index,
                expected: config.len(),
                got: s.len(),
            });
        }
    }
    Ok(())
}

/// Sum that does not depend on the order the terms arrive in, so symmetric
/// alternatives get bit-identical fitness.
fn order_free_mean(mut terms: Vec<f64>) -> f64 {
    let count = terms.len();
    terms.sort_by(f64::total_cmp);
    terms.iter().sum::<f64>() / count as f64
}

fn order_by_fitness(fitness: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..fitness.len()).collect();
    order.sort_by(|a, b| fitness[*b].total_cmp(&fitness[*a]));
    order
}

/// Ranks alternatives given one score distribution per criterion each.
///
/// Both directions of every pair are classified and checked against each
/// other. The order is descending fitness; ties keep input order.
pub fn rank(scores: &[Vec<ScoreDistribution>], config: &CriteriaConfig) -> Result<RankingResult, McdmError> {
    check_scores(scores, config)?;
    let n_alt = scores.len();
    let a = config.len();
    let classes = realization_classes(config);

    let mut superiority = vec![vec![0.5; n_alt]; n_alt];
    let mut win_sums = vec![vec![0.0; a]; n_alt];
    for n in 0..n_alt {
        for m in n + 1..n_alt {
            let fwd = compare(n, m, &scores[n], &scores[m]);
            let bwd = compare(m, n, &scores[m], &scores[n]);
            let r_nm = classify_with(&classes, n, m, &fwd.per_criterion_win_prob).superiority();
            let r_mn = classify_with(&classes, m, n, &bwd.per_criterion_win_prob).superiority();
            let sum = r_nm + r_mn;
            if (sum - 1.0).abs() > COMPLEMENT_TOL {
                return Err(McdmError::ComplementViolation { n, m, sum });
            }
            superiority[n][m] = r_nm;
            superiority[m][n] = r_mn;
            for i in 0..a {
                win_sums[n][i] += fwd.per_criterion_win_prob[i];
                win_sums[m][i] += bwd.per_criterion_win_prob[i];
            }
        }
    }

    let fitness: Vec<f64> = (0..n_alt)
        .map(|n| {
            order_free_mean(
                (0..n_alt)
                    .filter(|m| *m != n)
                    .map(|m| superiority[n][m])
                    .collect(),
            )
        })
        .collect();
    let rationale = scores
        .iter()
        .zip(&win_sums)
        .map(|(s, w)| AlternativeRationale {
            expected_scores: s.iter().map(ScoreDistribution::expected).collect(),
            mean_win_prob: w.iter().map(|x| x / (n_alt - 1) as f64).collect(),
        })
        .collect();
    Ok(RankingResult {
        order: order_by_fitness(&fitness),
        fitness,
        superiority,
        rationale,
    })
}

/// Explicit outcomes `(score, probability)` of one criterion for one
/// alternative. Values may repeat; probabilities must sum to one.
pub type OutcomeTable = Vec<(f64, f64)>;

pub fn outcome_tables(scores: &[Vec<ScoreDistribution>]) -> Vec<Vec<OutcomeTable>> {
    scores
        .iter()
        .map(|s| {
            s.iter()
                .map(|d| d.atoms().iter().map(|a| (a.value, a.prob)).collect())
                .collect()
        })
        .collect()
}

fn grid(v: f64) -> i64 {
    (v / SCORE_GRID).round() as i64
}

fn check_tables(tables: &[Vec<OutcomeTable>], config: &CriteriaConfig) -> Result<(), McdmError> {
    config.validate()?;
    if tables.len() < 2 {
        return Err(McdmError::TooFewAlternatives(tables.len()));
    }
    for (index, t) in tables.iter().enumerate() {
        if t.len() != config.len() {
            return Err(McdmError::CriteriaMismatch {
                index,
                expected: config.len(),
                got: t.len(),
            });
        }
        for table in t {
            let total: f64 = table.iter().map(|(_, p)| p).sum();
            if table.is_empty() || (total - 1.0).abs() > 1e-9 || table.iter().any(|(_, p)| *p < 0.0) {
                return Err(McdmError::BadTable {
                    index,
                    reason: format!("probabilities sum to {total}"),
                });
            }
        }
    }
    Ok(())
}

/// Walks every joint outcome of `n` against `m` over all criteria, with an
/// equal score splitting into a won and a lost branch of half the weight each,
/// and returns the masses of the preferable and indifferent sets.
fn enumerate_pair(
    tn: &[OutcomeTable],
    tm: &[OutcomeTable],
    weights: &[f64],
    nu: f64,
) -> (f64, f64) {
    fn walk(
        a: usize,
        tn: &[OutcomeTable],
        tm: &[OutcomeTable],
        weights: &[f64],
        nu: f64,
        prob: f64,
        vote: f64,
        acc: &mut (f64, f64),
    ) {
        if a == tn.len() {
            if vote > nu {
                acc.0 += prob;
            } else if vote >= 1.0 - nu {
                acc.1 += prob;
            }
            return;
        }
        for &(x, px) in &tn[a] {
            for &(y, py) in &tm[a] {
                let p = prob * px * py;
                match grid(x).cmp(&grid(y)) {
                    std::cmp::Ordering::Greater => walk(a + 1, tn, tm, weights, nu, p, vote + weights[a], acc),
                    std::cmp::Ordering::Less => walk(a + 1, tn, tm, weights, nu, p, vote, acc),
                    std::cmp::Ordering::Equal => {
                        walk(a + 1, tn, tm, weights, nu, 0.5 * p, vote + weights[a], acc);
                        walk(a + 1, tn, tm, weights, nu, 0.5 * p, vote, acc);
                    }
                }
            }
        }
    }
    let mut acc = (0.0, 0.0);
    walk(0, tn, tm, weights, nu, 1.0, 0.0, &mut acc);
    acc
}

fn pair_size(tn: &[OutcomeTable], tm: &[OutcomeTable]) -> f64 {
    tn.iter().zip(tm).map(|(a, b)| (a.len() * b.len()) as f64).product()
}

/// Reference ranking by exhaustive enumeration of joint score outcomes.
/// Leaves `rationale` empty.
pub fn brute_force_rank(tables: &[Vec<OutcomeTable>], config: &CriteriaConfig) -> Result<RankingResult, McdmError> {
    check_tables(tables, config)?;
    let n_alt = tables.len();
    let mut superiority = vec![vec![0.5; n_alt]; n_alt];
    for n in 0..n_alt {
        for m in 0..n_alt {
            if n == m {
                continue;
            }
            let size = pair_size(&tables[n], &tables[m]);
            if size > BRUTE_FORCE_LIMIT {
                return Err(McdmError::TooLarge(size));
            }
            let (s1, s2) = enumerate_pair(&tables[n], &tables[m], &config.weights, config.threshold);
            superiority[n][m] = s1 + 0.5 * s2;
        }
    }
    let fitness: Vec<f64> = (0..n_alt)
        .map(|n| {
            order_free_mean(
                (0..n_alt)
                    .filter(|m| *m != n)
                    .map(|m| superiority[n][m])
                    .collect(),
            )
        })
        .collect();
    Ok(RankingResult {
        order: order_by_fitness(&fitness),
        fitness,
        superiority,
        rationale: Vec::new(),
    })
}

/// Probability that alternative `n` outranks every other alternative at once
/// when all scores are drawn jointly and independently. Against each rival,
/// `n` wins on a preferable realization and on a fair coin flip for an
/// indifferent one. Never exceeds the fitness of `n`.
pub fn simultaneous_win_probability(
    tables: &[Vec<OutcomeTable>],
    config: &CriteriaConfig,
    n: usize,
) -> Result<f64, McdmError> {
    check_tables(tables, config)?;
    let own = &tables[n];
    let own_size: f64 = own.iter().map(|t| t.len() as f64).product();
    for (m, t) in tables.iter().enumerate() {
        let rival: f64 = t.iter().map(|x| x.len() as f64).product();
        if m != n && own_size * rival > BRUTE_FORCE_LIMIT {
            return Err(McdmError::TooLarge(own_size * rival));
        }
    }

    // Condition on the realized scores of n; rivals are then independent.
    let mut total = 0.0;
    let mut idx = vec![0usize; own.len()];
    loop {
        let p_own: f64 = idx.iter().enumerate().map(|(a, i)| own[a][*i].1).product();
        if p_own > 0.0 {
            let fixed: Vec<OutcomeTable> = idx
                .iter()
                .enumerate()
                .map(|(a, i)| vec![(own[a][*i].0, 1.0)])
                .collect();
            let mut all = p_own;
            for (m, t) in tables.iter().enumerate() {
                if m == n {
                    continue;
                }
                let (s1, s2) = enumerate_pair(&fixed, t, &config.weights, config.threshold);
                all *= s1 + 0.5 * s2;
            }
            total += all;
        }
        let mut a = 0;
        loop {
            if a == idx.len() {
                return Ok(total);
            }
            idx[a] += 1;
            if idx[a] < own[a].len() {
                break;
            }
            idx[a] = 0;
            a += 1;
        }
    }
}
