//! Specimen-to-split assignment minimising the summed per-split CV of
//! species slice counts.
//!
//! Each species contributes a block of specimens. A block's candidate
//! placements are enumerated in lexicographic order and collapsed by the
//! split counts they produce (placements with equal counts are
//! indistinguishable to the objective, so only the lexicographically first
//! is kept). When the product of block sizes fits the evaluation budget the
//! joint space is enumerated outright; otherwise seeded random restarts
//! followed by block-coordinate descent are used.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{coefficient_of_variation, CurationError, SpecimenStats, Split};

/// Allowed absolute deviation of each split's slice fraction from its target.
pub const SPLIT_TOLERANCE: f64 = 0.10;

/// Largest number of specimens per species whose placements are enumerated.
pub const MAX_BLOCK: usize = 14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitParams {
    /// Target slice fractions for train, val and test.
    pub targets: [f64; 3],
    pub weights: [f64; 3],
    pub tolerance: f64,
    /// Maximum joint enumeration size before falling back to local search.
    pub budget: u64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for SplitParams {
    fn default() -> Self {
        Self {
            targets: [0.4, 0.13, 0.47],
            weights: [1.0, 1.0, 1.0],
            tolerance: SPLIT_TOLERANCE,
            budget: 2_000_000,
            restarts: 32,
            seed: 0,
        }
    }
}

impl SplitParams {
    pub fn validate(&self) -> Result<(), CurationError> {
        if self.targets.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(CurationError::InvalidTargets("targets must be nonnegative".into()));
        }
        let sum: f64 = self.targets.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(CurationError::InvalidTargets(format!("targets sum to {sum}, not 1")));
        }
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(CurationError::InvalidTargets("weights must be nonnegative".into()));
        }
        if !(self.tolerance >= 0.0) {
            return Err(CurationError::InvalidTargets("tolerance must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub split: Split,
    /// Slice counts per species, every species listed.
    pub counts: BTreeMap<String, u64>,
    pub total: u64,
    pub fraction: f64,
    /// Percent; absent when the split holds no slices.
    pub cv: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub assignments: BTreeMap<String, Split>,
    pub splits: Vec<SplitSummary>,
    /// Weighted CV sum.
    pub objective: f64,
    /// Total amount by which split fractions exceed the tolerance band.
    pub bound_violation: f64,
    /// Species with fewer than three specimens; they cannot cover all splits.
    pub infeasible_species: Vec<String>,
    pub exhaustive: bool,
    pub evaluations: u64,
}

impl SplitAssignment {
    pub fn split_of(&self, specimen_id: &str) -> Option<Split> {
        self.assignments.get(specimen_id).copied()
    }

    pub fn summary(&self, split: Split) -> &SplitSummary {
        &self.splits[split.index()]
    }

    pub fn specimens_in(&self, split: Split) -> impl Iterator<Item = &str> {
        self.assignments
            .iter()
            .filter(move |(_, s)| **s == split)
            .map(|(id, _)| id.as_str())
    }
}

#[derive(Debug, Clone)]
struct Placement {
    splits: Vec<u8>,
    counts: [u64; 3],
}

#[derive(Debug)]
struct Block {
    species: usize,
    specimens: Vec<usize>,
    placements: Vec<Placement>,
}

struct Problem<'a> {
    stats: &'a [SpecimenStats],
    species: Vec<String>,
    blocks: Vec<Block>,
    total: u64,
    params: &'a SplitParams,
}

#[derive(Debug, Clone, Copy)]
struct Score {
    violation: f64,
    objective: f64,
}

impl Score {
    fn cmp(&self, other: &Score) -> Ordering {
        self.violation
            .total_cmp(&other.violation)
            .then(self.objective.total_cmp(&other.objective))
    }
}

fn enumerate_placements(sizes: &[u64]) -> Vec<Placement> {
    let k = sizes.len();
    let placements: Vec<Vec<u8>> = match k {
        0 => vec![],
        1 => vec![vec![0]],
        2 => vec![vec![0, 2], vec![2, 0]],
        _ => (0..3usize.pow(k as u32))
            .map(|code| {
                // Most significant digit first, so codes ascend lexicographically.
                (0..k).map(|i| ((code / 3usize.pow((k - 1 - i) as u32)) % 3) as u8).collect::<Vec<u8>>()
            })
            .filter(|d| (0..3u8).all(|s| d.contains(&s)))
            .collect(),
    };
    let mut seen = BTreeSet::new();
    placements
        .into_iter()
        .filter_map(|splits| {
            let mut counts = [0u64; 3];
            for (s, &n) in splits.iter().zip(sizes) {
                counts[*s as usize] += n;
            }
            seen.insert(counts).then_some(Placement { splits, counts })
        })
        .collect()
}

/// Per-split CVs, objective and bound violation for per-split species counts.
fn score_counts(counts: &[Vec<u64>; 3], total: u64, params: &SplitParams) -> (Score, [Option<f64>; 3], [u64; 3]) {
    let mut violation = 0.0;
    let mut objective = 0.0;
    let mut cvs = [None; 3];
    let mut totals = [0u64; 3];
    for s in 0..3 {
        totals[s] = counts[s].iter().sum();
        let fraction = if total == 0 { 0.0 } else { totals[s] as f64 / total as f64 };
        violation += ((fraction - params.targets[s]).abs() - params.tolerance).max(0.0);
        match coefficient_of_variation(&counts[s]) {
            Ok(cv) => {
                cvs[s] = Some(cv);
                objective += params.weights[s] * cv;
            }
            Err(_) => violation += 1.0,
        }
    }
    (Score { violation, objective }, cvs, totals)
}

impl<'a> Problem<'a> {
    fn new(stats: &'a [SpecimenStats], params: &'a SplitParams) -> Result<Self, CurationError> {
        if stats.is_empty() {
            return Err(CurationError::NoSpecimens);
        }
        let mut ids = BTreeSet::new();
        for s in stats {
            if !ids.insert(s.specimen_id.as_str()) {
                return Err(CurationError::DuplicateSpecimen(s.specimen_id.clone()));
            }
        }
        let species: Vec<String> = stats
            .iter()
            .map(|s| s.species.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        for name in &species {
            let n = stats.iter().filter(|s| &s.species == name).count();
            if n > MAX_BLOCK {
                return Err(CurationError::SpeciesTooLarge {
                    species: name.clone(),
                    count: n,
                });
            }
        }
        let blocks = species
            .iter()
            .enumerate()
            .map(|(si, name)| {
                let mut specimens: Vec<usize> = (0..stats.len()).filter(|&i| &stats[i].species == name).collect();
                specimens.sort_by(|&a, &b| stats[a].specimen_id.cmp(&stats[b].specimen_id));
                let sizes: Vec<u64> = specimens.iter().map(|&i| stats[i].usable_slice_count).collect();
                Block {
                    species: si,
                    specimens,
                    placements: enumerate_placements(&sizes),
                }
            })
            .collect();
        Ok(Self {
            stats,
            species,
            blocks,
            total: stats.iter().map(|s| s.usable_slice_count).sum(),
            params,
        })
    }

    fn score(&self, choice: &[usize]) -> Score {
        let mut counts: [Vec<u64>; 3] = std::array::from_fn(|_| vec![0; self.species.len()]);
        for (b, &c) in self.blocks.iter().zip(choice) {
            let p = &b.placements[c];
            for s in 0..3 {
                counts[s][b.species] += p.counts[s];
            }
        }
        score_counts(&counts, self.total, self.params).0
    }

    fn space_size(&self) -> u128 {
        self.blocks
            .iter()
            .fold(1u128, |acc, b| acc.saturating_mul(b.placements.len() as u128))
    }

    fn exhaustive(&self) -> (Vec<usize>, u64) {
        let n = self.blocks.len();
        let mut choice = vec![0usize; n];
        let mut best = (choice.clone(), self.score(&choice));
        let mut evaluations = 1u64;
        'outer: loop {
            let mut i = n;
            loop {
                if i == 0 {
                    break 'outer;
                }
                i -= 1;
                choice[i] += 1;
                if choice[i] < self.blocks[i].placements.len() {
                    break;
                }
                choice[i] = 0;
            }
            let s = self.score(&choice);
            evaluations += 1;
            // Enumeration is lexicographic, so strict improvement keeps the
            // smallest assignment among ties.
            if s.cmp(&best.1) == Ordering::Less {
                best = (choice.clone(), s);
            }
        }
        (best.0, evaluations)
    }

    fn local_search(&self) -> (Vec<usize>, u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.params.seed);
        let n = self.blocks.len();
        let mut evaluations = 0u64;
        let better = |a: &(Vec<usize>, Score), b: &(Vec<usize>, Score)| match a.1.cmp(&b.1) {
            Ordering::Less => true,
            Ordering::Equal => a.0 < b.0,
            Ordering::Greater => false,
        };
        let mut best: Option<(Vec<usize>, Score)> = None;
        for restart in 0..self.params.restarts.max(1) {
            let mut choice: Vec<usize> = if restart == 0 {
                vec![0; n]
            } else {
                self.blocks.iter().map(|b| rng.gen_range(0..b.placements.len())).collect()
            };
            let mut current = (choice.clone(), self.score(&choice));
            evaluations += 1;
            loop {
                let mut improved = false;
                for bi in 0..n {
                    for p in 0..self.blocks[bi].placements.len() {
                        if p == current.0[bi] {
                            continue;
                        }
                        choice.clone_from(&current.0);
                        choice[bi] = p;
                        let cand = (choice.clone(), self.score(&choice));
                        evaluations += 1;
                        if better(&cand, &current) {
                            current = cand;
                            improved = true;
                        }
                    }
                }
                if !improved {
                    break;
                }
            }
            if best.as_ref().map_or(true, |b| better(&current, b)) {
                best = Some(current);
            }
        }
        (best.expect("at least one restart").0, evaluations)
    }

    fn to_map(&self, choice: &[usize]) -> BTreeMap<String, Split> {
        let mut map = BTreeMap::new();
        for (b, &c) in self.blocks.iter().zip(choice) {
            for (&spec, &s) in b.specimens.iter().zip(&b.placements[c].splits) {
                map.insert(self.stats[spec].specimen_id.clone(), Split::ALL[s as usize]);
            }
        }
        map
    }
}

/// Summarise an arbitrary specimen-to-split map against the given stats.
/// Specimens missing from the map are treated as training specimens.
pub fn evaluate_assignment(
    stats: &[SpecimenStats],
    assignments: &BTreeMap<String, Split>,
    params: &SplitParams,
) -> Result<SplitAssignment, CurationError> {
    let problem = Problem::new(stats, params)?;
    let mut counts: [Vec<u64>; 3] = std::array::from_fn(|_| vec![0; problem.species.len()]);
    let mut full = BTreeMap::new();
    for s in stats {
        let split = assignments.get(&s.specimen_id).copied().unwrap_or(Split::Train);
        let si = problem.species.binary_search(&s.species).expect("species collected from stats");
        counts[split.index()][si] += s.usable_slice_count;
        full.insert(s.specimen_id.clone(), split);
    }
    let (score, cvs, totals) = score_counts(&counts, problem.total, params);
    let splits = Split::ALL
        .iter()
        .map(|&split| {
            let i = split.index();
            SplitSummary {
                split,
                counts: problem
                    .species
                    .iter()
                    .cloned()
                    .zip(counts[i].iter().copied())
                    .collect(),
                total: totals[i],
                fraction: if problem.total == 0 {
                    0.0
                } else {
                    totals[i] as f64 / problem.total as f64
                },
                cv: cvs[i],
            }
        })
        .collect();
    let infeasible_species = problem
        .blocks
        .iter()
        .filter(|b| b.specimens.len() < 3)
        .map(|b| problem.species[b.species].clone())
        .collect();
    Ok(SplitAssignment {
        assignments: full,
        splits,
        objective: score.objective,
        bound_violation: score.violation,
        infeasible_species,
        exhaustive: false,
        evaluations: 0,
    })
}

/// Assign every specimen to one split, minimising the weighted CV sum among
/// assignments that respect the fraction bounds (or, if none do, minimising
/// the violation first). Species with fewer than three specimens are listed
/// as infeasible; two specimens go to train and test, one to train.
pub fn split_specimens(stats: &[SpecimenStats], params: &SplitParams) -> Result<SplitAssignment, CurationError> {
    params.validate()?;
    let problem = Problem::new(stats, params)?;
    let exhaustive = problem.space_size() <= params.budget as u128;
    let (choice, evaluations) = if exhaustive {
        problem.exhaustive()
    } else {
        problem.local_search()
    };
    let mut result = evaluate_assignment(stats, &problem.to_map(&choice), params)?;
    result.exhaustive = exhaustive;
    result.evaluations = evaluations;
    Ok(result)
}
