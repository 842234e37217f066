use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{argmax, ClassProbabilities, ClassifyError};
use crate::labels::LabelSet;

/// Provider id stamped on combiner outputs.
pub const ENSEMBLE_PROVIDER_ID: &str = "ensemble";

/// Route a prediction to a specialist when the primary's top class is a
/// trigger class or its confidence falls below the floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRule {
    pub trigger_classes: BTreeSet<String>,
    #[serde(default)]
    pub confidence_floor: f64,
    pub specialist_provider_id: String,
    /// Weight of the specialist; 1 replaces the primary outright.
    #[serde(default = "full_switch")]
    pub blend: f64,
}

fn full_switch() -> f64 {
    1.0
}

impl PatchRule {
    fn fires(&self, primary: &ClassProbabilities, labels: &LabelSet) -> bool {
        let top = labels.get(primary.argmax()).unwrap_or_default();
        self.trigger_classes.contains(top) || primary.max() < self.confidence_floor
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fallback {
    Majority,
    #[default]
    Primary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub primary_provider_id: String,
    #[serde(default)]
    pub rules: Vec<PatchRule>,
    #[serde(default)]
    pub fallback: Fallback,
}

impl EnsembleConfig {
    pub fn validate(&self, labels: &LabelSet) -> Result<(), ClassifyError> {
        for (i, r) in self.rules.iter().enumerate() {
            if let Some(bad) = r.trigger_classes.iter().find(|c| !labels.contains(c)) {
                return Err(ClassifyError::UnknownLabel(bad.clone()));
            }
            if !(0.0..=1.0).contains(&r.confidence_floor) {
                return Err(ClassifyError::InvalidConfig(format!("rule {i}: confidence_floor outside [0, 1]")));
            }
            if !(0.0..=1.0).contains(&r.blend) {
                return Err(ClassifyError::InvalidConfig(format!("rule {i}: blend outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Every provider id the config refers to, primary first.
    pub fn provider_ids(&self) -> Vec<String> {
        let mut ids = vec![self.primary_provider_id.clone()];
        for r in &self.rules {
            if !ids.contains(&r.specialist_provider_id) {
                ids.push(r.specialist_provider_id.clone());
            }
        }
        ids
    }
}

fn find<'a>(predictions: &'a [ClassProbabilities], id: &str) -> Option<&'a ClassProbabilities> {
    predictions.iter().find(|p| p.provider_id == id)
}

fn blend(primary: &ClassProbabilities, specialist: &ClassProbabilities, w: f64) -> Result<ClassProbabilities, ClassifyError> {
    if specialist.len() != primary.len() {
        return Err(ClassifyError::ContractViolation {
            provider: specialist.provider_id.clone(),
            detail: format!("expected {} probabilities, got {}", primary.len(), specialist.len()),
        });
    }
    let probs = if w == 1.0 {
        specialist.probs.clone()
    } else if w == 0.0 {
        primary.probs.clone()
    } else {
        let mixed: Vec<f64> = primary
            .probs
            .iter()
            .zip(&specialist.probs)
            .map(|(p, s)| w * s + (1.0 - w) * p)
            .collect();
        let sum: f64 = mixed.iter().sum();
        mixed.into_iter().map(|v| v / sum).collect()
    };
    Ok(ClassProbabilities {
        provider_id: ENSEMBLE_PROVIDER_ID.into(),
        probs,
    })
}

/// Apply the first firing rule to the primary vector. With no firing rule
/// the primary probabilities come back bit for bit.
pub fn combine_patch_ensemble(
    predictions: &[ClassProbabilities],
    config: &EnsembleConfig,
    labels: &LabelSet,
) -> Result<ClassProbabilities, ClassifyError> {
    let primary = find(predictions, &config.primary_provider_id)
        .ok_or_else(|| ClassifyError::MissingProvider(config.primary_provider_id.clone()))?;
    match config.rules.iter().find(|r| r.fires(primary, labels)) {
        Some(rule) => {
            let specialist = find(predictions, &rule.specialist_provider_id)
                .ok_or_else(|| ClassifyError::MissingProvider(rule.specialist_provider_id.clone()))?;
            blend(primary, specialist, rule.blend)
        }
        None => Ok(ClassProbabilities {
            provider_id: ENSEMBLE_PROVIDER_ID.into(),
            probs: primary.probs.clone(),
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleOutcome {
    pub probs: ClassProbabilities,
    /// Set when a provider was missing and the fallback decided.
    pub degraded: bool,
}

/// As [`combine_patch_ensemble`], but a missing provider degrades to the
/// configured fallback instead of failing.
pub fn combine_or_fallback(
    predictions: &[ClassProbabilities],
    config: &EnsembleConfig,
    labels: &LabelSet,
) -> Result<EnsembleOutcome, ClassifyError> {
    match combine_patch_ensemble(predictions, config, labels) {
        Ok(probs) => Ok(EnsembleOutcome { probs, degraded: false }),
        Err(ClassifyError::MissingProvider(missing)) => {
            if config.fallback == Fallback::Majority && predictions.len() >= 2 {
                let vote = combine_majority(predictions)?;
                return Ok(EnsembleOutcome {
                    probs: vote.probs,
                    degraded: true,
                });
            }
            match find(predictions, &config.primary_provider_id) {
                Some(primary) => Ok(EnsembleOutcome {
                    probs: ClassProbabilities {
                        provider_id: ENSEMBLE_PROVIDER_ID.into(),
                        probs: primary.probs.clone(),
                    },
                    degraded: true,
                }),
                None => Err(ClassifyError::MissingProvider(missing)),
            }
        }
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MajorityVote {
    /// Mean of the input vectors.
    pub probs: ClassProbabilities,
    pub winner: usize,
    pub votes: usize,
}

/// Plurality over the providers' argmaxes; ties go to the tied class with
/// the highest mean probability, then to label order. Inputs are combined
/// in provider-id order so arrival order never changes the result.
pub fn combine_majority(predictions: &[ClassProbabilities]) -> Result<MajorityVote, ClassifyError> {
    if predictions.len() < 2 {
        return Err(ClassifyError::TooFewProviders(predictions.len()));
    }
    let n = predictions[0].len();
    if let Some(bad) = predictions.iter().find(|p| p.len() != n) {
        return Err(ClassifyError::ContractViolation {
            provider: bad.provider_id.clone(),
            detail: format!("expected {n} probabilities, got {}", bad.len()),
        });
    }
    let mut sorted: Vec<&ClassProbabilities> = predictions.iter().collect();
    sorted.sort_by(|a, b| a.provider_id.cmp(&b.provider_id).then(a.probs.iter().map(|v| v.to_bits()).cmp(b.probs.iter().map(|v| v.to_bits()))));
    let mut votes = vec![0usize; n];
    let mut sum = vec![0.0f64; n];
    for p in &sorted {
        votes[p.argmax()] += 1;
        for (s, v) in sum.iter_mut().zip(&p.probs) {
            *s += v;
        }
    }
    let m = sorted.len() as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / m).collect();
    let top = *votes.iter().max().expect("n > 0");
    let tied: Vec<usize> = (0..n).filter(|&c| votes[c] == top).collect();
    let winner = tied[argmax(&tied.iter().map(|&c| mean[c]).collect::<Vec<_>>())];
    Ok(MajorityVote {
        probs: ClassProbabilities {
            provider_id: ENSEMBLE_PROVIDER_ID.into(),
            probs: mean,
        },
        winner,
        votes: top,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels() -> LabelSet {
        LabelSet::new(["A", "Baculogypsina", "C", "Orbitoides"])
    }

    fn cp(id: &str, v: [f64; 4]) -> ClassProbabilities {
        ClassProbabilities::new(id, v.to_vec()).unwrap()
    }

    fn rule(trigger: &[&str], floor: f64, blend: f64) -> PatchRule {
        PatchRule {
            trigger_classes: trigger.iter().map(|s| s.to_string()).collect(),
            confidence_floor: floor,
            specialist_provider_id: "spec".into(),
            blend,
        }
    }

    #[test]
    fn empty_rules_are_identity() {
        let p = cp("prim", [0.1, 0.2, 0.3, 0.4]);
        let cfg = EnsembleConfig {
            primary_provider_id: "prim".into(),
            rules: vec![],
            fallback: Fallback::Primary,
        };
        let out = combine_patch_ensemble(&[p.clone()], &cfg, &labels()).unwrap();
        assert_eq!(out.probs, p.probs);
    }

    #[test]
    fn trigger_class_switches_fully() {
        let p = cp("prim", [0.1, 0.6, 0.2, 0.1]);
        let s = cp("spec", [0.7, 0.1, 0.1, 0.1]);
        let cfg = EnsembleConfig {
            primary_provider_id: "prim".into(),
            rules: vec![rule(&["Baculogypsina"], 0.0, 1.0)],
            fallback: Fallback::Primary,
        };
        let out = combine_patch_ensemble(&[p, s.clone()], &cfg, &labels()).unwrap();
        assert_eq!(out.probs, s.probs);
    }

    #[test]
    fn low_confidence_blends_half() {
        let p = cp("prim", [0.55, 0.15, 0.15, 0.15]);
        let s = cp("spec", [0.1, 0.2, 0.3, 0.4]);
        let cfg = EnsembleConfig {
            primary_provider_id: "prim".into(),
            rules: vec![rule(&[], 0.6, 0.5)],
            fallback: Fallback::Primary,
        };
        let out = combine_patch_ensemble(&[s.clone(), p.clone()], &cfg, &labels()).unwrap();
        for i in 0..4 {
            assert!((out.probs[i] - (p.probs[i] + s.probs[i]) / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn first_matching_rule_wins() {
        let p = cp("prim", [0.1, 0.6, 0.2, 0.1]);
        let s = cp("spec", [0.7, 0.1, 0.1, 0.1]);
        let t = cp("other", [0.1, 0.1, 0.1, 0.7]);
        let mut second = rule(&["Baculogypsina"], 0.0, 1.0);
        second.specialist_provider_id = "other".into();
        let cfg = EnsembleConfig {
            primary_provider_id: "prim".into(),
            rules: vec![rule(&["Orbitoides"], 0.0, 1.0), second, rule(&["Baculogypsina"], 0.0, 1.0)],
            fallback: Fallback::Primary,
        };
        let out = combine_patch_ensemble(&[p, s, t.clone()], &cfg, &labels()).unwrap();
        assert_eq!(out.probs, t.probs);
    }

    #[test]
    fn missing_providers() {
        let p = cp("prim", [0.1, 0.6, 0.2, 0.1]);
        let cfg = EnsembleConfig {
            primary_provider_id: "prim".into(),
            rules: vec![rule(&["Baculogypsina"], 0.0, 1.0)],
            fallback: Fallback::Primary,
        };
        assert!(matches!(
            combine_patch_ensemble(&[p.clone()], &cfg, &labels()),
            Err(ClassifyError::MissingProvider(id)) if id == "spec"
        ));
        let out = combine_or_fallback(&[p.clone()], &cfg, &labels()).unwrap();
        assert!(out.degraded);
        assert_eq!(out.probs.probs, p.probs);

        let q = cp("q", [0.1, 0.1, 0.7, 0.1]);
        let r = cp("r", [0.1, 0.1, 0.6, 0.2]);
        let cfg = EnsembleConfig {
            fallback: Fallback::Majority,
            ..cfg
        };
        let out = combine_or_fallback(&[p, q, r], &cfg, &labels()).unwrap();
        assert_eq!(out.probs.argmax(), 2);
    }

    #[test]
    fn config_validation() {
        let mut cfg = EnsembleConfig {
            primary_provider_id: "prim".into(),
            rules: vec![rule(&["Nope"], 0.0, 1.0)],
            fallback: Fallback::Primary,
        };
        assert!(matches!(cfg.validate(&labels()), Err(ClassifyError::UnknownLabel(_))));
        cfg.rules = vec![rule(&[], 0.0, 1.5)];
        assert!(cfg.validate(&labels()).is_err());
        cfg.rules = vec![rule(&["Orbitoides"], 0.3, 0.5)];
        assert!(cfg.validate(&labels()).is_ok());
        assert_eq!(cfg.provider_ids(), ["prim", "spec"]);
    }

    #[test]
    fn majority_examples() {
        let a = cp("a", [0.0, 0.9, 0.1, 0.0]);
        let b = cp("b", [0.0, 0.55, 0.45, 0.0]);
        let c = cp("c", [0.0, 0.0, 1.0, 0.0]);
        // 2 vs 1: class 1 wins even though class 2 has the larger mean.
        let v = combine_majority(&[a.clone(), b.clone(), c.clone()]).unwrap();
        assert_eq!((v.winner, v.votes), (1, 2));
        assert!(v.probs.probs[2] > v.probs.probs[1]);

        // Three-way tie: highest mean among the tied classes.
        let x = cp("x", [0.5, 0.3, 0.2, 0.0]);
        let y = cp("y", [0.3, 0.4, 0.3, 0.0]);
        let z = cp("z", [0.1, 0.4, 0.5, 0.0]);
        let v = combine_majority(&[x.clone(), y.clone(), z.clone()]).unwrap();
        assert_eq!(v.votes, 1);
        assert_eq!(v.winner, 1);
        assert_eq!(combine_majority(&[z, x, y]).unwrap(), v);

        assert!(matches!(combine_majority(&[a]), Err(ClassifyError::TooFewProviders(1))));
    }
}
