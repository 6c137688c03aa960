//! Hyperband search over the CNN's four hyperparameters.
//!
//! Each bracket runs successive halving: a cohort of sampled configurations
//! trains for a short budget, the best `1/eta` survive and continue from
//! their current weights up to the next budget, and so on until `R` epochs.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::ModelSpec;
use crate::seed;
use crate::train::{Session, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub dense_units: Vec<usize>,
    pub conv_filters: Vec<usize>,
    pub kernel_sizes: Vec<usize>,
    pub learning_rates: Vec<f64>,
}

impl Default for SearchSpace {
    /// Units 32..=512 in steps of 32, filters {16, 32, 48, 64}, kernels
    /// {3, 5}, learning rates {1e-2, 1e-3, 1e-4}.
    fn default() -> Self {
        SearchSpace {
            dense_units: (1..=16).map(|i| i * 32).collect(),
            conv_filters: vec![16, 32, 48, 64],
            kernel_sizes: vec![3, 5],
            learning_rates: vec![1e-2, 1e-3, 1e-4],
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        if self.dense_units.is_empty()
            || self.conv_filters.is_empty()
            || self.kernel_sizes.is_empty()
            || self.learning_rates.is_empty()
        {
            return Err(Error::invalid("every search dimension needs at least one value"));
        }
        if let Some(k) = self.kernel_sizes.iter().find(|&&k| k % 2 == 0) {
            return Err(Error::invalid(format!("kernel sizes must be odd, got {k}")));
        }
        if self.dense_units.contains(&0) || self.conv_filters.contains(&0) {
            return Err(Error::invalid("unit and filter counts must be positive"));
        }
        if self.learning_rates.iter().any(|&lr| !(lr > 0.0 && lr.is_finite())) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.dense_units.len() * self.conv_filters.len() * self.kernel_sizes.len() * self.learning_rates.len()
    }

    /// Every assignment, units varying slowest.
    pub fn assignments(&self) -> Vec<Assignment> {
        let mut out = Vec::with_capacity(self.size());
        for &dense_units in &self.dense_units {
            for &conv_filters in &self.conv_filters {
                for &kernel_size in &self.kernel_sizes {
                    for &learning_rate in &self.learning_rates {
                        out.push(Assignment {
                            dense_units,
                            conv_filters,
                            kernel_size,
                            learning_rate,
                        });
                    }
                }
            }
        }
        out
    }

    fn sample(&self, rng: &mut impl rand::Rng) -> Assignment {
        Assignment {
            dense_units: *self.dense_units.choose(rng).expect("validated"),
            conv_filters: *self.conv_filters.choose(rng).expect("validated"),
            kernel_size: *self.kernel_sizes.choose(rng).expect("validated"),
            learning_rate: *self.learning_rates.choose(rng).expect("validated"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub dense_units: usize,
    pub conv_filters: usize,
    pub kernel_size: usize,
    pub learning_rate: f64,
}

impl Assignment {
    /// Applies the assignment to a base spec, dropout unchanged.
    pub fn apply(&self, base: ModelSpec) -> ModelSpec {
        ModelSpec {
            dense_units: self.dense_units,
            conv_filters: self.conv_filters,
            kernel_size: self.kernel_size,
            ..base
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Round {
    pub configs_in: usize,
    /// Cumulative epochs each configuration has trained by the end of the round.
    pub epochs_per_config: usize,
    pub keep: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bracket {
    pub s: usize,
    pub rounds: Vec<Round>,
}

impl Bracket {
    /// Epochs actually run when survivors resume from their weights.
    pub fn total_epochs(&self) -> usize {
        let mut done = 0;
        let mut total = 0;
        for r in &self.rounds {
            total += r.configs_in * (r.epochs_per_config - done);
            done = r.epochs_per_config;
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BracketSchedule {
    pub max_epochs: usize,
    pub eta: usize,
    pub brackets: Vec<Bracket>,
}

impl BracketSchedule {
    pub fn total_epochs(&self) -> usize {
        self.brackets.iter().map(Bracket::total_epochs).sum()
    }

    pub fn total_configs(&self) -> usize {
        self.brackets.iter().map(|b| b.rounds[0].configs_in).sum()
    }
}

/// Canonical Hyperband arithmetic in integers:
///
/// ```text
/// s_max = floor(log_eta R)
/// n     = ceil((s_max + 1) * eta^s / (s + 1))
/// r_i   = max(1, floor(R * eta^i / eta^s))
/// n_i   = max(1, floor(n / eta^i)),  keep_i = n_{i+1}, last keep = 1
/// ```
pub fn compute_schedule(max_epochs: usize, eta: usize) -> Result<BracketSchedule> {
    if max_epochs == 0 {
        return Err(Error::invalid("max epochs must be at least 1"));
    }
    if eta < 2 {
        return Err(Error::invalid(format!("reduction factor must be at least 2, got {eta}")));
    }
    let mut s_max = 0u32;
    while eta
        .checked_pow(s_max + 1)
        .is_some_and(|p| p <= max_epochs)
    {
        s_max += 1;
    }
    let pow = |e: u32| eta.pow(e);
    let brackets = (0..=s_max)
        .rev()
        .map(|s| {
            let n = ((s_max as usize + 1) * pow(s)).div_ceil(s as usize + 1);
            let configs = |i: u32| (n / pow(i)).max(1);
            let rounds = (0..=s)
                .map(|i| Round {
                    configs_in: configs(i),
                    epochs_per_config: (max_epochs * pow(i) / pow(s)).max(1),
                    keep: if i == s { 1 } else { configs(i + 1) },
                })
                .collect();
            Bracket { s: s as usize, rounds }
        })
        .collect();
    Ok(BracketSchedule {
        max_epochs,
        eta,
        brackets,
    })
}

/// Something Hyperband can train incrementally.
pub trait Trainable: Sync {
    type Model: Send;

    fn create(&self, assignment: &Assignment, seed: u64) -> Result<Self::Model>;

    /// Trains `epochs` more epochs; returns one validation accuracy per epoch.
    fn train(&self, model: &mut Self::Model, epochs: usize) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub bracket: usize,
    pub round: usize,
    pub trial_id: usize,
    pub assignment: Assignment,
    /// Cumulative epochs trained.
    pub epochs: usize,
    /// Best validation accuracy over all epochs so far; 0 if failed.
    pub val_accuracy: f64,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best: TrialResult,
    pub trials: Vec<TrialResult>,
}

struct Trial<M> {
    id: usize,
    assignment: Assignment,
    model: Option<M>,
    epochs: usize,
    best: f64,
}

/// Runs every bracket of `schedule`. Trials in a round train in parallel;
/// ranking is serialized and stable (equal scores keep trial order).
pub fn search<T: Trainable>(
    trainable: &T,
    space: &SearchSpace,
    schedule: &BracketSchedule,
    seed: u64,
) -> Result<SearchOutcome> {
    search_with_progress(trainable, space, schedule, seed, |_| {})
}

pub fn search_with_progress<T: Trainable>(
    trainable: &T,
    space: &SearchSpace,
    schedule: &BracketSchedule,
    seed: u64,
    mut on_result: impl FnMut(&TrialResult),
) -> Result<SearchOutcome> {
    space.validate()?;
    let tuner_seed = seed::derive_seed(seed, seed::TUNER);
    let mut rng = seed::rng(tuner_seed);
    let mut next_id = 0;
    let mut log = Vec::new();

    for (b, bracket) in schedule.brackets.iter().enumerate() {
        let mut cohort: Vec<Trial<T::Model>> = (0..bracket.rounds[0].configs_in)
            .map(|_| {
                let assignment = space.sample(&mut rng);
                next_id += 1;
                Trial {
                    id: next_id - 1,
                    assignment,
                    model: None,
                    epochs: 0,
                    best: 0.0,
                }
            })
            .collect();

        for (r, round) in bracket.rounds.iter().enumerate() {
            cohort.truncate(round.configs_in);
            cohort.par_iter_mut().for_each(|t| {
                let first = r == 0;
                if first {
                    let trial_seed = seed::derive_indexed(tuner_seed, t.id as u64);
                    t.model = trainable.create(&t.assignment, trial_seed).ok();
                }
                let Some(model) = t.model.as_mut() else { return };
                let extra = round.epochs_per_config - t.epochs;
                match trainable.train(model, extra) {
                    Ok(accs) if accs.iter().all(|a| (0.0..=1.0).contains(a)) => {
                        t.epochs = round.epochs_per_config;
                        t.best = accs.iter().copied().fold(t.best, f64::max);
                    }
                    _ => t.model = None,
                }
            });

            for t in &cohort {
                let result = TrialResult {
                    bracket: b,
                    round: r,
                    trial_id: t.id,
                    assignment: t.assignment,
                    epochs: t.epochs,
                    val_accuracy: if t.model.is_some() { t.best } else { 0.0 },
                    failed: t.model.is_none(),
                };
                on_result(&result);
                log.push(result);
            }

            cohort.sort_by(|a, b| score(b).total_cmp(&score(a)));
            cohort.truncate(round.keep);
        }
    }

    let best = log
        .iter()
        .filter(|t| !t.failed)
        .fold(None::<&TrialResult>, |acc, t| match acc {
            Some(a) if a.val_accuracy > t.val_accuracy => Some(a),
            Some(a) if a.val_accuracy == t.val_accuracy && a.trial_id <= t.trial_id => Some(a),
            _ => Some(t),
        })
        .copied()
        .ok_or_else(|| Error::invalid("every Hyperband trial failed"))?;
    Ok(SearchOutcome { best, trials: log })
}

fn score<M>(t: &Trial<M>) -> f64 {
    if t.model.is_some() {
        t.best
    } else {
        -1.0
    }
}

pub const TRIAL_LOG_HEADER: &str =
    "bracket,round,trial_id,dense_units,conv_filters,kernel_size,learning_rate,epochs,val_accuracy";

pub fn trial_log_csv(trials: &[TrialResult]) -> String {
    let mut out = format!("{TRIAL_LOG_HEADER}\n");
    for t in trials {
        let a = t.assignment;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{:.6}",
            t.bracket, t.round, t.trial_id, a.dense_units, a.conv_filters, a.kernel_size, a.learning_rate, t.epochs,
            t.val_accuracy
        );
    }
    out
}

/// Trains real CNNs on preloaded images.
#[derive(Debug, Clone)]
pub struct CnnTrainable {
    pub base: TrainConfig,
    pub train: Arc<Dataset>,
    pub validation: Arc<Dataset>,
}

impl Trainable for CnnTrainable {
    type Model = Session;

    fn create(&self, a: &Assignment, seed: u64) -> Result<Session> {
        let config = TrainConfig {
            spec: a.apply(self.base.spec),
            learning_rate: a.learning_rate,
            seed,
            ..self.base
        };
        Session::new(config, self.train.clone(), self.validation.clone())
    }

    fn train(&self, session: &mut Session, epochs: usize) -> Result<Vec<f64>> {
        (0..epochs).map(|_| session.run_epoch().map(|r| r.val_accuracy)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn rounds(b: &Bracket) -> Vec<(usize, usize, usize)> {
        b.rounds.iter().map(|r| (r.configs_in, r.epochs_per_config, r.keep)).collect()
    }

    #[test]
    fn fifteen_by_three() {
        let s = compute_schedule(15, 3).unwrap();
        assert_eq!(s.brackets.len(), 3);
        assert_eq!(rounds(&s.brackets[0]), vec![(9, 1, 3), (3, 5, 1), (1, 15, 1)]);
        assert_eq!(rounds(&s.brackets[1]), vec![(5, 5, 1), (1, 15, 1)]);
        assert_eq!(rounds(&s.brackets[2]), vec![(3, 15, 1)]);
        assert_eq!(s.total_epochs(), 31 + 35 + 45);
    }

    #[test]
    fn schedule_invariants() {
        for r in 1..=100 {
            for eta in 2..=5 {
                let s = compute_schedule(r, eta).unwrap();
                for b in &s.brackets {
                    assert!(b.rounds.last().unwrap().configs_in >= 1);
                    assert_eq!(b.rounds.last().unwrap().epochs_per_config, r);
                    for w in b.rounds.windows(2) {
                        assert!(w[0].configs_in >= w[1].configs_in);
                        assert!(w[0].epochs_per_config <= w[1].epochs_per_config);
                        assert_eq!(w[0].keep, w[1].configs_in);
                    }
                }
            }
        }
        let one = compute_schedule(1, 3).unwrap();
        assert_eq!(one.brackets.len(), 1);
        assert!(one.brackets[0].rounds.iter().all(|r| r.epochs_per_config == 1));
        assert!(compute_schedule(0, 3).is_err());
        assert!(compute_schedule(15, 1).is_err());
    }

    struct Mock {
        epochs: AtomicUsize,
        fail_units: Option<usize>,
    }

    fn quality(a: &Assignment) -> f64 {
        let lr_rank = -a.learning_rate.log10();
        (a.dense_units as f64 * 0.37 + a.conv_filters as f64 * 1.3 + a.kernel_size as f64 * 2.1 + lr_rank * 5.0)
            .sin()
            .abs()
    }

    impl Trainable for Mock {
        type Model = Assignment;

        fn create(&self, a: &Assignment, _seed: u64) -> Result<Assignment> {
            Ok(*a)
        }

        fn train(&self, a: &mut Assignment, epochs: usize) -> Result<Vec<f64>> {
            self.epochs.fetch_add(epochs, Ordering::SeqCst);
            if Some(a.dense_units) == self.fail_units {
                return Err(Error::NonFiniteLoss { epoch: 1, batch: 0 });
            }
            Ok(vec![quality(a); epochs])
        }
    }

    fn mock() -> Mock {
        Mock {
            epochs: AtomicUsize::new(0),
            fail_units: None,
        }
    }

    #[test]
    fn consumes_exact_budget_and_finds_oracle() {
        let space = SearchSpace {
            dense_units: vec![32, 160],
            conv_filters: vec![64],
            kernel_sizes: vec![3, 5],
            learning_rates: vec![1e-4],
        };
        let schedule = compute_schedule(15, 3).unwrap();
        let m = mock();
        let out = search(&m, &space, &schedule, 42).unwrap();
        assert_eq!(m.epochs.load(Ordering::SeqCst), schedule.total_epochs());

        let oracle = space
            .assignments()
            .into_iter()
            .max_by(|a, b| quality(a).total_cmp(&quality(b)))
            .unwrap();
        let sampled: Vec<Assignment> = out.trials.iter().map(|t| t.assignment).collect();
        assert!(sampled.contains(&oracle));
        assert_eq!(out.best.assignment, oracle);
        assert_eq!(out.trials.iter().map(|t| t.trial_id).max(), Some(schedule.total_configs() - 1));
    }

    #[test]
    fn winner_dominates_and_is_deterministic() {
        let schedule = compute_schedule(15, 3).unwrap();
        let a = search(&mock(), &SearchSpace::default(), &schedule, 7).unwrap();
        let b = search(&mock(), &SearchSpace::default(), &schedule, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.trials.iter().all(|t| t.val_accuracy <= a.best.val_accuracy));
        let sampled_best = a.trials.iter().map(|t| quality(&t.assignment)).fold(0.0, f64::max);
        assert_eq!(a.best.val_accuracy, sampled_best);
    }

    #[test]
    fn single_assignment_space() {
        let space = SearchSpace {
            dense_units: vec![160],
            conv_filters: vec![64],
            kernel_sizes: vec![5],
            learning_rates: vec![1e-4],
        };
        let out = search(&mock(), &space, &compute_schedule(9, 3).unwrap(), 1).unwrap();
        assert_eq!(out.best.assignment, space.assignments()[0]);
        // all scores tie, so the earliest trial wins
        assert_eq!(out.best.trial_id, 0);
    }

    #[test]
    fn failures_score_zero_and_search_continues() {
        let space = SearchSpace {
            dense_units: vec![32, 64],
            ..SearchSpace::default()
        };
        let m = Mock {
            epochs: AtomicUsize::new(0),
            fail_units: Some(32),
        };
        let out = search(&m, &space, &compute_schedule(15, 3).unwrap(), 3).unwrap();
        assert!(out.trials.iter().any(|t| t.failed));
        for t in &out.trials {
            if t.failed {
                assert_eq!(t.val_accuracy, 0.0);
            }
        }
        assert_eq!(out.best.assignment.dense_units, 64);
    }

    #[test]
    fn space_validation_and_log() {
        assert_eq!(SearchSpace::default().size(), 16 * 4 * 2 * 3);
        assert!(SearchSpace::default().assignments().iter().any(|a| *a
            == Assignment {
                dense_units: 160,
                conv_filters: 64,
                kernel_size: 5,
                learning_rate: 1e-4
            }));
        let bad = SearchSpace {
            kernel_sizes: vec![4],
            ..SearchSpace::default()
        };
        assert!(bad.validate().is_err());
        let empty = SearchSpace {
            learning_rates: vec![],
            ..SearchSpace::default()
        };
        assert!(empty.validate().is_err());

        let out = search(&mock(), &SearchSpace::default(), &compute_schedule(3, 3).unwrap(), 0).unwrap();
        let csv = trial_log_csv(&out.trials);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(TRIAL_LOG_HEADER));
        assert_eq!(lines.count(), out.trials.len());
    }
}
