//! Rule-based genome mutation with feedback-biased operator choice.
//!
//! Every operator is only drawn when it applies to the parent, and each one maps a valid genome
//! to a valid genome, so no draw ever needs to be retried for validity.

use policylab_core::evaluator::FeedbackDelta;
use policylab_core::policy::{Lineage, MigrationSpec, PolicyGenome, TriggerVariant, DEFAULT_MIGRATION_WEIGHT};
use policylab_core::scheduler::{Algorithm, BatchCandidatePolicy, TpFloorRule};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Smallest time budget a mutation produces.
pub const MIN_TIME_BUDGET_SECONDS: f64 = 0.01;
/// Largest time budget a mutation produces.
pub const MAX_TIME_BUDGET_SECONDS: f64 = 300.0;
/// Largest batch size offered by the add-batch operator.
pub const MAX_BATCH_CANDIDATE: u32 = 64;
/// Extra weight given to the favored trigger direction at full feedback agreement.
pub const FEEDBACK_BOOST: f64 = 3.0;

/// Mutation operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operator {
    /// Scales the trigger threshold by a factor in [0.5, 1) so it fires more often.
    LoosenTrigger,
    /// Scales the trigger threshold by a factor in (1, 2] so it fires less often.
    TightenTrigger,
    SwitchTrigger,
    SwitchScheduler,
    ScaleBudget,
    ScaleMigrationWeight,
    SwitchMigration,
    AddBatch,
    RemoveBatch,
    ToggleTpFloor,
}

impl Operator {
    pub const ALL: [Operator; 10] = [
        Operator::LoosenTrigger,
        Operator::TightenTrigger,
        Operator::SwitchTrigger,
        Operator::SwitchScheduler,
        Operator::ScaleBudget,
        Operator::ScaleMigrationWeight,
        Operator::SwitchMigration,
        Operator::AddBatch,
        Operator::RemoveBatch,
        Operator::ToggleTpFloor,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Operator::LoosenTrigger => "loosen_trigger",
            Operator::TightenTrigger => "tighten_trigger",
            Operator::SwitchTrigger => "switch_trigger",
            Operator::SwitchScheduler => "switch_scheduler",
            Operator::ScaleBudget => "scale_budget",
            Operator::ScaleMigrationWeight => "scale_migration_weight",
            Operator::SwitchMigration => "switch_migration",
            Operator::AddBatch => "add_batch",
            Operator::RemoveBatch => "remove_batch",
            Operator::ToggleTpFloor => "toggle_tp_floor",
        }
    }

    /// Whether the operator changes this genome.
    pub fn applies_to(self, g: &PolicyGenome) -> bool {
        let variant = &g.trigger.variant;
        match self {
            Operator::LoosenTrigger => match variant {
                TriggerVariant::Periodic { every } => *every > 1,
                TriggerVariant::WorkloadDelta { delta } => *delta > 0.0,
                TriggerVariant::CostBenefit { margin } => *margin > 0.0,
                TriggerVariant::Never => false,
            },
            Operator::TightenTrigger => !matches!(variant, TriggerVariant::Never),
            Operator::SwitchTrigger | Operator::SwitchScheduler | Operator::SwitchMigration => true,
            Operator::ScaleBudget => true,
            Operator::ScaleMigrationWeight => matches!(g.migration, MigrationSpec::Penalized { .. }),
            Operator::AddBatch => {
                g.scheduler.batch_candidate_policy == BatchCandidatePolicy::Curated
                    && (1..=MAX_BATCH_CANDIDATE).any(|b| !g.scheduler.curated_set.contains(&b))
            }
            Operator::RemoveBatch => {
                g.scheduler.batch_candidate_policy == BatchCandidatePolicy::Curated
                    && g.scheduler.curated_set.len() > 1
            }
            Operator::ToggleTpFloor => true,
        }
    }
}

/// Feedback agreement in [-1, 1]: positive when more rescheduling came with a lower
/// `T_total` (or less rescheduling with a higher one), negative for the opposite pattern.
pub fn rescheduling_signal(deltas: &[FeedbackDelta]) -> f64 {
    let votes: Vec<f64> = deltas
        .iter()
        .filter(|d| d.d_n != 0 && d.d_total != 0.0 && d.d_total.is_finite())
        .map(|d| (d.d_n.signum() as f64) * -d.d_total.signum())
        .collect();
    if votes.is_empty() {
        0.0
    } else {
        votes.iter().sum::<f64>() / votes.len() as f64
    }
}

/// Sampling weight of every operator applicable to `genome`, biased by sibling feedback.
pub fn operator_weights(genome: &PolicyGenome, deltas: &[FeedbackDelta]) -> Vec<(Operator, f64)> {
    let s = rescheduling_signal(deltas);
    Operator::ALL
        .iter()
        .filter(|op| op.applies_to(genome))
        .map(|&op| {
            let w = match op {
                Operator::LoosenTrigger => 1.0 + FEEDBACK_BOOST * s.max(0.0),
                Operator::TightenTrigger => 1.0 + FEEDBACK_BOOST * (-s).max(0.0),
                _ => 1.0,
            };
            (op, w)
        })
        .collect()
}

/// Draws an operator according to [`operator_weights`].
pub fn sample_operator<R: Rng>(genome: &PolicyGenome, deltas: &[FeedbackDelta], rng: &mut R) -> Operator {
    let weights = operator_weights(genome, deltas);
    let total: f64 = weights.iter().map(|(_, w)| w).sum();
    let mut x = rng.gen::<f64>() * total;
    for (op, w) in &weights {
        if x < *w {
            return *op;
        }
        x -= w;
    }
    weights.last().expect("switch operators always apply").0
}

fn scale_variant<R: Rng>(variant: &TriggerVariant, loosen: bool, rng: &mut R) -> (TriggerVariant, String) {
    let factor = if loosen {
        rng.gen_range(0.5..1.0)
    } else {
        1.0 + rng.gen_range(0.0..1.0f64).max(f64::EPSILON)
    };
    match *variant {
        TriggerVariant::Periodic { every } => {
            let scaled = (every as f64 * factor).round() as u32;
            let next = if loosen { scaled.clamp(1, every - 1) } else { scaled.max(every + 1) };
            (TriggerVariant::Periodic { every: next }, format!("every {every}->{next}"))
        }
        TriggerVariant::WorkloadDelta { delta } => {
            let next = if delta == 0.0 { 0.05 } else { delta * factor };
            (TriggerVariant::WorkloadDelta { delta: next }, format!("delta {delta:.4}->{next:.4}"))
        }
        TriggerVariant::CostBenefit { margin } => {
            let next = if margin == 0.0 { 1.0 } else { margin * factor };
            (TriggerVariant::CostBenefit { margin: next }, format!("margin {margin:.3}->{next:.3}"))
        }
        TriggerVariant::Never => (TriggerVariant::Never, "never".into()),
    }
}

fn variant_kind(v: &TriggerVariant) -> usize {
    match v {
        TriggerVariant::Periodic { .. } => 0,
        TriggerVariant::WorkloadDelta { .. } => 1,
        TriggerVariant::CostBenefit { .. } => 2,
        TriggerVariant::Never => 3,
    }
}

/// Default parameters of each trigger variant, in kind order.
pub fn default_variants() -> [TriggerVariant; 4] {
    [
        TriggerVariant::Periodic { every: 1 },
        TriggerVariant::WorkloadDelta { delta: 0.1 },
        TriggerVariant::CostBenefit { margin: 0.0 },
        TriggerVariant::Never,
    ]
}

fn pick_other<T: Clone, R: Rng>(options: &[T], current: usize, rng: &mut R) -> T {
    let i = rng.gen_range(0..options.len() - 1);
    options[if i >= current { i + 1 } else { i }].clone()
}

/// Applies one operator; the child carries a fresh id and lineage pointing at the parent.
pub fn apply_operator<R: Rng>(op: Operator, parent: &PolicyGenome, rng: &mut R) -> PolicyGenome {
    let mut g = parent.clone();
    let detail = match op {
        Operator::LoosenTrigger | Operator::TightenTrigger => {
            let (v, d) = scale_variant(&g.trigger.variant, op == Operator::LoosenTrigger, rng);
            g.trigger.variant = v;
            d
        }
        Operator::SwitchTrigger => {
            let next = pick_other(&default_variants(), variant_kind(&g.trigger.variant), rng);
            let d = format!("{:?}", next);
            g.trigger.variant = next;
            d
        }
        Operator::SwitchScheduler => {
            let algos = [Algorithm::Greedy, Algorithm::LocalSearch, Algorithm::Exact];
            let cur = algos.iter().position(|a| *a == g.scheduler.algorithm).unwrap_or(0);
            let next = pick_other(&algos, cur, rng);
            g.scheduler.algorithm = next;
            format!("{next:?}")
        }
        Operator::ScaleBudget => {
            let before = g.scheduler.time_budget_seconds;
            let up = if before <= MIN_TIME_BUDGET_SECONDS {
                true
            } else if before >= MAX_TIME_BUDGET_SECONDS {
                false
            } else {
                rng.gen_bool(0.5)
            };
            let next = if up { before * 2.0 } else { before * 0.5 };
            g.scheduler.time_budget_seconds = next.clamp(MIN_TIME_BUDGET_SECONDS, MAX_TIME_BUDGET_SECONDS);
            format!("budget {before:.3}->{:.3}", g.scheduler.time_budget_seconds)
        }
        Operator::ScaleMigrationWeight => {
            let MigrationSpec::Penalized { w } = g.migration else {
                unreachable!("operator only applies to penalized migration")
            };
            let next = if w == 0.0 {
                0.5
            } else if rng.gen_bool(0.5) {
                w * 2.0
            } else {
                w * 0.5
            };
            g.migration = MigrationSpec::Penalized { w: next };
            format!("w {w:.3}->{next:.3}")
        }
        Operator::SwitchMigration => {
            let modes = [
                MigrationSpec::Full,
                MigrationSpec::Minimal,
                MigrationSpec::Penalized {
                    w: DEFAULT_MIGRATION_WEIGHT,
                },
            ];
            let cur = match g.migration {
                MigrationSpec::Full => 0,
                MigrationSpec::Minimal => 1,
                MigrationSpec::Penalized { .. } => 2,
            };
            let next = pick_other(&modes, cur, rng);
            let d = format!("{next:?}");
            g.migration = next;
            d
        }
        Operator::AddBatch => {
            let missing: Vec<u32> = (1..=MAX_BATCH_CANDIDATE)
                .filter(|b| !g.scheduler.curated_set.contains(b))
                .collect();
            let b = missing[rng.gen_range(0..missing.len())];
            g.scheduler.curated_set.push(b);
            format!("+{b}")
        }
        Operator::RemoveBatch => {
            let i = rng.gen_range(0..g.scheduler.curated_set.len());
            let b = g.scheduler.curated_set.remove(i);
            format!("-{b}")
        }
        Operator::ToggleTpFloor => {
            if g.scheduler.tp_floor_rules.is_empty() {
                g.scheduler.tp_floor_rules.push(TpFloorRule::default_rule());
                "on".to_string()
            } else {
                g.scheduler.tp_floor_rules.clear();
                "off".to_string()
            }
        }
    };
    g.lineage = Lineage {
        parent: Some(parent.id.clone()),
        mutation: format!("rule:{}({detail})", op.name()),
    };
    g.restamp();
    g
}

/// One rule-based mutation: a feedback-biased operator draw followed by its application.
pub fn mutate_rule_based<R: Rng>(parent: &PolicyGenome, deltas: &[FeedbackDelta], rng: &mut R) -> PolicyGenome {
    let op = sample_operator(parent, deltas, rng);
    apply_operator(op, parent, rng)
}
