//! Mutation prompt assembly.
//!
//! The static section describes the execution model, the three coupled trade-offs, a worked
//! reconfiguration example, the editable genome schema and the response protocol. The dynamic
//! section carries the parent genome and breakdown, its children's breakdowns and deltas, the
//! best-so-far fitness and recent strategies.

use super::edit::EDITABLE_PATHS;
use policylab_core::evaluator::{EvalReport, FeedbackDelta};
use policylab_core::policy::PolicyGenome;
use std::fmt::Write;

/// Default prompt budget in tokens.
pub const DEFAULT_PROMPT_MAX_TOKENS: usize = 16384;

/// A child of the parent, with its breakdown and the signed change against the parent.
#[derive(Debug, Clone, PartialEq)]
pub struct ChildFeedback {
    pub label: String,
    pub mutation: String,
    pub report: EvalReport,
    pub delta: FeedbackDelta,
}

/// Population-level context.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PopulationContext {
    pub best_fitness: Option<f64>,
    /// Recent mutation summaries, oldest first.
    pub recent_strategies: Vec<String>,
}

/// An assembled two-part prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MutationPrompt {
    pub system: String,
    pub user: String,
    /// Dynamic items dropped to fit the budget.
    pub dropped_items: usize,
}

impl MutationPrompt {
    /// Rough token count at four characters per token.
    pub fn estimated_tokens(&self) -> usize {
        estimate_tokens(&self.system) + estimate_tokens(&self.user)
    }
}

/// Rough token count at four characters per token.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

/// The fixed instructions shared by every mutation request.
pub fn system_section() -> String {
    let mut s = String::new();
    s.push_str(
        "You tune a rescheduling policy for an LLM serving cluster. The policy decides when to \
         reschedule (trigger), how to compute the new serving plan (scheduler) and how much of the \
         running deployment to move (migration).\n\n",
    );
    s.push_str("## Execution model\n");
    s.push_str(
        "The trace is replayed as a sequence of rescheduling intervals. Serving never pauses.\n\
         T_total = t_sched(1) + t_serve(1) + sum over i = 2..N of [t_stale(i) + t_reconfig(i) + t_serve(i)]\n\
         | component    | meaning                                                                 |\n\
         |--------------|-------------------------------------------------------------------------|\n\
         | N            | number of intervals, set by how often the trigger fires                 |\n\
         | t_sched(1)   | cold-start scheduling time before anything is served                    |\n\
         | t_stale(i)   | serving under the previous plan while the scheduler runs                |\n\
         | t_reconfig(i)| time to stop moved replicas and load the new ones                       |\n\
         | t_serve(i)   | serving time under the new plan until the next trigger                  |\n\n",
    );
    s.push_str("## Trade-offs\n");
    s.push_str(
        "- Rescheduling frequency vs overhead: firing more often keeps plans fresh, but every \
         firing pays stale and reconfiguration cost.\n\
         - Scheduling thoroughness vs stale serving: a longer search gives a better plan (lower \
         t_serve) but stretches the window served under the old plan (higher t_stale).\n\
         - Reconfiguration aggressiveness vs plan quality: moving more replicas reaches a better \
         plan but t_reconfig grows with the largest terminate time plus the largest load time.\n\n",
    );
    s.push_str("## Worked example\n");
    s.push_str(
        "A parent fires twice and pays 12.0s of reconfiguration. A child that fires five times \
         with minimal migration moves one small replica per firing: terminate 0.3s + load 0.7s = \
         1.0s for each of its four reschedules, 4.0s in total, while its stale cost also drops because each search is short. \
         Frequent light rescheduling wins when the workload is volatile. When the workload is \
         stable the same child only adds overhead, and a single thorough plan wins.\n\n",
    );
    s.push_str("## Editable fields\n");
    for (path, accepted) in EDITABLE_PATHS {
        let _ = writeln!(s, "- {path}: {accepted}");
    }
    s.push_str(
        "\nSwitching trigger.variant or migration.mode resets its parameters to defaults; set the \
         parameter in the same edit to choose a value.\n\n",
    );
    s.push_str("## Response format\n");
    s.push_str(
        "Reason briefly, then give exactly one fenced json block mapping field paths to new \
         values, for example:\n\
         ```json\n{\"trigger.variant\": \"cost_benefit\", \"trigger.variant.margin\": 2.0}\n```\n\
         Fields not listed keep their current value. Unknown paths or out-of-range values reject \
         the whole edit.\n",
    );
    s
}

fn exact_components(r: &EvalReport) -> String {
    format!(
        "N={} sum_sched={} sum_stale={} sum_reconfig={} sum_serve={} T_total={}",
        r.n, r.sum_sched, r.sum_stale, r.sum_reconfig, r.sum_serve, r.t_total
    )
}

fn child_item(c: &ChildFeedback) -> String {
    format!(
        "{}\n  mutation: {}\n  vs parent: {}\n",
        c.report.table_row(&c.label),
        c.mutation,
        c.delta.render()
    )
}

/// Numbered strategy list, oldest first.
pub fn strategies_section(strategies: &[String]) -> String {
    let mut s = String::from("## Recent strategies\n");
    for (i, line) in strategies.iter().enumerate() {
        let _ = writeln!(s, "{}. {}", i + 1, line);
    }
    s
}

fn render_user(
    parent: &PolicyGenome,
    parent_report: &EvalReport,
    children: &[&ChildFeedback],
    strategies: &[String],
    best: Option<f64>,
) -> String {
    let mut s = String::new();
    s.push_str("## Parent policy\n");
    let _ = writeln!(s, "```json\n{}\n```", parent.to_canonical());
    s.push_str("## Parent breakdown\n");
    let _ = writeln!(s, "{}", EvalReport::table_header());
    let _ = writeln!(s, "{}", parent_report.table_row("Parent"));
    let _ = writeln!(s, "exact: {}", exact_components(parent_report));
    if !children.is_empty() {
        s.push_str("## Children of this parent\n");
        let _ = writeln!(s, "{}", EvalReport::table_header());
        for c in children {
            s.push_str(&child_item(c));
        }
    }
    s.push_str("## Population\n");
    match best {
        Some(f) => {
            let _ = writeln!(s, "best T_total so far: {f:.3}s");
        }
        None => s.push_str("best T_total so far: none\n"),
    }
    if !strategies.is_empty() {
        s.push_str(&strategies_section(strategies));
    }
    s.push_str("## Task\nPropose one edit that lowers T_total for this parent.\n");
    s
}

/// Builds the prompt for one mutation of `parent`. Deterministic in its inputs. When over
/// `max_tokens`, recent strategies are dropped oldest first, then children oldest first; the
/// static section and the parent are always kept.
pub fn assemble_prompt(
    parent: &PolicyGenome,
    parent_report: &EvalReport,
    children: &[ChildFeedback],
    ctx: &PopulationContext,
    max_tokens: usize,
) -> MutationPrompt {
    let system = system_section();
    let budget = max_tokens.saturating_sub(estimate_tokens(&system));
    let mut strategies: &[String] = &ctx.recent_strategies;
    let mut kids: Vec<&ChildFeedback> = children.iter().collect();
    let mut dropped = 0;
    loop {
        let user = render_user(parent, parent_report, &kids, strategies, ctx.best_fitness);
        if estimate_tokens(&user) <= budget || (strategies.is_empty() && kids.is_empty()) {
            return MutationPrompt {
                system,
                user,
                dropped_items: dropped,
            };
        }
        if !strategies.is_empty() {
            strategies = &strategies[1..];
        } else {
            kids.remove(0);
        }
        dropped += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use policylab_core::evaluator::compare_feedback;
    use policylab_core::policy::seed_by_name;

    fn report(n: usize, stale: f64, reconfig: f64, serve: f64, total: f64) -> EvalReport {
        EvalReport {
            genome_id: "g".into(),
            trace_id: "t".into(),
            n,
            intervals: Vec::new(),
            sum_sched: 0.0,
            sum_stale: stale,
            sum_reconfig: reconfig,
            sum_serve: serve,
            t_total: total,
            failure: None,
        }
    }

    fn table_one() -> (EvalReport, Vec<ChildFeedback>) {
        let parent = report(2, 7.6, 12.0, 25.2, 44.8);
        let a = report(5, 5.5, 4.0, 24.0, 33.5);
        let b = report(1, 10.0, 17.0, 23.0, 50.0);
        let children = [("Child A", a), ("Child B", b)]
            .into_iter()
            .map(|(label, r)| ChildFeedback {
                label: label.into(),
                mutation: "rule:test".into(),
                delta: compare_feedback(&parent, &r).unwrap(),
                report: r,
            })
            .collect();
        (parent, children)
    }

    #[test]
    fn breakdown_rows_embedded_verbatim() {
        let g = seed_by_name("greedy-periodic-full").unwrap();
        let (parent, children) = table_one();
        let p = assemble_prompt(&g, &parent, &children, &PopulationContext::default(), DEFAULT_PROMPT_MAX_TOKENS);
        assert!(p.user.contains(&parent.table_row("Parent")));
        for c in &children {
            assert!(p.user.contains(&c.report.table_row(&c.label)));
        }
        assert!(p.user.contains("Child A                         5         5.5s         4.0s        24.0s        33.5s"));
        assert!(p.user.contains("(regression)"));
        assert!(p.estimated_tokens() <= DEFAULT_PROMPT_MAX_TOKENS);
    }

    #[test]
    fn parent_only_without_children() {
        let g = seed_by_name("greedy-periodic-full").unwrap();
        let (parent, _) = table_one();
        let p = assemble_prompt(&g, &parent, &[], &PopulationContext::default(), DEFAULT_PROMPT_MAX_TOKENS);
        assert!(!p.user.contains("## Children"));
        assert!(p.user.contains("## Parent breakdown"));
    }

    #[test]
    fn strategies_golden() {
        let strategies = vec![
            "rule:loosen_trigger(every 4 -> 2)".to_string(),
            "llm:migration.mode".to_string(),
            "rule:scale_budget(0.5)".to_string(),
        ];
        assert_eq!(
            strategies_section(&strategies),
            "## Recent strategies\n1. rule:loosen_trigger(every 4 -> 2)\n2. llm:migration.mode\n3. rule:scale_budget(0.5)\n"
        );
        let g = seed_by_name("greedy-periodic-full").unwrap();
        let (parent, _) = table_one();
        let ctx = PopulationContext {
            best_fitness: Some(33.5),
            recent_strategies: strategies.clone(),
        };
        let p = assemble_prompt(&g, &parent, &[], &ctx, DEFAULT_PROMPT_MAX_TOKENS);
        assert!(p.user.contains(&strategies_section(&strategies)));
        assert!(p.user.contains("best T_total so far: 33.500s"));
    }

    #[test]
    fn deterministic() {
        let g = seed_by_name("exact-never-full").unwrap();
        let (parent, children) = table_one();
        let ctx = PopulationContext::default();
        let a = assemble_prompt(&g, &parent, &children, &ctx, DEFAULT_PROMPT_MAX_TOKENS);
        let b = assemble_prompt(&g, &parent, &children, &ctx, DEFAULT_PROMPT_MAX_TOKENS);
        assert_eq!(a, b);
    }

    #[test]
    fn over_budget_drops_oldest_dynamic_items_first() {
        let g = seed_by_name("greedy-periodic-full").unwrap();
        let (parent, children) = table_one();
        let ctx = PopulationContext {
            best_fitness: None,
            recent_strategies: vec!["s1".into(), "s2".into()],
        };
        let full = assemble_prompt(&g, &parent, &children, &ctx, DEFAULT_PROMPT_MAX_TOKENS);
        assert_eq!(full.dropped_items, 0);
        let tight = full.estimated_tokens() - 1;
        let p = assemble_prompt(&g, &parent, &children, &ctx, tight);
        assert!(p.dropped_items >= 1);
        assert!(!p.user.contains("1. s1"));
        assert_eq!(p.system, full.system);
        let tiny = assemble_prompt(&g, &parent, &children, &ctx, 1);
        assert_eq!(tiny.dropped_items, 4);
        assert!(tiny.user.contains(&parent.table_row("Parent")));
        assert!(!tiny.user.contains("Child A"));
    }

    #[test]
    fn distinct_breakdowns_give_distinct_prompts() {
        let g = seed_by_name("greedy-periodic-full").unwrap();
        let ctx = PopulationContext::default();
        let a = assemble_prompt(&g, &report(2, 7.60, 12.0, 25.2, 44.8), &[], &ctx, DEFAULT_PROMPT_MAX_TOKENS);
        let b = assemble_prompt(&g, &report(2, 7.61, 12.0, 25.2, 44.8), &[], &ctx, DEFAULT_PROMPT_MAX_TOKENS);
        assert_ne!(a, b);
    }
}
