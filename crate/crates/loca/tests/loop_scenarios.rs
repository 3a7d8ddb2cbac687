//! End-to-end loop behavior with scripted providers: convergence, budget
//! exhaustion, batch runs, and resume.

use std::path::Path;

use loca::chain::RawProblem;
use loca::config::EngineConfig;
use loca::orchestrator::{resume, run_manifest, solve, EngineError};
use loca::provider::{CallCount, ScriptRule, ScriptedProvider};

const INTERPRETATION: &str = "Physical System Description
A ball of mass m is dropped from rest at height h above the floor.

Variables and Parameters
m: mass of the ball
h: initial drop height
g: gravitational acceleration

Initial Conditions
- The ball is released from rest.

Constraints and Assumptions
- Air resistance is negligible.

Solution Objective
1. Find the impact speed.
";

const CHAIN_WITH_BUG: &str = "Step 1
Principle: Conservation of mechanical energy
Derivation: For the drop from rest, m g h = (1/2) m v^2 at the floor.

Step 2
Principle: Algebraic manipulation
Derivation: Solving for v gives v = sqrt(g h / 2).

Step 3
Principle: Dimensional analysis
Derivation: The expression has units of m/s, consistent with a speed.
";

const CHAIN_FIXED: &str = "Step 1
Principle: Conservation of mechanical energy
Derivation: For the drop from rest, m g h = (1/2) m v^2 at the floor.

Step 2
Principle: Algebraic manipulation
Derivation: Solving for v gives v = sqrt(2 g h).

Step 3
Principle: Dimensional analysis
Derivation: The expression has units of m/s, consistent with a speed.
";

fn problem() -> RawProblem {
    RawProblem::new("drop-1", "A ball of mass m is dropped from height h. Find its impact speed.")
}

fn config() -> EngineConfig {
    EngineConfig {
        deterministic_timestamps: true,
        ..EngineConfig::default()
    }
}

/// Script for the standard two-iteration scenario: the first chain has a
/// defect in step 2, review flags it, the refined chain passes.
fn two_iteration_rules() -> Vec<ScriptRule> {
    vec![
        ScriptRule::reply("interpret", CallCount::Any, INTERPRETATION),
        ScriptRule::reply("augment", CallCount::Exactly(1), CHAIN_WITH_BUG),
        ScriptRule::reply("augment", CallCount::AtLeast(2), CHAIN_FIXED),
        ScriptRule::reply(
            "review:D:2",
            CallCount::Exactly(1),
            "Solving m g h = (1/2) m v^2 gives v = sqrt(2 g h); the stated sqrt(g h / 2) inverts the factor.\nVERDICT: WRONG",
        ),
        ScriptRule::reply("review:*", CallCount::Any, "Checks out.\nVERDICT: CORRECT"),
        ScriptRule::reply("summarize", CallCount::Any, "Step 2: replace sqrt(g h / 2) with sqrt(2 g h)."),
    ]
}

#[test]
fn immediate_convergence_takes_one_iteration_and_no_refine() {
    let provider = ScriptedProvider::new(vec![
        ScriptRule::reply("interpret", CallCount::Any, INTERPRETATION),
        ScriptRule::reply("augment", CallCount::Any, CHAIN_FIXED),
        ScriptRule::reply("review:*", CallCount::Any, "VERDICT: CORRECT"),
    ]);
    let dir = tempfile::tempdir().unwrap();
    let outcome = solve(&problem(), &config(), &provider, dir.path()).unwrap();
    assert!(outcome.converged);
    assert_eq!(outcome.iterations_used, 1);
    assert_eq!(outcome.trace.iterations.len(), 1);
    assert!(outcome.trace.iterations[0].summary.is_none());
    // 1 interpret + 1 augment + 2*3 review, no refine and no summarize
    assert_eq!(provider.call_count(), 8);
    assert!(dir.path().join("iter-1/chain").exists());
    assert!(dir.path().join("iter-1/report").exists());
    assert!(!dir.path().join("iter-1/summary").exists());
    assert!(!dir.path().join("iter-2").exists());
}

#[test]
fn two_iteration_convergence_records_one_summary() {
    let provider = ScriptedProvider::new(two_iteration_rules());
    let dir = tempfile::tempdir().unwrap();
    let outcome = solve(&problem(), &config(), &provider, dir.path()).unwrap();
    assert!(outcome.converged);
    assert_eq!(outcome.iterations_used, 2);
    let summaries: Vec<_> = outcome
        .trace
        .iterations
        .iter()
        .filter_map(|i| i.summary.as_ref())
        .collect();
    assert_eq!(summaries.len(), 1);
    assert!(summaries[0].text.contains("sqrt(2 g h)"));
    // the first review failed on step 2, the refined chain differs there
    assert_ne!(
        outcome.trace.iterations[0].chain.steps[1].derivation,
        outcome.trace.iterations[1].chain.steps[1].derivation
    );
    assert_eq!(
        outcome.trace.iterations[0].chain.steps[0],
        outcome.trace.iterations[1].chain.steps[0]
    );
    assert!(outcome.trace.iterations[1].report.overall);
    assert!(dir.path().join("iter-1/summary").exists());
    assert!(!dir.path().join("iter-2/summary").exists());
}

#[test]
fn interpretation_can_be_disabled() {
    let provider = ScriptedProvider::new(vec![
        ScriptRule::reply("augment", CallCount::Any, CHAIN_FIXED),
        ScriptRule::reply("review:*", CallCount::Any, "VERDICT: CORRECT"),
    ]);
    let mut config = config();
    config.interpretation = false;
    let dir = tempfile::tempdir().unwrap();
    let outcome = solve(&problem(), &config, &provider, dir.path()).unwrap();
    assert!(outcome.converged);
    assert!(outcome.trace.interpretation.is_none());
    assert!(!dir.path().join("interpretation").exists());
    let interpret_calls = provider
        .recorded_requests()
        .iter()
        .filter(|r| r.request_tag == "interpret")
        .count();
    assert_eq!(interpret_calls, 0);
    // the fallback problem context still carries the raw statement
    let augment_prompt = &provider.recorded_requests()[0].messages[0].content;
    assert!(augment_prompt.contains("dropped from height h"));
}

// The loop bound: total provider calls decompose into interpret + initial
// augment + per-iteration review/summarize/refine terms, each at its law.
#[test]
fn per_session_call_count_matches_the_closed_form() {
    let provider = ScriptedProvider::new(two_iteration_rules());
    let dir = tempfile::tempdir().unwrap();
    let outcome = solve(&problem(), &config(), &provider, dir.path()).unwrap();
    let m = 3; // both scripted chains have three steps
    // interpret(1) + augment(1) + iter1[review 2m + summarize 1 + refine 1]
    //             + iter2[review 2m]
    let expected = 1 + 1 + (2 * m + 1 + 1) + 2 * m;
    assert_eq!(outcome.trace.exchanges.len(), expected);
    assert_eq!(provider.call_count(), expected);
    // exchanges appear in wall-clock order
    let timestamps: Vec<u64> = outcome.trace.exchanges.iter().map(|e| e.at_ms).collect();
    assert!(timestamps.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn budget_exhaustion_returns_last_chain_with_feedback() {
    let provider = ScriptedProvider::new(vec![
        ScriptRule::reply("interpret", CallCount::Any, INTERPRETATION),
        ScriptRule::reply("augment", CallCount::Any, CHAIN_WITH_BUG),
        ScriptRule::reply(
            "review:D:2",
            CallCount::Any,
            "Still inverted.\nVERDICT: WRONG",
        ),
        ScriptRule::reply("review:*", CallCount::Any, "VERDICT: CORRECT"),
        ScriptRule::reply("summarize", CallCount::Any, "Step 2: the factor is still inverted."),
    ]);
    let mut config = config();
    config.max_iterations = 3;
    let dir = tempfile::tempdir().unwrap();
    let outcome = solve(&problem(), &config, &provider, dir.path()).unwrap();
    assert!(!outcome.converged);
    assert_eq!(outcome.iterations_used, 3);
    assert_eq!(outcome.trace.iterations.len(), 3);
    assert_eq!(outcome.unresolved_feedback().len(), 1);
    assert!(outcome.unresolved_feedback()[0].contains("Still inverted"));
    // summaries precede refinement, so exactly two (after iterations 1 and 2)
    let summaries = outcome
        .trace
        .iterations
        .iter()
        .filter(|i| i.summary.is_some())
        .count();
    assert_eq!(summaries, 2);
}

#[test]
fn stage_errors_name_stage_and_iteration_and_persist_partial_trace() {
    // review of step 1 fails hard at the first iteration
    let provider = ScriptedProvider::new(vec![
        ScriptRule::reply("interpret", CallCount::Any, INTERPRETATION),
        ScriptRule::reply("augment", CallCount::Any, CHAIN_FIXED),
        ScriptRule::fail("review:P:1", CallCount::Any, "malformed"),
    ]);
    let dir = tempfile::tempdir().unwrap();
    let err = solve(&problem(), &config(), &provider, dir.path()).unwrap_err();
    match &err {
        EngineError::Stage { stage, iteration, .. } => {
            assert_eq!(*stage, "review");
            assert_eq!(*iteration, 1);
        }
        other => panic!("unexpected error {other:?}"),
    }
    // the partial trace is on disk: config, problem, interpretation,
    // exchanges and the chain under review
    assert!(dir.path().join("config").exists());
    assert!(dir.path().join("problem").exists());
    assert!(dir.path().join("interpretation").exists());
    assert!(dir.path().join("exchanges.log").exists());
    assert!(dir.path().join("iter-1/chain").exists());
    assert!(!dir.path().join("iter-1/report").exists());
}

#[test]
fn manifest_returns_outcomes_in_input_order() {
    let problems: Vec<RawProblem> = (1..=3)
        .map(|i| RawProblem::new(format!("p{i}"), format!("problem number {i}")))
        .collect();
    let provider = ScriptedProvider::new(vec![
        ScriptRule::reply("interpret", CallCount::Any, INTERPRETATION),
        ScriptRule::reply("augment", CallCount::Any, CHAIN_FIXED),
        ScriptRule::reply("review:*", CallCount::Any, "VERDICT: CORRECT"),
    ]);
    let dir = tempfile::tempdir().unwrap();
    let outcomes = run_manifest(&problems, &config(), &provider, dir.path(), 2).unwrap();
    assert_eq!(outcomes.len(), 3);
    for (i, outcome) in outcomes.iter().enumerate() {
        assert_eq!(outcome.problem_id, format!("p{}", i + 1));
        assert!(outcome.result.as_ref().unwrap().converged);
        assert!(dir.path().join(format!("p{}", i + 1)).join("iter-1/chain").exists());
    }
}

#[test]
fn manifest_records_individual_failures_without_aborting() {
    let problems = vec![
        RawProblem::new("good-1", "statement"),
        RawProblem::new("bad", "statement"),
        RawProblem::new("good-2", "statement"),
    ];
    // the faulting session is driven by a per-tag count: the interpret call
    // for the problem scheduled second fails hard
    let provider = ScriptedProvider::new(vec![
        ScriptRule::fail("interpret", CallCount::Exactly(2), "auth"),
        ScriptRule::reply("interpret", CallCount::Any, INTERPRETATION),
        ScriptRule::reply("augment", CallCount::Any, CHAIN_FIXED),
        ScriptRule::reply("review:*", CallCount::Any, "VERDICT: CORRECT"),
    ]);
    let dir = tempfile::tempdir().unwrap();
    // parallelism 1 so scheduling order equals manifest order
    let outcomes = run_manifest(&problems, &config(), &provider, dir.path(), 1).unwrap();
    assert!(outcomes[0].result.is_ok());
    assert!(outcomes[1].result.is_err());
    assert!(outcomes[2].result.is_ok());
}

#[test]
fn manifest_rejects_duplicate_ids() {
    let problems = vec![
        RawProblem::new("same", "statement"),
        RawProblem::new("same", "statement"),
    ];
    let provider = ScriptedProvider::new(vec![]);
    let dir = tempfile::tempdir().unwrap();
    let err = run_manifest(&problems, &config(), &provider, dir.path(), 1).unwrap_err();
    assert!(matches!(err, EngineError::DuplicateProblemId(id) if id == "same"));
}

fn read_tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(dir: &Path, root: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, root, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}

#[test]
fn sequential_manifest_traces_are_byte_identical_across_runs() {
    let problems: Vec<RawProblem> = (1..=2)
        .map(|i| RawProblem::new(format!("p{i}"), format!("problem number {i}")))
        .collect();
    let run = |dir: &Path| {
        let provider = ScriptedProvider::new(two_iteration_rules());
        run_manifest(&problems, &config(), &provider, dir, 1).unwrap();
    };
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    run(dir_a.path());
    run(dir_b.path());
    let tree_a = read_tree(dir_a.path());
    let tree_b = read_tree(dir_b.path());
    assert!(!tree_a.is_empty());
    assert_eq!(tree_a, tree_b);
}

#[test]
fn resume_continues_after_an_interrupted_refinement() {
    let dir = tempfile::tempdir().unwrap();
    // first run: review flags step 2, summary is written, then the refine
    // call dies => iter-1 is complete on disk and nothing of iter-2 exists
    let provider = ScriptedProvider::new(vec![
        ScriptRule::reply("interpret", CallCount::Any, INTERPRETATION),
        ScriptRule::reply("augment", CallCount::Exactly(1), CHAIN_WITH_BUG),
        ScriptRule::fail("augment", CallCount::AtLeast(2), "timeout"),
        ScriptRule::reply("review:D:2", CallCount::Any, "inverted factor\nVERDICT: WRONG"),
        ScriptRule::reply("review:*", CallCount::Any, "VERDICT: CORRECT"),
        ScriptRule::reply("summarize", CallCount::Any, "Step 2: fix the factor."),
    ]);
    let err = solve(&problem(), &config(), &provider, dir.path()).unwrap_err();
    assert!(matches!(err, EngineError::Stage { stage: "refine", iteration: 1, .. }));
    assert!(dir.path().join("iter-1/summary").exists());
    assert!(!dir.path().join("iter-2").exists());

    // resume: the refine call now succeeds and iteration 2 converges
    let continuation = ScriptedProvider::new(vec![
        ScriptRule::reply("augment", CallCount::Any, CHAIN_FIXED),
        ScriptRule::reply("review:*", CallCount::Any, "VERDICT: CORRECT"),
    ]);
    let outcome = resume(dir.path(), &continuation).unwrap();
    assert!(outcome.converged);
    assert_eq!(outcome.iterations_used, 2);
    assert_eq!(outcome.trace.iterations.len(), 2);
    // no second interpretation happened
    assert_eq!(
        continuation
            .recorded_requests()
            .iter()
            .filter(|r| r.request_tag == "interpret")
            .count(),
        0
    );
    // the combined exchange log kept the original entries
    let seqs: Vec<u64> = outcome.trace.exchanges.iter().map(|e| e.seq).collect();
    let expected: Vec<u64> = (1..=seqs.len() as u64).collect();
    assert_eq!(seqs, expected);
    assert!(outcome.trace.exchanges.len() > 7);
}

#[test]
fn resume_of_converged_session_makes_no_provider_calls() {
    let dir = tempfile::tempdir().unwrap();
    let provider = ScriptedProvider::new(two_iteration_rules());
    let original = solve(&problem(), &config(), &provider, dir.path()).unwrap();
    assert!(original.converged);

    let silent = ScriptedProvider::new(vec![]);
    let resumed = resume(dir.path(), &silent).unwrap();
    assert_eq!(silent.call_count(), 0);
    assert_eq!(resumed.converged, original.converged);
    assert_eq!(resumed.iterations_used, original.iterations_used);
    assert_eq!(resumed.final_chain, original.final_chain);
    assert_eq!(resumed.trace.iterations, original.trace.iterations);
    assert_eq!(resumed.trace.exchanges, original.trace.exchanges);
}

#[test]
fn resume_of_exhausted_session_returns_stored_outcome() {
    let dir = tempfile::tempdir().unwrap();
    let provider = ScriptedProvider::new(vec![
        ScriptRule::reply("interpret", CallCount::Any, INTERPRETATION),
        ScriptRule::reply("augment", CallCount::Any, CHAIN_WITH_BUG),
        ScriptRule::reply("review:D:2", CallCount::Any, "still wrong\nVERDICT: WRONG"),
        ScriptRule::reply("review:*", CallCount::Any, "VERDICT: CORRECT"),
        ScriptRule::reply("summarize", CallCount::Any, "Step 2: still wrong."),
    ]);
    let mut config = config();
    config.max_iterations = 2;
    let original = solve(&problem(), &config, &provider, dir.path()).unwrap();
    assert!(!original.converged);

    let silent = ScriptedProvider::new(vec![]);
    let resumed = resume(dir.path(), &silent).unwrap();
    assert_eq!(silent.call_count(), 0);
    assert!(!resumed.converged);
    assert_eq!(resumed.iterations_used, 2);
}

#[test]
fn torn_iteration_record_is_a_corrupt_trace_error() {
    let dir = tempfile::tempdir().unwrap();
    // the review of iteration 1 faults after the chain file is written
    let provider = ScriptedProvider::new(vec![
        ScriptRule::reply("interpret", CallCount::Any, INTERPRETATION),
        ScriptRule::reply("augment", CallCount::Any, CHAIN_FIXED),
        ScriptRule::fail("review:*", CallCount::Any, "malformed"),
    ]);
    let _ = solve(&problem(), &config(), &provider, dir.path()).unwrap_err();
    assert!(dir.path().join("iter-1/chain").exists());

    let silent = ScriptedProvider::new(vec![]);
    let err = resume(dir.path(), &silent).unwrap_err();
    match err {
        EngineError::CorruptTrace { record, .. } => {
            assert_eq!(record, "iter-1/report");
        }
        other => panic!("unexpected error {other:?}"),
    }
}

#[test]
fn empty_directory_is_a_corrupt_trace_error() {
    let dir = tempfile::tempdir().unwrap();
    let silent = ScriptedProvider::new(vec![]);
    let err = resume(dir.path(), &silent).unwrap_err();
    assert!(matches!(err, EngineError::CorruptTrace { .. }));
}
