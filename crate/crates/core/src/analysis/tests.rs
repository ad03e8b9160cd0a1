use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::baselines::RandomHeuristic;
use crate::chemistry::{Chemistry, EdgeSet, PerceptMap, PerceptState, PotionColor, PotionMap};
use crate::environment::runner::{run_episode, ActivationRow, RunOptions, UnitActivations};
use crate::environment::{Action, AgentInfo, EnvConfig, Environment, EpisodeTrace, TraceSummary};

use PotionColor::*;

/// Identity percept map with red making stones pointy and orange making
/// them large.
fn chemistry(edges: EdgeSet) -> Chemistry {
    (0..PotionMap::COUNT)
        .map(|i| Chemistry::new(PotionMap::from_index(i), edges, PerceptMap::IDENTITY))
        .find(|c| c.percept_effect(Red) == (2, 1) && c.percept_effect(Orange) == (1, 1))
        .expect("some potion map fits")
}

fn p(f: [i8; 3]) -> PerceptState {
    PerceptState::new(f)
}

fn scenario(chem: Chemistry, stones: [[i8; 3]; 3], hues: [PotionColor; 12], actions: &[Action]) -> EpisodeTrace {
    let cfg = EnvConfig { trials_per_episode: 1, ..EnvConfig::default() };
    let mut env = Environment::with_chemistry(&cfg, 7, chem);
    env.set_trial_state(&stones.map(|f| chem.percept_to_latent(p(f))), &hues);
    let header = env.header(AgentInfo { id: "constructed".into(), ..AgentInfo::default() });
    let steps = actions.iter().map(|&a| env.step(a).unwrap()).collect();
    let summary = TraceSummary { trial_totals: env.trial_totals().to_vec(), score: env.score() };
    EpisodeTrace { header, steps, summary }
}

fn apply(stone: usize, hue: PotionColor) -> Action {
    Action::Apply { stone, hue }
}

const HUES: [PotionColor; 12] =
    [Red, Red, Red, Red, Green, Green, Orange, Orange, Yellow, Yellow, Pink, Turquoise];

const SMALL_PURPLE_ROUND: [i8; 3] = [1, -1, -1];
const SMALL_PURPLE_POINTY: [i8; 3] = [1, -1, 1];
const LARGE_BLUE_POINTY: [i8; 3] = [-1, 1, 1];
const SMALL_BLUE_ROUND: [i8; 3] = [-1, -1, -1];

#[test]
fn consistency_counts_reuse_after_endpoint_null() {
    let chem = chemistry(EdgeSet::FULL);
    let f = SMALL_PURPLE_POINTY;
    let mut actions = vec![Action::NoOp; 3];
    actions.push(apply(0, Red));
    actions.extend([Action::NoOp; 3]);
    actions.push(apply(1, Red));
    let t = scenario(chem, [f, f, SMALL_BLUE_ROUND], HUES, &actions);
    assert!(t.steps[3].outcome.is_null_apply());
    let flags = violation_flags(&t, ViolationOptions::default());
    let hits: Vec<usize> = flags.iter().enumerate().filter(|(_, f)| f.consistency).map(|(i, _)| i).collect();
    assert_eq!(hits, vec![7]);
    assert_eq!(count_violations(&t, ViolationOptions::default()), ViolationCounts { consistency: 1, ..Default::default() });
}

#[test]
fn no_nulls_means_no_violations() {
    let chem = chemistry(EdgeSet::FULL);
    let t = scenario(
        chem,
        [SMALL_BLUE_ROUND, SMALL_PURPLE_ROUND, SMALL_BLUE_ROUND],
        HUES,
        &[apply(0, Red), apply(1, Orange), apply(2, Red), Action::Deposit { stone: 1 }],
    );
    assert!(t.steps.iter().all(|s| !s.outcome.is_null_apply()));
    assert_eq!(count_violations(&t, ViolationOptions::default()).total(), 0);
}

#[test]
fn parallelism_counts_first_application_per_percept() {
    let chem = chemistry(EdgeSet::FULL);
    let stones = [SMALL_PURPLE_ROUND, SMALL_PURPLE_POINTY, LARGE_BLUE_POINTY];
    let one = scenario(chem, stones, HUES, &[apply(0, Red), apply(1, Red)]);
    assert_eq!(count_parallelism(&one), 1);

    let actions = [apply(0, Red), apply(1, Red), apply(2, Red), apply(0, Red)];
    let t = scenario(chem, stones, HUES, &actions);
    // stone 0 now shows the percept stone 1 already showed
    let strict = count_violations(&t, ViolationOptions::default());
    assert_eq!(strict.parallelism, 2);
    assert_eq!(strict.consistency, 1);
    let permissive = count_violations(&t, ViolationOptions { permissive_parallelism: true });
    assert_eq!(permissive.parallelism, 3);
}

#[test]
fn parallelism_unarmed_without_an_observed_effect() {
    let chem = chemistry(EdgeSet::FULL);
    let t = scenario(
        chem,
        [SMALL_PURPLE_POINTY, LARGE_BLUE_POINTY, SMALL_PURPLE_ROUND],
        HUES,
        &[apply(0, Red), apply(1, Red), apply(2, Red)],
    );
    assert_eq!(count_parallelism(&t), 0);
}

#[test]
fn missing_edge_reapplication_counts() {
    let v = PerceptMap::IDENTITY.to_latent(p(SMALL_PURPLE_ROUND));
    let axis = chemistry(EdgeSet::FULL).potion_map.axis_of(Red);
    let chem = chemistry(EdgeSet::FULL.without(EdgeSet::edge_index(v, axis)));
    let t = scenario(
        chem,
        [SMALL_PURPLE_ROUND, SMALL_PURPLE_ROUND, SMALL_BLUE_ROUND],
        HUES,
        &[apply(0, Red), apply(1, Red)],
    );
    assert_eq!(
        count_violations(&t, ViolationOptions::default()),
        ViolationCounts { missing_edges: 1, ..Default::default() }
    );
}

#[test]
fn endpoint_null_does_not_arm_missing_edges() {
    let chem = chemistry(EdgeSet::FULL);
    let t = scenario(
        chem,
        [SMALL_PURPLE_POINTY, SMALL_PURPLE_POINTY, SMALL_BLUE_ROUND],
        HUES,
        &[apply(0, Red), apply(1, Red)],
    );
    let c = count_violations(&t, ViolationOptions::default());
    assert_eq!((c.missing_edges, c.consistency), (0, 1));
}

#[test]
fn potion_pairs_use_the_opposite_hue() {
    let chem = chemistry(EdgeSet::FULL);
    let t = scenario(
        chem,
        [SMALL_BLUE_ROUND, SMALL_PURPLE_POINTY, SMALL_BLUE_ROUND],
        HUES,
        &[apply(0, Orange), apply(1, Yellow)],
    );
    assert_eq!(count_potion_pairs(&t), 1);
}

#[test]
fn potion_pairs_skip_hues_seen_directly() {
    let chem = chemistry(EdgeSet::FULL);
    let large = [-1, 1, -1];
    let t = scenario(
        chem,
        [SMALL_BLUE_ROUND, large, SMALL_PURPLE_POINTY],
        HUES,
        &[apply(0, Orange), apply(1, Yellow), apply(2, Yellow)],
    );
    assert!(!t.steps[1].outcome.is_null_apply());
    assert!(t.steps[2].outcome.is_null_apply());
    assert_eq!(count_potion_pairs(&t), 0);
}

#[test]
fn potion_pairs_need_the_pair_observed() {
    let chem = chemistry(EdgeSet::FULL);
    let t = scenario(
        chem,
        [SMALL_BLUE_ROUND, SMALL_PURPLE_POINTY, SMALL_BLUE_ROUND],
        HUES,
        &[apply(1, Yellow), apply(0, Red), apply(2, Orange)],
    );
    assert_eq!(count_potion_pairs(&t), 0);
}

fn heuristic_runs(n: u64) -> Vec<crate::environment::runner::EpisodeRun> {
    let cfg = EnvConfig::default();
    (0..n)
        .map(|s| run_episode(&mut RandomHeuristic::new(3), &cfg, 100 + s, s as usize, RunOptions::default()).unwrap())
        .collect()
}

#[test]
fn counts_on_a_prefix_are_the_prefix_of_counts() {
    for run in heuristic_runs(6) {
        let t = &run.trace;
        for opts in [ViolationOptions::default(), ViolationOptions { permissive_parallelism: true }] {
            let flags = violation_flags(t, opts);
            for n in [0, 1, 17, 60, t.steps.len()] {
                let cut = t.truncated(n);
                assert_eq!(violation_flags(&cut, opts), flags[..n]);
            }
        }
    }
}

#[test]
fn report_aggregates_episodes() {
    let runs = heuristic_runs(4);
    let traces: Vec<EpisodeTrace> = runs.into_iter().map(|r| r.trace).collect();
    let r = ViolationReport::build(&traces, ViolationOptions::default());
    assert_eq!(r.per_episode.len(), 4);
    let mean = r.per_episode.iter().map(|c| c.consistency as f64).sum::<f64>() / 4.0;
    assert!((r.consistency.mean - mean).abs() < 1e-12);
    assert_eq!(r.agent, "random_heuristic");
    assert_eq!(r.to_tsv().lines().count(), 5);
}

#[test]
fn five_step_histogram() {
    let chem = chemistry(EdgeSet::FULL);
    let t = scenario(
        chem,
        [SMALL_BLUE_ROUND, SMALL_PURPLE_ROUND, SMALL_BLUE_ROUND],
        HUES,
        &[apply(0, Red), apply(0, Green), apply(0, Green), Action::Deposit { stone: 0 }, Action::NoOp],
    );
    let h = action_type_histogram(std::slice::from_ref(&t), None);
    assert_eq!(h.trials.len(), 1);
    assert_eq!(
        h.trials[0],
        TrialActionCounts { trial: 0, improved: 1, worsened: 1, no_effect: 1, deposits: [1, 0, 0, 0], noop: 1, invalid: 0 }
    );
}

#[test]
fn histogram_conserves_steps_and_filters_trials() {
    let traces: Vec<EpisodeTrace> = heuristic_runs(3).into_iter().map(|r| r.trace).collect();
    let h = action_type_histogram(&traces, None);
    let total: u64 = h.trials.iter().map(|t| t.total()).sum();
    assert_eq!(total as usize, traces.iter().map(|t| t.steps.len()).sum::<usize>());
    let deposits: u64 = h.trials.iter().map(|t| t.deposits.iter().sum::<u64>()).sum();
    let counted = traces.iter().flat_map(|t| &t.steps).filter(|s| matches!(s.action, Action::Deposit { .. })).count();
    // invalid deposits land in the invalid bucket
    let invalid_deposits = traces
        .iter()
        .flat_map(|t| &t.steps)
        .filter(|s| matches!(s.action, Action::Deposit { .. }) && matches!(s.outcome, crate::environment::Outcome::Invalid { .. }))
        .count();
    assert_eq!(deposits as usize, counted - invalid_deposits);
    let late = action_type_histogram(&traces, Some(&[8, 9]));
    assert_eq!(late.trials.iter().map(|t| t.trial).collect::<Vec<_>>(), vec![8, 9]);
    assert_eq!(late.trials[0], h.trials[8]);
    assert!(h.to_tsv().starts_with("trial\tkind\tcount\n1\timproved\t"));
}

fn with_scores(base: &EpisodeTrace, seed: u64, m: usize, totals: &[i32]) -> EpisodeTrace {
    let mut t = base.clone();
    t.header.seed = seed;
    t.header.missing_edges = m;
    t.summary = TraceSummary { trial_totals: totals.to_vec(), score: totals.iter().sum() };
    t
}

#[test]
fn scores_grouped_by_missing_edges() {
    let base = scenario(chemistry(EdgeSet::FULL), [SMALL_BLUE_ROUND; 3], HUES, &[]);
    let traces = [with_scores(&base, 1, 2, &[10]), with_scores(&base, 2, 2, &[20]), with_scores(&base, 3, 0, &[7])];
    let table = score_by_missing_edges(&traces);
    let two = table[&2];
    assert_eq!(two.n, 2);
    assert!((two.mean - 15.0).abs() < 1e-12);
    // sample sd sqrt(50), over sqrt(2)
    assert!((two.sem.unwrap() - 5.0).abs() < 1e-12);
    assert_eq!(table[&0].sem, None);
    assert!(score_by_missing_edges_tsv(&table).contains("0\t1\t7\t\n"));
}

#[test]
fn trial_comparison_against_reference() {
    let base = scenario(chemistry(EdgeSet::FULL), [SMALL_BLUE_ROUND; 3], HUES, &[]);
    let agent = [
        with_scores(&base, 1, 0, &[1, 0, 0]),
        with_scores(&base, 2, 0, &[0, 0, 5]),
        with_scores(&base, 3, 0, &[2, 2, 2]),
    ];
    let ideal = [
        with_scores(&base, 3, 0, &[2, 2, 2]),
        with_scores(&base, 1, 0, &[0, 2, 0]),
        with_scores(&base, 2, 0, &[3, 0, 0]),
    ];
    let c = io_comparison_by_trial(&agent, &ideal).unwrap();
    let want = [100.0 / 3.0, 200.0 / 3.0, 100.0 / 3.0];
    for (got, want) in c.percent_reference_higher.iter().zip(want) {
        assert!((got - want).abs() < 1e-9);
    }
    let same = io_comparison_by_trial(&agent, &agent).unwrap();
    assert!(same.percent_reference_higher.iter().all(|&p| p == 0.0));
    let zeros = [with_scores(&base, 1, 0, &[0, 0]), with_scores(&base, 2, 0, &[0, 0])];
    let best = [with_scores(&base, 1, 0, &[15, 15]), with_scores(&base, 2, 0, &[15, 15])];
    assert_eq!(io_comparison_by_trial(&zeros, &best).unwrap().percent_reference_higher, vec![100.0, 100.0]);
    let stray = [with_scores(&base, 9, 0, &[0, 0]), with_scores(&base, 2, 0, &[0, 0])];
    assert!(matches!(io_comparison_by_trial(&zeros, &stray), Err(AnalysisError::Unpaired(1 | 9))));
}

fn synthetic_activations(trace: &EpisodeTrace, episode: usize, rng: &mut ChaCha8Rng) -> Vec<ActivationRow> {
    trace
        .steps
        .iter()
        .map(|s| {
            let stone2_latent7 = matches!(s.action.stone(), Some(2)) && s.state.stones[2].latent.id() == 7;
            let hue_sign = match s.outcome {
                crate::environment::Outcome::Applied { hue: Red, .. } => 1.0,
                crate::environment::Outcome::Applied { hue: Green, .. } => -1.0,
                _ => 0.0,
            };
            let noise: f64 = rng.gen_range(-1.0..1.0);
            UnitActivations {
                lstm_h: vec![0.5, if stone2_latent7 { 1.0 } else { 0.0 }],
                transformer_pooled: vec![hue_sign + 0.1 * noise, 0.0, rng.gen_range(-1.7..1.7)],
            }
        })
        .enumerate()
        .map(|(step, units)| ActivationRow { episode, step, units })
        .collect()
}

#[test]
fn activation_tables_and_selectivity() {
    let runs = heuristic_runs(10);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rows: Vec<Vec<ActivationRow>> =
        runs.iter().enumerate().map(|(i, r)| synthetic_activations(&r.trace, i, &mut rng)).collect();
    let eps: Vec<RecordedEpisode> =
        runs.iter().zip(&rows).map(|(r, a)| RecordedEpisode { trace: &r.trace, activations: a }).collect();
    let n_steps: usize = rows.iter().map(|r| r.len()).sum();

    for g in [Grouping::StoneLatent, Grouping::Percept, Grouping::Hue, Grouping::RewardSign] {
        let table = build_activation_table(&eps, g).unwrap();
        for (src, units) in [(Source::LstmH, 2), (Source::TransformerPooled, 3)] {
            assert_eq!(table.units(src), units);
            for u in 0..units {
                let n: usize = table.stats.iter().filter(|s| s.source == src && s.unit == u).map(|s| s.n).sum();
                assert_eq!(n, n_steps, "{g:?}");
            }
        }
        assert!(table.stats.iter().filter(|s| s.source == Source::LstmH && s.unit == 0).all(|s| s.std == 0.0));
    }

    let by_latent = build_activation_table(&eps, Grouping::StoneLatent).unwrap();
    let hit = by_latent.get(Source::LstmH, 1, "stone2_latent7").expect("stone 2 acted on at vertex 7");
    assert_eq!((hit.mean, hit.std), (1.0, 0.0));
    assert!(by_latent.stats.iter().filter(|s| s.source == Source::LstmH && s.unit == 1 && s.key != "stone2_latent7").all(|s| s.mean == 0.0));

    let by_hue = build_activation_table(&eps, Grouping::Hue).unwrap();
    let sel = pair_selectivity(&by_hue, DEFAULT_THETA).unwrap();
    assert_eq!(sel.units.iter().map(|u| u.selective).collect::<Vec<_>>(), vec![true, false, false]);
    assert_eq!(sel.units[0].pairs.iter().filter(|p| p.selective).count(), 1);
    assert!((sel.fraction - 1.0 / 3.0).abs() < 1e-12);
    assert!(matches!(pair_selectivity(&by_latent, 1.0), Err(AnalysisError::WrongGrouping { .. })));
}

#[test]
fn activation_rows_must_fit_their_trace() {
    let runs = heuristic_runs(1);
    let bad = vec![ActivationRow {
        episode: 0,
        step: runs[0].trace.steps.len(),
        units: UnitActivations { lstm_h: vec![0.0], transformer_pooled: vec![] },
    }];
    let eps = [RecordedEpisode { trace: &runs[0].trace, activations: &bad }];
    assert!(matches!(build_activation_table(&eps, Grouping::Hue), Err(AnalysisError::StepOutOfRange { .. })));
}
