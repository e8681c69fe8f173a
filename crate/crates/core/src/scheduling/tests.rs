use std::collections::BTreeMap;

use num_rational::Ratio;
use proptest::prelude::*;

use super::*;
use crate::allocation::CapabilityLexicon;
use crate::model::dag::tests::random_dag;
use crate::model::{Allocation, AllocationMethod, Goal, Plan, RobotSpec, Strategy, Task, TaskStatus, WorldState};
use crate::planning::{RecipeBackend, RecipeBook};
use crate::worker::{FailureCount, WorkerProfile};

const RECIPES: &str = r#"
- goal_pattern: tidy
  subtasks:
    - {id: a, description: Pick up toys}
    - {id: b, description: Vacuum the floor, depends_on: [a]}
- goal_pattern: wash
  subtasks:
    - {id: a, description: Load the dishwasher}
    - {id: b, description: Run the dishwasher, depends_on: [a]}
- goal_pattern: check
  subtasks:
    - {id: door, description: Check the front door}
- goal_pattern: search
  subtasks:
    - {id: kitchen, description: Search the kitchen}
    - {id: hall, description: Search the hall}
"#;

fn robots(names: &[&str]) -> Vec<RobotSpec> {
    names
        .iter()
        .enumerate()
        .map(|(i, n)| RobotSpec::native(n, ["navigation"], 7000 + i as u16))
        .collect()
}

fn backend() -> RecipeBackend {
    RecipeBackend::new(RecipeBook::parse(RECIPES).unwrap())
}

fn goals(texts: &[&str]) -> Vec<Goal> {
    texts.iter().enumerate().map(|(i, t)| Goal::new(format!("g{}", i + 1), *t).unwrap()).collect()
}

fn manual(tasks: Vec<Task>, assign: &[(&str, &str)]) -> MissionState {
    let plan = Plan::with_tasks("plan", Strategy::Manual, tasks).unwrap();
    let mut alloc = Allocation::empty(AllocationMethod::Milp);
    for (t, r) in assign {
        alloc.assignments.insert(t.to_string(), r.to_string());
    }
    MissionState::from_plan("m1", vec![], plan, alloc, AllocatorChoice::Milp)
}

fn diamond(assign: &[(&str, &str)]) -> MissionState {
    manual(
        vec![
            Task::new("a", "A"),
            Task::new("b", "B").after(["a"]),
            Task::new("c", "C").after(["a"]),
            Task::new("d", "D").after(["b", "c"]),
        ],
        assign,
    )
}

fn t(n: i64) -> SimTime {
    SimTime::from_int(n)
}

fn succeed(state: &mut MissionState, task: &str) {
    state.on_task_started(t(0), task).unwrap();
    state.on_task_result(t(0), task, TaskOutcome::Succeeded, &[]).unwrap();
}

#[test]
fn ready_set_diamond_two_robots() {
    let mut s = diamond(&[("a", "r1"), ("b", "r1"), ("c", "r2"), ("d", "r1")]);
    assert_eq!(s.ready_set(), vec![("a".to_string(), "r1".to_string())]);
    s.advance(t(0), &[]);
    succeed(&mut s, "a");
    assert_eq!(
        s.ready_set(),
        vec![("b".into(), "r1".into()), ("c".into(), "r2".into())]
    );
}

#[test]
fn ready_set_one_task_per_robot() {
    let mut s = diamond(&[("a", "r1"), ("b", "r2"), ("c", "r2"), ("d", "r1")]);
    s.advance(t(0), &[]);
    succeed(&mut s, "a");
    assert_eq!(s.ready_set(), vec![("b".to_string(), "r2".to_string())]);
}

#[test]
fn ready_set_empty_when_done() {
    let mut s = manual(vec![Task::new("a", "A")], &[("a", "r1")]);
    s.advance(t(0), &[]);
    succeed(&mut s, "a");
    assert!(s.ready_set().is_empty());
    s.advance(t(1), &[]);
    assert_eq!(s.phase, Phase::Done);
}

#[test]
fn retries_then_replan() {
    let mut s = manual(vec![Task::new("a", "A")], &[("a", "r1")]);
    s.advance(t(0), &[]);
    for attempt in 2..=3 {
        let effect = s.on_task_result(t(1), "a", TaskOutcome::Failed("x".into()), &[]).unwrap();
        assert!(matches!(effect, Effect::Redispatch(Command::Execute { attempt: n, ref robot, .. }) if n == attempt && robot == "r1"));
        assert_eq!(s.plan.tasks["a"].attempts, attempt);
    }
    let effect = s.on_task_result(t(2), "a", TaskOutcome::Failed("x".into()), &[]).unwrap();
    assert_eq!(effect, Effect::TriggerReplan("a".into()));
    assert_eq!(s.phase, Phase::Replanning);
    assert_eq!(s.plan.tasks["a"].attempts, 3);
    assert_eq!(s.trace.count("a", EventKind::Failed), 3);
    assert_eq!(s.avoid, vec![("A".to_string(), "r1".to_string())]);
}

#[test]
fn success_after_two_failures() {
    let mut s = manual(vec![Task::new("a", "A")], &[("a", "r1")]);
    s.advance(t(0), &[]);
    s.on_task_result(t(1), "a", TaskOutcome::Failed("x".into()), &[]).unwrap();
    s.on_task_result(t(2), "a", TaskOutcome::Failed("x".into()), &[]).unwrap();
    assert_eq!(s.on_task_result(t(3), "a", TaskOutcome::Succeeded, &[]).unwrap(), Effect::Completed);
    assert_eq!(s.plan.tasks["a"].status, TaskStatus::Succeeded);
    assert_eq!(s.plan.tasks["a"].attempts, 3);
}

#[test]
fn unknown_and_stale_results() {
    let mut s = manual(vec![Task::new("a", "A"), Task::new("b", "B")], &[("a", "r1"), ("b", "r1")]);
    assert_eq!(
        s.on_task_result(t(0), "zzz", TaskOutcome::Succeeded, &[]),
        Err(ResultError::UnknownTask("zzz".into()))
    );
    s.plan.tasks.get_mut("b").unwrap().status = TaskStatus::Cancelled;
    assert!(matches!(
        s.on_task_result(t(0), "b", TaskOutcome::Succeeded, &[]),
        Err(ResultError::StaleResult { .. })
    ));
}

#[test]
fn phase_transitions() {
    use Phase::*;
    assert!(Planning.can_transition_to(Allocating));
    assert!(Executing.can_transition_to(Replanning));
    assert!(Replanning.can_transition_to(Planning));
    assert!(!Done.can_transition_to(Executing));
    assert!(!Executing.can_transition_to(Planning));
    assert!(!Aborted.can_transition_to(Planning));
}

fn ctx<'a>(robots: &'a [RobotSpec], planner: &'a RecipeBackend, lex: &'a CapabilityLexicon) -> MissionContext<'a> {
    MissionContext {
        robots,
        planner,
        llm_allocator: None,
        lexicon: lex,
    }
}

#[test]
fn chain_on_one_robot_dispatches_in_order() {
    let fleet = robots(&["r1"]);
    let b = backend();
    let lex = CapabilityLexicon::default();
    let state = manual(
        vec![Task::new("c", "C"), Task::new("a", "A").after(["c"]), Task::new("b", "B").after(["a"])],
        &[("a", "r1"), ("b", "r1"), ("c", "r1")],
    );
    let mut sim = SimDispatcher::uniform(["r1"], t(1));
    let done = run_mission(state, &ctx(&fleet, &b, &lex), &mut WorldState::new(), &mut sim);
    assert_eq!(done.phase, Phase::Done);
    let order: Vec<&str> = done.trace.of_kind(EventKind::Dispatched).map(|e| e.task_id.as_str()).collect();
    assert_eq!(order, ["c", "a", "b"]);
    assert_eq!(idle_percentage(&done.trace, 1).unwrap(), Ratio::from_integer(0));
}

#[test]
fn diamond_branches_overlap() {
    let fleet = robots(&["r1", "r2"]);
    let b = backend();
    let lex = CapabilityLexicon::default();
    let state = diamond(&[("a", "r1"), ("b", "r1"), ("c", "r2"), ("d", "r2")]);
    let mut sim = SimDispatcher::uniform(["r1", "r2"], t(1));
    let done = run_mission(state, &ctx(&fleet, &b, &lex), &mut WorldState::new(), &mut sim);
    assert_eq!(done.phase, Phase::Done);
    let iv = done.trace.busy_intervals();
    let b_iv = iv["r1"].iter().find(|i| i.2 == "b").unwrap();
    let c_iv = iv["r2"].iter().find(|i| i.2 == "c").unwrap();
    assert!(b_iv.0 < c_iv.1 && c_iv.0 < b_iv.1);
    check_trace(&done.trace, &done.plan, 3).unwrap();
}

#[test]
fn unreachable_robot_triggers_replan() {
    let fleet = robots(&["r1", "r2"]);
    let b = backend();
    let lex = CapabilityLexicon::default();
    let mut state = MissionState::new("m", goals(&["check"]), Strategy::PerGoal, AllocatorChoice::Milp);
    let mut sim = SimDispatcher::uniform(["r1", "r2"], t(1));
    sim.set_unreachable("r1", true);
    let c = ctx(&fleet, &b, &lex);
    state.plan_and_allocate(&c, &[]).unwrap();
    let unlucky = state.plan.tasks.values().find(|t| t.assigned_robot.as_deref() == Some("r1")).unwrap().id.clone();
    let done = run_mission(state, &c, &mut WorldState::new(), &mut sim);
    assert_eq!(done.trace.count(&unlucky, EventKind::Failed), 3);
    assert_eq!(done.trace.count(&unlucky, EventKind::ReplanRequested), 1);
    assert_eq!(done.round, 1);
    assert_eq!(done.phase, Phase::Done);
    // The replacement went to the reachable robot.
    let replacement = done.plan.tasks.values().find(|t| t.id.starts_with("r1/")).unwrap();
    assert_eq!(replacement.assigned_robot.as_deref(), Some("r2"));
}

#[test]
fn replan_with_everything_met_is_done() {
    let fleet = robots(&["r1"]);
    let b = backend();
    let lex = CapabilityLexicon::default();
    let c = ctx(&fleet, &b, &lex);
    let mut state = MissionState::new("m", goals(&["tidy"]), Strategy::PerGoal, AllocatorChoice::Milp);
    state.plan_and_allocate(&c, &[]).unwrap();
    let ids: Vec<String> = state.plan.tasks.keys().cloned().collect();
    state.advance(t(0), &[]);
    succeed(&mut state, &ids[0]);
    state.advance(t(1), &[]);
    succeed(&mut state, &ids[1]);
    state.request_replan(t(2), "r1", "checking");
    state.replan(&c, &[], t(2)).unwrap();
    assert_eq!(state.phase, Phase::Done);
}

#[test]
fn replan_covers_only_unmet_goals() {
    let fleet = robots(&["r1", "r2"]);
    let b = backend();
    let lex = CapabilityLexicon::default();
    let c = ctx(&fleet, &b, &lex);
    let mut state = MissionState::new("m", goals(&["tidy", "wash"]), Strategy::PerGoal, AllocatorChoice::Milp);
    state.plan_and_allocate(&c, &[]).unwrap();
    for id in ["g1/a", "g1/b"] {
        let robot = state.plan.tasks[id].assigned_robot.clone().unwrap();
        state.plan.tasks.get_mut(id).unwrap().status = TaskStatus::Succeeded;
        state.trace.record(t(0), id, &robot, EventKind::Succeeded);
    }
    state.request_replan(t(1), "r1", "new information");
    state.replan(&c, &["the dishwasher is full".into()], t(1)).unwrap();
    assert_eq!(state.phase, Phase::Executing);
    let fresh: Vec<&Task> = state.plan.tasks.values().filter(|t| state.current.contains(&t.id)).collect();
    assert_eq!(fresh.len(), 2);
    assert!(fresh.iter().all(|t| t.goal_id.as_deref() == Some("g2") && t.id.starts_with("r1/")));
    assert_eq!(state.plan.tasks["g1/a"].status, TaskStatus::Succeeded);
    assert_eq!(state.plan.tasks["g2/a"].status, TaskStatus::Cancelled);
}

#[test]
fn replanned_duplicates_of_finished_work_are_dropped() {
    let fleet = robots(&["r1", "r2"]);
    let b = backend();
    let lex = CapabilityLexicon::default();
    let c = ctx(&fleet, &b, &lex);
    let mut state = MissionState::new("m", goals(&["tidy"]), Strategy::PerGoal, AllocatorChoice::Milp);
    state.plan_and_allocate(&c, &[]).unwrap();
    state.advance(t(0), &[]);
    succeed(&mut state, "g1/a");
    state.request_replan(t(1), "r1", "r");
    state.replan(&c, &[], t(1)).unwrap();
    let fresh: Vec<&Task> = state.current.iter().map(|id| &state.plan.tasks[id]).collect();
    assert_eq!(fresh.len(), 1);
    assert_eq!(fresh[0].description, "Vacuum the floor");
    assert!(fresh[0].depends_on.contains("g1/a"));
    assert_eq!(state.ready_set().len(), 1);
}

#[test]
fn fruitless_replans_abort() {
    let fleet = robots(&["r1"]);
    let b = backend();
    let lex = CapabilityLexicon::default();
    let c = ctx(&fleet, &b, &lex);
    let mut sim = SimDispatcher::new([WorkerProfile::new("r1").failing("toys", FailureCount::Always)]);
    let state = MissionState::new("m", goals(&["tidy"]), Strategy::PerGoal, AllocatorChoice::Milp);
    let done = run_mission(state, &c, &mut WorldState::new(), &mut sim);
    assert_eq!(done.phase, Phase::Aborted);
    assert!(done.diagnostic.as_deref().unwrap().contains("no progress"));
    assert_eq!(done.fruitless_replans, MAX_FRUITLESS_REPLANS);
    assert_eq!(done.trace.of_kind(EventKind::ReplanRequested).count(), 4);
    check_trace(&done.trace, &done.plan, 3).unwrap();
}

#[test]
fn failing_worker_hands_over_after_replan() {
    let fleet = robots(&["r1", "r2"]);
    let b = backend();
    let lex = CapabilityLexicon::default();
    let c = ctx(&fleet, &b, &lex);
    let mut sim = SimDispatcher::new([
        WorkerProfile::new("r1").failing("load", FailureCount::Always),
        WorkerProfile::new("r2"),
    ]);
    let state = MissionState::new("m", goals(&["wash"]), Strategy::PerGoal, AllocatorChoice::Milp);
    let done = run_mission(state, &c, &mut WorldState::new(), &mut sim);
    assert_eq!(done.phase, Phase::Done, "{:?}", done.diagnostic);
    assert_eq!(done.trace.of_kind(EventKind::ReplanRequested).count(), 1);
    check_trace(&done.trace, &done.plan, 3).unwrap();
}

#[test]
fn discovery_replan_in_simulation() {
    let recipes = RecipeBackend::new(
        RecipeBook::parse(
            r#"
- goal_pattern: find
  world_contains: cup is in the den
  subtasks: [{id: fetch, description: Fetch the cup from the den, capabilities: [manipulation]}]
- goal_pattern: find
  subtasks:
    - {id: a, description: Look in the den, capabilities: [detection]}
    - {id: b, description: Look in the attic, capabilities: [detection]}
    - {id: r, description: Report back, depends_on: [a, b]}
"#,
        )
        .unwrap(),
    );
    let fleet = vec![
        RobotSpec::native("arm", ["navigation", "manipulation"], 7001),
        RobotSpec::native("scout", ["navigation", "detection"], 7002),
    ];
    let lex = CapabilityLexicon::default();
    let c = ctx(&fleet, &recipes, &lex);
    let mut sim = SimDispatcher::new([
        WorkerProfile::new("arm"),
        WorkerProfile::new("scout").discovering("look in", ["the cup is in the den"]),
    ]);
    let state = MissionState::new("m", goals(&["find the cup"]), Strategy::PerGoal, AllocatorChoice::Milp);
    let mut world = WorldState::new();
    let done = run_mission(state, &c, &mut world, &mut sim);
    assert_eq!(done.phase, Phase::Done, "{:?}", done.diagnostic);
    assert_eq!(world.texts(), vec!["the cup is in the den"]);
    let fetch = done.plan.tasks.values().find(|t| t.description.contains("Fetch")).unwrap();
    assert_eq!(fetch.assigned_robot.as_deref(), Some("arm"));
    assert_eq!(fetch.status, TaskStatus::Succeeded);
}

#[test]
fn serialized_chain_idle_closed_form() {
    for m in 1..=5usize {
        for n in 1..=8usize {
            let names: Vec<String> = (0..m).map(|i| format!("r{i}")).collect();
            let fleet: Vec<RobotSpec> = names.iter().enumerate().map(|(i, nm)| RobotSpec::native(nm, ["x"], 7000 + i as u16)).collect();
            let tasks: Vec<Task> = (0..n)
                .map(|i| {
                    let task = Task::new(&format!("t{i:02}"), format!("step {i}"));
                    if i == 0 { task } else { task.after([format!("t{:02}", i - 1)]) }
                })
                .collect();
            let assign: Vec<(String, String)> = (0..n).map(|i| (format!("t{i:02}"), names[i % m].clone())).collect();
            let refs: Vec<(&str, &str)> = assign.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
            let state = manual(tasks, &refs);
            let b = backend();
            let lex = CapabilityLexicon::default();
            let mut sim = SimDispatcher::uniform(names.clone(), t(1));
            let done = run_mission(state, &ctx(&fleet, &b, &lex), &mut WorldState::new(), &mut sim);
            let (m, n) = (m as i64, n as i64);
            assert_eq!(
                idle_percentage(&done.trace, m as usize).unwrap(),
                Ratio::new(100 * (m * n - n), m * n)
            );
        }
    }
}

fn random_assignment(plan: &Plan, m: usize, picks: &[usize]) -> Vec<(String, String)> {
    plan.tasks
        .keys()
        .enumerate()
        .map(|(i, id)| (id.clone(), format!("r{}", picks[i % picks.len()] % m)))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn random_dag_traces_are_safe(
        plan in random_dag(),
        m in 1usize..4,
        picks in proptest::collection::vec(0usize..4, 1..12),
        durations in proptest::collection::vec(1i64..4, 4),
        flaky in proptest::collection::vec(0u32..3, 4),
    ) {
        let assign = random_assignment(&plan, m, &picks);
        let refs: Vec<(&str, &str)> = assign.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let state = manual(plan.tasks.values().cloned().collect(), &refs);
        let names: Vec<String> = (0..m).map(|i| format!("r{i}")).collect();
        let fleet: Vec<RobotSpec> = names.iter().enumerate().map(|(i, n)| RobotSpec::native(n, ["x"], 7000 + i as u16)).collect();
        let profiles = names.iter().enumerate().map(|(i, n)| {
            let mut p = WorkerProfile::new(n.clone()).with_duration(durations[i] as f64 / 2.0);
            if flaky[i] > 0 {
                p = p.failing("", FailureCount::Times(flaky[i]));
            }
            p
        });
        let mut sim = SimDispatcher::new(profiles);
        let b = backend();
        let lex = CapabilityLexicon::default();
        let done = run_mission(state, &ctx(&fleet, &b, &lex), &mut WorldState::new(), &mut sim);
        prop_assert_eq!(done.phase, Phase::Done);
        prop_assert!(check_trace(&done.trace, &done.plan, 3).is_ok(), "{:?}", check_trace(&done.trace, &done.plan, 3));
        prop_assert!(done.plan.tasks.values().all(|t| t.attempts <= 3));
        let idle = idle_percentage(&done.trace, m).unwrap();
        prop_assert!(idle >= Ratio::from_integer(0) && idle <= Ratio::from_integer(100));
        let per_task: BTreeMap<&str, usize> = done.plan.tasks.keys().map(|k| (k.as_str(), done.trace.count(k, EventKind::Succeeded))).collect();
        prop_assert!(per_task.values().all(|&c| c == 1));
    }
}
