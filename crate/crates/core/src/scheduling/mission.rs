use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, info, warn};

use super::trace::{EventKind, ExecutionTrace, SimTime};
use crate::allocation::{allocate_plan, annotate_capabilities, AllocationError, Allocator, CapabilityLexicon, LlmAllocator};
use crate::model::{
    normalize_text, plan_progress, Allocation, AllocationMethod, Goal, ModelError, Plan, RobotSpec, StatementSource,
    Strategy, Task, TaskStatus, WorldState, MAX_ATTEMPTS,
};
use crate::planning::{build_plan, fleet_capabilities, PlanBackend, PlanningError};

/// Consecutive replans without a new success before a mission is aborted.
pub const MAX_FRUITLESS_REPLANS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Planning,
    Allocating,
    Executing,
    Replanning,
    Done,
    Aborted,
}

impl Phase {
    pub fn is_finished(self) -> bool {
        matches!(self, Phase::Done | Phase::Aborted)
    }

    pub fn can_transition_to(self, next: Phase) -> bool {
        use Phase::*;
        matches!(
            (self, next),
            (Planning, Allocating)
                | (Allocating, Executing)
                | (Executing, Replanning | Done | Aborted)
                | (Replanning, Planning | Done | Aborted)
                | (Planning | Allocating, Aborted)
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Planning => "planning",
            Phase::Allocating => "allocating",
            Phase::Executing => "executing",
            Phase::Replanning => "replanning",
            Phase::Done => "done",
            Phase::Aborted => "aborted",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Allocator selection as named on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AllocatorChoice {
    Milp,
    Llm,
    LlmStub,
    RoundRobin,
}

impl AllocatorChoice {
    pub const ALL: [AllocatorChoice; 4] = [
        AllocatorChoice::Milp,
        AllocatorChoice::Llm,
        AllocatorChoice::LlmStub,
        AllocatorChoice::RoundRobin,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AllocatorChoice::Milp => "milp",
            AllocatorChoice::Llm => "llm",
            AllocatorChoice::LlmStub => "llm-stub",
            AllocatorChoice::RoundRobin => "round-robin",
        }
    }

    pub fn method(self) -> AllocationMethod {
        match self {
            AllocatorChoice::Milp => AllocationMethod::Milp,
            AllocatorChoice::Llm | AllocatorChoice::LlmStub => AllocationMethod::Llm,
            AllocatorChoice::RoundRobin => AllocationMethod::RoundRobin,
        }
    }
}

impl fmt::Display for AllocatorChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AllocatorChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_lowercase().replace('_', "-").as_str() {
            "milp" | "lp" => Ok(AllocatorChoice::Milp),
            "llm" => Ok(AllocatorChoice::Llm),
            "llm-stub" | "stub" => Ok(AllocatorChoice::LlmStub),
            "round-robin" | "rr" => Ok(AllocatorChoice::RoundRobin),
            other => Err(format!("unknown allocator {other:?} (expected milp, llm, llm-stub or round-robin)")),
        }
    }
}

/// Everything planning and allocation need besides the mission itself.
pub struct MissionContext<'a> {
    pub robots: &'a [RobotSpec],
    pub planner: &'a dyn PlanBackend,
    /// Required for the llm and llm-stub allocator choices.
    pub llm_allocator: Option<&'a LlmAllocator>,
    pub lexicon: &'a CapabilityLexicon,
}

impl MissionContext<'_> {
    fn allocator(&self, choice: AllocatorChoice) -> Result<Allocator<'_>, MissionError> {
        Ok(match choice {
            AllocatorChoice::Milp => Allocator::Milp,
            AllocatorChoice::RoundRobin => Allocator::RoundRobin,
            AllocatorChoice::Llm | AllocatorChoice::LlmStub => {
                Allocator::Llm(self.llm_allocator.ok_or(MissionError::NoLlmAllocator(choice))?)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MissionError {
    #[error(transparent)]
    Planning(#[from] PlanningError),
    #[error(transparent)]
    Allocation(#[from] AllocationError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("operation not valid in phase {0}")]
    WrongPhase(Phase),
    #[error("allocator {0} is not configured")]
    NoLlmAllocator(AllocatorChoice),
    #[error("{0}")]
    Aborted(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ResultError {
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("stale result for task {task} ({status})")]
    StaleResult { task: String, status: TaskStatus },
}

/// Messages the mission wants delivered to workers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    Execute {
        robot: String,
        task_id: String,
        description: String,
        attempt: u32,
        context: Vec<String>,
    },
    Cancel {
        robot: String,
        task_id: String,
    },
}

impl Command {
    pub fn robot(&self) -> &str {
        match self {
            Command::Execute { robot, .. } | Command::Cancel { robot, .. } => robot,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TaskOutcome {
    Succeeded,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Effect {
    Completed,
    Redispatch(Command),
    TriggerReplan(String),
}

/// Inputs to the mission state machine from dispatchers and workers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MissionEvent {
    Started {
        robot: String,
        task_id: String,
    },
    Finished {
        robot: String,
        task_id: String,
        outcome: TaskOutcome,
    },
    DispatchFailed {
        robot: String,
        task_id: String,
        reason: String,
    },
    ReplanRequest {
        robot: String,
        reason: String,
        statements: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissionState {
    pub id: String,
    pub goals: Vec<Goal>,
    pub strategy: Strategy,
    pub allocator: AllocatorChoice,
    /// Every task the mission has planned. Discarded tasks stay with status
    /// cancelled so the trace can always be checked against the plan.
    pub plan: Plan,
    pub allocation: Allocation,
    pub trace: ExecutionTrace,
    pub phase: Phase,
    pub phase_log: Vec<Phase>,
    /// Number of replans performed.
    pub round: u32,
    /// Task ids of the latest planning round.
    pub current: BTreeSet<String>,
    pub fruitless_replans: u32,
    successes_at_replan: usize,
    /// (normalized description, robot) pairs that exhausted their retries.
    pub avoid: Vec<(String, String)>,
    pub diagnostic: Option<String>,
}

fn goal_label(task: &Task) -> Option<&str> {
    task.goal_id.as_deref()
}

impl MissionState {
    pub fn new(id: impl Into<String>, goals: Vec<Goal>, strategy: Strategy, allocator: AllocatorChoice) -> Self {
        MissionState {
            id: id.into(),
            goals,
            strategy,
            allocator,
            plan: Plan::new("plan", strategy),
            allocation: Allocation::empty(allocator.method()),
            trace: ExecutionTrace::new(),
            phase: Phase::Planning,
            phase_log: vec![Phase::Planning],
            round: 0,
            current: BTreeSet::new(),
            fruitless_replans: 0,
            successes_at_replan: 0,
            avoid: Vec::new(),
            diagnostic: None,
        }
    }

    /// A mission that starts from an already planned and allocated plan.
    pub fn from_plan(
        id: impl Into<String>,
        goals: Vec<Goal>,
        mut plan: Plan,
        allocation: Allocation,
        allocator: AllocatorChoice,
    ) -> Self {
        let strategy = match plan.strategy {
            Strategy::Manual => Strategy::PerGoal,
            s => s,
        };
        crate::allocation::apply_allocation(&mut plan, &allocation);
        let mut state = MissionState::new(id, goals, strategy, allocator);
        state.current = plan.tasks.keys().cloned().collect();
        state.plan = plan;
        state.allocation = allocation;
        state.set_phase(Phase::Allocating);
        state.set_phase(Phase::Executing);
        state
    }

    fn set_phase(&mut self, next: Phase) {
        if self.phase == next {
            return;
        }
        debug_assert!(self.phase.can_transition_to(next), "{} -> {}", self.phase, next);
        debug!(mission = %self.id, from = %self.phase, to = %next, "phase");
        self.phase = next;
        self.phase_log.push(next);
    }

    pub fn abort(&mut self, reason: impl Into<String>) {
        let reason = reason.into();
        warn!(mission = %self.id, %reason, "mission aborted");
        self.diagnostic = Some(reason);
        if !self.phase.is_finished() {
            self.phase_log.push(Phase::Aborted);
            self.phase = Phase::Aborted;
        }
    }

    /// Planning then allocation of the mission's goals.
    pub fn plan_and_allocate(&mut self, ctx: &MissionContext<'_>, world: &[String]) -> Result<(), MissionError> {
        if self.phase != Phase::Planning {
            return Err(MissionError::WrongPhase(self.phase));
        }
        match self.plan_round(ctx, world, "") {
            Ok(()) => Ok(()),
            Err(e) => {
                self.abort(e.to_string());
                Err(e)
            }
        }
    }

    fn plan_round(&mut self, ctx: &MissionContext<'_>, world: &[String], prefix: &str) -> Result<(), MissionError> {
        let goals: Vec<Goal> = if self.round == 0 {
            self.goals.clone()
        } else {
            self.unmet_goals()
        };
        let caps = fleet_capabilities(ctx.robots);
        let fresh = build_plan(self.strategy, &goals, world, &caps, ctx.planner)?;
        let (mut fresh, externals) = self.prefix_and_prune(fresh, prefix)?;
        annotate_capabilities(&mut fresh, ctx.lexicon);
        self.set_phase(Phase::Allocating);

        let allocator = ctx.allocator(self.allocator)?;
        let allocation = allocate_plan(&fresh, ctx.robots, &allocator, world, &self.avoid)?;
        for w in &allocation.warnings {
            warn!(mission = %self.id, "{w}");
        }

        self.current = fresh.tasks.keys().cloned().collect();
        for mut task in fresh.tasks.into_values() {
            if let Some(extra) = externals.get(&task.id) {
                task.depends_on.extend(extra.iter().cloned());
            }
            task.assigned_robot = allocation.assignments.get(&task.id).cloned();
            task.status = TaskStatus::Pending;
            task.attempts = 0;
            self.plan.tasks.insert(task.id.clone(), task);
        }
        self.allocation.assignments.extend(allocation.assignments);
        self.allocation.method = allocation.method;
        self.allocation.feasible = allocation.feasible;
        self.allocation.warnings.extend(allocation.warnings);
        if self.round == 0 {
            self.plan.id = fresh.id;
        }
        self.set_phase(Phase::Executing);
        Ok(())
    }
}

impl MissionState {
    /// Goals with some latest-round task that has not succeeded. Tasks
    /// without a goal tag count against every goal.
    pub fn unmet_goals(&self) -> Vec<Goal> {
        let open: Vec<&Task> = self
            .current
            .iter()
            .filter_map(|id| self.plan.get(id))
            .filter(|t| t.status != TaskStatus::Succeeded)
            .collect();
        let untagged_open = open.iter().any(|t| goal_label(t).is_none());
        self.goals
            .iter()
            .filter(|g| untagged_open || open.iter().any(|t| goal_label(t) == Some(g.id.as_str())))
            .cloned()
            .collect()
    }
}

impl MissionState {
    /// Robots currently holding a task.
    fn busy_robots(&self) -> BTreeSet<&str> {
        self.plan
            .tasks
            .values()
            .filter(|t| t.status.is_active())
            .filter_map(|t| t.assigned_robot.as_deref())
            .collect()
    }

    /// Tasks whose dependencies have all succeeded and whose robot is free,
    /// at most one per robot, by task id.
    pub fn ready_set(&self) -> Vec<(String, String)> {
        if self.phase != Phase::Executing {
            return Vec::new();
        }
        let mut busy = self.busy_robots();
        let mut out = Vec::new();
        for task in self.plan.tasks.values() {
            if !matches!(task.status, TaskStatus::Pending | TaskStatus::Ready) {
                continue;
            }
            let Some(robot) = task.assigned_robot.as_deref() else { continue };
            if busy.contains(robot) {
                continue;
            }
            let deps_done = task
                .depends_on
                .iter()
                .all(|d| self.plan.get(d).is_some_and(|t| t.status == TaskStatus::Succeeded));
            if deps_done {
                busy.insert(robot);
                out.push((task.id.clone(), robot.to_string()));
            }
        }
        out
    }

    fn all_settled(&self) -> bool {
        self.plan.tasks.values().all(|t| t.status.is_terminal())
    }

    fn dispatch(&mut self, now: SimTime, task_id: &str, world: &[String]) -> Command {
        let task = self.plan.tasks.get_mut(task_id).expect("dispatching a known task");
        task.status = TaskStatus::Dispatched;
        task.attempts += 1;
        let robot = task.assigned_robot.clone().unwrap_or_default();
        let cmd = Command::Execute {
            robot: robot.clone(),
            task_id: task.id.clone(),
            description: task.description.clone(),
            attempt: task.attempts,
            context: world.to_vec(),
        };
        self.trace.record(now, task_id, &robot, EventKind::Dispatched);
        cmd
    }

    /// Dispatches every ready task, and finishes the mission once every
    /// task has settled.
    pub fn advance(&mut self, now: SimTime, world: &[String]) -> Vec<Command> {
        if self.phase != Phase::Executing {
            return Vec::new();
        }
        if self.all_settled() {
            info!(mission = %self.id, "mission done");
            self.set_phase(Phase::Done);
            return Vec::new();
        }
        let ready = self.ready_set();
        ready.into_iter().map(|(id, _)| self.dispatch(now, &id, world)).collect()
    }

    fn task_for_result(&mut self, task_id: &str) -> Result<&mut Task, ResultError> {
        let task = self
            .plan
            .tasks
            .get_mut(task_id)
            .ok_or_else(|| ResultError::UnknownTask(task_id.to_string()))?;
        if !task.status.is_active() {
            return Err(ResultError::StaleResult {
                task: task_id.to_string(),
                status: task.status,
            });
        }
        Ok(task)
    }

    pub fn on_task_started(&mut self, now: SimTime, task_id: &str) -> Result<(), ResultError> {
        let task = self.task_for_result(task_id)?;
        if task.status == TaskStatus::Running {
            return Ok(());
        }
        task.status = TaskStatus::Running;
        let robot = task.assigned_robot.clone().unwrap_or_default();
        self.trace.record(now, task_id, &robot, EventKind::Started);
        Ok(())
    }

    /// Applies a terminal worker report. Failures below the attempt limit
    /// re-dispatch to the same robot; the last allowed failure moves the
    /// mission to replanning.
    pub fn on_task_result(
        &mut self,
        now: SimTime,
        task_id: &str,
        outcome: TaskOutcome,
        world: &[String],
    ) -> Result<Effect, ResultError> {
        let task = self.task_for_result(task_id)?;
        let robot = task.assigned_robot.clone().unwrap_or_default();
        if task.status == TaskStatus::Dispatched {
            task.status = TaskStatus::Running;
            self.trace.record(now, task_id, &robot, EventKind::Started);
        }
        self.finish(now, task_id, &robot, outcome, world)
    }

    /// A dispatch that never reached its robot counts as a failed attempt.
    pub fn on_dispatch_error(&mut self, now: SimTime, task_id: &str, reason: &str, world: &[String]) -> Result<Effect, ResultError> {
        let task = self.task_for_result(task_id)?;
        let robot = task.assigned_robot.clone().unwrap_or_default();
        warn!(task = task_id, %robot, reason, "dispatch failed");
        self.finish(now, task_id, &robot, TaskOutcome::Failed(reason.to_string()), world)
    }

    fn finish(&mut self, now: SimTime, task_id: &str, robot: &str, outcome: TaskOutcome, world: &[String]) -> Result<Effect, ResultError> {
        match outcome {
            TaskOutcome::Succeeded => {
                self.plan.tasks.get_mut(task_id).unwrap().status = TaskStatus::Succeeded;
                self.trace.record(now, task_id, robot, EventKind::Succeeded);
                Ok(Effect::Completed)
            }
            TaskOutcome::Failed(detail) => {
                let task = self.plan.tasks.get_mut(task_id).unwrap();
                task.status = TaskStatus::Failed;
                let attempts = task.attempts;
                let description = normalize_text(&task.description);
                self.trace.record(now, task_id, robot, EventKind::Failed);
                if attempts < MAX_ATTEMPTS {
                    debug!(task = task_id, attempts, %detail, "retrying");
                    Ok(Effect::Redispatch(self.dispatch(now, task_id, world)))
                } else {
                    info!(task = task_id, %robot, "retries exhausted, replanning");
                    self.trace.record(now, task_id, robot, EventKind::ReplanRequested);
                    let pair = (description, robot.to_string());
                    if !self.avoid.contains(&pair) {
                        self.avoid.push(pair);
                    }
                    if self.phase == Phase::Executing {
                        self.set_phase(Phase::Replanning);
                    }
                    Ok(Effect::TriggerReplan(task_id.to_string()))
                }
            }
        }
    }

    /// A robot asked for a replan. Ignored unless the mission is executing.
    pub fn request_replan(&mut self, now: SimTime, robot: &str, reason: &str) -> bool {
        if self.phase != Phase::Executing {
            return false;
        }
        let last_task = self
            .trace
            .events
            .iter()
            .rev()
            .find(|e| e.robot == robot)
            .map(|e| e.task_id.clone())
            .unwrap_or_default();
        info!(mission = %self.id, %robot, reason, "replan requested");
        self.trace.record(now, &last_task, robot, EventKind::ReplanRequested);
        self.set_phase(Phase::Replanning);
        true
    }

    /// Statements summarizing execution so far, for the planner.
    pub fn progress_statements(&self) -> Vec<String> {
        let progress = plan_progress(&self.plan);
        let mut out: Vec<String> = self
            .plan
            .tasks
            .values()
            .filter(|t| t.status == TaskStatus::Succeeded)
            .map(|t| format!("Completed task: {}", t.description))
            .collect();
        let live = self.plan.len() - progress.count(TaskStatus::Cancelled);
        out.push(format!(
            "Plan progress: {} of {} tasks succeeded",
            progress.count(TaskStatus::Succeeded),
            live
        ));
        out
    }

    /// Freezes succeeded tasks, cancels or discards everything else, and
    /// plans the unmet goals again. Returns cancel commands for tasks that
    /// were still held by robots.
    pub fn replan(&mut self, ctx: &MissionContext<'_>, world: &[String], now: SimTime) -> Result<Vec<Command>, MissionError> {
        if self.phase != Phase::Replanning {
            return Err(MissionError::WrongPhase(self.phase));
        }
        let unmet = self.unmet_goals();
        let successes = self.plan.tasks.values().filter(|t| t.status == TaskStatus::Succeeded).count();
        if self.round > 0 && successes == self.successes_at_replan {
            self.fruitless_replans += 1;
        } else {
            self.fruitless_replans = 0;
        }
        self.successes_at_replan = successes;

        let mut commands = Vec::new();
        for task in self.plan.tasks.values_mut() {
            if task.status.is_active() {
                let robot = task.assigned_robot.clone().unwrap_or_default();
                self.trace.record(now, &task.id, &robot, EventKind::Cancelled);
                commands.push(Command::Cancel {
                    robot,
                    task_id: task.id.clone(),
                });
            }
            if task.status != TaskStatus::Succeeded {
                task.status = TaskStatus::Cancelled;
            }
        }

        if unmet.is_empty() {
            info!(mission = %self.id, "all goals met at replan");
            self.set_phase(Phase::Done);
            return Ok(commands);
        }
        if self.fruitless_replans >= MAX_FRUITLESS_REPLANS {
            let reason = format!("{MAX_FRUITLESS_REPLANS} consecutive replans made no progress");
            self.abort(reason.clone());
            return Err(MissionError::Aborted(reason));
        }

        self.round += 1;
        self.set_phase(Phase::Planning);
        let mut context = world.to_vec();
        context.extend(self.progress_statements());
        let prefix = format!("r{}/", self.round);
        match self.plan_round(ctx, &context, &prefix) {
            Ok(()) => Ok(commands),
            Err(e) => {
                self.abort(e.to_string());
                Err(e)
            }
        }
    }

    /// Marks a restored mission for replanning: whatever was in flight when
    /// the previous process stopped is cancelled at the next replan.
    pub fn resume_after_restart(&mut self) {
        if matches!(self.phase, Phase::Executing) {
            self.set_phase(Phase::Replanning);
        } else if matches!(self.phase, Phase::Planning | Phase::Allocating) {
            self.abort("interrupted during planning");
        }
    }
}

impl MissionState {
    /// Namespaces a fresh plan's ids and drops tasks that duplicate a frozen
    /// (succeeded) task, pointing their dependents at the frozen task.
    #[allow(clippy::type_complexity)]
    fn prefix_and_prune(&self, fresh: Plan, prefix: &str) -> Result<(Plan, BTreeMap<String, BTreeSet<String>>), MissionError> {
        let mut links: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        let frozen: BTreeMap<String, String> = self
            .plan
            .tasks
            .values()
            .filter(|t| t.status == TaskStatus::Succeeded)
            .map(|t| (normalize_text(&t.description), t.id.clone()))
            .rev()
            .collect();
        let mut rename: BTreeMap<String, String> = BTreeMap::new();
        let mut pruned: BTreeMap<String, String> = BTreeMap::new();
        for task in fresh.tasks.values() {
            match frozen.get(&normalize_text(&task.description)) {
                Some(old) if self.round > 0 => {
                    pruned.insert(task.id.clone(), old.clone());
                }
                _ => {
                    rename.insert(task.id.clone(), format!("{prefix}{}", task.id));
                }
            }
        }
        let mut out = Plan::new(fresh.id.clone(), fresh.strategy);
        for task in fresh.tasks.values() {
            let Some(new_id) = rename.get(&task.id) else { continue };
            let mut t = task.clone();
            t.id = new_id.clone();
            t.depends_on.clear();
            for d in &task.depends_on {
                if let Some(r) = rename.get(d) {
                    t.depends_on.insert(r.clone());
                } else if let Some(old) = pruned.get(d) {
                    links.entry(new_id.clone()).or_default().insert(old.clone());
                }
            }
            out.insert(t)?;
        }
        if !pruned.is_empty() {
            debug!(mission = %self.id, pruned = ?pruned.keys().collect::<Vec<_>>(), "dropped tasks already done");
        }
        Ok((out, links))
    }
}

/// Applies one worker or dispatcher event. Robot statements are appended
/// to `world` before a replan is requested.
pub fn apply_event(state: &mut MissionState, world: &mut WorldState, now: SimTime, event: MissionEvent) -> Vec<Command> {
    let texts = world.texts();
    let result = match event {
        MissionEvent::Started { task_id, .. } => state.on_task_started(now, &task_id).map(|_| None),
        MissionEvent::Finished { task_id, outcome, .. } => state.on_task_result(now, &task_id, outcome, &texts).map(Some),
        MissionEvent::DispatchFailed { task_id, reason, .. } => {
            state.on_dispatch_error(now, &task_id, &reason, &texts).map(Some)
        }
        MissionEvent::ReplanRequest {
            robot,
            reason,
            statements,
        } => {
            for s in &statements {
                if let Err(e) = world.add(s, StatementSource::Robot, now.as_millis()) {
                    warn!(%robot, "ignoring statement: {e}");
                }
            }
            state.request_replan(now, &robot, &reason);
            Ok(None)
        }
    };
    match result {
        Ok(Some(Effect::Redispatch(cmd))) => vec![cmd],
        Ok(_) => Vec::new(),
        Err(e) => {
            debug!("{e}");
            Vec::new()
        }
    }
}

/// Runs replans and dispatches until the mission needs outside input.
/// `send` delivers commands; an error from it counts as a failed dispatch.
pub fn pump<F>(state: &mut MissionState, ctx: &MissionContext<'_>, world: &WorldState, now: SimTime, mut send: F)
where
    F: FnMut(&Command) -> Result<(), String>,
{
    let texts = world.texts();
    loop {
        let mut queue = Vec::new();
        if state.phase == Phase::Replanning {
            match state.replan(ctx, &texts, now) {
                Ok(cmds) => queue.extend(cmds),
                Err(e) => debug!("replan failed: {e}"),
            }
        }
        queue.extend(state.advance(now, &texts));
        if queue.is_empty() {
            if state.phase == Phase::Replanning {
                continue;
            }
            return;
        }
        let mut i = 0;
        while i < queue.len() {
            let cmd = queue[i].clone();
            i += 1;
            if let Err(reason) = send(&cmd) {
                if let Command::Execute { task_id, .. } = &cmd {
                    if let Ok(Effect::Redispatch(next)) = state.on_dispatch_error(now, task_id, &reason, &texts) {
                        queue.push(next);
                    }
                }
            }
        }
        if state.phase.is_finished() {
            return;
        }
    }
}
