//! Core domain types shared by planning, allocation, scheduling and the
//! fleet service.

pub(crate) mod dag;
mod robot;

pub use dag::{merge_plans, plan_progress, topo_order, validate_dag, Progress};
pub use robot::{Deployment, DeploymentMode, Endpoint, RobotSpec, SchemaError};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Total attempts a task gets before the mission asks for a replan.
pub const MAX_ATTEMPTS: u32 = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("task {task} depends on unknown task {missing}")]
    DanglingDependency { task: String, missing: String },
    #[error("dependency cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("duplicate task id {0}")]
    DuplicateTask(String),
    #[error("task {task}: illegal status transition {from} -> {to}")]
    IllegalTransition {
        task: String,
        from: TaskStatus,
        to: TaskStatus,
    },
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },
}

impl ModelError {
    pub(crate) fn invalid(field: &str, reason: impl Into<String>) -> Self {
        ModelError::Invalid {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}

/// Task ids are lowercase with whitespace runs replaced by single hyphens.
pub fn normalize_id(raw: &str) -> String {
    raw.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join("-")
}

/// Collapses whitespace runs; used as the dedup key for task descriptions.
pub fn normalize_text(raw: &str) -> String {
    raw.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn now_millis() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Goal {
    pub id: String,
    pub text: String,
}

impl Goal {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self, ModelError> {
        let goal = Goal {
            id: id.into(),
            text: text.into(),
        };
        if goal.id.trim().is_empty() {
            return Err(ModelError::invalid("goal.id", "must be nonempty"));
        }
        if goal.text.trim().is_empty() {
            return Err(ModelError::invalid("goal.text", "must be nonempty"));
        }
        Ok(goal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Pending,
    Ready,
    Dispatched,
    Running,
    Succeeded,
    Failed,
    Cancelled,
}

impl TaskStatus {
    pub const ALL: [TaskStatus; 7] = [
        TaskStatus::Pending,
        TaskStatus::Ready,
        TaskStatus::Dispatched,
        TaskStatus::Running,
        TaskStatus::Succeeded,
        TaskStatus::Failed,
        TaskStatus::Cancelled,
    ];

    /// Succeeded and cancelled tasks never change status again.
    pub fn is_terminal(self) -> bool {
        matches!(self, TaskStatus::Succeeded | TaskStatus::Cancelled)
    }

    /// True while the task occupies its robot.
    pub fn is_active(self) -> bool {
        matches!(self, TaskStatus::Dispatched | TaskStatus::Running)
    }

    pub fn can_transition_to(self, next: TaskStatus) -> bool {
        use TaskStatus::*;
        match (self, next) {
            (a, b) if a == b => true,
            (Succeeded | Cancelled, _) => false,
            (Pending, Ready | Dispatched | Cancelled) => true,
            (Ready, Pending | Dispatched | Cancelled) => true,
            (Dispatched, Running | Succeeded | Failed | Cancelled) => true,
            (Running, Succeeded | Failed | Cancelled) => true,
            (Failed, Dispatched | Cancelled) => true,
            _ => false,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskStatus::Pending => "pending",
            TaskStatus::Ready => "ready",
            TaskStatus::Dispatched => "dispatched",
            TaskStatus::Running => "running",
            TaskStatus::Succeeded => "succeeded",
            TaskStatus::Failed => "failed",
            TaskStatus::Cancelled => "cancelled",
        }
    }
}

impl fmt::Display for TaskStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub description: String,
    #[serde(default)]
    pub depends_on: BTreeSet<String>,
    #[serde(default)]
    pub required_capabilities: BTreeSet<String>,
    #[serde(default)]
    pub goal_id: Option<String>,
    #[serde(default = "default_status")]
    pub status: TaskStatus,
    #[serde(default)]
    pub attempts: u32,
    #[serde(default)]
    pub assigned_robot: Option<String>,
}

fn default_status() -> TaskStatus {
    TaskStatus::Pending
}

impl Task {
    pub fn new(id: &str, description: impl Into<String>) -> Self {
        Task {
            id: normalize_id(id),
            description: description.into(),
            depends_on: BTreeSet::new(),
            required_capabilities: BTreeSet::new(),
            goal_id: None,
            status: TaskStatus::Pending,
            attempts: 0,
            assigned_robot: None,
        }
    }

    pub fn after<I, S>(mut self, deps: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        self.depends_on
            .extend(deps.into_iter().map(|d| normalize_id(d.as_ref())));
        self
    }

    pub fn requiring<I, S>(mut self, caps: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.required_capabilities
            .extend(caps.into_iter().map(Into::into));
        self
    }

    pub fn for_goal(mut self, goal_id: impl Into<String>) -> Self {
        self.goal_id = Some(goal_id.into());
        self
    }

    pub fn set_status(&mut self, next: TaskStatus) -> Result<(), ModelError> {
        if !self.status.can_transition_to(next) {
            return Err(ModelError::IllegalTransition {
                task: self.id.clone(),
                from: self.status,
                to: next,
            });
        }
        self.status = next;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    PerGoal,
    BigDag,
    Monolithic,
    Manual,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::PerGoal => "per-goal",
            Strategy::BigDag => "big-dag",
            Strategy::Monolithic => "monolithic",
            Strategy::Manual => "manual",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Strategy {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('_', "-").as_str() {
            "per-goal" => Ok(Strategy::PerGoal),
            "big-dag" => Ok(Strategy::BigDag),
            "monolithic" => Ok(Strategy::Monolithic),
            "manual" => Ok(Strategy::Manual),
            other => Err(ModelError::invalid("strategy", format!("unknown strategy {other:?}"))),
        }
    }
}

/// A task DAG. Tasks are keyed by id so iteration (and serialization) is
/// always in id order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plan {
    pub id: String,
    pub strategy: Strategy,
    pub tasks: BTreeMap<String, Task>,
}

#[derive(Serialize, Deserialize)]
struct PlanDoc {
    id: String,
    strategy: Strategy,
    tasks: Vec<Task>,
}

impl Serialize for Plan {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        PlanDoc {
            id: self.id.clone(),
            strategy: self.strategy,
            tasks: self.tasks.values().cloned().collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Plan {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let doc = PlanDoc::deserialize(deserializer)?;
        let mut plan = Plan::new(doc.id, doc.strategy);
        for task in doc.tasks {
            plan.insert(task).map_err(serde::de::Error::custom)?;
        }
        Ok(plan)
    }
}

impl Plan {
    pub fn new(id: impl Into<String>, strategy: Strategy) -> Self {
        Plan {
            id: id.into(),
            strategy,
            tasks: BTreeMap::new(),
        }
    }

    pub fn with_tasks<I: IntoIterator<Item = Task>>(
        id: impl Into<String>,
        strategy: Strategy,
        tasks: I,
    ) -> Result<Self, ModelError> {
        let mut plan = Plan::new(id, strategy);
        for task in tasks {
            plan.insert(task)?;
        }
        Ok(plan)
    }

    pub fn insert(&mut self, task: Task) -> Result<(), ModelError> {
        if self.tasks.contains_key(&task.id) {
            return Err(ModelError::DuplicateTask(task.id));
        }
        self.tasks.insert(task.id.clone(), task);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Task> {
        self.tasks.get(id)
    }

    /// Dependency edges `(before, after)`, sorted.
    pub fn edges(&self) -> Vec<(String, String)> {
        let mut edges: Vec<_> = self
            .tasks
            .values()
            .flat_map(|t| t.depends_on.iter().map(move |d| (d.clone(), t.id.clone())))
            .collect();
        edges.sort();
        edges
    }

    /// Canonical JSON encoding (tasks in id order, fields in declaration order).
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatementSource {
    Operator,
    Robot,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Statement {
    pub id: String,
    pub text: String,
    pub added_at: u64,
    pub source: StatementSource,
}

/// Append-only list of declarative statements about the environment.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldState {
    pub statements: Vec<Statement>,
    #[serde(default)]
    next_id: u64,
}

impl WorldState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        text: &str,
        source: StatementSource,
        added_at: u64,
    ) -> Result<&Statement, ModelError> {
        let text = text.trim();
        if text.is_empty() {
            return Err(ModelError::invalid("statement.text", "must be nonempty"));
        }
        self.next_id += 1;
        self.statements.push(Statement {
            id: format!("w{}", self.next_id),
            text: text.to_string(),
            added_at,
            source,
        });
        Ok(self.statements.last().unwrap())
    }

    pub fn remove(&mut self, id: &str) -> Option<Statement> {
        let pos = self.statements.iter().position(|s| s.id == id)?;
        Some(self.statements.remove(pos))
    }

    pub fn texts(&self) -> Vec<String> {
        self.statements.iter().map(|s| s.text.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.statements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.statements.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationMethod {
    Milp,
    Llm,
    RoundRobin,
}

impl fmt::Display for AllocationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AllocationMethod::Milp => "milp",
            AllocationMethod::Llm => "llm",
            AllocationMethod::RoundRobin => "round-robin",
        })
    }
}

impl std::str::FromStr for AllocationMethod {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('_', "-").as_str() {
            "milp" | "lp" => Ok(AllocationMethod::Milp),
            "llm" | "llm-stub" => Ok(AllocationMethod::Llm),
            "round-robin" => Ok(AllocationMethod::RoundRobin),
            other => Err(ModelError::invalid("allocator", format!("unknown allocator {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    pub assignments: BTreeMap<String, String>,
    pub method: AllocationMethod,
    pub feasible: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl Allocation {
    pub fn empty(method: AllocationMethod) -> Self {
        Allocation {
            assignments: BTreeMap::new(),
            method,
            feasible: true,
            warnings: Vec::new(),
        }
    }

    pub fn robot_for(&self, task_id: &str) -> Option<&str> {
        self.assignments.get(task_id).map(String::as_str)
    }

    /// Number of tasks per robot, robots with no tasks included.
    pub fn loads(&self, robots: &[RobotSpec]) -> Vec<usize> {
        robots
            .iter()
            .map(|r| self.assignments.values().filter(|a| **a == r.name).count())
            .collect()
    }

    /// Checks the coverage invariant: every plan task appears exactly once
    /// and every robot named exists.
    pub fn check_covers(&self, plan: &Plan, robots: &[RobotSpec]) -> Result<(), ModelError> {
        for id in plan.tasks.keys() {
            if !self.assignments.contains_key(id) {
                return Err(ModelError::invalid("allocation", format!("task {id} unassigned")));
            }
        }
        for (task, robot) in &self.assignments {
            if !plan.tasks.contains_key(task) {
                return Err(ModelError::invalid("allocation", format!("unknown task {task}")));
            }
            if !robots.iter().any(|r| &r.name == robot) {
                return Err(ModelError::invalid("allocation", format!("unknown robot {robot}")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_normalized() {
        assert_eq!(normalize_id("Boil  Water"), "boil-water");
        assert_eq!(Task::new("Pick Up", "x").id, "pick-up");
        assert_eq!(normalize_text("  a \t b\n"), "a b");
    }

    #[test]
    fn terminal_states_do_not_regress() {
        for terminal in [TaskStatus::Succeeded, TaskStatus::Cancelled] {
            for next in TaskStatus::ALL {
                assert_eq!(terminal.can_transition_to(next), next == terminal);
            }
        }
        let mut t = Task::new("a", "a");
        t.set_status(TaskStatus::Dispatched).unwrap();
        t.set_status(TaskStatus::Running).unwrap();
        t.set_status(TaskStatus::Failed).unwrap();
        t.set_status(TaskStatus::Dispatched).unwrap();
        t.set_status(TaskStatus::Succeeded).unwrap();
        assert!(t.set_status(TaskStatus::Pending).is_err());
    }

    #[test]
    fn goal_requires_text() {
        assert!(Goal::new("g1", "  ").is_err());
        assert!(Goal::new("", "make tea").is_err());
        assert!(Goal::new("g1", "make tea").is_ok());
    }

    #[test]
    fn world_ids_stay_unique_after_removal() {
        let mut w = WorldState::new();
        w.add("the cups are in the kitchen", StatementSource::Operator, 1).unwrap();
        w.add("robot is in the hallway", StatementSource::Operator, 2).unwrap();
        w.remove("w2").unwrap();
        let s = w.add("door is open", StatementSource::Robot, 3).unwrap();
        assert_eq!(s.id, "w3");
        assert!(w.add(" ", StatementSource::Operator, 4).is_err());
    }

    #[test]
    fn plan_serialization_is_canonical() {
        let plan = Plan::with_tasks(
            "p",
            Strategy::BigDag,
            [Task::new("b", "second").after(["a"]), Task::new("a", "first")],
        )
        .unwrap();
        let json = serde_json::to_string(&plan).unwrap();
        assert_eq!(
            json,
            r#"{"id":"p","strategy":"big_dag","tasks":[{"id":"a","description":"first","depends_on":[],"required_capabilities":[],"goal_id":null,"status":"pending","attempts":0,"assigned_robot":null},{"id":"b","description":"second","depends_on":["a"],"required_capabilities":[],"goal_id":null,"status":"pending","attempts":0,"assigned_robot":null}]}"#
        );
        let back: Plan = serde_json::from_str(&json).unwrap();
        assert_eq!(back, plan);
    }
}
