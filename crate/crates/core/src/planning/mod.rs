//! Plan construction from goals and world state.
//!
//! Three strategies share one code path: a backend is invoked (once per goal
//! for per-goal, once overall for big-dag and monolithic), its structured
//! reply is parsed into a [`Plan`], and parse failures are fed back to the
//! backend as repair prompts up to the backend's repair budget.

mod llm;
mod recipe;

pub use llm::{LlmPlanner, PromptTemplates};
pub use recipe::{RecipeBackend, RecipeBook, RecipeError, Rule, Subtask};

use std::collections::BTreeSet;

use serde::Deserialize;
use thiserror::Error;

use crate::llm::BackendError;
use crate::model::{merge_plans, normalize_id, validate_dag, Goal, ModelError, Plan, Strategy, Task};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanningError {
    #[error("no goals to plan for")]
    NoGoals,
    #[error("planner backend failed for goal {goal}: {cause}")]
    Backend { goal: String, cause: String },
    #[error("plan response rejected: {0}")]
    Parse(String),
    #[error("strategy {0} is not produced by a planner")]
    UnsupportedStrategy(Strategy),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanRequest {
    pub strategy: Strategy,
    pub goals: Vec<Goal>,
    pub world: Vec<String>,
    /// Union of registered robot capabilities, for prompt context.
    pub capabilities: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawPlanResponse {
    pub strategy: Strategy,
    pub payload: String,
}

/// One earlier reply and the diagnostics it produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Repair {
    pub previous: String,
    pub diagnostics: String,
}

pub trait PlanBackend: Send + Sync {
    fn invoke(&self, request: &PlanRequest, repairs: &[Repair]) -> Result<RawPlanResponse, BackendError>;

    /// How many repair re-prompts to issue before giving up.
    fn max_repairs(&self) -> usize {
        0
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PayloadDoc {
    Wrapped { tasks: Vec<PayloadTask> },
    Bare(Vec<PayloadTask>),
}

#[derive(Deserialize)]
struct PayloadTask {
    id: String,
    description: String,
    #[serde(default)]
    depends_on: Vec<String>,
    #[serde(default, alias = "capabilities")]
    required_capabilities: Vec<String>,
    #[serde(default)]
    goal_id: Option<String>,
}

/// Parses a backend reply into a validated plan. References to undefined
/// task ids and cycles are rejected with the offending ids.
pub fn parse_plan_response(raw: &RawPlanResponse) -> Result<Plan, PlanningError> {
    let text = raw.payload.as_str();
    let body = match (text.find('['), text.find('{')) {
        (Some(a), Some(o)) if a < o => text.rfind(']').filter(|&e| e > a).map(|e| &text[a..=e]),
        (Some(a), None) => text.rfind(']').filter(|&e| e > a).map(|e| &text[a..=e]),
        _ => crate::llm::extract_json_object(text),
    }
    .ok_or_else(|| PlanningError::Parse("response contains no JSON task list".into()))?;
    let doc: PayloadDoc =
        serde_json::from_str(body).map_err(|e| PlanningError::Parse(format!("schema violation: {e}")))?;
    let items = match doc {
        PayloadDoc::Wrapped { tasks } | PayloadDoc::Bare(tasks) => tasks,
    };

    let mut plan = Plan::new("plan", raw.strategy);
    for item in items {
        let id = normalize_id(&item.id);
        if id.is_empty() {
            return Err(PlanningError::Parse("task with empty id".into()));
        }
        if item.description.trim().is_empty() {
            return Err(PlanningError::Parse(format!("task {id} has an empty description")));
        }
        let mut task = Task::new(&id, item.description.trim())
            .after(item.depends_on.iter())
            .requiring(item.required_capabilities.into_iter().filter(|c| !c.trim().is_empty()));
        task.goal_id = item.goal_id.filter(|g| !g.trim().is_empty());
        plan.insert(task)
            .map_err(|e| PlanningError::Parse(e.to_string()))?;
    }
    validate_dag(&plan).map_err(|e| match e {
        ModelError::DanglingDependency { task, missing } => {
            PlanningError::Parse(format!("task {task} depends on undefined task id {missing}"))
        }
        other => PlanningError::Parse(other.to_string()),
    })?;
    Ok(plan)
}

/// Invokes the backend and parses its reply, re-prompting with the parse
/// diagnostics while the repair budget lasts.
pub fn request_plan(backend: &dyn PlanBackend, request: &PlanRequest) -> Result<Plan, PlanningError> {
    let goal_label = request.goals.iter().map(|g| g.id.as_str()).collect::<Vec<_>>().join(",");
    let mut repairs = Vec::new();
    loop {
        let raw = backend.invoke(request, &repairs).map_err(|e| PlanningError::Backend {
            goal: goal_label.clone(),
            cause: e.to_string(),
        })?;
        match parse_plan_response(&raw) {
            Ok(plan) => return Ok(plan),
            Err(PlanningError::Parse(diag)) if repairs.len() < backend.max_repairs() => {
                repairs.push(Repair {
                    previous: raw.payload,
                    diagnostics: diag,
                });
            }
            Err(e) => return Err(e),
        }
    }
}

fn request(strategy: Strategy, goals: &[Goal], world: &[String], capabilities: &[String]) -> PlanRequest {
    PlanRequest {
        strategy,
        goals: goals.to_vec(),
        world: world.to_vec(),
        capabilities: capabilities.to_vec(),
    }
}

/// One backend call per goal (run concurrently), combined by disjoint union.
/// Fails as a whole if any goal fails.
pub fn plan_per_goal(
    goals: &[Goal],
    world: &[String],
    capabilities: &[String],
    backend: &dyn PlanBackend,
) -> Result<Plan, PlanningError> {
    if goals.is_empty() {
        return Err(PlanningError::NoGoals);
    }
    let results: Vec<Result<Plan, PlanningError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = goals
            .iter()
            .map(|goal| {
                let req = request(Strategy::PerGoal, std::slice::from_ref(goal), world, capabilities);
                scope.spawn(move || request_plan(backend, &req))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("planner thread panicked")).collect()
    });
    let mut plans = Vec::with_capacity(goals.len());
    for (goal, result) in goals.iter().zip(results) {
        let mut plan = result.map_err(|e| match e {
            PlanningError::Parse(d) => PlanningError::Backend {
                goal: goal.id.clone(),
                cause: d,
            },
            other => other,
        })?;
        plan.id = goal.id.clone();
        for task in plan.tasks.values_mut() {
            task.goal_id = Some(goal.id.clone());
        }
        plans.push(plan);
    }
    let mut merged = merge_plans(&plans)?;
    merged.strategy = Strategy::PerGoal;
    Ok(merged)
}

/// A single backend call covering all goals at once.
pub fn plan_big_dag(
    goals: &[Goal],
    world: &[String],
    capabilities: &[String],
    backend: &dyn PlanBackend,
) -> Result<Plan, PlanningError> {
    if goals.is_empty() {
        return Err(PlanningError::NoGoals);
    }
    let mut plan = request_plan(backend, &request(Strategy::BigDag, goals, world, capabilities))?;
    plan.strategy = Strategy::BigDag;
    Ok(plan)
}

/// A single backend call with goals and world state concatenated, answered
/// by a flat task list.
pub fn plan_monolithic(
    goals: &[Goal],
    world: &[String],
    capabilities: &[String],
    backend: &dyn PlanBackend,
) -> Result<Plan, PlanningError> {
    if goals.is_empty() {
        return Err(PlanningError::NoGoals);
    }
    let mut plan = request_plan(backend, &request(Strategy::Monolithic, goals, world, capabilities))?;
    plan.strategy = Strategy::Monolithic;
    Ok(plan)
}

pub fn build_plan(
    strategy: Strategy,
    goals: &[Goal],
    world: &[String],
    capabilities: &[String],
    backend: &dyn PlanBackend,
) -> Result<Plan, PlanningError> {
    match strategy {
        Strategy::PerGoal => plan_per_goal(goals, world, capabilities, backend),
        Strategy::BigDag => plan_big_dag(goals, world, capabilities, backend),
        Strategy::Monolithic => plan_monolithic(goals, world, capabilities, backend),
        Strategy::Manual => Err(PlanningError::UnsupportedStrategy(strategy)),
    }
}

/// Union of capability strings across robots, sorted.
pub fn fleet_capabilities(robots: &[crate::model::RobotSpec]) -> Vec<String> {
    robots
        .iter()
        .flat_map(|r| r.capabilities.iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(payload: &str) -> RawPlanResponse {
        RawPlanResponse {
            strategy: Strategy::BigDag,
            payload: payload.to_string(),
        }
    }

    #[test]
    fn well_formed_payload() {
        let plan = parse_plan_response(&raw(
            r#"{"tasks": [
                {"id": "Go Kitchen", "description": "Go to the kitchen", "capabilities": ["navigation"]},
                {"id": "pick", "description": "Pick up the cup", "depends_on": ["go kitchen"]},
                {"id": "place", "description": "Place the cup", "depends_on": ["pick"], "goal_id": "g1"}
            ]}"#,
        ))
        .unwrap();
        assert_eq!(plan.len(), 3);
        assert!(plan.tasks["pick"].depends_on.contains("go-kitchen"));
        assert!(plan.tasks["go-kitchen"].required_capabilities.contains("navigation"));
        assert_eq!(plan.tasks["place"].goal_id.as_deref(), Some("g1"));
        assert_eq!(plan.strategy, Strategy::BigDag);
    }

    #[test]
    fn bare_list_and_fences() {
        let plan = parse_plan_response(&raw("Here:\n```json\n[{\"id\":\"a\",\"description\":\"x\"}]\n```")).unwrap();
        assert_eq!(plan.len(), 1);
    }

    #[test]
    fn undefined_reference_is_named() {
        let err = parse_plan_response(&raw(r#"{"tasks":[{"id":"a","description":"x","depends_on":["ghost"]}]}"#))
            .unwrap_err();
        assert!(matches!(err, PlanningError::Parse(d) if d.contains("ghost")));
    }

    #[test]
    fn cycle_is_listed() {
        let err = parse_plan_response(&raw(
            r#"{"tasks":[{"id":"a","description":"x","depends_on":["b"]},{"id":"b","description":"y","depends_on":["a"]}]}"#,
        ))
        .unwrap_err();
        assert!(matches!(err, PlanningError::Parse(d) if d.contains("a -> b")));
    }

    #[test]
    fn schema_violations() {
        assert!(parse_plan_response(&raw("nothing here")).is_err());
        assert!(parse_plan_response(&raw(r#"{"tasks":[{"id":"a"}]}"#)).is_err());
        assert!(parse_plan_response(&raw(r#"{"tasks":[{"id":"a","description":" "}]}"#)).is_err());
        assert!(parse_plan_response(&raw(
            r#"{"tasks":[{"id":"a","description":"x"},{"id":"A","description":"y"}]}"#
        ))
        .is_err());
    }
}
