use std::sync::Arc;

use super::{PlanBackend, PlanRequest, RawPlanResponse, Repair};
use crate::llm::{render_template, repair_message, BackendError, ChatBackend, ChatMessage, DEFAULT_MAX_REPAIRS};
use crate::model::Strategy;

pub const DEFAULT_PER_GOAL_PROMPT: &str = include_str!("../../rules/prompts/plan_per_goal.txt");

pub const DEFAULT_BIG_DAG_PROMPT: &str = include_str!("../../rules/prompts/plan_big_dag.txt");

pub const DEFAULT_MONOLITHIC_PROMPT: &str = include_str!("../../rules/prompts/plan_monolithic.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub per_goal: String,
    pub big_dag: String,
    pub monolithic: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            per_goal: DEFAULT_PER_GOAL_PROMPT.into(),
            big_dag: DEFAULT_BIG_DAG_PROMPT.into(),
            monolithic: DEFAULT_MONOLITHIC_PROMPT.into(),
        }
    }
}

impl PromptTemplates {
    fn for_strategy(&self, strategy: Strategy) -> Option<&str> {
        match strategy {
            Strategy::PerGoal => Some(&self.per_goal),
            Strategy::BigDag => Some(&self.big_dag),
            Strategy::Monolithic => Some(&self.monolithic),
            Strategy::Manual => None,
        }
    }
}

/// Planner backend that prompts a chat model.
pub struct LlmPlanner {
    pub backend: Arc<dyn ChatBackend>,
    pub templates: PromptTemplates,
    pub max_repairs: usize,
}

impl LlmPlanner {
    pub fn new(backend: Arc<dyn ChatBackend>, templates: PromptTemplates) -> Self {
        LlmPlanner {
            backend,
            templates,
            max_repairs: DEFAULT_MAX_REPAIRS,
        }
    }

    pub fn prompt(&self, request: &PlanRequest) -> Option<String> {
        let template = self.templates.for_strategy(request.strategy)?;
        let goals = request.goals.iter().map(|g| format!("{}: {}", g.id, g.text)).collect::<Vec<_>>().join("\n");
        let world = if request.world.is_empty() {
            "(nothing known)".to_string()
        } else {
            request.world.iter().map(|s| format!("- {s}")).collect::<Vec<_>>().join("\n")
        };
        let caps = if request.capabilities.is_empty() {
            "(none registered)".to_string()
        } else {
            request.capabilities.join(", ")
        };
        Some(render_template(
            template,
            &[("goals", &goals), ("world", &world), ("capabilities", &caps)],
        ))
    }
}

impl PlanBackend for LlmPlanner {
    fn invoke(&self, request: &PlanRequest, repairs: &[Repair]) -> Result<RawPlanResponse, BackendError> {
        let prompt = self
            .prompt(request)
            .ok_or_else(|| BackendError::BadResponse(format!("no prompt for strategy {}", request.strategy)))?;
        let mut messages = vec![ChatMessage::user(prompt)];
        for r in repairs {
            messages.push(ChatMessage::assistant(r.previous.clone()));
            messages.push(repair_message(&r.diagnostics));
        }
        let payload = self.backend.complete(&messages)?;
        Ok(RawPlanResponse {
            strategy: request.strategy,
            payload,
        })
    }

    fn max_repairs(&self) -> usize {
        self.max_repairs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ReplayBackend;
    use crate::model::Goal;
    use crate::planning::{plan_big_dag, plan_per_goal, PlanningError};

    fn goals() -> Vec<Goal> {
        vec![Goal::new("g1", "Bring a cup").unwrap(), Goal::new("g2", "Find keys").unwrap()]
    }

    #[test]
    fn prompt_carries_goals_world_capabilities() {
        let replay = Arc::new(ReplayBackend::new([r#"{"tasks":[{"id":"a","description":"x"}]}"#]));
        let planner = LlmPlanner::new(replay.clone(), PromptTemplates::default());
        let world = vec!["the cups are in the kitchen".to_string()];
        plan_big_dag(&goals(), &world, &["navigation".into()], &planner).unwrap();
        let calls = replay.calls();
        assert_eq!(calls.len(), 1);
        let p = &calls[0][0].content;
        assert!(p.contains("g1: Bring a cup") && p.contains("g2: Find keys"));
        assert!(p.contains("- the cups are in the kitchen"));
        assert!(p.contains("navigation"));
        assert!(!p.contains("{goals}"));
    }

    #[test]
    fn repairs_then_succeeds() {
        let replay = Arc::new(ReplayBackend::new([
            r#"{"tasks":[{"id":"a","description":"x","depends_on":["nope"]}]}"#,
            "not json at all",
            r#"{"tasks":[{"id":"a","description":"x"}]}"#,
        ]));
        let planner = LlmPlanner::new(replay.clone(), PromptTemplates::default());
        let plan = plan_big_dag(&goals(), &[], &[], &planner).unwrap();
        assert_eq!(plan.len(), 1);
        let calls = replay.calls();
        assert_eq!(calls.len(), 3);
        assert_eq!(calls[1].len(), 3);
        assert!(calls[1][2].content.contains("nope"));
        assert_eq!(calls[2].len(), 5);
    }

    #[test]
    fn gives_up_after_budget() {
        let replay = Arc::new(ReplayBackend::new(["garbage"]));
        let planner = LlmPlanner::new(replay.clone(), PromptTemplates::default());
        let err = plan_per_goal(&goals()[..1], &[], &[], &planner).unwrap_err();
        assert!(matches!(err, PlanningError::Backend { ref goal, .. } if goal == "g1"));
        assert_eq!(replay.calls().len(), 1 + DEFAULT_MAX_REPAIRS);
    }
}
