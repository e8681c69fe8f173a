//! Deterministic planner backend driven by a recipe ruleset.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use super::{PlanBackend, PlanRequest, RawPlanResponse, Repair};
use crate::llm::BackendError;
use crate::model::{normalize_id, normalize_text, validate_dag, Goal, Plan, Strategy, Task};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecipeError {
    #[error("ruleset does not parse: {0}")]
    Syntax(String),
    #[error("rule {rule}: {reason}")]
    Rule { rule: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Subtask {
    pub id: String,
    pub description: String,
    #[serde(default)]
    pub depends_on: Vec<String>,
    #[serde(default)]
    pub capabilities: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    /// Case-insensitive substring of the goal text.
    pub goal_pattern: String,
    /// When set, the rule only applies if some world statement contains
    /// this case-insensitive substring.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub world_contains: Option<String>,
    pub subtasks: Vec<Subtask>,
}

impl Rule {
    fn matches(&self, goal: &str, world: &[String]) -> bool {
        let goal = goal.to_lowercase();
        if !goal.contains(&self.goal_pattern.to_lowercase()) {
            return false;
        }
        match &self.world_contains {
            None => true,
            Some(needle) => {
                let needle = needle.to_lowercase();
                world.iter().any(|s| s.to_lowercase().contains(&needle))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct RecipeBook {
    pub rules: Vec<Rule>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum BookDoc {
    Wrapped { rules: Vec<Rule> },
    Bare(Vec<Rule>),
}

impl RecipeBook {
    pub fn parse(text: &str) -> Result<Self, RecipeError> {
        let doc: BookDoc = serde_yaml::from_str(text).map_err(|e| RecipeError::Syntax(e.to_string()))?;
        let rules = match doc {
            BookDoc::Wrapped { rules } | BookDoc::Bare(rules) => rules,
        };
        let book = RecipeBook { rules };
        book.validate()?;
        Ok(book)
    }

    pub fn validate(&self) -> Result<(), RecipeError> {
        for (i, rule) in self.rules.iter().enumerate() {
            let err = |reason: String| RecipeError::Rule { rule: i + 1, reason };
            if rule.goal_pattern.trim().is_empty() {
                return Err(err("goal_pattern must be nonempty".into()));
            }
            if rule.subtasks.is_empty() {
                return Err(err("rule has no subtasks".into()));
            }
            let mut plan = Plan::new("rule", Strategy::Manual);
            for sub in &rule.subtasks {
                if sub.description.trim().is_empty() {
                    return Err(err(format!("subtask {} has an empty description", sub.id)));
                }
                plan.insert(Task::new(&sub.id, sub.description.clone()).after(sub.depends_on.iter()))
                    .map_err(|e| err(e.to_string()))?;
            }
            validate_dag(&plan).map_err(|e| err(e.to_string()))?;
        }
        Ok(())
    }

    pub fn find(&self, goal: &str, world: &[String]) -> Option<&Rule> {
        self.rules.iter().find(|r| r.matches(goal, world))
    }

    /// Subtasks of the goal's first matching rule, ids optionally prefixed
    /// with `<goal id>/`.
    fn expand(&self, goal: &Goal, world: &[String], namespaced: bool) -> Result<Vec<Task>, BackendError> {
        let rule = self.find(&goal.text, world).ok_or_else(|| {
            BackendError::BadResponse(format!("no recipe rule matches goal {} ({:?})", goal.id, goal.text))
        })?;
        let name = |local: &str| {
            if namespaced {
                format!("{}/{}", goal.id, normalize_id(local))
            } else {
                normalize_id(local)
            }
        };
        Ok(rule
            .subtasks
            .iter()
            .map(|s| {
                let mut task = Task::new("", s.description.clone())
                    .requiring(s.capabilities.iter().cloned())
                    .for_goal(goal.id.clone());
                task.id = name(&s.id);
                task.depends_on = s.depends_on.iter().map(|d| name(d)).collect();
                task
            })
            .collect())
    }
}

/// Replaces `dup` by `keep` everywhere, moving dup's dependencies onto keep.
fn contract(tasks: &[Task], dup: &str, keep: &str) -> Vec<Task> {
    let dup_deps = tasks.iter().find(|t| t.id == dup).map(|t| t.depends_on.clone()).unwrap_or_default();
    tasks
        .iter()
        .filter(|t| t.id != dup)
        .map(|t| {
            let mut t = t.clone();
            if t.id == keep {
                t.depends_on.extend(dup_deps.iter().cloned());
            }
            if t.depends_on.remove(dup) {
                t.depends_on.insert(keep.to_string());
            }
            t
        })
        .collect()
}

fn is_acyclic(tasks: &[Task]) -> bool {
    Plan::with_tasks("check", Strategy::BigDag, tasks.iter().cloned())
        .map(|p| validate_dag(&p).is_ok())
        .unwrap_or(false)
}

/// Merges tasks whose whitespace-normalized descriptions are identical onto
/// the first occurrence. A merge that would close a cycle is skipped and
/// both tasks are kept.
pub(crate) fn dedup(tasks: Vec<Task>) -> (Vec<Task>, Vec<(String, String)>) {
    let mut tasks = tasks;
    let mut first: HashMap<String, String> = HashMap::new();
    let mut skipped = Vec::new();
    let order: Vec<(String, String)> =
        tasks.iter().map(|t| (t.id.clone(), normalize_text(&t.description))).collect();
    for (id, key) in order {
        match first.get(&key) {
            None => {
                first.insert(key, id);
            }
            Some(keep) => {
                let candidate = contract(&tasks, &id, keep);
                if is_acyclic(&candidate) {
                    tasks = candidate;
                } else {
                    skipped.push((keep.clone(), id));
                }
            }
        }
    }
    (tasks, skipped)
}

pub struct RecipeBackend {
    pub book: RecipeBook,
}

impl RecipeBackend {
    pub fn new(book: RecipeBook) -> Self {
        RecipeBackend { book }
    }

    fn tasks_for(&self, request: &PlanRequest) -> Result<Vec<Task>, BackendError> {
        match request.strategy {
            Strategy::PerGoal => {
                let mut out = Vec::new();
                for goal in &request.goals {
                    out.extend(self.book.expand(goal, &request.world, request.goals.len() > 1)?);
                }
                Ok(out)
            }
            Strategy::BigDag => {
                let mut out = Vec::new();
                for goal in &request.goals {
                    out.extend(self.book.expand(goal, &request.world, true)?);
                }
                let (merged, skipped) = dedup(out);
                for (keep, dup) in skipped {
                    tracing::debug!(%keep, %dup, "dedup skipped: merge would create a cycle");
                }
                Ok(merged)
            }
            Strategy::Monolithic => {
                let mut goals: BTreeMap<&str, &Goal> = BTreeMap::new();
                for g in &request.goals {
                    goals.entry(g.id.as_str()).or_insert(g);
                }
                let mut out: Vec<Task> = Vec::new();
                for goal in goals.values() {
                    for mut task in self.book.expand(goal, &request.world, true)? {
                        task.depends_on.clear();
                        if let Some(prev) = out.last() {
                            task.depends_on.insert(prev.id.clone());
                        }
                        out.push(task);
                    }
                }
                Ok(out)
            }
            Strategy::Manual => Err(BackendError::BadResponse("manual plans are not generated".into())),
        }
    }
}

impl PlanBackend for RecipeBackend {
    fn invoke(&self, request: &PlanRequest, _repairs: &[Repair]) -> Result<RawPlanResponse, BackendError> {
        let tasks: Vec<_> = self
            .tasks_for(request)?
            .into_iter()
            .map(|t| {
                json!({
                    "id": t.id,
                    "description": t.description,
                    "depends_on": t.depends_on,
                    "required_capabilities": t.required_capabilities,
                    "goal_id": t.goal_id,
                })
            })
            .collect();
        Ok(RawPlanResponse {
            strategy: request.strategy,
            payload: json!({ "tasks": tasks }).to_string(),
        })
    }
}
