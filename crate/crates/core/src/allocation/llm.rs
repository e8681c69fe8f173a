use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::{compatible, AllocationError};
use crate::llm::{
    extract_json_object, render_template, repair_message, BackendError, ChatBackend, ChatMessage,
    DEFAULT_MAX_REPAIRS,
};
use crate::model::{normalize_id, Allocation, AllocationMethod, RobotSpec, Task};

pub const DEFAULT_ALLOCATION_TEMPLATE: &str = include_str!("../../rules/prompts/allocate.txt");

pub struct LlmAllocator {
    pub backend: Arc<dyn ChatBackend>,
    pub template: String,
    pub max_repairs: usize,
}

impl LlmAllocator {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        LlmAllocator {
            backend,
            template: DEFAULT_ALLOCATION_TEMPLATE.to_string(),
            max_repairs: DEFAULT_MAX_REPAIRS,
        }
    }
}

fn render_prompt(tasks: &[&Task], robots: &[RobotSpec], world: &[String], template: &str) -> String {
    let task_json: Vec<Value> = tasks
        .iter()
        .map(|t| {
            json!({
                "id": t.id,
                "description": t.description,
                "depends_on": t.depends_on,
                "required_capabilities": t.required_capabilities,
            })
        })
        .collect();
    let robot_json: Vec<Value> = robots
        .iter()
        .map(|r| json!({"name": r.name, "capabilities": r.capabilities}))
        .collect();
    let capabilities: BTreeSet<&str> = robots
        .iter()
        .flat_map(|r| r.capabilities.iter().map(String::as_str))
        .collect();
    let world_text = if world.is_empty() {
        "(none)".to_string()
    } else {
        world.iter().map(|s| format!("- {s}")).collect::<Vec<_>>().join("\n")
    };
    render_template(
        template,
        &[
            ("tasks", &Value::Array(task_json).to_string()),
            ("robots", &Value::Array(robot_json).to_string()),
            ("capabilities", &capabilities.into_iter().collect::<Vec<_>>().join(", ")),
            ("world", &world_text),
        ],
    )
}

/// Checks a reply against the task and robot lists. Returns the assignment
/// map or a diagnostic suitable for a repair prompt.
fn parse_reply(reply: &str, tasks: &[&Task], robots: &[RobotSpec]) -> Result<BTreeMap<String, String>, String> {
    let body = extract_json_object(reply).ok_or("reply contains no JSON object")?;
    let value: Value = serde_json::from_str(body).map_err(|e| format!("invalid JSON: {e}"))?;
    let object = match value.get("assignments") {
        Some(Value::Object(inner)) => inner.clone(),
        _ => value.as_object().cloned().ok_or("reply is not a JSON object")?,
    };

    let known: BTreeSet<&str> = tasks.iter().map(|t| t.id.as_str()).collect();
    let mut map = BTreeMap::new();
    let mut unknown_tasks = Vec::new();
    for (key, robot) in object {
        let id = if known.contains(key.as_str()) { key.clone() } else { normalize_id(&key) };
        let robot = robot
            .as_str()
            .ok_or_else(|| format!("robot for task {key} must be a string"))?
            .to_string();
        if !known.contains(id.as_str()) {
            unknown_tasks.push(key);
            continue;
        }
        if !robots.iter().any(|r| r.name == robot) {
            return Err(format!("task {id} is mapped to unregistered robot {robot}"));
        }
        map.insert(id, robot);
    }
    if !unknown_tasks.is_empty() {
        return Err(format!("unknown task ids: {}", unknown_tasks.join(", ")));
    }
    let missing: Vec<&str> = known.iter().filter(|id| !map.contains_key(**id)).copied().collect();
    if !missing.is_empty() {
        return Err(format!("missing tasks: {}", missing.join(", ")));
    }
    Ok(map)
}

/// Asks the chat backend for a `{task: robot}` map, re-prompting with the
/// diagnostics up to `max_repairs` times. Capability mismatches are kept as
/// warnings, not errors.
pub fn allocate_llm(
    tasks: &[&Task],
    robots: &[RobotSpec],
    world: &[String],
    allocator: &LlmAllocator,
) -> Result<Allocation, AllocationError> {
    if robots.is_empty() {
        return Err(AllocationError::NoRobots);
    }
    let mut messages = vec![ChatMessage::user(render_prompt(tasks, robots, world, &allocator.template))];
    let mut attempt = 0;
    let assignments = loop {
        let reply = allocator.backend.complete(&messages)?;
        match parse_reply(&reply, tasks, robots) {
            Ok(map) => break map,
            Err(diag) if attempt < allocator.max_repairs => {
                attempt += 1;
                messages.push(ChatMessage::assistant(reply));
                messages.push(repair_message(&diag));
            }
            Err(diag) => return Err(AllocationError::Parse(diag)),
        }
    };

    let warnings = tasks
        .iter()
        .filter_map(|t| {
            let name = &assignments[&t.id];
            let robot = robots.iter().find(|r| &r.name == name)?;
            (!compatible(t, robot)).then(|| {
                format!("task {} assigned to {} which lacks required capabilities", t.id, robot.name)
            })
        })
        .collect();
    Ok(Allocation {
        assignments,
        method: AllocationMethod::Llm,
        feasible: true,
        warnings,
    })
}

/// Offline stand-in for an LLM allocator: reads the task and robot lists
/// out of the default prompt and picks, for each task, a random robot among
/// the capable ones using a seeded generator.
pub struct SeededStubAllocator {
    seed: u64,
}

impl SeededStubAllocator {
    pub fn new(seed: u64) -> Self {
        SeededStubAllocator { seed }
    }
}

impl ChatBackend for SeededStubAllocator {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        let prompt = messages
            .first()
            .map(|m| m.content.as_str())
            .ok_or_else(|| BackendError::BadResponse("empty conversation".into()))?;
        let arrays: Vec<Vec<Value>> = prompt
            .lines()
            .filter(|l| l.starts_with('['))
            .filter_map(|l| serde_json::from_str::<Vec<Value>>(l).ok())
            .collect();
        let pick = |key: &str| {
            arrays
                .iter()
                .find(|a| a.first().is_some_and(|v| v.get(key).is_some()) || a.is_empty())
                .cloned()
                .unwrap_or_default()
        };
        let tasks = pick("description");
        let robots = pick("capabilities");
        let robot_caps: Vec<(String, BTreeSet<String>)> = robots
            .iter()
            .filter_map(|r| {
                let name = r.get("name")?.as_str()?.to_string();
                let caps = serde_json::from_value(r.get("capabilities")?.clone()).ok()?;
                Some((name, caps))
            })
            .collect();
        if robot_caps.is_empty() {
            return Err(BackendError::BadResponse("prompt lists no robots".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = serde_json::Map::new();
        for t in &tasks {
            let Some(id) = t.get("id").and_then(Value::as_str) else { continue };
            let needs: BTreeSet<String> = t
                .get("required_capabilities")
                .and_then(|v| serde_json::from_value(v.clone()).ok())
                .unwrap_or_default();
            let capable: Vec<&String> = robot_caps
                .iter()
                .filter(|(_, caps)| needs.is_subset(caps))
                .map(|(n, _)| n)
                .collect();
            let all: Vec<&String> = robot_caps.iter().map(|(n, _)| n).collect();
            let pool = if capable.is_empty() { &all } else { &capable };
            let choice = pool.choose(&mut rng).expect("pool nonempty");
            out.insert(id.to_string(), Value::String((*choice).clone()));
        }
        Ok(Value::Object(out).to_string())
    }
}
