//! Task-to-robot allocation: exact min-max-load, LLM-proposed, and
//! round-robin.

mod lexicon;
mod llm;
mod solver;

pub use lexicon::{extract_capabilities, CapabilityLexicon, LexiconError, DEFAULT_LEXICON};
pub use llm::{allocate_llm, LlmAllocator, SeededStubAllocator, DEFAULT_ALLOCATION_TEMPLATE};
pub use solver::{solve_minmax, AssignmentMatrix, SolveError};

use thiserror::Error;
use tracing::warn;

use crate::llm::BackendError;
use crate::model::{topo_order, Allocation, AllocationMethod, ModelError, Plan, RobotSpec, Task};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AllocationError {
    #[error("no registered robot can perform tasks: {}", .0.join(", "))]
    Infeasible(Vec<String>),
    #[error("no robots registered")]
    NoRobots,
    #[error("allocation response unusable after repairs: {0}")]
    Parse(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// True when the robot may take the task: the task's required set is a
/// subset of the robot's, and tasks with no requirements fit anywhere.
pub fn compatible(task: &Task, robot: &RobotSpec) -> bool {
    robot.can_perform(&task.required_capabilities)
}

/// Exact min-max-load allocation. Tasks are taken in the order given and
/// robots in registry order; the deterministic flow search picks among
/// optimal solutions.
pub fn allocate_milp(tasks: &[&Task], robots: &[RobotSpec]) -> Result<Allocation, AllocationError> {
    allocate_milp_with(tasks, robots, compatible)
}

/// Like [`allocate_milp`] but with a caller-supplied compatibility rule.
pub fn allocate_milp_with<F>(
    tasks: &[&Task],
    robots: &[RobotSpec],
    allowed: F,
) -> Result<Allocation, AllocationError>
where
    F: Fn(&Task, &RobotSpec) -> bool,
{
    if robots.is_empty() {
        return Err(AllocationError::NoRobots);
    }
    let compat: Vec<Vec<bool>> = tasks
        .iter()
        .map(|t| robots.iter().map(|r| allowed(t, r)).collect())
        .collect();
    match solve_minmax(&compat, robots.len()) {
        Ok(solution) => {
            let assignments = tasks
                .iter()
                .zip(solution.assignment())
                .map(|(t, j)| (t.id.clone(), robots[j].name.clone()))
                .collect();
            Ok(Allocation {
                assignments,
                method: AllocationMethod::Milp,
                feasible: true,
                warnings: Vec::new(),
            })
        }
        Err(SolveError::Infeasible(rows)) => Err(AllocationError::Infeasible(
            rows.into_iter().map(|i| tasks[i].id.clone()).collect(),
        )),
        Err(SolveError::Malformed(m)) => unreachable!("matrix built from inputs: {m}"),
    }
}

/// Cyclic assignment in the order given, ignoring capabilities.
pub fn allocate_round_robin(tasks: &[&Task], robots: &[RobotSpec]) -> Result<Allocation, AllocationError> {
    if robots.is_empty() {
        return Err(AllocationError::NoRobots);
    }
    let assignments = tasks
        .iter()
        .enumerate()
        .map(|(i, t)| (t.id.clone(), robots[i % robots.len()].name.clone()))
        .collect();
    Ok(Allocation {
        assignments,
        method: AllocationMethod::RoundRobin,
        feasible: false,
        warnings: Vec::new(),
    })
}

/// Plan tasks in topological order, the order every allocator consumes.
pub fn ordered_tasks(plan: &Plan) -> Result<Vec<&Task>, ModelError> {
    Ok(topo_order(plan)?.iter().map(|id| &plan.tasks[id]).collect())
}

/// Which allocator a plan or mission uses.
pub enum Allocator<'a> {
    Milp,
    RoundRobin,
    Llm(&'a LlmAllocator),
}

impl Allocator<'_> {
    pub fn method(&self) -> AllocationMethod {
        match self {
            Allocator::Milp => AllocationMethod::Milp,
            Allocator::RoundRobin => AllocationMethod::RoundRobin,
            Allocator::Llm(_) => AllocationMethod::Llm,
        }
    }
}

/// Orchestration-level allocation: runs the chosen allocator and, when the
/// exact solver reports infeasibility, falls back to round-robin with
/// `feasible = false` and a warning naming the stranded tasks.
///
/// `avoid` lists (task description, robot) pairs to keep apart when an
/// alternative exists; replanning uses it to steer a task away from a robot
/// that exhausted its retries.
pub fn allocate_plan(
    plan: &Plan,
    robots: &[RobotSpec],
    allocator: &Allocator<'_>,
    world: &[String],
    avoid: &[(String, String)],
) -> Result<Allocation, AllocationError> {
    if robots.is_empty() {
        return Err(AllocationError::NoRobots);
    }
    let tasks = ordered_tasks(plan)?;
    if tasks.is_empty() {
        return Ok(Allocation::empty(allocator.method()));
    }
    let allocation = match allocator {
        Allocator::Milp => {
            let avoided = |t: &Task, r: &RobotSpec| {
                let key = crate::model::normalize_text(&t.description);
                avoid.iter().any(|(d, name)| *d == key && *name == r.name)
            };
            let steered = allocate_milp_with(&tasks, robots, |t, r| compatible(t, r) && !avoided(t, r));
            match steered {
                Ok(a) => Ok(a),
                Err(AllocationError::Infeasible(_)) if !avoid.is_empty() => allocate_milp(&tasks, robots),
                Err(e) => Err(e),
            }
        }
        Allocator::RoundRobin => allocate_round_robin(&tasks, robots),
        Allocator::Llm(llm) => allocate_llm(&tasks, robots, world, llm),
    };
    match allocation {
        Err(AllocationError::Infeasible(stranded)) => {
            warn!(tasks = ?stranded, "allocation infeasible, falling back to round-robin");
            let mut rr = allocate_round_robin(&tasks, robots)?;
            rr.warnings.push(format!(
                "infeasible: no robot has the capabilities for {}; fell back to round-robin",
                stranded.join(", ")
            ));
            Ok(rr)
        }
        other => other,
    }
}

/// Writes the allocation's robot names into the plan's tasks.
pub fn apply_allocation(plan: &mut Plan, allocation: &Allocation) {
    for task in plan.tasks.values_mut() {
        task.assigned_robot = allocation.assignments.get(&task.id).cloned();
    }
}

/// Fills empty required-capability sets from the task description.
pub fn annotate_capabilities(plan: &mut Plan, lexicon: &CapabilityLexicon) {
    for task in plan.tasks.values_mut() {
        if task.required_capabilities.is_empty() {
            task.required_capabilities = extract_capabilities(&task.description, lexicon);
        }
    }
}
