use std::collections::{BTreeMap, BTreeSet};

use super::{ModelError, Plan, Strategy, Task, TaskStatus};

fn successors(plan: &Plan) -> BTreeMap<&str, BTreeSet<&str>> {
    let mut succ: BTreeMap<&str, BTreeSet<&str>> =
        plan.tasks.keys().map(|k| (k.as_str(), BTreeSet::new())).collect();
    for task in plan.tasks.values() {
        for dep in &task.depends_on {
            if let Some(s) = succ.get_mut(dep.as_str()) {
                s.insert(task.id.as_str());
            }
        }
    }
    succ
}

fn check_references(plan: &Plan) -> Result<(), ModelError> {
    for task in plan.tasks.values() {
        if let Some(missing) = task.depends_on.iter().find(|d| !plan.tasks.contains_key(*d)) {
            return Err(ModelError::DanglingDependency {
                task: task.id.clone(),
                missing: missing.clone(),
            });
        }
    }
    Ok(())
}

/// Checks that every dependency resolves and the graph is acyclic. On a
/// cycle, reports the first one found by a DFS over ids in sorted order,
/// following edges from dependency to dependent.
pub fn validate_dag(plan: &Plan) -> Result<(), ModelError> {
    check_references(plan)?;
    let succ = successors(plan);

    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        OnPath,
        Done,
    }
    let mut marks: BTreeMap<&str, Mark> = succ.keys().map(|k| (*k, Mark::New)).collect();

    for &root in succ.keys() {
        if marks[root] != Mark::New {
            continue;
        }
        // Explicit stack of (node, remaining successors) keeps deep chains
        // off the call stack.
        let mut path: Vec<&str> = vec![root];
        let mut stack: Vec<std::collections::btree_set::Iter<'_, &str>> = vec![succ[root].iter()];
        marks.insert(root, Mark::OnPath);
        while let Some(iter) = stack.last_mut() {
            match iter.next() {
                Some(&next) => match marks[next] {
                    Mark::New => {
                        marks.insert(next, Mark::OnPath);
                        path.push(next);
                        stack.push(succ[next].iter());
                    }
                    Mark::OnPath => {
                        let start = path.iter().position(|n| *n == next).unwrap();
                        return Err(ModelError::Cycle(
                            path[start..].iter().map(|s| s.to_string()).collect(),
                        ));
                    }
                    Mark::Done => {}
                },
                None => {
                    let done = path.pop().unwrap();
                    marks.insert(done, Mark::Done);
                    stack.pop();
                }
            }
        }
    }
    Ok(())
}

/// Kahn's algorithm; among available tasks the smallest id goes first.
pub fn topo_order(plan: &Plan) -> Result<Vec<String>, ModelError> {
    validate_dag(plan)?;
    let succ = successors(plan);
    let mut indegree: BTreeMap<&str, usize> = plan
        .tasks
        .values()
        .map(|t| (t.id.as_str(), t.depends_on.len()))
        .collect();
    let mut available: BTreeSet<&str> = indegree
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(k, _)| *k)
        .collect();
    let mut order = Vec::with_capacity(plan.len());
    while let Some(next) = available.pop_first() {
        order.push(next.to_string());
        for &s in &succ[next] {
            let d = indegree.get_mut(s).unwrap();
            *d -= 1;
            if *d == 0 {
                available.insert(s);
            }
        }
    }
    Ok(order)
}

/// Disjoint union of per-goal plans. Each task id becomes
/// `<goal_id>/<local id>`, using the plan id when a task has no goal.
pub fn merge_plans(plans: &[Plan]) -> Result<Plan, ModelError> {
    let mut merged = Plan::new("plan", Strategy::PerGoal);
    for plan in plans {
        validate_dag(plan)?;
        let namespace = |t: &Task| t.goal_id.clone().unwrap_or_else(|| plan.id.clone());
        for task in plan.tasks.values() {
            let mut renamed = task.clone();
            renamed.id = format!("{}/{}", namespace(task), task.id);
            renamed.depends_on = task
                .depends_on
                .iter()
                .map(|d| format!("{}/{}", namespace(&plan.tasks[d]), d))
                .collect();
            merged.insert(renamed)?;
        }
    }
    validate_dag(&merged)?;
    Ok(merged)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Progress {
    pub counts: BTreeMap<TaskStatus, usize>,
    /// Not-yet-dispatched tasks whose dependencies have all succeeded.
    pub frontier: Vec<String>,
}

impl Progress {
    pub fn count(&self, status: TaskStatus) -> usize {
        self.counts.get(&status).copied().unwrap_or(0)
    }
}

pub fn plan_progress(plan: &Plan) -> Progress {
    let mut counts = BTreeMap::new();
    for task in plan.tasks.values() {
        *counts.entry(task.status).or_insert(0) += 1;
    }
    let frontier = plan
        .tasks
        .values()
        .filter(|t| matches!(t.status, TaskStatus::Pending | TaskStatus::Ready))
        .filter(|t| {
            t.depends_on.iter().all(|d| {
                plan.tasks
                    .get(d)
                    .is_some_and(|dep| dep.status == TaskStatus::Succeeded)
            })
        })
        .map(|t| t.id.clone())
        .collect();
    Progress { counts, frontier }
}
