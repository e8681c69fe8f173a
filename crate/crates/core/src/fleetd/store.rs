use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Services;
use crate::allocation::{compatible, extract_capabilities, CapabilityLexicon};
use crate::model::{
    normalize_id, validate_dag, Allocation, Goal, ModelError, Plan, RobotSpec, SchemaError, Statement, StatementSource,
    Strategy, Task, WorldState,
};
use crate::protocol::codes;
use crate::scheduling::{AllocatorChoice, MissionState};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("robot {0} is already registered")]
    DuplicateRobot(String),
    #[error("{kind} {id} not found")]
    NotFound { kind: &'static str, id: String },
    #[error("dependency cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("no goals have been added")]
    NoGoals,
    #[error("no robots are registered")]
    NoRobots,
    #[error("mission {0} is still active")]
    MissionActive(String),
    #[error("planning failed: {0}")]
    Planning(String),
    #[error("{0}")]
    Invalid(String),
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
    #[error("snapshot i/o: {0}")]
    Io(String),
}

impl StoreError {
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::Schema(_) => codes::SCHEMA_ERROR,
            StoreError::DuplicateRobot(_) => codes::DUPLICATE_ROBOT,
            StoreError::NotFound { .. } => codes::NOT_FOUND,
            StoreError::Cycle(_) => codes::CYCLE,
            StoreError::NoGoals => codes::NO_GOALS,
            StoreError::NoRobots => codes::NO_ROBOTS,
            StoreError::MissionActive(_) => codes::MISSION_ACTIVE,
            StoreError::Planning(_) => codes::PLANNING_FAILED,
            StoreError::Invalid(_) => codes::INVALID,
            StoreError::CorruptSnapshot(_) | StoreError::Io(_) => codes::INTERNAL,
        }
    }

    fn not_found(kind: &'static str, id: &str) -> Self {
        StoreError::NotFound { kind, id: id.to_string() }
    }
}

impl From<ModelError> for StoreError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Cycle(c) => StoreError::Cycle(c),
            other => StoreError::Invalid(other.to_string()),
        }
    }
}

/// A planned and allocated plan that has not been run yet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DraftPlan {
    pub goals: Vec<Goal>,
    pub allocator: AllocatorChoice,
    pub plan: Plan,
    pub allocation: Allocation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissionRecord {
    pub plan_id: String,
    /// Wall-clock start, ms since the epoch. Mission time counts from here.
    pub started_at: u64,
    pub state: MissionState,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FleetStore {
    /// Registry, in registration order.
    pub robots: Vec<RobotSpec>,
    pub goals: Vec<Goal>,
    pub world: WorldState,
    pub plans: BTreeMap<String, DraftPlan>,
    pub missions: BTreeMap<String, MissionRecord>,
    pub active_mission: Option<String>,
    #[serde(default)]
    next_goal: u64,
    #[serde(default)]
    next_plan: u64,
    #[serde(default)]
    next_mission: u64,
}

impl FleetStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn robot(&self, name: &str) -> Option<&RobotSpec> {
        self.robots.iter().find(|r| r.name == name)
    }

    pub fn register_robot(&mut self, spec: RobotSpec) -> Result<&RobotSpec, StoreError> {
        spec.validate()?;
        if self.robot(&spec.name).is_some() {
            return Err(StoreError::DuplicateRobot(spec.name));
        }
        self.robots.push(spec);
        Ok(self.robots.last().unwrap())
    }

    pub fn remove_robot(&mut self, name: &str) -> Result<RobotSpec, StoreError> {
        let i = self
            .robots
            .iter()
            .position(|r| r.name == name)
            .ok_or_else(|| StoreError::not_found("robot", name))?;
        Ok(self.robots.remove(i))
    }

    pub fn add_statement(&mut self, text: &str, source: StatementSource, at: u64) -> Result<Statement, StoreError> {
        Ok(self.world.add(text, source, at)?.clone())
    }

    pub fn remove_statement(&mut self, id: &str) -> Result<Statement, StoreError> {
        self.world.remove(id).ok_or_else(|| StoreError::not_found("statement", id))
    }

    pub fn add_goal(&mut self, text: &str) -> Result<Goal, StoreError> {
        let goal = Goal::new(format!("g{}", self.next_goal + 1), text.trim())?;
        self.next_goal += 1;
        self.goals.push(goal.clone());
        Ok(goal)
    }

    pub fn remove_goal(&mut self, id: &str) -> Result<Goal, StoreError> {
        let i = self
            .goals
            .iter()
            .position(|g| g.id == id)
            .ok_or_else(|| StoreError::not_found("goal", id))?;
        Ok(self.goals.remove(i))
    }

    /// Plans and allocates the current goals into a new draft. The manual
    /// strategy starts an empty draft for `add_task`.
    pub fn create_plan(
        &mut self,
        strategy: Strategy,
        allocator: AllocatorChoice,
        services: &Services,
    ) -> Result<&DraftPlan, StoreError> {
        if self.robots.is_empty() {
            return Err(StoreError::NoRobots);
        }
        let id = format!("p{}", self.next_plan + 1);
        let draft = if strategy == Strategy::Manual {
            DraftPlan {
                goals: self.goals.clone(),
                allocator,
                plan: Plan::new(id.clone(), Strategy::Manual),
                allocation: Allocation::empty(allocator.method()),
            }
        } else {
            if self.goals.is_empty() {
                return Err(StoreError::NoGoals);
            }
            let ctx = services.context(&self.robots, allocator);
            let mut state = MissionState::new(id.clone(), self.goals.clone(), strategy, allocator);
            state
                .plan_and_allocate(&ctx, &self.world.texts())
                .map_err(|e| StoreError::Planning(e.to_string()))?;
            state.plan.id = id.clone();
            DraftPlan {
                goals: state.goals,
                allocator,
                plan: state.plan,
                allocation: state.allocation,
            }
        };
        self.next_plan += 1;
        self.plans.insert(id.clone(), draft);
        Ok(&self.plans[&id])
    }

    /// Adds an operator task to a draft plan. The id is derived from the
    /// description; without `robot` the least-loaded capable robot is used.
    pub fn add_task(
        &mut self,
        plan_id: &str,
        description: &str,
        after: &[String],
        robot: Option<&str>,
        lexicon: &CapabilityLexicon,
    ) -> Result<Task, StoreError> {
        let description = description.trim();
        if description.is_empty() {
            return Err(StoreError::Invalid("task description must be nonempty".into()));
        }
        if self.robots.is_empty() {
            return Err(StoreError::NoRobots);
        }
        if let Some(r) = robot {
            if self.robot(r).is_none() {
                return Err(StoreError::not_found("robot", r));
            }
        }
        let robots = self.robots.clone();
        let draft = self.plans.get_mut(plan_id).ok_or_else(|| StoreError::not_found("plan", plan_id))?;

        let base = normalize_id(description);
        let mut id = base.clone();
        let mut n = 1;
        while draft.plan.tasks.contains_key(&id) {
            n += 1;
            id = format!("{base}-{n}");
        }
        let mut task = Task::new(&id, description).after(after.iter().cloned());
        task.required_capabilities = extract_capabilities(description, lexicon);

        let mut plan = draft.plan.clone();
        plan.insert(task.clone())?;
        validate_dag(&plan)?;

        let mut allocation = draft.allocation.clone();
        let chosen = match robot {
            Some(r) => {
                let spec = robots.iter().find(|s| s.name == r).unwrap();
                if !compatible(&task, spec) {
                    allocation
                        .warnings
                        .push(format!("task {id} needs capabilities robot {r} lacks"));
                }
                r.to_string()
            }
            None => {
                let loads = allocation.loads(&robots);
                let capable: Vec<usize> = (0..robots.len()).filter(|&j| compatible(&task, &robots[j])).collect();
                let pool = if capable.is_empty() {
                    allocation.feasible = false;
                    allocation.warnings.push(format!("no robot can perform task {id}; assigned by load only"));
                    (0..robots.len()).collect()
                } else {
                    capable
                };
                let j = pool.into_iter().min_by_key(|&j| (loads[j], j)).unwrap();
                robots[j].name.clone()
            }
        };
        allocation.assignments.insert(id.clone(), chosen.clone());
        task.assigned_robot = Some(chosen);
        plan.tasks.insert(id.clone(), task.clone());
        draft.plan = plan;
        draft.allocation = allocation;
        Ok(task)
    }

    /// Starts executing a draft. Only one mission may be unfinished.
    pub fn start_mission(&mut self, plan_id: &str, now_ms: u64) -> Result<String, StoreError> {
        if let Some(active) = &self.active_mission {
            if self.missions.get(active).is_some_and(|m| !m.state.phase.is_finished()) {
                return Err(StoreError::MissionActive(active.clone()));
            }
        }
        let draft = self.plans.get(plan_id).ok_or_else(|| StoreError::not_found("plan", plan_id))?;
        let id = format!("m{}", self.next_mission + 1);
        let state = MissionState::from_plan(
            id.clone(),
            draft.goals.clone(),
            draft.plan.clone(),
            draft.allocation.clone(),
            draft.allocator,
        );
        self.next_mission += 1;
        self.missions.insert(
            id.clone(),
            MissionRecord {
                plan_id: plan_id.to_string(),
                started_at: now_ms,
                state,
            },
        );
        self.active_mission = Some(id.clone());
        Ok(id)
    }

    /// The unfinished mission, if any.
    pub fn active(&self) -> Option<&MissionRecord> {
        self.active_mission
            .as_ref()
            .and_then(|id| self.missions.get(id))
            .filter(|m| !m.state.phase.is_finished())
    }

    pub fn active_mut(&mut self) -> Option<&mut MissionRecord> {
        let id = self.active_mission.clone()?;
        self.missions.get_mut(&id).filter(|m| !m.state.phase.is_finished())
    }

    /// After a restart: executing missions go back to replanning, missions
    /// caught mid-planning are aborted.
    pub fn resume_after_restart(&mut self) {
        for m in self.missions.values_mut() {
            if !m.state.phase.is_finished() {
                m.state.resume_after_restart();
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("store serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, StoreError> {
        let store: FleetStore = serde_json::from_str(text).map_err(|e| StoreError::CorruptSnapshot(e.to_string()))?;
        store.check()?;
        Ok(store)
    }

    fn check(&self) -> Result<(), StoreError> {
        let mut names = std::collections::BTreeSet::new();
        for r in &self.robots {
            r.validate().map_err(|e| StoreError::CorruptSnapshot(e.to_string()))?;
            if !names.insert(&r.name) {
                return Err(StoreError::CorruptSnapshot(format!("robot {} listed twice", r.name)));
            }
        }
        for (id, d) in &self.plans {
            validate_dag(&d.plan).map_err(|e| StoreError::CorruptSnapshot(format!("plan {id}: {e}")))?;
        }
        for (id, m) in &self.missions {
            validate_dag(&m.state.plan).map_err(|e| StoreError::CorruptSnapshot(format!("mission {id}: {e}")))?;
        }
        Ok(())
    }

    /// Writes the snapshot atomically: temp file in the same directory,
    /// fsync, rename.
    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        let io = |e: std::io::Error| StoreError::Io(format!("{}: {e}", path.display()));
        let dir = match path.parent() {
            Some(d) if !d.as_os_str().is_empty() => d,
            _ => Path::new("."),
        };
        fs::create_dir_all(dir).map_err(io)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
        tmp.write_all(self.to_json().as_bytes()).map_err(io)?;
        tmp.as_file().sync_all().map_err(io)?;
        tmp.persist(path).map_err(|e| io(e.error))?;
        Ok(())
    }

    /// Loads a snapshot; a missing file is an empty store.
    pub fn load(path: &Path) -> Result<Self, StoreError> {
        match fs::read_to_string(path) {
            Ok(text) => Self::from_json(&text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::new()),
            Err(e) => Err(StoreError::Io(format!("{}: {e}", path.display()))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TaskStatus;
    use crate::rules::FleetRules;
    use crate::scheduling::Phase;

    fn services() -> Services {
        Services::from_rules(FleetRules::default(), None, 7)
    }

    fn store() -> FleetStore {
        let mut s = FleetStore::new();
        s.register_robot(RobotSpec::native("hsr", ["navigation", "manipulation"], 7101)).unwrap();
        s.register_robot(RobotSpec::native("locobot", ["navigation"], 7102)).unwrap();
        s
    }

    #[test]
    fn robots_unique_and_validated() {
        let mut s = store();
        assert!(matches!(
            s.register_robot(RobotSpec::native("hsr", ["navigation"], 1)),
            Err(StoreError::DuplicateRobot(_))
        ));
        assert!(matches!(
            s.register_robot(RobotSpec::native("x", Vec::<String>::new(), 1)),
            Err(StoreError::Schema(_))
        ));
        assert_eq!(s.remove_robot("locobot").unwrap().name, "locobot");
        assert!(matches!(s.remove_robot("locobot"), Err(StoreError::NotFound { .. })));
    }

    #[test]
    fn goals_and_world() {
        let mut s = store();
        s.add_statement("the cups are in the kitchen", StatementSource::Operator, 0).unwrap();
        assert_eq!(s.world.len(), 1);
        let g = s.add_goal("Bring the first cup to the hallway").unwrap();
        assert_eq!(g.id, "g1");
        assert!(matches!(s.remove_goal("g9"), Err(StoreError::NotFound { .. })));
        s.remove_goal("g1").unwrap();
        assert_eq!(s.add_goal("again").unwrap().id, "g2");
        assert!(s.add_goal("  ").is_err());
    }

    #[test]
    fn plan_requires_goals_and_robots() {
        let sv = services();
        let mut empty = FleetStore::new();
        assert_eq!(
            empty.create_plan(Strategy::PerGoal, AllocatorChoice::Milp, &sv).unwrap_err(),
            StoreError::NoRobots
        );
        let mut s = store();
        assert_eq!(s.create_plan(Strategy::PerGoal, AllocatorChoice::Milp, &sv).unwrap_err(), StoreError::NoGoals);
        s.add_goal("something nobody knows how to do").unwrap();
        assert!(matches!(
            s.create_plan(Strategy::PerGoal, AllocatorChoice::Milp, &sv),
            Err(StoreError::Planning(_))
        ));
        assert!(s.plans.is_empty());
    }

    #[test]
    fn manual_tasks() {
        let sv = services();
        let mut s = store();
        let id = s.create_plan(Strategy::Manual, AllocatorChoice::Milp, &sv).unwrap().plan.id.clone();
        let a = s.add_task(&id, "Pick up the cup", &[], None, &sv.lexicon).unwrap();
        assert_eq!(a.id, "pick-up-the-cup");
        assert_eq!(a.assigned_robot.as_deref(), Some("hsr"));
        let b = s.add_task(&id, "Go to the hallway", std::slice::from_ref(&a.id), None, &sv.lexicon).unwrap();
        assert_eq!(b.assigned_robot.as_deref(), Some("locobot"));
        let c = s.add_task(&id, "Go to the hallway", &[], Some("hsr"), &sv.lexicon).unwrap();
        assert_eq!(c.id, "go-to-the-hallway-2");

        let before = s.clone();
        assert!(matches!(
            s.add_task(&id, "Wave", &["nope".into()], None, &sv.lexicon),
            Err(StoreError::Invalid(_))
        ));
        assert!(matches!(
            s.add_task("p9", "Wave", &[], None, &sv.lexicon),
            Err(StoreError::NotFound { .. })
        ));
        assert!(matches!(
            s.add_task(&id, "Wave", &[], Some("ghost"), &sv.lexicon),
            Err(StoreError::NotFound { .. })
        ));
        assert_eq!(s, before);
    }

    #[test]
    fn manual_cycle_leaves_store_unchanged() {
        let sv = services();
        let mut s = store();
        let id = s.create_plan(Strategy::Manual, AllocatorChoice::Milp, &sv).unwrap().plan.id.clone();
        s.add_task(&id, "a", &[], None, &sv.lexicon).unwrap();
        let before = s.clone();
        let err = s.add_task(&id, "b", &["b".into()], None, &sv.lexicon).unwrap_err();
        assert!(matches!(err, StoreError::Cycle(_)), "{err:?}");
        assert_eq!(s, before);
    }

    #[test]
    fn one_active_mission() {
        let sv = services();
        let mut s = store();
        s.add_goal("Find a cup").unwrap();
        let p = s.create_plan(Strategy::PerGoal, AllocatorChoice::Milp, &sv).unwrap().plan.id.clone();
        let m = s.start_mission(&p, 0).unwrap();
        assert_eq!(s.missions[&m].state.phase, Phase::Executing);
        assert_eq!(s.start_mission(&p, 0).unwrap_err(), StoreError::MissionActive(m.clone()));
        s.active_mut().unwrap().state.abort("test");
        assert!(s.start_mission(&p, 0).is_ok());
    }

    #[test]
    fn snapshot_roundtrip_and_corruption() {
        let sv = services();
        let mut s = store();
        s.add_goal("Find a cup").unwrap();
        s.add_statement("the cups are in the kitchen", StatementSource::Operator, 5).unwrap();
        let p = s.create_plan(Strategy::BigDag, AllocatorChoice::RoundRobin, &sv).unwrap().plan.id.clone();
        s.start_mission(&p, 10).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state").join("fleet.json");
        s.save(&path).unwrap();
        assert_eq!(FleetStore::load(&path).unwrap(), s);

        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(FleetStore::load(&path), Err(StoreError::CorruptSnapshot(_))));
        assert_eq!(FleetStore::load(&dir.path().join("absent.json")).unwrap(), FleetStore::new());
    }

    #[test]
    fn restore_mid_mission_replans() {
        let sv = services();
        let mut s = store();
        s.add_goal("Find a cup").unwrap();
        let p = s.create_plan(Strategy::PerGoal, AllocatorChoice::Milp, &sv).unwrap().plan.id.clone();
        s.start_mission(&p, 0).unwrap();
        let restored = {
            let mut r = FleetStore::from_json(&s.to_json()).unwrap();
            r.resume_after_restart();
            r
        };
        let m = restored.active().unwrap();
        assert_eq!(m.state.phase, Phase::Replanning);
        assert!(m.state.plan.tasks.values().all(|t| t.status == TaskStatus::Pending));
    }
}
