//! Idle-time sweeps: planner strategy × allocator × fleet, under a virtual
//! clock with fixed-duration tasks that always succeed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::{CapabilityLexicon, LlmAllocator, SeededStubAllocator};
use crate::model::{Goal, RobotSpec, Strategy, WorldState};
use crate::planning::{RecipeBackend, RecipeBook};
use crate::rules::DEFAULT_RECIPES;
use crate::scheduling::{
    idle_percentage, run_mission, AllocatorChoice, MissionContext, MissionState, Phase, SimDispatcher, SimTime,
};

pub const DEFAULT_SCENARIO: &str = include_str!("../scenarios/default.yaml");

pub const PLANNER_ORDER: [Strategy; 3] = [Strategy::Monolithic, Strategy::BigDag, Strategy::PerGoal];
pub const ALLOCATOR_ORDER: [AllocatorChoice; 3] = [AllocatorChoice::Milp, AllocatorChoice::LlmStub, AllocatorChoice::RoundRobin];

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario: {0}")]
    Parse(String),
    #[error("scenario: {0}")]
    Invalid(String),
    #[error("case {case}, seed {seed}, {planner}/{allocator}: {reason}")]
    Run {
        case: String,
        seed: u64,
        planner: Strategy,
        allocator: AllocatorChoice,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioRobot {
    pub name: String,
    pub capabilities: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Case {
    pub label: String,
    pub robots: Vec<ScenarioRobot>,
    /// Pool the goals of each run are drawn from.
    pub goals: Vec<String>,
    /// Goals per run; defaults to the whole pool.
    #[serde(default)]
    pub goal_count: Option<usize>,
}

fn default_seeds() -> Vec<u64> {
    (1..=5).collect()
}

fn default_duration() -> f64 {
    1.0
}

fn default_planners() -> Vec<Strategy> {
    PLANNER_ORDER.to_vec()
}

fn default_allocators() -> Vec<AllocatorChoice> {
    ALLOCATOR_ORDER.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Recipe file, relative to the scenario file. The shipped ruleset
    /// when absent.
    #[serde(default)]
    pub ruleset: Option<String>,
    #[serde(default = "default_planners")]
    pub planners: Vec<Strategy>,
    #[serde(default = "default_allocators")]
    pub allocators: Vec<AllocatorChoice>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Seconds per task.
    #[serde(default = "default_duration")]
    pub task_duration: f64,
    pub cases: Vec<Case>,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_yaml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        Ok(s)
    }

    /// Reads `path` and the ruleset it names.
    pub fn load(path: &Path) -> Result<(Self, RecipeBook), ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Parse(format!("{}: {e}", path.display())))?;
        let s = Scenario::parse(&text)?;
        let book = match &s.ruleset {
            None => RecipeBook::parse(DEFAULT_RECIPES),
            Some(r) => {
                let p = path.parent().unwrap_or(Path::new(".")).join(r);
                let text = std::fs::read_to_string(&p).map_err(|e| ScenarioError::Parse(format!("{}: {e}", p.display())))?;
                RecipeBook::parse(&text)
            }
        }
        .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        s.validate(&book)?;
        Ok((s, book))
    }

    pub fn default_with_book() -> (Self, RecipeBook) {
        let s = Scenario::parse(DEFAULT_SCENARIO).expect("default scenario parses");
        let book = RecipeBook::parse(DEFAULT_RECIPES).expect("default recipes parse");
        (s, book)
    }

    pub fn validate(&self, book: &RecipeBook) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.cases.is_empty() {
            return bad("at least one case is required".into());
        }
        if !self.task_duration.is_finite() || self.task_duration <= 0.0 {
            return bad(format!("task_duration must be positive, got {}", self.task_duration));
        }
        if self.allocators.contains(&AllocatorChoice::Llm) {
            return bad("the llm allocator needs a live endpoint; sweeps use llm-stub".into());
        }
        if self.planners.contains(&Strategy::Manual) {
            return bad("the manual strategy cannot be swept".into());
        }
        for case in &self.cases {
            if case.robots.is_empty() {
                return bad(format!("case {:?} has no robots", case.label));
            }
            let names: BTreeSet<&str> = case.robots.iter().map(|r| r.name.as_str()).collect();
            if names.len() != case.robots.len() {
                return bad(format!("case {:?} repeats a robot name", case.label));
            }
            if case.goals.is_empty() {
                return bad(format!("case {:?} has no goals", case.label));
            }
            let n = case.goal_count.unwrap_or(case.goals.len());
            if n == 0 || n > case.goals.len() {
                return bad(format!(
                    "case {:?}: goal_count {n} must be between 1 and the pool size {}",
                    case.label,
                    case.goals.len()
                ));
            }
            for g in &case.goals {
                if book.find(g, &[]).is_none() {
                    return bad(format!("case {:?}: no recipe matches goal {g:?}", case.label));
                }
            }
        }
        Ok(())
    }
}

impl Case {
    fn fleet(&self) -> Vec<RobotSpec> {
        self.robots
            .iter()
            .enumerate()
            .map(|(i, r)| RobotSpec::native(&r.name, r.capabilities.iter().cloned(), 8000 + i as u16))
            .collect()
    }

    /// The seed's goal draw, kept in pool order.
    pub fn goals_for(&self, seed: u64) -> Vec<Goal> {
        let n = self.goal_count.unwrap_or(self.goals.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = sample(&mut rng, self.goals.len(), n).into_vec();
        picked.sort_unstable();
        picked
            .into_iter()
            .enumerate()
            .map(|(k, i)| Goal::new(format!("g{}", k + 1), self.goals[i].clone()).expect("validated goal"))
            .collect()
    }
}

/// Runs one mission under the virtual clock and returns its idle
/// percentage.
pub fn run_once(
    robots: &[RobotSpec],
    goals: Vec<Goal>,
    planner: Strategy,
    allocator: AllocatorChoice,
    book: &RecipeBook,
    seed: u64,
    task_duration: f64,
) -> Result<Ratio<i64>, String> {
    let backend = RecipeBackend::new(book.clone());
    let stub = LlmAllocator::new(Arc::new(SeededStubAllocator::new(seed)));
    let lexicon = CapabilityLexicon::default();
    let ctx = MissionContext {
        robots,
        planner: &backend,
        llm_allocator: Some(&stub),
        lexicon: &lexicon,
    };
    let duration = SimTime::from_secs_f64(task_duration);
    let mut sim = SimDispatcher::uniform(robots.iter().map(|r| r.name.clone()), duration);
    let state = MissionState::new("sweep", goals, planner, allocator);
    let mut world = WorldState::new();
    let done = run_mission(state, &ctx, &mut world, &mut sim);
    if done.phase != Phase::Done {
        return Err(done.diagnostic.unwrap_or_else(|| format!("mission ended {}", done.phase)));
    }
    idle_percentage(&done.trace, robots.len()).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellStats {
    pub values: Vec<Ratio<i64>>,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
}

impl CellStats {
    pub fn from_values(values: Vec<Ratio<i64>>) -> Self {
        let n = values.len();
        if n == 0 {
            return CellStats {
                values,
                mean: 0.0,
                std: 0.0,
            };
        }
        let sum = values.iter().fold(Ratio::zero(), |a, v| a + v);
        let mean_exact = sum / Ratio::from_integer(n as i64);
        let mean = mean_exact.to_f64().unwrap_or(f64::NAN);
        let std = if n < 2 {
            0.0
        } else {
            let ss: f64 = values
                .iter()
                .map(|v| (v - mean_exact).to_f64().unwrap_or(f64::NAN).powi(2))
                .sum();
            (ss / (n - 1) as f64).sqrt()
        };
        CellStats { values, mean, std }
    }

    pub fn cell(&self) -> String {
        format!("{:.1} ± {:.1}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepResults {
    pub cases: Vec<String>,
    pub seeds: usize,
    /// (planner, allocator) → per-case statistics, in case order.
    pub cells: BTreeMap<(usize, usize), (Strategy, AllocatorChoice, Vec<CellStats>)>,
}

impl SweepResults {
    pub fn get(&self, planner: Strategy, allocator: AllocatorChoice, case: &str) -> Option<&CellStats> {
        let col = self.cases.iter().position(|c| c == case)?;
        self.cells
            .values()
            .find(|(p, a, _)| *p == planner && *a == allocator)
            .and_then(|(_, _, stats)| stats.get(col))
    }
}

fn rank<T: PartialEq>(order: &[T], x: &T) -> usize {
    order.iter().position(|o| o == x).unwrap_or(order.len())
}

pub fn run_sweep(scenario: &Scenario, book: &RecipeBook) -> Result<SweepResults, ScenarioError> {
    scenario.validate(book)?;
    let mut results = SweepResults {
        cases: scenario.cases.iter().map(|c| c.label.clone()).collect(),
        seeds: scenario.seeds.len(),
        cells: BTreeMap::new(),
    };
    let planners = PLANNER_ORDER.into_iter().filter(|p| scenario.planners.contains(p));
    for planner in planners {
        let allocators = ALLOCATOR_ORDER.into_iter().filter(|a| scenario.allocators.contains(a));
        for allocator in allocators {
            let mut per_case = Vec::new();
            for case in &scenario.cases {
                let fleet = case.fleet();
                let mut values = Vec::new();
                for &seed in &scenario.seeds {
                    let idle = run_once(
                        &fleet,
                        case.goals_for(seed),
                        planner,
                        allocator,
                        book,
                        seed,
                        scenario.task_duration,
                    )
                    .map_err(|reason| ScenarioError::Run {
                        case: case.label.clone(),
                        seed,
                        planner,
                        allocator,
                        reason,
                    })?;
                    values.push(idle);
                }
                per_case.push(CellStats::from_values(values));
            }
            let key = (rank(&PLANNER_ORDER, &planner), rank(&ALLOCATOR_ORDER, &allocator));
            results.cells.insert(key, (planner, allocator, per_case));
        }
    }
    Ok(results)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Markdown,
    Csv,
}

impl std::str::FromStr for TableFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "markdown" | "md" => Ok(TableFormat::Markdown),
            "csv" => Ok(TableFormat::Csv),
            other => Err(format!("unknown table format {other:?} (expected markdown or csv)")),
        }
    }
}

pub fn emit_table(results: &SweepResults, format: TableFormat) -> String {
    let mut out = String::new();
    match format {
        TableFormat::Markdown => {
            let mut header = vec!["Planner".to_string(), "Allocator".to_string()];
            header.extend(results.cases.iter().cloned());
            let _ = writeln!(out, "| {} |", header.join(" | "));
            let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
            for (planner, allocator, stats) in results.cells.values() {
                let mut row = vec![planner.to_string(), allocator.to_string()];
                row.extend(stats.iter().map(CellStats::cell));
                let _ = writeln!(out, "| {} |", row.join(" | "));
            }
            if !results.cells.is_empty() {
                let _ = writeln!(
                    out,
                    "\nIdle time percentage, mean ± sample std over {} seeds. Plans come from the deterministic recipe planner and llm-stub is a seeded stand-in, so values show the effect of plan structure rather than any language model's output.",
                    results.seeds
                );
            }
        }
        TableFormat::Csv => {
            out.push_str("planner,allocator,case,mean,std,seeds\n");
            for (planner, allocator, stats) in results.cells.values() {
                for (case, s) in results.cases.iter().zip(stats) {
                    let _ = writeln!(out, "{planner},{allocator},\"{case}\",{:.1},{:.1},{}", s.mean, s.std, s.values.len());
                }
            }
        }
    }
    out
}
