//! The fleet manager: registry, goals, world state, missions, and the
//! line protocol endpoint for robotctl and workers.

mod server;
mod store;

use std::sync::Arc;

pub use server::{start, DeployCommand, RunningServer, ServerConfig};
pub use store::{DraftPlan, FleetStore, MissionRecord, StoreError};

use crate::allocation::{CapabilityLexicon, LlmAllocator, SeededStubAllocator};
use crate::llm::ChatBackend;
use crate::model::RobotSpec;
use crate::planning::{LlmPlanner, PlanBackend, RecipeBackend};
use crate::rules::FleetRules;
use crate::scheduling::{AllocatorChoice, MissionContext};

/// Planner and allocators available to missions.
pub struct Services {
    pub rules: FleetRules,
    pub lexicon: CapabilityLexicon,
    pub planner: Box<dyn PlanBackend>,
    /// Backs the llm allocator choice; absent without an endpoint.
    pub llm: Option<LlmAllocator>,
    /// Backs the llm-stub allocator choice.
    pub stub: LlmAllocator,
}

impl Services {
    /// Recipe planning from the rules directory. `llm` enables the llm
    /// allocator; `seed` drives the llm-stub allocator.
    pub fn from_rules(rules: FleetRules, llm: Option<Arc<dyn ChatBackend>>, seed: u64) -> Self {
        let allocator = |backend: Arc<dyn ChatBackend>| {
            let mut a = LlmAllocator::new(backend);
            a.template = rules.allocation_prompt.clone();
            a
        };
        Services {
            lexicon: rules.lexicon.clone(),
            planner: Box::new(RecipeBackend::new(rules.recipes.clone())),
            llm: llm.map(allocator),
            stub: allocator(Arc::new(SeededStubAllocator::new(seed))),
            rules,
        }
    }

    /// Plans with the chat model instead of the recipe ruleset.
    pub fn with_llm_planner(mut self, backend: Arc<dyn ChatBackend>) -> Self {
        self.planner = Box::new(LlmPlanner::new(backend, self.rules.prompts.clone()));
        self
    }

    pub fn context<'a>(&'a self, robots: &'a [RobotSpec], choice: AllocatorChoice) -> MissionContext<'a> {
        MissionContext {
            robots,
            planner: self.planner.as_ref(),
            llm_allocator: match choice {
                AllocatorChoice::Llm => self.llm.as_ref(),
                AllocatorChoice::LlmStub => Some(&self.stub),
                _ => None,
            },
            lexicon: &self.lexicon,
        }
    }
}
