//! The fleet-rules directory: capability lexicon, recipe ruleset and prompt
//! templates. Files that are absent fall back to the shipped defaults.
//!
//! ```text
//! <dir>/lexicon.txt
//! <dir>/recipes.yaml
//! <dir>/prompts/plan_per_goal.txt
//! <dir>/prompts/plan_big_dag.txt
//! <dir>/prompts/plan_monolithic.txt
//! <dir>/prompts/allocate.txt
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::allocation::{CapabilityLexicon, LexiconError, DEFAULT_ALLOCATION_TEMPLATE};
use crate::planning::{PromptTemplates, RecipeBook, RecipeError};

pub const DEFAULT_RECIPES: &str = include_str!("../rules/recipes.yaml");

#[derive(Debug, Error)]
pub enum RulesError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Lexicon { path: PathBuf, source: LexiconError },
    #[error("{path}: {source}")]
    Recipes { path: PathBuf, source: RecipeError },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FleetRules {
    pub lexicon: CapabilityLexicon,
    pub recipes: RecipeBook,
    pub prompts: PromptTemplates,
    pub allocation_prompt: String,
}

impl Default for FleetRules {
    fn default() -> Self {
        FleetRules {
            lexicon: CapabilityLexicon::default(),
            recipes: RecipeBook::parse(DEFAULT_RECIPES).expect("default recipes parse"),
            prompts: PromptTemplates::default(),
            allocation_prompt: DEFAULT_ALLOCATION_TEMPLATE.to_string(),
        }
    }
}

fn read_optional(path: &Path) -> Result<Option<String>, RulesError> {
    match fs::read_to_string(path) {
        Ok(text) => Ok(Some(text)),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(source) => Err(RulesError::Io {
            path: path.to_path_buf(),
            source,
        }),
    }
}

impl FleetRules {
    pub fn load(dir: &Path) -> Result<Self, RulesError> {
        let mut rules = FleetRules::default();
        let lex_path = dir.join("lexicon.txt");
        if let Some(text) = read_optional(&lex_path)? {
            rules.lexicon = CapabilityLexicon::parse(&text).map_err(|source| RulesError::Lexicon {
                path: lex_path.clone(),
                source,
            })?;
        }
        let recipe_path = dir.join("recipes.yaml");
        if let Some(text) = read_optional(&recipe_path)? {
            rules.recipes = RecipeBook::parse(&text).map_err(|source| RulesError::Recipes {
                path: recipe_path.clone(),
                source,
            })?;
        }
        let prompts = dir.join("prompts");
        for (file, slot) in [
            ("plan_per_goal.txt", &mut rules.prompts.per_goal),
            ("plan_big_dag.txt", &mut rules.prompts.big_dag),
            ("plan_monolithic.txt", &mut rules.prompts.monolithic),
            ("allocate.txt", &mut rules.allocation_prompt),
        ] {
            if let Some(text) = read_optional(&prompts.join(file))? {
                *slot = text;
            }
        }
        Ok(rules)
    }

    /// Loads from `dir` when given, otherwise returns the defaults.
    pub fn load_or_default(dir: Option<&Path>) -> Result<Self, RulesError> {
        match dir {
            Some(d) => FleetRules::load(d),
            None => Ok(FleetRules::default()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_dir_gives_defaults() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(FleetRules::load(dir.path()).unwrap(), FleetRules::default());
    }

    #[test]
    fn files_override_defaults() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("lexicon.txt"), "fly -> flight\n").unwrap();
        fs::create_dir(dir.path().join("prompts")).unwrap();
        fs::write(dir.path().join("prompts/plan_monolithic.txt"), "Plan {goals}").unwrap();
        let rules = FleetRules::load(dir.path()).unwrap();
        assert_eq!(rules.lexicon.entries().len(), 1);
        assert_eq!(rules.prompts.monolithic, "Plan {goals}");
        assert_eq!(rules.prompts.per_goal, PromptTemplates::default().per_goal);
    }

    #[test]
    fn bad_files_name_their_path() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("recipes.yaml"), "- goal_pattern: x\n  subtasks: []\n").unwrap();
        let err = FleetRules::load(dir.path()).unwrap_err().to_string();
        assert!(err.contains("recipes.yaml"), "{err}");
    }

    #[test]
    fn shipped_directory_matches_defaults() {
        let shipped = Path::new(env!("CARGO_MANIFEST_DIR")).join("rules");
        assert_eq!(FleetRules::load(&shipped).unwrap(), FleetRules::default());
    }
}
