use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("profile: {0}")]
pub struct ProfileError(pub String);

/// How many attempts of a matching task fail before one succeeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureCount {
    Times(u32),
    Always,
}

impl Serialize for FailureCount {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            FailureCount::Times(n) => s.serialize_u32(*n),
            FailureCount::Always => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for FailureCount {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            N(u32),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::N(n) => Ok(FailureCount::Times(n)),
            Repr::Text(t) => match t.trim().to_lowercase().as_str() {
                "inf" | "infinite" | "infinity" | "always" | "∞" => Ok(FailureCount::Always),
                other => other
                    .parse()
                    .map(FailureCount::Times)
                    .map_err(|_| D::Error::custom(format!("invalid failure count {t:?}"))),
            },
        }
    }
}

fn default_duration() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkerProfile {
    pub robot_name: String,
    /// Seconds per task attempt.
    #[serde(default = "default_duration")]
    pub task_duration: f64,
    /// Description pattern (case-insensitive substring) to failure count.
    #[serde(default)]
    pub failure_script: BTreeMap<String, FailureCount>,
    /// Description pattern to statements reported after a success.
    #[serde(default)]
    pub discovery_script: BTreeMap<String, Vec<String>>,
}

impl WorkerProfile {
    pub fn new(robot_name: impl Into<String>) -> Self {
        WorkerProfile {
            robot_name: robot_name.into(),
            task_duration: default_duration(),
            failure_script: BTreeMap::new(),
            discovery_script: BTreeMap::new(),
        }
    }

    pub fn with_duration(mut self, secs: f64) -> Self {
        self.task_duration = secs;
        self
    }

    pub fn failing(mut self, pattern: &str, count: FailureCount) -> Self {
        self.failure_script.insert(pattern.to_string(), count);
        self
    }

    pub fn discovering<I, S>(mut self, pattern: &str, statements: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.discovery_script
            .insert(pattern.to_string(), statements.into_iter().map(Into::into).collect());
        self
    }

    pub fn parse(text: &str) -> Result<Self, ProfileError> {
        let profile: WorkerProfile = serde_yaml::from_str(text).map_err(|e| ProfileError(e.to_string()))?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        if self.robot_name.trim().is_empty() {
            return Err(ProfileError("robot_name must be nonempty".into()));
        }
        if !self.task_duration.is_finite() || self.task_duration < 0.0 {
            return Err(ProfileError(format!("task_duration must be >= 0, got {}", self.task_duration)));
        }
        Ok(())
    }
}

fn matches(pattern: &str, description: &str) -> bool {
    description.to_lowercase().contains(&pattern.to_lowercase())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Succeeded,
    Failed(String),
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Succeeded => f.write_str("succeeded"),
            Outcome::Failed(d) => write!(f, "failed: {d}"),
        }
    }
}

/// Scripted behavior of one simulated robot. Failure counts are kept per
/// task id, and each task's discoveries are reported once.
#[derive(Debug, Clone)]
pub struct WorkerScript {
    profile: WorkerProfile,
    failures: HashMap<String, u32>,
    reported: BTreeSet<String>,
}

impl WorkerScript {
    pub fn new(profile: WorkerProfile) -> Self {
        WorkerScript {
            profile,
            failures: HashMap::new(),
            reported: BTreeSet::new(),
        }
    }

    pub fn profile(&self) -> &WorkerProfile {
        &self.profile
    }

    pub fn decide(&mut self, task_id: &str, description: &str) -> Outcome {
        let limit = self
            .profile
            .failure_script
            .iter()
            .find(|(p, _)| matches(p, description))
            .map(|(_, c)| *c);
        let failed = self.failures.entry(task_id.to_string()).or_default();
        let fail = match limit {
            None => false,
            Some(FailureCount::Always) => true,
            Some(FailureCount::Times(n)) => *failed < n,
        };
        if fail {
            *failed += 1;
            Outcome::Failed(format!("scripted failure #{failed}"))
        } else {
            Outcome::Succeeded
        }
    }

    pub fn discoveries(&mut self, task_id: &str, description: &str) -> Vec<String> {
        if self.reported.contains(task_id) {
            return Vec::new();
        }
        let found: Vec<String> = self
            .profile
            .discovery_script
            .iter()
            .filter(|(p, _)| matches(p, description))
            .flat_map(|(_, s)| s.iter().cloned())
            .collect();
        if !found.is_empty() {
            self.reported.insert(task_id.to_string());
        }
        found
    }
}
