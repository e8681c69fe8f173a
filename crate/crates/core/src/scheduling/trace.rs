use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::{Add, Sub};
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::model::Plan;

/// Event time in seconds since mission start, kept exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(pub Ratio<i64>);

impl SimTime {
    pub fn zero() -> Self {
        SimTime(Ratio::zero())
    }

    pub fn from_int(secs: i64) -> Self {
        SimTime(Ratio::from_integer(secs))
    }

    pub fn new(numer: i64, denom: i64) -> Self {
        SimTime(Ratio::new(numer, denom))
    }

    pub fn from_millis(ms: u64) -> Self {
        SimTime(Ratio::new(ms as i64, 1000))
    }

    /// Rounds to whole milliseconds.
    pub fn from_secs_f64(secs: f64) -> Self {
        SimTime::from_millis((secs.max(0.0) * 1000.0).round() as u64)
    }

    pub fn as_f64(self) -> f64 {
        self.0.to_f64().unwrap_or(0.0)
    }

    pub fn as_millis(self) -> u64 {
        (self.0 * Ratio::from_integer(1000)).to_integer().max(0) as u64
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_integer() {
            write!(f, "{}", self.0.numer())
        } else {
            write!(f, "{}/{}", self.0.numer(), self.0.denom())
        }
    }
}

impl FromStr for SimTime {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        let bad = || format!("invalid time {s:?}");
        if let Some((n, d)) = s.split_once('/') {
            let n: i64 = n.trim().parse().map_err(|_| bad())?;
            let d: i64 = d.trim().parse().map_err(|_| bad())?;
            if d <= 0 {
                return Err(bad());
            }
            Ok(SimTime::new(n, d))
        } else {
            s.parse::<i64>().map(SimTime::from_int).map_err(|_| bad())
        }
    }
}

impl Serialize for SimTime {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SimTime {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Int(i64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Int(i) => Ok(SimTime::from_int(i)),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Dispatched,
    Started,
    Succeeded,
    Failed,
    ReplanRequested,
    Cancelled,
}

impl EventKind {
    pub fn is_terminal(self) -> bool {
        matches!(self, EventKind::Succeeded | EventKind::Failed | EventKind::Cancelled)
    }
}

/// One trace record. Exported field order: time, task_id, robot, kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub time: SimTime,
    pub task_id: String,
    pub robot: String,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub events: Vec<TraceEvent>,
}

impl ExecutionTrace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an event. Times never go backwards: an earlier time is
    /// clamped to the last recorded one.
    pub fn record(&mut self, time: SimTime, task_id: &str, robot: &str, kind: EventKind) {
        let time = self.events.last().map_or(time, |e| e.time.max(time));
        self.events.push(TraceEvent {
            time,
            task_id: task_id.to_string(),
            robot: robot.to_string(),
            kind,
        });
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    pub fn count(&self, task_id: &str, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind && e.task_id == task_id).count()
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("trace events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, String> {
        let mut events = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            events.push(serde_json::from_str(line).map_err(|e| format!("line {}: {e}", i + 1))?);
        }
        Ok(ExecutionTrace { events })
    }

    /// Closed running intervals per robot, in start order.
    pub fn busy_intervals(&self) -> BTreeMap<String, Vec<(SimTime, SimTime, String)>> {
        let mut open: BTreeMap<(&str, &str), SimTime> = BTreeMap::new();
        let mut out: BTreeMap<String, Vec<(SimTime, SimTime, String)>> = BTreeMap::new();
        for e in &self.events {
            match e.kind {
                EventKind::Started => {
                    open.insert((&e.robot, &e.task_id), e.time);
                }
                k if k.is_terminal() => {
                    if let Some(start) = open.remove(&(e.robot.as_str(), e.task_id.as_str())) {
                        out.entry(e.robot.clone()).or_default().push((start, e.time, e.task_id.clone()));
                    }
                }
                _ => {}
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdleError {
    #[error("trace is incomplete: task {0} has no terminal event")]
    IncompleteTrace(String),
    #[error("robot count must be at least 1")]
    NoRobots,
    #[error("trace names {found} robots but the fleet has {robot_count}")]
    TooManyRobots { found: usize, robot_count: usize },
}

/// Share of robot-time spent idle, as an exact percentage.
///
/// Idle time is measured against the global makespan (mission start to the
/// last terminal event); robots that never ran a task count as idle for
/// the whole makespan.
pub fn idle_percentage(trace: &ExecutionTrace, robot_count: usize) -> Result<Ratio<i64>, IdleError> {
    if robot_count == 0 {
        return Err(IdleError::NoRobots);
    }
    let mut last: BTreeMap<&str, EventKind> = BTreeMap::new();
    let mut robots = BTreeSet::new();
    let mut makespan = SimTime::zero();
    for e in &trace.events {
        if e.kind != EventKind::ReplanRequested {
            last.insert(&e.task_id, e.kind);
        }
        if !e.robot.is_empty() {
            robots.insert(e.robot.as_str());
        }
        if e.kind.is_terminal() {
            makespan = makespan.max(e.time);
        }
    }
    if let Some((task, _)) = last.iter().find(|(_, k)| !k.is_terminal()) {
        return Err(IdleError::IncompleteTrace(task.to_string()));
    }
    if robots.len() > robot_count {
        return Err(IdleError::TooManyRobots {
            found: robots.len(),
            robot_count,
        });
    }
    if makespan.0.is_zero() {
        return Ok(Ratio::zero());
    }
    let busy: Ratio<i64> = trace
        .busy_intervals()
        .values()
        .flatten()
        .map(|(s, e, _)| (*e - *s).0)
        .sum();
    let total = makespan.0 * Ratio::from_integer(robot_count as i64);
    Ok(Ratio::from_integer(100) * (total - busy) / total)
}

/// Renders a percentage with one decimal.
pub fn format_percent(p: Ratio<i64>) -> String {
    format!("{:.1}", p.to_f64().unwrap_or(f64::NAN))
}

/// Checks the execution-safety properties of a trace against the plan that
/// produced it: every dispatch follows succeeded events for all of the
/// task's dependencies, no robot runs two tasks at once, and no task fails
/// more than `max_failures` times.
pub fn check_trace(trace: &ExecutionTrace, plan: &Plan, max_failures: usize) -> Result<(), String> {
    let mut succeeded: BTreeSet<&str> = BTreeSet::new();
    let mut failures: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, e) in trace.events.iter().enumerate() {
        if i > 0 && trace.events[i - 1].time > e.time {
            return Err(format!("event {i} goes back in time"));
        }
        match e.kind {
            EventKind::Dispatched => {
                let task = plan
                    .get(&e.task_id)
                    .ok_or_else(|| format!("trace names task {} missing from the plan", e.task_id))?;
                if let Some(dep) = task.depends_on.iter().find(|d| !succeeded.contains(d.as_str())) {
                    return Err(format!("{} dispatched at {} before {dep} succeeded", e.task_id, e.time));
                }
            }
            EventKind::Succeeded => {
                succeeded.insert(&e.task_id);
            }
            EventKind::Failed => {
                let n = failures.entry(&e.task_id).or_default();
                *n += 1;
                if *n > max_failures {
                    return Err(format!("{} failed {n} times", e.task_id));
                }
            }
            _ => {}
        }
    }
    for (robot, intervals) in trace.busy_intervals() {
        let mut sorted = intervals;
        sorted.sort();
        for w in sorted.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(format!("robot {robot} runs {} and {} at the same time", w[0].2, w[1].2));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(n: i64) -> SimTime {
        SimTime::from_int(n)
    }

    fn unit(trace: &mut ExecutionTrace, start: i64, task: &str, robot: &str) {
        trace.record(t(start), task, robot, EventKind::Dispatched);
        trace.record(t(start), task, robot, EventKind::Started);
        trace.record(t(start + 1), task, robot, EventKind::Succeeded);
    }

    fn ratio(n: i64) -> Ratio<i64> {
        Ratio::from_integer(n)
    }

    #[test]
    fn chain_on_one_of_two_robots() {
        let mut tr = ExecutionTrace::new();
        unit(&mut tr, 0, "a", "r1");
        unit(&mut tr, 1, "b", "r1");
        assert_eq!(idle_percentage(&tr, 2).unwrap(), ratio(50));
    }

    #[test]
    fn balanced_independent_tasks() {
        let mut tr = ExecutionTrace::new();
        for slot in 0..2 {
            for r in 0..5 {
                let mut one = ExecutionTrace::new();
                unit(&mut one, slot, &format!("t{slot}{r}"), &format!("r{r}"));
                tr.events.extend(one.events);
            }
        }
        tr.events.sort_by_key(|e| e.time);
        assert_eq!(idle_percentage(&tr, 5).unwrap(), ratio(0));
    }

    #[test]
    fn ten_task_chain_on_five_robots() {
        let mut tr = ExecutionTrace::new();
        for i in 0..10 {
            unit(&mut tr, i, &format!("t{i}"), &format!("r{}", i % 5));
        }
        assert_eq!(idle_percentage(&tr, 5).unwrap(), ratio(80));
    }

    #[test]
    fn idle_errors() {
        let mut tr = ExecutionTrace::new();
        assert_eq!(idle_percentage(&tr, 3).unwrap(), ratio(0));
        assert_eq!(idle_percentage(&tr, 0), Err(IdleError::NoRobots));
        tr.record(t(0), "a", "r1", EventKind::Dispatched);
        tr.record(t(0), "a", "r1", EventKind::Started);
        assert_eq!(idle_percentage(&tr, 1), Err(IdleError::IncompleteTrace("a".into())));
        tr.record(t(1), "a", "r1", EventKind::Succeeded);
        unit(&mut tr, 1, "b", "r2");
        assert!(matches!(idle_percentage(&tr, 1), Err(IdleError::TooManyRobots { found: 2, .. })));
    }

    #[test]
    fn failed_attempts_count_as_busy() {
        let mut tr = ExecutionTrace::new();
        tr.record(t(0), "a", "r1", EventKind::Dispatched);
        tr.record(t(0), "a", "r1", EventKind::Started);
        tr.record(t(1), "a", "r1", EventKind::Failed);
        tr.record(t(1), "a", "r1", EventKind::Dispatched);
        tr.record(t(1), "a", "r1", EventKind::Started);
        tr.record(t(2), "a", "r1", EventKind::Succeeded);
        assert_eq!(idle_percentage(&tr, 2).unwrap(), ratio(50));
    }

    #[test]
    fn time_text_forms() {
        assert_eq!("7/2".parse::<SimTime>().unwrap(), SimTime::new(7, 2));
        assert_eq!(SimTime::new(4, 2).to_string(), "2");
        assert_eq!(SimTime::new(1, 3).to_string(), "1/3");
        assert_eq!(SimTime::from_secs_f64(0.25), SimTime::new(1, 4));
        assert!("1/0".parse::<SimTime>().is_err());
        let v: SimTime = serde_json::from_str("3").unwrap();
        assert_eq!(v, t(3));
    }

    #[test]
    fn jsonl_field_order_and_round_trip() {
        let mut tr = ExecutionTrace::new();
        tr.record(SimTime::new(1, 2), "a", "r1", EventKind::ReplanRequested);
        let text = tr.to_jsonl();
        assert_eq!(text, "{\"time\":\"1/2\",\"task_id\":\"a\",\"robot\":\"r1\",\"kind\":\"replan_requested\"}\n");
        assert_eq!(ExecutionTrace::from_jsonl(&text).unwrap(), tr);
    }

    #[test]
    fn record_never_goes_backwards() {
        let mut tr = ExecutionTrace::new();
        tr.record(t(5), "a", "r", EventKind::Dispatched);
        tr.record(t(3), "a", "r", EventKind::Started);
        assert_eq!(tr.events[1].time, t(5));
    }

    proptest! {
        #[test]
        fn idle_is_scale_invariant(
            jobs in proptest::collection::vec((0usize..3, 1i64..5, 0i64..3), 1..12),
            num in 1i64..20,
            den in 1i64..20,
        ) {
            // Build a sequential-per-robot trace from (robot, duration, gap) triples.
            let mut clock = [0i64; 3];
            let mut raw = Vec::new();
            for (i, (r, d, gap)) in jobs.iter().enumerate() {
                let start = clock[*r] + gap;
                clock[*r] = start + d;
                raw.push((start, start + d, format!("t{i}"), format!("r{r}")));
            }
            let build = |scale: Ratio<i64>| {
                let mut evs = Vec::new();
                for (s, e, task, robot) in &raw {
                    let s = SimTime(Ratio::from_integer(*s) * scale);
                    let e = SimTime(Ratio::from_integer(*e) * scale);
                    evs.push(TraceEvent { time: s, task_id: task.clone(), robot: robot.clone(), kind: EventKind::Dispatched });
                    evs.push(TraceEvent { time: s, task_id: task.clone(), robot: robot.clone(), kind: EventKind::Started });
                    evs.push(TraceEvent { time: e, task_id: task.clone(), robot: robot.clone(), kind: EventKind::Succeeded });
                }
                evs.sort_by_key(|e| e.time);
                ExecutionTrace { events: evs }
            };
            let base = idle_percentage(&build(Ratio::from_integer(1)), 3).unwrap();
            let scaled = idle_percentage(&build(Ratio::new(num, den)), 3).unwrap();
            prop_assert_eq!(base, scaled);
            prop_assert!(base >= Ratio::from_integer(0) && base <= Ratio::from_integer(100));
        }
    }
}
