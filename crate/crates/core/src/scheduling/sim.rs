use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};

use super::mission::{apply_event, pump, Command, MissionContext, MissionEvent, MissionState, Phase, TaskOutcome};
use super::trace::SimTime;
use crate::model::WorldState;
use crate::worker::{Outcome, WorkerProfile, WorkerScript};

/// Delivers commands to robots and yields their reports in time order.
pub trait Dispatcher {
    /// Delivers a command at `now`. An error means the robot could not be
    /// reached.
    fn send(&mut self, now: SimTime, command: &Command) -> Result<(), String>;

    /// The next report, or `None` when nothing is in flight.
    fn next_event(&mut self) -> Option<(SimTime, MissionEvent)>;
}

struct SimRobot {
    script: WorkerScript,
    duration: SimTime,
    current: Option<String>,
}

/// Discrete-event stand-in for a fleet of simulated workers, sharing the
/// worker's failure and discovery scripts. Time is virtual.
pub struct SimDispatcher {
    robots: BTreeMap<String, SimRobot>,
    queue: BinaryHeap<Reverse<(SimTime, u64)>>,
    pending: HashMap<u64, (String, MissionEvent)>,
    seq: u64,
    unreachable: BTreeSet<String>,
}

impl SimDispatcher {
    pub fn new<I: IntoIterator<Item = WorkerProfile>>(profiles: I) -> Self {
        let robots = profiles
            .into_iter()
            .map(|p| {
                let duration = SimTime::from_secs_f64(p.task_duration);
                (
                    p.robot_name.clone(),
                    SimRobot {
                        script: WorkerScript::new(p),
                        duration,
                        current: None,
                    },
                )
            })
            .collect();
        SimDispatcher {
            robots,
            queue: BinaryHeap::new(),
            pending: HashMap::new(),
            seq: 0,
            unreachable: BTreeSet::new(),
        }
    }

    /// Unit-duration, always-successful robots.
    pub fn uniform<I, S>(names: I, duration: SimTime) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut sim = SimDispatcher::new(names.into_iter().map(|n| WorkerProfile::new(n)));
        for r in sim.robots.values_mut() {
            r.duration = duration;
        }
        sim
    }

    /// Makes every dispatch to `robot` fail.
    pub fn set_unreachable(&mut self, robot: &str, unreachable: bool) {
        if unreachable {
            self.unreachable.insert(robot.to_string());
        } else {
            self.unreachable.remove(robot);
        }
    }

    fn schedule(&mut self, at: SimTime, task_id: &str, event: MissionEvent) {
        self.seq += 1;
        self.queue.push(Reverse((at, self.seq)));
        self.pending.insert(self.seq, (task_id.to_string(), event));
    }
}

impl Dispatcher for SimDispatcher {
    fn send(&mut self, now: SimTime, command: &Command) -> Result<(), String> {
        match command {
            Command::Execute {
                robot,
                task_id,
                description,
                ..
            } => {
                if self.unreachable.contains(robot) {
                    return Err(format!("robot {robot} unreachable"));
                }
                let sim = self.robots.get_mut(robot).ok_or_else(|| format!("robot {robot} unreachable"))?;
                if let Some(busy) = &sim.current {
                    return Err(format!("robot {robot} busy with {busy}"));
                }
                sim.current = Some(task_id.clone());
                let end = now + sim.duration;
                let outcome = sim.script.decide(task_id, description);
                let found = match outcome {
                    Outcome::Succeeded => sim.script.discoveries(task_id, description),
                    Outcome::Failed(_) => Vec::new(),
                };
                let outcome = match outcome {
                    Outcome::Succeeded => TaskOutcome::Succeeded,
                    Outcome::Failed(d) => TaskOutcome::Failed(d),
                };
                let robot = robot.clone();
                self.schedule(
                    now,
                    task_id,
                    MissionEvent::Started {
                        robot: robot.clone(),
                        task_id: task_id.clone(),
                    },
                );
                self.schedule(
                    end,
                    task_id,
                    MissionEvent::Finished {
                        robot: robot.clone(),
                        task_id: task_id.clone(),
                        outcome,
                    },
                );
                if !found.is_empty() {
                    self.schedule(
                        end,
                        task_id,
                        MissionEvent::ReplanRequest {
                            robot,
                            reason: format!("discovery while running {task_id}"),
                            statements: found,
                        },
                    );
                }
                Ok(())
            }
            Command::Cancel { robot, task_id } => {
                if let Some(sim) = self.robots.get_mut(robot) {
                    if sim.current.as_deref() == Some(task_id.as_str()) {
                        sim.current = None;
                    }
                }
                self.pending.retain(|_, (t, _)| t != task_id);
                Ok(())
            }
        }
    }

    fn next_event(&mut self) -> Option<(SimTime, MissionEvent)> {
        while let Some(Reverse((at, seq))) = self.queue.pop() {
            let Some((_, event)) = self.pending.remove(&seq) else { continue };
            if let MissionEvent::Finished { robot, task_id, .. } = &event {
                if let Some(sim) = self.robots.get_mut(robot) {
                    if sim.current.as_deref() == Some(task_id.as_str()) {
                        sim.current = None;
                    }
                }
            }
            return Some((at, event));
        }
        None
    }
}

/// Drives a mission to completion: dispatch ready tasks, consume reports,
/// retry, replan, until the mission is done or aborted.
pub fn run_mission(
    mut state: MissionState,
    ctx: &MissionContext<'_>,
    world: &mut WorldState,
    dispatcher: &mut dyn Dispatcher,
) -> MissionState {
    let mut now = SimTime::zero();
    if state.phase == Phase::Planning && state.plan_and_allocate(ctx, &world.texts()).is_err() {
        return state;
    }
    loop {
        pump(&mut state, ctx, world, now, |cmd| dispatcher.send(now, cmd));
        if state.phase.is_finished() {
            return state;
        }
        let Some((at, event)) = dispatcher.next_event() else {
            state.abort("execution stalled: no task in flight and none ready");
            return state;
        };
        now = now.max(at);
        let commands = apply_event(&mut state, world, now, event);
        redeliver(&mut state, world, now, dispatcher, commands);
    }
}

fn redeliver(
    state: &mut MissionState,
    world: &mut WorldState,
    now: SimTime,
    dispatcher: &mut dyn Dispatcher,
    mut queue: Vec<Command>,
) {
    while let Some(cmd) = queue.pop() {
        if let Err(reason) = dispatcher.send(now, &cmd) {
            if let Command::Execute { task_id, robot, .. } = &cmd {
                let event = MissionEvent::DispatchFailed {
                    robot: robot.clone(),
                    task_id: task_id.clone(),
                    reason,
                };
                queue.extend(apply_event(state, world, now, event));
            }
        }
    }
}
