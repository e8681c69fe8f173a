use std::collections::HashMap;
use std::io::{self, BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde_json::{json, Value};
use tracing::{debug, info, warn};

use super::store::{FleetStore, MissionRecord, StoreError};
use super::Services;
use crate::model::{now_millis, plan_progress, DeploymentMode, RobotSpec, StatementSource, TaskStatus};
use crate::protocol::{codes, next_incoming, write_message, Incoming, Message, WireStatus};
use crate::scheduling::{apply_event, pump, Command, MissionEvent, SimTime, TaskOutcome};
use crate::worker::probe;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub listen: String,
    pub snapshot: Option<PathBuf>,
    pub probe_timeout: Duration,
    pub connect_timeout: Duration,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            listen: "127.0.0.1:7400".into(),
            snapshot: None,
            probe_timeout: Duration::from_millis(500),
            connect_timeout: Duration::from_millis(500),
        }
    }
}

pub struct RunningServer {
    pub addr: SocketAddr,
    accept: JoinHandle<()>,
}

impl RunningServer {
    /// Blocks until the listener stops.
    pub fn wait(self) {
        let _ = self.accept.join();
    }
}

/// The container engine invocation `robot deploy` prints. Nothing is run.
pub struct DeployCommand;

impl DeployCommand {
    pub fn render(spec: &RobotSpec, manager: &str) -> String {
        let port = spec.endpoint.port;
        match (spec.deployment.mode, &spec.deployment.image) {
            (DeploymentMode::Container, Some(image)) => {
                format!("docker run -d --name {} -p {port}:{port} {image}", spec.name)
            }
            _ => format!(
                "worker-sim --name {} --listen {} --manager {manager}",
                spec.name,
                spec.endpoint.address()
            ),
        }
    }
}

enum Input {
    Request { msg: Message, reply: Sender<Option<Message>> },
    DispatchFailed { robot: String, task_id: String, reason: String },
}

/// Binds the listener, restores the snapshot and starts serving. Missions
/// interrupted by a restart are replanned immediately.
pub fn start(config: ServerConfig, services: Services) -> Result<RunningServer, StoreError> {
    let mut store = match &config.snapshot {
        Some(path) => FleetStore::load(path)?,
        None => FleetStore::new(),
    };
    store.resume_after_restart();
    let listener = TcpListener::bind(&config.listen).map_err(|e| StoreError::Io(format!("bind {}: {e}", config.listen)))?;
    let addr = listener.local_addr().map_err(|e| StoreError::Io(e.to_string()))?;

    let (tx, rx) = mpsc::channel();
    let owner = Owner {
        store,
        services,
        config: config.clone(),
        addr,
        links: HashMap::new(),
        tx: tx.clone(),
    };
    owner.persist()?;
    thread::Builder::new()
        .name("fleetd-store".into())
        .spawn(move || owner.run(rx))
        .map_err(|e| StoreError::Io(e.to_string()))?;

    let probe_timeout = config.probe_timeout;
    let accept = thread::Builder::new()
        .name("fleetd-accept".into())
        .spawn(move || {
            for stream in listener.incoming() {
                match stream {
                    Ok(stream) => {
                        let tx = tx.clone();
                        thread::spawn(move || serve_connection(stream, tx, probe_timeout));
                    }
                    Err(e) => warn!("accept failed: {e}"),
                }
            }
        })
        .map_err(|e| StoreError::Io(e.to_string()))?;
    info!(%addr, "fleetd listening");
    Ok(RunningServer { addr, accept })
}

fn serve_connection(stream: TcpStream, tx: Sender<Input>, probe_timeout: Duration) {
    let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
    let Ok(read_half) = stream.try_clone() else { return };
    let mut reader = BufReader::new(read_half);
    let mut writer = BufWriter::new(stream);
    loop {
        let reply = match next_incoming(&mut reader) {
            Ok(Incoming::Closed) | Err(_) => break,
            Ok(Incoming::Invalid(err)) => Some(err),
            Ok(Incoming::Message(Message::Ping {})) => Some(Message::Pong {}),
            Ok(Incoming::Message(msg)) => {
                let register = matches!(msg, Message::CtlRobotRegister { .. });
                let (rtx, rrx) = mpsc::channel();
                if tx.send(Input::Request { msg, reply: rtx }).is_err() {
                    Some(Message::error(codes::INTERNAL, "store is shutting down"))
                } else {
                    match rrx.recv() {
                        Ok(Some(Message::CtlReply { ok, mut data })) if register => {
                            data["reachable"] = Value::Bool(probe_robot(&data, probe_timeout));
                            Some(Message::CtlReply { ok, data })
                        }
                        Ok(r) => r,
                        Err(_) => Some(Message::error(codes::INTERNAL, "store is shutting down")),
                    }
                }
            }
        };
        if let Some(reply) = reply {
            if write_message(&mut writer, &reply).is_err() {
                break;
            }
        }
    }
    debug!(%peer, "connection closed");
}

fn probe_robot(data: &Value, timeout: Duration) -> bool {
    let host = data["endpoint"]["host"].as_str().unwrap_or_default();
    let port = data["endpoint"]["port"].as_u64().unwrap_or_default();
    probe(&format!("{host}:{port}"), timeout).is_ok()
}

struct Owner {
    store: FleetStore,
    services: Services,
    config: ServerConfig,
    addr: SocketAddr,
    links: HashMap<String, Sender<Message>>,
    tx: Sender<Input>,
}

fn fail(e: StoreError) -> Option<Message> {
    Some(Message::error(e.code(), e.to_string()))
}

fn ok(data: Value) -> Option<Message> {
    Some(Message::reply(data))
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("store values serialize")
}

impl Owner {
    fn run(mut self, rx: Receiver<Input>) {
        self.drive();
        if let Err(e) = self.persist() {
            warn!("{e}");
        }
        while let Ok(input) = rx.recv() {
            match input {
                Input::Request { msg, reply } => {
                    let out = self.handle(msg);
                    let _ = reply.send(out);
                }
                Input::DispatchFailed { robot, task_id, reason } => {
                    self.mission_event(MissionEvent::DispatchFailed { robot, task_id, reason });
                    if let Err(e) = self.persist() {
                        warn!("{e}");
                    }
                }
            }
        }
    }

    fn persist(&self) -> Result<(), StoreError> {
        match &self.config.snapshot {
            Some(path) => self.store.save(path),
            None => Ok(()),
        }
    }

    /// Persists, then acknowledges.
    fn commit(&self, data: Value) -> Option<Message> {
        match self.persist() {
            Ok(()) => ok(data),
            Err(e) => fail(e),
        }
    }

    fn handle(&mut self, msg: Message) -> Option<Message> {
        match msg {
            Message::CtlRobotRegister { document } => {
                let spec = match RobotSpec::from_document(&document) {
                    Ok(s) => s,
                    Err(e) => return fail(e.into()),
                };
                match self.store.register_robot(spec) {
                    Ok(r) => {
                        let data = to_value(r);
                        self.commit(data)
                    }
                    Err(e) => fail(e),
                }
            }
            Message::CtlRobotList {} => ok(to_value(&self.store.robots)),
            Message::CtlRobotRemove { name } => match self.store.remove_robot(&name) {
                Ok(r) => {
                    self.links.remove(&name);
                    self.commit(to_value(&r))
                }
                Err(e) => fail(e),
            },
            Message::CtlRobotDeploy { name } => match self.store.robot(&name) {
                Some(r) => ok(json!({ "command": DeployCommand::render(r, &self.addr.to_string()) })),
                None => fail(StoreError::NotFound { kind: "robot", id: name }),
            },
            Message::CtlWorldAdd { text } => match self.store.add_statement(&text, StatementSource::Operator, now_millis()) {
                Ok(s) => self.commit(to_value(&s)),
                Err(e) => fail(e),
            },
            Message::CtlWorldList {} => ok(to_value(&self.store.world.statements)),
            Message::CtlWorldRemove { id } => match self.store.remove_statement(&id) {
                Ok(s) => self.commit(to_value(&s)),
                Err(e) => fail(e),
            },
            Message::CtlGoalAdd { text } => match self.store.add_goal(&text) {
                Ok(g) => self.commit(to_value(&g)),
                Err(e) => fail(e),
            },
            Message::CtlGoalList {} => ok(to_value(&self.store.goals)),
            Message::CtlGoalRemove { id } => match self.store.remove_goal(&id) {
                Ok(g) => self.commit(to_value(&g)),
                Err(e) => fail(e),
            },
            Message::CtlPlanCreate { planner, allocator } => {
                match self.store.create_plan(planner, allocator, &self.services) {
                    Ok(d) => {
                        let data = json!({ "id": d.plan.id, "plan": d.plan, "allocation": d.allocation });
                        self.commit(data)
                    }
                    Err(e) => fail(e),
                }
            }
            Message::CtlPlanShow { id } => {
                if let Some(d) = self.store.plans.get(&id) {
                    ok(json!({ "id": id, "plan": d.plan, "allocation": d.allocation }))
                } else if let Some(m) = self.store.missions.get(&id) {
                    ok(json!({ "id": id, "plan": m.state.plan, "allocation": m.state.allocation }))
                } else {
                    fail(StoreError::NotFound { kind: "plan", id })
                }
            }
            Message::CtlTaskAdd {
                plan,
                description,
                after,
                robot,
            } => match self
                .store
                .add_task(&plan, &description, &after, robot.as_deref(), &self.services.lexicon)
            {
                Ok(t) => self.commit(to_value(&t)),
                Err(e) => fail(e),
            },
            Message::CtlRun { plan } => match self.store.start_mission(&plan, now_millis()) {
                Ok(id) => {
                    info!(mission = %id, %plan, "mission started");
                    self.drive();
                    self.commit(json!({ "mission": id }))
                }
                Err(e) => fail(e),
            },
            Message::CtlStatus { mission } => {
                let id = mission
                    .or_else(|| self.store.active_mission.clone())
                    .or_else(|| self.store.missions.keys().last().cloned());
                match id.as_ref().and_then(|id| self.store.missions.get(id)) {
                    Some(m) => ok(status_view(m)),
                    None => fail(StoreError::NotFound {
                        kind: "mission",
                        id: id.unwrap_or_else(|| "(none)".into()),
                    }),
                }
            }
            Message::Hello { robot } => {
                if self.store.robot(&robot).is_none() {
                    return unknown_robot(&robot);
                }
                debug!(%robot, "worker connected");
                None
            }
            Message::TaskStatus {
                robot,
                task_id,
                status,
                detail,
            } => {
                if self.store.robot(&robot).is_none() {
                    return unknown_robot(&robot);
                }
                let event = match status {
                    WireStatus::Started => MissionEvent::Started { robot, task_id },
                    WireStatus::Succeeded => MissionEvent::Finished {
                        robot,
                        task_id,
                        outcome: TaskOutcome::Succeeded,
                    },
                    WireStatus::Failed => MissionEvent::Finished {
                        robot,
                        task_id,
                        outcome: TaskOutcome::Failed(detail),
                    },
                };
                self.mission_event(event);
                self.persist().err().and_then(fail)
            }
            Message::ReplanRequest {
                robot,
                reason,
                statements,
            } => {
                if self.store.robot(&robot).is_none() {
                    return unknown_robot(&robot);
                }
                if self.store.active().is_some() {
                    self.mission_event(MissionEvent::ReplanRequest {
                        robot,
                        reason,
                        statements,
                    });
                } else {
                    for s in &statements {
                        let _ = self.store.add_statement(s, StatementSource::Robot, now_millis());
                    }
                }
                self.persist().err().and_then(fail)
            }
            Message::Pong {} => None,
            Message::Ping {} => Some(Message::Pong {}),
            other => Some(Message::error(
                codes::UNEXPECTED,
                format!("{} is not accepted by fleetd", other.kind()),
            )),
        }
    }

    fn mission_event(&mut self, event: MissionEvent) {
        let FleetStore { missions, world, active_mission, .. } = &mut self.store;
        let Some(rec) = active_mission.as_ref().and_then(|id| missions.get_mut(id)) else {
            debug!(?event, "no active mission");
            return;
        };
        if rec.state.phase.is_finished() {
            return;
        }
        let now = mission_time(rec);
        let commands = apply_event(&mut rec.state, world, now, event);
        for c in commands {
            self.dispatch(c);
        }
        self.drive();
    }

    /// Replans and dispatches whatever the active mission can run now.
    fn drive(&mut self) {
        let FleetStore {
            missions,
            world,
            robots,
            active_mission,
            ..
        } = &mut self.store;
        let Some(rec) = active_mission.as_ref().and_then(|id| missions.get_mut(id)) else {
            return;
        };
        if rec.state.phase.is_finished() {
            return;
        }
        let now = mission_time(rec);
        let ctx = self.services.context(robots, rec.state.allocator);
        let mut out = Vec::new();
        pump(&mut rec.state, &ctx, world, now, |c| {
            out.push(c.clone());
            Ok(())
        });
        if rec.state.phase.is_finished() {
            info!(mission = %rec.state.id, phase = %rec.state.phase, "mission finished");
        }
        for c in out {
            self.dispatch(c);
        }
    }

    fn dispatch(&mut self, command: Command) {
        let robot = command.robot().to_string();
        let msg = match &command {
            Command::Execute {
                task_id,
                description,
                attempt,
                context,
                ..
            } => Message::ExecuteTask {
                task_id: task_id.clone(),
                description: description.clone(),
                attempt: *attempt,
                context: context.clone(),
            },
            Command::Cancel { task_id, .. } => Message::CancelTask { task_id: task_id.clone() },
        };
        let Some(spec) = self.store.robot(&robot).cloned() else {
            if let Message::ExecuteTask { task_id, .. } = msg {
                let _ = self.tx.send(Input::DispatchFailed {
                    robot: robot.clone(),
                    task_id,
                    reason: format!("robot {robot} is not registered"),
                });
            }
            return;
        };
        let link = self.links.entry(robot.clone()).or_insert_with(|| {
            let (ltx, lrx) = mpsc::channel();
            let tx = self.tx.clone();
            let timeout = self.config.connect_timeout;
            thread::Builder::new()
                .name(format!("link-{robot}"))
                .spawn(move || run_link(spec, lrx, tx, timeout))
                .expect("spawn link thread");
            ltx
        });
        if link.send(msg.clone()).is_err() {
            self.links.remove(&robot);
            self.dispatch(command);
        }
    }
}

fn unknown_robot(robot: &str) -> Option<Message> {
    Some(Message::error(codes::UNKNOWN_ROBOT, format!("robot {robot} is not registered")))
}

fn mission_time(rec: &MissionRecord) -> SimTime {
    SimTime::from_millis(now_millis().saturating_sub(rec.started_at))
}

fn status_view(m: &MissionRecord) -> Value {
    let s = &m.state;
    let progress = plan_progress(&s.plan);
    let live = s.plan.len() - progress.count(TaskStatus::Cancelled);
    let tasks: Vec<Value> = s
        .plan
        .tasks
        .values()
        .map(|t| {
            json!({
                "id": t.id,
                "description": t.description,
                "status": t.status,
                "attempts": t.attempts,
                "robot": t.assigned_robot,
                "depends_on": t.depends_on,
            })
        })
        .collect();
    json!({
        "id": s.id,
        "plan": m.plan_id,
        "phase": s.phase,
        "phase_log": s.phase_log,
        "round": s.round,
        "method": s.allocation.method,
        "feasible": s.allocation.feasible,
        "warnings": s.allocation.warnings,
        "diagnostic": s.diagnostic,
        "succeeded": progress.count(TaskStatus::Succeeded),
        "total": live,
        "tasks": tasks,
        "trace": s.trace.events,
    })
}

/// Outbound connection to one worker. Commands are written in order; an
/// execute that cannot be delivered is reported back as a dispatch failure.
fn run_link(spec: RobotSpec, rx: Receiver<Message>, tx: Sender<Input>, timeout: Duration) {
    let robot = spec.name.clone();
    let address = spec.endpoint.address();
    let last_task = Arc::new(Mutex::new(String::new()));
    let mut conn: Option<TcpStream> = None;
    for msg in rx {
        if let Message::ExecuteTask { task_id, .. } = &msg {
            *last_task.lock().unwrap() = task_id.clone();
        }
        let mut delivered = false;
        for _ in 0..2 {
            if conn.is_none() {
                match connect(&address, timeout) {
                    Ok(stream) => {
                        watch_replies(&stream, robot.clone(), last_task.clone(), tx.clone());
                        conn = Some(stream);
                    }
                    Err(e) => {
                        debug!(%robot, "connect failed: {e}");
                        break;
                    }
                }
            }
            let stream = conn.as_mut().unwrap();
            match write_message(stream, &msg) {
                Ok(()) => {
                    delivered = true;
                    break;
                }
                Err(_) => conn = None,
            }
        }
        if !delivered {
            if let Message::ExecuteTask { task_id, .. } = msg {
                let _ = tx.send(Input::DispatchFailed {
                    robot: robot.clone(),
                    task_id,
                    reason: format!("robot {robot} unreachable at {address}"),
                });
            }
        }
    }
}

fn connect(address: &str, timeout: Duration) -> io::Result<TcpStream> {
    let mut last = io::Error::new(io::ErrorKind::NotFound, format!("cannot resolve {address}"));
    for addr in address.to_socket_addrs()? {
        match TcpStream::connect_timeout(&addr, timeout) {
            Ok(s) => {
                let _ = s.set_nodelay(true);
                return Ok(s);
            }
            Err(e) => last = e,
        }
    }
    Err(last)
}

/// Worker replies on a dispatch connection are errors; a busy worker means
/// the last execute did not start.
fn watch_replies(stream: &TcpStream, robot: String, last_task: Arc<Mutex<String>>, tx: Sender<Input>) {
    let Ok(read_half) = stream.try_clone() else { return };
    thread::spawn(move || {
        let mut reader = BufReader::new(read_half);
        while let Ok(incoming) = next_incoming(&mut reader) {
            match incoming {
                Incoming::Closed => break,
                Incoming::Message(Message::Error { code, message }) => {
                    warn!(%robot, %code, "{message}");
                    if code == codes::BUSY {
                        let task_id = last_task.lock().unwrap().clone();
                        let _ = tx.send(Input::DispatchFailed {
                            robot: robot.clone(),
                            task_id,
                            reason: message,
                        });
                    }
                }
                Incoming::Message(other) => debug!(%robot, kind = other.kind(), "ignored reply"),
                Incoming::Invalid(e) => debug!(%robot, ?e, "unreadable reply"),
            }
        }
    });
}
