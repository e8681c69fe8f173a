use std::collections::VecDeque;
use std::io::{self, BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use tracing::{debug, info, warn};

use super::{Outcome, WorkerProfile, WorkerScript};
use crate::protocol::{codes, next_incoming, write_message, Incoming, Message, WireStatus};

/// Longest wait between reconnect attempts to the manager.
pub const MAX_BACKOFF: Duration = Duration::from_secs(30);

const INITIAL_BACKOFF: Duration = Duration::from_millis(50);

/// Sends a ping and waits for the pong.
pub fn probe(address: &str, timeout: Duration) -> Result<Duration, String> {
    let started = Instant::now();
    let addr = address
        .to_socket_addrs()
        .map_err(|e| format!("{address}: {e}"))?
        .next()
        .ok_or_else(|| format!("{address}: no address"))?;
    let stream = TcpStream::connect_timeout(&addr, timeout).map_err(|e| format!("{address}: {e}"))?;
    stream.set_read_timeout(Some(timeout)).map_err(|e| e.to_string())?;
    let mut writer = stream.try_clone().map_err(|e| e.to_string())?;
    write_message(&mut writer, &Message::Ping {}).map_err(|e| format!("{address}: {e}"))?;
    let mut reader = BufReader::new(stream);
    match next_incoming(&mut reader) {
        Ok(Incoming::Message(Message::Pong {})) => Ok(started.elapsed()),
        Ok(_) => Err(format!("{address}: unexpected reply to ping")),
        Err(e) => Err(format!("{address}: {e}")),
    }
}

struct Job {
    task_id: String,
    description: String,
    cancel: Arc<AtomicBool>,
}

struct Current {
    task_id: String,
    cancel: Arc<AtomicBool>,
}

pub struct RunningWorker {
    pub addr: SocketAddr,
    accept: JoinHandle<()>,
}

impl RunningWorker {
    pub fn wait(self) {
        let _ = self.accept.join();
    }
}

/// Serves the worker protocol on `listen` and reports to `manager`.
pub fn serve(profile: WorkerProfile, listen: &str, manager: &str) -> io::Result<RunningWorker> {
    profile.validate().map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
    let listener = TcpListener::bind(listen)?;
    let addr = listener.local_addr()?;
    let name = profile.robot_name.clone();
    let duration = Duration::from_secs_f64(profile.task_duration);

    let outbox = spawn_manager_link(name.clone(), manager.to_string());
    let current: Arc<Mutex<Option<Current>>> = Arc::new(Mutex::new(None));
    let (jobs_tx, jobs_rx) = mpsc::channel::<Job>();
    {
        let current = current.clone();
        let name = name.clone();
        let outbox = outbox.clone();
        thread::Builder::new()
            .name(format!("{name}-exec"))
            .spawn(move || execute_loop(WorkerScript::new(profile), name, duration, jobs_rx, current, outbox))?;
    }
    let accept = thread::Builder::new().name(format!("{name}-accept")).spawn(move || {
        for stream in listener.incoming() {
            match stream {
                Ok(stream) => {
                    let current = current.clone();
                    let jobs = jobs_tx.clone();
                    thread::spawn(move || handle_manager(stream, current, jobs));
                }
                Err(e) => warn!("accept failed: {e}"),
            }
        }
    })?;
    info!(robot = %name, %addr, "worker listening");
    Ok(RunningWorker { addr, accept })
}

fn handle_manager(stream: TcpStream, current: Arc<Mutex<Option<Current>>>, jobs: Sender<Job>) {
    let Ok(read_half) = stream.try_clone() else { return };
    let mut reader = BufReader::new(read_half);
    let mut writer = BufWriter::new(stream);
    loop {
        let reply = match next_incoming(&mut reader) {
            Ok(Incoming::Closed) | Err(_) => break,
            Ok(Incoming::Invalid(e)) => Some(e),
            Ok(Incoming::Message(msg)) => match msg {
                Message::Ping {} => Some(Message::Pong {}),
                Message::ExecuteTask {
                    task_id, description, ..
                } => {
                    let mut cur = current.lock().unwrap();
                    if let Some(busy) = cur.as_ref() {
                        Some(Message::error(codes::BUSY, format!("already running {}", busy.task_id)))
                    } else {
                        let cancel = Arc::new(AtomicBool::new(false));
                        *cur = Some(Current {
                            task_id: task_id.clone(),
                            cancel: cancel.clone(),
                        });
                        let _ = jobs.send(Job {
                            task_id,
                            description,
                            cancel,
                        });
                        None
                    }
                }
                Message::CancelTask { task_id } => {
                    let mut cur = current.lock().unwrap();
                    if cur.as_ref().is_some_and(|c| c.task_id == task_id) {
                        cur.take().unwrap().cancel.store(true, Ordering::SeqCst);
                    }
                    None
                }
                other => Some(Message::error(
                    codes::UNEXPECTED,
                    format!("{} is not accepted by a worker", other.kind()),
                )),
            },
        };
        if let Some(reply) = reply {
            if write_message(&mut writer, &reply).is_err() {
                break;
            }
        }
    }
}

fn execute_loop(
    mut script: WorkerScript,
    name: String,
    duration: Duration,
    jobs: Receiver<Job>,
    current: Arc<Mutex<Option<Current>>>,
    outbox: Sender<Message>,
) {
    let status = |task_id: &str, status: WireStatus, detail: &str| Message::TaskStatus {
        robot: name.clone(),
        task_id: task_id.to_string(),
        status,
        detail: detail.to_string(),
    };
    for job in jobs {
        let _ = outbox.send(status(&job.task_id, WireStatus::Started, ""));
        let deadline = Instant::now() + duration;
        while !job.cancel.load(Ordering::SeqCst) {
            let now = Instant::now();
            if now >= deadline {
                break;
            }
            thread::sleep((deadline - now).min(Duration::from_millis(5)));
        }
        if job.cancel.load(Ordering::SeqCst) {
            let _ = outbox.send(status(&job.task_id, WireStatus::Failed, "cancelled"));
            continue;
        }
        let outcome = script.decide(&job.task_id, &job.description);
        let found = match &outcome {
            Outcome::Succeeded => script.discoveries(&job.task_id, &job.description),
            Outcome::Failed(_) => Vec::new(),
        };
        {
            let mut cur = current.lock().unwrap();
            if cur.as_ref().is_some_and(|c| Arc::ptr_eq(&c.cancel, &job.cancel)) {
                *cur = None;
            }
        }
        match outcome {
            Outcome::Succeeded => {
                let _ = outbox.send(status(&job.task_id, WireStatus::Succeeded, ""));
            }
            Outcome::Failed(detail) => {
                let _ = outbox.send(status(&job.task_id, WireStatus::Failed, &detail));
            }
        }
        if !found.is_empty() {
            let _ = outbox.send(Message::ReplanRequest {
                robot: name.clone(),
                reason: format!("new information while running {}", job.task_id),
                statements: found,
            });
        }
    }
}

/// Keeps a connection to the manager, saying hello after every connect.
/// Undelivered messages stay queued across reconnects.
fn spawn_manager_link(robot: String, manager: String) -> Sender<Message> {
    let (tx, rx) = mpsc::channel::<Message>();
    thread::Builder::new()
        .name(format!("{robot}-link"))
        .spawn(move || {
            let mut queue: VecDeque<Message> = VecDeque::new();
            let mut conn: Option<(TcpStream, Arc<AtomicBool>)> = None;
            let mut backoff = INITIAL_BACKOFF;
            let mut open = true;
            loop {
                if queue.is_empty() {
                    if !open {
                        return;
                    }
                    match rx.recv_timeout(Duration::from_millis(200)) {
                        Ok(m) => queue.push_back(m),
                        Err(RecvTimeoutError::Timeout) => {}
                        Err(RecvTimeoutError::Disconnected) => open = false,
                    }
                }
                while let Ok(m) = rx.try_recv() {
                    queue.push_back(m);
                }
                if conn.as_ref().is_some_and(|(_, alive)| !alive.load(Ordering::SeqCst)) {
                    conn = None;
                }
                if conn.is_none() {
                    match dial(&manager, &robot) {
                        Ok(s) => {
                            backoff = INITIAL_BACKOFF;
                            conn = Some(s);
                        }
                        Err(e) => {
                            debug!(%robot, %manager, "manager unreachable: {e}; retrying in {backoff:?}");
                            thread::sleep(backoff);
                            backoff = (backoff * 2).min(MAX_BACKOFF);
                            continue;
                        }
                    }
                }
                while let Some(m) = queue.front() {
                    match write_message(&mut conn.as_mut().unwrap().0, m) {
                        Ok(()) => {
                            queue.pop_front();
                        }
                        Err(e) => {
                            debug!(%robot, "lost manager connection: {e}");
                            conn = None;
                            break;
                        }
                    }
                }
            }
        })
        .expect("spawn manager link");
    tx
}

fn dial(manager: &str, robot: &str) -> io::Result<(TcpStream, Arc<AtomicBool>)> {
    let addr = manager
        .to_socket_addrs()?
        .next()
        .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, format!("cannot resolve {manager}")))?;
    let mut stream = TcpStream::connect_timeout(&addr, Duration::from_secs(2))?;
    let _ = stream.set_nodelay(true);
    write_message(&mut stream, &Message::Hello { robot: robot.to_string() })?;
    let read_half = stream.try_clone()?;
    let robot = robot.to_string();
    let alive = Arc::new(AtomicBool::new(true));
    let flag = alive.clone();
    thread::spawn(move || {
        let mut reader = BufReader::new(read_half);
        while let Ok(incoming) = next_incoming(&mut reader) {
            match incoming {
                Incoming::Closed => break,
                Incoming::Message(Message::Error { code, message }) => warn!(%robot, %code, "manager: {message}"),
                Incoming::Message(m) => debug!(%robot, kind = m.kind(), "manager message ignored"),
                Incoming::Invalid(_) => {}
            }
        }
        flag.store(false, Ordering::SeqCst);
    });
    Ok((stream, alive))
}
