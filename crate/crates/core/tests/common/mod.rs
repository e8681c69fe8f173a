#![allow(dead_code)]

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use robotfleet::protocol::{next_incoming, write_message, Incoming, Message};
use serde_json::Value;

pub const FLEETD: &str = env!("CARGO_BIN_EXE_fleetd");
pub const WORKER: &str = env!("CARGO_BIN_EXE_worker-sim");
pub const ROBOTCTL: &str = env!("CARGO_BIN_EXE_robotctl");

pub fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

/// A child process killed on drop.
pub struct Proc {
    pub child: Child,
    pub addr: String,
}

impl Proc {
    fn spawn(mut cmd: Command, banner: &str) -> Proc {
        let mut child = cmd
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .expect("spawn");
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let addr = line
            .trim()
            .strip_prefix(banner)
            .and_then(|rest| rest.rsplit(' ').next())
            .unwrap_or_else(|| panic!("unexpected banner {line:?}"))
            .to_string();
        Proc { child, addr }
    }

    pub fn fleetd(listen: &str, snapshot: Option<&Path>) -> Proc {
        let mut cmd = Command::new(FLEETD);
        cmd.args(["--listen", listen]);
        if let Some(s) = snapshot {
            cmd.arg("--snapshot").arg(s);
        }
        Proc::spawn(cmd, "fleetd listening on")
    }

    pub fn worker(name: &str, port: u16, manager: &str, extra: &[&str]) -> Proc {
        let mut cmd = Command::new(WORKER);
        cmd.args(["--name", name, "--listen", &format!("127.0.0.1:{port}"), "--manager", manager]);
        cmd.args(extra);
        Proc::spawn(cmd, &format!("worker {name} listening on"))
    }

    pub fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for Proc {
    fn drop(&mut self) {
        self.kill();
    }
}

pub fn robot_doc(name: &str, caps: &[&str], port: u16) -> String {
    format!(
        "name: {name}\ncapabilities: [{}]\nendpoint: {{host: 127.0.0.1, port: {port}}}\ndeployment: {{mode: native}}\n",
        caps.join(", ")
    )
}

pub fn robotctl(addr: &str, args: &[&str]) -> Output {
    Command::new(ROBOTCTL)
        .arg("--addr")
        .arg(addr)
        .args(args)
        .stdin(Stdio::null())
        .output()
        .expect("run robotctl")
}

pub fn robotctl_ok(addr: &str, args: &[&str]) -> String {
    let out = robotctl(addr, args);
    assert!(
        out.status.success(),
        "robotctl {args:?} failed: {}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// A raw protocol connection.
pub struct Conn {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Conn {
    pub fn open(addr: &str) -> Conn {
        let stream = TcpStream::connect(addr).unwrap();
        stream.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
        Conn {
            reader: BufReader::new(stream.try_clone().unwrap()),
            writer: stream,
        }
    }

    pub fn set_timeout(&self, t: Duration) {
        self.writer.set_read_timeout(Some(t)).unwrap();
    }

    pub fn send_raw(&mut self, bytes: &[u8]) {
        self.writer.write_all(bytes).unwrap();
        self.writer.flush().unwrap();
    }

    pub fn recv(&mut self) -> std::io::Result<Message> {
        match next_incoming(&mut self.reader)? {
            Incoming::Message(m) => Ok(m),
            Incoming::Invalid(e) => Ok(e),
            Incoming::Closed => Err(std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "closed")),
        }
    }

    pub fn call(&mut self, msg: &Message) -> Message {
        write_message(&mut self.writer, msg).unwrap();
        self.recv().unwrap()
    }

    pub fn ok(&mut self, msg: &Message) -> Value {
        match self.call(msg) {
            Message::CtlReply { data, .. } => data,
            other => panic!("{} failed: {other:?}", msg.kind()),
        }
    }
}

pub fn status(addr: &str) -> Value {
    Conn::open(addr).ok(&Message::CtlStatus { mission: None })
}

/// Polls mission status until `done` holds or the deadline passes.
pub fn wait_status(addr: &str, timeout: Duration, done: impl Fn(&Value) -> bool) -> Value {
    let deadline = Instant::now() + timeout;
    let mut conn = Conn::open(addr);
    loop {
        let s = conn.ok(&Message::CtlStatus { mission: None });
        if done(&s) {
            return s;
        }
        assert!(Instant::now() < deadline, "timed out waiting; last status {s:#}");
        std::thread::sleep(Duration::from_millis(10));
    }
}

pub fn finished(s: &Value) -> bool {
    matches!(s["phase"].as_str(), Some("done" | "aborted"))
}
