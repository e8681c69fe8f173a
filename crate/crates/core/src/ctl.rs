//! Client side of robotctl: request/response over the fleetd protocol and
//! plain-text rendering.

use std::fmt::Write as _;
use std::io::{self, BufReader};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use serde_json::Value;
use thiserror::Error;

use crate::model::{topo_order, Allocation, Plan, TaskStatus};
use crate::protocol::{next_incoming, write_message, Incoming, Message};

pub const DEFAULT_ADDR: &str = "127.0.0.1:7400";

#[derive(Debug, Error)]
pub enum CtlError {
    #[error("cannot reach fleetd at {addr}: {source}\nhint: start fleetd, or point --addr / FLEETD_ADDR at a running instance")]
    Connect { addr: String, source: io::Error },
    #[error("connection to fleetd lost: {0}")]
    Io(#[from] io::Error),
    #[error("{code}: {message}")]
    Remote { code: String, message: String },
    #[error("unexpected reply: {0}")]
    Protocol(String),
}

pub struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Client {
    pub fn connect(addr: &str) -> Result<Self, CtlError> {
        let err = |source| CtlError::Connect {
            addr: addr.to_string(),
            source,
        };
        let sock = addr
            .to_socket_addrs()
            .map_err(err)?
            .next()
            .ok_or_else(|| err(io::Error::new(io::ErrorKind::NotFound, "no address")))?;
        let stream = TcpStream::connect_timeout(&sock, Duration::from_secs(3)).map_err(err)?;
        let _ = stream.set_nodelay(true);
        Ok(Client {
            reader: BufReader::new(stream.try_clone()?),
            writer: stream,
        })
    }

    /// Sends one request and returns the reply's data.
    pub fn request(&mut self, msg: &Message) -> Result<Value, CtlError> {
        write_message(&mut self.writer, msg)?;
        match next_incoming(&mut self.reader)? {
            Incoming::Message(Message::CtlReply { data, .. }) => Ok(data),
            Incoming::Message(Message::Error { code, message }) => Err(CtlError::Remote { code, message }),
            Incoming::Message(other) => Err(CtlError::Protocol(other.kind().to_string())),
            Incoming::Invalid(e) => Err(CtlError::Protocol(format!("{e:?}"))),
            Incoming::Closed => Err(CtlError::Io(io::Error::new(io::ErrorKind::UnexpectedEof, "fleetd closed the connection"))),
        }
    }
}

fn task_line(plan: &Plan, allocation: &Allocation, id: &str) -> String {
    let t = &plan.tasks[id];
    let robot = t
        .assigned_robot
        .as_deref()
        .or_else(|| allocation.robot_for(id))
        .unwrap_or("unassigned");
    let mut line = format!("{id} [{robot}] {}", t.description);
    if !t.required_capabilities.is_empty() {
        let caps: Vec<&str> = t.required_capabilities.iter().map(String::as_str).collect();
        let _ = write!(line, " {{{}}}", caps.join(", "));
    }
    if !t.depends_on.is_empty() {
        let deps: Vec<&str> = t.depends_on.iter().map(String::as_str).collect();
        let _ = write!(line, " <- {}", deps.join(", "));
    }
    if t.status != TaskStatus::Pending {
        let _ = write!(line, " ({})", t.status);
    }
    line
}

/// One line per task in topological order, each naming its dependencies.
pub fn render_plan(plan: &Plan, allocation: &Allocation) -> String {
    if plan.is_empty() {
        return "(no tasks)\n".to_string();
    }
    let order = topo_order(plan).unwrap_or_else(|_| plan.tasks.keys().cloned().collect());
    let mut out = String::new();
    for id in &order {
        out.push_str(&task_line(plan, allocation, id));
        out.push('\n');
    }
    out
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Graphviz rendering; nodes and edges in topological order.
pub fn render_dot(plan: &Plan, allocation: &Allocation) -> String {
    let order = topo_order(plan).unwrap_or_else(|_| plan.tasks.keys().cloned().collect());
    let mut out = format!("digraph \"{}\" {{\n  rankdir=LR;\n  node [shape=box];\n", dot_escape(&plan.id));
    for id in &order {
        let t = &plan.tasks[id];
        let robot = t
            .assigned_robot
            .as_deref()
            .or_else(|| allocation.robot_for(id))
            .unwrap_or("unassigned");
        let _ = writeln!(
            out,
            "  \"{}\" [label=\"{}\\n{}\\n@{}\"];",
            dot_escape(id),
            dot_escape(id),
            dot_escape(&t.description),
            dot_escape(robot)
        );
    }
    for id in &order {
        for dep in &plan.tasks[id].depends_on {
            let _ = writeln!(out, "  \"{}\" -> \"{}\";", dot_escape(dep), dot_escape(id));
        }
    }
    out.push_str("}\n");
    out
}

/// Left-aligned columns separated by two spaces.
pub fn render_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            if i < widths.len() {
                widths[i] = widths[i].max(cell.chars().count());
            }
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (i, c) in cells.iter().enumerate() {
            if i + 1 == cells.len() {
                s.push_str(c);
            } else {
                let _ = write!(s, "{c:<w$}  ", w = widths[i]);
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(header.to_vec());
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AllocationMethod, Strategy, Task};

    fn diamond() -> (Plan, Allocation) {
        let plan = Plan::with_tasks(
            "p1",
            Strategy::Manual,
            [
                Task::new("a", "Do a"),
                Task::new("b", "Do b").after(["a"]),
                Task::new("c", "Do c").after(["a"]),
                Task::new("d", "Do d").after(["b", "c"]).requiring(["manipulation"]),
            ],
        )
        .unwrap();
        let mut alloc = Allocation::empty(AllocationMethod::Milp);
        for (t, r) in [("a", "r1"), ("b", "r1"), ("c", "r2"), ("d", "r2")] {
            alloc.assignments.insert(t.into(), r.into());
        }
        (plan, alloc)
    }

    #[test]
    fn empty_plan() {
        let plan = Plan::new("p", Strategy::Manual);
        assert_eq!(render_plan(&plan, &Allocation::empty(AllocationMethod::Milp)), "(no tasks)\n");
    }

    #[test]
    fn diamond_lines_list_edges_in_order() {
        let (plan, alloc) = diamond();
        let text = render_plan(&plan, &alloc);
        assert_eq!(
            text,
            "a [r1] Do a\nb [r1] Do b <- a\nc [r2] Do c <- a\nd [r2] Do d {manipulation} <- b, c\n"
        );
        let edges: Vec<String> = text
            .lines()
            .flat_map(|l| {
                let id = l.split(' ').next().unwrap().to_string();
                l.split(" <- ")
                    .nth(1)
                    .map(|deps| deps.split(", ").map(|d| format!("{d}->{id}")).collect::<Vec<_>>())
                    .unwrap_or_default()
            })
            .collect();
        assert_eq!(edges, ["a->b", "a->c", "b->d", "c->d"]);
    }

    #[test]
    fn dot_output() {
        let (plan, alloc) = diamond();
        let dot = render_dot(&plan, &alloc);
        assert!(dot.starts_with("digraph \"p1\" {"));
        assert!(dot.contains("\"a\" -> \"b\";\n  \"a\" -> \"c\";\n  \"b\" -> \"d\";\n  \"c\" -> \"d\";"));
        assert!(dot.contains("@r2"));
    }

    #[test]
    fn table_alignment() {
        let t = render_table(&["ID", "TEXT"], &[vec!["g1".into(), "hello".into()], vec!["g10".into(), "x".into()]]);
        assert_eq!(t, "ID   TEXT\ng1   hello\ng10  x\n");
    }
}
