//! Newline-delimited JSON messages shared by fleetd, workers and robotctl.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::model::Strategy;
use crate::scheduling::AllocatorChoice;

/// Longest accepted line, newline excluded.
pub const MAX_LINE_BYTES: usize = 1 << 20;

pub mod codes {
    pub const PARSE_ERROR: &str = "parse_error";
    pub const LINE_TOO_LONG: &str = "line_too_long";
    pub const UNEXPECTED: &str = "unexpected_message";
    pub const UNKNOWN_ROBOT: &str = "unknown_robot";
    pub const BUSY: &str = "busy";
    pub const NOT_FOUND: &str = "not_found";
    pub const DUPLICATE_ROBOT: &str = "duplicate_robot";
    pub const SCHEMA_ERROR: &str = "schema_error";
    pub const CYCLE: &str = "cycle";
    pub const NO_GOALS: &str = "no_goals";
    pub const NO_ROBOTS: &str = "no_robots";
    pub const MISSION_ACTIVE: &str = "mission_active";
    pub const PLANNING_FAILED: &str = "planning_failed";
    pub const INVALID: &str = "invalid";
    pub const INTERNAL: &str = "internal";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WireStatus {
    Started,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Message {
    ExecuteTask {
        task_id: String,
        description: String,
        attempt: u32,
        context: Vec<String>,
    },
    CancelTask {
        task_id: String,
    },
    Ping {},
    Hello {
        robot: String,
    },
    TaskStatus {
        robot: String,
        task_id: String,
        status: WireStatus,
        detail: String,
    },
    ReplanRequest {
        robot: String,
        reason: String,
        statements: Vec<String>,
    },
    Pong {},
    Error {
        code: String,
        message: String,
    },

    CtlRobotRegister {
        document: String,
    },
    CtlRobotList {},
    CtlRobotRemove {
        name: String,
    },
    CtlRobotDeploy {
        name: String,
    },
    CtlWorldAdd {
        text: String,
    },
    CtlWorldList {},
    CtlWorldRemove {
        id: String,
    },
    CtlGoalAdd {
        text: String,
    },
    CtlGoalList {},
    CtlGoalRemove {
        id: String,
    },
    CtlPlanCreate {
        planner: Strategy,
        allocator: AllocatorChoice,
    },
    CtlPlanShow {
        id: String,
    },
    CtlTaskAdd {
        plan: String,
        description: String,
        #[serde(default)]
        after: Vec<String>,
        #[serde(default)]
        robot: Option<String>,
    },
    CtlRun {
        plan: String,
    },
    CtlStatus {
        #[serde(default)]
        mission: Option<String>,
    },
    CtlReply {
        ok: bool,
        data: Value,
    },
}

impl Message {
    pub fn error(code: &str, message: impl Into<String>) -> Self {
        Message::Error {
            code: code.to_string(),
            message: message.into(),
        }
    }

    pub fn reply(data: Value) -> Self {
        Message::CtlReply { ok: true, data }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Message::ExecuteTask { .. } => "execute_task",
            Message::CancelTask { .. } => "cancel_task",
            Message::Ping {} => "ping",
            Message::Hello { .. } => "hello",
            Message::TaskStatus { .. } => "task_status",
            Message::ReplanRequest { .. } => "replan_request",
            Message::Pong {} => "pong",
            Message::Error { .. } => "error",
            Message::CtlRobotRegister { .. } => "ctl_robot_register",
            Message::CtlRobotList {} => "ctl_robot_list",
            Message::CtlRobotRemove { .. } => "ctl_robot_remove",
            Message::CtlRobotDeploy { .. } => "ctl_robot_deploy",
            Message::CtlWorldAdd { .. } => "ctl_world_add",
            Message::CtlWorldList {} => "ctl_world_list",
            Message::CtlWorldRemove { .. } => "ctl_world_remove",
            Message::CtlGoalAdd { .. } => "ctl_goal_add",
            Message::CtlGoalList {} => "ctl_goal_list",
            Message::CtlGoalRemove { .. } => "ctl_goal_remove",
            Message::CtlPlanCreate { .. } => "ctl_plan_create",
            Message::CtlPlanShow { .. } => "ctl_plan_show",
            Message::CtlTaskAdd { .. } => "ctl_task_add",
            Message::CtlRun { .. } => "ctl_run",
            Message::CtlStatus { .. } => "ctl_status",
            Message::CtlReply { .. } => "ctl_reply",
        }
    }

    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("messages serialize");
        s.push('\n');
        s
    }
}

#[derive(Debug)]
pub enum ReadError {
    Io(io::Error),
    TooLong,
}

impl From<io::Error> for ReadError {
    fn from(e: io::Error) -> Self {
        ReadError::Io(e)
    }
}

/// Reads one line of at most `max` bytes. An overlong line is consumed up
/// to its newline and reported as `TooLong`. `Ok(None)` at end of stream.
pub fn read_line_capped<R: BufRead>(reader: &mut R, max: usize) -> Result<Option<Vec<u8>>, ReadError> {
    let mut line = Vec::new();
    let mut overflow = false;
    loop {
        let buf = match reader.fill_buf() {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        };
        if buf.is_empty() {
            if line.is_empty() && !overflow {
                return Ok(None);
            }
            break;
        }
        let (chunk, done) = match buf.iter().position(|&b| b == b'\n') {
            Some(i) => (&buf[..i], Some(i + 1)),
            None => (buf, None),
        };
        if !overflow {
            if line.len() + chunk.len() > max {
                overflow = true;
                line.clear();
            } else {
                line.extend_from_slice(chunk);
            }
        }
        let used = done.unwrap_or(buf.len());
        reader.consume(used);
        if done.is_some() {
            break;
        }
    }
    if overflow {
        return Err(ReadError::TooLong);
    }
    if line.last() == Some(&b'\r') {
        line.pop();
    }
    Ok(Some(line))
}

/// Decodes one line, or produces the error reply to send back.
pub fn decode(line: &[u8]) -> Result<Message, Message> {
    let text = std::str::from_utf8(line).map_err(|e| Message::error(codes::PARSE_ERROR, format!("invalid UTF-8: {e}")))?;
    if text.trim().is_empty() {
        return Err(Message::error(codes::PARSE_ERROR, "empty line"));
    }
    serde_json::from_str(text).map_err(|e| Message::error(codes::PARSE_ERROR, e.to_string()))
}

pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> io::Result<()> {
    w.write_all(msg.to_line().as_bytes())?;
    w.flush()
}

/// What the next line on a connection turned into.
pub enum Incoming {
    Message(Message),
    Invalid(Message),
    Closed,
}

pub fn next_incoming<R: BufRead>(reader: &mut R) -> io::Result<Incoming> {
    match read_line_capped(reader, MAX_LINE_BYTES) {
        Ok(None) => Ok(Incoming::Closed),
        Ok(Some(line)) => Ok(match decode(&line) {
            Ok(m) => Incoming::Message(m),
            Err(e) => Incoming::Invalid(e),
        }),
        Err(ReadError::TooLong) => Ok(Incoming::Invalid(Message::error(
            codes::LINE_TOO_LONG,
            format!("line exceeds {MAX_LINE_BYTES} bytes"),
        ))),
        Err(ReadError::Io(e)) => Err(e),
    }
}
