use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::{Command, ExitCode, Stdio};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use robotfleet::ctl::{render_dot, render_plan, render_table, Client, CtlError, DEFAULT_ADDR};
use robotfleet::experiments::{emit_table, run_sweep, Scenario, TableFormat};
use robotfleet::model::{Allocation, Plan, Strategy};
use robotfleet::protocol::Message;
use robotfleet::scheduling::AllocatorChoice;
use serde_json::Value;

/// Command-line client for fleetd.
#[derive(Debug, Parser)]
#[command(name = "robotctl", version)]
struct Cli {
    /// fleetd address.
    #[arg(long, global = true, default_value = DEFAULT_ADDR, env = "FLEETD_ADDR")]
    addr: String,
    /// `records` prints each reply as JSON lines.
    #[arg(long, global = true, value_enum, default_value_t = Output::Text)]
    output: Output,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Output {
    Text,
    Records,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Robot registry.
    #[command(subcommand)]
    Robot(RobotCmd),
    /// Statements about the environment.
    #[command(subcommand)]
    World(WorldCmd),
    /// Mission goals.
    #[command(subcommand)]
    Goal(GoalCmd),
    /// Plan drafts.
    #[command(subcommand)]
    Plan(PlanCmd),
    /// Hand-built plans.
    #[command(subcommand)]
    Task(TaskCmd),
    /// Start a mission from a plan.
    Run { plan: String },
    /// Mission progress.
    Status {
        mission: Option<String>,
        /// Refresh every SECS seconds until the mission finishes.
        #[arg(long, value_name = "SECS")]
        watch: Option<f64>,
    },
    /// Offline idle-time experiments.
    #[command(subcommand)]
    Sim(SimCmd),
}

#[derive(Debug, Subcommand)]
enum RobotCmd {
    /// Register a robot from a YAML document ("-" reads stdin).
    Register { file: PathBuf },
    List,
    Remove { name: String },
    /// Print the command that starts the robot's worker.
    Deploy { name: String },
    /// Register a robot and launch a local simulated worker on its endpoint.
    Spawn(SpawnArgs),
}

#[derive(Debug, Args)]
struct SpawnArgs {
    file: PathBuf,
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    fast_forward: bool,
}

#[derive(Debug, Subcommand)]
enum WorldCmd {
    Add {
        #[arg(required = true, num_args = 1..)]
        text: Vec<String>,
    },
    List,
    Remove { id: String },
}

#[derive(Debug, Subcommand)]
enum GoalCmd {
    Add {
        #[arg(required = true, num_args = 1..)]
        text: Vec<String>,
    },
    List,
    Remove { id: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PlanFormat {
    Text,
    Dot,
}

#[derive(Debug, Subcommand)]
enum PlanCmd {
    /// Plan the current goals (manual gives an empty draft).
    Create {
        #[arg(long, default_value = "per-goal")]
        planner: Strategy,
        #[arg(long, default_value = "milp")]
        allocator: AllocatorChoice,
    },
    Show {
        id: String,
        #[arg(long, value_enum, default_value_t = PlanFormat::Text)]
        format: PlanFormat,
    },
}

#[derive(Debug, Subcommand)]
enum TaskCmd {
    Add {
        #[arg(long)]
        plan: String,
        #[arg(long = "desc")]
        description: String,
        /// Comma-separated task ids this task waits for.
        #[arg(long, value_delimiter = ',')]
        after: Vec<String>,
        #[arg(long)]
        robot: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
enum SimCmd {
    /// Sweep planners and allocators over a scenario.
    Run {
        /// Scenario YAML; the built-in household scenario when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value = "markdown")]
        format: TableFormat,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum Failure {
    Ctl(CtlError),
    Other(String),
}

impl From<CtlError> for Failure {
    fn from(e: CtlError) -> Self {
        Failure::Ctl(e)
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Ctl(e) => e.fmt(f),
            Failure::Other(m) => f.write_str(m),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("robotctl: {e}");
            ExitCode::from(1)
        }
    }
}

struct Session<'a> {
    addr: &'a str,
    output: Output,
    client: Option<Client>,
}

impl Session<'_> {
    fn request(&mut self, msg: Message) -> Result<Value, Failure> {
        if self.client.is_none() {
            self.client = Some(Client::connect(self.addr)?);
        }
        Ok(self.client.as_mut().unwrap().request(&msg)?)
    }

    /// Prints `data` as records, or `text` otherwise.
    fn emit(&self, data: &Value, text: impl FnOnce(&Value) -> String) {
        match self.output {
            Output::Records => match data {
                Value::Array(items) => items.iter().for_each(|i| println!("{i}")),
                other => println!("{other}"),
            },
            Output::Text => print!("{}", text(data)),
        }
    }
}

fn s(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => "-".into(),
        other => other.to_string(),
    }
}

fn rows(data: &Value, cols: impl Fn(&Value) -> Vec<String>) -> Vec<Vec<String>> {
    data.as_array().map(|a| a.iter().map(cols).collect()).unwrap_or_default()
}

fn plan_of(data: &Value) -> Result<(Plan, Allocation), Failure> {
    let plan = serde_json::from_value(data["plan"].clone()).map_err(|e| Failure::Other(format!("bad plan in reply: {e}")))?;
    let alloc = serde_json::from_value(data["allocation"].clone())
        .map_err(|e| Failure::Other(format!("bad allocation in reply: {e}")))?;
    Ok((plan, alloc))
}

fn run(cli: &Cli) -> Result<ExitCode, Failure> {
    let mut ss = Session {
        addr: &cli.addr,
        output: cli.output,
        client: None,
    };
    match &cli.command {
        Cmd::Robot(cmd) => robot(&mut ss, cmd)?,
        Cmd::World(cmd) => {
            let data = match cmd {
                WorldCmd::Add { text } => ss.request(Message::CtlWorldAdd { text: text.join(" ") })?,
                WorldCmd::List => ss.request(Message::CtlWorldList {})?,
                WorldCmd::Remove { id } => ss.request(Message::CtlWorldRemove { id: id.clone() })?,
            };
            ss.emit(&data, |d| match cmd {
                WorldCmd::List => render_table(
                    &["ID", "SOURCE", "TEXT"],
                    &rows(d, |r| vec![s(&r["id"]), s(&r["source"]), s(&r["text"])]),
                ),
                WorldCmd::Add { .. } => format!("added {}: {}\n", s(&d["id"]), s(&d["text"])),
                WorldCmd::Remove { .. } => format!("removed {}\n", s(&d["id"])),
            });
        }
        Cmd::Goal(cmd) => {
            let data = match cmd {
                GoalCmd::Add { text } => ss.request(Message::CtlGoalAdd { text: text.join(" ") })?,
                GoalCmd::List => ss.request(Message::CtlGoalList {})?,
                GoalCmd::Remove { id } => ss.request(Message::CtlGoalRemove { id: id.clone() })?,
            };
            ss.emit(&data, |d| match cmd {
                GoalCmd::List => render_table(&["ID", "TEXT"], &rows(d, |r| vec![s(&r["id"]), s(&r["text"])])),
                GoalCmd::Add { .. } => format!("added {}: {}\n", s(&d["id"]), s(&d["text"])),
                GoalCmd::Remove { .. } => format!("removed {}\n", s(&d["id"])),
            });
        }
        Cmd::Plan(PlanCmd::Create { planner, allocator }) => {
            let data = ss.request(Message::CtlPlanCreate {
                planner: *planner,
                allocator: *allocator,
            })?;
            let (plan, alloc) = plan_of(&data)?;
            for w in &alloc.warnings {
                eprintln!("warning: {w}");
            }
            ss.emit(&data, |d| {
                let mut out = format!(
                    "created {} ({} tasks, {} allocation{})\n",
                    s(&d["id"]),
                    plan.len(),
                    s(&d["allocation"]["method"]),
                    if alloc.feasible { "" } else { ", infeasible" }
                );
                out.push_str(&render_plan(&plan, &alloc));
                out
            });
        }
        Cmd::Plan(PlanCmd::Show { id, format }) => {
            let data = ss.request(Message::CtlPlanShow { id: id.clone() })?;
            let (plan, alloc) = plan_of(&data)?;
            ss.emit(&data, |_| match format {
                PlanFormat::Text => render_plan(&plan, &alloc),
                PlanFormat::Dot => render_dot(&plan, &alloc),
            });
        }
        Cmd::Task(TaskCmd::Add {
            plan,
            description,
            after,
            robot,
        }) => {
            let data = ss.request(Message::CtlTaskAdd {
                plan: plan.clone(),
                description: description.clone(),
                after: after.clone(),
                robot: robot.clone(),
            })?;
            ss.emit(&data, |d| {
                format!("added {} to {plan} [{}]\n", s(&d["id"]), s(&d["assigned_robot"]))
            });
        }
        Cmd::Run { plan } => {
            let data = ss.request(Message::CtlRun { plan: plan.clone() })?;
            ss.emit(&data, |d| format!("started {}\n", s(&d["mission"])));
        }
        Cmd::Status { mission, watch } => return status(&mut ss, mission.clone(), *watch),
        Cmd::Sim(SimCmd::Run { scenario, format, out }) => {
            let (sc, book) = match scenario {
                Some(p) => Scenario::load(p).map_err(|e| Failure::Other(e.to_string()))?,
                None => Scenario::default_with_book(),
            };
            let results = run_sweep(&sc, &book).map_err(|e| Failure::Other(e.to_string()))?;
            let table = emit_table(&results, *format);
            match out {
                Some(p) => std::fs::write(p, &table).map_err(|e| Failure::Other(format!("{}: {e}", p.display())))?,
                None => print!("{table}"),
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn robot(ss: &mut Session<'_>, cmd: &RobotCmd) -> Result<(), Failure> {
    match cmd {
        RobotCmd::Register { file } => {
            let data = register(ss, file)?;
            ss.emit(&data, |d| {
                let reach = if d["reachable"] == Value::Bool(true) { "reachable" } else { "not reachable yet" };
                format!("registered {} ({reach})\n", s(&d["name"]))
            });
        }
        RobotCmd::List => {
            let data = ss.request(Message::CtlRobotList {})?;
            ss.emit(&data, |d| {
                render_table(
                    &["NAME", "CAPABILITIES", "ENDPOINT", "MODE"],
                    &rows(d, |r| {
                        let caps: Vec<String> = r["capabilities"].as_array().into_iter().flatten().map(s).collect();
                        vec![
                            s(&r["name"]),
                            caps.join(","),
                            format!("{}:{}", s(&r["endpoint"]["host"]), s(&r["endpoint"]["port"])),
                            s(&r["deployment"]["mode"]),
                        ]
                    }),
                )
            });
        }
        RobotCmd::Remove { name } => {
            let data = ss.request(Message::CtlRobotRemove { name: name.clone() })?;
            ss.emit(&data, |d| format!("removed {}\n", s(&d["name"])));
        }
        RobotCmd::Deploy { name } => {
            let data = ss.request(Message::CtlRobotDeploy { name: name.clone() })?;
            ss.emit(&data, |d| format!("{}\n", s(&d["command"])));
        }
        RobotCmd::Spawn(args) => {
            let spec = register(ss, &args.file)?;
            let name = s(&spec["name"]);
            let listen = format!("{}:{}", s(&spec["endpoint"]["host"]), s(&spec["endpoint"]["port"]));
            let exe = std::env::current_exe()
                .ok()
                .and_then(|p| p.parent().map(|d| d.join(format!("worker-sim{}", std::env::consts::EXE_SUFFIX))))
                .filter(|p| p.exists())
                .unwrap_or_else(|| PathBuf::from("worker-sim"));
            let mut cmd = Command::new(&exe);
            cmd.args(["--name", &name, "--listen", &listen, "--manager", ss.addr]);
            if let Some(p) = &args.profile {
                cmd.arg("--profile").arg(p);
            }
            if let Some(d) = args.duration {
                cmd.arg("--duration").arg(d.to_string());
            }
            if args.fast_forward {
                cmd.arg("--fast-forward");
            }
            let child = cmd
                .stdin(Stdio::null())
                .stdout(Stdio::null())
                .stderr(Stdio::null())
                .spawn()
                .map_err(|e| Failure::Other(format!("cannot start {}: {e}", exe.display())))?;
            let data = serde_json::json!({ "name": name, "listen": listen, "pid": child.id() });
            ss.emit(&data, |d| format!("spawned {} on {} (pid {})\n", s(&d["name"]), s(&d["listen"]), d["pid"]));
        }
    }
    Ok(())
}

fn register(ss: &mut Session<'_>, file: &PathBuf) -> Result<Value, Failure> {
    let mut document = String::new();
    let read = if file.as_os_str() == "-" {
        std::io::stdin().read_to_string(&mut document).map(|_| ())
    } else {
        std::fs::read_to_string(file).map(|t| document = t)
    };
    read.map_err(|e| Failure::Other(format!("{}: {e}", file.display())))?;
    ss.request(Message::CtlRobotRegister { document })
}

fn status_text(d: &Value) -> String {
    let mut out = format!(
        "mission {} (plan {}): {}, round {}, {}/{} succeeded\n",
        s(&d["id"]),
        s(&d["plan"]),
        s(&d["phase"]),
        s(&d["round"]),
        s(&d["succeeded"]),
        s(&d["total"])
    );
    if let Some(diag) = d["diagnostic"].as_str() {
        out.push_str(&format!("diagnostic: {diag}\n"));
    }
    out.push_str(&render_table(
        &["TASK", "STATUS", "ROBOT", "ATTEMPTS", "DESCRIPTION"],
        &rows(&d["tasks"], |t| {
            vec![s(&t["id"]), s(&t["status"]), s(&t["robot"]), s(&t["attempts"]), s(&t["description"])]
        }),
    ));
    out
}

fn status(ss: &mut Session<'_>, mission: Option<String>, watch: Option<f64>) -> Result<ExitCode, Failure> {
    let interval = match watch {
        Some(secs) if !secs.is_finite() || secs <= 0.0 => {
            return Err(Failure::Other("--watch needs a positive number of seconds".into()));
        }
        Some(secs) => Some(Duration::from_secs_f64(secs)),
        None => None,
    };
    loop {
        let data = ss.request(Message::CtlStatus { mission: mission.clone() })?;
        ss.emit(&data, status_text);
        let _ = std::io::stdout().flush();
        let phase = data["phase"].as_str().unwrap_or_default();
        let finished = phase == "done" || phase == "aborted";
        match interval {
            Some(i) if !finished => std::thread::sleep(i),
            _ => return Ok(if phase == "aborted" && watch.is_some() { ExitCode::from(1) } else { ExitCode::SUCCESS }),
        }
    }
}
