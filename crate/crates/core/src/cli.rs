//! The `kerbtrip` command line.
//!
//! Exit codes: 0 success, 1 error (I/O, parse, network), 2 simulated outcome
//! differs from what was expected, 3 protocol failure in `client-auth`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::crypto::{derive_key, Keytab};
use crate::netsim::{bundled, matrix, run_scenario, ScenarioSpec, Trace};
use crate::principals::{Timing, Variant};
use crate::protocol::{decode, MessageKind, PrincipalId};
use crate::transport::{self, ClientAuthConfig, DaemonConfig, DaemonRole};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_MISMATCH: i32 = 2;
pub const EXIT_PROTOCOL: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "kerbtrip",
    version,
    about = "Baseline and triple-password ticket protocol: simulator, daemons, client"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario and check its [expect] block.
    SimRun(SimRunArgs),
    /// Run every bundled scenario and print the variant x attack grid.
    SimMatrix(SimMatrixArgs),
    /// Pretty-print a JSONL trace.
    TraceDump(TraceDumpArgs),
    /// Write one keytab per node of a scenario.
    KeytabGen(KeytabGenArgs),
    /// Run an AS, TGS or service daemon.
    Serve(ServeArgs),
    /// Authenticate against running daemons.
    ClientAuth(ClientAuthArgs),
}

#[derive(Debug, Args)]
pub struct TimingArgs {
    /// Challenge timer (ticks in the simulator, seconds on the wire).
    #[arg(long)]
    pub timer: Option<i64>,
    /// Authenticator freshness window.
    #[arg(long)]
    pub freshness: Option<u64>,
}

impl TimingArgs {
    fn apply(&self, mut t: Timing) -> Timing {
        if let Some(v) = self.timer {
            t.timer_duration = v;
        }
        if let Some(v) = self.freshness {
            t.freshness_window = v;
        }
        t
    }
}

#[derive(Debug, Args)]
pub struct SimRunArgs {
    /// Scenario file, or `bundled:<name>`.
    pub scenario: String,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[command(flatten)]
    pub timing: TimingArgs,
    /// Write the full trace (JSONL) here.
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimMatrixArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Write the table here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write each run's canonical trace into this directory.
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TraceDumpArgs {
    pub trace: PathBuf,
    /// Only these event kinds (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub kind: Vec<String>,
    /// Decode each frame and print its fields.
    #[arg(long)]
    pub frames: bool,
}

#[derive(Debug, Args)]
pub struct KeytabGenArgs {
    /// Scenario file, or `bundled:<name>`.
    pub scenario: String,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub role: DaemonRole,
    #[arg(long)]
    pub listen: String,
    #[arg(long)]
    pub keytab: PathBuf,
    /// `name=host:port`, repeatable.
    #[arg(long = "peer", value_parser = parse_peer)]
    pub peers: Vec<(String, String)>,
    #[arg(long, default_value = "triple")]
    pub variant: Variant,
    /// Principal name; defaults to the role name.
    #[arg(long)]
    pub id: Option<String>,
    #[arg(long, default_value = "tgs")]
    pub tgs_id: String,
    #[command(flatten)]
    pub timing: TimingArgs,
}

#[derive(Debug, Args)]
pub struct ClientAuthArgs {
    #[arg(long)]
    pub client: String,
    /// Keytab holding the client's three password keys.
    #[arg(long, required_unless_present = "password")]
    pub keytab: Option<PathBuf>,
    /// The three passwords, in order, instead of a keytab.
    #[arg(long, num_args = 3, conflicts_with = "keytab")]
    pub password: Option<Vec<String>>,
    #[arg(long, default_value = "v")]
    pub server: String,
    #[arg(long, default_value = "tgs")]
    pub tgs_id: String,
    /// `as=host:port`, `tgs=host:port`, `v=host:port`; repeatable.
    #[arg(long = "peer", value_parser = parse_peer)]
    pub peers: Vec<(String, String)>,
    #[arg(long, default_value = "triple")]
    pub variant: Variant,
    #[command(flatten)]
    pub timing: TimingArgs,
    /// Seconds to wait for each reply.
    #[arg(long, default_value_t = 5)]
    pub reply_timeout: u64,
    /// Stop after sending this message (for exercising the server timer).
    #[arg(long)]
    pub stop_after: Option<String>,
}

fn parse_peer(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.is_empty() && !v.is_empty() => Ok((k.to_string(), v.to_string())),
        _ => Err(format!("expected name=host:port, got {s:?}")),
    }
}

fn load_scenario(arg: &str) -> Result<ScenarioSpec> {
    if let Some(name) = arg.strip_prefix("bundled:") {
        return bundled(name).ok_or_else(|| anyhow!("no bundled scenario {name:?}"));
    }
    Ok(ScenarioSpec::load(arg)?)
}

/// Parses `args` (program name first) and runs the command. Results go to
/// `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return EXIT_ERROR;
            }
            let _ = write!(out, "{}", e.render());
            return EXIT_OK;
        }
    };
    match execute(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            EXIT_ERROR
        }
    }
}

pub fn execute(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match command {
        Command::SimRun(a) => sim_run(a, out),
        Command::SimMatrix(a) => sim_matrix(a, out),
        Command::TraceDump(a) => trace_dump(a, out),
        Command::KeytabGen(a) => keytab_gen(a, out),
        Command::Serve(a) => serve(a),
        Command::ClientAuth(a) => client_auth(a, out, err),
    }
}

fn sim_run(a: SimRunArgs, out: &mut dyn Write) -> Result<i32> {
    let mut spec = load_scenario(&a.scenario)?;
    if let Some(v) = a.variant {
        spec.variant.kind = v;
    }
    let t = a.timing.apply(spec.timing.principal_timing());
    spec.timing.timer_duration = t.timer_duration;
    spec.timing.freshness_window = t.freshness_window;
    let run = run_scenario(&spec, a.seed)?;
    if let Some(path) = &a.trace_out {
        std::fs::write(path, run.trace.to_jsonl()).with_context(|| format!("writing {}", path.display()))?;
    }
    writeln!(out, "scenario={} variant={} seed={}", spec.name, spec.variant(), a.seed)?;
    writeln!(out, "{}", run.verdict.summary())?;
    for n in &run.verdict.compromise_notices {
        writeln!(out, "notice: {n}")?;
    }
    let mismatches = spec.expect.mismatches(&run.verdict);
    if mismatches.is_empty() {
        if !spec.expect.is_empty() {
            writeln!(out, "expect: ok")?;
        }
        Ok(EXIT_OK)
    } else {
        for m in mismatches {
            writeln!(out, "expect mismatch: {m}")?;
        }
        Ok(EXIT_MISMATCH)
    }
}

fn sim_matrix(a: SimMatrixArgs, out: &mut dyn Write) -> Result<i32> {
    let cells = matrix::run_matrix(a.seed)?;
    let table = matrix::render(&cells);
    out.write_all(table.as_bytes())?;
    if let Some(path) = &a.out {
        std::fs::write(path, &table).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(dir) = &a.trace_out {
        std::fs::create_dir_all(dir)?;
        for c in &cells {
            let path = dir.join(format!("{}.jsonl", c.expected.scenario));
            std::fs::write(&path, c.run.trace.canonical_jsonl())
                .with_context(|| format!("writing {}", path.display()))?;
        }
    }
    Ok(if cells.iter().all(|c| c.ok()) {
        EXIT_OK
    } else {
        EXIT_MISMATCH
    })
}

fn trace_dump(a: TraceDumpArgs, out: &mut dyn Write) -> Result<i32> {
    let text = std::fs::read_to_string(&a.trace).with_context(|| format!("reading {}", a.trace.display()))?;
    let trace = Trace::from_jsonl(&text).with_context(|| format!("parsing {}", a.trace.display()))?;
    for ev in &trace.events {
        if !a.kind.is_empty() && !a.kind.iter().any(|k| *k == ev.kind.to_string()) {
            continue;
        }
        let route = if ev.dst.is_empty() {
            ev.src.clone()
        } else {
            format!("{}->{}", ev.src, ev.dst)
        };
        write!(
            out,
            "{:>5} {:>4} {:<10} {:<16} {}",
            ev.tick,
            ev.seq,
            ev.kind.to_string(),
            route,
            ev.msg
        )?;
        if !ev.meta.is_empty() {
            write!(out, " [{}]", ev.meta)?;
        }
        writeln!(out)?;
        if a.frames {
            if let Some(frame) = &ev.frame {
                let decoded = hex::decode(frame).map_err(|e| anyhow!("seq {}: {e}", ev.seq))?;
                match decode(&decoded) {
                    Ok(msg) => writeln!(out, "      frame {} bytes: {:?}", decoded.len(), msg)?,
                    Err(e) => writeln!(out, "      frame {} bytes: undecodable ({e})", decoded.len())?,
                }
            }
        }
    }
    Ok(EXIT_OK)
}

fn keytab_gen(a: KeytabGenArgs, out: &mut dyn Write) -> Result<i32> {
    let spec = load_scenario(&a.scenario)?;
    std::fs::create_dir_all(&a.out_dir)?;
    for (node, tab) in spec.keytabs()? {
        let path = a.out_dir.join(format!("{node}.keytab"));
        tab.save(&path).with_context(|| format!("writing {}", path.display()))?;
        writeln!(out, "{} ({} keys)", path.display(), tab.len())?;
    }
    Ok(EXIT_OK)
}

fn serve(a: ServeArgs) -> Result<i32> {
    let mut cfg = DaemonConfig::new(a.role, a.listen, a.keytab, a.variant);
    if let Some(id) = a.id {
        cfg.id = PrincipalId::new(id)?;
    }
    cfg.tgs_id = PrincipalId::new(a.tgs_id)?;
    cfg.timing = a.timing.apply(cfg.timing);
    cfg.peer_addrs = a.peers.into_iter().collect();
    transport::serve(cfg)?;
    Ok(EXIT_OK)
}

fn client_keys(a: &ClientAuthArgs) -> Result<[crate::crypto::SymmetricKey; 3]> {
    if let Some(pw) = &a.password {
        let k = |i: usize| derive_key(&pw[i], &a.client, i as u8 + 1);
        return Ok([k(0)?, k(1)?, k(2)?]);
    }
    let path = a.keytab.as_deref().unwrap_or(Path::new(""));
    let tab = Keytab::load(path).with_context(|| format!("reading {}", path.display()))?;
    tab.client_keys(&a.client)
        .ok_or_else(|| anyhow!("{} has no password keys for {}", path.display(), a.client))
}

fn client_auth(a: ClientAuthArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let stop_after = match &a.stop_after {
        None => None,
        Some(s) => Some(MessageKind::from_name(s).ok_or_else(|| anyhow!("unknown message kind {s:?}"))?),
    };
    let peers: BTreeMap<String, String> = a.peers.iter().cloned().collect();
    if !peers.contains_key("as") {
        bail!("--peer as=host:port is required");
    }
    let cfg = ClientAuthConfig {
        client: PrincipalId::new(a.client.as_str())?,
        keys: client_keys(&a)?,
        tgs_id: PrincipalId::new(a.tgs_id.as_str())?,
        server: PrincipalId::new(a.server.as_str())?,
        peers,
        variant: a.variant,
        timing: a.timing.apply(Timing::default()),
        io_timeout: Duration::from_secs(a.reply_timeout),
        stop_after,
    };
    match transport::client_auth(&cfg, out) {
        Ok(report) => {
            match report.outcome {
                Some(_) => writeln!(out, "MutualAuthOk server={}", cfg.server)?,
                None => writeln!(out, "stopped after {}", a.stop_after.unwrap_or_default())?,
            }
            Ok(EXIT_OK)
        }
        Err(e) => {
            writeln!(err, "client-auth failed: {e}")?;
            Ok(e.exit_code())
        }
    }
}
