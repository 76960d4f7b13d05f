//! Scenario scripts: end-to-end runs of the `peershare` binary.
//!
//! ```text
//! # comment
//! & server: peershare serve --listen 127.0.0.1:0 --generate-cert
//! file peershare.toml
//! | server_url = "${server.url}"
//! $ peershare agent status -u alice
//! > {"pending": 0}
//! ? 0
//! = obj /0/object_id
//! ~ 20
//! $ peershare app list -u bob -a android/peersense
//! stop server
//! ```
//!
//! `&` starts a daemon and waits for its JSON ready line, whose fields become
//! `${name.field}`. `$` runs a command; the `>` lines after it are expected
//! output (a JSON subset when they parse as JSON, otherwise substrings) and
//! `?` the exit code, 0 by default. `~ N` retries the next command up to N
//! times until it meets its expectations. `= var /pointer` captures a value
//! from the last JSON output. Every command runs in `${WORK}` with `--json`,
//! and with `PEERSHARE_CONFIG` pointing at `peershare.toml` once it exists.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use serde_json::Value;

use crate::args::ScenarioArgs;
use crate::error::{exit, CliError};
use crate::output::Output;

const READY_TIMEOUT: Duration = Duration::from_secs(20);
const RETRY_PAUSE: Duration = Duration::from_millis(250);
const CONFIG_FILE: &str = "peershare.toml";

#[derive(Debug, Clone, PartialEq)]
enum Step {
    Daemon {
        line: usize,
        name: String,
        argv: String,
    },
    Run {
        line: usize,
        argv: String,
        expect: Vec<String>,
        exit: i32,
        attempts: u32,
    },
    Capture {
        line: usize,
        var: String,
        pointer: String,
    },
    File {
        line: usize,
        path: String,
        body: Vec<String>,
    },
    Stop {
        line: usize,
        name: String,
    },
}

fn parse(text: &str) -> Result<Vec<Step>, String> {
    let mut steps = Vec::new();
    let mut attempts = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |m: &str| Err(format!("line {line}: {m}"));
        let trimmed = raw.trim_end();
        if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
            continue;
        }
        let (tag, rest) = trimmed.split_once(' ').unwrap_or((trimmed, ""));
        match tag {
            "$" => steps.push(Step::Run {
                line,
                argv: rest.into(),
                expect: Vec::new(),
                exit: 0,
                attempts: attempts.take().unwrap_or(1),
            }),
            ">" | "?" | "|" => match (tag, steps.last_mut()) {
                (">", Some(Step::Run { expect, .. })) => expect.push(rest.into()),
                ("?", Some(Step::Run { exit, .. })) => {
                    *exit = match rest.trim().parse() {
                        Ok(n) => n,
                        Err(_) => return err("`?` takes an exit code"),
                    }
                }
                ("|", Some(Step::File { body, .. })) => body.push(rest.into()),
                _ => {
                    return err(&format!(
                        "`{tag}` must follow {}",
                        if tag == "|" { "`file`" } else { "`$`" }
                    ))
                }
            },
            "&" => match rest.split_once(':') {
                Some((name, argv)) if !name.trim().is_empty() => steps.push(Step::Daemon {
                    line,
                    name: name.trim().into(),
                    argv: argv.trim().into(),
                }),
                _ => return err("`&` takes `name: command`"),
            },
            "~" => match rest.trim().parse::<u32>() {
                Ok(n) if n > 0 => attempts = Some(n),
                _ => return err("`~` takes a positive attempt count"),
            },
            "=" => match rest.split_once(' ') {
                Some((var, pointer)) => steps.push(Step::Capture {
                    line,
                    var: var.into(),
                    pointer: pointer.trim().into(),
                }),
                None => return err("`=` takes `var /pointer`"),
            },
            "file" if !rest.is_empty() => steps.push(Step::File {
                line,
                path: rest.trim().into(),
                body: Vec::new(),
            }),
            "stop" if !rest.is_empty() => steps.push(Step::Stop {
                line,
                name: rest.trim().into(),
            }),
            _ => return err(&format!("unknown directive {tag:?}")),
        }
        if attempts.is_some() && tag != "~" {
            return err("`~` must be followed by `$`");
        }
    }
    Ok(steps)
}

/// `expected` is contained in `actual`: objects by key, arrays element-wise
/// in any order but with equal length, scalars by equality.
pub fn json_subset(expected: &Value, actual: &Value) -> bool {
    match (expected, actual) {
        (Value::Object(e), Value::Object(a)) => e.iter().all(|(k, v)| a.get(k).is_some_and(|av| json_subset(v, av))),
        (Value::Array(e), Value::Array(a)) => {
            if e.len() != a.len() {
                return false;
            }
            let mut used = vec![false; a.len()];
            e.iter().all(|ev| {
                let hit = a.iter().enumerate().position(|(i, av)| !used[i] && json_subset(ev, av));
                hit.map(|i| used[i] = true).is_some()
            })
        }
        _ => expected == actual,
    }
}

fn substitute(text: &str, vars: &BTreeMap<String, String>) -> Result<String, String> {
    let mut out = String::new();
    let mut rest = text;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        let end = rest[start..]
            .find('}')
            .ok_or_else(|| format!("unclosed ${{ in {text:?}"))?
            + start;
        let name = &rest[start + 2..end];
        out.push_str(vars.get(name).ok_or_else(|| format!("undefined variable {name:?}"))?);
        rest = &rest[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

struct Daemon {
    child: Child,
}

impl Drop for Daemon {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

struct Run {
    exe: PathBuf,
    work: PathBuf,
    vars: BTreeMap<String, String>,
    daemons: BTreeMap<String, Daemon>,
    last: Option<Value>,
}

struct Outcome {
    code: i32,
    stdout: String,
    stderr: String,
}

impl Run {
    fn command(&self, argv: &str) -> Result<Command, String> {
        let line = substitute(argv, &self.vars)?;
        let words = shlex::split(&line).ok_or_else(|| format!("cannot split {line:?}"))?;
        match words.split_first() {
            Some((program, args)) if program == "peershare" => {
                let mut cmd = Command::new(&self.exe);
                cmd.args(args)
                    .arg("--json")
                    .current_dir(&self.work)
                    .env_remove("PEERSHARE_CONFIG");
                let config = self.work.join(CONFIG_FILE);
                if config.exists() {
                    cmd.env("PEERSHARE_CONFIG", config);
                }
                Ok(cmd)
            }
            _ => Err(format!("commands must start with `peershare`: {line:?}")),
        }
    }

    fn daemon(&mut self, name: &str, argv: &str) -> Result<(), String> {
        let log = std::fs::File::create(self.work.join(format!("{name}.log"))).map_err(|e| e.to_string())?;
        let mut child = self
            .command(argv)?
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(log)
            .spawn()
            .map_err(|e| format!("spawn {name}: {e}"))?;
        let stdout = child.stdout.take().expect("piped");
        let daemon = Daemon { child };
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines().map_while(Result::ok) {
                if let Ok(v) = serde_json::from_str::<Value>(&line) {
                    if v.get("ready").is_some() {
                        let _ = tx.send(v);
                    }
                }
            }
        });
        let ready = rx
            .recv_timeout(READY_TIMEOUT)
            .map_err(|_| format!("{name} never became ready; see {name}.log"))?;
        if let Value::Object(fields) = ready {
            for (k, v) in fields {
                let text = v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string());
                self.vars.insert(format!("{name}.{k}"), text);
            }
        }
        self.daemons.insert(name.into(), daemon);
        Ok(())
    }

    fn run_once(&self, argv: &str) -> Result<Outcome, String> {
        let output = self
            .command(argv)?
            .stdin(Stdio::null())
            .output()
            .map_err(|e| e.to_string())?;
        Ok(Outcome {
            code: output.status.code().unwrap_or(-1),
            stdout: String::from_utf8_lossy(&output.stdout).trim().to_string(),
            stderr: String::from_utf8_lossy(&output.stderr).trim().to_string(),
        })
    }

    fn check(&self, o: &Outcome, expect: &[String], exit: i32) -> Result<(), String> {
        if o.code != exit {
            return Err(format!("exit {} (wanted {exit})", o.code));
        }
        if expect.is_empty() {
            return Ok(());
        }
        let wanted = substitute(&expect.join("\n"), &self.vars)?;
        match serde_json::from_str::<Value>(&wanted) {
            Ok(want) => {
                let got: Value = serde_json::from_str(&o.stdout).map_err(|_| "output is not JSON".to_string())?;
                if json_subset(&want, &got) {
                    Ok(())
                } else {
                    Err(format!("output does not contain {want}"))
                }
            }
            Err(_) => match wanted.lines().find(|w| !o.stdout.contains(w.trim())) {
                None => Ok(()),
                Some(missing) => Err(format!("output lacks {:?}", missing.trim())),
            },
        }
    }

    fn step(&mut self, step: &Step) -> Result<(), String> {
        match step {
            Step::Daemon { name, argv, .. } => self.daemon(name, argv),
            Step::Stop { name, .. } => match self.daemons.remove(name) {
                Some(d) => {
                    drop(d);
                    Ok(())
                }
                None => Err(format!("no daemon named {name:?}")),
            },
            Step::File { path, body, .. } => {
                let text = substitute(&(body.join("\n") + "\n"), &self.vars)?;
                std::fs::write(self.work.join(path), text).map_err(|e| e.to_string())
            }
            Step::Capture { var, pointer, .. } => {
                let v = self
                    .last
                    .as_ref()
                    .and_then(|last| last.pointer(pointer))
                    .ok_or_else(|| format!("{pointer} not found in the last output"))?;
                let text = v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string());
                self.vars.insert(var.clone(), text);
                Ok(())
            }
            Step::Run {
                argv,
                expect,
                exit,
                attempts,
                ..
            } => {
                let mut last_err = String::new();
                for attempt in 0..*attempts {
                    if attempt > 0 {
                        std::thread::sleep(RETRY_PAUSE);
                    }
                    let o = self.run_once(argv)?;
                    match self.check(&o, expect, *exit) {
                        Ok(()) => {
                            self.last = serde_json::from_str(&o.stdout).ok();
                            return Ok(());
                        }
                        Err(e) => {
                            last_err = format!("{e}\n  stdout: {}\n  stderr: {}", o.stdout, o.stderr);
                        }
                    }
                }
                Err(last_err)
            }
        }
    }
}

fn line_of(step: &Step) -> usize {
    match step {
        Step::Daemon { line, .. }
        | Step::Run { line, .. }
        | Step::Capture { line, .. }
        | Step::File { line, .. }
        | Step::Stop { line, .. } => *line,
    }
}

/// Runs one scenario file in a fresh directory. Returns the directory when
/// `keep` is set.
pub fn run_file(exe: &Path, path: &Path, keep: bool) -> Result<Option<PathBuf>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let steps = parse(&text)?;
    let dir = tempfile::Builder::new()
        .prefix("peershare-scenario-")
        .tempdir()
        .map_err(|e| e.to_string())?;
    let work = dir.path().to_path_buf();
    let mut run = Run {
        exe: exe.to_path_buf(),
        vars: BTreeMap::from([("WORK".to_string(), work.display().to_string())]),
        work,
        daemons: BTreeMap::new(),
        last: None,
    };
    let result = steps
        .iter()
        .try_for_each(|s| run.step(s).map_err(|e| format!("line {}: {e}", line_of(s))));
    // Daemons go first so nothing writes into a removed directory.
    run.daemons.clear();
    let kept = keep.then(|| dir.keep());
    result.map(|_| kept)
}

fn collect(paths: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "scenario"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        return Err(CliError::Usage("no scenario files found".into()));
    }
    Ok(files)
}

pub fn command(args: &ScenarioArgs, out: &Output) -> Result<(), CliError> {
    let exe = std::env::current_exe()?;
    let mut failed = 0;
    for file in collect(&args.paths)? {
        let name = file.display().to_string();
        let started = Instant::now();
        match run_file(&exe, &file, args.keep) {
            Ok(kept) => {
                let ms = started.elapsed().as_millis();
                let doc = serde_json::json!({ "scenario": name, "pass": true, "ms": ms, "kept": kept });
                out.either(&format!("PASS {name} ({ms} ms)"), &doc)?;
            }
            Err(e) => {
                failed += 1;
                let doc = serde_json::json!({ "scenario": name, "pass": false, "error": e });
                out.either(&format!("FAIL {name}: {e}"), &doc)?;
            }
        }
    }
    if failed > 0 {
        return Err(CliError::Coded {
            code: "SCENARIO_FAILED".into(),
            message: format!("{failed} scenario(s) failed"),
            exit: exit::EXPECTATION,
        });
    }
    Ok(())
}
