//! Crash/restart runs of a fixed agent script. Both the agent and the server
//! are torn down and reopened from disk at the chosen boundary; the outcome
//! must match a run that never crashed.

use std::path::Path;
use std::sync::{Arc, Mutex};

use peershare_core::client::{Agent, AgentConfig, Fault, FlakyTransport, SyncState, Transport, TransportError};
use peershare_core::fixtures;
use peershare_core::model::{AppData, AppIdentity, BindingType, SocialIdentity};
use peershare_core::protocol::Method;
use peershare_core::server::{Server, Store};

use crate::world::{World, APP_ID, TOKEN_TTL};

pub const SCRIPT_LEN: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Crash {
    /// The operation is stored locally, then the process dies before syncing.
    BeforeSync,
    /// The first request of the following sync reaches the server, the
    /// response is lost and the process dies.
    AfterSend,
}

/// Forwards to whichever server instance is currently running.
#[derive(Default)]
struct Swappable(Mutex<Option<Arc<Server>>>);

impl Transport for Swappable {
    fn send(&self, _method: Method, request: &[u8]) -> Result<Vec<u8>, TransportError> {
        match &*self.0.lock().unwrap() {
            Some(server) => Ok(server.handle_bytes(request)),
            None => Err(TransportError::Unreachable("server down".into())),
        }
    }
}

enum Op {
    Add(usize, AppData),
    Update(usize, usize, AppData),
    Remove(usize, usize),
}

fn anon() -> SocialIdentity {
    SocialIdentity::new("", "", "")
}

fn script() -> Vec<Op> {
    let user_asserted = {
        let mut d = fixtures::bdaddr_binding(&World::identity("bob"), "bob-phone", &[7; 6]);
        d.descriptor.binding_type = BindingType::UserAsserted;
        d
    };
    // Handles refer to the n-th Add.
    vec![
        Op::Add(0, fixtures::bdaddr_binding(&anon(), "dev-1", &[1; 6])),
        Op::Add(2, fixtures::bearer_token(&anon(), b"token-one")),
        Op::Add(2, fixtures::public_key(&anon(), b"key-one")),
        Op::Update(0, 0, fixtures::bdaddr_binding(&anon(), "dev-1", &[2; 6])),
        // Takes the slot of the first token.
        Op::Add(2, fixtures::bearer_token(&anon(), b"token-two")),
        Op::Remove(2, 2),
        Op::Add(0, user_asserted),
        Op::Add(1, fixtures::scampi_binding(&anon(), "dev-1", b"scampi-1")),
        Op::Update(1, 5, fixtures::scampi_binding(&anon(), "dev-1", b"scampi-9")),
        Op::Remove(0, 0),
    ]
}

fn apps() -> [AppIdentity; 3] {
    [
        fixtures::peersense_app(),
        fixtures::scampi_app(),
        fixtures::crowdshare_app(),
    ]
}

/// What survives of a run, without ids or counters that legitimately differ
/// between a clean run and a recovered one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub server: Vec<String>,
    pub local: Vec<String>,
}

struct Rig<'a> {
    dir: &'a Path,
    world: World,
    swap: Arc<Swappable>,
    flaky: Arc<FlakyTransport<Arc<Swappable>>>,
    agent: Option<Agent>,
    token: String,
}

impl<'a> Rig<'a> {
    fn new(dir: &'a Path) -> Result<Self, String> {
        let world = World::new();
        world.provider.add_user("alice", "alice").map_err(|e| e.to_string())?;
        let token = world
            .provider
            .issue_token("alice", APP_ID, TOKEN_TTL)
            .map_err(|e| e.to_string())?
            .token;
        let swap = Arc::new(Swappable::default());
        let flaky = Arc::new(FlakyTransport::new(swap.clone()));
        let mut rig = Rig {
            dir,
            world,
            swap,
            flaky,
            agent: None,
            token,
        };
        rig.start()?;
        Ok(rig)
    }

    fn start(&mut self) -> Result<(), String> {
        let store = Store::open(&self.dir.join("server.sqlite")).map_err(|e| e.to_string())?;
        let server = Server::new(store, self.world.clock.clone()).with_provider(self.world.provider.clone(), APP_ID);
        *self.swap.0.lock().unwrap() = Some(Arc::new(server));
        let config = AgentConfig {
            data_dir: Some(self.dir.join("agent")),
            ..AgentConfig::default()
        };
        let agent = Agent::new(config, self.flaky.clone(), self.world.clock.clone());
        agent
            .login(World::identity("alice"), self.token.clone())
            .map_err(|e| e.to_string())?;
        self.agent = Some(agent);
        Ok(())
    }

    fn kill(&mut self) {
        self.agent = None;
        *self.swap.0.lock().unwrap() = None;
    }

    fn agent(&self) -> &Agent {
        self.agent.as_ref().expect("agent running")
    }

    fn flush(&self) {
        // Transient failures are expected under fault injection; the queue keeps the work.
        let _ = self.agent().flush();
    }

    fn outcome(&self) -> Result<Outcome, String> {
        let server = self.swap.0.lock().unwrap().clone().ok_or("server down")?;
        let mut server_items: Vec<String> = server
            .all_items()
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|s| {
                let d = &s.data;
                format!(
                    "{}|{}|{}|{}|{}|{:?}|{:?}",
                    d.owner.social_id,
                    d.data_type,
                    d.device_id,
                    hex::encode(&d.data_value),
                    d.creator,
                    d.sharing_policy,
                    s.policy_source
                )
            })
            .collect();
        server_items.sort();
        let mut local: Vec<String> = self
            .agent()
            .local_items()
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|i| {
                format!(
                    "{}|{}|{}|{}|{}",
                    i.creator,
                    i.data.data_type,
                    i.data.device_id,
                    hex::encode(&i.data.data_value),
                    i.sync.as_str()
                )
            })
            .collect();
        local.sort();
        Ok(Outcome {
            server: server_items,
            local,
        })
    }
}

/// Runs the script, crashing at `crash` = (boundary, kind) if given.
/// Boundary `k` sits right after operation `k` has been applied locally.
pub fn run_script(dir: &Path, crash: Option<(usize, Crash)>) -> Result<Outcome, String> {
    let mut rig = Rig::new(dir)?;
    let apps = apps();
    let mut handles: Vec<u64> = Vec::new();
    for (k, op) in script().into_iter().enumerate() {
        let agent = rig.agent();
        match op {
            Op::Add(app, data) => handles.push(agent.add_data(&apps[app], data).map_err(|e| format!("op {k}: {e}"))?),
            Op::Update(app, h, data) => agent
                .update_data(&apps[app], handles[h], data)
                .map_err(|e| format!("op {k}: {e}"))?,
            Op::Remove(app, h) => agent
                .remove_data(&apps[app], handles[h])
                .map_err(|e| format!("op {k}: {e}"))?,
        }
        match crash {
            Some((at, Crash::BeforeSync)) if at == k => {
                rig.kill();
                rig.start()?;
                rig.flush();
            }
            Some((at, Crash::AfterSend)) if at == k => {
                rig.flaky.fault_at(rig.flaky.sent(), Fault::LoseResponse);
                rig.flush();
                rig.kill();
                rig.flaky.set_fault(Fault::None);
                rig.start()?;
                rig.flush();
            }
            _ => rig.flush(),
        }
    }
    let summary = rig.agent().refresh().map_err(|e| format!("final refresh: {e}"))?;
    if !summary.flushed.rejected.is_empty() {
        return Err(format!("uploads rejected: {:?}", summary.flushed.rejected));
    }
    let outcome = rig.outcome()?;
    let pending = rig
        .agent()
        .local_items()
        .map_err(|e| e.to_string())?
        .into_iter()
        .filter(|i| !matches!(i.sync, SyncState::Synced | SyncState::LocalOnly))
        .count();
    if pending > 0 {
        return Err(format!("{pending} items still queued after recovery"));
    }
    Ok(outcome)
}

/// Every boundary with both crash kinds, each compared to the clean run.
/// Returns the number of crash runs checked.
pub fn check_all_boundaries() -> Result<usize, String> {
    let clean_dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let clean = run_script(clean_dir.path(), None)?;
    let mut runs = 0;
    for k in 0..SCRIPT_LEN {
        for kind in [Crash::BeforeSync, Crash::AfterSend] {
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let got = run_script(dir.path(), Some((k, kind)))?;
            if got != clean {
                return Err(format!("crash {kind:?} after op {k}: {got:?} != {clean:?}"));
            }
            runs += 1;
        }
    }
    Ok(runs)
}
