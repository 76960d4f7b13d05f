//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. `cargo test -p peershare-cli --test acceptance`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::time::{Duration, Instant};

use proptest::strategy::{Strategy, ValueTree};
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

use peershare_core::client::{Agent, AgentConfig, ClientError, TransportError};
use peershare_core::protocol::{decode_request, decode_response, encode_request, encode_response, Method};
use peershare_net::rogue::RecordingTlsServer;
use peershare_net::{Pin, PinnedHttpsTransport, RunningServer, SelfSigned};
use peershare_testkit::world::World;
use peershare_testkit::{acl, durability, episode, gauntlet, redaction, scenarios};

type Check = fn() -> Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn eligibility() -> Result<String, String> {
    let started = Instant::now();
    let mut checks = 0;
    let mut ops = 0;
    for seed in 0..200 {
        let report =
            episode::run_episode(seed, episode::EpisodeLimits::default()).map_err(|e| format!("seed {seed}: {e}"))?;
        checks += report.checks;
        ops += report.ops;
    }
    let took = started.elapsed();
    ensure(took < Duration::from_secs(60), || format!("took {took:?}"))?;
    ensure(checks > 0, || "no downloads were compared".into())?;
    Ok(format!(
        "200 episodes, {ops} ops, {checks} downloads checked in {:.1} s",
        took.as_secs_f64()
    ))
}

fn tokens() -> Result<String, String> {
    let cases = gauntlet::run_gauntlet();
    ensure(cases.len() == 21, || format!("{} cases, expected 3 x 7", cases.len()))?;
    let failed: Vec<String> = cases
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{:?}/{:?}: {}", c.attack, c.method, c.note))
        .collect();
    ensure(failed.is_empty(), || failed.join("; "))?;
    Ok("21 cases: AUTH_ERROR, state digest unchanged".into())
}

fn app_acl() -> Result<String, String> {
    let mut runner = TestRunner::new_with_rng(Config::default(), TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    let strategy = proptest::collection::vec(acl::acl_op(), 1..30);
    let mut denials = 0;
    for i in 0..1000 {
        let ops = strategy.new_tree(&mut runner).map_err(|e| e.to_string())?.current();
        denials += acl::run_acl_sequence(&ops).map_err(|v| format!("sequence {i}: {v}"))?;
    }
    Ok(format!(
        "1000 sequences, 0 violations, {denials} cross-app attempts denied"
    ))
}

fn redaction_fuzz() -> Result<String, String> {
    let report = redaction::run_redaction_fuzz(7, 500)?;
    ensure(report.responses == 500, || format!("{} responses", report.responses))?;
    ensure(report.foreign_views > 0, || "no non-owner views were produced".into())?;
    Ok(format!("500 downloads, {} non-owner views clean", report.foreign_views))
}

fn update_removed() -> Result<String, String> {
    scenarios::update_after_server_delete()?;
    Ok("NOT_FOUND_REMOVE returned and the local copy purged".into())
}

fn durability() -> Result<String, String> {
    let n = durability::check_all_boundaries()?;
    ensure(n == 2 * durability::SCRIPT_LEN, || format!("{n} crash points"))?;
    Ok(format!(
        "{n} crash points over a {}-op script match the clean run",
        durability::SCRIPT_LEN
    ))
}

fn golden() -> Result<String, String> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden");
    let mut files = 0;
    for method in Method::ALL {
        let name = |kind: &str| dir.join(format!("{}.{kind}.json", method.as_str()));
        let bytes = std::fs::read(name("request")).map_err(|e| format!("{method:?} request: {e}"))?;
        let req = decode_request(&bytes).map_err(|e| format!("{method:?} request: {e}"))?;
        ensure(encode_request(&req) == bytes, || format!("{method:?} request differs"))?;
        files += 1;
        for kind in ["response", "error", "friend_view"] {
            let p = name(kind);
            if kind != "response" && !p.exists() {
                continue;
            }
            let bytes = std::fs::read(&p).map_err(|e| format!("{}: {e}", p.display()))?;
            let resp = decode_response(method, &bytes).map_err(|e| format!("{}: {e}", p.display()))?;
            ensure(encode_response(&resp) == bytes, || format!("{} differs", p.display()))?;
            files += 1;
        }
    }
    Ok(format!("{files} files for 7 methods byte-identical"))
}

fn pinning() -> Result<String, String> {
    let world = World::new();
    world.provider.add_user("alice", "alice").unwrap();
    let token = || {
        world
            .provider
            .issue_token("alice", "peershare-app", 3600)
            .unwrap()
            .token
    };
    let genuine = SelfSigned::generate(&["localhost"]).map_err(|e| e.to_string())?;
    let impostor = SelfSigned::generate(&["localhost"]).map_err(|e| e.to_string())?;
    let pin = Pin::cert(&genuine.cert_der());

    let rogue = RecordingTlsServer::start(impostor.server_config().unwrap()).map_err(|e| e.to_string())?;
    let to_rogue = PinnedHttpsTransport::new(&rogue.url(), pin.clone()).map_err(|e| e.to_string())?;
    let agent = Agent::new(AgentConfig::default(), Arc::new(to_rogue), world.clock.clone());
    agent
        .login(World::identity("alice"), token())
        .map_err(|e| e.to_string())?;
    let refused = agent.refresh();
    ensure(
        matches!(refused, Err(ClientError::Transport(TransportError::PinMismatch))),
        || format!("rogue: {refused:?}"),
    )?;
    drop(agent);
    std::thread::sleep(Duration::from_millis(100));
    let tally = rogue.tally();
    let (conns, bytes) = (
        tally.connections.load(Ordering::SeqCst),
        tally.app_bytes.load(Ordering::SeqCst),
    );
    ensure(conns > 0, || "rogue saw no connection".into())?;
    ensure(bytes == 0 && tally.handshakes.load(Ordering::SeqCst) == 0, || {
        format!("rogue got {bytes} bytes")
    })?;

    let real = RunningServer::start(
        "127.0.0.1:0".parse().unwrap(),
        genuine.server_config().unwrap(),
        world.server.clone(),
    )
    .map_err(|e| e.to_string())?;
    let to_real = PinnedHttpsTransport::new(&real.url(), pin).map_err(|e| e.to_string())?;
    let agent = Agent::new(AgentConfig::default(), Arc::new(to_real), world.clock.clone());
    agent
        .login(World::identity("alice"), token())
        .map_err(|e| e.to_string())?;
    agent.refresh().map_err(|e| format!("pinned server: {e}"))?;
    Ok(format!(
        "rogue: {conns} connection(s), 0 app bytes; pinned server connected"
    ))
}

fn bench() -> Result<String, String> {
    let r = peershare_cli::bench::loopback(30, 1, 5).map_err(|e| e.to_string())?;
    let summary = format!(
        "upload mean {:.2} ms sd {:.2}; download(5) mean {:.2} ms sd {:.2}",
        r.upload.mean_ms, r.upload.stddev_ms, r.download.mean_ms, r.download.stddev_ms
    );
    ensure(r.runs == 30, || format!("{} runs", r.runs))?;
    ensure(r.upload.mean_ms < 250.0 && r.download.mean_ms < 250.0, || {
        summary.clone()
    })?;
    Ok(summary)
}

fn main() {
    let checks: [(&str, Check); 9] = [
        ("eligibility oracle", eligibility),
        ("token gauntlet", tokens),
        ("app ACL", app_acl),
        ("redaction fuzz", redaction_fuzz),
        ("update of a removed item", update_removed),
        ("sync durability", durability),
        ("golden files", golden),
        ("certificate pinning", pinning),
        ("bench", bench),
    ];
    let mut failures = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or(p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        let ms = started.elapsed().as_millis();
        match result {
            Ok(detail) => println!("PASS {} {name}: {detail} ({ms} ms)", i + 1),
            Err(e) => {
                failures += 1;
                println!("FAIL {} {name}: {e} ({ms} ms)", i + 1);
            }
        }
    }
    if failures > 0 {
        std::process::exit(1);
    }
}
