use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::time::Duration;

use peershare_core::client::{Agent, AgentConfig, ClientError, Transport, TransportError};
use peershare_core::protocol::Method;
use peershare_net::rogue::RecordingTlsServer;
use peershare_net::tls::{fingerprint, Pin};
use peershare_net::{PinnedHttpsTransport, RunningServer, SelfSigned};
use peershare_testkit::world::World;

fn tls_for(cert: &SelfSigned) -> Arc<rustls::ServerConfig> {
    cert.server_config().unwrap()
}

#[test]
fn pinned_agent_talks_to_the_real_server() {
    let world = World::new();
    world.provider.add_user("alice", "alice").unwrap();
    let token = world
        .provider
        .issue_token("alice", "peershare-app", 3600)
        .unwrap()
        .token;
    let cert = SelfSigned::generate(&["localhost"]).unwrap();
    let server = RunningServer::start("127.0.0.1:0".parse().unwrap(), tls_for(&cert), world.server.clone()).unwrap();

    let transport = Arc::new(PinnedHttpsTransport::new(&server.url(), Pin::cert(&cert.cert_der())).unwrap());
    let agent = Agent::new(AgentConfig::default(), transport, world.clock.clone());
    agent.login(World::identity("alice"), token).unwrap();
    assert!(agent.get_my_social_data().unwrap().peershare_id.is_some());

    // The digest form pins the same certificate.
    let by_digest =
        PinnedHttpsTransport::new(&server.url(), Pin::parse(&fingerprint(&cert.cert_der())).unwrap()).unwrap();
    assert!(by_digest.send(Method::Download, b"{}").is_ok());
}

#[test]
fn rogue_server_receives_no_application_bytes() {
    let genuine = SelfSigned::generate(&["localhost"]).unwrap();
    let impostor = SelfSigned::generate(&["localhost"]).unwrap();
    let rogue = RecordingTlsServer::start(tls_for(&impostor)).unwrap();

    let transport = Arc::new(PinnedHttpsTransport::new(&rogue.url(), Pin::cert(&genuine.cert_der())).unwrap());
    assert_eq!(
        transport.send(Method::Register, b"{\"secret\":1}"),
        Err(TransportError::PinMismatch)
    );

    let world = World::new();
    world.provider.add_user("alice", "alice").unwrap();
    let token = world
        .provider
        .issue_token("alice", "peershare-app", 3600)
        .unwrap()
        .token;
    let agent = Agent::new(AgentConfig::default(), transport, world.clock.clone());
    agent.login(World::identity("alice"), token).unwrap();
    assert!(matches!(
        agent.refresh(),
        Err(ClientError::Transport(TransportError::PinMismatch))
    ));
    drop(agent);

    std::thread::sleep(Duration::from_millis(100));
    let tally = rogue.tally();
    assert!(tally.connections.load(Ordering::SeqCst) >= 2);
    assert_eq!(tally.handshakes.load(Ordering::SeqCst), 0);
    assert_eq!(tally.app_bytes.load(Ordering::SeqCst), 0);
}

#[test]
fn recording_server_does_count_bytes_when_trusted() {
    // Control for the test above: the tally is not blind.
    let impostor = SelfSigned::generate(&["localhost"]).unwrap();
    let rogue = RecordingTlsServer::start(tls_for(&impostor)).unwrap();
    let transport = PinnedHttpsTransport::new(&rogue.url(), Pin::cert(&impostor.cert_der()))
        .unwrap()
        .with_timeout(Duration::from_millis(500));
    assert_eq!(transport.send(Method::Register, b"{}"), Err(TransportError::Lost));
    drop(transport);
    std::thread::sleep(Duration::from_millis(200));
    assert_eq!(rogue.tally().handshakes.load(Ordering::SeqCst), 1);
    assert!(rogue.tally().app_bytes.load(Ordering::SeqCst) > 0);
}
