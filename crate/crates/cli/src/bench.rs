//! Upload and download timings. Each run uploads `up` items and then
//! downloads a view holding `down` items shared by friends.

use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use peershare_core::client::{Agent, AgentConfig};
use peershare_core::clock::{Clock, SystemClock};
use peershare_core::model::{
    AppData, AppIdentity, BindingType, DataDescriptor, Sensitivity, SharingPolicy, SocialIdentity, Specificity,
};
use peershare_core::provider::{GraphCommand, MockProvider};
use peershare_core::server::Server;
use peershare_net::{HttpProvider, Pin, PinnedHttpsTransport, RunningProvider, RunningServer, SelfSigned};

use crate::args::BenchArgs;
use crate::daemon;
use crate::error::CliError;
use crate::output::Output;
use crate::Globals;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stats {
    pub mean_ms: f64,
    /// Sample standard deviation (n - 1).
    pub stddev_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

pub fn stats(samples: &[f64]) -> Stats {
    if samples.is_empty() {
        return Stats {
            mean_ms: 0.0,
            stddev_ms: 0.0,
            min_ms: 0.0,
            max_ms: 0.0,
        };
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = if samples.len() < 2 {
        0.0
    } else {
        samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    };
    Stats {
        mean_ms: mean,
        stddev_ms: var.sqrt(),
        min_ms: samples.iter().cloned().fold(f64::INFINITY, f64::min),
        max_ms: samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub runs: usize,
    pub up_items: usize,
    pub down_items: usize,
    pub upload: Stats,
    pub download: Stats,
}

const APP_ID: &str = "peershare-bench";

fn fail(what: &str) -> impl Fn(String) -> CliError + '_ {
    move |e| CliError::Failed(format!("{what}: {e}"))
}

fn item(data_type: String, value: Vec<u8>) -> AppData {
    AppData {
        data_type,
        data_value: value,
        descriptor: DataDescriptor {
            data_algorithm: "PLAIN".into(),
            specificity: Specificity::User,
            sensitivity: Sensitivity::Public,
            binding_type: BindingType::OwnerAsserted,
            description: "benchmark payload".into(),
        },
        sharing_policy: Some(SharingPolicy::AllFriends),
        created_at: 0,
        expires_at: 0,
        owner: SocialIdentity::new("", "", ""),
        creator: AppIdentity::new("", ""),
        device_id: String::new(),
    }
}

/// A server and provider on loopback ports, torn down afterwards.
pub fn loopback(runs: usize, up: usize, down: usize) -> Result<BenchReport, CliError> {
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let mock = Arc::new(MockProvider::new("mocknet", clock.clone()));
    let any = "127.0.0.1:0".parse().unwrap();
    let provider = RunningProvider::start(any, mock)?;
    let http = HttpProvider::connect(provider.url()).map_err(|e| fail("provider")(e.to_string()))?;
    let dir = tempfile::tempdir()?;
    let store = daemon::open_store(&dir.path().join("server.sqlite"))?;
    let server = Arc::new(Server::new(store, clock).with_provider(Arc::new(http.clone()), APP_ID));
    let cert = SelfSigned::generate(&["localhost", "127.0.0.1"]).map_err(|e| fail("cert")(e.to_string()))?;
    let tls = cert.server_config().map_err(|e| fail("tls")(e.to_string()))?;
    let running = RunningServer::start(any, tls, server)?;
    against(
        &running.url(),
        Pin::cert(&cert.cert_der()),
        &http,
        APP_ID,
        runs,
        up,
        down,
    )
}

/// Benchmarks an existing deployment. Users are created under a random
/// prefix so repeated runs do not collide.
pub fn against(
    server_url: &str,
    pin: Pin,
    provider: &HttpProvider,
    app_id: &str,
    runs: usize,
    up: usize,
    down: usize,
) -> Result<BenchReport, CliError> {
    use peershare_core::provider::SocialProvider;
    let prefix = format!("bench{:06x}", rand::random::<u32>() & 0xff_ffff);
    let network = provider.network().to_string();
    let app = AppIdentity::new("cli", "bench");
    let graph = |c: GraphCommand| {
        provider
            .mutate(&c)
            .map(|_| ())
            .map_err(|e| fail("graph")(e.to_string()))
    };
    let agent_for = |user: &str| -> Result<Agent, CliError> {
        graph(GraphCommand::AddUser {
            user: user.into(),
            name: user.into(),
        })?;
        let transport = PinnedHttpsTransport::new(server_url, pin.clone())?;
        let agent = Agent::new(AgentConfig::default(), Arc::new(transport), Arc::new(SystemClock));
        let token = provider
            .issue_token(user, app_id, 3600)
            .map_err(|e| fail("token")(e.to_string()))?;
        agent.login(SocialIdentity::new(&network, user, user), token.token)?;
        Ok(agent)
    };

    let me = format!("{prefix}-me");
    let agent = agent_for(&me)?;
    for i in 0..down {
        let friend = format!("{prefix}-f{i}");
        let f = agent_for(&friend)?;
        graph(GraphCommand::AddFriendship {
            a: me.clone(),
            b: friend.clone(),
        })?;
        f.add_data(&app, item("bench-shared".into(), format!("from {friend}").into_bytes()))?;
        f.flush()?;
    }
    // Warm-up: registers the user and opens the connection.
    agent.refresh()?;

    let mut up_ms = Vec::with_capacity(runs);
    let mut down_ms = Vec::with_capacity(runs);
    for run in 0..runs {
        let t = Instant::now();
        for i in 0..up {
            agent.add_data(&app, item(format!("bench-up-{i}"), format!("run {run}").into_bytes()))?;
        }
        let flushed = agent.flush()?;
        up_ms.push(t.elapsed().as_secs_f64() * 1e3);
        if flushed.uploaded + flushed.updated < up {
            return Err(CliError::Failed(format!("run {run}: {flushed:?} for {up} uploads")));
        }

        let t = Instant::now();
        let summary = agent.refresh()?;
        down_ms.push(t.elapsed().as_secs_f64() * 1e3);
        let seen = agent
            .remote_items()?
            .iter()
            .filter(|r| r.view.data.data_type == "bench-shared")
            .count();
        if seen != down {
            return Err(CliError::Failed(format!(
                "run {run}: downloaded {seen} of {down} shared items ({summary:?})"
            )));
        }
    }
    Ok(BenchReport {
        runs,
        up_items: up,
        down_items: down,
        upload: stats(&up_ms),
        download: stats(&down_ms),
    })
}

pub fn command(g: &Globals, args: &BenchArgs, out: &Output) -> Result<(), CliError> {
    if args.runs == 0 {
        return Err(CliError::Usage("--runs must be at least 1".into()));
    }
    let report = match g.server_url.clone().or_else(|| g.cfg.server_url.clone()) {
        None => loopback(args.runs, args.up, args.down)?,
        Some(url) => {
            let p = HttpProvider::connect(daemon::provider_url(g)?)
                .map_err(|e| CliError::coded("PROVIDER_UNAVAILABLE", e.to_string()))?;
            against(
                &url,
                daemon::pin(g)?,
                &p,
                &g.cfg.app_id(),
                args.runs,
                args.up,
                args.down,
            )?
        }
    };
    let text = format!(
        "runs {}\nupload   ({} item):  mean {:.2} ms  stddev {:.2} ms  min {:.2}  max {:.2}\ndownload ({} items): mean {:.2} ms  stddev {:.2} ms  min {:.2}  max {:.2}",
        report.runs,
        report.up_items,
        report.upload.mean_ms,
        report.upload.stddev_ms,
        report.upload.min_ms,
        report.upload.max_ms,
        report.down_items,
        report.download.mean_ms,
        report.download.stddev_ms,
        report.download.min_ms,
        report.download.max_ms,
    );
    out.either(&text, &report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_samples_have_no_spread() {
        let s = stats(&[4.0; 7]);
        assert_eq!(s.mean_ms, 4.0);
        assert_eq!(s.stddev_ms, 0.0);
    }

    #[test]
    fn sample_stddev_uses_n_minus_one() {
        // 2, 4, 4, 4, 5, 5, 7, 9: mean 5, squared deviations sum to 32.
        let s = stats(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(s.mean_ms, 5.0);
        assert!((s.stddev_ms - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        assert_eq!((s.min_ms, s.max_ms), (2.0, 9.0));
    }

    #[test]
    fn single_sample() {
        let s = stats(&[3.5]);
        assert_eq!((s.mean_ms, s.stddev_ms), (3.5, 0.0));
        assert_eq!(stats(&[]).mean_ms, 0.0);
    }
}
