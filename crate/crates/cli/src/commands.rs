//! Short-lived commands: agent control, the application front end, graph
//! administration and inspection.

use std::path::PathBuf;
use std::sync::Arc;

use serde_json::{json, Value};

use peershare_core::client::store::{self as local, store_path, LocalStore};
use peershare_core::client::SharedItem;
use peershare_core::clock::SystemClock;
use peershare_core::model::SocialIdentity;
use peershare_core::provider::{GraphCommand as Mutation, SocialProvider};
use peershare_core::server::Server;
use peershare_net::ipc::{AgentRequest, IpcClient};
use peershare_net::tls::{fingerprint, load_certs};
use peershare_net::HttpProvider;

use crate::args::{AgentCommand, AppArgs, AppCommand, GraphCommand, InspectCommand, Target};
use crate::daemon::{self, AgentRun};
use crate::data;
use crate::error::CliError;
use crate::output::Output;
use crate::Globals;

fn socket(g: &Globals, target: &Target) -> Result<PathBuf, CliError> {
    match (&target.socket, &target.user) {
        (Some(path), _) => Ok(path.clone()),
        (None, Some(user)) => Ok(g.cfg.socket_for(user)),
        (None, None) => Err(CliError::Usage("name the agent with --user or --socket".into())),
    }
}

fn call(g: &Globals, target: &Target, secret: Option<String>, request: &AgentRequest) -> Result<Value, CliError> {
    let mut client = IpcClient::connect(&socket(g, target)?)?.with_secret(secret);
    Ok(client.call(request)?)
}

fn provider(g: &Globals) -> Result<HttpProvider, CliError> {
    let url = daemon::provider_url(g)?;
    HttpProvider::connect(&url).map_err(|e| CliError::coded("PROVIDER_UNAVAILABLE", format!("{url}: {e}")))
}

fn provider_err(e: peershare_core::provider::ProviderError) -> CliError {
    use peershare_core::provider::ProviderError as P;
    match e {
        P::UnknownUser(_) | P::UnknownList(_) => CliError::coded("NOT_FOUND", e.to_string()),
        P::Unreachable(_) => CliError::coded("PROVIDER_UNAVAILABLE", e.to_string()),
        other => CliError::coded("VALIDATION_ERROR", other.to_string()),
    }
}

pub fn agent(g: &Globals, command: AgentCommand, out: &Output) -> Result<(), CliError> {
    let (target, request) = match command {
        AgentCommand::Run {
            user,
            token,
            issue_token,
            device_id,
            refresh_interval,
            socket,
        } => {
            let run = AgentRun {
                user: &user,
                token,
                issue_token,
                device_id,
                refresh_interval,
                socket,
            };
            return daemon::agent(g, run, out);
        }
        AgentCommand::Login { target, token } => {
            let user = target
                .user
                .clone()
                .ok_or_else(|| CliError::Usage("login needs --user".into()))?;
            let token = match token {
                Some(t) => t,
                None => {
                    provider(g)?
                        .issue_token(&user, &g.cfg.app_id(), 86400)
                        .map_err(provider_err)?
                        .token
                }
            };
            let identity = SocialIdentity::new(g.cfg.network(), &user, &user);
            (target, AgentRequest::Login { identity, token })
        }
        AgentCommand::Logout { target } => (target, AgentRequest::Logout),
        AgentCommand::Status { target } => (target, AgentRequest::Status),
        AgentCommand::Flush { target } => (target, AgentRequest::Flush),
        AgentCommand::Refresh { target } => (target, AgentRequest::Refresh),
        AgentCommand::Whoami { target } => (target, AgentRequest::GetMySocialData),
        AgentCommand::Policies { target } => (target, AgentRequest::GetAclPolicies),
        AgentCommand::Override {
            target,
            object_id,
            policy,
        } => {
            let sharing_policy = data::parse_policy(&policy)?;
            (
                target,
                AgentRequest::OverridePolicy {
                    object_id,
                    sharing_policy,
                },
            )
        }
    };
    let result = call(g, &target, None, &request)?;
    out.value(&result)
}

pub fn app(g: &Globals, args: AppArgs, out: &Output) -> Result<(), CliError> {
    let app = data::parse_app(&args.app)?;
    let secret = args.secret.clone().or_else(|| g.cfg.apps.get(&args.app).cloned());
    let ask = |request: AgentRequest| call(g, &args.target, secret.clone(), &request);
    // Applications consume this output, so it is always canonical JSON.
    let result = match args.command {
        AppCommand::Add(d) => ask(AgentRequest::AddData {
            app,
            data: data::build(&d)?,
        })?,
        AppCommand::Update { local_id, data: d } => {
            let current = shared(ask(AgentRequest::GetSharedDataDetail {
                app: app.clone(),
                data_type: None,
            })?)?
            .into_iter()
            .find(|item| item.local_id == Some(local_id))
            .ok_or_else(|| CliError::coded("NOT_FOUND", format!("no local item {local_id}")))?;
            let data = data::amend(current.data, &d)?;
            ask(AgentRequest::UpdateData { app, local_id, data })?
        }
        AppCommand::Remove { local_id } => ask(AgentRequest::RemoveData { app, local_id })?,
        AppCommand::List {
            data_type,
            shared_with_me,
        } => {
            let items = shared(ask(AgentRequest::GetSharedDataDetail { app, data_type })?)?;
            let items: Vec<SharedItem> = items.into_iter().filter(|i| !(shared_with_me && i.is_owner)).collect();
            serde_json::to_value(items).map_err(|e| CliError::Failed(e.to_string()))?
        }
    };
    out.canonical(&result)
}

fn shared(value: Value) -> Result<Vec<SharedItem>, CliError> {
    serde_json::from_value(value).map_err(|e| CliError::coded("PROTOCOL_ERROR", e.to_string()))
}

pub fn graph(g: &Globals, command: GraphCommand, out: &Output) -> Result<(), CliError> {
    let p = provider(g)?;
    let mutate = |m: Mutation| -> Result<Value, CliError> {
        let ack = p.mutate(&m).map_err(provider_err)?;
        Ok(serde_json::to_value(ack).unwrap_or(Value::Null))
    };
    let result = match command {
        GraphCommand::AddUser { user, name } => {
            let name = name.unwrap_or_else(|| user.clone());
            mutate(Mutation::AddUser { user, name })?
        }
        GraphCommand::Befriend { a, b } => mutate(Mutation::AddFriendship { a, b })?,
        GraphCommand::Unfriend { a, b } => mutate(Mutation::RemoveFriendship { a, b })?,
        GraphCommand::CreateList { owner, name } => mutate(Mutation::CreateList { owner, name })?,
        GraphCommand::DeleteList { list_id } => mutate(Mutation::DeleteList { list_id })?,
        GraphCommand::AddToList { list_id, user } => mutate(Mutation::AddToList { list_id, user })?,
        GraphCommand::RemoveFromList { list_id, user } => mutate(Mutation::RemoveFromList { list_id, user })?,
        GraphCommand::Revoke { token } => mutate(Mutation::RevokeToken { token })?,
        GraphCommand::Token { user, app_id, ttl } => {
            let app_id = app_id.unwrap_or_else(|| g.cfg.app_id());
            let token = p.issue_token(&user, &app_id, ttl).map_err(provider_err)?;
            if !out.json {
                return out.line(&token.token);
            }
            json!(token)
        }
        GraphCommand::Friends { user } => json!(p.get_friends(&user).map_err(provider_err)?),
        GraphCommand::Lists { user } => json!(p.get_custom_lists(&user).map_err(provider_err)?),
        GraphCommand::Snapshot => p.snapshot().map_err(provider_err)?,
        GraphCommand::Outage { state } => {
            p.set_reachable(state == "off").map_err(provider_err)?;
            json!({ "reachable": state == "off" })
        }
    };
    out.value(&result)
}

pub fn inspect(g: &Globals, command: InspectCommand, out: &Output) -> Result<(), CliError> {
    match command {
        InspectCommand::Server { db } => {
            let db = db.unwrap_or_else(|| {
                g.cfg
                    .resolve(g.cfg.server.db.as_deref().unwrap_or("server.sqlite".as_ref()))
            });
            if !db.exists() {
                return Err(CliError::coded("NOT_FOUND", format!("{} does not exist", db.display())));
            }
            let server = Server::new(daemon::open_store(&db)?, Arc::new(SystemClock));
            let store_err = |e: peershare_core::server::StoreError| CliError::coded("STORE_ERROR", e.to_string());
            let items: Vec<Value> = server
                .all_items()
                .map_err(store_err)?
                .into_iter()
                .map(|item| {
                    json!({
                        "object_id": item.object_id,
                        "owner": item.owner_peershare_id,
                        "policy_source": item.policy_source.as_str(),
                        "eligible": item.eligible,
                        "data": item.data,
                    })
                })
                .collect();
            let digest = server.state_digest().map_err(store_err)?;
            out.value(&json!({ "items": items, "state_digest": hex::encode(digest) }))
        }
        InspectCommand::Agent { user } => {
            let identity = SocialIdentity::new(g.cfg.network(), &user, &user);
            let path = store_path(&g.cfg.user_dir(&user), &identity);
            if !path.exists() {
                return Err(CliError::coded(
                    "NOT_FOUND",
                    format!("no store for {user} at {}", path.display()),
                ));
            }
            let store_err = |e: local::LocalStoreError| match e {
                local::LocalStoreError::Locked => CliError::coded("STORE_LOCKED", e.to_string()),
                other => CliError::coded("STORE_ERROR", other.to_string()),
            };
            let store = LocalStore::open(&path).map_err(store_err)?;
            let items = local::all_items(store.conn()).map_err(store_err)?;
            let remote = local::remote_items(store.conn()).map_err(store_err)?;
            out.value(&json!({ "store": path.display().to_string(), "local": items, "remote": remote }))
        }
        InspectCommand::Cert { path } => {
            let certs = load_certs(&path).map_err(|e| CliError::Config(e.to_string()))?;
            let pins: Vec<String> = certs.iter().map(fingerprint).collect();
            if out.json {
                out.value(&pins)
            } else {
                pins.iter().try_for_each(|p| out.line(p))
            }
        }
    }
}
