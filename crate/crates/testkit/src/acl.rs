//! State machine for the agent's application-level access control: two
//! applications share one agent and each tries to touch the other's items.

use std::collections::BTreeMap;
use std::sync::Arc;

use proptest::prelude::*;

use peershare_core::client::{Agent, AgentConfig, ClientError, InProcessTransport};
use peershare_core::fixtures;
use peershare_core::model::{AppData, AppIdentity, BindingType, SocialIdentity};

use crate::world::World;

#[derive(Debug, Clone)]
pub enum AclOp {
    Add { app: usize, user_asserted: bool, value: u8 },
    Update { app: usize, pick: usize, value: u8 },
    Remove { app: usize, pick: usize },
    Flush,
}

pub fn acl_op() -> impl Strategy<Value = AclOp> {
    prop_oneof![
        3 => (0..2usize, any::<bool>(), any::<u8>()).prop_map(|(app, user_asserted, value)| AclOp::Add { app, user_asserted, value }),
        4 => (0..2usize, any::<usize>(), any::<u8>()).prop_map(|(app, pick, value)| AclOp::Update { app, pick, value }),
        3 => (0..2usize, any::<usize>()).prop_map(|(app, pick)| AclOp::Remove { app, pick }),
        1 => Just(AclOp::Flush),
    ]
}

pub fn apps() -> [AppIdentity; 2] {
    [fixtures::peersense_app(), fixtures::scampi_app()]
}

fn item(value: u8, user_asserted: bool) -> AppData {
    // Distinct device per value keeps device-specific slots apart.
    let mut data = fixtures::bdaddr_binding(&SocialIdentity::new("", "", ""), &format!("dev-{value}"), &[value; 6]);
    if user_asserted {
        data.owner = World::identity("someone-else");
        data.descriptor.binding_type = BindingType::UserAsserted;
    }
    data
}

#[derive(Debug, Clone)]
struct Expected {
    creator: usize,
    value: u8,
}

/// Runs one sequence; returns the number of cross-application attempts that
/// were made (all of which must have been refused) or the first violation.
pub fn run_acl_sequence(ops: &[AclOp]) -> Result<usize, String> {
    let world = World::new();
    world.provider.add_user("alice", "alice").unwrap();
    let token = world
        .provider
        .issue_token("alice", crate::world::APP_ID, crate::world::TOKEN_TTL)
        .unwrap()
        .token;
    let transport = Arc::new(InProcessTransport::new(world.server.clone()));
    let agent = Agent::new(AgentConfig::default(), transport, world.clock.clone());
    agent
        .login(World::identity("alice"), token)
        .map_err(|e| e.to_string())?;
    let apps = apps();
    let mut model: BTreeMap<u64, Expected> = BTreeMap::new();
    let mut cross_attempts = 0;
    let mut next_device = 0u8;

    for op in ops {
        let ids: Vec<u64> = model.keys().copied().collect();
        let target = |pick: usize| if ids.is_empty() { 9999 } else { ids[pick % ids.len()] };
        match *op {
            AclOp::Add {
                app,
                user_asserted,
                value,
            } => {
                next_device = next_device.wrapping_add(1);
                let mut data = item(next_device, user_asserted);
                data.data_value = vec![value; 6];
                let id = agent.add_data(&apps[app], data).map_err(|e| format!("add: {e}"))?;
                model.insert(id, Expected { creator: app, value });
            }
            AclOp::Update { app, pick, value } => {
                let id = target(pick);
                let Some(current) = agent
                    .local_items()
                    .map_err(|e| e.to_string())?
                    .into_iter()
                    .find(|i| i.local_id == id)
                else {
                    if !matches!(
                        agent.update_data(&apps[app], id, item(1, false)),
                        Err(ClientError::NotFound(_))
                    ) {
                        return Err(format!("update of unknown {id} not refused"));
                    }
                    continue;
                };
                let mut data = current.data.clone();
                data.data_value = vec![value; 6];
                let result = agent.update_data(&apps[app], id, data);
                let expected = &model[&id];
                if expected.creator == app {
                    result.map_err(|e| format!("creator update of {id} failed: {e}"))?;
                    model.get_mut(&id).unwrap().value = value;
                } else {
                    cross_attempts += 1;
                    if !matches!(result, Err(ClientError::AclDenied(_))) {
                        return Err(format!(
                            "app {app} updated item {id} of app {}: {result:?}",
                            expected.creator
                        ));
                    }
                }
            }
            AclOp::Remove { app, pick } => {
                let id = target(pick);
                let result = agent.remove_data(&apps[app], id);
                match model.get(&id) {
                    None => {
                        if !matches!(result, Err(ClientError::NotFound(_))) {
                            return Err(format!("remove of unknown {id}: {result:?}"));
                        }
                    }
                    Some(expected) if expected.creator == app => {
                        result.map_err(|e| format!("creator remove of {id} failed: {e}"))?;
                        model.remove(&id);
                    }
                    Some(expected) => {
                        cross_attempts += 1;
                        if !matches!(result, Err(ClientError::AclDenied(_))) {
                            return Err(format!(
                                "app {app} removed item {id} of app {}: {result:?}",
                                expected.creator
                            ));
                        }
                    }
                }
            }
            AclOp::Flush => {
                agent.flush().map_err(|e| format!("flush: {e}"))?;
            }
        }
        check(&agent, &apps, &model)?;
    }
    agent.flush().map_err(|e| format!("final flush: {e}"))?;
    check(&agent, &apps, &model)?;
    // What reached the server must agree with the local view.
    let on_server: BTreeMap<String, (AppIdentity, Vec<u8>)> = world
        .server
        .all_items()
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|i| {
            (
                i.data.device_id.clone(),
                (i.data.creator.clone(), i.data.data_value.clone()),
            )
        })
        .collect();
    for item in agent.local_items().map_err(|e| e.to_string())? {
        if item.data.descriptor.binding_type == BindingType::OwnerAsserted
            && on_server.get(&item.data.device_id) != Some(&(item.creator.clone(), item.data.data_value.clone()))
        {
            return Err(format!("server copy of {} diverges", item.local_id));
        }
    }
    Ok(cross_attempts)
}

fn check(agent: &Agent, apps: &[AppIdentity; 2], model: &BTreeMap<u64, Expected>) -> Result<(), String> {
    let live: BTreeMap<u64, (AppIdentity, u8)> = agent
        .local_items()
        .map_err(|e| e.to_string())?
        .into_iter()
        .filter(|i| i.sync != peershare_core::client::SyncState::PendingDelete)
        .map(|i| (i.local_id, (i.creator.clone(), i.data.data_value[0])))
        .collect();
    let expected: BTreeMap<u64, (AppIdentity, u8)> = model
        .iter()
        .map(|(id, e)| (*id, (apps[e.creator].clone(), e.value)))
        .collect();
    if live != expected {
        return Err(format!("local items diverge: expected {expected:?}, got {live:?}"));
    }
    Ok(())
}
