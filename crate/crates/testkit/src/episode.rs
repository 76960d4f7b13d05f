//! Randomized server episodes checked against the brute-force oracle.
//!
//! Each episode keeps its own model of which items exist (updated from the
//! documented semantics of every operation, never from server state) and,
//! after every operation, compares every registered user's DOWNLOAD with the
//! views the model and the raw provider graph say they should get.

use std::collections::{BTreeMap, BTreeSet};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use peershare_core::fixtures;
use peershare_core::model::{AppData, ItemView, PolicySource, SharingPolicy, Specificity};
use peershare_core::protocol::{
    DeleteBody, EmptyBody, EntryStatus, ErrorCode, PolicyBody, RequestBody, Response, ResponseBody, UpdateBody,
    UpdateEntry, UploadBody, UploadItem,
};
use peershare_core::provider::{GraphCommand, GraphSnapshot};

use crate::oracle;
use crate::world::{Account, World};

#[derive(Debug, Clone, Copy)]
pub struct EpisodeLimits {
    pub max_users: usize,
    pub max_devices: usize,
    pub max_lists: usize,
    pub max_ops: usize,
}

impl Default for EpisodeLimits {
    fn default() -> Self {
        Self {
            max_users: 10,
            max_devices: 3,
            max_lists: 4,
            max_ops: 50,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct EpisodeReport {
    pub users: usize,
    pub ops: usize,
    /// Download comparisons performed.
    pub checks: usize,
    /// Operations by kind, for coverage reporting.
    pub op_counts: BTreeMap<&'static str, usize>,
}

#[derive(Debug, Clone)]
struct ModelItem {
    owner: String,
    /// `sharing_policy` always set.
    data: AppData,
    source: PolicySource,
}

impl ModelItem {
    fn policy(&self) -> SharingPolicy {
        self.data.sharing_policy.clone().expect("model items carry a policy")
    }

    fn slot(&self) -> (String, String, Specificity, String) {
        slot_of(&self.data)
    }
}

fn slot_of(data: &AppData) -> (String, String, Specificity, String) {
    (
        data.owner.social_id.clone(),
        data.data_type.clone(),
        data.descriptor.specificity,
        data.device_id.clone(),
    )
}

struct Episode {
    rng: StdRng,
    limits: EpisodeLimits,
    world: World,
    accounts: Vec<Account>,
    ever_ids: Vec<BTreeSet<String>>,
    items: BTreeMap<u64, ModelItem>,
    max_object_id: u64,
    lists: Vec<String>,
    devices: usize,
    report: EpisodeReport,
}

/// Runs one episode; `Err` describes the first divergence.
pub fn run_episode(seed: u64, limits: EpisodeLimits) -> Result<EpisodeReport, String> {
    let mut rng = StdRng::seed_from_u64(seed);
    let users = rng.random_range(2..=limits.max_users.max(2));
    let devices = rng.random_range(1..=limits.max_devices.max(1));
    let ops = rng.random_range(1..=limits.max_ops.max(1));
    let world = World::new();
    let mut accounts = Vec::new();
    let mut ever_ids = Vec::new();
    for i in 0..users {
        let mut account = world.account(&format!("u{i}"));
        let mut ids = BTreeSet::new();
        // Some friends only install the app later.
        if rng.random_bool(0.8) {
            ids.insert(world.register(&mut account));
        }
        accounts.push(account);
        ever_ids.push(ids);
    }
    let mut episode = Episode {
        rng,
        limits,
        world,
        accounts,
        ever_ids,
        items: BTreeMap::new(),
        max_object_id: 0,
        lists: Vec::new(),
        devices,
        report: EpisodeReport {
            users,
            ops,
            ..Default::default()
        },
    };
    episode
        .check_all()
        .map_err(|e| format!("seed {seed}, initial state: {e}"))?;
    for step in 0..ops {
        let kind = episode.step().map_err(|e| format!("seed {seed}, op {step}: {e}"))?;
        *episode.report.op_counts.entry(kind).or_default() += 1;
        episode
            .world
            .server
            .drain_changes()
            .map_err(|e| format!("seed {seed}, op {step} ({kind}): drain failed: {e}"))?;
        episode
            .check_all()
            .map_err(|e| format!("seed {seed}, op {step} ({kind}): {e}"))?;
    }
    Ok(episode.report)
}

fn error_code(response: &Response) -> Option<ErrorCode> {
    response.error_code()
}

impl Episode {
    fn name(&self, user: usize) -> String {
        self.accounts[user].identity.social_id.clone()
    }

    fn registered(&self) -> Vec<usize> {
        (0..self.accounts.len())
            .filter(|&u| self.accounts[u].peershare_id.is_some())
            .collect()
    }

    fn pick_registered(&mut self) -> usize {
        let registered = self.registered();
        if registered.is_empty() {
            let u = self.rng.random_range(0..self.accounts.len());
            let id = self.world.register(&mut self.accounts[u]);
            self.ever_ids[u].insert(id);
            return u;
        }
        registered[self.rng.random_range(0..registered.len())]
    }

    fn graph(&self) -> GraphSnapshot {
        self.world.provider.snapshot()
    }

    fn now(&self) -> i64 {
        use peershare_core::clock::Clock;
        self.world.clock.now()
    }

    fn random_policy(&mut self) -> Option<SharingPolicy> {
        match self.rng.random_range(0..10) {
            0..=2 => None,
            3..=4 => Some(SharingPolicy::AllFriends),
            _ => {
                if self.lists.is_empty() || self.rng.random_bool(0.1) {
                    Some(SharingPolicy::named("l-999"))
                } else {
                    let i = self.rng.random_range(0..self.lists.len());
                    Some(SharingPolicy::named(self.lists[i].clone()))
                }
            }
        }
    }

    fn random_expiry(&mut self) -> i64 {
        if self.rng.random_bool(0.8) {
            0
        } else {
            self.now() + self.rng.random_range(1..30)
        }
    }

    fn random_item(&mut self, user: usize) -> AppData {
        let owner = self.accounts[user].identity.clone();
        let value: Vec<u8> = (0..6).map(|_| self.rng.random()).collect();
        let device = format!("dev-{}", self.rng.random_range(0..self.devices));
        let mut data = match self.rng.random_range(0..4) {
            0 => fixtures::bdaddr_binding(&owner, &device, &value),
            1 => fixtures::scampi_binding(&owner, &device, &value),
            2 => fixtures::bearer_token(&owner, &value),
            _ => fixtures::public_key(&owner, &value),
        };
        data.sharing_policy = self.random_policy();
        data.expires_at = self.random_expiry();
        data
    }

    fn pick_target(&mut self, user: usize) -> u64 {
        let name = self.name(user);
        let own: Vec<u64> = self
            .items
            .iter()
            .filter(|(_, i)| i.owner == name)
            .map(|(id, _)| *id)
            .collect();
        let all: Vec<u64> = self.items.keys().copied().collect();
        let r = self.rng.random_range(0..10);
        if r < 6 && !own.is_empty() {
            own[self.rng.random_range(0..own.len())]
        } else if r < 8 && !all.is_empty() {
            all[self.rng.random_range(0..all.len())]
        } else {
            self.rng.random_range(1..=self.max_object_id + 3)
        }
    }

    fn live_item(&self, id: u64) -> Option<&ModelItem> {
        let now = self.now();
        self.items.get(&id).filter(|i| oracle::is_live(i.data.expires_at, now))
    }

    fn step(&mut self) -> Result<&'static str, String> {
        match self.rng.random_range(0..100) {
            0..=24 => self.upload().map(|_| "upload"),
            25..=39 => self.update().map(|_| "update"),
            40..=47 => self.delete().map(|_| "delete"),
            48..=57 => self.override_policy().map(|_| "policy"),
            58..=87 => self.mutate_graph().map(|_| "graph"),
            88..=91 => self.unregister().map(|_| "unregister"),
            92..=95 => self.register().map(|_| "register"),
            _ => {
                let secs = self.rng.random_range(1..=15);
                self.world.clock.advance(secs);
                Ok("advance_clock")
            }
        }
    }

    fn upload(&mut self) -> Result<(), String> {
        let u = self.pick_registered();
        let n = self.rng.random_range(1..=2);
        let batch: Vec<AppData> = (0..n).map(|_| self.random_item(u)).collect();
        let graph = self.graph();
        let name = self.name(u);
        let acceptable = batch.iter().all(|d| {
            let policy = d.sharing_policy.clone().unwrap_or(SharingPolicy::AllFriends);
            oracle::policy_resolvable(&graph, &name, &policy)
        });
        let body = UploadBody {
            items: batch
                .iter()
                .map(|d| UploadItem {
                    op_key: None,
                    data: d.clone(),
                })
                .collect(),
        };
        let response = self.world.call(&self.accounts[u], RequestBody::Upload(body));
        if !acceptable {
            return match error_code(&response) {
                Some(ErrorCode::ValidationError) => Ok(()),
                _ => Err(format!("upload with unresolvable policy answered {response:?}")),
            };
        }
        let ResponseBody::Upload(result) = response.into_result().map_err(|e| format!("upload refused: {e}"))? else {
            return Err("upload answered with another method".into());
        };
        if result.object_ids.len() != batch.len() {
            return Err("upload id count mismatch".into());
        }
        for (mut data, object_id) in batch.into_iter().zip(result.object_ids) {
            if object_id <= self.max_object_id {
                return Err(format!("object id {object_id} not above {}", self.max_object_id));
            }
            self.max_object_id = object_id;
            let slot = slot_of(&data);
            self.items.retain(|_, item| item.slot() != slot);
            data.sharing_policy.get_or_insert(SharingPolicy::AllFriends);
            self.items.insert(
                object_id,
                ModelItem {
                    owner: name.clone(),
                    data,
                    source: PolicySource::App,
                },
            );
        }
        Ok(())
    }

    fn update(&mut self) -> Result<(), String> {
        let u = self.pick_registered();
        let name = self.name(u);
        let n = self.rng.random_range(1..=2);
        let mut entries = Vec::new();
        for _ in 0..n {
            let object_id = self.pick_target(u);
            let mut data = match self.items.get(&object_id) {
                Some(item) => item.data.clone(),
                None => self.random_item(u),
            };
            data.data_value = (0..6).map(|_| self.rng.random()).collect();
            data.sharing_policy = self.random_policy();
            data.expires_at = self.random_expiry();
            entries.push(UpdateEntry { object_id, data });
        }
        let body = UpdateBody {
            updates: entries.clone(),
        };
        let response = self.world.call(&self.accounts[u], RequestBody::Update(body));
        let ResponseBody::Update(results) = response.into_result().map_err(|e| format!("update refused: {e}"))? else {
            return Err("update answered with another method".into());
        };
        if results.results.len() != entries.len() {
            return Err("update result count mismatch".into());
        }
        let graph = self.graph();
        for (entry, got) in entries.into_iter().zip(results.results) {
            let expected = match self.live_item(entry.object_id).cloned() {
                None => EntryStatus::NotFoundRemove,
                Some(item) if item.owner != name => EntryStatus::AuthError,
                Some(item) => {
                    let current = item.policy();
                    let next = match item.source {
                        PolicySource::UserOverride => current.clone(),
                        PolicySource::App => entry.data.sharing_policy.clone().unwrap_or(current.clone()),
                    };
                    if next != current && !oracle::policy_resolvable(&graph, &name, &next) {
                        EntryStatus::ValidationError
                    } else {
                        let mut data = entry.data.clone();
                        data.sharing_policy = Some(next);
                        self.items.get_mut(&entry.object_id).unwrap().data = data;
                        EntryStatus::Ok
                    }
                }
            };
            if got.object_id != entry.object_id || got.status != expected {
                return Err(format!(
                    "update of {}: expected {expected:?}, got {got:?}",
                    entry.object_id
                ));
            }
        }
        Ok(())
    }

    fn delete(&mut self) -> Result<(), String> {
        let u = self.pick_registered();
        let name = self.name(u);
        let n = self.rng.random_range(1..=2);
        let ids: Vec<u64> = (0..n).map(|_| self.pick_target(u)).collect();
        let mut failed = BTreeSet::new();
        let mut seen = BTreeSet::new();
        for &id in &ids {
            if !seen.insert(id) {
                continue;
            }
            match self.live_item(id) {
                None => {
                    failed.insert((id, ErrorCode::NotFound));
                }
                Some(item) if item.owner != name => {
                    failed.insert((id, ErrorCode::AclDenied));
                }
                Some(_) => {
                    self.items.remove(&id);
                }
            }
        }
        let response = self
            .world
            .call(&self.accounts[u], RequestBody::Delete(DeleteBody { object_ids: ids }));
        match response.into_result() {
            Ok(ResponseBody::Delete(_)) if failed.is_empty() => Ok(()),
            Err(info) if info.code == ErrorCode::PartialFailure => {
                let got: BTreeSet<(u64, ErrorCode)> =
                    info.detail.iter().map(|d| (d.object_id.unwrap_or(0), d.code)).collect();
                if got == failed {
                    Ok(())
                } else {
                    Err(format!("delete failures: expected {failed:?}, got {got:?}"))
                }
            }
            other => Err(format!("delete: expected failures {failed:?}, got {other:?}")),
        }
    }

    fn override_policy(&mut self) -> Result<(), String> {
        let u = self.pick_registered();
        let name = self.name(u);
        let object_id = self.pick_target(u);
        let policy = self.random_policy().unwrap_or(SharingPolicy::AllFriends);
        let graph = self.graph();
        let expected = match self.live_item(object_id) {
            None => Some(ErrorCode::NotFound),
            Some(item) if item.owner != name => Some(ErrorCode::AclDenied),
            Some(_) if !oracle::policy_resolvable(&graph, &name, &policy) => Some(ErrorCode::ValidationError),
            Some(_) => None,
        };
        let body = PolicyBody {
            object_id,
            sharing_policy: policy.clone(),
        };
        let response = self.world.call(&self.accounts[u], RequestBody::Policy(body));
        let got = error_code(&response);
        if got != expected {
            return Err(format!(
                "policy on {object_id}: expected {expected:?}, got {response:?}"
            ));
        }
        if expected.is_none() {
            let item = self.items.get_mut(&object_id).unwrap();
            item.data.sharing_policy = Some(policy);
            item.source = PolicySource::UserOverride;
        }
        Ok(())
    }

    fn random_user_name(&mut self) -> String {
        let u = self.rng.random_range(0..self.accounts.len());
        self.name(u)
    }

    fn mutate_graph(&mut self) -> Result<(), String> {
        let live_lists: Vec<String> = self.graph().lists.keys().cloned().collect();
        let command = match self.rng.random_range(0..6) {
            0 | 1 => GraphCommand::AddFriendship {
                a: self.random_user_name(),
                b: self.random_user_name(),
            },
            2 => GraphCommand::RemoveFriendship {
                a: self.random_user_name(),
                b: self.random_user_name(),
            },
            3 if live_lists.len() < self.limits.max_lists => GraphCommand::CreateList {
                owner: self.random_user_name(),
                name: "close".into(),
            },
            3 | 4 if !live_lists.is_empty() => GraphCommand::AddToList {
                list_id: live_lists[self.rng.random_range(0..live_lists.len())].clone(),
                user: self.random_user_name(),
            },
            5 if !live_lists.is_empty() => {
                let list_id = live_lists[self.rng.random_range(0..live_lists.len())].clone();
                if self.rng.random_bool(0.3) {
                    GraphCommand::DeleteList { list_id }
                } else {
                    let members: Vec<String> = self.graph().lists[&list_id].members.iter().cloned().collect();
                    let user = if members.is_empty() {
                        self.random_user_name()
                    } else {
                        members[self.rng.random_range(0..members.len())].clone()
                    };
                    GraphCommand::RemoveFromList { list_id, user }
                }
            }
            _ => GraphCommand::AddFriendship {
                a: self.random_user_name(),
                b: self.random_user_name(),
            },
        };
        let ack = self
            .world
            .provider
            .mutate(&command)
            .map_err(|e| format!("{command:?}: {e}"))?;
        if let Some(list_id) = ack.list_id {
            self.lists.push(list_id);
        }
        Ok(())
    }

    fn unregister(&mut self) -> Result<(), String> {
        let u = self.pick_registered();
        let name = self.name(u);
        let response = self
            .world
            .call(&self.accounts[u], RequestBody::Unregister(EmptyBody {}));
        response.into_result().map_err(|e| format!("unregister refused: {e}"))?;
        self.items.retain(|_, item| item.owner != name);
        let stale = self.accounts[u].clone();
        self.accounts[u].peershare_id = None;
        // The old id must be dead.
        let after = self.world.call(&stale, RequestBody::Download(EmptyBody {}));
        if error_code(&after) != Some(ErrorCode::AuthError) {
            return Err(format!("download after unregister answered {after:?}"));
        }
        Ok(())
    }

    fn register(&mut self) -> Result<(), String> {
        let unregistered: Vec<usize> = (0..self.accounts.len())
            .filter(|&u| self.accounts[u].peershare_id.is_none())
            .collect();
        if unregistered.is_empty() {
            return Ok(());
        }
        let u = unregistered[self.rng.random_range(0..unregistered.len())];
        let id = self.world.register(&mut self.accounts[u]);
        if !self.ever_ids[u].insert(id.clone()) {
            return Err(format!("re-registration reused {id}"));
        }
        Ok(())
    }

    fn expected_views(&self, graph: &GraphSnapshot, viewer: &str) -> Vec<ItemView> {
        let now = self.now();
        let mut out = Vec::new();
        for (&object_id, item) in &self.items {
            if !oracle::is_live(item.data.expires_at, now) {
                continue;
            }
            if item.owner == viewer {
                out.push(ItemView {
                    data: item.data.clone(),
                    object_id: Some(object_id),
                    is_owner: true,
                    policy_source: Some(item.source),
                });
            } else if oracle::audience(graph, &item.owner, &item.policy()).contains(viewer) {
                let mut data = item.data.clone();
                data.sharing_policy = None;
                out.push(ItemView {
                    data,
                    object_id: None,
                    is_owner: false,
                    policy_source: None,
                });
            }
        }
        out
    }

    fn check_all(&mut self) -> Result<(), String> {
        let graph = self.graph();
        for u in self.registered() {
            let viewer = self.name(u);
            let response = self.world.call(&self.accounts[u], RequestBody::Download(EmptyBody {}));
            let ResponseBody::Download(got) = response
                .into_result()
                .map_err(|e| format!("download for {viewer} refused: {e}"))?
            else {
                return Err("download answered with another method".into());
            };
            let mut got: Vec<String> = got.items.iter().map(canonical).collect();
            let mut expected: Vec<String> = self.expected_views(&graph, &viewer).iter().map(canonical).collect();
            got.sort();
            expected.sort();
            if got != expected {
                return Err(format!(
                    "download for {viewer} diverges\n expected: {expected:#?}\n got: {got:#?}"
                ));
            }
            self.report.checks += 1;
        }
        Ok(())
    }
}

fn canonical(view: &ItemView) -> String {
    serde_json::to_string(view).expect("views serialize")
}
