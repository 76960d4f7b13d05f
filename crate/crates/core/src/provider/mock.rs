use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use rand::RngCore;

use super::{
    ChangeCallback, ChangeTarget, FriendListRef, GraphAck, GraphCommand, ListChangeEvent, ProviderError, ProviderToken,
    SocialProvider, TokenClaims,
};
use crate::clock::Clock;
use crate::model::SharingPolicy;

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ListSnapshot {
    pub owner: String,
    pub name: String,
    pub members: BTreeSet<String>,
}

/// Raw tables of the mock graph, for oracles that must not go through the
/// provider's own query paths.
#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct GraphSnapshot {
    pub users: BTreeMap<String, String>,
    pub friendships: BTreeSet<(String, String)>,
    pub lists: BTreeMap<String, ListSnapshot>,
}

#[derive(Default)]
struct Graph {
    users: BTreeMap<String, String>,
    friends: BTreeMap<String, BTreeSet<String>>,
    lists: BTreeMap<String, ListSnapshot>,
    tokens: HashMap<String, ProviderToken>,
    events: Vec<ListChangeEvent>,
    next_list: u64,
}

impl Graph {
    fn require_user(&self, user: &str) -> Result<(), ProviderError> {
        if self.users.contains_key(user) {
            Ok(())
        } else {
            Err(ProviderError::UnknownUser(user.to_string()))
        }
    }

    fn list_mut(&mut self, list_id: &str) -> Result<&mut ListSnapshot, ProviderError> {
        self.lists
            .get_mut(list_id)
            .ok_or_else(|| ProviderError::UnknownList(list_id.to_string()))
    }

    fn emit(&mut self, owner: &str, target: ChangeTarget) -> ListChangeEvent {
        let event = ListChangeEvent {
            owner_social_id: owner.to_string(),
            target,
            change_seq: self.events.len() as u64 + 1,
        };
        self.events.push(event.clone());
        event
    }

    fn apply(&mut self, command: &GraphCommand) -> Result<(GraphAck, Vec<ListChangeEvent>), ProviderError> {
        let mut events = Vec::new();
        let mut ack = GraphAck::default();
        match command {
            GraphCommand::AddUser { user, name } => {
                if user.is_empty() {
                    return Err(ProviderError::UnknownUser(user.clone()));
                }
                if self.users.contains_key(user) {
                    return Err(ProviderError::DuplicateUser(user.clone()));
                }
                self.users.insert(user.clone(), name.clone());
                self.friends.insert(user.clone(), BTreeSet::new());
                ack.changed = true;
            }
            GraphCommand::AddFriendship { a, b } => {
                self.require_user(a)?;
                self.require_user(b)?;
                if a != b && !self.friends[a].contains(b) {
                    self.friends.get_mut(a).unwrap().insert(b.clone());
                    self.friends.get_mut(b).unwrap().insert(a.clone());
                    events.push(self.emit(a, ChangeTarget::AllFriends));
                    events.push(self.emit(b, ChangeTarget::AllFriends));
                    ack.changed = true;
                }
            }
            GraphCommand::RemoveFriendship { a, b } => {
                self.require_user(a)?;
                self.require_user(b)?;
                if self.friends[a].contains(b) {
                    self.friends.get_mut(a).unwrap().remove(b);
                    self.friends.get_mut(b).unwrap().remove(a);
                    events.push(self.emit(a, ChangeTarget::AllFriends));
                    events.push(self.emit(b, ChangeTarget::AllFriends));
                    ack.changed = true;
                }
            }
            GraphCommand::CreateList { owner, name } => {
                self.require_user(owner)?;
                self.next_list += 1;
                let list_id = format!("l-{}", self.next_list);
                self.lists.insert(
                    list_id.clone(),
                    ListSnapshot {
                        owner: owner.clone(),
                        name: name.clone(),
                        members: BTreeSet::new(),
                    },
                );
                events.push(self.emit(
                    owner,
                    ChangeTarget::List {
                        list_id: list_id.clone(),
                    },
                ));
                ack.changed = true;
                ack.list_id = Some(list_id);
            }
            GraphCommand::DeleteList { list_id } => {
                let list = self
                    .lists
                    .remove(list_id)
                    .ok_or_else(|| ProviderError::UnknownList(list_id.clone()))?;
                events.push(self.emit(
                    &list.owner,
                    ChangeTarget::List {
                        list_id: list_id.clone(),
                    },
                ));
                ack.changed = true;
            }
            GraphCommand::AddToList { list_id, user } => {
                self.require_user(user)?;
                let list = self.list_mut(list_id)?;
                if list.members.insert(user.clone()) {
                    let owner = list.owner.clone();
                    events.push(self.emit(
                        &owner,
                        ChangeTarget::List {
                            list_id: list_id.clone(),
                        },
                    ));
                    ack.changed = true;
                }
            }
            GraphCommand::RemoveFromList { list_id, user } => {
                let list = self.list_mut(list_id)?;
                if list.members.remove(user) {
                    let owner = list.owner.clone();
                    events.push(self.emit(
                        &owner,
                        ChangeTarget::List {
                            list_id: list_id.clone(),
                        },
                    ));
                    ack.changed = true;
                }
            }
            GraphCommand::RevokeToken { token } => {
                if let Some(t) = self.tokens.get_mut(token) {
                    ack.changed = t.valid;
                    t.valid = false;
                }
            }
        }
        ack.events = events.len() as u32;
        Ok((ack, events))
    }
}

/// Scriptable in-process social network.
///
/// Mutations are serialized; reads may run concurrently. Subscribers see
/// every event exactly once, in `change_seq` order.
pub struct MockProvider {
    network: String,
    clock: Arc<dyn Clock>,
    graph: RwLock<Graph>,
    subscribers: Mutex<Vec<ChangeCallback>>,
    reachable: AtomicBool,
}

impl MockProvider {
    pub fn new(network: impl Into<String>, clock: Arc<dyn Clock>) -> Self {
        Self {
            network: network.into(),
            clock,
            graph: RwLock::new(Graph::default()),
            subscribers: Mutex::new(Vec::new()),
            reachable: AtomicBool::new(true),
        }
    }

    /// Simulates an outage: every [`SocialProvider`] call fails with
    /// `Unreachable` while set. Graph mutation keeps working.
    pub fn set_reachable(&self, reachable: bool) {
        self.reachable.store(reachable, Ordering::SeqCst);
    }

    fn check_reachable(&self) -> Result<(), ProviderError> {
        if self.reachable.load(Ordering::SeqCst) {
            Ok(())
        } else {
            Err(ProviderError::Unreachable(format!("{} is down", self.network)))
        }
    }

    pub fn mutate(&self, command: &GraphCommand) -> Result<GraphAck, ProviderError> {
        let mut graph = self.graph.write().unwrap();
        let (ack, events) = graph.apply(command)?;
        if events.is_empty() {
            return Ok(ack);
        }
        // Take the subscriber lock before releasing the graph so deliveries
        // from concurrent mutations cannot overtake each other.
        let subscribers = self.subscribers.lock().unwrap();
        drop(graph);
        for event in &events {
            for callback in subscribers.iter() {
                callback(event);
            }
        }
        Ok(ack)
    }

    pub fn add_user(&self, user: &str, name: &str) -> Result<(), ProviderError> {
        self.mutate(&GraphCommand::AddUser {
            user: user.into(),
            name: name.into(),
        })
        .map(|_| ())
    }

    pub fn befriend(&self, a: &str, b: &str) -> Result<bool, ProviderError> {
        self.mutate(&GraphCommand::AddFriendship {
            a: a.into(),
            b: b.into(),
        })
        .map(|ack| ack.changed)
    }

    pub fn unfriend(&self, a: &str, b: &str) -> Result<bool, ProviderError> {
        self.mutate(&GraphCommand::RemoveFriendship {
            a: a.into(),
            b: b.into(),
        })
        .map(|ack| ack.changed)
    }

    /// Creates a list and returns its id.
    pub fn create_list(&self, owner: &str, name: &str) -> Result<String, ProviderError> {
        let ack = self.mutate(&GraphCommand::CreateList {
            owner: owner.into(),
            name: name.into(),
        })?;
        Ok(ack.list_id.expect("create_list always assigns an id"))
    }

    pub fn delete_list(&self, list_id: &str) -> Result<(), ProviderError> {
        self.mutate(&GraphCommand::DeleteList {
            list_id: list_id.into(),
        })
        .map(|_| ())
    }

    pub fn add_to_list(&self, list_id: &str, user: &str) -> Result<bool, ProviderError> {
        self.mutate(&GraphCommand::AddToList {
            list_id: list_id.into(),
            user: user.into(),
        })
        .map(|ack| ack.changed)
    }

    pub fn remove_from_list(&self, list_id: &str, user: &str) -> Result<bool, ProviderError> {
        self.mutate(&GraphCommand::RemoveFromList {
            list_id: list_id.into(),
            user: user.into(),
        })
        .map(|ack| ack.changed)
    }

    /// Issues a token for `user` to application `app_id`, valid for `ttl_secs`.
    pub fn issue_token(
        &self,
        user_social_id: &str,
        app_id: &str,
        ttl_secs: i64,
    ) -> Result<ProviderToken, ProviderError> {
        let mut graph = self.graph.write().unwrap();
        graph.require_user(user_social_id)?;
        let mut entropy = [0u8; 32];
        rand::rng().fill_bytes(&mut entropy);
        let now = self.clock.now();
        let token = ProviderToken {
            token: URL_SAFE_NO_PAD.encode(entropy),
            user_social_id: user_social_id.to_string(),
            app_id: app_id.to_string(),
            issued_at: now,
            expires_at: now.saturating_add(ttl_secs.max(0)),
            valid: true,
        };
        graph.tokens.insert(token.token.clone(), token.clone());
        Ok(token)
    }

    pub fn revoke_token(&self, token: &str) -> bool {
        self.mutate(&GraphCommand::RevokeToken { token: token.into() })
            .map(|ack| ack.changed)
            .unwrap_or(false)
    }

    pub fn snapshot(&self) -> GraphSnapshot {
        let graph = self.graph.read().unwrap();
        let friendships = graph
            .friends
            .iter()
            .flat_map(|(a, bs)| bs.iter().filter(move |b| a < *b).map(move |b| (a.clone(), b.clone())))
            .collect();
        GraphSnapshot {
            users: graph.users.clone(),
            friendships,
            lists: graph.lists.clone(),
        }
    }

    pub fn last_seq(&self) -> u64 {
        self.graph.read().unwrap().events.len() as u64
    }
}

impl SocialProvider for MockProvider {
    fn network(&self) -> &str {
        &self.network
    }

    fn verify_token(&self, token: &str) -> Result<TokenClaims, ProviderError> {
        self.check_reachable()?;
        let graph = self.graph.read().unwrap();
        let Some(record) = graph.tokens.get(token) else {
            return Ok(TokenClaims::invalid());
        };
        let live = record.valid && self.clock.now() < record.expires_at;
        Ok(TokenClaims {
            user_social_id: record.user_social_id.clone(),
            app_id: record.app_id.clone(),
            valid: live,
        })
    }

    fn get_friends(&self, user_social_id: &str) -> Result<BTreeSet<String>, ProviderError> {
        self.check_reachable()?;
        let graph = self.graph.read().unwrap();
        graph
            .friends
            .get(user_social_id)
            .cloned()
            .ok_or_else(|| ProviderError::UnknownUser(user_social_id.to_string()))
    }

    fn get_custom_lists(&self, user_social_id: &str) -> Result<Vec<FriendListRef>, ProviderError> {
        self.check_reachable()?;
        let graph = self.graph.read().unwrap();
        graph.require_user(user_social_id)?;
        Ok(graph
            .lists
            .iter()
            .filter(|(_, l)| l.owner == user_social_id)
            .map(|(id, l)| FriendListRef {
                list_id: id.clone(),
                display_name: l.name.clone(),
                owner_social_id: l.owner.clone(),
            })
            .collect())
    }

    fn list_members(&self, list_id: &str) -> Result<(FriendListRef, BTreeSet<String>), ProviderError> {
        self.check_reachable()?;
        let graph = self.graph.read().unwrap();
        let list = graph
            .lists
            .get(list_id)
            .ok_or_else(|| ProviderError::UnknownList(list_id.to_string()))?;
        Ok((
            FriendListRef {
                list_id: list_id.to_string(),
                display_name: list.name.clone(),
                owner_social_id: list.owner.clone(),
            },
            list.members.clone(),
        ))
    }

    fn expand_policy(&self, owner_social_id: &str, policy: &SharingPolicy) -> Result<BTreeSet<String>, ProviderError> {
        self.check_reachable()?;
        let graph = self.graph.read().unwrap();
        graph.require_user(owner_social_id)?;
        let mut ids = match policy {
            SharingPolicy::AllFriends => graph.friends[owner_social_id].clone(),
            SharingPolicy::NamedList { list_ref } => {
                let list = graph
                    .lists
                    .get(list_ref)
                    .ok_or_else(|| ProviderError::UnknownList(list_ref.clone()))?;
                if list.owner != owner_social_id {
                    return Err(ProviderError::ListNotOwned {
                        list: list_ref.clone(),
                        owner: owner_social_id.to_string(),
                    });
                }
                list.members.clone()
            }
        };
        ids.remove(owner_social_id);
        Ok(ids)
    }

    fn poll_changes(&self, after_seq: u64) -> Result<Vec<ListChangeEvent>, ProviderError> {
        self.check_reachable()?;
        let graph = self.graph.read().unwrap();
        let start = (after_seq as usize).min(graph.events.len());
        Ok(graph.events[start..].to_vec())
    }

    fn subscribe(&self, callback: ChangeCallback) -> Result<(), ProviderError> {
        self.subscribers.lock().unwrap().push(callback);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;

    fn provider() -> (Arc<ManualClock>, MockProvider) {
        let clock = Arc::new(ManualClock::new(1_000));
        let p = MockProvider::new("mocknet", clock.clone());
        for u in ["alice", "bob", "carol"] {
            p.add_user(u, &u.to_uppercase()).unwrap();
        }
        (clock, p)
    }

    #[test]
    fn token_round_trip() {
        let (_, p) = provider();
        let t = p.issue_token("alice", "peershare-app", 3600).unwrap();
        assert_eq!(t.token.len(), 43);
        let claims = p.verify_token(&t.token).unwrap();
        assert_eq!(
            claims,
            TokenClaims {
                user_social_id: "alice".into(),
                app_id: "peershare-app".into(),
                valid: true
            }
        );
        assert_eq!(p.verify_token(&t.token).unwrap(), claims);
    }

    #[test]
    fn revoked_and_expired_tokens_are_invalid() {
        let (clock, p) = provider();
        let t = p.issue_token("alice", "peershare-app", 3600).unwrap();
        assert!(p.revoke_token(&t.token));
        assert!(!p.verify_token(&t.token).unwrap().valid);

        let zero = p.issue_token("alice", "peershare-app", 0).unwrap();
        assert!(!p.verify_token(&zero.token).unwrap().valid);

        let short = p.issue_token("alice", "peershare-app", 10).unwrap();
        assert!(p.verify_token(&short.token).unwrap().valid);
        clock.advance(10);
        assert!(!p.verify_token(&short.token).unwrap().valid);
    }

    #[test]
    fn foreign_app_token_keeps_its_claims() {
        let (_, p) = provider();
        let t = p.issue_token("alice", "evil-app", 60).unwrap();
        let claims = p.verify_token(&t.token).unwrap();
        assert_eq!(claims.app_id, "evil-app");
        assert!(claims.valid);
    }

    #[test]
    fn garbage_token_is_invalid() {
        let (_, p) = provider();
        assert_eq!(p.verify_token("%%%not-a-token").unwrap(), TokenClaims::invalid());
        assert_eq!(p.verify_token("").unwrap(), TokenClaims::invalid());
    }

    #[test]
    fn unknown_user_cannot_get_token() {
        let (_, p) = provider();
        assert_eq!(
            p.issue_token("mallory", "peershare-app", 60).unwrap_err(),
            ProviderError::UnknownUser("mallory".into())
        );
    }

    #[test]
    fn friendship_is_symmetric_and_idempotent() {
        let (_, p) = provider();
        assert!(p.befriend("alice", "bob").unwrap());
        assert!(!p.befriend("bob", "alice").unwrap());
        assert!(p.get_friends("alice").unwrap().contains("bob"));
        assert!(p.get_friends("bob").unwrap().contains("alice"));
        assert_eq!(p.poll_changes(0).unwrap().len(), 2);
        assert!(!p.unfriend("alice", "carol").unwrap());
        assert_eq!(p.poll_changes(0).unwrap().len(), 2);
        assert!(p.get_friends("carol").unwrap().is_empty());
    }

    #[test]
    fn self_friendship_is_ignored() {
        let (_, p) = provider();
        assert!(!p.befriend("alice", "alice").unwrap());
        assert!(p.get_friends("alice").unwrap().is_empty());
    }

    #[test]
    fn duplicate_user_is_rejected() {
        let (_, p) = provider();
        assert_eq!(
            p.add_user("alice", "again").unwrap_err(),
            ProviderError::DuplicateUser("alice".into())
        );
    }

    #[test]
    fn lists_and_policy_expansion() {
        let (_, p) = provider();
        p.befriend("alice", "bob").unwrap();
        p.befriend("alice", "carol").unwrap();
        let close = p.create_list("alice", "close").unwrap();
        p.add_to_list(&close, "bob").unwrap();

        let lists = p.get_custom_lists("alice").unwrap();
        assert_eq!(lists.len(), 1);
        assert_eq!(lists[0].display_name, "close");
        assert!(p.get_custom_lists("bob").unwrap().is_empty());

        let all = p.expand_policy("alice", &SharingPolicy::AllFriends).unwrap();
        assert_eq!(all, BTreeSet::from(["bob".to_string(), "carol".to_string()]));
        let named = p.expand_policy("alice", &SharingPolicy::named(&close)).unwrap();
        assert_eq!(named, BTreeSet::from(["bob".to_string()]));

        assert!(matches!(
            p.expand_policy("bob", &SharingPolicy::named(&close)),
            Err(ProviderError::ListNotOwned { .. })
        ));
        assert!(matches!(
            p.expand_policy("alice", &SharingPolicy::named("l-99")),
            Err(ProviderError::UnknownList(_))
        ));
        assert!(matches!(
            p.expand_policy("zed", &SharingPolicy::AllFriends),
            Err(ProviderError::UnknownUser(_))
        ));

        p.delete_list(&close).unwrap();
        assert!(p.get_custom_lists("alice").unwrap().is_empty());
    }

    #[test]
    fn owner_in_own_list_is_not_expanded() {
        let (_, p) = provider();
        let l = p.create_list("alice", "me").unwrap();
        p.add_to_list(&l, "alice").unwrap();
        p.add_to_list(&l, "bob").unwrap();
        let ids = p.expand_policy("alice", &SharingPolicy::named(&l)).unwrap();
        assert_eq!(ids, BTreeSet::from(["bob".to_string()]));
    }

    #[test]
    fn list_membership_event() {
        let (_, p) = provider();
        let l = p.create_list("alice", "close").unwrap();
        let n = p.last_seq();
        p.add_to_list(&l, "bob").unwrap();
        let events = p.poll_changes(n).unwrap();
        assert_eq!(
            events,
            vec![ListChangeEvent {
                owner_social_id: "alice".into(),
                target: ChangeTarget::List { list_id: l },
                change_seq: n + 1,
            }]
        );
        assert!(p.poll_changes(p.last_seq()).unwrap().is_empty());
    }

    #[test]
    fn subscribers_see_each_event_once() {
        let (_, p) = provider();
        let seen = Arc::new(Mutex::new(Vec::new()));
        let sink = seen.clone();
        p.subscribe(Box::new(move |e| sink.lock().unwrap().push(e.change_seq)))
            .unwrap();
        p.befriend("alice", "bob").unwrap();
        let l = p.create_list("bob", "x").unwrap();
        p.add_to_list(&l, "carol").unwrap();
        p.add_to_list(&l, "carol").unwrap();
        assert_eq!(*seen.lock().unwrap(), vec![1, 2, 3, 4]);
    }

    #[test]
    fn outage_fails_reads_but_not_mutations() {
        let (_, p) = provider();
        p.set_reachable(false);
        assert!(matches!(p.get_friends("alice"), Err(ProviderError::Unreachable(_))));
        assert!(matches!(p.verify_token("x"), Err(ProviderError::Unreachable(_))));
        p.befriend("alice", "bob").unwrap();
        p.set_reachable(true);
        assert!(p.get_friends("alice").unwrap().contains("bob"));
    }
}
