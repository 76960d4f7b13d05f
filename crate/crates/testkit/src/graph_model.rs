//! Replay model of the mock social graph: applies the command log to plain
//! sets so the provider can be compared against it.

use std::collections::{BTreeMap, BTreeSet};

use peershare_core::provider::{GraphCommand, GraphSnapshot, ListSnapshot};

#[derive(Debug, Clone, Default)]
pub struct ReplayGraph {
    users: BTreeMap<String, String>,
    friendships: BTreeSet<(String, String)>,
    lists: BTreeMap<String, ListSnapshot>,
    lists_created: u64,
    events: u64,
}

/// What replaying one command is expected to produce.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Replayed {
    pub ok: bool,
    pub changed: bool,
    pub events: u32,
    pub list_id: Option<String>,
}

fn pair(a: &str, b: &str) -> (String, String) {
    if a < b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

impl ReplayGraph {
    pub fn apply(&mut self, command: &GraphCommand) -> Replayed {
        let outcome = self.step(command);
        match outcome {
            None => Replayed {
                ok: false,
                changed: false,
                events: 0,
                list_id: None,
            },
            Some((changed, events, list_id)) => {
                self.events += events as u64;
                Replayed {
                    ok: true,
                    changed,
                    events,
                    list_id,
                }
            }
        }
    }

    fn step(&mut self, command: &GraphCommand) -> Option<(bool, u32, Option<String>)> {
        let refused = None;
        let done = |changed: bool, events: u32, list_id: Option<String>| Some((changed, events, list_id));
        match command {
            GraphCommand::AddUser { user, name } => {
                if user.is_empty() || self.users.contains_key(user) {
                    return refused;
                }
                self.users.insert(user.clone(), name.clone());
                done(true, 0, None)
            }
            GraphCommand::AddFriendship { a, b } | GraphCommand::RemoveFriendship { a, b } => {
                if !self.users.contains_key(a) || !self.users.contains_key(b) {
                    return refused;
                }
                let adding = matches!(command, GraphCommand::AddFriendship { .. });
                let changed = if a == b {
                    false
                } else if adding {
                    self.friendships.insert(pair(a, b))
                } else {
                    self.friendships.remove(&pair(a, b))
                };
                done(changed, if changed { 2 } else { 0 }, None)
            }
            GraphCommand::CreateList { owner, name } => {
                if !self.users.contains_key(owner) {
                    return refused;
                }
                self.lists_created += 1;
                let id = format!("l-{}", self.lists_created);
                self.lists.insert(
                    id.clone(),
                    ListSnapshot {
                        owner: owner.clone(),
                        name: name.clone(),
                        members: BTreeSet::new(),
                    },
                );
                done(true, 1, Some(id))
            }
            GraphCommand::DeleteList { list_id } => {
                if self.lists.remove(list_id).is_none() {
                    return refused;
                }
                done(true, 1, None)
            }
            GraphCommand::AddToList { list_id, user } => {
                if !self.users.contains_key(user) || !self.lists.contains_key(list_id) {
                    return refused;
                }
                let changed = self.lists.get_mut(list_id).unwrap().members.insert(user.clone());
                done(changed, changed as u32, None)
            }
            GraphCommand::RemoveFromList { list_id, user } => {
                let Some(list) = self.lists.get_mut(list_id) else {
                    return refused;
                };
                let changed = list.members.remove(user);
                done(changed, changed as u32, None)
            }
            GraphCommand::RevokeToken { .. } => done(false, 0, None),
        }
    }

    pub fn snapshot(&self) -> GraphSnapshot {
        GraphSnapshot {
            users: self.users.clone(),
            friendships: self.friendships.clone(),
            lists: self.lists.clone(),
        }
    }

    pub fn events(&self) -> u64 {
        self.events
    }
}
