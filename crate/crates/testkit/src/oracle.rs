//! Brute-force answers computed from a raw graph snapshot.

use std::collections::BTreeSet;

use peershare_core::model::SharingPolicy;
use peershare_core::provider::GraphSnapshot;

pub fn friends_of(graph: &GraphSnapshot, user: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for (a, b) in &graph.friendships {
        if a == user {
            out.insert(b.clone());
        }
        if b == user {
            out.insert(a.clone());
        }
    }
    out
}

/// Social ids that may see an item of `owner` under `policy`, owner excluded.
/// A list that no longer exists, or belongs to someone else, admits nobody.
pub fn audience(graph: &GraphSnapshot, owner: &str, policy: &SharingPolicy) -> BTreeSet<String> {
    let mut out = match policy {
        SharingPolicy::AllFriends => friends_of(graph, owner),
        SharingPolicy::NamedList { list_ref } => match graph.lists.get(list_ref) {
            Some(list) if list.owner == owner => list.members.clone(),
            _ => BTreeSet::new(),
        },
    };
    out.remove(owner);
    out
}

/// Whether `policy` can be attached to an item of `owner` right now.
pub fn policy_resolvable(graph: &GraphSnapshot, owner: &str, policy: &SharingPolicy) -> bool {
    match policy {
        SharingPolicy::AllFriends => graph.users.contains_key(owner),
        SharingPolicy::NamedList { list_ref } => graph.lists.get(list_ref).is_some_and(|l| l.owner == owner),
    }
}

pub fn is_live(expires_at: i64, now: i64) -> bool {
    expires_at == 0 || now < expires_at
}
