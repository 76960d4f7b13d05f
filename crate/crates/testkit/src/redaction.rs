//! Randomized DOWNLOAD traffic inspected as raw JSON: views of someone
//! else's item must not carry any owner-only field, at any depth.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::Value;

use peershare_core::fixtures;
use peershare_core::model::SharingPolicy;
use peershare_core::protocol::{
    encode_request, EmptyBody, PolicyBody, RequestBody, ResponseBody, UploadBody, UploadItem,
};

use crate::world::{Account, World};

pub const OWNER_ONLY: [&str; 3] = ["sharing_policy", "object_id", "policy_source"];

#[derive(Debug, Default, Clone, Copy)]
pub struct RedactionReport {
    pub responses: usize,
    pub foreign_views: usize,
    pub owner_views: usize,
}

fn find_key(value: &Value, keys: &[&'static str]) -> Option<&'static str> {
    match value {
        Value::Object(map) => map.iter().find_map(|(k, v)| {
            keys.iter()
                .find(|key| **key == k)
                .copied()
                .or_else(|| find_key(v, keys))
        }),
        Value::Array(items) => items.iter().find_map(|v| find_key(v, keys)),
        _ => None,
    }
}

fn random_policy(rng: &mut StdRng, lists: &[String]) -> Option<SharingPolicy> {
    match rng.random_range(0..4) {
        0 => None,
        1 => Some(SharingPolicy::AllFriends),
        _ if !lists.is_empty() => Some(SharingPolicy::named(lists[rng.random_range(0..lists.len())].clone())),
        _ => Some(SharingPolicy::AllFriends),
    }
}

/// Issues `responses` DOWNLOADs over a world seeded from `seed`, mutating it
/// between requests.
pub fn run_redaction_fuzz(seed: u64, responses: usize) -> Result<RedactionReport, String> {
    let mut rng = StdRng::seed_from_u64(seed);
    let world = World::new();
    let users = rng.random_range(3..=8);
    let names: Vec<String> = (0..users).map(|i| format!("u{i}")).collect();
    let accounts: Vec<Account> = names.iter().map(|n| world.registered(n)).collect();
    for a in 0..users {
        for b in a + 1..users {
            if rng.random_bool(0.6) {
                world
                    .provider
                    .befriend(&names[a], &names[b])
                    .map_err(|e| e.to_string())?;
            }
        }
    }
    let mut lists: Vec<Vec<String>> = vec![Vec::new(); users];
    let mut owned: Vec<Vec<u64>> = vec![Vec::new(); users];
    let mut report = RedactionReport::default();

    while report.responses < responses {
        let actor = rng.random_range(0..users);
        match rng.random_range(0..10) {
            0 => {
                let id = world
                    .provider
                    .create_list(&names[actor], "close")
                    .map_err(|e| e.to_string())?;
                for (i, name) in names.iter().enumerate() {
                    if i != actor && rng.random_bool(0.5) {
                        world.provider.add_to_list(&id, name).map_err(|e| e.to_string())?;
                    }
                }
                lists[actor].push(id);
            }
            1..=3 => {
                let me = &accounts[actor].identity;
                let mut data = match rng.random_range(0..4) {
                    0 => fixtures::bdaddr_binding(
                        me,
                        &format!("dev-{}", rng.random_range(0..3)),
                        &rng.random::<[u8; 6]>(),
                    ),
                    1 => fixtures::scampi_binding(me, "dev-0", &rng.random::<[u8; 20]>()),
                    2 => fixtures::bearer_token(me, &rng.random::<[u8; 16]>()),
                    _ => fixtures::public_key(me, &rng.random::<[u8; 32]>()),
                };
                data.sharing_policy = random_policy(&mut rng, &lists[actor]);
                let body = RequestBody::Upload(UploadBody {
                    items: vec![UploadItem { op_key: None, data }],
                });
                if let Ok(ResponseBody::Upload(r)) = world.call(&accounts[actor], body).into_result() {
                    owned[actor].extend(r.object_ids);
                }
            }
            4 if !owned[actor].is_empty() => {
                let object_id = owned[actor][rng.random_range(0..owned[actor].len())];
                let sharing_policy = random_policy(&mut rng, &lists[actor]).unwrap_or(SharingPolicy::AllFriends);
                // Stale ids are fine; the refusal is part of the traffic.
                let _ = world.call(
                    &accounts[actor],
                    RequestBody::Policy(PolicyBody {
                        object_id,
                        sharing_policy,
                    }),
                );
            }
            _ => {
                let request = World::request(&accounts[actor], RequestBody::Download(EmptyBody {}));
                let bytes = world.server.handle_bytes(&encode_request(&request));
                let raw: Value = serde_json::from_slice(&bytes).map_err(|e| e.to_string())?;
                let items = raw["result"]["items"]
                    .as_array()
                    .ok_or_else(|| format!("download failed: {raw}"))?;
                for item in items {
                    let owner = item["owner"]["social_id"].as_str().unwrap_or_default();
                    if owner == names[actor] {
                        if item.get("object_id").is_none() || item.get("sharing_policy").is_none() {
                            return Err(format!("owner view lost its fields: {item}"));
                        }
                        report.owner_views += 1;
                    } else {
                        if let Some(key) = find_key(item, &OWNER_ONLY) {
                            return Err(format!("{} saw {key} of {owner}'s item: {item}", names[actor]));
                        }
                        report.foreign_views += 1;
                    }
                }
                report.responses += 1;
            }
        }
    }
    Ok(report)
}
