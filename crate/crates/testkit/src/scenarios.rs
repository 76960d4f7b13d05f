//! Short end-to-end scripts through a real agent.

use std::sync::{Arc, Mutex};

use peershare_core::client::{Agent, AgentConfig, InProcessTransport, Transport, TransportError};
use peershare_core::fixtures;
use peershare_core::model::SocialIdentity;
use peershare_core::protocol::{decode_response, DeleteBody, EntryStatus, Method, RequestBody, Response, ResponseBody};

use crate::world::World;

/// Keeps every response alongside its method.
struct ResponseLog<T> {
    inner: T,
    log: Mutex<Vec<(Method, Vec<u8>)>>,
}

impl<T: Transport> Transport for ResponseLog<T> {
    fn send(&self, method: Method, request: &[u8]) -> Result<Vec<u8>, TransportError> {
        let response = self.inner.send(method, request)?;
        self.log.lock().unwrap().push((method, response.clone()));
        Ok(response)
    }
}

/// An item is deleted on the server behind the agent's back; the agent's
/// next UPDATE is answered NOT_FOUND_REMOVE and the item vanishes locally.
pub fn update_after_server_delete() -> Result<(), String> {
    let world = World::new();
    let mut alice = world.account("alice");
    world.register(&mut alice);
    let transport = Arc::new(ResponseLog {
        inner: InProcessTransport::new(world.server.clone()),
        log: Mutex::new(Vec::new()),
    });
    let agent = Agent::new(AgentConfig::default(), transport.clone(), world.clock.clone());
    agent
        .login(alice.identity.clone(), alice.token.clone())
        .map_err(|e| e.to_string())?;
    let app = fixtures::peersense_app();
    let anon = SocialIdentity::new("", "", "");

    let handle = agent
        .add_data(&app, fixtures::bdaddr_binding(&anon, "dev-1", &[1; 6]))
        .map_err(|e| e.to_string())?;
    agent.flush().map_err(|e| e.to_string())?;
    let object_id = agent
        .local_items()
        .map_err(|e| e.to_string())?
        .into_iter()
        .find(|i| i.local_id == handle)
        .map(|i| i.object_id)
        .filter(|id| *id != 0)
        .ok_or("item was not uploaded")?;

    // Another device of the same user removes it.
    match world
        .call(
            &alice,
            RequestBody::Delete(DeleteBody {
                object_ids: vec![object_id],
            }),
        )
        .into_result()
    {
        Ok(ResponseBody::Delete(_)) => {}
        other => return Err(format!("delete failed: {other:?}")),
    }

    agent
        .update_data(&app, handle, fixtures::bdaddr_binding(&anon, "dev-1", &[2; 6]))
        .map_err(|e| e.to_string())?;
    transport.log.lock().unwrap().clear();
    let summary = agent.flush().map_err(|e| e.to_string())?;

    let log = transport.log.lock().unwrap().clone();
    let (_, bytes) = log
        .iter()
        .find(|(m, _)| *m == Method::Update)
        .ok_or("no UPDATE was sent")?;
    match decode_response(Method::Update, bytes).map_err(|e| e.to_string())? {
        Response::Ok(ResponseBody::Update(r)) if r.results.len() == 1 => {
            let got = &r.results[0];
            if got.object_id != object_id || got.status != EntryStatus::NotFoundRemove {
                return Err(format!("expected NOT_FOUND_REMOVE for {object_id}, got {got:?}"));
            }
        }
        other => return Err(format!("unexpected UPDATE response: {other:?}")),
    }
    if summary.purged != 1 {
        return Err(format!("flush purged {} items", summary.purged));
    }
    if agent
        .local_items()
        .map_err(|e| e.to_string())?
        .iter()
        .any(|i| i.local_id == handle)
    {
        return Err("item still in the local store".into());
    }
    if !agent
        .get_shared_data_detail(&app, None)
        .map_err(|e| e.to_string())?
        .is_empty()
    {
        return Err("item still visible to applications".into());
    }
    // Nothing left to retry, and nothing resurrected on the server.
    transport.log.lock().unwrap().clear();
    agent.flush().map_err(|e| e.to_string())?;
    if transport
        .log
        .lock()
        .unwrap()
        .iter()
        .any(|(m, _)| *m != Method::Register)
    {
        return Err("purged item was sent again".into());
    }
    if !world.server.all_items().map_err(|e| e.to_string())?.is_empty() {
        return Err("server holds an item again".into());
    }
    Ok(())
}
