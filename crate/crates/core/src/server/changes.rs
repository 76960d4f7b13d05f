//! Reaction to social-graph changes: eligibility of affected items is
//! recomputed in `change_seq` order, one event per transaction, and the
//! per-network cursor only advances once an event has been applied.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use tracing::{debug, warn};

use super::{store, Server};
use crate::provider::{ListChangeEvent, ProviderError};

#[derive(Debug, thiserror::Error)]
pub enum ChangeError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Store(#[from] store::StoreError),
}

impl From<rusqlite::Error> for ChangeError {
    fn from(e: rusqlite::Error) -> Self {
        ChangeError::Store(store::StoreError::Sqlite(e))
    }
}

impl Server {
    /// Recomputes eligibility of every item of `event.owner_social_id` on
    /// `network` whose effective policy the event covers. A list or owner that
    /// no longer exists leaves the item with no eligible users.
    pub fn on_list_change(&self, network: &str, event: &ListChangeEvent) -> Result<usize, ChangeError> {
        let mut guard = self.lock();
        let tx = guard.transaction()?;
        if store::cursor(&tx, network)? >= event.change_seq {
            return Ok(0);
        }
        let mut touched = 0;
        for item in store::items_owned_by_social(&tx, network, &event.owner_social_id)? {
            let policy = item.effective_policy();
            if !event.target.covers(&policy) {
                continue;
            }
            let eligible = match self.expand(&item.data.owner, &policy) {
                Ok(set) => set,
                Err(e) if e.is_transient() => return Err(e.into()),
                Err(e) => {
                    debug!(object_id = item.object_id, error = %e, "policy no longer resolvable");
                    Default::default()
                }
            };
            if eligible != item.eligible {
                store::set_eligible(&tx, item.object_id, &eligible)?;
            }
            touched += 1;
        }
        store::set_cursor(&tx, network, event.change_seq)?;
        tx.commit()?;
        Ok(touched)
    }

    /// Applies every pending change event of every provider. Returns the
    /// number of events applied. On a transient failure the cursor stays at
    /// the last applied event and the error is returned for retry.
    pub fn drain_changes(&self) -> Result<usize, ChangeError> {
        let mut applied = 0;
        for (network, binding) in &self.providers {
            loop {
                let cursor = store::cursor(self.lock().conn(), network)?;
                let events = binding.provider.poll_changes(cursor)?;
                if events.is_empty() {
                    break;
                }
                for event in &events {
                    self.on_list_change(network, event)?;
                    applied += 1;
                }
            }
        }
        Ok(applied)
    }

    /// Starts the single ordered consumer of change events. Providers that
    /// push wake it immediately; others are polled every `poll_interval`.
    pub fn spawn_change_listener(self: &Arc<Self>, poll_interval: Duration) -> ChangeListener {
        let (wake_tx, wake_rx) = mpsc::channel::<()>();
        for (network, binding) in &self.providers {
            let tx = Mutex::new(wake_tx.clone());
            let pushed = binding.provider.subscribe(Box::new(move |_event| {
                let _ = tx.lock().unwrap().send(());
            }));
            match pushed {
                Ok(()) => debug!(network, "push notifications enabled"),
                Err(e) => debug!(network, error = %e, "falling back to polling"),
            }
        }
        let stop = Arc::new(AtomicBool::new(false));
        let server = Arc::clone(self);
        let stop_flag = Arc::clone(&stop);
        let waker = wake_tx.clone();
        let handle = std::thread::Builder::new()
            .name("change-listener".into())
            .spawn(move || {
                let mut backoff = Backoff::new(Duration::from_millis(50), Duration::from_secs(30));
                let mut wait = Duration::ZERO;
                loop {
                    match wake_rx.recv_timeout(wait) {
                        Ok(()) | Err(RecvTimeoutError::Timeout) => {}
                        Err(RecvTimeoutError::Disconnected) => return,
                    }
                    if stop_flag.load(Ordering::SeqCst) {
                        return;
                    }
                    while wake_rx.try_recv().is_ok() {}
                    match server.drain_changes() {
                        Ok(n) => {
                            if n > 0 {
                                debug!(events = n, "applied change events");
                            }
                            backoff.reset();
                            wait = poll_interval;
                        }
                        Err(e) => {
                            wait = backoff.next_delay();
                            warn!(error = %e, retry_in = ?wait, "change processing failed");
                        }
                    }
                }
            })
            .expect("spawn change listener");
        ChangeListener {
            stop,
            waker,
            handle: Some(handle),
        }
    }
}

/// Handle to the background change consumer; stops it on drop.
pub struct ChangeListener {
    stop: Arc<AtomicBool>,
    waker: mpsc::Sender<()>,
    handle: Option<JoinHandle<()>>,
}

impl ChangeListener {
    /// Requests an immediate drain.
    pub fn wake(&self) {
        let _ = self.waker.send(());
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = self.waker.send(());
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

impl Drop for ChangeListener {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Exponential backoff with a ceiling.
#[derive(Debug, Clone)]
pub struct Backoff {
    initial: Duration,
    max: Duration,
    current: Duration,
}

impl Backoff {
    pub fn new(initial: Duration, max: Duration) -> Self {
        Self {
            initial,
            max,
            current: initial,
        }
    }

    pub fn next_delay(&mut self) -> Duration {
        let delay = self.current;
        self.current = (self.current * 2).min(self.max);
        delay
    }

    pub fn reset(&mut self) {
        self.current = self.initial;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_up_to_ceiling() {
        let mut b = Backoff::new(Duration::from_millis(100), Duration::from_millis(350));
        let delays: Vec<_> = (0..5).map(|_| b.next_delay().as_millis()).collect();
        assert_eq!(delays, vec![100, 200, 350, 350, 350]);
        b.reset();
        assert_eq!(b.next_delay().as_millis(), 100);
    }
}
