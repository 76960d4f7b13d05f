//! The agent's local store: one SQLite file per logged-in user.

use std::path::{Path, PathBuf};

use rusqlite::{params, Connection, OptionalExtension, Transaction};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{AppData, AppIdentity, ItemView, SocialIdentity};

pub const SCHEMA_VERSION: i64 = 1;

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS meta (
    key   TEXT PRIMARY KEY,
    value TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS local_items (
    local_id  INTEGER PRIMARY KEY AUTOINCREMENT,
    object_id INTEGER NOT NULL DEFAULT 0,
    creator   TEXT NOT NULL,
    sync      TEXT NOT NULL,
    op_key    TEXT NOT NULL,
    attempted INTEGER NOT NULL DEFAULT 0,
    data      TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS remote_items (
    pos        INTEGER PRIMARY KEY,
    fetched_at INTEGER NOT NULL,
    view       TEXT NOT NULL
);
";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SyncState {
    PendingUpload,
    Synced,
    PendingUpdate,
    PendingDelete,
    LocalOnly,
}

impl SyncState {
    pub fn as_str(self) -> &'static str {
        match self {
            SyncState::PendingUpload => "PENDING_UPLOAD",
            SyncState::Synced => "SYNCED",
            SyncState::PendingUpdate => "PENDING_UPDATE",
            SyncState::PendingDelete => "PENDING_DELETE",
            SyncState::LocalOnly => "LOCAL_ONLY",
        }
    }

    fn parse(s: &str) -> Result<Self, LocalStoreError> {
        Ok(match s {
            "PENDING_UPLOAD" => SyncState::PendingUpload,
            "SYNCED" => SyncState::Synced,
            "PENDING_UPDATE" => SyncState::PendingUpdate,
            "PENDING_DELETE" => SyncState::PendingDelete,
            "LOCAL_ONLY" => SyncState::LocalOnly,
            other => return Err(LocalStoreError::Corrupt(format!("sync state {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalItem {
    pub local_id: u64,
    /// 0 until the server acknowledged the upload.
    pub object_id: u64,
    pub data: AppData,
    pub creator: AppIdentity,
    pub sync: SyncState,
    /// Idempotency key sent with the upload; generated once at creation.
    pub op_key: String,
    /// Set once an upload carrying `op_key` may have reached the server.
    pub attempted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteItem {
    #[serde(flatten)]
    pub view: ItemView,
    pub fetched_at: i64,
}

#[derive(Debug, thiserror::Error)]
pub enum LocalStoreError {
    #[error("local store error: {0}")]
    Sqlite(#[from] rusqlite::Error),
    #[error("local store is in use by another agent")]
    Locked,
    #[error("unsupported local schema version {found} (expected {SCHEMA_VERSION})")]
    SchemaVersion { found: i64 },
    #[error("corrupt local record: {0}")]
    Corrupt(String),
    #[error("cannot create store directory: {0}")]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for LocalStoreError {
    fn from(e: serde_json::Error) -> Self {
        LocalStoreError::Corrupt(e.to_string())
    }
}

pub type LocalResult<T> = Result<T, LocalStoreError>;

pub struct LocalStore {
    conn: Connection,
}

/// File name of `identity`'s store inside the agent data directory.
pub fn store_path(dir: &Path, identity: &SocialIdentity) -> PathBuf {
    let digest = Sha256::digest(format!("{}\0{}", identity.network, identity.social_id));
    let readable: String = identity
        .social_id
        .chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .take(24)
        .collect();
    dir.join(format!("{readable}-{}.sqlite", hex::encode(&digest[..8])))
}

impl LocalStore {
    pub fn in_memory() -> LocalResult<Self> {
        Self::init(Connection::open_in_memory()?)
    }

    pub fn open(path: &Path) -> LocalResult<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let conn = Connection::open(path)?;
        conn.busy_timeout(std::time::Duration::ZERO)?;
        conn.pragma_update(None, "locking_mode", "EXCLUSIVE")
            .map_err(lock_error)?;
        conn.pragma_update(None, "journal_mode", "WAL").map_err(lock_error)?;
        Self::init(conn)
    }

    fn init(mut conn: Connection) -> LocalResult<Self> {
        let tx = conn.transaction().map_err(lock_error)?;
        tx.execute_batch(SCHEMA).map_err(lock_error)?;
        match get_meta(&tx, "schema_version")? {
            None => set_meta(&tx, "schema_version", &SCHEMA_VERSION.to_string())?,
            Some(v) => {
                let found: i64 = v
                    .parse()
                    .map_err(|_| LocalStoreError::Corrupt(format!("schema_version {v:?}")))?;
                if found != SCHEMA_VERSION {
                    return Err(LocalStoreError::SchemaVersion { found });
                }
            }
        }
        tx.commit().map_err(lock_error)?;
        Ok(Self { conn })
    }

    pub fn conn(&self) -> &Connection {
        &self.conn
    }

    pub fn transaction(&mut self) -> LocalResult<Transaction<'_>> {
        Ok(self.conn.transaction()?)
    }
}

fn lock_error(e: rusqlite::Error) -> LocalStoreError {
    match e.sqlite_error_code() {
        Some(rusqlite::ErrorCode::DatabaseBusy) | Some(rusqlite::ErrorCode::DatabaseLocked) => LocalStoreError::Locked,
        _ => LocalStoreError::Sqlite(e),
    }
}

pub fn get_meta(conn: &Connection, key: &str) -> LocalResult<Option<String>> {
    Ok(conn
        .query_row("SELECT value FROM meta WHERE key = ?1", [key], |r| r.get(0))
        .optional()?)
}

pub fn set_meta(conn: &Connection, key: &str, value: &str) -> LocalResult<()> {
    conn.execute(
        "INSERT INTO meta(key, value) VALUES (?1, ?2) ON CONFLICT(key) DO UPDATE SET value = excluded.value",
        params![key, value],
    )?;
    Ok(())
}

pub fn insert_item(
    conn: &Connection,
    data: &AppData,
    creator: &AppIdentity,
    sync: SyncState,
    op_key: &str,
) -> LocalResult<u64> {
    conn.execute(
        "INSERT INTO local_items(creator, sync, op_key, data) VALUES (?1, ?2, ?3, ?4)",
        params![creator.to_string(), sync.as_str(), op_key, serde_json::to_string(data)?],
    )?;
    Ok(conn.last_insert_rowid() as u64)
}

const ITEM_COLUMNS: &str = "local_id, object_id, creator, sync, op_key, attempted, data";

fn read_item(row: &rusqlite::Row<'_>) -> rusqlite::Result<(u64, u64, String, String, String, bool, String)> {
    Ok((
        row.get(0)?,
        row.get(1)?,
        row.get(2)?,
        row.get(3)?,
        row.get(4)?,
        row.get(5)?,
        row.get(6)?,
    ))
}

fn items_where(conn: &Connection, clause: &str, args: impl rusqlite::Params) -> LocalResult<Vec<LocalItem>> {
    let mut stmt = conn.prepare(&format!(
        "SELECT {ITEM_COLUMNS} FROM local_items {clause} ORDER BY local_id"
    ))?;
    let rows = stmt.query_map(args, read_item)?;
    let mut out = Vec::new();
    for row in rows {
        let (local_id, object_id, creator, sync, op_key, attempted, data) = row?;
        out.push(LocalItem {
            local_id,
            object_id,
            creator: creator.parse().map_err(|e| LocalStoreError::Corrupt(format!("{e}")))?,
            sync: SyncState::parse(&sync)?,
            op_key,
            attempted,
            data: serde_json::from_str(&data)?,
        });
    }
    Ok(out)
}

pub fn get_item(conn: &Connection, local_id: u64) -> LocalResult<Option<LocalItem>> {
    Ok(items_where(conn, "WHERE local_id = ?1", [local_id])?.pop())
}

pub fn all_items(conn: &Connection) -> LocalResult<Vec<LocalItem>> {
    items_where(conn, "", [])
}

pub fn items_in(conn: &Connection, sync: SyncState) -> LocalResult<Vec<LocalItem>> {
    items_where(conn, "WHERE sync = ?1", [sync.as_str()])
}

pub fn set_data(conn: &Connection, local_id: u64, data: &AppData, sync: SyncState) -> LocalResult<()> {
    conn.execute(
        "UPDATE local_items SET data = ?2, sync = ?3 WHERE local_id = ?1",
        params![local_id, serde_json::to_string(data)?, sync.as_str()],
    )?;
    Ok(())
}

pub fn set_sync(conn: &Connection, local_id: u64, sync: SyncState) -> LocalResult<()> {
    conn.execute(
        "UPDATE local_items SET sync = ?2 WHERE local_id = ?1",
        params![local_id, sync.as_str()],
    )?;
    Ok(())
}

pub fn set_acked(conn: &Connection, local_id: u64, object_id: u64, sync: SyncState) -> LocalResult<()> {
    conn.execute(
        "UPDATE local_items SET object_id = ?2, sync = ?3 WHERE local_id = ?1",
        params![local_id, object_id, sync.as_str()],
    )?;
    Ok(())
}

pub fn mark_attempted(conn: &Connection, local_id: u64) -> LocalResult<()> {
    conn.execute("UPDATE local_items SET attempted = 1 WHERE local_id = ?1", [local_id])?;
    Ok(())
}

pub fn delete_item(conn: &Connection, local_id: u64) -> LocalResult<()> {
    conn.execute("DELETE FROM local_items WHERE local_id = ?1", [local_id])?;
    Ok(())
}

pub fn delete_by_object_id(conn: &Connection, object_id: u64) -> LocalResult<usize> {
    Ok(conn.execute(
        "DELETE FROM local_items WHERE object_id = ?1 AND object_id != 0",
        [object_id],
    )?)
}

pub fn replace_remote(conn: &Connection, views: &[ItemView], fetched_at: i64) -> LocalResult<()> {
    conn.execute("DELETE FROM remote_items", [])?;
    for (pos, view) in views.iter().enumerate() {
        conn.execute(
            "INSERT INTO remote_items(pos, fetched_at, view) VALUES (?1, ?2, ?3)",
            params![pos as i64, fetched_at, serde_json::to_string(view)?],
        )?;
    }
    Ok(())
}

pub fn remote_items(conn: &Connection) -> LocalResult<Vec<RemoteItem>> {
    let mut stmt = conn.prepare("SELECT fetched_at, view FROM remote_items ORDER BY pos")?;
    let rows = stmt.query_map([], |r| Ok((r.get::<_, i64>(0)?, r.get::<_, String>(1)?)))?;
    let mut out = Vec::new();
    for row in rows {
        let (fetched_at, view) = row?;
        out.push(RemoteItem {
            view: serde_json::from_str(&view)?,
            fetched_at,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn item_round_trip() {
        let store = LocalStore::in_memory().unwrap();
        let alice = SocialIdentity::new("mocknet", "alice", "Alice");
        let data = fixtures::bdaddr_binding(&alice, "dev-1", &[1, 2, 3, 4, 5, 6]);
        let id = insert_item(
            store.conn(),
            &data,
            &fixtures::peersense_app(),
            SyncState::PendingUpload,
            "k",
        )
        .unwrap();
        let item = get_item(store.conn(), id).unwrap().unwrap();
        assert_eq!(item.data, data);
        assert_eq!(item.sync, SyncState::PendingUpload);
        assert_eq!(item.object_id, 0);
        set_acked(store.conn(), id, 17, SyncState::Synced).unwrap();
        assert_eq!(items_in(store.conn(), SyncState::Synced).unwrap()[0].object_id, 17);
        assert_eq!(delete_by_object_id(store.conn(), 17).unwrap(), 1);
        assert!(all_items(store.conn()).unwrap().is_empty());
    }

    #[test]
    fn local_ids_are_not_reused() {
        let store = LocalStore::in_memory().unwrap();
        let alice = SocialIdentity::new("mocknet", "alice", "Alice");
        let data = fixtures::public_key(&alice, b"k");
        let first = insert_item(
            store.conn(),
            &data,
            &fixtures::crowdshare_app(),
            SyncState::PendingUpload,
            "a",
        )
        .unwrap();
        delete_item(store.conn(), first).unwrap();
        let second = insert_item(
            store.conn(),
            &data,
            &fixtures::crowdshare_app(),
            SyncState::PendingUpload,
            "b",
        )
        .unwrap();
        assert!(second > first);
    }

    #[test]
    fn second_agent_on_same_store_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = store_path(dir.path(), &SocialIdentity::new("mocknet", "alice", "Alice"));
        let _first = LocalStore::open(&path).unwrap();
        assert!(matches!(LocalStore::open(&path), Err(LocalStoreError::Locked)));
    }

    #[test]
    fn store_paths_differ_per_identity() {
        let dir = Path::new("/data");
        let a = store_path(dir, &SocialIdentity::new("mocknet", "alice", "A"));
        let b = store_path(dir, &SocialIdentity::new("othernet", "alice", "A"));
        assert_ne!(a, b);
        assert_eq!(a, store_path(dir, &SocialIdentity::new("mocknet", "alice", "renamed")));
    }
}
