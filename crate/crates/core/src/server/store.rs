//! Embedded transactional storage for the server (SQLite).
//!
//! Eligibility rows hold social keys rather than peershare ids: a friend who
//! registers later becomes visible through the identity join without any
//! rewrite, and unregistering drops the identity rows so the user matches
//! nothing.

use std::collections::BTreeSet;
use std::path::Path;

use rusqlite::{params, Connection, OptionalExtension, Transaction};
use sha2::{Digest, Sha256};

use crate::model::{AppData, PolicySource, SharingPolicy, SocialIdentity, SocialKey, Specificity, StoredItem};

pub const SCHEMA_VERSION: i64 = 1;

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS meta (
    key   TEXT PRIMARY KEY,
    value TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS users (
    peershare_id TEXT PRIMARY KEY
);
CREATE TABLE IF NOT EXISTS identities (
    network      TEXT NOT NULL,
    social_id    TEXT NOT NULL,
    social_name  TEXT NOT NULL,
    peershare_id TEXT NOT NULL REFERENCES users(peershare_id),
    PRIMARY KEY (network, social_id)
);
CREATE INDEX IF NOT EXISTS identities_by_user ON identities(peershare_id);
CREATE TABLE IF NOT EXISTS items (
    object_id          INTEGER PRIMARY KEY,
    owner_peershare_id TEXT NOT NULL,
    owner_network      TEXT NOT NULL,
    owner_social_id    TEXT NOT NULL,
    data_type          TEXT NOT NULL,
    specificity        TEXT NOT NULL,
    device_id          TEXT NOT NULL,
    expires_at         INTEGER NOT NULL,
    policy_source      TEXT NOT NULL,
    data               TEXT NOT NULL
);
CREATE INDEX IF NOT EXISTS items_by_owner ON items(owner_network, owner_social_id);
CREATE TABLE IF NOT EXISTS eligible (
    object_id INTEGER NOT NULL,
    network   TEXT NOT NULL,
    social_id TEXT NOT NULL,
    PRIMARY KEY (object_id, network, social_id)
);
CREATE INDEX IF NOT EXISTS eligible_by_key ON eligible(network, social_id);
CREATE TABLE IF NOT EXISTS upload_keys (
    peershare_id TEXT NOT NULL,
    op_key       TEXT NOT NULL,
    object_id    INTEGER NOT NULL,
    PRIMARY KEY (peershare_id, op_key)
);
CREATE TABLE IF NOT EXISTS cursors (
    network  TEXT PRIMARY KEY,
    last_seq INTEGER NOT NULL
);
";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("storage error: {0}")]
    Sqlite(#[from] rusqlite::Error),
    #[error("store is locked by another server instance")]
    Locked,
    #[error("unsupported schema version {found} (expected {SCHEMA_VERSION})")]
    SchemaVersion { found: i64 },
    #[error("corrupt record: {0}")]
    Corrupt(String),
}

pub type StoreResult<T> = Result<T, StoreError>;

pub struct Store {
    conn: Connection,
}

impl Store {
    pub fn in_memory() -> StoreResult<Self> {
        Self::init(Connection::open_in_memory()?)
    }

    /// Opens (or creates) a store file and takes an exclusive lock on it for
    /// the lifetime of the returned value.
    pub fn open(path: &Path) -> StoreResult<Self> {
        let conn = Connection::open(path)?;
        conn.busy_timeout(std::time::Duration::ZERO)?;
        conn.pragma_update(None, "locking_mode", "EXCLUSIVE")
            .map_err(lock_error)?;
        conn.pragma_update(None, "journal_mode", "WAL").map_err(lock_error)?;
        Self::init(conn)
    }

    fn init(mut conn: Connection) -> StoreResult<Self> {
        let tx = conn.transaction().map_err(lock_error)?;
        tx.execute_batch(SCHEMA).map_err(lock_error)?;
        let version: Option<String> = tx
            .query_row("SELECT value FROM meta WHERE key = 'schema_version'", [], |r| r.get(0))
            .optional()?;
        match version {
            None => {
                tx.execute(
                    "INSERT INTO meta(key, value) VALUES ('schema_version', ?1), ('next_object_id', '1')",
                    params![SCHEMA_VERSION.to_string()],
                )?;
            }
            Some(v) => {
                let found: i64 = v
                    .parse()
                    .map_err(|_| StoreError::Corrupt(format!("schema_version {v:?}")))?;
                if found != SCHEMA_VERSION {
                    return Err(StoreError::SchemaVersion { found });
                }
            }
        }
        tx.commit().map_err(lock_error)?;
        Ok(Self { conn })
    }

    pub fn transaction(&mut self) -> StoreResult<Transaction<'_>> {
        Ok(self.conn.transaction()?)
    }

    pub fn conn(&self) -> &Connection {
        &self.conn
    }
}

fn lock_error(e: rusqlite::Error) -> StoreError {
    match e.sqlite_error_code() {
        Some(rusqlite::ErrorCode::DatabaseBusy) | Some(rusqlite::ErrorCode::DatabaseLocked) => StoreError::Locked,
        _ => StoreError::Sqlite(e),
    }
}

fn specificity_str(s: Specificity) -> &'static str {
    match s {
        Specificity::Device => "device",
        Specificity::User => "user",
    }
}

fn parse_policy_source(s: &str) -> StoreResult<PolicySource> {
    match s {
        "app" => Ok(PolicySource::App),
        "user_override" => Ok(PolicySource::UserOverride),
        other => Err(StoreError::Corrupt(format!("policy_source {other:?}"))),
    }
}

pub fn find_user(conn: &Connection, key: &SocialKey) -> StoreResult<Option<String>> {
    Ok(conn
        .query_row(
            "SELECT peershare_id FROM identities WHERE network = ?1 AND social_id = ?2",
            params![key.network, key.social_id],
            |r| r.get(0),
        )
        .optional()?)
}

pub fn user_exists(conn: &Connection, peershare_id: &str) -> StoreResult<bool> {
    Ok(conn
        .query_row(
            "SELECT 1 FROM users WHERE peershare_id = ?1",
            params![peershare_id],
            |_| Ok(()),
        )
        .optional()?
        .is_some())
}

pub fn identities_of(conn: &Connection, peershare_id: &str) -> StoreResult<Vec<SocialIdentity>> {
    let mut stmt = conn.prepare(
        "SELECT network, social_id, social_name FROM identities
         WHERE peershare_id = ?1 ORDER BY network, social_id",
    )?;
    let rows = stmt.query_map(params![peershare_id], |r| {
        Ok(SocialIdentity::new(
            r.get::<_, String>(0)?,
            r.get::<_, String>(1)?,
            r.get::<_, String>(2)?,
        ))
    })?;
    Ok(rows.collect::<Result<_, _>>()?)
}

pub fn insert_user(conn: &Connection, peershare_id: &str) -> StoreResult<()> {
    conn.execute("INSERT INTO users(peershare_id) VALUES (?1)", params![peershare_id])?;
    Ok(())
}

pub fn link_identity(conn: &Connection, identity: &SocialIdentity, peershare_id: &str) -> StoreResult<()> {
    conn.execute(
        "INSERT INTO identities(network, social_id, social_name, peershare_id) VALUES (?1, ?2, ?3, ?4)",
        params![identity.network, identity.social_id, identity.social_name, peershare_id],
    )?;
    Ok(())
}

/// Removes the user, their identities, idempotency keys and every item they own.
pub fn delete_user(conn: &Connection, peershare_id: &str) -> StoreResult<usize> {
    let owned: Vec<u64> = {
        let mut stmt = conn.prepare("SELECT object_id FROM items WHERE owner_peershare_id = ?1")?;
        let rows = stmt.query_map(params![peershare_id], |r| r.get::<_, i64>(0))?;
        rows.map(|r| r.map(|v| v as u64)).collect::<Result<_, _>>()?
    };
    for id in &owned {
        delete_item(conn, *id)?;
    }
    conn.execute("DELETE FROM upload_keys WHERE peershare_id = ?1", params![peershare_id])?;
    conn.execute("DELETE FROM identities WHERE peershare_id = ?1", params![peershare_id])?;
    conn.execute("DELETE FROM users WHERE peershare_id = ?1", params![peershare_id])?;
    Ok(owned.len())
}

pub fn allocate_object_id(conn: &Connection) -> StoreResult<u64> {
    let next: String = conn.query_row("SELECT value FROM meta WHERE key = 'next_object_id'", [], |r| r.get(0))?;
    let id: u64 = next
        .parse()
        .map_err(|_| StoreError::Corrupt(format!("next_object_id {next:?}")))?;
    conn.execute(
        "UPDATE meta SET value = ?1 WHERE key = 'next_object_id'",
        params![(id + 1).to_string()],
    )?;
    Ok(id)
}

pub fn insert_item(conn: &Connection, item: &StoredItem) -> StoreResult<()> {
    let data = serde_json::to_string(&item.data).expect("AppData serializes");
    conn.execute(
        "INSERT INTO items(object_id, owner_peershare_id, owner_network, owner_social_id,
                           data_type, specificity, device_id, expires_at, policy_source, data)
         VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10)",
        params![
            item.object_id as i64,
            item.owner_peershare_id,
            item.data.owner.network,
            item.data.owner.social_id,
            item.data.data_type,
            specificity_str(item.data.descriptor.specificity),
            item.data.device_id,
            item.data.expires_at,
            item.policy_source.as_str(),
            data,
        ],
    )?;
    set_eligible(conn, item.object_id, &item.eligible)
}

/// Rewrites data and policy source; the uniqueness columns stay as inserted.
pub fn update_item(conn: &Connection, object_id: u64, data: &AppData, source: PolicySource) -> StoreResult<()> {
    let json = serde_json::to_string(data).expect("AppData serializes");
    conn.execute(
        "UPDATE items SET data = ?2, expires_at = ?3, policy_source = ?4 WHERE object_id = ?1",
        params![object_id as i64, json, data.expires_at, source.as_str()],
    )?;
    Ok(())
}

pub fn set_eligible(conn: &Connection, object_id: u64, eligible: &BTreeSet<SocialKey>) -> StoreResult<()> {
    conn.execute("DELETE FROM eligible WHERE object_id = ?1", params![object_id as i64])?;
    let mut stmt = conn.prepare("INSERT INTO eligible(object_id, network, social_id) VALUES (?1, ?2, ?3)")?;
    for key in eligible {
        stmt.execute(params![object_id as i64, key.network, key.social_id])?;
    }
    Ok(())
}

pub fn delete_item(conn: &Connection, object_id: u64) -> StoreResult<bool> {
    conn.execute("DELETE FROM eligible WHERE object_id = ?1", params![object_id as i64])?;
    let n = conn.execute("DELETE FROM items WHERE object_id = ?1", params![object_id as i64])?;
    Ok(n > 0)
}

fn eligible_of(conn: &Connection, object_id: u64) -> StoreResult<BTreeSet<SocialKey>> {
    let mut stmt = conn.prepare("SELECT network, social_id FROM eligible WHERE object_id = ?1")?;
    let rows = stmt.query_map(params![object_id as i64], |r| {
        Ok(SocialKey::new(r.get::<_, String>(0)?, r.get::<_, String>(1)?))
    })?;
    Ok(rows.collect::<Result<_, _>>()?)
}

const ITEM_COLUMNS: &str = "items.object_id, items.owner_peershare_id, items.policy_source, items.data";

fn read_items(conn: &Connection, sql: &str, args: impl rusqlite::Params) -> StoreResult<Vec<StoredItem>> {
    let mut stmt = conn.prepare(sql)?;
    let rows = stmt.query_map(args, |r| {
        Ok((
            r.get::<_, i64>(0)? as u64,
            r.get::<_, String>(1)?,
            r.get::<_, String>(2)?,
            r.get::<_, String>(3)?,
        ))
    })?;
    let mut out = Vec::new();
    for row in rows {
        let (object_id, owner_peershare_id, source, json) = row?;
        let data: AppData =
            serde_json::from_str(&json).map_err(|e| StoreError::Corrupt(format!("item {object_id}: {e}")))?;
        out.push(StoredItem {
            object_id,
            owner_peershare_id,
            data,
            policy_source: parse_policy_source(&source)?,
            eligible: eligible_of(conn, object_id)?,
        });
    }
    Ok(out)
}

pub fn get_item(conn: &Connection, object_id: u64) -> StoreResult<Option<StoredItem>> {
    let sql = format!("SELECT {ITEM_COLUMNS} FROM items WHERE object_id = ?1");
    Ok(read_items(conn, &sql, params![object_id as i64])?.pop())
}

/// Objects of the same owner sharing the uniqueness key of `data`.
pub fn find_same_slot(conn: &Connection, data: &AppData) -> StoreResult<Vec<u64>> {
    let mut stmt = conn.prepare(
        "SELECT object_id FROM items
         WHERE owner_network = ?1 AND owner_social_id = ?2 AND data_type = ?3
           AND specificity = ?4 AND device_id = ?5
         ORDER BY object_id",
    )?;
    let rows = stmt.query_map(
        params![
            data.owner.network,
            data.owner.social_id,
            data.data_type,
            specificity_str(data.descriptor.specificity),
            data.device_id,
        ],
        |r| r.get::<_, i64>(0),
    )?;
    Ok(rows.map(|r| r.map(|v| v as u64)).collect::<Result<_, _>>()?)
}

/// Items owned by `peershare_id` or eligible to any of its identities.
pub fn items_visible_to(conn: &Connection, peershare_id: &str) -> StoreResult<Vec<StoredItem>> {
    let sql = format!(
        "SELECT {ITEM_COLUMNS} FROM items
         WHERE items.owner_peershare_id = ?1
            OR EXISTS (SELECT 1 FROM eligible e JOIN identities i
                         ON e.network = i.network AND e.social_id = i.social_id
                       WHERE e.object_id = items.object_id AND i.peershare_id = ?1)
         ORDER BY items.object_id"
    );
    read_items(conn, &sql, params![peershare_id])
}

pub fn items_owned_by_social(conn: &Connection, network: &str, social_id: &str) -> StoreResult<Vec<StoredItem>> {
    let sql = format!(
        "SELECT {ITEM_COLUMNS} FROM items
         WHERE owner_network = ?1 AND owner_social_id = ?2 ORDER BY object_id"
    );
    read_items(conn, &sql, params![network, social_id])
}

pub fn all_items(conn: &Connection) -> StoreResult<Vec<StoredItem>> {
    let sql = format!("SELECT {ITEM_COLUMNS} FROM items ORDER BY object_id");
    read_items(conn, &sql, [])
}

pub fn expired_items(conn: &Connection, now: i64) -> StoreResult<Vec<u64>> {
    let mut stmt = conn.prepare("SELECT object_id FROM items WHERE expires_at != 0 AND expires_at <= ?1")?;
    let rows = stmt.query_map(params![now], |r| r.get::<_, i64>(0))?;
    Ok(rows.map(|r| r.map(|v| v as u64)).collect::<Result<_, _>>()?)
}

pub fn upload_key(conn: &Connection, peershare_id: &str, op_key: &str) -> StoreResult<Option<u64>> {
    Ok(conn
        .query_row(
            "SELECT object_id FROM upload_keys WHERE peershare_id = ?1 AND op_key = ?2",
            params![peershare_id, op_key],
            |r| r.get::<_, i64>(0),
        )
        .optional()?
        .map(|v| v as u64))
}

pub fn record_upload_key(conn: &Connection, peershare_id: &str, op_key: &str, object_id: u64) -> StoreResult<()> {
    conn.execute(
        "INSERT OR REPLACE INTO upload_keys(peershare_id, op_key, object_id) VALUES (?1, ?2, ?3)",
        params![peershare_id, op_key, object_id as i64],
    )?;
    Ok(())
}

pub fn cursor(conn: &Connection, network: &str) -> StoreResult<u64> {
    Ok(conn
        .query_row(
            "SELECT last_seq FROM cursors WHERE network = ?1",
            params![network],
            |r| r.get::<_, i64>(0),
        )
        .optional()?
        .unwrap_or(0) as u64)
}

pub fn set_cursor(conn: &Connection, network: &str, seq: u64) -> StoreResult<()> {
    conn.execute(
        "INSERT INTO cursors(network, last_seq) VALUES (?1, ?2)
         ON CONFLICT(network) DO UPDATE SET last_seq = excluded.last_seq",
        params![network, seq as i64],
    )?;
    Ok(())
}

/// SHA-256 over a canonical dump of every table.
pub fn state_digest(conn: &Connection) -> StoreResult<[u8; 32]> {
    const DUMPS: &[&str] = &[
        "SELECT key, value FROM meta ORDER BY key",
        "SELECT peershare_id FROM users ORDER BY peershare_id",
        "SELECT network, social_id, social_name, peershare_id FROM identities ORDER BY network, social_id",
        "SELECT object_id, owner_peershare_id, owner_network, owner_social_id, data_type,
                specificity, device_id, expires_at, policy_source, data FROM items ORDER BY object_id",
        "SELECT object_id, network, social_id FROM eligible ORDER BY object_id, network, social_id",
        "SELECT peershare_id, op_key, object_id FROM upload_keys ORDER BY peershare_id, op_key",
        "SELECT network, last_seq FROM cursors ORDER BY network",
    ];
    let mut hasher = Sha256::new();
    for sql in DUMPS {
        hasher.update(sql.as_bytes());
        let mut stmt = conn.prepare(sql)?;
        let columns = stmt.column_count();
        let mut rows = stmt.query([])?;
        while let Some(row) = rows.next()? {
            for i in 0..columns {
                let cell = match row.get_ref(i)? {
                    rusqlite::types::ValueRef::Null => "\0null".to_string(),
                    rusqlite::types::ValueRef::Integer(v) => v.to_string(),
                    rusqlite::types::ValueRef::Real(v) => v.to_string(),
                    rusqlite::types::ValueRef::Text(t) => String::from_utf8_lossy(t).into_owned(),
                    rusqlite::types::ValueRef::Blob(b) => hex::encode(b),
                };
                hasher.update((cell.len() as u64).to_le_bytes());
                hasher.update(cell.as_bytes());
            }
            hasher.update(b"\n");
        }
    }
    Ok(hasher.finalize().into())
}

pub fn effective_policy(data: &AppData) -> SharingPolicy {
    data.sharing_policy.clone().unwrap_or(SharingPolicy::AllFriends)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn second_open_of_same_file_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("server.db");
        let first = Store::open(&path).unwrap();
        let second = Store::open(&path);
        assert!(matches!(second, Err(StoreError::Locked)), "{:?}", second.err());
        drop(first);
        Store::open(&path).unwrap();
    }

    #[test]
    fn object_ids_increase_across_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("server.db");
        {
            let mut store = Store::open(&path).unwrap();
            let tx = store.transaction().unwrap();
            assert_eq!(allocate_object_id(&tx).unwrap(), 1);
            assert_eq!(allocate_object_id(&tx).unwrap(), 2);
            tx.commit().unwrap();
        }
        let mut store = Store::open(&path).unwrap();
        let tx = store.transaction().unwrap();
        assert_eq!(allocate_object_id(&tx).unwrap(), 3);
    }

    #[test]
    fn schema_version_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("server.db");
        {
            let store = Store::open(&path).unwrap();
            store
                .conn()
                .execute("UPDATE meta SET value = '99' WHERE key = 'schema_version'", [])
                .unwrap();
        }
        assert!(matches!(
            Store::open(&path),
            Err(StoreError::SchemaVersion { found: 99 })
        ));
    }

    #[test]
    fn digest_tracks_changes() {
        let mut store = Store::in_memory().unwrap();
        let before = state_digest(store.conn()).unwrap();
        assert_eq!(before, state_digest(store.conn()).unwrap());
        let tx = store.transaction().unwrap();
        insert_user(&tx, "ps-1").unwrap();
        tx.commit().unwrap();
        assert_ne!(before, state_digest(store.conn()).unwrap());
    }
}
