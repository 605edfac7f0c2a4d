//! Server-side stream registry: ids, aliases, producer grants, consumers and
//! close tracking. Pure bookkeeping; the socket layer lives in `server`.

use std::collections::{HashMap, HashSet};
use std::path::PathBuf;

use thiserror::Error;

use crate::types::{ConsumerMode, Role, StreamKind};

pub type ConnId = u64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegistryError {
    #[error("unknown stream `{0}`")]
    UnknownStream(String),
    #[error("alias `{alias}` is already bound to a {existing} stream")]
    AliasKindMismatch { alias: String, existing: StreamKind },
    #[error("a FILE stream needs a base directory")]
    MissingBaseDir,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamInfo {
    pub id: String,
    pub alias: Option<String>,
    pub kind: StreamKind,
    pub base_dir: Option<PathBuf>,
    pub consumer_mode: ConsumerMode,
    pub partitions: u32,
    pub closed: bool,
}

#[derive(Debug, Clone)]
pub struct RegisterRequest {
    pub kind: StreamKind,
    pub alias: Option<String>,
    pub base_dir: Option<PathBuf>,
    pub consumer_mode: ConsumerMode,
    pub partitions: u32,
}

#[derive(Debug, Clone)]
struct ProducerGrant {
    open: bool,
    conn: Option<ConnId>,
}

#[derive(Debug, Clone)]
pub struct StreamRegistryEntry {
    info: StreamInfo,
    producers: HashMap<String, ProducerGrant>,
    consumers: HashSet<(String, String)>,
    watchers: HashSet<ConnId>,
}

impl StreamRegistryEntry {
    pub fn info(&self) -> &StreamInfo {
        &self.info
    }

    pub fn open_producers(&self) -> usize {
        self.producers.values().filter(|g| g.open).count()
    }

    pub fn consumers(&self) -> &HashSet<(String, String)> {
        &self.consumers
    }

    /// Topic name or monitored directory backing the stream.
    pub fn backend_ref(&self) -> String {
        match (&self.info.kind, &self.info.base_dir) {
            (StreamKind::File, Some(dir)) => dir.display().to_string(),
            _ => self.info.id.clone(),
        }
    }
}

/// Result of a producer close.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CloseOutcome {
    pub closed: bool,
    /// The stream flipped to closed because of this call.
    pub newly_closed: bool,
    /// Connections to push an invalidation to.
    pub notify: Vec<ConnId>,
}

pub struct Registry {
    entries: HashMap<String, StreamRegistryEntry>,
    aliases: HashMap<String, String>,
    epoch: u32,
    next: u64,
    registered: u64,
    deleted: u64,
}

impl Registry {
    pub fn new() -> Self {
        Registry::with_epoch(rand::random())
    }

    /// `epoch` is mixed into every id so ids from different server lifetimes
    /// do not collide.
    pub fn with_epoch(epoch: u32) -> Self {
        Registry {
            entries: HashMap::new(),
            aliases: HashMap::new(),
            epoch,
            next: 1,
            registered: 0,
            deleted: 0,
        }
    }

    /// Registers a stream, or returns the existing one bound to the same
    /// alias. The boolean is true when a new entry was created.
    pub fn register(
        &mut self,
        req: RegisterRequest,
        conn: Option<ConnId>,
    ) -> Result<(StreamInfo, bool), RegistryError> {
        let alias = req.alias.filter(|a| !a.is_empty());
        if let Some(a) = &alias {
            if let Some(id) = self.aliases.get(a) {
                let entry = self.entries.get_mut(id).expect("alias points at a live entry");
                if entry.info.kind != req.kind {
                    return Err(RegistryError::AliasKindMismatch {
                        alias: a.clone(),
                        existing: entry.info.kind,
                    });
                }
                if let Some(c) = conn {
                    entry.watchers.insert(c);
                }
                return Ok((entry.info.clone(), false));
            }
        }
        if req.kind == StreamKind::File && req.base_dir.is_none() {
            return Err(RegistryError::MissingBaseDir);
        }
        let id = format!("s-{:08x}-{:06}", self.epoch, self.next);
        self.next += 1;
        let info = StreamInfo {
            id: id.clone(),
            alias: alias.clone(),
            kind: req.kind,
            base_dir: if req.kind == StreamKind::File { req.base_dir } else { None },
            consumer_mode: req.consumer_mode,
            partitions: req.partitions.max(1),
            closed: false,
        };
        let mut watchers = HashSet::new();
        watchers.extend(conn);
        self.entries.insert(
            id.clone(),
            StreamRegistryEntry {
                info: info.clone(),
                producers: HashMap::new(),
                consumers: HashSet::new(),
                watchers,
            },
        );
        if let Some(a) = alias {
            self.aliases.insert(a, id);
        }
        self.registered += 1;
        Ok((info, true))
    }

    fn entry_mut(&mut self, id: &str) -> Result<&mut StreamRegistryEntry, RegistryError> {
        self.entries
            .get_mut(id)
            .ok_or_else(|| RegistryError::UnknownStream(id.to_string()))
    }

    pub fn entry(&self, id: &str) -> Result<&StreamRegistryEntry, RegistryError> {
        self.entries
            .get(id)
            .ok_or_else(|| RegistryError::UnknownStream(id.to_string()))
    }

    pub fn lookup(&mut self, id: &str, conn: Option<ConnId>) -> Result<StreamInfo, RegistryError> {
        let e = self.entry_mut(id)?;
        if let Some(c) = conn {
            e.watchers.insert(c);
        }
        Ok(e.info.clone())
    }

    pub fn status(&self, id: &str) -> Result<bool, RegistryError> {
        Ok(self.entry(id)?.info.closed)
    }

    /// Producer grants are refused once the stream is closed; consumers are
    /// always admitted so they can drain. `process` is the producer id or,
    /// for consumers, the consumer id (recorded with `group`).
    pub fn check_access(
        &mut self,
        id: &str,
        process: &str,
        role: Role,
        group: &str,
        conn: Option<ConnId>,
    ) -> Result<bool, RegistryError> {
        let e = self.entry_mut(id)?;
        if let Some(c) = conn {
            e.watchers.insert(c);
        }
        match role {
            Role::Producer => {
                if e.info.closed {
                    return Ok(false);
                }
                e.producers.insert(process.to_string(), ProducerGrant { open: true, conn });
                Ok(true)
            }
            Role::Consumer => {
                e.consumers.insert((process.to_string(), group.to_string()));
                Ok(true)
            }
        }
    }

    pub fn is_open_producer(&self, id: &str, process: &str) -> bool {
        self.entries
            .get(id)
            .and_then(|e| e.producers.get(process))
            .is_some_and(|g| g.open)
    }

    /// Closes one producer grant. The stream closes once at least one close
    /// happened and no grant is left open. Unknown producers are a no-op.
    pub fn close_producer(&mut self, id: &str, process: &str) -> Result<CloseOutcome, RegistryError> {
        let e = self.entry_mut(id)?;
        let Some(grant) = e.producers.get_mut(process) else {
            return Ok(CloseOutcome {
                closed: e.info.closed,
                ..Default::default()
            });
        };
        grant.open = false;
        Ok(Self::settle(e))
    }

    fn settle(e: &mut StreamRegistryEntry) -> CloseOutcome {
        if !e.info.closed && e.producers.values().all(|g| !g.open) {
            e.info.closed = true;
            let mut notify: Vec<ConnId> = e.watchers.iter().copied().collect();
            notify.sort_unstable();
            return CloseOutcome {
                closed: true,
                newly_closed: true,
                notify,
            };
        }
        CloseOutcome {
            closed: e.info.closed,
            ..Default::default()
        }
    }

    /// A connection went away: its producer grants expire as if closed and it
    /// stops receiving invalidations. Returns the streams that closed.
    pub fn drop_connection(&mut self, conn: ConnId) -> Vec<(String, CloseOutcome)> {
        let mut closed = Vec::new();
        for (id, e) in self.entries.iter_mut() {
            e.watchers.remove(&conn);
            let mut touched = false;
            for g in e.producers.values_mut() {
                if g.open && g.conn == Some(conn) {
                    g.open = false;
                    touched = true;
                }
            }
            if touched {
                let outcome = Self::settle(e);
                if outcome.newly_closed {
                    closed.push((id.clone(), outcome));
                }
            }
        }
        closed.sort_by(|a, b| a.0.cmp(&b.0));
        closed
    }

    pub fn delete(&mut self, id: &str) -> Result<StreamInfo, RegistryError> {
        let e = self
            .entries
            .remove(id)
            .ok_or_else(|| RegistryError::UnknownStream(id.to_string()))?;
        if let Some(a) = &e.info.alias {
            self.aliases.remove(a);
        }
        self.deleted += 1;
        Ok(e.info)
    }

    pub fn live_count(&self) -> usize {
        self.entries.len()
    }

    /// (registered, deleted) totals over the registry's lifetime.
    pub fn totals(&self) -> (u64, u64) {
        (self.registered, self.deleted)
    }

    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.entries.keys().cloned().collect();
        ids.sort();
        ids
    }
}

impl Default for Registry {
    fn default() -> Self {
        Registry::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn object(alias: Option<&str>) -> RegisterRequest {
        RegisterRequest {
            kind: StreamKind::Object,
            alias: alias.map(str::to_string),
            base_dir: None,
            consumer_mode: ConsumerMode::ExactlyOnce,
            partitions: 1,
        }
    }

    #[test]
    fn registrations_without_alias_get_distinct_ids() {
        let mut r = Registry::with_epoch(1);
        let (a, created_a) = r.register(object(None), None).unwrap();
        let (b, created_b) = r.register(object(None), None).unwrap();
        assert!(created_a && created_b);
        assert_ne!(a.id, b.id);
    }

    #[test]
    fn same_alias_maps_to_one_id() {
        let mut r = Registry::with_epoch(1);
        let (a, _) = r.register(object(Some("myStream")), None).unwrap();
        let (b, created) = r.register(object(Some("myStream")), None).unwrap();
        assert!(!created);
        assert_eq!(a.id, b.id);
        assert_eq!(r.live_count(), 1);
    }

    #[test]
    fn alias_reuse_across_kinds_is_rejected() {
        let mut r = Registry::with_epoch(1);
        r.register(object(Some("x")), None).unwrap();
        let file = RegisterRequest {
            kind: StreamKind::File,
            base_dir: Some("/tmp".into()),
            ..object(Some("x"))
        };
        // oracle: the alias index still points at the OBJECT entry
        assert_eq!(
            r.register(file, None).unwrap_err(),
            RegistryError::AliasKindMismatch {
                alias: "x".into(),
                existing: StreamKind::Object
            }
        );
        assert_eq!(r.live_count(), 1);
    }

    #[test]
    fn producer_grants_follow_the_closed_flag() {
        let mut r = Registry::with_epoch(1);
        let (s, _) = r.register(object(None), None).unwrap();
        assert!(r.check_access(&s.id, "p1", Role::Producer, "", None).unwrap());
        assert_eq!(r.entry(&s.id).unwrap().open_producers(), 1);
        let out = r.close_producer(&s.id, "p1").unwrap();
        assert!(out.closed && out.newly_closed);
        // close-then-publish: the grant is refused, consumers still admitted
        assert!(!r.check_access(&s.id, "p2", Role::Producer, "", None).unwrap());
        assert!(r.check_access(&s.id, "c1", Role::Consumer, "g", None).unwrap());
        assert!(matches!(
            r.check_access("ghost", "p", Role::Producer, "", None),
            Err(RegistryError::UnknownStream(_))
        ));
    }

    #[test]
    fn stream_closes_only_after_the_last_producer() {
        let mut r = Registry::with_epoch(1);
        let (s, _) = r.register(object(None), Some(7)).unwrap();
        r.check_access(&s.id, "p1", Role::Producer, "", Some(7)).unwrap();
        r.check_access(&s.id, "p2", Role::Producer, "", Some(8)).unwrap();
        let first = r.close_producer(&s.id, "p1").unwrap();
        assert!(!first.closed);
        assert!(!r.status(&s.id).unwrap());
        let again = r.close_producer(&s.id, "p1").unwrap();
        assert_eq!(again, first);
        let last = r.close_producer(&s.id, "p2").unwrap();
        assert!(last.newly_closed);
        assert_eq!(last.notify, vec![7, 8]);
        assert!(r.status(&s.id).unwrap());
        // idempotent afterwards
        let after = r.close_producer(&s.id, "p2").unwrap();
        assert!(after.closed && !after.newly_closed);
    }

    #[test]
    fn close_from_a_process_without_grant_is_a_noop() {
        let mut r = Registry::with_epoch(1);
        let (s, _) = r.register(object(None), None).unwrap();
        let out = r.close_producer(&s.id, "stranger").unwrap();
        assert_eq!(out, CloseOutcome::default());
        assert!(!r.status(&s.id).unwrap());
    }

    #[test]
    fn dropped_connections_expire_their_producers() {
        let mut r = Registry::with_epoch(1);
        let (s, _) = r.register(object(None), Some(1)).unwrap();
        r.check_access(&s.id, "p1", Role::Producer, "", Some(2)).unwrap();
        let closed = r.drop_connection(2);
        assert_eq!(closed.len(), 1);
        assert_eq!(closed[0].1.notify, vec![1]);
    }

    #[test]
    fn registry_conservation() {
        let mut r = Registry::with_epoch(1);
        let ids: Vec<String> = (0..5).map(|_| r.register(object(None), None).unwrap().0.id).collect();
        r.delete(&ids[1]).unwrap();
        r.delete(&ids[3]).unwrap();
        let (reg, del) = r.totals();
        assert_eq!(reg - del, r.live_count() as u64);
        assert!(r.delete(&ids[1]).is_err());
    }
}
