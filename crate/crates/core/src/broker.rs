//! In-process partitioned append-only log.
//!
//! Topics hold a fixed number of partitions. Every record gets a per-partition
//! offset counted from zero; deleting records never renumbers the survivors.
//! Consumer groups track, per partition, a committed frontier (every offset
//! below it is done), the next offset never handed out, and the set of
//! offsets currently leased to a member.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex, RwLock};
use thiserror::Error;

use crate::codec::{decode_seq, encode_seq};
use crate::types::{now_ms, ConsumerMode};
use crate::wire::{read_frame, write_frame, Frame, Verb};

pub const DEFAULT_LEASE: Duration = Duration::from_secs(30);

#[derive(Debug, Error)]
pub enum BrokerError {
    #[error("topic `{0}` already exists")]
    DuplicateTopic(String),
    #[error("unknown topic `{0}`")]
    UnknownTopic(String),
    #[error("unknown consumer group `{group}` on topic `{topic}`")]
    UnknownGroup { topic: String, group: String },
    #[error("offset {offset} of partition {partition} precedes the committed frontier")]
    StaleCommit { partition: u32, offset: u64 },
    #[error("offset {offset} of partition {partition} is not in flight for this consumer")]
    NotInFlight { partition: u32, offset: u64 },
    #[error("partition {0} does not exist")]
    UnknownPartition(u32),
    #[error("a topic needs at least one partition")]
    NoPartitions,
    #[error("journal: {0}")]
    Journal(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogRecord {
    pub partition: u32,
    pub offset: u64,
    pub key: Option<Vec<u8>>,
    pub value: Vec<u8>,
    pub publish_time: u64,
}

#[derive(Debug, Default)]
struct Partition {
    base: u64,
    records: VecDeque<LogRecord>,
    next_offset: u64,
}

impl Partition {
    fn get(&self, offset: u64) -> Option<&LogRecord> {
        if offset < self.base {
            return None;
        }
        self.records.get((offset - self.base) as usize)
    }

    fn truncate_before(&mut self, frontier: u64) -> usize {
        let mut removed = 0;
        while self.base < frontier && !self.records.is_empty() {
            self.records.pop_front();
            self.base += 1;
            removed += 1;
        }
        if self.records.is_empty() && self.base < frontier {
            self.base = frontier.min(self.next_offset);
        }
        removed
    }
}

#[derive(Debug, Clone)]
struct Lease {
    consumer: String,
    deadline: Instant,
}

#[derive(Debug, Default)]
struct GroupPartition {
    committed: u64,
    fetch_pos: u64,
    acked: BTreeSet<u64>,
    redeliver: BTreeSet<u64>,
    in_flight: BTreeMap<u64, Lease>,
}

impl GroupPartition {
    fn advance(&mut self) {
        while self.committed < self.fetch_pos && self.acked.remove(&self.committed) {
            self.committed += 1;
        }
    }

    fn ack(&mut self, offset: u64) {
        self.in_flight.remove(&offset);
        self.redeliver.remove(&offset);
        self.acked.insert(offset);
    }
}

#[derive(Debug, Default)]
struct Group {
    members: HashSet<String>,
    parts: Vec<GroupPartition>,
}

#[derive(Debug, Default)]
struct TopicState {
    partitions: Vec<Partition>,
    groups: HashMap<String, Group>,
    round_robin: u64,
    seq: u64,
    deleted: bool,
}

impl TopicState {
    fn expire_leases(&mut self, now: Instant) {
        for group in self.groups.values_mut() {
            for gp in &mut group.parts {
                let expired: Vec<u64> = gp
                    .in_flight
                    .iter()
                    .filter(|(_, l)| l.deadline <= now)
                    .map(|(o, _)| *o)
                    .collect();
                for off in expired {
                    gp.in_flight.remove(&off);
                    gp.redeliver.insert(off);
                }
            }
        }
    }

    fn new_group(&self) -> Group {
        Group {
            members: HashSet::new(),
            parts: self
                .partitions
                .iter()
                .map(|p| GroupPartition {
                    committed: p.base,
                    fetch_pos: p.base,
                    ..Default::default()
                })
                .collect(),
        }
    }

    fn bump(&mut self) {
        self.seq += 1;
    }
}

struct Topic {
    state: Mutex<TopicState>,
    changed: Condvar,
}

/// Thread-safe broker. Per-topic state sits behind one lock, so appends and
/// fetches on different topics never contend.
pub struct Broker {
    topics: RwLock<HashMap<String, Arc<Topic>>>,
    lease: Duration,
    journal: Option<Mutex<BufWriter<File>>>,
}

impl Default for Broker {
    fn default() -> Self {
        Broker::new()
    }
}

impl Broker {
    pub fn new() -> Self {
        Broker::with_lease(DEFAULT_LEASE)
    }

    pub fn with_lease(lease: Duration) -> Self {
        Broker {
            topics: RwLock::new(HashMap::new()),
            lease,
            journal: None,
        }
    }

    /// Opens a broker backed by an append-only journal, replaying whatever
    /// the journal already holds. Group state is not journaled; deletions
    /// are.
    pub fn open_journal(path: &Path, lease: Duration) -> Result<Self, BrokerError> {
        let mut broker = Broker::with_lease(lease);
        if path.exists() {
            let file = File::open(path).map_err(|e| BrokerError::Journal(e.to_string()))?;
            broker.replay(&mut BufReader::new(file))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| BrokerError::Journal(e.to_string()))?;
        broker.journal = Some(Mutex::new(BufWriter::new(file)));
        Ok(broker)
    }

    fn replay(&mut self, reader: &mut BufReader<File>) -> Result<(), BrokerError> {
        let bad = |e: String| BrokerError::Journal(e);
        loop {
            let frame = match read_frame(reader) {
                Ok(Some(f)) => f,
                Ok(None) => break,
                // a torn tail write from a crash ends the replay
                Err(_) => break,
            };
            match frame.verb {
                Verb::NewTopic => {
                    let parts: u32 = frame.parse(1).map_err(|e| bad(e.to_string()))?;
                    self.create_topic(frame.get(0), parts)?;
                }
                Verb::DelTopic => self.delete_topic(frame.get(0))?,
                Verb::Append => {
                    let topic = self.topic(frame.get(0))?;
                    let partition: u32 = frame.parse(1).map_err(|e| bad(e.to_string()))?;
                    let publish_time: u64 = frame.parse(2).map_err(|e| bad(e.to_string()))?;
                    let mut items = decode_seq(&frame.payload).map_err(|e| bad(e.to_string()))?;
                    let value = items.pop().ok_or_else(|| bad("empty append".into()))?;
                    let key = items.pop();
                    let mut st = topic.state.lock();
                    let p = st
                        .partitions
                        .get_mut(partition as usize)
                        .ok_or(BrokerError::UnknownPartition(partition))?;
                    let offset = p.next_offset;
                    p.next_offset += 1;
                    p.records.push_back(LogRecord {
                        partition,
                        offset,
                        key,
                        value,
                        publish_time,
                    });
                }
                Verb::Commit => {
                    let topic = self.topic(frame.get(0))?;
                    let partition: usize = frame.parse(1).map_err(|e| bad(e.to_string()))?;
                    let frontier: u64 = frame.parse(2).map_err(|e| bad(e.to_string()))?;
                    let mut st = topic.state.lock();
                    if let Some(p) = st.partitions.get_mut(partition) {
                        p.truncate_before(frontier);
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn log(&self, frame: Frame) {
        if let Some(j) = &self.journal {
            let mut w = j.lock();
            if let Err(e) = write_frame(&mut *w, &frame) {
                tracing::warn!("journal write failed: {e}");
            }
        }
    }

    fn topic(&self, name: &str) -> Result<Arc<Topic>, BrokerError> {
        self.topics
            .read()
            .get(name)
            .cloned()
            .ok_or_else(|| BrokerError::UnknownTopic(name.to_string()))
    }

    pub fn has_topic(&self, name: &str) -> bool {
        self.topics.read().contains_key(name)
    }

    pub fn create_topic(&self, name: &str, partition_count: u32) -> Result<(), BrokerError> {
        if partition_count == 0 {
            return Err(BrokerError::NoPartitions);
        }
        let mut topics = self.topics.write();
        if topics.contains_key(name) {
            return Err(BrokerError::DuplicateTopic(name.to_string()));
        }
        let state = TopicState {
            partitions: (0..partition_count).map(|_| Partition::default()).collect(),
            ..Default::default()
        };
        topics.insert(
            name.to_string(),
            Arc::new(Topic {
                state: Mutex::new(state),
                changed: Condvar::new(),
            }),
        );
        drop(topics);
        self.log(Frame::new(Verb::NewTopic).field(name).field(partition_count));
        Ok(())
    }

    pub fn delete_topic(&self, name: &str) -> Result<(), BrokerError> {
        let topic = self
            .topics
            .write()
            .remove(name)
            .ok_or_else(|| BrokerError::UnknownTopic(name.to_string()))?;
        {
            let mut st = topic.state.lock();
            st.deleted = true;
            st.groups.clear();
            st.bump();
        }
        topic.changed.notify_all();
        self.log(Frame::new(Verb::DelTopic).field(name));
        Ok(())
    }

    pub fn topic_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.topics.read().keys().cloned().collect();
        names.sort();
        names
    }

    pub fn partition_count(&self, topic: &str) -> Result<u32, BrokerError> {
        Ok(self.topic(topic)?.state.lock().partitions.len() as u32)
    }

    /// Appends one record and returns `(partition, offset)`. Keyed records
    /// route by key hash; unkeyed ones go round-robin.
    pub fn append(
        &self,
        topic: &str,
        key: Option<&[u8]>,
        value: Vec<u8>,
    ) -> Result<(u32, u64), BrokerError> {
        let mut out = self.append_batch(topic, vec![(key.map(<[u8]>::to_vec), value)])?;
        Ok(out.pop().expect("one record appended"))
    }

    /// Appends records in order under a single lock acquisition.
    pub fn append_batch(
        &self,
        topic: &str,
        records: Vec<(Option<Vec<u8>>, Vec<u8>)>,
    ) -> Result<Vec<(u32, u64)>, BrokerError> {
        let t = self.topic(topic)?;
        let mut placed = Vec::with_capacity(records.len());
        let mut journal = Vec::new();
        {
            let mut st = t.state.lock();
            let np = st.partitions.len() as u64;
            for (key, value) in records {
                let partition = match &key {
                    Some(k) => (fnv1a(k) % np) as u32,
                    None => {
                        let p = st.round_robin % np;
                        st.round_robin += 1;
                        p as u32
                    }
                };
                let publish_time = now_ms();
                let p = &mut st.partitions[partition as usize];
                let offset = p.next_offset;
                p.next_offset += 1;
                if self.journal.is_some() {
                    let mut items: Vec<&[u8]> = Vec::new();
                    if let Some(k) = &key {
                        items.push(k);
                    }
                    items.push(&value);
                    journal.push(
                        Frame::new(Verb::Append)
                            .field(topic)
                            .field(partition)
                            .field(publish_time)
                            .with_payload(encode_seq(items)),
                    );
                }
                p.records.push_back(LogRecord {
                    partition,
                    offset,
                    key,
                    value,
                    publish_time,
                });
                placed.push((partition, offset));
            }
            if !placed.is_empty() {
                st.bump();
            }
        }
        t.changed.notify_all();
        for f in journal {
            self.log(f);
        }
        Ok(placed)
    }

    /// Adds `consumer` to `group`, creating the group at the earliest
    /// retained offsets if needed.
    pub fn join_group(&self, topic: &str, group: &str, consumer: &str) -> Result<(), BrokerError> {
        let t = self.topic(topic)?;
        let mut st = t.state.lock();
        if !st.groups.contains_key(group) {
            let g = st.new_group();
            st.groups.insert(group.to_string(), g);
        }
        st.groups
            .get_mut(group)
            .expect("group just ensured")
            .members
            .insert(consumer.to_string());
        Ok(())
    }

    /// Hands out every fetchable record (redeliveries first, then new
    /// records) up to `max`, partition by partition. Under at-most-once the
    /// records are committed and removed before this returns; otherwise they
    /// are leased to `consumer`.
    pub fn fetch(
        &self,
        topic: &str,
        group: &str,
        consumer: &str,
        max: Option<usize>,
        mode: ConsumerMode,
    ) -> Result<Vec<LogRecord>, BrokerError> {
        let t = self.topic(topic)?;
        let mut st = t.state.lock();
        st.expire_leases(Instant::now());
        let max = max.unwrap_or(usize::MAX);
        let deadline = Instant::now() + self.lease;
        let TopicState {
            partitions, groups, ..
        } = &mut *st;
        let g = groups.get_mut(group).ok_or_else(|| BrokerError::UnknownGroup {
            topic: topic.to_string(),
            group: group.to_string(),
        })?;
        g.members.insert(consumer.to_string());
        let mut out = Vec::new();
        let mut truncations: Vec<(usize, u64)> = Vec::new();
        for (part, gp) in partitions.iter_mut().zip(g.parts.iter_mut()) {
            let mut taken = Vec::new();
            while out.len() + taken.len() < max {
                let Some(&off) = gp.redeliver.iter().next() else { break };
                gp.redeliver.remove(&off);
                if let Some(rec) = part.get(off) {
                    taken.push(rec.clone());
                } else {
                    gp.acked.insert(off);
                }
            }
            while out.len() + taken.len() < max && gp.fetch_pos < part.next_offset {
                let off = gp.fetch_pos;
                gp.fetch_pos += 1;
                match part.get(off) {
                    Some(rec) => taken.push(rec.clone()),
                    // already removed (e.g. replayed from a truncated journal)
                    None => {
                        gp.acked.insert(off);
                    }
                }
            }
            for rec in &taken {
                match mode {
                    ConsumerMode::AtMostOnce => gp.ack(rec.offset),
                    _ => {
                        gp.in_flight.insert(
                            rec.offset,
                            Lease {
                                consumer: consumer.to_string(),
                                deadline,
                            },
                        );
                    }
                }
            }
            gp.advance();
            out.extend(taken);
        }
        if mode == ConsumerMode::AtMostOnce {
            let n = partitions.len();
            truncations = truncate_committed(partitions, groups, 0..n);
        }
        drop(st);
        for (p, frontier) in truncations {
            self.log(Frame::new(Verb::Commit).field(topic).field(p).field(frontier));
        }
        Ok(out)
    }

    /// Commits specific leased offsets. With `delete`, records below the new
    /// committed frontier are physically removed.
    pub fn commit(
        &self,
        topic: &str,
        group: &str,
        consumer: &str,
        offsets: &[(u32, u64)],
        delete: bool,
    ) -> Result<(), BrokerError> {
        let t = self.topic(topic)?;
        let mut st = t.state.lock();
        let TopicState {
            partitions, groups, ..
        } = &mut *st;
        let g = groups.get_mut(group).ok_or_else(|| BrokerError::UnknownGroup {
            topic: topic.to_string(),
            group: group.to_string(),
        })?;
        for &(p, off) in offsets {
            let gp = g.parts.get(p as usize).ok_or(BrokerError::UnknownPartition(p))?;
            if off < gp.committed || gp.acked.contains(&off) {
                return Err(BrokerError::StaleCommit {
                    partition: p,
                    offset: off,
                });
            }
            match gp.in_flight.get(&off) {
                Some(l) if l.consumer == consumer => {}
                _ => {
                    return Err(BrokerError::NotInFlight {
                        partition: p,
                        offset: off,
                    })
                }
            }
        }
        let mut touched = BTreeSet::new();
        for &(p, off) in offsets {
            g.parts[p as usize].ack(off);
            touched.insert(p as usize);
        }
        for &pi in &touched {
            g.parts[pi].advance();
        }
        let truncations = if delete {
            truncate_committed(partitions, groups, touched)
        } else {
            Vec::new()
        };
        drop(st);
        for (p, frontier) in truncations {
            self.log(Frame::new(Verb::Commit).field(topic).field(p).field(frontier));
        }
        Ok(())
    }

    /// Commits every offset currently leased to `consumer`. Returns how many
    /// were committed.
    pub fn commit_in_flight(
        &self,
        topic: &str,
        group: &str,
        consumer: &str,
        delete: bool,
    ) -> Result<usize, BrokerError> {
        let t = self.topic(topic)?;
        let mut st = t.state.lock();
        let TopicState {
            partitions, groups, ..
        } = &mut *st;
        let Some(g) = groups.get_mut(group) else {
            return Ok(0);
        };
        let mut n = 0;
        let mut touched = BTreeSet::new();
        for (pi, gp) in g.parts.iter_mut().enumerate() {
            let mine: Vec<u64> = gp
                .in_flight
                .iter()
                .filter(|(_, l)| l.consumer == consumer)
                .map(|(o, _)| *o)
                .collect();
            n += mine.len();
            for off in mine {
                gp.ack(off);
            }
            touched.insert(pi);
        }
        for &pi in &touched {
            g.parts[pi].advance();
        }
        let truncations = if delete {
            truncate_committed(partitions, groups, touched)
        } else {
            Vec::new()
        };
        drop(st);
        for (p, frontier) in truncations {
            self.log(Frame::new(Verb::Commit).field(topic).field(p).field(frontier));
        }
        Ok(n)
    }

    /// Drops a member after a crash: its leases return to the group for
    /// redelivery. Returns the number of released records.
    pub fn release_consumer(&self, topic: &str, group: &str, consumer: &str) -> usize {
        let Ok(t) = self.topic(topic) else { return 0 };
        let released = {
            let mut st = t.state.lock();
            let Some(g) = st.groups.get_mut(group) else {
                return 0;
            };
            g.members.remove(consumer);
            let mut n = 0;
            for gp in &mut g.parts {
                let mine: Vec<u64> = gp
                    .in_flight
                    .iter()
                    .filter(|(_, l)| l.consumer == consumer)
                    .map(|(o, _)| *o)
                    .collect();
                n += mine.len();
                for off in mine {
                    gp.in_flight.remove(&off);
                    gp.redeliver.insert(off);
                }
            }
            if n > 0 {
                st.bump();
            }
            n
        };
        if released > 0 {
            t.changed.notify_all();
        }
        released
    }

    /// Records the group could fetch right now plus records leased out.
    pub fn pending(&self, topic: &str, group: &str) -> Result<(usize, usize), BrokerError> {
        let t = self.topic(topic)?;
        let mut st = t.state.lock();
        st.expire_leases(Instant::now());
        let Some(g) = st.groups.get(group) else {
            let available = st.partitions.iter().map(|p| p.records.len()).sum();
            return Ok((available, 0));
        };
        let mut fetchable = 0;
        let mut leased = 0;
        for (part, gp) in st.partitions.iter().zip(&g.parts) {
            fetchable += gp.redeliver.len();
            fetchable += part.next_offset.saturating_sub(gp.fetch_pos.max(part.base)) as usize;
            leased += gp.in_flight.len();
        }
        Ok((fetchable, leased))
    }

    /// Change counter bumped on every append, redelivery, wake and deletion.
    pub fn seq(&self, topic: &str) -> Result<u64, BrokerError> {
        Ok(self.topic(topic)?.state.lock().seq)
    }

    /// Blocks until the topic's change counter moves past `since` or the
    /// timeout elapses. Returns whether it moved.
    pub fn wait_for_change(&self, topic: &str, since: u64, timeout: Duration) -> bool {
        let Ok(t) = self.topic(topic) else { return true };
        let deadline = Instant::now() + timeout;
        let mut st = t.state.lock();
        while st.seq == since && !st.deleted {
            if t.changed.wait_until(&mut st, deadline).timed_out() {
                return st.seq != since;
            }
        }
        true
    }

    /// Wakes every waiter on `topic` (used for close notifications).
    pub fn wake(&self, topic: &str) {
        if let Ok(t) = self.topic(topic) {
            t.state.lock().bump();
            t.changed.notify_all();
        }
    }

    /// Snapshot of the retained records of one partition.
    pub fn records(&self, topic: &str, partition: u32) -> Result<Vec<LogRecord>, BrokerError> {
        let t = self.topic(topic)?;
        let st = t.state.lock();
        let p = st
            .partitions
            .get(partition as usize)
            .ok_or(BrokerError::UnknownPartition(partition))?;
        Ok(p.records.iter().cloned().collect())
    }

    /// Total records ever appended to the topic.
    pub fn appended(&self, topic: &str) -> Result<u64, BrokerError> {
        let t = self.topic(topic)?;
        let st = t.state.lock();
        Ok(st.partitions.iter().map(|p| p.next_offset).sum())
    }

    pub fn committed(&self, topic: &str, group: &str) -> Result<Vec<u64>, BrokerError> {
        let t = self.topic(topic)?;
        let st = t.state.lock();
        let g = st.groups.get(group).ok_or_else(|| BrokerError::UnknownGroup {
            topic: topic.to_string(),
            group: group.to_string(),
        })?;
        Ok(g.parts.iter().map(|gp| gp.committed).collect())
    }

    pub fn group_names(&self, topic: &str) -> Result<Vec<String>, BrokerError> {
        let t = self.topic(topic)?;
        let st = t.state.lock();
        let mut names: Vec<String> = st.groups.keys().cloned().collect();
        names.sort();
        Ok(names)
    }
}

/// Removes records every group has committed. A group that deletes never
/// takes records away from another group that has not consumed them yet.
fn truncate_committed(
    partitions: &mut [Partition],
    groups: &HashMap<String, Group>,
    touched: impl IntoIterator<Item = usize>,
) -> Vec<(usize, u64)> {
    let mut truncations = Vec::new();
    for pi in touched {
        let Some(frontier) = groups.values().filter_map(|g| g.parts.get(pi)).map(|gp| gp.committed).min() else {
            continue;
        };
        if partitions[pi].truncate_before(frontier) > 0 {
            truncations.push((pi, frontier));
        }
    }
    truncations
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn values(recs: &[LogRecord]) -> Vec<Vec<u8>> {
        recs.iter().map(|r| r.value.clone()).collect()
    }

    #[test]
    fn fresh_single_partition_topic_starts_at_offset_zero() {
        let b = Broker::new();
        b.create_topic("s-001", 1).unwrap();
        assert_eq!(b.records("s-001", 0).unwrap(), vec![]);
        let offs: Vec<u64> = (0..3)
            .map(|i| b.append("s-001", None, vec![i]).unwrap().1)
            .collect();
        assert_eq!(offs, vec![0, 1, 2]);
    }

    #[test]
    fn duplicate_topic_is_rejected() {
        let b = Broker::new();
        b.create_topic("t", 1).unwrap();
        assert!(matches!(b.create_topic("t", 2), Err(BrokerError::DuplicateTopic(_))));
        assert!(matches!(b.create_topic("z", 0), Err(BrokerError::NoPartitions)));
    }

    #[test]
    fn offsets_are_independent_per_partition() {
        let b = Broker::new();
        b.create_topic("s-002", 3).unwrap();
        for i in 0..7u8 {
            b.append("s-002", None, vec![i]).unwrap();
        }
        // oracle: scan each partition and check offsets are 0..len
        let mut total = 0;
        for p in 0..3 {
            let recs = b.records("s-002", p).unwrap();
            let offs: Vec<u64> = recs.iter().map(|r| r.offset).collect();
            assert_eq!(offs, (0..recs.len() as u64).collect::<Vec<_>>());
            assert!(recs.iter().all(|r| r.partition == p));
            total += recs.len();
        }
        assert_eq!(total, 7);
    }

    #[test]
    fn equal_keys_route_to_the_same_partition() {
        let b = Broker::new();
        b.create_topic("k", 4).unwrap();
        let keys: [&[u8]; 3] = [b"alpha", b"beta", b"gamma"];
        for key in keys {
            let first = b.append("k", Some(key), b"x".to_vec()).unwrap().0;
            for _ in 0..5 {
                assert_eq!(b.append("k", Some(key), b"y".to_vec()).unwrap().0, first);
            }
            assert_eq!(first as u64, fnv1a(key) % 4);
        }
    }

    #[test]
    fn fetch_returns_everything_from_the_committed_offset() {
        let b = Broker::new();
        b.create_topic("t", 1).unwrap();
        b.join_group("t", "g", "c1").unwrap();
        assert!(b.fetch("t", "g", "c1", None, ConsumerMode::ExactlyOnce).unwrap().is_empty());
        for i in 0..5u8 {
            b.append("t", None, vec![i]).unwrap();
        }
        let got = b.fetch("t", "g", "c1", None, ConsumerMode::ExactlyOnce).unwrap();
        assert_eq!(values(&got), (0..5u8).map(|i| vec![i]).collect::<Vec<_>>());
        let (fetchable, leased) = b.pending("t", "g").unwrap();
        assert_eq!((fetchable, leased), (0, 5));
    }

    #[test]
    fn fetch_requires_a_known_group_and_topic() {
        let b = Broker::new();
        b.create_topic("t", 1).unwrap();
        assert!(matches!(
            b.fetch("t", "nope", "c", None, ConsumerMode::ExactlyOnce),
            Err(BrokerError::UnknownGroup { .. })
        ));
        assert!(matches!(
            b.fetch("u", "g", "c", None, ConsumerMode::ExactlyOnce),
            Err(BrokerError::UnknownTopic(_))
        ));
    }

    #[test]
    fn members_fetching_concurrently_get_disjoint_sets() {
        let b = Arc::new(Broker::new());
        b.create_topic("t", 2).unwrap();
        for c in ["a", "b", "c", "d"] {
            b.join_group("t", "g", c).unwrap();
        }
        let writer = {
            let b = b.clone();
            std::thread::spawn(move || {
                for i in 0..400u32 {
                    b.append("t", None, i.to_be_bytes().to_vec()).unwrap();
                }
            })
        };
        let readers: Vec<_> = ["a", "b", "c", "d"]
            .into_iter()
            .map(|c| {
                let b = b.clone();
                std::thread::spawn(move || {
                    let mut got = Vec::new();
                    for _ in 0..200 {
                        let recs = b.fetch("t", "g", c, Some(7), ConsumerMode::ExactlyOnce).unwrap();
                        let offs: Vec<(u32, u64)> = recs.iter().map(|r| (r.partition, r.offset)).collect();
                        b.commit("t", "g", c, &offs, true).unwrap();
                        got.extend(values(&recs));
                        std::thread::yield_now();
                    }
                    got
                })
            })
            .collect();
        writer.join().unwrap();
        let mut all: Vec<Vec<u8>> = readers.into_iter().flat_map(|h| h.join().unwrap()).collect();
        let rest = b.fetch("t", "g", "a", None, ConsumerMode::ExactlyOnce).unwrap();
        all.extend(values(&rest));
        all.sort();
        let expected: Vec<Vec<u8>> = (0..400u32).map(|i| i.to_be_bytes().to_vec()).collect();
        assert_eq!(all, expected);
    }

    #[test]
    fn deletion_waits_for_the_slowest_group() {
        let b = Broker::new();
        b.create_topic("t", 1).unwrap();
        b.join_group("t", "fast", "f").unwrap();
        b.join_group("t", "slow", "s").unwrap();
        b.append("t", None, vec![1]).unwrap();
        b.append("t", None, vec![2]).unwrap();
        let got = b.fetch("t", "fast", "f", None, ConsumerMode::ExactlyOnce).unwrap();
        let offs: Vec<(u32, u64)> = got.iter().map(|r| (r.partition, r.offset)).collect();
        b.commit("t", "fast", "f", &offs, true).unwrap();
        assert_eq!(b.records("t", 0).unwrap().len(), 2);
        let slow = b.fetch("t", "slow", "s", Some(1), ConsumerMode::AtMostOnce).unwrap();
        assert_eq!(values(&slow), vec![vec![1]]);
        assert_eq!(b.records("t", 0).unwrap().len(), 1);
    }

    #[test]
    fn commit_with_delete_removes_records_and_refetch_is_empty() {
        let b = Broker::new();
        b.create_topic("t", 1).unwrap();
        b.join_group("t", "g", "c").unwrap();
        for i in 0..3u8 {
            b.append("t", None, vec![i]).unwrap();
        }
        let got = b.fetch("t", "g", "c", None, ConsumerMode::ExactlyOnce).unwrap();
        let offs: Vec<(u32, u64)> = got.iter().map(|r| (r.partition, r.offset)).collect();
        b.commit("t", "g", "c", &offs, true).unwrap();
        assert!(b.fetch("t", "g", "c", None, ConsumerMode::ExactlyOnce).unwrap().is_empty());
        assert!(b.records("t", 0).unwrap().is_empty());
        assert_eq!(b.committed("t", "g").unwrap(), vec![3]);
        // deletion does not renumber
        assert_eq!(b.append("t", None, vec![9]).unwrap().1, 3);
    }

    #[test]
    fn committing_twice_is_stale() {
        let b = Broker::new();
        b.create_topic("t", 1).unwrap();
        b.join_group("t", "g", "c").unwrap();
        b.append("t", None, vec![1]).unwrap();
        b.fetch("t", "g", "c", None, ConsumerMode::AtLeastOnce).unwrap();
        b.commit("t", "g", "c", &[(0, 0)], false).unwrap();
        assert!(matches!(
            b.commit("t", "g", "c", &[(0, 0)], false),
            Err(BrokerError::StaleCommit { offset: 0, .. })
        ));
        assert!(matches!(
            b.commit("t", "g", "c", &[(0, 5)], false),
            Err(BrokerError::NotInFlight { .. })
        ));
    }

    #[test]
    fn crash_before_commit_redelivers_under_at_least_once() {
        let b = Broker::new();
        b.create_topic("t", 1).unwrap();
        b.join_group("t", "g", "c1").unwrap();
        b.join_group("t", "g", "c2").unwrap();
        for i in 0..3u8 {
            b.append("t", None, vec![i]).unwrap();
        }
        let first = b.fetch("t", "g", "c1", None, ConsumerMode::AtLeastOnce).unwrap();
        assert_eq!(first.len(), 3);
        assert!(b.fetch("t", "g", "c2", None, ConsumerMode::AtLeastOnce).unwrap().is_empty());
        assert_eq!(b.release_consumer("t", "g", "c1"), 3);
        let again = b.fetch("t", "g", "c2", None, ConsumerMode::AtLeastOnce).unwrap();
        assert_eq!(values(&again), values(&first));
        // records were committed without deletion
        b.commit_in_flight("t", "g", "c2", false).unwrap();
        assert_eq!(b.records("t", 0).unwrap().len(), 3);
        assert_eq!(b.committed("t", "g").unwrap(), vec![3]);
    }

    #[test]
    fn at_most_once_deletes_at_fetch_and_never_redelivers() {
        let b = Broker::new();
        b.create_topic("t", 1).unwrap();
        b.join_group("t", "g", "c1").unwrap();
        for i in 0..3u8 {
            b.append("t", None, vec![i]).unwrap();
        }
        assert_eq!(b.fetch("t", "g", "c1", None, ConsumerMode::AtMostOnce).unwrap().len(), 3);
        assert!(b.records("t", 0).unwrap().is_empty());
        assert_eq!(b.release_consumer("t", "g", "c1"), 0);
        assert!(b.fetch("t", "g", "c2", None, ConsumerMode::AtMostOnce).unwrap().is_empty());
    }

    #[test]
    fn expired_leases_are_redelivered() {
        let b = Broker::with_lease(Duration::from_millis(20));
        b.create_topic("t", 1).unwrap();
        b.join_group("t", "g", "c1").unwrap();
        b.append("t", None, vec![1]).unwrap();
        assert_eq!(b.fetch("t", "g", "c1", None, ConsumerMode::AtLeastOnce).unwrap().len(), 1);
        std::thread::sleep(Duration::from_millis(40));
        let again = b.fetch("t", "g", "c2", None, ConsumerMode::AtLeastOnce).unwrap();
        assert_eq!(values(&again), vec![vec![1]]);
        // the first member's late commit is refused
        assert!(b.commit("t", "g", "c1", &[(0, 0)], false).is_err());
    }

    #[test]
    fn committed_frontier_waits_for_gaps() {
        let b = Broker::new();
        b.create_topic("t", 1).unwrap();
        b.join_group("t", "g", "a").unwrap();
        for i in 0..4u8 {
            b.append("t", None, vec![i]).unwrap();
        }
        b.fetch("t", "g", "a", Some(2), ConsumerMode::ExactlyOnce).unwrap();
        b.fetch("t", "g", "b", Some(2), ConsumerMode::ExactlyOnce).unwrap();
        b.commit("t", "g", "b", &[(0, 2), (0, 3)], true).unwrap();
        assert_eq!(b.committed("t", "g").unwrap(), vec![0]);
        assert_eq!(b.records("t", 0).unwrap().len(), 4);
        b.commit("t", "g", "a", &[(0, 0), (0, 1)], true).unwrap();
        assert_eq!(b.committed("t", "g").unwrap(), vec![4]);
        assert!(b.records("t", 0).unwrap().is_empty());
    }

    #[test]
    fn delete_then_recreate_gives_an_empty_log() {
        let b = Broker::new();
        b.create_topic("t", 1).unwrap();
        b.join_group("t", "g", "c").unwrap();
        b.append("t", None, vec![1]).unwrap();
        b.delete_topic("t").unwrap();
        assert!(matches!(b.delete_topic("t"), Err(BrokerError::UnknownTopic(_))));
        b.create_topic("t", 1).unwrap();
        assert!(b.records("t", 0).unwrap().is_empty());
        // oracle: the group registry of the new topic is empty
        assert!(b.group_names("t").unwrap().is_empty());
        assert_eq!(b.append("t", None, vec![2]).unwrap().1, 0);
    }

    #[test]
    fn waiters_wake_on_append() {
        let b = Arc::new(Broker::new());
        b.create_topic("t", 1).unwrap();
        let seq = b.seq("t").unwrap();
        let b2 = b.clone();
        let h = std::thread::spawn(move || b2.wait_for_change("t", seq, Duration::from_secs(5)));
        std::thread::sleep(Duration::from_millis(20));
        b.append("t", None, vec![1]).unwrap();
        assert!(h.join().unwrap());
        assert!(!b.wait_for_change("t", b.seq("t").unwrap(), Duration::from_millis(5)));
    }

    #[test]
    fn journal_replays_content_and_deletions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broker.journal");
        {
            let b = Broker::open_journal(&path, DEFAULT_LEASE).unwrap();
            b.create_topic("t", 1).unwrap();
            b.create_topic("gone", 1).unwrap();
            b.delete_topic("gone").unwrap();
            b.join_group("t", "g", "c").unwrap();
            for i in 0..4u8 {
                b.append("t", Some(b"k"), vec![i]).unwrap();
            }
            let got = b.fetch("t", "g", "c", Some(2), ConsumerMode::ExactlyOnce).unwrap();
            let offs: Vec<(u32, u64)> = got.iter().map(|r| (r.partition, r.offset)).collect();
            b.commit("t", "g", "c", &offs, true).unwrap();
        }
        let b = Broker::open_journal(&path, DEFAULT_LEASE).unwrap();
        assert_eq!(b.topic_names(), vec!["t".to_string()]);
        let recs = b.records("t", 0).unwrap();
        assert_eq!(recs.iter().map(|r| r.offset).collect::<Vec<_>>(), vec![2, 3]);
        assert_eq!(recs[0].key.as_deref(), Some(b"k".as_slice()));
        assert_eq!(b.append("t", None, vec![9]).unwrap().1, 4);
    }
}
