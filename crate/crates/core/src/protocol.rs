//! Payload layouts and error codes spoken over the server connection.
//!
//! Verb field layouts (requests; responses are `OK` or `ERR code message`):
//!
//! | verb       | fields                                              | payload            |
//! |------------|-----------------------------------------------------|--------------------|
//! | REGISTER   | kind, alias, base_dir, mode, partitions             | –                  |
//! | LOOKUP     | id                                                  | –                  |
//! | ADDPROD    | id, producer                                        | –                  |
//! | ADDCONS    | id, consumer, group                                 | –                  |
//! | CLOSE      | id, producer                                        | –                  |
//! | STATUS     | id                                                  | –                  |
//! | POLLREQ    | id, consumer, group, max (0 = all), timeout_ms      | –                  |
//! | PUBREQ     | id, producer                                        | element sequence   |
//! | INVALIDATE | id (server push, correlation id 0)                  | –                  |
//! | BYE        | –                                                   | –                  |
//! | NEWTOPIC   | topic, partitions                                   | –                  |
//! | DELTOPIC   | topic                                               | –                  |
//! | APPEND     | topic, hex key (empty = none)                       | value              |
//! | FETCH      | topic, group, consumer, max (0 = all), mode         | –                  |
//! | COMMIT     | topic, group, consumer, delete (0/1), `p:o,p:o,...` | –                  |
//!
//! Stream info responses (REGISTER, LOOKUP) carry
//! `id, alias, kind, base_dir, mode, partitions, closed`. POLLREQ responses
//! carry `closed, drained` and the element sequence; FETCH responses carry a
//! record sequence.

use crate::broker::LogRecord;
use crate::codec::{decode_seq, encode_seq, read_u32, read_u64, CodecError};

pub mod codes {
    pub const UNKNOWN_STREAM: &str = "UnknownStream";
    pub const ALIAS_KIND_MISMATCH: &str = "AliasKindMismatch";
    pub const INVALID_PATH: &str = "InvalidPath";
    pub const CLOSED: &str = "ClosedStream";
    pub const DENIED: &str = "Denied";
    pub const BACKEND: &str = "Backend";
    pub const MALFORMED: &str = "Malformed";
    pub const UNSUPPORTED: &str = "Unsupported";
    pub const REGISTRATION: &str = "Registration";
    pub const STALE_COMMIT: &str = "StaleCommit";
}

/// One delivered stream element as carried on the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireElement {
    pub publish_time: u64,
    pub payload: Vec<u8>,
}

pub fn encode_elements(elems: &[WireElement]) -> Vec<u8> {
    encode_seq(elems.iter().map(|e| {
        let mut b = Vec::with_capacity(8 + e.payload.len());
        b.extend_from_slice(&e.publish_time.to_be_bytes());
        b.extend_from_slice(&e.payload);
        b
    }))
}

pub fn decode_elements(buf: &[u8]) -> Result<Vec<WireElement>, CodecError> {
    decode_seq(buf)?
        .into_iter()
        .map(|b| {
            let publish_time = read_u64(&b, 0)?;
            Ok(WireElement {
                publish_time,
                payload: b[8..].to_vec(),
            })
        })
        .collect()
}

const NO_KEY: u32 = u32::MAX;

pub fn encode_records(recs: &[LogRecord]) -> Vec<u8> {
    encode_seq(recs.iter().map(|r| {
        let mut b = Vec::with_capacity(24 + r.value.len());
        b.extend_from_slice(&r.partition.to_be_bytes());
        b.extend_from_slice(&r.offset.to_be_bytes());
        b.extend_from_slice(&r.publish_time.to_be_bytes());
        match &r.key {
            Some(k) => {
                b.extend_from_slice(&(k.len() as u32).to_be_bytes());
                b.extend_from_slice(k);
            }
            None => b.extend_from_slice(&NO_KEY.to_be_bytes()),
        }
        b.extend_from_slice(&r.value);
        b
    }))
}

pub fn decode_records(buf: &[u8]) -> Result<Vec<LogRecord>, CodecError> {
    decode_seq(buf)?
        .into_iter()
        .map(|b| {
            let partition = read_u32(&b, 0)?;
            let offset = read_u64(&b, 4)?;
            let publish_time = read_u64(&b, 12)?;
            let klen = read_u32(&b, 20)?;
            let mut pos = 24;
            let key = if klen == NO_KEY {
                None
            } else {
                let end = pos + klen as usize;
                let k = b.get(pos..end).ok_or(CodecError::Truncated(pos))?.to_vec();
                pos = end;
                Some(k)
            };
            Ok(LogRecord {
                partition,
                offset,
                key,
                value: b[pos..].to_vec(),
                publish_time,
            })
        })
        .collect()
}

pub fn encode_offsets(offsets: &[(u32, u64)]) -> String {
    offsets
        .iter()
        .map(|(p, o)| format!("{p}:{o}"))
        .collect::<Vec<_>>()
        .join(",")
}

pub fn decode_offsets(s: &str) -> Option<Vec<(u32, u64)>> {
    if s.is_empty() {
        return Some(Vec::new());
    }
    s.split(',')
        .map(|pair| {
            let (p, o) = pair.split_once(':')?;
            Some((p.parse().ok()?, o.parse().ok()?))
        })
        .collect()
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn unhex(s: &str) -> Option<Vec<u8>> {
    if !s.len().is_multiple_of(2) {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(s.get(i..i + 2)?, 16).ok())
        .collect()
}
