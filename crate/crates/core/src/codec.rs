//! Payload codecs.
//!
//! Stream elements and task values cross process boundaries as opaque bytes.
//! A [`Codec`] turns application values into those bytes; batches of
//! elements are carried as a sequence of length-prefixed blobs.

use std::marker::PhantomData;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("truncated length-prefixed sequence at byte {0}")]
    Truncated(usize),
    #[error("decode failed: {0}")]
    Decode(String),
}

pub trait Codec<T>: Send + Sync {
    fn encode(&self, value: &T) -> Vec<u8>;
    fn decode(&self, bytes: &[u8]) -> Result<T, CodecError>;
}

/// Identity codec over raw bytes.
#[derive(Debug, Clone, Copy, Default)]
pub struct RawCodec;

impl Codec<Vec<u8>> for RawCodec {
    fn encode(&self, value: &Vec<u8>) -> Vec<u8> {
        value.clone()
    }

    fn decode(&self, bytes: &[u8]) -> Result<Vec<u8>, CodecError> {
        Ok(bytes.to_vec())
    }
}

/// Canonical JSON encoding for structured record types.
pub struct JsonCodec<T>(PhantomData<fn() -> T>);

impl<T> Default for JsonCodec<T> {
    fn default() -> Self {
        JsonCodec(PhantomData)
    }
}

impl<T: Serialize + DeserializeOwned> Codec<T> for JsonCodec<T> {
    fn encode(&self, value: &T) -> Vec<u8> {
        serde_json::to_vec(value).expect("serializable value")
    }

    fn decode(&self, bytes: &[u8]) -> Result<T, CodecError> {
        serde_json::from_slice(bytes).map_err(|e| CodecError::Decode(e.to_string()))
    }
}

/// Concatenates items as `[u32 BE length][bytes]` blobs.
pub fn encode_seq<I, B>(items: I) -> Vec<u8>
where
    I: IntoIterator<Item = B>,
    B: AsRef<[u8]>,
{
    let mut out = Vec::new();
    for item in items {
        let item = item.as_ref();
        out.extend_from_slice(&(item.len() as u32).to_be_bytes());
        out.extend_from_slice(item);
    }
    out
}

pub fn decode_seq(buf: &[u8]) -> Result<Vec<Vec<u8>>, CodecError> {
    let mut items = Vec::new();
    let mut pos = 0;
    while pos < buf.len() {
        let len = read_u32(buf, pos)? as usize;
        pos += 4;
        let end = pos.checked_add(len).ok_or(CodecError::Truncated(pos))?;
        if end > buf.len() {
            return Err(CodecError::Truncated(pos));
        }
        items.push(buf[pos..end].to_vec());
        pos = end;
    }
    Ok(items)
}

pub(crate) fn read_u32(buf: &[u8], pos: usize) -> Result<u32, CodecError> {
    buf.get(pos..pos + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(CodecError::Truncated(pos))
}

pub(crate) fn read_u64(buf: &[u8], pos: usize) -> Result<u64, CodecError> {
    buf.get(pos..pos + 8)
        .map(|b| {
            let mut a = [0u8; 8];
            a.copy_from_slice(b);
            u64::from_be_bytes(a)
        })
        .ok_or(CodecError::Truncated(pos))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn seq_round_trips(items in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 0..64), 0..16)) {
            let decoded = decode_seq(&encode_seq(&items)).unwrap();
            prop_assert_eq!(decoded, items);
        }
    }

    #[test]
    fn truncated_seq_is_rejected() {
        let mut buf = encode_seq([b"hello".as_slice()]);
        buf.pop();
        assert!(matches!(decode_seq(&buf), Err(CodecError::Truncated(_))));
    }

    #[test]
    fn json_codec_round_trips_structs() {
        #[derive(serde::Serialize, serde::Deserialize, PartialEq, Debug)]
        struct Reading {
            sensor: u32,
            value: f64,
        }
        let codec = JsonCodec::<Reading>::default();
        let r = Reading { sensor: 3, value: 1.5 };
        assert_eq!(codec.decode(&codec.encode(&r)).unwrap(), r);
    }
}
