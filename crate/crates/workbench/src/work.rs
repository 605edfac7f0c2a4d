//! Simulated task work and checksum-bearing payloads.
//!
//! A payload is `[id: u64 BE][filler][checksum: u64 BE]`, where the checksum
//! covers everything before it. Work is a sleep, so benchmarks measure the
//! runtime rather than the host CPU.

use std::time::{Duration, Instant};

const MIN_PAYLOAD: usize = 16;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// A payload of `size` bytes (at least 16) carrying `id`.
pub fn make_payload(id: u64, size: usize) -> Vec<u8> {
    let size = size.max(MIN_PAYLOAD);
    let mut out = Vec::with_capacity(size);
    out.extend_from_slice(&id.to_be_bytes());
    let mut x = id.wrapping_mul(0x9e37_79b9_7f4a_7c15) | 1;
    while out.len() < size - 8 {
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        out.push(x as u8);
    }
    let sum = fnv1a(&out);
    out.extend_from_slice(&sum.to_be_bytes());
    out
}

/// The id carried by a payload, if its checksum holds.
pub fn verify_payload(p: &[u8]) -> Option<u64> {
    if p.len() < MIN_PAYLOAD {
        return None;
    }
    let (body, sum) = p.split_at(p.len() - 8);
    (fnv1a(body).to_be_bytes() == sum).then(|| u64::from_be_bytes(body[..8].try_into().expect("8 bytes")))
}

/// Checksum over a sequence of blobs, order-sensitive.
pub fn digest<'a>(parts: impl IntoIterator<Item = &'a [u8]>) -> u64 {
    let mut h = fnv1a(&[]);
    for p in parts {
        h = fnv1a(&[h.to_be_bytes().as_slice(), &fnv1a(p).to_be_bytes()].concat());
    }
    h
}

pub fn work(ms: f64) {
    if ms > 0.0 {
        std::thread::sleep(Duration::from_secs_f64(ms / 1e3));
    }
}

/// Sleeps until `start + offset_ms`, so periodic loops do not drift.
pub fn sleep_until(start: Instant, offset_ms: f64) {
    let target = start + Duration::from_secs_f64(offset_ms.max(0.0) / 1e3);
    let now = Instant::now();
    if target > now {
        std::thread::sleep(target - now);
    }
}

pub fn elapsed_ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}
