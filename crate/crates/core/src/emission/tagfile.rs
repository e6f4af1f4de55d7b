//! Time-tag files. The binary form is little-endian: a 16-byte header
//! (`QTT1`, u32 channel count, u64 record count) followed by 16-byte
//! records (u8 channel, 7 zero bytes, u64 time in ps). Records are
//! ordered by time, then channel. The CSV form has a `channel,time_ps`
//! header and one record per line in the same order.

use super::TimeTagStream;
use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::fmt::Write as _;

const MAGIC: &[u8; 4] = b"QTT1";

/// All records of the streams, ordered by (time, channel).
pub fn records(streams: &[TimeTagStream]) -> Vec<(u8, u64)> {
    let mut r: Vec<(u8, u64)> = streams
        .iter()
        .flat_map(|s| s.tags.iter().map(move |&t| (s.channel, t)))
        .collect();
    r.sort_unstable_by_key(|&(c, t)| (t, c));
    r
}

/// Regroups records into one stream per channel, in channel order.
pub fn streams_from_records(records: &[(u8, u64)]) -> Vec<TimeTagStream> {
    let mut by_channel: BTreeMap<u8, Vec<u64>> = BTreeMap::new();
    for &(c, t) in records {
        by_channel.entry(c).or_default().push(t);
    }
    by_channel
        .into_iter()
        .map(|(c, mut tags)| {
            tags.sort_unstable();
            TimeTagStream::new(c, tags)
        })
        .collect()
}

pub fn to_binary(streams: &[TimeTagStream]) -> Vec<u8> {
    let recs = records(streams);
    let mut out = Vec::with_capacity(16 + 16 * recs.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(streams.len() as u32).to_le_bytes());
    out.extend_from_slice(&(recs.len() as u64).to_le_bytes());
    for (c, t) in recs {
        out.push(c);
        out.extend_from_slice(&[0u8; 7]);
        out.extend_from_slice(&t.to_le_bytes());
    }
    out
}

/// Parses the binary form. Streams listed in the header without any
/// record are not recoverable and are omitted.
pub fn from_binary(bytes: &[u8]) -> Result<Vec<TimeTagStream>> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing QTT1 header".into()));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let body = &bytes[16..];
    if (body.len() as u64) != n.saturating_mul(16) {
        return Err(Error::Format(format!(
            "header announces {n} records but {} bytes follow",
            body.len()
        )));
    }
    let mut recs = Vec::with_capacity(n as usize);
    for (k, rec) in body.chunks_exact(16).enumerate() {
        if rec[1..8].iter().any(|&b| b != 0) {
            return Err(Error::Format(format!("record {k}: non-zero padding")));
        }
        recs.push((rec[0], u64::from_le_bytes(rec[8..16].try_into().expect("8 bytes"))));
    }
    Ok(streams_from_records(&recs))
}

pub fn to_csv(streams: &[TimeTagStream]) -> String {
    let mut s = String::from("channel,time_ps\n");
    for (c, t) in records(streams) {
        let _ = writeln!(s, "{c},{t}");
    }
    s
}

pub fn from_csv(text: &str) -> Result<Vec<TimeTagStream>> {
    let mut recs = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (k == 0 && line.starts_with("channel")) {
            continue;
        }
        let bad = || Error::Format(format!("line {}: expected channel,time_ps", k + 1));
        let (c, t) = line.split_once(',').ok_or_else(bad)?;
        let c: u8 = c.trim().parse().map_err(|_| bad())?;
        let t: u64 = t.trim().parse().map_err(|_| bad())?;
        recs.push((c, t));
    }
    Ok(streams_from_records(&recs))
}
