//! Binary message log ("bag"): `RSBG` magic followed by little-endian records of
//! `u32 topic id, u64 nanoseconds, u32 length, payload`.
//!
//! Topic ids are positions in the recording graph's topic declaration order.

use std::io::{self, Read, Write};
use std::time::Instant;

use parking_lot::Mutex;
use thiserror::Error;

use crate::geometry::{decode_ppm, encode_ppm, Frame};
use crate::graph::{Graph, Payload, RunError, RunOptions, RunReport};

pub const BAG_MAGIC: [u8; 4] = *b"RSBG";
const HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("bag offset {offset}: {message}")]
    Corrupt { offset: u64, message: String },
    #[error("bag offset {offset}: {source}")]
    Io { offset: u64, source: io::Error },
}

impl ReplayError {
    pub fn offset(&self) -> u64 {
        match self {
            ReplayError::Corrupt { offset, .. } | ReplayError::Io { offset, .. } => *offset,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BagRecord {
    pub topic_id: u32,
    pub nanos: u64,
    pub payload: Vec<u8>,
}

pub struct BagWriter<W: Write> {
    inner: W,
    records: u64,
}

impl<W: Write> BagWriter<W> {
    pub fn new(mut inner: W) -> io::Result<Self> {
        inner.write_all(&BAG_MAGIC)?;
        Ok(BagWriter { inner, records: 0 })
    }

    pub fn write(&mut self, topic_id: u32, nanos: u64, payload: &[u8]) -> io::Result<()> {
        let len = u32::try_from(payload.len()).map_err(|_| io::Error::other("payload exceeds 4 GiB"))?;
        let mut header = [0u8; HEADER_LEN];
        header[0..4].copy_from_slice(&topic_id.to_le_bytes());
        header[4..12].copy_from_slice(&nanos.to_le_bytes());
        header[12..16].copy_from_slice(&len.to_le_bytes());
        self.inner.write_all(&header)?;
        self.inner.write_all(payload)?;
        self.records += 1;
        Ok(())
    }

    pub fn records(&self) -> u64 {
        self.records
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Streams records; yields at most one error, then stops.
pub struct BagReader<R: Read> {
    inner: R,
    offset: u64,
    done: bool,
}

/// Reads until `buf` is full or the stream ends; returns bytes read.
fn fill<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(n)
}

impl<R: Read> BagReader<R> {
    pub fn new(mut inner: R) -> Result<Self, ReplayError> {
        let mut magic = [0u8; 4];
        let n = fill(&mut inner, &mut magic).map_err(|source| ReplayError::Io { offset: 0, source })?;
        if n < 4 {
            return Err(ReplayError::Corrupt { offset: n as u64, message: "truncated magic".into() });
        }
        if magic != BAG_MAGIC {
            return Err(ReplayError::Corrupt { offset: 0, message: format!("bad magic {magic:?}") });
        }
        Ok(BagReader { inner, offset: 4, done: false })
    }

    fn next_record(&mut self) -> Result<Option<BagRecord>, ReplayError> {
        let start = self.offset;
        let io_err = |source| ReplayError::Io { offset: start, source };
        let mut header = [0u8; HEADER_LEN];
        let n = fill(&mut self.inner, &mut header).map_err(io_err)?;
        if n == 0 {
            return Ok(None);
        }
        if n < HEADER_LEN {
            return Err(ReplayError::Corrupt {
                offset: start + n as u64,
                message: format!("truncated record header ({n} of {HEADER_LEN} bytes)"),
            });
        }
        let topic_id = u32::from_le_bytes(header[0..4].try_into().expect("4 bytes"));
        let nanos = u64::from_le_bytes(header[4..12].try_into().expect("8 bytes"));
        let len = u32::from_le_bytes(header[12..16].try_into().expect("4 bytes")) as usize;
        let mut payload = Vec::new();
        let got = (&mut self.inner).take(len as u64).read_to_end(&mut payload).map_err(io_err)?;
        if got < len {
            return Err(ReplayError::Corrupt {
                offset: start + (HEADER_LEN + got) as u64,
                message: format!("truncated payload ({got} of {len} bytes)"),
            });
        }
        self.offset = start + (HEADER_LEN + len) as u64;
        Ok(Some(BagRecord { topic_id, nanos, payload }))
    }
}

impl<R: Read> Iterator for BagReader<R> {
    type Item = Result<BagRecord, ReplayError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_record() {
            Ok(Some(r)) => Some(Ok(r)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

pub fn read_bag(bytes: &[u8]) -> Result<Vec<BagRecord>, ReplayError> {
    BagReader::new(bytes)?.collect()
}

/// Payloads recorded on one topic, in recording order.
pub fn replay_topic(records: &[BagRecord], topic_id: u32) -> impl Iterator<Item = Payload> + '_ {
    records.iter().filter(move |r| r.topic_id == topic_id).map(|r| Payload::from(r.payload.as_slice()))
}

/// Writes frames as PPM payloads on topic 0, each tagged with its filename.
pub fn write_frame_bag<W: Write>(sink: W, frames: &[(String, Frame)]) -> io::Result<W> {
    let mut w = BagWriter::new(sink)?;
    for (i, (name, frame)) in frames.iter().enumerate() {
        w.write(0, i as u64, &encode_ppm(frame, Some(name)))?;
    }
    w.finish()
}

/// Decodes PPM payloads on `topic_id` back into named frames. Frames without a
/// filename comment are named by their position.
pub fn replay_frames(records: &[BagRecord], topic_id: u32) -> Result<Vec<(String, Frame)>, ReplayError> {
    let mut offset = BAG_MAGIC.len() as u64;
    let mut out = Vec::new();
    for r in records {
        if r.topic_id == topic_id {
            let (frame, name) = decode_ppm(&r.payload)
                .map_err(|e| ReplayError::Corrupt { offset, message: format!("record payload: {e}") })?;
            out.push((name.unwrap_or_else(|| format!("frame_{:06}.ppm", out.len())), frame));
        }
        offset += (HEADER_LEN + r.payload.len()) as u64;
    }
    Ok(out)
}

/// Runs `g` while logging every message published on `topics`.
pub fn record_bag<I, W>(
    g: &mut Graph,
    source: I,
    n_frames: usize,
    opts: RunOptions,
    topics: &[&str],
    sink: W,
) -> Result<(RunReport, W), RunError>
where
    I: Iterator<Item = Payload> + Send,
    W: Write + Send,
{
    let mut wanted = vec![false; g.topic_names().len()];
    for t in topics {
        let id = g.topic_id(t).ok_or_else(|| RunError::UnknownTopic(t.to_string()))?;
        wanted[id] = true;
    }
    let writer = Mutex::new(BagWriter::new(sink)?);
    let failure: Mutex<Option<io::Error>> = Mutex::new(None);
    let t0 = Instant::now();
    let tap = |topic: usize, payload: &[u8]| {
        if !wanted[topic] {
            return;
        }
        let nanos = t0.elapsed().as_nanos() as u64;
        if let Err(e) = writer.lock().write(topic as u32, nanos, payload) {
            failure.lock().get_or_insert(e);
        }
    };
    let report = g.run_tapped(source, n_frames, opts, Some(&tap))?;
    if let Some(e) = failure.into_inner() {
        return Err(e.into());
    }
    Ok((report, writer.into_inner().finish()?))
}
