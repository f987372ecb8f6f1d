//! The `RTFS` sample file.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "RTFS"
//! 4       2     format version, u16 LE (currently 1)
//! 6       4     metadata length L, u32 LE
//! 10      L     metadata, UTF-8 JSON (SeriesMeta)
//! 10+L    16*n  records: seq u64 LE, latency_ns u64 LE
//! end-8   8     CRC-64/XZ over every preceding byte, u64 LE
//! ```
//!
//! The record count is implied by the file length and cross-checked against
//! the `n` field of the metadata.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crc::{Crc, Digest, Table, CRC_64_XZ};
use rtlat_core::{LatencySample, TimeNs};

use crate::error::{Error, Result};
use crate::series::{SampleSeries, SeriesMeta};

pub const MAGIC: &[u8; 4] = b"RTFS";
pub const FORMAT_VERSION: u16 = 1;
pub const RECORD_SIZE: u64 = 16;
const HEADER_FIXED: u64 = 4 + 2 + 4;
const TRAILER: u64 = 8;

static CRC64: Crc<u64, Table<16>> = Crc::<u64, Table<16>>::new(&CRC_64_XZ);

const CHUNK_RECORDS: usize = 4096;

/// Serializes a series to any writer.
pub fn write_series<W: Write>(out: W, series: &SampleSeries) -> Result<()> {
    let mut out = out;
    let mut digest = CRC64.digest();
    let mut meta = series.meta.clone();
    meta.n = series.samples.len() as u64;
    let json = serde_json::to_vec(&meta)?;
    let meta_len = u32::try_from(json.len())
        .map_err(|_| Error::config("metadata block larger than 4 GiB"))?;

    let mut put = |bytes: &[u8], digest: &mut Digest<'_, u64, Table<16>>| -> Result<()> {
        digest.update(bytes);
        out.write_all(bytes)?;
        Ok(())
    };
    put(MAGIC, &mut digest)?;
    put(&FORMAT_VERSION.to_le_bytes(), &mut digest)?;
    put(&meta_len.to_le_bytes(), &mut digest)?;
    put(&json, &mut digest)?;

    let mut buf = Vec::with_capacity(CHUNK_RECORDS * RECORD_SIZE as usize);
    for chunk in series.samples.chunks(CHUNK_RECORDS) {
        buf.clear();
        for s in chunk {
            buf.extend_from_slice(&s.seq.to_le_bytes());
            buf.extend_from_slice(&s.latency.as_ns().to_le_bytes());
        }
        put(&buf, &mut digest)?;
    }
    let crc = digest.finalize();
    out.write_all(&crc.to_le_bytes())?;
    out.flush()?;
    Ok(())
}

/// Writes `series` to `path` through a temporary file and a rename, so a
/// crash never leaves a half-written file under the final name.
pub fn persist_samples(series: &SampleSeries, path: &Path) -> Result<()> {
    let tmp = tmp_path(path);
    let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut writer = BufWriter::with_capacity(1 << 20, file);
    write_series(&mut writer, series).map_err(|e| with_path(e, &tmp))?;
    let file = writer
        .into_inner()
        .map_err(|e| Error::io(&tmp, e.into_error()))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    path.with_file_name(name)
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::RawIo(source) => Error::io(path, source),
        other => other,
    }
}

/// Streaming reader: metadata up front, then records one at a time. The
/// checksum is verified once the last record has been read; a mismatch is
/// reported as the final item.
pub struct SampleReader {
    path: PathBuf,
    input: BufReader<File>,
    meta: SeriesMeta,
    digest: Digest<'static, u64, Table<16>>,
    remaining: u64,
    finished: bool,
}

impl SampleReader {
    pub fn open(path: &Path) -> Result<Self> {
        let corrupt = |reason: &str| Error::Corrupt {
            path: path.to_path_buf(),
            reason: reason.into(),
        };
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let len = file.metadata().map_err(|e| Error::io(path, e))?.len();
        let mut input = BufReader::with_capacity(1 << 20, file);
        let mut digest = CRC64.digest();

        if len < HEADER_FIXED + TRAILER {
            return Err(corrupt("file too short"));
        }
        let mut fixed = [0u8; HEADER_FIXED as usize];
        input.read_exact(&mut fixed).map_err(|e| Error::io(path, e))?;
        digest.update(&fixed);
        if &fixed[0..4] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u16::from_le_bytes([fixed[4], fixed[5]]);
        if version != FORMAT_VERSION {
            return Err(corrupt(&format!("unsupported format version {version}")));
        }
        let meta_len = u32::from_le_bytes([fixed[6], fixed[7], fixed[8], fixed[9]]) as u64;
        let body = len
            .checked_sub(HEADER_FIXED + meta_len + TRAILER)
            .ok_or_else(|| corrupt("metadata length exceeds file size"))?;
        if body % RECORD_SIZE != 0 {
            return Err(corrupt("record region is not a whole number of records"));
        }
        let mut json = vec![0u8; meta_len as usize];
        input.read_exact(&mut json).map_err(|e| Error::io(path, e))?;
        digest.update(&json);
        let meta: SeriesMeta =
            serde_json::from_slice(&json).map_err(|e| corrupt(&format!("metadata: {e}")))?;
        let remaining = body / RECORD_SIZE;
        if meta.n != remaining {
            return Err(corrupt(&format!(
                "metadata announces {} records, file holds {remaining}",
                meta.n
            )));
        }
        Ok(SampleReader {
            path: path.to_path_buf(),
            input,
            meta,
            digest,
            remaining,
            finished: false,
        })
    }

    pub fn meta(&self) -> &SeriesMeta {
        &self.meta
    }

    pub fn len(&self) -> u64 {
        self.meta.n
    }

    pub fn is_empty(&self) -> bool {
        self.meta.n == 0
    }

    fn verify_trailer(&mut self) -> Result<()> {
        let mut trailer = [0u8; 8];
        self.input
            .read_exact(&mut trailer)
            .map_err(|e| Error::io(&self.path, e))?;
        let expected = u64::from_le_bytes(trailer);
        let digest = std::mem::replace(&mut self.digest, CRC64.digest());
        if digest.finalize() != expected {
            return Err(Error::Corrupt {
                path: self.path.clone(),
                reason: "checksum mismatch".into(),
            });
        }
        Ok(())
    }

    /// Reads up to `max` records into `out` (cleared first). Returns the
    /// number read; zero means the file is exhausted and its checksum held.
    pub fn read_chunk(&mut self, out: &mut Vec<LatencySample>, max: usize) -> Result<usize> {
        out.clear();
        if self.finished {
            return Ok(0);
        }
        let take = (self.remaining.min(max as u64)) as usize;
        if take == 0 {
            self.finished = true;
            self.verify_trailer()?;
            return Ok(0);
        }
        let mut bytes = vec![0u8; take * RECORD_SIZE as usize];
        self.input
            .read_exact(&mut bytes)
            .map_err(|e| Error::io(&self.path, e))?;
        self.digest.update(&bytes);
        out.extend(bytes.chunks_exact(RECORD_SIZE as usize).map(|r| {
            let mut seq = [0u8; 8];
            let mut lat = [0u8; 8];
            seq.copy_from_slice(&r[..8]);
            lat.copy_from_slice(&r[8..]);
            LatencySample {
                seq: u64::from_le_bytes(seq),
                latency: TimeNs(u64::from_le_bytes(lat)),
            }
        }));
        self.remaining -= take as u64;
        Ok(take)
    }

    /// Feeds every record to `f`, then checks the trailer.
    pub fn for_each_chunk(mut self, mut f: impl FnMut(&[LatencySample])) -> Result<SeriesMeta> {
        let mut buf = Vec::with_capacity(CHUNK_RECORDS * 16);
        while self.read_chunk(&mut buf, CHUNK_RECORDS * 16)? > 0 {
            f(&buf);
        }
        Ok(self.meta)
    }
}

pub fn load_samples(path: &Path) -> Result<SampleSeries> {
    let reader = SampleReader::open(path)?;
    let mut samples = Vec::with_capacity(reader.len() as usize);
    let meta = reader.for_each_chunk(|chunk| samples.extend_from_slice(chunk))?;
    Ok(SampleSeries { meta, samples })
}

/// Metadata only; the checksum is not verified.
pub fn read_meta(path: &Path) -> Result<SeriesMeta> {
    Ok(SampleReader::open(path)?.meta)
}
