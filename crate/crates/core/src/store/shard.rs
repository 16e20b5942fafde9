//! Shard files.
//!
//! A shard is a sequence of length-prefixed records:
//!
//! ```text
//! u32   payload length
//! u32   trajectory id
//! u32   frame index
//! f64×7 action (dpos, drot, gripper)
//! u8×(256·256·3)  rgb, row-major interleaved
//! f32×(256·256)   depth in meters, row-major     (rgbd variant only)
//! ```
//!
//! The sidecar `.idx` holds one u64 byte offset per record, pointing at the
//! length prefix. All integers and floats are little-endian.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use crc::{Crc, CRC_64_XZ};

use super::Variant;
use crate::config::{ACTION_DIM, OBS_PIXELS};
use crate::error::{Error, IoContext, Result};

pub(crate) static CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

pub const RGB_BYTES: usize = OBS_PIXELS * 3;
pub const DEPTH_BYTES: usize = OBS_PIXELS * 4;
const HEADER_BYTES: usize = 4 + 4 + ACTION_DIM * 8;

/// One stored training record.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub trajectory_id: u32,
    pub frame_index: u32,
    /// Raw (unnormalized) action.
    pub action: [f64; ACTION_DIM],
    pub rgb: Vec<u8>,
    pub depth: Option<Vec<f32>>,
}

/// Payload size of one record (excluding the length prefix).
pub fn payload_len(variant: Variant) -> usize {
    HEADER_BYTES
        + RGB_BYTES
        + match variant {
            Variant::RgbOnly => 0,
            Variant::Rgbd => DEPTH_BYTES,
        }
}

pub fn shard_file_name(i: usize) -> String {
    format!("shard_{i:05}.bin")
}

pub fn index_file_name(i: usize) -> String {
    format!("shard_{i:05}.idx")
}

pub(crate) fn encode_record(
    variant: Variant,
    trajectory_id: u32,
    frame_index: u32,
    action: &[f64; ACTION_DIM],
    rgb: &[u8],
    depth: Option<&[f32]>,
    out: &mut Vec<u8>,
) -> Result<()> {
    if rgb.len() != RGB_BYTES {
        return Err(Error::LengthMismatch(format!(
            "rgb has {} bytes, expected {RGB_BYTES}",
            rgb.len()
        )));
    }
    out.clear();
    out.extend_from_slice(&(payload_len(variant) as u32).to_le_bytes());
    out.extend_from_slice(&trajectory_id.to_le_bytes());
    out.extend_from_slice(&frame_index.to_le_bytes());
    for a in action {
        out.extend_from_slice(&a.to_le_bytes());
    }
    out.extend_from_slice(rgb);
    if variant == Variant::Rgbd {
        let depth = depth.ok_or_else(|| {
            Error::LengthMismatch("rgbd variant needs a depth map for every record".into())
        })?;
        if depth.len() != OBS_PIXELS {
            return Err(Error::LengthMismatch(format!(
                "depth has {} values, expected {OBS_PIXELS}",
                depth.len()
            )));
        }
        for d in depth {
            out.extend_from_slice(&d.to_le_bytes());
        }
    }
    debug_assert_eq!(out.len(), 4 + payload_len(variant));
    Ok(())
}

fn decode_record(variant: Variant, payload: &[u8]) -> Record {
    let u32_at = |o: usize| u32::from_le_bytes(payload[o..o + 4].try_into().unwrap());
    let action = std::array::from_fn(|i| {
        let o = 8 + 8 * i;
        f64::from_le_bytes(payload[o..o + 8].try_into().unwrap())
    });
    let rgb = payload[HEADER_BYTES..HEADER_BYTES + RGB_BYTES].to_vec();
    let depth = (variant == Variant::Rgbd).then(|| {
        payload[HEADER_BYTES + RGB_BYTES..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect()
    });
    Record {
        trajectory_id: u32_at(0),
        frame_index: u32_at(4),
        action,
        rgb,
        depth,
    }
}

/// Appends records to one shard and its index, hashing as it goes.
pub(crate) struct ShardWriter {
    bin_path: PathBuf,
    idx_path: PathBuf,
    bin: BufWriter<File>,
    offsets: Vec<u64>,
    pos: u64,
    digest: crc::Digest<'static, u64>,
}

pub(crate) struct FinishedShard {
    pub records: usize,
    pub bytes: u64,
    pub crc64: u64,
    pub index_crc64: u64,
}

impl ShardWriter {
    pub fn create(dir: &Path, i: usize) -> Result<Self> {
        let bin_path = dir.join(shard_file_name(i));
        let idx_path = dir.join(index_file_name(i));
        let bin = BufWriter::new(File::create(&bin_path).at(&bin_path)?);
        Ok(ShardWriter {
            bin_path,
            idx_path,
            bin,
            offsets: Vec::new(),
            pos: 0,
            digest: CRC64.digest(),
        })
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn push(&mut self, encoded: &[u8]) -> Result<()> {
        self.bin.write_all(encoded).at(&self.bin_path)?;
        self.digest.update(encoded);
        self.offsets.push(self.pos);
        self.pos += encoded.len() as u64;
        Ok(())
    }

    pub fn finish(mut self) -> Result<FinishedShard> {
        self.bin.flush().at(&self.bin_path)?;
        let idx: Vec<u8> = self.offsets.iter().flat_map(|o| o.to_le_bytes()).collect();
        std::fs::write(&self.idx_path, &idx).at(&self.idx_path)?;
        Ok(FinishedShard {
            records: self.offsets.len(),
            bytes: self.pos,
            crc64: self.digest.finalize(),
            index_crc64: CRC64.checksum(&idx),
        })
    }
}

pub(crate) fn crc64_of_file(path: &Path) -> Result<u64> {
    let mut f = File::open(path).at(path)?;
    let mut digest = CRC64.digest();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = f.read(&mut buf).at(path)?;
        if n == 0 {
            break;
        }
        digest.update(&buf[..n]);
    }
    Ok(digest.finalize())
}

/// A verified, open shard. Reads are positional, so one reader serves many threads.
#[derive(Debug)]
pub(crate) struct ShardReader {
    path: PathBuf,
    file: File,
    offsets: Vec<u64>,
    variant: Variant,
}

impl ShardReader {
    /// Verify checksums and the offsets index, then open for reading.
    pub fn open(
        bin_path: &Path,
        idx_path: &Path,
        variant: Variant,
        expected_records: usize,
        expected_crc: u64,
        expected_index_crc: u64,
    ) -> Result<Self> {
        let actual = crc64_of_file(bin_path)?;
        if actual != expected_crc {
            return Err(Error::ChecksumMismatch {
                path: bin_path.to_path_buf(),
                expected: expected_crc,
                actual,
            });
        }
        let idx = std::fs::read(idx_path).at(idx_path)?;
        let actual = CRC64.checksum(&idx);
        if actual != expected_index_crc {
            return Err(Error::ChecksumMismatch {
                path: idx_path.to_path_buf(),
                expected: expected_index_crc,
                actual,
            });
        }
        if idx.len() != 8 * expected_records {
            return Err(Error::CorruptDataset(format!(
                "{}: {} index bytes for {expected_records} records",
                idx_path.display(),
                idx.len()
            )));
        }
        let offsets: Vec<u64> = idx
            .chunks_exact(8)
            .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if offsets.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::CorruptDataset(format!(
                "{}: offsets not strictly increasing",
                idx_path.display()
            )));
        }
        let file = File::open(bin_path).at(bin_path)?;
        Ok(ShardReader {
            path: bin_path.to_path_buf(),
            file,
            offsets,
            variant,
        })
    }

    pub fn read(&self, local: usize) -> Result<Record> {
        let offset = *self.offsets.get(local).ok_or(Error::IndexOutOfRange {
            index: local,
            len: self.offsets.len(),
        })?;
        let mut len = [0u8; 4];
        self.file.read_exact_at(&mut len, offset).at(&self.path)?;
        let len = u32::from_le_bytes(len) as usize;
        if len != payload_len(self.variant) {
            return Err(Error::CorruptDataset(format!(
                "{}: record {local} has payload {len}, expected {}",
                self.path.display(),
                payload_len(self.variant)
            )));
        }
        let mut payload = vec![0u8; len];
        self.file
            .read_exact_at(&mut payload, offset + 4)
            .at(&self.path)?;
        Ok(decode_record(self.variant, &payload))
    }
}
