//! Deterministic batch iteration over an open dataset.

use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::Arc;
use std::thread::JoinHandle;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ACTION_DIM, OBS_LEN, OBS_PIXELS};
use crate::error::{Error, Result};
use crate::store::{DatasetHandle, Record};
use crate::trajectory::{normalize_action, Action7, NormStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSpec {
    pub batch_size: usize,
    pub shuffle: bool,
    pub seed: u64,
    /// Batches materialized ahead of the consumer; 0 reads on demand.
    pub prefetch_depth: usize,
    pub drop_last: bool,
}

impl Default for BatchSpec {
    fn default() -> Self {
        BatchSpec {
            batch_size: crate::config::DEFAULT_BATCH_SIZE,
            shuffle: true,
            seed: 0,
            prefetch_depth: 2,
            drop_last: false,
        }
    }
}

impl BatchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// `obs` is `len × 4 × 256 × 256` (R, G, B in [0,1], then depth in meters);
/// `act` is `len × 7`, normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub obs: Vec<f32>,
    pub act: Vec<f32>,
    /// Global record indices, in batch order.
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn obs_at(&self, i: usize) -> &[f32] {
        &self.obs[i * OBS_LEN..(i + 1) * OBS_LEN]
    }

    pub fn act_at(&self, i: usize) -> &[f32] {
        &self.act[i * ACTION_DIM..(i + 1) * ACTION_DIM]
    }
}

/// Visiting order for one epoch: identity, or a Fisher–Yates shuffle seeded
/// with `seed ^ epoch`.
pub fn epoch_order(n: usize, seed: u64, epoch: u64, shuffle: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch);
        order.shuffle(&mut rng);
    }
    order
}

/// Build the 4-channel CHW observation from stored HWC rgb bytes and depth.
pub fn observation_from_parts(rgb: &[u8], depth: Option<&[f32]>, out: &mut [f32]) {
    debug_assert_eq!(out.len(), OBS_LEN);
    let (color, d) = out.split_at_mut(3 * OBS_PIXELS);
    for (p, px) in rgb.chunks_exact(3).enumerate() {
        for c in 0..3 {
            color[c * OBS_PIXELS + p] = px[c] as f32 / 255.0;
        }
    }
    match depth {
        Some(depth) => d.copy_from_slice(depth),
        None => d.fill(0.0),
    }
}

pub fn observation(record: &Record) -> Vec<f32> {
    let mut out = vec![0.0; OBS_LEN];
    observation_from_parts(&record.rgb, record.depth.as_deref(), &mut out);
    out
}

fn normalized_f32(action: &[f64; ACTION_DIM], stats: &NormStats) -> [f32; ACTION_DIM] {
    normalize_action(&Action7::from_array(action), stats).map(|v| v as f32)
}

/// The record at a global position as `(observation, normalized action)`.
pub fn get_item(handle: &DatasetHandle, index: usize) -> Result<(Vec<f32>, [f32; ACTION_DIM])> {
    let r = handle.read_record(index)?;
    Ok((observation(&r), normalized_f32(&r.action, handle.norm_stats())))
}

fn materialize(handle: &DatasetHandle, indices: &[usize]) -> Result<Batch> {
    let mut obs = vec![0.0f32; indices.len() * OBS_LEN];
    let mut act = vec![0.0f32; indices.len() * ACTION_DIM];
    let stats = handle.norm_stats();
    obs.par_chunks_mut(OBS_LEN)
        .zip(act.par_chunks_mut(ACTION_DIM))
        .zip(indices.par_iter())
        .try_for_each(|((o, a), &i)| {
            let r = handle.read_record(i)?;
            observation_from_parts(&r.rgb, r.depth.as_deref(), o);
            a.copy_from_slice(&normalized_f32(&r.action, stats));
            Ok::<_, Error>(())
        })?;
    Ok(Batch {
        obs,
        act,
        indices: indices.to_vec(),
    })
}

fn plan(n: usize, spec: &BatchSpec, epoch: u64) -> Vec<Vec<usize>> {
    let order = epoch_order(n, spec.seed, epoch, spec.shuffle);
    order
        .chunks(spec.batch_size)
        .filter(|c| !spec.drop_last || c.len() == spec.batch_size)
        .map(<[usize]>::to_vec)
        .collect()
}

enum Source {
    Direct {
        handle: Arc<DatasetHandle>,
        batches: std::vec::IntoIter<Vec<usize>>,
    },
    Prefetch {
        rx: Receiver<Result<Batch>>,
        worker: Option<JoinHandle<()>>,
    },
}

/// One epoch of batches. Yields `Err` once and stops if a read fails.
pub struct BatchIter {
    source: Source,
    remaining: usize,
    failed: bool,
}

/// Iterate epoch `epoch` of `handle` under `spec`.
pub fn batch_iter(handle: Arc<DatasetHandle>, spec: &BatchSpec, epoch: u64) -> Result<BatchIter> {
    spec.validate()?;
    let batches = plan(handle.len(), spec, epoch);
    let remaining = batches.len();
    let source = if spec.prefetch_depth == 0 {
        Source::Direct {
            handle,
            batches: batches.into_iter(),
        }
    } else {
        let (tx, rx) = sync_channel(spec.prefetch_depth);
        let worker = std::thread::spawn(move || {
            for idx in batches {
                let b = materialize(&handle, &idx);
                let stop = b.is_err();
                if tx.send(b).is_err() || stop {
                    break;
                }
            }
        });
        Source::Prefetch {
            rx,
            worker: Some(worker),
        }
    };
    Ok(BatchIter {
        source,
        remaining,
        failed: false,
    })
}

impl Iterator for BatchIter {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.remaining == 0 {
            return None;
        }
        let item = match &mut self.source {
            Source::Direct { handle, batches } => batches.next().map(|idx| materialize(handle, &idx)),
            Source::Prefetch { rx, .. } => rx.recv().ok(),
        }?;
        self.remaining -= 1;
        self.failed = item.is_err();
        Some(item)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (0, Some(self.remaining))
    }
}

impl Drop for BatchIter {
    fn drop(&mut self) {
        if let Source::Prefetch { rx, worker } = &mut self.source {
            // Unblock the producer before joining it.
            drop(std::mem::replace(rx, sync_channel(0).1));
            if let Some(w) = worker.take() {
                let _ = w.join();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::tests::fixture_trajectories;
    use crate::store::{open_dataset, write_shards, Variant};

    fn dataset(n_traj: usize, per: usize, variant: Variant) -> (tempfile::TempDir, Arc<DatasetHandle>) {
        let tmp = tempfile::tempdir().unwrap();
        write_shards(&fixture_trajectories(n_traj, per, 21), tmp.path(), variant, 7).unwrap();
        let h = Arc::new(open_dataset(tmp.path()).unwrap());
        (tmp, h)
    }

    fn epoch(h: &Arc<DatasetHandle>, spec: &BatchSpec, e: u64) -> Vec<Batch> {
        batch_iter(h.clone(), spec, e).unwrap().map(Result::unwrap).collect()
    }

    #[test]
    fn batch_sizes() {
        let (_t, h) = dataset(25, 4, Variant::RgbOnly);
        let spec = BatchSpec {
            batch_size: 32,
            shuffle: true,
            seed: 1,
            prefetch_depth: 0,
            drop_last: false,
        };
        let sizes: Vec<usize> = epoch(&h, &spec, 0).iter().map(Batch::len).collect();
        assert_eq!(sizes, vec![32, 32, 32, 4]);
        let sizes: Vec<usize> = epoch(&h, &BatchSpec { drop_last: true, ..spec }, 0)
            .iter()
            .map(Batch::len)
            .collect();
        assert_eq!(sizes, vec![32, 32, 32]);
    }

    #[test]
    fn coverage_and_determinism() {
        let (_t, h) = dataset(6, 5, Variant::Rgbd);
        let spec = BatchSpec {
            batch_size: 4,
            shuffle: true,
            seed: 7,
            prefetch_depth: 0,
            drop_last: false,
        };
        let a = epoch(&h, &spec, 3);
        assert_eq!(a, epoch(&h, &spec, 3));
        assert_ne!(a[0].indices, epoch(&h, &spec, 4)[0].indices);
        let mut seen: Vec<usize> = a.iter().flat_map(|b| b.indices.clone()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..30).collect::<Vec<_>>());
    }

    #[test]
    fn prefetch_is_transparent() {
        let (_t, h) = dataset(5, 5, Variant::Rgbd);
        let base = BatchSpec {
            batch_size: 6,
            shuffle: true,
            seed: 2,
            prefetch_depth: 0,
            drop_last: false,
        };
        let direct = epoch(&h, &base, 1);
        for depth in [1, 4] {
            assert_eq!(epoch(&h, &BatchSpec { prefetch_depth: depth, ..base }, 1), direct);
        }
    }

    #[test]
    fn get_item_matches_unshuffled_epoch() {
        let tmp = tempfile::tempdir().unwrap();
        let trajs = fixture_trajectories(3, 4, 22);
        write_shards(&trajs, tmp.path(), Variant::Rgbd, 5).unwrap();
        let h = Arc::new(open_dataset(tmp.path()).unwrap());

        // first record against the generator's bytes
        let (obs, act) = get_item(&h, 0).unwrap();
        let (frame, action) = &trajs[0].samples[0];
        assert_eq!(obs[0], frame.rgb[0] as f32 / 255.0);
        assert_eq!(obs[OBS_PIXELS + 1], frame.rgb[4] as f32 / 255.0);
        assert_eq!(&obs[3 * OBS_PIXELS..], frame.depth.as_slice());
        let want = normalize_action(action, h.norm_stats());
        for i in 0..ACTION_DIM {
            assert_eq!(act[i], want[i] as f32);
        }

        let spec = BatchSpec {
            batch_size: 5,
            shuffle: false,
            seed: 0,
            prefetch_depth: 2,
            drop_last: false,
        };
        let batches = epoch(&h, &spec, 0);
        let obs: Vec<f32> = batches.iter().flat_map(|b| b.obs.clone()).collect();
        let act: Vec<f32> = batches.iter().flat_map(|b| b.act.clone()).collect();
        let mut obs2 = Vec::new();
        let mut act2 = Vec::new();
        for i in 0..h.len() {
            let (o, a) = get_item(&h, i).unwrap();
            obs2.extend(o);
            act2.extend(a);
        }
        assert_eq!(obs, obs2);
        assert_eq!(act, act2);
        assert!(matches!(get_item(&h, h.len()), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn rgb_only_has_zero_depth() {
        let (_t, h) = dataset(2, 2, Variant::RgbOnly);
        let (obs, _) = get_item(&h, 1).unwrap();
        assert!(obs[3 * OBS_PIXELS..].iter().all(|&d| d == 0.0));
        assert!(obs.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn checksum_error_propagates() {
        let tmp = tempfile::tempdir().unwrap();
        write_shards(&fixture_trajectories(2, 4, 23), tmp.path(), Variant::RgbOnly, 4).unwrap();
        let p = tmp.path().join("shard_00000.bin");
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[99] ^= 1;
        std::fs::write(&p, bytes).unwrap();
        let h = Arc::new(open_dataset(tmp.path()).unwrap());
        for depth in [0, 2] {
            let spec = BatchSpec {
                batch_size: 3,
                shuffle: false,
                seed: 0,
                prefetch_depth: depth,
                drop_last: false,
            };
            let items: Vec<_> = batch_iter(h.clone(), &spec, 0).unwrap().collect();
            assert_eq!(items.len(), 1);
            assert!(matches!(items[0], Err(Error::ChecksumMismatch { .. })));
        }
    }

    #[test]
    fn early_drop_does_not_hang() {
        let (_t, h) = dataset(6, 5, Variant::Rgbd);
        let spec = BatchSpec {
            batch_size: 2,
            shuffle: true,
            seed: 0,
            prefetch_depth: 1,
            drop_last: false,
        };
        let mut it = batch_iter(h, &spec, 0).unwrap();
        assert!(it.next().is_some());
        drop(it);
    }
}
