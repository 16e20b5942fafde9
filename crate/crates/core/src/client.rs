//! Flat dataset API for foreign-language bindings: open, count, stats,
//! batch iteration, get_item and close. Buffers are returned by value.

use std::path::Path;
use std::sync::Arc;

use crate::config::ACTION_DIM;
use crate::error::{Error, Result};
use crate::loader::{batch_iter, get_item, Batch, BatchIter, BatchSpec};
use crate::store::{open_dataset, stats_report, DatasetHandle, StatsTable};
use crate::trajectory::NormStats;

pub struct DatasetClient {
    handle: Option<Arc<DatasetHandle>>,
    iter: Option<BatchIter>,
}

impl DatasetClient {
    pub fn open(manifest_path: impl AsRef<Path>) -> Result<Self> {
        Ok(DatasetClient {
            handle: Some(Arc::new(open_dataset(manifest_path)?)),
            iter: None,
        })
    }

    fn handle(&self) -> Result<&Arc<DatasetHandle>> {
        self.handle.as_ref().ok_or(Error::HandleClosed)
    }

    pub fn count(&self) -> Result<usize> {
        Ok(self.handle()?.len())
    }

    pub fn norm_stats(&self) -> Result<NormStats> {
        Ok(*self.handle()?.norm_stats())
    }

    pub fn stats(&self) -> Result<StatsTable> {
        Ok(stats_report(self.handle()?))
    }

    /// Start (or restart) iteration over one epoch.
    pub fn start_epoch(&mut self, spec: &BatchSpec, epoch: u64) -> Result<()> {
        let h = self.handle()?.clone();
        self.iter = Some(batch_iter(h, spec, epoch)?);
        Ok(())
    }

    /// Next batch of the current epoch, or `None` at its end.
    pub fn next_batch(&mut self) -> Result<Option<Batch>> {
        self.handle()?;
        match self.iter.as_mut().and_then(Iterator::next) {
            Some(b) => b.map(Some),
            None => {
                self.iter = None;
                Ok(None)
            }
        }
    }

    pub fn get_item(&self, index: usize) -> Result<(Vec<f32>, [f32; ACTION_DIM])> {
        get_item(self.handle()?, index)
    }

    pub fn close(&mut self) {
        self.iter = None;
        self.handle = None;
    }

    pub fn is_closed(&self) -> bool {
        self.handle.is_none()
    }
}
