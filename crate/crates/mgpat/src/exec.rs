use rayon::prelude::*;

use mgpat_core::Executor;

use crate::error::{Error, Result};

/// Ordered parallel map on a dedicated rayon pool.
#[derive(Debug)]
pub struct Rayon {
    pool: rayon::ThreadPool,
}

impl Rayon {
    /// `workers == 0` sizes the pool to the machine.
    pub fn new(workers: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
        Ok(Self { pool })
    }

    pub fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for Rayon {
    fn map<T: Sync, R: Send, F: Fn(&T) -> R + Sync + Send>(&self, items: &[T], f: F) -> Vec<R> {
        self.pool.install(|| items.par_iter().map(&f).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_order() {
        let exec = Rayon::new(4).unwrap();
        let items: Vec<u64> = (0..1000).collect();
        assert_eq!(exec.map(&items, |x| x * 2), items.iter().map(|x| x * 2).collect::<Vec<_>>());
    }
}
