//! Chunked execution of Monte Carlo work.
//!
//! Work is cut into tasks indexed `0..n`; each task derives its own random
//! stream from its index, and the results come back in task order. The
//! output is therefore identical for every thread count. With the
//! `parallel` feature and more than one thread the tasks run on a rayon
//! pool; otherwise they run in a plain loop.

/// Samples drawn per task in the Monte Carlo routines.
pub const CHUNK: usize = 8192;

#[derive(Clone, Debug)]
pub struct Exec {
    threads: usize,
    #[cfg(feature = "parallel")]
    pool: Option<std::sync::Arc<rayon::ThreadPool>>,
}

impl Default for Exec {
    fn default() -> Self {
        Self::sequential()
    }
}

impl Exec {
    pub fn sequential() -> Self {
        Self {
            threads: 1,
            #[cfg(feature = "parallel")]
            pool: None,
        }
    }

    /// `threads == 0` means one thread per available core.
    pub fn with_threads(threads: usize) -> Self {
        let threads = if threads == 0 {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        } else {
            threads
        };
        #[cfg(feature = "parallel")]
        let pool = (threads > 1).then(|| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .expect("failed to build rayon pool");
            std::sync::Arc::new(pool)
        });
        Self {
            threads,
            #[cfg(feature = "parallel")]
            pool,
        }
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    /// Runs `task(0..n)` and returns the results in index order.
    pub fn map<T, F>(&self, n: usize, task: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let (Some(pool), true) = (&self.pool, n > 1) {
            use rayon::prelude::*;
            return pool.install(|| (0..n).into_par_iter().map(&task).collect());
        }
        (0..n).map(task).collect()
    }
}

/// Splits `total` items into chunks of at most `chunk`: `(start, len)` pairs.
pub fn chunks(total: usize, chunk: usize) -> Vec<(usize, usize)> {
    (0..total.div_ceil(chunk))
        .map(|i| {
            let start = i * chunk;
            (start, chunk.min(total - start))
        })
        .collect()
}
