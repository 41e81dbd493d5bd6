//! Order-preserving fan-out over independent work items.
//!
//! With the `parallel` feature the work runs on rayon; without it (or with
//! [`Execution::Sequential`]) it runs in a plain loop. Results always come
//! back in input order, so callers reduce them deterministically.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Falls back to sequential when built without the `parallel` feature.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    /// Maps `f` over `items`, returning results in input order.
    pub fn map<T, U, F>(self, items: &[T], f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> U + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel if items.len() > 1 => items.par_iter().map(f).collect(),
            _ => items.iter().map(f).collect(),
        }
    }

    /// Like [`Execution::map`] but caps concurrency at `width` workers.
    pub fn map_bounded<T, U, F>(self, items: &[T], width: usize, f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> U + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel if items.len() > 1 && width > 1 => {
                let threads = width.min(items.len());
                if threads == rayon::current_num_threads() {
                    return items.par_iter().map(f).collect();
                }
                match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
                    Ok(pool) => pool.install(|| items.par_iter().map(f).collect()),
                    Err(_) => items.iter().map(f).collect(),
                }
            }
            _ => {
                let _ = width;
                items.iter().map(f).collect()
            }
        }
    }
}
