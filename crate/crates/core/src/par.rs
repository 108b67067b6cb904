//! Index-ordered parallel map.
//!
//! Results are always returned in index order, so reductions over them are
//! independent of the worker count. Without the `parallel` feature the
//! parallel variant runs sequentially.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

/// `(0..n).map(f)` with a per-worker scratch state built by `init`.
pub fn map_indexed_with<S, T, I, F>(n: usize, exec: Execution, init: I, f: F) -> Vec<T>
where
    T: Send,
    I: Fn() -> S + Sync + Send,
    F: Fn(&mut S, usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map_init(&init, |s, i| f(s, i)).collect()
        }
        _ => {
            let mut state = init();
            (0..n).map(|i| f(&mut state, i)).collect()
        }
    }
}

pub fn map_indexed<T, F>(n: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    map_indexed_with(n, exec, || (), |_, i| f(i))
}

/// Number of workers the parallel variant will use.
pub fn workers(exec: Execution) -> usize {
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => rayon::current_num_threads(),
        _ => 1,
    }
}
