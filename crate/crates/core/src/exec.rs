//! Data-parallel map with a sequential fallback.
//!
//! Results always come back in input order, and callers reduce them in that
//! order, so parallel and sequential runs produce identical bits.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExecMode {
    #[default]
    Parallel,
    Sequential,
}

/// Whether the crate was built with the `parallel` feature.
pub fn parallel_available() -> bool {
    cfg!(feature = "parallel")
}

/// `f(0), .., f(n - 1)` in order.
pub fn map_indexed<R, F>(n: usize, mode: ExecMode, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode == ExecMode::Parallel && n > 1 {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = mode;
    (0..n).map(f).collect()
}

/// Fixed-size chunks of `0..n`.
pub fn chunks(n: usize, size: usize) -> Vec<std::ops::Range<usize>> {
    let size = size.max(1);
    (0..n.div_ceil(size))
        .map(|c| c * size..((c + 1) * size).min(n))
        .collect()
}

/// Size the global worker pool. Fails if it was already initialized.
pub fn set_threads(n: usize) -> Result<(), String> {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| e.to_string())
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = n;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunk_cover() {
        let c = chunks(10, 4);
        assert_eq!(c, vec![0..4, 4..8, 8..10]);
        assert!(chunks(0, 4).is_empty());
    }

    #[test]
    fn order_preserved() {
        let a = map_indexed(100, ExecMode::Parallel, |i| i * i);
        let b = map_indexed(100, ExecMode::Sequential, |i| i * i);
        assert_eq!(a, b);
    }
}
