//! Sequential or rayon-backed execution of independent work items.
//!
//! Without the `parallel` feature both variants run sequentially, so callers
//! never need their own `cfg` switches.

use crate::params::Gradients;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    pub fn from_workers(workers: usize) -> Self {
        if workers == 1 {
            Self::Sequential
        } else {
            Self::Parallel
        }
    }

    /// Sizes the global worker pool; 0 keeps one worker per core. Only the
    /// first call in a process takes effect.
    pub fn init_workers(workers: usize) {
        #[cfg(feature = "parallel")]
        if workers > 1 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
        }
        let _ = workers;
    }

    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Self::Parallel
    }

    /// Maps `f` over `items`, preserving order.
    pub fn map<T, U, F>(self, items: &[T], f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> U + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Self::Parallel {
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    pub fn map_range<U, F>(self, n: usize, f: F) -> Vec<U>
    where
        U: Send,
        F: Fn(usize) -> U + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Self::Parallel {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Sums per-item gradients. `ordered` folds strictly left to right so the
    /// floating-point result is independent of scheduling; otherwise a
    /// parallel tree reduction is used.
    pub fn sum_gradients(self, parts: Vec<Gradients>, ordered: bool) -> Gradients {
        #[cfg(feature = "parallel")]
        if self == Self::Parallel && !ordered {
            use rayon::prelude::*;
            return parts
                .into_par_iter()
                .reduce(Gradients::default, |mut a, b| {
                    a.merge(&b);
                    a
                });
        }
        let _ = ordered;
        parts.into_iter().fold(Gradients::default(), |mut a, b| {
            a.merge(&b);
            a
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order_in_both_modes() {
        let items: Vec<usize> = (0..1000).collect();
        let a = Exec::Sequential.map(&items, |x| x * 2);
        let b = Exec::Parallel.map(&items, |x| x * 2);
        assert_eq!(a, b);
        assert_eq!(Exec::Parallel.map_range(5, |i| i), vec![0, 1, 2, 3, 4]);
    }
}
