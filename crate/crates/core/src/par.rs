//! Data-parallel helpers whose results do not depend on the worker count.
//!
//! Maps preserve order. Reductions split the input into fixed-size chunks,
//! fold each chunk independently and then combine the partials in chunk
//! order, so floating-point sums come out bitwise identical whether they run
//! on one thread or many. Without the `parallel` feature every helper runs the
//! same chunked schedule sequentially.

use alloc::vec::Vec;

/// Number of items folded into one partial result.
pub const CHUNK: usize = 4096;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Order-preserving map.
pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Order-preserving map that also receives the item index.
pub fn map_indexed<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
    }
}

/// Map over `0..n`, preserving order.
pub fn map_range<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// In-place update of every item.
pub fn for_each_mut<T, F>(items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter_mut().enumerate().for_each(|(i, t)| f(i, t));
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter_mut().enumerate().for_each(|(i, t)| f(i, t));
    }
}

/// Chunked fold followed by an in-order combine.
///
/// `fold` receives the chunk's starting index and the chunk itself.
pub fn reduce_chunks<T, A, F, C>(items: &[T], init: A, fold: F, combine: C) -> A
where
    T: Sync,
    A: Clone + Send + Sync,
    F: Fn(A, usize, &[T]) -> A + Sync + Send,
    C: Fn(A, A) -> A,
{
    let partials: Vec<A> = {
        #[cfg(feature = "parallel")]
        {
            items
                .par_chunks(CHUNK)
                .enumerate()
                .map(|(ci, chunk)| fold(init.clone(), ci * CHUNK, chunk))
                .collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            items
                .chunks(CHUNK)
                .enumerate()
                .map(|(ci, chunk)| fold(init.clone(), ci * CHUNK, chunk))
                .collect()
        }
    };
    partials.into_iter().fold(init, combine)
}

/// Sum of `f(i, item)` with a deterministic chunked schedule.
pub fn sum<T, F>(items: &[T], f: F) -> f64
where
    T: Sync,
    F: Fn(usize, &T) -> f64 + Sync + Send,
{
    reduce_chunks(
        items,
        0.0,
        |mut acc, start, chunk| {
            for (j, t) in chunk.iter().enumerate() {
                acc += f(start + j, t);
            }
            acc
        },
        |a, b| a + b,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn reduction_is_identical_across_pool_sizes() {
        let data: Vec<f64> = (0..50_000).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| sum(&data, |_, v| *v * 1.000_000_1))
        };
        let one = run(1);
        assert_eq!(one.to_bits(), run(3).to_bits());
        assert_eq!(one.to_bits(), run(8).to_bits());
    }

    #[test]
    fn maps_keep_order() {
        let data = vec![3, 1, 2];
        assert_eq!(map(&data, |v| v * 10), vec![30, 10, 20]);
        assert_eq!(map_indexed(&data, |i, v| i + v), vec![3, 2, 4]);
        assert_eq!(map_range(3, |i| i * i), vec![0, 1, 4]);
    }
}
