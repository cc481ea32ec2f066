//! Data-parallel execution helpers.
//!
//! Every parallel loop in this crate is indexed: each output element is
//! written by exactly one task and any accumulation inside a task runs in a
//! fixed sequential order. Results are therefore bit-identical whether the
//! `parallel` feature is on or off and regardless of thread count; the
//! feature only toggles threading. This is the crate's "reference mode" —
//! it is always in effect.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Computes `f(i)` for `i in 0..n`, preserving index order in the output.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
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

/// Runs `f(row_index, row)` over consecutive `row_len`-sized rows of `buf`.
///
/// `buf.len()` must be a multiple of `row_len`.
pub fn for_each_row<T, F>(buf: &mut [T], row_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    debug_assert!(row_len > 0 && buf.len() % row_len == 0);
    #[cfg(feature = "parallel")]
    {
        buf.par_chunks_mut(row_len)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (i, row) in buf.chunks_mut(row_len).enumerate() {
            f(i, row);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_indexed_preserves_order() {
        let v = map_indexed(1000, |i| i * 3);
        assert_eq!(v[0], 0);
        assert_eq!(v[999], 2997);
        assert!(v.windows(2).all(|w| w[1] == w[0] + 3));
    }

    #[test]
    fn for_each_row_writes_each_row_once() {
        let mut buf = vec![0u32; 12];
        for_each_row(&mut buf, 3, |i, row| {
            for (j, x) in row.iter_mut().enumerate() {
                *x = (i * 10 + j) as u32;
            }
        });
        assert_eq!(buf, vec![0, 1, 2, 10, 11, 12, 20, 21, 22, 30, 31, 32]);
    }
}
