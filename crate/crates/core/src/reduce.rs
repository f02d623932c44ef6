//! Deterministic chunked reductions.
//!
//! Work is split into chunks whose boundaries depend only on the problem size,
//! never on the thread count. Chunk results are combined in index order with a
//! pairwise tree, so serial and parallel runs agree bit for bit.

pub(crate) const CHUNK: usize = 4096;

/// Evaluates `f` on every index in `0..len` and returns the results in order.
pub(crate) fn map_indexed<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..len).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..len).map(f).collect()
    }
}

/// Pairwise (cascade) summation over a slice, in index order.
pub(crate) fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n if n <= 8 => values.iter().fold(0.0, |acc, v| acc + v),
        n => {
            let mid = n / 2;
            pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
        }
    }
}

/// Sums `f(i)` for `i in 0..len` with a fixed reduction tree.
pub(crate) fn sum_indexed<F>(len: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let parts = map_indexed(len, f);
    pairwise_sum(&parts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_integers() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 499_500.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn map_preserves_order() {
        let v = map_indexed(10_000, |i| i * 2);
        assert!(v.iter().enumerate().all(|(i, &x)| x == 2 * i));
    }
}
