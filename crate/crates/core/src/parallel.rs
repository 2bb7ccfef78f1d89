//! Replica-parallel evaluation with results that do not depend on the number
//! of worker threads: every replica sees only its own index, and reductions
//! run over fixed-size chunks combined in index order.

use rayon::prelude::*;

/// Evaluates `f(i)` for `i in 0..m`, returning results in index order.
pub fn map_replicas<T, F>(m: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    (0..m as u64).into_par_iter().map(f).collect()
}

/// Chunk size used by [`fold_replicas`]; part of the reproducibility contract.
pub const CHUNK: u64 = 4096;

/// Folds replicas `0..m` chunk by chunk. Within a chunk `fold` runs in index
/// order; chunk results are then merged left to right with `combine`.
pub fn fold_replicas<A, I, F, C>(m: u64, identity: I, fold: F, combine: C) -> A
where
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(&mut A, u64) + Sync + Send,
    C: Fn(A, A) -> A,
{
    let chunks = m.div_ceil(CHUNK);
    let partial: Vec<A> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = identity();
            for i in c * CHUNK..((c + 1) * CHUNK).min(m) {
                fold(&mut acc, i);
            }
            acc
        })
        .collect();
    partial.into_iter().fold(identity(), combine)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folding_is_worker_independent() {
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                fold_replicas(
                    20_000,
                    || 0.0f64,
                    |acc, i| *acc += 1.0 / (1.0 + i as f64).sqrt(),
                    |a, b| a + b,
                )
            })
        };
        assert_eq!(run(1).to_bits(), run(3).to_bits());
        let v = map_replicas(10, |i| i * i);
        assert_eq!(v[9], 81);
    }
}
