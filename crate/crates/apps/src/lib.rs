//! Applications of translated Poisson approximation: Curie-Weiss
//! magnetization, isolated vertices of Erdos-Renyi graphs and Hoeffding
//! permutation statistics.

pub mod curie_weiss;
pub mod erdos_renyi;
pub mod hoeffding;
pub mod sampling;

/// Runs `f` on a pool of `workers` threads, or on the global pool when zero.
pub(crate) fn install<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> R {
    if workers == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}
