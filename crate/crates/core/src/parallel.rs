//! Worker pool shared by the renderer, backward pass and oracle.
//!
//! The size is read once from `SPLATMO_THREADS`; unset or invalid values fall
//! back to rayon's default. All parallel reductions in this crate combine
//! partial results in a fixed order, so results do not depend on the pool size.

use std::sync::OnceLock;

use rayon::{ThreadPool, ThreadPoolBuilder};

pub const THREADS_ENV: &str = "SPLATMO_THREADS";

pub fn pool() -> &'static ThreadPool {
    static POOL: OnceLock<ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let mut builder = ThreadPoolBuilder::new().thread_name(|i| format!("splatmo-{i}"));
        if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
            if n > 0 {
                builder = builder.num_threads(n);
            }
        }
        builder.build().expect("failed to build worker pool")
    })
}

/// Run `f` inside the shared pool.
pub fn install<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    pool().install(f)
}
