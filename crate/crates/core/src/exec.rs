//! Replicate fan-out with a sequential fallback.
//!
//! Results are always returned in index order, so the choice of execution
//! never changes an experiment's output.

/// How to run a batch of independent jobs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Uses rayon when the `parallel` feature is on; otherwise sequential.
    #[default]
    Parallel,
}

impl Execution {
    /// `true` if this build can actually run jobs on more than one thread.
    pub fn is_parallel_available() -> bool {
        cfg!(feature = "parallel")
    }

    /// Evaluates `job(i)` for `i in 0..n`, collecting results in order.
    pub fn map<T, F>(self, n: usize, job: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            Execution::Sequential => (0..n).map(job).collect(),
            Execution::Parallel => par_map(n, job),
        }
    }
}

#[cfg(feature = "parallel")]
fn par_map<T, F>(n: usize, job: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(job).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T, F>(n: usize, job: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(job).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_executions_agree_and_preserve_order() {
        let seq = Execution::Sequential.map(1000, |i| i * i);
        let par = Execution::Parallel.map(1000, |i| i * i);
        assert_eq!(seq, par);
        assert_eq!(seq[31], 961);
    }
}
