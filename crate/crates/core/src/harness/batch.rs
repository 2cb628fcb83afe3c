//! Independent trials mapped over a work pool.

/// Apply `f` to every job, keeping job order. Runs on the rayon pool when
/// the `parallel` feature is enabled.
#[cfg(feature = "parallel")]
pub fn map_trials<J, R, F>(jobs: &[J], f: F) -> Vec<R>
where
    J: Sync,
    R: Send,
    F: Fn(&J) -> R + Sync + Send,
{
    use rayon::prelude::*;
    jobs.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_trials<J, R, F>(jobs: &[J], f: F) -> Vec<R>
where
    F: Fn(&J) -> R,
{
    map_trials_sequential(jobs, f)
}

/// Sequential reference implementation.
pub fn map_trials_sequential<J, R, F>(jobs: &[J], f: F) -> Vec<R>
where
    F: Fn(&J) -> R,
{
    jobs.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let jobs: Vec<u64> = (0..257).collect();
        let par = map_trials(&jobs, |x| x * x);
        let seq = map_trials_sequential(&jobs, |x| x * x);
        assert_eq!(par, seq);
    }
}
