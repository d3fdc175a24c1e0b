//! Data-parallel map with a sequential fallback when the `parallel` feature
//! is off.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Order-preserving map, parallel when the `parallel` feature is enabled.
pub fn map<T, R, F>(xs: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        xs.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_seq(xs, f)
    }
}

pub fn map_seq<T, R, F>(xs: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    xs.iter().map(f).collect()
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    #[test]
    fn map_keeps_order() {
        let xs: Vec<u32> = (0..1000).collect();
        assert_eq!(super::map(&xs, |x| x * 2), super::map_seq(&xs, |x| x * 2));
    }
}
