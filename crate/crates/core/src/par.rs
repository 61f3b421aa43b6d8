//! Data-parallel helpers. With the `parallel` feature the loops below fan out
//! over rayon's pool; without it they run sequentially. Every helper writes
//! each output element from exactly one closure call, so results are
//! bit-identical either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Evaluates `f(x, y)` for every pixel of a `width` x `height` grid, row-major.
pub fn map_grid<T, F>(width: usize, height: usize, f: F) -> Vec<T>
where
    T: Send + Default + Clone,
    F: Fn(usize, usize) -> T + Sync + Send,
{
    let mut out = vec![T::default(); width * height];
    if width == 0 {
        return out;
    }
    #[cfg(feature = "parallel")]
    out.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
        for (x, v) in row.iter_mut().enumerate() {
            *v = f(x, y);
        }
    });
    #[cfg(not(feature = "parallel"))]
    out.chunks_mut(width).enumerate().for_each(|(y, row)| {
        for (x, v) in row.iter_mut().enumerate() {
            *v = f(x, y);
        }
    });
    out
}

/// Evaluates `f(x, y, z)` over an x-fastest volume, one z-slab per task.
pub fn map_volume<T, F>(nx: usize, ny: usize, nz: usize, f: F) -> Vec<T>
where
    T: Send + Default + Clone,
    F: Fn(usize, usize, usize) -> T + Sync + Send,
{
    let slab = nx * ny;
    let mut out = vec![T::default(); slab * nz];
    if slab == 0 {
        return out;
    }
    let fill = |(z, plane): (usize, &mut [T])| {
        for (i, v) in plane.iter_mut().enumerate() {
            *v = f(i % nx, i / nx, z);
        }
    };
    #[cfg(feature = "parallel")]
    out.par_chunks_mut(slab).enumerate().for_each(fill);
    #[cfg(not(feature = "parallel"))]
    out.chunks_mut(slab).enumerate().for_each(fill);
    out
}

/// Maps `f` over `0..n`, preserving index order in the output.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
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

/// Maps `f` over a slice, preserving order.
pub fn map_slice<S, T, F>(items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
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

/// Human-readable name of the active execution backend.
pub fn backend() -> &'static str {
    if cfg!(feature = "parallel") {
        "rayon"
    } else {
        "sequential"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_row_major() {
        let v = map_grid(3, 2, |x, y| (x + 10 * y) as u32);
        assert_eq!(v, vec![0, 1, 2, 10, 11, 12]);
    }

    #[test]
    fn volume_is_x_fastest() {
        let v = map_volume(2, 2, 2, |x, y, z| (x + 10 * y + 100 * z) as u32);
        assert_eq!(v, vec![0, 1, 10, 11, 100, 101, 110, 111]);
    }

    #[test]
    fn range_keeps_order() {
        assert_eq!(map_range(5, |i| i * i), vec![0, 1, 4, 9, 16]);
    }
}
