//! Data-parallel execution.
//!
//! Kernels split their output into independent pieces (rows or column tiles)
//! and each piece is produced by exactly one closure call with a fixed
//! summation order. Results are therefore bit-identical whether pieces run on
//! the rayon pool or sequentially.

/// Where kernel work runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Exec {
    #[cfg_attr(not(feature = "parallel"), default)]
    Sequential,
    #[cfg(feature = "parallel")]
    #[default]
    Parallel,
}

#[cfg(feature = "parallel")]
const MAP_CHUNK: usize = 4096;

impl Exec {
    /// Calls `f(row_index, row)` for every `row_len`-sized row of `data`.
    pub fn for_each_row<F>(self, data: &mut [f64], row_len: usize, f: F)
    where
        F: Fn(usize, &mut [f64]) + Sync + Send,
    {
        if row_len == 0 {
            return;
        }
        match self {
            Exec::Sequential => {
                for (r, row) in data.chunks_mut(row_len).enumerate() {
                    f(r, row);
                }
            }
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                data.par_chunks_mut(row_len)
                    .enumerate()
                    .for_each(|(r, row)| f(r, row));
            }
        }
    }

    /// Elementwise `out[i] = f(input[i])`.
    pub fn map_into<F>(self, input: &[f64], out: &mut [f64], f: F)
    where
        F: Fn(f64) -> f64 + Sync + Send,
    {
        debug_assert_eq!(input.len(), out.len());
        match self {
            Exec::Sequential => {
                for (o, &x) in out.iter_mut().zip(input) {
                    *o = f(x);
                }
            }
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                out.par_chunks_mut(MAP_CHUNK)
                    .zip(input.par_chunks(MAP_CHUNK))
                    .for_each(|(o, i)| {
                        for (o, &x) in o.iter_mut().zip(i) {
                            *o = f(x);
                        }
                    });
            }
        }
    }

    /// `(0..count).map(f)` collected in index order.
    pub fn map_collect<T, F>(self, count: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            Exec::Sequential => (0..count).map(f).collect(),
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                (0..count).into_par_iter().map(f).collect()
            }
        }
    }
}
