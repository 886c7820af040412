//! Small dense matrix multiply kernels backing `conv2d`.
//!
//! Three tiers, picked at runtime:
//! - an AVX2+FMA microkernel for `f32` on x86-64 (6x16 register tile),
//! - the same generic body compiled with `target_feature(avx2,fma)` for
//!   other element types,
//! - a plain generic body for any target.
//!
//! Every output element is accumulated in a fixed k-order, so results are
//! bit-deterministic for a given build regardless of blocking.

use super::Scalar;
use std::any::TypeId;

#[cfg(target_arch = "x86_64")]
fn has_avx2_fma() -> bool {
    std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma")
}

/// C\[m x n\] = A\[m x k\] * B\[k x n\] (all row-major, contiguous).
/// With `accumulate`, adds into C instead of overwriting.
pub fn gemm<T: Scalar>(c: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize, accumulate: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    #[cfg(target_arch = "x86_64")]
    {
        if has_avx2_fma() {
            if TypeId::of::<T>() == TypeId::of::<f32>() {
                // SAFETY: T is exactly f32 (TypeId checked above), so the
                // pointer casts preserve layout and length; AVX2+FMA verified.
                unsafe {
                    gemm_f32_avx2(
                        c.as_mut_ptr() as *mut f32,
                        a.as_ptr() as *const f32,
                        b.as_ptr() as *const f32,
                        m,
                        k,
                        n,
                        accumulate,
                    );
                }
                return;
            }
            // SAFETY: feature presence checked above.
            unsafe { gemm_avx2(c, a, b, m, k, n, accumulate) };
            return;
        }
    }
    gemm_body::<T, false>(c, a, b, m, k, n, accumulate);
}

/// C\[m x n\] = A\[m x l\] * B^T where B is \[n x l\] row-major.
/// Used for weight gradients (both operands are traversed along contiguous rows).
pub fn gemm_abt<T: Scalar>(c: &mut [T], a: &[T], b: &[T], m: usize, l: usize, n: usize, accumulate: bool) {
    debug_assert_eq!(a.len(), m * l);
    debug_assert_eq!(b.len(), n * l);
    debug_assert_eq!(c.len(), m * n);
    #[cfg(target_arch = "x86_64")]
    {
        if has_avx2_fma() {
            if TypeId::of::<T>() == TypeId::of::<f32>() {
                // SAFETY: as in `gemm`.
                unsafe {
                    gemm_abt_f32_avx2(
                        c.as_mut_ptr() as *mut f32,
                        a.as_ptr() as *const f32,
                        b.as_ptr() as *const f32,
                        m,
                        l,
                        n,
                        accumulate,
                    );
                }
                return;
            }
            // SAFETY: feature presence checked above.
            unsafe { gemm_abt_avx2(c, a, b, m, l, n, accumulate) };
            return;
        }
    }
    gemm_abt_body::<T, false>(c, a, b, m, l, n, accumulate);
}

/// Row-major transpose: out\[j x i\] of inp\[i x j\].
pub fn transpose<T: Scalar>(out: &mut [T], inp: &[T], rows: usize, cols: usize) {
    debug_assert_eq!(inp.len(), rows * cols);
    debug_assert_eq!(out.len(), rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = inp[i * cols + j];
        }
    }
}

// ---- AVX2 f32 microkernels ------------------------------------------------

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn gemm_f32_avx2(c: *mut f32, a: *const f32, b: *const f32, m: usize, k: usize, n: usize, accumulate: bool) {
    use std::arch::x86_64::*;
    const MR: usize = 6;
    const NR: usize = 16;

    let mut i = 0;
    while i + MR <= m {
        let mut j = 0;
        while j + NR <= n {
            let mut acc = [[_mm256_setzero_ps(); 2]; MR];
            for p in 0..k {
                let b0 = _mm256_loadu_ps(b.add(p * n + j));
                let b1 = _mm256_loadu_ps(b.add(p * n + j + 8));
                for r in 0..MR {
                    let av = _mm256_set1_ps(*a.add((i + r) * k + p));
                    acc[r][0] = _mm256_fmadd_ps(av, b0, acc[r][0]);
                    acc[r][1] = _mm256_fmadd_ps(av, b1, acc[r][1]);
                }
            }
            for r in 0..MR {
                let dst = c.add((i + r) * n + j);
                let (mut v0, mut v1) = (acc[r][0], acc[r][1]);
                if accumulate {
                    v0 = _mm256_add_ps(_mm256_loadu_ps(dst), v0);
                    v1 = _mm256_add_ps(_mm256_loadu_ps(dst.add(8)), v1);
                }
                _mm256_storeu_ps(dst, v0);
                _mm256_storeu_ps(dst.add(8), v1);
            }
            j += NR;
        }
        if j < n {
            gemm_f32_avx2_rows_tail(c, a, b, i, MR, j, k, n, accumulate);
        }
        i += MR;
    }
    if i < m {
        // remaining rows, one at a time with a 16-wide accumulator
        while i < m {
            let mut j = 0;
            while j + NR <= n {
                let mut a0 = _mm256_setzero_ps();
                let mut a1 = _mm256_setzero_ps();
                for p in 0..k {
                    let av = _mm256_set1_ps(*a.add(i * k + p));
                    a0 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b.add(p * n + j)), a0);
                    a1 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b.add(p * n + j + 8)), a1);
                }
                let dst = c.add(i * n + j);
                if accumulate {
                    a0 = _mm256_add_ps(_mm256_loadu_ps(dst), a0);
                    a1 = _mm256_add_ps(_mm256_loadu_ps(dst.add(8)), a1);
                }
                _mm256_storeu_ps(dst, a0);
                _mm256_storeu_ps(dst.add(8), a1);
                j += NR;
            }
            if j < n {
                gemm_f32_avx2_rows_tail(c, a, b, i, 1, j, k, n, accumulate);
            }
            i += 1;
        }
    }
}

/// Scalar n-tail for `rows` rows starting at row `i`, columns `[j0, n)`.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn gemm_f32_avx2_rows_tail(
    c: *mut f32,
    a: *const f32,
    b: *const f32,
    i: usize,
    rows: usize,
    j0: usize,
    k: usize,
    n: usize,
    accumulate: bool,
) {
    for r in 0..rows {
        for j in j0..n {
            let mut s = 0.0f32;
            for p in 0..k {
                s = (*a.add((i + r) * k + p)).mul_add(*b.add(p * n + j), s);
            }
            let dst = c.add((i + r) * n + j);
            *dst = if accumulate { *dst + s } else { s };
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn gemm_abt_f32_avx2(c: *mut f32, a: *const f32, b: *const f32, m: usize, l: usize, n: usize, accumulate: bool) {
    use std::arch::x86_64::*;
    let lanes = l / 8 * 8;
    for i in 0..m {
        let arow = a.add(i * l);
        let mut j = 0;
        while j + 4 <= n {
            let mut acc = [_mm256_setzero_ps(); 4];
            let mut p = 0;
            while p < lanes {
                let va = _mm256_loadu_ps(arow.add(p));
                for s in 0..4 {
                    acc[s] = _mm256_fmadd_ps(va, _mm256_loadu_ps(b.add((j + s) * l + p)), acc[s]);
                }
                p += 8;
            }
            for s in 0..4 {
                // horizontal sum of acc[s]
                let hi = _mm256_extractf128_ps(acc[s], 1);
                let lo = _mm256_castps256_ps128(acc[s]);
                let q = _mm_add_ps(hi, lo);
                let q = _mm_add_ps(q, _mm_movehl_ps(q, q));
                let q = _mm_add_ss(q, _mm_shuffle_ps(q, q, 1));
                let mut dot = _mm_cvtss_f32(q);
                for p in lanes..l {
                    dot = (*arow.add(p)).mul_add(*b.add((j + s) * l + p), dot);
                }
                let dst = c.add(i * n + j + s);
                *dst = if accumulate { *dst + dot } else { dot };
            }
            j += 4;
        }
        while j < n {
            let mut dot = 0.0f32;
            for p in 0..l {
                dot = (*arow.add(p)).mul_add(*b.add(j * l + p), dot);
            }
            let dst = c.add(i * n + j);
            *dst = if accumulate { *dst + dot } else { dot };
            j += 1;
        }
    }
}

// ---- generic bodies ---------------------------------------------------------

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn gemm_avx2<T: Scalar>(c: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize, accumulate: bool) {
    gemm_body::<T, true>(c, a, b, m, k, n, accumulate);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn gemm_abt_avx2<T: Scalar>(c: &mut [T], a: &[T], b: &[T], m: usize, l: usize, n: usize, accumulate: bool) {
    gemm_abt_body::<T, true>(c, a, b, m, l, n, accumulate);
}

const MR: usize = 6;
const NR: usize = 16;

#[inline(always)]
fn gemm_body<T: Scalar, const FMA: bool>(
    c: &mut [T],
    a: &[T],
    b: &[T],
    m: usize,
    k: usize,
    n: usize,
    accumulate: bool,
) {
    let mut i = 0;
    while i < m {
        let mr = (m - i).min(MR);
        match mr {
            6 => row_block::<T, FMA, 6>(c, a, b, i, k, n, accumulate),
            5 => row_block::<T, FMA, 5>(c, a, b, i, k, n, accumulate),
            4 => row_block::<T, FMA, 4>(c, a, b, i, k, n, accumulate),
            3 => row_block::<T, FMA, 3>(c, a, b, i, k, n, accumulate),
            2 => row_block::<T, FMA, 2>(c, a, b, i, k, n, accumulate),
            _ => row_block::<T, FMA, 1>(c, a, b, i, k, n, accumulate),
        }
        i += mr;
    }
}

#[inline(always)]
fn row_block<T: Scalar, const FMA: bool, const MB: usize>(
    c: &mut [T],
    a: &[T],
    b: &[T],
    i: usize,
    k: usize,
    n: usize,
    accumulate: bool,
) {
    let arows: [&[T]; MB] = std::array::from_fn(|r| &a[(i + r) * k..(i + r) * k + k]);
    let mut j = 0;
    while j + NR <= n {
        let mut acc = [[T::zero(); NR]; MB];
        for p in 0..k {
            let brow = &b[p * n + j..p * n + j + NR];
            for r in 0..MB {
                let av = arows[r][p];
                let accr = &mut acc[r];
                for q in 0..NR {
                    accr[q] = if FMA { av.mul_add(brow[q], accr[q]) } else { accr[q] + av * brow[q] };
                }
            }
        }
        for r in 0..MB {
            let crow = &mut c[(i + r) * n + j..(i + r) * n + j + NR];
            if accumulate {
                for q in 0..NR {
                    crow[q] = crow[q] + acc[r][q];
                }
            } else {
                crow.copy_from_slice(&acc[r]);
            }
        }
        j += NR;
    }
    if j < n {
        for r in 0..MB {
            for q in j..n {
                let mut s = T::zero();
                for p in 0..k {
                    s = if FMA { arows[r][p].mul_add(b[p * n + q], s) } else { s + arows[r][p] * b[p * n + q] };
                }
                let cq = &mut c[(i + r) * n + q];
                *cq = if accumulate { *cq + s } else { s };
            }
        }
    }
}

#[inline(always)]
fn gemm_abt_body<T: Scalar, const FMA: bool>(
    c: &mut [T],
    a: &[T],
    b: &[T],
    m: usize,
    l: usize,
    n: usize,
    accumulate: bool,
) {
    const LANES: usize = 8;
    let chunks = l / LANES * LANES;
    for i in 0..m {
        let arow = &a[i * l..(i + 1) * l];
        let mut j = 0;
        // four dot products at a time, vectorized along the shared axis
        while j + 4 <= n {
            let brows: [&[T]; 4] = std::array::from_fn(|s| &b[(j + s) * l..(j + s) * l + l]);
            let mut acc = [[T::zero(); LANES]; 4];
            let mut p = 0;
            while p < chunks {
                for s in 0..4 {
                    let br = &brows[s][p..p + LANES];
                    let ar = &arow[p..p + LANES];
                    let accs = &mut acc[s];
                    for q in 0..LANES {
                        accs[q] = if FMA { ar[q].mul_add(br[q], accs[q]) } else { accs[q] + ar[q] * br[q] };
                    }
                }
                p += LANES;
            }
            for (s, accs) in acc.iter().enumerate() {
                let mut dot: T = accs.iter().copied().sum();
                for q in chunks..l {
                    dot = dot + arow[q] * brows[s][q];
                }
                let cq = &mut c[i * n + j + s];
                *cq = if accumulate { *cq + dot } else { dot };
            }
            j += 4;
        }
        while j < n {
            let brow = &b[j * l..(j + 1) * l];
            let mut dot = T::zero();
            for q in 0..l {
                dot = dot + arow[q] * brow[q];
            }
            let cq = &mut c[i * n + j];
            *cq = if accumulate { *cq + dot } else { dot };
            j += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                for j in 0..n {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn matches_naive_over_shapes() {
        let mut rng = Rng::new(42);
        for &(m, k, n) in &[(1, 1, 1), (6, 16, 16), (7, 5, 33), (13, 147, 50), (32, 288, 70), (12, 9, 16)] {
            let a: Vec<f64> = (0..m * k).map(|_| rng.range(-1.0, 1.0)).collect();
            let b: Vec<f64> = (0..k * n).map(|_| rng.range(-1.0, 1.0)).collect();
            let want = naive(&a, &b, m, k, n);
            let mut c = vec![0.0; m * n];
            gemm(&mut c, &a, &b, m, k, n, false);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-10, "{m}x{k}x{n}: {x} vs {y}");
            }
            // accumulate mode adds on top
            gemm(&mut c, &a, &b, m, k, n, true);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - 2.0 * y).abs() < 1e-9);
            }
            // f32 path (exercises the avx2 microkernel where available)
            let af: Vec<f32> = a.iter().map(|&v| v as f32).collect();
            let bf: Vec<f32> = b.iter().map(|&v| v as f32).collect();
            let mut cf = vec![0.0f32; m * n];
            gemm(&mut cf, &af, &bf, m, k, n, false);
            for (x, y) in cf.iter().zip(&want) {
                assert!((*x as f64 - y).abs() < 1e-4 * (1.0 + y.abs()), "{m}x{k}x{n} f32: {x} vs {y}");
            }
        }
    }

    #[test]
    fn abt_matches_naive() {
        let mut rng = Rng::new(7);
        for &(m, l, n) in &[(3, 24, 9), (6, 100, 13), (32, 70, 288), (5, 3, 7)] {
            let a: Vec<f64> = (0..m * l).map(|_| rng.range(-1.0, 1.0)).collect();
            let b: Vec<f64> = (0..n * l).map(|_| rng.range(-1.0, 1.0)).collect();
            let mut bt = vec![0.0; l * n];
            transpose(&mut bt, &b, n, l);
            let want = naive(&a, &bt, m, l, n);
            let mut c = vec![0.0; m * n];
            gemm_abt(&mut c, &a, &b, m, l, n, false);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-10);
            }
            let af: Vec<f32> = a.iter().map(|&v| v as f32).collect();
            let bf: Vec<f32> = b.iter().map(|&v| v as f32).collect();
            let mut cf = vec![0.0f32; m * n];
            gemm_abt(&mut cf, &af, &bf, m, l, n, false);
            for (x, y) in cf.iter().zip(&want) {
                assert!((*x as f64 - y).abs() < 1e-4 * (1.0 + y.abs()));
            }
        }
    }
}
