//! Single-precision dot-product kernels.
//!
//! Every pair score is accumulated the same way whichever kernel computes
//! it: sixteen running partial sums (lane `l` takes coordinates `l, l+16,
//! ...`), the leftover coordinates folded into lanes `0..D%16`, then a fixed
//! halving tree. Multiplies and adds are never fused. A pair therefore gets
//! bit-identical scores from [`dot`], from any tile shape, and from any SIMD
//! width the compiler picks.

use crate::error::{Error, Result};
use crate::types::EmbeddingSet;

#[cfg(test)]
type BlockFn = fn(&[&[f32]], &[&[f32]], &mut [f32]);

const LANES: usize = 16;

#[inline(always)]
fn reduce(mut acc: [f32; LANES]) -> f32 {
    let mut width = LANES / 2;
    while width > 0 {
        for l in 0..width {
            acc[l] += acc[l + width];
        }
        width /= 2;
    }
    acc[0]
}

#[inline(always)]
fn tile<const R: usize, const C: usize>(a: &[&[f32]; R], b: &[&[f32]; C]) -> [[f32; C]; R] {
    let d = a[0].len();
    let chunks = d / LANES;
    let mut acc = [[[0f32; LANES]; C]; R];
    for ch in 0..chunks {
        let off = ch * LANES;
        for r in 0..R {
            let x: &[f32; LANES] = a[r][off..off + LANES].try_into().unwrap();
            for c in 0..C {
                let y: &[f32; LANES] = b[c][off..off + LANES].try_into().unwrap();
                for l in 0..LANES {
                    acc[r][c][l] += x[l] * y[l];
                }
            }
        }
    }
    finish(a, b, chunks * LANES, acc)
}

/// Folds the coordinates past `tail` into the low lanes, then reduces.
#[inline(always)]
fn finish<const R: usize, const C: usize>(
    a: &[&[f32]; R],
    b: &[&[f32]; C],
    tail: usize,
    mut lanes: [[[f32; LANES]; C]; R],
) -> [[f32; C]; R] {
    let d = a[0].len();
    let mut out = [[0f32; C]; R];
    for r in 0..R {
        for c in 0..C {
            for (l, i) in (tail..d).enumerate() {
                lanes[r][c][l] += a[r][i] * b[c][i];
            }
            out[r][c] = reduce(lanes[r][c]);
        }
    }
    out
}

trait Tiler {
    fn tile<const R: usize, const C: usize>(a: &[&[f32]; R], b: &[&[f32]; C]) -> [[f32; C]; R];
}

struct Portable;

impl Tiler for Portable {
    #[inline(always)]
    fn tile<const R: usize, const C: usize>(a: &[&[f32]; R], b: &[&[f32]; C]) -> [[f32; C]; R] {
        tile(a, b)
    }
}

/// Dot product with the engine's fixed accumulation order.
///
/// Panics if the slices differ in length.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len(), "dot: length mismatch");
    tile::<1, 1>(&[a], &[b])[0][0]
}

/// Dense block of scores, `values[i * cols + j] = dot(a_i, b_j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreBlock {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f32>,
}

impl ScoreBlock {
    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.values[i * self.cols + j]
    }
}

/// Cosine scores between two groups of unit-norm rows.
pub fn cosine_block(rows_a: &[&[f32]], rows_b: &[&[f32]]) -> Result<ScoreBlock> {
    let dim = rows_a
        .first()
        .or(rows_b.first())
        .map(|r| r.len())
        .unwrap_or(0);
    for r in rows_a.iter().chain(rows_b) {
        if r.len() != dim {
            return Err(Error::DimensionMismatch {
                left: dim,
                right: r.len(),
            });
        }
    }
    let mut values = vec![0f32; rows_a.len() * rows_b.len()];
    block_rows(rows_a, rows_b, &mut values);
    Ok(ScoreBlock {
        rows: rows_a.len(),
        cols: rows_b.len(),
        values,
    })
}

/// Scores rows `a` of `set` against rows `b`, writing `out[i * b.len() + j]`.
pub(crate) fn score_indexed(set: &EmbeddingSet, a: &[u32], b: &[u32], out: &mut Vec<f32>) {
    let ra: Vec<&[f32]> = a.iter().map(|&i| set.row(i as usize)).collect();
    let rb: Vec<&[f32]> = b.iter().map(|&i| set.row(i as usize)).collect();
    out.clear();
    out.resize(a.len() * b.len(), 0.0);
    block_rows(&ra, &rb, out);
}

fn block_rows(a: &[&[f32]], b: &[&[f32]], out: &mut [f32]) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f") {
            // SAFETY: the feature was detected at runtime.
            return unsafe { x86::block_avx512(a, b, out) };
        }
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected at runtime.
            return unsafe { x86::block_avx2(a, b, out) };
        }
    }
    block_generic::<1, 4>(a, b, out)
}

#[inline(always)]
fn block_generic<const R: usize, const C: usize>(a: &[&[f32]], b: &[&[f32]], out: &mut [f32]) {
    block_with::<Portable, R, C>(a, b, out)
}

/// Row-major `a x b` scores, `R x C` pairs at a time. All rows must share
/// one length; the SIMD tilers rely on it.
#[inline(always)]
fn block_with<T: Tiler, const R: usize, const C: usize>(a: &[&[f32]], b: &[&[f32]], out: &mut [f32]) {
    let Some(d) = a.first().map(|r| r.len()) else {
        return;
    };
    assert!(
        a.iter().chain(b).all(|r| r.len() == d) && out.len() == a.len() * b.len(),
        "ragged score block"
    );
    let nb = b.len();
    let mut i = 0;
    while i + R <= a.len() {
        let ra: [&[f32]; R] = std::array::from_fn(|r| a[i + r]);
        let mut j = 0;
        while j + C <= nb {
            let rb: [&[f32]; C] = std::array::from_fn(|c| b[j + c]);
            let t = T::tile::<R, C>(&ra, &rb);
            for r in 0..R {
                out[(i + r) * nb + j..(i + r) * nb + j + C].copy_from_slice(&t[r]);
            }
            j += C;
        }
        for (jj, rb) in b.iter().enumerate().skip(j) {
            let t = T::tile::<R, 1>(&ra, &[rb]);
            for r in 0..R {
                out[(i + r) * nb + jj] = t[r][0];
            }
        }
        i += R;
    }
    for (ii, ra) in a.iter().enumerate().skip(i) {
        for (jj, rb) in b.iter().enumerate() {
            out[ii * nb + jj] = T::tile::<1, 1>(&[ra], &[rb])[0][0];
        }
    }
}

#[cfg(target_arch = "x86_64")]
mod x86 {
    use std::arch::x86_64::*;

    use super::{block_with, finish, Tiler, LANES};

    pub(super) struct Avx512;
    pub(super) struct Avx2;

    /// # Safety
    /// The CPU must support avx512f.
    #[target_feature(enable = "avx512f")]
    pub(super) unsafe fn block_avx512(a: &[&[f32]], b: &[&[f32]], out: &mut [f32]) {
        block_with::<Avx512, 4, 4>(a, b, out)
    }

    /// # Safety
    /// The CPU must support avx2.
    #[target_feature(enable = "avx2")]
    pub(super) unsafe fn block_avx2(a: &[&[f32]], b: &[&[f32]], out: &mut [f32]) {
        block_with::<Avx2, 1, 4>(a, b, out)
    }

    impl Tiler for Avx512 {
        #[inline(always)]
        fn tile<const R: usize, const C: usize>(a: &[&[f32]; R], b: &[&[f32]; C]) -> [[f32; C]; R] {
            // SAFETY: only instantiated from `block_avx512`, whose caller
            // checked the feature; `block_with` checked the row lengths.
            unsafe { tile512(a, b) }
        }
    }

    impl Tiler for Avx2 {
        #[inline(always)]
        fn tile<const R: usize, const C: usize>(a: &[&[f32]; R], b: &[&[f32]; C]) -> [[f32; C]; R] {
            // SAFETY: as for `Avx512`, via `block_avx2`.
            unsafe { tile256(a, b) }
        }
    }

    #[target_feature(enable = "avx512f")]
    #[inline]
    unsafe fn tile512<const R: usize, const C: usize>(a: &[&[f32]; R], b: &[&[f32]; C]) -> [[f32; C]; R] {
        let d = a[0].len();
        let chunks = d / LANES;
        let mut acc = [[_mm512_setzero_ps(); C]; R];
        for ch in 0..chunks {
            let off = ch * LANES;
            for r in 0..R {
                let x = _mm512_loadu_ps(a[r][off..].as_ptr());
                for c in 0..C {
                    let y = _mm512_loadu_ps(b[c][off..].as_ptr());
                    acc[r][c] = _mm512_add_ps(acc[r][c], _mm512_mul_ps(x, y));
                }
            }
        }
        let mut lanes = [[[0f32; LANES]; C]; R];
        for r in 0..R {
            for c in 0..C {
                _mm512_storeu_ps(lanes[r][c].as_mut_ptr(), acc[r][c]);
            }
        }
        finish(a, b, chunks * LANES, lanes)
    }

    /// Lanes 0..8 and 8..16 live in two registers.
    #[target_feature(enable = "avx2")]
    #[inline]
    unsafe fn tile256<const R: usize, const C: usize>(a: &[&[f32]; R], b: &[&[f32]; C]) -> [[f32; C]; R] {
        let d = a[0].len();
        let chunks = d / LANES;
        let mut acc = [[[_mm256_setzero_ps(); 2]; C]; R];
        for ch in 0..chunks {
            let off = ch * LANES;
            for r in 0..R {
                let x0 = _mm256_loadu_ps(a[r][off..].as_ptr());
                let x1 = _mm256_loadu_ps(a[r][off + 8..].as_ptr());
                for c in 0..C {
                    let y0 = _mm256_loadu_ps(b[c][off..].as_ptr());
                    let y1 = _mm256_loadu_ps(b[c][off + 8..].as_ptr());
                    acc[r][c][0] = _mm256_add_ps(acc[r][c][0], _mm256_mul_ps(x0, y0));
                    acc[r][c][1] = _mm256_add_ps(acc[r][c][1], _mm256_mul_ps(x1, y1));
                }
            }
        }
        let mut lanes = [[[0f32; LANES]; C]; R];
        for r in 0..R {
            for c in 0..C {
                _mm256_storeu_ps(lanes[r][c].as_mut_ptr(), acc[r][c][0]);
                _mm256_storeu_ps(lanes[r][c].as_mut_ptr().add(8), acc[r][c][1]);
            }
        }
        finish(a, b, chunks * LANES, lanes)
    }

    #[cfg(test)]
    pub(super) fn simd_variants() -> Vec<super::BlockFn> {
        let mut v: Vec<super::BlockFn> = Vec::new();
        if is_x86_feature_detected!("avx512f") {
            v.push(|a, b, o| unsafe { block_avx512(a, b, o) });
        }
        if is_x86_feature_detected!("avx2") {
            v.push(|a, b, o| unsafe { block_avx2(a, b, o) });
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_rows(rng: &mut impl Rng, n: usize, d: usize) -> Vec<Vec<f32>> {
        (0..n)
            .map(|_| {
                let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter().map(|x| (x / norm) as f32).collect()
            })
            .collect()
    }

    #[test]
    fn identical_unit_vectors_score_one() {
        let e = [0.6f32, 0.8];
        assert!((dot(&e, &e) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn orthonormal_pair_scores_zero() {
        let b = cosine_block(&[&[1.0, 0.0, 0.0]], &[&[0.0, 1.0, 0.0]]).unwrap();
        assert_eq!(b.get(0, 0), 0.0);
    }

    #[test]
    fn random_block_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = unit_rows(&mut rng, 7, 5);
        let b = unit_rows(&mut rng, 9, 5);
        let ra: Vec<&[f32]> = a.iter().map(|r| r.as_slice()).collect();
        let rb: Vec<&[f32]> = b.iter().map(|r| r.as_slice()).collect();
        let block = cosine_block(&ra, &rb).unwrap();
        for (i, ai) in a.iter().enumerate() {
            for (j, bj) in b.iter().enumerate() {
                let naive: f64 = ai.iter().zip(bj).map(|(x, y)| *x as f64 * *y as f64).sum();
                assert!((block.get(i, j) as f64 - naive).abs() < 1e-6);
                assert!(block.get(i, j).abs() <= 1.0 + 1e-6);
            }
        }
    }

    #[test]
    fn every_tile_shape_agrees_bitwise_with_dot() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for d in [1, 3, 16, 17, 33, 64, 100] {
            let a = unit_rows(&mut rng, 5, d);
            let b = unit_rows(&mut rng, 11, d);
            let ra: Vec<&[f32]> = a.iter().map(|r| r.as_slice()).collect();
            let rb: Vec<&[f32]> = b.iter().map(|r| r.as_slice()).collect();
            let mut outs = Vec::new();
            let mut kernels: Vec<BlockFn> = vec![
                block_generic::<1, 1>,
                block_generic::<1, 4>,
                block_generic::<2, 4>,
                block_generic::<3, 2>,
                block_rows,
            ];
            #[cfg(target_arch = "x86_64")]
            kernels.extend(x86::simd_variants());
            for f in kernels {
                let mut out = vec![0f32; 55];
                f(&ra, &rb, &mut out);
                outs.push(out);
            }
            for i in 0..5 {
                for j in 0..11 {
                    let want = dot(&a[i], &b[j]).to_bits();
                    for out in &outs {
                        assert_eq!(out[i * 11 + j].to_bits(), want, "d={d} ({i},{j})");
                    }
                }
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let err = cosine_block(&[&[1.0, 0.0]], &[&[1.0, 0.0, 0.0]]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { left: 2, right: 3 }));
    }
}
