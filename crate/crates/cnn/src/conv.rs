//! Direct 3x3 "same" convolution on one `(h, w, c)` image.
//!
//! Kernels are row-major `(9 * cin) x cout` with row `(ky * 3 + kx) * cin + c`.
//! Output channels are processed in blocks of [`CB`] lanes and pixels in
//! runs of [`PX`], which keeps the accumulators in vector registers. On
//! x86-64 the same code is also compiled with AVX-512 and with AVX2 (both
//! with FMA) and the widest supported variant is selected at run time.

use crate::real::Real;

/// Output-channel block.
const CB: usize = 16;
/// Pixels per register tile.
const PX: usize = 8;
/// Input channels per weight-gradient tile.
const CI: usize = 4;

#[inline(always)]
fn madd<R: Real, const FMA: bool>(a: R, b: R, acc: R) -> R {
    if FMA {
        a.mul_add(b, acc)
    } else {
        a * b + acc
    }
}

fn padded_cols(cout: usize) -> usize {
    cout.div_ceil(CB) * CB
}

/// Copies a `rows x cols` matrix into `rows x padded_cols(cols)`.
fn pad_columns<R: Real>(m: &[R], cols: usize) -> Vec<R> {
    let cp = padded_cols(cols);
    let rows = m.len() / cols;
    let mut out = vec![R::zero(); rows * cp];
    for (src, dst) in m.chunks_exact(cols).zip(out.chunks_exact_mut(cp)) {
        dst[..cols].copy_from_slice(src);
    }
    out
}

/// Rows `ky` of the kernel that land inside the image for output row `y`.
fn valid_taps(y: usize, h: usize) -> std::ops::Range<usize> {
    let lo = usize::from(y == 0);
    let hi = if y + 1 == h { 2 } else { 3 };
    lo..hi
}

/// Accumulates one run of [`PX`] pixels against one lane block over `k`
/// consecutive weight rows. Pixel `p` reads `xin[p * stride..][..k]` and
/// weight row `t` starts at `wk[t * cp]`.
#[inline(always)]
fn tile<R: Real, const FMA: bool>(xin: &[R], stride: usize, k: usize, wk: &[R], cp: usize, acc: &mut [[R; CB]; PX]) {
    assert!(k > 0 && xin.len() >= (PX - 1) * stride + k && wk.len() >= (k - 1) * cp + CB);
    let mut regs = *acc;
    for t in 0..k {
        // SAFETY: `t < k` and the lengths were checked above.
        let wv: [R; CB] = unsafe { *(wk.as_ptr().add(t * cp) as *const [R; CB]) };
        for (p, a) in regs.iter_mut().enumerate() {
            let v = unsafe { *xin.get_unchecked(p * stride + t) };
            for j in 0..CB {
                a[j] = madd::<R, FMA>(v, wv[j], a[j]);
            }
        }
    }
    *acc = regs;
}

#[inline(always)]
fn forward_impl<R: Real, const FMA: bool>(x: &[R], h: usize, w: usize, cin: usize, wp: &[R], cout: usize, out: &mut [R]) {
    let cp = padded_cols(cout);
    for y in 0..h {
        let taps = valid_taps(y, h);
        for cb in (0..cp).step_by(CB) {
            let lanes = CB.min(cout - cb);
            let mut x0 = 0;
            while x0 < w {
                // Interior runs have all three horizontal taps inside the row,
                // so a kernel row is one contiguous stretch of `3 * cin` inputs.
                let run = if x0 >= 1 && x0 + PX < w { PX } else { 1 };
                let mut acc = [[R::zero(); CB]; PX];
                for ky in taps.clone() {
                    let sy = y + ky - 1;
                    let wrow = &wp[ky * 3 * cin * cp + cb..(ky + 1) * 3 * cin * cp];
                    if run == PX {
                        let xin = &x[(sy * w + x0 - 1) * cin..(sy * w + x0 + PX + 1) * cin];
                        tile::<R, FMA>(xin, cin, 3 * cin, wrow, cp, &mut acc);
                        continue;
                    }
                    for kx in 0..3 {
                        if x0 + kx == 0 || x0 + kx > w {
                            continue;
                        }
                        let xin = &x[(sy * w + x0 + kx - 1) * cin..][..cin];
                        let wk = &wrow[kx * cin * cp..];
                        for (c, &v) in xin.iter().enumerate() {
                            let wv: &[R; CB] = wk[c * cp..c * cp + CB].try_into().unwrap();
                            for j in 0..CB {
                                acc[0][j] = madd::<R, FMA>(v, wv[j], acc[0][j]);
                            }
                        }
                    }
                }
                for (p, a) in acc.iter().enumerate().take(run) {
                    let o = (y * w + x0 + p) * cout + cb;
                    out[o..o + lanes].copy_from_slice(&a[..lanes]);
                }
                x0 += run;
            }
        }
    }
}

#[inline(always)]
fn weights_impl<R: Real, const FMA: bool>(x: &[R], dz: &[R], h: usize, w: usize, cin: usize, cp: usize, dw: &mut [R]) {
    // `dz` has `cp` channels per pixel; `dw` is `(9 * cin) x cp`.
    for y in 0..h {
        for ky in valid_taps(y, h) {
            let sy = y + ky - 1;
            for kx in 0..3 {
                let xs = usize::from(kx == 0);
                let xe = if kx == 2 { w - 1 } else { w };
                let k = ky * 3 + kx;
                for cb in (0..cp).step_by(CB) {
                    let mut c0 = 0;
                    while c0 < cin {
                        let nc = CI.min(cin - c0);
                        let mut acc = [[R::zero(); CB]; CI];
                        for xx in xs..xe {
                            let g: &[R; CB] = dz[(y * w + xx) * cp + cb..(y * w + xx) * cp + cb + CB].try_into().unwrap();
                            let src = (sy * w + xx + kx - 1) * cin + c0;
                            if nc == CI {
                                let xv: &[R; CI] = x[src..src + CI].try_into().unwrap();
                                for (a, &v) in acc.iter_mut().zip(xv) {
                                    for j in 0..CB {
                                        a[j] = madd::<R, FMA>(v, g[j], a[j]);
                                    }
                                }
                            } else {
                                for (a, &v) in acc.iter_mut().zip(&x[src..src + nc]) {
                                    for j in 0..CB {
                                        a[j] = madd::<R, FMA>(v, g[j], a[j]);
                                    }
                                }
                            }
                        }
                        for (ci, a) in acc.iter().enumerate().take(nc) {
                            let row = &mut dw[(k * cin + c0 + ci) * cp + cb..][..CB];
                            for (d, &v) in row.iter_mut().zip(a) {
                                *d += v;
                            }
                        }
                        c0 += nc;
                    }
                }
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
mod x86 {
    use super::*;

    #[derive(Clone, Copy, PartialEq, Eq)]
    pub(super) enum Level {
        Avx512,
        Avx2,
        Baseline,
    }

    pub(super) fn level() -> Level {
        if is_x86_feature_detected!("avx512f") && is_x86_feature_detected!("fma") {
            Level::Avx512
        } else if is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma") {
            Level::Avx2
        } else {
            Level::Baseline
        }
    }

    #[target_feature(enable = "avx512f,avx2,fma")]
    pub(super) unsafe fn forward512<R: Real>(x: &[R], h: usize, w: usize, cin: usize, wp: &[R], cout: usize, out: &mut [R]) {
        forward_impl::<R, true>(x, h, w, cin, wp, cout, out)
    }

    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn forward2<R: Real>(x: &[R], h: usize, w: usize, cin: usize, wp: &[R], cout: usize, out: &mut [R]) {
        forward_impl::<R, true>(x, h, w, cin, wp, cout, out)
    }

    #[target_feature(enable = "avx512f,avx2,fma")]
    pub(super) unsafe fn weights512<R: Real>(x: &[R], dz: &[R], h: usize, w: usize, cin: usize, cp: usize, dw: &mut [R]) {
        weights_impl::<R, true>(x, dz, h, w, cin, cp, dw)
    }

    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn weights2<R: Real>(x: &[R], dz: &[R], h: usize, w: usize, cin: usize, cp: usize, dw: &mut [R]) {
        weights_impl::<R, true>(x, dz, h, w, cin, cp, dw)
    }
}

/// Kernel prepared for [`forward`]: columns padded to whole lane blocks.
#[derive(Debug, Clone)]
pub struct PackedKernel<R> {
    cin: usize,
    cout: usize,
    values: Vec<R>,
}

impl<R: Real> PackedKernel<R> {
    pub fn new(wt: &[R], cin: usize, cout: usize) -> Self {
        assert_eq!(wt.len(), 9 * cin * cout, "kernel shape");
        Self {
            cin,
            cout,
            values: pad_columns(wt, cout),
        }
    }

    /// Kernel of the input-gradient convolution: taps mirrored and the
    /// channel axes swapped.
    pub fn transposed(wt: &[R], cin: usize, cout: usize) -> Self {
        assert_eq!(wt.len(), 9 * cin * cout, "kernel shape");
        let mut t = vec![R::zero(); 9 * cin * cout];
        for k in 0..9 {
            for c in 0..cin {
                for o in 0..cout {
                    t[((8 - k) * cout + o) * cin + c] = wt[(k * cin + c) * cout + o];
                }
            }
        }
        Self::new(&t, cout, cin)
    }
}

/// `out = conv3x3(x, kernel)` for one image.
pub fn forward<R: Real>(x: &[R], h: usize, w: usize, kernel: &PackedKernel<R>, out: &mut [R]) {
    let (cin, cout) = (kernel.cin, kernel.cout);
    assert_eq!(x.len(), h * w * cin, "conv input shape");
    assert_eq!(out.len(), h * w * cout, "conv output shape");
    let wp = &kernel.values;
    #[cfg(target_arch = "x86_64")]
    match x86::level() {
        // SAFETY: the required CPU features were detected at run time.
        x86::Level::Avx512 => return unsafe { x86::forward512(x, h, w, cin, wp, cout, out) },
        x86::Level::Avx2 => return unsafe { x86::forward2(x, h, w, cin, wp, cout, out) },
        x86::Level::Baseline => {}
    }
    forward_impl::<R, false>(x, h, w, cin, wp, cout, out)
}

/// Adds the kernel gradient of one image to `dw` (`(9 * cin) x cout`).
pub fn accumulate_weight_grad<R: Real>(x: &[R], dz: &[R], h: usize, w: usize, cin: usize, cout: usize, dw: &mut [R]) {
    assert_eq!(x.len(), h * w * cin, "conv input shape");
    assert_eq!(dz.len(), h * w * cout, "conv output-gradient shape");
    assert_eq!(dw.len(), 9 * cin * cout, "kernel-gradient shape");
    let cp = padded_cols(cout);
    let padded;
    let dz = if cp == cout {
        dz
    } else {
        padded = pad_columns(dz, cout);
        &padded
    };
    let mut acc = vec![R::zero(); 9 * cin * cp];
    #[cfg(target_arch = "x86_64")]
    let done = match x86::level() {
        // SAFETY: the required CPU features were detected at run time.
        x86::Level::Avx512 => {
            unsafe { x86::weights512(x, dz, h, w, cin, cp, &mut acc) };
            true
        }
        x86::Level::Avx2 => {
            unsafe { x86::weights2(x, dz, h, w, cin, cp, &mut acc) };
            true
        }
        x86::Level::Baseline => false,
    };
    #[cfg(not(target_arch = "x86_64"))]
    let done = false;
    if !done {
        weights_impl::<R, false>(x, dz, h, w, cin, cp, &mut acc);
    }
    for (dst, src) in dw.chunks_exact_mut(cout).zip(acc.chunks_exact(cp)) {
        for (d, &s) in dst.iter_mut().zip(src) {
            *d += s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{col2im, im2col};
    use crate::real::gemm;
    use rand::Rng;

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = satjam_core::seed::rng(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn naive(x: &[f64], h: usize, w: usize, cin: usize, wt: &[f64], cout: usize) -> Vec<f64> {
        let mut out = vec![0.0; h * w * cout];
        for y in 0..h as isize {
            for xx in 0..w as isize {
                for o in 0..cout {
                    let mut s = 0.0;
                    for ky in 0..3isize {
                        for kx in 0..3isize {
                            let (sy, sx) = (y + ky - 1, xx + kx - 1);
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                continue;
                            }
                            for c in 0..cin {
                                let xi = ((sy as usize * w + sx as usize) * cin) + c;
                                let wi = (((ky * 3 + kx) as usize) * cin + c) * cout + o;
                                s += x[xi] * wt[wi];
                            }
                        }
                    }
                    out[(y as usize * w + xx as usize) * cout + o] = s;
                }
            }
        }
        out
    }

    const SHAPES: [(usize, usize, usize, usize); 6] =
        [(1, 1, 1, 1), (2, 3, 1, 2), (5, 9, 3, 5), (4, 12, 4, 32), (7, 11, 32, 16), (3, 6, 6, 17)];

    #[test]
    fn forward_matches_naive_loops() {
        for (i, &(h, w, cin, cout)) in SHAPES.iter().enumerate() {
            let x = random(h * w * cin, i as u64);
            let wt = random(9 * cin * cout, 100 + i as u64);
            let mut out = vec![0.0; h * w * cout];
            forward(&x, h, w, &PackedKernel::new(&wt, cin, cout), &mut out);
            let want = naive(&x, h, w, cin, &wt, cout);
            for (a, b) in out.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "shape {:?}", SHAPES[i]);
            }
        }
    }

    #[test]
    fn input_gradient_matches_col2im_reference() {
        for (i, &(h, w, cin, cout)) in SHAPES.iter().enumerate() {
            let dz = random(h * w * cout, 200 + i as u64);
            let wt = random(9 * cin * cout, 300 + i as u64);
            let mut dx = vec![0.0; h * w * cin];
            forward(&dz, h, w, &PackedKernel::transposed(&wt, cin, cout), &mut dx);
            let mut dcol = vec![0.0; h * w * 9 * cin];
            gemm(false, true, h * w, 9 * cin, cout, 1.0, &dz, &wt, 0.0, &mut dcol);
            let mut want = vec![0.0; h * w * cin];
            col2im(&dcol, h, w, cin, &mut want);
            for (a, b) in dx.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "shape {:?}", SHAPES[i]);
            }
        }
    }

    #[test]
    fn weight_gradient_matches_im2col_reference() {
        for (i, &(h, w, cin, cout)) in SHAPES.iter().enumerate() {
            let x = random(h * w * cin, 400 + i as u64);
            let dz = random(h * w * cout, 500 + i as u64);
            let mut dw = vec![0.5; 9 * cin * cout];
            accumulate_weight_grad(&x, &dz, h, w, cin, cout, &mut dw);
            let mut col = vec![0.0; h * w * 9 * cin];
            im2col(&x, h, w, cin, &mut col);
            let mut want = vec![0.5; 9 * cin * cout];
            gemm(true, false, 9 * cin, cout, h * w, 1.0, &col, &dz, 1.0, &mut want);
            for (a, b) in dw.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "shape {:?}", SHAPES[i]);
            }
        }
    }

    #[test]
    fn single_precision_agrees_with_double() {
        let (h, w, cin, cout) = (6, 20, 32, 16);
        let x = random(h * w * cin, 1);
        let wt = random(9 * cin * cout, 2);
        let mut out64 = vec![0.0; h * w * cout];
        forward(&x, h, w, &PackedKernel::new(&wt, cin, cout), &mut out64);
        let x32: Vec<f32> = x.iter().map(|&v| v as f32).collect();
        let w32: Vec<f32> = wt.iter().map(|&v| v as f32).collect();
        let mut out32 = vec![0.0f32; h * w * cout];
        forward(&x32, h, w, &PackedKernel::new(&w32, cin, cout), &mut out32);
        for (a, b) in out32.iter().zip(&out64) {
            assert!((*a as f64 - b).abs() < 1e-4);
        }
    }
}
