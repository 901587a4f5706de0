//! Row-major matrix kernels. All three accumulate into `c`.
//!
//! Loop orders are fixed so every output element sees the same reduction
//! order on every call; results are bit-stable across runs.

const K_BLOCK: usize = 128;
const ROW_BLOCK: usize = 32;

/// `c[m×n] += a[m×k] · b[k×n]`
pub fn gemm_nn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if n == 0 {
        return;
    }
    for kb in (0..k).step_by(K_BLOCK) {
        let ke = (kb + K_BLOCK).min(k);
        let mut rows = c.chunks_exact_mut(n).enumerate();
        loop {
            let Some((i0, c0)) = rows.next() else { break };
            match (rows.next(), rows.next(), rows.next()) {
                (Some((_, c1)), Some((_, c2)), Some((_, c3))) => {
                    let ar = |r: usize| &a[(i0 + r) * k..(i0 + r + 1) * k];
                    let (a0, a1, a2, a3) = (ar(0), ar(1), ar(2), ar(3));
                    for p in kb..ke {
                        let (x0, x1, x2, x3) = (a0[p], a1[p], a2[p], a3[p]);
                        if x0 == 0.0 && x1 == 0.0 && x2 == 0.0 && x3 == 0.0 {
                            continue;
                        }
                        let brow = &b[p * n..(p + 1) * n];
                        for ((((y0, y1), y2), y3), &bv) in c0
                            .iter_mut()
                            .zip(c1.iter_mut())
                            .zip(c2.iter_mut())
                            .zip(c3.iter_mut())
                            .zip(brow)
                        {
                            *y0 += x0 * bv;
                            *y1 += x1 * bv;
                            *y2 += x2 * bv;
                            *y3 += x3 * bv;
                        }
                    }
                }
                (r1, r2, r3) => {
                    for (i, crow) in std::iter::once((i0, c0)).chain(r1).chain(r2).chain(r3) {
                        let arow = &a[i * k..(i + 1) * k];
                        for p in kb..ke {
                            let x = arow[p];
                            if x == 0.0 {
                                continue;
                            }
                            for (y, &bv) in crow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                                *y += x * bv;
                            }
                        }
                    }
                    break;
                }
            }
        }
    }
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`
pub fn gemm_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for jb in (0..n).step_by(ROW_BLOCK) {
        let je = (jb + ROW_BLOCK).min(n);
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in jb..je {
                crow[j] += dot(arow, &b[j * k..(j + 1) * k]);
            }
        }
    }
}

/// `c[m×n] += a[k×m]ᵀ · b[k×n]`
pub fn gemm_tn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if n == 0 {
        return;
    }
    for ib in (0..m).step_by(ROW_BLOCK) {
        let ie = (ib + ROW_BLOCK).min(m);
        let block = &mut c[ib * n..ie * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let acol = &a[p * m + ib..p * m + ie];
            for (&x, crow) in acol.iter().zip(block.chunks_exact_mut(n)) {
                if x == 0.0 {
                    continue;
                }
                for (y, &bv) in crow.iter_mut().zip(brow) {
                    *y += x * bv;
                }
            }
        }
    }
}

/// Dot product with four fixed accumulation lanes.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
