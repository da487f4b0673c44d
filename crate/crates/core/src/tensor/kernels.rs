//! Raw slice kernels shared by forward and backward passes.

/// `out[m,n] += a[m,k] * b[k,n]`
pub(crate) fn matmul_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,n] += a[m,k] * b[n,k]^T`
pub(crate) fn matmul_a_bt_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] += dot(arow, brow);
        }
    }
}

/// `out[k,n] += a[m,k]^T * b[m,n]`
pub(crate) fn matmul_at_b_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent accumulators; fixed association keeps results reproducible.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub(crate) fn transpose(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

/// Valid output range along one axis for a tap offset `d` in {-1, 0, 1}.
#[inline]
fn tap_range(len: usize, d: isize) -> (usize, usize) {
    let lo = if d < 0 { (-d) as usize } else { 0 };
    let hi = if d > 0 { len - d as usize } else { len };
    (lo, hi)
}

/// 3x3 convolution, stride 1, zero padding 1.
pub(crate) fn conv3x3(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    cin: usize,
    cout: usize,
    h: usize,
    wd: usize,
) -> Vec<f64> {
    let hw = h * wd;
    let mut out = vec![0.0; cout * hw];
    for co in 0..cout {
        let oplane = &mut out[co * hw..(co + 1) * hw];
        oplane.iter_mut().for_each(|v| *v = b[co]);
        for ci in 0..cin {
            let iplane = &x[ci * hw..(ci + 1) * hw];
            let wk = &w[(co * cin + ci) * 9..(co * cin + ci + 1) * 9];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = tap_range(h, dy);
                for kx in 0..3 {
                    let wv = wk[ky * 3 + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let dx = kx as isize - 1;
                    let (x0, x1) = tap_range(wd, dx);
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let orow = &mut oplane[y * wd + x0..y * wd + x1];
                        let sx0 = (x0 as isize + dx) as usize;
                        let irow = &iplane[sy * wd + sx0..sy * wd + sx0 + (x1 - x0)];
                        for (o, &iv) in orow.iter_mut().zip(irow) {
                            *o += wv * iv;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradient of [`conv3x3`] with respect to its input.
pub(crate) fn conv3x3_grad_input(
    g: &[f64],
    w: &[f64],
    cin: usize,
    cout: usize,
    h: usize,
    wd: usize,
) -> Vec<f64> {
    let hw = h * wd;
    let mut gx = vec![0.0; cin * hw];
    for ci in 0..cin {
        let gplane_x = &mut gx[ci * hw..(ci + 1) * hw];
        for co in 0..cout {
            let gplane = &g[co * hw..(co + 1) * hw];
            let wk = &w[(co * cin + ci) * 9..(co * cin + ci + 1) * 9];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = tap_range(h, dy);
                for kx in 0..3 {
                    let wv = wk[ky * 3 + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let dx = kx as isize - 1;
                    let (x0, x1) = tap_range(wd, dx);
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let sx0 = (x0 as isize + dx) as usize;
                        let grow = &gplane[y * wd + x0..y * wd + x1];
                        let xrow = &mut gplane_x[sy * wd + sx0..sy * wd + sx0 + (x1 - x0)];
                        for (xv, &gv) in xrow.iter_mut().zip(grow) {
                            *xv += wv * gv;
                        }
                    }
                }
            }
        }
    }
    gx
}

/// Gradient of [`conv3x3`] with respect to its weights.
pub(crate) fn conv3x3_grad_weight(
    g: &[f64],
    x: &[f64],
    cin: usize,
    cout: usize,
    h: usize,
    wd: usize,
) -> Vec<f64> {
    let hw = h * wd;
    let mut gw = vec![0.0; cout * cin * 9];
    for co in 0..cout {
        let gplane = &g[co * hw..(co + 1) * hw];
        for ci in 0..cin {
            let iplane = &x[ci * hw..(ci + 1) * hw];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = tap_range(h, dy);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (x0, x1) = tap_range(wd, dx);
                    let mut s = 0.0;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let sx0 = (x0 as isize + dx) as usize;
                        s += dot(
                            &gplane[y * wd + x0..y * wd + x1],
                            &iplane[sy * wd + sx0..sy * wd + sx0 + (x1 - x0)],
                        );
                    }
                    gw[(co * cin + ci) * 9 + ky * 3 + kx] = s;
                }
            }
        }
    }
    gw
}

/// Row-wise softmax over the last axis; masked-out columns get weight 0.
pub(crate) fn softmax_rows(x: &mut [f64], cols: usize, mask: Option<&[bool]>) {
    for row in x.chunks_mut(cols) {
        let mut max = f64::NEG_INFINITY;
        for (j, &v) in row.iter().enumerate() {
            if mask.is_none_or(|m| m[j]) && v > max {
                max = v;
            }
        }
        let mut sum = 0.0;
        for (j, v) in row.iter_mut().enumerate() {
            if mask.is_none_or(|m| m[j]) {
                *v = (*v - max).exp();
                sum += *v;
            } else {
                *v = 0.0;
            }
        }
        let inv = 1.0 / sum;
        row.iter_mut().for_each(|v| *v *= inv);
    }
}

/// Backward of a row softmax given its output `y` and upstream `g`.
pub(crate) fn softmax_rows_backward(y: &[f64], g: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; y.len()];
    for ((orow, yrow), grow) in out
        .chunks_mut(cols)
        .zip(y.chunks(cols))
        .zip(g.chunks(cols))
    {
        let s = dot(yrow, grow);
        for ((o, &yv), &gv) in orow.iter_mut().zip(yrow).zip(grow) {
            *o = yv * (gv - s);
        }
    }
    out
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
