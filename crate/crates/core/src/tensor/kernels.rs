//! Raw loops behind the tape ops. Every reduction runs in a fixed order, so
//! results are bit-reproducible for a given build.

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    /// Length of one im2col row (output pixels per channel).
    fn p(&self) -> usize {
        self.ho * self.wo
    }

    /// Number of im2col rows (`cin * k * k`).
    fn kk(&self) -> usize {
        self.cin * self.k * self.k
    }
}

/// Unrolls one batch element into `[cin*k*k, ho*wo]`; row index is `(ci*k + ky)*k + kx`.
fn im2col(x: &[f64], g: &ConvGeom, col: &mut [f64]) {
    let p = g.p();
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = &mut col[((ci * g.k + ky) * g.k + kx) * p..][..p];
                // valid output columns satisfy 0 <= ox + kx - pad < w
                let ox_lo = g.pad.saturating_sub(kx);
                let ox_hi = (g.w + g.pad).saturating_sub(kx).min(g.wo);
                for oy in 0..g.ho {
                    let dst = &mut row[oy * g.wo..(oy + 1) * g.wo];
                    let iy = oy + ky;
                    if iy < g.pad || iy - g.pad >= g.h || ox_lo >= ox_hi {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[(iy - g.pad) * g.w..];
                    dst[..ox_lo].fill(0.0);
                    dst[ox_hi..].fill(0.0);
                    let ix_lo = ox_lo + kx - g.pad;
                    dst[ox_lo..ox_hi].copy_from_slice(&src[ix_lo..ix_lo + (ox_hi - ox_lo)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds columns back into an image plane stack.
fn col2im_add(col: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let p = g.p();
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = &col[((ci * g.k + ky) * g.k + kx) * p..][..p];
                let ox_lo = g.pad.saturating_sub(kx);
                let ox_hi = (g.w + g.pad).saturating_sub(kx).min(g.wo);
                if ox_lo >= ox_hi {
                    continue;
                }
                for oy in 0..g.ho {
                    let iy = oy + ky;
                    if iy < g.pad || iy - g.pad >= g.h {
                        continue;
                    }
                    let ix_lo = ox_lo + kx - g.pad;
                    let dst = &mut plane[(iy - g.pad) * g.w + ix_lo..][..ox_hi - ox_lo];
                    let src = &row[oy * g.wo + ox_lo..oy * g.wo + ox_hi];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

/// Dot product with eight interleaved partial sums, combined pairwise.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Cross-correlation with zero padding. Each output is
/// `(sum over ci, ky, kx in that order of w * x_padded) + bias`.
pub(crate) fn conv2d_forward(x: &[f64], w: &[f64], bias: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (p, kk) = (g.p(), g.kk());
    let mut out = vec![0.0; g.batch * g.cout * p];
    let mut col = vec![0.0; kk * p];
    for b in 0..g.batch {
        im2col(&x[b * g.cin * g.h * g.w..(b + 1) * g.cin * g.h * g.w], g, &mut col);
        let out_b = &mut out[b * g.cout * p..(b + 1) * g.cout * p];
        let mut co = 0;
        while co + 4 <= g.cout {
            let (r0, rest) = out_b[co * p..(co + 4) * p].split_at_mut(p);
            let (r1, rest) = rest.split_at_mut(p);
            let (r2, r3) = rest.split_at_mut(p);
            let w0 = &w[co * kk..(co + 1) * kk];
            let w1 = &w[(co + 1) * kk..(co + 2) * kk];
            let w2 = &w[(co + 2) * kk..(co + 3) * kk];
            let w3 = &w[(co + 3) * kk..(co + 4) * kk];
            for r in 0..kk {
                let c = &col[r * p..(r + 1) * p];
                let (a0, a1, a2, a3) = (w0[r], w1[r], w2[r], w3[r]);
                for i in 0..p {
                    let cv = c[i];
                    r0[i] += a0 * cv;
                    r1[i] += a1 * cv;
                    r2[i] += a2 * cv;
                    r3[i] += a3 * cv;
                }
            }
            co += 4;
        }
        while co < g.cout {
            let row = &mut out_b[co * p..(co + 1) * p];
            for r in 0..kk {
                axpy(row, w[co * kk + r], &col[r * p..(r + 1) * p]);
            }
            co += 1;
        }
        for co in 0..g.cout {
            let bv = bias[co];
            for v in &mut out_b[co * p..(co + 1) * p] {
                *v += bv;
            }
        }
    }
    out
}

pub(crate) struct ConvGrads {
    pub dx: Option<Vec<f64>>,
    pub dw: Option<Vec<f64>>,
    pub db: Option<Vec<f64>>,
}

pub(crate) fn conv2d_backward(x: &[f64], w: &[f64], dy: &[f64], g: &ConvGeom, need: [bool; 3]) -> ConvGrads {
    let (p, kk) = (g.p(), g.kk());
    let in_len = g.cin * g.h * g.w;
    let mut dx = need[0].then(|| vec![0.0; g.batch * in_len]);
    let mut dw = need[1].then(|| vec![0.0; g.cout * kk]);
    let db = need[2].then(|| {
        let mut db = vec![0.0; g.cout];
        for b in 0..g.batch {
            for (co, acc) in db.iter_mut().enumerate() {
                let row = &dy[(b * g.cout + co) * p..][..p];
                *acc += row.iter().sum::<f64>();
            }
        }
        db
    });
    let mut col = vec![0.0; kk * p];
    for b in 0..g.batch {
        let dy_b = &dy[b * g.cout * p..(b + 1) * g.cout * p];
        if let Some(dw) = dw.as_mut() {
            im2col(&x[b * in_len..(b + 1) * in_len], g, &mut col);
            for co in 0..g.cout {
                let grow = &dy_b[co * p..(co + 1) * p];
                let dw_row = &mut dw[co * kk..(co + 1) * kk];
                for r in 0..kk {
                    dw_row[r] += dot(grow, &col[r * p..(r + 1) * p]);
                }
            }
        }
        if let Some(dx) = dx.as_mut() {
            col.fill(0.0);
            let mut r = 0;
            while r + 4 <= kk {
                let (c0, rest) = col[r * p..(r + 4) * p].split_at_mut(p);
                let (c1, rest) = rest.split_at_mut(p);
                let (c2, c3) = rest.split_at_mut(p);
                for co in 0..g.cout {
                    let gy = &dy_b[co * p..(co + 1) * p];
                    let wr = &w[co * kk + r..co * kk + r + 4];
                    let (a0, a1, a2, a3) = (wr[0], wr[1], wr[2], wr[3]);
                    for i in 0..p {
                        let gv = gy[i];
                        c0[i] += a0 * gv;
                        c1[i] += a1 * gv;
                        c2[i] += a2 * gv;
                        c3[i] += a3 * gv;
                    }
                }
                r += 4;
            }
            while r < kk {
                let crow = &mut col[r * p..(r + 1) * p];
                for co in 0..g.cout {
                    axpy(crow, w[co * kk + r], &dy_b[co * p..(co + 1) * p]);
                }
                r += 1;
            }
            col2im_add(&col, g, &mut dx[b * in_len..(b + 1) * in_len]);
        }
    }
    ConvGrads { dx, dw, db }
}

/// `y[b, o] = (sum_f x[b, f] * w[o, f]) + bias[o]`.
pub(crate) fn linear_forward(x: &[f64], w: &[f64], bias: &[f64], batch: usize, fin: usize, fout: usize) -> Vec<f64> {
    let mut out = vec![0.0; batch * fout];
    for b in 0..batch {
        let xr = &x[b * fin..(b + 1) * fin];
        for o in 0..fout {
            let wr = &w[o * fin..(o + 1) * fin];
            let mut acc = 0.0;
            for f in 0..fin {
                acc += xr[f] * wr[f];
            }
            out[b * fout + o] = acc + bias[o];
        }
    }
    out
}

#[derive(Clone, Debug)]
pub(crate) struct GroupNormStats {
    pub mean: Vec<f64>,
    pub rstd: Vec<f64>,
}

pub(crate) const GROUP_NORM_EPS: f64 = 1e-5;

pub(crate) fn group_norm_forward(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    [batch, c, h, w]: [usize; 4],
    groups: usize,
) -> (Vec<f64>, GroupNormStats) {
    let hw = h * w;
    let cg = c / groups;
    let n = (cg * hw) as f64;
    let mut out = vec![0.0; x.len()];
    let mut stats = GroupNormStats {
        mean: Vec::with_capacity(batch * groups),
        rstd: Vec::with_capacity(batch * groups),
    };
    for b in 0..batch {
        for gi in 0..groups {
            let start = (b * c + gi * cg) * hw;
            let seg = &x[start..start + cg * hw];
            let mean = seg.iter().sum::<f64>() / n;
            let var = seg.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let rstd = 1.0 / (var + GROUP_NORM_EPS).sqrt();
            for ci in 0..cg {
                let ch = gi * cg + ci;
                let (ga, be) = (gamma[ch], beta[ch]);
                let off = start + ci * hw;
                for i in off..off + hw {
                    out[i] = (x[i] - mean) * rstd * ga + be;
                }
            }
            stats.mean.push(mean);
            stats.rstd.push(rstd);
        }
    }
    (out, stats)
}

pub(crate) fn group_norm_backward(
    x: &[f64],
    gamma: &[f64],
    dy: &[f64],
    stats: &GroupNormStats,
    [batch, c, h, w]: [usize; 4],
    groups: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let hw = h * w;
    let cg = c / groups;
    let n = (cg * hw) as f64;
    let mut dx = vec![0.0; x.len()];
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for b in 0..batch {
        for gi in 0..groups {
            let s = b * groups + gi;
            let (mean, rstd) = (stats.mean[s], stats.rstd[s]);
            let start = (b * c + gi * cg) * hw;
            // sums of dxhat and dxhat * xhat over the group
            let (mut sum_d, mut sum_dx) = (0.0, 0.0);
            for ci in 0..cg {
                let ch = gi * cg + ci;
                let off = start + ci * hw;
                let (mut dg, mut dbt) = (0.0, 0.0);
                for i in off..off + hw {
                    let xhat = (x[i] - mean) * rstd;
                    dg += dy[i] * xhat;
                    dbt += dy[i];
                    let dxh = dy[i] * gamma[ch];
                    sum_d += dxh;
                    sum_dx += dxh * xhat;
                }
                dgamma[ch] += dg;
                dbeta[ch] += dbt;
            }
            let (mean_d, mean_dx) = (sum_d / n, sum_dx / n);
            for ci in 0..cg {
                let ch = gi * cg + ci;
                let off = start + ci * hw;
                for i in off..off + hw {
                    let xhat = (x[i] - mean) * rstd;
                    dx[i] = rstd * (dy[i] * gamma[ch] - mean_d - xhat * mean_dx);
                }
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// 2x2 mean pooling over `[planes, h, w]`.
pub(crate) fn down2x(x: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = vec![0.0; planes * ho * wo];
    for pl in 0..planes {
        let src = &x[pl * h * w..];
        for y in 0..ho {
            for xx in 0..wo {
                let i = 2 * y * w + 2 * xx;
                out[(pl * ho + y) * wo + xx] = (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]) * 0.25;
            }
        }
    }
    out
}

/// Nearest-neighbour duplication over `[planes, h, w]` to `[planes, 2h, 2w]`.
pub(crate) fn up2x(x: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = vec![0.0; planes * ho * wo];
    for pl in 0..planes {
        for y in 0..ho {
            let src = &x[(pl * h + y / 2) * w..][..w];
            let dst = &mut out[(pl * ho + y) * wo..][..wo];
            for (xx, d) in dst.iter_mut().enumerate() {
                *d = src[xx / 2];
            }
        }
    }
    out
}

/// Sums each 2x2 block: the adjoint of [`up2x`].
pub(crate) fn sum_pool2x(x: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = vec![0.0; planes * ho * wo];
    for pl in 0..planes {
        let src = &x[pl * h * w..];
        for y in 0..ho {
            for xx in 0..wo {
                let i = 2 * y * w + 2 * xx;
                out[(pl * ho + y) * wo + xx] = src[i] + src[i + 1] + src[i + w] + src[i + w + 1];
            }
        }
    }
    out
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
