// Circular 3x3 convolution on channel-major planes, forward and backward.
//
// Tensors are flat `[channel][row][col]` buffers. The input is first copied
// into planes with a one-bin circular halo so that every tap is a plain
// offset slice and the inner loops vectorize.

use alloc::vec;
use alloc::vec::Vec;

pub(crate) const TAPS: usize = 9;

/// Copies `ch` planes of `h x w` into `(h + 2) x (w + 2)` planes with a
/// wrapped one-bin border.
pub(crate) fn halo(src: &[f64], ch: usize, h: usize, w: usize) -> Vec<f64> {
    let (ph, pw) = (h + 2, w + 2);
    let mut out = vec![0.0; ch * ph * pw];
    for c in 0..ch {
        let s = &src[c * h * w..(c + 1) * h * w];
        let d = &mut out[c * ph * pw..(c + 1) * ph * pw];
        for pr in 0..ph {
            let r = (pr + h - 1) % h;
            let srow = &s[r * w..(r + 1) * w];
            let drow = &mut d[pr * pw..(pr + 1) * pw];
            drow[0] = srow[w - 1];
            drow[1..=w].copy_from_slice(srow);
            drow[w + 1] = srow[0];
        }
    }
    out
}

/// `out_plane += correlate(padded_plane, k)` where tap `(a, b)` reads the
/// input at offset `(a - 1, b - 1)`.
#[inline]
fn accumulate(out: &mut [f64], padded: &[f64], k: &[f64; TAPS], h: usize, w: usize) {
    let pw = w + 2;
    for y in 0..h {
        let orow = &mut out[y * w..(y + 1) * w];
        let r0 = &padded[y * pw..y * pw + pw];
        let r1 = &padded[(y + 1) * pw..(y + 1) * pw + pw];
        let r2 = &padded[(y + 2) * pw..(y + 2) * pw + pw];
        let (a0, a1, a2) = (&r0[..w], &r0[1..w + 1], &r0[2..w + 2]);
        let (b0, b1, b2) = (&r1[..w], &r1[1..w + 1], &r1[2..w + 2]);
        let (c0, c1, c2) = (&r2[..w], &r2[1..w + 1], &r2[2..w + 2]);
        for x in 0..w {
            orow[x] += k[0] * a0[x]
                + k[1] * a1[x]
                + k[2] * a2[x]
                + k[3] * b0[x]
                + k[4] * b1[x]
                + k[5] * b2[x]
                + k[6] * c0[x]
                + k[7] * c1[x]
                + k[8] * c2[x];
        }
    }
}

fn taps(weight: &[f64], idx: usize) -> [f64; TAPS] {
    let mut k = [0.0; TAPS];
    k.copy_from_slice(&weight[idx * TAPS..(idx + 1) * TAPS]);
    k
}

/// `out[o] = bias[o] + sum_i w[o][i] (*) x[i]`, circular boundary.
pub(crate) fn forward(
    input: &[f64],
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let hw = h * w;
    let padded = halo(input, cin, h, w);
    let plane = (h + 2) * (w + 2);
    let mut out = vec![0.0; cout * hw];
    for o in 0..cout {
        let dst = &mut out[o * hw..(o + 1) * hw];
        dst.fill(bias[o]);
        for i in 0..cin {
            let k = taps(weight, o * cin + i);
            accumulate(dst, &padded[i * plane..(i + 1) * plane], &k, h, w);
        }
    }
    out
}

/// Gradients of [`forward`]: returns `(d input, d weight, d bias)`.
pub(crate) fn backward(
    input: &[f64],
    grad_out: &[f64],
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    need_input_grad: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let hw = h * w;
    let pw = w + 2;
    let plane = (h + 2) * pw;

    let grad_bias: Vec<f64> = (0..cout)
        .map(|o| grad_out[o * hw..(o + 1) * hw].iter().sum())
        .collect();

    // weight gradient: 9 shifted dot products per (o, i), accumulated
    // lane-wise so the row loop stays elementwise
    let padded_in = halo(input, cin, h, w);
    let mut grad_weight = vec![0.0; cout * cin * TAPS];
    let mut lanes = vec![0.0; TAPS * w];
    for o in 0..cout {
        let g = &grad_out[o * hw..(o + 1) * hw];
        for i in 0..cin {
            let p = &padded_in[i * plane..(i + 1) * plane];
            lanes.fill(0.0);
            for y in 0..h {
                let grow = &g[y * w..(y + 1) * w];
                for a in 0..3 {
                    let prow = &p[(y + a) * pw..(y + a) * pw + pw];
                    for b in 0..3 {
                        let lane = &mut lanes[(a * 3 + b) * w..(a * 3 + b + 1) * w];
                        let src = &prow[b..b + w];
                        for x in 0..w {
                            lane[x] += grow[x] * src[x];
                        }
                    }
                }
            }
            let gw = &mut grad_weight[(o * cin + i) * TAPS..(o * cin + i + 1) * TAPS];
            for t in 0..TAPS {
                gw[t] = lanes[t * w..(t + 1) * w].iter().sum();
            }
        }
    }

    // input gradient: correlation of the output gradient with the flipped
    // kernel, channels transposed
    let grad_input = if need_input_grad {
        let padded_g = halo(grad_out, cout, h, w);
        let mut gi = vec![0.0; cin * hw];
        for i in 0..cin {
            let dst = &mut gi[i * hw..(i + 1) * hw];
            for o in 0..cout {
                let k = taps(weight, o * cin + i);
                let mut flipped = [0.0; TAPS];
                for t in 0..TAPS {
                    flipped[t] = k[TAPS - 1 - t];
                }
                accumulate(dst, &padded_g[o * plane..(o + 1) * plane], &flipped, h, w);
            }
        }
        gi
    } else {
        Vec::new()
    };
    (grad_input, grad_weight, grad_bias)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(input: &[f64], cin: usize, cout: usize, h: usize, w: usize, weight: &[f64], bias: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; cout * h * w];
        for o in 0..cout {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = bias[o];
                    for i in 0..cin {
                        for a in 0..3 {
                            for b in 0..3 {
                                let yy = (y + h + a - 1) % h;
                                let xx = (x + w + b - 1) % w;
                                acc += weight[(o * cin + i) * 9 + a * 3 + b] * input[i * h * w + yy * w + xx];
                            }
                        }
                    }
                    out[o * h * w + y * w + x] = acc;
                }
            }
        }
        out
    }

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect()
    }

    #[test]
    fn forward_matches_naive_circular_convolution() {
        let (cin, cout, h, w) = (3, 4, 5, 7);
        let x = pseudo(cin * h * w, 1);
        let wt = pseudo(cout * cin * 9, 2);
        let b = pseudo(cout, 3);
        let fast = forward(&x, cin, cout, h, w, &wt, &b);
        let slow = naive(&x, cin, cout, h, w, &wt, &b);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_is_the_adjoint() {
        let (cin, cout, h, w) = (2, 3, 6, 4);
        let x = pseudo(cin * h * w, 4);
        let wt = pseudo(cout * cin * 9, 5);
        let g = pseudo(cout * h * w, 6);
        let zero_bias = vec![0.0; cout];
        let (gi, gw, gb) = backward(&x, &g, cin, cout, h, w, &wt, true);
        // <conv(x), g> is linear in x, in w and in b
        let y = naive(&x, cin, cout, h, w, &wt, &zero_bias);
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let via_input: f64 = gi.iter().zip(&x).map(|(a, b)| a * b).sum();
        let via_weight: f64 = gw.iter().zip(&wt).map(|(a, b)| a * b).sum();
        assert!((lhs - via_input).abs() < 1e-12);
        assert!((lhs - via_weight).abs() < 1e-12);
        let gsum: Vec<f64> = (0..cout).map(|o| g[o * h * w..(o + 1) * h * w].iter().sum()).collect();
        assert_eq!(gb, gsum);
    }
}
