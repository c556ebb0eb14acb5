//! Per-layer kernels over `[batch, channels, H, W]` activations.

use super::layer::{LayerKind, LayerSpec};
use super::params::LayerParams;
use super::tensor::Tensor;

fn out_shape(layer: &LayerSpec, batch: usize) -> Vec<usize> {
    let (h, w) = layer.out_spatial();
    vec![batch, layer.out_channels, h, w]
}

pub(crate) fn forward(layer: &LayerSpec, params: Option<&LayerParams>, x: &Tensor) -> Tensor {
    let b = x.batch();
    match layer.kind {
        LayerKind::Identity => x.clone(),
        LayerKind::Zero => Tensor::zeros(out_shape(layer, b)),
        LayerKind::Relu => {
            let data = x.data().iter().map(|&v| v.max(0.0)).collect();
            Tensor::from_parts(x.shape().to_vec(), data)
        }
        LayerKind::Dense => dense_fwd(layer, params.expect("dense params"), x),
        LayerKind::PointwiseConv2d => pointwise_fwd(layer, params.expect("pointwise params"), x),
        LayerKind::DepthwiseConv2d => depthwise_fwd(layer, params.expect("depthwise params"), x),
        LayerKind::Conv2d => conv_fwd(layer, params.expect("conv params"), x),
    }
}

/// Returns `(dL/dx, parameter gradients)` given the layer input and `dL/dy`.
pub(crate) fn backward(
    layer: &LayerSpec,
    params: Option<&LayerParams>,
    x: &Tensor,
    dy: &Tensor,
) -> (Tensor, Option<LayerParams>) {
    match layer.kind {
        LayerKind::Identity => (dy.clone(), None),
        LayerKind::Zero => (Tensor::zeros(x.shape().to_vec()), None),
        LayerKind::Relu => {
            let data = x
                .data()
                .iter()
                .zip(dy.data())
                .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                .collect();
            (Tensor::from_parts(x.shape().to_vec(), data), None)
        }
        LayerKind::Dense => dense_bwd(layer, params.expect("dense params"), x, dy),
        LayerKind::PointwiseConv2d => pointwise_bwd(layer, params.expect("pointwise params"), x, dy),
        LayerKind::DepthwiseConv2d => depthwise_bwd(layer, params.expect("depthwise params"), x, dy),
        LayerKind::Conv2d => conv_bwd(layer, params.expect("conv params"), x, dy),
    }
}

fn dense_fwd(layer: &LayerSpec, p: &LayerParams, x: &Tensor) -> Tensor {
    let b = x.batch();
    let nin = x.row_len();
    let nout = layer.out_channels;
    let w = p.weight.data();
    let bias = p.bias.data();
    let mut out = vec![0.0; b * nout];
    for s in 0..b {
        let xr = x.row(s);
        for o in 0..nout {
            let wr = &w[o * nin..(o + 1) * nin];
            out[s * nout + o] = bias[o] + wr.iter().zip(xr).map(|(a, c)| a * c).sum::<f64>();
        }
    }
    Tensor::from_parts(out_shape(layer, b), out)
}

fn dense_bwd(layer: &LayerSpec, p: &LayerParams, x: &Tensor, dy: &Tensor) -> (Tensor, Option<LayerParams>) {
    let b = x.batch();
    let nin = x.row_len();
    let nout = layer.out_channels;
    let w = p.weight.data();
    let mut dw = vec![0.0; nout * nin];
    let mut db = vec![0.0; nout];
    let mut dx = vec![0.0; b * nin];
    let g = dy.data();
    for s in 0..b {
        let xr = x.row(s);
        let dxr = &mut dx[s * nin..(s + 1) * nin];
        for o in 0..nout {
            let go = g[s * nout + o];
            if go == 0.0 {
                continue;
            }
            db[o] += go;
            let wr = &w[o * nin..(o + 1) * nin];
            let dwr = &mut dw[o * nin..(o + 1) * nin];
            for i in 0..nin {
                dwr[i] += go * xr[i];
                dxr[i] += go * wr[i];
            }
        }
    }
    (
        Tensor::from_parts(x.shape().to_vec(), dx),
        Some(LayerParams {
            weight: Tensor::from_parts(p.weight.shape().to_vec(), dw),
            bias: Tensor::from_parts(vec![nout], db),
        }),
    )
}

fn pointwise_fwd(layer: &LayerSpec, p: &LayerParams, x: &Tensor) -> Tensor {
    let b = x.batch();
    let (cin, cout) = (layer.in_channels, layer.out_channels);
    let hw = layer.spatial_positions();
    let w = p.weight.data();
    let bias = p.bias.data();
    let xd = x.data();
    let mut out = vec![0.0; b * cout * hw];
    for s in 0..b {
        let xs = &xd[s * cin * hw..(s + 1) * cin * hw];
        let os = &mut out[s * cout * hw..(s + 1) * cout * hw];
        for o in 0..cout {
            let orow = &mut os[o * hw..(o + 1) * hw];
            orow.fill(bias[o]);
            for i in 0..cin {
                let wv = w[o * cin + i];
                let xrow = &xs[i * hw..(i + 1) * hw];
                for (a, &v) in orow.iter_mut().zip(xrow) {
                    *a += wv * v;
                }
            }
        }
    }
    Tensor::from_parts(out_shape(layer, b), out)
}

fn pointwise_bwd(layer: &LayerSpec, p: &LayerParams, x: &Tensor, dy: &Tensor) -> (Tensor, Option<LayerParams>) {
    let b = x.batch();
    let (cin, cout) = (layer.in_channels, layer.out_channels);
    let hw = layer.spatial_positions();
    let w = p.weight.data();
    let xd = x.data();
    let g = dy.data();
    let mut dw = vec![0.0; cout * cin];
    let mut db = vec![0.0; cout];
    let mut dx = vec![0.0; b * cin * hw];
    for s in 0..b {
        let xs = &xd[s * cin * hw..(s + 1) * cin * hw];
        let gs = &g[s * cout * hw..(s + 1) * cout * hw];
        let dxs = &mut dx[s * cin * hw..(s + 1) * cin * hw];
        for o in 0..cout {
            let grow = &gs[o * hw..(o + 1) * hw];
            db[o] += grow.iter().sum::<f64>();
            for i in 0..cin {
                let xrow = &xs[i * hw..(i + 1) * hw];
                dw[o * cin + i] += grow.iter().zip(xrow).map(|(a, c)| a * c).sum::<f64>();
                let wv = w[o * cin + i];
                let dxrow = &mut dxs[i * hw..(i + 1) * hw];
                for (d, &gv) in dxrow.iter_mut().zip(grow) {
                    *d += wv * gv;
                }
            }
        }
    }
    (
        Tensor::from_parts(x.shape().to_vec(), dx),
        Some(LayerParams {
            weight: Tensor::from_parts(p.weight.shape().to_vec(), dw),
            bias: Tensor::from_parts(vec![cout], db),
        }),
    )
}

/// Valid `(out_start, out_end, in_start)` ranges along one axis for kernel
/// offset `d` with same padding `pad` over length `n`.
#[inline]
fn span(d: usize, pad: usize, n: usize) -> (usize, usize, usize) {
    // output y reads input y + d - pad
    let lo = pad.saturating_sub(d);
    let hi = (n + pad).saturating_sub(d).min(n);
    if lo >= hi {
        return (0, 0, 0);
    }
    (lo, hi, lo + d - pad)
}

fn depthwise_fwd(layer: &LayerSpec, p: &LayerParams, x: &Tensor) -> Tensor {
    let b = x.batch();
    let c = layer.out_channels;
    let (h, wd) = layer.spatial_in;
    let k = layer.kernel_size;
    let pad = k / 2;
    let w = p.weight.data();
    let bias = p.bias.data();
    let xd = x.data();
    let hw = h * wd;
    let mut out = vec![0.0; b * c * hw];
    for s in 0..b {
        for ch in 0..c {
            let base = (s * c + ch) * hw;
            let xs = &xd[base..base + hw];
            let os = &mut out[base..base + hw];
            os.fill(bias[ch]);
            for dy in 0..k {
                let (y0, y1, iy0) = span(dy, pad, h);
                for dx in 0..k {
                    let (x0, x1, ix0) = span(dx, pad, wd);
                    let wv = w[(ch * k + dy) * k + dx];
                    for (yy, iy) in (y0..y1).zip(iy0..) {
                        let orow = &mut os[yy * wd + x0..yy * wd + x1];
                        let xrow = &xs[iy * wd + ix0..iy * wd + ix0 + (x1 - x0)];
                        for (a, &v) in orow.iter_mut().zip(xrow) {
                            *a += wv * v;
                        }
                    }
                }
            }
        }
    }
    Tensor::from_parts(out_shape(layer, b), out)
}

fn depthwise_bwd(layer: &LayerSpec, p: &LayerParams, x: &Tensor, dyt: &Tensor) -> (Tensor, Option<LayerParams>) {
    let b = x.batch();
    let c = layer.out_channels;
    let (h, wd) = layer.spatial_in;
    let k = layer.kernel_size;
    let pad = k / 2;
    let w = p.weight.data();
    let xd = x.data();
    let g = dyt.data();
    let hw = h * wd;
    let mut dw = vec![0.0; c * k * k];
    let mut db = vec![0.0; c];
    let mut dx = vec![0.0; b * c * hw];
    for s in 0..b {
        for ch in 0..c {
            let base = (s * c + ch) * hw;
            let xs = &xd[base..base + hw];
            let gs = &g[base..base + hw];
            let dxs = &mut dx[base..base + hw];
            db[ch] += gs.iter().sum::<f64>();
            for dy in 0..k {
                let (y0, y1, iy0) = span(dy, pad, h);
                for dx_ in 0..k {
                    let (x0, x1, ix0) = span(dx_, pad, wd);
                    let widx = (ch * k + dy) * k + dx_;
                    let wv = w[widx];
                    let mut acc = 0.0;
                    for (yy, iy) in (y0..y1).zip(iy0..) {
                        let grow = &gs[yy * wd + x0..yy * wd + x1];
                        let xo = iy * wd + ix0;
                        let xrow = &xs[xo..xo + (x1 - x0)];
                        acc += grow.iter().zip(xrow).map(|(a, c)| a * c).sum::<f64>();
                        let dxrow = &mut dxs[xo..xo + (x1 - x0)];
                        for (d, &gv) in dxrow.iter_mut().zip(grow) {
                            *d += wv * gv;
                        }
                    }
                    dw[widx] += acc;
                }
            }
        }
    }
    (
        Tensor::from_parts(x.shape().to_vec(), dx),
        Some(LayerParams {
            weight: Tensor::from_parts(p.weight.shape().to_vec(), dw),
            bias: Tensor::from_parts(vec![c], db),
        }),
    )
}

fn conv_fwd(layer: &LayerSpec, p: &LayerParams, x: &Tensor) -> Tensor {
    let b = x.batch();
    let (cin, cout) = (layer.in_channels, layer.out_channels);
    let (h, wd) = layer.spatial_in;
    let k = layer.kernel_size;
    let pad = k / 2;
    let w = p.weight.data();
    let bias = p.bias.data();
    let xd = x.data();
    let hw = h * wd;
    let mut out = vec![0.0; b * cout * hw];
    for s in 0..b {
        for o in 0..cout {
            let obase = (s * cout + o) * hw;
            let os = &mut out[obase..obase + hw];
            os.fill(bias[o]);
            for i in 0..cin {
                let ibase = (s * cin + i) * hw;
                let xs = &xd[ibase..ibase + hw];
                for dy in 0..k {
                    let (y0, y1, iy0) = span(dy, pad, h);
                    for dx in 0..k {
                        let (x0, x1, ix0) = span(dx, pad, wd);
                        let wv = w[((o * cin + i) * k + dy) * k + dx];
                        for (yy, iy) in (y0..y1).zip(iy0..) {
                            let orow = &mut os[yy * wd + x0..yy * wd + x1];
                            let xrow = &xs[iy * wd + ix0..iy * wd + ix0 + (x1 - x0)];
                            for (a, &v) in orow.iter_mut().zip(xrow) {
                                *a += wv * v;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_parts(out_shape(layer, b), out)
}

fn conv_bwd(layer: &LayerSpec, p: &LayerParams, x: &Tensor, dyt: &Tensor) -> (Tensor, Option<LayerParams>) {
    let b = x.batch();
    let (cin, cout) = (layer.in_channels, layer.out_channels);
    let (h, wd) = layer.spatial_in;
    let k = layer.kernel_size;
    let pad = k / 2;
    let w = p.weight.data();
    let xd = x.data();
    let g = dyt.data();
    let hw = h * wd;
    let mut dw = vec![0.0; cout * cin * k * k];
    let mut db = vec![0.0; cout];
    let mut dx = vec![0.0; b * cin * hw];
    for s in 0..b {
        for o in 0..cout {
            let obase = (s * cout + o) * hw;
            let gs = &g[obase..obase + hw];
            db[o] += gs.iter().sum::<f64>();
            for i in 0..cin {
                let ibase = (s * cin + i) * hw;
                let xs = &xd[ibase..ibase + hw];
                let dxs = &mut dx[ibase..ibase + hw];
                for dy in 0..k {
                    let (y0, y1, iy0) = span(dy, pad, h);
                    for dx_ in 0..k {
                        let (x0, x1, ix0) = span(dx_, pad, wd);
                        let widx = ((o * cin + i) * k + dy) * k + dx_;
                        let wv = w[widx];
                        let mut acc = 0.0;
                        for (yy, iy) in (y0..y1).zip(iy0..) {
                            let grow = &gs[yy * wd + x0..yy * wd + x1];
                            let xo = iy * wd + ix0;
                            let xrow = &xs[xo..xo + (x1 - x0)];
                            acc += grow.iter().zip(xrow).map(|(a, c)| a * c).sum::<f64>();
                            let dxrow = &mut dxs[xo..xo + (x1 - x0)];
                            for (d, &gv) in dxrow.iter_mut().zip(grow) {
                                *d += wv * gv;
                            }
                        }
                        dw[widx] += acc;
                    }
                }
            }
        }
    }
    (
        Tensor::from_parts(x.shape().to_vec(), dx),
        Some(LayerParams {
            weight: Tensor::from_parts(p.weight.shape().to_vec(), dw),
            bias: Tensor::from_parts(vec![cout], db),
        }),
    )
}
