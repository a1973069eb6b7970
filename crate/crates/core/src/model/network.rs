//! Forward and backward passes for a single image.
//!
//! Feature maps are `(channels, height * width)` matrices; convolutions run
//! as im2col followed by a matrix product.

use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};

use super::params::{ArchConfig, Dense, Head, ModelParams, Variant, BOX_CHANNELS, CLASS_OUTPUTS};
use crate::error::{Error, Result};
use crate::imaging::OralImage;
use crate::prior::{encode_priors, pool_to_grid, PriorProfile};

/// Fixed input normalization: `(v - MEAN) / SCALE` on every channel.
const INPUT_MEAN: f64 = 0.5;
const INPUT_SCALE: f64 = 0.25;

#[derive(Debug, Clone)]
pub(crate) struct ConvTrace {
    /// im2col of the block input, `(in * k * k, out_h * out_w)`.
    cols: Array2<f64>,
    /// Pre-activation output, `(out, out_h * out_w)`.
    pre: Array2<f64>,
    in_dim: (usize, usize, usize),
    out_side: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct HeadTrace {
    hidden_pre: Option<Array2<f64>>,
    hidden: Option<Array2<f64>>,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub(crate) struct Trace {
    convs: Vec<ConvTrace>,
    /// Last backbone activation, `(features, grid * grid)`.
    pub(crate) features: Array2<f64>,
    /// Pooled prior map, `(depth, grid * grid)`, enhanced only.
    prior: Option<Array2<f64>>,
    box_head: HeadTrace,
    cls_head: HeadTrace,
}

/// Pre-activation outputs.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Logits {
    /// `(15, grid * grid)`: per localized condition x, y, w, h, confidence.
    pub(crate) boxes: Array2<f64>,
    pub(crate) class: Array1<f64>,
}

pub(crate) fn leaky(v: f64, slope: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        slope * v
    }
}

fn leaky_grad(v: f64, slope: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        slope
    }
}

fn im2col(x: &Array3<f64>, k: usize, stride: usize, pad: usize, out_side: usize) -> Array2<f64> {
    let (c, h, w) = x.dim();
    let n = out_side * out_side;
    let mut cols = Array2::zeros((c * k * k, n));
    let xs = x.as_slice().expect("standard layout");
    let cs = cols.as_slice_mut().expect("standard layout");
    for ch in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let dst = &mut cs[row * n..(row + 1) * n];
                for oy in 0..out_side {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = (ch * h + iy as usize) * w;
                    for ox in 0..out_side {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[oy * out_side + ox] = xs[src_row + ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(
    cols: &Array2<f64>,
    dim: (usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    out_side: usize,
) -> Array3<f64> {
    let (c, h, w) = dim;
    let n = out_side * out_side;
    let mut x = Array3::zeros(dim);
    let xs = x.as_slice_mut().expect("standard layout");
    let cs = cols.as_slice().expect("standard layout");
    for ch in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let src = &cs[row * n..(row + 1) * n];
                for oy in 0..out_side {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = (ch * h + iy as usize) * w;
                    for ox in 0..out_side {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            xs[dst_row + ix as usize] += src[oy * out_side + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

fn affine(layer: &Dense, input: &ArrayView2<f64>) -> Array2<f64> {
    let mut out = layer.weight.dot(input);
    out += &layer.bias.view().insert_axis(Axis(1));
    out
}

fn head_forward(
    head: &Head,
    prior_weights: Option<&Array2<f64>>,
    features: &Array2<f64>,
    prior: Option<&Array2<f64>>,
    slope: f64,
) -> (Array2<f64>, HeadTrace) {
    let first = match &head.hidden {
        Some(h) => h,
        None => &head.output,
    };
    let mut z = affine(first, &features.view());
    if let (Some(w), Some(p)) = (prior_weights, prior) {
        z += &w.dot(p);
    }
    match &head.hidden {
        Some(_) => {
            let hidden = z.mapv(|v| leaky(v, slope));
            let out = affine(&head.output, &hidden.view());
            (
                out,
                HeadTrace {
                    hidden_pre: Some(z),
                    hidden: Some(hidden),
                },
            )
        }
        None => (
            z,
            HeadTrace {
                hidden_pre: None,
                hidden: None,
            },
        ),
    }
}

/// Normalized `(3, H, W)` model input.
pub(crate) fn prepare_input(params: &ModelParams, image: &OralImage) -> Result<Array3<f64>> {
    let size = params.arch.input_size;
    if image.height() != size || image.width() != size {
        return Err(Error::Shape(format!(
            "image is {}x{}, model expects {size}x{size}",
            image.height(),
            image.width()
        )));
    }
    let mut x = image
        .pixels
        .view()
        .permuted_axes([2, 0, 1])
        .as_standard_layout()
        .into_owned();
    x.mapv_inplace(|v| (v - INPUT_MEAN) / INPUT_SCALE);
    Ok(x)
}

/// Pooled prior map at feature resolution, or `None` for the baseline.
pub(crate) fn prepare_prior(params: &ModelParams, profile: Option<&PriorProfile>) -> Result<Option<Array2<f64>>> {
    match params.variant {
        Variant::Baseline => Ok(None),
        Variant::Enhanced => {
            if params.fusion.is_none() {
                return Err(Error::CorruptParams("enhanced parameters carry no fusion layers".into()));
            }
            let size = params.arch.input_size;
            let grid = params.arch.grid();
            let map = encode_priors(profile, &params.questionnaire, size, size)?;
            let pooled = pool_to_grid(&map.view(), grid)?;
            let depth = pooled.shape()[0];
            Ok(Some(
                pooled
                    .into_shape_with_order((depth, grid * grid))
                    .map_err(|e| Error::Shape(e.to_string()))?,
            ))
        }
    }
}

/// Run the backbone only; returns the conv traces and the final activation.
pub(crate) fn backbone_forward(params: &ModelParams, input: Array3<f64>) -> (Vec<ConvTrace>, Array2<f64>) {
    let arch = &params.arch;
    let k = ArchConfig::KERNEL;
    let mut x = input;
    let mut convs = Vec::with_capacity(params.backbone.len());
    let mut act = Array2::zeros((0, 0));
    for (layer, &stride) in params.backbone.iter().zip(&arch.strides) {
        let in_dim = x.dim();
        let out_side = (in_dim.1 + 2 - k) / stride + 1;
        let cols = im2col(&x, k, stride, 1, out_side);
        let pre = affine(layer, &cols.view());
        act = pre.mapv(|v| leaky(v, arch.leaky_slope));
        let out_ch = act.nrows();
        x = act
            .clone()
            .into_shape_with_order((out_ch, out_side, out_side))
            .expect("contiguous activation");
        convs.push(ConvTrace {
            cols,
            pre,
            in_dim,
            out_side,
        });
    }
    (convs, act)
}

/// Heads on precomputed backbone features.
pub(crate) fn heads_forward(
    params: &ModelParams,
    features: &Array2<f64>,
    prior: Option<&Array2<f64>>,
) -> (Logits, HeadTrace, HeadTrace) {
    let slope = params.arch.leaky_slope;
    let fusion = params.fusion.as_ref();
    let prior = if params.variant == Variant::Enhanced { prior } else { None };
    let (boxes, box_trace) = head_forward(
        &params.box_head,
        fusion.map(|f| &f.box_prior),
        features,
        prior,
        slope,
    );
    let (cls_map, cls_trace) = head_forward(
        &params.cls_head,
        fusion.map(|f| &f.cls_prior),
        features,
        prior,
        slope,
    );
    let class = cls_map.mean_axis(Axis(1)).expect("non-empty grid");
    (Logits { boxes, class }, box_trace, cls_trace)
}

pub(crate) fn forward_trace(
    params: &ModelParams,
    image: &OralImage,
    profile: Option<&PriorProfile>,
) -> Result<(Logits, Trace)> {
    let input = prepare_input(params, image)?;
    let prior = prepare_prior(params, profile)?;
    let (convs, features) = backbone_forward(params, input);
    let (logits, box_head, cls_head) = heads_forward(params, &features, prior.as_ref());
    Ok((
        logits,
        Trace {
            convs,
            features,
            prior,
            box_head,
            cls_head,
        },
    ))
}

fn accumulate_dense(grad: &mut Dense, d_out: &Array2<f64>, input: &Array2<f64>) {
    grad.weight += &d_out.dot(&input.t());
    grad.bias += &d_out.sum_axis(Axis(1));
}

/// Backprop through one head; accumulates parameter gradients and returns the
/// gradient with respect to the backbone features.
fn head_backward(
    head: &Head,
    trace: &HeadTrace,
    features: &Array2<f64>,
    prior: Option<&Array2<f64>>,
    d_out: &Array2<f64>,
    slope: f64,
    grad_head: Option<&mut Head>,
    grad_prior: Option<&mut Array2<f64>>,
) -> Array2<f64> {
    match (&head.hidden, &trace.hidden, &trace.hidden_pre) {
        (Some(hidden_layer), Some(hidden), Some(pre)) => {
            let mut d_hidden = head.output.weight.t().dot(d_out);
            d_hidden.zip_mut_with(pre, |d, &z| *d *= leaky_grad(z, slope));
            if let Some(g) = grad_head {
                accumulate_dense(&mut g.output, d_out, hidden);
                accumulate_dense(g.hidden.as_mut().expect("matching grad layout"), &d_hidden, features);
            }
            if let (Some(gp), Some(p)) = (grad_prior, prior) {
                *gp += &d_hidden.dot(&p.t());
            }
            hidden_layer.weight.t().dot(&d_hidden)
        }
        _ => {
            if let Some(g) = grad_head {
                accumulate_dense(&mut g.output, d_out, features);
            }
            if let (Some(gp), Some(p)) = (grad_prior, prior) {
                *gp += &d_out.dot(&p.t());
            }
            head.output.weight.t().dot(d_out)
        }
    }
}

/// What to compute in a backward pass.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BackwardScope {
    pub heads: bool,
    pub backbone: bool,
}

/// Gradient of the heads' outputs with respect to the backbone features,
/// accumulating head and fusion parameter gradients into `grads` if given.
pub(crate) fn heads_backward(
    params: &ModelParams,
    features: &Array2<f64>,
    prior: Option<&Array2<f64>>,
    box_trace: &HeadTrace,
    cls_trace: &HeadTrace,
    d_boxes: &Array2<f64>,
    d_class: &Array1<f64>,
    mut grads: Option<&mut ModelParams>,
) -> Array2<f64> {
    let slope = params.arch.leaky_slope;
    let cells = features.ncols();
    let d_cls_map = Array2::from_shape_fn((CLASS_OUTPUTS, cells), |(c, _)| d_class[c] / cells as f64);

    let (g_box, g_box_prior) = match grads.as_deref_mut() {
        Some(g) => {
            let gp = g.fusion.as_mut().map(|f| &mut f.box_prior);
            (Some(&mut g.box_head), gp)
        }
        None => (None, None),
    };
    let mut d_features = head_backward(
        &params.box_head,
        box_trace,
        features,
        prior,
        d_boxes,
        slope,
        g_box,
        g_box_prior,
    );
    let (g_cls, g_cls_prior) = match grads {
        Some(g) => {
            let gp = g.fusion.as_mut().map(|f| &mut f.cls_prior);
            (Some(&mut g.cls_head), gp)
        }
        None => (None, None),
    };
    d_features += &head_backward(
        &params.cls_head,
        cls_trace,
        features,
        prior,
        &d_cls_map,
        slope,
        g_cls,
        g_cls_prior,
    );
    d_features
}

/// Full backward pass for one sample. Accumulates into `grads`.
pub(crate) fn backward(
    params: &ModelParams,
    trace: &Trace,
    d_logits: &Logits,
    grads: &mut ModelParams,
    scope: BackwardScope,
) {
    debug_assert_eq!(d_logits.boxes.nrows(), BOX_CHANNELS);
    let d_features = heads_backward(
        params,
        &trace.features,
        trace.prior.as_ref(),
        &trace.box_head,
        &trace.cls_head,
        &d_logits.boxes,
        &d_logits.class,
        if scope.heads { Some(grads) } else { None },
    );
    if scope.backbone {
        backbone_backward(params, &trace.convs, d_features, 0, Some(grads));
    }
}

/// Backprop from the last activation down to the output of block
/// `stop_layer - 1` (or the input when `stop_layer == 0`). Returns the
/// gradient with respect to that tensor as `(channels, h * w)`.
pub(crate) fn backbone_backward(
    params: &ModelParams,
    convs: &[ConvTrace],
    d_last: Array2<f64>,
    stop_layer: usize,
    mut grads: Option<&mut ModelParams>,
) -> Array2<f64> {
    let slope = params.arch.leaky_slope;
    let k = ArchConfig::KERNEL;
    let mut d_act = d_last;
    for i in (stop_layer..convs.len()).rev() {
        let trace = &convs[i];
        let mut d_pre = d_act;
        d_pre.zip_mut_with(&trace.pre, |d, &z| *d *= leaky_grad(z, slope));
        if let Some(g) = grads.as_deref_mut() {
            accumulate_dense(&mut g.backbone[i], &d_pre, &trace.cols);
        }
        if i == 0 {
            // no gradient with respect to the image itself
            return Array2::zeros((0, 0));
        }
        let d_cols = params.backbone[i].weight.t().dot(&d_pre);
        let d_in = col2im(&d_cols, trace.in_dim, k, params.arch.strides[i], 1, trace.out_side);
        let (c, h, w) = trace.in_dim;
        d_act = d_in
            .into_shape_with_order((c, h * w))
            .expect("contiguous gradient");
    }
    d_act
}

/// Activation of backbone block `layer` and the gradient of `d_logits`
/// (through the heads) with respect to it. Used by Grad-CAM.
pub(crate) fn layer_activation_and_grad(
    params: &ModelParams,
    trace: &Trace,
    layer: usize,
    d_logits: &Logits,
) -> (Array3<f64>, Array3<f64>) {
    let d_features = heads_backward(
        params,
        &trace.features,
        trace.prior.as_ref(),
        &trace.box_head,
        &trace.cls_head,
        &d_logits.boxes,
        &d_logits.class,
        None,
    );
    let d_layer = backbone_backward(params, &trace.convs, d_features, layer + 1, None);
    let conv = &trace.convs[layer];
    let side = conv.out_side;
    let channels = conv.pre.nrows();
    let act = conv
        .pre
        .mapv(|v| leaky(v, params.arch.leaky_slope))
        .into_shape_with_order((channels, side, side))
        .expect("contiguous activation");
    let grad = d_layer
        .into_shape_with_order((channels, side, side))
        .expect("contiguous gradient");
    (act, grad)
}
