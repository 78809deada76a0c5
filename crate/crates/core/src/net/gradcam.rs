use super::NetParams;
use crate::error::{Error, Result};
use crate::image::{sample_unchecked, GrayImage, Plane};

/// Gradient-weighted class activation map for `class_index`.
///
/// Channel weights are the spatial means of `d logit / d A` over the last
/// convolution's post-ReLU activation `A`. The weighted channel sum is
/// rectified, upsampled bicubically to the input size, rectified again and
/// min-max normalized to `[0, 1]`. A flat map comes back all zero.
pub fn grad_cam(params: &NetParams, x: &GrayImage, class_index: usize) -> Result<Plane> {
    let arch = params.arch();
    if class_index >= arch.num_classes {
        return Err(Error::invalid(format!(
            "class {class_index} out of range for {} classes",
            arch.num_classes
        )));
    }
    let fw = params.forward(x)?;
    let mut onehot = vec![0.0; arch.num_classes];
    onehot[class_index] = 1.0;
    let dact = params.backward_to_last_activation(&fw, &onehot, None);

    let last = arch.stages() - 1;
    let act = &fw.activations[last];
    let channels = arch.widths[last];
    let side = arch.stage_side(last);
    let plane = side * side;
    let mut cam = vec![0.0; plane];
    for k in 0..channels {
        let alpha = dact[k * plane..(k + 1) * plane].iter().sum::<f64>() / plane as f64;
        for (c, a) in cam.iter_mut().zip(&act[k * plane..(k + 1) * plane]) {
            *c += alpha * a;
        }
    }
    cam.iter_mut().for_each(|v| *v = v.max(0.0));
    let cam = Plane::new(side, side, cam)?;

    let (h, w) = (x.height(), x.width());
    let scale_u = side as f64 / h as f64;
    let scale_v = side as f64 / w as f64;
    let mut up = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            // Pixel-center alignment between the two grids.
            let u = (r as f64 + 0.5) * scale_u - 0.5;
            let v = (c as f64 + 0.5) * scale_v - 0.5;
            up.push(sample_unchecked(&cam, u, v).value.max(0.0));
        }
    }
    let min = up.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = up.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if range > 0.0 {
        up.iter_mut().for_each(|v| *v = (*v - min) / range);
    } else {
        up.iter_mut().for_each(|v| *v = 0.0);
    }
    Plane::new(h, w, up)
}
