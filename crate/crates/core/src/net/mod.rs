//! A small convolutional classifier with hand-written reverse-mode gradients.
//!
//! Each stage is `conv3x3 (pad 1) -> ReLU -> maxpool 2x2`; two or three
//! stages are followed by one fully-connected layer producing the logits.
//! Parameters are stored as flat tensors in declaration order: for each
//! stage its kernel `[cout, cin, 3, 3]` then bias `[cout]`, then the
//! fully-connected weight `[classes, features]` and bias `[classes]`.

mod gradcam;
mod io;
mod layers;
mod train;

pub use gradcam::grad_cam;
pub use io::{load_params, save_params, MAGIC};
pub use train::{accuracy, train, TrainConfig, TrainReport};

use rand::Rng;

use crate::error::{Error, Result};
use crate::image::{GrayImage, Plane};
use layers::{conv3x3_backward, conv3x3_forward, maxpool2_backward, maxpool2_forward, relu_inplace, ConvShape};

/// Channel widths per stage, class count and square input side.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Arch {
    pub widths: Vec<usize>,
    pub num_classes: usize,
    pub input_side: usize,
}

impl Arch {
    pub fn new(widths: Vec<usize>, num_classes: usize, input_side: usize) -> Result<Self> {
        if !(2..=3).contains(&widths.len()) {
            return Err(Error::invalid(format!(
                "architecture needs 2 or 3 stages, got {}",
                widths.len()
            )));
        }
        if widths.iter().any(|&c| c == 0) {
            return Err(Error::invalid("stage widths must be positive"));
        }
        if num_classes < 2 {
            return Err(Error::invalid("need at least two classes"));
        }
        let div = 1usize << widths.len();
        if input_side == 0 || input_side % div != 0 {
            return Err(Error::invalid(format!(
                "input side {input_side} must be a positive multiple of {div}"
            )));
        }
        Ok(Self {
            widths,
            num_classes,
            input_side,
        })
    }

    pub fn stages(&self) -> usize {
        self.widths.len()
    }

    fn stage_in_channels(&self, s: usize) -> usize {
        if s == 0 {
            1
        } else {
            self.widths[s - 1]
        }
    }

    fn stage_side(&self, s: usize) -> usize {
        self.input_side >> s
    }

    pub fn features(&self) -> usize {
        let side = self.input_side >> self.stages();
        self.widths[self.stages() - 1] * side * side
    }

    /// Lengths of every parameter tensor in declaration order.
    pub fn tensor_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::new();
        for s in 0..self.stages() {
            sizes.push(self.widths[s] * self.stage_in_channels(s) * 9);
            sizes.push(self.widths[s]);
        }
        sizes.push(self.num_classes * self.features());
        sizes.push(self.num_classes);
        sizes
    }

    /// Fan-in of each tensor's layer, for initialization.
    fn fan_ins(&self) -> Vec<usize> {
        let mut fans = Vec::new();
        for s in 0..self.stages() {
            let f = self.stage_in_channels(s) * 9;
            fans.push(f);
            fans.push(f);
        }
        fans.push(self.features());
        fans.push(self.features());
        fans
    }
}

/// Learned parameters `theta` of one classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    arch: Arch,
    tensors: Vec<Vec<f64>>,
}

impl NetParams {
    pub fn zeros(arch: Arch) -> Self {
        let tensors = arch.tensor_sizes().into_iter().map(|n| vec![0.0; n]).collect();
        Self { arch, tensors }
    }

    pub fn from_tensors(arch: Arch, tensors: Vec<Vec<f64>>) -> Result<Self> {
        let sizes = arch.tensor_sizes();
        if tensors.len() != sizes.len()
            || tensors.iter().zip(&sizes).any(|(t, &n)| t.len() != n)
        {
            return Err(Error::invalid("tensor shapes do not match the architecture"));
        }
        if tensors.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("parameters must be finite"));
        }
        Ok(Self { arch, tensors })
    }

    /// He-uniform conv weights (`sqrt(6/fan_in)` bound, suited to ReLU),
    /// `1/sqrt(fan_in)` bound for the output layer, zero biases.
    pub fn init<R: Rng>(arch: Arch, rng: &mut R) -> Self {
        let fans = arch.fan_ins();
        let last = fans.len() - 2;
        let tensors = arch
            .tensor_sizes()
            .into_iter()
            .enumerate()
            .map(|(i, n)| {
                if i % 2 == 1 {
                    vec![0.0; n]
                } else {
                    let gain = if i == last { 1.0 } else { 6.0 };
                    let bound = (gain / fans[i] as f64).sqrt();
                    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
                }
            })
            .collect();
        Self { arch, tensors }
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn tensors(&self) -> &[Vec<f64>] {
        &self.tensors
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.tensors
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(Vec::len).sum()
    }

    fn check_input(&self, x: &Plane) -> Result<()> {
        let side = self.arch.input_side;
        if x.height() != side || x.width() != side {
            return Err(Error::invalid(format!(
                "classifier expects {side}x{side} input, got {}x{}",
                x.height(),
                x.width()
            )));
        }
        Ok(())
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.arch.num_classes {
            return Err(Error::invalid(format!(
                "label {label} out of range for {} classes",
                self.arch.num_classes
            )));
        }
        Ok(())
    }

    /// Forward pass keeping the activations needed by the backward pass.
    pub fn forward(&self, x: &GrayImage) -> Result<Forward> {
        self.check_input(x)?;
        Ok(self.forward_plane(x.data()))
    }

    fn forward_plane(&self, x: &[f64]) -> Forward {
        let a = &self.arch;
        let mut stage_inputs = Vec::with_capacity(a.stages());
        let mut activations = Vec::with_capacity(a.stages());
        let mut pool_idx = Vec::with_capacity(a.stages());
        let mut current = x.to_vec();
        for s in 0..a.stages() {
            let side = a.stage_side(s);
            let shape = ConvShape {
                cin: a.stage_in_channels(s),
                cout: a.widths[s],
                h: side,
                w: side,
            };
            let mut act = vec![0.0; shape.cout * side * side];
            conv3x3_forward(&shape, &current, &self.tensors[2 * s], &self.tensors[2 * s + 1], &mut act);
            relu_inplace(&mut act);
            let (pooled, idx) = maxpool2_forward(&act, shape.cout, side, side);
            stage_inputs.push(std::mem::replace(&mut current, pooled));
            activations.push(act);
            pool_idx.push(idx);
        }
        let fc_w = &self.tensors[2 * a.stages()];
        let fc_b = &self.tensors[2 * a.stages() + 1];
        let f = a.features();
        let logits = (0..a.num_classes)
            .map(|k| {
                fc_b[k]
                    + fc_w[k * f..(k + 1) * f]
                        .iter()
                        .zip(&current)
                        .map(|(w, v)| w * v)
                        .sum::<f64>()
            })
            .collect();
        Forward {
            logits: Logits(logits),
            stage_inputs,
            activations,
            pool_idx,
            features: current,
        }
    }

    /// Back-propagates `dlogits` down to the post-ReLU activation of the last
    /// convolution, accumulating fully-connected gradients if requested.
    fn backward_to_last_activation(
        &self,
        fw: &Forward,
        dlogits: &[f64],
        grads: Option<&mut [Vec<f64>]>,
    ) -> Vec<f64> {
        let a = &self.arch;
        let s_last = a.stages() - 1;
        let f = a.features();
        let fc_w = &self.tensors[2 * a.stages()];
        let mut dfeat = vec![0.0; f];
        for (k, &g) in dlogits.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (d, w) in dfeat.iter_mut().zip(&fc_w[k * f..(k + 1) * f]) {
                *d += g * w;
            }
        }
        if let Some(grads) = grads {
            let (gw, gb) = grads[2 * a.stages()..].split_at_mut(1);
            for (k, &g) in dlogits.iter().enumerate() {
                gb[0][k] += g;
                for (d, v) in gw[0][k * f..(k + 1) * f].iter_mut().zip(&fw.features) {
                    *d += g * v;
                }
            }
        }
        let mut dact = vec![0.0; fw.activations[s_last].len()];
        maxpool2_backward(&dfeat, &fw.pool_idx[s_last], &mut dact);
        dact
    }

    /// Full backward pass from `dlogits`. Returns the input gradient and
    /// accumulates parameter gradients into `grads` when given.
    fn backward(&self, fw: &Forward, dlogits: &[f64], mut grads: Option<&mut [Vec<f64>]>) -> Vec<f64> {
        let a = &self.arch;
        let mut dact = self.backward_to_last_activation(fw, dlogits, grads.as_deref_mut());
        for s in (0..a.stages()).rev() {
            // ReLU: gradient flows where the activation is positive.
            for (d, &v) in dact.iter_mut().zip(&fw.activations[s]) {
                if v <= 0.0 {
                    *d = 0.0;
                }
            }
            let side = a.stage_side(s);
            let shape = ConvShape {
                cin: a.stage_in_channels(s),
                cout: a.widths[s],
                h: side,
                w: side,
            };
            let mut dinput = vec![0.0; shape.cin * side * side];
            let param_grads = grads.as_deref_mut().map(|g| {
                let (w, b) = g[2 * s..2 * s + 2].split_at_mut(1);
                (&mut w[0][..], &mut b[0][..])
            });
            conv3x3_backward(
                &shape,
                &fw.stage_inputs[s],
                &self.tensors[2 * s],
                &dact,
                Some(&mut dinput),
                param_grads,
            );
            if s > 0 {
                let mut dprev = vec![0.0; fw.activations[s - 1].len()];
                maxpool2_backward(&dinput, &fw.pool_idx[s - 1], &mut dprev);
                dact = dprev;
            } else {
                dact = dinput;
            }
        }
        dact
    }

    /// Cross-entropy loss on `label` and its gradient with respect to every
    /// input pixel.
    pub fn loss_and_input_grad(&self, x: &GrayImage, label: usize) -> Result<(f64, Plane)> {
        self.check_input(x)?;
        self.check_label(label)?;
        let fw = self.forward_plane(x.data());
        let (loss, dlogits) = fw.logits.cross_entropy(label);
        let grad = self.backward(&fw, &dlogits, None);
        Ok((loss, Plane::new(x.height(), x.width(), grad)?))
    }

    /// Loss, input gradient and parameter gradients for one sample.
    pub fn loss_and_grads(&self, x: &GrayImage, label: usize) -> Result<(f64, Logits, Plane, Vec<Vec<f64>>)> {
        self.check_input(x)?;
        self.check_label(label)?;
        let fw = self.forward_plane(x.data());
        let (loss, dlogits) = fw.logits.cross_entropy(label);
        let mut grads: Vec<Vec<f64>> = self.tensors.iter().map(|t| vec![0.0; t.len()]).collect();
        let grad = self.backward(&fw, &dlogits, Some(&mut grads));
        Ok((loss, fw.logits, Plane::new(x.height(), x.width(), grad)?, grads))
    }

    pub fn predict(&self, x: &GrayImage) -> Result<usize> {
        Ok(self.forward(x)?.logits.argmax())
    }
}

/// Activations cached by [`NetParams::forward`].
#[derive(Debug, Clone)]
pub struct Forward {
    pub logits: Logits,
    stage_inputs: Vec<Vec<f64>>,
    activations: Vec<Vec<f64>>,
    pool_idx: Vec<Vec<u32>>,
    features: Vec<f64>,
}

/// Raw class scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits(pub Vec<f64>);

impl Logits {
    pub fn softmax(&self) -> Vec<f64> {
        let max = self.0.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = self.0.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / sum).collect()
    }

    /// Index of the largest score; the first one wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate() {
            if v > self.0[best] {
                best = i;
            }
        }
        best
    }

    /// `-log softmax(label)` and its gradient with respect to the logits.
    pub fn cross_entropy(&self, label: usize) -> (f64, Vec<f64>) {
        let max = self.0.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + self.0.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = lse - self.0[label];
        let mut grad: Vec<f64> = self.0.iter().map(|v| (v - lse).exp()).collect();
        grad[label] -= 1.0;
        (loss, grad)
    }
}

/// A differentiable image classifier that attacks can query.
pub trait Classifier: Sync {
    fn num_classes(&self) -> usize;

    fn logits(&self, x: &GrayImage) -> Result<Logits>;

    /// Cross-entropy on `label` and its gradient with respect to `x`.
    fn loss_and_input_grad(&self, x: &GrayImage, label: usize) -> Result<(f64, Plane)>;

    fn predict(&self, x: &GrayImage) -> Result<usize> {
        Ok(self.logits(x)?.argmax())
    }
}

impl Classifier for NetParams {
    fn num_classes(&self) -> usize {
        self.arch.num_classes
    }

    fn logits(&self, x: &GrayImage) -> Result<Logits> {
        Ok(self.forward(x)?.logits)
    }

    fn loss_and_input_grad(&self, x: &GrayImage, label: usize) -> Result<(f64, Plane)> {
        NetParams::loss_and_input_grad(self, x, label)
    }
}
