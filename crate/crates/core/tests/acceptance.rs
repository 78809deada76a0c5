//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.
//!
//! Criteria 9-13 run the default pipeline through the `sraw` binary twice.
//! Set `SRAW_ACCEPTANCE_DIR` to keep those outputs instead of using a
//! temporary directory.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sraw::attack::{
    averaged_gradient, project_offsets, sraw_attack, Perturbation, SrawConfig,
};
use sraw::harness::{self, read_records, ExperimentConfig, Layout};
use sraw::image::{Coord, GrayImage, Mask, Plane};
use sraw::metrics::{attack_success_rate, psnr, ssim, EvalRecord};
use sraw::net::{load_params, Arch, Classifier, Logits, NetParams};
use sraw::rng::stream;
use sraw::tps::{assemble_system, ControlPoints};
use sraw::warp::{build_mesh, MeshSpec, OffsetField, Region, Warper};

type Check = std::result::Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, lo: f64, hi: f64) -> GrayImage {
    GrayImage::new(h, w, (0..h * w).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Mask {
    let (r0, c0) = (rng.random_range(0..h / 2), rng.random_range(0..w / 2));
    let (r1, c1) = (r0 + rng.random_range(1..=h / 2), c0 + rng.random_range(1..=w / 2));
    let data = (0..h * w)
        .map(|p| (r0..r1).contains(&(p / w)) && (c0..c1).contains(&(p % w)))
        .collect();
    Mask::new(h, w, data).unwrap()
}

/// Uniform noise blurred with a unit Gaussian and stretched onto
/// `[0.2, 0.8]`; spatially correlated like speckled chips.
fn correlated_image(rng: &mut ChaCha8Rng, side: usize) -> GrayImage {
    let noise: Vec<f64> = (0..side * side).map(|_| rng.random::<f64>()).collect();
    let kernel: Vec<f64> = (-3i32..=3).map(|d| (-0.5 * f64::from(d * d)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let at = |i: isize| i.clamp(0, side as isize - 1) as usize;
    let mut rows = vec![0.0; side * side];
    for r in 0..side {
        for c in 0..side {
            rows[r * side + c] = (-3..=3).map(|d| kernel[(d + 3) as usize] * noise[r * side + at(c as isize + d)]).sum::<f64>() / norm;
        }
    }
    let mut out = vec![0.0; side * side];
    for r in 0..side {
        for c in 0..side {
            out[r * side + c] = (-3..=3).map(|d| kernel[(d + 3) as usize] * rows[at(r as isize + d) * side + c]).sum::<f64>() / norm;
        }
    }
    let lo = out.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    GrayImage::new(side, side, out.iter().map(|v| 0.2 + 0.6 * (v - lo) / (hi - lo)).collect()).unwrap()
}

/// A mesh on a random image size and grid.
fn random_mesh(rng: &mut ChaCha8Rng, min_side: usize, max_side: usize) -> MeshSpec {
    let h = rng.random_range(min_side..=max_side);
    let w = rng.random_range(min_side..=max_side);
    let mh = rng.random_range(2..=8.min(h));
    let mw = rng.random_range(2..=8.min(w));
    build_mesh(h, w, mh, mw, &random_mask(rng, h, w), 0.05).unwrap()
}

fn random_offsets(rng: &mut ChaCha8Rng, n: usize, amp: f64) -> Vec<[f64; 2]> {
    (0..n).map(|_| [rng.random_range(-amp..amp), rng.random_range(-amp..amp)]).collect()
}

/// Random classifier with mostly active ReLUs so finite differences rarely
/// straddle a kink.
fn random_net(rng: &mut ChaCha8Rng, widths: Vec<usize>, classes: usize, side: usize) -> NetParams {
    let arch = Arch::new(widths, classes, side).unwrap();
    let p = NetParams::init(arch.clone(), rng);
    let tensors = p
        .tensors()
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if i % 2 == 1 {
                t.iter().map(|_| rng.random_range(-0.1..0.3)).collect()
            } else {
                t.clone()
            }
        })
        .collect();
    NetParams::from_tensors(arch, tensors).unwrap()
}

fn tps_interpolation() -> Check {
    let start = Instant::now();
    let mut rng = stream(101, 0);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let mesh = random_mesh(&mut rng, 16, 96);
        let src = mesh.source();
        let tar = src.displaced(&random_offsets(&mut rng, src.len(), 3.0)).map_err(|e| e.to_string())?;
        let model = assemble_system(src).and_then(|s| s.solve_coefficients(&tar)).map_err(|e| e.to_string())?;
        for (p, q) in src.points().iter().zip(tar.points()) {
            let g = model.eval(*p);
            worst = worst.max((g.u - q.u).abs()).max((g.v - q.v).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(
        worst < 1e-9 && secs < 5.0,
        format!("max |g(src) - tar| = {worst:.2e} (< 1e-9), {secs:.2} s (< 5 s)"),
    )
}

fn affine_reproduction() -> Check {
    let mut rng = stream(102, 0);
    let (mut max_w, mut max_field) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let mesh = random_mesh(&mut rng, 16, 64);
        let src = mesh.source();
        let a: [f64; 3] = [rng.random_range(-5.0..5.0), rng.random_range(0.8..1.2), rng.random_range(-0.2..0.2)];
        let b: [f64; 3] = [rng.random_range(-5.0..5.0), rng.random_range(-0.2..0.2), rng.random_range(0.8..1.2)];
        let map = |p: Coord| Coord::new(a[0] + a[1] * p.u + a[2] * p.v, b[0] + b[1] * p.u + b[2] * p.v);
        let tar = ControlPoints::new(src.points().iter().map(|&p| map(p)).collect()).map_err(|e| e.to_string())?;
        let model = assemble_system(src).and_then(|s| s.solve_coefficients(&tar)).map_err(|e| e.to_string())?;
        for w in model.weights_u.iter().chain(&model.weights_v) {
            max_w = max_w.max(w.abs());
        }
        let field = model.eval_field(mesh.height, mesh.width).map_err(|e| e.to_string())?;
        for p in 0..mesh.height * mesh.width {
            let want = map(Coord::new((p / mesh.width) as f64, (p % mesh.width) as f64));
            max_field = max_field.max((field.map_u[p] - want.u).abs()).max((field.map_v[p] - want.v).abs());
        }
    }
    ensure(
        max_w < 1e-8 && max_field < 1e-8,
        format!("max |w| = {max_w:.2e}, max field error = {max_field:.2e} (both < 1e-8)"),
    )
}

fn identity_warp() -> Check {
    let mut rng = stream(103, 0);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let mesh = random_mesh(&mut rng, 16, 64);
        let x = random_image(&mut rng, mesh.height, mesh.width, 0.0, 1.0);
        let warper = Warper::new(mesh).map_err(|e| e.to_string())?;
        let y = warper.warp(&x, &OffsetField::zeros(warper.mesh())).map_err(|e| e.to_string())?;
        for (a, b) in x.data().iter().zip(y.data()) {
            worst = worst.max((a - b).abs());
        }
    }
    ensure(worst <= 1e-12, format!("max |warp(x, 0) - x| = {worst:.2e} (<= 1e-12)"))
}

/// Softmax over `W tanh(s * x + c)`: a smooth stand-in classifier whose
/// loss is differentiable everywhere, so central differences at a coarse step
/// are a valid oracle.
struct SmoothClassifier {
    weights: Vec<Vec<f64>>,
    scale: Vec<f64>,
    shift: Vec<f64>,
}

impl SmoothClassifier {
    fn random(rng: &mut ChaCha8Rng, classes: usize, pixels: usize) -> Self {
        Self {
            weights: (0..classes).map(|_| (0..pixels).map(|_| rng.random_range(-0.5..0.5)).collect()).collect(),
            scale: (0..pixels).map(|_| rng.random_range(1.0..3.0)).collect(),
            shift: (0..pixels).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    fn hidden(&self, x: &GrayImage) -> Vec<f64> {
        x.data().iter().zip(&self.scale).zip(&self.shift).map(|((v, s), c)| (s * v + c).tanh()).collect()
    }
}

impl Classifier for SmoothClassifier {
    fn num_classes(&self) -> usize {
        self.weights.len()
    }

    fn logits(&self, x: &GrayImage) -> sraw::Result<Logits> {
        let h = self.hidden(x);
        Ok(Logits(self.weights.iter().map(|w| w.iter().zip(&h).map(|(a, b)| a * b).sum()).collect()))
    }

    fn loss_and_input_grad(&self, x: &GrayImage, label: usize) -> sraw::Result<(f64, Plane)> {
        let h = self.hidden(x);
        let (loss, dlogits) = self.logits(x)?.cross_entropy(label);
        let grad = (0..x.len())
            .map(|p| {
                let back: f64 = self.weights.iter().zip(&dlogits).map(|(w, d)| d * w[p]).sum();
                back * self.scale[p] * (1.0 - h[p] * h[p])
            })
            .collect();
        Ok((loss, Plane::new(x.height(), x.width(), grad)?))
    }
}

/// Worst relative error of `warp_backward` + `loss_and_input_grad` against
/// central differences with step `h`, over components with |fd| > 1e-6.
fn chain_error<C: Classifier>(model: &C, rng: &mut ChaCha8Rng, label: usize, h: f64) -> (f64, usize) {
    let x = correlated_image(rng, 16);
    let mesh = build_mesh(16, 16, 4, 4, &random_mask(rng, 16, 16), 0.05).unwrap();
    let warper = Warper::new(mesh).unwrap();
    let xi = OffsetField { offsets: random_offsets(rng, 16, 1.0) };
    let tape = warper.forward(&x, &xi).unwrap();
    let (_, g) = model.loss_and_input_grad(&tape.output, label).unwrap();
    let analytic = warper.backward(&tape, &g).unwrap();
    let loss = |o: &OffsetField| model.loss_and_input_grad(&warper.warp(&x, o).unwrap(), label).unwrap().0;
    let (mut worst, mut checked) = (0.0f64, 0usize);
    for k in 0..16 {
        for a in 0..2 {
            let mut up = xi.clone();
            let mut dn = xi.clone();
            up.offsets[k][a] += h;
            dn.offsets[k][a] -= h;
            let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
            if fd.abs() > 1e-6 {
                worst = worst.max((analytic[k][a] - fd).abs() / fd.abs());
                checked += 1;
            }
        }
    }
    (worst, checked)
}

/// The chain is checked at the prescribed 1e-3 px step on a smooth
/// classifier. The CNN is piecewise linear (ReLU, max pooling), and a 1e-3 px
/// step routinely crosses one of its kinks, so the CNN chain is checked at
/// 1e-5 px instead, with the same tolerance. Images are spatially correlated:
/// bicubic sampling is only C1, and on white noise the jumps in its second
/// derivative at integer knots dominate a 1e-3 px difference quotient.
fn gradient_check() -> Check {
    let start = Instant::now();
    let mut rng = stream(104, 0);
    let (mut smooth, mut cnn) = ((0.0f64, 0usize), (0.0f64, 0usize));
    for trial in 0..20 {
        let model = SmoothClassifier::random(&mut rng, 4, 256);
        let (w, n) = chain_error(&model, &mut rng, trial % 4, 1e-3);
        smooth = (smooth.0.max(w), smooth.1 + n);
        let net = random_net(&mut rng, vec![3, 4, 5], 4, 16);
        let (w, n) = chain_error(&net, &mut rng, trial % 4, 1e-5);
        cnn = (cnn.0.max(w), cnn.1 + n);
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(
        smooth.0 < 1e-3 && cnn.0 < 1e-3 && smooth.1 > 0 && cnn.1 > 0 && secs < 60.0,
        format!(
            "20 instances; smooth classifier h=1e-3: max rel error {:.2e} over {} components; \
             CNN h=1e-5: {:.2e} over {} (both < 1e-3); {secs:.1} s (< 60 s)",
            smooth.0, smooth.1, cnn.0, cnn.1
        ),
    )
}

fn operator_consistency() -> Check {
    let mut rng = stream(105, 0);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let mesh = random_mesh(&mut rng, 16, 48);
        let xi = OffsetField { offsets: random_offsets(&mut rng, mesh.num_points(), 3.0) };
        let (h, w) = (mesh.height, mesh.width);
        let tar = mesh.source().displaced(&xi.offsets).map_err(|e| e.to_string())?;
        let solved = assemble_system(mesh.source())
            .and_then(|s| s.solve_coefficients(&tar))
            .and_then(|m| m.eval_field(h, w))
            .map_err(|e| e.to_string())?;
        let fast = Warper::new(mesh).and_then(|wp| wp.field(&xi)).map_err(|e| e.to_string())?;
        for p in 0..h * w {
            worst = worst
                .max((fast.map_u[p] - solved.map_u[p]).abs())
                .max((fast.map_v[p] - solved.map_v[p]).abs());
        }
    }
    ensure(worst < 1e-9, format!("max operator vs solve-and-evaluate difference {worst:.2e} (< 1e-9)"))
}

fn projection_properties() -> Check {
    let mut rng = stream(106, 0);
    let mut violations = 0;
    for _ in 0..50 {
        let mesh = random_mesh(&mut rng, 16, 64);
        let (r_fg, r_bg) = (rng.random_range(0.0..1.0), rng.random_range(1.0..4.0));
        let xi = OffsetField { offsets: random_offsets(&mut rng, mesh.num_points(), 6.0) };
        let once = project_offsets(&xi, &mesh, r_fg, r_bg).map_err(|e| e.to_string())?;
        let twice = project_offsets(&once, &mesh, r_fg, r_bg).map_err(|e| e.to_string())?;
        if once != twice {
            violations += 1;
        }
        for (d, region) in once.offsets.iter().zip(mesh.regions()) {
            let r = if *region == Region::Foreground { r_fg } else { r_bg };
            if d[0].hypot(d[1]) > r + 1e-12 {
                violations += 1;
            }
        }
    }
    let mask = Mask::empty(32, 32);
    let mesh = build_mesh(32, 32, 2, 2, &mask, 0.05).unwrap();
    let scaled = project_offsets(&OffsetField { offsets: vec![[3.0, 4.0]; 4] }, &mesh, 0.5, 2.5).unwrap();
    let err = scaled.offsets.iter().map(|d| (d[0] - 1.5).abs().max((d[1] - 2.0).abs())).fold(0.0, f64::max);
    ensure(
        violations == 0 && err <= 1e-12,
        format!("{violations} idempotence/feasibility violations over 50 fields; (3,4) -> (1.5,2.0) error {err:.1e}"),
    )
}

fn reduction_tests() -> Check {
    let mut rng = stream(107, 0);
    let net = random_net(&mut rng, vec![4, 6, 8], 5, 32);
    let x = random_image(&mut rng, 32, 32, 0.1, 0.9);
    let mask = random_mask(&mut rng, 32, 32);
    let label = 2;
    let base = SrawConfig { decay: 0.0, num_warps: 1, step_size: 0.4, seed: 9, ..Default::default() };
    let warper = Warper::new(build_mesh(32, 32, base.mesh_h, base.mesh_w, &mask, base.fg_fraction_threshold).unwrap()).unwrap();

    // Unroll mu = 0, N_w = 1 by hand for three steps.
    let mut xi = OffsetField::zeros(warper.mesh());
    let mut step_err = 0.0f64;
    for t in 1..=3 {
        let tape = warper.forward(&x, &xi).unwrap();
        let (_, g) = net.loss_and_input_grad(&tape.output, label).unwrap();
        let g = warper.backward(&tape, &g).unwrap();
        let norm: f64 = g.iter().flatten().map(|v| v.abs()).sum();
        let stepped = OffsetField {
            offsets: xi.offsets.iter().zip(&g).map(|(d, v)| [d[0] + 0.4 * v[0] / norm, d[1] + 0.4 * v[1] / norm]).collect(),
        };
        xi = project_offsets(&stepped, warper.mesh(), base.r_fg, base.r_bg).unwrap();
        let run = sraw_attack(&net, &x, label, &mask, &SrawConfig { iterations: t, ..base.clone() }).unwrap();
        let Perturbation::Offsets(got) = run.perturbation else {
            return Err("SRAW returned a pixel perturbation".into());
        };
        for (a, b) in got.offsets.iter().zip(&xi.offsets) {
            step_err = step_err.max((a[0] - b[0]).abs()).max((a[1] - b[1]).abs());
        }
    }

    let tape = warper.forward(&x, &xi).unwrap();
    let (_, g) = net.loss_and_input_grad(&tape.output, label).unwrap();
    let single = warper.backward(&tape, &g).unwrap();
    let est = averaged_gradient(&net, &warper, &x, &xi, label, 5, 0.0, &mut stream(1, 0), 0).unwrap();
    let jitter_err = est
        .mean
        .iter()
        .zip(&single)
        .map(|(a, b)| (a[0] - b[0]).abs().max((a[1] - b[1]).abs()))
        .fold(0.0, f64::max);
    ensure(
        step_err <= 1e-12 && jitter_err <= 1e-12,
        format!("mu=0, N_w=1 step error {step_err:.1e}; sigma=0 average error {jitter_err:.1e} (both <= 1e-12)"),
    )
}

fn metric_oracles() -> Check {
    let mut rng = stream(108, 0);
    let mut mismatches = 0;
    for _ in 0..50 {
        let classes = rng.random_range(2..6);
        let records: Vec<EvalRecord> = (0..rng.random_range(1..40))
            .map(|i| EvalRecord {
                id: format!("r{i}"),
                label: rng.random_range(0..classes),
                clean_prediction: rng.random_range(0..classes),
                adversarial_prediction: rng.random_range(0..classes),
            })
            .collect();
        let mut correct = 0;
        let mut flipped = 0;
        for r in &records {
            if r.clean_prediction == r.label {
                correct += 1;
                if r.adversarial_prediction != r.label {
                    flipped += 1;
                }
            }
        }
        let expect = if correct == 0 { None } else { Some(flipped as f64 / correct as f64) };
        if attack_success_rate(&records).map_err(|e| e.to_string())? != expect {
            mismatches += 1;
        }
    }
    let a = GrayImage::filled(32, 32, 0.5).unwrap();
    let b = GrayImage::filled(32, 32, 0.6).unwrap();
    let p = psnr(&a, &b).map_err(|e| e.to_string())?;
    let (mut self_err, mut sym_err) = (0.0f64, 0.0f64);
    for _ in 0..10 {
        let x = random_image(&mut rng, 40, 40, 0.0, 1.0);
        let y = random_image(&mut rng, 40, 40, 0.0, 1.0);
        self_err = self_err.max((ssim(&x, &x).unwrap() - 1.0).abs());
        sym_err = sym_err.max((ssim(&x, &y).unwrap() - ssim(&y, &x).unwrap()).abs());
    }
    ensure(
        mismatches == 0 && (p - 20.0).abs() < 1e-9 && self_err <= 1e-12 && sym_err <= 1e-12,
        format!(
            "ASR recount mismatches {mismatches}/50; PSNR {p:.12} dB; |SSIM(x,x) - 1| {self_err:.1e}; asymmetry {sym_err:.1e}"
        ),
    )
}

/// Runs `sraw pipeline --out dir` with the default configuration.
fn run_pipeline(dir: &Path) -> std::result::Result<f64, String> {
    let start = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_sraw"))
        .args(["pipeline", "--out"])
        .arg(dir)
        .status()
        .map_err(|e| format!("cannot run sraw: {e}"))?;
    if !status.success() {
        return Err(format!("sraw pipeline failed with {status}"));
    }
    Ok(start.elapsed().as_secs_f64())
}

fn config_for(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.output.root = dir.to_path_buf();
    cfg
}

/// Rows of a small CSV as header-keyed maps.
fn read_table(path: &Path) -> std::result::Result<Vec<BTreeMap<String, String>>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or("empty table")?.split(',').collect();
    Ok(lines
        .map(|l| header.iter().map(|h| h.to_string()).zip(l.split(',').map(str::to_string)).collect())
        .collect())
}

fn number(row: &BTreeMap<String, String>, key: &str) -> std::result::Result<f64, String> {
    row.get(key).ok_or(format!("missing column {key}"))?.parse().map_err(|e| format!("{key}: {e}"))
}

fn clean_accuracies(dir: &Path) -> std::result::Result<Vec<(String, f64)>, String> {
    let rows = read_table(&Layout::new(&config_for(dir)).tables_dir().join("train_accuracy.csv"))?;
    rows.iter().map(|r| Ok((r["model"].clone(), number(r, "test_accuracy")?))).collect()
}

fn clean_training(dir: &Path) -> Check {
    let accs = clean_accuracies(dir)?;
    let timings = read_table(&Layout::new(&config_for(dir)).timings_dir().join("train.csv"))?;
    let total: f64 = timings.iter().map(|r| number(r, "seconds")).sum::<std::result::Result<f64, _>>()?;
    let listed: Vec<String> = accs.iter().map(|(m, a)| format!("{m} {:.1}%", 100.0 * a)).collect();
    ensure(
        accs.len() == 4 && accs.iter().all(|(_, a)| *a >= 0.95) && total < 600.0,
        format!("test accuracy {} (>= 95%); training {total:.0} s (< 600 s)", listed.join(", ")),
    )
}

fn method_asr(cfg: &ExperimentConfig, method: &str, model: &str) -> std::result::Result<f64, String> {
    let rows = read_records(Layout::new(cfg).attack_dir(method, model).join("records.csv")).map_err(|e| e.to_string())?;
    let evals: Vec<EvalRecord> = rows.iter().map(|r| r.eval_record()).collect();
    attack_success_rate(&evals).map_err(|e| e.to_string())?.ok_or("no correctly classified samples".into())
}

fn whitebox(dir: &Path) -> Check {
    let cfg = config_for(dir);
    let mut ok = true;
    let mut parts = Vec::new();
    for model in harness::model_names(&cfg) {
        let s = method_asr(&cfg, "sraw", &model)?;
        let r = method_asr(&cfg, "randwarp", &model)?;
        ok &= s >= 0.60 && s - r >= 0.20;
        parts.push(format!("{model} {:.1}% vs random {:.1}%", 100.0 * s, 100.0 * r));
    }
    ensure(ok, format!("SRAW ASR (>= 60%, >= random + 20 pts): {}", parts.join("; ")))
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

/// Bisects the PGD budget on `base` until its ASR is within 5 points of
/// SRAW's, then compares mean SSIM over the test split.
fn imperceptibility(dir: &Path) -> Check {
    let cfg = config_for(dir);
    let model = "base";
    let target = method_asr(&cfg, "sraw", model)?;
    let sraw_rows = read_records(Layout::new(&cfg).attack_dir("sraw", model).join("records.csv")).map_err(|e| e.to_string())?;
    let sraw_ssim = mean(sraw_rows.iter().map(|r| r.ssim));
    let params = load_params(harness::resolve_model(&cfg, model)).map_err(|e| e.to_string())?;
    let (_, test) = harness::load_split(&cfg).map_err(|e| e.to_string())?;

    let pgd_at = |eps: f64| -> std::result::Result<(f64, f64), String> {
        let mut c = cfg.clone();
        c.attack.pgd.epsilon = eps;
        c.attack.pgd.step = eps / 10.0;
        let out = harness::attack_chips(&c, "pgd", &params, &test).map_err(|e| e.to_string())?;
        let evals: Vec<EvalRecord> = out.iter().map(|o| o.record.eval_record()).collect();
        let asr = attack_success_rate(&evals).map_err(|e| e.to_string())?.unwrap_or(0.0);
        Ok((asr, mean(out.iter().map(|o| o.record.ssim))))
    };

    let (mut lo, mut hi) = (0.0, 32.0 / 255.0);
    let mut best: Option<(f64, f64, f64)> = None;
    for _ in 0..10 {
        let eps = 0.5 * (lo + hi);
        let (asr, s) = pgd_at(eps)?;
        if best.is_none_or(|(_, a, _)| (asr - target).abs() < (a - target).abs()) {
            best = Some((eps, asr, s));
        }
        if (asr - target).abs() <= 0.01 {
            break;
        }
        if asr < target {
            lo = eps;
        } else {
            hi = eps;
        }
    }
    let (eps, asr, pgd_ssim) = best.expect("at least one PGD run");
    ensure(
        (asr - target).abs() <= 0.05 && sraw_ssim > pgd_ssim,
        format!(
            "{model}: SRAW ASR {:.1}% SSIM {sraw_ssim:.4}; PGD eps {:.2}/255 ASR {:.1}% SSIM {pgd_ssim:.4}",
            100.0 * target,
            eps * 255.0,
            100.0 * asr
        ),
    )
}

fn transferability(dir: &Path) -> Check {
    let cfg = config_for(dir);
    let clean: BTreeMap<String, f64> = clean_accuracies(dir)?.into_iter().collect();
    let rows = read_table(&Layout::new(&cfg).tables_dir().join("transfer_sraw.csv"))?;
    let mut worst: Option<(f64, String)> = None;
    for row in &rows {
        let surrogate = &row["surrogate"];
        for (target, acc) in &clean {
            if target == surrogate {
                continue;
            }
            let drop = acc - number(row, target)?;
            if worst.as_ref().is_none_or(|(d, _)| drop < *d) {
                worst = Some((drop, format!("{surrogate} -> {target}")));
            }
        }
    }
    let (drop, pair) = worst.ok_or("transfer table is empty")?;
    ensure(
        drop >= 0.10,
        format!("smallest cross-model accuracy drop {:.1} pts ({pair}) (>= 10 pts)", 100.0 * drop),
    )
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).into_iter().flatten().flatten() {
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.retain(|p| !p.starts_with("timings"));
    out.sort();
    out
}

fn determinism(a: &Path, b: &Path) -> Check {
    let (fa, fb) = (files_under(a), files_under(b));
    if fa != fb {
        return Err(format!("file sets differ ({} vs {} files)", fa.len(), fb.len()));
    }
    let differing: Vec<String> = fa
        .iter()
        .filter(|p| fs::read(a.join(p)).ok() != fs::read(b.join(p)).ok())
        .map(|p| p.display().to_string())
        .collect();
    let counted = fa.iter().filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("csv" | "pgm"))).count();
    ensure(
        differing.is_empty() && counted > 0,
        format!(
            "{} files compared ({counted} CSV/PGM), {} differ{}",
            fa.len(),
            differing.len(),
            differing.first().map(|p| format!(", first {p}")).unwrap_or_default()
        ),
    )
}

struct Suite {
    failures: usize,
}

impl Suite {
    fn run(&mut self, id: usize, name: &str, check: impl FnOnce() -> Check) {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{id:2}] {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                self.failures += 1;
                println!("FAIL [{id:2}] {name}: {detail} [{secs:.1} s]");
            }
        }
    }
}

fn main() {
    let mut suite = Suite { failures: 0 };
    suite.run(1, "TPS interpolation", tps_interpolation);
    suite.run(2, "affine reproduction", affine_reproduction);
    suite.run(3, "identity warp", identity_warp);
    suite.run(4, "end-to-end gradient check", gradient_check);
    suite.run(5, "field operator consistency", operator_consistency);
    suite.run(6, "projection properties", projection_properties);
    suite.run(7, "reduction tests", reduction_tests);
    suite.run(8, "metric oracles", metric_oracles);

    let temp = tempfile::tempdir().expect("temporary directory");
    let root = std::env::var_os("SRAW_ACCEPTANCE_DIR").map(PathBuf::from).unwrap_or_else(|| temp.path().to_path_buf());
    let (first, second) = (root.join("run-a"), root.join("run-b"));
    eprintln!("acceptance: running the default pipeline into {}", first.display());
    let pipeline = run_pipeline(&first);
    let pipeline_ok = pipeline.is_ok();
    let gated = |check: fn(&Path) -> Check| {
        let dir = first.clone();
        let err = pipeline.clone().err();
        move || match err {
            Some(e) => Err(e),
            None => check(&dir),
        }
    };
    suite.run(9, "clean training", gated(clean_training));
    suite.run(10, "white-box effectiveness", gated(whitebox));
    suite.run(11, "imperceptibility direction", gated(imperceptibility));
    suite.run(12, "transferability direction", gated(transferability));
    suite.run(13, "determinism", || {
        if !pipeline_ok {
            return Err("first pipeline run failed".into());
        }
        eprintln!("acceptance: rerunning the pipeline into {}", second.display());
        run_pipeline(&second)?;
        determinism(&first, &second)
    });

    if suite.failures > 0 {
        println!("{} of 13 criteria failed", suite.failures);
        std::process::exit(1);
    }
    println!("all 13 criteria passed");
}
