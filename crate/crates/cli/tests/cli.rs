use std::path::Path;
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;
use tpan_core::png::{decode_png, encode_png, quantize};
use tpan_core::{ImageField, KernelLayout, TKernelField};

fn tpan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tpan"))
        .args(args)
        .env_remove("TPAN_THREADS")
        .output()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn random_image(seed: u64, h: usize, w: usize, c: usize) -> ImageField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Values on the 8-bit grid survive the PNG round trip exactly.
    let data = (0..h * w * c).map(|_| rng.gen_range(0..=255u8) as f32 / 255.0).collect();
    ImageField::new(h, w, c, data).unwrap()
}

fn write_png(path: &Path, img: &ImageField) {
    std::fs::write(path, encode_png(img).unwrap()).unwrap();
}

fn write_mnrt(path: &Path, field: &ImageField) {
    std::fs::write(path, field.to_mnrt_bytes()).unwrap();
}

fn read_png(path: &Path) -> ImageField {
    decode_png(&std::fs::read(path).unwrap()).unwrap()
}

fn read_mnrt(path: &Path) -> ImageField {
    ImageField::from_mnrt_bytes(&std::fs::read(path).unwrap()).unwrap()
}

fn one_hot_weights(h: usize, w: usize) -> ImageField {
    ImageField::from_fn(h, w, 3, |_, _, c| if c == 0 { 1.0 } else { 0.0 })
}

struct Inputs {
    dir: TempDir,
}

impl Inputs {
    fn new(h: usize, w: usize, kernels: TKernelField) -> Self {
        let dir = TempDir::new().unwrap();
        write_png(&dir.path().join("in.png"), &random_image(1, h, w, 3));
        write_mnrt(&dir.path().join("params.mnrt"), kernels.field());
        write_mnrt(&dir.path().join("weights.mnrt"), &one_hot_weights(h, w));
        Inputs { dir }
    }

    fn path(&self, name: &str) -> std::path::PathBuf {
        self.dir.path().join(name)
    }

    fn pan(&self, pan: &str) -> Output {
        tpan(&[
            "pan",
            "--input",
            p(&self.path("in.png")),
            "--params",
            p(&self.path("params.mnrt")),
            "--weights",
            p(&self.path("weights.mnrt")),
            "--pan",
            pan,
            "-o",
            p(&self.path("out.png")),
        ])
    }
}

#[test]
fn pan_with_delta_kernels_copies_the_png() {
    let inputs = Inputs::new(6, 10, TKernelField::delta(6, 10, KernelLayout::default()));
    for pan in ["153", "-37.5"] {
        stdout(&inputs.pan(pan));
        assert_eq!(
            std::fs::read(inputs.path("out.png")).unwrap(),
            std::fs::read(inputs.path("in.png")).unwrap()
        );
    }
}

#[test]
fn pan_with_tap_four_matches_the_reference_shift() {
    let (h, w) = (4, 40);
    let layout = KernelLayout::default();
    let inputs = Inputs::new(h, w, TKernelField::one_hot(h, w, layout, layout.long_tap(4)));
    stdout(&inputs.pan("153"));
    let src = read_png(&inputs.path("in.png"));
    let out = read_png(&inputs.path("out.png"));
    for y in 0..h {
        for x in 0..w {
            let pos = x as f64 + 19.125;
            let x0 = (pos.floor() as usize).min(w - 1);
            let x1 = (x0 + 1).min(w - 1);
            let f = if x0 == x1 { 0.0 } else { pos - pos.floor() };
            for c in 0..3 {
                let want = (1.0 - f) * src.get(y, x0, c) as f64 + f * src.get(y, x1, c) as f64;
                assert_eq!(
                    quantize(out.get(y, x, c)),
                    quantize(want as f32),
                    "pixel ({y}, {x}, {c})"
                );
            }
        }
    }
}

#[test]
fn pan_with_missing_input_writes_nothing() {
    let inputs = Inputs::new(4, 4, TKernelField::delta(4, 4, KernelLayout::default()));
    std::fs::remove_file(inputs.path("params.mnrt")).unwrap();
    let out = inputs.pan("153");
    assert_eq!(out.status.code(), Some(2));
    assert!(!inputs.path("out.png").exists());
    assert!(String::from_utf8_lossy(&out.stderr).contains("params.mnrt"));
}

#[test]
fn pan_with_mismatched_dimensions_is_a_precondition_error() {
    let inputs = Inputs::new(4, 6, TKernelField::delta(4, 6, KernelLayout::default()));
    write_mnrt(&inputs.path("weights.mnrt"), &one_hot_weights(4, 5));
    let out = inputs.pan("153");
    assert_eq!(out.status.code(), Some(3));
    assert!(!inputs.path("out.png").exists());
}

fn extract(inputs: &Inputs) -> Output {
    tpan(&[
        "extract",
        "--params",
        p(&inputs.path("params.mnrt")),
        "--pan",
        "153",
        "--out-dir",
        p(&inputs.path("maps")),
    ])
}

#[test]
fn extract_uniform_long_wing_is_gray() {
    let layout = KernelLayout::default();
    let mut kernel = [0.0; 81];
    layout.long_range().for_each(|c| kernel[c] = 1.0 / 32.0);
    let inputs = Inputs::new(3, 5, TKernelField::constant(3, 5, layout, &kernel));
    let line = stdout(&extract(&inputs));
    assert!(line.starts_with("max_disp=0.515625 max_disp_px=78.8906 max_occ=0"), "{line}");
    let disp = std::fs::read(inputs.path("maps/disp.png")).unwrap();
    let decoded = decode_png(&disp).unwrap();
    assert!(decoded.data().iter().all(|&v| quantize(v) == 131));
    assert!(read_mnrt(&inputs.path("maps/disp.mnrt")).data().iter().all(|&v| v == 0.515625));
}

#[test]
fn extract_delta_has_no_occlusion() {
    let inputs = Inputs::new(3, 5, TKernelField::delta(3, 5, KernelLayout::default()));
    stdout(&extract(&inputs));
    let occ = read_png(&inputs.path("maps/occ.png"));
    assert!(occ.data().iter().all(|&v| v == 0.0));
    for name in ["disp.mnrt", "disp.png", "occ.mnrt"] {
        assert!(inputs.path("maps").join(name).exists());
    }
}

#[test]
fn extract_rejects_bad_magic() {
    let inputs = Inputs::new(3, 5, TKernelField::delta(3, 5, KernelLayout::default()));
    let mut bytes = std::fs::read(inputs.path("params.mnrt")).unwrap();
    bytes[..4].copy_from_slice(b"NOPE");
    std::fs::write(inputs.path("params.mnrt"), bytes).unwrap();
    assert_eq!(extract(&inputs).status.code(), Some(2));
    assert!(!inputs.path("maps/disp.mnrt").exists());
}

#[test]
fn extract_rejects_wrong_channel_count() {
    let inputs = Inputs::new(3, 5, TKernelField::delta(3, 5, KernelLayout::default()));
    write_mnrt(&inputs.path("params.mnrt"), &one_hot_weights(3, 5));
    assert_eq!(extract(&inputs).status.code(), Some(3));
}

#[test]
fn gradcheck_exit_codes() {
    let ok = tpan(&["gradcheck", "--seed", "0", "--h", "6", "--w", "9"]);
    let line = stdout(&ok);
    assert!(line.starts_with("grad_kernels="), "{line}");
    let strict = tpan(&["gradcheck", "--seed", "0", "--h", "6", "--w", "9", "--tol", "0"]);
    assert_eq!(strict.status.code(), Some(1));
    assert_eq!(tpan(&["gradcheck", "--h", "1"]).status.code(), Some(2));
    assert_eq!(tpan(&["gradcheck", "--tol=-1"]).status.code(), Some(3));
}

#[test]
fn scale_pan_prints_the_rescaled_amount() {
    let out = tpan(&["scale-pan", "--baselines", "kitti=54,cs=22", "--ref", "kitti", "--pan", "153", "--dataset", "cs"]);
    assert_eq!(stdout(&out), "62.333333\n");
    let out = tpan(&["scale-pan", "--dataset", "viclab"]);
    assert_eq!(stdout(&out), "34.000000\n");
    assert_eq!(tpan(&["scale-pan", "--dataset", "nowhere"]).status.code(), Some(3));
}

#[test]
fn stack_with_zero_disparity_repeats_one_level() {
    let dir = TempDir::new().unwrap();
    write_png(&dir.path().join("in.png"), &random_image(2, 8, 12, 3));
    let out = tpan(&[
        "stack",
        "--input",
        p(&dir.path().join("in.png")),
        "--pan",
        "153",
        "--max-disp",
        "0",
        "-o",
        p(&dir.path().join("stack.bin")),
    ]);
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 32);
    let sums: Vec<&str> = lines.iter().map(|l| l.rsplit_once("checksum=").unwrap().1).collect();
    assert!(sums.iter().all(|s| *s == sums[0]));
    assert!(lines[5].starts_with("level=5 stride=0 "));
    let bytes = std::fs::read(dir.path().join("stack.bin")).unwrap();
    let stack = tpan_core::srstack::ShiftStack::read_from(&bytes[..]).unwrap();
    assert_eq!(stack.len(), 32);

    let moving = tpan(&[
        "stack",
        "--input",
        p(&dir.path().join("in.png")),
        "--pan",
        "64",
        "--max-disp",
        "0.5",
        "--levels",
        "4",
        "-o",
        p(&dir.path().join("moving.bin")),
    ]);
    let text = stdout(&moving);
    assert!(text.lines().nth(3).unwrap().starts_with("level=3 stride=24 "), "{text}");
    let bad = tpan(&["stack", "--input", p(&dir.path().join("in.png")), "--pan", "1", "--max-disp", "2", "-o", "x"]);
    assert_eq!(bad.status.code(), Some(3));
}

#[test]
fn metrics_of_identical_images() {
    let dir = TempDir::new().unwrap();
    let img = dir.path().join("a.png");
    write_png(&img, &random_image(3, 16, 16, 3));
    let out = tpan(&["metrics", "--pred", p(&img), "--gt", p(&img)]);
    assert_eq!(stdout(&out), "rmse=0 psnr=inf ssim=1\n");
}

#[test]
fn depth_metrics_default_mask_skips_zero_truth() {
    let dir = TempDir::new().unwrap();
    let gt = ImageField::new(1, 4, 1, vec![1.0, 2.0, 0.0, 4.0]).unwrap();
    let pred = ImageField::new(1, 4, 1, vec![1.0, 2.0, 7.0, 4.0]).unwrap();
    write_mnrt(&dir.path().join("gt.mnrt"), &gt);
    write_mnrt(&dir.path().join("pred.mnrt"), &pred);
    let (pred_path, gt_path) = (dir.path().join("pred.mnrt"), dir.path().join("gt.mnrt"));
    let args = ["depth-metrics", "--pred", p(&pred_path), "--gt", p(&gt_path)];
    assert_eq!(
        stdout(&tpan(&args)),
        "abs_rel=0 sq_rel=0 rms=0 log_rms=0 a1=1 a2=1 a3=1\n"
    );
    write_mnrt(&dir.path().join("mask.mnrt"), &ImageField::filled(1, 4, 1, 1.0));
    let mut masked = args.to_vec();
    let mask = dir.path().join("mask.mnrt");
    masked.extend(["--mask", p(&mask)]);
    assert_eq!(tpan(&masked).status.code(), Some(3));
}

#[test]
fn spp_writes_the_blend() {
    let dir = TempDir::new().unwrap();
    let fwd = ImageField::new(1, 3, 1, vec![0.2, 0.4, 0.6]).unwrap();
    let bwd = ImageField::new(1, 3, 1, vec![0.4, 0.8, 0.0]).unwrap();
    let amb_fwd = ImageField::new(1, 3, 1, vec![0.0, 20.0, -20.0]).unwrap();
    let amb_bwd = ImageField::zeros(1, 3, 1);
    for (name, f) in [("f", &fwd), ("b", &bwd), ("af", &amb_fwd), ("ab", &amb_bwd)] {
        write_mnrt(&dir.path().join(format!("{name}.mnrt")), f);
    }
    let path = |n: &str| dir.path().join(n).to_str().unwrap().to_owned();
    let out = tpan(&[
        "spp",
        "--disp-fwd",
        &path("f.mnrt"),
        "--disp-bwd",
        &path("b.mnrt"),
        "--amb-fwd",
        &path("af.mnrt"),
        "--amb-bwd",
        &path("ab.mnrt"),
        "-o",
        &path("out.mnrt"),
        "--png",
        &path("out.png"),
    ]);
    stdout(&out);
    let blend = read_mnrt(&dir.path().join("out.mnrt"));
    assert!((blend.data()[0] - 0.3).abs() < 1e-7);
    assert!((blend.data()[1] - 0.4).abs() < 1e-8);
    assert!(blend.data()[2].abs() < 1e-8);
    assert!(dir.path().join("out.png").exists());
}

#[test]
fn train_toy_writes_every_artifact() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("run");
    let out = tpan(&[
        "train-toy",
        "--kind",
        "checker",
        "--height",
        "16",
        "--width",
        "32",
        "--disparities",
        "4",
        "--iters",
        "5",
        "--out-dir",
        p(&out_dir),
    ]);
    let line = stdout(&out);
    assert!(line.starts_with("initial_l1="), "{line}");
    assert!(line.contains(" psnr=") && line.contains(" a1="), "{line}");
    let csv = std::fs::read_to_string(out_dir.join("history.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "iter,loss");
    assert_eq!(rows.len(), 7);
    assert!(rows[6].starts_with("5,"));
    let kernels = read_mnrt(&out_dir.join("kernels.mnrt"));
    assert_eq!((kernels.height(), kernels.width(), kernels.channels()), (16, 32, 81));
    let weights = read_mnrt(&out_dir.join("weights.mnrt"));
    assert_eq!(weights.channels(), 3);
    for name in ["reconstruction.png", "disparity.png"] {
        assert!(out_dir.join(name).exists());
    }
}

#[test]
fn train_toy_rejects_bad_scenes() {
    let dir = TempDir::new().unwrap();
    let run = |extra: &[&str]| {
        let mut args = vec!["train-toy", "--iters", "1", "--out-dir", p(dir.path())];
        args.extend(extra);
        tpan(&args).status.code()
    };
    assert_eq!(run(&["--height", "15"]), Some(3));
    assert_eq!(run(&["--disparities", "2,4"]), Some(3));
    assert_eq!(run(&["--disparities", "40"]), Some(3));
    assert_eq!(run(&["--kind", "plaid"]), Some(3));
    assert!(!dir.path().join("history.csv").exists());
}

#[test]
fn thread_count_flag_and_environment() {
    assert_eq!(tpan(&["--threads", "0", "scale-pan", "--dataset", "kitti"]).status.code(), Some(2));
    let out = Command::new(env!("CARGO_BIN_EXE_tpan"))
        .args(["scale-pan", "--dataset", "kitti"])
        .env("TPAN_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "153.000000\n");
}
