use std::fmt::Write as _;

use sha2::{Digest, Sha256};
use tpan_core::geometry::{primitive_disparity, primitive_occlusion, scale_pan as scale, spp_blend, BaselineTable};
use tpan_core::gradcheck::{gradcheck as check, GradcheckConfig};
use tpan_core::metrics::{depth_metrics as depth, fmt_sig, image_metrics};
use tpan_core::srstack::build_stack;
use tpan_core::toy::{eval_toy, make_scene, train_toy as train, Optimizer, SceneKind, TrainConfig};
use tpan_core::{blend_forward, DilationRule, ImageField, KernelLayout, PanSpec, TKernelField};

use crate::output::{read_mnrt, read_png, CliError, CliResult, Context, Outputs};
use crate::{
    DepthMetricsArgs, ExtractArgs, GradcheckArgs, MetricsArgs, OptimizerKind, PanArgs, Rule, ScalePanArgs,
    SppArgs, StackArgs, TrainToyArgs,
};

fn dilation_rule(rule: Rule) -> DilationRule {
    match rule {
        Rule::LongWing => DilationRule::LongWing,
        Rule::PanSign => DilationRule::PanSign,
    }
}

fn pan_spec(pan: f64, n_dilations: usize, rule: Rule) -> CliResult<PanSpec> {
    let spec = PanSpec {
        n_dilations,
        rule: dilation_rule(rule),
        ..PanSpec::new(pan)
    };
    spec.validate().context("--pan")?;
    Ok(spec)
}

fn read_kernels(path: &std::path::Path) -> CliResult<TKernelField> {
    TKernelField::new(read_mnrt(path)?, KernelLayout::default()).context(path.display())
}

pub fn pan(a: &PanArgs) -> CliResult<()> {
    let img = read_png(&a.input)?;
    let kernels = read_kernels(&a.params)?;
    let weights = tpan_core::BlendField::new(read_mnrt(&a.weights)?);
    let spec = pan_spec(a.pan, weights.n(), a.rule)?;
    let out = blend_forward(&img, &kernels, &weights, &spec)?;
    let mut outputs = Outputs::default();
    outputs.add_png(&a.output, &out)?;
    outputs.commit()
}

pub fn extract(a: &ExtractArgs) -> CliResult<()> {
    let spec = pan_spec(a.pan, PanSpec::DEFAULT_N_DILATIONS, Rule::LongWing)?;
    let kernels = read_kernels(&a.params)?;
    let disp = primitive_disparity(&kernels).context(a.params.display())?;
    let occ = primitive_occlusion(&kernels).context(a.params.display())?;
    std::fs::create_dir_all(&a.out_dir).context(a.out_dir.display())?;
    let mut outputs = Outputs::default();
    outputs.add_mnrt(a.out_dir.join("disp.mnrt"), &disp);
    outputs.add_png(a.out_dir.join("disp.png"), &disp)?;
    outputs.add_mnrt(a.out_dir.join("occ.mnrt"), &occ);
    outputs.add_png(a.out_dir.join("occ.png"), &occ)?;
    outputs.commit()?;
    let max = disp.max_value();
    println!(
        "max_disp={} max_disp_px={} max_occ={}",
        fmt_sig(max),
        fmt_sig(max * spec.pan_amount.abs()),
        fmt_sig(occ.max_value())
    );
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs) -> CliResult<()> {
    if !(a.tol.is_finite() && a.tol >= 0.0) {
        return Err(CliError::precondition(format!("--tol must be a nonnegative number, got {}", a.tol)));
    }
    let cfg = GradcheckConfig {
        pan_amount: a.pan,
        samples: a.samples,
        ..GradcheckConfig::new(a.seed, a.h as usize, a.w as usize)
    };
    let report = check(&cfg)?;
    println!("{}", report.to_kv());
    if report.passes(a.tol) {
        Ok(())
    } else {
        Err(CliError::check_failed(format!(
            "max relative error {} is not below {}",
            fmt_sig(report.max()),
            fmt_sig(a.tol)
        )))
    }
}

pub fn train_toy(a: &TrainToyArgs) -> CliResult<()> {
    let kind: SceneKind = a.kind.parse().context("--kind")?;
    let spec = pan_spec(a.pan, a.dilations, a.rule)?;
    let scene = make_scene(kind, a.height, a.width, &a.disparities, a.pan, a.seed)?;
    let cfg = TrainConfig {
        iters: a.iters,
        step_size: a.step,
        optimizer: match a.optimizer {
            OptimizerKind::Gd => Optimizer::GradientDescent,
            OptimizerKind::Adam => Optimizer::adam(),
        },
    };
    let state = train(&scene, spec, &cfg)?;
    let eval = eval_toy(&state, &scene, &spec)?;

    let mut csv = String::from("iter,loss\n");
    for r in &state.history {
        writeln!(csv, "{},{}", r.iter, r.report.total).expect("writing to a String");
    }
    std::fs::create_dir_all(&a.out_dir).context(a.out_dir.display())?;
    let mut outputs = Outputs::default();
    outputs.add(a.out_dir.join("history.csv"), csv.into_bytes());
    outputs.add_mnrt(a.out_dir.join("kernels.mnrt"), state.kernels().field());
    outputs.add_mnrt(a.out_dir.join("weights.mnrt"), state.weights().field());
    outputs.add_png(a.out_dir.join("reconstruction.png"), &eval.reconstruction)?;
    outputs.add_png(a.out_dir.join("disparity.png"), &eval.disparity)?;
    outputs.commit()?;

    let first = state.history.first().expect("history holds the initial loss");
    let last = state.history.last().expect("history holds the initial loss");
    println!(
        "initial_l1={} final_l1={} ratio={} {}",
        fmt_sig(first.report.l1_hr),
        fmt_sig(last.report.l1_hr),
        fmt_sig(last.report.l1_hr / first.report.l1_hr),
        eval.to_kv()
    );
    Ok(())
}

fn checksum(field: &ImageField) -> String {
    let digest = Sha256::digest(field.to_mnrt_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

pub fn stack(a: &StackArgs) -> CliResult<()> {
    let img = read_png(&a.input)?;
    let max_disp = match (&a.params, a.max_disp) {
        (Some(path), _) => primitive_disparity(&read_kernels(path)?).context(path.display())?.max_value(),
        (None, Some(m)) => m,
        (None, None) => unreachable!("clap requires --max-disp or --params"),
    };
    let stack = build_stack(&img, a.pan, max_disp, a.levels).context(a.input.display())?;
    let mut outputs = Outputs::default();
    outputs.add(&a.output, stack.to_bytes());
    outputs.commit()?;
    for (n, level) in stack.levels().iter().enumerate() {
        println!("level={n} stride={} checksum={}", fmt_sig(stack.stride(n)), checksum(level));
    }
    Ok(())
}

pub fn metrics(a: &MetricsArgs) -> CliResult<()> {
    let pred = read_png(&a.pred)?;
    let gt = read_png(&a.gt)?;
    println!("{}", image_metrics(&pred, &gt, 1.0)?.to_kv());
    Ok(())
}

pub fn depth_metrics(a: &DepthMetricsArgs) -> CliResult<()> {
    let pred = read_mnrt(&a.pred)?;
    let gt = read_mnrt(&a.gt)?;
    let mask = match &a.mask {
        Some(path) => read_mnrt(path)?,
        None => gt.map(|v| if v > 0.0 { 1.0 } else { 0.0 }),
    };
    println!("{}", depth(&pred, &gt, &mask)?.to_kv());
    Ok(())
}

pub fn spp(a: &SppArgs) -> CliResult<()> {
    let out = spp_blend(
        &read_mnrt(&a.disp_fwd)?,
        &read_mnrt(&a.disp_bwd)?,
        &read_mnrt(&a.amb_fwd)?,
        &read_mnrt(&a.amb_bwd)?,
    )?;
    let mut outputs = Outputs::default();
    outputs.add_mnrt(&a.output, &out);
    if let Some(png) = &a.png {
        outputs.add_png(png, &out)?;
    }
    outputs.commit()
}

pub fn scale_pan(a: &ScalePanArgs) -> CliResult<()> {
    let table = BaselineTable::parse(&a.baselines, &a.reference).context("--baselines")?;
    if !a.pan.is_finite() {
        return Err(CliError::precondition("--pan must be finite"));
    }
    println!("{:.6}", scale(&table, &a.dataset, a.pan)?);
    Ok(())
}
