use tpan_core::metrics::l1;
use tpan_core::toy::{eval_toy, make_scene, resume, train_toy, Optimizer, SceneKind, TrainConfig, TrainState};
use tpan_core::{blend_forward, BlendField, Error, KernelLayout, PanSpec, TKernelField};

fn config(iters: usize, optimizer: Optimizer, step_size: f64) -> TrainConfig {
    TrainConfig {
        iters,
        step_size,
        optimizer,
    }
}

#[test]
fn zero_iterations_record_the_uniform_blur() {
    let scene = make_scene(SceneKind::Checker, 8, 16, &[2.0], 32.0, 0).unwrap();
    let spec = PanSpec::new(32.0);
    let state = train_toy(&scene, spec, &config(0, Optimizer::GradientDescent, 0.5)).unwrap();
    assert_eq!(state.history.len(), 1);
    assert!(state.kernel_logits.data().iter().all(|&v| v == 0.0));

    let layout = KernelLayout::default();
    let uniform = TKernelField::constant(8, 16, layout, &[1.0 / 81.0; 81]);
    let weights = BlendField::constant(8, 16, &[1.0 / 3.0; 3]);
    let blur = blend_forward(&scene.center, &uniform, &weights, &spec).unwrap();
    let expected = l1(&blur, &scene.panned).unwrap();
    let got = state.history[0].report.l1_hr;
    assert!((got - expected).abs() < 1e-6, "{got} vs {expected}");
    assert_eq!(state.history[0].report.total, 2.0 * got);
}

#[test]
fn uniform_state_on_flat_scene_is_the_t_blur() {
    let scene = make_scene(SceneKind::Noise, 8, 12, &[0.0], 32.0, 4).unwrap();
    let spec = PanSpec::new(32.0);
    let state = TrainState::uniform(8, 12, spec);
    let eval = eval_toy(&state, &scene, &spec).unwrap();
    let uniform = TKernelField::constant(8, 12, KernelLayout::default(), &[1.0 / 81.0; 81]);
    let blur = blend_forward(&scene.center, &uniform, &BlendField::constant(8, 12, &[1.0 / 3.0; 3]), &spec).unwrap();
    for (a, b) in eval.reconstruction.data().iter().zip(blur.data()) {
        assert!((a - b).abs() < 1e-6);
    }
    assert!(eval.image.psnr.is_finite());
    assert!(eval.depth.is_none());
}

#[test]
fn one_hot_state_recovers_the_shift_exactly() {
    let spec = PanSpec::new(32.0);
    let scene = make_scene(SceneKind::Noise, 16, 48, &[4.0], 32.0, 0).unwrap();
    let layout = KernelLayout::default();
    let mut state = TrainState::uniform(16, 48, spec);
    let tap = layout.long_tap(4);
    for px in state.kernel_logits.data_mut().chunks_mut(81) {
        px[tap] = 200.0;
    }
    for px in state.blend_logits.data_mut().chunks_mut(3) {
        px[0] = 200.0;
    }
    let eval = eval_toy(&state, &scene, &spec).unwrap();
    assert_eq!(eval.image.psnr, f64::INFINITY);
    assert_eq!(eval.disparity_mae, 0.0);
    let depth = eval.depth.unwrap();
    assert_eq!((depth.a1, depth.abs_rel), (1.0, 0.0));
}

#[test]
fn best_so_far_is_nonincreasing_and_runs_are_reproducible() {
    let scene = make_scene(SceneKind::Bars, 8, 32, &[6.0, 2.0], 32.0, 2).unwrap();
    let spec = PanSpec::new(32.0);
    let cfg = config(15, Optimizer::adam(), 0.1);
    let a = train_toy(&scene, spec, &cfg).unwrap();
    let b = train_toy(&scene, spec, &cfg).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.kernel_logits, b.kernel_logits);
    assert_eq!(a.history.len(), 16);
    for pair in a.history.windows(2) {
        assert!(pair[1].best_total <= pair[0].best_total);
        assert_eq!(pair[1].iter, pair[0].iter + 1);
    }
    assert!(a.history.last().unwrap().report.total < a.history[0].report.total);
}

#[test]
fn resuming_continues_the_history() {
    let scene = make_scene(SceneKind::Noise, 8, 16, &[3.0], 32.0, 1).unwrap();
    let spec = PanSpec::new(32.0);
    let whole = train_toy(&scene, spec, &config(6, Optimizer::GradientDescent, 1.0)).unwrap();
    let mut split = train_toy(&scene, spec, &config(3, Optimizer::GradientDescent, 1.0)).unwrap();
    resume(&mut split, &scene, &config(3, Optimizer::GradientDescent, 1.0)).unwrap();
    assert_eq!(split.history, whole.history);
    assert_eq!(split.step, 6);
}

#[test]
fn gradient_descent_lowers_the_loss() {
    let scene = make_scene(SceneKind::Noise, 8, 24, &[4.0], 32.0, 0).unwrap();
    let state = train_toy(&scene, PanSpec::new(32.0), &config(30, Optimizer::GradientDescent, 2.0)).unwrap();
    let first = state.history[0].report.l1_hr;
    let last = state.history.last().unwrap().report.l1_hr;
    assert!(last < 0.9 * first, "{first} -> {last}");
}

#[test]
fn divergence_and_bad_arguments() {
    let scene = make_scene(SceneKind::Noise, 8, 16, &[3.0], 32.0, 1).unwrap();
    let spec = PanSpec::new(32.0);
    let err = train_toy(&scene, spec, &config(3, Optimizer::GradientDescent, 1e300)).unwrap_err();
    assert!(matches!(err, Error::Diverged { .. }), "{err}");
    assert!(train_toy(&scene, spec, &config(3, Optimizer::GradientDescent, 0.0)).is_err());
    assert!(train_toy(&scene, PanSpec::new(16.0), &config(1, Optimizer::GradientDescent, 0.5)).is_err());
}
