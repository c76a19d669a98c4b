use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

use lro_core::bench::{check_shape, gen_fixture, ShapeKind};
use lro_core::geometry::{drag_state_at, feature_dims, state_to_feature_grid};
use lro_core::instruction::{DragType, EditSpec};
use lro_core::lro::{frozen_run, pbsi_run, RunEvent, RunOptions};
use lro_core::pipeline::{CodecKind, ComponentSelection, DenoiserKind, ExtractorKind, Pipeline};
use lro_core::Scalar;

fn identity_drags(mut spec: EditSpec) -> EditSpec {
    for inst in &mut spec.instructions {
        inst.target = inst.handle;
    }
    spec
}

fn run<T: Scalar>(spec: &EditSpec, sel: ComponentSelection, opts: &RunOptions<'_>) -> lro_core::lro::RunResult<T> {
    let pipe = Pipeline::<T>::build(sel, spec.width(), spec.height(), spec.params.t_max).unwrap();
    pbsi_run(spec, &pipe.components(), opts).unwrap()
}

#[test]
fn identity_drags_return_the_input_with_zero_loss() {
    for (kind, op) in [
        (ShapeKind::Blob, DragType::Translation),
        (ShapeKind::Lshape, DragType::Rotation),
        (ShapeKind::Bar, DragType::Deformation),
    ] {
        let mag = if op == DragType::Rotation { 90.0 } else { 10.0 };
        let f = gen_fixture(kind, op, mag, 3);
        let spec = identity_drags(f.spec.clone());
        for denoiser in DenoiserKind::ALL {
            for extractor in ExtractorKind::ALL {
                let sel = ComponentSelection {
                    codec: CodecKind::Identity,
                    denoiser: *denoiser,
                    extractor: *extractor,
                };
                let out = run::<f64>(&spec, sel, &RunOptions::default());
                assert_eq!(out.loss_trace.len(), 60);
                assert!(out.loss_trace.iter().all(|e| e.loss == 0.0), "{kind} {op:?} {denoiser} {extractor}");
                assert_eq!(out.image, f.image, "{kind} {op:?} {denoiser} {extractor}");
            }
        }
    }
}

#[test]
fn events_follow_the_schedule() {
    let f = gen_fixture(ShapeKind::Blob, DragType::Translation, 10.0, 0);
    let events = Mutex::new(Vec::<RunEvent>::new());
    let sink = |e: &RunEvent| events.lock().unwrap().push(e.clone());
    let opts = RunOptions {
        session_id: "s1",
        rho_preview: true,
        on_event: Some(&sink),
        snapshot_every: 2,
        ..Default::default()
    };
    let out = run::<f64>(&f.spec, ComponentSelection::default(), &opts);
    let events = events.into_inner().unwrap();
    assert_eq!(events.len(), 60);
    assert_eq!((events[0].t, events[0].k, events[0].eta), (38, 0, 0.0));
    let last = events.last().unwrap();
    assert_eq!((last.t, last.k), (33, 9));
    assert!((last.eta - 59.0 / 60.0).abs() < 1e-15);
    assert!(events.windows(2).all(|w| w[0].eta < w[1].eta));
    assert!(events.iter().all(|e| e.session_id == "s1" && e.rho_preview.as_ref().is_some_and(|p| p.len() == 1)));
    for (e, tr) in events.iter().zip(&out.loss_trace) {
        assert_eq!((e.t, e.k, e.loss, e.eta), (tr.t, tr.k, tr.loss, tr.eta));
    }
    // timesteps 38, 36, 34
    assert_eq!(out.snapshots.len(), 3);
    assert_eq!(out.snapshots[0].timestep, 38);
}

#[test]
fn runs_are_deterministic() {
    let f = gen_fixture(ShapeKind::Lshape, DragType::Rotation, 45.0, 1);
    let sel = ComponentSelection {
        denoiser: DenoiserKind::Smoothing,
        ..Default::default()
    };
    let a = run::<f64>(&f.spec, sel, &RunOptions::default());
    let b = run::<f64>(&f.spec, sel, &RunOptions::default());
    assert_eq!(a.image, b.image);
    let bits = |r: &lro_core::lro::RunResult<f64>| r.loss_trace.iter().map(|e| e.loss.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn cancel_stops_before_the_next_iteration() {
    let f = gen_fixture(ShapeKind::Blob, DragType::Translation, 20.0, 0);
    let cancel = AtomicBool::new(false);
    let seen = Mutex::new(0usize);
    let sink = |_: &RunEvent| {
        let mut n = seen.lock().unwrap();
        *n += 1;
        if *n == 7 {
            cancel.store(true, Ordering::SeqCst);
        }
    };
    let opts = RunOptions {
        cancel: Some(&cancel),
        on_event: Some(&sink),
        ..Default::default()
    };
    let out = run::<f64>(&f.spec, ComponentSelection::default(), &opts);
    assert!(out.cancelled);
    assert_eq!(out.loss_trace.len(), 7);
    assert_eq!(*seen.lock().unwrap(), 7);
}

#[test]
fn single_precision_pipeline_edits() {
    let f = gen_fixture(ShapeKind::Blob, DragType::Translation, 10.0, 0);
    let out = run::<f32>(&f.spec, ComponentSelection::default(), &RunOptions::default());
    let check = check_shape(&f, &out.image);
    assert!(check.centroid_error <= 1.5 && check.iou >= 0.8, "{check:?}");
}

#[test]
fn pool_codec_pipeline_runs() {
    let f = gen_fixture(ShapeKind::Bar, DragType::Translation, 20.0, 0);
    let sel = ComponentSelection {
        codec: CodecKind::Pool,
        ..Default::default()
    };
    let out = run::<f64>(&f.spec, sel, &RunOptions::default());
    assert_eq!(out.image.dimensions(), f.image.dimensions());
    assert_eq!(out.loss_trace.len(), 60);
}

#[test]
fn frozen_run_keeps_the_shape_in_place() {
    let f = gen_fixture(ShapeKind::Blob, DragType::Translation, 20.0, 0);
    let pipe = Pipeline::<f64>::build(ComponentSelection::default(), 64, 64, f.spec.params.t_max).unwrap();
    let out = frozen_run(&f.spec, &pipe.components()).unwrap();
    assert_eq!(out.image, f.image);
    assert!(out.loss_trace.is_empty());
}

#[test]
fn small_plain_steps_do_not_raise_the_loss_while_the_state_holds() {
    let mut f = gen_fixture(ShapeKind::Blob, DragType::Translation, 10.0, 0);
    f.spec.params.optimizer = lro_core::instruction::OptimizerKind::PlainGradient;
    let inst = &f.spec.instructions[0];
    let feature = feature_dims(64, 64);
    let state_at = |eta: f64| state_to_feature_grid(&drag_state_at(inst, eta).unwrap(), (feature.1, feature.0)).unwrap();
    for step in [1e-2, 5e-3, 1e-3] {
        f.spec.params.step_size = step;
        let sel = ComponentSelection {
            extractor: ExtractorKind::Identity,
            ..Default::default()
        };
        let out = run::<f64>(&f.spec, sel, &RunOptions::default());
        let mut compared = 0;
        for w in out.loss_trace.windows(2) {
            if w[0].t != w[1].t || state_at(w[0].eta) != state_at(w[1].eta) {
                continue;
            }
            compared += 1;
            assert!(w[1].loss <= w[0].loss, "step {step}: rise at t={} k={}: {} -> {}", w[1].t, w[1].k, w[0].loss, w[1].loss);
        }
        assert!(compared >= 20, "only {compared} comparable pairs");
    }
}
