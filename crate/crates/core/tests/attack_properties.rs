use accel_leak::attacks::{si_filter, ss_attack};
use accel_leak::model::{generate_weights, toy_sparse, vgg16_32, NetworkSpec, Tensor3D};
use accel_leak::tracegen::{
    additive_cm_trace, baseline_trace, AdditiveModel, NpKey, NpSimulator, Op, Trace, TraceConfig,
    Workload,
};

fn workload(net: NetworkSpec, seed: u64) -> Workload {
    let s = net.layers[0].shape;
    let data = (0..s.c * s.h * s.w)
        .map(|i| ((i * 37 + 5) % 251) as i8)
        .collect();
    let input = Tensor3D::from_vec(s.c, s.h, s.w, data).unwrap();
    Workload::new(net.clone(), generate_weights(&net, seed), &input).unwrap()
}

#[test]
fn min_over_runs_strips_jitter_that_can_reach_zero() {
    let w = workload(toy_sparse(3).truncated(2), 1);
    let cfg = TraceConfig::default();
    // mean − step·half_steps = 0
    let m = AdditiveModel::ConstMean {
        mean: 640,
        step: 64,
        half_steps: 10,
    };
    let traces: Vec<_> = (0..10_000u64)
        .map(|s| additive_cm_trace(&w, &cfg, &m, s).unwrap().events)
        .collect();
    let r = ss_attack(&traces).unwrap();
    let truth = ss_attack(&[baseline_trace(&w, &cfg).unwrap().events]).unwrap();
    assert_eq!(r.runs, 10_000);
    for (a, b) in r.layers.iter().zip(&truth.layers) {
        assert_eq!(a.volume_min, b.volume);
        assert!(a.volume_mean > b.volume);
    }
}

fn true_writes_dropped(t: &Trace) -> usize {
    let keep = si_filter(&t.events);
    t.events
        .iter()
        .zip(&t.labels)
        .zip(keep)
        .filter(|((e, lb), k)| e.op == Op::Write && lb.is_true() && !k)
        .count()
}

#[test]
fn si_never_drops_a_true_write() {
    let cfg = TraceConfig::default();
    let w = workload(vgg16_32().truncated(4), 2);
    let mut traces = vec![baseline_trace(&w, &cfg).unwrap()];
    for m in [
        AdditiveModel::dummy_writes(),
        AdditiveModel::LayerDivider,
        AdditiveModel::const_mean(),
    ] {
        traces.push(additive_cm_trace(&w, &cfg, &m, 9).unwrap());
    }
    let sim = NpSimulator::new(&w, NpKey::desk_scaled()).unwrap();
    traces.extend((0..3).map(|s| sim.run(s).unwrap().trace));
    for (i, t) in traces.iter().enumerate() {
        assert_eq!(true_writes_dropped(t), 0, "trace {i}");
    }
}
