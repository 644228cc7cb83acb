use ppfnet_core::train::{
    prepare_pair, synth_fragment_pair, train_prepared, train_step, AdamState, PreparedPair, SceneSpec, TrainConfig,
};
use ppfnet_core::net::PpfNetParams;

fn smoothed(values: &[f64], window: usize) -> Vec<f64> {
    values.chunks(window).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect()
}

#[test]
fn overfits_a_single_tiny_pair() {
    let mut cfg = TrainConfig::desk();
    cfg.extract.keypoints = 32;
    cfg.extract.encoder.patch_size = 64;
    let pair = synth_fragment_pair(11, &SceneSpec::room()).unwrap();
    let prepared = prepare_pair(&pair, &cfg, 1).unwrap();
    assert!(prepared.m.match_count() > 0);
    let mut params = PpfNetParams::init_with(cfg.seed, cfg.architecture().unwrap()).unwrap();
    let mut state = AdamState::new(&params);
    let mut losses = Vec::new();
    let mut last = None;
    for step in 0..200 {
        let diag = train_step(&mut params, &mut state, &[&prepared], &cfg, cfg.lr0, step).unwrap();
        losses.push(diag.loss);
        last = Some(diag);
    }
    let last = last.unwrap();
    eprintln!("loss {} -> {}", losses[0], losses[199]);
    assert!(losses[199] <= 0.5 * losses[0], "loss {} -> {}", losses[0], losses[199]);
    assert!(last.mean_match_dist < last.mean_nonmatch_dist);
}

#[test]
fn smoothed_loss_curve_does_not_rise() {
    let mut cfg = TrainConfig::desk();
    // Two steps per epoch, so each 10-step window sees every pair five times.
    cfg.batch_pairs = 4;
    cfg.epochs = 100;
    cfg.decay_every = 40;
    let pairs: Vec<PreparedPair> = (0..8)
        .map(|s| prepare_pair(&synth_fragment_pair(100 + s, &SceneSpec::room()).unwrap(), &cfg, s).unwrap())
        .collect();
    let params = PpfNetParams::init_with(cfg.seed, cfg.architecture().unwrap()).unwrap();
    let out = train_prepared(&pairs, params, &cfg, None).unwrap();
    let losses: Vec<f64> = out.metrics.iter().map(|m| m.loss).collect();
    assert_eq!(losses.len(), 200);
    let curve = smoothed(&losses[20..], 10);
    eprintln!("{curve:?}");
    for w in curve.windows(2) {
        assert!(w[1] <= w[0], "smoothed loss rose: {curve:?}");
    }
}
