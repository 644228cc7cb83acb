use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::adam::{adam_step, AdamState};
use super::synth::FragmentPair;
use crate::encode::{patch_seed, EncoderConfig};
use crate::error::{Error, Result};
use crate::loss::{correspondence_matrix, distance_backward, distance_matrix, pair_loss, CorrespondenceMatrix, LossConfig, LossKind};
use crate::net::{backward, save_checkpoint, Architecture, PpfNetParams};
use crate::pipeline::{describe_prepared, prepare_fragment, ExtractConfig, PreparedFragment};

pub const METRICS_HEADER: &str = "epoch,step,lr,loss,mean_match_dist,mean_nonmatch_dist,num_matches";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub lr_floor: f64,
    /// Epochs between learning-rate decays.
    pub decay_every: usize,
    pub decay_factor: f64,
    /// Fragment pairs whose gradients are summed before each update.
    pub batch_pairs: usize,
    pub epochs: usize,
    /// Stop after this many updates even if epochs remain.
    pub max_steps: Option<usize>,
    pub seed: u64,
    pub global_context: bool,
    pub extract: ExtractConfig,
    pub loss: LossConfig,
    pub loss_kind: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-3,
            lr_floor: 1e-5,
            decay_every: 10,
            decay_factor: 0.1,
            batch_pairs: 2,
            epochs: 1,
            max_steps: None,
            seed: 0,
            global_context: true,
            extract: ExtractConfig::default(),
            loss: LossConfig::default(),
            loss_kind: LossKind::NTuple,
        }
    }
}

impl TrainConfig {
    /// 128 keypoints per fragment and 256 points per patch.
    pub fn desk() -> Self {
        Self {
            extract: ExtractConfig {
                keypoints: 128,
                encoder: EncoderConfig {
                    patch_size: 256,
                    ..EncoderConfig::default()
                },
                ..ExtractConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn architecture(&self) -> Result<Architecture> {
        Architecture::new(self.extract.encoder.mode.dim(), self.global_context)
    }

    pub fn validate(&self) -> Result<()> {
        self.extract.validate()?;
        self.loss.validate()?;
        if !(self.lr_floor > 0.0 && self.lr0 >= self.lr_floor && self.lr0.is_finite()) {
            return Err(Error::Config(format!(
                "learning rates must satisfy lr0 >= lr_floor > 0 (lr0 = {}, lr_floor = {})",
                self.lr0, self.lr_floor
            )));
        }
        if self.decay_every == 0 {
            return Err(Error::Config("decay_every must be at least 1".into()));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config(format!("decay_factor {} must lie in (0, 1]", self.decay_factor)));
        }
        if self.batch_pairs == 0 {
            return Err(Error::Config("batch_pairs must be at least 1".into()));
        }
        Ok(())
    }
}

/// `max(lr_floor, lr0 · decay_factor^⌊epoch / decay_every⌋)`.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    let decays = (epoch / cfg.decay_every.max(1)) as i32;
    (cfg.lr0 * cfg.decay_factor.powi(decays)).max(cfg.lr_floor)
}

/// Both fragments of a pair prepared for the network, with their
/// keypoint correspondence matrix.
#[derive(Debug, Clone)]
pub struct PreparedPair {
    pub x: PreparedFragment,
    pub y: PreparedFragment,
    pub m: CorrespondenceMatrix,
}

pub fn prepare_pair(pair: &FragmentPair, cfg: &TrainConfig, seed: u64) -> Result<PreparedPair> {
    let x = prepare_fragment(&pair.x, &cfg.extract, patch_seed(seed, 0))?;
    let y = prepare_fragment(&pair.y, &cfg.extract, patch_seed(seed, 1))?;
    let m = correspondence_matrix(&x.keypoints, &y.keypoints, &pair.t_gt, cfg.loss.tau)?;
    Ok(PreparedPair { x, y, m })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    pub loss: f64,
    /// Mean descriptor distance over matching keypoint pairs (NaN without matches).
    pub mean_match_dist: f64,
    pub mean_nonmatch_dist: f64,
    pub num_matches: usize,
    /// No matching entry, so the pair contributed no gradient.
    pub skipped: bool,
}

/// Loss and parameter gradient for one prepared pair. Each fragment pools
/// its global context on its own.
pub fn pair_gradient(
    params: &PpfNetParams,
    pair: &PreparedPair,
    cfg: &TrainConfig,
    loss_seed: u64,
) -> Result<(PpfNetParams, StepDiagnostics)> {
    let (dx, cx) = describe_prepared(params, &pair.x)?;
    let (dy, cy) = describe_prepared(params, &pair.y)?;
    let d = distance_matrix(&dx.features, &dy.features)?;
    let out = pair_loss(cfg.loss_kind, &pair.m, &d, &cfg.loss, loss_seed)?;
    let num_matches = pair.m.match_count();
    let (mut sm, mut sn) = (0.0, 0.0);
    for (&m, &v) in pair.m.as_slice().iter().zip(d.as_slice()) {
        if m {
            sm += v;
        } else {
            sn += v;
        }
    }
    let total = d.size() * d.size();
    let diag = StepDiagnostics {
        loss: out.value,
        mean_match_dist: if num_matches > 0 { sm / num_matches as f64 } else { f64::NAN },
        mean_nonmatch_dist: if total > num_matches {
            sn / (total - num_matches) as f64
        } else {
            f64::NAN
        },
        num_matches,
        skipped: num_matches == 0,
    };
    if !out.value.is_finite() {
        return Err(Error::degenerate(format!("loss is {}", out.value)));
    }
    if diag.skipped {
        return Ok((params.zeros_like(), diag));
    }
    let (gx, gy) = distance_backward(&dx.features, &dy.features, &d, &out.grad)?;
    let mut grads = backward(params, &cx, &gx)?;
    grads.add_assign(&backward(params, &cy, &gy)?);
    Ok((grads, diag))
}

/// One row of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub mean_match_dist: f64,
    pub mean_nonmatch_dist: f64,
    pub num_matches: usize,
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:e},{:.9e},{:.9e},{:.9e},{}",
            r.epoch, r.step, r.lr, r.loss, r.mean_match_dist, r.mean_nonmatch_dist, r.num_matches
        );
    }
    out
}

/// Sums the gradients of a batch in batch order, then applies one Adam update
/// unless every pair was skipped.
pub fn train_step(
    params: &mut PpfNetParams,
    state: &mut AdamState,
    batch: &[&PreparedPair],
    cfg: &TrainConfig,
    lr: f64,
    step_seed: u64,
) -> Result<StepDiagnostics> {
    if batch.is_empty() {
        return Err(Error::invalid("empty training batch"));
    }
    let results: Vec<(PpfNetParams, StepDiagnostics)> = batch
        .par_iter()
        .enumerate()
        .map(|(slot, pair)| pair_gradient(params, pair, cfg, patch_seed(step_seed, slot)))
        .collect::<Result<_>>()?;
    let mut grads = params.zeros_like();
    let (mut loss, mut sm, mut sn, mut matches, mut nonmatches) = (0.0, 0.0, 0.0, 0usize, 0usize);
    let mut any = false;
    for ((g, diag), pair) in results.iter().zip(batch) {
        grads.add_assign(g);
        loss += diag.loss;
        let n = pair.m.size();
        if diag.num_matches > 0 {
            sm += diag.mean_match_dist * diag.num_matches as f64;
        }
        if n * n > diag.num_matches {
            sn += diag.mean_nonmatch_dist * (n * n - diag.num_matches) as f64;
        }
        matches += diag.num_matches;
        nonmatches += n * n - diag.num_matches;
        any |= !diag.skipped;
    }
    if any {
        adam_step(params, &grads, state, lr)?;
    }
    Ok(StepDiagnostics {
        loss: loss / batch.len() as f64,
        mean_match_dist: if matches > 0 { sm / matches as f64 } else { f64::NAN },
        mean_nonmatch_dist: if nonmatches > 0 { sn / nonmatches as f64 } else { f64::NAN },
        num_matches: matches,
        skipped: !any,
    })
}

/// Prepares one fragment pair and applies a single update to it.
pub fn train_step_on_pair(
    params: &mut PpfNetParams,
    state: &mut AdamState,
    pair: &FragmentPair,
    cfg: &TrainConfig,
    lr: f64,
    seed: u64,
) -> Result<StepDiagnostics> {
    let prepared = prepare_pair(pair, cfg, seed)?;
    train_step(params, state, &[&prepared], cfg, lr, seed)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PpfNetParams,
    pub state: AdamState,
    pub metrics: Vec<MetricsRow>,
    /// One checkpoint per epoch, when an output directory was given.
    pub checkpoints: Vec<PathBuf>,
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("ckpt_epoch_{epoch}.ppfn")
}

/// Prepares every pair once, then runs seeded epochs of shuffled batches.
/// With `out_dir`, writes `metrics.csv` and a checkpoint after each epoch.
pub fn train(dataset: &[FragmentPair], cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("training needs at least one fragment pair"));
    }
    let prepared: Vec<PreparedPair> = dataset
        .iter()
        .enumerate()
        .map(|(k, pair)| prepare_pair(pair, cfg, patch_seed(cfg.seed, k)))
        .collect::<Result<_>>()?;
    let params = PpfNetParams::init_with(cfg.seed, cfg.architecture()?)?;
    train_prepared(&prepared, params, cfg, out_dir)
}

/// Training loop over already prepared pairs, starting from `params`.
pub fn train_prepared(
    prepared: &[PreparedPair],
    mut params: PpfNetParams,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if prepared.is_empty() {
        return Err(Error::invalid("training needs at least one fragment pair"));
    }
    if params.arch != cfg.architecture()? {
        return Err(Error::Config("initial parameters do not match the configured architecture".into()));
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut state = AdamState::new(&params);
    let mut metrics = Vec::new();
    let mut checkpoints = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut step = 0usize;
    'epochs: for epoch in 0..cfg.epochs {
        let lr = lr_schedule(epoch, cfg);
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_pairs) {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break;
            }
            let pairs: Vec<&PreparedPair> = batch.iter().map(|&k| &prepared[k]).collect();
            let diag = train_step(&mut params, &mut state, &pairs, cfg, lr, patch_seed(cfg.seed ^ 0x5eed, step))?;
            step += 1;
            metrics.push(MetricsRow {
                epoch,
                step,
                lr,
                loss: diag.loss,
                mean_match_dist: diag.mean_match_dist,
                mean_nonmatch_dist: diag.mean_nonmatch_dist,
                num_matches: diag.num_matches,
            });
        }
        if let Some(dir) = out_dir {
            let path = dir.join(checkpoint_name(epoch));
            save_checkpoint(&params, Some(&state), &path)?;
            checkpoints.push(path);
            let csv = dir.join("metrics.csv");
            fs::write(&csv, metrics_csv(&metrics)).map_err(|e| Error::io(&csv, e))?;
        }
        if cfg.max_steps.is_some_and(|m| step >= m) {
            break 'epochs;
        }
    }
    Ok(TrainOutcome {
        params,
        state,
        metrics,
        checkpoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::{synth_fragment_pair, SceneSpec};

    fn tiny_cfg() -> TrainConfig {
        let mut cfg = TrainConfig::desk();
        cfg.extract.keypoints = 32;
        cfg.extract.encoder.patch_size = 64;
        cfg
    }

    #[test]
    fn schedule_examples() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_schedule(0, &cfg), 1e-3);
        assert!((lr_schedule(10, &cfg) - 1e-4).abs() < 1e-18);
        assert_eq!(lr_schedule(1000, &cfg), 1e-5);
        let mut prev = f64::INFINITY;
        for e in 0..100 {
            let lr = lr_schedule(e, &cfg);
            assert!(lr <= prev && lr >= cfg.lr_floor);
            prev = lr;
        }
    }

    #[test]
    fn zero_network_loss_is_alpha_theta() {
        let cfg = tiny_cfg();
        let pair = synth_fragment_pair(1, &SceneSpec::room()).unwrap();
        let prepared = prepare_pair(&pair, &cfg, 3).unwrap();
        assert!(prepared.m.match_count() > 0);
        let zero = PpfNetParams::zeros(cfg.architecture().unwrap());
        let (_, diag) = pair_gradient(&zero, &prepared, &cfg, 0).unwrap();
        assert!((diag.loss - cfg.loss.alpha * cfg.loss.theta).abs() < 1e-12);
    }

    #[test]
    fn one_pair_one_epoch_is_one_step() {
        let cfg = tiny_cfg();
        let pair = synth_fragment_pair(2, &SceneSpec::room()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = train(std::slice::from_ref(&pair), &cfg, Some(dir.path())).unwrap();
        assert_eq!(out.metrics.len(), 1);
        assert_eq!(out.state.step, 1);
        assert!(out.metrics[0].loss.is_finite() && out.metrics[0].loss >= 0.0);
        assert_eq!(out.checkpoints, vec![dir.path().join("ckpt_epoch_0.ppfn")]);
        let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert!(csv.starts_with(METRICS_HEADER));
        assert_eq!(csv.lines().count(), 2);
    }

    #[test]
    fn training_is_deterministic() {
        let mut cfg = tiny_cfg();
        cfg.epochs = 2;
        let data: Vec<FragmentPair> = (0..3).map(|s| synth_fragment_pair(s, &SceneSpec::room()).unwrap()).collect();
        let a = train(&data, &cfg, None).unwrap();
        let b = train(&data, &cfg, None).unwrap();
        assert_eq!(metrics_csv(&a.metrics), metrics_csv(&b.metrics));
        assert_eq!(a.params, b.params);
        assert_eq!(a.metrics.len(), 4);
    }

    #[test]
    fn max_steps_stops_early() {
        let mut cfg = tiny_cfg();
        cfg.epochs = 10;
        cfg.batch_pairs = 1;
        cfg.max_steps = Some(3);
        let data: Vec<FragmentPair> = (0..2).map(|s| synth_fragment_pair(s, &SceneSpec::room()).unwrap()).collect();
        let out = train(&data, &cfg, None).unwrap();
        assert_eq!(out.metrics.len(), 3);
        assert_eq!(out.state.step, 3);
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::default();
        cfg.lr_floor = 1e-2;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.batch_pairs = 0;
        assert!(cfg.validate().is_err());
        assert!(train(&[], &TrainConfig::default(), None).is_err());
    }
}
