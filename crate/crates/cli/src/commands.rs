use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use ppfnet_core::artifacts::{
    format_correspondences, format_indices, load_descriptors, load_manifest, load_pose, parse_correspondences,
    recall_report, rotation_report, save_descriptors, save_pose, sparsity_report, to_cloud_indices, DescriptorFile,
};
use ppfnet_core::cloud::{load_ply, save_ply, save_ply_colored, SpatialIndex};
use ppfnet_core::encode::{EncoderConfig, EncodingMode};
use ppfnet_core::geom::{apply_transform, distance_constrained_sample, estimate_normals, DEFAULT_NORMAL_K, SamplingConfig};
use ppfnet_core::matchreg::{
    evaluate_pair_lenient, fragment_recall, match_descriptors, pca_colorize, ransac_register, rotation_sweep,
    sparsity_sweep, RansacConfig, RecallConfig, DEFAULT_KEEP_FRACTIONS, DEFAULT_SWEEP_ANGLES,
};
use ppfnet_core::net::load_checkpoint;
use ppfnet_core::pipeline::{extract_descriptors, ExtractConfig};
use ppfnet_core::train::{overlap_fraction, synth_fragment_pair, train, SceneSpec};
use ppfnet_core::{Error, FragmentPair, PpfNetParams, Result, Vec3};

use crate::config::{parse_vec3, Config};

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn parse_viewpoint(raw: &str) -> std::result::Result<Vec3, String> {
    parse_vec3(raw).map_err(|e| e.to_string())
}

/// Keypoint and patch settings shared by extraction and evaluation.
#[derive(Debug, Clone, Args)]
pub struct ExtractArgs {
    /// Input encoding; defaults to the one the checkpoint was trained with.
    #[arg(long)]
    pub mode: Option<EncodingMode>,
    #[arg(long, default_value_t = 2048)]
    pub keypoints: usize,
    #[arg(long, default_value_t = 1024)]
    pub patch_size: usize,
    #[arg(long, default_value_t = 0.30)]
    pub patch_radius: f64,
    /// Keypoint spacing as a fraction of the cloud diameter.
    #[arg(long, default_value_t = 0.05)]
    pub sample_tau: f64,
    #[arg(long, default_value_t = 17)]
    pub normal_k: usize,
    #[arg(long, default_value = "0,0,0", value_parser = parse_viewpoint)]
    pub viewpoint: Vec3,
    #[arg(long)]
    pub use_lrf: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl ExtractArgs {
    fn config(&self, params: &PpfNetParams) -> Result<ExtractConfig> {
        let mode = match self.mode {
            Some(m) => m,
            None => EncodingMode::from_dim(params.input_dim())
                .ok_or_else(|| Error::Config(format!("no encoding has {} channels", params.input_dim())))?,
        };
        let cfg = ExtractConfig {
            encoder: EncoderConfig {
                patch_radius: self.patch_radius,
                patch_size: self.patch_size,
                mode,
                use_lrf: self.use_lrf,
            },
            sampling: SamplingConfig::new(self.sample_tau)?,
            keypoints: self.keypoints,
            normal_k: self.normal_k,
            viewpoint: self.viewpoint,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn normals(input: &Path, output: &Path, k: usize, viewpoint: Vec3) -> Result<String> {
    let cloud = load_ply(input)?;
    let est = estimate_normals(&cloud, k, &viewpoint)?;
    save_ply(&est.cloud, output)?;
    let degenerate = est.degenerate.iter().filter(|&&d| d).count();
    Ok(format!(
        "normals: {} points, {degenerate} degenerate, wrote {}",
        cloud.len(),
        output.display()
    ))
}

/// Clouds without normals get them estimated from 17 neighbors, oriented toward the origin.
pub fn sample(input: &Path, output: &Path, tau: f64) -> Result<String> {
    let mut cloud = load_ply(input)?;
    if !cloud.has_normals() {
        cloud = estimate_normals(&cloud, DEFAULT_NORMAL_K, &Vec3::zeros())?.cloud;
    }
    let picked = distance_constrained_sample(&cloud, &SamplingConfig::new(tau)?)?;
    write_text(output, &format_indices(&picked))?;
    Ok(format!("sample: kept {} of {} points, wrote {}", picked.len(), cloud.len(), output.display()))
}

pub fn synth(seed: u64, spec: &str, out_x: &Path, out_y: &Path, pose: &Path) -> Result<String> {
    let spec: SceneSpec = spec.parse()?;
    let pair = synth_fragment_pair(seed, &spec)?;
    save_ply(&pair.x, out_x)?;
    save_ply(&pair.y, out_y)?;
    save_pose(&pair.t_gt, pose)?;
    Ok(format!(
        "synth: {} and {} points, overlap {:.3}, wrote {}",
        pair.x.len(),
        pair.y.len(),
        pair.overlap_fraction,
        pose.display()
    ))
}

/// Manifest files: a single file, or every `*.manifest` file of a directory in name order.
fn manifest_files(data: &Path) -> Result<Vec<PathBuf>> {
    if !data.is_dir() {
        return Ok(vec![data.to_path_buf()]);
    }
    let read = fs::read_dir(data).map_err(|e| Error::Io {
        path: data.to_path_buf(),
        source: e,
    })?;
    let mut files: Vec<PathBuf> = read
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "manifest"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Parse(format!("{} holds no .manifest files", data.display())));
    }
    Ok(files)
}

pub fn load_pairs(data: &Path, overlap_tau: f64) -> Result<Vec<FragmentPair>> {
    let mut pairs = Vec::new();
    for manifest in manifest_files(data)? {
        for entry in load_manifest(&manifest)? {
            let x = load_ply(&entry.x)?;
            let y = load_ply(&entry.y)?;
            let t_gt = load_pose(&entry.pose)?;
            let overlap = overlap_fraction(&x, &apply_transform(&t_gt, &y), overlap_tau)?;
            pairs.push(FragmentPair {
                x,
                y,
                t_gt,
                overlap_fraction: overlap,
                x_ids: Vec::new(),
                y_ids: Vec::new(),
            });
        }
    }
    Ok(pairs)
}

pub fn train_cmd(config: &Path, data: Option<&Path>, out: Option<&Path>) -> Result<String> {
    let cfg = Config::parse(&read_text(config)?)?;
    let data = data
        .map(Path::to_path_buf)
        .or(cfg.data.clone())
        .ok_or_else(|| Error::Config("no training data: pass --data or set `data`".into()))?;
    let out = out
        .map(Path::to_path_buf)
        .or(cfg.out.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set `out`".into()))?;
    let pairs = load_pairs(&data, cfg.train.loss.tau)?;
    let outcome = train(&pairs, &cfg.train, Some(&out))?;
    let skipped = outcome.metrics.iter().filter(|m| m.num_matches == 0).count();
    if skipped > 0 {
        eprintln!("warning: {skipped} steps had no matching keypoints and were skipped");
    }
    let last = outcome.metrics.last().map_or(f64::NAN, |m| m.loss);
    let ckpt = outcome.checkpoints.last().map_or_else(String::new, |p| p.display().to_string());
    Ok(format!(
        "train: {} pairs, {} steps, final loss {last:.6}, wrote {ckpt}",
        pairs.len(),
        outcome.metrics.len()
    ))
}

pub fn extract(ckpt: &Path, input: &Path, output: &Path, args: &ExtractArgs) -> Result<String> {
    let (params, _) = load_checkpoint(ckpt)?;
    let cfg = args.config(&params)?;
    let cloud = load_ply(input)?;
    let set = extract_descriptors(&params, &cloud, &cfg, args.seed)?;
    let n = set.len();
    save_descriptors(
        &DescriptorFile {
            mode: cfg.encoder.mode,
            set,
        },
        output,
    )?;
    Ok(format!("extract: {n} descriptors ({} input), wrote {}", cfg.encoder.mode, output.display()))
}

pub fn match_cmd(desc_x: &Path, desc_y: &Path, output: &Path, mutual: bool) -> Result<String> {
    let fx = load_descriptors(desc_x)?;
    let fy = load_descriptors(desc_y)?;
    if fx.mode != fy.mode {
        return Err(Error::Config(format!("descriptors use different encodings ({} and {})", fx.mode, fy.mode)));
    }
    let corrs = match_descriptors(&fx.set, &fy.set, mutual)?;
    let corrs = to_cloud_indices(&corrs, &fx.set, &fy.set);
    write_text(output, &format_correspondences(&corrs))?;
    Ok(format!("match: {} correspondences, wrote {}", corrs.len(), output.display()))
}

pub fn register(corrs: &Path, x: &Path, y: &Path, output: &Path, ransac: &RansacConfig, seed: u64) -> Result<String> {
    let corrs = parse_correspondences(&read_text(corrs)?)?;
    let x = load_ply(x)?;
    let y = load_ply(y)?;
    let result = ransac_register(&corrs, x.points(), y.points(), ransac, seed)?;
    save_pose(&result.transform, output)?;
    Ok(format!(
        "register: {} inliers of {} ({:.3}) after {} iterations, wrote {}",
        result.inlier_count,
        corrs.len(),
        result.inlier_ratio,
        result.iterations_used,
        output.display()
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Sweep {
    None,
    Rotation,
    Sparsity,
}

pub struct EvalArgs<'a> {
    pub ckpt: &'a Path,
    pub pairs: &'a Path,
    pub sweep: Sweep,
    pub output: &'a Path,
    pub mutual: bool,
    pub recall: RecallConfig,
    pub extract: &'a ExtractArgs,
}

pub fn eval(args: &EvalArgs<'_>) -> Result<String> {
    let (params, _) = load_checkpoint(args.ckpt)?;
    let cfg = args.extract.config(&params)?;
    let pairs = load_pairs(args.pairs, args.recall.tau1)?;
    let seed = args.extract.seed;
    match args.sweep {
        Sweep::None => {
            let evals = pairs
                .iter()
                .enumerate()
                .map(|(k, p)| evaluate_pair_lenient(&params, p, &cfg, args.mutual, ppfnet_core::encode::patch_seed(seed, k)))
                .collect::<Result<Vec<_>>>()?;
            let recall = fragment_recall(&evals, &args.recall)?;
            write_text(args.output, &recall_report(&evals, &args.recall))?;
            Ok(format!("eval: recall {recall:.4} over {} pairs, wrote {}", pairs.len(), args.output.display()))
        }
        Sweep::Rotation => {
            let mut sums = vec![0.0; DEFAULT_SWEEP_ANGLES.len()];
            for pair in &pairs {
                for (s, (_, r)) in sums.iter_mut().zip(rotation_sweep(&pair.x, &params, &cfg, &DEFAULT_SWEEP_ANGLES, seed)?) {
                    *s += r;
                }
            }
            let rows: Vec<(f64, f64)> = DEFAULT_SWEEP_ANGLES
                .iter()
                .zip(&sums)
                .map(|(&a, s)| (a, s / pairs.len() as f64))
                .collect();
            write_text(args.output, &rotation_report(&rows))?;
            Ok(format!(
                "eval: rotation sweep over {} fragments, ratio {:.4} at 180 degrees, wrote {}",
                pairs.len(),
                rows.last().map_or(f64::NAN, |r| r.1),
                args.output.display()
            ))
        }
        Sweep::Sparsity => {
            let rows = sparsity_sweep(&pairs, &params, &cfg, &args.recall, &DEFAULT_KEEP_FRACTIONS, seed)?;
            write_text(args.output, &sparsity_report(&rows))?;
            Ok(format!(
                "eval: sparsity sweep over {} pairs, recall {:.4} at full density, wrote {}",
                pairs.len(),
                rows[0].1,
                args.output.display()
            ))
        }
    }
}

/// Colors every point of the cloud with the PCA color of its nearest keypoint.
pub fn colorize(desc: &Path, input: &Path, output: &Path) -> Result<String> {
    let desc = load_descriptors(desc)?;
    let cloud = load_ply(input)?;
    let colors = pca_colorize(&desc.set.features)?;
    let index = SpatialIndex::from_points(desc.set.keypoints.clone())?;
    let per_point: Vec<[f64; 3]> = cloud.points().iter().map(|p| colors[index.knn(p, 1)[0]]).collect();
    save_ply_colored(&cloud, &per_point, output)?;
    Ok(format!(
        "colorize: {} points from {} descriptors, wrote {}",
        cloud.len(),
        desc.set.len(),
        output.display()
    ))
}
