use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ppfnet_core::artifacts::{format_correspondences, load_pose, to_cloud_indices};
use ppfnet_core::cloud::{load_ply, SpatialIndex};
use ppfnet_core::geom::apply_transform;
use ppfnet_core::matchreg::{match_descriptors, ransac_register, Correspondence, CorrespondenceSet, RansacConfig};
use ppfnet_core::net::save_checkpoint;
use ppfnet_core::pipeline::{extract_descriptors, ExtractConfig};
use ppfnet_core::PpfNetParams;
use tempfile::TempDir;

fn ppfnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ppfnet")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = ppfnet(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 1, "summary should be one line: {stdout:?}");
    stdout
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn synth_pair(dir: &Path, seed: u64, spec: &str, tag: &str) -> (String, String, String) {
    let (x, y, pose) = (p(dir, &format!("{tag}x.ply")), p(dir, &format!("{tag}y.ply")), p(dir, &format!("{tag}.pose")));
    ok(&["synth", "--seed", &seed.to_string(), "--spec", spec, &x, &y, &pose]);
    (x, y, pose)
}

fn checkpoint(dir: &Path, dim: usize) -> String {
    let path = dir.join(format!("init{dim}.ppfn"));
    save_checkpoint(&PpfNetParams::init(9, dim).unwrap(), None, &path).unwrap();
    path.to_string_lossy().into_owned()
}

const SMALL: [&str; 4] = ["--keypoints", "32", "--patch-size", "64"];

#[test]
fn registering_ground_truth_correspondences_recovers_the_pose() {
    let dir = TempDir::new().unwrap();
    let (x, y, pose) = synth_pair(dir.path(), 4, "room,noise=0,keep=1", "");
    let (cx, cy, t) = (load_ply(&x).unwrap(), load_ply(&y).unwrap(), load_pose(&pose).unwrap());
    let moved = apply_transform(&t, &cy);
    let index = SpatialIndex::build(&moved).unwrap();
    let pairs: Vec<Correspondence> = cx
        .points()
        .iter()
        .enumerate()
        .filter_map(|(i, q)| {
            let (j, d2) = index.knn_with_dist2(q, 1)[0];
            (d2 < 1e-18).then_some(Correspondence { i, j, distance: 0.0 })
        })
        .collect();
    assert!(pairs.len() > 100);
    let corrs = p(dir.path(), "gt.csv");
    fs::write(&corrs, format_correspondences(&CorrespondenceSet { pairs })).unwrap();
    let out = p(dir.path(), "est.pose");
    ok(&["register", &corrs, &x, &y, &out, "--seed", "3"]);
    let est = load_pose(&out).unwrap();
    assert!(est.rotation_angle_to(&t) < 1e-6);
    assert!(est.translation_distance_to(&t) < 1e-6);
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.ends_with('\n') && text.split_whitespace().count() == 12);
}

#[test]
fn extraction_is_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let (x, _, _) = synth_pair(dir.path(), 2, "room", "");
    let ckpt = checkpoint(dir.path(), 10);
    let (a, b) = (p(dir.path(), "a.ppfd"), p(dir.path(), "b.ppfd"));
    for out in [&a, &b] {
        let mut args = vec!["extract", "--ckpt", &ckpt, "--mode", "pn-ppf", "--seed", "5", &x, out];
        args.extend(SMALL);
        ok(&args);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn file_pipeline_equals_in_process_composition() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let (x, y, _) = synth_pair(d, 7, "room", "");
    let ckpt = checkpoint(d, 10);
    let (dx, dy, corrs, pose) = (p(d, "x.ppfd"), p(d, "y.ppfd"), p(d, "c.csv"), p(d, "r.pose"));
    for (input, out) in [(&x, &dx), (&y, &dy)] {
        let mut args = vec!["extract", "--ckpt", &ckpt, "--seed", "1", input, out];
        args.extend(SMALL);
        ok(&args);
    }
    ok(&["match", &dx, &dy, &corrs]);
    ok(&["register", &corrs, &x, &y, &pose, "--max-iters", "2000", "--seed", "2"]);

    let params = PpfNetParams::init(9, 10).unwrap();
    let cfg = ExtractConfig {
        keypoints: 32,
        encoder: ppfnet_core::encode::EncoderConfig {
            patch_size: 64,
            ..Default::default()
        },
        ..ExtractConfig::default()
    };
    let (cx, cy) = (load_ply(&x).unwrap(), load_ply(&y).unwrap());
    let fx = extract_descriptors(&params, &cx, &cfg, 1).unwrap();
    let fy = extract_descriptors(&params, &cy, &cfg, 1).unwrap();
    let c = to_cloud_indices(&match_descriptors(&fx, &fy, false).unwrap(), &fx, &fy);
    assert_eq!(fs::read_to_string(&corrs).unwrap(), format_correspondences(&c));
    let ransac = RansacConfig {
        max_iters: 2000,
        ..RansacConfig::default()
    };
    let r = ransac_register(&c, cx.points(), cy.points(), &ransac, 2).unwrap();
    assert_eq!(load_pose(&pose).unwrap().to_row_major(), r.transform.to_row_major());
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = p(dir, "train.cfg");
    fs::write(&path, body).unwrap();
    path
}

#[test]
fn missing_config_key_is_a_usage_error_naming_the_key() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "# no keypoints\nseed = 1\nepochs = 1\nmode = pn-ppf\n");
    let out = ppfnet(&["train", "--config", &cfg, "--data", "nowhere", "--out", "nowhere"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("keypoints"));
}

#[test]
fn train_eval_and_colorize_end_to_end() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let data = d.join("data");
    fs::create_dir(&data).unwrap();
    let mut manifest = String::new();
    for seed in 0..2u64 {
        let tag = format!("p{seed}");
        synth_pair(&data, seed, "room", &tag);
        manifest.push_str(&format!("{tag}x.ply\t{tag}y.ply\t{tag}.pose\n"));
    }
    fs::write(data.join("pairs.manifest"), &manifest).unwrap();
    let cfg = write_config(
        d,
        "seed = 3\nepochs = 2\nkeypoints = 32\nmode = pn-ppf\npatch_size = 64\nbatch_pairs = 1\n",
    );
    let out = d.join("run");
    let summary = ok(&["train", "--config", &cfg, "--data", &data.to_string_lossy(), "--out", &out.to_string_lossy()]);
    assert!(summary.starts_with("train:"));
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,step,lr,loss,mean_match_dist,mean_nonmatch_dist,num_matches\n"));
    assert_eq!(metrics.lines().count(), 5);
    let ckpt = out.join("ckpt_epoch_1.ppfn");
    assert!(out.join("ckpt_epoch_0.ppfn").exists() && ckpt.exists());
    let ckpt = ckpt.to_string_lossy().into_owned();

    let pairs = data.join("pairs.manifest").to_string_lossy().into_owned();
    for (sweep, header, rows) in [
        ("none", "pair_id,inlier_ratio,matched", 2),
        ("rotation", "angle,ratio", 7),
        ("sparsity", "fraction,recall", 5),
    ] {
        let report = p(d, &format!("{sweep}.csv"));
        let mut args = vec!["eval", "--ckpt", &ckpt, "--pairs", &pairs, "--sweep", sweep, &report];
        args.extend(SMALL);
        ok(&args);
        let text = fs::read_to_string(&report).unwrap();
        assert_eq!(text.lines().next(), Some(header));
        assert_eq!(text.lines().count(), rows + 1);
    }
    let rotation = fs::read_to_string(p(d, "rotation.csv")).unwrap();
    assert!(rotation.lines().nth(1).unwrap().starts_with("0,1"));

    let x = data.join("p0x.ply").to_string_lossy().into_owned();
    let desc = p(d, "x.ppfd");
    let mut args = vec!["extract", "--ckpt", &ckpt, &x, &desc];
    args.extend(SMALL);
    ok(&args);
    let colored = p(d, "colored.ply");
    ok(&["colorize", &desc, &x, &colored]);
    let text = fs::read_to_string(&colored).unwrap();
    assert!(text.contains("comment pca-colorized"));
    assert_eq!(load_ply(&colored).unwrap().len(), load_ply(&x).unwrap().len());
}

#[test]
fn normals_and_sample_commands() {
    let dir = TempDir::new().unwrap();
    let (x, _, _) = synth_pair(dir.path(), 1, "plane", "");
    let with_normals = p(dir.path(), "n.ply");
    ok(&["normals", &x, &with_normals, "--k", "12", "--viewpoint", "0,0,0"]);
    assert!(load_ply(&with_normals).unwrap().has_normals());
    let (a, b) = (p(dir.path(), "a.txt"), p(dir.path(), "b.txt"));
    ok(&["sample", &x, &a, "--tau", "0.1"]);
    ok(&["sample", &with_normals, &b, "--tau", "0.1"]);
    let picked = ppfnet_core::artifacts::parse_indices(&fs::read_to_string(&a).unwrap()).unwrap();
    assert!(!picked.is_empty());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    assert_eq!(ppfnet(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(ppfnet(&["--help"]).status.code(), Some(0));

    let garbage = p(d, "bad.ply");
    fs::write(&garbage, "not a ply file\n").unwrap();
    assert_eq!(ppfnet(&["normals", &garbage, &p(d, "o.ply")]).status.code(), Some(2));

    let line = p(d, "line.ply");
    let mut ply = String::from("ply\nformat ascii 1.0\nelement vertex 5\nproperty float x\nproperty float y\nproperty float z\nend_header\n");
    for k in 0..5 {
        ply.push_str(&format!("{k} 0 0\n"));
    }
    fs::write(&line, ply).unwrap();
    let corrs = p(d, "c.csv");
    fs::write(&corrs, "x_index,y_index,distance\n0,0,0\n1,1,0\n2,2,0\n3,3,0\n").unwrap();
    let out = ppfnet(&["register", &corrs, &line, &line, &p(d, "o.pose"), "--max-iters", "20"]);
    assert_eq!(out.status.code(), Some(3));

    let (x, _, _) = synth_pair(d, 1, "room", "");
    let ckpt = checkpoint(d, 6);
    let mismatch = ppfnet(&["extract", "--ckpt", &ckpt, "--mode", "pn-ppf", &x, &p(d, "o.ppfd")]);
    assert_eq!(mismatch.status.code(), Some(1));
}
