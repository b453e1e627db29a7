use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use alphagan::artifacts::{load_checkpoint, save_checkpoint};
use alphagan::data::DatasetSpec;
use alphagan::networks::Role;
use alphagan::trainers::{Algorithm, TrainedModel, TrainingConfig};

fn alphagan(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_alphagan"))
        .args(args)
        .current_dir(dir)
        .env_remove("ALPHAGAN_SEED")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, json: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, json).unwrap();
    p
}

fn listing(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

const SMALL: &str = r#"{"algorithm":"alpha_gan","max_iter":30,"eval_every":10,"batch_size":16,"seed":3}"#;

#[test]
fn train_writes_log_checkpoints_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), "a.json", SMALL);
    for out in ["r1", "r2"] {
        let o = alphagan(&["train", "a.json", "--out", out], tmp.path());
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let r1 = tmp.path().join("r1");
    let csv = fs::read_to_string(r1.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 30 / 10 + 1);
    assert!(!csv.contains('\r'));
    let files = listing(&r1);
    let ckpts: Vec<&String> = files.iter().filter(|f| f.ends_with(".agan")).collect();
    assert_eq!(ckpts, ["checkpoint_00000020.agan", "checkpoint_00000030.agan"]);
    for f in &files {
        let a = fs::read(r1.join(f)).unwrap();
        let b = fs::read(tmp.path().join("r2").join(f)).unwrap();
        assert!(a == b, "{f} differs between runs");
    }
}

#[test]
fn config_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), "neg.json", r#"{"algorithm":"gan","lr_discriminator":-0.1}"#);
    let o = alphagan(&["train", "neg.json", "--out", "x"], tmp.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("lr_discriminator"), "{}", stderr(&o));

    write_config(tmp.path(), "unk.json", r#"{"algorithm":"gan","colour":"red"}"#);
    let o = alphagan(&["train", "unk.json", "--out", "x"], tmp.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("colour"));

    let o = alphagan(&["train", "absent.json", "--out", "x"], tmp.path());
    assert_eq!(code(&o), 1);
    let o = alphagan(&["frobnicate"], tmp.path());
    assert_eq!(code(&o), 1);
}

#[test]
fn numeric_blow_up_exits_two_with_last_good_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(
        tmp.path(),
        "nan.json",
        r#"{"algorithm":"vae","max_iter":200,"eval_every":50,"lr_generator":1e12,"lr_encoder":1e12}"#,
    );
    let o = alphagan(&["train", "nan.json", "--out", "run"], tmp.path());
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("iteration"));
    let good = load_checkpoint(&tmp.path().join("run/checkpoint_last_good.agan")).unwrap();
    assert!(good.networks.iter().all(|n| n.tensors().iter().all(|t| t.is_finite())));
}

#[test]
fn seed_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let seed_of = |out: &str| {
        load_checkpoint(&tmp.path().join(out).join("checkpoint_00000000.agan"))
            .unwrap()
            .config
            .seed
    };
    write_config(tmp.path(), "none.json", r#"{"algorithm":"gan","max_iter":0,"eval_every":1}"#);
    write_config(tmp.path(), "cfg.json", r#"{"algorithm":"gan","max_iter":0,"eval_every":1,"seed":7}"#);
    let run = |cfg: &str, out: &str, flag: Option<&str>, env: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_alphagan"));
        c.args(["train", cfg, "--out", out]).current_dir(tmp.path()).env_remove("ALPHAGAN_SEED");
        if let Some(s) = flag {
            c.args(["--seed", s]);
        }
        if let Some(e) = env {
            c.env("ALPHAGAN_SEED", e);
        }
        assert!(c.output().unwrap().status.success());
    };
    run("none.json", "a", None, None);
    run("none.json", "b", None, Some("5"));
    run("cfg.json", "c", None, Some("5"));
    run("cfg.json", "d", Some("11"), Some("5"));
    assert_eq!(seed_of("a"), Some(0));
    assert_eq!(seed_of("b"), Some(5));
    assert_eq!(seed_of("c"), Some(7));
    assert_eq!(seed_of("d"), Some(11));
}

fn image_model(alg: Algorithm) -> TrainedModel {
    let mut c = TrainingConfig::new(alg);
    c.dataset = DatasetSpec::Shapes {
        n_classes: 4,
        image_side: 16,
        n_per_split: 64,
    };
    c.latent_dim = 4;
    TrainedModel::initialize(&c, alphagan::data::DataKind::Images { height: 16, width: 16 }).unwrap()
}

#[test]
fn sample_grids_and_reconstructions() {
    let tmp = tempfile::tempdir().unwrap();
    save_checkpoint(&image_model(Algorithm::Vae), &tmp.path().join("vae.agan")).unwrap();
    save_checkpoint(&image_model(Algorithm::Gan), &tmp.path().join("gan.agan")).unwrap();

    let o = alphagan(&["sample", "vae.agan", "--n", "64", "--grid", "8x8", "--out", "s.ppm"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ppm = fs::read(tmp.path().join("s.ppm")).unwrap();
    let header = b"P6\n128 128\n255\n";
    assert_eq!(&ppm[..header.len()], header);
    assert_eq!(ppm.len(), header.len() + 128 * 128 * 3);

    let o = alphagan(&["sample", "vae.agan", "--recon", "--n", "16", "--grid", "4x4", "--out", "r.ppm"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(fs::read(tmp.path().join("r.ppm")).unwrap().starts_with(b"P6\n128 64\n255\n"));

    let o = alphagan(&["sample", "gan.agan", "--recon", "--out", "x.ppm"], tmp.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("no encoder"));
}

#[test]
fn eval_selected_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let mut m = image_model(Algorithm::Gan);
    let g = m.networks.iter_mut().find(|n| n.role() == Role::Generator).unwrap();
    let last = g.spec().layers() - 1;
    g.tensors_mut()[2 * last].data_mut().iter_mut().for_each(|w| *w = 0.0);
    save_checkpoint(&m, &tmp.path().join("flat.agan")).unwrap();
    let o = alphagan(&["eval", "flat.agan", "--metrics", "diversity", "--samples", "64"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    let row: Vec<&str> = out.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[2].parse::<f64>().unwrap(), 0.0);
    assert!(row[1].is_empty() && row[3].is_empty());

    let o = alphagan(&["eval", "missing.agan"], tmp.path());
    assert_eq!(code(&o), 1);
    let o = alphagan(&["eval", "flat.agan", "--metrics", "sharpness"], tmp.path());
    assert_eq!(code(&o), 1);
}

#[test]
fn full_battery_on_ring_model() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), "a.json", SMALL);
    assert_eq!(code(&alphagan(&["train", "a.json", "--out", "run"], tmp.path())), 0);
    let o = alphagan(
        &["eval", "run/checkpoint_00000030.agan", "--critic-steps", "300", "--samples", "1024", "--out", "rep.csv"],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rep = fs::read_to_string(tmp.path().join("rep.csv")).unwrap();
    let row: Vec<&str> = rep.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "30");
    for i in [1, 4, 5] {
        assert!(row[i].parse::<f64>().is_ok(), "column {i} empty: {rep}");
    }
    for f in ["rep_latent_means.csv", "rep_latent_covariance.csv", "rep_critic_curve.csv"] {
        assert!(tmp.path().join(f).exists(), "{f}");
    }
}

#[test]
fn gradcheck_command() {
    let tmp = tempfile::tempdir().unwrap();
    let o = alphagan(&["gradcheck", "--points", "5"], tmp.path());
    assert_eq!(code(&o), 0);
    let report = String::from_utf8(o.stdout).unwrap();
    assert!(report.contains("matmul") && report.contains("wgan_gp_critic"));
    let o = alphagan(&["gradcheck", "--points", "2", "--inject-fault"], tmp.path());
    assert_ne!(code(&o), 0);
    assert!(String::from_utf8(o.stdout).unwrap().contains("faulty_square"));
}
