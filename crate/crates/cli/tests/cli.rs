use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use imfield::checkpoint::Checkpoint;
use imfield::extract::parse_obj;
use imfield::{Decoder, DecoderArch, Encoder, EncoderArch};
use imfield_cli::report::{Report, Scope, HEADER};

struct Workspace {
    dir: tempfile::TempDir,
}

/// Small corpus and networks so every pipeline finishes in seconds.
const SMALL: &[&str] = &[
    "--data.count=5",
    "--data.resolutions=8,16",
    "--ae.schedule=8,16",
    "--ae.epochs=2",
    "--ae.widths=32,16",
    "--ae.latent_dim=8",
    "--ae.shapes_per_step=2",
    "--ae.save_every=1",
    "--sample.points8=256",
    "--sample.points16=256",
    "--gan.epochs=3",
    "--gan.hidden=16",
    "--gan.save_every=1",
    "--svr.epochs=2",
    "--svr.side=16",
    "--svr.save_every=1",
    "--eval.res=16",
    "--eval.samples=256",
    "--eval.gan_multiplier=2",
];

impl Workspace {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn run(&self, args: &[&str]) -> Output {
        self.run_env(args, &[])
    }

    fn run_env(&self, args: &[&str], env: &[(&str, &str)]) -> Output {
        let mut c = Command::new(env!("CARGO_BIN_EXE_imfield"));
        // Later overrides win, so the test's own flags follow the defaults.
        c.current_dir(self.dir.path()).args(SMALL).args(args);
        for (k, v) in env {
            c.env(k, v);
        }
        c.output().unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let o = self.run(args);
        assert!(
            o.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        String::from_utf8(o.stdout).unwrap()
    }

    fn read(&self, rel: &str) -> Vec<u8> {
        fs::read(self.path(rel)).unwrap()
    }
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn trained() -> Workspace {
    let w = Workspace::new();
    w.ok(&["gen-data"]);
    w.ok(&["train-ae"]);
    w
}

#[test]
fn gen_data_writes_every_resolution_and_an_80_20_split() {
    let w = Workspace::new();
    let out = w.ok(&["gen-data", "--data.count=20"]);
    assert!(out.contains("shapes\t20\ttrain\t16\ttest\t4"), "{out}");
    let manifest = String::from_utf8(w.read("data/manifest.txt")).unwrap();
    assert_eq!(manifest.lines().filter(|l| l.ends_with(" train")).count(), 16);
    assert_eq!(manifest.lines().filter(|l| l.ends_with(" test")).count(), 4);
    let files: usize = fs::read_dir(w.path("data/shapes"))
        .unwrap()
        .map(|d| fs::read_dir(d.unwrap().path()).unwrap().count())
        .sum();
    assert_eq!(files, 20 * 2);
    let first = w.read("data/shapes/box-0001/16.imvx");
    w.ok(&["gen-data", "--data.count=20"]);
    assert_eq!(manifest.as_bytes(), &w.read("data/manifest.txt")[..]);
    assert_eq!(first, w.read("data/shapes/box-0001/16.imvx"));
}

#[test]
fn config_errors_exit_with_usage_code() {
    let w = Workspace::new();
    fs::write(w.path("bad.cfg"), "# settings\nae.lr = 1e-3\nae.learning_rate = 2\n").unwrap();
    let o = w.run(&["--config", "bad.cfg", "config"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
    assert_eq!(code(&w.run(&["config", "--ae.nope=1"])), 2);
    assert_eq!(code(&w.run(&["config", "--ae.lr=fast"])), 0, "values are checked where used");
    assert_eq!(code(&w.run(&["train-ae", "--ae.lr=fast"])), 2);
    assert_eq!(code(&w.run(&["--config", "missing.cfg", "config"])), 3);
    assert_eq!(code(&w.run(&["decode"])), 2);
    assert_eq!(code(&w.run_env(&["config"], &[("IMFIELD_THREADS", "many")])), 2);
    assert_eq!(code(&w.run_env(&["config"], &[("IMFIELD_THREADS", "1")])), 0);
}

#[test]
fn config_dump_lists_documented_defaults() {
    let w = Workspace::new();
    let o = Command::new(env!("CARGO_BIN_EXE_imfield"))
        .current_dir(w.dir.path())
        .args(["config", "--gan.lambda_gp=3"])
        .output()
        .unwrap();
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("gan.lambda_gp = 3"));
    assert!(text.contains("sample.far_budget16 = 512"));
    assert!(text.lines().filter(|l| l.starts_with('#')).count() >= 40);
}

#[test]
fn dependent_trainers_name_the_missing_step() {
    let w = Workspace::new();
    w.ok(&["gen-data"]);
    for cmd in ["train-gan", "train-svr"] {
        let o = w.run(&[cmd]);
        assert_eq!(code(&o), 2);
        assert!(stderr(&o).contains("run train-ae first"), "{}", stderr(&o));
    }
    let o = w.run(&["decode", "--gan-sample", "1", "--out", "x.obj"]);
    assert!(stderr(&o).contains("run train-ae first"));
    let o = Workspace::new().run(&["train-ae"]);
    assert!(stderr(&o).contains("run gen-data first"), "{}", stderr(&o));
}

#[test]
fn training_is_reproducible_and_resumable() {
    let a = trained();
    let b = trained();
    assert_eq!(a.read("runs/ae/last.imck"), b.read("runs/ae/last.imck"));
    let log = String::from_utf8(a.read("runs/ae/log.tsv")).unwrap();
    assert_eq!(log.lines().count(), 4);
    for (i, line) in log.lines().enumerate() {
        let f: Vec<&str> = line.split('\t').collect();
        assert_eq!(f.len(), 4);
        assert_eq!(f[0], (i + 1).to_string());
        assert_eq!(f[1], if i < 2 { "8" } else { "16" });
    }
    let saved: Vec<_> = (1..=4).map(|e| a.path(&format!("runs/ae/epoch-{e:05}.imck"))).collect();
    assert!(saved.iter().all(|p| p.exists()));
    // Pretend the run died after epoch 3.
    fs::copy(&saved[2], a.path("runs/ae/last.imck")).unwrap();
    fs::remove_file(&saved[3]).unwrap();
    let out = a.ok(&["train-ae", "--resume"]);
    assert!(out.starts_with("4\t16\t"), "{out}");
    assert_eq!(a.read("runs/ae/last.imck"), b.read("runs/ae/last.imck"));
    assert_eq!(String::from_utf8(a.read("runs/ae/log.tsv")).unwrap().lines().count(), 4);
}

#[test]
fn stage_switch_reports_an_exact_warm_start() {
    let w = Workspace::new();
    w.ok(&["gen-data"]);
    let out = w.ok(&["train-ae"]);
    assert!(out.contains("stage\t8->16\twarm_start_exact\ttrue"), "{out}");
}

#[test]
fn decode_any_resolution_deterministically() {
    let w = trained();
    for res in ["8", "16", "48"] {
        let out = w.ok(&["decode", "--shape-id", "box-0001", "--res", res, "--out", "a.obj"]);
        assert!(out.starts_with("vertices\t"), "{out}");
        let bytes = w.read("a.obj");
        w.ok(&["decode", "--shape-id", "box-0001", "--res", res, "--out", "b.obj"]);
        assert_eq!(bytes, w.read("b.obj"));
        let mesh = parse_obj(std::str::from_utf8(&bytes).unwrap()).unwrap();
        assert!(out.contains(&format!("triangles\t{}", mesh.triangles.len())));
    }
    assert_eq!(code(&w.run(&["decode", "--shape-id", "nope-0000", "--out", "x.obj"])), 2);
    assert_eq!(code(&w.run(&["decode", "--shape-id", "box-0001", "--res", "1", "--out", "x.obj"])), 2);
}

#[test]
fn code_files_are_checked_and_decoded() {
    let w = trained();
    fs::write(w.path("z.txt"), "0.5 ".repeat(8)).unwrap();
    w.ok(&["decode", "--code-file", "z.txt", "--res", "8", "--out", "z.obj"]);
    fs::write(w.path("short.txt"), "0.5 0.5").unwrap();
    assert_eq!(code(&w.run(&["decode", "--code-file", "short.txt", "--out", "z.obj"])), 1);
    fs::write(w.path("junk.txt"), "0.5 zero").unwrap();
    assert_eq!(code(&w.run(&["decode", "--code-file", "junk.txt", "--out", "z.obj"])), 3);
}

/// Autoencoder checkpoint whose decoder output bias is hugely negative.
fn empty_field_checkpoint(path: &Path) {
    let enc = Encoder::new(EncoderArch::voxel(3, 16, 8), 0).unwrap();
    let mut arch = DecoderArch::new(8, 3);
    arch.widths = vec![8];
    let mut dec = Decoder::new(arch, 0).unwrap();
    let last = dec.params.len() - 1;
    for v in dec.params.tensors_mut()[last].data_mut() {
        *v = -100.0;
    }
    let mut c = Checkpoint::new(0);
    c.push_params(&enc.params);
    c.push_params(&dec.params);
    c.set_meta("kind", "ae");
    c.set_meta("enc.arch", &enc.arch);
    c.set_meta("dec.arch", &dec.arch);
    c.save(path).unwrap();
}

#[test]
fn empty_field_gives_empty_obj_and_a_warning() {
    let w = Workspace::new();
    empty_field_checkpoint(&w.path("empty.imck"));
    fs::write(w.path("z.txt"), "0 ".repeat(8)).unwrap();
    let o = w.run(&["decode", "--checkpoint", "empty.imck", "--code-file", "z.txt", "--res", "16", "--out", "e.obj"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("warning"));
    assert!(String::from_utf8_lossy(&o.stdout).contains("vertices\t0\ttriangles\t0"));
    let mesh = parse_obj(&String::from_utf8(w.read("e.obj")).unwrap()).unwrap();
    assert!(mesh.is_empty());
}

#[test]
fn interpolation_endpoints_match_decode() {
    let w = trained();
    assert_eq!(code(&w.run(&["interpolate", "--a", "box-0001", "--b", "sphere-0000", "--steps", "1", "--out-dir", "i"])), 2);
    let out = w.ok(&["interpolate", "--a", "box-0001", "--b", "sphere-0000", "--steps", "2", "--res", "16", "--out-dir", "two"]);
    assert_eq!(out.lines().count(), 2);
    assert_eq!(fs::read_dir(w.path("two")).unwrap().count(), 2);
    let out = w.ok(&["interpolate", "--a", "box-0001", "--b", "sphere-0000", "--steps", "5", "--res", "16", "--out-dir", "five"]);
    assert_eq!(out.lines().count(), 5);
    assert!(out.lines().nth(2).unwrap().contains("\tt\t0.5000\t"));
    w.ok(&["decode", "--shape-id", "box-0001", "--res", "16", "--out", "a.obj"]);
    w.ok(&["decode", "--shape-id", "sphere-0000", "--res", "16", "--out", "b.obj"]);
    assert_eq!(w.read("five/step-000.obj"), w.read("a.obj"));
    assert_eq!(w.read("five/step-004.obj"), w.read("b.obj"));
    assert_eq!(w.read("two/step-001.obj"), w.read("b.obj"));
    assert_eq!(code(&w.run(&["interpolate", "--a", "box-0001", "--b", "nope-1", "--out-dir", "x"])), 2);
}

fn report(text: &str) -> Report {
    assert!(text.starts_with(HEADER));
    Report::parse(text).unwrap()
}

#[test]
fn oracle_rows_are_exact() {
    let w = Workspace::new();
    w.ok(&["gen-data"]);
    let r = report(&w.ok(&["eval", "--suite", "ae", "--oracle"]));
    assert_eq!(r.overall("iou"), Some(1.0));
    assert_eq!(r.overall("mse"), Some(0.0));
    assert_eq!(r.overall("cd"), Some(0.0));
    assert_eq!(r.overall("lfd"), Some(0.0));
    assert_eq!(r.get("oracle"), Some("true"));
    let shapes = r.rows.iter().filter(|x| x.metric == "iou" && x.scope == Scope::Shape).count();
    assert_eq!(shapes, 1);
    let r = report(&w.ok(&["eval", "--suite", "gan", "--oracle"]));
    assert_eq!(r.overall("cov"), Some(1.0));
    assert_eq!(r.overall("mmd"), Some(0.0));
}

#[test]
fn eval_suites_run_and_reproduce() {
    let w = trained();
    w.ok(&["train-gan"]);
    w.ok(&["train-svr"]);
    let a = w.ok(&["eval", "--suite", "ae", "--out", "ae.tsv"]);
    assert_eq!(a.trim_end(), String::from_utf8(w.read("ae.tsv")).unwrap().trim_end());
    assert_eq!(a, w.ok(&["eval", "--suite", "ae"]));
    let r = report(&a);
    for m in ["mse", "iou", "cd", "lfd"] {
        assert!(r.overall(m).is_some(), "{m}");
    }
    let g = w.ok(&["eval", "--suite", "gan", "--select-best-of", "2"]);
    let r = report(&g);
    assert_eq!(r.get("samples"), Some("2"));
    assert!(r.get("candidates").unwrap().contains("epoch-00003.imck"));
    assert!(r.overall("cov").unwrap() > 0.0);
    assert_eq!(g, w.ok(&["eval", "--suite", "gan", "--select-best-of", "2"]));
    let r = report(&w.ok(&["eval", "--suite", "svr"]));
    assert_eq!(r.rows.iter().filter(|x| x.metric == "cd" && x.scope == Scope::Shape).count(), 5);
    assert!(r.overall("code_mse").unwrap().is_finite());
    let out = w.ok(&["decode", "--gan-sample", "4", "--res", "16", "--out", "g.obj"]);
    assert!(out.starts_with("vertices"));
    let gan = w.read("runs/gan/last.imck");
    w.ok(&["train-gan"]);
    assert_eq!(gan, w.read("runs/gan/last.imck"));
}

#[test]
fn svr_decodes_external_silhouettes() {
    let w = trained();
    w.ok(&["train-svr"]);
    let g = imfield::voxel::rasterize(&imfield::ShapeSpec::sphere([0.5; 3], 0.3).unwrap(), 16).unwrap();
    let view = imfield::encoder::render_silhouette(&g, imfield::voxel::Axis::Z, 16).unwrap();
    fs::write(w.path("view.pgm"), view.to_pgm().unwrap()).unwrap();
    let out = w.ok(&["decode", "--image", "view.pgm", "--res", "16", "--out", "v.obj"]);
    assert!(out.starts_with("vertices"));
    fs::write(w.path("big.pgm"), imfield::voxel::save_pgm(32, 32, &[0; 1024]).unwrap()).unwrap();
    assert_eq!(code(&w.run(&["decode", "--image", "big.pgm", "--out", "v.obj"])), 1);
}

#[test]
fn two_dimensional_pipeline_writes_images() {
    let w = Workspace::new();
    w.ok(&["--dims", "2", "gen-data"]);
    w.ok(&["--dims", "2", "train-ae"]);
    w.ok(&["--dims", "2", "decode", "--shape-id", "box-0001", "--res", "24", "--out", "a.pgm", "--binarize"]);
    let bytes = w.read("a.pgm");
    let header = b"P5\n24 24\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    assert!(bytes[header.len()..].iter().all(|&p| p == 0 || p == 255));
    assert_eq!(bytes.len(), header.len() + 576);
    w.ok(&["--dims", "2", "decode", "--shape-id", "box-0001", "--res", "24", "--out", "g.pgm"]);
    let r = report(&w.ok(&["--dims", "2", "eval", "--suite", "ae"]));
    assert!(r.overall("iou").is_some() && r.overall("cd").is_none());
    assert_eq!(code(&w.run(&["--dims", "2", "train-svr"])), 2);
}

#[test]
fn gradcheck_exit_codes() {
    let w = Workspace::new();
    let o = w.run(&["gradcheck", "--seeds", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().skip(1).all(|l| l.ends_with("pass")));
    assert!(text.contains("encoder+decoder+loss") && text.contains("gradient_penalty"));
    let o = w.run(&["gradcheck", "--seeds", "1", "--corrupt"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("relative error"), "{}", stderr(&o));
}
