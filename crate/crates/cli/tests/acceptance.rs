//! End-to-end acceptance checks A1–A9. Prints one PASS/FAIL line per
//! criterion and exits non-zero when any fails.
//!
//! A4–A7 share one full-size pipeline run (default config, 20 shapes).

use std::error::Error;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use imfield::autodiff::gradcheck::GradCheckOptions;
use imfield::checkpoint::Checkpoint;
use imfield::extract::{export_obj, load_imfg, marching_cubes, parse_obj, sample_field, save_imfg, FieldGrid, Mesh};
use imfield::metrics::{chamfer, coverage, dist2, iou, lfd_lite, lfd_lite_distance, mmd};
use imfield::training::{
    code_mse, generate, gradient_penalty, load_autoencoder, load_generator, load_image_encoder, reconstruct, train_ae,
    Mlp, MlpArch, ShapePyramid, SvrTrainer, TrainConfig,
};
use imfield::verify::gradcheck_suite;
use imfield::voxel::{load_imvx, load_pgm, rasterize, save_imvx, Manifest, Split};
use imfield::{Params, ShapeSpec, Tensor, VoxelGrid};
use imfield_cli::dataset::{gen_data, Dataset, RunDir};
use imfield_cli::decode::{decode, interpolate_shapes, CodeSource, DecodeArgs, InterpolateArgs, Rendered, ISO};
use imfield_cli::eval::{eval, EvalArgs, Suite};
use imfield_cli::report::Report;
use imfield_cli::train::{self, svr_data};
use imfield_cli::Config;

type R<T> = Result<T, Box<dyn Error>>;

struct Verdict {
    ok: bool,
    detail: String,
}

fn verdict(ok: bool, detail: impl Into<String>) -> R<Verdict> {
    Ok(Verdict { ok, detail: detail.into() })
}

fn minutes(d: Duration) -> String {
    format!("{:.1} min", d.as_secs_f64() / 60.0)
}

fn config(root: &Path) -> R<Config> {
    let mut cfg = Config::default();
    cfg.set("paths.data", root.join("data").to_str().ok_or("non-UTF-8 temp path")?)?;
    cfg.set("paths.runs", root.join("runs").to_str().ok_or("non-UTF-8 temp path")?)?;
    Ok(cfg)
}

fn eval_suite(cfg: &Config, suite: Suite) -> R<Report> {
    let args = EvalArgs {
        suite,
        oracle: false,
        select_best_of: None,
        checkpoint: None,
        out: None,
    };
    Ok(eval(cfg, &args, &mut Vec::new())?)
}

fn a1() -> R<Verdict> {
    let t0 = Instant::now();
    let opts = GradCheckOptions::default();
    let reports = gradcheck_suite(20, &opts, false)?;
    let took = t0.elapsed();
    let worst = reports
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .ok_or("empty suite")?;
    let all = reports.iter().all(|r| r.passed(opts.tolerance) && r.checked > 0);
    let composed = reports.iter().any(|r| r.name == "encoder+decoder+loss");
    verdict(
        all && composed && took < Duration::from_secs(60),
        format!(
            "{} cases, worst {} rel err {:.2e} (tol {:.0e}), {:.1} s",
            reports.len(),
            worst.name,
            worst.max_rel_error,
            opts.tolerance,
            took.as_secs_f64()
        ),
    )
}

/// A2 and A3 share the single-sphere model.
fn a2_a3() -> R<(Verdict, Verdict)> {
    let sphere = ShapeSpec::sphere([0.5; 3], 0.3)?;
    let g16 = rasterize(&sphere, 16)?;
    let steps = 1000;
    let t0 = Instant::now();
    // One shape per epoch means one optimizer step per epoch.
    let t = train_ae(
        &[ShapePyramid::new(g16.clone(), &[16])?],
        TrainConfig::new(vec![16], steps),
        16,
        vec![256, 256, 128],
        |_, _| Ok(()),
    )?;
    let took = t0.elapsed();
    let recon16 = reconstruct(&t.encoder, &t.decoder, &g16, 16)?.threshold(ISO)?;
    let iou16 = iou(&recon16, &g16)?;
    let v2 = verdict(
        iou16 >= 0.95 && steps <= 3000 && took < Duration::from_secs(300),
        format!("IoU@16 {iou16:.4} after {steps} steps, {:.1} s", took.as_secs_f64()),
    )?;

    let f64 = reconstruct(&t.encoder, &t.decoder, &g16, 64)?;
    let iou64 = iou(&f64.threshold(ISO)?, &rasterize(&sphere, 64)?)?;
    let mesh = marching_cubes(&f64, ISO)?;
    let (tight, chi) = (mesh.is_watertight(), mesh.euler_characteristic());
    let v3 = verdict(
        iou64 >= 0.85 && tight && chi == 2,
        format!("IoU@64 {iou64:.4}, watertight {tight}, euler {chi}"),
    )?;
    Ok((v2, v3))
}

fn a4(cfg: &Config) -> R<Verdict> {
    let t0 = Instant::now();
    gen_data(cfg)?;
    let mut log = Vec::new();
    train::train_ae(cfg, false, &mut log)?;
    let took = t0.elapsed();
    let log = String::from_utf8(log)?;
    let exact = log.contains("stage\t16->32\twarm_start_exact\ttrue");
    let r = eval_suite(cfg, Suite::Ae)?;
    let test_iou = r.overall("iou").ok_or("report has no iou row")?;
    let cats: Vec<String> = r
        .rows
        .iter()
        .filter(|row| row.metric == "iou" && row.scope == imfield_cli::report::Scope::Category)
        .map(|row| format!("{} {:.3}", row.name, row.value))
        .collect();
    verdict(
        test_iou >= 0.75 && exact && took < Duration::from_secs(45 * 60),
        format!(
            "test IoU@32 {test_iou:.4} ({}), warm start exact {exact}, {}",
            cats.join(", "),
            minutes(took)
        ),
    )
}

fn linear_critic(w: Vec<f32>) -> R<Mlp> {
    let d = w.len();
    let arch = MlpArch {
        prefix: "critic".into(),
        input_dim: d,
        widths: vec![],
        output_dim: 1,
        sigmoid: false,
        alpha: 0.2,
    };
    let mut p = Params::new();
    p.push("critic.layer0.W", Tensor::new(vec![d, 1], w)?);
    p.push("critic.layer0.b", Tensor::zeros(&[1]));
    Ok(Mlp::from_params(arch, p)?)
}

/// For a linear critic the input gradient is its weight vector everywhere,
/// so the penalty is `(‖w‖ − 1)²` exactly.
fn penalty_cases_exact() -> R<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let real = Tensor::uniform(&[8, 4], 1.0, &mut rng);
    let fake = Tensor::uniform(&[8, 4], 1.0, &mut rng);
    let cases: [(Vec<f32>, f64); 4] = [
        (vec![0.0, 1.0, 0.0, 0.0], 0.0),
        (vec![0.0; 4], 1.0),
        (vec![3.0, 4.0, 0.0, 0.0], 16.0),
        (vec![0.0, 0.0, -0.5, 0.0], 0.25),
    ];
    for (w, expected) in cases {
        if gradient_penalty(&linear_critic(w)?, &real, &fake, 5)? != expected {
            return Ok(false);
        }
    }
    Ok(true)
}

fn a5(cfg: &Config) -> R<Verdict> {
    let gp_exact = penalty_cases_exact()?;
    let t0 = Instant::now();
    train::train_gan(cfg, false, &mut Vec::new())?;
    let took = t0.elapsed();

    let data = Dataset::open(Path::new(cfg.raw("paths.data")))?;
    let fractions = data
        .entries(Split::Train)
        .into_iter()
        .map(|e| Ok(data.grid(e, 32)?.fraction()))
        .collect::<R<Vec<f64>>>()?;
    let lo = fractions.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = fractions.iter().copied().fold(0.0, f64::max);
    let (_, decoder) = load_autoencoder(&RunDir::new(cfg, "ae").require("train-ae")?)?;
    let generator = load_generator(&RunDir::new(cfg, "gan").require("train-gan")?)?;
    let codes = generate(&generator, 50, 0)?;
    let mut inside = 0;
    for z in &codes {
        let f = sample_field(&decoder, z, 32)?.threshold(ISO)?.fraction();
        inside += usize::from(f >= 0.2 * lo && f <= 5.0 * hi);
    }
    let share = inside as f64 / codes.len() as f64;

    let mut lfd_cfg = cfg.clone();
    lfd_cfg.set("eval.gan_distance", "lfd")?;
    let r = eval_suite(&lfd_cfg, Suite::Gan)?;
    let cov = r.overall("cov").ok_or("report has no cov row")?;
    let mmd = r.overall("mmd").ok_or("report has no mmd row")?;
    verdict(
        gp_exact && share >= 0.9 && cov >= 0.5 && took < Duration::from_secs(15 * 60),
        format!(
            "penalty cases exact {gp_exact}, {inside}/50 fractions in [{:.4}, {:.4}], COV-LFD {cov:.2}, MMD-LFD {mmd:.3}, {}",
            0.2 * lo,
            5.0 * hi,
            minutes(took)
        ),
    )
}

fn a6(cfg: &Config) -> R<Verdict> {
    let (sc, _) = cfg.svr()?;
    let data = Dataset::open(Path::new(cfg.raw("paths.data")))?;
    let (encoder, decoder) = load_autoencoder(&RunDir::new(cfg, "ae").require("train-ae")?)?;
    let pairs = svr_data(&data, &encoder, sc.side)?;
    let baseline = code_mse(&SvrTrainer::new(sc, &pairs.train, &decoder)?.encoder, &pairs.test)?;
    let t0 = Instant::now();
    train::train_svr(cfg, false, &mut Vec::new())?;
    let took = t0.elapsed();
    let trained = code_mse(
        &load_image_encoder(&RunDir::new(cfg, "svr").require("train-svr")?)?,
        &pairs.test,
    )?;
    let r = eval_suite(cfg, Suite::Svr)?;
    let view_iou = r.overall("iou").ok_or("report has no iou row")?;
    verdict(
        trained <= 0.1 * baseline && view_iou >= 0.6 && took < Duration::from_secs(30 * 60),
        format!(
            "held-out code MSE {trained:.3e} vs untrained {baseline:.3e} (ratio {:.3}), view IoU@32 {view_iou:.4}, {}",
            trained / baseline,
            minutes(took)
        ),
    )
}

fn a7(cfg: &Config, root: &Path) -> R<Verdict> {
    let args = InterpolateArgs {
        a: "sphere-0000".into(),
        b: "torus-0003".into(),
        steps: 8,
        res: 64,
        out_dir: root.join("interp"),
        binarize: false,
        checkpoint: None,
    };
    let meshes = interpolate_shapes(cfg, &args, &mut Vec::new())?;
    let mut chis = Vec::new();
    let mut tight = true;
    for r in &meshes {
        let Rendered::Mesh(m) = r else {
            return Err("interpolation of 3D shapes produced an image".into());
        };
        tight &= m.is_watertight() && !m.is_empty();
        chis.push(m.euler_characteristic());
    }
    let transition = chis.windows(2).any(|w| w == [2, 0]);
    let ends = chis.first() == Some(&2) && chis.last() == Some(&0);
    verdict(
        tight && ends && transition,
        format!("euler {chis:?}, all watertight {tight}"),
    )
}

fn brute_chamfer(a: &[[f32; 3]], b: &[[f32; 3]]) -> f64 {
    let one_way = |from: &[[f32; 3]], to: &[[f32; 3]]| {
        let mut sum = 0.0;
        for p in from {
            let mut best = f64::INFINITY;
            for q in to {
                best = best.min(dist2(p, q));
            }
            sum += best;
        }
        sum / from.len() as f64
    };
    one_way(a, b) + one_way(b, a)
}

fn cloud(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f32; 3]> {
    (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect()
}

fn random_grid(n: usize, dims: usize, p: f64, rng: &mut ChaCha8Rng) -> R<VoxelGrid> {
    let occ = (0..n.pow(dims as u32)).map(|_| rng.gen_bool(p)).collect();
    Ok(VoxelGrid::new(n, dims, occ)?)
}

fn translated(m: &Mesh, by: [f32; 3]) -> Mesh {
    Mesh {
        vertices: m.vertices.iter().map(|v| [v[0] + by[0], v[1] + by[1], v[2] + by[2]]).collect(),
        triangles: m.triangles.clone(),
    }
}

fn a8() -> R<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut chamfer_exact = 0;
    for _ in 0..50 {
        let (na, nb) = (1 + rng.gen_range(0..300), 1 + rng.gen_range(0..300));
        let a = cloud(na, &mut rng);
        let b = cloud(nb, &mut rng);
        chamfer_exact += usize::from(chamfer(&a, &b)? == brute_chamfer(&a, &b));
    }

    let mut hand = Vec::new();
    let full = VoxelGrid::full(8, 3)?;
    let empty = VoxelGrid::empty(8, 3)?;
    let left = VoxelGrid::from_fn(8, 3, |c| c[0] < 4)?;
    let right = VoxelGrid::from_fn(8, 3, |c| c[0] >= 4)?;
    // Two 4-wide slabs offset by 2: overlap is half of each.
    let a = VoxelGrid::from_fn(8, 3, |c| c[0] < 4)?;
    let b = VoxelGrid::from_fn(8, 3, |c| (2..6).contains(&c[0]))?;
    hand.push(iou(&left, &left)? == 1.0);
    hand.push(iou(&left, &right)? == 0.0);
    hand.push(iou(&a, &b)? == 1.0 / 3.0);
    hand.push(iou(&empty, &empty)? == 1.0);
    hand.push(iou(&full, &empty)? == 0.0);
    let line = |g: &[f64], s: &[f64]| -> Vec<Vec<f64>> {
        g.iter().map(|x| s.iter().map(|y| (x - y).abs()).collect()).collect()
    };
    let d = line(&[0.0, 10.0], &[1.0, 2.0, 3.0]);
    hand.push(coverage(&d)? == 0.5 && mmd(&d)? == 4.0);
    let same = line(&[0.0, 4.0, 9.0], &[0.0, 4.0, 9.0]);
    hand.push(coverage(&same)? == 1.0 && mmd(&same)? == 0.0);
    hand.push(coverage(&line(&[0.0, 10.0], &[0.0]))? == 0.5);
    let hand_ok = hand.iter().all(|&h| h);

    let mut worst: f64 = 0.0;
    let corpus = ShapeSpec::corpus(6, 31);
    let other = lfd_lite(&marching_cubes(&FieldGrid::from_grid(&rasterize(&corpus[5].1, 32)?), ISO)?)?;
    for (_, spec) in &corpus[..5] {
        let mesh = marching_cubes(&FieldGrid::from_grid(&rasterize(spec, 32)?), ISO)?;
        let base = lfd_lite_distance(&lfd_lite(&mesh)?, &other);
        for by in [[0.05, 0.0, 0.0], [0.0, -0.031, 0.017], [-0.043, 0.02, 0.06]] {
            let moved = lfd_lite_distance(&lfd_lite(&translated(&mesh, by))?, &other);
            worst = worst.max((moved - base).abs() / base);
        }
    }
    verdict(
        chamfer_exact == 50 && hand_ok && worst < 1e-3,
        format!(
            "chamfer exact {chamfer_exact}/50, hand cases {}/{}, LFD-lite translation rel change {worst:.2e}",
            hand.iter().filter(|&&h| h).count(),
            hand.len()
        ),
    )
}

const SMALL: &[(&str, &str)] = &[
    ("data.count", "5"),
    ("data.resolutions", "8,16"),
    ("ae.schedule", "8,16"),
    ("ae.epochs", "3,3"),
    ("ae.widths", "32,16"),
    ("ae.latent_dim", "8"),
    ("ae.shapes_per_step", "2"),
    ("ae.save_every", "2"),
    ("sample.points8", "256"),
    ("sample.points16", "256"),
    ("gan.epochs", "4"),
    ("gan.hidden", "16"),
    ("gan.save_every", "2"),
    ("svr.epochs", "3"),
    ("svr.side", "16"),
    ("svr.save_every", "2"),
    ("eval.res", "16"),
    ("eval.samples", "256"),
    ("eval.gan_multiplier", "2"),
];

/// Every command of the pipeline, writing reports and a decoded mesh next
/// to the data and runs.
fn small_pipeline(root: &Path) -> R<()> {
    let mut cfg = config(root)?;
    for (k, v) in SMALL {
        cfg.set(k, v)?;
    }
    let sink = &mut Vec::new();
    gen_data(&cfg)?;
    train::train_ae(&cfg, false, sink)?;
    train::train_gan(&cfg, false, sink)?;
    train::train_svr(&cfg, false, sink)?;
    for suite in [Suite::Ae, Suite::Gan, Suite::Svr] {
        let args = EvalArgs {
            suite,
            oracle: false,
            select_best_of: None,
            checkpoint: None,
            out: Some(root.join(format!("eval-{}.tsv", suite.name()))),
        };
        eval(&cfg, &args, sink)?;
    }
    let args = DecodeArgs {
        source: CodeSource::GanSample(3),
        res: 24,
        out: root.join("sample.obj"),
        binarize: false,
        checkpoint: None,
    };
    decode(&cfg, &args, sink)?;
    Ok(())
}

/// Relative paths of every file under `root`, sorted. Training logs carry
/// wall-clock times and are left out.
fn files(root: &Path) -> R<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir)? {
            let p = e?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != "log.tsv") {
                out.push(p.strip_prefix(root)?.to_path_buf());
            }
        }
    }
    out.sort();
    Ok(out)
}

fn round_trips(root: &Path) -> R<Vec<(&'static str, bool)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut out = Vec::new();

    let mut imvx = true;
    for (n, dims) in [(1, 3), (8, 3), (16, 3), (4, 2), (32, 2)] {
        let g = random_grid(n, dims, 0.4, &mut rng)?;
        imvx &= load_imvx(&save_imvx(&g))? == g;
    }
    out.push(("imvx", imvx));

    let img = random_grid(32, 2, 0.5, &mut rng)?;
    out.push(("pgm", load_pgm(&img.to_pgm()?, 128)? == img));

    let field = FieldGrid::new(9, 3, (0..729).map(|_| rng.gen::<f32>()).collect())?;
    out.push(("imfg", load_imfg(&save_imfg(&field))? == field));

    let mut ck = true;
    for p in files(&root.join("runs"))? {
        if p.extension().is_some_and(|e| e == "imck") {
            let bytes = fs::read(root.join("runs").join(&p))?;
            ck &= Checkpoint::from_bytes(&bytes)?.to_bytes()? == bytes;
        }
    }
    out.push(("imck", ck));

    let text = fs::read_to_string(root.join("sample.obj"))?;
    let mesh = parse_obj(&text)?;
    let sphere = marching_cubes(&FieldGrid::from_grid(&rasterize(&ShapeSpec::sphere([0.5; 3], 0.3)?, 16)?), ISO)?;
    let again = parse_obj(&export_obj(&sphere))?;
    out.push((
        "obj",
        export_obj(&mesh) == text && again.triangles == sphere.triangles && export_obj(&again) == export_obj(&sphere),
    ));

    let manifest = fs::read_to_string(root.join("data/manifest.txt"))?;
    out.push(("manifest", Manifest::parse(&manifest)?.to_text() == manifest));

    let mut reports = true;
    for suite in ["ae", "gan", "svr"] {
        let text = fs::read_to_string(root.join(format!("eval-{suite}.tsv")))?;
        reports &= Report::parse(&text)?.to_text() == text;
    }
    out.push(("report", reports));

    let mut cfg = Config::default();
    cfg.set("ae.lr", "0.00025")?;
    cfg.set("data.resolutions", "8,16,32")?;
    out.push(("config", Config::parse(&cfg.to_text())?.to_text() == cfg.to_text()));
    Ok(out)
}

fn a9() -> R<Verdict> {
    let (x, y) = (tempfile::tempdir()?, tempfile::tempdir()?);
    small_pipeline(x.path())?;
    small_pipeline(y.path())?;
    let (fx, fy) = (files(x.path())?, files(y.path())?);
    let mut differing = Vec::new();
    if fx != fy {
        differing.push("file sets".to_string());
    }
    for p in &fx {
        if fs::read(x.path().join(p))? != fs::read(y.path().join(p)).unwrap_or_default() {
            differing.push(p.display().to_string());
        }
    }
    let trips = round_trips(x.path())?;
    let broken: Vec<&str> = trips.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    verdict(
        differing.is_empty() && broken.is_empty(),
        format!(
            "{} files byte-equal across reruns (differing: {:?}); round trips {}/{} (broken: {broken:?})",
            fx.len() - differing.len().min(fx.len()),
            differing,
            trips.len() - broken.len(),
            trips.len()
        ),
    )
}

fn report(id: &str, title: &str, v: R<Verdict>, failures: &mut usize) {
    let (status, detail) = match v {
        Ok(v) => (if v.ok { "PASS" } else { "FAIL" }, v.detail),
        Err(e) => ("FAIL", format!("error: {e}")),
    };
    if status == "FAIL" {
        *failures += 1;
    }
    println!("{id} {status} {title}: {detail}");
}

fn main() -> ExitCode {
    let mut failures = 0;
    report("A1", "gradient correctness", a1(), &mut failures);
    match a2_a3() {
        Ok((v2, v3)) => {
            report("A2", "single-shape overfit", Ok(v2), &mut failures);
            report("A3", "super-resolution", Ok(v3), &mut failures);
        }
        Err(e) => {
            let msg = e.to_string();
            report("A2", "single-shape overfit", Err(msg.clone().into()), &mut failures);
            report("A3", "super-resolution", Err(msg.into()), &mut failures);
        }
    }
    let pipeline = tempfile::tempdir().expect("temp dir");
    let cfg = config(pipeline.path()).expect("default config");
    let trained = a4(&cfg);
    let ae_ok = trained.is_ok();
    report("A4", "small-corpus autoencoder", trained, &mut failures);
    if ae_ok {
        report("A5", "latent GAN", a5(&cfg), &mut failures);
        report("A6", "single-view regression", a6(&cfg), &mut failures);
        report("A7", "interpolation", a7(&cfg, pipeline.path()), &mut failures);
    } else {
        for (id, title) in [("A5", "latent GAN"), ("A6", "single-view regression"), ("A7", "interpolation")] {
            report(id, title, Err("autoencoder training did not finish".into()), &mut failures);
        }
    }
    report("A8", "metric oracles", a8(), &mut failures);
    report("A9", "determinism and formats", a9(), &mut failures);
    println!("{} of 9 criteria passed", 9 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
