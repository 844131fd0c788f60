use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use nalgebra::Vector3;
use serde::Deserialize;

use lesplat::bench::{self, BenchConfig};
use lesplat::io::{self, Grid};
use lesplat::metrics::{evaluate, ClassEval, ClassView};
use lesplat::quant::build_codebook;
use lesplat::query::{generate_query, LlmClientConfig, PromptContext};
use lesplat::relevancy::{feature_map, score_query, segment, EmbeddingTable, Provenance, QuerySpec, RelevancyMap};
use lesplat::render::{render_color, render_semantic_distribution};
use lesplat::scene::{make_synthetic_scene, Camera, Scene, SyntheticSceneSpec};
use lesplat::train::{loss_trace_csv, train_semantics, Optimizer, TrainConfig, TrainView};
use lesplat::{DecoderMLP, Execution};

use crate::{
    BenchArgs, Command, EvalArgs, OptimizerArg, QuantizeArgs, QueryArgs, RenderArgs, SegmentArgs, SynthArgs, TrainArgs,
    UsageError,
};

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Quantize(a) => quantize(a),
        Command::Train(a) => train(a),
        Command::Render(a) => render(a),
        Command::Query(a) => query(a),
        Command::Segment(a) => segment_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench_cmd(a),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn read_scene(path: &Path) -> Result<Scene> {
    Scene::from_json(&read_text(path)?).with_context(|| format!("loading scene {}", path.display()))
}

fn read_camera(path: &Path) -> Result<Camera> {
    Camera::from_json(&read_text(path)?).with_context(|| format!("loading camera {}", path.display()))
}

fn read_grid(path: &Path) -> Result<Grid> {
    io::read_legf(&read_bytes(path)?).with_context(|| format!("loading {}", path.display()))
}

fn read_table(path: &Path) -> Result<(EmbeddingTable, Option<lesplat::quant::Codebook>)> {
    io::read_embedding_table(&read_text(path)?).with_context(|| format!("loading {}", path.display()))
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec: SyntheticSceneSpec = read_json(&a.spec)?;
    let (scene, labels) = make_synthetic_scene(&spec)?;
    let n = spec.classes.len() as f64;
    let centroid = spec
        .classes
        .iter()
        .fold(Vector3::zeros(), |acc, c| acc + Vector3::from(c.center) / n);
    let focal = a.focal.unwrap_or(1.5 * a.width as f64);

    write(&a.out_dir.join("scene.json"), scene.to_json())?;
    write(&a.out_dir.join("labels.json"), serde_json::to_string(&labels)?)?;
    for v in 0..a.views {
        let angle = v as f64 / a.views as f64 * std::f64::consts::TAU;
        let eye = centroid + Vector3::new(0.35 * angle.cos(), 0.25 * angle.sin(), -a.distance);
        let cam = Camera::look_at(eye, centroid, Vector3::new(0.0, -1.0, 0.0), focal, a.width, a.height)?;
        let dominant = bench::dominant_labels(&scene, &labels, spec.classes.len(), &cam, Execution::default());
        write(&a.out_dir.join(format!("camera_{v}.json")), cam.to_json())?;
        write(
            &a.out_dir.join(format!("gt_{v}.legf")),
            io::write_legf(&io::index_map_to_grid(a.width, a.height, &dominant))?,
        )?;
        for c in 0..spec.classes.len() {
            let mask = lesplat::relevancy::SegMask {
                width: a.width,
                height: a.height,
                pixels: dominant.iter().map(|d| *d == Some(c)).collect(),
            };
            write(&a.out_dir.join(format!("gt_{v}_class{c}.pgm")), io::write_mask_pgm(&mask))?;
        }
    }
    info!("wrote {} Gaussians and {} views to {}", scene.len(), a.views, a.out_dir.display());
    Ok(())
}

fn quantize(a: QuantizeArgs) -> Result<()> {
    let table = match &a.table {
        Some(p) => Some(read_table(p)?.0),
        None => None,
    };
    let features: Vec<Vec<f64>> = if a.features.is_empty() {
        let t = table
            .as_ref()
            .ok_or_else(|| UsageError("quantize needs --features or --table".into()))?;
        t.iter().map(|(_, v)| v.to_vec()).collect()
    } else {
        let mut out = Vec::new();
        for p in &a.features {
            let g = read_grid(p)?;
            out.extend(
                g.data
                    .chunks_exact(g.depth)
                    .map(|c| c.iter().map(|&v| f64::from(v)).collect::<Vec<f64>>())
                    .filter(|v| v.iter().any(|x| *x != 0.0)),
            );
        }
        out
    };
    let cb = build_codebook(&features, a.k, a.seed)?;
    let table = table.unwrap_or_else(|| EmbeddingTable::new(cb.dim(), Provenance::Exported));
    if table.dim() != cb.dim() {
        bail!("table dimension {} differs from feature dimension {}", table.dim(), cb.dim());
    }
    info!("codebook K={} over {} features, error {:.6}", cb.k(), features.len(), cb.quantization_error(&features)?);
    write(&a.out, io::write_embedding_table(&table, Some(&cb)))
}

fn train(a: TrainArgs) -> Result<()> {
    if a.cameras.len() != a.gts.len() {
        return Err(UsageError(format!("{} --camera but {} --gt", a.cameras.len(), a.gts.len())).into());
    }
    let scene = read_scene(&a.scene)?;
    let remap = match &a.table {
        Some(p) => {
            let (table, cb) = read_table(p)?;
            let cb = cb.with_context(|| format!("{} has no codebook; run quantize first", p.display()))?;
            let map = a
                .label_phrases
                .iter()
                .map(|ph| cb.assign(table.lookup(ph)?))
                .collect::<lesplat::Result<Vec<usize>>>()?;
            Some((cb.k(), map))
        }
        None => None,
    };
    let k = match (a.codebook_size, &remap) {
        (Some(k), _) => k,
        (None, Some((k, _))) => *k,
        (None, None) => return Err(UsageError("train needs --codebook-size or --table".into()).into()),
    };
    let mut views = Vec::new();
    for (c, g) in a.cameras.iter().zip(&a.gts) {
        let camera = read_camera(c)?;
        let grid = read_grid(g)?;
        if (grid.width, grid.height) != (camera.width, camera.height) {
            bail!("{} is {}x{} but the camera is {}x{}", g.display(), grid.width, grid.height, camera.width, camera.height);
        }
        let mut targets = io::grid_to_index_map(&grid)?;
        if let Some((_, map)) = &remap {
            for t in targets.iter_mut().flatten() {
                *t = *map
                    .get(*t)
                    .with_context(|| format!("{}: label {t} has no --label-phrase", g.display()))?;
            }
        }
        views.push(TrainView { camera, targets });
    }
    let (optimizer, default_lr) = match a.optimizer {
        OptimizerArg::Gd => (Optimizer::GradientDescent, TrainConfig::default().learning_rate),
        OptimizerArg::Adam => (Optimizer::Adam, bench::BENCH_LEARNING_RATE),
    };
    let cfg = TrainConfig {
        lambda_s: a.lambda_s,
        lambda_ce: a.lambda_ce,
        lambda_u: a.lambda_u,
        lambda_smo: a.lambda_smo,
        w_s: a.w_s,
        learning_rate: a.lr.unwrap_or(default_lr),
        epochs: a.epochs,
        seed: a.seed,
        optimizer,
        feature_dim: scene.feature_dim().unwrap_or(lesplat::scene::DEFAULT_FEATURE_DIM),
        ..TrainConfig::default()
    };
    let out = train_semantics(&scene, &views, k, &cfg)?;
    write(&a.out_dir.join("scene.json"), out.scene.to_json())?;
    write(&a.out_dir.join("decoder.json"), serde_json::to_string(out.decoder())?)?;
    write(&a.out_dir.join("smoother.json"), serde_json::to_string(out.smoother())?)?;
    write(&a.out_dir.join("loss.csv"), loss_trace_csv(&out.trace))?;
    if let Some(last) = out.trace.last() {
        info!("final loss {:.6}", last.total);
    }
    Ok(())
}

fn render(a: RenderArgs) -> Result<()> {
    let img = render_color(&read_scene(&a.scene)?, &read_camera(&a.camera)?)?;
    write(&a.out, io::write_ppm(&img))
}

fn query(a: QueryArgs) -> Result<()> {
    let ctx = if let Some(o) = &a.object {
        PromptContext::object(o)
    } else if let Some(road) = &a.road_type {
        PromptContext::attention(road, a.weather.as_deref().unwrap_or(""), a.time_of_day.as_deref().unwrap_or(""))
    } else if let Some(p) = &a.context {
        read_json(p)?
    } else {
        return Err(UsageError("query needs --object, --road-type/--weather/--time-of-day or --context".into()).into());
    };
    let mut cfg = LlmClientConfig {
        stub_fixtures: a.stub.clone(),
        ..LlmClientConfig::default()
    };
    if let Some(e) = a.endpoint {
        cfg.endpoint = e;
    }
    if let Some(m) = a.model {
        cfg.model = m;
    }
    if let Some(r) = a.retries {
        cfg.retries = r;
    }
    if let Some(b) = a.backoff_ms {
        cfg.backoff_base_ms = b;
    }
    let (spec, exchange) = generate_query(&cfg, &ctx)?;
    if let Some(p) = &a.log {
        write(p, serde_json::to_string_pretty(&exchange)?)?;
    }
    let json = serde_json::to_string_pretty(&spec)? + "\n";
    match &a.out {
        Some(p) => write(p, json),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

fn segment_cmd(a: SegmentArgs) -> Result<()> {
    let scene = read_scene(&a.scene)?;
    let decoder: DecoderMLP = read_json(&a.decoder)?;
    let cam = read_camera(&a.camera)?;
    let (table, codebook) = read_table(&a.table)?;
    let codebook = codebook.with_context(|| format!("{} has no codebook; run quantize first", a.table.display()))?;
    let spec: QuerySpec = read_json(&a.query)?;
    spec.validate()?;

    let m = render_semantic_distribution(&scene, &cam, &decoder)?;
    let f = feature_map(&m, &codebook)?;
    let scores = score_query(&f, &spec, a.mode.into(), &table, Execution::default())?;
    let mask = segment(&scores, a.threshold)?;
    write(&a.out_dir.join("relevancy.legf"), io::write_legf(&Grid::from(&scores))?)?;
    write(&a.out_dir.join("relevancy.pgm"), io::relevancy_preview(&scores))?;
    write(&a.out_dir.join("mask.pgm"), io::write_mask_pgm(&mask))?;
    info!("{} of {} pixels above {}", mask.count(), mask.pixels.len(), a.threshold);
    Ok(())
}

#[derive(Deserialize)]
struct EvalManifest {
    classes: Vec<EvalClass>,
}

#[derive(Deserialize)]
struct EvalClass {
    name: String,
    views: Vec<EvalView>,
}

#[derive(Deserialize)]
struct EvalView {
    pred: PathBuf,
    scores: PathBuf,
    gt: PathBuf,
}

fn scores_from_grid(g: &Grid, path: &Path) -> Result<RelevancyMap> {
    if g.depth != 1 {
        bail!("{}: score grid needs depth 1, got {}", path.display(), g.depth);
    }
    Ok(RelevancyMap {
        width: g.width,
        height: g.height,
        scores: g.data.iter().map(|&v| f64::from(v)).collect(),
        no_evidence: vec![false; g.data.len()],
    })
}

fn eval(a: EvalArgs) -> Result<()> {
    let manifest: EvalManifest = read_json(&a.manifest)?;
    let base = a.manifest.parent().unwrap_or(Path::new("."));
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    let mut classes = Vec::new();
    for c in manifest.classes {
        let mut views = Vec::new();
        for v in c.views {
            let (pred, scores, gt) = (resolve(&v.pred), resolve(&v.scores), resolve(&v.gt));
            views.push(ClassView {
                pred: io::read_mask_pgm(&read_bytes(&pred)?).with_context(|| format!("loading {}", pred.display()))?,
                scores: scores_from_grid(&read_grid(&scores)?, &scores)?,
                gt: io::read_mask_pgm(&read_bytes(&gt)?).with_context(|| format!("loading {}", gt.display()))?,
            });
        }
        classes.push(ClassEval { name: c.name, views });
    }
    let json = evaluate(&classes)?.to_json() + "\n";
    match &a.out {
        Some(p) => write(p, json),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

fn bench_cmd(a: BenchArgs) -> Result<()> {
    let mut cfg = BenchConfig::with_seed(a.seed);
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    let report = bench::run_benchmark(&cfg)?;
    let json = report.to_json() + "\n";
    if let Some(p) = &a.out {
        write(p, &json)?;
    }
    if a.json {
        print!("{json}");
    } else {
        println!("seed {}: per-Gaussian label accuracy {:.4}", report.seed, report.label_accuracy);
        print!("{}", report.table());
    }
    Ok(())
}
