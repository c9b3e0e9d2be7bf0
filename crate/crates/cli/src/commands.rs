use crate::{Cli, Command, DatagenArgs, EvalArgs, IcpArgs, SampleArgs, TrainArgs, OUT_ENV};
use se3grasp::datagen::{build_dataset, GraspDataset};
use se3grasp::eval::{evaluate, read_samples_csv, sample_dataset, write_samples_csv, EvalReport, SamplerConfig};
use se3grasp::io::write_atomic;
use se3grasp::register::{z_only_icp, PointCloud};
use se3grasp::rng::{domain, stream_rng};
use se3grasp::train::{train, TrainingSet};
use se3grasp::{Checkpoint, ModelParams, Pose, RunConfig};
use serde_json::json;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, invalid configuration or unusable input files.
    Usage(String),
    Runtime(se3grasp::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

impl From<se3grasp::Error> for CliError {
    fn from(e: se3grasp::Error) -> Self {
        match e {
            se3grasp::Error::Config(m) => CliError::Usage(m),
            e => CliError::Runtime(e),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    hash: String,
}

impl Ctx {
    fn out_path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Writes the effective configuration next to an output.
    fn echo_config(&self, stem: &str) -> Result<()> {
        let text = self.cfg.to_toml()?;
        let header = format!("# effective configuration, hash {}\n", self.hash);
        write_atomic(&self.out_path(&format!("{stem}.config.toml")), |w| {
            w.write_all(header.as_bytes())?;
            Ok(w.write_all(text.as_bytes())?)
        })?;
        Ok(())
    }

    fn dataset_path(&self, flag: &Option<PathBuf>) -> PathBuf {
        flag.clone().or_else(|| self.cfg.dataset_path.clone()).unwrap_or_else(|| self.out_path("dataset.jsonl"))
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} not found: {}", path.display())))
    }
}

fn load_dataset(path: &Path) -> Result<GraspDataset> {
    require_file(path, "dataset")?;
    GraspDataset::load(path).map_err(|e| CliError::Usage(format!("cannot read dataset {}: {e}", path.display())))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    require_file(path, "checkpoint")?;
    Checkpoint::load(path).map_err(|e| CliError::Usage(format!("cannot read checkpoint {}: {e}", path.display())))
}

fn validated(cfg: RunConfig) -> Result<RunConfig> {
    let errs = cfg.validate();
    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(CliError::Usage(format!("invalid configuration:\n  {}", errs.join("\n  "))))
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    let mut cfg = match &cli.config {
        Some(p) => {
            require_file(p, "config file")?;
            RunConfig::load(p)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"));
    cfg.output_dir = Some(out.clone());
    match cli.command {
        Command::Datagen(a) => datagen(cfg, out, a),
        Command::Train(a) => cmd_train(cfg, out, a),
        Command::Sample(a) => sample(cfg, out, a),
        Command::Eval(a) => eval(cfg, out, a),
        Command::Icp(a) => icp(cfg, out, a),
    }
}

fn ctx(cfg: RunConfig, out: PathBuf) -> Result<Ctx> {
    let cfg = validated(cfg)?;
    let hash = cfg.hash();
    Ok(Ctx { cfg, out, hash })
}

fn datagen(mut cfg: RunConfig, out: PathBuf, a: DatagenArgs) -> Result<()> {
    if let Some(n) = a.scenes {
        cfg.dataset.num_scenes = n;
    }
    if let Some(n) = a.grasps_per_scene {
        cfg.dataset.grasps_per_scene = n;
        cfg.dataset.min_grasps = cfg.dataset.min_grasps.min(n);
    }
    let c = ctx(cfg, out)?;
    let path = a.output.unwrap_or_else(|| c.out_path("dataset.jsonl"));
    let mut ds = build_dataset(&c.cfg.dataset, c.cfg.seed)?;
    ds.header.config_hash = Some(c.hash.clone());
    ds.save(&path)?;
    c.echo_config("datagen")?;
    let grasps: usize = ds.scenes.iter().map(|s| s.grasps.len()).sum();
    println!(
        "wrote {} ({} scenes, {} dropped, {grasps} grasps, region acceptance {:.3}, config {})",
        path.display(),
        ds.scenes.len(),
        ds.header.dropped,
        ds.header.region_acceptance_rate(),
        c.hash
    );
    Ok(())
}

fn cmd_train(mut cfg: RunConfig, out: PathBuf, a: TrainArgs) -> Result<()> {
    if let Some(m) = a.mode {
        cfg.mode = m;
    }
    if let Some(n) = a.steps {
        cfg.train.steps = n;
    }
    if let Some(n) = a.batch {
        cfg.train.batch_size = n;
    }
    if let Some(lr) = a.lr {
        cfg.train.optim.lr = lr;
    }
    let c = ctx(cfg, out)?;
    let ds = load_dataset(&c.dataset_path(&a.dataset))?;
    let mode = c.cfg.mode;
    let set = TrainingSet::from_dataset(&ds)?;
    let mut params = ModelParams::new(c.cfg.net.clone(), &mut stream_rng(c.cfg.seed, domain::INIT, 0))?;
    let report = train(&mut params, &set, mode, &c.cfg.schedule, &c.cfg.train, c.cfg.seed)?;
    let ckpt = Checkpoint {
        params,
        schedule: c.cfg.schedule,
        mode,
        meta: json!({ "seed": c.cfg.seed, "config_hash": c.hash, "steps": c.cfg.train.steps, "dataset_seed": ds.header.seed }),
    };
    let path = a.output.unwrap_or_else(|| c.out_path(&format!("{}.ckpt", mode.as_str())));
    ckpt.save(&path)?;
    let log = json!({ "seed": c.cfg.seed, "config_hash": c.hash, "report": report });
    write_json(&c.out_path(&format!("train_{}.json", mode.as_str())), &log)?;
    c.echo_config(&format!("train_{}", mode.as_str()))?;
    let last = report.history.last().expect("at least one step");
    println!(
        "wrote {} ({} steps, final loss {:.4}: gen {:.4} cls {:.4} cont {:.4}, config {})",
        path.display(),
        report.steps,
        last.total,
        last.gen,
        last.cls,
        last.cont,
        c.hash
    );
    Ok(())
}

fn sample(mut cfg: RunConfig, out: PathBuf, a: SampleArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    cfg.mode = ckpt.mode;
    cfg.schedule = ckpt.schedule;
    cfg.net = ckpt.params.config.clone();
    if a.steps.is_some() {
        cfg.sampler.steps = a.steps;
    }
    if let Some(s) = a.solver {
        cfg.sampler.solver = s;
    }
    if let Some(w) = a.cfg_weight {
        cfg.sampler.cfg_weight = w;
    }
    if let Some(n) = a.samples {
        cfg.eval.samples_per_scene = n;
    }
    if a.lambda_gd.is_some() || a.theta_thr.is_some() || a.e_app.is_some() {
        let mut g = cfg.guidance.unwrap_or_default();
        if let Some(l) = a.lambda_gd {
            g.lambda_gd = l;
        }
        if let Some(t) = a.theta_thr {
            g.theta_thr = t;
        }
        if let Some(e) = a.e_app {
            g.e_app = e;
        }
        cfg.guidance = Some(g);
    }
    let c = ctx(cfg, out)?;
    let ds = load_dataset(&c.dataset_path(&a.dataset))?;
    let mode = c.cfg.mode;
    let sampler = c.cfg.sampler_config(mode);
    let n = c.cfg.eval.samples_per_scene;
    let samples = sample_dataset(&ckpt.params, &ds, &sampler, n, c.cfg.seed)?;
    let path = a.output.unwrap_or_else(|| c.out_path(&format!("samples_{}.csv", mode.as_str())));
    let (steps, detail) = match sampler {
        SamplerConfig::Score(s) => (s.steps, format!("rule={:?}", s.rule).to_lowercase()),
        SamplerConfig::Flow(s) => (s.steps, format!("solver={:?}", s.solver).to_lowercase()),
    };
    let meta = [
        ("mode", mode.as_str().to_string()),
        ("seed", c.cfg.seed.to_string()),
        ("steps", steps.to_string()),
        ("cfg_weight", c.cfg.sampler.cfg_weight.to_string()),
        ("lambda_gd", c.cfg.guidance.map_or("none".into(), |g| g.lambda_gd.to_string())),
        ("config_hash", c.hash.clone()),
    ];
    let ids: Vec<usize> = ds.scenes.iter().map(|s| s.scene_id).collect();
    write_atomic(&path, |w| {
        write_samples_csv(w, &meta, &ids, &samples)
    })?;
    c.echo_config(&format!("samples_{}", mode.as_str()))?;
    println!(
        "wrote {} ({} scenes x {n} samples, {steps} steps, {detail}, config {})",
        path.display(),
        ids.len(),
        c.hash
    );
    Ok(())
}

/// Lines the sample file up with the dataset's scene order.
fn align_samples(ds: &GraspDataset, path: &Path) -> Result<Vec<Vec<Pose>>> {
    require_file(path, "samples file")?;
    let file = std::fs::File::open(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let rows = read_samples_csv(std::io::BufReader::new(file))
        .map_err(|e| CliError::Usage(format!("cannot read samples {}: {e}", path.display())))?;
    let mut by_id: std::collections::HashMap<usize, Vec<Pose>> = rows.into_iter().collect();
    ds.scenes
        .iter()
        .map(|s| {
            by_id
                .remove(&s.scene_id)
                .ok_or_else(|| CliError::Usage(format!("{} has no samples for scene {}", path.display(), s.scene_id)))
        })
        .collect()
}

fn eval(cfg: RunConfig, out: PathBuf, a: EvalArgs) -> Result<()> {
    if a.checkpoint.len() != a.samples.len() {
        return Err(CliError::Usage(format!(
            "{} --checkpoint values but {} --samples values",
            a.checkpoint.len(),
            a.samples.len()
        )));
    }
    if !a.label.is_empty() && a.label.len() != a.checkpoint.len() {
        return Err(CliError::Usage("give one --label per run or none".into()));
    }
    let c = ctx(cfg, out)?;
    let ds = load_dataset(&c.dataset_path(&a.dataset))?;
    let mut inputs = Vec::new();
    for (k, (cp, sp)) in a.checkpoint.iter().zip(&a.samples).enumerate() {
        let ckpt = load_checkpoint(cp)?;
        let samples = align_samples(&ds, sp)?;
        let label = a.label.get(k).cloned().unwrap_or_else(|| ckpt.mode.as_str().to_string());
        inputs.push((label, ckpt, samples));
    }
    let mut labels: Vec<String> = inputs.iter().map(|i| i.0.clone()).collect();
    for k in 0..labels.len() {
        if labels[..k].contains(&labels[k]) {
            labels[k] = format!("{}_{}", labels[k], k + 1);
        }
    }
    let reports: Vec<EvalReport> = inputs
        .iter()
        .zip(&labels)
        .map(|((_, ckpt, samples), label)| evaluate(label, &ckpt.params, &ds, samples, &c.cfg.eval, c.cfg.seed))
        .collect::<se3grasp::Result<_>>()?;

    write_atomic(&c.out_path("eval_scenes.csv"), |w| {
        writeln!(w, "# seed={} config_hash={}", c.cfg.seed, c.hash)?;
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["run", "scene_id", "class", "emd", "ta", "ca"])?;
        for r in &reports {
            for s in &r.scenes {
                let ta = if s.predicted_class == s.class_label { 100.0 } else { 0.0 };
                wr.write_record([r.label.clone(), s.scene_id.to_string(), s.class_name.clone(), format!("{:?}", s.emd), format!("{ta:?}"), format!("{:?}", s.contact_acc)])?;
            }
        }
        wr.flush()?;
        Ok(())
    })?;
    let runs: Vec<serde_json::Value> = reports
        .iter()
        .zip(a.checkpoint.iter().zip(&a.samples))
        .map(|(r, (cp, sp))| {
            json!({
                "label": r.label,
                "checkpoint": cp.display().to_string(),
                "samples": sp.display().to_string(),
                "overall": r.overall,
                "per_class": r.per_class,
            })
        })
        .collect();
    let summary = json!({
        "seed": c.cfg.seed,
        "config_hash": c.hash,
        "lambda_rot": c.cfg.eval.lambda_rot,
        "emd_std_over": "scenes",
        "runs": runs,
    });
    write_json(&c.out_path("eval.json"), &summary)?;
    let text = crate::tables::render(&reports);
    write_atomic(&c.out_path("eval_tables.txt"), |w| Ok(w.write_all(text.as_bytes())?))?;
    c.echo_config("eval")?;
    print!("{text}");
    Ok(())
}

fn icp(mut cfg: RunConfig, out: PathBuf, a: IcpArgs) -> Result<()> {
    if let Some(m) = a.max_offset {
        cfg.icp.max_offset = m;
    }
    let c = ctx(cfg, out)?;
    let ray = a.ray.normalized().ok_or_else(|| CliError::Usage("--ray must be non-zero".into()))?;
    let load = |p: &Path, what: &str| -> Result<PointCloud> {
        require_file(p, what)?;
        let f = std::fs::File::open(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
        PointCloud::from_csv(std::io::BufReader::new(f)).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", p.display())))
    };
    let src = load(&a.source, "source cloud")?;
    let dst = load(&a.target, "target cloud")?;
    let r = z_only_icp(&src, &dst, ray, &c.cfg.icp)?;
    let v = json!({
        "offset": r.offset,
        "rms_before": r.rms_before,
        "rms_after": r.rms_after,
        "flagged": r.flagged,
        "iterations": r.iterations,
        "converged": r.converged,
        "seed": c.cfg.seed,
        "config_hash": c.hash,
    });
    write_json(&c.out_path("icp.json"), &v)?;
    c.echo_config("icp")?;
    println!("{}", serde_json::to_string_pretty(&v).expect("json"));
    Ok(())
}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, v)?;
        Ok(w.write_all(b"\n")?)
    })?;
    Ok(())
}
