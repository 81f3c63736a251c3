use std::io::Write;
use std::path::{Path, PathBuf};

use voxmotion_core::denoiser::checkpoint;
use voxmotion_core::denoiser::train::{StepReport, Trainer, TrainingItem};
use voxmotion_core::denoiser::{pool_condition, Denoiser, TaskCondition};
use voxmotion_core::diffusion::{self, FieldShape};
use voxmotion_core::geometry::{sample_body_surface, EntityClass, EntitySnapshot, MotionSequence, SkeletonTopology};
use voxmotion_core::gradcheck;
use voxmotion_core::heatmap::{decode_expectation, encode_motion, normalize, FieldMode};
use voxmotion_core::io::{self, Sidecar};
use voxmotion_core::metrics::{self, MetricReport};
use voxmotion_core::synthdata::{generate, generate_mixed, TaskId, ToySample};
use voxmotion_core::uiv::build_uiv;
use voxmotion_core::{Error, ErrorKind};

use crate::config::RunConfig;
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

/// One gen-data sample on disk, identified by its file stem.
struct Stored {
    stem: String,
    sidecar: Sidecar,
    dir: PathBuf,
}

impl Stored {
    fn path(&self, ext: &str) -> PathBuf {
        self.dir.join(format!("{}.{ext}", self.stem))
    }

    fn condition(&self) -> Result<TaskCondition> {
        Ok(TaskCondition { task: self.sidecar.task_id, uiv: io::read_volume(&self.path("uiv"))?, goal: self.sidecar.goal })
    }

    fn motion(&self) -> Result<MotionSequence> {
        Ok(io::read_motion(&self.path("uim"))?.0)
    }
}

fn stem_of(s: &ToySample) -> String {
    format!("{}_{:020}", s.task.generator_name(), s.seed)
}

/// Every sidecar in `dir`, sorted by name.
fn scan(dir: &Path) -> Result<Vec<Stored>> {
    let mut stems: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let p = e.path();
            (p.extension()? == "json").then(|| p.file_stem()?.to_str().map(String::from))?
        })
        .collect();
    stems.sort();
    if stems.is_empty() {
        return Err(CliError::Usage(format!("no samples in {}", dir.display())));
    }
    stems
        .into_iter()
        .map(|stem| {
            let sidecar = io::read_sidecar(&dir.join(format!("{stem}.json")))?;
            Ok(Stored { stem, sidecar, dir: dir.to_path_buf() })
        })
        .collect()
}

pub fn voxelize(cfg: &RunConfig, motion: &Path, sidecar: Option<&Path>, out: &Path) -> Result<()> {
    let (m, topo) = io::read_motion(motion)?;
    let object = match sidecar {
        Some(p) => {
            let s = io::read_sidecar(p)?;
            (!s.object_points.is_empty()).then(|| EntitySnapshot::new(s.object_points, EntityClass::Object)).transpose()?
        }
        None => None,
    };
    let mut frames = Vec::with_capacity(m.frames());
    for t in 0..m.frames() {
        let mut ents = vec![sample_body_surface(m.frame(t), &topo, cfg.samples_per_bone, cfg.seed.wrapping_add(t as u64))?];
        ents.extend(object.clone());
        frames.push(ents);
    }
    let vol = build_uiv(&frames, &cfg.spec()?)?;
    io::write_volume(out, &vol)?;
    println!("{} frames, {} occupied voxel-frames", vol.frames(), vol.occupied_count());
    Ok(())
}

pub fn encode(cfg: &RunConfig, motion: &Path, out: &Path) -> Result<()> {
    let (m, _) = io::read_motion(motion)?;
    let enc = encode_motion(&m, &cfg.spec()?, cfg.sigma)?;
    if !enc.out_of_grid.is_empty() {
        eprintln!("warning: {} joint-frames lie outside the grid and were encoded as uniform", enc.out_of_grid.len());
    }
    io::write_field(out, &enc.field)?;
    Ok(())
}

pub fn decode(cfg: &RunConfig, field: &Path, like: Option<&Path>, out: &Path) -> Result<()> {
    let f = io::read_field(field)?;
    let f = match f.mode() {
        FieldMode::Target => f,
        FieldMode::Raw => normalize(&f),
    };
    let m = decode_expectation(&f, cfg.fps)?;
    let topo = match like {
        Some(p) => io::read_motion(p)?.1,
        None => SkeletonTopology::toy(),
    };
    io::write_motion(out, &m, &topo)?;
    Ok(())
}

pub fn gen_data(cfg: &RunConfig, task: &str, count: usize, out: &Path) -> Result<()> {
    let ctx = cfg.gen_context()?;
    let samples = if task == "mixed" {
        generate_mixed(count, cfg.seed, &ctx)?
    } else {
        let id = TaskId::from_generator_name(task)
            .ok_or_else(|| CliError::Usage(format!("unknown task {task:?} (reach, goalwalk, approach, compound, mixed)")))?;
        (0..count as u64).map(|i| generate(id, cfg.seed.wrapping_mul(1_000_003).wrapping_add(i), &ctx)).collect::<voxmotion_core::Result<_>>()?
    };
    std::fs::create_dir_all(out)?;
    for s in &samples {
        s.validate(&ctx.spec, &ctx.topo)?;
        let stem = stem_of(s);
        io::write_volume(&out.join(format!("{stem}.uiv")), &build_uiv(&s.entities, &ctx.spec)?)?;
        io::write_motion(&out.join(format!("{stem}.uim")), &s.motion, &ctx.topo)?;
        io::write_sidecar(&out.join(format!("{stem}.json")), &Sidecar::from_sample(s))?;
    }
    println!("wrote {} samples to {}", samples.len(), out.display());
    Ok(())
}

fn training_items(cfg: &RunConfig, data: Option<&Path>, model: &Denoiser) -> Result<Vec<TrainingItem>> {
    match data {
        Some(dir) => scan(dir)?
            .iter()
            .map(|s| {
                let cond = pool_condition(&s.condition()?, model.config())?;
                Ok(TrainingItem { gt: s.motion()?, cond })
            })
            .collect(),
        None => {
            let samples = generate_mixed(cfg.data_count, cfg.data_seed, &cfg.gen_context()?)?;
            Ok(samples.iter().map(|s| TrainingItem::from_sample(s, model)).collect::<voxmotion_core::Result<_>>()?)
        }
    }
}

pub fn train(cfg: &RunConfig, data: Option<&Path>, out: &Path, log: Option<&Path>) -> Result<()> {
    let model = Denoiser::init(cfg.denoiser()?, cfg.seed)?;
    let items = training_items(cfg, data, &model)?;
    let mut log_file = log.map(std::fs::File::create).transpose()?;
    let mut trainer = Trainer::new(model, cfg.schedule()?, SkeletonTopology::toy(), cfg.train()?)?;
    let mut window = Vec::new();
    let mut io_err = None;
    let reports = trainer.run(&items, |step, r| {
        if let Some(f) = log_file.as_mut() {
            let line = serde_json::json!({ "step": step, "report": r });
            if let Err(e) = writeln!(f, "{line}") {
                io_err.get_or_insert(e);
            }
        }
        window.push(*r);
        if step % cfg.log_every == 0 || step == cfg.steps {
            let n = window.len() as f64;
            let mean = |f: fn(&StepReport) -> f64| window.iter().map(f).sum::<f64>() / n;
            println!(
                "step {step:>7}  total {:.4}  rec {:.5}  pos {:.4}  vel {:.4}  sk {:.4}  ori {:.4}  lr {:.2e}",
                mean(|r| r.total),
                mean(|r| r.rec),
                mean(|r| r.pos),
                mean(|r| r.vel),
                mean(|r| r.sk),
                mean(|r| r.ori),
                r.lr
            );
            window.clear();
        }
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    checkpoint::save(out, &trainer.model, Some(&trainer.adam))?;
    if reports.len() >= 200 {
        let avg = |rs: &[StepReport]| rs.iter().map(|r| r.total).sum::<f64>() / rs.len() as f64;
        let (first, last) = (avg(&reports[..100]), avg(&reports[reports.len() - 100..]));
        println!("first-100 mean {first:.4}, last-100 mean {last:.4}, ratio {:.3}", last / first);
    }
    Ok(())
}

pub fn sample(cfg: &RunConfig, ckpt: &Path, data: &Path, out: &Path, fields: bool) -> Result<()> {
    let model = checkpoint::load(ckpt)?.model;
    let mc = model.config().clone();
    let sched = cfg.schedule()?;
    let shape = FieldShape { spec: mc.spec, frames: mc.frames, joints: mc.joints };
    let topo = SkeletonTopology::toy();
    std::fs::create_dir_all(out)?;
    let stored = scan(data)?;
    for s in &stored {
        let cond = pool_condition(&s.condition()?, &mc)?;
        let seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(s.sidecar.seed);
        let raw = diffusion::sample(&model, &cond, &sched, shape, cfg.ddim_steps, seed)?;
        let m = decode_expectation(&normalize(&raw), cfg.fps)?;
        if let Some(p) = m.positions().iter().find(|p| !mc.spec.contains(**p, 0.0)) {
            return Err(CliError::Failed(ErrorKind::Numerical, format!("{}: decoded joint {p:?} outside the grid", s.stem)));
        }
        io::write_motion(&out.join(format!("{}.uim", s.stem)), &m, &topo)?;
        if fields {
            io::write_field(&out.join(format!("{}.uhf", s.stem)), &raw)?;
        }
    }
    println!("sampled {} motions into {}", stored.len(), out.display());
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn eval(cfg: &RunConfig, pred: &Path, gt: &Path, out: Option<&Path>) -> Result<()> {
    let topo = SkeletonTopology::toy();
    let (mut mp, mut tr, mut fs, mut goal) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let (mut pred_labels, mut gt_labels) = (Vec::new(), Vec::new());
    let (mut preds, mut gts) = (Vec::new(), Vec::new());
    for s in scan(gt)? {
        let p_path = pred.join(format!("{}.uim", s.stem));
        if !p_path.exists() {
            return Err(CliError::Usage(format!("no prediction {}", p_path.display())));
        }
        let p = io::read_motion(&p_path)?.0;
        let g = s.motion()?;
        mp.push(metrics::mpjpe(&p, &g)?);
        tr.push(metrics::t_root(&p, &g, &topo)?);
        fs.push(metrics::foot_sliding(&p, &topo, 0.0, cfg.foot_height));
        if let Some(goal_pt) = s.sidecar.goal {
            goal.push(metrics::goal_distance(&p, goal_pt, &topo));
        }
        if !s.sidecar.object_points.is_empty() {
            pred_labels.extend(metrics::hand_contacts(&p, &topo, &s.sidecar.object_points, cfg.contact_threshold));
            gt_labels.extend(s.sidecar.contacts()?);
        }
        preds.push(p);
        gts.push(g);
    }
    let contact = if pred_labels.is_empty() {
        metrics::ContactScores { prec: 1.0, rec: 1.0, acc: 1.0, f1: 1.0 }
    } else {
        metrics::contact_scores(&pred_labels, &gt_labels)?
    };
    let diversity = (preds.len() >= 2).then(|| metrics::diversity(&preds, &topo, cfg.seed)).transpose()?;
    let ffd = if preds.len() > metrics::FFD_DIM {
        let a = metrics::ffd_features(&preds, &topo, cfg.seed)?;
        let b = metrics::ffd_features(&gts, &topo, cfg.seed)?;
        Some(metrics::frechet_feature_distance(&a, &b)?)
    } else {
        None
    };
    let report = MetricReport {
        mpjpe_cm: mean(&mp),
        troot_cm: mean(&tr),
        fs: mean(&fs),
        c_prec: contact.prec,
        c_rec: contact.rec,
        c_acc: contact.acc,
        c_f1: contact.f1,
        goal_dist_cm: (!goal.is_empty()).then(|| mean(&goal)),
        diversity,
        ffd,
    };
    if let Some(path) = out {
        let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Format { format: "report", reason: e.to_string() })?;
        std::fs::write(path, text)?;
    }
    print!("{}", report.to_table());
    Ok(())
}

pub fn gradcheck(cfg: &RunConfig) -> Result<()> {
    let checks = gradcheck::run_suite(cfg.seed)?;
    for c in &checks {
        let verdict = if c.passed() { "ok" } else { "FAIL" };
        println!("{:<28}{:>12.3e}{:>10.0e}  {verdict}", c.name, c.rel_err, c.tol);
    }
    let failed = checks.iter().filter(|c| !c.passed()).count();
    if failed > 0 {
        return Err(CliError::Failed(ErrorKind::Numerical, format!("{failed} gradient checks failed")));
    }
    Ok(())
}

pub fn export_ply(uiv: Option<&Path>, motion: Option<&Path>, out: &Path) -> Result<()> {
    if uiv.is_none() && motion.is_none() {
        return Err(CliError::Usage("export-ply needs --uiv and/or --motion".into()));
    }
    let vol = uiv.map(io::read_volume).transpose()?;
    let m = motion.map(io::read_motion).transpose()?.map(|(m, _)| m);
    io::write_ply(out, vol.as_ref(), m.as_ref())?;
    Ok(())
}
