use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use super::config::RunConfig;
use super::plot::render_svg;
use super::report::{read_sweep_csv, write_episodes_csv, write_report_csv, EvalRow, ReportMeta};
use crate::adversary::{csv_err, sweep_epsilon, write_sweep_csv, SweepRow};
use crate::certify::{acr_curve, certify_state, collect_margins, read_margins_csv, write_acr_csv, write_certificates_csv};
use crate::distill::distill_train_with;
use crate::envs::ObsNormalizer;
use crate::error::{Error, Result};
use crate::lnn::SortNetPolicy;
use crate::numerics::Checkpoint;
use crate::rng::derive_seed;
use crate::teacher::{build_dataset, scripted_cartpole, train_teacher_with, ExpertDataset, Teacher, TeacherSource};

/// File layout of a run directory.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub dir: PathBuf,
}

impl Artifacts {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }
    fn at(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
    pub fn config(&self) -> PathBuf {
        self.at("config.json")
    }
    pub fn meta(&self) -> PathBuf {
        self.at("report_meta.json")
    }
    pub fn teacher(&self) -> PathBuf {
        self.at("teacher.ckpt")
    }
    pub fn teacher_log(&self) -> PathBuf {
        self.at("teacher_log.csv")
    }
    pub fn dataset(&self) -> PathBuf {
        self.at("dataset.srtd")
    }
    pub fn student(&self) -> PathBuf {
        self.at("student.ckpt")
    }
    pub fn distill_log(&self) -> PathBuf {
        self.at("distill_log.csv")
    }
    pub fn checkpoints(&self) -> PathBuf {
        self.at("checkpoints")
    }
    pub fn sweep(&self, method: &str) -> PathBuf {
        self.at(&format!("eval_{method}.csv"))
    }
    pub fn episodes(&self, method: &str) -> PathBuf {
        self.at(&format!("episodes_{method}.csv"))
    }
    pub fn certificates(&self) -> PathBuf {
        self.at("certificates.csv")
    }
    pub fn acr(&self) -> PathBuf {
        self.at("acr.csv")
    }
    pub fn report(&self) -> PathBuf {
        self.at("report.csv")
    }
    pub fn plot(&self) -> PathBuf {
        self.at("robustness.svg")
    }
}

/// Method tags in report order.
pub const METHODS: [&str; 2] = ["sortrl", "teacher"];

pub(crate) fn stage_seed(cfg: &RunConfig, stage: &str) -> u64 {
    derive_seed(cfg.seed, stage, 0)
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact(path.to_path_buf()))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Creates the run directory and records the resolved config and metadata.
fn begin(cfg: &RunConfig, stage: &str) -> Result<Artifacts> {
    let art = Artifacts::new(&cfg.out_dir);
    fs::create_dir_all(&art.dir)?;
    fs::write(art.config(), cfg.to_json()? + "\n")?;
    let meta = ReportMeta {
        config_hash: cfg.hash()?,
        seed: cfg.seed,
        stage: stage.to_string(),
        unix_time: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
    };
    fs::write(art.meta(), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(art)
}

pub fn load_teacher(art: &Artifacts) -> Result<Teacher> {
    require(&art.teacher())?;
    Teacher::load(&art.teacher())
}

/// The student network and the observation normalizer stored with it.
pub fn load_student(art: &Artifacts) -> Result<(SortNetPolicy, ObsNormalizer)> {
    require(&art.student())?;
    let ck = Checkpoint::load(&art.student())?;
    Ok((SortNetPolicy::from_checkpoint(&ck)?, ObsNormalizer::read_from(&ck)?))
}

pub fn train_teacher_stage(cfg: &RunConfig, log: &mut dyn FnMut(&str)) -> Result<Teacher> {
    let art = begin(cfg, "train-teacher")?;
    let seed = stage_seed(cfg, "teacher");
    let (teacher, rows) = match cfg.teacher_source {
        TeacherSource::Scripted => (scripted_cartpole(20, seed)?, Vec::new()),
        TeacherSource::Dqn => train_teacher_with(cfg.env, &cfg.teacher, seed, |r| {
            log(&format!(
                "teacher step {} episodes {} epsilon {:.3} loss {:.4} greedy return {:.1}",
                r.step, r.episodes_done, r.epsilon, r.mean_loss, r.eval_return
            ))
        })?,
    };
    teacher.save(&art.teacher())?;
    let mut w = csv::Writer::from_writer(create(&art.teacher_log())?);
    w.write_record(["step", "episodes_done", "epsilon", "mean_loss", "eval_return"]).map_err(csv_err)?;
    for r in &rows {
        w.write_record([
            r.step.to_string(),
            r.episodes_done.to_string(),
            r.epsilon.to_string(),
            r.mean_loss.to_string(),
            r.eval_return.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    log(&format!("teacher saved to {}", art.teacher().display()));
    Ok(teacher)
}

pub fn build_dataset_stage(cfg: &RunConfig, log: &mut dyn FnMut(&str)) -> Result<ExpertDataset> {
    let art = Artifacts::new(&cfg.out_dir);
    let teacher = load_teacher(&art)?;
    let art = begin(cfg, "build-dataset")?;
    let data = build_dataset(&teacher, cfg.dataset_states, stage_seed(cfg, "dataset"))?;
    data.save(&art.dataset())?;
    log(&format!("{} states saved to {}", data.len(), art.dataset().display()));
    Ok(data)
}

pub fn distill_stage(cfg: &RunConfig, log: &mut dyn FnMut(&str)) -> Result<SortNetPolicy> {
    let art = Artifacts::new(&cfg.out_dir);
    require(&art.dataset())?;
    let data = ExpertDataset::load(&art.dataset())?;
    if data.env != cfg.env {
        return Err(Error::usage(format!("dataset was built on {}, config asks for {}", data.env, cfg.env)));
    }
    let art = begin(cfg, "distill")?;
    let every = cfg.distill.checkpoint_every;
    if every > 0 {
        fs::create_dir_all(art.checkpoints())?;
    }
    let report_every = (cfg.distill.iterations / 20).max(1);
    let (student, train_log) = distill_train_with(&data, &cfg.distill, stage_seed(cfg, "distill"), |row, policy| {
        if row.iteration % report_every == 0 {
            log(&format!(
                "distill step {} ce {:.4} rob {:.4} lambda {:.3} margin_frac {:.3} agree {:.3}",
                row.iteration, row.ce, row.rob, row.lambda, row.margin_frac, row.agree_rate
            ));
        }
        if every > 0 && (row.iteration + 1) % every == 0 {
            let mut ck = policy.to_checkpoint()?;
            data.normalizer.write_into(&mut ck)?;
            ck.save(&art.checkpoints().join(format!("student_{:06}.ckpt", row.iteration + 1)))?;
        }
        Ok(())
    })?;
    let mut ck = student.to_checkpoint()?;
    data.normalizer.write_into(&mut ck)?;
    ck.save(&art.student())?;
    train_log.write_csv(create(&art.distill_log())?)?;
    log(&format!("student saved to {}", art.student().display()));
    Ok(student)
}

fn write_sweep(art: &Artifacts, method: &str, rows: &[SweepRow]) -> Result<()> {
    write_sweep_csv(create(&art.sweep(method))?, rows)?;
    write_episodes_csv(create(&art.episodes(method))?, method, rows)
}

fn log_sweep(log: &mut dyn FnMut(&str), method: &str, rows: &[SweepRow]) {
    for r in rows {
        log(&format!(
            "{method} eps {} reward {:.1} ± {:.1} flip rate {:.3}",
            r.eps, r.mean_reward, r.std_err, r.flip_rate
        ));
    }
}

/// Sweeps the student over the ε grid; episode seeds are shared with the
/// teacher baseline.
pub fn attack_eval_stage(cfg: &RunConfig, log: &mut dyn FnMut(&str)) -> Result<Vec<EvalRow>> {
    let (student, norm) = load_student(&Artifacts::new(&cfg.out_dir))?;
    let art = begin(cfg, "attack-eval")?;
    let rows = sweep_epsilon(
        &student,
        cfg.env,
        &norm,
        &cfg.eps_grid,
        cfg.eval_episodes,
        &cfg.attack,
        stage_seed(cfg, "eval"),
    )?;
    write_sweep(&art, "sortrl", &rows)?;
    log_sweep(log, "sortrl", &rows);
    refresh_report(&art)
}

pub fn baseline_eval_stage(cfg: &RunConfig, log: &mut dyn FnMut(&str)) -> Result<Vec<EvalRow>> {
    let teacher = load_teacher(&Artifacts::new(&cfg.out_dir))?;
    let art = begin(cfg, "baseline-eval")?;
    let rows = sweep_epsilon(
        &teacher.net,
        cfg.env,
        &teacher.normalizer,
        &cfg.eps_grid,
        cfg.eval_episodes,
        &cfg.attack,
        stage_seed(cfg, "eval"),
    )?;
    write_sweep(&art, "teacher", &rows)?;
    log_sweep(log, "teacher", &rows);
    refresh_report(&art)
}

/// Certificates at the distillation budget for every state of the clean
/// evaluation episodes, plus the certification rate over the ε grid.
pub fn certify_stage(cfg: &RunConfig, log: &mut dyn FnMut(&str)) -> Result<Vec<EvalRow>> {
    let (student, norm) = load_student(&Artifacts::new(&cfg.out_dir))?;
    let art = begin(cfg, "certify")?;
    let samples = collect_margins(&student, cfg.env, &norm, cfg.acr_episodes, stage_seed(cfg, "eval"))?;
    let certs = samples
        .iter()
        .map(|s| certify_state(&student, &s.state, cfg.distill.eps))
        .collect::<Result<Vec<_>>>()?;
    write_certificates_csv(create(&art.certificates())?, &certs)?;
    let margins = read_margins_csv(File::open(art.certificates())?)?;
    let curve = acr_curve(&margins, &cfg.eps_grid)?;
    write_acr_csv(create(&art.acr())?, &curve)?;
    for r in &curve {
        log(&format!("acr eps {} = {}/{} = {:.4}", r.eps, r.n_certified, r.n_states, r.acr));
    }
    refresh_report(&art)
}

/// Rebuilds `report.csv` and the plot from whichever sweep and
/// certification CSVs exist.
pub fn refresh_report(art: &Artifacts) -> Result<Vec<EvalRow>> {
    let acr: Vec<(f64, f64)> = if art.acr().exists() {
        let mut r = csv::Reader::from_path(art.acr()).map_err(csv_err)?;
        r.records()
            .map(|rec| {
                let rec = rec.map_err(csv_err)?;
                let num = |i: usize| -> Result<f64> {
                    rec.get(i)
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| Error::Format("malformed acr.csv row".into()))
                };
                Ok((num(0)?, num(3)?))
            })
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let mut rows = Vec::new();
    for method in METHODS {
        let path = art.sweep(method);
        if !path.exists() {
            continue;
        }
        for r in read_sweep_csv(&path)? {
            let acr = if method == "sortrl" {
                acr.iter().find(|(e, _)| e.to_bits() == r.eps.to_bits()).map(|(_, a)| *a)
            } else {
                None
            };
            rows.push(EvalRow {
                env: r.env,
                method: method.to_string(),
                attack: r.attack,
                eps: r.eps,
                episodes: r.episodes,
                mean_reward: r.mean_reward,
                std_err: r.std_err,
                acr,
            });
        }
    }
    write_report_csv(create(&art.report())?, &rows)?;
    fs::write(art.plot(), render_svg(&rows))?;
    Ok(rows)
}

pub fn plot_stage(cfg: &RunConfig, log: &mut dyn FnMut(&str)) -> Result<()> {
    let art = Artifacts::new(&cfg.out_dir);
    require(&art.report())?;
    let rows = super::report::read_report_csv(File::open(art.report())?)?;
    fs::write(art.plot(), render_svg(&rows))?;
    log(&format!("plot written to {}", art.plot().display()));
    Ok(())
}
