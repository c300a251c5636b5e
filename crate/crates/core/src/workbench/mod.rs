//! Experiment orchestration behind the `meta-kgr` binary.

mod config;

pub use config::{AblateConfig, AdaptProfile, ExperimentConfig, FilesConfig, GradcheckConfig, ModelConfig, SweepConfig};

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{load_checkpoint, save_checkpoint};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::eval::{
    eval_tasks, evaluate_at_steps, evaluate_with_rep, fmt_metric, meta_evaluate, summary_table, task_rep_values,
    write_metrics_file, EvalTask, MetaEvalResult, MetricReport, TaskMetrics,
};
use crate::gradcheck::{self, SuiteResult};
use crate::meta::{derive_seed, train_method, LossRecord, Method, TaskRole};
use crate::model::Model;

const SEED_MODEL: u64 = 0;
const SEED_TRAIN: u64 = 1;
const SEED_EVAL: u64 = 2;
const SEED_DEV_SUPPORT: u64 = 3;
const SEED_TEST_SUPPORT: u64 = 4;
const SEED_NO_ENCODER: u64 = 5;

/// Resolved invocation: config plus output directory.
#[derive(Clone, Debug)]
pub struct Run {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
}

impl Run {
    /// Creates the output directory and writes `resolved-config.toml` into it.
    pub fn new(cfg: ExperimentConfig, out: impl Into<PathBuf>) -> Result<Self> {
        let out = out.into();
        let mut cfg = cfg;
        cfg.out = Some(out.clone());
        cfg.validate()?;
        fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        let path = out.join("resolved-config.toml");
        fs::write(&path, cfg.to_toml()?).map_err(|e| Error::io(&path, e))?;
        Ok(Self { cfg, out })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn seed(&self, salt: u64) -> u64 {
        derive_seed(self.cfg.seed, salt)
    }

    fn held_out(&self, data: &Dataset, role: TaskRole, shots: usize) -> Result<Vec<EvalTask>> {
        let salt = if role == TaskRole::MetaDev { SEED_DEV_SUPPORT } else { SEED_TEST_SUPPORT };
        eval_tasks(&data.tasks_with(role), shots, self.seed(salt))
    }

    fn train_model(&self, data: &Dataset, method: Method) -> Result<(Model<f32>, Vec<LossRecord>)> {
        let mut model = self.cfg.new_model(data, self.seed(SEED_MODEL))?;
        let train = self.cfg.train_for(method);
        let curve = train_method(
            method,
            &mut model,
            &data.graph,
            &data.tasks_with(TaskRole::MetaTrain),
            &train,
            self.seed(SEED_TRAIN),
        )?;
        Ok((model, curve))
    }

    fn model_for(&self, data: &Dataset, checkpoint: Option<&Path>) -> Result<Model<f32>> {
        match checkpoint {
            Some(path) => {
                let model = Model::from_store(load_checkpoint(path)?)?;
                model.layout.check_graph(&data.graph)?;
                Ok(model)
            }
            None => {
                log::info!("no checkpoint given, training {} first", self.cfg.method.name());
                let (model, curve) = self.train_model(data, self.cfg.method)?;
                self.write_training(&model, &curve)?;
                Ok(model)
            }
        }
    }

    fn write_training(&self, model: &Model<f32>, curve: &[LossRecord]) -> Result<()> {
        let path = self.path("loss.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["step", "loss", "reward"])?;
        for r in curve {
            w.write_record([r.step.to_string(), fmt_metric(r.loss), fmt_metric(r.reward)])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        save_checkpoint(&model.store, self.path("model.ckpt"))
    }

    fn write_summary(&self, body: &str) -> Result<()> {
        let path = self.path("summary.md");
        fs::write(&path, body).map_err(|e| Error::io(&path, e))
    }

    /// Trains the configured method; writes `loss.csv` and `model.ckpt`.
    pub fn train(&self) -> Result<Vec<LossRecord>> {
        let data = self.cfg.load_data()?;
        let (model, curve) = self.train_model(&data, self.cfg.method)?;
        self.write_training(&model, &curve)?;
        Ok(curve)
    }

    /// Initial (zero fine-tuning step) metrics on meta-test.
    pub fn eval(&self, checkpoint: Option<&Path>) -> Result<MetricReport> {
        let data = self.cfg.load_data()?;
        let model = self.model_for(&data, checkpoint)?;
        let method = self.cfg.method;
        let test = self.held_out(&data, TaskRole::MetaTest, self.cfg.eval.shots)?;
        let reports = evaluate_at_steps(
            &model,
            &data.graph,
            method.encoder_kind(),
            &test,
            &[0],
            &self.cfg.train_for(method),
            &self.cfg.eval,
            self.seed(SEED_EVAL),
        )?;
        let report = reports.into_iter().next().ok_or_else(|| Error::contract("no report"))?;
        write_metrics_file(&self.path("metrics.csv"), &[&report])?;
        self.write_summary(&summary_table(&[(method.display_name().to_owned(), &report, &report)]))?;
        Ok(report)
    }

    /// Full protocol: schedule chosen on meta-dev, Initial and Best on meta-test.
    pub fn finetune(&self, checkpoint: Option<&Path>) -> Result<MetaEvalResult> {
        let data = self.cfg.load_data()?;
        let model = self.model_for(&data, checkpoint)?;
        let result = self.meta_evaluate(&data, &model, self.cfg.method, self.cfg.eval.shots)?;
        let dev: Vec<&MetricReport> = result.dev.iter().collect();
        write_metrics_file(&self.path("dev-metrics.csv"), &dev)?;
        write_metrics_file(&self.path("metrics.csv"), &[&result.initial, &result.best])?;
        let steps = result.schedule.frozen_steps()?;
        let table = summary_table(&[(self.cfg.method.display_name().to_owned(), &result.initial, &result.best)]);
        self.write_summary(&format!("Fine-tuning steps selected on meta-dev: {steps}\n\n{table}"))?;
        Ok(result)
    }

    fn meta_evaluate(&self, data: &Dataset, model: &Model<f32>, method: Method, shots: usize) -> Result<MetaEvalResult> {
        let dev = self.held_out(data, TaskRole::MetaDev, shots)?;
        let test = self.held_out(data, TaskRole::MetaTest, shots)?;
        meta_evaluate(
            model,
            &data.graph,
            method.encoder_kind(),
            &dev,
            &test,
            &self.cfg.train_for(method),
            &self.cfg.eval,
            self.seed(SEED_EVAL),
        )
    }

    /// One trained model per method, evaluated at every support size; writes `sweep.csv`.
    pub fn sweep(&self) -> Result<Vec<SweepRow>> {
        let data = self.cfg.load_data()?;
        let mut rows = Vec::new();
        for &method in &self.cfg.sweep.methods {
            let (model, _) = self.train_model(&data, method)?;
            for &shots in &self.cfg.sweep.shots {
                log::info!("sweep: {} with {shots} shots", method.name());
                let r = self.meta_evaluate(&data, &model, method, shots)?;
                rows.push(SweepRow {
                    method,
                    shots,
                    steps: r.schedule.frozen_steps()?,
                    initial: r.initial.macro_avg,
                    best: r.best.macro_avg,
                });
            }
        }
        let path = self.path("sweep.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(SweepRow::HEADER)?;
        for r in &rows {
            w.write_record(r.record())?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        let mut md = String::from("| Method | Shots | Initial MRR | Initial Hits@10 | Best MRR | Best Hits@10 |\n|---|---|---|---|---|---|\n");
        for r in &rows {
            md.push_str(&format!(
                "| {} | {} | {:.3} | {:.3} | {:.3} | {:.3} |\n",
                r.method.display_name(),
                r.shots,
                r.initial.mrr,
                r.initial.hits10,
                r.best.mrr,
                r.best.hits10
            ));
        }
        self.write_summary(&md)?;
        Ok(rows)
    }

    /// Initial meta-test metrics of one neighbor-encoder model under different
    /// task representations; writes `ablation.csv`.
    pub fn ablate(&self) -> Result<Vec<AblationRow>> {
        let data = self.cfg.load_data()?;
        let method = Method::Neighbor;
        let (model, _) = self.train_model(&data, method)?;
        let train = self.cfg.train_for(method);
        let mut rows = Vec::new();
        for &shots in &self.cfg.ablate.shots {
            let test = self.held_out(&data, TaskRole::MetaTest, shots)?;
            let mut per = Vec::new();
            for task in &test {
                let (rep, _) = task_rep_values(&model.store, &model.layout, &data.graph, method.encoder_kind(), task, &train)?;
                let (m, _) = evaluate_with_rep(&model.store, &model.layout, &data.graph, task, &rep, &train, &self.cfg.eval)?;
                per.push(m);
            }
            rows.push(AblationRow {
                name: format!("encoder-{shots}-shot"),
                metrics: TaskMetrics::macro_average(&per)?,
            });
        }
        let test = self.held_out(&data, TaskRole::MetaTest, self.cfg.eval.shots)?;
        let normal = Normal::new(0.0, self.cfg.model.embedding_std).map_err(|e| Error::Config(e.to_string()))?;
        let mut per = Vec::new();
        for (i, task) in test.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed(SEED_NO_ENCODER), i as u64));
            let rep: Vec<f32> = (0..model.layout.dims.dim).map(|_| normal.sample(&mut rng) as f32).collect();
            let (m, _) = evaluate_with_rep(&model.store, &model.layout, &data.graph, task, &rep, &train, &self.cfg.eval)?;
            per.push(m);
        }
        rows.push(AblationRow {
            name: "no-encoder".into(),
            metrics: TaskMetrics::macro_average(&per)?,
        });

        let path = self.path("ablation.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["init", "hits1", "hits3", "hits10", "mrr"])?;
        let mut md = String::from("| Init | Hits@1 | Hits@3 | Hits@10 | MRR |\n|---|---|---|---|---|\n");
        for r in &rows {
            let m = &r.metrics;
            w.write_record([r.name.clone(), fmt_metric(m.hits1), fmt_metric(m.hits3), fmt_metric(m.hits10), fmt_metric(m.mrr)])?;
            md.push_str(&format!("| {} | {:.3} | {:.3} | {:.3} | {:.3} |\n", r.name, m.hits1, m.hits3, m.hits10, m.mrr));
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        self.write_summary(&md)?;
        Ok(rows)
    }

    /// Runs every finite-difference suite; writes `gradcheck.csv`.
    pub fn gradcheck(&self) -> Result<Vec<SuiteResult>> {
        let results = gradcheck::run_all(self.cfg.gradcheck.seeds, self.cfg.seed)?;
        let path = self.path("gradcheck.csv");
        let mut file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut text = String::from("suite,seeds,max_rel_err,passed\n");
        for r in &results {
            text.push_str(&format!("{},{},{:e},{}\n", r.suite, r.seeds, r.max_rel_err, r.passed()));
        }
        file.write_all(text.as_bytes()).map_err(|e| Error::io(&path, e))?;
        Ok(results)
    }
}

/// Macro-averaged meta-test metrics of one (method, shots) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub method: Method,
    pub shots: usize,
    pub steps: usize,
    pub initial: TaskMetrics,
    pub best: TaskMetrics,
}

impl SweepRow {
    const HEADER: [&'static str; 11] = [
        "method", "shots", "steps", "initial_hits1", "initial_hits3", "initial_hits10", "initial_mrr", "best_hits1",
        "best_hits3", "best_hits10", "best_mrr",
    ];

    fn record(&self) -> Vec<String> {
        let (i, b) = (&self.initial, &self.best);
        [self.method.name().to_owned(), self.shots.to_string(), self.steps.to_string()]
            .into_iter()
            .chain([i.hits1, i.hits3, i.hits10, i.mrr, b.hits1, b.hits3, b.hits10, b.mrr].map(fmt_metric))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub name: String,
    pub metrics: TaskMetrics,
}
