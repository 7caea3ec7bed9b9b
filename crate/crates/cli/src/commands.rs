//! One function per subcommand. Each records its wall time and artifacts in
//! the run manifest and `timings.csv`; no other artifact carries wall time.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::artifacts::{append_csv, write_csv, RunManifest, StageRecord};
use crate::config::{EmbeddingChoice, Mode};
use crate::pipeline::{
    self, baseline_report, evaluate, fewshot, ladder_summary, load_data, non_increasing_within_se, write_scatter, Ctx,
    BASELINE_HEADER, EVAL_HEADER, FEWSHOT_HEADER,
};
use crate::CliError;

#[derive(Clone, Debug, Default)]
pub struct Options {
    pub checkpoint: Option<PathBuf>,
    pub embedding: Option<EmbeddingChoice>,
    pub mode: Option<Mode>,
    pub stop_after: Option<usize>,
    pub family: Option<String>,
    pub n: Option<usize>,
}

impl Options {
    fn checkpoint(&self, ctx: &Ctx) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| ctx.dir.checkpoint())
    }

    fn method(&self, ctx: &Ctx) -> EmbeddingChoice {
        self.embedding.unwrap_or(ctx.cfg.embedding.method)
    }

    /// Applies `--mode` and `--embedding` overrides and revalidates.
    pub fn apply(&self, ctx: &mut Ctx) -> Result<(), CliError> {
        if let Some(m) = self.mode {
            ctx.cfg.mode = m;
        }
        if let Some(e) = self.embedding {
            ctx.cfg.embedding.method = e;
        }
        ctx.cfg.validate()
    }
}

#[derive(Serialize)]
struct Timing<'a> {
    stage: &'a str,
    wall_ms: u128,
}

fn finish(ctx: &Ctx, stage: &str, started: Instant, artifacts: Vec<PathBuf>) -> Result<(), CliError> {
    let wall = started.elapsed().as_millis();
    append_csv(
        &ctx.dir.timings(),
        &["stage", "wall_ms"],
        &[Timing {
            stage,
            wall_ms: wall,
        }],
    )?;
    let rec = StageRecord {
        wall_clock_ms: wall,
        seed: ctx.seed,
        artifacts: artifacts.iter().map(|p| p.display().to_string()).collect(),
    };
    RunManifest::record(&ctx.dir.run_manifest(), &ctx.hash, stage, rec)
}

pub fn gen_data(ctx: &Ctx) -> Result<String, CliError> {
    let t = Instant::now();
    ctx.store_config()?;
    let m = pipeline::generate_data(ctx)?;
    let n_train = m.split(crate::artifacts::SplitName::Train).count();
    finish(
        ctx,
        "gen-data",
        t,
        vec![ctx.dir.data_manifest(), ctx.dir.train_samples(), ctx.dir.test_samples()],
    )?;
    Ok(format!(
        "generated {} families ({} train, {} test)",
        m.families.len(),
        n_train,
        m.families.len() - n_train
    ))
}

pub fn train(ctx: &Ctx, opts: &Options) -> Result<String, CliError> {
    let t = Instant::now();
    ctx.store_config()?;
    let data = load_data(ctx)?;
    let ck = opts.checkpoint(ctx);
    let out = pipeline::train_model(ctx, &data, opts.method(ctx), &ctx.dir, &ck, opts.stop_after)?;
    finish(ctx, "train", t, vec![ck.clone(), ctx.dir.metrics()])?;
    let last = out.epochs.last().map_or(f64::NAN, |e| e.loss);
    Ok(format!(
        "trained to step {} ({} epochs this run{}), last epoch loss {last:.5}",
        out.model.store.step_count,
        out.epochs.len(),
        if out.stopped_early { ", stopped early" } else { "" }
    ))
}

pub fn sample(ctx: &Ctx, opts: &Options) -> Result<String, CliError> {
    let t = Instant::now();
    let data = load_data(ctx)?;
    let model = pipeline::load_model(ctx, &data, opts.method(ctx), &opts.checkpoint(ctx))?;
    let n = opts.n.unwrap_or(ctx.cfg.eval.n_gen);
    let mut written = Vec::new();
    let train_ids = data.records(crate::artifacts::SplitName::Train);
    let test_ids = data.records(crate::artifacts::SplitName::Test);
    let wanted = |id: &str| opts.family.as_deref().is_none_or(|f| f == id);
    for (i, rec) in train_ids.iter().enumerate().filter(|(_, r)| wanted(&r.id)) {
        let u = model.train_embedding(i, &data.train[i])?;
        written.push(write_samples(ctx, &model.generate(&u, n, ctx.key_id("gen", &rec.id), &rec.id)?, &rec.id)?);
    }
    if model.method() != EmbeddingChoice::Conditional {
        for (i, rec) in test_ids.iter().enumerate().filter(|(_, r)| wanted(&r.id)) {
            let u = model.embed_samples(&data.test[i].data)?;
            written.push(write_samples(ctx, &model.generate(&u, n, ctx.key_id("gen", &rec.id), &rec.id)?, &rec.id)?);
        }
    }
    if written.is_empty() {
        return Err(CliError::Config(format!(
            "no family matches {:?}",
            opts.family.as_deref().unwrap_or("")
        )));
    }
    let count = written.len();
    finish(ctx, "sample", t, written)?;
    Ok(format!("wrote {count} sample files"))
}

fn write_samples(ctx: &Ctx, x: &sno_core::Matrix, id: &str) -> Result<PathBuf, CliError> {
    let path = ctx.dir.samples(id);
    let header: Vec<String> = (0..x.cols()).map(|j| format!("x{j}")).collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<f64>> = x.iter_rows().map(<[f64]>::to_vec).collect();
    write_csv(&path, &header, &rows)?;
    Ok(path)
}

pub fn eval(ctx: &Ctx, opts: &Options) -> Result<String, CliError> {
    let t = Instant::now();
    let data = load_data(ctx)?;
    let model = pipeline::load_model(ctx, &data, opts.method(ctx), &opts.checkpoint(ctx))?;
    let results = evaluate(ctx, &data, &model);
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut artifacts = vec![ctx.dir.eval()];
    for (id, r) in results {
        match r {
            Ok(fe) => {
                if ctx.cfg.eval.scatter && model.data_dim() == 2 {
                    let p = ctx.dir.scatter(&id);
                    write_scatter(&p, &fe.truth, &fe.generated)?;
                    artifacts.push(p);
                }
                rows.push(fe.row);
            }
            Err(e) => failures.push(format!("{id}: {e}")),
        }
    }
    write_csv(&ctx.dir.eval(), &EVAL_HEADER, &rows)?;
    finish(ctx, "eval", t, artifacts)?;
    let mean = |split: &str| {
        let v: Vec<f64> = rows.iter().filter(|r| r.split == split).map(|r| r.mmd).collect();
        (v.iter().sum::<f64>() / v.len().max(1) as f64, v.len())
    };
    let (tr, ntr) = mean("train");
    let (te, nte) = mean("test");
    let summary = format!("mean MMD train {tr:.4} over {ntr}, test {te:.4} over {nte}");
    if !failures.is_empty() {
        return Err(CliError::Failed(format!("{summary}; failed: {}", failures.join("; "))));
    }
    Ok(summary)
}

pub fn fewshot_cmd(ctx: &Ctx, opts: &Options) -> Result<String, CliError> {
    let t = Instant::now();
    let data = load_data(ctx)?;
    let model = pipeline::load_model(ctx, &data, opts.method(ctx), &opts.checkpoint(ctx))?;
    let rows = fewshot(ctx, &data, &model)?;
    write_csv(&ctx.dir.fewshot(), &FEWSHOT_HEADER, &rows)?;
    finish(ctx, "fewshot", t, vec![ctx.dir.fewshot()])?;
    let summary = ladder_summary(&rows, &ctx.cfg.eval.fewshot_ladder);
    let trend = if non_increasing_within_se(&summary) { "non-increasing" } else { "NOT non-increasing" };
    let ladder: Vec<String> = summary.iter().map(|(k, m, se)| format!("K={k}: {m:.4}±{se:.4}")).collect();
    Ok(format!("{} ({trend} within one pooled SE)", ladder.join(", ")))
}

pub fn baseline(ctx: &Ctx, opts: &Options) -> Result<String, CliError> {
    let t = Instant::now();
    if ctx.cfg.mode != Mode::Lattice {
        return Err(CliError::Config("the conditional baseline runs in lattice mode".into()));
    }
    let data = load_data(ctx)?;
    let bdir = ctx.dir.baseline_dir();
    let ck = opts.checkpoint.clone().unwrap_or_else(|| bdir.checkpoint());
    let out = pipeline::train_model(ctx, &data, EmbeddingChoice::Conditional, &bdir, &ck, opts.stop_after)?;
    if out.stopped_early {
        finish(ctx, "baseline", t, vec![ck])?;
        return Ok(format!("baseline training paused at step {}", out.model.store.step_count));
    }
    let rows = baseline_report(ctx, &data, &out.model)?;
    write_csv(&ctx.dir.baseline_report(), &BASELINE_HEADER, &rows)?;
    finish(ctx, "baseline", t, vec![ck, bdir.metrics(), ctx.dir.baseline_report()])?;
    let test: Vec<f64> = rows
        .iter()
        .filter(|r| r.split == "test")
        .map(|r| r.gen_cov_trace / r.true_cov_trace)
        .collect();
    Ok(format!(
        "baseline on {} families; K=1 finetune keeps {:.1}% of the true covariance trace on average",
        rows.len(),
        100.0 * test.iter().sum::<f64>() / test.len().max(1) as f64
    ))
}

/// Caps rayon's global pool at `SNO_THREADS` when set.
pub fn init_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("SNO_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("SNO_THREADS must be a positive integer, got `{v}`")))?;
        if n == 0 {
            return Err(CliError::Config("SNO_THREADS must be at least 1".into()));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn config_path_exists(p: &Path) -> Result<(), CliError> {
    if p.exists() {
        Ok(())
    } else {
        Err(CliError::Config(format!("config {} not found", p.display())))
    }
}
