//! Stage implementations shared by the commands and the acceptance suite.
//! Every random draw is keyed by the run seed and a stage tag, so a stage
//! rerun with the same config reproduces its artifacts exactly.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sno_core::distributions::{
    digit_pair_split, generate_family, load_idx, make_double_digit, render_synthetic_digits, sample_lattice_mixture,
    DigitPool, FamilySplit, SampleBatch, Split,
};
use sno_core::embeddings::{build_kme_basis, median_bandwidth, EmbeddingMethod, KmeBasis, RbfKernel};
use sno_core::eval_mmd::{fewshot_protocol, mmd_unbiased, permutation_test, FewShotModel, FewShotResult};
use sno_core::latent_vae::{generate_latent, joint_train, JointRecord, LatentEmbedding, LatentNetSpec, LatentScoreNet, Vae};
use sno_core::numerics::{rng, write_atomic, Checkpoint, Matrix, ParameterStore};
use sno_core::score_operator::{
    finetune_conditional, sample_from_family, train, ConditionalTable, Conditioning, Control, EpochRecord, LrSchedule,
    Nomad, Sampler, ScoreNet, ScoreOperator, TrainConfig,
};

use crate::artifacts::{
    append_csv, load_samples, save_samples, truncate_metrics, DataManifest, FamilyRecord, FamilySource, MetricsRow,
    RunDir, SplitName, METRICS_HEADER,
};
use crate::config::{EmbeddingChoice, ExperimentConfig, LoadedConfig, Mode};
use crate::CliError;

const KME_PREFIX: &str = "kme/";
const TABLE: &str = "table";

/// A loaded config bound to its run directory and effective seed.
#[derive(Clone, Debug)]
pub struct Ctx {
    pub cfg: ExperimentConfig,
    pub config_bytes: Vec<u8>,
    pub hash: String,
    pub seed: u64,
    pub dir: RunDir,
}

impl Ctx {
    pub fn new(loaded: &LoadedConfig, seed: Option<u64>) -> Self {
        Self {
            cfg: loaded.config.clone(),
            config_bytes: loaded.bytes.clone(),
            hash: loaded.hash.clone(),
            seed: seed.unwrap_or(loaded.config.seed),
            dir: RunDir::new(&loaded.config.output_dir),
        }
    }

    pub fn key(&self, tag: &str) -> u64 {
        rng::derive_seed(self.seed, &[rng::tag(tag)])
    }

    pub fn key_id(&self, tag: &str, id: &str) -> u64 {
        rng::derive_seed(self.seed, &[rng::tag(tag), rng::tag(id)])
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.cfg.train.clone()
        }
    }

    pub fn sampler(&self) -> Sampler {
        self.cfg.eval.sampler_for(self.cfg.mode)
    }

    /// Copies the config bytes into the run directory.
    pub fn store_config(&self) -> Result<(), CliError> {
        write_atomic(&self.dir.config(), &self.config_bytes)?;
        Ok(())
    }
}

/// Training and held-out sample sets plus what is needed to draw more.
pub struct Dataset {
    pub manifest: DataManifest,
    pub train: Vec<SampleBatch>,
    pub test: Vec<SampleBatch>,
    pool: Option<DigitPool>,
}

impl Dataset {
    pub fn records(&self, split: SplitName) -> Vec<&FamilyRecord> {
        self.manifest.split(split).collect()
    }

    /// `n` new samples of a family.
    pub fn draw(&self, rec: &FamilyRecord, n: usize, seed: u64) -> Result<SampleBatch, CliError> {
        Ok(match &rec.source {
            FamilySource::Lattice(spec) => sample_lattice_mixture(spec, n, seed)?,
            FamilySource::Digits(spec) => {
                let pool = self
                    .pool
                    .as_ref()
                    .ok_or_else(|| CliError::Failed("digit pool not loaded".into()))?;
                make_double_digit(spec, pool, n, seed)?
            }
        })
    }
}

fn digit_pool(ctx: &Ctx) -> Result<(DigitPool, Vec<(String, PathBuf)>), CliError> {
    let d = &ctx.cfg.digits;
    let (images, labels) = match (&d.idx_images, &d.idx_labels) {
        (Some(i), Some(l)) => (i.clone(), l.clone()),
        _ => (ctx.dir.digit_images(), ctx.dir.digit_labels()),
    };
    if d.idx_images.is_none() && !images.exists() {
        let (img, lab) = render_synthetic_digits(d.synthetic_per_class, ctx.key("glyphs"));
        img.write(&images)?;
        lab.write(&labels)?;
    }
    let pool = DigitPool::new(load_idx(&images)?, load_idx(&labels)?)?;
    Ok((pool, vec![("digits-images".into(), images), ("digits-labels".into(), labels)]))
}

/// Generates every family's samples and writes them with a manifest.
pub fn generate_data(ctx: &Ctx) -> Result<DataManifest, CliError> {
    let mut families = Vec::new();
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut files = std::collections::BTreeMap::new();
    match ctx.cfg.mode {
        Mode::Lattice => {
            let l = &ctx.cfg.lattice;
            let mut splits = vec![(SplitName::Train, generate_family(FamilySplit::Train, l.train_families, ctx.key("train_specs"))?)];
            if l.test_families > 0 {
                splits.push((SplitName::Test, generate_family(FamilySplit::Test, l.test_families, ctx.key("test_specs"))?));
            }
            for (split, specs) in splits {
                for spec in specs {
                    let id = spec.id();
                    let seed = ctx.key_id("samples", &id);
                    let batch = sample_lattice_mixture(&spec, l.samples_per_family, seed)?;
                    families.push(FamilyRecord {
                        id,
                        split,
                        samples: l.samples_per_family,
                        seed,
                        source: FamilySource::Lattice(spec),
                    });
                    match split {
                        SplitName::Train => train.push(batch),
                        SplitName::Test => test.push(batch),
                    }
                }
            }
        }
        Mode::Latent => {
            let d = &ctx.cfg.digits;
            let (pool, idx_files) = digit_pool(ctx)?;
            for (name, path) in idx_files {
                files.insert(name, crate::config::hash_bytes(&std::fs::read(path)?));
            }
            let pairs = digit_pair_split(ctx.key("pairs"));
            let pick = |s: Split, k: usize| pairs.iter().filter(move |p| p.split == s).take(k).copied();
            let chosen = pick(Split::Train70, d.train_families)
                .map(|p| (SplitName::Train, p))
                .chain(pick(Split::Test30, d.test_families).map(|p| (SplitName::Test, p)));
            for (split, spec) in chosen {
                let id = spec.id();
                let seed = ctx.key_id("samples", &id);
                let batch = make_double_digit(&spec, &pool, d.samples_per_family, seed)?;
                families.push(FamilyRecord {
                    id,
                    split,
                    samples: d.samples_per_family,
                    seed,
                    source: FamilySource::Digits(spec),
                });
                match split {
                    SplitName::Train => train.push(batch),
                    SplitName::Test => test.push(batch),
                }
            }
        }
    }
    files.insert("train.snop".into(), save_samples(&ctx.dir.train_samples(), &train)?);
    files.insert("test.snop".into(), save_samples(&ctx.dir.test_samples(), &test)?);
    let manifest = DataManifest {
        mode: ctx.cfg.mode,
        seed: ctx.seed,
        families,
        files,
    };
    manifest.save(&ctx.dir.data_manifest())?;
    Ok(manifest)
}

pub fn load_data(ctx: &Ctx) -> Result<Dataset, CliError> {
    let path = ctx.dir.data_manifest();
    if !path.exists() {
        return Err(CliError::Io(format!("{} missing; run gen-data first", path.display())));
    }
    let manifest = DataManifest::load(&path)?;
    if manifest.mode != ctx.cfg.mode || manifest.seed != ctx.seed {
        return Err(CliError::Config(format!(
            "data in {} was generated for mode {:?} seed {}, config asks for {:?} seed {}",
            ctx.dir.root.display(),
            manifest.mode,
            manifest.seed,
            ctx.cfg.mode,
            ctx.seed
        )));
    }
    let train = load_samples(&ctx.dir.train_samples(), &manifest.split(SplitName::Train).collect::<Vec<_>>())?;
    let test = load_samples(&ctx.dir.test_samples(), &manifest.split(SplitName::Test).collect::<Vec<_>>())?;
    let pool = match ctx.cfg.mode {
        Mode::Latent => Some(digit_pool(ctx)?.0),
        Mode::Lattice => None,
    };
    Ok(Dataset {
        manifest,
        train,
        test,
        pool,
    })
}

fn reference_sets(data: &[SampleBatch], k: usize) -> Result<Vec<Matrix>, CliError> {
    data.iter()
        .map(|b| {
            let idx: Vec<usize> = (0..k.min(b.len())).collect();
            Ok(b.data.select_rows(&idx)?)
        })
        .collect()
}

/// KME-PCA basis over the training families' reference sets.
pub fn fit_kme(ctx: &Ctx, data: &[SampleBatch]) -> Result<KmeBasis, CliError> {
    let refs = reference_sets(data, ctx.cfg.embedding.kme_points)?;
    let h = match ctx.cfg.embedding.bandwidth {
        Some(h) => h,
        None => median_bandwidth(&refs.iter().collect::<Vec<_>>())?,
    };
    Ok(build_kme_basis(&RbfKernel::new(h)?, &refs, ctx.cfg.embedding.n_components)?)
}

/// One row per reference set.
fn kme_rows(basis: &KmeBasis) -> Matrix {
    basis.reference_projection().transpose()
}

pub enum Conditioner {
    Kme(KmeBasis),
    Table(ConditionalTable),
    Prototype,
}

pub enum Net {
    Lattice(ScoreOperator<Nomad>),
    Latent { vae: Vae, op: ScoreOperator<LatentScoreNet> },
}

/// A trained (or freshly initialized) model with its conditioning.
pub struct Model {
    pub net: Net,
    pub store: ParameterStore,
    pub cond: Conditioner,
    pub sampler: Sampler,
    pub steps: usize,
}

impl Model {
    pub fn method(&self) -> EmbeddingChoice {
        match self.cond {
            Conditioner::Kme(_) => EmbeddingChoice::KmePca,
            Conditioner::Table(_) => EmbeddingChoice::Conditional,
            Conditioner::Prototype => EmbeddingChoice::Prototype,
        }
    }

    pub fn data_dim(&self) -> usize {
        match &self.net {
            Net::Lattice(op) => op.net.data_dim(),
            Net::Latent { vae, .. } => vae.spec().data_dim,
        }
    }

    /// Zero-shot embedding of a sample set; the conditional table has none.
    pub fn embed_samples(&self, x: &Matrix) -> Result<Vec<f64>, CliError> {
        match (&self.cond, &self.net) {
            (Conditioner::Kme(b), _) => Ok(b.embed(x)?.u),
            (Conditioner::Prototype, Net::Latent { vae, .. }) => Ok(vae.encode_mean(&self.store, x)?.column_means().into_vec()),
            (Conditioner::Table(_), _) => Err(CliError::Failed(
                "the conditional table has no row for an unseen family; finetune it with `baseline`".into(),
            )),
            (Conditioner::Prototype, Net::Lattice(_)) => Err(CliError::Config("prototype embeddings need latent mode".into())),
        }
    }

    /// Embedding used in training for training family `i`.
    pub fn train_embedding(&self, i: usize, batch: &SampleBatch) -> Result<Vec<f64>, CliError> {
        match &self.cond {
            Conditioner::Kme(b) => Ok(kme_rows(b).row(i).to_vec()),
            Conditioner::Table(t) => Ok(t.row(&self.store, i)?),
            Conditioner::Prototype => self.embed_samples(&batch.data),
        }
    }

    pub fn generate(&self, u: &[f64], n: usize, seed: u64, family_id: &str) -> Result<Matrix, CliError> {
        Ok(match &self.net {
            Net::Lattice(op) => sample_from_family(op, &self.store, u, n, self.sampler, self.steps, seed, family_id)?.data,
            Net::Latent { vae, op } => {
                generate_latent(vae, op, &self.store, u, n, self.sampler, self.steps, seed, family_id)?.data
            }
        })
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint, CliError> {
        let mut ck = Checkpoint::new();
        ck.push_store(&self.store)?;
        if let Conditioner::Kme(b) = &self.cond {
            b.push_to(&mut ck, KME_PREFIX)?;
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        write_atomic(path, &self.to_checkpoint()?.to_bytes())?;
        Ok(())
    }
}

/// Builds the model for `method`. With an existing checkpoint at `resume`
/// the parameters, optimizer state and embedding basis come from it;
/// otherwise everything is initialized from the run seed.
pub fn build_model(ctx: &Ctx, data: &Dataset, method: EmbeddingChoice, resume: Option<&Path>) -> Result<Model, CliError> {
    let ck = match resume {
        Some(p) if p.exists() => Some(Checkpoint::load(p)?),
        _ => None,
    };
    let nx = ctx.cfg.embedding.n_components;
    let cond = match method {
        EmbeddingChoice::KmePca => Conditioner::Kme(match &ck {
            Some(ck) => KmeBasis::from_checkpoint(ck, KME_PREFIX)?,
            None => fit_kme(ctx, &data.train)?,
        }),
        EmbeddingChoice::Conditional => Conditioner::Table(ConditionalTable::new(TABLE, data.train.len(), nx)),
        EmbeddingChoice::Prototype => Conditioner::Prototype,
    };
    let (net, mut store) = match ctx.cfg.mode {
        Mode::Lattice => {
            let op = ScoreOperator::new(Nomad::new(ctx.cfg.model.nomad(2, nx))?, ctx.cfg.sde)?;
            let mut store = ParameterStore::new();
            op.net.init(&mut store, &mut rng::stream(ctx.key("init"), &[]))?;
            (Net::Lattice(op), store)
        }
        Mode::Latent => {
            let lc = &ctx.cfg.latent;
            let data_dim = data.train.first().map(|b| b.dim()).unwrap_or(1);
            let vae = Vae::new(lc.vae(data_dim))?;
            let cond_dim = if method == EmbeddingChoice::Prototype { lc.latent_dim } else { nx };
            let spec = LatentNetSpec {
                width: lc.net_width.unwrap_or(8 * lc.latent_dim),
                time_features: lc.time_features,
                time_sigma: lc.time_sigma,
                ..LatentNetSpec::scaled(lc.latent_dim, cond_dim)
            };
            let op = ScoreOperator::new(LatentScoreNet::new(spec)?, ctx.cfg.sde)?;
            let mut store = ParameterStore::new();
            op.net.init(&mut store, &mut rng::stream(ctx.key("init"), &[]))?;
            vae.init(&mut store, &mut rng::stream(ctx.key("vae_init"), &[]))?;
            (Net::Latent { vae, op }, store)
        }
    };
    if let Conditioner::Table(t) = &cond {
        t.init(&mut store, &mut rng::stream(ctx.key("table"), &[]))?;
    }
    if let Some(ck) = &ck {
        let saved = ck.to_store()?;
        let layout = |s: &ParameterStore| -> Vec<(String, (usize, usize))> {
            s.iter().map(|(n, p)| (n.to_owned(), p.value.shape())).collect()
        };
        if layout(&saved) != layout(&store) {
            return Err(CliError::Config("checkpoint parameters do not match the configured model".into()));
        }
        store = saved;
    }
    Ok(Model {
        net,
        store,
        cond,
        sampler: ctx.sampler(),
        steps: ctx.cfg.eval.steps,
    })
}

pub struct TrainOutcome {
    pub model: Model,
    pub epochs: Vec<EpochRecord>,
    pub latent_steps: Vec<JointRecord>,
    pub stopped_early: bool,
}

pub const LATENT_TRACE_HEADER: [&str; 6] = ["step", "total", "vae", "recon", "kl", "sgm"];

/// Trains (or resumes) `method` in `dir`, checkpointing after every epoch.
/// `stop_after` ends the invocation after that many epochs.
pub fn train_model(
    ctx: &Ctx,
    data: &Dataset,
    method: EmbeddingChoice,
    dir: &RunDir,
    checkpoint: &Path,
    stop_after: Option<usize>,
) -> Result<TrainOutcome, CliError> {
    let mut model = build_model(ctx, data, method, Some(checkpoint))?;
    let cfg = ctx.train_config();
    truncate_metrics(&dir.metrics(), model.store.step_count)?;
    let kme = match &model.cond {
        Conditioner::Kme(b) => Some(kme_rows(b)),
        _ => None,
    };
    let basis_ck = model.to_checkpoint()?;
    let mut done = 0usize;
    let mut io_err: Option<CliError> = None;
    let metrics = dir.metrics();
    let mut on_epoch = |rec: &EpochRecord, store: &ParameterStore| -> sno_core::Result<Control> {
        let row = MetricsRow {
            epoch: rec.epoch,
            step: rec.step,
            loss: rec.loss,
            split: "train".into(),
        };
        let mut ck = Checkpoint::new();
        let saved = ck
            .push_store(store)
            .and_then(|_| {
                for (name, m) in basis_ck.with_prefix(KME_PREFIX) {
                    ck.push(format!("{KME_PREFIX}{name}"), m.clone())?;
                }
                Ok(())
            })
            .map_err(CliError::from)
            .and_then(|_| append_csv(&metrics, &METRICS_HEADER, &[row]))
            .and_then(|_| write_atomic(checkpoint, &ck.to_bytes()).map_err(CliError::from));
        if let Err(e) = saved {
            io_err = Some(e);
            return Ok(Control::Stop);
        }
        done += 1;
        Ok(if stop_after.is_some_and(|n| done >= n) { Control::Stop } else { Control::Continue })
    };
    let (epochs, latent_steps, stopped_early) = match (&model.net, &model.cond) {
        (Net::Lattice(op), cond) => {
            let c = match cond {
                Conditioner::Kme(_) => Conditioning::Fixed(kme.as_ref().expect("kme rows")),
                Conditioner::Table(t) => Conditioning::Table(t),
                Conditioner::Prototype => return Err(CliError::Config("prototype embeddings need latent mode".into())),
            };
            let rep = train(op, &mut model.store, &data.train, c, &cfg, &mut on_epoch)?;
            (rep.epochs, Vec::new(), rep.stopped_early)
        }
        (Net::Latent { vae, op }, cond) => {
            let emb = match cond {
                Conditioner::Kme(_) => LatentEmbedding::Fixed(kme.as_ref().expect("kme rows")),
                Conditioner::Prototype => LatentEmbedding::Prototype,
                Conditioner::Table(_) => return Err(CliError::Config("the conditional table runs in lattice mode".into())),
            };
            let rep = joint_train(vae, Some(op), &mut model.store, &data.train, emb, &cfg, &mut on_epoch)?;
            (rep.epochs, rep.steps, rep.stopped_early)
        }
    };
    if let Some(e) = io_err {
        return Err(e);
    }
    if !latent_steps.is_empty() {
        let rows: Vec<(u64, f64, f64, f64, f64, f64)> =
            latent_steps.iter().map(|r| (r.step, r.total, r.vae, r.recon, r.kl, r.sgm)).collect();
        append_csv(&dir.latent_trace(), &LATENT_TRACE_HEADER, &rows)?;
    }
    Ok(TrainOutcome {
        model,
        epochs,
        latent_steps,
        stopped_early,
    })
}

pub fn load_model(ctx: &Ctx, data: &Dataset, method: EmbeddingChoice, checkpoint: &Path) -> Result<Model, CliError> {
    if !checkpoint.exists() {
        return Err(CliError::Io(format!("checkpoint {} not found", checkpoint.display())));
    }
    build_model(ctx, data, method, Some(checkpoint))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalRow {
    pub family_id: String,
    pub split: String,
    pub method: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub n: usize,
    pub m: usize,
    pub h: f64,
    pub mmd2: f64,
    pub mmd: f64,
    pub p: Option<f64>,
}

pub const EVAL_HEADER: [&str; 10] = ["family_id", "split", "method", "K", "n", "m", "h", "mmd2", "mmd", "p"];

pub fn method_name(m: EmbeddingChoice) -> &'static str {
    match m {
        EmbeddingChoice::KmePca => "kme_pca",
        EmbeddingChoice::Prototype => "prototype",
        EmbeddingChoice::Conditional => "conditional",
    }
}

/// Generated and fresh true samples of one family with their MMD row.
pub struct FamilyEval {
    pub row: EvalRow,
    pub generated: Matrix,
    pub truth: Matrix,
}

pub fn evaluate_family(
    ctx: &Ctx,
    data: &Dataset,
    model: &Model,
    rec: &FamilyRecord,
    u: &[f64],
    k: usize,
) -> Result<FamilyEval, CliError> {
    let n = ctx.cfg.eval.n_gen;
    let generated = model.generate(u, n, ctx.key_id("gen", &rec.id), &rec.id)?;
    let truth = data.draw(rec, n, ctx.key_id("fresh", &rec.id))?.data;
    let kernel = RbfKernel::new(median_bandwidth(&[&truth])?)?;
    let rep = mmd_unbiased(&kernel, &generated, &truth)?;
    let p = match ctx.cfg.eval.permutation_rounds {
        0 => None,
        r => Some(permutation_test(&kernel, &generated, &truth, r, ctx.key_id("perm", &rec.id))?),
    };
    Ok(FamilyEval {
        row: EvalRow {
            family_id: rec.id.clone(),
            split: rec.split.as_str().into(),
            method: method_name(model.method()).into(),
            k,
            n: rep.n,
            m: rep.m,
            h: rep.h,
            mmd2: rep.mmd2_unbiased,
            mmd: rep.mmd,
            p,
        },
        generated,
        truth,
    })
}

#[derive(Serialize)]
struct ScatterRow {
    x: f64,
    y: f64,
    source: &'static str,
}

pub const SCATTER_HEADER: [&str; 3] = ["x", "y", "source"];

/// `n` true rows followed by `n` generated rows.
pub fn write_scatter(path: &Path, truth: &Matrix, generated: &Matrix) -> Result<(), CliError> {
    let rows: Vec<ScatterRow> = truth
        .iter_rows()
        .map(|r| ScatterRow {
            x: r[0],
            y: r[1],
            source: "true",
        })
        .chain(generated.iter_rows().map(|r| ScatterRow {
            x: r[0],
            y: r[1],
            source: "generated",
        }))
        .collect();
    crate::artifacts::write_csv(path, &SCATTER_HEADER, &rows)
}

/// Outcome of evaluating one family; failures are kept, not raised.
pub type EvalResult = (String, Result<FamilyEval, CliError>);

/// MMD of the first `eval.train_families` training families (with their
/// training embeddings) and the first `eval.test_families` held-out
/// families (zero-shot, embedded from their stored samples).
pub fn evaluate(ctx: &Ctx, data: &Dataset, model: &Model) -> Vec<EvalResult> {
    let mut out = Vec::new();
    let train = data.records(SplitName::Train);
    for (i, rec) in train.iter().take(ctx.cfg.eval.train_families).enumerate() {
        let r = model
            .train_embedding(i, &data.train[i])
            .and_then(|u| evaluate_family(ctx, data, model, rec, &u, data.train[i].len()));
        out.push((rec.id.clone(), r));
    }
    if model.method() == EmbeddingChoice::Conditional {
        return out;
    }
    for (i, rec) in data.records(SplitName::Test).iter().take(ctx.cfg.eval.test_families).enumerate() {
        let batch = &data.test[i];
        let r = model
            .embed_samples(&batch.data)
            .and_then(|u| evaluate_family(ctx, data, model, rec, &u, batch.len()));
        out.push((rec.id.clone(), r));
    }
    out
}

struct FewShotAdapter<'a> {
    model: &'a Model,
    family_id: String,
}

impl FewShotModel for FewShotAdapter<'_> {
    fn method(&self) -> EmbeddingMethod {
        match self.model.method() {
            EmbeddingChoice::Prototype => EmbeddingMethod::Prototype,
            _ => EmbeddingMethod::KmePca,
        }
    }

    fn embed(&mut self, samples: &Matrix) -> sno_core::Result<Vec<f64>> {
        self.model.embed_samples(samples).map_err(to_core)
    }

    fn generate(&mut self, u: &[f64], n: usize, seed: u64) -> sno_core::Result<Matrix> {
        self.model.generate(u, n, seed, &self.family_id).map_err(to_core)
    }
}

fn to_core(e: CliError) -> sno_core::Error {
    match e {
        CliError::Core(e) => e,
        other => sno_core::Error::Validation(other.to_string()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FewShotRow {
    pub family_id: String,
    pub method: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub mmd2: f64,
    pub mmd: f64,
    pub gen_cov_trace: f64,
    pub true_cov_trace: f64,
}

pub const FEWSHOT_HEADER: [&str; 7] = ["family_id", "method", "K", "mmd2", "mmd", "gen_cov_trace", "true_cov_trace"];

impl FewShotRow {
    fn new(family_id: &str, r: &FewShotResult) -> Self {
        Self {
            family_id: family_id.into(),
            method: match r.method {
                EmbeddingMethod::KmePca => "kme_pca".into(),
                EmbeddingMethod::Prototype => "prototype".into(),
            },
            k: r.k,
            mmd2: r.mmd.mmd2_unbiased,
            mmd: r.mmd.mmd,
            gen_cov_trace: r.gen_cov_trace,
            true_cov_trace: r.true_cov_trace,
        }
    }
}

/// Few-shot ladder on the first `eval.fewshot_families` held-out families.
/// Embeddings use the leading `K` stored samples; generation seed and the
/// fresh comparison batch are those of `evaluate`, so `K` equal to the
/// stored count reproduces the held-out evaluation.
pub fn fewshot(ctx: &Ctx, data: &Dataset, model: &Model) -> Result<Vec<FewShotRow>, CliError> {
    let mut rows = Vec::new();
    for (i, rec) in data.records(SplitName::Test).iter().take(ctx.cfg.eval.fewshot_families).enumerate() {
        let fresh = data.draw(rec, ctx.cfg.eval.n_gen, ctx.key_id("fresh", &rec.id))?.data;
        let mut adapter = FewShotAdapter {
            model,
            family_id: rec.id.clone(),
        };
        let res = fewshot_protocol(
            &mut adapter,
            &data.test[i].data,
            &fresh,
            &ctx.cfg.eval.fewshot_ladder,
            ctx.cfg.eval.n_gen,
            ctx.key_id("gen", &rec.id),
        )?;
        rows.extend(res.iter().map(|r| FewShotRow::new(&rec.id, r)));
    }
    Ok(rows)
}

/// Per-K mean MMD and the standard error pooled over families.
pub fn ladder_summary(rows: &[FewShotRow], ladder: &[usize]) -> Vec<(usize, f64, f64)> {
    ladder
        .iter()
        .map(|&k| {
            let v: Vec<f64> = rows.iter().filter(|r| r.k == k).map(|r| r.mmd).collect();
            let n = v.len().max(1) as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = if v.len() > 1 {
                v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            (k, mean, (var / n).sqrt())
        })
        .collect()
}

/// True when each step down the ladder rises by at most one pooled
/// standard error of the two rungs.
pub fn non_increasing_within_se(summary: &[(usize, f64, f64)]) -> bool {
    summary
        .windows(2)
        .all(|w| w[1].1 <= w[0].1 + (w[0].2 * w[0].2 + w[1].2 * w[1].2).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BaselineRow {
    pub family_id: String,
    pub split: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub mmd: f64,
    pub gen_cov_trace: f64,
    pub true_cov_trace: f64,
}

pub const BASELINE_HEADER: [&str; 6] = ["family_id", "split", "K", "mmd", "gen_cov_trace", "true_cov_trace"];

/// Conditional-table model: MMD on training families and, for held-out
/// families, a K = 1 finetune of a fresh table row plus the network.
pub fn baseline_report(ctx: &Ctx, data: &Dataset, model: &Model) -> Result<Vec<BaselineRow>, CliError> {
    let Conditioner::Table(table) = &model.cond else {
        return Err(CliError::Config("baseline needs the conditional table model".into()));
    };
    let Net::Lattice(op) = &model.net else {
        return Err(CliError::Config("the conditional baseline runs in lattice mode".into()));
    };
    let mut rows = Vec::new();
    for (name, r) in evaluate(ctx, data, model) {
        let fe = r.map_err(|e| CliError::Failed(format!("family {name}: {e}")))?;
        rows.push(BaselineRow {
            family_id: name,
            split: fe.row.split.clone(),
            k: fe.row.k,
            mmd: fe.row.mmd,
            gen_cov_trace: fe.generated.covariance().trace(),
            true_cov_trace: fe.truth.covariance().trace(),
        });
    }
    let b = &ctx.cfg.baseline;
    for (i, rec) in data.records(SplitName::Test).iter().take(ctx.cfg.eval.fewshot_families).enumerate() {
        let one = SampleBatch::new(data.test[i].data.select_rows(&[0])?, rec.id.clone(), rec.seed);
        let cfg = TrainConfig {
            epochs: 1,
            steps_per_epoch: b.finetune_steps.max(1),
            lr: b.finetune_lr,
            lr_schedule: LrSchedule::Constant,
            seed: ctx.key_id("finetune", &rec.id),
            ..ctx.train_config()
        };
        let (ft, row) = finetune_conditional(op, &model.store, table, &one, &cfg)?;
        let u = row.row(&ft, 0)?;
        let n = ctx.cfg.eval.n_gen;
        let generated = sample_from_family(op, &ft, &u, n, model.sampler, model.steps, ctx.key_id("gen", &rec.id), &rec.id)?.data;
        let truth = data.draw(rec, n, ctx.key_id("fresh", &rec.id))?.data;
        let kernel = RbfKernel::new(median_bandwidth(&[&truth])?)?;
        rows.push(BaselineRow {
            family_id: rec.id.clone(),
            split: rec.split.as_str().into(),
            k: 1,
            mmd: mmd_unbiased(&kernel, &generated, &truth)?.mmd,
            gen_cov_trace: generated.covariance().trace(),
            true_cov_trace: truth.covariance().trace(),
        });
    }
    Ok(rows)
}
