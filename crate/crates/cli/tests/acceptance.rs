//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! `cargo test -p sno-cli --test acceptance -- 1 3 9` runs a subset.
//! `SNO_ACCEPTANCE_DIR` keeps the lattice and latent run directories
//! between invocations so finished training is resumed rather than redone.
//! `SNO_ACCEPTANCE_STRICT=1` turns any FAIL into a nonzero exit status.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sno_cli::artifacts::SplitName;
use sno_cli::pipeline::{
    self, baseline_report, evaluate, fewshot, ladder_summary, non_increasing_within_se, Ctx, Dataset, Model, Net,
    TrainOutcome,
};
use sno_cli::{EmbeddingChoice, ExperimentConfig, LoadedConfig};
use sno_core::distributions::{generate_family, sample_lattice_mixture, FamilySplit, SampleBatch};
use sno_core::embeddings::{build_kme_basis, median_bandwidth, RbfKernel};
use sno_core::eval_mmd::{mmd_unbiased, permutation_test};
use sno_core::latent_vae::{joint_train, LatentEmbedding, LatentNetSpec, LatentScoreNet, Vae, VaeSpec};
use sno_core::numerics::gradcheck::{check_input, check_parameters, dot, GradCheckReport};
use sno_core::numerics::{rng, Activation, Checkpoint, Matrix, ParameterStore};
use sno_core::score_operator::{
    draw_dsm_batch, dsm_objective, ConditionalTable, Control, Nomad, NomadSpec, ScoreNet, ScoreOperator,
};
use sno_core::sde::{
    forward_then_reverse_roundtrip, perturb, probability_flow_sample, reverse_sde_sample, SdeConfig, SdeKind,
};

type Outcome = Result<(bool, String), String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// Loads a shipped config with its output directory moved to `out`.
fn load_config(name: &str, out: &Path, edit: impl FnOnce(&mut ExperimentConfig)) -> Result<Ctx, String> {
    let path = workspace_root().join("configs").join(name);
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut cfg = ExperimentConfig::parse(&text).map_err(err)?;
    cfg.output_dir = out.to_path_buf();
    edit(&mut cfg);
    cfg.validate().map_err(err)?;
    let bytes = cfg.to_toml().into_bytes();
    let loaded = LoadedConfig {
        hash: sno_cli::config::hash_bytes(&bytes),
        config: cfg,
        bytes,
    };
    Ok(Ctx::new(&loaded, None))
}

/// A persistent directory under `SNO_ACCEPTANCE_DIR`, or a fresh temporary one.
struct RunRoot {
    path: PathBuf,
    _tmp: Option<tempfile::TempDir>,
}

impl RunRoot {
    fn new(name: &str) -> Result<Self, String> {
        match std::env::var_os("SNO_ACCEPTANCE_DIR") {
            Some(root) => {
                let path = PathBuf::from(root).join(name);
                std::fs::create_dir_all(&path).map_err(err)?;
                Ok(Self { path, _tmp: None })
            }
            None => {
                let tmp = tempfile::tempdir().map_err(err)?;
                Ok(Self {
                    path: tmp.path().join(name),
                    _tmp: Some(tmp),
                })
            }
        }
    }
}

// ---------------------------------------------------------------- criterion 1

/// Moves freshly initialized parameters to a generic point; zero biases put
/// ReLU units exactly on their kink, where central differences are meaningless.
fn jitter(store: &mut ParameterStore, seed: u64) {
    for (i, (_, p)) in store.iter_mut().enumerate() {
        let (r, c) = p.value.shape();
        let noise = rng::standard_normal_matrix(r, c, &mut rng::stream(seed, &[99, i as u64]));
        p.value.axpy(0.1, &noise).expect("same shape");
    }
}

fn nomad_check(spec: NomadSpec, sde: SdeConfig, seed: u64) -> Result<GradCheckReport, String> {
    let (d, c) = (spec.data_dim, spec.cond_dim);
    let op = ScoreOperator::new(Nomad::new(spec).map_err(err)?, sde).map_err(err)?;
    let mut store = ParameterStore::new();
    op.net.init(&mut store, &mut rng::stream(seed, &[0])).map_err(err)?;
    jitter(&mut store, seed);
    let sets: Vec<SampleBatch> = (0..3)
        .map(|i| SampleBatch::new(rng::standard_normal_matrix(12, d, &mut rng::stream(seed, &[1, i])), format!("f{i}"), i))
        .collect();
    let refs: Vec<&SampleBatch> = sets.iter().collect();
    let batch = draw_dsm_batch(&refs, 4, &sde, seed, 0).map_err(err)?;
    let cond = rng::standard_normal_matrix(3, c, &mut rng::stream(seed, &[2]));
    let out = dsm_objective(&op, &mut store, &cond, &batch, true).map_err(err)?;
    let loss = |s: &ParameterStore| {
        let mut s = s.clone();
        Ok(dsm_objective(&op, &mut s, &cond, &batch, false)?.loss)
    };
    let mut rep = check_parameters(&store, &loss, 1e-6, 8, seed).map_err(err)?;
    let fc = |m: &Matrix| {
        let mut s = store.clone();
        Ok(dsm_objective(&op, &mut s, m, &batch, false)?.loss)
    };
    rep.merge(check_input(&cond, &out.dcond, &fc, 1e-6, "cond").map_err(err)?);
    let fx = |x0: &Matrix| {
        let mut s = store.clone();
        let mut b = batch.clone();
        b.x0 = x0.clone();
        Ok(dsm_objective(&op, &mut s, &cond, &b, false)?.loss)
    };
    rep.merge(check_input(&batch.x0, &out.dx0, &fx, 1e-6, "x0").map_err(err)?);
    Ok(rep)
}

fn vae_check(d: usize, dz: usize, depth: usize, beta: f64, seed: u64) -> Result<GradCheckReport, String> {
    let spec = VaeSpec {
        hidden: 10,
        depth,
        beta,
        ..VaeSpec::new(d, dz)
    };
    let vae = Vae::new(spec).map_err(err)?;
    let mut store = ParameterStore::new();
    vae.init(&mut store, &mut rng::stream(seed, &[0])).map_err(err)?;
    jitter(&mut store, seed);
    let x = rng::standard_normal_matrix(5, d, &mut rng::stream(seed, &[1])).map(|v| 1.0 / (1.0 + (-v).exp()));
    let eps = rng::standard_normal_matrix(5, dz, &mut rng::stream(seed, &[2]));
    let extra = rng::standard_normal_matrix(5, dz, &mut rng::stream(seed, &[3]));
    let (_, tape) = vae.forward_tape(&store, &x, &eps).map_err(err)?;
    vae.backward(&mut store, &tape, Some(&extra)).map_err(err)?;
    // the score-matching term enters the VAE only through z
    let loss = |s: &ParameterStore| {
        let (l, t) = vae.forward_tape(s, &x, &eps)?;
        Ok(l.total + dot(&extra, &t.z()))
    };
    check_parameters(&store, &loss, 1e-6, 8, seed).map_err(err)
}

fn latent_net_check(dz: usize, c: usize, width: usize, sde: SdeConfig, seed: u64) -> Result<GradCheckReport, String> {
    let spec = LatentNetSpec {
        width,
        time_features: 3,
        ..LatentNetSpec::scaled(dz, c)
    };
    let op = ScoreOperator::new(LatentScoreNet::new(spec).map_err(err)?, sde).map_err(err)?;
    let mut store = ParameterStore::new();
    op.net.init(&mut store, &mut rng::stream(seed, &[0])).map_err(err)?;
    jitter(&mut store, seed);
    let sets: Vec<SampleBatch> = (0..3)
        .map(|i| SampleBatch::new(rng::standard_normal_matrix(10, dz, &mut rng::stream(seed, &[1, i])), format!("f{i}"), i))
        .collect();
    let refs: Vec<&SampleBatch> = sets.iter().collect();
    let batch = draw_dsm_batch(&refs, 3, &sde, seed, 0).map_err(err)?;
    let cond = rng::standard_normal_matrix(3, c, &mut rng::stream(seed, &[2]));
    let out = dsm_objective(&op, &mut store, &cond, &batch, true).map_err(err)?;
    let loss = |s: &ParameterStore| {
        let mut s = s.clone();
        Ok(dsm_objective(&op, &mut s, &cond, &batch, false)?.loss)
    };
    let mut rep = check_parameters(&store, &loss, 1e-6, 8, seed).map_err(err)?;
    let fc = |m: &Matrix| {
        let mut s = store.clone();
        Ok(dsm_objective(&op, &mut s, m, &batch, false)?.loss)
    };
    rep.merge(check_input(&cond, &out.dcond, &fc, 1e-6, "cond").map_err(err)?);
    let fx = |x0: &Matrix| {
        let mut s = store.clone();
        let mut b = batch.clone();
        b.x0 = x0.clone();
        Ok(dsm_objective(&op, &mut s, &cond, &b, false)?.loss)
    };
    rep.merge(check_input(&batch.x0, &out.dx0, &fx, 1e-6, "x0").map_err(err)?);
    Ok(rep)
}

fn table_check(rows: usize, c: usize, sde: SdeConfig, seed: u64) -> Result<GradCheckReport, String> {
    let spec = NomadSpec {
        width: 10,
        depth: 2,
        branch_out: 5,
        trunk_out: 6,
        fourier_features: 4,
        fourier_sigma: 1.0,
        ..NomadSpec::desk(2, c)
    };
    let op = ScoreOperator::new(Nomad::new(spec).map_err(err)?, sde).map_err(err)?;
    let mut store = ParameterStore::new();
    op.net.init(&mut store, &mut rng::stream(seed, &[0])).map_err(err)?;
    jitter(&mut store, seed);
    let table = ConditionalTable::new("table", rows, c);
    table.init(&mut store, &mut rng::stream(seed, &[1])).map_err(err)?;
    jitter(&mut store, seed);
    let sets: Vec<SampleBatch> = (0..2)
        .map(|i| SampleBatch::new(rng::standard_normal_matrix(8, 2, &mut rng::stream(seed, &[2, i])), format!("f{i}"), i))
        .collect();
    let chosen = [rows - 1, 0];
    let refs: Vec<&SampleBatch> = sets.iter().collect();
    let batch = draw_dsm_batch(&refs, 3, &sde, seed, 0).map_err(err)?;
    let loss = |s: &ParameterStore| {
        let mut s = s.clone();
        let cond = table.matrix(&s)?.select_rows(&chosen)?;
        Ok(dsm_objective(&op, &mut s, &cond, &batch, false)?.loss)
    };
    let cond = table.matrix(&store).map_err(err)?.select_rows(&chosen).map_err(err)?;
    let out = dsm_objective(&op, &mut store, &cond, &batch, true).map_err(err)?;
    let mut g = Matrix::zeros(rows, c);
    g.scatter_add_rows(&chosen, &out.dcond).map_err(err)?;
    store.accumulate_grad("table", &g).map_err(err)?;
    check_parameters(&store, &loss, 1e-6, 8, seed).map_err(err)
}

fn criterion_1() -> Outcome {
    let ve = SdeConfig::ve(25.0);
    let vp = SdeConfig::vp(0.1, 20.0);
    let small = |d: usize, c: usize, width: usize, depth: usize, act: Activation| NomadSpec {
        width,
        depth,
        branch_out: width / 2 + 1,
        trunk_out: width / 2 + 2,
        fourier_features: 4,
        fourier_sigma: 2.0,
        activation: act,
        ..NomadSpec::desk(d, c)
    };
    let mut reports: Vec<(String, GradCheckReport)> = Vec::new();
    let nomad = [
        (2, 3, 12, 2, Activation::Gelu, ve),
        (2, 3, 12, 2, Activation::Gelu, vp),
        (2, 5, 8, 3, Activation::Gelu, ve),
        (3, 2, 10, 2, Activation::LogSigmoid, vp),
        (1, 4, 9, 4, Activation::Gelu, vp),
        (4, 1, 7, 2, Activation::LogSigmoid, ve),
        (2, 8, 16, 2, Activation::Gelu, vp),
        (5, 3, 6, 3, Activation::Gelu, ve),
    ];
    for (k, (d, c, w, depth, act, sde)) in nomad.into_iter().enumerate() {
        reports.push((format!("nomad {k}"), nomad_check(small(d, c, w, depth, act), sde, 100 + k as u64)?));
    }
    let vae = [(3, 1, 2, 1.0), (4, 2, 3, 2048.0), (6, 3, 2, 0.5), (5, 2, 4, 10.0), (8, 4, 3, 1.0), (2, 1, 1, 3.0)];
    for (k, (d, dz, depth, beta)) in vae.into_iter().enumerate() {
        reports.push((format!("vae {k}"), vae_check(d, dz, depth, beta, 200 + k as u64)?));
    }
    let latent = [(2, 3, 8, ve), (3, 2, 6, vp), (4, 4, 10, vp), (2, 1, 4, ve)];
    for (k, (dz, c, w, sde)) in latent.into_iter().enumerate() {
        reports.push((format!("latent net {k}"), latent_net_check(dz, c, w, sde, 300 + k as u64)?));
    }
    for (k, (rows, c, sde)) in [(3, 3, ve), (5, 2, vp)].into_iter().enumerate() {
        reports.push((format!("table {k}"), table_check(rows, c, sde, 400 + k as u64)?));
    }
    let (worst_name, worst) = reports
        .iter()
        .max_by(|a, b| a.1.max_rel_err.total_cmp(&b.1.max_rel_err))
        .expect("non-empty");
    let probes: usize = reports.iter().map(|r| r.1.checked).sum();
    let ok = reports.len() >= 20 && worst.max_rel_err < 1e-4;
    Ok((
        ok,
        format!(
            "{} configurations, {probes} probes, max rel err {:.2e} (< 1e-4) in {worst_name} at {}",
            reports.len(),
            worst.max_rel_err,
            worst.worst
        ),
    ))
}

// ---------------------------------------------------------------- criterion 2

/// Closed-form perturbation kernel written out independently of the library.
fn oracle_kernel(kind: SdeKind, t: f64) -> (f64, f64) {
    match kind {
        SdeKind::Ve => {
            let s: f64 = 25.0;
            (1.0, ((s.powf(2.0 * t) - 1.0) / (2.0 * s.ln())).sqrt())
        }
        SdeKind::Vp => {
            let b = 0.1 * t + 0.5 * (20.0 - 0.1) * t * t;
            ((-0.5 * b).exp(), (1.0 - (-b).exp()).sqrt())
        }
    }
}

fn criterion_2() -> Outcome {
    let n = 100_000;
    let x0_val = 1.5;
    let bound = 4.0 / (n as f64).sqrt();
    let mut ok = true;
    let mut worst = 0.0f64;
    let mut closed_form_gap = 0.0f64;
    for (si, sde) in [SdeConfig::ve(25.0), SdeConfig::vp(0.1, 20.0)].into_iter().enumerate() {
        for (ti, t) in [0.1, 0.5, 1.0].into_iter().enumerate() {
            let (m, s) = oracle_kernel(sde.kind, t);
            closed_form_gap = closed_form_gap
                .max((sde.mean_coeff(t) - m).abs())
                .max((sde.std(t) - s).abs() / s);
            let x0 = Matrix::filled(n, 1, x0_val);
            let noise = rng::standard_normal_matrix(n, 1, &mut rng::stream(7, &[si as u64, ti as u64]));
            let xt = perturb(&sde, &x0, t, &noise).map_err(err)?;
            let mean = xt.sum() / n as f64;
            let sd = (xt.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
            // deviations in units of the kernel std
            let dm = (mean - m * x0_val).abs() / s;
            let ds = (sd - s).abs() / s;
            worst = worst.max(dm).max(ds);
            ok &= dm < bound && ds < bound;
        }
    }
    ok &= closed_form_gap < 1e-12;
    Ok((
        ok,
        format!(
            "VE(25) and VP(0.1, 20) at t in {{0.1, 0.5, 1}}, n = 1e5: worst moment deviation {worst:.2e} std (< 4/sqrt(n) = {bound:.2e}); closed-form gap {closed_form_gap:.1e}"
        ),
    ))
}

// ---------------------------------------------------------------- criterion 3

fn moments(x: &Matrix) -> (Vec<f64>, Matrix) {
    (x.column_means().into_vec(), x.covariance())
}

fn criterion_3() -> Outcome {
    let n = 5000;
    let steps = 1000;
    let mut ok = true;
    let mut lines = Vec::new();
    for (sde, var0, label) in [(SdeConfig::vp(0.1, 20.0), 1.0, "VP N(0,I)"), (SdeConfig::ve(25.0), 4.0, "VE N(0,4I)")] {
        // exact score of the marginal N(0, (m^2 var0 + s^2) I)
        let mut score = |x: &Matrix, t: f64| {
            let (m, s) = oracle_kernel(sde.kind, t);
            Ok(x.map(|v| -v / (m * m * var0 + s * s)))
        };
        for (name, x) in [
            ("ODE", probability_flow_sample(&sde, &mut score, n, 2, steps, 11).map_err(err)?),
            ("SDE", reverse_sde_sample(&sde, &mut score, n, 2, steps, 12).map_err(err)?),
        ] {
            let (mean, cov) = moments(&x);
            let mean_err = mean.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let mut cov_err = 0.0f64;
            let mut signed = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    let e = cov.get(i, j) - if i == j { var0 } else { 0.0 };
                    if e.abs() > cov_err {
                        cov_err = e.abs();
                        signed = e;
                    }
                }
            }
            let pass = mean_err < 0.05 && cov_err < 0.1;
            ok &= pass;
            lines.push(format!(
                "{label} {name}: |mean| {mean_err:.3}, cov err {signed:+.3}{}",
                if pass { "" } else { " (out of tolerance)" }
            ));
        }
        let x0 = rng::standard_normal_matrix(64, 2, &mut rng::stream(13, &[])).map(|v| v * var0.sqrt());
        let back = forward_then_reverse_roundtrip(&sde, &mut score, &x0, 1000).map_err(err)?;
        let rt = back.max_abs_diff(&x0).map_err(err)?;
        ok &= rt < 1e-2;
        lines.push(format!("{label} roundtrip {rt:.1e}"));
    }
    Ok((ok, lines.join("; ")))
}

// ---------------------------------------------------------------- criterion 4

fn brute_mmd2(h: f64, x: &Matrix, y: &Matrix) -> f64 {
    let k = |a: &[f64], b: &[f64]| {
        let d2: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
        (-d2 / (2.0 * h * h)).exp()
    };
    let (n, m) = (x.rows(), y.rows());
    let mut xx = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                xx += k(x.row(i), x.row(j));
            }
        }
    }
    let mut yy = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                yy += k(y.row(i), y.row(j));
            }
        }
    }
    let mut xy = 0.0;
    for i in 0..n {
        for j in 0..m {
            xy += k(x.row(i), y.row(j));
        }
    }
    xx / (n * (n - 1)) as f64 + yy / (m * (m - 1)) as f64 - 2.0 * xy / (n * m) as f64
}

fn criterion_4() -> Outcome {
    let mut gap = 0.0f64;
    for (k, (n, m, d)) in [(2, 2, 1), (5, 17, 2), (50, 100, 3), (100, 100, 2), (100, 37, 5), (64, 64, 1)]
        .into_iter()
        .enumerate()
    {
        let x = rng::standard_normal_matrix(n, d, &mut rng::stream(21, &[k as u64, 0]));
        let y = rng::standard_normal_matrix(m, d, &mut rng::stream(21, &[k as u64, 1])).map(|v| 0.7 * v + 0.3);
        let h = 0.5 + 0.4 * k as f64;
        let rep = mmd_unbiased(&RbfKernel::new(h).map_err(err)?, &x, &y).map_err(err)?;
        gap = gap.max((rep.mmd2_unbiased - brute_mmd2(h, &x, &y)).abs());
    }
    let trials = 200;
    let mut rejected = 0;
    for trial in 0..trials {
        let x = rng::standard_normal_matrix(50, 2, &mut rng::stream(22, &[trial, 0]));
        let y = rng::standard_normal_matrix(50, 2, &mut rng::stream(22, &[trial, 1]));
        let h = median_bandwidth(&[&x, &y]).map_err(err)?;
        let p = permutation_test(&RbfKernel::new(h).map_err(err)?, &x, &y, 200, trial).map_err(err)?;
        if p <= 0.05 {
            rejected += 1;
        }
    }
    let rate = rejected as f64 / trials as f64;
    let ok = gap < 1e-12 && (0.01..=0.10).contains(&rate);
    Ok((
        ok,
        format!("brute-force gap {gap:.1e} (< 1e-12); null reject rate at alpha 0.05 over {trials} trials {rate:.3} (in [0.01, 0.10])"),
    ))
}

// ---------------------------------------------------------------- criterion 5

fn criterion_5() -> Outcome {
    let n = 100;
    let specs = generate_family(FamilySplit::Train, n, 31).map_err(err)?;
    let refs: Vec<Matrix> = specs
        .iter()
        .enumerate()
        .map(|(i, s)| sample_lattice_mixture(s, 50, i as u64).map(|b| b.data))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    let h = median_bandwidth(&refs.iter().collect::<Vec<_>>()).map_err(err)?;
    let kernel = RbfKernel::new(h).map_err(err)?;
    let nx = 16;
    let basis = build_kme_basis(&kernel, &refs, nx).map_err(err)?;
    let centered = basis.centered_gram();
    let residual = basis.spectrum.max_residual(&centered);
    let recon = basis.spectrum.reconstruct(n).max_abs_diff(&centered).map_err(err)?;
    let eigen_proj = basis.reference_projection();
    let mut proj_gap = 0.0f64;
    for (i, r) in refs.iter().enumerate() {
        let u = basis.embed(r).map_err(err)?.u;
        for (k, v) in u.iter().enumerate() {
            proj_gap = proj_gap.max((v - eigen_proj.get(k, i)).abs());
        }
    }
    let full_rank_rejected = build_kme_basis(&kernel, &refs, n).is_err();
    let ok = residual < 1e-8 && recon < 1e-8 && proj_gap < 1e-8;
    Ok((
        ok,
        format!(
            "N = {n}: eigen residual {residual:.1e}, reconstruction {recon:.1e}, projection paths {proj_gap:.1e} at N_x = {nx} (all < 1e-8); N_x = N {}",
            if full_rank_rejected { "raises the rank error" } else { "builds" }
        ),
    ))
}

// ----------------------------------------------------------- criteria 6 to 8

struct LatticeRun {
    ctx: Ctx,
    data: Dataset,
    model: Model,
    train_secs: f64,
    _root: RunRoot,
}

fn lattice_run() -> Result<LatticeRun, String> {
    let root = RunRoot::new("lattice")?;
    let ctx = load_config("lattice.toml", &root.path, |_| {})?;
    let t = Instant::now();
    let data = if ctx.dir.data_manifest().exists() {
        pipeline::load_data(&ctx).map_err(err)?
    } else {
        pipeline::generate_data(&ctx).map_err(err)?;
        pipeline::load_data(&ctx).map_err(err)?
    };
    let TrainOutcome { model, .. } =
        pipeline::train_model(&ctx, &data, EmbeddingChoice::KmePca, &ctx.dir, &ctx.dir.checkpoint(), None)
            .map_err(err)?;
    Ok(LatticeRun {
        ctx,
        data,
        model,
        train_secs: t.elapsed().as_secs_f64(),
        _root: root,
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn threads() -> usize {
    rayon::current_num_threads()
}

fn criterion_6(run: &LatticeRun) -> Outcome {
    let t = Instant::now();
    let results = evaluate(&run.ctx, &run.data, &run.model);
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut outside = 0usize;
    for (id, r) in results {
        let fe = r.map_err(|e| format!("{id}: {e}"))?;
        outside += fe.generated.iter_rows().filter(|x| x[0].abs() > 4.0 || x[1].abs() > 4.0).count();
        if fe.row.split == SplitName::Train.as_str() {
            train.push(fe.row.mmd);
        } else {
            test.push(fe.row.mmd);
        }
    }
    let (tr, te) = (mean(&train), mean(&test));
    let ok = train.len() == 10 && test.len() == 10 && tr < 0.05 && te < 0.08;
    let cfg = &run.ctx.cfg;
    Ok((
        ok,
        format!(
            "{} train families x {} samples, {} steps: mean MMD train {tr:.4} (< 0.05), held-out {te:.4} (< 0.08); {outside} generated points outside [-4, 4]^2; train {:.0} s + eval {:.0} s on {} thread(s), budget 45 min at 8",
            cfg.lattice.train_families,
            cfg.lattice.samples_per_family,
            cfg.train.total_steps(),
            run.train_secs,
            t.elapsed().as_secs_f64(),
            threads()
        ),
    ))
}

fn criterion_8(run: &LatticeRun) -> Result<((bool, String), f64), String> {
    let t = Instant::now();
    let rows = fewshot(&run.ctx, &run.data, &run.model).map_err(err)?;
    let summary = ladder_summary(&rows, &run.ctx.cfg.eval.fewshot_ladder);
    let ok = run.ctx.cfg.eval.fewshot_ladder == [1, 10, 100, 1000]
        && run.ctx.cfg.eval.fewshot_families == 5
        && non_increasing_within_se(&summary);
    let k1: Vec<f64> = rows.iter().filter(|r| r.k == 1).map(|r| r.gen_cov_trace / r.true_cov_trace).collect();
    let ladder: Vec<String> = summary.iter().map(|(k, m, se)| format!("K={k} {m:.4}+-{se:.4}")).collect();
    Ok((
        (
            ok,
            format!(
                "5 held-out families: {} (non-increasing within one pooled SE); {:.0} s",
                ladder.join(", "),
                t.elapsed().as_secs_f64()
            ),
        ),
        mean(&k1),
    ))
}

fn criterion_7(run: &LatticeRun, sno_k1_retention: Option<f64>) -> Outcome {
    let t = Instant::now();
    let bdir = run.ctx.dir.baseline_dir();
    let out = pipeline::train_model(&run.ctx, &run.data, EmbeddingChoice::Conditional, &bdir, &bdir.checkpoint(), None)
        .map_err(err)?;
    let train_secs = t.elapsed().as_secs_f64();
    let no_zero_shot = out.model.embed_samples(&run.data.test[0].data).is_err();
    let rows = baseline_report(&run.ctx, &run.data, &out.model).map_err(err)?;
    let cond_train: Vec<f64> = rows.iter().filter(|r| r.split == "train").map(|r| r.mmd).collect();
    let retained: Vec<f64> = rows
        .iter()
        .filter(|r| r.split == "test")
        .map(|r| r.gen_cov_trace / r.true_cov_trace)
        .collect();
    let sno_train: Vec<f64> = evaluate(&run.ctx, &run.data, &run.model)
        .into_iter()
        .filter_map(|(_, r)| r.ok())
        .filter(|fe| fe.row.split == "train")
        .map(|fe| fe.row.mmd)
        .collect();
    let sno_k1 = match sno_k1_retention {
        Some(v) => v,
        None => {
            let rows = fewshot(&run.ctx, &run.data, &run.model).map_err(err)?;
            mean(&rows.iter().filter(|r| r.k == 1).map(|r| r.gen_cov_trace / r.true_cov_trace).collect::<Vec<_>>())
        }
    };
    let (ct, st, ret) = (mean(&cond_train), mean(&sno_train), mean(&retained));
    let ok = no_zero_shot && ct <= 2.0 * st && ret < 0.05 && sno_k1 > 0.20;
    Ok((
        ok,
        format!(
            "training-family MMD conditional {ct:.4} vs SNO {st:.4} (within 2x); zero-shot path {}; K=1 covariance trace retained: finetuned conditional {:.1}% (< 5%), SNO {:.1}% (> 20%); train {train_secs:.0} s, total {:.0} s",
            if no_zero_shot { "absent" } else { "PRESENT" },
            100.0 * ret,
            100.0 * sno_k1,
            t.elapsed().as_secs_f64()
        ),
    ))
}

// ---------------------------------------------------------------- criterion 9

fn smoothed_decrease(trace: &[f64], window: usize) -> f64 {
    let w = window.min(trace.len() / 2).max(1);
    let head = mean(&trace[..w]);
    let tail = mean(&trace[trace.len() - w..]);
    1.0 - tail / head
}

fn criterion_9() -> Outcome {
    let t = Instant::now();
    let root = RunRoot::new("latent")?;
    let ctx = load_config("latent.toml", &root.path, |_| {})?;
    if !ctx.dir.data_manifest().exists() {
        pipeline::generate_data(&ctx).map_err(err)?;
    }
    let data = pipeline::load_data(&ctx).map_err(err)?;
    // a resumed, already finished run has no trace in memory; read the file
    pipeline::train_model(&ctx, &data, EmbeddingChoice::Prototype, &ctx.dir, &ctx.dir.checkpoint(), None)
        .map_err(err)?;
    let (total, kl) = read_latent_trace(&ctx.dir.latent_trace())?;
    let steps = total.len();
    let decrease = smoothed_decrease(&total, 100);
    let kl_finite = kl.iter().all(|v| v.is_finite());
    let cfg = &ctx.cfg;

    // gamma = 0 joint run against the VAE-only run from the same start
    let gctx = load_config("latent.toml", &root.path.join("gamma0"), |c| c.latent.gamma = 0.0)?;
    let model = pipeline::build_model(&gctx, &data, EmbeddingChoice::Prototype, None).map_err(err)?;
    let Net::Latent { vae, op } = &model.net else {
        return Err("latent config built a lattice model".into());
    };
    let gcfg = sno_core::score_operator::TrainConfig {
        epochs: 2,
        ..gctx.train_config()
    };
    let mut joint_store = model.store.clone();
    let mut vae_store = model.store.clone();
    let mut cont = |_: &sno_core::score_operator::EpochRecord, _: &ParameterStore| Ok(Control::Continue);
    let joint = joint_train(vae, Some(op), &mut joint_store, &data.train, LatentEmbedding::Prototype, &gcfg, &mut cont)
        .map_err(err)?;
    let only = joint_train::<LatentScoreNet>(vae, None, &mut vae_store, &data.train, LatentEmbedding::Prototype, &gcfg, &mut cont)
        .map_err(err)?;
    let mut gap = 0.0f64;
    for (a, b) in joint.vae_trace().iter().zip(only.vae_trace()) {
        gap = gap.max((a - b).abs());
    }
    for name in vae_store.names().filter(|n| n.starts_with("vae.")) {
        let a = joint_store.value(name).map_err(err)?;
        let b = vae_store.value(name).map_err(err)?;
        gap = gap.max(a.max_abs_diff(b).map_err(err)?);
    }
    let same_len = joint.vae_trace().len() == only.vae_trace().len();

    let ok = steps >= 5000
        && data.train.len() == 10
        && cfg.latent.latent_dim == 16
        && decrease >= 0.30
        && kl_finite
        && same_len
        && gap < 1e-12;
    Ok((
        ok,
        format!(
            "{} families x {} samples, d_z = {}, {steps} steps: smoothed total-loss decrease {:.1}% (>= 30%), KL finite {kl_finite}; gamma = 0 vs VAE-only over {} steps max gap {gap:.1e} (< 1e-12); {:.0} s",
            data.train.len(),
            cfg.digits.samples_per_family,
            cfg.latent.latent_dim,
            100.0 * decrease,
            joint.vae_trace().len(),
            t.elapsed().as_secs_f64()
        ),
    ))
}

fn read_latent_trace(path: &Path) -> Result<(Vec<f64>, Vec<f64>), String> {
    let mut r = csv::Reader::from_path(path).map_err(err)?;
    let mut total = Vec::new();
    let mut kl = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(err)?;
        let field = |i: usize| rec.get(i).unwrap_or("nan").parse::<f64>().unwrap_or(f64::NAN);
        total.push(field(1));
        kl.push(field(4));
    }
    Ok((total, kl))
}

// --------------------------------------------------------------- criterion 10

fn criterion_10() -> Outcome {
    let t = Instant::now();
    let tiny = |c: &mut ExperimentConfig| {
        c.lattice.train_families = 6;
        c.lattice.test_families = 2;
        c.lattice.samples_per_family = 60;
        c.embedding.kme_points = 30;
        c.embedding.n_components = 4;
        c.model.width = 16;
        c.model.depth = 2;
        c.model.branch_out = 8;
        c.model.trunk_out = 8;
        c.model.fourier_features = 8;
        c.train.epochs = 3;
        c.train.steps_per_epoch = 5;
        c.train.batch_distributions = 4;
        c.train.batch_samples = 8;
    };
    let tmp = tempfile::tempdir().map_err(err)?;
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let ctx = load_config("lattice.toml", &tmp.path().join(run), tiny)?;
        pipeline::generate_data(&ctx).map_err(err)?;
        let data = pipeline::load_data(&ctx).map_err(err)?;
        let out = pipeline::train_model(&ctx, &data, EmbeddingChoice::KmePca, &ctx.dir, &ctx.dir.checkpoint(), None)
            .map_err(err)?;
        let read = |p: PathBuf| std::fs::read(&p).map_err(|e| format!("{}: {e}", p.display()));
        outputs.push((
            read(ctx.dir.checkpoint())?,
            read(ctx.dir.metrics())?,
            read(ctx.dir.train_samples())?,
            out.model.store,
        ));
    }
    let (a, b) = (&outputs[0], &outputs[1]);
    let identical = a.0 == b.0 && a.1 == b.1 && a.2 == b.2;
    let ck = Checkpoint::from_bytes(&a.0).map_err(err)?;
    let reencoded = ck.to_bytes() == a.0;
    let restored = ck.to_store().map_err(err)?;
    let bits = |s: &ParameterStore| -> Vec<(String, Vec<u64>)> {
        s.iter()
            .map(|(n, p)| (n.to_owned(), p.value.as_slice().iter().map(|v| v.to_bits()).collect()))
            .collect()
    };
    let params_exact = bits(&restored) == bits(&a.3) && restored.step_count == a.3.step_count;
    let ok = identical && reencoded && params_exact;
    Ok((
        ok,
        format!(
            "two runs byte-identical (checkpoint, metrics, data) {identical}; checkpoint re-encodes bit-exact {reencoded}; restored parameters bit-exact {params_exact}; {:.1} s",
            t.elapsed().as_secs_f64()
        ),
    ))
}

// ------------------------------------------------------------------- driver

fn report(n: usize, name: &str, outcome: Outcome, failures: &mut usize) {
    let (ok, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    if !ok {
        *failures += 1;
    }
    println!("criterion {n:>2} {} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
}

fn main() {
    let wanted: BTreeSet<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let mut failures = 0;
    let quick: [(usize, &str, fn() -> Outcome); 6] = [
        (1, "gradient integrity", criterion_1),
        (2, "SDE closed forms", criterion_2),
        (3, "samplers on analytic scores", criterion_3),
        (4, "MMD estimator", criterion_4),
        (5, "KME-PCA machinery", criterion_5),
        (10, "determinism and persistence", criterion_10),
    ];
    for (n, name, f) in quick {
        if run(n) {
            report(n, name, f(), &mut failures);
        }
    }
    if run(9) {
        report(9, "joint latent objective", criterion_9(), &mut failures);
    }
    if run(6) || run(7) || run(8) {
        match lattice_run() {
            Ok(lr) => {
                if run(6) {
                    report(6, "desk-scale lattice operator", criterion_6(&lr), &mut failures);
                }
                let mut k1 = None;
                if run(8) {
                    let r = criterion_8(&lr).map(|(o, v)| {
                        k1 = Some(v);
                        o
                    });
                    report(8, "few-shot trend", r, &mut failures);
                }
                if run(7) {
                    report(7, "conditional baseline contrast", criterion_7(&lr, k1), &mut failures);
                }
            }
            Err(e) => {
                for (n, name) in [(6, "desk-scale lattice operator"), (8, "few-shot trend"), (7, "conditional baseline contrast")] {
                    if run(n) {
                        report(n, name, Err(format!("training failed: {e}")), &mut failures);
                    }
                }
            }
        }
    }
    println!("acceptance: {failures} criterion(s) failed");
    if failures > 0 && std::env::var("SNO_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
