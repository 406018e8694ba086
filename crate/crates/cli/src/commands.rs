//! The five subcommands. Each writes into its own run directory.

use std::path::Path;

use geobridge_core::distributions::{
    ingest_latlon_csv, sample_uniform, sample_vmf_mixture, sample_wrapped_gaussian_so3, MixtureSpec, SampleSet,
};
use geobridge_core::eval::{convergence_bench, kl_knn, w2_empirical, BenchReport, MetricsReport};
use geobridge_core::fields::{checkpoint, train, FieldNet, TrainReport, VectorField};
use geobridge_core::samplers::{nll_ode, sample, NllConfig, Scheme};
use geobridge_core::{rng, Error, Result};

use crate::config::{Route, RunConfig, TargetKind};
use crate::run::RunDir;

pub const TARGET_FILE: &str = "target.csv";
pub const PRIOR_FILE: &str = "prior.csv";
pub const VELOCITY_FILE: &str = "velocity.ckpt";
pub const SCORE_FILE: &str = "score.ckpt";
pub const TRACE_FILE: &str = "loss_trace.csv";
pub const SAMPLES_FILE: &str = "samples.csv";
/// Samples on the model sphere (SO(3) routes only).
pub const SAMPLES_MODEL_FILE: &str = "samples_s5.csv";
pub const INFO_FILE: &str = "info.txt";
pub const METRICS_FILE: &str = "metrics.txt";
pub const BENCH_FILE: &str = "bench.csv";

/// Target samples in the data manifold, synthesized or read from disk.
pub fn target_samples(cfg: &RunConfig) -> Result<SampleSet> {
    let t = &cfg.target;
    let m = cfg.route.data_manifold();
    let seed = rng::derive(cfg.seed, "target");
    let centers_seed = t.centers_seed.unwrap_or(cfg.seed);
    match t.kind {
        TargetKind::Uniform => sample_uniform(m, t.count, seed),
        TargetKind::Vmf => {
            let centers = MixtureSpec::random_centers(m, t.components, centers_seed)?;
            sample_vmf_mixture(&MixtureSpec::vmf(centers, t.kappa)?, t.count, seed)
        }
        TargetKind::WrappedGaussian => {
            let centers = MixtureSpec::random_centers(m, t.components, centers_seed)?;
            sample_wrapped_gaussian_so3(&MixtureSpec::wrapped_gaussian(centers, t.variance)?, t.count, seed)
        }
        TargetKind::Latlon => ingest_latlon_csv(t.path.as_deref().unwrap()),
        TargetKind::Samples => SampleSet::read_csv(t.path.as_deref().unwrap(), Some(m)),
    }
}

fn to_model(route: Route, s: SampleSet) -> Result<SampleSet> {
    match route {
        Route::S2 => Ok(s),
        _ => s.to_s5(),
    }
}

fn to_data(route: Route, s: SampleSet) -> Result<SampleSet> {
    match route {
        Route::S2 => Ok(s),
        _ => s.s5_to_so3(),
    }
}

fn read_data(cfg: &RunConfig, path: Option<&Path>) -> Result<SampleSet> {
    match path {
        Some(p) => SampleSet::read_csv(p, Some(cfg.route.data_manifold())),
        None => target_samples(cfg),
    }
}

pub fn datagen(cfg: &RunConfig, dir: &RunDir) -> Result<()> {
    let target = target_samples(cfg)?;
    target.write_csv(&dir.file(TARGET_FILE))?;
    let prior = cfg.route.prior().sample(target.len(), rng::derive(cfg.seed, "prior"))?;
    to_data(cfg.route, prior)?.write_csv(&dir.file(PRIOR_FILE))?;
    dir.write(
        INFO_FILE,
        &format!(
            "route={}\ntarget_count={}\nprior={}\n",
            cfg.route,
            target.len(),
            cfg.route.prior()
        ),
    )
}

fn trace_csv(report: &TrainReport) -> String {
    let mut s = String::from("iteration,velocity_loss,score_loss,learning_rate\n");
    for e in &report.trace {
        let score = e.score_loss.map(|v| format!("{v:?}")).unwrap_or_default();
        s.push_str(&format!(
            "{},{:?},{score},{:?}\n",
            e.iteration, e.velocity_loss, e.learning_rate
        ));
    }
    s
}

pub fn train_cmd(cfg: &RunConfig, data: Option<&Path>, dir: &RunDir) -> Result<()> {
    let m = cfg.route.model_manifold();
    let data = to_model(cfg.route, read_data(cfg, data)?)?;
    let act = cfg.activation()?;
    let tf = cfg.train.time_features;
    let mut velocity = FieldNet::new(m, &cfg.train.hidden, act, tf, rng::derive(cfg.seed, "velocity"))?;
    let mut score = if cfg.train.score {
        Some(FieldNet::new(
            m,
            &cfg.train.hidden,
            act,
            tf,
            rng::derive(cfg.seed, "score"),
        )?)
    } else {
        None
    };
    let report = train(
        &mut velocity,
        score.as_mut(),
        &cfg.route.prior(),
        &data,
        &cfg.train_config(),
    )?;
    checkpoint::save(&velocity, &dir.file(VELOCITY_FILE))?;
    if let Some(s) = &score {
        checkpoint::save(s, &dir.file(SCORE_FILE))?;
    }
    dir.write(TRACE_FILE, &trace_csv(&report))?;
    let last = |v: &[f64]| v.last().map(|x| format!("{x:?}")).unwrap_or_default();
    dir.write(
        INFO_FILE,
        &format!(
            "iterations={}\nrepaired_pairs={}\nfinal_velocity_loss={}\nfinal_score_loss={}\n",
            cfg.train.iterations,
            report.repaired_pairs,
            last(&report.velocity_losses),
            last(&report.score_losses)
        ),
    )
}

/// Velocity and optional score nets from a training run directory.
pub fn load_nets(cfg: &RunConfig, ckpt_dir: &Path) -> Result<(FieldNet, Option<FieldNet>)> {
    let m = cfg.route.model_manifold();
    let v = checkpoint::load_expect(&ckpt_dir.join(VELOCITY_FILE), m, None)?;
    let score_path = ckpt_dir.join(SCORE_FILE);
    let s = if score_path.exists() {
        Some(checkpoint::load_expect(&score_path, m, None)?)
    } else {
        None
    };
    Ok((v, s))
}

pub fn sample_cmd(cfg: &RunConfig, ckpt_dir: &Path, data: Option<&Path>, dir: &RunDir) -> Result<()> {
    let scfg = cfg.sampler_config()?;
    let (velocity, score) = load_nets(cfg, ckpt_dir)?;
    if scfg.scheme.is_stochastic() && scfg.epsilon > 0.0 && score.is_none() {
        return Err(Error::Config(format!(
            "{} with epsilon > 0 needs {} in {}",
            scfg.scheme,
            SCORE_FILE,
            ckpt_dir.display()
        )));
    }
    let n = cfg.sample.count;
    let x0 = match scfg.direction {
        geobridge_core::fields::Direction::Forward => {
            cfg.route.prior().sample(n, rng::derive(cfg.seed, "sample-start"))?
        }
        geobridge_core::fields::Direction::Backward => {
            let d = read_data(cfg, data)?.subsample(n, rng::derive(cfg.seed, "sample-start"));
            to_model(cfg.route, d)?
        }
    };
    let out = sample(&velocity, score.as_ref().map(|s| s as &dyn VectorField), &x0, &scfg)?;
    if cfg.route != Route::S2 {
        out.samples.write_csv(&dir.file(SAMPLES_MODEL_FILE))?;
    }
    to_data(cfg.route, out.samples.clone())?.write_csv(&dir.file(SAMPLES_FILE))?;
    if let Some(trs) = &out.trajectories {
        let tdir = dir.file("trajectories");
        std::fs::create_dir_all(&tdir).map_err(|e| Error::io(&tdir, e))?;
        for (i, tr) in trs.iter().take(cfg.sample.trajectories).enumerate() {
            tr.write_csv(&tdir.join(format!("path_{i:05}.csv")))?;
        }
    }
    dir.write(
        INFO_FILE,
        &format!(
            "scheme_requested={}\nscheme_run={}\ndegenerate_epsilon={}\nclamped_steps={}\ncount={}\ndirection={}\n",
            scfg.scheme,
            out.scheme,
            out.degenerate_epsilon,
            out.clamped_steps,
            out.samples.len(),
            scfg.direction
        ),
    )
}

fn flatten(prefix: &str, v: &toml::Value, out: &mut Vec<(String, String)>) {
    match v {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

fn config_echo(cfg: &RunConfig) -> Vec<(String, String)> {
    let mut out = Vec::new();
    flatten("", &toml::Value::try_from(cfg).expect("config serializes"), &mut out);
    out
}

fn read_any(path: &Path) -> Result<SampleSet> {
    SampleSet::read_csv(path, None)
}

pub fn eval_cmd(cfg: &RunConfig, generated: &Path, truth: &Path, ckpt_dir: Option<&Path>, dir: &RunDir) -> Result<()> {
    let g = read_any(generated)?;
    let t = read_any(truth)?;
    if g.manifold() != t.manifold() {
        return Err(Error::InvalidArgument(format!(
            "generated samples on {} but truth on {}",
            g.manifold(),
            t.manifold()
        )));
    }
    let mut report = MetricsReport::new(cfg.seed);
    report.w2 = Some(w2_empirical(&g, &t, cfg.eval.max_n, rng::derive(cfg.seed, "w2"))?);
    match kl_knn(&g, &t, cfg.eval.k) {
        Ok(kl) => report.set_kl(kl),
        Err(Error::Degeneracy(_)) => {
            report.flags.insert("kl".into(), "degenerate".into());
        }
        Err(Error::Size(_)) => {
            report.flags.insert("kl".into(), "too_few_samples".into());
        }
        Err(e) => return Err(e),
    }
    if cfg.eval.nll_steps > 0 {
        let dir = ckpt_dir.ok_or_else(|| Error::Config("eval.nll_steps > 0 needs --checkpoint".into()))?;
        let (velocity, _) = load_nets(cfg, dir)?;
        match cfg.route.prior().log_density() {
            Some(lp) => {
                let x = to_model(cfg.route, t.clone())?;
                let out = nll_ode(
                    &velocity,
                    &x,
                    |_| lp,
                    &NllConfig {
                        steps: cfg.eval.nll_steps,
                    },
                )?;
                report.set_nll(out.nll.as_slice().unwrap());
            }
            None => {
                report.flags.insert("nll".into(), "prior_without_density".into());
            }
        }
    }
    report.sizes.insert("generated".into(), g.len());
    report.sizes.insert("truth".into(), t.len());
    report.config.extend(config_echo(cfg));
    report.write(&dir.file(METRICS_FILE))
}

pub fn bench_cmd(cfg: &RunConfig, dir: &RunDir) -> Result<()> {
    let schemes = cfg.bench_schemes()?;
    let b = &cfg.bench;
    let esde: Vec<Scheme> = schemes.iter().copied().filter(|s| *s != Scheme::Grw).collect();
    let mut reports: Vec<BenchReport> = Vec::new();
    if !esde.is_empty() {
        reports.push(convergence_bench(&esde, b.epsilon, &b.steps, b.paths, cfg.seed)?);
    }
    if schemes.contains(&Scheme::Grw) {
        reports.push(convergence_bench(
            &[Scheme::Grw],
            b.epsilon,
            &b.grw_steps,
            b.grw_paths,
            cfg.seed,
        )?);
    }
    let mut csv = String::new();
    let mut metrics = MetricsReport::new(cfg.seed);
    for (i, r) in reports.iter().enumerate() {
        let body = r.to_csv_string();
        csv.push_str(if i == 0 {
            &body
        } else {
            body.split_once('\n').unwrap().1
        });
        metrics.slopes.extend(r.slopes());
        metrics.sizes.insert(
            if r.curve(Scheme::Grw).is_some() {
                "grw_paths"
            } else {
                "esde_paths"
            }
            .into(),
            r.paths,
        );
    }
    metrics.config.extend(config_echo(cfg));
    dir.write(BENCH_FILE, &csv)?;
    metrics.write(&dir.file(METRICS_FILE))
}
