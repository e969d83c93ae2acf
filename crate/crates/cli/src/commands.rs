use crate::records::{channel_residuals, read_predictions, write_predictions, PredictionRecord};
use crate::{Channel, Command, Common, ForceAgg, PredictionInput, TrainArgs, UsageError};
use anyhow::{bail, Context, Result};
use bam_core::active::{self, ForceAggregation};
use bam_core::geometry::AtomicStructure;
use bam_core::io::{
    load_checkpoint, read_checkpoint_header, read_extxyz, save_checkpoint, split_indices, write_extxyz_file,
    Checkpoint, ExtxyzOptions, RunConfig, SplitSpec,
};
use bam_core::model::RaceModel;
use bam_core::posterior::PosteriorApprox;
use bam_core::rngs::subseed;
use bam_core::train::{self, EvalOptions, PosteriorConfig, TrainLog};
use bam_core::uq::{self, MetricRecord, MetricRow};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train(args) => train_cmd(&args, Ok),
        Command::EnsembleTrain { args, members } => train_cmd(&args, |p| {
            let from_cfg = match p {
                PosteriorConfig::Ensemble { members } => Some(members),
                _ => None,
            };
            Ok(PosteriorConfig::Ensemble {
                members: members.or(from_cfg).unwrap_or(10),
            })
        }),
        Command::SwagTrain {
            args,
            rank,
            start_fraction,
            collect_every,
        } => train_cmd(&args, |p| {
            let (r, f, c) = match p {
                PosteriorConfig::Swag {
                    rank,
                    start_fraction,
                    collect_every,
                } => (rank, start_fraction, collect_every),
                _ => (20, 0.6, 1),
            };
            Ok(PosteriorConfig::Swag {
                rank: rank.unwrap_or(r),
                start_fraction: start_fraction.unwrap_or(f),
                collect_every: collect_every.unwrap_or(c),
            })
        }),
        Command::IvonTrain { args } => train_cmd(&args, |p| {
            Ok(match p {
                PosteriorConfig::Ivon { hyper } => PosteriorConfig::Ivon { hyper },
                _ => PosteriorConfig::Ivon {
                    hyper: Default::default(),
                },
            })
        }),
        Command::LaplaceFit {
            common,
            checkpoint,
            data,
            out,
            prior_precision,
        } => laplace_cmd(&common, &checkpoint, &data, &out, prior_precision),
        Command::Predict {
            common,
            input,
            data,
            out,
        } => predict_cmd(&common, &input, &data, out.as_deref()),
        Command::Evaluate {
            common,
            input,
            data,
            ood,
            metrics,
            levels,
            reliability_energy,
            reliability_forces,
            scatter_energy,
            scatter_forces,
        } => {
            let ctx = Ctx::new(&common, false)?;
            let (model, ckpt) = ctx.checkpoint(&input.checkpoint)?;
            let test = ctx.read(&data, true)?;
            let ood = ood.map(|p| ctx.read(&p, false)).transpose()?;
            let opts = ctx.eval_options(input.samples, levels);
            let rep = train::evaluate(&model, &ckpt.posterior, &test, ood.as_deref(), &opts)?;
            write_records(metrics.as_deref(), &rep.metrics)?;
            if let Some(p) = reliability_energy {
                with_file(&p, |w| Ok(rep.energy.reliability(opts.levels)?.write_csv(w)?))?;
            }
            if let Some(p) = reliability_forces {
                with_file(&p, |w| Ok(rep.forces.reliability(opts.levels)?.write_csv(w)?))?;
            }
            if let Some(p) = scatter_energy {
                with_file(&p, |w| Ok(rep.energy.scatter()?.write_csv(w)?))?;
            }
            if let Some(p) = scatter_forces {
                with_file(&p, |w| Ok(rep.forces.scatter()?.write_csv(w)?))?;
            }
            Ok(())
        }
        Command::OodScore {
            common,
            input,
            id_data,
            ood,
            out,
            metrics,
        } => {
            let ctx = Ctx::new(&common, false)?;
            let (model, ckpt) = ctx.checkpoint(&input.checkpoint)?;
            let n = ctx.samples(input.samples);
            let sigma = |path: &Path| -> Result<Vec<f64>> {
                let data = ctx.read(path, false)?;
                let preds = train::predict_dataset(&model, &ckpt.posterior, &data, n, ctx.seed)?;
                Ok(preds.iter().map(|p| p.energy_sd()).collect())
            };
            let (id, od) = (sigma(&id_data)?, sigma(&ood)?);
            write_records(metrics.as_deref(), &[MetricRecord::new("auroc", uq::auroc(&id, &od)?)])?;
            if let Some(p) = out {
                with_file(&p, |w| {
                    writeln!(w, "set,index,sigma_e")?;
                    for (set, v) in [("id", &id), ("ood", &od)] {
                        for (k, s) in v.iter().enumerate() {
                            writeln!(w, "{set},{k},{s}")?;
                        }
                    }
                    Ok(())
                })?;
            }
            Ok(())
        }
        Command::Calibrate {
            common,
            predictions,
            channel,
            levels,
            out,
            metrics,
        } => {
            let ctx = Ctx::new(&common, false)?;
            let m = ctx.levels(levels);
            let (r, sd) = channel_residuals(&read_predictions(&predictions)?, channel)?;
            let curve = uq::reliability_curve(&r, &sd, m)?;
            if let Some(p) = out {
                with_file(&p, |w| Ok(curve.write_csv(w)?))?;
            }
            let name = format!("{}_ce", prefix(channel));
            write_records(metrics.as_deref(), &[MetricRecord::new(name, curve.calibration_error())])
        }
        Command::Recalibrate {
            common,
            fit,
            apply,
            channel,
            levels,
            map_out,
            out,
            metrics,
        } => {
            let ctx = Ctx::new(&common, false)?;
            let m = ctx.levels(levels);
            let (rf, sf) = channel_residuals(&read_predictions(&fit)?, channel)?;
            let map = uq::recalibrate_fit(&rf, &sf)?;
            let (ra, sa) = match &apply {
                Some(p) => channel_residuals(&read_predictions(p)?, channel)?,
                None => (rf, sf),
            };
            let before = uq::calibration_error(&ra, &sa, m)?;
            let curve = uq::recalibrated_curve(&map, &ra, &sa, m)?;
            with_file(&map_out, |w| {
                serde_json::to_writer_pretty(&mut *w, &map)?;
                Ok(writeln!(w)?)
            })?;
            if let Some(p) = out {
                with_file(&p, |w| Ok(curve.write_csv(w)?))?;
            }
            let pre = prefix(channel);
            write_records(
                metrics.as_deref(),
                &[
                    MetricRecord::new(format!("{pre}_ce"), before),
                    MetricRecord::new(format!("{pre}_ce_recalibrated"), curve.calibration_error()),
                ],
            )
        }
        Command::AlSelect {
            common,
            input,
            pool,
            strategy,
            budget,
            force_agg,
            out,
        } => {
            let ctx = Ctx::new(&common, false)?;
            let (model, ckpt) = ctx.checkpoint(&input.checkpoint)?;
            let pool = ctx.read(&pool, false)?;
            let preds = train::predict_dataset(&model, &ckpt.posterior, &pool, ctx.samples(input.samples), ctx.seed)?;
            let records = active::pool_records(&preds, agg(force_agg), strategy)?;
            let picked = active::select(&records, strategy, budget, subseed(ctx.seed, "selection"))?;
            match out {
                Some(p) => with_file(&p, |w| Ok(active::write_manifest(w, &picked)?)),
                None => Ok(active::write_manifest(std::io::stdout().lock(), &picked)?),
            }
        }
        Command::AlRound {
            common,
            input,
            train: train_path,
            pool,
            strategy,
            budget,
            force_agg,
            out_dir,
            jobs,
        } => {
            let ctx = Ctx::new(&common, true)?;
            let cfg = ctx.cfg.as_ref().expect("required");
            let (scorer, ckpt) = ctx.checkpoint(&input.checkpoint)?;
            let train_set = ctx.read(&train_path, true)?;
            let pool = ctx.read(&pool, true)?;
            let model = RaceModel::new(cfg.model.clone())?;
            let outcome = with_jobs(jobs, || {
                let preds = train::predict_dataset(&scorer, &ckpt.posterior, &pool, ctx.samples(input.samples), ctx.seed)?;
                active::al_round(
                    &train_set,
                    &pool,
                    &preds,
                    budget,
                    strategy,
                    subseed(ctx.seed, "selection"),
                    agg(force_agg),
                    |t| train::train(&model, t, &[], &cfg.train, ctx.seed),
                )
                .map_err(anyhow::Error::from)
            })?;
            std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            with_file(&out_dir.join("manifest.csv"), |w| Ok(active::write_manifest(w, &outcome.selected)?))?;
            write_extxyz_file(&out_dir.join("train.xyz"), &outcome.train, &ctx.extxyz)?;
            write_extxyz_file(&out_dir.join("pool.xyz"), &outcome.pool, &ctx.extxyz)?;
            if let Some(o) = outcome.retrained {
                save_checkpoint(
                    &out_dir.join("model.bam"),
                    &Checkpoint {
                        model: cfg.model.clone(),
                        posterior: o.posterior,
                    },
                )?;
                write_log(&out_dir.join("train_log.csv"), &o.log)?;
            }
            Ok(())
        }
        Command::Score { common, metrics, out } => {
            Ctx::new(&common, false)?;
            let rows: Vec<MetricRow> = metrics.iter().map(|p| metric_row(p)).collect::<Result<_>>()?;
            let scores = uq::composite_scores(&rows)?;
            let write = |w: &mut dyn Write| -> Result<()> {
                writeln!(w, "source,score")?;
                for (p, s) in metrics.iter().zip(&scores) {
                    writeln!(w, "{},{s}", p.display())?;
                }
                Ok(())
            };
            match out {
                Some(p) => with_file(&p, |w| write(w)),
                None => write(&mut std::io::stdout().lock()),
            }
        }
        Command::InspectCheckpoint { common, checkpoint } => {
            Ctx::new(&common, false)?;
            let header = read_checkpoint_header(&checkpoint)?;
            let mut out = std::io::stdout().lock();
            serde_json::to_writer_pretty(&mut out, &header)?;
            writeln!(out)?;
            Ok(())
        }
    }
}

/// Settings shared by every command: the optional run config and the seed.
struct Ctx {
    cfg: Option<RunConfig>,
    seed: u64,
    extxyz: ExtxyzOptions,
}

impl Ctx {
    fn new(common: &Common, require_config: bool) -> Result<Self> {
        let cfg = match &common.config {
            Some(p) => Some(RunConfig::load(p)?),
            None if require_config => return Err(UsageError("this command needs --config".into()).into()),
            None => None,
        };
        let seed = common.seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(0);
        let extxyz = cfg.as_ref().map(|c| c.extxyz.clone()).unwrap_or_default();
        Ok(Ctx { cfg, seed, extxyz })
    }

    fn read(&self, path: &Path, labelled: bool) -> Result<Vec<AtomicStructure>> {
        let ds = read_extxyz(path, &self.extxyz, !labelled)?;
        if labelled && !ds.is_labelled() {
            bail!("{} must carry energy and force labels", path.display());
        }
        Ok(ds.structures)
    }

    fn checkpoint(&self, path: &Path) -> Result<(RaceModel, Checkpoint)> {
        let ck = load_checkpoint(path)?;
        Ok((RaceModel::new(ck.model.clone())?, ck))
    }

    fn eval_defaults(&self) -> EvalOptions {
        self.cfg.as_ref().map(|c| c.eval).unwrap_or_default()
    }

    fn samples(&self, flag: Option<usize>) -> usize {
        flag.unwrap_or(self.eval_defaults().n_samples)
    }

    fn levels(&self, flag: Option<usize>) -> usize {
        flag.unwrap_or(self.eval_defaults().levels)
    }

    fn eval_options(&self, samples: Option<usize>, levels: Option<usize>) -> EvalOptions {
        EvalOptions {
            n_samples: self.samples(samples),
            seed: self.seed,
            levels: self.levels(levels),
        }
    }
}

fn prefix(ch: Channel) -> &'static str {
    match ch {
        Channel::Energy => "e",
        Channel::Forces => "f",
    }
}

fn agg(a: ForceAgg) -> ForceAggregation {
    match a {
        ForceAgg::Max => ForceAggregation::Max,
        ForceAgg::Mean => ForceAggregation::Mean,
    }
}

fn with_file(path: &Path, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush().with_context(|| format!("writing {}", path.display()))
}

fn write_records(path: Option<&Path>, recs: &[MetricRecord]) -> Result<()> {
    match path {
        Some(p) => with_file(p, |w| Ok(uq::write_metrics(w, recs)?)),
        None => Ok(uq::write_metrics(std::io::stdout().lock(), recs)?),
    }
}

fn write_log(path: &Path, log: &TrainLog) -> Result<()> {
    with_file(path, |w| Ok(log.write_csv(w)?))
}

fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match jobs {
        None => f(),
        Some(0) => Err(UsageError("--jobs must be at least 1".into()).into()),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .context("starting worker threads")?
            .install(f),
    }
}

fn metric_row(path: &PathBuf) -> Result<MetricRow> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut recs = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if !line.trim().is_empty() {
            let r: MetricRecord =
                serde_json::from_str(line).with_context(|| format!("{} line {}", path.display(), k + 1))?;
            recs.push(r);
        }
    }
    let get = |name: &str| {
        recs.iter()
            .find(|r| r.metric == name)
            .map(|r| r.value)
            .with_context(|| format!("{} lacks metric {name}", path.display()))
    };
    Ok(MetricRow {
        e_rmse: get("e_rmse")?,
        f_rmse: get("f_rmse")?,
        e_ce: get("e_ce")?,
        f_ce: get("f_ce")?,
        auroc: get("auroc")?,
    })
}

fn train_cmd(args: &TrainArgs, posterior: impl FnOnce(PosteriorConfig) -> Result<PosteriorConfig>) -> Result<()> {
    let ctx = Ctx::new(&args.common, true)?;
    let cfg = ctx.cfg.as_ref().expect("required");
    let mut tc = cfg.train.clone();
    tc.posterior = posterior(tc.posterior)?;
    tc.validate()?;
    let data = ctx.read(&args.data, true)?;
    let (train_set, val) = match (&args.val, args.val_count) {
        (Some(p), _) => (data, ctx.read(p, true)?),
        (None, Some(v)) => {
            let n = data.len();
            let spec = SplitSpec::Counts([n.saturating_sub(v), v, 0]);
            let [a, b, _] = split_indices(n, spec, ctx.seed)?;
            let pick = |ix: &[usize]| ix.iter().map(|&i| data[i].clone()).collect::<Vec<_>>();
            (pick(&a), pick(&b))
        }
        (None, None) => (data, Vec::new()),
    };
    let model = RaceModel::new(cfg.model.clone())?;
    let outcome = with_jobs(args.jobs, || Ok(train::train(&model, &train_set, &val, &tc, ctx.seed)?))?;
    save_checkpoint(
        &args.out,
        &Checkpoint {
            model: cfg.model.clone(),
            posterior: outcome.posterior,
        },
    )?;
    if let Some(p) = &args.log {
        write_log(p, &outcome.log)?;
    }
    Ok(())
}

fn laplace_cmd(common: &Common, ckpt_path: &Path, data: &Path, out: &Path, prior: Option<f64>) -> Result<()> {
    let ctx = Ctx::new(common, false)?;
    let (model, ck) = ctx.checkpoint(ckpt_path)?;
    let PosteriorApprox::Point { params } = &ck.posterior else {
        bail!(
            "{} holds a {} posterior; the Laplace fit needs a single trained model",
            ckpt_path.display(),
            ck.posterior.kind()
        );
    };
    let from_cfg = ctx.cfg.as_ref().and_then(|c| match c.train.posterior {
        PosteriorConfig::Laplace { prior_precision } => Some(prior_precision),
        _ => None,
    });
    let prior = prior.or(from_cfg).unwrap_or(1.0);
    if !(prior > 0.0 && prior.is_finite()) {
        return Err(UsageError("--prior-precision must be positive".into()).into());
    }
    let data = ctx.read(data, false)?;
    let state = train::fit_laplace(&model, params, &data, prior)?;
    save_checkpoint(
        out,
        &Checkpoint {
            model: ck.model,
            posterior: PosteriorApprox::Laplace { state },
        },
    )?;
    Ok(())
}

fn predict_cmd(common: &Common, input: &PredictionInput, data: &Path, out: Option<&Path>) -> Result<()> {
    let ctx = Ctx::new(common, false)?;
    let (model, ck) = ctx.checkpoint(&input.checkpoint)?;
    let data = ctx.read(data, false)?;
    let preds = train::predict_dataset(&model, &ck.posterior, &data, ctx.samples(input.samples), ctx.seed)?;
    let recs: Vec<PredictionRecord> = data
        .iter()
        .zip(&preds)
        .enumerate()
        .map(|(k, (s, p))| PredictionRecord::new(k, s, p))
        .collect();
    match out {
        Some(p) => with_file(p, |w| write_predictions(w, &recs)),
        None => write_predictions(std::io::stdout().lock(), &recs),
    }
}
