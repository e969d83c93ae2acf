use super::laplace::fit_laplace_prepared;
use super::objective::{batch_loss_grad, dataset_loss, prepare, Prepared};
use super::optim::{Amsgrad, Ema, Plateau};
use super::{PosteriorConfig, TrainConfig, TrainError};
use crate::geometry::AtomicStructure;
use crate::model::{ModelParams, RaceModel};
use crate::posterior::{IvonHyper, IvonState, PosteriorApprox, SwagState};
use crate::rngs::substream;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub member: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    /// learning rate used during the epoch
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<EpochLog>,
}

impl TrainLog {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `epoch,train_loss,val_loss,lr`; ensembles get a leading `member`
    /// column.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let multi = self.rows.iter().any(|r| r.member > 0);
        if multi {
            writeln!(w, "member,epoch,train_loss,val_loss,lr")?;
        } else {
            writeln!(w, "epoch,train_loss,val_loss,lr")?;
        }
        for r in &self.rows {
            let val = r.val_loss.map_or(String::new(), |v| v.to_string());
            if multi {
                write!(w, "{},", r.member)?;
            }
            writeln!(w, "{},{},{},{}", r.epoch, r.train_loss, val, r.lr)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub posterior: PosteriorApprox,
    pub log: TrainLog,
}

struct Streams {
    init: ChaCha8Rng,
    shuffle: ChaCha8Rng,
    member: usize,
}

fn streams(seed: u64, member: Option<usize>) -> Streams {
    let tag = member.map_or(String::new(), |k| format!("/member{k}"));
    Streams {
        init: substream(seed, &format!("init{tag}")),
        shuffle: substream(seed, &format!("shuffle{tag}")),
        member: member.unwrap_or(0),
    }
}

struct RunResult {
    ema: Vec<f64>,
    log: Vec<EpochLog>,
}

fn check_finite(epoch: usize, l: f64, g: &[f64]) -> Result<(), TrainError> {
    if l.is_finite() && g.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(TrainError::DivergedTraining { epoch })
    }
}

fn progress(cfg: &TrainConfig, row: &EpochLog) {
    if cfg.progress_every > 0 && (row.epoch + 1) % cfg.progress_every == 0 {
        let val = row.val_loss.map_or("-".to_string(), |v| format!("{v:.6e}"));
        eprintln!(
            "member {} epoch {} train {:.6e} val {} lr {:.3e}",
            row.member, row.epoch, row.train_loss, val, row.lr
        );
    }
}

/// The AMSGrad loop. `after_epoch` sees the raw iterate after each epoch.
fn run_amsgrad(
    model: &RaceModel,
    train: &[Prepared],
    val: &[Prepared],
    cfg: &TrainConfig,
    mut st: Streams,
    mut after_epoch: impl FnMut(usize, &[f64]) -> Result<(), TrainError>,
) -> Result<RunResult, TrainError> {
    let mut theta = model.init_params(&mut st.init).values;
    let mut opt = Amsgrad::new(theta.len());
    let mut sched = Plateau::new(cfg.scheduler, cfg.max_lr);
    let mut ema = Ema::new(cfg.ema_decay, &theta);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut st.shuffle);
        let lr = sched.lr();
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Prepared> = chunk.iter().map(|&i| &train[i]).collect();
            let (l, g) = batch_loss_grad(model, &theta, &batch, cfg.loss, cfg.weights)?;
            check_finite(epoch, l, &g)?;
            opt.step(&mut theta, &g, lr);
            ema.update(&theta);
            sum += l * chunk.len() as f64;
        }
        let train_loss = sum / train.len() as f64;
        let val_loss = if val.is_empty() {
            None
        } else {
            let v = dataset_loss(model, &ema.avg, val, cfg.loss, cfg.weights)?;
            if !v.is_finite() {
                return Err(TrainError::DivergedTraining { epoch });
            }
            Some(v)
        };
        sched.observe(val_loss.unwrap_or(train_loss));
        let row = EpochLog {
            member: st.member,
            epoch,
            train_loss,
            val_loss,
            lr,
        };
        progress(cfg, &row);
        log.push(row);
        after_epoch(epoch, &theta)?;
    }
    Ok(RunResult {
        ema: ema.avg,
        log,
    })
}

fn run_ivon(
    model: &RaceModel,
    train: &[Prepared],
    val: &[Prepared],
    cfg: &TrainConfig,
    hyper: IvonHyper,
    seed: u64,
) -> Result<(IvonState, Vec<EpochLog>), TrainError> {
    let mut st = streams(seed, None);
    let mut noise = substream(seed, "ivon");
    let theta0 = model.init_params(&mut st.init).values;
    let mut state = IvonState::new(theta0, hyper);
    let mut sched = Plateau::new(cfg.scheduler, hyper.lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut st.shuffle);
        let lr = sched.lr();
        state.hyper.lr = lr;
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Prepared> = chunk.iter().map(|&i| &train[i]).collect();
            let theta = state.sample(&mut noise);
            let (l, g) = batch_loss_grad(model, &theta, &batch, cfg.loss, cfg.weights)?;
            check_finite(epoch, l, &g)?;
            state
                .step_at(&theta, &g)
                .map_err(|_| TrainError::DivergedTraining { epoch })?;
            sum += l * chunk.len() as f64;
        }
        if state.m.iter().any(|x| !x.is_finite()) {
            return Err(TrainError::DivergedTraining { epoch });
        }
        let train_loss = sum / train.len() as f64;
        let val_loss = if val.is_empty() {
            None
        } else {
            Some(dataset_loss(model, &state.m, val, cfg.loss, cfg.weights)?)
        };
        sched.observe(val_loss.unwrap_or(train_loss));
        let row = EpochLog {
            member: 0,
            epoch,
            train_loss,
            val_loss,
            lr,
        };
        progress(cfg, &row);
        log.push(row);
    }
    Ok((state, log))
}

/// Base training: AMSGrad on the configured loss; returns the EMA weights.
pub fn train_point(
    model: &RaceModel,
    train: &[AtomicStructure],
    val: &[AtomicStructure],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(ModelParams, TrainLog), TrainError> {
    cfg.validate()?;
    cfg.check_model(model.config())?;
    let tp = prepare(model, train)?;
    let vp = prepare(model, val)?;
    if tp.is_empty() && cfg.epochs > 0 {
        return Err(TrainError::NoData);
    }
    let r = run_amsgrad(model, &tp, &vp, cfg, streams(seed, None), |_, _| Ok(()))?;
    Ok((ModelParams::new(r.ema), TrainLog { rows: r.log }))
}

/// Runs the loop the config's posterior asks for. Deterministic given the
/// seed: every random draw comes from a named substream of it.
pub fn train(
    model: &RaceModel,
    train: &[AtomicStructure],
    val: &[AtomicStructure],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    cfg.check_model(model.config())?;
    let tp = prepare(model, train)?;
    let vp = prepare(model, val)?;
    if tp.is_empty() && cfg.epochs > 0 {
        return Err(TrainError::NoData);
    }
    match &cfg.posterior {
        PosteriorConfig::Point => {
            let r = run_amsgrad(model, &tp, &vp, cfg, streams(seed, None), |_, _| Ok(()))?;
            Ok(TrainOutcome {
                posterior: PosteriorApprox::Point {
                    params: ModelParams::new(r.ema),
                },
                log: TrainLog { rows: r.log },
            })
        }
        PosteriorConfig::Ensemble { members } => {
            let runs: Vec<RunResult> = (0..*members)
                .into_par_iter()
                .map(|k| run_amsgrad(model, &tp, &vp, cfg, streams(seed, Some(k)), |_, _| Ok(())))
                .collect::<Result<_, _>>()?;
            let mut rows = Vec::new();
            let mut params = Vec::new();
            for r in runs {
                rows.extend(r.log);
                params.push(ModelParams::new(r.ema));
            }
            Ok(TrainOutcome {
                posterior: PosteriorApprox::Ensemble { members: params },
                log: TrainLog { rows },
            })
        }
        PosteriorConfig::Swag {
            rank,
            start_fraction,
            collect_every,
        } => {
            let start = (start_fraction * cfg.epochs as f64).ceil() as usize;
            let mut swag = SwagState::new(model.n_params(), *rank);
            let r = run_amsgrad(model, &tp, &vp, cfg, streams(seed, None), |epoch, theta| {
                if epoch >= start && (epoch - start) % collect_every == 0 {
                    swag.collect(theta)?;
                }
                Ok(())
            })?;
            if !swag.is_ready() {
                return Err(TrainError::BadConfig(format!(
                    "SWAG collected {} snapshots over {} epochs; needs at least 2",
                    swag.n_collected,
                    cfg.epochs
                )));
            }
            Ok(TrainOutcome {
                posterior: PosteriorApprox::Swag { state: swag },
                log: TrainLog { rows: r.log },
            })
        }
        PosteriorConfig::Ivon { hyper } => {
            let (state, log) = run_ivon(model, &tp, &vp, cfg, *hyper, seed)?;
            Ok(TrainOutcome {
                posterior: PosteriorApprox::Ivon { state },
                log: TrainLog { rows: log },
            })
        }
        PosteriorConfig::Laplace { prior_precision } => {
            let r = run_amsgrad(model, &tp, &vp, cfg, streams(seed, None), |_, _| Ok(()))?;
            let map = ModelParams::new(r.ema);
            let state = fit_laplace_prepared(model, &map, &tp, *prior_precision)?;
            Ok(TrainOutcome {
                posterior: PosteriorApprox::Laplace { state },
                log: TrainLog { rows: r.log },
            })
        }
    }
}
