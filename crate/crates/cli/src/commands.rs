use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use scene_lstm::autodiff::DerivativeFault;
use scene_lstm::data::{generate_synthetic, load_dataset, save_dataset, SceneDataset};
use scene_lstm::eval::{sliding_eval, EvalReport, PredictionRow, Predictor};
use scene_lstm::experiment::{desk_config, overfit_batch, overfit_window, scene_memory_run, stage2_sweep_run};
use scene_lstm::gradcheck::{checked_ops, run_gradcheck, TOLERANCE};
use scene_lstm::train::{sweep_stage2, train_stage1, train_stage2, Checkpoint, StageOutcome, SweepPoint, TrainConfig};

use crate::plot::{render_csv, render_svg, PlotData};
use crate::{usage, Command, EvaluateArgs, ExperimentArgs, ExperimentKind, GradcheckArgs, PlotArgs, SweepArgs, SynthArgs, TrainArgs, EXIT_OK, EXIT_RUNTIME, SEED_ENV};

pub(crate) fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Synth(a) => synth(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::ExportPlot(a) => export_plot(a),
        Command::SweepStage2(a) => sweep(a),
        Command::Experiment(a) => experiment(a),
    }
}

fn load_all(paths: &[PathBuf]) -> Result<Vec<SceneDataset>> {
    paths
        .iter()
        .map(|p| {
            if !p.exists() {
                return Err(usage(format!("data file {} does not exist", p.display())));
            }
            load_dataset(p).with_context(|| format!("loading {}", p.display()))
        })
        .collect()
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(usage(format!("checkpoint {} does not exist", path.display())));
    }
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn default_log(out: &Path) -> PathBuf {
    out.with_extension("log.csv")
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn save_outcome(outcome: &StageOutcome, out: &Path, log: &Path) -> Result<()> {
    outcome.checkpoint.save(out).with_context(|| format!("writing {}", out.display()))?;
    write(log, &outcome.log.to_csv())?;
    println!("wrote {} (best epoch {}) and {}", out.display(), outcome.best_epoch, log.display());
    Ok(())
}

fn fold_path(out: &Path, name: &str) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("checkpoint");
    let ext = out.extension().and_then(|s| s.to_str()).unwrap_or("ckpt");
    out.with_file_name(format!("{stem}-{name}.{ext}"))
}

fn train(a: TrainArgs) -> Result<i32> {
    let stage2 = a.stage == 2;
    let mut cfg = a.config.resolve(stage2)?;
    if let Some(f) = a.fraction {
        cfg.fraction = f;
    }
    if a.freeze_pedestrian {
        cfg.freeze_pedestrian = true;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let datasets = load_all(&a.data)?;

    if stage2 {
        let Some(ck_path) = &a.checkpoint else {
            return Err(usage("stage 2 needs --checkpoint"));
        };
        if datasets.len() != 1 {
            return Err(usage("stage 2 fine-tunes on exactly one --data file"));
        }
        let mut ck = load_checkpoint(ck_path)?;
        if a.config.variant.is_some() {
            ck.reconcile_variant(cfg.variant);
        }
        let outcome = train_stage2(&ck, &datasets[0], &cfg)?;
        let log = a.log.clone().unwrap_or_else(|| default_log(&a.out));
        save_outcome(&outcome, &a.out, &log)?;
        return Ok(EXIT_OK);
    }

    let names: Vec<&str> = datasets.iter().map(|d| d.name.as_str()).collect();
    let index_of = |name: &str| {
        names
            .iter()
            .position(|n| *n == name)
            .ok_or_else(|| usage(format!("--held-out `{name}` is not one of the data files ({})", names.join(", "))))
    };
    match a.held_out.as_deref() {
        Some("all") => {
            let run_fold = |k: usize| -> Result<()> {
                let outcome = train_stage1(&datasets, k, &cfg)?;
                let out = fold_path(&a.out, names[k]);
                save_outcome(&outcome, &out, &default_log(&out))
            };
            if a.parallel_folds {
                thread::scope(|s| {
                    let handles: Vec<_> = (0..datasets.len()).map(|k| s.spawn(move || run_fold(k))).collect();
                    handles.into_iter().try_for_each(|h| h.join().expect("fold thread panicked"))
                })?;
            } else {
                (0..datasets.len()).try_for_each(run_fold)?;
            }
        }
        Some(name) => {
            let k = index_of(name)?;
            let outcome = train_stage1(&datasets, k, &cfg)?;
            save_outcome(&outcome, &a.out, &a.log.clone().unwrap_or_else(|| default_log(&a.out)))?;
        }
        None => {
            if a.parallel_folds {
                return Err(usage("--parallel-folds needs --held-out all"));
            }
            let outcome = scene_lstm::train::fit_stage1(&datasets, &cfg)?;
            save_outcome(&outcome, &a.out, &a.log.clone().unwrap_or_else(|| default_log(&a.out)))?;
        }
    }
    Ok(EXIT_OK)
}

fn dump_path(base: &Path, name: &str, many: bool) -> PathBuf {
    if !many {
        return base.to_path_buf();
    }
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("predictions");
    base.with_file_name(format!("{stem}.{name}.csv"))
}

fn evaluate(a: EvaluateArgs) -> Result<i32> {
    if !(a.test_fraction > 0.0 && a.test_fraction <= 1.0) {
        return Err(usage("--test-fraction must be in (0, 1]"));
    }
    let datasets = load_all(&a.data)?;
    let ck = match &a.checkpoint {
        Some(p) => {
            let mut ck = load_checkpoint(p)?;
            if let Some(v) = a.variant {
                ck.reconcile_variant(v);
            }
            Some(ck)
        }
        None if a.baseline.is_none() && !a.oracle => {
            return Err(usage("evaluate needs --checkpoint, --baseline linear or --oracle"));
        }
        None => None,
    };
    let config = ck.as_ref().map(|c| c.config.clone()).unwrap_or_default();
    let mut eval_cfg = config.eval_config();
    eval_cfg.reset_per_window = a.reset_per_window;
    eval_cfg.seed = match a.seed {
        Some(s) => s,
        None => std::env::var(SEED_ENV).ok().and_then(|s| s.parse().ok()).unwrap_or(config.seed),
    };
    let predictor = match &ck {
        Some(ck) => ck.predictor(a.sample),
        None if a.oracle => Predictor::Oracle,
        None => Predictor::Linear,
    };

    let mut sequences = Vec::new();
    for ds in &datasets {
        let test = ds.trailing_fraction(a.test_fraction);
        let out = sliding_eval(&predictor, &test, &eval_cfg).with_context(|| format!("evaluating {}", ds.name))?;
        if let Some(base) = &a.dump {
            write(&dump_path(base, &ds.name, datasets.len() > 1), &PredictionRow::to_csv(&out.predictions))?;
        }
        sequences.push(out.metrics);
    }
    let report = EvalReport::new(sequences);
    write(&a.report, &report.to_csv())?;
    print!("{}", report.to_table());
    Ok(EXIT_OK)
}

fn synth(a: SynthArgs) -> Result<i32> {
    if !(a.noise >= 0.0 && a.noise.is_finite()) {
        return Err(usage("--noise must be a non-negative number"));
    }
    let seed = match a.seed {
        Some(s) => s,
        None => crate::ConfigArgs::default().resolve(false)?.seed,
    };
    let ds = generate_synthetic(a.scene, a.n, a.noise, seed)?;
    save_dataset(&ds, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    println!("wrote {} trajectories to {}", ds.trajectories.len(), a.out.display());
    Ok(EXIT_OK)
}

fn gradcheck(a: GradcheckArgs) -> Result<i32> {
    let fault = match &a.inject_fault {
        Some(op) => {
            let known = checked_ops();
            let Some(&name) = known.iter().find(|k| **k == op.as_str()) else {
                return Err(usage(format!("unknown op `{op}` (one of {})", known.join(", "))));
            };
            Some(DerivativeFault {
                op: name,
                factor: a.fault_factor,
            })
        }
        None => None,
    };
    let start = Instant::now();
    let report = run_gradcheck(a.seed, fault)?;
    println!("primitive ops:");
    for c in &report.ops {
        println!("  {:<8} worst rel err {:.3e}", c.name, c.worst);
    }
    println!("parameter groups:");
    for (group, worst) in report.by_group() {
        println!("  {group:<8} worst rel err {worst:.3e}");
    }
    println!("worst overall {:.3e} (tolerance {TOLERANCE:e}), {:.1?}", report.worst(), start.elapsed());
    if report.passed() {
        println!("PASS");
        Ok(EXIT_OK)
    } else {
        let names: Vec<&str> = report.failures().iter().map(|c| c.name.as_str()).collect();
        println!("FAIL: {}", names.join(", "));
        Ok(EXIT_RUNTIME)
    }
}

fn export_plot(a: PlotArgs) -> Result<i32> {
    for p in [Some(&a.predictions), Some(&a.data), a.checkpoint.as_ref()].into_iter().flatten() {
        if !p.exists() {
            return Err(usage(format!("input {} does not exist", p.display())));
        }
    }
    let text = std::fs::read_to_string(&a.predictions).with_context(|| format!("reading {}", a.predictions.display()))?;
    let rows = PredictionRow::parse_csv(&text)?;
    let ds = load_dataset(&a.data)?;
    let ck = a.checkpoint.as_deref().map(load_checkpoint).transpose()?;
    let data = PlotData::new(&ds, &rows, ck.as_ref());
    write(&a.out, &render_svg(&data))?;
    let csv = a.csv.clone().unwrap_or_else(|| a.out.with_extension("csv"));
    write(&csv, &render_csv(&data))?;
    println!("wrote {} and {}", a.out.display(), csv.display());
    Ok(EXIT_OK)
}

fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("fraction,ade,fde,nde,n_targets,n_windows\n");
    for p in points {
        let m = &p.metrics;
        let nde = m.nde.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{},{},{}", p.fraction, m.ade, m.fde, nde, m.n_targets, m.n_windows);
    }
    out
}

fn sweep(a: SweepArgs) -> Result<i32> {
    let cfg = a.config.resolve(true)?;
    let ck = load_checkpoint(&a.checkpoint)?;
    let ds = load_all(std::slice::from_ref(&a.data))?.remove(0);
    let fractions: Vec<f64> = (0..=5).map(|k| k as f64 / 10.0).collect();
    let points = sweep_stage2(&ck, &ds, &cfg, &fractions)?;
    write(&a.out, &sweep_csv(&points))?;
    for p in &points {
        println!("fraction {:.1}: ADE {:.5}", p.fraction, p.metrics.ade);
    }
    Ok(EXIT_OK)
}

fn experiment(a: ExperimentArgs) -> Result<i32> {
    for &seed in &a.seeds {
        match a.kind {
            ExperimentKind::SceneMemory => {
                let r = scene_memory_run(seed)?;
                println!(
                    "seed {seed}: ADE scene-n {:.5} scene-a {:.5} vanilla {:.5} linear {:.5} | NDE n {:?} a {:?} | gain {:.1}%",
                    r.scene_n.ade,
                    r.scene_a.ade,
                    r.vanilla.ade,
                    r.linear.ade,
                    r.scene_n.nde,
                    r.scene_a.nde,
                    100.0 * r.scene_gain()
                );
            }
            ExperimentKind::Stage2Sweep => {
                let points = stage2_sweep_run(seed)?;
                print!("seed {seed}:\n{}", sweep_csv(&points));
            }
            ExperimentKind::Overfit => {
                let cfg = TrainConfig {
                    dropout: 0.0,
                    ..desk_config(seed)
                };
                let out = overfit_window(&overfit_batch(seed)?, &cfg, 200)?;
                println!(
                    "seed {seed}: loss {:.4} -> {:.4}, ADE {:.5}",
                    out.initial_loss, out.final_loss, out.ade
                );
            }
        }
    }
    if a.seeds.is_empty() {
        bail!("no seeds given");
    }
    Ok(EXIT_OK)
}
