//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::json;
use sma_core::agent::AdaptMode;
use sma_core::config::{EvalAxis, RunConfig};
use sma_core::persist::{read_records, MetricRecord};
use sma_core::pipeline::eval::axis_grid;
use sma_core::pipeline::{
    evaluate_suite, load_policies, ordering_checks, probe_policy, run_stage, ProbeTrace, RunDir, STAGES,
};

use crate::plot::{histogram_chart, histogram_in, line_chart, Series};

pub const TABLE_FILE: &str = "eval_table.txt";
pub const RESULTS_FILE: &str = "eval_results.jsonl";
pub const EPISODES_FILE: &str = "eval_episodes.jsonl";
pub const ORDERING_FILE: &str = "ordering.jsonl";
pub const PROBES_FILE: &str = "probes.json";
pub const PLOTS_DIR: &str = "plots";

fn jsonl<T: serde::Serialize>(items: impl IntoIterator<Item = T>) -> Result<String> {
    let mut s = String::new();
    for it in items {
        s.push_str(&serde_json::to_string(&it)?);
        s.push('\n');
    }
    Ok(s)
}

pub fn train(cfg: &RunConfig, stages: &[&str]) -> Result<()> {
    let dir = RunDir::create(&cfg.out_dir)?;
    let echoed = dir.echo_config(cfg)?;
    eprintln!("config written to {}", echoed.display());
    for &stage in stages {
        let mut progress = |r: &MetricRecord| {
            if r.iteration % 10 == 0 {
                eprintln!(
                    "[{}] iter {:>5} steps {:>9} reward/step {:.4} grad {:.3}",
                    r.stage, r.iteration, r.env_steps, r.mean_reward, r.update.grad_norm
                );
            }
        };
        let report = run_stage(stage, cfg, &dir, &mut progress).with_context(|| format!("stage {stage} failed"))?;
        println!(
            "{}",
            json!({
                "stage": report.stage,
                "checkpoint": report.checkpoint,
                "summary": report.summary,
            })
        );
    }
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    let dir = RunDir::open(&cfg.out_dir)?;
    let (entries, warnings) = load_policies(&dir)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    if entries.is_empty() {
        bail!("no trained policies under {}", dir.root().display());
    }
    let table = evaluate_suite(&entries, &cfg.eval, &cfg.env)?;
    let text = table.to_text();
    fs::write(dir.file(TABLE_FILE), &text)?;
    let cells = table.cells.iter().map(|c| {
        json!({
            "policy": c.policy,
            "axis": c.axis,
            "metric": c.metric,
            "ci_low": c.ci_low,
            "ci_high": c.ci_high,
            "privileged_reads": c.privileged_reads,
        })
    });
    fs::write(dir.file(RESULTS_FILE), jsonl(cells)?)?;
    let episodes = table.cells.iter().flat_map(|c| {
        c.returns.iter().enumerate().flat_map(move |(i, rs)| {
            rs.iter().enumerate().map(move |(k, r)| {
                json!({
                    "policy": c.policy,
                    "axis": c.axis,
                    "sample": i,
                    "value": c.values[i],
                    "probability": c.probs[i],
                    "episode": k,
                    "return": r,
                })
            })
        })
    });
    fs::write(dir.file(EPISODES_FILE), jsonl(episodes)?)?;

    let checks = ordering_checks(&entries, &cfg.eval, &cfg.env)?;
    fs::write(dir.file(ORDERING_FILE), jsonl(&checks)?)?;

    let probes = probe_modulated(cfg, &entries)?;
    if !probes.is_empty() {
        fs::write(dir.file(PROBES_FILE), serde_json::to_string(&probes)?)?;
    }

    print!("{text}");
    for c in &checks {
        println!(
            "{:<28} {:>2} wins {:>2} losses {:>2} ties  p = {:.4}",
            c.name, c.test.wins, c.test.losses, c.test.ties, c.test.p_value
        );
    }
    Ok(())
}

/// Modulator probes at the ends of the motor-gain range for every
/// modulated policy.
fn probe_modulated(cfg: &RunConfig, entries: &[sma_core::pipeline::PolicyEntry]) -> Result<Vec<ProbeTrace>> {
    let grid = axis_grid(&cfg.env, EvalAxis::MotorGain, 2);
    let mut out = Vec::new();
    for e in entries.iter().filter(|e| e.ac.agent.mode == AdaptMode::Modulator) {
        out.extend(probe_policy(e, &cfg.env, EvalAxis::MotorGain, &grid, cfg.eval.seed)?);
    }
    Ok(out)
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

/// Curve of one metrics stream: reward per step for training loops,
/// validation error per epoch for estimator fits.
pub fn stream_series(records: &[serde_json::Value]) -> Option<(String, Series)> {
    let pick = |x: &str, y: &str| -> Vec<(f64, f64)> {
        records
            .iter()
            .filter_map(|r| Some((r.get(x)?.as_f64()?, r.get(y)?.as_f64()?)))
            .collect()
    };
    let rl = pick("iteration", "mean_reward");
    if !rl.is_empty() {
        return Some(("mean reward per step".into(), Series { label: "train".into(), points: rl }));
    }
    let val = pick("epoch", "validation_mse");
    let pts = if val.is_empty() { pick("epoch", "train_loss") } else { val };
    (!pts.is_empty()).then(|| ("estimator error".into(), Series { label: "fit".into(), points: pts }))
}

pub fn plot(run_dir: &Path) -> Result<()> {
    let dir = RunDir::open(run_dir)?;
    let mut curves = Vec::new();
    for stage in STAGES {
        let path = dir.metrics(stage);
        if !path.exists() {
            continue;
        }
        let records = read_records(&path)?;
        if let Some(c) = stream_series(&records) {
            curves.push((stage, c));
        }
    }
    if curves.is_empty() {
        bail!("no metric records under {}", dir.root().display());
    }
    let plots = dir.file(PLOTS_DIR);
    fs::create_dir_all(&plots)?;
    let mut written: Vec<PathBuf> = Vec::new();
    for (stage, (ylabel, series)) in &curves {
        let xlabel = if series.label == "fit" { "epoch" } else { "iteration" };
        let path = plots.join(format!("learning_{stage}.svg"));
        fs::write(&path, line_chart(&format!("{stage} learning curve"), xlabel, ylabel, std::slice::from_ref(series)))?;
        written.push(path);
    }

    let probes_path = dir.file(PROBES_FILE);
    if probes_path.exists() {
        let text = fs::read_to_string(&probes_path)?;
        let probes: Vec<ProbeTrace> =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", probes_path.display()))?;
        written.extend(plot_probes(&plots, &probes)?);
    } else {
        eprintln!("note: {} not found; run `sma eval` for modulator and weight figures", probes_path.display());
    }
    for p in &written {
        println!("{}", p.display());
    }
    Ok(())
}

fn plot_probes(plots: &Path, probes: &[ProbeTrace]) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let series: Vec<Series> = probes
        .iter()
        .map(|p| Series {
            label: format!("{} {}={:.2}", p.policy, p.axis.label(), p.value),
            points: p.modulator_abs.iter().enumerate().map(|(t, m)| (t as f64, *m)).collect(),
        })
        .collect();
    if !series.is_empty() {
        let path = plots.join("modulators.svg");
        fs::write(&path, line_chart("modulator magnitude", "step", "mean |m|", &series))?;
        written.push(path);
    }
    for p in probes.iter().filter(|p| !p.weights_initial.is_empty()) {
        let all = p.weights_initial.iter().chain(&p.weights_final).copied();
        let lo = all.clone().fold(f64::INFINITY, f64::min);
        let hi = all.fold(f64::NEG_INFINITY, f64::max);
        let hists = vec![
            ("episode start".to_string(), histogram_in(&p.weights_initial, lo, hi, 30)),
            ("episode end".to_string(), histogram_in(&p.weights_final, lo, hi, 30)),
        ];
        let path = plots.join(format!("weights_{}_{}.svg", slug(&p.policy), slug(&format!("{:.2}", p.value))));
        fs::write(
            &path,
            histogram_chart(&format!("{} plastic weights ({} = {:.2})", p.policy, p.axis.label(), p.value), "weight", &hists),
        )?;
        written.push(path);
    }
    Ok(written)
}
