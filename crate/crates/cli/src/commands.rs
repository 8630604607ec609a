use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::json;
use stagemoe::alignment::{try_align_cohort, write_placements_csv, Subject};
use stagemoe::checkpoint::{self, Checkpoint, Loaded};
use stagemoe::cohort::{generate_synthetic, read_jsonl, write_jsonl, SyntheticSpec};
use stagemoe::graph::{build_operators, load_connectome};
use stagemoe::metrics::evaluate;
use stagemoe::moe::{rk4, write_gate_csv, ModelField};
use stagemoe::training::{fit, FitConfig, FitReport};

use crate::plot;
use crate::{
    AlignArgs, Command, ConfigArgs, EvaluateArgs, FitArgs, GenerateArgs, PlotArgs, PredictArgs, SplitName,
};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate(a) => generate(a),
        Command::Fit(a) => fit_cmd(a),
        Command::Align(a) => align(a),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::ExportPlot(a) => export_plot(a),
        Command::Config(a) => config(a),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load_checkpoint(path: &Path) -> Result<Loaded> {
    checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn load_cohort(path: &Path) -> Result<Vec<Subject>> {
    read_jsonl(path).with_context(|| format!("reading cohort {}", path.display()))
}

fn generate(a: GenerateArgs) -> Result<()> {
    let spec = match &a.spec {
        Some(p) => SyntheticSpec::load(p).with_context(|| format!("reading generator spec {}", p.display()))?,
        None => SyntheticSpec::default(),
    };
    let cohort = generate_synthetic(&spec, a.seed)?;
    ensure_dir(&a.out)?;
    write_jsonl(&cohort.subjects, &a.out.join("cohort.jsonl"))?;
    cohort.truth.write_json(&a.out.join("truth.json"))?;
    cohort.connectome.write_csv(&a.out.join("connectome.csv"))?;
    log::info!("wrote {} subjects to {}", cohort.subjects.len(), a.out.display());
    Ok(())
}

fn fit_cmd(a: FitArgs) -> Result<()> {
    let config = match &a.config {
        Some(p) => FitConfig::load(p).with_context(|| format!("reading fit config {}", p.display()))?,
        None => FitConfig::default(),
    };
    let cohort = load_cohort(&a.cohort)?;
    let connectome =
        load_connectome(&a.connectome).with_context(|| format!("reading connectome {}", a.connectome.display()))?;
    let threads = if a.deterministic { 1 } else { a.threads };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    let outcome = pool.install(|| fit(&cohort, &connectome, &config))?;

    ensure_dir(&a.out)?;
    Checkpoint::from_fit(&outcome, &config, &connectome).save(&a.out.join("checkpoint.json"))?;
    fs::write(a.out.join("report.json"), serde_json::to_string_pretty(&outcome.report)? + "\n")?;
    let names = connectome.region_names();
    write_gate_csv(&outcome.model, &outcome.trajectory.times, &a.out.join("gate.csv"))?;
    outcome.trajectory.write_csv(&a.out.join("trajectory.csv"), names)?;
    let p = &outcome.report.placements;
    let all: Vec<_> = p.train.iter().chain(&p.val).chain(&p.test).cloned().collect();
    write_placements_csv(&all, &a.out.join("placements.csv"))?;
    outcome.report.error_map.write_csv(&a.out.join("error_map.csv"), names)?;
    log::info!("{}: {}", a.out.display(), outcome.report.stop_reason);
    Ok(())
}

fn align(a: AlignArgs) -> Result<()> {
    let loaded = load_checkpoint(&a.checkpoint)?;
    let cohort = load_cohort(&a.cohort)?;
    let ops = build_operators(&loaded.connectome);
    let traj = stagemoe::moe::integrate(&loaded.model, &ops)?;
    let placements = try_align_cohort(&traj, &cohort)?;
    write_placements_csv(&placements, &a.out)?;
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let loaded = load_checkpoint(&a.checkpoint)?;
    let model = &loaded.model;
    let ops = build_operators(&loaded.connectome);
    let horizon = a.horizon.unwrap_or(model.horizon());
    let traj = rk4(&ModelField { model, ops: &ops }, &model.c0(), horizon, model.step_size())?;
    let names = loaded.connectome.region_names();
    if a.t.is_empty() {
        traj.write_csv(&a.out, names)?;
        return Ok(());
    }
    let mut out = std::io::BufWriter::new(fs::File::create(&a.out)?);
    writeln!(out, "t,{}", names.join(","))?;
    for &t in &a.t {
        let c = traj.predict_at(t)?;
        write!(out, "{t}")?;
        for x in c {
            write!(out, ",{x}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

fn split_ids(report: &Path, split: SplitName) -> Result<Vec<String>> {
    let text = fs::read_to_string(report).with_context(|| format!("reading report {}", report.display()))?;
    let report: FitReport =
        serde_json::from_str(&text).with_context(|| format!("parsing report {}", report.display()))?;
    Ok(match split {
        SplitName::Train => report.split.train,
        SplitName::Val => report.split.val,
        SplitName::Test => report.split.test,
    })
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let loaded = load_checkpoint(&a.checkpoint)?;
    let mut cohort = load_cohort(&a.cohort)?;
    if let (Some(report), Some(split)) = (&a.report, a.split) {
        let ids = split_ids(report, split)?;
        cohort.retain(|s| ids.contains(&s.id));
        if cohort.len() != ids.len() {
            bail!("cohort is missing {} subjects of the selected split", ids.len() - cohort.len());
        }
    }
    if cohort.is_empty() {
        bail!("no subjects to evaluate");
    }
    let ops = build_operators(&loaded.connectome);
    let traj = stagemoe::moe::integrate(&loaded.model, &ops)?;
    let placements = try_align_cohort(&traj, &cohort)?;
    let eval = evaluate(&traj, &placements, &cohort)?;
    let body = json!({
        "subjects": cohort.len(),
        "observations": eval.observations,
        "sse": eval.sse,
        "mean_pearson": eval.mean_pearson,
        "pearson_skipped": eval.pearson_skipped,
    });
    let text = serde_json::to_string_pretty(&body)? + "\n";
    match &a.out {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn export_plot(a: PlotArgs) -> Result<()> {
    let title = a.title.clone().unwrap_or_else(|| file_stem(&a.input));
    let svg = plot::render(&a.input, a.kind, &title)?;
    fs::write(&a.out, svg)?;
    Ok(())
}

fn file_stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn config(a: ConfigArgs) -> Result<()> {
    debug_assert!(a.dump);
    if a.synthetic {
        print!("{}", SyntheticSpec::default().dump());
    } else {
        print!("{}", FitConfig::default().dump());
    }
    Ok(())
}
