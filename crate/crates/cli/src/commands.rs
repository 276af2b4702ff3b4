use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context};
use fetree::pruning::write_cv_csv;
use fetree::simlab::{read_results, run_study, write_quartiles, write_results, write_summary, SimSpec, StudyModel};
use fetree::{fit_model, load_csv, CsvColumns, FittedModel};

use crate::config::{resolve, sibling};
use crate::summary::render;
use crate::{Failure, FitArgs, PredictArgs, ReportArgs, SimulateArgs};

type CmdResult = Result<(), Failure>;

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?))
}

fn header(path: &Path) -> anyhow::Result<Vec<String>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("cannot open {}", path.display()))?;
    let h = rdr.headers().with_context(|| format!("cannot read header of {}", path.display()))?;
    if h.is_empty() || (h.len() == 1 && h.get(0) == Some("")) {
        bail!("{} is empty", path.display());
    }
    Ok(h.iter().map(|s| s.trim().to_string()).collect())
}

pub fn fit(args: FitArgs) -> CmdResult {
    let plan = resolve(args).map_err(Failure::usage)?;
    let covariates = match &plan.covariates {
        Some(c) => c.clone(),
        None => header(&plan.data)?
            .into_iter()
            .filter(|c| *c != plan.outcome && *c != plan.unit)
            .collect(),
    };
    let columns = CsvColumns {
        outcome: plan.outcome.clone(),
        unit: plan.unit.clone(),
        covariates,
        kinds: plan.kinds.clone(),
    };
    let data = load_csv(&plan.data, &columns)?;
    let model = fit_model(&data, &plan.fit)?;

    let mut out = create(&plan.out)?;
    out.write_all(model.to_json()?.as_bytes())?;
    out.write_all(b"\n")?;
    out.flush()?;

    let mut effective = plan.fit.clone();
    if let FittedModel::Tree(m) = &model {
        if let Some(curve) = &m.cv_curve {
            write_cv_csv(curve, create(&plan.cv_out)?)?;
        }
        if let Some(cfg) = &m.config {
            effective = cfg.clone();
        }
    }
    print!("{}", render(&model, &effective));
    Ok(())
}

pub fn predict(args: PredictArgs) -> CmdResult {
    let text = std::fs::read_to_string(&args.model).with_context(|| format!("cannot read {}", args.model.display()))?;
    let model = FittedModel::from_json(&text)?;
    let names = header(&args.data)?;
    let find = |name: &str| {
        names
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow!("{}: missing column `{name}`", args.data.display()))
    };
    let unit_col = find(&args.unit)?;
    let cov_cols = model.covariates().iter().map(|c| find(c)).collect::<anyhow::Result<Vec<_>>>()?;

    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(&args.data)?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.with_context(|| format!("row {}", i + 1))?;
        let unit = rec.get(unit_col).unwrap_or("").to_string();
        let x = cov_cols
            .iter()
            .zip(model.covariates())
            .map(|(&c, name)| {
                let raw = rec.get(c).unwrap_or("");
                raw.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| anyhow!("row {}, column `{name}`: non-numeric value `{raw}`", i + 1))
            })
            .collect::<anyhow::Result<Vec<f64>>>()?;
        rows.push((unit, x));
    }
    if rows.is_empty() {
        return Err(anyhow!("{} has no data rows", args.data.display()).into());
    }
    if !args.allow_unseen_units {
        let unseen: BTreeSet<&str> = rows
            .iter()
            .filter(|(u, x)| model.predict(x, u, false).is_err())
            .map(|(u, _)| u.as_str())
            .collect();
        if !unseen.is_empty() {
            let list: Vec<&str> = unseen.into_iter().collect();
            return Err(anyhow!(
                "units not seen when fitting: {} (use --allow-unseen-units for fallback predictions)",
                list.join(", ")
            )
            .into());
        }
    }
    let mut w = csv::Writer::from_writer(create(&args.out)?);
    w.write_record(["row", "unit", "leaf", "cluster", "prediction", "fallback"])?;
    for (i, (unit, x)) in rows.iter().enumerate() {
        let p = model.predict(x, unit, args.allow_unseen_units)?;
        let opt = |v: Option<usize>| v.map_or(String::new(), |v| v.to_string());
        w.write_record([
            (i + 1).to_string(),
            unit.clone(),
            opt(p.leaf),
            opt(p.group),
            p.value.to_string(),
            u8::from(p.fallback).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn simulate(args: SimulateArgs) -> CmdResult {
    let models = match &args.models {
        Some(list) => list
            .iter()
            .map(|m| m.parse::<StudyModel>())
            .collect::<fetree::Result<Vec<_>>>()
            .map_err(Failure::usage)?,
        None => StudyModel::ALL.to_vec(),
    };
    if args.workers == Some(0) {
        return Err(Failure::usage(anyhow!("--workers must be at least 1")));
    }
    let mut specs = Vec::new();
    for &s in &args.scenario {
        for &t in &args.setting {
            specs.push(SimSpec::new(s, t).map_err(Failure::usage)?);
        }
    }
    let out = run_study(&specs, &models, args.reps, args.seed, args.workers)?;
    for f in &out.failures {
        eprintln!(
            "warning: scenario {} setting {} rep {} model {} failed: {}",
            f.scenario, f.setting, f.rep, f.model, f.message
        );
    }
    write_results(&out.rows, create(&args.out)?)?;
    eprintln!("{} result rows, {} failed fits", out.rows.len(), out.failures.len());
    Ok(())
}

pub fn report(args: ReportArgs) -> CmdResult {
    let file = File::open(&args.input).with_context(|| format!("cannot open {}", args.input.display()))?;
    let rows = read_results(file)?;
    let mut md = create(&args.out)?;
    write_summary(&rows, &mut md)?;
    md.flush()?;
    let quartiles = args.quartiles.clone().unwrap_or_else(|| sibling(&args.out, ".quartiles.csv"));
    write_quartiles(&rows, create(&quartiles)?)?;
    Ok(())
}
