use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clea::behaviors::{BehaviorDatabase, GeneratorConfig, PayloadTable};
use clea::eval::{
    alignment_curve, metrics, nearest, neighbors, run_plan, simulate_rankings, test_preference_accuracy, CellRow,
    Criterion, CriteriaReport, Elicitation, QueryGenerator, SeedOutcome, Study,
};
use clea::exploration::{parse_session_log, sample_population, simulate_session, write_session_log, TripletSampler};
use clea::features::{train_feature_space, FeatureSpace, FeatureTable, Objective, TrainData, SWEEP_GRID};
use clea::reward::{cosine, RankingRecord, RewardMode};
use clea::rng::{derive_seed, stream};
use clea::{BehaviorId, ExplorationPage, Weighting};
use clea_service::{AppState, Dataset};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use toml::Value;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::{Cli, Command, Out};

const SPACE_STEM: &str = "space";

pub fn run(cli: Cli) -> Result<()> {
    let resolve = |implied: Vec<(String, Value)>| RunConfig::resolve(cli.config.as_deref(), &cli.sets, &implied);
    match &cli.command {
        Command::GenDb { modality, n, seed, out } => {
            let mut implied = vec![];
            if let Some(m) = modality {
                implied.push(("plan.modality".into(), Value::String(m.clone())));
            }
            if let Some(n) = n {
                implied.push(("plan.generator.n".into(), Value::Integer(*n as i64)));
            }
            if let Some(s) = seed {
                implied.push(("seed".into(), Value::Integer(*s as i64)));
            }
            gen_db(&resolve(implied)?, out)
        }
        Command::Simulate {
            db,
            users,
            pages,
            page_size,
            eval_users,
            out,
        } => {
            let (db_file, database) = load_db(db)?;
            let mut implied = vec![modality_of(&database)];
            for (key, v) in [
                ("plan.train_users", users),
                ("plan.pages_per_user", pages),
                ("plan.page_size", page_size),
                ("plan.eval_users", eval_users),
            ] {
                if let Some(v) = v {
                    implied.push((key.into(), Value::Integer(*v as i64)));
                }
            }
            simulate(&resolve(implied)?, &db_file, &database, out)
        }
        Command::Train {
            db,
            sessions,
            objective,
            dim,
            alpha,
            beta,
            weighting,
            out,
        } => {
            let (db_file, database) = load_db(db)?;
            let mut implied = vec![modality_of(&database)];
            if let Some(a) = alpha {
                implied.push(("plan.hyper.alpha".into(), Value::Float(*a)));
            }
            if let Some(b) = beta {
                implied.push(("plan.hyper.beta".into(), Value::Float(*b)));
            }
            if let Some(w) = weighting {
                implied.push(("plan.hyper.weighting".into(), Value::String(w.clone())));
            }
            let cfg = resolve(implied)?;
            let objective = parse_objective(objective)?;
            train(&cfg, &db_file, &database, sessions.as_deref(), objective, *dim, out)
        }
        Command::Sweep {
            db,
            sessions,
            objective,
            dim,
            param,
            values,
            out,
        } => {
            let (db_file, database) = load_db(db)?;
            let cfg = resolve(vec![modality_of(&database)])?;
            let objective = parse_objective(objective)?;
            let values = if values.is_empty() { SWEEP_GRID.to_vec() } else { values.clone() };
            sweep(&cfg, &db_file, &database, sessions, objective, *dim, param, &values, out)
        }
        Command::Evaluate {
            criteria,
            modality,
            seeds,
            db,
            rankings,
            spaces,
            out,
        } => {
            let criteria = Criterion::parse_list(criteria).map_err(CliError::usage)?;
            if db.is_some() || rankings.is_some() || !spaces.is_empty() {
                let db = db.as_ref().ok_or_else(|| CliError::usage("artifact evaluation needs --db"))?;
                let rankings = rankings.as_ref().ok_or_else(|| CliError::usage("artifact evaluation needs --rankings"))?;
                let (_, database) = load_db(db)?;
                let cfg = resolve(vec![modality_of(&database)])?;
                evaluate_artifacts(&cfg, &database, rankings, spaces, &criteria, out)
            } else {
                let mut implied = vec![];
                if let Some(m) = modality {
                    implied.push(("plan.modality".into(), Value::String(m.clone())));
                }
                if let Some(n) = seeds {
                    let list = (0..*n as i64).map(Value::Integer).collect();
                    implied.push(("plan.seeds".into(), Value::Array(list)));
                }
                evaluate_simulation(&resolve(implied)?, &criteria, out)
            }
        }
        Command::Neighbors { space, db, id, k } => {
            let (_, database) = load_db(db)?;
            let space = load_space(space)?;
            let table = space.embed(&database.payloads())?.standardized();
            let found = neighbors(&table, BehaviorId(*id), *k)?;
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            writeln!(w, "rank,id,cosine")?;
            for (rank, (nid, c)) in found.iter().enumerate() {
                writeln!(w, "{},{},{c:.6}", rank + 1, nid.0)?;
            }
            Ok(())
        }
        Command::Serve { db, sessions, host, port } => {
            let cfg = resolve(vec![])?;
            serve(&cfg, db, sessions.as_deref(), host, *port)
        }
        Command::PlotData { report, out } => {
            let cfg = resolve(vec![])?;
            // A report directory or the `report.json` inside one.
            let report_dir = if report.is_dir() { report.as_path() } else { report.parent().unwrap_or(Path::new(".")) };
            let loaded = CriteriaReport::load(report_dir).map_err(|e| CliError::from(e).at(report))?;
            let dir = fresh_dir(&cfg, out, "plots")?;
            let files = loaded.write_plot_data(&dir)?;
            emit(&serde_json::json!({ "out": dir, "files": files }));
            Ok(())
        }
    }
}

fn parse_objective(s: &str) -> Result<Objective> {
    s.parse().map_err(CliError::usage)
}

fn modality_of(db: &BehaviorDatabase) -> (String, Value) {
    ("plan.modality".into(), Value::String(db.modality.to_string()))
}

fn emit(v: &serde_json::Value) {
    println!("{v}");
}

/// Creates the artifact directory, refusing to reuse a nonempty one, and
/// writes the resolved config into it.
fn fresh_dir(cfg: &RunConfig, out: &Out, default: &str) -> Result<PathBuf> {
    let dir = cfg.artifact_dir(out.out.as_deref().unwrap_or(Path::new(default)));
    if dir.exists() && std::fs::read_dir(&dir)?.next().is_some() {
        return Err(CliError::data("refusing to overwrite a nonempty artifact directory; pass a new --out").at(&dir));
    }
    std::fs::create_dir_all(&dir).map_err(|e| CliError::data(e.to_string()).at(&dir))?;
    let argv: Vec<String> = std::env::args().collect();
    let text = format!("# {}\n{}", argv.join(" "), cfg.to_toml());
    std::fs::write(dir.join("config.toml"), text)?;
    Ok(dir)
}

fn resolve_file(path: &Path, name: &str) -> PathBuf {
    if path.is_dir() {
        path.join(name)
    } else {
        path.to_path_buf()
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::data(format!("cannot open {}: {e}", path.display())).at(path))
}

fn load_db(path: &Path) -> Result<(PathBuf, BehaviorDatabase)> {
    let file = resolve_file(path, "db.jsonl");
    let db = BehaviorDatabase::read_jsonl(open(&file)?).map_err(|e| CliError::from(e).at(&file))?;
    Ok((file, db))
}

fn load_pages(path: &Path, db: &BehaviorDatabase) -> Result<Vec<ExplorationPage>> {
    let file = resolve_file(path, "sessions.jsonl");
    let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or("session").to_string();
    parse_session_log(open(&file)?, db, &stem).map_err(|e| CliError::from(e).at(&file))
}

fn load_space(dir: &Path) -> Result<FeatureSpace> {
    let ckpt = dir.join(format!("{SPACE_STEM}.ckpt.json"));
    if !ckpt.exists() {
        return Err(CliError::data(format!("missing feature-space checkpoint {}", ckpt.display())).at(&ckpt));
    }
    FeatureSpace::load(dir, SPACE_STEM).map_err(|e| CliError::from(e).at(dir))
}

fn write_jsonl_db(db: &BehaviorDatabase, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    db.write_jsonl(&mut w, true)?;
    w.flush()?;
    Ok(())
}

fn gen_db(cfg: &RunConfig, out: &Out) -> Result<()> {
    let gen = GeneratorConfig {
        seed: cfg.seed,
        map_seed: None,
        ..cfg.plan.generator.clone()
    };
    let db = BehaviorDatabase::generate(&gen)?;
    // Another sample of the same payload map, for the pretrained baseline.
    let aux = BehaviorDatabase::generate(&GeneratorConfig {
        seed: derive_seed(cfg.seed, "auxiliary-db", 0),
        map_seed: Some(cfg.seed),
        ..gen.clone()
    })?;
    let dir = fresh_dir(cfg, out, &format!("db-{}-s{}", gen.modality, cfg.seed))?;
    write_jsonl_db(&db, &dir.join("db.jsonl"))?;
    write_jsonl_db(&aux, &dir.join("aux.jsonl"))?;
    emit(&serde_json::json!({ "out": dir, "behaviors": db.len(), "modality": db.modality }));
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct UserRecord {
    name: String,
    omega: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct UsersFile {
    train: Vec<UserRecord>,
    eval: Vec<UserRecord>,
    /// Favorite behavior of each training user, deduplicated.
    exemplars: Vec<BehaviorId>,
}

/// One line of `rankings.jsonl`.
#[derive(Serialize, Deserialize)]
struct UserRanking {
    user: String,
    #[serde(flatten)]
    record: RankingRecord,
}

fn simulate(cfg: &RunConfig, db_file: &Path, db: &BehaviorDatabase, out: &Out) -> Result<()> {
    if !db.has_ground_truth() {
        return Err(CliError::data("simulation needs a generated database with latent factors").at(db_file));
    }
    let plan = &cfg.plan;
    let k = db.latent(BehaviorId(0)).len();
    let train_users = sample_population(&plan.population, k, plan.train_users, derive_seed(cfg.seed, "population", 0), "train");
    let eval_users = sample_population(&plan.population, k, plan.eval_users, derive_seed(cfg.seed, "population", 1), "eval");

    let mut pages = Vec::new();
    let mut exemplars = Vec::new();
    for user in &train_users {
        let session = simulate_session(user, db, plan.pages_per_user, plan.page_size)?;
        let favorite = session
            .iter()
            .flat_map(|p| p.explored.iter().copied())
            .max_by(|&a, &b| user.utility(db, a).total_cmp(&user.utility(db, b)).then(b.cmp(&a)));
        if let Some(f) = favorite.filter(|f| !exemplars.contains(f)) {
            exemplars.push(f);
        }
        pages.extend(session);
    }

    // No feature space exists yet, so queries come from neighbors in
    // standardized payload space.
    let payloads = db.payloads();
    let table = FeatureTable::new(payloads.dim, payloads.flat().to_vec()).standardized();
    let generator = QueryGenerator::new(&exemplars, &[("payload", &table)])?;
    let mut rankings = Vec::new();
    for (u, user) in eval_users.iter().enumerate() {
        let mut r = stream(cfg.seed, "rankings", u as u64);
        for record in simulate_rankings(user, db, &generator, plan.schedule(), &mut r)? {
            rankings.push(UserRanking {
                user: user.name.clone(),
                record,
            });
        }
    }

    let dir = fresh_dir(cfg, out, &format!("sim-{}-s{}", db.modality, cfg.seed))?;
    let mut w = BufWriter::new(File::create(dir.join("sessions.jsonl"))?);
    write_session_log(&pages, &mut w)?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(dir.join("rankings.jsonl"))?);
    for r in &rankings {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    let users = |us: &[clea::SimUser]| {
        us.iter()
            .map(|u| UserRecord {
                name: u.name.clone(),
                omega: u.omega_star().to_vec(),
            })
            .collect()
    };
    let file = UsersFile {
        train: users(&train_users),
        eval: users(&eval_users),
        exemplars,
    };
    serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join("users.json"))?), &file)?;
    emit(&serde_json::json!({
        "out": dir,
        "pages": pages.len(),
        "rankings": rankings.len(),
        "exemplars": file.exemplars.len(),
    }));
    Ok(())
}

fn auxiliary(db_file: &Path) -> Result<Option<PayloadTable>> {
    let aux = db_file.with_file_name("aux.jsonl");
    if !aux.exists() {
        return Ok(None);
    }
    let db = BehaviorDatabase::read_jsonl(open(&aux)?).map_err(|e| CliError::from(e).at(&aux))?;
    Ok(Some(db.payloads()))
}

#[derive(Serialize)]
struct LossRow {
    epoch: usize,
    total: f64,
    triplet: f64,
    reconstruction: f64,
    kl: f64,
}

fn write_loss_csv(path: &Path, report: &clea::features::LossReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (i, e) in report.epochs.iter().enumerate() {
        w.serialize(LossRow {
            epoch: i + 1,
            total: e.total,
            triplet: e.triplet,
            reconstruction: e.reconstruction,
            kl: e.kl,
        })?;
    }
    w.flush()?;
    Ok(())
}

fn fit(
    cfg: &RunConfig,
    db_file: &Path,
    db: &BehaviorDatabase,
    pages: &[ExplorationPage],
    objective: Objective,
    dim: usize,
    hyper: &clea::Hyper,
) -> Result<(FeatureSpace, clea::features::LossReport)> {
    let payloads = db.payloads();
    let aux = if objective == Objective::Pretrained { auxiliary(db_file)? } else { None };
    let data = TrainData {
        payloads: &payloads,
        pages,
        auxiliary: aux.as_ref(),
    };
    let seed = derive_seed(cfg.seed, "space", dim as u64);
    let (mut space, report) = train_feature_space(objective, &cfg.plan.encoder_hidden, dim, data, hyper, seed)?;
    space.provenance.database = Some(db_file.display().to_string());
    Ok((space, report))
}

fn train(
    cfg: &RunConfig,
    db_file: &Path,
    db: &BehaviorDatabase,
    sessions: Option<&Path>,
    objective: Objective,
    dim: usize,
    out: &Out,
) -> Result<()> {
    if dim == 0 {
        return Err(CliError::usage("--dim must be positive"));
    }
    let pages = match sessions {
        Some(p) => load_pages(p, db)?,
        None if objective.uses_triplets() => return Err(CliError::usage(format!("{objective} needs --sessions"))),
        None => vec![],
    };
    let (space, report) = fit(cfg, db_file, db, &pages, objective, dim, &cfg.plan.hyper)?;
    let dir = fresh_dir(cfg, out, &format!("space-{objective}-d{dim}-s{}", cfg.seed))?;
    space.save(&dir, SPACE_STEM)?;
    write_loss_csv(&dir.join("loss.csv"), &report)?;
    let last = report.epochs.last().copied().unwrap_or_default();
    emit(&serde_json::json!({
        "out": dir,
        "objective": objective,
        "dim": dim,
        "epochs": report.epochs.len(),
        "final_loss": last.total,
        "margin_violation_rate": report.margin_violation_rate,
    }));
    Ok(())
}

/// Fraction of triplets whose anchor sits closer to the positive.
fn triplet_accuracy(table: &FeatureTable, pages: &[ExplorationPage], seed: u64) -> Option<f64> {
    let sampler = TripletSampler::new(pages, Weighting::Uniform).ok()?;
    let triplets = sampler.sample_batch(1000, &mut stream(seed, "sweep-validation", 0));
    let d2 = |a: BehaviorId, b: BehaviorId| -> f64 { table.row(a).iter().zip(table.row(b)).map(|(x, y)| (x - y) * (x - y)).sum() };
    let ordered = triplets.iter().filter(|t| d2(t.anchor, t.positive) < d2(t.anchor, t.negative)).count();
    Some(ordered as f64 / triplets.len() as f64)
}

#[derive(Serialize)]
struct SweepRow {
    param: String,
    value: f64,
    epochs: usize,
    final_loss: f64,
    margin_violation_rate: Option<f64>,
    validation_triplet_accuracy: Option<f64>,
    checkpoint: String,
}

#[allow(clippy::too_many_arguments)]
fn sweep(
    cfg: &RunConfig,
    db_file: &Path,
    db: &BehaviorDatabase,
    sessions: &Path,
    objective: Objective,
    dim: usize,
    param: &str,
    values: &[f64],
    out: &Out,
) -> Result<()> {
    if param != "alpha" && param != "beta" {
        return Err(CliError::usage(format!("--param must be alpha or beta, got `{param}`")));
    }
    let pages = load_pages(sessions, db)?;
    // The last page of every multi-page session is held out.
    let mut last: BTreeMap<&str, usize> = BTreeMap::new();
    let mut count: BTreeMap<&str, usize> = BTreeMap::new();
    for p in &pages {
        let e = last.entry(p.session.as_str()).or_default();
        *e = (*e).max(p.position);
        *count.entry(p.session.as_str()).or_default() += 1;
    }
    let (val, fit_pages): (Vec<ExplorationPage>, Vec<ExplorationPage>) =
        pages.iter().cloned().partition(|p| count[p.session.as_str()] > 1 && last[p.session.as_str()] == p.position);
    let payloads = db.payloads();
    let dir = fresh_dir(cfg, out, &format!("sweep-{objective}-{param}-d{dim}-s{}", cfg.seed))?;
    let mut rows = Vec::new();
    for &v in values {
        let mut hyper = cfg.plan.hyper.clone();
        match param {
            "alpha" => hyper.alpha = v,
            _ => hyper.beta = v,
        }
        let (space, report) = fit(cfg, db_file, db, &fit_pages, objective, dim, &hyper)?;
        let sub = dir.join(format!("{param}-{v}"));
        std::fs::create_dir_all(&sub)?;
        space.save(&sub, SPACE_STEM)?;
        write_loss_csv(&sub.join("loss.csv"), &report)?;
        let table = space.embed(&payloads)?;
        rows.push(SweepRow {
            param: param.to_string(),
            value: v,
            epochs: report.epochs.len(),
            final_loss: report.epochs.last().map_or(0.0, |e| e.total),
            margin_violation_rate: report.margin_violation_rate,
            validation_triplet_accuracy: triplet_accuracy(&table, &val, cfg.seed),
            checkpoint: sub.display().to_string(),
        });
    }
    let mut w = csv::Writer::from_path(dir.join("sweep.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    emit(&serde_json::json!({ "out": dir, "values": values.len(), "validation_pages": val.len() }));
    Ok(())
}

fn summarize(report: &CriteriaReport, dir: &Path) {
    let trends: Vec<_> = report
        .summary
        .trends
        .iter()
        .map(|t| serde_json::json!({ "name": t.name, "successes": t.successes, "trials": t.trials, "pass": t.pass }))
        .collect();
    emit(&serde_json::json!({ "out": dir, "cells": report.rows.len(), "trends": trends }));
}

fn evaluate_simulation(cfg: &RunConfig, criteria: &BTreeSet<Criterion>, out: &Out) -> Result<()> {
    let dir = fresh_dir(cfg, out, &format!("eval-{}", cfg.plan.modality))?;
    let report = run_plan(&cfg.plan, criteria)?;
    report.write(&dir)?;
    report.write_plot_data(&dir)?;
    summarize(&report, &dir);
    Ok(())
}

fn load_rankings(path: &Path, db: &BehaviorDatabase) -> Result<Vec<(String, Vec<RankingRecord>)>> {
    let file = resolve_file(path, "rankings.jsonl");
    let mut by_user: Vec<(String, Vec<RankingRecord>)> = Vec::new();
    for (i, line) in open(&file)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| CliError::data(format!("rankings line {}: {m}", i + 1)).at(&file);
        let r: UserRanking = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        r.record.validate().map_err(|e| bad(e.to_string()))?;
        if let Some(id) = r.record.query.iter().find(|id| !db.contains(**id)) {
            return Err(bad(format!("unknown behavior {id}")));
        }
        match by_user.iter_mut().find(|(u, _)| *u == r.user) {
            Some((_, rs)) => rs.push(r.record),
            None => by_user.push((r.user, vec![r.record])),
        }
    }
    if let Some((u, _)) = by_user.iter().find(|(_, rs)| rs.len() < 2) {
        return Err(CliError::data(format!("user {u} has fewer than two rankings")).at(&file));
    }
    if by_user.is_empty() {
        return Err(CliError::data("no rankings").at(&file));
    }
    Ok(by_user)
}

fn exemplars_near(rankings: &Path) -> Option<Vec<BehaviorId>> {
    let dir = if rankings.is_dir() { rankings.to_path_buf() } else { rankings.parent()?.to_path_buf() };
    let users: UsersFile = serde_json::from_reader(open(&dir.join("users.json")).ok()?).ok()?;
    Some(users.exemplars)
}

fn evaluate_artifacts(
    cfg: &RunConfig,
    db: &BehaviorDatabase,
    rankings_path: &Path,
    spaces: &[PathBuf],
    criteria: &BTreeSet<Criterion>,
    out: &Out,
) -> Result<()> {
    let supported = [Criterion::Completeness, Criterion::Simplicity, Criterion::Minimality, Criterion::Explainability];
    if let Some(c) = criteria.iter().find(|c| !supported.contains(c)) {
        return Err(CliError::usage(format!("criterion {c} runs in simulation mode only (drop --db/--rankings/--spaces)")));
    }
    if spaces.is_empty() {
        return Err(CliError::data("no feature-space checkpoints given; pass --spaces"));
    }
    let loaded: Vec<(PathBuf, FeatureSpace)> = spaces.iter().map(|p| Ok((p.clone(), load_space(p)?))).collect::<Result<_>>()?;
    let by_user = load_rankings(rankings_path, db)?;
    let exemplars = if criteria.contains(&Criterion::Explainability) {
        Some(exemplars_near(rankings_path).ok_or_else(|| CliError::data("explainability needs users.json next to the rankings").at(rankings_path))?)
    } else {
        None
    };

    let plan = &cfg.plan;
    let rankings: Vec<Vec<RankingRecord>> = by_user.into_iter().map(|(_, rs)| rs).collect();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (u, rs) in rankings.iter().enumerate() {
        let n_train = ((plan.split * rs.len() as f64).round() as usize).clamp(1, rs.len() - 1);
        let mut idx: Vec<usize> = (0..rs.len()).collect();
        idx.shuffle(&mut stream(cfg.seed, "artifact-split", u as u64));
        let (mut a, mut b) = (idx[..n_train].to_vec(), idx[n_train..].to_vec());
        a.sort_unstable();
        b.sort_unstable();
        train.push(a);
        test.push(b);
    }

    let payloads = db.payloads();
    let hash = plan.config_hash();
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for (path, space) in &loaded {
        let table = space.embed(&payloads)?.standardized();
        let dim = table.dim;
        let el = Elicitation {
            seed: cfg.seed,
            dim,
            rankings: rankings.clone(),
            train: train.clone(),
            test: test.clone(),
        };
        let mut row = CellRow {
            seed: cfg.seed,
            modality: db.modality,
            study: Study::Main,
            objective: space.objective.as_str().to_string(),
            dim,
            weighting: space.hyper.weighting,
            tpa: None,
            auc_alignment: None,
            final_alignment: None,
            explainability: None,
            padded: false,
            margin_violation_rate: None,
            config_hash: hash.clone(),
        };
        if criteria.contains(&Criterion::Completeness) {
            row.tpa = Some(test_preference_accuracy(plan, &el, table.flat(), dim, &RewardMode::Features)?);
        }
        if criteria.contains(&Criterion::Simplicity) || criteria.contains(&Criterion::Minimality) {
            let users = plan.alignment_users.map_or(el.users(), |n| n.min(el.users()));
            let (mut aucs, mut finals) = (Vec::new(), Vec::new());
            for u in 0..users {
                if let Some((curve, padded)) = alignment_curve(&el, u, &table, &table, &plan.mh, plan.alignment_queries)? {
                    row.padded |= padded;
                    aucs.push(metrics::auc(&curve));
                    finals.push(*curve.last().unwrap_or(&0.0));
                }
            }
            if !aucs.is_empty() {
                row.auc_alignment = Some(metrics::mean(&aucs));
                row.final_alignment = Some(metrics::mean(&finals));
            }
        }
        if let Some(ex) = &exemplars {
            let set: BTreeSet<BehaviorId> = ex.iter().copied().collect();
            let values: Vec<f64> = (0..el.users())
                .filter_map(|u| {
                    let top = table.row(el.favorite(u));
                    let (n, _) = nearest(&table, top, |id| !set.contains(&id))?;
                    cosine(top, table.row(n))
                })
                .collect();
            if !values.is_empty() {
                row.explainability = Some(metrics::mean(&values));
            }
        }
        if row.tpa.is_none() && row.auc_alignment.is_none() && row.explainability.is_none() {
            warnings.push(format!("{}: no metric computed", path.display()));
        }
        rows.push(row);
    }

    let dims: BTreeSet<usize> = rows.iter().map(|r| r.dim).collect();
    let mut summary_plan = plan.clone();
    summary_plan.seeds = vec![cfg.seed];
    summary_plan.dims = dims.iter().copied().collect();
    summary_plan.primary_dim = *dims.iter().next().expect("at least one space");
    let outcome = SeedOutcome {
        rows,
        warnings,
        ..SeedOutcome::default()
    };
    let report = CriteriaReport::assemble(&summary_plan, criteria, vec![outcome]);
    let dir = fresh_dir(cfg, out, &format!("eval-artifacts-{}", db.modality))?;
    report.write(&dir)?;
    report.write_plot_data(&dir)?;
    summarize(&report, &dir);
    Ok(())
}

fn serve(cfg: &RunConfig, dbs: &[PathBuf], sessions: Option<&Path>, host: &str, port: u16) -> Result<()> {
    let state = AppState::new(cfg.service.clone());
    let mut names = Vec::new();
    for (i, path) in dbs.iter().enumerate() {
        let (file, db) = load_db(path)?;
        let name = if path.is_dir() { path.file_name() } else { file.file_stem() }
            .and_then(|s| s.to_str())
            .unwrap_or("db")
            .to_string();
        let mut data = Dataset::new(name.clone(), db.clone());
        if let Some(aux) = auxiliary(&file)? {
            data = data.with_auxiliary(aux);
        }
        if let (0, Some(s)) = (i, sessions) {
            data = data.with_population(load_pages(s, &db)?);
        }
        state.add_dataset(data);
        names.push(name);
    }
    let addr: std::net::SocketAddr = format!("{host}:{port}").parse().map_err(|e| CliError::usage(format!("bad address: {e}")))?;
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    emit(&serde_json::json!({ "listening": addr.to_string(), "databases": names }));
    runtime.block_on(clea_service::serve(state, addr))?;
    Ok(())
}
