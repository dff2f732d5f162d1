use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::behaviors::Modality;
use crate::exploration::Weighting;
use crate::features::Objective;

use super::metrics::{mean, standard_error, WinCount};
use super::run::SeedOutcome;
use super::{Criterion, EvalError, ExperimentPlan};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    Main,
    Weighting,
    Direct,
}

/// One (study, objective, dim, weighting, seed) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRow {
    pub seed: u64,
    pub modality: Modality,
    pub study: Study,
    /// Objective name, or `direct` for the payload-input reward net.
    pub objective: String,
    pub dim: usize,
    pub weighting: Weighting,
    pub tpa: Option<f64>,
    pub auc_alignment: Option<f64>,
    pub final_alignment: Option<f64>,
    pub explainability: Option<f64>,
    /// Whether some user's comparison stream had to be cycled.
    pub padded: bool,
    pub margin_violation_rate: Option<f64>,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub seed: u64,
    pub modality: Modality,
    pub objective: String,
    pub dim: usize,
    pub eps: f64,
    pub final_alignment: f64,
    pub trials: usize,
    pub config_hash: String,
}

/// Alignment after `step` comparisons, averaged over evaluation users.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub seed: u64,
    pub objective: String,
    pub dim: usize,
    pub step: usize,
    pub alignment: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub study: Study,
    pub objective: String,
    pub dim: usize,
    pub weighting: Weighting,
    pub metric: String,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

/// Fraction of trials on which a directional claim held.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendCheck {
    pub name: String,
    pub description: String,
    pub successes: usize,
    pub trials: usize,
    pub fraction: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl TrendCheck {
    fn new(name: &str, description: &str, successes: usize, trials: usize, threshold: f64) -> Self {
        let fraction = if trials == 0 { 0.0 } else { successes as f64 / trials as f64 };
        Self {
            name: name.to_string(),
            description: description.to_string(),
            successes,
            trials,
            fraction,
            threshold,
            pass: trials > 0 && fraction >= threshold,
        }
    }
}

/// Time-linear against uniform weighting for one objective and metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightingWins {
    pub objective: String,
    pub metric: String,
    /// Wins are trials where time-linear weighting scored higher.
    pub count: WinCount,
}

/// Human-study values carried as metadata; not reproduction targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub label: String,
    pub value: f64,
}

fn reference_points() -> Vec<ReferencePoint> {
    [
        ("auditory dim 8 clea_vae auc_alignment", 0.438),
        ("auditory dim 8 random auc_alignment", -0.001),
        ("visual tpa clea_ae", 0.973),
        ("visual tpa direct", 0.938),
        ("auditory tpa clea_ae", 0.940),
        ("auditory tpa direct", 0.902),
        ("kinetic tpa clea_ae", 0.971),
        ("kinetic tpa direct", 0.569),
    ]
    .into_iter()
    .map(|(label, value)| ReferencePoint {
        label: label.to_string(),
        value,
    })
    .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub aggregates: Vec<Aggregate>,
    pub trends: Vec<TrendCheck>,
    pub weighting: Vec<WeightingWins>,
    /// CLEA+AE against direct reward learning; ties count for CLEA+AE.
    pub direct: Option<WinCount>,
    pub reference: Vec<ReferencePoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriteriaReport {
    pub config_hash: String,
    pub modality: Modality,
    pub criteria: BTreeSet<Criterion>,
    pub plan: ExperimentPlan,
    pub rows: Vec<CellRow>,
    pub noise: Vec<NoiseRow>,
    pub curves: Vec<CurveRow>,
    pub summary: Summary,
    pub warnings: Vec<String>,
}

type Metric = fn(&CellRow) -> Option<f64>;

const METRICS: [(&str, Metric); 4] = [
    ("tpa", |r| r.tpa),
    ("auc_alignment", |r| r.auc_alignment),
    ("final_alignment", |r| r.final_alignment),
    ("explainability", |r| r.explainability),
];

const BASELINES: [Objective; 3] = [Objective::Random, Objective::Ae, Objective::Vae];

fn is_family(name: &str) -> bool {
    name.parse::<Objective>().is_ok_and(|o| o.is_clea_family())
}

impl CriteriaReport {
    pub fn assemble(plan: &ExperimentPlan, criteria: &BTreeSet<Criterion>, outcomes: Vec<SeedOutcome>) -> Self {
        let mut rows = Vec::new();
        let mut noise = Vec::new();
        let mut curves = Vec::new();
        let mut warnings = Vec::new();
        for o in outcomes {
            rows.extend(o.rows);
            noise.extend(o.noise);
            curves.extend(o.curves);
            warnings.extend(o.warnings);
        }
        let mut report = Self {
            config_hash: plan.config_hash(),
            modality: plan.modality,
            criteria: criteria.clone(),
            plan: plan.clone(),
            rows,
            noise,
            curves,
            summary: Summary::default(),
            warnings,
        };
        report.summary = report.summarize();
        report
    }

    fn summarize(&self) -> Summary {
        let mut groups: BTreeMap<(Study, String, usize, Weighting, &str), Vec<f64>> = BTreeMap::new();
        for r in &self.rows {
            for (name, get) in METRICS {
                if let Some(v) = get(r) {
                    groups
                        .entry((r.study, r.objective.clone(), r.dim, r.weighting, name))
                        .or_default()
                        .push(v);
                }
            }
        }
        let aggregates = groups
            .into_iter()
            .map(|((study, objective, dim, weighting, metric), v)| Aggregate {
                study,
                objective,
                dim,
                weighting,
                metric: metric.to_string(),
                mean: mean(&v),
                stderr: standard_error(&v),
                n: v.len(),
            })
            .collect();

        let mut trends = Vec::new();
        let plan = &self.plan;
        let has = |c: Criterion| self.criteria.contains(&c);
        if has(Criterion::Completeness) {
            let (s, t) = self.per_seed(plan.primary_dim, |r| r.tpa, |by| {
                let best_family = by.iter().filter(|(o, _)| is_family(o)).map(|(_, v)| *v).fold(f64::NAN, f64::max);
                let best_base = by
                    .iter()
                    .filter(|(o, _)| BASELINES.iter().any(|b| b.as_str() == o.as_str()))
                    .map(|(_, v)| *v)
                    .fold(f64::NAN, f64::max);
                (!best_family.is_nan() && !best_base.is_nan()).then_some(best_family > best_base)
            });
            trends.push(TrendCheck::new(
                "completeness",
                "best CLEA-family TPA above the best of random, ae, vae",
                s,
                t,
                0.7,
            ));
        }
        let top_is_family = |by: &BTreeMap<String, f64>| {
            let top = by.iter().max_by(|a, b| a.1.total_cmp(b.1)).map(|(o, _)| o.clone())?;
            Some(is_family(&top))
        };
        if has(Criterion::Minimality) || has(Criterion::Simplicity) {
            let (s, t) = self.per_seed(plan.smallest_dim(), |r| r.auc_alignment, top_is_family);
            trends.push(TrendCheck::new(
                "minimality",
                "a CLEA-family objective has the highest AUC-alignment at the smallest dim",
                s,
                t,
                0.7,
            ));
        }
        if has(Criterion::Simplicity) {
            let dims: BTreeSet<usize> = plan.dims.iter().copied().filter(|&d| d != plan.smallest_dim()).collect();
            for d in dims {
                let (s, t) = self.per_seed(d, |r| r.auc_alignment, top_is_family);
                trends.push(TrendCheck::new(
                    &format!("simplicity_dim{d}"),
                    "a CLEA-family objective has the highest AUC-alignment",
                    s,
                    t,
                    0.7,
                ));
            }
        }
        if has(Criterion::Explainability) {
            let (s, t) = self.per_seed(plan.primary_dim, |r| r.explainability, |by| {
                let fam: Vec<f64> = by.iter().filter(|(o, _)| is_family(o)).map(|(_, v)| *v).collect();
                let ae = by.get(Objective::Ae.as_str())?;
                (!fam.is_empty()).then(|| mean(&fam) > *ae)
            });
            trends.push(TrendCheck::new(
                "explainability",
                "mean CLEA-family nearest-exemplar cosine above ae",
                s,
                t,
                0.7,
            ));
        }
        if has(Criterion::Noise) && !self.noise.is_empty() {
            let max_eps = plan.noise_eps.iter().copied().fold(0.0, f64::max);
            let mut by: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
            for n in &self.noise {
                let e = by.entry(n.objective.as_str()).or_default();
                if n.eps == 0.0 {
                    e.0.push(n.final_alignment);
                }
                if n.eps == max_eps {
                    e.1.push(n.final_alignment);
                }
            }
            let ok = by.values().filter(|(clean, noisy)| mean(clean) >= mean(noisy)).count();
            trends.push(TrendCheck::new(
                "noise",
                "mean final alignment without noise at least that at the largest noise, per objective",
                ok,
                by.len(),
                1.0,
            ));
        }

        let mut weighting = Vec::new();
        if has(Criterion::Weighting) {
            let cells: Vec<&CellRow> = self.rows.iter().filter(|r| r.study == Study::Weighting).collect();
            let objectives: BTreeSet<&str> = cells.iter().map(|r| r.objective.as_str()).collect();
            for o in objectives {
                for (name, get) in METRICS {
                    let pick = |w: Weighting| -> BTreeMap<u64, f64> {
                        cells
                            .iter()
                            .filter(|r| r.objective == o && r.weighting == w)
                            .filter_map(|r| get(r).map(|v| (r.seed, v)))
                            .collect()
                    };
                    let (uni, lin) = (pick(Weighting::Uniform), pick(Weighting::TimeLinear));
                    let seeds: Vec<u64> = uni.keys().filter(|s| lin.contains_key(s)).copied().collect();
                    let a: Vec<f64> = seeds.iter().map(|s| lin[s]).collect();
                    let b: Vec<f64> = seeds.iter().map(|s| uni[s]).collect();
                    weighting.push(WeightingWins {
                        objective: o.to_string(),
                        metric: name.to_string(),
                        count: WinCount::from_pairs(&a, &b),
                    });
                }
            }
        }

        let mut direct = None;
        if has(Criterion::Direct) {
            let pick = |name: &str| -> BTreeMap<u64, f64> {
                self.rows
                    .iter()
                    .filter(|r| r.study == Study::Direct && r.objective == name)
                    .filter_map(|r| r.tpa.map(|v| (r.seed, v)))
                    .collect()
            };
            let (ours, theirs) = (pick(Objective::CleaAe.as_str()), pick("direct"));
            let seeds: Vec<u64> = ours.keys().filter(|s| theirs.contains_key(s)).copied().collect();
            let a: Vec<f64> = seeds.iter().map(|s| ours[s]).collect();
            let b: Vec<f64> = seeds.iter().map(|s| theirs[s]).collect();
            let count = WinCount::from_pairs(&a, &b);
            trends.push(TrendCheck::new(
                "direct",
                "clea_ae TPA at least the direct reward net's",
                count.wins + count.ties,
                count.trials,
                0.7,
            ));
            direct = Some(count);
        }

        Summary {
            aggregates,
            trends,
            weighting,
            direct,
            reference: reference_points(),
        }
    }

    /// Applies `judge` to each seed's `objective -> metric` map of main-study
    /// rows at `dim`; returns (successes, judged seeds).
    fn per_seed(
        &self,
        dim: usize,
        get: Metric,
        judge: impl Fn(&BTreeMap<String, f64>) -> Option<bool>,
    ) -> (usize, usize) {
        let mut by_seed: BTreeMap<u64, BTreeMap<String, f64>> = BTreeMap::new();
        for r in self.rows.iter().filter(|r| r.study == Study::Main && r.dim == dim) {
            if let Some(v) = get(r) {
                by_seed.entry(r.seed).or_default().insert(r.objective.clone(), v);
            }
        }
        let verdicts: Vec<bool> = by_seed.values().filter_map(&judge).collect();
        (verdicts.iter().filter(|&&v| v).count(), verdicts.len())
    }

    pub fn trend(&self, name: &str) -> Option<&TrendCheck> {
        self.summary.trends.iter().find(|t| t.name == name)
    }

    pub fn aggregate(&self, study: Study, objective: &str, dim: usize, metric: &str) -> Option<&Aggregate> {
        self.summary.aggregates.iter().find(|a| {
            a.study == study
                && a.objective == objective
                && a.dim == dim
                && a.metric == metric
                && a.weighting == Weighting::Uniform
        })
    }

    /// Writes `criteria.csv`, `noise.csv`, `curves.csv`, `summary.json` and
    /// the complete `report.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), EvalError> {
        std::fs::create_dir_all(dir)?;
        write_csv(&dir.join("criteria.csv"), &self.rows)?;
        write_csv(&dir.join("noise.csv"), &self.noise)?;
        write_csv(&dir.join("curves.csv"), &self.curves)?;
        #[derive(Serialize)]
        struct SummaryFile<'a> {
            config_hash: &'a str,
            modality: Modality,
            criteria: &'a BTreeSet<Criterion>,
            summary: &'a Summary,
            warnings: &'a [String],
        }
        let summary = SummaryFile {
            config_hash: &self.config_hash,
            modality: self.modality,
            criteria: &self.criteria,
            summary: &self.summary,
            warnings: &self.warnings,
        };
        serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join("summary.json"))?), &summary)?;
        serde_json::to_writer(BufWriter::new(File::create(dir.join("report.json"))?), self)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, EvalError> {
        let file = File::open(dir.join("report.json"))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }

    /// Per-figure tables: TPA by objective, AUC by objective and dim, the
    /// alignment curve at the smallest dim, explainability by objective,
    /// final alignment by noise scale and the direct comparison.
    pub fn write_plot_data(&self, dir: &Path) -> Result<Vec<String>, EvalError> {
        std::fs::create_dir_all(dir)?;
        #[derive(Serialize)]
        struct Bar<'a> {
            objective: &'a str,
            dim: usize,
            mean: f64,
            stderr: f64,
            n: usize,
        }
        let bars = |study: Study, metric: &str, dim: Option<usize>| -> Vec<Bar<'_>> {
            self.summary
                .aggregates
                .iter()
                .filter(|a| a.study == study && a.metric == metric && a.weighting == Weighting::Uniform)
                .filter(|a| dim.is_none_or(|d| a.dim == d))
                .map(|a| Bar {
                    objective: &a.objective,
                    dim: a.dim,
                    mean: a.mean,
                    stderr: a.stderr,
                    n: a.n,
                })
                .collect()
        };
        let mut written = Vec::new();
        let mut emit = |name: &str, rows: Vec<Bar<'_>>| -> Result<(), EvalError> {
            if !rows.is_empty() {
                write_csv(&dir.join(name), &rows)?;
                written.push(name.to_string());
            }
            Ok(())
        };
        emit("tpa_by_objective.csv", bars(Study::Main, "tpa", Some(self.plan.primary_dim)))?;
        emit("auc_by_dim.csv", bars(Study::Main, "auc_alignment", None))?;
        emit("explainability_by_objective.csv", bars(Study::Main, "explainability", Some(self.plan.primary_dim)))?;
        emit("direct_tpa.csv", bars(Study::Direct, "tpa", None))?;

        #[derive(Serialize)]
        struct CurvePoint<'a> {
            objective: &'a str,
            dim: usize,
            step: usize,
            mean: f64,
            stderr: f64,
        }
        let smallest = self.plan.smallest_dim();
        let mut curve: BTreeMap<(&str, usize), Vec<f64>> = BTreeMap::new();
        for c in self.curves.iter().filter(|c| c.dim == smallest) {
            curve.entry((c.objective.as_str(), c.step)).or_default().push(c.alignment);
        }
        if !curve.is_empty() {
            let rows: Vec<CurvePoint> = curve
                .iter()
                .map(|(&(objective, step), v)| CurvePoint {
                    objective,
                    dim: smallest,
                    step,
                    mean: mean(v),
                    stderr: standard_error(v),
                })
                .collect();
            write_csv(&dir.join("alignment_curve.csv"), &rows)?;
            written.push("alignment_curve.csv".into());
        }

        #[derive(Serialize)]
        struct NoisePoint<'a> {
            objective: &'a str,
            eps: f64,
            mean: f64,
            stderr: f64,
        }
        let mut by_eps: BTreeMap<(&str, u64), (f64, Vec<f64>)> = BTreeMap::new();
        for n in &self.noise {
            by_eps
                .entry((n.objective.as_str(), n.eps.to_bits()))
                .or_insert((n.eps, vec![]))
                .1
                .push(n.final_alignment);
        }
        if !by_eps.is_empty() {
            let mut rows: Vec<NoisePoint> = by_eps
                .iter()
                .map(|(&(objective, _), (eps, v))| NoisePoint {
                    objective,
                    eps: *eps,
                    mean: mean(v),
                    stderr: standard_error(v),
                })
                .collect();
            rows.sort_by(|a, b| a.objective.cmp(b.objective).then(a.eps.total_cmp(&b.eps)));
            write_csv(&dir.join("noise_robustness.csv"), &rows)?;
            written.push("noise_robustness.csv".into());
        }
        Ok(written)
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
