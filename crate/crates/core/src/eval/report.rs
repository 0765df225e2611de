use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{Metric, MetricSuite};
use crate::corridor::{Dimension, Level, ScenarioRecord};
use crate::error::{Error, Result};
use crate::model::{predict_batch, InferenceInput, Prediction, TwinModel};

/// Measures of effectiveness the twin is scored on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Moe {
    TravelTime,
    QueueLength,
    WaitingTime,
    InterveningVolume,
}

impl Moe {
    pub const ALL: [Moe; 4] = [Self::TravelTime, Self::QueueLength, Self::WaitingTime, Self::InterveningVolume];

    pub fn name(self) -> &'static str {
        match self {
            Self::TravelTime => "travel_time",
            Self::QueueLength => "queue_length",
            Self::WaitingTime => "waiting_time",
            Self::InterveningVolume => "intervening_volume",
        }
    }

    pub fn from_name(s: &str) -> Option<Moe> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    /// Distribution metrics for the time series MOEs, error magnitudes for
    /// the count-like ones.
    pub fn metrics(self) -> [Metric; 4] {
        match self {
            Self::TravelTime | Self::WaitingTime => [Metric::Mape, Metric::Emd, Metric::Hld, Metric::Nrmse],
            Self::QueueLength | Self::InterveningVolume => [Metric::Mae, Metric::Mse, Metric::Rmse, Metric::Nrmse],
        }
    }

    /// `(truth, prediction)` as compared for one scenario. Travel time
    /// joins the eastbound and westbound series; intervening volume keeps
    /// only the masked entries.
    pub fn series(self, record: &ScenarioRecord, pred: &Prediction) -> (Vec<f64>, Vec<f64>) {
        let t = &record.targets;
        match self {
            Self::TravelTime => (
                t.travel_time_eb.iter().chain(&t.travel_time_wb).copied().collect(),
                pred.travel_time_eb.iter().chain(&pred.travel_time_wb).copied().collect(),
            ),
            Self::QueueLength => (t.queue_length.data().to_vec(), pred.queue_length.data().to_vec()),
            Self::WaitingTime => (t.waiting_time.data().to_vec(), pred.waiting_time.data().to_vec()),
            Self::InterveningVolume => {
                let mask = &record.static_graph.mask;
                let pick = |v: &[f64]| v.iter().zip(mask).filter(|(_, &m)| m).map(|(x, _)| *x).collect();
                (pick(t.imputed_volumes.data()), pick(pred.imputed_volumes.data()))
            }
        }
    }
}

/// Per-scenario line of `metrics.jsonl`. Undefined metrics are `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMetrics {
    pub index: usize,
    pub seed: u64,
    pub levels: BTreeMap<Dimension, Level>,
    pub moes: BTreeMap<Moe, BTreeMap<Metric, Option<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

pub fn scenario_metrics(index: usize, record: &ScenarioRecord, pred: std::result::Result<&Prediction, String>) -> ScenarioMetrics {
    let levels = Dimension::ALL.iter().map(|&d| (d, record.subgroup.level(d))).collect();
    let (moes, error) = match pred {
        Ok(p) => (
            Moe::ALL
                .iter()
                .map(|&moe| {
                    let (t, y) = moe.series(record, p);
                    (moe, moe.metrics().iter().map(|&m| (m, m.compute(&t, &y).ok())).collect())
                })
                .collect(),
            None,
        ),
        Err(e) => (
            Moe::ALL
                .iter()
                .map(|&moe| (moe, moe.metrics().iter().map(|&m| (m, None)).collect()))
                .collect(),
            Some(e),
        ),
    };
    ScenarioMetrics {
        index,
        seed: record.scenario.seed,
        levels,
        moes,
        error,
    }
}

/// One aggregated line of `report.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    /// Dimension name, or `total`.
    pub dimension: String,
    /// Level name, or `all`.
    pub level: String,
    pub moe: Moe,
    pub scenarios: usize,
    /// Mean over the scenarios where the metric is defined.
    pub values: MetricSuite,
    /// Scenarios where an applicable metric was undefined.
    pub undefined: BTreeMap<Metric, usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubgroupReport {
    pub rows: Vec<ReportRow>,
}

fn aggregate(dimension: String, level: String, moe: Moe, members: &[&ScenarioMetrics]) -> ReportRow {
    let mut values = MetricSuite::default();
    let mut undefined = BTreeMap::new();
    for m in moe.metrics() {
        let (mut sum, mut n, mut missing) = (0.0, 0usize, 0usize);
        for s in members {
            match s.moes.get(&moe).and_then(|x| x.get(&m)).copied().flatten() {
                Some(v) => {
                    sum += v;
                    n += 1;
                }
                None => missing += 1,
            }
        }
        values.set(m, (n > 0).then(|| sum / n as f64));
        undefined.insert(m, missing);
    }
    ReportRow {
        dimension,
        level,
        moe,
        scenarios: members.len(),
        values,
        undefined,
    }
}

impl SubgroupReport {
    /// Rows in dimension, level, MOE order, then one total row per MOE.
    pub fn from_scenarios(scenarios: &[ScenarioMetrics]) -> Self {
        let mut rows = Vec::with_capacity(Dimension::ALL.len() * Level::ALL.len() * Moe::ALL.len() + Moe::ALL.len());
        for d in Dimension::ALL {
            for l in Level::ALL {
                let members: Vec<_> = scenarios.iter().filter(|s| s.levels.get(&d) == Some(&l)).collect();
                for moe in Moe::ALL {
                    rows.push(aggregate(d.to_string(), l.to_string(), moe, &members));
                }
            }
        }
        let all: Vec<_> = scenarios.iter().collect();
        for moe in Moe::ALL {
            rows.push(aggregate("total".into(), "all".into(), moe, &all));
        }
        Self { rows }
    }

    pub fn total(&self, moe: Moe) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.dimension == "total" && r.moe == moe)
    }

    pub fn row(&self, dim: Dimension, level: Level, moe: Moe) -> Option<&ReportRow> {
        let (d, l) = (dim.to_string(), level.to_string());
        self.rows.iter().find(|r| r.dimension == d && r.level == l && r.moe == moe)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(CsvRow::from(r)).map_err(csv_error)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::invalid("report csv", e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::invalid("report csv", e.to_string()))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let rows = rd
            .deserialize::<CsvRow>()
            .map(|r| r.map_err(csv_error).and_then(ReportRow::try_from))
            .collect::<Result<_>>()?;
        Ok(Self { rows })
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::invalid("report csv", e.to_string())
}

/// Flat record behind the `report.csv` header.
#[derive(Serialize, Deserialize)]
struct CsvRow {
    dimension: String,
    level: String,
    moe: String,
    scenarios: usize,
    mape: Option<f64>,
    emd: Option<f64>,
    hld: Option<f64>,
    nrmse: Option<f64>,
    mae: Option<f64>,
    mse: Option<f64>,
    rmse: Option<f64>,
    mape_undefined: Option<usize>,
    emd_undefined: Option<usize>,
    hld_undefined: Option<usize>,
    nrmse_undefined: Option<usize>,
    mae_undefined: Option<usize>,
    mse_undefined: Option<usize>,
    rmse_undefined: Option<usize>,
}

impl From<&ReportRow> for CsvRow {
    fn from(r: &ReportRow) -> Self {
        let u = |m: Metric| r.undefined.get(&m).copied();
        let v = r.values;
        CsvRow {
            dimension: r.dimension.clone(),
            level: r.level.clone(),
            moe: r.moe.name().into(),
            scenarios: r.scenarios,
            mape: v.mape,
            emd: v.emd,
            hld: v.hld,
            nrmse: v.nrmse,
            mae: v.mae,
            mse: v.mse,
            rmse: v.rmse,
            mape_undefined: u(Metric::Mape),
            emd_undefined: u(Metric::Emd),
            hld_undefined: u(Metric::Hld),
            nrmse_undefined: u(Metric::Nrmse),
            mae_undefined: u(Metric::Mae),
            mse_undefined: u(Metric::Mse),
            rmse_undefined: u(Metric::Rmse),
        }
    }
}

impl TryFrom<CsvRow> for ReportRow {
    type Error = Error;

    fn try_from(c: CsvRow) -> Result<Self> {
        let moe = Moe::from_name(&c.moe).ok_or_else(|| Error::invalid("report csv", format!("unknown moe `{}`", c.moe)))?;
        let values = MetricSuite {
            mape: c.mape,
            emd: c.emd,
            hld: c.hld,
            nrmse: c.nrmse,
            mae: c.mae,
            mse: c.mse,
            rmse: c.rmse,
        };
        let counts = [
            (Metric::Mape, c.mape_undefined),
            (Metric::Emd, c.emd_undefined),
            (Metric::Hld, c.hld_undefined),
            (Metric::Nrmse, c.nrmse_undefined),
            (Metric::Mae, c.mae_undefined),
            (Metric::Mse, c.mse_undefined),
            (Metric::Rmse, c.rmse_undefined),
        ];
        Ok(ReportRow {
            dimension: c.dimension,
            level: c.level,
            moe,
            scenarios: c.scenarios,
            values,
            undefined: counts.into_iter().filter_map(|(m, n)| n.map(|n| (m, n))).collect(),
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    /// Scenarios that get overlay charts, from the start of the evaluated set.
    pub chart_samples: usize,
    pub parallelism: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            chart_samples: 3,
            parallelism: 1,
        }
    }
}

pub struct Evaluation {
    pub report: SubgroupReport,
    pub scenarios: Vec<ScenarioMetrics>,
    pub files: Vec<PathBuf>,
}

/// Scores `predictions` against the records' targets without a model.
pub fn evaluate_predictions(records: &[&ScenarioRecord], predictions: &[std::result::Result<Prediction, String>]) -> Result<Vec<ScenarioMetrics>> {
    if records.len() != predictions.len() {
        return Err(Error::invalid(
            "evaluation",
            format!("{} records but {} predictions", records.len(), predictions.len()),
        ));
    }
    Ok(records
        .par_iter()
        .zip(predictions.par_iter())
        .enumerate()
        .map(|(i, (r, p))| scenario_metrics(i, r, p.as_ref().map_err(Clone::clone)))
        .collect())
}

/// Runs `model` on `records`, scores every MOE and writes `report.csv`,
/// `metrics.jsonl` and overlay charts under `out_dir`.
pub fn evaluate_and_report(model: &TwinModel, records: &[&ScenarioRecord], out_dir: &Path, options: &EvalOptions) -> Result<Evaluation> {
    let inputs: Vec<_> = records
        .iter()
        .map(|r| InferenceInput {
            static_graph: &r.static_graph,
            dynamic_inputs: &r.dynamic_inputs,
        })
        .collect();
    let batch = predict_batch(model, &inputs, options.parallelism)?;
    let predictions: Vec<_> = batch.results.into_iter().map(|r| r.map_err(|e| e.to_string())).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.parallelism.max(1))
        .build()
        .map_err(|e| Error::invalid("parallelism", e.to_string()))?;
    let scenarios = pool.install(|| evaluate_predictions(records, &predictions))?;
    let report = SubgroupReport::from_scenarios(&scenarios);
    let files = write_report(out_dir, &report, &scenarios, records, &predictions, options.chart_samples)?;
    Ok(Evaluation { report, scenarios, files })
}

fn write_report(
    out_dir: &Path,
    report: &SubgroupReport,
    scenarios: &[ScenarioMetrics],
    records: &[&ScenarioRecord],
    predictions: &[std::result::Result<Prediction, String>],
    chart_samples: usize,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut files = Vec::new();
    let csv_path = out_dir.join("report.csv");
    std::fs::write(&csv_path, report.to_csv()?).map_err(|e| Error::io(&csv_path, e))?;
    files.push(csv_path);

    let jsonl_path = out_dir.join("metrics.jsonl");
    let mut out = Vec::new();
    for s in scenarios {
        serde_json::to_writer(&mut out, s).map_err(|e| Error::json(&jsonl_path, e))?;
        out.push(b'\n');
    }
    std::fs::write(&jsonl_path, out).map_err(|e| Error::io(&jsonl_path, e))?;
    files.push(jsonl_path);

    let charts = out_dir.join("charts");
    if chart_samples > 0 && !records.is_empty() {
        std::fs::create_dir_all(&charts).map_err(|e| Error::io(&charts, e))?;
    }
    for (i, (r, p)) in records.iter().zip(predictions).take(chart_samples).enumerate() {
        let Ok(p) = p else { continue };
        for moe in Moe::ALL {
            let (t, y) = chart_series(moe, r, p);
            let path = charts.join(format!("scenario{i:03}_{}.svg", moe.name()));
            let title = format!("{} scenario {} (seed {})", moe.name(), i, r.scenario.seed);
            let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            f.write_all(overlay_svg(&title, &t, &y).as_bytes()).map_err(|e| Error::io(&path, e))?;
            files.push(path);
        }
    }
    Ok(files)
}

/// Travel time and intervening volume plot the compared series as is;
/// queue and waiting time plot the corridor total per interval.
fn chart_series(moe: Moe, r: &ScenarioRecord, p: &Prediction) -> (Vec<f64>, Vec<f64>) {
    let per_interval = |v: &[f64]| {
        let w = r.scenario.w;
        (0..w).map(|t| v.iter().skip(t).step_by(w).sum()).collect()
    };
    match moe {
        Moe::QueueLength => (per_interval(r.targets.queue_length.data()), per_interval(p.queue_length.data())),
        Moe::WaitingTime => (per_interval(r.targets.waiting_time.data()), per_interval(p.waiting_time.data())),
        _ => moe.series(r, p),
    }
}

/// Self-contained line chart: truth in solid blue, prediction dashed red.
pub fn overlay_svg(title: &str, truth: &[f64], pred: &[f64]) -> String {
    let (w, h, m) = (640.0, 360.0, 48.0);
    let n = truth.len().max(pred.len()).max(2);
    let finite = truth.iter().chain(pred).copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (lo.min(0.0).max(-1.0), lo.max(0.0) + 1.0) };
    let x = |i: usize| m + (w - 2.0 * m) * i as f64 / (n - 1) as f64;
    let y = |v: f64| h - m - (h - 2.0 * m) * (v - lo) / (hi - lo);
    let line = |s: &[f64]| {
        s.iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(i, &v)| format!("{:.2},{:.2}", x(i), y(v)))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let title = title.replace('&', "&amp;").replace('<', "&lt;");
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n",
            "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
            "<text x=\"{m}\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>\n",
            "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n",
            "<line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
            "<text x=\"4\" y=\"{b}\" font-family=\"sans-serif\" font-size=\"10\">{lo:.1}</text>\n",
            "<text x=\"4\" y=\"{m}\" font-family=\"sans-serif\" font-size=\"10\">{hi:.1}</text>\n",
            "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"{t}\"/>\n",
            "<polyline fill=\"none\" stroke=\"#d62728\" stroke-width=\"2\" stroke-dasharray=\"6 4\" points=\"{p}\"/>\n",
            "<text x=\"{r}\" y=\"24\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">",
            "<tspan fill=\"#1f77b4\">actual</tspan> <tspan fill=\"#d62728\">predicted</tspan></text>\n",
            "</svg>\n"
        ),
        w = w,
        h = h,
        m = m,
        b = h - m,
        r = w - m,
        title = title,
        lo = lo,
        hi = hi,
        t = line(truth),
        p = line(pred),
    )
}
