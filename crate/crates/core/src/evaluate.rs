//! Patch-probability fusion, classification metrics and report emission.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::data::{image_patches, patches_to_tensor, Gray16, ImageLoader, Label, Manifest, Site};
use crate::error::{Error, Result};
use crate::network::{predict, NetworkParams};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Images evaluated per inference batch.
const EVAL_BATCH: usize = 64;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Fusion {
    #[default]
    Mean,
    Max,
}

impl Fusion {
    pub fn as_str(&self) -> &'static str {
        match self {
            Fusion::Mean => "mean",
            Fusion::Max => "max",
        }
    }
}

impl fmt::Display for Fusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Fusion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Fusion::Mean),
            "max" => Ok(Fusion::Max),
            _ => Err(Error::InvalidArgument(format!("unknown fusion '{s}' (expected mean or max)"))),
        }
    }
}

/// Image probability from its patch probabilities.
pub fn fuse_patches(probs: &[f64], fusion: Fusion) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::Empty("fuse_patches"));
    }
    Ok(match fusion {
        Fusion::Mean => {
            // sort first so the result does not depend on patch order
            let mut sorted = probs.to_vec();
            sorted.sort_by(f64::total_cmp);
            sorted.iter().sum::<f64>() / sorted.len() as f64
        }
        Fusion::Max => probs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

/// 95% Wilson score interval for `correct` successes out of `total`.
pub fn confidence_interval(correct: usize, total: usize) -> Result<(f64, f64)> {
    if total == 0 {
        return Err(Error::Empty("confidence_interval"));
    }
    if correct > total {
        return Err(Error::InvalidArgument(format!("{correct} correct out of {total}")));
    }
    let n = total as f64;
    let p = correct as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if correct == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if correct == total { 1.0 } else { (center + half).min(1.0) };
    Ok((lo, hi))
}

/// Pairwise concordance of positive over negative scores, ties counted ½.
/// `None` if either class is empty.
pub fn auc(pos: &[f64], neg: &[f64]) -> Option<f64> {
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut sorted = neg.to_vec();
    sorted.sort_by(f64::total_cmp);
    // twice the concordance count, so ties stay integral
    let mut doubled: u64 = 0;
    for &p in pos {
        let below = sorted.partition_point(|&v| v < p);
        let not_above = sorted.partition_point(|&v| v <= p);
        doubled += 2 * below as u64 + (not_above - below) as u64;
    }
    Some(doubled as f64 / (2 * pos.len() * neg.len()) as f64)
}

/// Classification outcome of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageResult {
    pub id: String,
    pub site: Site,
    pub label: Label,
    pub prob: f64,
    pub seconds: f64,
}

impl ImageResult {
    pub fn predicted(&self) -> Label {
        if self.prob > 0.5 {
            Label::Carcinoma
        } else {
            Label::Normal
        }
    }

    pub fn correct(&self) -> bool {
        self.predicted() == self.label
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub total: usize,
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
    pub accuracy: f64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub auc: Option<f64>,
    pub ci: (f64, f64),
    pub mean_seconds: f64,
}

impl Metrics {
    pub fn correct(&self) -> usize {
        self.tp + self.tn
    }
}

pub fn compute_metrics<'a>(rows: impl IntoIterator<Item = &'a ImageResult>) -> Result<Metrics> {
    let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    let mut seconds = 0.0;
    for r in rows {
        match (r.label, r.predicted()) {
            (Label::Carcinoma, Label::Carcinoma) => tp += 1,
            (Label::Carcinoma, Label::Normal) => fn_ += 1,
            (Label::Normal, Label::Normal) => tn += 1,
            (Label::Normal, Label::Carcinoma) => fp += 1,
        }
        match r.label {
            Label::Carcinoma => pos.push(r.prob),
            Label::Normal => neg.push(r.prob),
        }
        seconds += r.seconds;
    }
    let total = tp + tn + fp + fn_;
    if total == 0 {
        return Err(Error::Empty("compute_metrics"));
    }
    let ratio = |a: usize, b: usize| (a + b > 0).then(|| a as f64 / (a + b) as f64);
    Ok(Metrics {
        total,
        tp,
        tn,
        fp,
        fn_,
        accuracy: (tp + tn) as f64 / total as f64,
        sensitivity: ratio(tp, fn_),
        specificity: ratio(tn, fp),
        auc: auc(&pos, &neg),
        ci: confidence_interval(tp + tn, total)?,
        mean_seconds: seconds / total as f64,
    })
}

/// Per-image results with per-site and overall aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub fusion: Fusion,
    pub images: Vec<ImageResult>,
    pub groups: Vec<(Site, Metrics)>,
    pub overall: Metrics,
}

impl EvalReport {
    pub fn new(images: Vec<ImageResult>, fusion: Fusion) -> Result<Self> {
        let overall = compute_metrics(&images)?;
        let mut groups = Vec::new();
        for site in Site::ALL {
            if images.iter().any(|r| r.site == site) {
                groups.push((site, compute_metrics(images.iter().filter(|r| r.site == site))?));
            }
        }
        Ok(EvalReport {
            fusion,
            images,
            groups,
            overall,
        })
    }

    /// Every aggregate row: site groups in fixed order, then `overall`.
    pub fn aggregates(&self) -> Vec<(&'static str, &Metrics)> {
        let mut out: Vec<(&'static str, &Metrics)> = self.groups.iter().map(|(s, m)| (s.as_str(), m)).collect();
        out.push(("overall", &self.overall));
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("image_id,site,true_label,fused_prob,pred_label,seconds\n");
        for r in &self.images {
            let _ = writeln!(s, "{},{},{},{},{},{}", r.id, r.site, r.label, r.prob, r.predicted(), r.seconds);
        }
        for (group, m) in self.aggregates() {
            let _ = writeln!(
                s,
                "#group={group},n={},correct={},accuracy={},sensitivity={},specificity={},auc={},ci_lo={},ci_hi={},mean_seconds={}",
                m.total,
                m.correct(),
                m.accuracy,
                opt(m.sensitivity),
                opt(m.specificity),
                opt(m.auc),
                m.ci.0,
                m.ci.1,
                m.mean_seconds
            );
        }
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut s = format!("## Classification results ({} fusion)\n\n", self.fusion);
        s.push_str(MD_HEADER);
        s.push('\n');
        s.push_str("|---|---|---|---|---|---|---|---|---|\n");
        for (group, m) in self.aggregates() {
            let _ = writeln!(
                s,
                "| {group} | {} | {:.4} | {} | {} | {} | {:.4} | {:.4} | {:.4} |",
                m.total,
                100.0 * m.accuracy,
                opt4(m.sensitivity.map(|v| 100.0 * v)),
                opt4(m.specificity.map(|v| 100.0 * v)),
                opt4(m.auc),
                100.0 * m.ci.0,
                100.0 * m.ci.1,
                m.mean_seconds
            );
        }
        let _ = write!(
            s,
            "\nImage probability: {} of patch probabilities. Interval: 95% Wilson score. \
             Both are stand-ins for formulas that were never published.\n",
            self.fusion
        );
        s
    }

    /// Writes the report as `csv` or `markdown`.
    pub fn write(&self, path: impl AsRef<Path>, format: &str) -> Result<()> {
        let path = path.as_ref();
        let text = match format {
            "csv" => self.to_csv(),
            "markdown" | "md" => self.to_markdown(),
            _ => return Err(Error::InvalidArgument(format!("unknown report format '{format}'"))),
        };
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Rebuilds a report from its CSV form; aggregates are recomputed.
    pub fn from_csv(text: &str, fusion: Fusion) -> Result<Self> {
        let body: String = text
            .lines()
            .filter(|l| !l.starts_with('#'))
            .flat_map(|l| [l, "\n"])
            .collect();
        let mut rdr = csv::Reader::from_reader(body.as_bytes());
        let bad = |m: String| Error::InvalidArgument(format!("report csv: {m}"));
        let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["image_id", "site", "true_label", "fused_prob", "pred_label", "seconds"] {
            return Err(bad(format!("unexpected header {headers:?}")));
        }
        let mut images = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let num = |i: usize| rec[i].parse::<f64>().map_err(|e| bad(format!("{}: {e}", &rec[i])));
            images.push(ImageResult {
                id: rec[0].to_string(),
                site: rec[1].parse()?,
                label: rec[2].parse()?,
                prob: num(3)?,
                seconds: num(5)?,
            });
        }
        EvalReport::new(images, fusion)
    }

    pub fn read_csv(path: impl AsRef<Path>, fusion: Fusion) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        EvalReport::from_csv(&text, fusion)
    }
}

const MD_HEADER: &str =
    "| Sample group | Images | Accuracy (%) | Sensitivity (%) | Specificity (%) | AUC | CI low (%) | CI high (%) | Processing time (sec) |";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

fn opt4(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v:.4}"))
}

/// One aggregate row read back from a markdown table.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkdownRow {
    pub group: String,
    pub cells: Vec<Option<f64>>,
}

/// Parses the data rows of every markdown table in `text`; `NA` cells map
/// to `None`.
pub fn parse_markdown_table(text: &str) -> Result<Vec<MarkdownRow>> {
    let mut rows = Vec::new();
    for line in text.lines().map(str::trim) {
        if !line.starts_with('|') || line.starts_with("|---") {
            continue;
        }
        let cells: Vec<&str> = line.trim_matches('|').split('|').map(str::trim).collect();
        if cells.first() == Some(&"Sample group") {
            continue;
        }
        let values = cells[1..]
            .iter()
            .map(|c| match *c {
                "NA" => Ok(None),
                c => c
                    .trim_start_matches('+')
                    .parse::<f64>()
                    .map(Some)
                    .map_err(|e| Error::InvalidArgument(format!("markdown cell '{c}': {e}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(MarkdownRow {
            group: cells[0].to_string(),
            cells: values,
        });
    }
    Ok(rows)
}

/// Fused probability of one raw image and the wall time of compress,
/// patchify, predict and fuse.
pub fn timed_inference(params: &NetworkParams, raw: &Gray16, id: &str, fusion: Fusion) -> Result<(f64, f64)> {
    let start = Instant::now();
    let patches = image_patches(raw, params.arch().patch, id, None)?;
    let x = patches_to_tensor(&patches.iter().collect::<Vec<_>>())?;
    let mut probs = Vec::with_capacity(patches.len());
    for chunk in x.data().chunks(EVAL_BATCH * x.shape().sample_len()) {
        let n = chunk.len() / x.shape().sample_len();
        let t = crate::tensor::Tensor::from_vec(x.shape().with_batch(n), chunk.to_vec())?;
        probs.extend(predict(params, &t)?);
    }
    let prob = fuse_patches(&probs, fusion)?;
    Ok((prob, start.elapsed().as_secs_f64()))
}

/// Worker count: `CLE_NET_THREADS` if set, else all cores.
pub fn thread_count() -> usize {
    std::env::var("CLE_NET_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Evaluates the given images in parallel; rows keep manifest order.
pub fn evaluate(
    params: &NetworkParams,
    m: &Manifest,
    ids: &[String],
    fusion: Fusion,
    loader: &ImageLoader,
) -> Result<EvalReport> {
    let wanted: std::collections::HashSet<&str> = ids.iter().map(String::as_str).collect();
    let rows: Vec<_> = m.rows.iter().filter(|r| wanted.contains(r.id())).collect();
    if rows.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let images = pool.install(|| {
        rows.par_iter()
            .map(|row| {
                let raw = loader.load(m, row)?;
                let (prob, seconds) = timed_inference(params, &raw, row.id(), fusion)?;
                Ok(ImageResult {
                    id: row.id().to_string(),
                    site: row.site,
                    label: row.label,
                    prob,
                    seconds,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    EvalReport::new(images, fusion)
}

/// Side-by-side accuracy and time of two reports on the same images.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub label_a: String,
    pub label_b: String,
    /// Group name, metrics of A, metrics of B.
    pub rows: Vec<(String, Metrics, Metrics)>,
}

impl Comparison {
    pub fn to_markdown(&self) -> String {
        let (a, b) = (&self.label_a, &self.label_b);
        let mut s = format!(
            "| Sample group | {a} accuracy (%) | {b} accuracy (%) | Accuracy delta (%) | {a} time (sec) | {b} time (sec) | Time delta (sec) |\n"
        );
        s.push_str("|---|---|---|---|---|---|---|\n");
        for (g, ma, mb) in &self.rows {
            let _ = writeln!(
                s,
                "| {g} | {:.4} | {:.4} | {:+.4} | {:.4} | {:.4} | {:+.4} |",
                100.0 * ma.accuracy,
                100.0 * mb.accuracy,
                100.0 * (mb.accuracy - ma.accuracy),
                ma.mean_seconds,
                mb.mean_seconds,
                mb.mean_seconds - ma.mean_seconds
            );
        }
        s
    }
}

/// Joins two reports group by group; both must cover the same images.
pub fn compare(a: &EvalReport, label_a: &str, b: &EvalReport, label_b: &str) -> Result<Comparison> {
    let ids = |r: &EvalReport| r.images.iter().map(|i| i.id.clone()).collect::<std::collections::BTreeSet<_>>();
    let (ia, ib) = (ids(a), ids(b));
    if ia != ib {
        return Err(Error::ImageSetMismatch {
            only_a: ia.difference(&ib).cloned().collect(),
            only_b: ib.difference(&ia).cloned().collect(),
        });
    }
    let bm: std::collections::HashMap<&str, &Metrics> = b.aggregates().into_iter().collect();
    let rows = a
        .aggregates()
        .into_iter()
        .map(|(g, ma)| (g.to_string(), ma.clone(), bm[g].clone()))
        .collect();
    Ok(Comparison {
        label_a: label_a.to_string(),
        label_b: label_b.to_string(),
        rows,
    })
}
