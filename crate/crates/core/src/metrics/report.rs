//! Per-case, per-class metric rows and their aggregation.

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{dice_score, extract_surface, hausdorff, msd, BinaryMask};
use crate::volio::LabelMap;

pub const METRICS_SCHEMA_VERSION: u32 = 1;

/// Why a metric is or is not defined for a class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricFlag {
    Ok,
    /// Class absent from both prediction and truth: nothing is defined.
    AbsentBoth,
    /// Present in the truth only: DSC 0, distances undefined.
    MissingPrediction,
    /// Present in the prediction only: DSC 0, distances undefined.
    MissingTruth,
}

impl MetricFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ok => "ok",
            Self::AbsentBoth => "absent_both",
            Self::MissingPrediction => "missing_prediction",
            Self::MissingTruth => "missing_truth",
        }
    }
}

impl fmt::Display for MetricFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassMetrics {
    pub class: u8,
    pub dsc: Option<f64>,
    pub msd_mm: Option<f64>,
    pub hd_mm: Option<f64>,
    pub flag: MetricFlag,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseMetrics {
    pub case_id: String,
    /// Foreground classes `1..K`, in order.
    pub classes: Vec<ClassMetrics>,
}

impl CaseMetrics {
    pub fn class(&self, class: u8) -> Option<&ClassMetrics> {
        self.classes.iter().find(|m| m.class == class)
    }
}

fn class_metrics(pred: &BinaryMask, truth: &BinaryMask, spacing: [f64; 3], class: u8) -> Result<ClassMetrics> {
    let (np, nt) = (pred.count(), truth.count());
    let undefined = |flag, dsc| ClassMetrics {
        class,
        dsc,
        msd_mm: None,
        hd_mm: None,
        flag,
    };
    Ok(match (np, nt) {
        (0, 0) => undefined(MetricFlag::AbsentBoth, None),
        (0, _) => undefined(MetricFlag::MissingPrediction, Some(0.0)),
        (_, 0) => undefined(MetricFlag::MissingTruth, Some(0.0)),
        _ => {
            let p = extract_surface(pred, spacing)?;
            let q = extract_surface(truth, spacing)?;
            ClassMetrics {
                class,
                dsc: Some(dice_score(pred, truth)?),
                msd_mm: Some(msd(&p, &q)?),
                hd_mm: Some(hausdorff(&p, &q)?),
                flag: MetricFlag::Ok,
            }
        }
    })
}

/// DSC, MSD and HD for every foreground class `1..classes`.
pub fn evaluate_case(
    pred: &LabelMap,
    truth: &LabelMap,
    spacing: [f64; 3],
    classes: usize,
) -> Result<CaseMetrics> {
    if pred.dims() != truth.dims() {
        return Err(Error::shape(format!(
            "prediction grid {:?} does not match truth grid {:?}",
            pred.dims(),
            truth.dims()
        )));
    }
    if !(2..=256).contains(&classes) {
        return Err(Error::config(format!("class count {classes} outside 2..=256")));
    }
    let classes = (1..classes)
        .map(|k| {
            let k = k as u8;
            class_metrics(
                &BinaryMask::from_labels(pred, k),
                &BinaryMask::from_labels(truth, k),
                spacing,
                k,
            )
        })
        .collect::<Result<_>>()?;
    Ok(CaseMetrics {
        case_id: String::new(),
        classes,
    })
}

/// Mean and population standard deviation over the defined values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Stat> {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Some(Stat {
            mean,
            sd: var.sqrt(),
            n: v.len(),
        })
    }
}

impl fmt::Display for Stat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4} ± {:.4} (n={})", self.mean, self.sd, self.n)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassSummary {
    pub class: u8,
    pub dsc: Option<Stat>,
    pub msd_mm: Option<Stat>,
    pub hd_mm: Option<Stat>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub cases: Vec<CaseMetrics>,
}

impl MetricsReport {
    pub fn push(&mut self, case_id: impl Into<String>, mut case: CaseMetrics) {
        case.case_id = case_id.into();
        self.cases.push(case);
    }

    /// Aggregates per foreground class over all cases.
    pub fn summary(&self) -> Vec<ClassSummary> {
        let mut classes: Vec<u8> = self
            .cases
            .iter()
            .flat_map(|c| c.classes.iter().map(|m| m.class))
            .collect();
        classes.sort_unstable();
        classes.dedup();
        classes
            .into_iter()
            .map(|k| {
                let rows: Vec<&ClassMetrics> =
                    self.cases.iter().filter_map(|c| c.class(k)).collect();
                ClassSummary {
                    class: k,
                    dsc: Stat::of(rows.iter().filter_map(|m| m.dsc)),
                    msd_mm: Stat::of(rows.iter().filter_map(|m| m.msd_mm)),
                    hd_mm: Stat::of(rows.iter().filter_map(|m| m.hd_mm)),
                }
            })
            .collect()
    }

    /// One row per case and class; undefined values are written as `NA`.
    pub fn to_csv(&self) -> Result<String> {
        self.render_csv(false)
    }

    /// [`MetricsReport::to_csv`] followed by `mean` and `sd` rows per class
    /// (flag `summary`).
    pub fn to_csv_with_summary(&self) -> Result<String> {
        self.render_csv(true)
    }

    fn render_csv(&self, summary: bool) -> Result<String> {
        let mut out = format!("# schema-version: {METRICS_SCHEMA_VERSION}\n").into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut out);
            let err = crate::volio::csv_error;
            w.write_record(["case_id", "class", "dsc", "msd_mm", "hd_mm", "flags"])
                .map_err(err)?;
            let cell = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x}"));
            for case in &self.cases {
                for m in &case.classes {
                    w.write_record([
                        case.case_id.clone(),
                        m.class.to_string(),
                        cell(m.dsc),
                        cell(m.msd_mm),
                        cell(m.hd_mm),
                        m.flag.to_string(),
                    ])
                    .map_err(err)?;
                }
            }
            if summary {
                for s in self.summary() {
                    for (name, pick) in [("mean", 0), ("sd", 1)] {
                        let v = |st: Option<Stat>| cell(st.map(|st| if pick == 0 { st.mean } else { st.sd }));
                        w.write_record([
                            name.to_string(),
                            s.class.to_string(),
                            v(s.dsc),
                            v(s.msd_mm),
                            v(s.hd_mm),
                            "summary".to_string(),
                        ])
                        .map_err(err)?;
                    }
                }
            }
            w.flush()?;
        }
        String::from_utf8(out).map_err(|e| Error::Malformed(e.to_string()))
    }

    /// Writes [`MetricsReport::to_csv_with_summary`] to `path`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_with_summary()?).map_err(|e| Error::from(e).with_path(path))
    }
}
