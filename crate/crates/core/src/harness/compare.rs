use serde::Serialize;

use super::{HarnessError, RunResult};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub model: String,
    pub mse: f64,
    pub missing_only_mse: Option<f64>,
    pub runs: usize,
    pub fallbacks: u64,
    /// Compact hyperparameter summary shown as a footnote.
    pub config: String,
}

/// Model/MSE table sorted by ascending MSE.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

fn summarize(config: &serde_json::Value) -> String {
    let Some(obj) = config.get("predictor").and_then(|p| p.as_object()) else {
        return String::new();
    };
    let parts: Vec<String> = obj
        .iter()
        .filter(|(k, _)| k.as_str() != "kind")
        .map(|(k, v)| match v {
            serde_json::Value::String(s) => format!("{k}={s}"),
            other => format!("{k}={other}"),
        })
        .collect();
    if parts.is_empty() {
        "no hyperparameters".into()
    } else {
        parts.join(", ")
    }
}

/// Builds the comparison table. All results must come from the same graph,
/// signal and masks.
pub fn compare(results: &[(String, &RunResult)]) -> Result<ComparisonTable, HarnessError> {
    let Some((first_name, first)) = results.first() else {
        return Err(HarnessError::Comparison("no results given".into()));
    };
    for (name, r) in &results[1..] {
        if r.context != first.context {
            return Err(HarnessError::Comparison(format!(
                "{name} was run on a different experiment context than {first_name}"
            )));
        }
        let masks = |res: &RunResult| {
            res.runs
                .iter()
                .map(|run| run.mask.clone())
                .collect::<Vec<_>>()
        };
        let (a, b) = (masks(first), masks(r));
        let shared = a.len().min(b.len());
        if a[..shared] != b[..shared] {
            return Err(HarnessError::Comparison(format!(
                "{name} used different masks than {first_name}"
            )));
        }
    }
    let mut rows: Vec<ComparisonRow> = results
        .iter()
        .map(|(name, r)| ComparisonRow {
            model: name.clone(),
            mse: r.mse.all_nodes,
            missing_only_mse: r.mse.missing_only,
            runs: r.runs.len(),
            fallbacks: r.fallbacks.total,
            config: summarize(&r.config),
        })
        .collect();
    rows.sort_by(|a, b| a.mse.total_cmp(&b.mse).then_with(|| a.model.cmp(&b.model)));
    Ok(ComparisonTable { rows })
}

impl ComparisonTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,mse,missing_only_mse,runs,fallbacks\n");
        for r in &self.rows {
            let missing = r
                .missing_only_mse
                .map(|m| m.to_string())
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                csv_field(&r.model),
                r.mse,
                missing,
                r.runs,
                r.fallbacks
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }

    /// Aligned text with numbered config footnotes.
    pub fn to_text(&self) -> String {
        let fmt_opt = |m: Option<f64>| m.map_or_else(|| "-".to_owned(), |x| format!("{x:.3}"));
        let labels: Vec<String> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| format!("{} [{}]", r.model, i + 1))
            .collect();
        let width = labels.iter().map(String::len).max().unwrap_or(0).max(5);
        let mut out = format!(
            "{:<width$}  {:>10}  {:>16}  {:>4}  {:>9}\n",
            "Model", "MSE", "Missing-only MSE", "Runs", "Fallbacks"
        );
        out.push_str(&format!("{}\n", "-".repeat(width + 49)));
        for (label, r) in labels.iter().zip(&self.rows) {
            out.push_str(&format!(
                "{label:<width$}  {:>10.3}  {:>16}  {:>4}  {:>9}\n",
                r.mse,
                fmt_opt(r.missing_only_mse),
                r.runs,
                r.fallbacks
            ));
        }
        out.push('\n');
        for (i, r) in self.rows.iter().enumerate() {
            out.push_str(&format!("[{}] {}: {}\n", i + 1, r.model, r.config));
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{FilterConfig, FilterKind};
    use crate::graph::Graph;
    use crate::harness::{run_online, FilterPredictor, MaskPlan, MaskPolicy, ZeroPredictor};
    use crate::signal::SignalSeries;

    fn setup() -> (Graph, SignalSeries) {
        let g = Graph::from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)]).unwrap();
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|i| (0..6).map(|t| 1.0 + (i + t) as f64 * 0.1).collect())
            .collect();
        (g, SignalSeries::from_rows(&rows, "m/s").unwrap())
    }

    fn plan(seed: u64) -> MaskPlan {
        MaskPlan::Generated(MaskPolicy {
            missing_fraction: 0.4,
            seed,
            fixed: false,
        })
    }

    #[test]
    fn three_rows_sorted_by_mse() {
        let (g, truth) = setup();
        let cfg = FilterConfig {
            mu: 0.5,
            bandwidth: 2,
            init: Default::default(),
        };
        let glms = run_online(
            &FilterPredictor::new(FilterKind::Glms, cfg, &g).unwrap(),
            &g,
            &truth,
            &plan(1),
            2,
        )
        .unwrap();
        let gsign = run_online(
            &FilterPredictor::new(FilterKind::Gsign, cfg, &g).unwrap(),
            &g,
            &truth,
            &plan(1),
            2,
        )
        .unwrap();
        let zero = run_online(&ZeroPredictor, &g, &truth, &plan(1), 2).unwrap();
        let table = compare(&[
            ("Zero".into(), &zero),
            ("GLMS".into(), &glms),
            ("G-Sign".into(), &gsign),
        ])
        .unwrap();
        assert_eq!(table.rows.len(), 3);
        assert!(table.rows.windows(2).all(|w| w[0].mse <= w[1].mse));
        assert_eq!(table.to_csv().lines().count(), 4);
        assert!(table.to_text().contains("mu=0.5"));
        let json: serde_json::Value = serde_json::from_str(&table.to_json()).unwrap();
        assert_eq!(json["rows"].as_array().unwrap().len(), 3);
    }

    #[test]
    fn single_result() {
        let (g, truth) = setup();
        let zero = run_online(&ZeroPredictor, &g, &truth, &plan(1), 1).unwrap();
        let table = compare(&[("Zero".into(), &zero)]).unwrap();
        assert_eq!(table.rows.len(), 1);
    }

    #[test]
    fn different_masks_are_rejected() {
        let (g, truth) = setup();
        let a = run_online(&ZeroPredictor, &g, &truth, &plan(1), 1).unwrap();
        let b = run_online(&ZeroPredictor, &g, &truth, &plan(2), 1).unwrap();
        assert!(matches!(
            compare(&[("a".into(), &a), ("b".into(), &b)]),
            Err(HarnessError::Comparison(_))
        ));
        assert!(compare(&[]).is_err());
    }
}
