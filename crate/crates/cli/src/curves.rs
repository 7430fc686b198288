//! Accuracy-versus-noise curves from a results table.

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::experiment::{mean_std, ResultRow, MEAN_TRIAL};

/// One point of a curve: mean and sample standard deviation of the trial
/// accuracies of a (method, combo) series at one noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub series: String,
    pub method: String,
    pub combo: String,
    pub noise_level: f64,
    pub mean: f64,
    pub std: f64,
    pub trials: usize,
}

/// Restricts the curves to some methods and combos; `None` keeps all.
#[derive(Debug, Clone, Default)]
pub struct CurveSelection {
    pub methods: Option<Vec<String>>,
    pub combos: Option<Vec<String>>,
}

/// Groups the trial rows by series and noise level. Series appear in
/// first-seen order, points by ascending noise level. A requested method
/// or combo that has no rows is an error, as is an empty selection.
pub fn emit_curves(rows: &[ResultRow], sel: &CurveSelection) -> Result<Vec<CurvePoint>> {
    let trial_rows: Vec<&ResultRow> = rows.iter().filter(|r| r.trial != MEAN_TRIAL).collect();
    for (what, wanted, has) in [
        ("method", &sel.methods, &(|r: &ResultRow, v: &str| r.method == v) as &dyn Fn(&ResultRow, &str) -> bool),
        ("combo", &sel.combos, &|r: &ResultRow, v: &str| r.combo == v),
    ] {
        for v in wanted.iter().flatten() {
            if !trial_rows.iter().any(|r| has(r, v)) {
                return Err(CliError::Data(format!("empty selection: no results for {what} {v:?}")));
            }
        }
    }
    let keep = |r: &&&ResultRow| {
        sel.methods.as_ref().is_none_or(|m| m.contains(&r.method))
            && sel.combos.as_ref().is_none_or(|c| c.contains(&r.combo))
    };
    let chosen: Vec<&ResultRow> = trial_rows.iter().filter(keep).copied().collect();
    if chosen.is_empty() {
        return Err(CliError::Data("empty selection: no trial rows to plot".into()));
    }
    let mut series: Vec<(String, String)> = Vec::new();
    for r in &chosen {
        let key = (r.method.clone(), r.combo.clone());
        if !series.contains(&key) {
            series.push(key);
        }
    }
    let mut out = Vec::new();
    for (method, combo) in series {
        let mut levels: Vec<f64> = chosen
            .iter()
            .filter(|r| r.method == method && r.combo == combo)
            .map(|r| r.noise_level)
            .collect();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        for level in levels {
            let accs: Vec<f64> = chosen
                .iter()
                .filter(|r| r.method == method && r.combo == combo && r.noise_level == level)
                .map(|r| r.accuracy)
                .collect();
            let (mean, std) = mean_std(&accs);
            out.push(CurvePoint {
                series: format!("{method} {combo}"),
                method: method.clone(),
                combo: combo.clone(),
                noise_level: level,
                mean,
                std,
                trials: accs.len(),
            });
        }
    }
    Ok(out)
}
