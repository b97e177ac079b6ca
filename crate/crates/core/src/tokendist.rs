//! How many of a model's top next-token predictions after a StereoSet
//! context are male or female words.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::Scorer;
use crate::data::{Gender, GenderLexicon, StereoSetInstance};
use crate::error::{Error, Result};
use crate::plot::bar_chart;

pub const TOP_K: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenderCount {
    pub context_id: String,
    pub male_count: usize,
    pub female_count: usize,
}

/// Restricts the next-token distribution to the lexicon's words, takes the
/// top [`TOP_K`] and counts them by gender.
pub fn analyze_context(
    scorer: &dyn Scorer,
    context_id: &str,
    context: &str,
    lexicon: &GenderLexicon,
) -> Result<GenderCount> {
    if context.trim().is_empty() {
        return Err(Error::InvalidArgument(format!(
            "context {context_id:?} is empty"
        )));
    }
    let words: Vec<String> = lexicon.words().map(|(w, _)| w.to_string()).collect();
    if words.is_empty() {
        return Err(Error::InvalidArgument("empty gender word set".into()));
    }
    let dist = scorer.next_token_distribution(context, Some(&words))?;
    let mut count = GenderCount {
        context_id: context_id.to_string(),
        male_count: 0,
        female_count: 0,
    };
    for (token, _) in dist.top(TOP_K) {
        match lexicon.gender(token) {
            Some(Gender::Male) => count.male_count += 1,
            Some(Gender::Female) => count.female_count += 1,
            None => {}
        }
    }
    Ok(count)
}

/// Analyzes the text before the blank of every intrasentence instance.
pub fn analyze_stereoset(
    scorer: &dyn Scorer,
    instances: &[StereoSetInstance],
    lexicon: &GenderLexicon,
) -> Result<Vec<GenderCount>> {
    instances
        .par_iter()
        .filter_map(|inst| inst.context_before_blank().map(|c| (inst, c)))
        .map(|(inst, c)| analyze_context(scorer, &inst.id, c, lexicon))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    /// count value -> number of contexts
    pub male: BTreeMap<usize, usize>,
    pub female: BTreeMap<usize, usize>,
}

pub fn histogram(counts: &[GenderCount]) -> Histogram {
    let mut h = Histogram::default();
    for c in counts {
        *h.male.entry(c.male_count).or_default() += 1;
        *h.female.entry(c.female_count).or_default() += 1;
    }
    h
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct Bin {
    count: usize,
    contexts: usize,
}

/// Writes `counts.csv`, `hist_male.csv`, `hist_female.csv` and one SVG per
/// histogram into `dir`.
pub fn write_outputs(dir: &Path, counts: &[GenderCount]) -> Result<Histogram> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_csv(&dir.join("counts.csv"), counts)?;
    let h = histogram(counts);
    for (name, bins) in [("male", &h.male), ("female", &h.female)] {
        let rows = bins
            .iter()
            .map(|(&count, &contexts)| Bin { count, contexts });
        write_csv(&dir.join(format!("hist_{name}.csv")), rows)?;
        let bins: Vec<(usize, usize)> = bins.iter().map(|(&k, &v)| (k, v)).collect();
        bar_chart(
            &dir.join(format!("hist_{name}.svg")),
            &format!("{name}-related tokens in top {TOP_K}"),
            &format!("{name} tokens"),
            &bins,
        )?;
    }
    Ok(h)
}
