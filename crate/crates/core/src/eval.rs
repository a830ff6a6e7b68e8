//! Answer scoring: grounding precision/recall/F1 over tagged component ids,
//! an exact-match METEOR variant over answer text, and a batch harness.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::parse_component_tags;
use crate::error::{Error, Result};
use crate::memory::SceneMemory;

pub const METRIC_NAME: &str = "meteor_lite_v1";

/// Search budget for chunk minimisation; beyond it the best alignment found
/// so far is used.
pub const ALIGNMENT_NODE_BUDGET: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Set overlap scores. An empty prediction has precision 1 only when the
/// expectation is empty too, and symmetrically for recall.
pub fn grounding_prf(predicted: &BTreeSet<u64>, expected: &BTreeSet<u64>) -> Prf {
    let hit = predicted.intersection(expected).count() as f64;
    let precision = match (predicted.is_empty(), expected.is_empty()) {
        (true, true) => 1.0,
        (true, false) => 0.0,
        _ => hit / predicted.len() as f64,
    };
    let recall = match (expected.is_empty(), predicted.is_empty()) {
        (true, true) => 1.0,
        (true, false) => 0.0,
        _ => hit / expected.len() as f64,
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf { precision, recall, f1 }
}

/// Lowercased tokens with punctuation removed.
pub fn meteor_tokens(text: &str) -> Vec<String> {
    text.chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect::<String>()
        .to_lowercase()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeteorDetail {
    pub matches: usize,
    pub chunks: usize,
    pub precision: f64,
    pub recall: f64,
    pub fmean: f64,
    pub penalty: f64,
    pub score: f64,
}

/// Score from alignment statistics.
pub fn meteor_from_counts(matches: usize, chunks: usize, pred_len: usize, ref_len: usize) -> MeteorDetail {
    if matches == 0 {
        return MeteorDetail {
            matches,
            chunks,
            precision: 0.0,
            recall: 0.0,
            fmean: 0.0,
            penalty: 0.0,
            score: 0.0,
        };
    }
    let m = matches as f64;
    let precision = m / pred_len as f64;
    let recall = m / ref_len as f64;
    let fmean = 10.0 * precision * recall / (recall + 9.0 * precision);
    let penalty = 0.5 * (chunks as f64 / m).powi(3);
    MeteorDetail {
        matches,
        chunks,
        precision,
        recall,
        fmean,
        penalty,
        score: fmean * (1.0 - penalty),
    }
}

pub fn meteor_lite(prediction: &str, reference: &str) -> f64 {
    meteor_lite_detail(prediction, reference).score
}

pub fn meteor_lite_detail(prediction: &str, reference: &str) -> MeteorDetail {
    let pred = meteor_tokens(prediction);
    let refs = meteor_tokens(reference);
    let (matches, chunks) = align(&pred, &refs);
    meteor_from_counts(matches, chunks, pred.len(), refs.len())
}

/// Maximum number of exact matches and, among alignments achieving it, the
/// minimum number of chunks.
fn align(pred: &[String], refs: &[String]) -> (usize, usize) {
    let mut ref_pos: HashMap<&str, Vec<usize>> = HashMap::new();
    for (j, w) in refs.iter().enumerate() {
        ref_pos.entry(w).or_default().push(j);
    }
    let mut pred_count: HashMap<&str, usize> = HashMap::new();
    for w in pred {
        *pred_count.entry(w).or_default() += 1;
    }
    // Matches required per word for a maximal alignment.
    let need: HashMap<&str, usize> = pred_count
        .iter()
        .map(|(w, &c)| (*w, c.min(ref_pos.get(w).map_or(0, Vec::len))))
        .collect();
    let total: usize = need.values().sum();
    if total == 0 {
        return (0, 0);
    }
    // Pred occurrences of each word at or after index i.
    let mut remaining_after = vec![0usize; pred.len()];
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for i in (0..pred.len()).rev() {
        let c = seen.entry(&pred[i]).or_default();
        remaining_after[i] = *c;
        *c += 1;
    }

    struct Search<'a> {
        pred: &'a [String],
        ref_pos: &'a HashMap<&'a str, Vec<usize>>,
        need: &'a HashMap<&'a str, usize>,
        remaining_after: &'a [usize],
        used: Vec<bool>,
        matched: HashMap<&'a str, usize>,
        best: usize,
        nodes: usize,
    }

    impl<'a> Search<'a> {
        fn go(&mut self, i: usize, prev: Option<usize>, chunks: usize) {
            self.nodes += 1;
            if chunks >= self.best || self.nodes > ALIGNMENT_NODE_BUDGET {
                return;
            }
            if i == self.pred.len() {
                self.best = chunks;
                return;
            }
            let w: &'a str = &self.pred[i];
            let need = self.need.get(w).copied().unwrap_or(0);
            let done = self.matched.get(w).copied().unwrap_or(0);
            if done < need {
                let positions = &self.ref_pos[w];
                // Continuing the current chunk first finds good bounds early.
                let cont = prev.map(|p| p + 1);
                let order = cont
                    .into_iter()
                    .filter(|c| positions.binary_search(c).is_ok())
                    .chain(positions.iter().copied().filter(|&j| Some(j) != cont));
                for j in order.collect::<Vec<_>>() {
                    if self.used[j] {
                        continue;
                    }
                    self.used[j] = true;
                    *self.matched.entry(w).or_default() += 1;
                    let extra = usize::from(Some(j) != cont);
                    self.go(i + 1, Some(j), chunks + extra);
                    *self.matched.get_mut(w).expect("present") -= 1;
                    self.used[j] = false;
                }
            }
            // Skip this occurrence only if later ones can still meet the quota.
            if self.remaining_after[i] >= need - done.min(need) {
                self.go(i + 1, None, chunks);
            }
        }
    }

    let mut s = Search {
        pred,
        ref_pos: &ref_pos,
        need: &need,
        remaining_after: &remaining_after,
        used: vec![false; refs.len()],
        matched: HashMap::new(),
        best: usize::MAX,
        nodes: 0,
    };
    s.go(0, None, 0);
    (total, s.best)
}

pub trait Judge {
    fn judge(&self, question: &str, expected: &str, predicted: &str) -> f64;
}

/// Returns the same score for every answer.
#[derive(Debug, Clone, Copy)]
pub struct ConstantJudge(pub f64);

impl Judge for ConstantJudge {
    fn judge(&self, _question: &str, _expected: &str, _predicted: &str) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaItem {
    pub scene_id: String,
    pub question: String,
    pub expected_answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedAnswer {
    pub scene_id: String,
    pub question: String,
    pub predicted_answer: String,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| Error::parse(format!("{name}:{}", i + 1), e.to_string()))?);
    }
    Ok(out)
}

pub fn load_qa(path: impl AsRef<Path>) -> Result<Vec<QaItem>> {
    read_jsonl(path.as_ref())
}

pub fn load_cached_answers(path: impl AsRef<Path>) -> Result<Vec<CachedAnswer>> {
    read_jsonl(path.as_ref())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItemReport {
    pub index: usize,
    pub scene_id: String,
    pub question: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub predicted_ids: Vec<u64>,
    pub expected_ids: Vec<u64>,
    /// Tagged ids (either side) that the scene memory does not contain.
    pub dangling_ids: Vec<u64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub meteor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Aggregate {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub meteor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub total: usize,
    pub scored: usize,
    pub errored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub metric: &'static str,
    pub items: Vec<ItemReport>,
    /// Means over scored items; zero when nothing was scored.
    pub aggregate: Aggregate,
    pub counts: Counts,
}

/// Scores one prediction against its reference answer.
pub fn score_item(index: usize, item: &QaItem, predicted: &str, memory: Option<&SceneMemory>) -> ItemReport {
    let pred = parse_component_tags(predicted);
    let exp = parse_component_tags(&item.expected_answer);
    let (p_ids, e_ids) = (pred.ids(), exp.ids());
    let prf = grounding_prf(&p_ids, &e_ids);
    let dangling = match memory {
        Some(m) => p_ids.union(&e_ids).copied().filter(|id| !m.contains(*id)).collect(),
        None => Vec::new(),
    };
    ItemReport {
        index,
        scene_id: item.scene_id.clone(),
        question: item.question.clone(),
        error: None,
        predicted_ids: p_ids.into_iter().collect(),
        expected_ids: e_ids.into_iter().collect(),
        dangling_ids: dangling,
        precision: prf.precision,
        recall: prf.recall,
        f1: prf.f1,
        meteor: meteor_lite(&pred.plain_text(), &exp.plain_text()),
    }
}

fn errored(index: usize, item: &QaItem, error: String) -> ItemReport {
    ItemReport {
        index,
        scene_id: item.scene_id.clone(),
        question: item.question.clone(),
        error: Some(error),
        predicted_ids: vec![],
        expected_ids: vec![],
        dangling_ids: vec![],
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
        meteor: 0.0,
    }
}

/// Where predictions come from.
pub enum AnswerSource<'a> {
    /// Recorded answers keyed by (scene_id, question).
    Cached(Vec<CachedAnswer>),
    /// Live answering: gets the scene directory, its memory and the question.
    Live(&'a mut dyn FnMut(&Path, &SceneMemory, &str) -> std::result::Result<String, String>),
}

pub fn run_eval(items: &[QaItem], memories_root: &Path, source: AnswerSource<'_>) -> EvalReport {
    let mut scenes: BTreeMap<String, std::result::Result<SceneMemory, String>> = BTreeMap::new();
    let cached: Option<HashMap<(String, String), String>> = match &source {
        AnswerSource::Cached(list) => Some(
            list.iter()
                .map(|a| ((a.scene_id.clone(), a.question.clone()), a.predicted_answer.clone()))
                .collect(),
        ),
        AnswerSource::Live(_) => None,
    };
    let mut live = match source {
        AnswerSource::Live(f) => Some(f),
        AnswerSource::Cached(_) => None,
    };

    let mut reports = Vec::with_capacity(items.len());
    for (index, item) in items.iter().enumerate() {
        let dir: PathBuf = memories_root.join(&item.scene_id);
        let scene = scenes
            .entry(item.scene_id.clone())
            .or_insert_with(|| SceneMemory::load(&dir).map_err(|e| format!("scene `{}`: {e}", item.scene_id)));
        let memory = match scene {
            Ok(m) => m,
            Err(e) => {
                reports.push(errored(index, item, e.clone()));
                continue;
            }
        };
        let predicted = match (&cached, live.as_mut()) {
            (Some(map), _) => map
                .get(&(item.scene_id.clone(), item.question.clone()))
                .cloned()
                .ok_or_else(|| "no cached answer for this question".to_string()),
            (None, Some(f)) => f(&dir, memory, &item.question),
            (None, None) => unreachable!("one answer source is always set"),
        };
        match predicted {
            Ok(p) => reports.push(score_item(index, item, &p, Some(memory))),
            Err(e) => reports.push(errored(index, item, e)),
        }
    }
    build_report(reports)
}

pub fn build_report(items: Vec<ItemReport>) -> EvalReport {
    let scored: Vec<&ItemReport> = items.iter().filter(|i| i.error.is_none()).collect();
    let n = scored.len();
    let mean = |f: fn(&ItemReport) -> f64| {
        if n == 0 {
            0.0
        } else {
            scored.iter().map(|i| f(i)).sum::<f64>() / n as f64
        }
    };
    let aggregate = Aggregate {
        precision: mean(|i| i.precision),
        recall: mean(|i| i.recall),
        f1: mean(|i| i.f1),
        meteor: mean(|i| i.meteor),
    };
    let counts = Counts {
        total: items.len(),
        scored: n,
        errored: items.len() - n,
    };
    EvalReport {
        metric: METRIC_NAME,
        items,
        aggregate,
        counts,
    }
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        crate::tools::canonical_json(self)
    }

    pub fn table(&self) -> String {
        let mut t = String::new();
        let _ = writeln!(t, "metric: {}", self.metric);
        let _ = writeln!(t, "{:>4}  {:<16} {:>9} {:>9} {:>9} {:>9}", "#", "scene", "precision", "recall", "f1", "meteor");
        for i in &self.items {
            match &i.error {
                Some(e) => {
                    let _ = writeln!(t, "{:>4}  {:<16} error: {e}", i.index, i.scene_id);
                }
                None => {
                    let _ = writeln!(
                        t,
                        "{:>4}  {:<16} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
                        i.index, i.scene_id, i.precision, i.recall, i.f1, i.meteor
                    );
                }
            }
        }
        let a = &self.aggregate;
        let _ = writeln!(
            t,
            "{:>4}  {:<16} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
            "mean", "", a.precision, a.recall, a.f1, a.meteor
        );
        let _ = writeln!(t, "scored {} of {} ({} errored)", self.counts.scored, self.counts.total, self.counts.errored);
        t
    }
}
