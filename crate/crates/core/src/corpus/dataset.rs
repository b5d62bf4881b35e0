use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{tokenize, CorpusError, Label, SubDomain, Vocabulary};

/// One annotated sentence, the unit of the JSONL labeled format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSentence {
    pub text: String,
    pub label: Label,
    pub sub_domain: SubDomain,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub source_id: String,
}

/// A labeled sentence as model input: `[BOS] tokens [EOS]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSentence {
    pub tokens: Vec<usize>,
    pub label: Label,
}

pub fn encode_dataset(data: &[LabeledSentence], vocab: &Vocabulary) -> Vec<EncodedSentence> {
    data.iter().map(|s| EncodedSentence { tokens: vocab.encode_sentence(&s.text), label: s.label }).collect()
}

/// Reads labeled JSONL. Blank lines are skipped; a missing `source_id`
/// becomes `<file stem>:<line>`. Sentences without any token are rejected.
pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<LabeledSentence>, CorpusError> {
    let path = path.as_ref();
    let origin = path.display().to_string();
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let perr = |msg: String| CorpusError::Parse { path: origin.clone(), line: i + 1, msg };
        let mut rec: LabeledSentence = serde_json::from_str(&line).map_err(|e| perr(e.to_string()))?;
        if tokenize(&rec.text).is_empty() {
            return Err(perr("sentence has no tokens".into()));
        }
        if rec.source_id.is_empty() {
            rec.source_id = format!("{stem}:{}", i + 1);
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl(path: impl AsRef<Path>, data: &[LabeledSentence]) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for rec in data {
        serde_json::to_writer(&mut w, rec).map_err(|e| CorpusError::Input(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// One sentence per line; blank lines dropped.
pub fn read_lines(path: impl AsRef<Path>) -> Result<Vec<String>, CorpusError> {
    let text = fs::read_to_string(path)?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect())
}

/// Label-set and duplicate check over a labeled dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub total: usize,
    pub per_class: BTreeMap<Label, usize>,
    /// Index pairs `(first, later)` whose normalized token sequences match.
    pub duplicates: Vec<(usize, usize)>,
    /// Duplicates that disagree on the label.
    pub conflicts: Vec<(usize, usize)>,
    pub missing_classes: Vec<Label>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.conflicts.is_empty() && self.missing_classes.is_empty()
    }
}

pub fn validate_dataset(data: &[LabeledSentence]) -> ValidationReport {
    let mut per_class: BTreeMap<Label, usize> = Label::ALL.iter().map(|&l| (l, 0)).collect();
    let mut seen: HashMap<Vec<String>, usize> = HashMap::new();
    let (mut duplicates, mut conflicts) = (Vec::new(), Vec::new());
    for (i, rec) in data.iter().enumerate() {
        *per_class.entry(rec.label).or_default() += 1;
        match seen.get(&tokenize(&rec.text)) {
            Some(&first) => {
                duplicates.push((first, i));
                if data[first].label != rec.label {
                    conflicts.push((first, i));
                }
            }
            None => {
                seen.insert(tokenize(&rec.text), i);
            }
        }
    }
    let missing_classes = per_class.iter().filter(|(_, &n)| n == 0).map(|(&l, _)| l).collect();
    ValidationReport { total: data.len(), per_class, duplicates, conflicts, missing_classes }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.8, valid: 0.1, test: 0.1 }
    }
}

impl SplitRatios {
    fn validate(&self) -> Result<(), CorpusError> {
        let parts = [self.train, self.valid, self.test];
        if parts.iter().any(|r| !(0.0..=1.0).contains(r)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(CorpusError::Config(format!("split ratios {parts:?} must be in [0,1] and sum to 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit<T = LabeledSentence> {
    pub train: Vec<T>,
    pub valid: Vec<T>,
    pub test: Vec<T>,
    pub seed: u64,
}

impl<T> DatasetSplit<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&[T]) -> Vec<U>) -> DatasetSplit<U> {
        DatasetSplit { train: f(&self.train), valid: f(&self.valid), test: f(&self.test), seed: self.seed }
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.valid.len(), self.test.len())
    }
}

impl DatasetSplit<EncodedSentence> {
    /// Fails when any of the five classes has no training example.
    pub fn require_all_classes(&self) -> Result<(), CorpusError> {
        for l in Label::ALL {
            if !self.train.iter().any(|s| s.label == l) {
                return Err(CorpusError::Stratification(l));
            }
        }
        Ok(())
    }
}

/// Stratified split. Partition sizes are `floor(train·N)`, `floor(valid·N)`
/// and the remainder. Each class contributes `n_c·S_p/N` items to partition
/// `p`, rounded up or down so that both class totals and partition sizes are
/// met exactly. Partitions keep the dataset's original order.
pub fn make_splits(data: &[LabeledSentence], ratios: SplitRatios, seed: u64) -> Result<DatasetSplit, CorpusError> {
    ratios.validate()?;
    if data.is_empty() {
        return Err(CorpusError::Input("cannot split an empty dataset".into()));
    }
    let n = data.len();
    let s_train = floor_eps(ratios.train * n as f64);
    let s_valid = floor_eps(ratios.valid * n as f64).min(n - s_train);
    let sizes = [s_train, s_valid, n - s_train - s_valid];

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: Vec<Vec<usize>> = Label::ALL
        .iter()
        .map(|&l| data.iter().enumerate().filter(|(_, s)| s.label == l).map(|(i, _)| i).collect())
        .collect();
    for g in &mut groups {
        g.shuffle(&mut rng);
    }
    let counts: Vec<usize> = groups.iter().map(Vec::len).collect();
    let alloc = controlled_round(&counts, &sizes);

    let mut assign = vec![0u8; n];
    for (g, row) in groups.iter().zip(&alloc) {
        let mut it = g.iter();
        for (p, &k) in row.iter().enumerate() {
            for &idx in it.by_ref().take(k) {
                assign[idx] = p as u8;
            }
        }
    }
    let pick = |p: u8| data.iter().zip(&assign).filter(|(_, &a)| a == p).map(|(s, _)| s.clone()).collect();
    Ok(DatasetSplit { train: pick(0), valid: pick(1), test: pick(2), seed })
}

fn floor_eps(x: f64) -> usize {
    (x + 1e-9).floor() as usize
}

/// Integer matrix `x[c][p]` with row sums `counts`, column sums `sizes`
/// (both summing to the same total) and every entry equal to the floor or
/// ceiling of `counts[c]·sizes[p]/total`. Such a rounding always exists;
/// it is found as a flow over the cells with a non-zero fractional part.
fn controlled_round(counts: &[usize], sizes: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = counts.iter().sum();
    let (k, p) = (counts.len(), sizes.len());
    let mut x = vec![vec![0usize; p]; k];
    let mut frac = vec![vec![0usize; p]; k];
    for c in 0..k {
        for q in 0..p {
            x[c][q] = counts[c] * sizes[q] / total;
            frac[c][q] = counts[c] * sizes[q] % total;
        }
    }
    let mut need_c: Vec<usize> = (0..k).map(|c| counts[c] - x[c].iter().sum::<usize>()).collect();
    let mut need_p: Vec<usize> = (0..p).map(|q| sizes[q] - (0..k).map(|c| x[c][q]).sum::<usize>()).collect();
    let mut up = vec![vec![false; p]; k];

    // greedy by largest fractional part, then augmenting paths for the rest
    let mut cells: Vec<(usize, usize)> = (0..k).flat_map(|c| (0..p).map(move |q| (c, q))).filter(|&(c, q)| frac[c][q] > 0).collect();
    cells.sort_by(|a, b| frac[b.0][b.1].cmp(&frac[a.0][a.1]).then(a.cmp(b)));
    for &(c, q) in &cells {
        if need_c[c] > 0 && need_p[q] > 0 {
            up[c][q] = true;
            need_c[c] -= 1;
            need_p[q] -= 1;
        }
    }
    while let Some(c0) = (0..k).find(|&c| need_c[c] > 0) {
        let mut seen_c = vec![false; k];
        let mut path = Vec::new();
        let end = augment(c0, &frac, &up, &need_p, &mut seen_c, &mut path).expect("a controlled rounding always exists");
        for &(c, q, on) in &path {
            up[c][q] = on;
        }
        need_c[c0] -= 1;
        need_p[end] -= 1;
    }
    for c in 0..k {
        for q in 0..p {
            x[c][q] += up[c][q] as usize;
        }
    }
    x
}

/// Alternating path from class `c` to a partition with spare demand.
/// Returns that partition and records the cell flips in `path`.
fn augment(
    c: usize,
    frac: &[Vec<usize>],
    up: &[Vec<bool>],
    need_p: &[usize],
    seen_c: &mut [bool],
    path: &mut Vec<(usize, usize, bool)>,
) -> Option<usize> {
    seen_c[c] = true;
    for q in 0..need_p.len() {
        if frac[c][q] == 0 || up[c][q] || path.iter().any(|&(pc, pq, _)| pc == c && pq == q) {
            continue;
        }
        path.push((c, q, true));
        if need_p[q] > 0 {
            return Some(q);
        }
        for c2 in 0..frac.len() {
            if !seen_c[c2] && up[c2][q] {
                path.push((c2, q, false));
                if let Some(end) = augment(c2, frac, up, need_p, seen_c, path) {
                    return Some(end);
                }
                path.pop();
            }
        }
        path.pop();
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(counts: &[(Label, usize)]) -> Vec<LabeledSentence> {
        let mut out = Vec::new();
        for &(label, n) in counts {
            for i in 0..n {
                out.push(LabeledSentence {
                    text: format!("{label} sentence {}", char::from(b'a' + (i % 26) as u8)),
                    label,
                    sub_domain: SubDomain::Jd,
                    source_id: format!("{label}-{i}"),
                });
            }
        }
        out
    }

    #[test]
    fn ten_items_one_class() {
        let s = make_splits(&dataset(&[(Label::Unbiased, 10)]), SplitRatios::default(), 1).unwrap();
        assert_eq!(s.sizes(), (8, 1, 1));
    }

    #[test]
    fn empty_dataset_is_an_error() {
        assert!(matches!(make_splits(&[], SplitRatios::default(), 0), Err(CorpusError::Input(_))));
    }

    #[test]
    fn bad_ratios_rejected() {
        let data = dataset(&[(Label::Age, 4)]);
        let r = SplitRatios { train: 0.8, valid: 0.3, test: 0.1 };
        assert!(matches!(make_splits(&data, r, 0), Err(CorpusError::Config(_))));
    }

    #[test]
    fn rounding_meets_both_margins() {
        let counts = [7, 3, 1, 1, 1];
        let sizes = [10, 1, 2];
        let x = controlled_round(&counts, &sizes);
        for c in 0..5 {
            assert_eq!(x[c].iter().sum::<usize>(), counts[c]);
            for q in 0..3 {
                let exact = counts[c] as f64 * sizes[q] as f64 / 13.0;
                assert!((x[c][q] as f64 - exact).abs() < 1.0, "{x:?}");
            }
        }
        for q in 0..3 {
            assert_eq!((0..5).map(|c| x[c][q]).sum::<usize>(), sizes[q]);
        }
    }

    #[test]
    fn validation_finds_duplicates_and_conflicts() {
        let mut data = dataset(&[(Label::Unbiased, 2), (Label::Gender, 1)]);
        data.push(LabeledSentence { label: Label::Race, ..data[0].clone() });
        data.push(LabeledSentence { text: "UNBIASED SENTENCE B".into(), ..data[1].clone() });
        let rep = validate_dataset(&data);
        assert_eq!(rep.duplicates, vec![(0, 3), (1, 4)]);
        assert_eq!(rep.conflicts, vec![(0, 3)]);
        assert_eq!(rep.missing_classes, vec![Label::Age, Label::Ambiguous]);
        assert!(!rep.is_clean());
    }

    #[test]
    fn jsonl_round_trip_and_alias() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let data = dataset(&[(Label::Gender, 2)]);
        write_jsonl(&path, &data).unwrap();
        assert_eq!(read_jsonl(&path).unwrap(), data);

        fs::write(&path, "{\"text\":\"Be cool.\",\"label\":\"not_appropriate\",\"sub_domain\":\"NJD\"}\n\n").unwrap();
        let back = read_jsonl(&path).unwrap();
        assert_eq!(back[0].label, Label::Ambiguous);
        assert_eq!(back[0].source_id, "d:1");

        fs::write(&path, "{\"text\":\"x\",\"label\":\"SPAM\",\"sub_domain\":\"JD\"}\n").unwrap();
        assert!(matches!(read_jsonl(&path), Err(CorpusError::Parse { line: 1, .. })));
        fs::write(&path, "{\"text\":\"  \",\"label\":\"AGE\",\"sub_domain\":\"JD\"}\n").unwrap();
        assert!(matches!(read_jsonl(&path), Err(CorpusError::Parse { .. })));
    }
}
