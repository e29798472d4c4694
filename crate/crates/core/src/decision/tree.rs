use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::actions::{ActionVector, Coercion, Output, OUTPUT_COUNT};
use super::input::{DecisionInput, Feature, FEATURE_COUNT};
use super::rules::{input_key, Corpus, Example};
use super::DecisionError;

const TREE_FORMAT: &str = "smarthangar-tree/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeParams {
    /// `None` grows until every leaf is pure.
    #[serde(default = "default_depth")]
    pub max_depth: Option<usize>,
    #[serde(default = "default_min_leaf")]
    pub min_samples_leaf: usize,
}

fn default_depth() -> Option<usize> {
    Some(12)
}

fn default_min_leaf() -> usize {
    2
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams { max_depth: default_depth(), min_samples_leaf: default_min_leaf() }
    }
}

impl TreeParams {
    pub fn unlimited() -> Self {
        TreeParams { max_depth: None, min_samples_leaf: 1 }
    }

    pub fn validate(&self) -> Result<(), DecisionError> {
        if self.min_samples_leaf == 0 {
            return Err(DecisionError::BadRulesFile("min_samples_leaf must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTest {
    /// Numeric: `x <= threshold` goes left.
    Threshold(f64),
    /// Categorical: `x == code` goes left.
    Equals(u8),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Split(Box<Split>),
    Leaf(Leaf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub feature: String,
    pub test: SplitTest,
    pub left: Node,
    pub right: Node,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Leaf {
    pub samples: u32,
    pub labels: ActionVector,
    pub counts: BTreeMap<Output, Vec<u32>>,
}

/// A single CART tree whose leaves carry one label per action output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiOutputTree {
    pub format: String,
    pub fingerprint: String,
    pub params: TreeParams,
    pub root: Node,
}

/// A routed, repaired prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub actions: ActionVector,
    pub coercions: Vec<Coercion>,
}

struct Data {
    x: Vec<[f64; FEATURE_COUNT]>,
    y: Vec<[u8; OUTPUT_COUNT]>,
}

struct Best {
    score: f64,
    feature: usize,
    test: SplitTest,
}

fn class_counts(data: &Data, idx: &[usize]) -> [[u32; 3]; OUTPUT_COUNT] {
    let mut counts = [[0u32; 3]; OUTPUT_COUNT];
    for &i in idx {
        for (o, c) in data.y[i].iter().enumerate() {
            counts[o][*c as usize] += 1;
        }
    }
    counts
}

/// n · (mean-over-outputs Gini) · OUTPUT_COUNT, i.e. Σ_o (n − Σ_k c_k² / n).
fn weighted_impurity(counts: &[[u32; 3]; OUTPUT_COUNT], n: u32) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    counts
        .iter()
        .map(|c| n - c.iter().map(|k| (*k as f64) * (*k as f64)).sum::<f64>() / n)
        .sum()
}

fn is_pure(counts: &[[u32; 3]; OUTPUT_COUNT], n: u32) -> bool {
    counts.iter().all(|c| c.contains(&n))
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m >= b || m < a {
        a
    } else {
        m
    }
}

fn sub(a: &[[u32; 3]; OUTPUT_COUNT], b: &[[u32; 3]; OUTPUT_COUNT]) -> [[u32; 3]; OUTPUT_COUNT] {
    let mut out = *a;
    for (o, row) in out.iter_mut().enumerate() {
        for (k, v) in row.iter_mut().enumerate() {
            *v -= b[o][k];
        }
    }
    out
}

fn best_split(data: &Data, idx: &[usize], total: &[[u32; 3]; OUTPUT_COUNT], min_leaf: usize) -> Option<Best> {
    let n = idx.len();
    let mut best: Option<Best> = None;
    let consider = |score: f64, feature: usize, test: SplitTest, best: &mut Option<Best>| {
        if best.as_ref().is_none_or(|b| score < b.score) {
            *best = Some(Best { score, feature, test });
        }
    };
    for feature in Feature::ALL {
        let f = feature.index();
        let kind = feature.kind();
        if kind.is_categorical() {
            let mut per_level = vec![[[0u32; 3]; OUTPUT_COUNT]; kind.levels()];
            let mut sizes = vec![0usize; kind.levels()];
            for &i in idx {
                let level = data.x[i][f] as usize;
                sizes[level] += 1;
                for (o, c) in data.y[i].iter().enumerate() {
                    per_level[level][o][*c as usize] += 1;
                }
            }
            if sizes.iter().filter(|s| **s > 0).count() < 2 {
                continue;
            }
            for level in 0..kind.levels() {
                let nl = sizes[level];
                if nl == 0 || nl < min_leaf || n - nl < min_leaf {
                    continue;
                }
                let right = sub(total, &per_level[level]);
                let score = weighted_impurity(&per_level[level], nl as u32)
                    + weighted_impurity(&right, (n - nl) as u32);
                consider(score, f, SplitTest::Equals(level as u8), &mut best);
            }
        } else {
            let mut sorted: Vec<usize> = idx.to_vec();
            sorted.sort_by(|a, b| data.x[*a][f].total_cmp(&data.x[*b][f]));
            let lo = data.x[sorted[0]][f];
            let hi = data.x[sorted[n - 1]][f];
            if lo == hi {
                continue;
            }
            let mut left = [[0u32; 3]; OUTPUT_COUNT];
            for k in 0..n - 1 {
                let i = sorted[k];
                for (o, c) in data.y[i].iter().enumerate() {
                    left[o][*c as usize] += 1;
                }
                let a = data.x[i][f];
                let b = data.x[sorted[k + 1]][f];
                let nl = k + 1;
                if a == b || nl < min_leaf || n - nl < min_leaf {
                    continue;
                }
                let right = sub(total, &left);
                let score = weighted_impurity(&left, nl as u32) + weighted_impurity(&right, (n - nl) as u32);
                consider(score, f, SplitTest::Threshold(midpoint(a, b)), &mut best);
            }
        }
    }
    best
}

fn leaf(counts: &[[u32; 3]; OUTPUT_COUNT], n: usize) -> Node {
    let mut codes = [0u8; OUTPUT_COUNT];
    let mut map = BTreeMap::new();
    for output in Output::ALL {
        let c = &counts[output.index()][..output.labels().len()];
        codes[output.index()] = argmax(c);
        map.insert(output, c.to_vec());
    }
    Node::Leaf(Leaf {
        samples: n as u32,
        labels: ActionVector::from_codes(&codes).unwrap_or_default(),
        counts: map,
    })
}

fn argmax(counts: &[u32]) -> u8 {
    let mut best = 0;
    for (k, c) in counts.iter().enumerate() {
        if *c > counts[best] {
            best = k;
        }
    }
    best as u8
}

fn goes_left(test: SplitTest, value: f64) -> bool {
    match test {
        SplitTest::Threshold(t) => value <= t,
        SplitTest::Equals(code) => value == code as f64,
    }
}

fn grow(data: &Data, idx: Vec<usize>, depth: usize, params: &TreeParams) -> Node {
    let n = idx.len();
    let counts = class_counts(data, &idx);
    let depth_reached = params.max_depth.is_some_and(|d| depth >= d);
    if is_pure(&counts, n as u32) || depth_reached || n < 2 * params.min_samples_leaf {
        return leaf(&counts, n);
    }
    let Some(best) = best_split(data, &idx, &counts, params.min_samples_leaf) else {
        return leaf(&counts, n);
    };
    let (left, right): (Vec<usize>, Vec<usize>) =
        idx.into_iter().partition(|i| goes_left(best.test, data.x[*i][best.feature]));
    Node::Split(Box::new(Split {
        feature: Feature::ALL[best.feature].name().to_string(),
        test: best.test,
        left: grow(data, left, depth + 1, params),
        right: grow(data, right, depth + 1, params),
    }))
}

/// SHA-256 over the params and the sorted encoded corpus rows.
fn fingerprint(data: &Data, params: &TreeParams) -> String {
    let mut rows: Vec<Vec<u8>> = data
        .x
        .iter()
        .zip(&data.y)
        .map(|(x, y)| {
            let mut row = Vec::with_capacity(FEATURE_COUNT * 8 + OUTPUT_COUNT);
            for v in x {
                row.extend_from_slice(&(v + 0.0).to_bits().to_be_bytes());
            }
            row.extend_from_slice(y);
            row
        })
        .collect();
    rows.sort_unstable();
    let mut hasher = Sha256::new();
    hasher.update(TREE_FORMAT.as_bytes());
    hasher.update(serde_json::to_vec(params).unwrap_or_default());
    hasher.update((rows.len() as u64).to_be_bytes());
    for row in rows {
        hasher.update(row);
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn check_consistent(examples: &[Example]) -> Result<(), DecisionError> {
    let mut seen: HashMap<[u64; FEATURE_COUNT], usize> = HashMap::new();
    for (i, e) in examples.iter().enumerate() {
        match seen.get(&input_key(&e.input)) {
            Some(&j) if examples[j].actions != e.actions => {
                return Err(DecisionError::InconsistentLabels { first: j, second: i })
            }
            Some(_) => {}
            None => {
                seen.insert(input_key(&e.input), i);
            }
        }
    }
    Ok(())
}

/// Grows a multi-output CART tree on `corpus`.
pub fn train_tree(corpus: &Corpus, params: TreeParams) -> Result<MultiOutputTree, DecisionError> {
    if corpus.is_empty() {
        return Err(DecisionError::EmptyCorpus);
    }
    params.validate()?;
    for e in &corpus.examples {
        e.input.validate()?;
    }
    check_consistent(&corpus.examples)?;
    let data = Data {
        x: corpus.examples.iter().map(|e| e.input.encode()).collect(),
        y: corpus.examples.iter().map(|e| e.actions.to_codes()).collect(),
    };
    let root = grow(&data, (0..data.x.len()).collect(), 0, &params);
    Ok(MultiOutputTree {
        format: TREE_FORMAT.to_string(),
        fingerprint: fingerprint(&data, &params),
        params,
        root,
    })
}

/// Trains from scratch on `existing` plus the new examples.
pub fn retrain(existing: &Corpus, new: &[Example], params: TreeParams) -> Result<MultiOutputTree, DecisionError> {
    for e in new {
        e.input.validate()?;
    }
    train_tree(&existing.merged(new), params)
}

/// Routes `input` through `tree` and repairs the result against the input's profile.
pub fn predict(tree: Option<&MultiOutputTree>, input: &DecisionInput) -> Result<Prediction, DecisionError> {
    let tree = tree.ok_or(DecisionError::UntrainedModel)?;
    input.validate()?;
    Ok(tree.predict(input))
}

impl MultiOutputTree {
    pub fn raw_predict(&self, input: &DecisionInput) -> ActionVector {
        let x = input.encode();
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf(leaf) => return leaf.labels,
                Node::Split(split) => {
                    let f = split.feature.parse::<Feature>().map(Feature::index).unwrap_or(0);
                    node = if goes_left(split.test, x[f]) { &split.left } else { &split.right };
                }
            }
        }
    }

    pub fn predict(&self, input: &DecisionInput) -> Prediction {
        let mut actions = self.raw_predict(input);
        let coercions = actions.repair(&input.profile);
        Prediction { actions, coercions }
    }

    pub fn depth(&self) -> usize {
        fn walk(n: &Node) -> usize {
            match n {
                Node::Leaf(_) => 0,
                Node::Split(s) => 1 + walk(&s.left).max(walk(&s.right)),
            }
        }
        walk(&self.root)
    }

    pub fn leaves(&self) -> usize {
        fn walk(n: &Node) -> usize {
            match n {
                Node::Leaf(_) => 1,
                Node::Split(s) => walk(&s.left) + walk(&s.right),
            }
        }
        walk(&self.root)
    }

    pub fn export(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).unwrap_or_default();
        text.push('\n');
        text
    }

    pub fn import(text: &str) -> Result<Self, DecisionError> {
        let tree: MultiOutputTree =
            serde_json::from_str(text).map_err(|e| DecisionError::BadTreeFile(e.to_string()))?;
        tree.validate()?;
        Ok(tree)
    }

    fn validate(&self) -> Result<(), DecisionError> {
        let bad = |m: String| DecisionError::BadTreeFile(m);
        if self.format != TREE_FORMAT {
            return Err(bad(format!("unsupported format `{}`", self.format)));
        }
        if self.fingerprint.len() != 64 || !self.fingerprint.chars().all(|c| c.is_ascii_hexdigit()) {
            return Err(bad("fingerprint must be 64 hex digits".into()));
        }
        self.params.validate().map_err(|e| bad(e.to_string()))?;
        if let Some(limit) = self.params.max_depth {
            if self.depth() > limit {
                return Err(bad(format!("depth {} exceeds max_depth {limit}", self.depth())));
            }
        }
        fn check(node: &Node) -> Result<(), String> {
            match node {
                Node::Split(s) => {
                    let feature: Feature = s.feature.parse()?;
                    let kind = feature.kind();
                    match s.test {
                        SplitTest::Threshold(t) if kind.is_categorical() || !t.is_finite() => {
                            return Err(format!("bad threshold {t} on `{feature}`"))
                        }
                        SplitTest::Equals(c) if !kind.is_categorical() || c as usize >= kind.levels() => {
                            return Err(format!("bad category {c} on `{feature}`"))
                        }
                        _ => {}
                    }
                    check(&s.left)?;
                    check(&s.right)
                }
                Node::Leaf(leaf) => {
                    if leaf.counts.len() != OUTPUT_COUNT {
                        return Err("leaf must carry counts for every output".into());
                    }
                    for (output, counts) in &leaf.counts {
                        if counts.len() != output.labels().len() {
                            return Err(format!("leaf counts for {output} have wrong arity"));
                        }
                        if counts.iter().sum::<u32>() != leaf.samples {
                            return Err(format!("leaf counts for {output} do not sum to samples"));
                        }
                        if leaf.samples > 0 && argmax(counts) != leaf.labels.get(*output) {
                            return Err(format!("leaf label for {output} is not the majority class"));
                        }
                    }
                    if leaf.samples == 0 {
                        return Err("empty leaf".into());
                    }
                    Ok(())
                }
            }
        }
        check(&self.root).map_err(bad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decision::rules::reference_profile;
    use crate::decision::{build_training_corpus, RefurbishAction, RuleSet};

    fn example(carpets: bool, yes: bool) -> Example {
        let mut input = DecisionInput::quiet(reference_profile());
        input.profile.carpets_installed = carpets;
        let actions = ActionVector {
            uninstall_carpets: if yes { RefurbishAction::Yes } else { RefurbishAction::NoAction },
            ..Default::default()
        };
        Example { input, actions }
    }

    #[test]
    fn single_example_is_one_leaf() {
        let corpus = Corpus { examples: vec![example(true, true)] };
        let tree = train_tree(&corpus, TreeParams::default()).unwrap();
        assert_eq!(tree.leaves(), 1);
        let other = DecisionInput::quiet(reference_profile());
        assert_eq!(tree.raw_predict(&other).uninstall_carpets, RefurbishAction::Yes);
    }

    #[test]
    fn forced_split_on_the_differing_flag() {
        let corpus = Corpus { examples: vec![example(false, false), example(true, true)] };
        let tree = train_tree(&corpus, TreeParams::unlimited()).unwrap();
        assert_eq!(tree.depth(), 1);
        match &tree.root {
            Node::Split(s) => assert_eq!(s.feature, "carpets_installed"),
            Node::Leaf(_) => panic!("expected a split"),
        }
    }

    #[test]
    fn empty_and_inconsistent_corpora_rejected() {
        assert_eq!(train_tree(&Corpus::default(), TreeParams::default()), Err(DecisionError::EmptyCorpus));
        let corpus = Corpus { examples: vec![example(true, true), example(true, false)] };
        assert_eq!(
            train_tree(&corpus, TreeParams::default()),
            Err(DecisionError::InconsistentLabels { first: 0, second: 1 })
        );
    }

    #[test]
    fn tie_goes_to_lower_feature_index() {
        let mut a = example(false, false);
        a.input.profile.near_sea = false;
        let mut b = example(true, true);
        b.input.profile.near_sea = true;
        let tree = train_tree(&Corpus { examples: vec![a, b] }, TreeParams::unlimited()).unwrap();
        match &tree.root {
            Node::Split(s) => assert_eq!(s.feature, "near_sea"),
            Node::Leaf(_) => panic!("expected a split"),
        }
    }

    #[test]
    fn numeric_threshold_is_a_midpoint() {
        let mut examples = Vec::new();
        for (tow, yes) in [(10.0, false), (20.0, false), (40.0, true)] {
            let mut e = example(true, yes);
            e.input.time_of_wetness = tow;
            examples.push(e);
        }
        let tree = train_tree(&Corpus { examples }, TreeParams::unlimited()).unwrap();
        match &tree.root {
            Node::Split(s) => {
                assert_eq!(s.feature, "time_of_wetness");
                assert_eq!(s.test, SplitTest::Threshold(30.0));
            }
            Node::Leaf(_) => panic!("expected a split"),
        }
    }

    #[test]
    fn max_depth_and_min_leaf_stop_growth() {
        let set = RuleSet::builtin();
        let (corpus, _) = build_training_corpus(&set.rules, &set.grid).unwrap();
        let shallow = train_tree(&corpus, TreeParams { max_depth: Some(2), min_samples_leaf: 1 }).unwrap();
        assert!(shallow.depth() <= 2);
        let big_leaves = train_tree(&corpus, TreeParams { max_depth: None, min_samples_leaf: 4096 }).unwrap();
        assert!(big_leaves.depth() <= 1);
    }

    #[test]
    fn export_import_round_trip() {
        let corpus = Corpus { examples: vec![example(false, false), example(true, true)] };
        let tree = train_tree(&corpus, TreeParams::unlimited()).unwrap();
        let text = tree.export();
        assert_eq!(MultiOutputTree::import(&text).unwrap(), tree);
        assert!(matches!(
            MultiOutputTree::import(&text[..text.len() / 2]),
            Err(DecisionError::BadTreeFile(_))
        ));
        let tampered = text.replace("\"carpets_installed\"", "\"walls_area\"");
        assert!(matches!(MultiOutputTree::import(&tampered), Err(DecisionError::BadTreeFile(_))));
    }

    #[test]
    fn untrained_model_error() {
        let input = DecisionInput::quiet(reference_profile());
        assert_eq!(predict(None, &input), Err(DecisionError::UntrainedModel));
    }
}
