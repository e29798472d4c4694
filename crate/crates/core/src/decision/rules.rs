use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::actions::{ActionVector, Output, OUTPUT_COUNT};
use super::input::{DecisionInput, Feature, FeatureKind};
use super::tree::TreeParams;
use super::DecisionError;
use crate::store::{HangarProfile, Material};

const RULES_FORMAT: &str = "smarthangar-rules/1";
const MAX_GRID_SAMPLES: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparison {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl Comparison {
    fn symbol(self) -> &'static str {
        match self {
            Comparison::Eq => "==",
            Comparison::Ne => "!=",
            Comparison::Lt => "<",
            Comparison::Le => "<=",
            Comparison::Gt => ">",
            Comparison::Ge => ">=",
        }
    }

    fn is_ordered(self) -> bool {
        !matches!(self, Comparison::Eq | Comparison::Ne)
    }

    fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Comparison::Eq => lhs == rhs,
            Comparison::Ne => lhs != rhs,
            Comparison::Lt => lhs < rhs,
            Comparison::Le => lhs <= rhs,
            Comparison::Gt => lhs > rhs,
            Comparison::Ge => lhs >= rhs,
        }
    }
}

/// `feature <op> value`, e.g. `freeze_thaw_events >= 5`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub feature: Feature,
    pub comparison: Comparison,
    /// Encoded feature value.
    pub value: f64,
}

impl Atom {
    pub fn new(feature: Feature, comparison: Comparison, value: f64) -> Self {
        Atom { feature, comparison, value }
    }

    pub fn is(feature: Feature, flag: bool) -> Self {
        Atom::new(feature, Comparison::Eq, if flag { 1.0 } else { 0.0 })
    }

    pub fn holds(&self, input: &DecisionInput) -> bool {
        self.comparison.holds(input.get(self.feature), self.value)
    }

    /// Whether this atom alone forces the boolean `feature` to `value`.
    fn pins_flag(&self, feature: Feature, value: bool) -> bool {
        let code = if value { 1.0 } else { 0.0 };
        self.feature == feature
            && match self.comparison {
                Comparison::Eq => self.value == code,
                Comparison::Ne => self.value == 1.0 - code,
                _ => false,
            }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {}",
            self.feature,
            self.comparison.symbol(),
            self.feature.kind().format_value(self.value)
        )
    }
}

impl FromStr for Atom {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split_whitespace();
        let (Some(name), Some(op), Some(value), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(format!("expected `feature op value`, got `{s}`"));
        };
        let feature: Feature = name.parse()?;
        let comparison = match op {
            "==" => Comparison::Eq,
            "!=" => Comparison::Ne,
            "<" => Comparison::Lt,
            "<=" => Comparison::Le,
            ">" => Comparison::Gt,
            ">=" => Comparison::Ge,
            _ => return Err(format!("unknown comparison `{op}`")),
        };
        let kind = feature.kind();
        if comparison.is_ordered() && matches!(kind, FeatureKind::Flag | FeatureKind::Material) {
            return Err(format!("`{feature}` only supports == and !="));
        }
        let value = kind.parse_value(value)?;
        Ok(Atom { feature, comparison, value })
    }
}

/// A conjunction of atoms and the partial action assignment it implies.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertRule {
    pub name: String,
    pub atoms: Vec<Atom>,
    pub consequent: Vec<(Output, u8)>,
    pub priority: i64,
    pub citation: String,
}

impl ExpertRule {
    pub fn fires(&self, input: &DecisionInput) -> bool {
        self.atoms.iter().all(|a| a.holds(input))
    }

    /// Checks that the consequent cannot violate an action invariant whenever the rule fires.
    pub fn validate(&self) -> Result<(), DecisionError> {
        let bad = |reason: String| DecisionError::BadRule { rule: self.name.clone(), reason };
        if self.name.trim().is_empty() {
            return Err(bad("empty name".into()));
        }
        if self.consequent.is_empty() {
            return Err(bad("consequent assigns no output".into()));
        }
        let mut seen = HashSet::new();
        for (output, code) in &self.consequent {
            if !seen.insert(*output) {
                return Err(bad(format!("{output} assigned twice")));
            }
            if *code == 0 || (*code as usize) >= output.labels().len() {
                return Err(bad(format!("{output} cannot be assigned code {code}")));
            }
            if let Some((flag, required)) = output.requirement(*code) {
                let feature: Feature = flag.parse().map_err(bad)?;
                if !self.atoms.iter().any(|a| a.pins_flag(feature, required)) {
                    return Err(bad(format!(
                        "{output} = {} needs the predicate to include `{flag} == {required}`",
                        output.label(*code)
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Grid axes over which the rules are evaluated; features without an axis keep the base value.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPlan {
    pub base: DecisionInput,
    pub axes: Vec<(Feature, Vec<f64>)>,
}

impl SamplingPlan {
    pub fn new(base: DecisionInput) -> Self {
        SamplingPlan { base, axes: Vec::new() }
    }

    pub fn axis(mut self, feature: Feature, values: Vec<f64>) -> Self {
        self.axes.retain(|(f, _)| *f != feature);
        self.axes.push((feature, values));
        self.axes.sort_by_key(|(f, _)| *f);
        self
    }

    pub fn flag_axis(self, feature: Feature) -> Self {
        self.axis(feature, vec![0.0, 1.0])
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|(_, v)| v.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every grid point, in odometer order with the last axis varying fastest.
    pub fn samples(&self) -> Result<Vec<DecisionInput>, DecisionError> {
        let total = self.len();
        if total > MAX_GRID_SAMPLES {
            return Err(DecisionError::BadRulesFile(format!(
                "sampling grid has {total} points, limit is {MAX_GRID_SAMPLES}"
            )));
        }
        let mut out = Vec::with_capacity(total);
        let mut digits = vec![0usize; self.axes.len()];
        for _ in 0..total {
            let mut input = self.base.clone();
            for ((feature, values), d) in self.axes.iter().zip(&digits) {
                input
                    .set(*feature, values[*d])
                    .map_err(DecisionError::BadRulesFile)?;
            }
            input.validate()?;
            out.push(input);
            for (d, (_, values)) in digits.iter_mut().zip(&self.axes).rev() {
                *d += 1;
                if *d < values.len() {
                    break;
                }
                *d = 0;
            }
        }
        Ok(out)
    }
}

/// A parsed rules file.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleSet {
    pub version: String,
    pub rules: Vec<ExpertRule>,
    pub grid: SamplingPlan,
    pub training: TreeParams,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRuleFile {
    format: String,
    version: String,
    #[serde(default)]
    training: Option<TreeParams>,
    base: DecisionInput,
    #[serde(default)]
    grid: BTreeMap<String, Vec<toml::Value>>,
    #[serde(default, rename = "rule")]
    rules: Vec<RawRule>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    name: String,
    #[serde(default)]
    priority: i64,
    when: Vec<String>,
    then: BTreeMap<String, String>,
    citation: String,
}

fn grid_value(kind: FeatureKind, value: &toml::Value) -> Result<f64, String> {
    let text = match value {
        toml::Value::Boolean(b) => b.to_string(),
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::Float(f) => f.to_string(),
        toml::Value::String(s) => s.clone(),
        other => return Err(format!("unsupported grid value `{other}`")),
    };
    kind.parse_value(&text)
}

impl RuleSet {
    pub fn parse(text: &str) -> Result<Self, DecisionError> {
        let raw: RawRuleFile =
            toml::from_str(text).map_err(|e| DecisionError::BadRulesFile(e.message().to_string()))?;
        if raw.format != RULES_FORMAT {
            return Err(DecisionError::BadRulesFile(format!(
                "unsupported format `{}`, expected `{RULES_FORMAT}`",
                raw.format
            )));
        }
        let mut grid = SamplingPlan::new(raw.base);
        for (name, values) in &raw.grid {
            let feature: Feature = name.parse().map_err(DecisionError::BadRulesFile)?;
            let values = values
                .iter()
                .map(|v| grid_value(feature.kind(), v))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| DecisionError::BadRulesFile(format!("grid.{name}: {e}")))?;
            if values.is_empty() {
                return Err(DecisionError::BadRulesFile(format!("grid.{name} is empty")));
            }
            grid = grid.axis(feature, values);
        }
        let mut rules = Vec::with_capacity(raw.rules.len());
        for r in raw.rules {
            let bad = |reason: String| DecisionError::BadRule { rule: r.name.clone(), reason };
            let atoms = r
                .when
                .iter()
                .map(|a| a.parse::<Atom>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(bad)?;
            let consequent = r
                .then
                .iter()
                .map(|(o, label)| {
                    let output: Output = o.parse()?;
                    let code = output
                        .label_code(label)
                        .ok_or_else(|| format!("`{label}` is not a label of {output}"))?;
                    Ok((output, code))
                })
                .collect::<Result<Vec<_>, String>>()
                .map_err(bad)?;
            let rule = ExpertRule {
                name: r.name.clone(),
                atoms,
                consequent,
                priority: r.priority,
                citation: r.citation.trim().to_string(),
            };
            rule.validate()?;
            if rules.iter().any(|x: &ExpertRule| x.name == rule.name) {
                return Err(DecisionError::BadRule { rule: rule.name, reason: "duplicate name".into() });
            }
            rules.push(rule);
        }
        let training = raw.training.unwrap_or_default();
        training.validate()?;
        Ok(RuleSet { version: raw.version, rules, grid, training })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, DecisionError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DecisionError::BadRulesFile(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// The shipped default rule set.
    pub fn builtin() -> Self {
        Self::parse(DEFAULT_RULES).expect("shipped rules file is valid")
    }
}

pub const DEFAULT_RULES: &str = include_str!("../../data/default_rules.toml");

/// A profile used as the fixed background of programmatic sampling plans.
pub fn reference_profile() -> HangarProfile {
    HangarProfile {
        near_sea: false,
        ac_installed: false,
        heating_installed: false,
        filters_installed: false,
        insulation_installed: false,
        barriers_installed: false,
        carpets_installed: false,
        walls_material: Material::Wood,
        walls_area: 1000.0,
        roof_material: Material::Steel,
        roof_area: 1000.0,
        floor_material: Material::Concrete,
        floor_area: 1000.0,
        exhibition_area: 1000.0,
        volume: 8000.0,
    }
}

/// Applies every firing rule; higher priority wins, equal priority must agree.
pub fn apply_rules(
    rules: &[ExpertRule],
    input: &DecisionInput,
) -> Result<(ActionVector, Vec<usize>), DecisionError> {
    let mut order: Vec<usize> = (0..rules.len()).collect();
    order.sort_by_key(|i| std::cmp::Reverse(rules[*i].priority));
    let mut assigned: [Option<(i64, u8, usize)>; OUTPUT_COUNT] = [None; OUTPUT_COUNT];
    let mut fired = Vec::new();
    for i in order {
        let rule = &rules[i];
        if !rule.fires(input) {
            continue;
        }
        fired.push(i);
        for (output, code) in &rule.consequent {
            match assigned[output.index()] {
                None => assigned[output.index()] = Some((rule.priority, *code, i)),
                Some((p, c, j)) if p == rule.priority && c != *code => {
                    return Err(DecisionError::ConflictAtEqualPriority {
                        output: output.name(),
                        first: rules[j].name.clone(),
                        second: rule.name.clone(),
                    })
                }
                Some(_) => {}
            }
        }
    }
    fired.sort_unstable();
    let codes = assigned.map(|a| a.map(|(_, c, _)| c).unwrap_or(0));
    let actions = ActionVector::from_codes(&codes).unwrap_or_default();
    Ok((actions, fired))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub input: DecisionInput,
    pub actions: ActionVector,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Corpus {
    pub examples: Vec<Example>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Appends `other`, dropping examples already present verbatim.
    pub fn merged(&self, other: &[Example]) -> Corpus {
        let mut seen: HashSet<_> = self.examples.iter().map(example_key).collect();
        let mut examples = self.examples.clone();
        for e in other {
            if seen.insert(example_key(e)) {
                examples.push(e.clone());
            }
        }
        Corpus { examples }
    }
}

pub(crate) fn input_key(input: &DecisionInput) -> [u64; super::FEATURE_COUNT] {
    input.encode().map(|v| (v + 0.0).to_bits())
}

fn example_key(e: &Example) -> ([u64; super::FEATURE_COUNT], [u8; OUTPUT_COUNT]) {
    (input_key(&e.input), e.actions.to_codes())
}

/// Rule name → number of grid samples on which it fired, in rule order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub samples: usize,
    pub coverage: Vec<(String, usize)>,
}

pub fn build_training_corpus(
    rules: &[ExpertRule],
    plan: &SamplingPlan,
) -> Result<(Corpus, CorpusReport), DecisionError> {
    for rule in rules {
        rule.validate()?;
    }
    let mut counts = vec![0usize; rules.len()];
    let mut seen = HashSet::new();
    let mut examples = Vec::new();
    for input in plan.samples()? {
        if !seen.insert(input_key(&input)) {
            continue;
        }
        let (actions, fired) = apply_rules(rules, &input)?;
        for i in fired {
            counts[i] += 1;
        }
        examples.push(Example { input, actions });
    }
    if let Some(i) = counts.iter().position(|c| *c == 0) {
        return Err(DecisionError::UnsatisfiableRule(rules[i].name.clone()));
    }
    let report = CorpusReport {
        samples: examples.len(),
        coverage: rules.iter().map(|r| r.name.clone()).zip(counts).collect(),
    };
    Ok((Corpus { examples }, report))
}

pub const MODEL_DERIVED: &str = "model-derived, no matching rule";

/// One row of the recommendation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub output: Output,
    pub action: String,
    pub label: String,
    pub highlighted: bool,
    pub rules: Vec<String>,
    pub citations: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Attaches the citations of firing rules that agree with each predicted action.
pub fn explain(rules: &[ExpertRule], input: &DecisionInput, actions: &ActionVector) -> Vec<Explanation> {
    let firing: Vec<&ExpertRule> = rules.iter().filter(|r| r.fires(input)).collect();
    Output::ALL
        .into_iter()
        .map(|output| {
            let code = actions.get(output);
            let agreeing: Vec<&ExpertRule> = if code == 0 {
                Vec::new()
            } else {
                firing
                    .iter()
                    .copied()
                    .filter(|r| r.consequent.contains(&(output, code)))
                    .collect()
            };
            Explanation {
                output,
                action: output.title().to_string(),
                label: output.label(code).to_string(),
                highlighted: code != 0,
                rules: agreeing.iter().map(|r| r.name.clone()).collect(),
                citations: agreeing.iter().map(|r| r.citation.clone()).collect(),
                note: (code != 0 && agreeing.is_empty()).then(|| MODEL_DERIVED.to_string()),
            }
        })
        .collect()
}
