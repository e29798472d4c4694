//! The multi-output decision core: expert rules are expanded into a labelled
//! corpus over a sampling grid, a single CART tree is grown over all eleven
//! action outputs at once, and its predictions are repaired against the
//! hangar's actual equipment.

mod actions;
mod input;
mod rules;
mod tree;

pub use actions::{
    ActionVector, AirExchangeAction, Coercion, EquipmentAction, OccupancyAction, Output,
    RatioAction, RefurbishAction, OUTPUT_COUNT,
};
pub use input::{DecisionInput, Feature, FeatureKind, FEATURE_COUNT};
pub use rules::{
    apply_rules, build_training_corpus, explain, reference_profile, Atom, Comparison, Corpus,
    CorpusReport, Example, Explanation, ExpertRule, RuleSet, SamplingPlan, DEFAULT_RULES,
    MODEL_DERIVED,
};
pub use tree::{
    predict, retrain, train_tree, Leaf, MultiOutputTree, Node, Prediction, Split, SplitTest,
    TreeParams,
};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DecisionError {
    #[error("rule `{0}` never fires on the sampling grid")]
    UnsatisfiableRule(String),
    #[error("rules `{first}` and `{second}` assign different values to `{output}` at equal priority")]
    ConflictAtEqualPriority {
        output: &'static str,
        first: String,
        second: String,
    },
    #[error("invalid rule `{rule}`: {reason}")]
    BadRule { rule: String, reason: String },
    #[error("bad rules file: {0}")]
    BadRulesFile(String),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("examples {first} and {second} have identical inputs but different labels")]
    InconsistentLabels { first: usize, second: usize },
    #[error("invalid decision input: {0}")]
    BadInput(String),
    #[error("no trained model")]
    UntrainedModel,
    #[error("bad tree file: {0}")]
    BadTreeFile(String),
}
