//! Problem specification, validation and sample-generation matrices.

use std::collections::HashMap;
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the simplex constraint for ingested distributions.
pub const SIMPLEX_TOLERANCE: f64 = 1e-12;

pub const DEFAULT_HORIZON: u64 = 5000;
pub const DEFAULT_TRIALS: usize = 200;

/// Opaque output label of an arm. Only the partition of symbols it induces
/// matters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Label {
    fn key(&self) -> LabelKey {
        match self {
            Label::Int(v) => LabelKey::Int(*v),
            Label::Float(v) => LabelKey::Float(v.to_bits()),
            Label::Text(s) => LabelKey::Text(s.clone()),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Int(v) => write!(f, "{v}"),
            Label::Float(v) => write!(f, "{v}"),
            Label::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum LabelKey {
    Int(i64),
    Float(u64),
    Text(String),
}

/// A validated problem: alphabet, arm output maps and experiment settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub alphabet_size: usize,
    /// `arms[k][j]` is the output of arm `k` on symbol `x_j`.
    pub arms: Vec<Vec<Label>>,
    #[serde(rename = "distribution", default, skip_serializing_if = "Option::is_none")]
    pub true_distribution: Option<Vec<f64>>,
    #[serde(default = "default_horizon")]
    pub horizon: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(rename = "seed", default)]
    pub master_seed: u64,
}

fn default_horizon() -> u64 {
    DEFAULT_HORIZON
}

fn default_trials() -> usize {
    DEFAULT_TRIALS
}

impl ProblemSpec {
    /// Builds and validates a spec from integer-labelled arm maps.
    pub fn from_arm_maps(
        alphabet_size: usize,
        arms: &[Vec<usize>],
        distribution: Option<Vec<f64>>,
    ) -> Result<Self> {
        let spec = ProblemSpec {
            alphabet_size,
            arms: arms
                .iter()
                .map(|arm| arm.iter().map(|&v| Label::Int(v as i64)).collect())
                .collect(),
            true_distribution: distribution,
            horizon: DEFAULT_HORIZON,
            trials: DEFAULT_TRIALS,
            master_seed: 0,
        };
        spec.validated()
    }

    pub fn arm_count(&self) -> usize {
        self.arms.len()
    }

    /// Checks every invariant, renormalizing a distribution that is within
    /// tolerance of the simplex.
    pub fn validated(mut self) -> Result<Self> {
        let n = self.alphabet_size;
        if n < 2 {
            return Err(Error::InvalidSpec(format!(
                "alphabet_size must be at least 2, got {n}"
            )));
        }
        if self.arms.is_empty() {
            return Err(Error::InvalidSpec("at least one arm is required".into()));
        }
        for (k, arm) in self.arms.iter().enumerate() {
            if arm.len() != n {
                return Err(Error::InvalidSpec(format!(
                    "arm {} maps {} symbols, expected {n}",
                    k + 1,
                    arm.len()
                )));
            }
        }
        if self.horizon == 0 {
            return Err(Error::InvalidSpec("horizon must be positive".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidSpec("trials must be positive".into()));
        }
        if let Some(p) = self.true_distribution.as_mut() {
            normalize_distribution(p, n)?;
        }
        Ok(self)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Validates `p` against the open simplex and renormalizes it in place.
pub fn normalize_distribution(p: &mut [f64], n: usize) -> Result<()> {
    if p.len() != n {
        return Err(Error::InvalidSpec(format!(
            "distribution has {} entries, expected {n}",
            p.len()
        )));
    }
    if let Some(j) = p.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidSpec(format!(
            "distribution entry p_{} = {} is not strictly positive",
            j + 1,
            p[j]
        )));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(Error::InvalidSpec(format!(
            "distribution sums to {sum}, not 1"
        )));
    }
    // Leave already-normalized vectors untouched so that re-parsing is a fixed point.
    if (sum - 1.0).abs() > n as f64 * f64::EPSILON {
        p.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(())
}

/// Parses a TOML problem spec and validates it.
pub fn parse_problem_spec(text: &str) -> Result<ProblemSpec> {
    let spec: ProblemSpec = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    spec.validated()
}

/// Distinct outputs of one arm, in first-appearance order over symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmOutputs {
    pub arm_index: usize,
    pub outputs: Vec<Label>,
    pub output_index_of_symbol: Vec<usize>,
}

impl ArmOutputs {
    fn from_labels(arm_index: usize, labels: &[Label]) -> Self {
        let mut seen: HashMap<LabelKey, usize> = HashMap::new();
        let mut outputs = Vec::new();
        let output_index_of_symbol = labels
            .iter()
            .map(|label| {
                *seen.entry(label.key()).or_insert_with(|| {
                    outputs.push(label.clone());
                    outputs.len() - 1
                })
            })
            .collect();
        ArmOutputs {
            arm_index,
            outputs,
            output_index_of_symbol,
        }
    }

    pub fn output_count(&self) -> usize {
        self.outputs.len()
    }
}

/// Per-arm binary matrices `A_k` and their vertical stack `A`.
///
/// Arms keep the index they had in the originating spec, so a matrix
/// restricted to surviving arms can still report original arm numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGenerationMatrix {
    alphabet_size: usize,
    arms: Vec<ArmOutputs>,
    per_arm: Vec<DMatrix<f64>>,
    stacked: DMatrix<f64>,
    offsets: Vec<usize>,
}

impl SampleGenerationMatrix {
    fn from_arm_outputs(alphabet_size: usize, arms: Vec<ArmOutputs>) -> Self {
        let per_arm: Vec<DMatrix<f64>> = arms
            .iter()
            .map(|arm| {
                let mut a = DMatrix::zeros(arm.output_count(), alphabet_size);
                for (j, &i) in arm.output_index_of_symbol.iter().enumerate() {
                    a[(i, j)] = 1.0;
                }
                a
            })
            .collect();
        let mut offsets = Vec::with_capacity(arms.len() + 1);
        offsets.push(0);
        for a in &per_arm {
            offsets.push(offsets.last().unwrap() + a.nrows());
        }
        let total = *offsets.last().unwrap();
        let mut stacked = DMatrix::zeros(total, alphabet_size);
        for (k, a) in per_arm.iter().enumerate() {
            stacked.rows_mut(offsets[k], a.nrows()).copy_from(a);
        }
        SampleGenerationMatrix {
            alphabet_size,
            arms,
            per_arm,
            stacked,
            offsets,
        }
    }

    /// Builds matrices from integer arm maps (`maps[k][j]` = output of arm
    /// `k` on symbol `j`).
    pub fn from_arm_maps(alphabet_size: usize, maps: &[Vec<usize>]) -> Result<Self> {
        let spec = ProblemSpec::from_arm_maps(alphabet_size, maps, None)?;
        Ok(build_matrices(&spec))
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    pub fn arm_count(&self) -> usize {
        self.arms.len()
    }

    /// Total number of rows `m` of the stacked matrix.
    pub fn row_count(&self) -> usize {
        self.stacked.nrows()
    }

    pub fn arm(&self, k: usize) -> &ArmOutputs {
        &self.arms[k]
    }

    pub fn arms(&self) -> &[ArmOutputs] {
        &self.arms
    }

    pub fn per_arm(&self) -> &[DMatrix<f64>] {
        &self.per_arm
    }

    pub fn arm_matrix(&self, k: usize) -> &DMatrix<f64> {
        &self.per_arm[k]
    }

    pub fn stacked(&self) -> &DMatrix<f64> {
        &self.stacked
    }

    /// Row offset of arm `k` inside the stacked matrix.
    pub fn offset(&self, k: usize) -> usize {
        self.offsets[k]
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn output_count(&self, k: usize) -> usize {
        self.offsets[k + 1] - self.offsets[k]
    }

    /// Stacked row index of the output arm `k` produces on symbol `j`.
    #[inline]
    pub fn row_of(&self, k: usize, j: usize) -> usize {
        self.offsets[k] + self.arms[k].output_index_of_symbol[j]
    }

    /// Original spec indices of the arms in this matrix.
    pub fn arm_ids(&self) -> Vec<usize> {
        self.arms.iter().map(|a| a.arm_index).collect()
    }

    /// Restricts to the arms at the given local positions.
    pub fn select_arms(&self, keep: &[usize]) -> SampleGenerationMatrix {
        let arms = keep.iter().map(|&k| self.arms[k].clone()).collect();
        SampleGenerationMatrix::from_arm_outputs(self.alphabet_size, arms)
    }

    /// True if arm `k` distinguishes every symbol.
    pub fn is_invertible_arm(&self, k: usize) -> bool {
        self.output_count(k) == self.alphabet_size
    }
}

/// Builds `A_k` for every arm and the stacked `A` from a spec.
pub fn build_matrices(spec: &ProblemSpec) -> SampleGenerationMatrix {
    let arms = spec
        .arms
        .iter()
        .enumerate()
        .map(|(k, labels)| ArmOutputs::from_labels(k, labels))
        .collect();
    SampleGenerationMatrix::from_arm_outputs(spec.alphabet_size, arms)
}

/// Output probabilities `q_{k,i}`, stacked in the row order of `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputProbabilities {
    values: Vec<f64>,
    offsets: Vec<usize>,
}

impl OutputProbabilities {
    pub fn new(values: Vec<f64>, offsets: Vec<usize>) -> Result<Self> {
        let expected = *offsets.last().unwrap_or(&0);
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "output probability vector",
                expected,
                actual: values.len(),
            });
        }
        Ok(OutputProbabilities { values, offsets })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn block(&self, k: usize) -> &[f64] {
        &self.values[self.offsets[k]..self.offsets[k + 1]]
    }

    pub fn arm_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }
}

/// `q = A p`.
pub fn output_probabilities(a: &SampleGenerationMatrix, p: &[f64]) -> Result<OutputProbabilities> {
    if p.len() != a.alphabet_size() {
        return Err(Error::DimensionMismatch {
            what: "probability vector",
            expected: a.alphabet_size(),
            actual: p.len(),
        });
    }
    let mut q = vec![0.0; a.row_count()];
    accumulate_output_probabilities(a, p, &mut q);
    OutputProbabilities::new(q, a.offsets().to_vec())
}

/// Writes `A p` into `q` without allocating. `q` must have `m` entries.
#[inline]
pub(crate) fn accumulate_output_probabilities(a: &SampleGenerationMatrix, p: &[f64], q: &mut [f64]) {
    q.iter_mut().for_each(|v| *v = 0.0);
    for k in 0..a.arm_count() {
        for (j, &pj) in p.iter().enumerate() {
            q[a.row_of(k, j)] += pj;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE1: &str = r#"
alphabet_size = 3
distribution = [0.2, 0.3, 0.5]
arms = [
  ["z11", "z12", "z12"],
  ["z21", "z22", "z21"],
  ["z31", "z31", "z32"],
]
"#;

    fn example2() -> SampleGenerationMatrix {
        SampleGenerationMatrix::from_arm_maps(4, &[vec![0, 1, 1, 2], vec![0, 0, 0, 1]]).unwrap()
    }

    #[test]
    fn parses_example1() {
        let spec = parse_problem_spec(EXAMPLE1).unwrap();
        assert_eq!(spec.arm_count(), 3);
        let a = build_matrices(&spec);
        let m: Vec<usize> = (0..3).map(|k| a.output_count(k)).collect();
        assert_eq!(m, vec![2, 2, 2]);
        assert_eq!(spec.horizon, DEFAULT_HORIZON);
    }

    #[test]
    fn example1_stacked_matrix() {
        let a = build_matrices(&parse_problem_spec(EXAMPLE1).unwrap());
        let expected = DMatrix::from_row_slice(
            6,
            3,
            &[
                1., 0., 0., 0., 1., 1., 1., 0., 1., 0., 1., 0., 1., 1., 0., 0., 0., 1.,
            ],
        );
        assert_eq!(a.stacked(), &expected);
    }

    #[test]
    fn example2_stacked_matrix() {
        let expected = DMatrix::from_row_slice(
            5,
            4,
            &[
                1., 0., 0., 0., 0., 1., 1., 0., 0., 0., 0., 1., 1., 1., 1., 0., 0., 0., 0., 1.,
            ],
        );
        assert_eq!(example2().stacked(), &expected);
    }

    #[test]
    fn identity_arm_is_identity_matrix() {
        let a = SampleGenerationMatrix::from_arm_maps(3, &[vec![0, 1, 2]]).unwrap();
        assert_eq!(a.stacked(), &DMatrix::<f64>::identity(3, 3));
        assert!(a.is_invertible_arm(0));
    }

    #[test]
    fn identity_arm_over_four_symbols() {
        let spec = parse_problem_spec("alphabet_size = 4\narms = [[1, 2, 3, 4]]\n").unwrap();
        assert_eq!(build_matrices(&spec).output_count(0), 4);
    }

    #[test]
    fn rejects_zero_probability() {
        let text = "alphabet_size = 2\narms = [[0, 1]]\ndistribution = [1.0, 0.0]\n";
        assert!(matches!(parse_problem_spec(text), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn rejects_off_simplex_and_short_arms() {
        let off = "alphabet_size = 2\narms = [[0, 1]]\ndistribution = [0.5, 0.6]\n";
        assert!(parse_problem_spec(off).is_err());
        let short = "alphabet_size = 3\narms = [[0, 1]]\n";
        assert!(matches!(parse_problem_spec(short), Err(Error::InvalidSpec(_))));
        let missing = "arms = [[0, 1]]\n";
        assert!(matches!(parse_problem_spec(missing), Err(Error::Parse(_))));
        assert!(matches!(parse_problem_spec("alphabet_size = ["), Err(Error::Parse(_))));
    }

    #[test]
    fn renormalizes_within_tolerance() {
        let text = "alphabet_size = 2\narms = [[0, 1]]\ndistribution = [0.5, 0.5000000000001]\n";
        let spec = parse_problem_spec(text).unwrap();
        let p = spec.true_distribution.unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mixed_label_types_partition_symbols() {
        let spec =
            parse_problem_spec("alphabet_size = 3\narms = [[1, \"1\", 1.5]]\n").unwrap();
        assert_eq!(build_matrices(&spec).output_count(0), 3);
    }

    #[test]
    fn output_probability_examples() {
        let id = SampleGenerationMatrix::from_arm_maps(3, &[vec![0, 1, 2]]).unwrap();
        let q = output_probabilities(&id, &[0.2, 0.3, 0.5]).unwrap();
        assert_eq!(q.as_slice(), &[0.2, 0.3, 0.5]);

        let q = output_probabilities(&example2(), &[0.1, 0.2, 0.3, 0.4]).unwrap();
        let block = q.block(1);
        assert!((block[0] - 0.6).abs() < 1e-15 && (block[1] - 0.4).abs() < 1e-15);

        let a = build_matrices(&parse_problem_spec(EXAMPLE1).unwrap());
        let q = output_probabilities(&a, &[0.2, 0.3, 0.5]).unwrap();
        assert!((q.block(0)[0] - 0.2).abs() < 1e-15 && (q.block(0)[1] - 0.8).abs() < 1e-15);

        assert!(matches!(
            output_probabilities(&a, &[0.5, 0.5]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn select_arms_keeps_original_ids() {
        let a = build_matrices(&parse_problem_spec(EXAMPLE1).unwrap());
        let sub = a.select_arms(&[0, 2]);
        assert_eq!(sub.arm_ids(), vec![0, 2]);
        assert_eq!(sub.row_count(), 4);
    }
}
