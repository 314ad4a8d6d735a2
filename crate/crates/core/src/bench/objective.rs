//! The ten trainable objectives behind one interface.
//!
//! Every objective is evaluated in two steps: [`Objective::prepare`] computes
//! the quantities that are constants for backprop (intersection points,
//! grids, reference moments) and [`Objective::evaluate`] computes the loss
//! and score gradients given them. Finite-difference checks reuse one
//! preparation across perturbed evaluations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{self, BaselineConfig};
use crate::error::{invalid, Error, Result};
use crate::kde::{self, ScoreGrid};
use crate::overlap::{self, LossValue, OverlapLossConfig, OverlapPlan, ScoreBatch};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Overlap,
    OverlapArbitrary,
    OverlapRanking,
    OverlapCombined,
    OverlapGaussian,
    Minus,
    Inverse,
    Hinge,
    Deviation,
    Ordinal,
}

impl LossKind {
    pub const ALL: [LossKind; 10] = [
        Self::Overlap,
        Self::OverlapArbitrary,
        Self::OverlapRanking,
        Self::OverlapCombined,
        Self::OverlapGaussian,
        Self::Minus,
        Self::Inverse,
        Self::Hinge,
        Self::Deviation,
        Self::Ordinal,
    ];

    /// The overlap loss and the five baselines it is compared against.
    pub const HEADLINE: [LossKind; 6] = [
        Self::Overlap,
        Self::Minus,
        Self::Inverse,
        Self::Hinge,
        Self::Deviation,
        Self::Ordinal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Overlap => "overlap",
            Self::OverlapArbitrary => "overlap_arbitrary",
            Self::OverlapRanking => "overlap_ranking",
            Self::OverlapCombined => "overlap_combined",
            Self::OverlapGaussian => "overlap_gaussian",
            Self::Minus => "minus",
            Self::Inverse => "inverse",
            Self::Hinge => "hinge",
            Self::Deviation => "deviation",
            Self::Ordinal => "ordinal",
        }
    }

    /// Ordinal scores feature pairs rather than single rows.
    pub fn is_pairwise(self) -> bool {
        self == Self::Ordinal
    }

    /// Minus and Inverse only see `|s|`, so `|s|` is their anomaly score.
    pub fn scores_by_magnitude(self) -> bool {
        matches!(self, Self::Minus | Self::Inverse)
    }

    pub fn input_width(self, features: usize) -> usize {
        if self.is_pairwise() {
            2 * features
        } else {
            features
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| invalid(format!("unknown loss {s:?}")))
    }
}

/// Detached state of one evaluation.
#[derive(Clone, Debug, PartialEq)]
pub enum Prepared {
    Overlap(OverlapPlan),
    Grid(ScoreGrid),
    Intersection(f64),
    Reference { mean: f64, std: f64 },
    Nothing,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Objective {
    pub kind: LossKind,
    pub overlap: OverlapLossConfig,
    pub baseline: BaselineConfig,
}

impl Objective {
    pub fn new(kind: LossKind, overlap: OverlapLossConfig, baseline: BaselineConfig) -> Result<Self> {
        overlap.validate()?;
        baseline.validate()?;
        Ok(Self {
            kind,
            overlap,
            baseline,
        })
    }

    pub fn with_defaults(kind: LossKind) -> Self {
        Self {
            kind,
            overlap: OverlapLossConfig::default(),
            baseline: BaselineConfig::default(),
        }
    }

    /// Computes the constants of one evaluation. Ordinal pairs have nothing
    /// to prepare.
    pub fn prepare(&self, batch: &ScoreBatch, rng: &mut crate::Rng) -> Result<Prepared> {
        Ok(match self.kind {
            LossKind::Overlap => {
                let found = overlap::find_intersections(&batch.s_n, &batch.s_a, &self.overlap, rng)?;
                Prepared::Overlap(OverlapPlan::from_intersections(batch, &found, &self.overlap))
            }
            LossKind::OverlapArbitrary | LossKind::OverlapCombined => {
                Prepared::Grid(kde::make_grid(&batch.s_n, &batch.s_a, self.overlap.grid_points)?)
            }
            LossKind::OverlapGaussian => Prepared::Intersection(overlap::gaussian_plan(batch)?),
            LossKind::Deviation => {
                let (mean, std) = baselines::deviation_reference(batch, &self.baseline, rng)?;
                Prepared::Reference { mean, std }
            }
            _ => Prepared::Nothing,
        })
    }

    pub fn evaluate(&self, batch: &ScoreBatch, prepared: &Prepared) -> Result<LossValue> {
        let h = self.overlap.bandwidth;
        match (self.kind, prepared) {
            (LossKind::Overlap, Prepared::Overlap(plan)) => overlap::overlap_loss_with(batch, plan, &self.overlap),
            (LossKind::OverlapArbitrary, Prepared::Grid(g)) => overlap::overlap_arbitrary_with(batch, g, h),
            (LossKind::OverlapCombined, Prepared::Grid(g)) => overlap::overlap_combined_with(batch, g, h),
            (LossKind::OverlapGaussian, Prepared::Intersection(c)) => overlap::overlap_gaussian_with(batch, *c),
            (LossKind::OverlapRanking, Prepared::Nothing) => overlap::ranking_term(batch),
            (LossKind::Minus, Prepared::Nothing) => baselines::minus_loss(batch, &self.baseline),
            (LossKind::Inverse, Prepared::Nothing) => baselines::inverse_loss(batch),
            (LossKind::Hinge, Prepared::Nothing) => baselines::hinge_loss(batch, &self.baseline),
            (LossKind::Deviation, Prepared::Reference { mean, std }) => {
                baselines::deviation_loss_with(batch, &self.baseline, *mean, *std)
            }
            (LossKind::Ordinal, _) => Err(invalid("ordinal loss is evaluated on pair scores")),
            _ => Err(invalid(format!("prepared state does not match loss {}", self.kind))),
        }
    }

    pub fn loss(&self, batch: &ScoreBatch, rng: &mut crate::Rng) -> Result<LossValue> {
        let prepared = self.prepare(batch, rng)?;
        self.evaluate(batch, &prepared)
    }
}
