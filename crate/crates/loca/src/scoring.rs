//! Rubric-based grading and the error-rate metric.
//!
//! The engine never scores itself: a grader fills in mark sheets against
//! rubrics, and this module totals them, computes the error rate
//! `(full - total) / full x 100%` at full precision, and renders ranking
//! tables with a two-significant-figure display rounding.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::textfmt::{self, DocError, DocReader};

pub const RUBRIC_FORMAT: &str = "loca-rubric/1";
pub const MARKS_FORMAT: &str = "loca-marks/1";
pub const SCORECARD_FORMAT: &str = "loca-scorecard/1";

/// One gradable item of a rubric.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RubricItem {
    pub item_id: String,
    pub description: String,
    pub points: u64,
}

/// Point allocations for one problem.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rubric {
    pub problem_id: String,
    pub items: Vec<RubricItem>,
}

impl Rubric {
    pub fn full_score(&self) -> u64 {
        self.items.iter().map(|i| i.points).sum()
    }

    pub fn validate(&self) -> Result<(), ScoringError> {
        let mut seen = std::collections::HashSet::new();
        for item in &self.items {
            if !seen.insert(&item.item_id) {
                return Err(ScoringError::DuplicateItem {
                    problem_id: self.problem_id.clone(),
                    item_id: item.item_id.clone(),
                });
            }
        }
        if self.full_score() == 0 {
            return Err(ScoringError::EmptyRubric {
                problem_id: self.problem_id.clone(),
            });
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, DocError> {
        let mut reader = DocReader::new(text);
        textfmt::expect_format(&mut reader, RUBRIC_FORMAT)?;
        let problem_id = reader.expect_field("problem")?.value()?;
        let mut items = Vec::new();
        while let Some(field) = reader.next_field()? {
            if field.key != "item" {
                return Err(DocError::at(
                    field.line,
                    format!("expected `item` field, found `{}`", field.key),
                ));
            }
            let value = field.value()?;
            let mut parts = value.splitn(3, '|').map(str::trim);
            let (id, points, description) = match (parts.next(), parts.next(), parts.next()) {
                (Some(id), Some(points), Some(desc)) if !id.is_empty() => (id, points, desc),
                _ => {
                    return Err(DocError::at(
                        field.line,
                        "item must be `id | points | description`",
                    ))
                }
            };
            let points: u64 = points.parse().map_err(|_| {
                DocError::at(field.line, format!("bad points value `{points}`"))
            })?;
            items.push(RubricItem {
                item_id: id.to_string(),
                description: description.to_string(),
                points,
            });
        }
        Ok(Self { problem_id, items })
    }

    pub fn to_document(&self) -> String {
        let mut out = String::new();
        textfmt::push_raw(&mut out, "format", RUBRIC_FORMAT);
        textfmt::push_field(&mut out, "problem", &self.problem_id);
        for item in &self.items {
            textfmt::push_field(
                &mut out,
                "item",
                &format!("{} | {} | {}", item.item_id, item.points, item.description),
            );
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self, ScoringError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScoringError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(Self::parse(&text)?)
    }
}

/// Points a grader awarded against one rubric.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkSheet {
    pub problem_id: String,
    pub awarded: Vec<(String, u64)>,
}

impl MarkSheet {
    pub fn parse(text: &str) -> Result<Self, DocError> {
        let mut reader = DocReader::new(text);
        textfmt::expect_format(&mut reader, MARKS_FORMAT)?;
        let problem_id = reader.expect_field("problem")?.value()?;
        let mut awarded = Vec::new();
        while let Some(field) = reader.next_field()? {
            if field.key != "award" {
                return Err(DocError::at(
                    field.line,
                    format!("expected `award` field, found `{}`", field.key),
                ));
            }
            let value = field.value()?;
            let (id, points) = value.split_once('|').ok_or_else(|| {
                DocError::at(field.line, "award must be `item-id | points`")
            })?;
            let points: u64 = points.trim().parse().map_err(|_| {
                DocError::at(field.line, format!("bad points value `{}`", points.trim()))
            })?;
            awarded.push((id.trim().to_string(), points));
        }
        Ok(Self {
            problem_id,
            awarded,
        })
    }

    pub fn to_document(&self) -> String {
        let mut out = String::new();
        textfmt::push_raw(&mut out, "format", MARKS_FORMAT);
        textfmt::push_field(&mut out, "problem", &self.problem_id);
        for (id, points) in &self.awarded {
            textfmt::push_field(&mut out, "award", &format!("{id} | {points}"));
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self, ScoringError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScoringError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(Self::parse(&text)?)
    }
}

/// Totals for one graded run.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreCard {
    /// `(problem id, total, full score)` per problem, in rubric order.
    pub per_problem: Vec<(String, u64, u64)>,
    pub grand_total: u64,
    pub full_score: u64,
    pub error_rate_percent: f64,
}

impl ScoreCard {
    /// The error rate rendered to two significant figures, e.g. `2.2%`.
    pub fn display_error_rate(&self) -> String {
        format!("{}%", round_two_significant(self.error_rate_percent))
    }

    pub fn to_document(&self) -> String {
        let mut out = String::new();
        textfmt::push_raw(&mut out, "format", SCORECARD_FORMAT);
        textfmt::push_raw(&mut out, "grand_total", self.grand_total);
        textfmt::push_raw(&mut out, "full_score", self.full_score);
        textfmt::push_raw(&mut out, "error_rate_percent", self.error_rate_percent);
        textfmt::push_raw(
            &mut out,
            "error_rate_display",
            self.display_error_rate(),
        );
        for (id, total, full) in &self.per_problem {
            textfmt::push_raw(
                &mut out,
                "problem",
                format!("{} | {total} | {full}", textfmt::escape(id)),
            );
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("rubric {problem_id}: duplicate item id `{item_id}`")]
    DuplicateItem { problem_id: String, item_id: String },
    #[error("rubric {problem_id}: full score is zero")]
    EmptyRubric { problem_id: String },
    #[error("no mark sheet for problem `{0}`")]
    MissingMarkSheet(String),
    #[error("mark sheet for `{0}` has no matching rubric")]
    UnknownProblem(String),
    #[error("problem `{problem_id}`: unknown item id `{item_id}`")]
    UnknownItem { problem_id: String, item_id: String },
    #[error("problem `{problem_id}` item `{item_id}`: awarded {awarded} exceeds {points} points")]
    AwardTooHigh {
        problem_id: String,
        item_id: String,
        awarded: u64,
        points: u64,
    },
    #[error("problem `{problem_id}`: item `{item_id}` marked twice")]
    DuplicateAward { problem_id: String, item_id: String },
    #[error("scorecards disagree on full score: {0} vs {1}")]
    FullScoreMismatch(u64, u64),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Doc(#[from] DocError),
}

/// Rounds a non-negative value to two significant figures for display.
/// Ties round half to even, which reproduces presentation like 8.75 -> 8.8
/// and 36.25 -> 36.
pub fn round_two_significant(value: f64) -> String {
    if value == 0.0 {
        return "0".to_string();
    }
    let mut decimals = (1 - value.abs().log10().floor() as i32).max(0);
    loop {
        let rendered = format!("{value:.*}", decimals as usize);
        // rounding can add a digit (9.96 -> "10.0"); re-derive and retry
        let rounded: f64 = rendered.parse().unwrap_or(value);
        let wanted = (1 - rounded.abs().log10().floor() as i32).max(0);
        if wanted >= decimals || decimals == 0 {
            return rendered;
        }
        decimals = wanted;
    }
}

/// Totals mark sheets against rubrics. Requires exactly one mark sheet per
/// rubric; every award must name a rubric item and stay within its points.
pub fn score(rubrics: &[Rubric], marks: &[MarkSheet]) -> Result<ScoreCard, ScoringError> {
    for rubric in rubrics {
        rubric.validate()?;
    }
    let mut marks_by_problem: HashMap<&str, &MarkSheet> = HashMap::new();
    for sheet in marks {
        marks_by_problem.insert(sheet.problem_id.as_str(), sheet);
    }
    for sheet in marks {
        if !rubrics.iter().any(|r| r.problem_id == sheet.problem_id) {
            return Err(ScoringError::UnknownProblem(sheet.problem_id.clone()));
        }
    }

    let mut per_problem = Vec::with_capacity(rubrics.len());
    let mut grand_total = 0u64;
    let mut full_score = 0u64;
    for rubric in rubrics {
        let sheet = marks_by_problem
            .get(rubric.problem_id.as_str())
            .ok_or_else(|| ScoringError::MissingMarkSheet(rubric.problem_id.clone()))?;
        let points_by_item: HashMap<&str, u64> = rubric
            .items
            .iter()
            .map(|i| (i.item_id.as_str(), i.points))
            .collect();
        let mut seen = std::collections::HashSet::new();
        let mut total = 0u64;
        for (item_id, awarded) in &sheet.awarded {
            let points = points_by_item.get(item_id.as_str()).ok_or_else(|| {
                ScoringError::UnknownItem {
                    problem_id: rubric.problem_id.clone(),
                    item_id: item_id.clone(),
                }
            })?;
            if !seen.insert(item_id) {
                return Err(ScoringError::DuplicateAward {
                    problem_id: rubric.problem_id.clone(),
                    item_id: item_id.clone(),
                });
            }
            if awarded > points {
                return Err(ScoringError::AwardTooHigh {
                    problem_id: rubric.problem_id.clone(),
                    item_id: item_id.clone(),
                    awarded: *awarded,
                    points: *points,
                });
            }
            total += awarded;
        }
        let full = rubric.full_score();
        per_problem.push((rubric.problem_id.clone(), total, full));
        grand_total += total;
        full_score += full;
    }

    let lost = (full_score - grand_total) as f64;
    Ok(ScoreCard {
        per_problem,
        grand_total,
        full_score,
        error_rate_percent: lost / full_score as f64 * 100.0,
    })
}

/// A named scorecard row for comparison tables.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedCard {
    pub name: String,
    pub card: ScoreCard,
}

/// Ranks named scorecards: descending by grand total, ties broken by name.
/// All cards must share the same full score.
pub fn compare(cards: &[NamedCard]) -> Result<Vec<NamedCard>, ScoringError> {
    if let Some(first) = cards.first() {
        for card in &cards[1..] {
            if card.card.full_score != first.card.full_score {
                return Err(ScoringError::FullScoreMismatch(
                    first.card.full_score,
                    card.card.full_score,
                ));
            }
        }
    }
    let mut sorted = cards.to_vec();
    sorted.sort_by(|a, b| {
        b.card
            .grand_total
            .cmp(&a.card.grand_total)
            .then_with(|| a.name.cmp(&b.name))
    });
    Ok(sorted)
}

/// Renders ranked cards as an aligned text table. Per-problem columns are
/// emitted when every card carries the same per-problem layout.
pub fn render_table(ranked: &[NamedCard]) -> String {
    let with_problems = !ranked.is_empty()
        && ranked.iter().all(|c| {
            !c.card.per_problem.is_empty()
                && c.card
                    .per_problem
                    .iter()
                    .map(|(id, _, _)| id)
                    .eq(ranked[0].card.per_problem.iter().map(|(id, _, _)| id))
        });

    let mut header: Vec<String> = vec!["Method".to_string()];
    if with_problems {
        for (id, _, _) in &ranked[0].card.per_problem {
            header.push(id.clone());
        }
    }
    header.push("Total".to_string());
    header.push("Error Rate".to_string());

    let mut rows: Vec<Vec<String>> = vec![header];
    for entry in ranked {
        let mut row = vec![entry.name.clone()];
        if with_problems {
            for (_, total, _) in &entry.card.per_problem {
                row.push(total.to_string());
            }
        }
        row.push(format!(
            "{}/{}",
            entry.card.grand_total, entry.card.full_score
        ));
        row.push(entry.card.display_error_rate());
        rows.push(row);
    }

    let columns = rows[0].len();
    let mut widths = vec![0usize; columns];
    for row in &rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = String::new();
    for (r, row) in rows.iter().enumerate() {
        for (i, cell) in row.iter().enumerate() {
            if i > 0 {
                out.push_str("  ");
            }
            let _ = write!(out, "{cell:>width$}", width = widths[i]);
        }
        out.push('\n');
        if r == 0 {
            let total: usize = widths.iter().sum::<usize>() + 2 * (columns - 1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}
