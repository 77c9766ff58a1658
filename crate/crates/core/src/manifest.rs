//! Sample manifests: the interchange format naming images, subjects and
//! ground-truth gaze angles.
//!
//! A manifest is delimiter-separated text:
//!
//! ```text
//! # units: degrees
//! image_ref,subject_id,pitch,yaw,direction
//! p00/day01/0001.jpg,p00,-3.5,12.0,left
//! p00/day01/0002.jpg,p00,1.2,-4.8,
//! ```
//!
//! Rules:
//!
//! - A comment line `# units: radians` or `# units: degrees` is required
//!   before the first data row; angles are converted to radians at load
//!   time (all internal angles are radians; only reports use degrees).
//! - The column header is `image_ref,subject_id,pitch,yaw` with an
//!   optional trailing `direction` column carrying a cached coarse class
//!   (the zero-shot assignment runs once per sample and is cached here, a
//!   `direction` cell may be empty).
//! - Other `#` comments and blank lines are ignored. Fields must not
//!   contain commas.
//! - Malformed input is reported with its 1-based line number.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::geometry::GazeAngles;
use crate::prompt::DirectionClass;

/// Angle unit a manifest declares for its `pitch`/`yaw` columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AngleUnit {
    /// Values are radians (stored as-is).
    Radians,
    /// Values are degrees (converted to radians at load).
    Degrees,
}

impl AngleUnit {
    /// Spelling used in the `# units:` declaration.
    pub fn as_str(self) -> &'static str {
        match self {
            AngleUnit::Radians => "radians",
            AngleUnit::Degrees => "degrees",
        }
    }

    fn to_radians(self, value: f64) -> f64 {
        match self {
            AngleUnit::Radians => value,
            AngleUnit::Degrees => crate::math::to_radians(value),
        }
    }
}

impl core::fmt::Display for AngleUnit {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FaceSample {
    /// Path or identifier of the (pre-normalized) face image.
    pub image_ref: String,
    /// Non-empty subject identifier; splits group by this.
    pub subject_id: String,
    /// Ground-truth gaze in radians.
    pub gaze: GazeAngles,
    /// Cached coarse direction class, if assigned.
    pub direction: Option<DirectionClass>,
}

/// Manifest parse/render failure, located by 1-based line number where
/// one applies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ManifestError {
    /// No `# units: radians|degrees` declaration before the data.
    MissingUnits,
    /// A `# units:` line with an unrecognized unit.
    BadUnits {
        /// Line of the declaration.
        line: usize,
        /// The unrecognized unit text.
        value: String,
    },
    /// Missing or malformed column-header line.
    BadHeader {
        /// Line the header was expected or found on.
        line: usize,
        /// The offending text.
        value: String,
    },
    /// A data row with the wrong number of columns.
    ColumnCount {
        /// Row line number.
        line: usize,
        /// Columns the header promises.
        expected: usize,
        /// Columns found.
        got: usize,
    },
    /// An angle that does not parse as a number.
    BadAngle {
        /// Row line number.
        line: usize,
        /// Column name (`pitch` or `yaw`).
        column: &'static str,
        /// The offending text.
        value: String,
    },
    /// An angle that parses but is NaN or infinite.
    NonFiniteAngle {
        /// Row line number.
        line: usize,
        /// Column name (`pitch` or `yaw`).
        column: &'static str,
    },
    /// Empty `subject_id`.
    EmptySubject {
        /// Row line number.
        line: usize,
    },
    /// Unrecognized `direction` cell.
    BadDirection {
        /// Row line number.
        line: usize,
        /// The offending text.
        value: String,
    },
    /// A field containing a comma or newline cannot be rendered.
    UnrepresentableField {
        /// The offending field content.
        value: String,
    },
    /// Rendering a sample with an empty subject id.
    EmptySubjectField,
}

impl core::fmt::Display for ManifestError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ManifestError::MissingUnits => {
                write!(f, "missing `# units: radians|degrees` declaration before the first data row")
            }
            ManifestError::BadUnits { line, value } => {
                write!(f, "line {line}: unknown units `{value}` (expected radians or degrees)")
            }
            ManifestError::BadHeader { line, value } => write!(
                f,
                "line {line}: expected header `image_ref,subject_id,pitch,yaw[,direction]`, found `{value}`"
            ),
            ManifestError::ColumnCount { line, expected, got } => {
                write!(f, "line {line}: expected {expected} columns, found {got}")
            }
            ManifestError::BadAngle { line, column, value } => {
                write!(f, "line {line}: {column} `{value}` is not a number")
            }
            ManifestError::NonFiniteAngle { line, column } => {
                write!(f, "line {line}: {column} must be finite")
            }
            ManifestError::EmptySubject { line } => {
                write!(f, "line {line}: subject_id must be non-empty")
            }
            ManifestError::BadDirection { line, value } => {
                write!(f, "line {line}: unknown direction `{value}`")
            }
            ManifestError::UnrepresentableField { value } => {
                write!(f, "field `{value}` contains a comma or newline and cannot be written")
            }
            ManifestError::EmptySubjectField => write!(f, "cannot write a sample with an empty subject_id"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ManifestError {}

const HEADER_BASE: [&str; 4] = ["image_ref", "subject_id", "pitch", "yaw"];

fn parse_angle(cell: &str, line: usize, column: &'static str) -> Result<f64, ManifestError> {
    let value: f64 = cell.trim().parse().map_err(|_| ManifestError::BadAngle {
        line,
        column,
        value: cell.trim().to_string(),
    })?;
    if !value.is_finite() {
        return Err(ManifestError::NonFiniteAngle { line, column });
    }
    Ok(value)
}

/// Parse manifest text into samples, converting angles to radians.
pub fn parse_manifest(source: &str) -> Result<Vec<FaceSample>, ManifestError> {
    let mut units: Option<AngleUnit> = None;
    let mut columns: Option<usize> = None; // 4 or 5 once the header is seen
    let mut samples = Vec::new();

    for (index, raw) in source.lines().enumerate() {
        let line = index + 1;
        let text = raw.trim();
        if text.is_empty() {
            continue;
        }
        if let Some(comment) = text.strip_prefix('#') {
            let comment = comment.trim();
            if let Some(decl) = comment.strip_prefix("units:") {
                let decl = decl.trim();
                units = Some(match decl {
                    "radians" => AngleUnit::Radians,
                    "degrees" => AngleUnit::Degrees,
                    other => {
                        return Err(ManifestError::BadUnits { line, value: other.to_string() })
                    }
                });
            }
            continue;
        }

        let cells: Vec<&str> = text.split(',').collect();
        match columns {
            None => {
                // First non-comment line must be the column header.
                let trimmed: Vec<&str> = cells.iter().map(|c| c.trim()).collect();
                let base_ok = trimmed.len() >= 4 && trimmed[..4] == HEADER_BASE;
                let ok = base_ok
                    && (trimmed.len() == 4 || (trimmed.len() == 5 && trimmed[4] == "direction"));
                if !ok {
                    return Err(ManifestError::BadHeader { line, value: text.to_string() });
                }
                columns = Some(trimmed.len());
            }
            Some(expected) => {
                let unit = units.ok_or(ManifestError::MissingUnits)?;
                if cells.len() != expected {
                    return Err(ManifestError::ColumnCount {
                        line,
                        expected,
                        got: cells.len(),
                    });
                }
                let image_ref = cells[0].trim().to_string();
                let subject_id = cells[1].trim().to_string();
                if subject_id.is_empty() {
                    return Err(ManifestError::EmptySubject { line });
                }
                let pitch = unit.to_radians(parse_angle(cells[2], line, "pitch")?);
                let yaw = unit.to_radians(parse_angle(cells[3], line, "yaw")?);
                let direction = if expected == 5 {
                    let cell = cells[4].trim();
                    if cell.is_empty() {
                        None
                    } else {
                        Some(cell.parse::<DirectionClass>().map_err(|_| {
                            ManifestError::BadDirection { line, value: cell.to_string() }
                        })?)
                    }
                } else {
                    None
                };
                samples.push(FaceSample {
                    image_ref,
                    subject_id,
                    gaze: GazeAngles { pitch, yaw },
                    direction,
                });
            }
        }
    }

    if columns.is_none() {
        return Err(ManifestError::BadHeader { line: source.lines().count() + 1, value: String::new() });
    }
    // A header-only manifest still needs its units declared.
    if units.is_none() {
        return Err(ManifestError::MissingUnits);
    }
    Ok(samples)
}

fn check_field(value: &str) -> Result<(), ManifestError> {
    if value.contains(',') || value.contains('\n') || value.contains('\r') {
        return Err(ManifestError::UnrepresentableField { value: value.to_string() });
    }
    Ok(())
}

/// Render samples back to manifest text (always in radians).
///
/// The `direction` column is included whenever any sample carries one, so
/// a cached-assignment pass round-trips.
pub fn render_manifest(samples: &[FaceSample]) -> Result<String, ManifestError> {
    let with_direction = samples.iter().any(|s| s.direction.is_some());
    let mut out = String::from("# units: radians\n");
    out.push_str("image_ref,subject_id,pitch,yaw");
    if with_direction {
        out.push_str(",direction");
    }
    out.push('\n');
    for sample in samples {
        check_field(&sample.image_ref)?;
        check_field(&sample.subject_id)?;
        if sample.subject_id.is_empty() {
            return Err(ManifestError::EmptySubjectField);
        }
        out.push_str(&format!(
            "{},{},{},{}",
            sample.image_ref, sample.subject_id, sample.gaze.pitch, sample.gaze.yaw
        ));
        if with_direction {
            out.push(',');
            if let Some(class) = sample.direction {
                out.push_str(class.as_str());
            }
        }
        out.push('\n');
    }
    Ok(out)
}

/// Distinct subject ids, sorted (the canonical subject ordering all split
/// planning uses).
pub fn distinct_subjects(samples: &[FaceSample]) -> Vec<String> {
    let mut subjects: Vec<String> = samples.iter().map(|s| s.subject_id.clone()).collect();
    subjects.sort_unstable();
    subjects.dedup();
    subjects
}
