//! Shader IL assembly: opcode histograms and static complexity.
//!
//! The format is one instruction per line, `<opcode> [operand[, operand...]]`.
//! A `;` starts a comment running to the end of the line, opcodes prefixed
//! with `dcl_` are declarations, and a bare shader-model token such as
//! `vs_5_0` is a header. Neither declarations nor headers are executable.
//!
//! Counting is static: every textual occurrence of an opcode counts once,
//! whatever loop or branch it sits in.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Stage};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShaderProgram {
    pub id: String,
    /// Opcode name to static occurrence count. Every present key has a count
    /// of at least one.
    pub histogram: BTreeMap<String, u64>,
    pub total_ops: u64,
}

impl ShaderProgram {
    pub fn from_histogram(id: impl Into<String>, histogram: BTreeMap<String, u64>) -> Self {
        let histogram: BTreeMap<String, u64> =
            histogram.into_iter().filter(|(_, n)| *n > 0).collect();
        let total_ops = histogram.values().sum();
        ShaderProgram {
            id: id.into(),
            histogram,
            total_ops,
        }
    }

    /// Histogram of the concatenation of two programs.
    pub fn merged(&self, other: &ShaderProgram) -> ShaderProgram {
        let mut histogram = self.histogram.clone();
        for (op, n) in &other.histogram {
            *histogram.entry(op.clone()).or_insert(0) += n;
        }
        ShaderProgram::from_histogram(self.id.clone(), histogram)
    }

    pub fn is_empty(&self) -> bool {
        self.total_ops == 0
    }
}

/// Opcodes that read textures; they may only be priced for the pixel shader.
pub fn is_sampling_opcode(opcode: &str) -> bool {
    opcode.starts_with("sample") || opcode.starts_with("gather") || opcode == "lod"
}

fn is_header(token: &str) -> bool {
    let mut parts = token.split('_');
    let (Some(kind), Some(major), Some(minor), None) =
        (parts.next(), parts.next(), parts.next(), parts.next())
    else {
        return false;
    };
    matches!(kind, "vs" | "hs" | "ds" | "gs" | "ps" | "cs")
        && !major.is_empty()
        && major.bytes().all(|b| b.is_ascii_digit())
        && !minor.is_empty()
        && minor.bytes().all(|b| b.is_ascii_digit())
}

fn valid_opcode(token: &str) -> bool {
    let mut bytes = token.bytes();
    matches!(bytes.next(), Some(b) if b.is_ascii_alphabetic())
        && bytes.all(|b| b.is_ascii_alphanumeric() || b == b'_')
}

/// Returns the executable opcode on a line, `None` for blank, comment,
/// declaration and header lines.
fn scan_line(line_no: usize, raw: &str) -> Result<Option<String>> {
    let code = raw.split(';').next().unwrap_or("").trim();
    if code.is_empty() {
        return Ok(None);
    }
    let (opcode, operands) = match code.find(char::is_whitespace) {
        Some(at) => (&code[..at], code[at..].trim()),
        None => (code, ""),
    };
    if !valid_opcode(opcode) {
        return Err(Error::IlSyntax {
            line: line_no,
            msg: format!("malformed opcode `{opcode}`"),
        });
    }
    let opcode = opcode.to_ascii_lowercase();
    if opcode.starts_with("dcl_") {
        return Ok(None);
    }
    if operands.is_empty() && is_header(&opcode) {
        return Ok(None);
    }
    if !operands.is_empty() && operands.split(',').any(|o| o.trim().is_empty()) {
        return Err(Error::IlSyntax {
            line: line_no,
            msg: "empty operand".to_string(),
        });
    }
    Ok(Some(opcode))
}

/// Parses IL text into an opcode histogram. The opcode vocabulary is open;
/// unknown opcodes are only rejected when the program is costed.
pub fn parse_program(id: &str, text: &str) -> Result<ShaderProgram> {
    let mut histogram = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if let Some(op) = scan_line(i + 1, line)? {
            *histogram.entry(op).or_insert(0u64) += 1;
        }
    }
    Ok(ShaderProgram::from_histogram(id, histogram))
}

/// Like [`parse_program`], but rejects opcodes the predicate does not know,
/// reporting the offending line.
pub fn parse_program_checked(
    id: &str,
    text: &str,
    known: impl Fn(&str) -> bool,
) -> Result<ShaderProgram> {
    let mut histogram = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if let Some(op) = scan_line(i + 1, line)? {
            if !known(&op) {
                return Err(Error::UnknownOpcode {
                    line: i + 1,
                    opcode: op,
                });
            }
            *histogram.entry(op).or_insert(0u64) += 1;
        }
    }
    Ok(ShaderProgram::from_histogram(id, histogram))
}

/// Per-opcode execution cost for one programmable stage, in ms per single
/// execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpcodeCostTable {
    pub stage: Stage,
    pub costs: BTreeMap<String, f64>,
}

impl OpcodeCostTable {
    pub fn new(stage: Stage, costs: BTreeMap<String, f64>) -> Result<Self> {
        let table = OpcodeCostTable { stage, costs };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        for (op, &cost) in &self.costs {
            if !(cost.is_finite() && cost > 0.0) {
                return Err(Error::InvalidPerfModel(format!(
                    "{} opcode `{op}` has non-positive cost {cost}",
                    self.stage
                )));
            }
            if is_sampling_opcode(op) && self.stage != Stage::Ps {
                return Err(Error::InvalidPerfModel(format!(
                    "sampling opcode `{op}` is only valid in the ps table, found in {}",
                    self.stage
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, opcode: &str) -> Option<f64> {
        self.costs.get(opcode).copied()
    }
}

/// Static complexity of a program: the sum over opcodes of cost times
/// occurrence count.
pub fn complexity(program: &ShaderProgram, costs: &OpcodeCostTable) -> Result<f64> {
    program
        .histogram
        .iter()
        .try_fold(0.0, |acc, (op, &count)| match costs.get(op) {
            Some(c) => Ok(acc + c * count as f64),
            None => Err(Error::MissingOpcodeCost {
                opcode: op.clone(),
                stage: costs.stage,
            }),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(stage: Stage, entries: &[(&str, f64)]) -> OpcodeCostTable {
        OpcodeCostTable::new(
            stage,
            entries.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn counts_repeated_opcode() {
        let p = parse_program("a", "add r0, r1, r2\nadd r0, r0, r3").unwrap();
        assert_eq!(p.histogram, BTreeMap::from([("add".to_string(), 2)]));
        assert_eq!(p.total_ops, 2);
    }

    #[test]
    fn skips_comments_declarations_and_headers() {
        let src = "; comment\ndcl_input v0\nmul r0, r1, r2";
        let p = parse_program("a", src).unwrap();
        assert_eq!(p.histogram, BTreeMap::from([("mul".to_string(), 1)]));

        let p = parse_program("b", "ps_5_0\n\n   \nmov o0, v0 ; trailing\nret").unwrap();
        assert_eq!(p.total_ops, 2);
        assert_eq!(p.histogram["ret"], 1);
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        match parse_program("a", "add r0, r1\n3add r0").unwrap_err() {
            Error::IlSyntax { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
        match parse_program("a", "mov r0\nmul r0,, r1").unwrap_err() {
            Error::IlSyntax { line, msg } => {
                assert_eq!(line, 2);
                assert!(msg.contains("operand"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn checked_parse_rejects_unknown_opcodes() {
        let err = parse_program_checked("a", "add r0, r1\nfoo r1", |op| op == "add").unwrap_err();
        assert!(matches!(err, Error::UnknownOpcode { line: 2, ref opcode } if opcode == "foo"));
    }

    #[test]
    fn loops_count_statically() {
        let src = "loop\n  add r0, r0, l(1)\n  breakc_nz r1\nendloop\nadd r2, r0, r0";
        let p = parse_program("l", src).unwrap();
        assert_eq!(p.histogram["add"], 2);
        assert_eq!(p.histogram["loop"], 1);
        assert_eq!(p.histogram["endloop"], 1);
        assert_eq!(p.total_ops, 5);
    }

    #[test]
    fn complexity_single_term_and_empty() {
        let t = table(Stage::Vs, &[("add", 0.5)]);
        let p = parse_program("a", "add r0, r1, r2\nadd r0, r0, r3").unwrap();
        assert_eq!(complexity(&p, &t).unwrap(), 1.0);
        let empty = parse_program("e", "; nothing").unwrap();
        assert_eq!(complexity(&empty, &t).unwrap(), 0.0);
    }

    #[test]
    fn complexity_names_missing_opcode() {
        let t = table(Stage::Gs, &[("add", 0.5)]);
        let p = parse_program("a", "mul r0, r1, r2").unwrap();
        match complexity(&p, &t).unwrap_err() {
            Error::MissingOpcodeCost { opcode, stage } => {
                assert_eq!(opcode, "mul");
                assert_eq!(stage, Stage::Gs);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn sampling_only_in_pixel_tables() {
        let costs: BTreeMap<String, f64> = [("sample".to_string(), 1.0)].into();
        assert!(OpcodeCostTable::new(Stage::Vs, costs.clone()).is_err());
        assert!(OpcodeCostTable::new(Stage::Ps, costs).is_ok());
        let zero: BTreeMap<String, f64> = [("add".to_string(), 0.0)].into();
        assert!(OpcodeCostTable::new(Stage::Ps, zero).is_err());
    }

    #[test]
    fn header_detection() {
        assert!(is_header("vs_5_0"));
        assert!(is_header("cs_4_1"));
        assert!(!is_header("vs_5"));
        assert!(!is_header("add"));
        assert!(!is_header("xs_5_0"));
    }
}
