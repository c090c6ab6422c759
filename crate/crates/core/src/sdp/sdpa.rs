//! SDPA sparse format export, an independent reader for it, and a JSON
//! solution-file round trip.
//!
//! The `.dat-s` layout written here: line 1 is the constraint count `m`,
//! line 2 the number of blocks, line 3 the block dimensions (negative for
//! diagonal blocks), line 4 the right-hand sides, followed by 5-tuples
//! `matno blkno i j value` with `i ≤ j` and `matno 0` for the objective
//! matrix. Free variables are encoded as a trailing diagonal block holding
//! the difference of two nonnegative variables per free variable. Numbers
//! carry 17 significant digits, so re-reading is bit-exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{residual_norms, BlockSdp, SdpSolution, SolveStatus, FEAS_TOL, GAP_TOL};
use crate::error::{Error, Result};

/// Raw contents of a parsed `.dat-s` file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSdpaFile {
    pub num_constraints: usize,
    pub block_dims: Vec<i64>,
    pub rhs: Vec<f64>,
    /// `(matno, blkno, i, j, value)` exactly as listed, 1-based indices.
    pub entries: Vec<(usize, usize, usize, usize, f64)>,
}

/// Writes `p` in SDPA sparse format. The file encodes the dual pair
///
/// ```text
/// max F₀•Y  s.t.  F_r•Y = h_r, Y ⪰ 0
/// ```
///
/// with `Y = blockdiag(X₁..X_B, diag(p), diag(q))` and `u = p − q`, so the
/// external solver's objective equals the negated minimum of `cᵀu`.
pub fn export_sdpa(p: &BlockSdp, path: &Path) -> Result<()> {
    p.validate()?;
    let nb = p.block_dims.len();
    let has_free = p.nfree > 0;
    let mut out = String::new();
    out.push_str(&format!("\" block SDP with {} free variables\n", p.nfree));
    out.push_str(&format!("{}\n", p.num_rows()));
    out.push_str(&format!("{}\n", nb + usize::from(has_free)));
    let mut dims: Vec<String> = p.block_dims.iter().map(|d| d.to_string()).collect();
    if has_free {
        dims.push(format!("-{}", 2 * p.nfree));
    }
    out.push_str(&dims.join(" "));
    out.push('\n');
    let rhs: Vec<String> = p.rhs.iter().map(|v| format!("{v:.16e}")).collect();
    out.push_str(&rhs.join(" "));
    out.push('\n');

    let free_blk = nb + 1;
    // objective matrix F0: −c on the p-part, +c on the q-part
    for (f, &c) in p.objective.iter().enumerate() {
        if c != 0.0 {
            out.push_str(&format!("0 {} {} {} {:.16e}\n", free_blk, f + 1, f + 1, -c));
            out.push_str(&format!("0 {} {} {} {:.16e}\n", free_blk, p.nfree + f + 1, p.nfree + f + 1, c));
        }
    }
    for (r, row) in p.rows.iter().enumerate() {
        for &(b, i, j, v) in &row.entries {
            out.push_str(&format!("{} {} {} {} {:.16e}\n", r + 1, b + 1, i + 1, j + 1, v));
        }
        for &(f, v) in &row.free {
            out.push_str(&format!("{} {} {} {} {:.16e}\n", r + 1, free_blk, f + 1, f + 1, v));
            out.push_str(&format!("{} {} {} {} {:.16e}\n", r + 1, free_blk, p.nfree + f + 1, p.nfree + f + 1, -v));
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

/// Independent reader for the SDPA sparse format. Comment lines beginning
/// with `"` or `*` are allowed; the block-structure line may use `{`, `}`,
/// `(`, `)` or `,` as separators.
pub fn parse_sdpa(path: &Path) -> Result<RawSdpaFile> {
    let text = fs::read_to_string(path)?;
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('"') && !l.starts_with('*'));

    let m: usize = next_line(&mut lines, "constraint count")?
        .split_whitespace()
        .next()
        .ok_or_else(|| Error::Parse("missing constraint count".to_string()))?
        .parse()
        .map_err(|e| Error::Parse(format!("constraint count: {e}")))?;
    let nblocks: usize = next_line(&mut lines, "block count")?
        .split_whitespace()
        .next()
        .ok_or_else(|| Error::Parse("missing block count".to_string()))?
        .parse()
        .map_err(|e| Error::Parse(format!("block count: {e}")))?;
    let dims_line = next_line(&mut lines, "block dimensions")?;
    let block_dims: Vec<i64> = dims_line
        .replace(['{', '}', '(', ')', ','], " ")
        .split_whitespace()
        .map(|t| t.parse::<i64>().map_err(|e| Error::Parse(format!("block dim `{t}`: {e}"))))
        .collect::<Result<_>>()?;
    if block_dims.len() != nblocks {
        return Err(Error::Parse(format!(
            "{} block dimensions for {} blocks",
            block_dims.len(),
            nblocks
        )));
    }
    let rhs_line = next_line(&mut lines, "right-hand sides")?;
    let rhs: Vec<f64> = rhs_line
        .replace(['{', '}', '(', ')', ','], " ")
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(format!("rhs `{t}`: {e}"))))
        .collect::<Result<_>>()?;
    if rhs.len() != m {
        return Err(Error::Parse(format!("{} rhs values for {} constraints", rhs.len(), m)));
    }
    let mut entries = Vec::new();
    for line in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 5 {
            return Err(Error::Parse(format!("expected 5-tuple, found `{line}`")));
        }
        let matno: usize = toks[0].parse().map_err(|e| Error::Parse(format!("matno: {e}")))?;
        let blkno: usize = toks[1].parse().map_err(|e| Error::Parse(format!("blkno: {e}")))?;
        let i: usize = toks[2].parse().map_err(|e| Error::Parse(format!("row index: {e}")))?;
        let j: usize = toks[3].parse().map_err(|e| Error::Parse(format!("col index: {e}")))?;
        let v: f64 = toks[4].parse().map_err(|e| Error::Parse(format!("value: {e}")))?;
        if matno > m || blkno == 0 || blkno > nblocks || i == 0 || j == 0 || i > j {
            return Err(Error::Parse(format!("entry out of range: `{line}`")));
        }
        entries.push((matno, blkno, i, j, v));
    }
    Ok(RawSdpaFile { num_constraints: m, block_dims, rhs, entries })
}

fn next_line<'a>(lines: &mut impl Iterator<Item = &'a str>, what: &str) -> Result<&'a str> {
    lines
        .next()
        .ok_or_else(|| Error::Parse(format!("unexpected end of file before {what}")))
}

/// Solution file contents: the dual multipliers plus the primal blocks and
/// free-variable values of the minimization form.
#[derive(Debug, Serialize, Deserialize)]
pub struct SolutionFile {
    pub objective: f64,
    pub dual: Vec<f64>,
    /// Row-major dense symmetric blocks, one per PSD block of the problem.
    pub blocks: Vec<Vec<f64>>,
    pub free: Vec<f64>,
}

/// Writes a solution so it can be re-imported with [`import_solution`].
pub fn write_solution(sol: &SdpSolution, path: &Path) -> Result<()> {
    let file = SolutionFile {
        objective: sol.primal_obj,
        dual: sol.dual.clone(),
        blocks: sol
            .blocks
            .iter()
            .map(|b| b.transpose().as_slice().to_vec())
            .collect(),
        free: sol.free.clone(),
    };
    let json = serde_json::to_string_pretty(&file)?;
    fs::write(path, json)?;
    Ok(())
}

/// Reads a solution file and maps it back onto the problem's blocks and
/// free variables. Shapes are checked against `p`; the returned status is
/// re-derived from the imported point (never trusted from the file).
pub fn import_solution(path: &Path, p: &BlockSdp) -> Result<SdpSolution> {
    let text = fs::read_to_string(path)?;
    let file: SolutionFile = serde_json::from_str(&text)?;
    if file.blocks.len() != p.block_dims.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} blocks in file, problem has {}",
            file.blocks.len(),
            p.block_dims.len()
        )));
    }
    if file.free.len() != p.nfree {
        return Err(Error::ShapeMismatch(format!(
            "{} free values in file, problem has {}",
            file.free.len(),
            p.nfree
        )));
    }
    if file.dual.len() != p.num_rows() {
        return Err(Error::ShapeMismatch(format!(
            "{} dual values in file, problem has {} rows",
            file.dual.len(),
            p.num_rows()
        )));
    }
    let mut blocks = Vec::with_capacity(file.blocks.len());
    for (vals, &dim) in file.blocks.iter().zip(&p.block_dims) {
        if vals.len() != dim * dim {
            return Err(Error::ShapeMismatch(format!(
                "block of {} values for dimension {}",
                vals.len(),
                dim
            )));
        }
        blocks.push(DMatrix::from_row_slice(dim, dim, vals));
    }
    let primal_obj: f64 = p.objective.iter().zip(&file.free).map(|(c, u)| c * u).sum();
    let dual_obj: f64 = p.rhs.iter().zip(&file.dual).map(|(h, y)| h * y).sum();
    let mut sol = SdpSolution {
        status: SolveStatus::NearOptimal,
        primal_obj,
        dual_obj,
        blocks,
        free: file.free,
        dual: file.dual,
        iterations: Vec::new(),
    };
    let (pinf, dinf) = residual_norms(p, &sol);
    if sol.gap() <= GAP_TOL && pinf <= FEAS_TOL && dinf <= 10.0 * FEAS_TOL {
        sol.status = SolveStatus::Optimal;
    }
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdp::{solve, SdpRow, SolveOptions};

    fn toy() -> BlockSdp {
        BlockSdp {
            block_dims: vec![2],
            rows: vec![
                SdpRow { entries: vec![(0, 0, 0, 1.0)], free: vec![(0, -1.0)] },
                SdpRow { entries: vec![(0, 1, 1, 1.0)], free: vec![(0, -1.0)] },
                SdpRow { entries: vec![(0, 0, 1, 0.5)], free: vec![] },
            ],
            rhs: vec![0.0, 0.0, 1.0],
            nfree: 1,
            objective: vec![1.0],
            row_labels: vec!["a".into(), "b".into(), "c".into()],
            block_labels: vec!["main".into()],
            free_labels: vec!["y".into()],
        }
    }

    #[test]
    fn export_reimport_bit_exact() {
        let p = toy();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.dat-s");
        export_sdpa(&p, &path).unwrap();
        let raw = parse_sdpa(&path).unwrap();
        assert_eq!(raw.num_constraints, 3);
        assert_eq!(raw.block_dims, vec![2, -2]);
        assert_eq!(raw.rhs, p.rhs);
        // objective (2 lines) + rows: each free coefficient splits into a
        // ± pair, so rows contribute 3 + 3 + 1 lines
        let expected_entries = 2 + 3 + 3 + 1;
        assert_eq!(raw.entries.len(), expected_entries);
        // write again from the parsed data and compare byte-for-byte
        let text1 = std::fs::read_to_string(&path).unwrap();
        export_sdpa(&p, &path).unwrap();
        let text2 = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text1, text2);
    }

    #[test]
    fn no_trailing_block_without_free_vars() {
        let p = BlockSdp {
            block_dims: vec![1],
            rows: vec![SdpRow { entries: vec![(0, 0, 0, 1.0)], free: vec![] }],
            rhs: vec![1.0],
            nfree: 0,
            objective: vec![],
            row_labels: vec!["r".into()],
            block_labels: vec!["main".into()],
            free_labels: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nofree.dat-s");
        export_sdpa(&p, &path).unwrap();
        let raw = parse_sdpa(&path).unwrap();
        assert_eq!(raw.block_dims, vec![1]);
    }

    #[test]
    fn solution_round_trip_preserves_objective() {
        let p = toy();
        let sol = solve(&p, &SolveOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.sol.json");
        write_solution(&sol, &path).unwrap();
        let back = import_solution(&path, &p).unwrap();
        assert!((back.primal_obj - sol.primal_obj).abs() < 1e-9);
        assert_eq!(back.status, SolveStatus::Optimal);
    }

    #[test]
    fn truncated_solution_rejected() {
        let p = toy();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.json");
        std::fs::write(&path, "{\"objective\": 1.0, \"dual\": [0.0").unwrap();
        assert!(import_solution(&path, &p).is_err());
    }

    #[test]
    fn mismatched_solution_rejected() {
        let p = toy();
        let sol = solve(&p, &SolveOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.sol.json");
        write_solution(&sol, &path).unwrap();
        let mut other = p.clone();
        other.block_dims = vec![3];
        assert!(import_solution(&path, &other).is_err());
    }

    #[test]
    fn comments_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("commented.dat-s");
        std::fs::write(
            &path,
            "* header comment\n\" another\n1\n1\n2\n1.5\n1 1 1 2 3.25\n",
        )
        .unwrap();
        let raw = parse_sdpa(&path).unwrap();
        assert_eq!(raw.num_constraints, 1);
        assert_eq!(raw.entries, vec![(1, 1, 1, 2, 3.25)]);
    }
}
