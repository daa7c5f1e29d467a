//! MATPOWER case files and the validated per-unit network model.
//!
//! Only the `baseMVA`, `bus`, `gen` and `branch` tables are read. Other
//! tables (`gencost`, `areas`, ...) and cell arrays (`bus_name`) are skipped.
//! Quantities are converted to per unit on `baseMVA` and angles to radians.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BusKind {
    Slack,
    PV,
    PQ,
}

/// How a bus load draws current from the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum LoadModel {
    /// `S = p_load + j q_load` regardless of voltage (MATPOWER default).
    #[default]
    ConstantPower,
    /// Fixed current phasor `p_load - j q_load`, i.e. the constant-power
    /// current at `1∠0`. Linear in the bus voltage.
    ConstantCurrent,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bus {
    pub id: u32,
    pub kind: BusKind,
    pub p_load: f64,
    pub q_load: f64,
    pub g_shunt: f64,
    pub b_shunt: f64,
    pub v_init: f64,
    pub theta_init: f64,
    pub load_model: LoadModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BranchStatus {
    Closed,
    Open,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Branch {
    /// Zero-based position in the branch table.
    pub index: usize,
    pub from_bus: u32,
    pub to_bus: u32,
    pub r: f64,
    pub x: f64,
    /// Total line charging susceptance.
    pub b_charging: f64,
    /// Off-nominal turns ratio on the from side, 1.0 for lines.
    pub tap: f64,
    /// Phase shift in radians.
    pub shift: f64,
    pub status: BranchStatus,
}

impl Branch {
    pub fn is_closed(&self) -> bool {
        self.status == BranchStatus::Closed
    }
}

/// An in-service generator. Out-of-service rows are dropped at parse time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Generator {
    pub bus: u32,
    pub p_set: f64,
    pub v_set: f64,
    pub q_min: f64,
    pub q_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCase {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    #[serde(skip)]
    index: HashMap<u32, usize>,
}

impl GridCase {
    /// Builds and validates a case. Branch `index` fields are renumbered to
    /// table positions.
    pub fn new(
        name: impl Into<String>,
        base_mva: f64,
        buses: Vec<Bus>,
        mut branches: Vec<Branch>,
        generators: Vec<Generator>,
    ) -> Result<Self> {
        for (k, br) in branches.iter_mut().enumerate() {
            br.index = k;
        }
        let mut index = HashMap::with_capacity(buses.len());
        for (k, bus) in buses.iter().enumerate() {
            if index.insert(bus.id, k).is_some() {
                return Err(Error::InvalidCase(format!("duplicate bus id {}", bus.id)));
            }
        }
        let case = GridCase {
            name: name.into(),
            base_mva,
            buses,
            branches,
            generators,
            index,
        };
        case.validate()?;
        Ok(case)
    }

    fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::InvalidCase(msg));
        if !(self.base_mva > 0.0) {
            return invalid(format!("baseMVA must be positive, got {}", self.base_mva));
        }
        if self.buses.is_empty() {
            return invalid("case has no buses".into());
        }
        let slacks = self.buses.iter().filter(|b| b.kind == BusKind::Slack).count();
        if slacks != 1 {
            return invalid(format!("expected exactly one slack bus, found {slacks}"));
        }
        for bus in &self.buses {
            if !(bus.v_init > 0.0) {
                return invalid(format!("bus {} has non-positive initial voltage", bus.id));
            }
        }
        for br in &self.branches {
            for end in [br.from_bus, br.to_bus] {
                if !self.index.contains_key(&end) {
                    return invalid(format!(
                        "branch {} references missing bus {}",
                        br.index, end
                    ));
                }
            }
            if br.from_bus == br.to_bus {
                return invalid(format!("branch {} is a self loop", br.index));
            }
            if !(br.tap > 0.0) {
                return invalid(format!("branch {} has non-positive tap", br.index));
            }
            if br.is_closed() && br.r * br.r + br.x * br.x == 0.0 {
                return invalid(format!("branch {} has zero impedance", br.index));
            }
        }
        for g in &self.generators {
            if !self.index.contains_key(&g.bus) {
                return invalid(format!("generator references missing bus {}", g.bus));
            }
            if g.q_min > g.q_max {
                return invalid(format!("generator at bus {} has q_min > q_max", g.bus));
            }
            if !(g.v_set > 0.0) {
                return invalid(format!("generator at bus {} has non-positive v_set", g.bus));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.buses.len()
    }

    pub fn bus_index(&self, id: u32) -> Option<usize> {
        self.index.get(&id).copied()
    }

    /// Position of a bus id that validation has already checked.
    pub(crate) fn idx(&self, id: u32) -> usize {
        self.index[&id]
    }

    /// Zero-based bus positions of a branch's (from, to) terminals.
    pub fn terminals(&self, branch: usize) -> (usize, usize) {
        let br = &self.branches[branch];
        (self.idx(br.from_bus), self.idx(br.to_bus))
    }

    pub fn slack_index(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.kind == BusKind::Slack)
            .expect("validated case has a slack bus")
    }

    pub fn branch(&self, index: usize) -> Result<&Branch> {
        self.branches.get(index).ok_or(Error::NoSuchBranch(index))
    }

    pub fn closed_branch(&self, index: usize) -> Result<&Branch> {
        let br = self.branch(index)?;
        if br.is_closed() {
            Ok(br)
        } else {
            Err(Error::BranchOpen(index))
        }
    }

    /// Copy of the case with one branch switched open.
    pub fn with_branch_open(&self, index: usize) -> Result<GridCase> {
        self.branch(index)?;
        let mut out = self.clone();
        out.branches[index].status = BranchStatus::Open;
        Ok(out)
    }

    /// Copy of the case with every load (and generator dispatch) scaled.
    pub fn scaled(&self, factor: f64) -> GridCase {
        let mut out = self.clone();
        for bus in &mut out.buses {
            bus.p_load *= factor;
            bus.q_load *= factor;
        }
        for g in &mut out.generators {
            g.p_set *= factor;
        }
        out
    }

    pub fn set_load_model(&mut self, model: LoadModel) {
        for bus in &mut self.buses {
            bus.load_model = model;
        }
    }

    /// Serializes back to a MATPOWER case. Values are chosen so that parsing
    /// the output reproduces this case exactly.
    pub fn to_matpower(&self) -> String {
        let base = self.base_mva;
        let mw = |pu: f64| unscale(pu, |x| x / base, pu * base);
        let deg = |rad: f64| unscale(rad, f64::to_radians, rad.to_degrees());
        let mut s = String::new();
        let _ = writeln!(s, "function mpc = {}", self.name);
        let _ = writeln!(s, "mpc.version = '2';");
        let _ = writeln!(s, "mpc.baseMVA = {};", base);
        let _ = writeln!(s, "\n%% bus data");
        let _ = writeln!(s, "mpc.bus = [");
        for b in &self.buses {
            let kind = match b.kind {
                BusKind::PQ => 1,
                BusKind::PV => 2,
                BusKind::Slack => 3,
            };
            let _ = writeln!(
                s,
                "\t{}\t{}\t{}\t{}\t{}\t{}\t1\t{}\t{}\t0\t1\t1.1\t0.9;",
                b.id,
                kind,
                mw(b.p_load),
                mw(b.q_load),
                mw(b.g_shunt),
                mw(b.b_shunt),
                b.v_init,
                deg(b.theta_init)
            );
        }
        let _ = writeln!(s, "];\n\n%% generator data");
        let _ = writeln!(s, "mpc.gen = [");
        for g in &self.generators {
            let _ = writeln!(
                s,
                "\t{}\t{}\t0\t{}\t{}\t{}\t{}\t1\t0\t0;",
                g.bus,
                mw(g.p_set),
                mw(g.q_max),
                mw(g.q_min),
                g.v_set,
                base
            );
        }
        let _ = writeln!(s, "];\n\n%% branch data");
        let _ = writeln!(s, "mpc.branch = [");
        for br in &self.branches {
            let status = if br.is_closed() { 1 } else { 0 };
            let _ = writeln!(
                s,
                "\t{}\t{}\t{}\t{}\t{}\t0\t0\t0\t{}\t{}\t{}\t-360\t360;",
                br.from_bus,
                br.to_bus,
                br.r,
                br.x,
                br.b_charging,
                br.tap,
                deg(br.shift),
                status
            );
        }
        let _ = writeln!(s, "];");
        s
    }
}

/// Finds `x` near `guess` with `forward(x) == target`, so that a unit
/// conversion written out and read back is bit-exact.
fn unscale(target: f64, forward: impl Fn(f64) -> f64, guess: f64) -> f64 {
    if !guess.is_finite() || forward(guess) == target {
        return guess;
    }
    let (mut up, mut down) = (guess, guess);
    for _ in 0..64 {
        up = up.next_up();
        down = down.next_down();
        if forward(up) == target {
            return up;
        }
        if forward(down) == target {
            return down;
        }
    }
    guess
}

pub fn read_case(path: impl AsRef<Path>) -> Result<GridCase> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut case = parse_case(&text)?;
    if case.name == "case" {
        if let Some(stem) = path.file_stem() {
            case.name = stem.to_string_lossy().into_owned();
        }
    }
    Ok(case)
}

struct Table {
    /// (line number, values) per row.
    rows: Vec<(usize, Vec<f64>)>,
}

enum State {
    Top,
    Table { name: String, start: usize, table: Table, row: Vec<f64>, row_line: usize },
    Cell { start: usize },
}

fn syntax(line: usize, message: impl Into<String>) -> Error {
    Error::Syntax { line, message: message.into() }
}

fn strip_comment(line: &str) -> &str {
    let mut in_quote = false;
    for (k, c) in line.char_indices() {
        match c {
            '\'' => in_quote = !in_quote,
            '%' if !in_quote => return &line[..k],
            _ => {}
        }
    }
    line
}

fn parse_number(tok: &str, line: usize) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| syntax(line, format!("invalid number '{tok}'")))
}

/// Parses MATPOWER case text into a validated [`GridCase`].
pub fn parse_case(text: &str) -> Result<GridCase> {
    let mut name = String::from("case");
    let mut base_mva: Option<f64> = None;
    let mut tables: HashMap<String, Table> = HashMap::new();
    let mut state = State::Top;

    for (k, raw) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = strip_comment(raw).trim();
        state = match state {
            State::Cell { start } => {
                if line.contains('}') {
                    State::Top
                } else {
                    State::Cell { start }
                }
            }
            State::Table { name: tname, start, mut table, mut row, mut row_line } => {
                let (body, closed) = match line.find(']') {
                    Some(pos) => {
                        let rest = line[pos + 1..].trim().trim_end_matches(';').trim();
                        if !rest.is_empty() {
                            return Err(syntax(line_no, format!("unexpected '{rest}' after ']'")));
                        }
                        (&line[..pos], true)
                    }
                    None => (line, false),
                };
                accumulate_rows(body, line_no, &mut table, &mut row, &mut row_line)?;
                if !row.is_empty() {
                    table.rows.push((row_line, std::mem::take(&mut row)));
                }
                if closed {
                    tables.insert(tname, table);
                    State::Top
                } else {
                    State::Table { name: tname, start, table, row, row_line }
                }
            }
            State::Top => {
                if line.is_empty() {
                    State::Top
                } else if let Some(rest) = line.strip_prefix("function") {
                    if let Some((_, fname)) = rest.split_once('=') {
                        let fname = fname.trim().trim_end_matches(';').trim();
                        if !fname.is_empty() {
                            name = fname.to_string();
                        }
                    }
                    State::Top
                } else if matches!(line.trim_end_matches(';'), "end" | "return") {
                    State::Top
                } else if let Some(rest) = line.strip_prefix("mpc.") {
                    let (field, value) = rest
                        .split_once('=')
                        .ok_or_else(|| syntax(line_no, "expected 'mpc.<field> = <value>'"))?;
                    let field = field.trim();
                    if field.is_empty() || !field.chars().all(|c| c.is_alphanumeric() || c == '_') {
                        return Err(syntax(line_no, format!("unsupported assignment target 'mpc.{field}'")));
                    }
                    let value = value.trim();
                    if let Some(body) = value.strip_prefix('[') {
                        let mut table = Table { rows: Vec::new() };
                        let mut row = Vec::new();
                        let mut row_line = line_no;
                        match body.find(']') {
                            Some(pos) => {
                                accumulate_rows(&body[..pos], line_no, &mut table, &mut row, &mut row_line)?;
                                if !row.is_empty() {
                                    table.rows.push((row_line, row));
                                }
                                tables.insert(field.to_string(), table);
                                State::Top
                            }
                            None => {
                                accumulate_rows(body, line_no, &mut table, &mut row, &mut row_line)?;
                                if !row.is_empty() {
                                    table.rows.push((row_line, std::mem::take(&mut row)));
                                }
                                State::Table { name: field.to_string(), start: line_no, table, row, row_line }
                            }
                        }
                    } else if value.starts_with('{') {
                        if value.contains('}') {
                            State::Top
                        } else {
                            State::Cell { start: line_no }
                        }
                    } else {
                        let scalar = value.trim_end_matches(';').trim();
                        if field == "baseMVA" {
                            base_mva = Some(parse_number(scalar, line_no)?);
                        } else if !(scalar.starts_with('\'') && scalar.ends_with('\'')) {
                            // other numeric scalars are accepted and ignored
                            parse_number(scalar, line_no)?;
                        }
                        State::Top
                    }
                } else {
                    return Err(syntax(line_no, format!("unrecognized statement '{line}'")));
                }
            }
        };
    }
    match state {
        State::Table { name, start, .. } => {
            return Err(syntax(start, format!("table mpc.{name} is not terminated")));
        }
        State::Cell { start } => {
            return Err(syntax(start, "cell array is not terminated"));
        }
        State::Top => {}
    }

    let base_mva = base_mva.ok_or_else(|| Error::InvalidCase("missing mpc.baseMVA".into()))?;
    let take = |tables: &mut HashMap<String, Table>, t: &str| {
        tables
            .remove(t)
            .ok_or_else(|| Error::InvalidCase(format!("missing mpc.{t} table")))
    };
    let bus_rows = take(&mut tables, "bus")?;
    let gen_rows = take(&mut tables, "gen")?;
    let branch_rows = take(&mut tables, "branch")?;

    let mut buses = Vec::with_capacity(bus_rows.rows.len());
    for (line, r) in &bus_rows.rows {
        require_cols(r, 9, *line, "bus")?;
        let kind = match r[1] as i64 {
            1 => BusKind::PQ,
            2 => BusKind::PV,
            3 => BusKind::Slack,
            other => {
                return Err(syntax(*line, format!("unsupported bus type {other}")));
            }
        };
        buses.push(Bus {
            id: integer_id(r[0], *line)?,
            kind,
            p_load: r[2] / base_mva,
            q_load: r[3] / base_mva,
            g_shunt: r[4] / base_mva,
            b_shunt: r[5] / base_mva,
            v_init: r[7],
            theta_init: r[8].to_radians(),
            load_model: LoadModel::ConstantPower,
        });
    }

    let mut generators = Vec::with_capacity(gen_rows.rows.len());
    for (line, r) in &gen_rows.rows {
        require_cols(r, 8, *line, "gen")?;
        if r[7] <= 0.0 {
            continue;
        }
        generators.push(Generator {
            bus: integer_id(r[0], *line)?,
            p_set: r[1] / base_mva,
            v_set: r[5],
            q_min: r[4] / base_mva,
            q_max: r[3] / base_mva,
        });
    }

    let mut branches = Vec::with_capacity(branch_rows.rows.len());
    for (k, (line, r)) in branch_rows.rows.iter().enumerate() {
        require_cols(r, 11, *line, "branch")?;
        branches.push(Branch {
            index: k,
            from_bus: integer_id(r[0], *line)?,
            to_bus: integer_id(r[1], *line)?,
            r: r[2],
            x: r[3],
            b_charging: r[4],
            tap: if r[8] == 0.0 { 1.0 } else { r[8] },
            shift: r[9].to_radians(),
            status: if r[10] > 0.0 { BranchStatus::Closed } else { BranchStatus::Open },
        });
    }

    GridCase::new(name, base_mva, buses, branches, generators)
}

fn accumulate_rows(
    body: &str,
    line_no: usize,
    table: &mut Table,
    row: &mut Vec<f64>,
    row_line: &mut usize,
) -> Result<()> {
    let mut segments = body.split(';').peekable();
    while let Some(seg) = segments.next() {
        for tok in seg.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()) {
            if row.is_empty() {
                *row_line = line_no;
            }
            row.push(parse_number(tok, line_no)?);
        }
        if segments.peek().is_some() && !row.is_empty() {
            table.rows.push((*row_line, std::mem::take(row)));
        }
    }
    Ok(())
}

fn require_cols(row: &[f64], n: usize, line: usize, table: &str) -> Result<()> {
    if row.len() < n {
        Err(syntax(
            line,
            format!("{table} row has {} columns, expected at least {n}", row.len()),
        ))
    } else {
        Ok(())
    }
}

fn integer_id(v: f64, line: usize) -> Result<u32> {
    if v.fract() == 0.0 && v >= 0.0 && v <= u32::MAX as f64 {
        Ok(v as u32)
    } else {
        Err(syntax(line, format!("invalid bus id {v}")))
    }
}
