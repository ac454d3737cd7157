//! Bit-level model of the MTJ computation-array grid.
//!
//! Each array is 512x512 cells stored column-major, so a row-parallel gate
//! (one output column computed in every active row) is a handful of word
//! operations. The two highest rows and columns of every array hold the two
//! copies of the column and row activation bitmasks; the non-volatile parity
//! bits `rp`/`cp` select the valid copy.
//!
//! Addressing:
//! * row logic: addresses are global columns `0..1536`; the output column
//!   must lie in the issuing driver's array-column and each input in the
//!   same or a horizontally adjacent one.
//! * column logic: addresses are local rows; inputs may carry a flag
//!   selecting the same row of the array below ([`NEIGHBOR_DOWN`]) or above
//!   ([`NEIGHBOR_UP`]).

use std::fmt;

use rand::Rng;
use thiserror::Error;

pub const ARRAY_DIM: usize = 512;
const WORDS: usize = ARRAY_DIM / 64;
/// First local index reserved for bitmask storage.
pub const MASK_BASE: usize = 510;
pub const USABLE_LINES: usize = MASK_BASE;
pub const GRID_ROWS: usize = 16;
pub const GRID_COLS: usize = 3;
pub const GLOBAL_COLS: usize = ARRAY_DIM * GRID_COLS;

pub const ADDR_NONE: u16 = 0xFFF;
/// PRESET `a` value selecting every cell of the addressed line.
pub const PRESET_WHOLE_LINE: u16 = 0xFFE;
pub const NEIGHBOR_DOWN: u16 = 0x200;
pub const NEIGHBOR_UP: u16 = 0x400;
const LOCAL_MASK: u16 = 0x1FF;

/// Bit writes charged per commit: on average two PC bits toggle on an
/// increment, plus the parity flip.
pub const BACKUP_BITS_PER_COMMIT: f64 = 3.0;

const SNAPSHOT_MAGIC: &[u8; 4] = b"PIMG";
const SNAPSHOT_VERSION: u16 = 1;

type Line = [u64; WORDS];

const fn data_lines_mask() -> Line {
    let mut m = [u64::MAX; WORDS];
    m[WORDS - 1] &= !(0b11u64 << (MASK_BASE % 64));
    m
}
const DATA_LINES: Line = data_lines_mask();

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PimError {
    #[error("invalid instruction {instr}: {reason}")]
    Invalid { instr: String, reason: String },
    #[error("write to the valid copy of a bitmask in array ({row},{col})")]
    ValidMaskWrite { row: usize, col: usize },
    #[error("array-column {0} has no sense amplifiers")]
    NoSenseAmps(usize),
    #[error("conflicting instructions in one cycle: {0}")]
    Conflict(String),
    #[error("bad encoding: {0}")]
    Encoding(String),
    #[error("snapshot: {0}")]
    Snapshot(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Opcode {
    Not = 0,
    And = 1,
    Nand = 2,
    Or = 3,
    Nor = 4,
    Preset0 = 5,
    Preset1 = 6,
    Activate = 7,
}

impl Opcode {
    pub const GATES: [Opcode; 5] = [
        Opcode::Not,
        Opcode::And,
        Opcode::Nand,
        Opcode::Or,
        Opcode::Nor,
    ];

    pub fn from_bits(b: u8) -> Self {
        match b & 7 {
            0 => Opcode::Not,
            1 => Opcode::And,
            2 => Opcode::Nand,
            3 => Opcode::Or,
            4 => Opcode::Nor,
            5 => Opcode::Preset0,
            6 => Opcode::Preset1,
            _ => Opcode::Activate,
        }
    }

    pub fn is_gate(self) -> bool {
        (self as u8) < 5
    }

    pub fn fanin(self) -> usize {
        match self {
            Opcode::Not => 1,
            o if o.is_gate() => 2,
            _ => 0,
        }
    }

    /// Value the output cell is preset to before conditional switching.
    pub fn preset_value(self) -> bool {
        matches!(self, Opcode::And | Opcode::Or)
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::Not => "NOT",
            Opcode::And => "AND",
            Opcode::Nand => "NAND",
            Opcode::Or => "OR",
            Opcode::Nor => "NOR",
            Opcode::Preset0 => "PRESET0",
            Opcode::Preset1 => "PRESET1",
            Opcode::Activate => "ACTIVATE",
        }
    }

    fn from_mnemonic(s: &str) -> Option<Self> {
        (0..8).map(Opcode::from_bits).find(|o| o.mnemonic() == s)
    }

    #[inline]
    fn eval(self, a: u64, b: u64) -> u64 {
        match self {
            Opcode::Not => !a,
            Opcode::And => a & b,
            Opcode::Nand => !(a & b),
            Opcode::Or => a | b,
            Opcode::Nor => !(a | b),
            _ => unreachable!("not a gate"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Orientation {
    /// Row-parallel: every active row computes on the addressed columns.
    Row,
    /// Column-parallel: every active column computes on the addressed rows.
    Col,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PimInstruction {
    pub op: Opcode,
    pub a: u16,
    pub b: u16,
    pub out: u16,
    pub orient: Orientation,
}

impl PimInstruction {
    pub fn gate(op: Opcode, a: u16, b: u16, out: u16, orient: Orientation) -> Self {
        Self {
            op,
            a,
            b,
            out,
            orient,
        }
    }

    pub fn not(a: u16, out: u16, orient: Orientation) -> Self {
        Self::gate(Opcode::Not, a, ADDR_NONE, out, orient)
    }

    /// Write `value` into every active line at `out`.
    pub fn preset(value: bool, out: u16, orient: Orientation) -> Self {
        let op = if value {
            Opcode::Preset1
        } else {
            Opcode::Preset0
        };
        Self {
            op,
            a: ADDR_NONE,
            b: ADDR_NONE,
            out,
            orient,
        }
    }

    /// Write `value` into one cell: line `out`, position `index`, in
    /// array-row `array` (or every array-row when `array` is `None`).
    pub fn preset_cell(
        value: bool,
        out: u16,
        index: u16,
        array: Option<u16>,
        orient: Orientation,
    ) -> Self {
        let op = if value {
            Opcode::Preset1
        } else {
            Opcode::Preset0
        };
        Self {
            op,
            a: index,
            b: array.unwrap_or(ADDR_NONE),
            out,
            orient,
        }
    }

    /// Write `value` into all 512 cells of line `out`.
    pub fn preset_line(value: bool, out: u16, array: Option<u16>, orient: Orientation) -> Self {
        let op = if value {
            Opcode::Preset1
        } else {
            Opcode::Preset0
        };
        Self {
            op,
            a: PRESET_WHOLE_LINE,
            b: array.unwrap_or(ADDR_NONE),
            out,
            orient,
        }
    }

    /// Load activation latches, optionally setting the parity bit first.
    pub fn activate(orient: Orientation, set_parity: Option<bool>, array: Option<u16>) -> Self {
        let a = match set_parity {
            None => 0,
            Some(false) => 1,
            Some(true) => 2,
        };
        Self {
            op: Opcode::Activate,
            a,
            b: array.unwrap_or(ADDR_NONE),
            out: ADDR_NONE,
            orient,
        }
    }

    pub fn nop() -> Self {
        Self {
            op: Opcode::Activate,
            a: ADDR_NONE,
            b: ADDR_NONE,
            out: ADDR_NONE,
            orient: Orientation::Row,
        }
    }

    pub fn is_nop(&self) -> bool {
        self.op == Opcode::Activate && self.a == ADDR_NONE
    }

    /// 40-bit word: opcode(3) | a(12) | b(12) | out(12) | orientation(1).
    pub fn encode(&self) -> u64 {
        ((self.op as u64) << 37)
            | ((self.a as u64 & 0xFFF) << 25)
            | ((self.b as u64 & 0xFFF) << 13)
            | ((self.out as u64 & 0xFFF) << 1)
            | matches!(self.orient, Orientation::Col) as u64
    }

    pub fn decode(word: u64) -> Result<Self, PimError> {
        if word >> 40 != 0 {
            return Err(PimError::Encoding(format!(
                "{word:#x} is wider than 40 bits"
            )));
        }
        Ok(Self {
            op: Opcode::from_bits((word >> 37) as u8),
            a: ((word >> 25) & 0xFFF) as u16,
            b: ((word >> 13) & 0xFFF) as u16,
            out: ((word >> 1) & 0xFFF) as u16,
            orient: if word & 1 == 1 {
                Orientation::Col
            } else {
                Orientation::Row
            },
        })
    }

    fn invalid(&self, reason: impl Into<String>) -> PimError {
        PimError::Invalid {
            instr: self.to_string(),
            reason: reason.into(),
        }
    }

    /// Static checks for an instruction issued by driver column `slot`.
    pub fn validate(&self, slot: usize) -> Result<(), PimError> {
        if slot >= GRID_COLS {
            return Err(self.invalid(format!("driver slot {slot} out of range")));
        }
        match self.op {
            op if op.is_gate() => self.validate_gate(slot),
            Opcode::Preset0 | Opcode::Preset1 => self.validate_preset(slot),
            _ => {
                if self.a != ADDR_NONE && self.a > 2 {
                    return Err(self.invalid("ACTIVATE mode must be 0, 1, 2 or none"));
                }
                if self.b != ADDR_NONE && self.b as usize >= GRID_ROWS {
                    return Err(self.invalid("array-row out of range"));
                }
                Ok(())
            }
        }
    }

    fn validate_gate(&self, slot: usize) -> Result<(), PimError> {
        let ins: Vec<u16> = if self.op.fanin() == 1 {
            if self.b != ADDR_NONE {
                return Err(self.invalid("NOT takes one input"));
            }
            vec![self.a]
        } else {
            vec![self.a, self.b]
        };
        match self.orient {
            Orientation::Row => {
                let check = |c: u16| -> Result<(), PimError> {
                    if c as usize >= GLOBAL_COLS {
                        return Err(self.invalid(format!("column {c} out of range")));
                    }
                    if c as usize % ARRAY_DIM >= MASK_BASE {
                        return Err(self.invalid("gates may not address bitmask columns"));
                    }
                    Ok(())
                };
                check(self.out)?;
                if self.out as usize / ARRAY_DIM != slot {
                    return Err(self.invalid(format!("output outside array-column {slot}")));
                }
                for &c in &ins {
                    check(c)?;
                    if c == self.out {
                        return Err(self.invalid("output overlaps an input"));
                    }
                    let ac = c as usize / ARRAY_DIM;
                    if ac.abs_diff(slot) > 1 {
                        return Err(self.invalid("input array is not adjacent to the output array"));
                    }
                }
            }
            Orientation::Col => {
                if self.out & !LOCAL_MASK != 0 || (self.out & LOCAL_MASK) as usize >= MASK_BASE {
                    return Err(self.invalid("output row must be a local data row"));
                }
                for &r in &ins {
                    let flags = r & !LOCAL_MASK;
                    if flags != 0 && flags != NEIGHBOR_DOWN && flags != NEIGHBOR_UP {
                        return Err(self.invalid(format!("bad row address {r:#x}")));
                    }
                    if (r & LOCAL_MASK) as usize >= MASK_BASE {
                        return Err(self.invalid("gates may not address bitmask rows"));
                    }
                    if r & LOCAL_MASK == self.out {
                        return Err(self.invalid("output row overlaps an input row"));
                    }
                }
            }
        }
        Ok(())
    }

    fn validate_preset(&self, slot: usize) -> Result<(), PimError> {
        let b_ok = self.b == ADDR_NONE || (self.b as usize) < GRID_ROWS;
        let a_ok =
            self.a == ADDR_NONE || self.a == PRESET_WHOLE_LINE || (self.a as usize) < ARRAY_DIM;
        if !a_ok || !b_ok {
            return Err(self.invalid("bad preset selector"));
        }
        match self.orient {
            Orientation::Row => {
                if self.out as usize >= GLOBAL_COLS || self.out as usize / ARRAY_DIM != slot {
                    return Err(self.invalid(format!("preset column outside array-column {slot}")));
                }
            }
            Orientation::Col => {
                if self.out as usize >= ARRAY_DIM {
                    return Err(self.invalid("preset row must be local"));
                }
            }
        }
        Ok(())
    }

    /// Global columns (row logic) or local rows (column logic) read.
    fn reads(&self) -> Vec<u16> {
        match self.op.fanin() {
            1 => vec![self.a],
            2 => vec![self.a, self.b],
            _ => vec![],
        }
    }
}

fn fmt_addr(a: u16) -> String {
    if a == ADDR_NONE {
        "-".into()
    } else {
        format!("{a:03X}")
    }
}

impl fmt::Display for PimInstruction {
    /// Listing form `OPCODE A B OUT R|C`, addresses in hex.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let o = match self.orient {
            Orientation::Row => 'R',
            Orientation::Col => 'C',
        };
        write!(
            f,
            "{} {} {} {} {}",
            self.op.mnemonic(),
            fmt_addr(self.a),
            fmt_addr(self.b),
            fmt_addr(self.out),
            o
        )
    }
}

impl std::str::FromStr for PimInstruction {
    type Err = PimError;

    fn from_str(s: &str) -> Result<Self, PimError> {
        let toks: Vec<&str> = s.split_whitespace().collect();
        if toks.len() != 5 {
            return Err(PimError::Encoding(format!("expected 5 fields in {s:?}")));
        }
        let op = Opcode::from_mnemonic(toks[0])
            .ok_or_else(|| PimError::Encoding(format!("unknown opcode {:?}", toks[0])))?;
        let addr = |t: &str| -> Result<u16, PimError> {
            if t == "-" {
                return Ok(ADDR_NONE);
            }
            u16::from_str_radix(t, 16)
                .ok()
                .filter(|&v| v <= 0xFFF)
                .ok_or_else(|| PimError::Encoding(format!("bad address {t:?}")))
        };
        let orient = match toks[4] {
            "R" => Orientation::Row,
            "C" => Orientation::Col,
            t => return Err(PimError::Encoding(format!("bad orientation {t:?}"))),
        };
        Ok(Self {
            op,
            a: addr(toks[1])?,
            b: addr(toks[2])?,
            out: addr(toks[3])?,
            orient,
        })
    }
}

/// One instruction slot per driver column; `None` is a no-op.
pub type Cycle = [Option<PimInstruction>; GRID_COLS];

/// Hazard check for instructions sharing a cycle. Only row-logic gates may
/// share; they must not read or write what another one writes.
pub fn validate_cycle(cycle: &Cycle) -> Result<(), PimError> {
    for (slot, ins) in cycle.iter().enumerate() {
        if let Some(i) = ins {
            i.validate(slot)?;
        }
    }
    let used: Vec<&PimInstruction> = cycle.iter().flatten().filter(|i| !i.is_nop()).collect();
    if used.len() <= 1 {
        return Ok(());
    }
    let row_gate = |i: &&PimInstruction| i.op.is_gate() && i.orient == Orientation::Row;
    if !used.iter().any(row_gate) {
        // everything else stays inside its own array-column
        return Ok(());
    }
    if !used.iter().all(row_gate) {
        return Err(PimError::Conflict(
            "row-logic gates cannot share a cycle with other kinds".into(),
        ));
    }
    for (x, i) in used.iter().enumerate() {
        for (y, j) in used.iter().enumerate() {
            if x != y && (j.reads().contains(&i.out) || j.out == i.out) {
                return Err(PimError::Conflict(format!("{i} and {j}")));
            }
        }
    }
    Ok(())
}

/// Per-instruction device and peripheral counts; energy is linear in them.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OpCounts {
    pub cycles: u64,
    /// Driver slots that issued a real instruction.
    pub slots: u64,
    /// Output cells driven by gates, indexed by opcode.
    pub gate_lines: [u64; 5],
    pub preset_lines: u64,
    pub activations: u64,
    pub read_bits: u64,
}

impl OpCounts {
    pub fn total_gate_lines(&self) -> u64 {
        self.gate_lines.iter().sum()
    }

    pub fn scaled(&self, k: u64) -> Self {
        Self {
            cycles: self.cycles * k,
            slots: self.slots * k,
            gate_lines: self.gate_lines.map(|g| g * k),
            preset_lines: self.preset_lines * k,
            activations: self.activations * k,
            read_bits: self.read_bits * k,
        }
    }
}

impl OpCounts {
    /// Component-wise difference; `None` if any count would go negative.
    pub fn checked_sub(&self, o: &Self) -> Option<Self> {
        let mut gate_lines = [0; 5];
        for (g, (a, b)) in gate_lines
            .iter_mut()
            .zip(self.gate_lines.iter().zip(&o.gate_lines))
        {
            *g = a.checked_sub(*b)?;
        }
        Some(Self {
            cycles: self.cycles.checked_sub(o.cycles)?,
            slots: self.slots.checked_sub(o.slots)?,
            gate_lines,
            preset_lines: self.preset_lines.checked_sub(o.preset_lines)?,
            activations: self.activations.checked_sub(o.activations)?,
            read_bits: self.read_bits.checked_sub(o.read_bits)?,
        })
    }
}

impl std::ops::AddAssign for OpCounts {
    fn add_assign(&mut self, o: Self) {
        self.cycles += o.cycles;
        self.slots += o.slots;
        for i in 0..5 {
            self.gate_lines[i] += o.gate_lines[i];
        }
        self.preset_lines += o.preset_lines;
        self.activations += o.activations;
        self.read_bits += o.read_bits;
    }
}

impl std::ops::Add for OpCounts {
    type Output = Self;
    fn add(mut self, o: Self) -> Self {
        self += o;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MtjParams {
    pub name: &'static str,
    pub r_p: f64,
    pub r_ap: f64,
    pub t_switch: f64,
    pub i_switch: f64,
}

impl MtjParams {
    pub fn modern() -> Self {
        Self {
            name: "modern",
            r_p: 3.15e3,
            r_ap: 7.34e3,
            t_switch: 3e-9,
            i_switch: 40e-6,
        }
    }

    pub fn projected() -> Self {
        Self {
            name: "projected",
            r_p: 7.34e3,
            r_ap: 76.39e3,
            t_switch: 1e-9,
            i_switch: 3e-6,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "modern" => Some(Self::modern()),
            "projected" => Some(Self::projected()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.r_ap > self.r_p && self.r_p > 0.0) {
            return Err("need R_AP > R_P > 0".into());
        }
        if !(self.t_switch > 0.0 && self.i_switch > 0.0) {
            return Err("switching time and current must be positive".into());
        }
        Ok(())
    }
}

fn parallel(a: f64, b: f64) -> f64 {
    a * b / (a + b)
}

/// Peripheral overhead: a multiplicative share on array energy plus a fixed
/// driver/decoder cost per issued instruction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeripheralModel {
    pub fraction: f64,
    pub fixed_per_instruction: f64,
    /// Read current as a fraction of the switching current.
    pub read_current_ratio: f64,
}

impl PeripheralModel {
    /// Constants fitted once against the polynomial-multiplication energies
    /// and frozen here; see `bench::calibrate_peripheral`.
    pub const CALIBRATED: PeripheralModel = PeripheralModel {
        fraction: 32.624573541885866,
        fixed_per_instruction: 4.644989090957012e-11,
        read_current_ratio: 0.25,
    };
}

impl Default for PeripheralModel {
    fn default() -> Self {
        Self::CALIBRATED
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyModel {
    pub mtj: MtjParams,
    pub peripheral: PeripheralModel,
    pub clock_hz: f64,
}

impl EnergyModel {
    pub fn new(mtj: MtjParams, peripheral: PeripheralModel, clock_hz: f64) -> Self {
        Self {
            mtj,
            peripheral,
            clock_hz,
        }
    }

    pub fn modern() -> Self {
        Self::new(MtjParams::modern(), PeripheralModel::default(), 30.3e6)
    }

    pub fn projected() -> Self {
        Self::new(MtjParams::projected(), PeripheralModel::default(), 90.9e6)
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "modern" => Some(Self::modern()),
            "projected" => Some(Self::projected()),
            _ => None,
        }
    }

    /// Input resistance at the switching corner: the weakest input
    /// combination that must still switch the output.
    fn corner_input_resistance(&self, op: Opcode) -> f64 {
        let m = &self.mtj;
        match op {
            Opcode::Not => m.r_p,
            Opcode::Nand | Opcode::And => parallel(m.r_p, m.r_ap),
            _ => m.r_p / 2.0,
        }
    }

    /// Array energy of one gate on one line: `V_gate * I_path * t_switch`
    /// with the bias chosen so `I_path = I_switch` at the corner.
    pub fn gate_line_energy(&self, op: Opcode) -> f64 {
        if !op.is_gate() {
            return 0.0;
        }
        let m = &self.mtj;
        let r_out = if op.preset_value() { m.r_ap } else { m.r_p };
        let r = self.corner_input_resistance(op) + r_out;
        m.i_switch * m.i_switch * r * m.t_switch
    }

    /// Unconditional write of one cell. The write voltage is sized to push
    /// `I_switch` through the parallel state; once the cell reaches the
    /// antiparallel state the current drops, so `I^2 R_P t` bounds it.
    pub fn write_energy(&self) -> f64 {
        let m = &self.mtj;
        m.i_switch * m.i_switch * m.r_p * m.t_switch
    }

    pub fn read_energy(&self) -> f64 {
        let m = &self.mtj;
        let i = m.i_switch * self.peripheral.read_current_ratio;
        i * i * 0.5 * (m.r_p + m.r_ap) * m.t_switch
    }

    /// Energy of one gate instruction over `lines` active lines.
    pub fn gate_energy(&self, op: Opcode, lines: u64) -> f64 {
        if lines == 0 {
            return 0.0;
        }
        lines as f64 * self.gate_line_energy(op) * (1.0 + self.peripheral.fraction)
            + self.peripheral.fixed_per_instruction
    }

    /// Energy spent in the cells alone, before peripheral overhead.
    pub fn array_energy(&self, c: &OpCounts) -> f64 {
        Opcode::GATES
            .iter()
            .map(|&op| c.gate_lines[op as usize] as f64 * self.gate_line_energy(op))
            .sum::<f64>()
            + c.preset_lines as f64 * self.write_energy()
            + (c.activations * ARRAY_DIM as u64 + c.read_bits) as f64 * self.read_energy()
    }

    pub fn energy(&self, c: &OpCounts) -> f64 {
        self.array_energy(c) * (1.0 + self.peripheral.fraction)
            + c.slots as f64 * self.peripheral.fixed_per_instruction
    }

    pub fn latency(&self, c: &OpCounts) -> f64 {
        c.cycles as f64 / self.clock_hz
    }

    pub fn clock_period(&self) -> f64 {
        1.0 / self.clock_hz
    }

    /// Controller state update after each committed instruction.
    pub fn backup_energy_per_commit(&self) -> f64 {
        BACKUP_BITS_PER_COMMIT * self.write_energy() * (1.0 + self.peripheral.fraction)
    }

    /// Reactivation of row and column latches in every array.
    pub fn restore_counts() -> OpCounts {
        Self::restore_counts_for(GRID_ROWS * GRID_COLS)
    }

    /// Row and column reactivation of `arrays` arrays, issued by all
    /// drivers in two cycles.
    pub fn restore_counts_for(arrays: usize) -> OpCounts {
        OpCounts {
            cycles: 2,
            slots: 2 * GRID_COLS as u64,
            activations: 2 * arrays as u64,
            ..OpCounts::default()
        }
    }

    pub fn restore_energy(&self) -> f64 {
        self.energy(&Self::restore_counts())
    }

    pub fn restore_latency(&self) -> f64 {
        self.latency(&Self::restore_counts())
    }
}

/// Energy and latency by category.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize)]
pub struct EnergyLedger {
    pub compute_j: f64,
    pub io_j: f64,
    pub encode_j: f64,
    pub dead_j: f64,
    pub restore_j: f64,
    pub backup_j: f64,
    pub compute_s: f64,
    pub io_s: f64,
    pub encode_s: f64,
    pub dead_s: f64,
    pub restore_s: f64,
    pub backup_s: f64,
    pub restarts: u64,
}

impl EnergyLedger {
    pub fn total_energy(&self) -> f64 {
        self.compute_j + self.io_j + self.encode_j + self.dead_j + self.restore_j + self.backup_j
    }

    pub fn total_latency(&self) -> f64 {
        self.compute_s + self.io_s + self.encode_s + self.dead_s + self.restore_s + self.backup_s
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComputeArray {
    /// `cols[c]` holds the 512 cells of column `c`, bit `r` = row `r`.
    cols: Vec<Line>,
    pub rp: bool,
    pub cp: bool,
    row_latch: Line,
    col_latch: Line,
    pub has_sense_amps: bool,
}

impl ComputeArray {
    fn new(has_sense_amps: bool) -> Self {
        Self {
            cols: vec![[0; WORDS]; ARRAY_DIM],
            rp: false,
            cp: false,
            row_latch: [0; WORDS],
            col_latch: [0; WORDS],
            has_sense_amps,
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        (self.cols[col][row / 64] >> (row % 64)) & 1 == 1
    }

    #[inline]
    fn set(&mut self, row: usize, col: usize, v: bool) {
        let w = &mut self.cols[col][row / 64];
        let bit = 1u64 << (row % 64);
        if v {
            *w |= bit;
        } else {
            *w &= !bit;
        }
    }

    /// Rows enabled for row logic (valid row-mask copy).
    pub fn row_mask(&self) -> Vec<bool> {
        let c = MASK_BASE + self.rp as usize;
        (0..ARRAY_DIM)
            .map(|r| r < MASK_BASE && self.get(r, c))
            .collect()
    }

    /// Columns enabled for column logic (valid column-mask copy).
    pub fn col_mask(&self) -> Vec<bool> {
        let r = MASK_BASE + self.cp as usize;
        (0..ARRAY_DIM)
            .map(|c| c < MASK_BASE && self.get(r, c))
            .collect()
    }

    pub fn row_latch(&self) -> Vec<bool> {
        (0..ARRAY_DIM)
            .map(|r| (self.row_latch[r / 64] >> (r % 64)) & 1 == 1)
            .collect()
    }

    pub fn col_latch(&self) -> Vec<bool> {
        (0..ARRAY_DIM)
            .map(|c| (self.col_latch[c / 64] >> (c % 64)) & 1 == 1)
            .collect()
    }

    fn activate_rows(&mut self) {
        let c = MASK_BASE + self.rp as usize;
        let mut l = self.cols[c];
        for (w, m) in l.iter_mut().zip(DATA_LINES) {
            *w &= m;
        }
        self.row_latch = l;
    }

    fn activate_cols(&mut self) {
        let r = MASK_BASE + self.cp as usize;
        let mut l = [0u64; WORDS];
        for c in 0..MASK_BASE {
            if self.get(r, c) {
                l[c / 64] |= 1 << (c % 64);
            }
        }
        self.col_latch = l;
    }

    fn same_nonvolatile(&self, o: &Self) -> bool {
        self.cols == o.cols && self.rp == o.rp && self.cp == o.cp
    }
}

/// How an interrupted instruction leaves each output cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    Complete,
    /// Every line independently keeps its old value, holds the preset, or
    /// reaches the final value.
    Interrupted,
}

/// Whether gate instructions update cell data. Counting mode evaluates only
/// masks and latches, which is all that energy accounting needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataMode {
    BitLevel,
    CountOnly,
}

#[derive(Debug, Clone)]
pub struct ArrayGrid {
    arrays: Vec<ComputeArray>,
    pub data_mode: DataMode,
}

impl PartialEq for ArrayGrid {
    /// Compares non-volatile state only.
    fn eq(&self, other: &Self) -> bool {
        self.arrays.len() == other.arrays.len()
            && self
                .arrays
                .iter()
                .zip(&other.arrays)
                .all(|(a, b)| a.same_nonvolatile(b))
    }
}

impl Default for ArrayGrid {
    fn default() -> Self {
        Self::new()
    }
}

/// Sample per-word selectors for an interrupted write: `(final, preset)`.
fn interrupt_masks<R: Rng + ?Sized>(rng: &mut R) -> (u64, u64) {
    let f: u64 = rng.random();
    let p: u64 = rng.random();
    (f, !f & p)
}

impl ArrayGrid {
    pub fn new() -> Self {
        Self::with_mode(DataMode::BitLevel)
    }

    pub fn with_mode(data_mode: DataMode) -> Self {
        let arrays = (0..GRID_ROWS * GRID_COLS)
            .map(|i| ComputeArray::new(i % GRID_COLS == 0))
            .collect();
        Self { arrays, data_mode }
    }

    pub fn array(&self, row: usize, col: usize) -> &ComputeArray {
        &self.arrays[row * GRID_COLS + col]
    }

    fn array_mut(&mut self, row: usize, col: usize) -> &mut ComputeArray {
        &mut self.arrays[row * GRID_COLS + col]
    }

    /// Cell at a lane row and global column.
    pub fn cell(&self, array_row: usize, row: usize, global_col: usize) -> bool {
        self.array(array_row, global_col / ARRAY_DIM)
            .get(row, global_col % ARRAY_DIM)
    }

    /// Drop volatile state (activation latches).
    pub fn power_loss(&mut self) {
        for a in &mut self.arrays {
            a.row_latch = [0; WORDS];
            a.col_latch = [0; WORDS];
        }
    }

    pub fn exec_cycle(&mut self, cycle: &Cycle) -> Result<OpCounts, PimError> {
        self.exec_cycle_with(cycle, ExecMode::Complete, &mut rand::rng())
    }

    /// Execute a cycle that loses power part way: each slot's instruction
    /// leaves every output line in its old, preset or final state.
    pub fn exec_cycle_interrupted<R: Rng + ?Sized>(
        &mut self,
        cycle: &Cycle,
        rng: &mut R,
    ) -> Result<OpCounts, PimError> {
        self.exec_cycle_with(cycle, ExecMode::Interrupted, rng)
    }

    fn exec_cycle_with<R: Rng + ?Sized>(
        &mut self,
        cycle: &Cycle,
        mode: ExecMode,
        rng: &mut R,
    ) -> Result<OpCounts, PimError> {
        validate_cycle(cycle)?;
        let mut counts = OpCounts {
            cycles: 1,
            ..OpCounts::default()
        };
        for (slot, ins) in cycle.iter().enumerate() {
            if let Some(i) = ins {
                if i.is_nop() {
                    continue;
                }
                counts.slots += 1;
                self.exec_instr(i, slot, mode, rng, &mut counts)?;
            }
        }
        Ok(counts)
    }

    /// Execute one instruction from driver `slot`.
    pub fn exec(&mut self, instr: &PimInstruction, slot: usize) -> Result<OpCounts, PimError> {
        let mut c: Cycle = [None; GRID_COLS];
        if slot >= GRID_COLS {
            return Err(instr.invalid("driver slot out of range"));
        }
        c[slot] = Some(*instr);
        self.exec_cycle(&c)
    }

    fn exec_instr<R: Rng + ?Sized>(
        &mut self,
        i: &PimInstruction,
        slot: usize,
        mode: ExecMode,
        rng: &mut R,
        counts: &mut OpCounts,
    ) -> Result<(), PimError> {
        match i.op {
            op if op.is_gate() => match i.orient {
                Orientation::Row => self.row_gate(i, slot, mode, rng, counts),
                Orientation::Col => self.col_gate(i, slot, mode, rng, counts),
            },
            Opcode::Preset0 | Opcode::Preset1 => self.preset(i, slot, mode, rng, counts),
            _ => {
                self.activate(i, slot, mode, rng, counts);
                Ok(())
            }
        }
    }

    fn row_gate<R: Rng + ?Sized>(
        &mut self,
        i: &PimInstruction,
        slot: usize,
        mode: ExecMode,
        rng: &mut R,
        counts: &mut OpCounts,
    ) -> Result<(), PimError> {
        let (ca, la) = (i.a as usize / ARRAY_DIM, i.a as usize % ARRAY_DIM);
        let lo = i.out as usize % ARRAY_DIM;
        let two = i.op.fanin() == 2;
        let (cb, lb) = (i.b as usize / ARRAY_DIM, i.b as usize % ARRAY_DIM);
        let preset = if i.op.preset_value() { u64::MAX } else { 0 };
        let mut lines = 0u64;
        for r in 0..GRID_ROWS {
            let active = self.array(r, slot).row_latch;
            let n: u32 = active.iter().map(|w| w.count_ones()).sum();
            if n == 0 {
                continue;
            }
            lines += n as u64;
            if self.data_mode == DataMode::CountOnly {
                continue;
            }
            let fa = self.array(r, ca).cols[la];
            let fb = if two {
                self.array(r, cb).cols[lb]
            } else {
                [0; WORDS]
            };
            let out = &mut self.array_mut(r, slot).cols[lo];
            for w in 0..WORDS {
                let res = i.op.eval(fa[w], fb[w]);
                let act = active[w];
                let v = match mode {
                    ExecMode::Complete => res,
                    ExecMode::Interrupted => {
                        let (f, p) = interrupt_masks(rng);
                        (res & f) | (preset & p) | (out[w] & !(f | p))
                    }
                };
                out[w] = (out[w] & !act) | (v & act);
            }
        }
        counts.gate_lines[i.op as usize] += lines;
        Ok(())
    }

    fn col_gate<R: Rng + ?Sized>(
        &mut self,
        i: &PimInstruction,
        slot: usize,
        mode: ExecMode,
        rng: &mut R,
        counts: &mut OpCounts,
    ) -> Result<(), PimError> {
        let two = i.op.fanin() == 2;
        let offset = |addr: u16| -> isize {
            if addr & NEIGHBOR_DOWN != 0 {
                1
            } else if addr & NEIGHBOR_UP != 0 {
                -1
            } else {
                0
            }
        };
        let (da, ra) = (offset(i.a), (i.a & LOCAL_MASK) as usize);
        let (db, rb) = if two {
            (offset(i.b), (i.b & LOCAL_MASK) as usize)
        } else {
            (0, 0)
        };
        let ro = i.out as usize;
        let preset = i.op.preset_value();
        let mut lines = 0u64;
        for r in 0..GRID_ROWS {
            let src_a = r as isize + da;
            let src_b = r as isize + db;
            if !(0..GRID_ROWS as isize).contains(&src_a)
                || !(0..GRID_ROWS as isize).contains(&src_b)
            {
                continue;
            }
            let active = self.array(r, slot).col_latch;
            let n: u32 = active.iter().map(|w| w.count_ones()).sum();
            lines += n as u64;
            if n == 0 || self.data_mode == DataMode::CountOnly {
                continue;
            }
            for c in 0..MASK_BASE {
                if (active[c / 64] >> (c % 64)) & 1 == 0 {
                    continue;
                }
                let a = self.array(src_a as usize, slot).get(ra, c) as u64;
                let b = if two {
                    self.array(src_b as usize, slot).get(rb, c) as u64
                } else {
                    0
                };
                let res = i.op.eval(a, b) & 1 == 1;
                let dst = self.array_mut(r, slot);
                let v = match mode {
                    ExecMode::Complete => res,
                    ExecMode::Interrupted => match rng.random_range(0..3) {
                        0 => dst.get(ro, c),
                        1 => preset,
                        _ => res,
                    },
                };
                dst.set(ro, c, v);
            }
        }
        counts.gate_lines[i.op as usize] += lines;
        Ok(())
    }

    fn preset<R: Rng + ?Sized>(
        &mut self,
        i: &PimInstruction,
        slot: usize,
        mode: ExecMode,
        rng: &mut R,
        counts: &mut OpCounts,
    ) -> Result<(), PimError> {
        let value = i.op == Opcode::Preset1;
        let rows: Vec<usize> = if i.b == ADDR_NONE {
            (0..GRID_ROWS).collect()
        } else {
            vec![i.b as usize]
        };
        let line = match i.orient {
            Orientation::Row => i.out as usize % ARRAY_DIM,
            Orientation::Col => i.out as usize,
        };
        // bitmask protection: only the invalid copy may be written
        if line >= MASK_BASE {
            let copy = line - MASK_BASE == 1;
            for &r in &rows {
                let arr = self.array(r, slot);
                let valid = match i.orient {
                    Orientation::Row => arr.rp,
                    Orientation::Col => arr.cp,
                };
                if copy == valid {
                    return Err(PimError::ValidMaskWrite { row: r, col: slot });
                }
            }
        }
        let mut lines = 0u64;
        for &r in &rows {
            let arr = self.array(r, slot);
            let targets: Vec<usize> = match i.a {
                ADDR_NONE => {
                    let latch = match i.orient {
                        Orientation::Row => arr.row_latch,
                        Orientation::Col => arr.col_latch,
                    };
                    (0..ARRAY_DIM)
                        .filter(|&k| (latch[k / 64] >> (k % 64)) & 1 == 1)
                        .collect()
                }
                PRESET_WHOLE_LINE => (0..ARRAY_DIM).collect(),
                k => vec![k as usize],
            };
            lines += targets.len() as u64;
            let arr = self.array_mut(r, slot);
            for k in targets {
                let (row, col) = match i.orient {
                    Orientation::Row => (k, line),
                    Orientation::Col => (line, k),
                };
                let v = match mode {
                    ExecMode::Complete => value,
                    ExecMode::Interrupted => {
                        if rng.random_bool(0.5) {
                            value
                        } else {
                            arr.get(row, col)
                        }
                    }
                };
                arr.set(row, col, v);
            }
        }
        counts.preset_lines += lines;
        Ok(())
    }

    fn activate<R: Rng + ?Sized>(
        &mut self,
        i: &PimInstruction,
        slot: usize,
        mode: ExecMode,
        rng: &mut R,
        counts: &mut OpCounts,
    ) {
        let rows: Vec<usize> = if i.b == ADDR_NONE {
            (0..GRID_ROWS).collect()
        } else {
            vec![i.b as usize]
        };
        for r in rows {
            let arr = self.array_mut(r, slot);
            if i.a == 1 || i.a == 2 {
                let p = i.a == 2;
                let apply = mode == ExecMode::Complete || rng.random_bool(0.5);
                if apply {
                    match i.orient {
                        Orientation::Row => arr.rp = p,
                        Orientation::Col => arr.cp = p,
                    }
                }
            }
            match i.orient {
                Orientation::Row => arr.activate_rows(),
                Orientation::Col => arr.activate_cols(),
            }
            counts.activations += 1;
        }
    }

    /// Reload every latch from the valid bitmask copies.
    pub fn restore(&mut self) -> OpCounts {
        let mut c = OpCounts::default();
        for orient in [Orientation::Row, Orientation::Col] {
            let cycle: Cycle = [Some(PimInstruction::activate(orient, None, None)); GRID_COLS];
            c += self.exec_cycle(&cycle).expect("restore cycle is valid");
        }
        c
    }

    /// Host write of a lane value; models preloaded or encoder-written data.
    pub fn load_bits(&mut self, array_row: usize, row: usize, cols: &[u16], value: u64) {
        for (k, &c) in cols.iter().enumerate() {
            let c = c as usize;
            self.array_mut(array_row, c / ARRAY_DIM)
                .set(row, c % ARRAY_DIM, (value >> k) & 1 == 1);
        }
    }

    /// Inspect a lane value anywhere in the grid (test and debug aid; no
    /// architectural read is modeled).
    pub fn peek_bits(&self, array_row: usize, row: usize, cols: &[u16]) -> u64 {
        cols.iter().enumerate().fold(0, |acc, (k, &c)| {
            acc | ((self.cell(array_row, row, c as usize) as u64) << k)
        })
    }

    /// Sense-amplifier read; only array-column 0 can be read.
    pub fn read_bits(
        &self,
        array_row: usize,
        row: usize,
        cols: &[u16],
    ) -> Result<(u64, OpCounts), PimError> {
        if let Some(&c) = cols.iter().find(|&&c| c as usize >= ARRAY_DIM) {
            return Err(PimError::NoSenseAmps(c as usize / ARRAY_DIM));
        }
        let v = self.peek_bits(array_row, row, cols);
        Ok((
            v,
            OpCounts {
                read_bits: cols.len() as u64,
                ..OpCounts::default()
            },
        ))
    }

    /// Versioned binary dump: header, then per array the parity bits and
    /// the row-major bitplane.
    pub fn snapshot(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.arrays.len() * (2 + ARRAY_DIM * ARRAY_DIM / 8));
        out.extend_from_slice(SNAPSHOT_MAGIC);
        out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
        out.extend_from_slice(&(GRID_ROWS as u16).to_le_bytes());
        out.extend_from_slice(&(GRID_COLS as u16).to_le_bytes());
        out.extend_from_slice(&(ARRAY_DIM as u16).to_le_bytes());
        out.extend_from_slice(&[0u8; 4]);
        for a in &self.arrays {
            out.push(a.rp as u8);
            out.push(a.cp as u8);
            for r in 0..ARRAY_DIM {
                for byte in 0..ARRAY_DIM / 8 {
                    let mut v = 0u8;
                    for bit in 0..8 {
                        v |= (a.get(r, byte * 8 + bit) as u8) << bit;
                    }
                    out.push(v);
                }
            }
        }
        out
    }

    pub fn from_snapshot(bytes: &[u8]) -> Result<Self, PimError> {
        if bytes.len() < 16 || &bytes[..4] != SNAPSHOT_MAGIC {
            return Err(PimError::Snapshot("bad magic".into()));
        }
        let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
        if u16_at(4) != SNAPSHOT_VERSION {
            return Err(PimError::Snapshot(format!(
                "unsupported version {}",
                u16_at(4)
            )));
        }
        if u16_at(6) as usize != GRID_ROWS
            || u16_at(8) as usize != GRID_COLS
            || u16_at(10) as usize != ARRAY_DIM
        {
            return Err(PimError::Snapshot("geometry mismatch".into()));
        }
        let per = 2 + ARRAY_DIM * ARRAY_DIM / 8;
        if bytes.len() != 16 + per * GRID_ROWS * GRID_COLS {
            return Err(PimError::Snapshot("truncated".into()));
        }
        let mut g = Self::new();
        for (k, a) in g.arrays.iter_mut().enumerate() {
            let base = 16 + k * per;
            a.rp = bytes[base] == 1;
            a.cp = bytes[base + 1] == 1;
            for r in 0..ARRAY_DIM {
                for byte in 0..ARRAY_DIM / 8 {
                    let v = bytes[base + 2 + r * ARRAY_DIM / 8 + byte];
                    for bit in 0..8 {
                        a.set(r, byte * 8 + bit, (v >> bit) & 1 == 1);
                    }
                }
            }
        }
        Ok(g)
    }
}
