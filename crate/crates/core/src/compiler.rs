//! Lowering of the linear BFV kernels onto the computation-array grid.
//!
//! One polynomial coefficient lives in each lane (physical row); lane `i`
//! sits in array-row `i / R`, local row `i % R` for `R = lanes_per_array`.
//! Arithmetic is bit-serial and row-parallel: a field is a list of columns,
//! least significant bit first, and every gate acts on all lanes at once.
//! Local rows `R` and `R + 1` are scratch rows for column-logic moves.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ntt::{NttError, NttTables, ShiftAddSchedule};
use crate::pim::{
    validate_cycle, ArrayGrid, Cycle, DataMode, OpCounts, Opcode, Orientation, PimError,
    PimInstruction, ARRAY_DIM, GRID_COLS, GRID_ROWS, MASK_BASE, NEIGHBOR_DOWN, NEIGHBOR_UP,
    USABLE_LINES,
};
use crate::svm::{rodent_linear_phase, EncryptedModel, PartialResult, SvmError};

/// Instructions in one bit-serial full adder (all NAND).
pub const FULL_ADDER_GATES: u64 = 9;
const SCRATCH_ROWS: usize = 2;
/// Cycles aggregated per entry of a [`CostTrace`].
pub const TRACE_BLOCK: u64 = 1024;

#[derive(Debug, Error)]
pub enum CompileError {
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("layout: {0}")]
    Layout(String),
    #[error(transparent)]
    Pim(#[from] PimError),
    #[error(transparent)]
    Ntt(#[from] NttError),
    #[error("unknown field {0}")]
    UnknownField(String),
    #[error(transparent)]
    Svm(#[from] SvmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub n: usize,
    pub lanes_per_array: usize,
}

impl Layout {
    pub fn new(n: usize, lanes_per_array: usize) -> Result<Self, CompileError> {
        if !n.is_power_of_two() || !lanes_per_array.is_power_of_two() || lanes_per_array > n {
            return Err(CompileError::Layout(format!(
                "need powers of two with lanes <= n, got n={n}, lanes={lanes_per_array}"
            )));
        }
        if n / lanes_per_array > GRID_ROWS {
            return Err(CompileError::Capacity(format!(
                "{n} lanes need {} array-rows, grid has {GRID_ROWS}",
                n / lanes_per_array
            )));
        }
        if lanes_per_array + SCRATCH_ROWS > USABLE_LINES {
            return Err(CompileError::Capacity(format!(
                "{lanes_per_array} lanes per array leave no scratch rows"
            )));
        }
        Ok(Self { n, lanes_per_array })
    }

    /// Spread lanes over all sixteen array-rows.
    pub fn spread(n: usize) -> Result<Self, CompileError> {
        Self::new(n, (n / GRID_ROWS).max(1))
    }

    pub fn arrays_used(&self) -> usize {
        self.n / self.lanes_per_array
    }

    pub fn lane_position(&self, lane: usize) -> (usize, usize) {
        (lane / self.lanes_per_array, lane % self.lanes_per_array)
    }

    fn scratch_row(&self, k: usize) -> u16 {
        (self.lanes_per_array + k) as u16
    }
}

/// Static per-row column budget for a workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutPlan {
    pub layout: Layout,
    /// Named resident regions and their width in bits.
    pub regions: Vec<(String, usize)>,
    /// Estimated working set for temporaries.
    pub working_bits: usize,
}

impl LayoutPlan {
    pub fn total_bits(&self) -> usize {
        self.regions.iter().map(|r| r.1).sum::<usize>() + self.working_bits
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Workload {
    Ntt,
    PolyMult,
    /// Resident model and inputs for every class and dimension.
    SvmLinear {
        classes: usize,
        dimension: usize,
    },
}

/// Capacity check: resident regions plus working storage must fit in the
/// usable columns of one grid row.
pub fn plan_layout(
    layout: Layout,
    primes: usize,
    bits: usize,
    workload: Workload,
) -> Result<LayoutPlan, CompileError> {
    let stages = layout.n.trailing_zeros() as usize;
    let stage_bits = stages * (bits + 1);
    let ct = 2 * primes * bits;
    let regions = match workload {
        Workload::Ntt => vec![
            ("exchange".into(), 2 * bits),
            ("twiddles".into(), 2 * stage_bits),
        ],
        Workload::PolyMult => vec![
            ("operands".into(), 2 * bits),
            ("exchange".into(), 2 * bits),
            ("twiddles".into(), 2 * stage_bits),
        ],
        Workload::SvmLinear { classes, dimension } => vec![
            ("ciphertexts".into(), classes * dimension * ct),
            ("inputs".into(), 3 * dimension),
            ("results".into(), classes * ct),
        ],
    };
    let working_bits = 8 * bits + 24;
    let plan = LayoutPlan {
        layout,
        regions,
        working_bits,
    };
    let cap = USABLE_LINES * GRID_COLS;
    if plan.total_bits() > cap {
        return Err(CompileError::Capacity(format!(
            "{} bits per row exceed {cap} usable columns",
            plan.total_bits()
        )));
    }
    Ok(plan)
}

pub trait CycleSink {
    fn push(&mut self, cycle: Cycle) -> Result<(), PimError>;
}

impl CycleSink for Vec<Cycle> {
    fn push(&mut self, cycle: Cycle) -> Result<(), PimError> {
        Vec::push(self, cycle);
        Ok(())
    }
}

/// Per-block operation counts along a program, for run-length energy
/// accounting without storing every cycle.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CostTrace {
    pub blocks: Vec<OpCounts>,
}

impl CostTrace {
    fn push(&mut self, c: OpCounts) {
        match self.blocks.last_mut() {
            Some(b) if b.cycles < TRACE_BLOCK => *b += c,
            _ => self.blocks.push(c),
        }
    }

    pub fn total(&self) -> OpCounts {
        self.blocks.iter().fold(OpCounts::default(), |a, &b| a + b)
    }
}

/// Executes cycles on a mask-only grid to collect counts.
pub struct CountingSink {
    grid: ArrayGrid,
    pub trace: CostTrace,
}

impl Default for CountingSink {
    fn default() -> Self {
        Self {
            grid: ArrayGrid::with_mode(DataMode::CountOnly),
            trace: CostTrace::default(),
        }
    }
}

impl CycleSink for CountingSink {
    fn push(&mut self, cycle: Cycle) -> Result<(), PimError> {
        let c = self.grid.exec_cycle(&cycle)?;
        self.trace.push(c);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bit {
    Zero,
    One,
    Col(u16),
}

impl Bit {
    fn konst(v: bool) -> Self {
        if v {
            Bit::One
        } else {
            Bit::Zero
        }
    }

    fn col(self) -> Option<u16> {
        match self {
            Bit::Col(c) => Some(c),
            _ => None,
        }
    }
}

pub type Field = Vec<Bit>;

fn const_field(v: u64, width: usize) -> Field {
    (0..width).map(|i| Bit::konst((v >> i) & 1 == 1)).collect()
}

fn get(f: &[Bit], i: usize) -> Bit {
    f.get(i).copied().unwrap_or(Bit::Zero)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamedField {
    pub name: String,
    pub cols: Vec<u16>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub name: String,
    pub layout: Layout,
    pub cycles: Vec<Cycle>,
    pub inputs: Vec<NamedField>,
    /// Deployment-time constants (staged twiddles), one value per lane.
    pub resident: Vec<(NamedField, Vec<u64>)>,
    pub outputs: Vec<NamedField>,
}

impl Program {
    pub fn instruction_count(&self) -> usize {
        self.cycles.len()
    }

    /// One line per instruction address: the three driver slots.
    pub fn listing(&self) -> String {
        let mut s = String::new();
        for (pc, c) in self.cycles.iter().enumerate() {
            let slots: Vec<String> = c
                .iter()
                .map(|i| i.unwrap_or_else(PimInstruction::nop).to_string())
                .collect();
            let _ = writeln!(s, "{pc:08X}: {}", slots.join(" | "));
        }
        s
    }

    fn field<'a>(list: &'a [NamedField], name: &str) -> Result<&'a NamedField, CompileError> {
        list.iter()
            .find(|f| f.name == name)
            .ok_or_else(|| CompileError::UnknownField(name.into()))
    }

    pub fn input(&self, name: &str) -> Result<&NamedField, CompileError> {
        Self::field(&self.inputs, name)
    }

    pub fn output(&self, name: &str) -> Result<&NamedField, CompileError> {
        Self::field(&self.outputs, name)
    }

    /// Write resident constants and per-lane inputs into a grid. Inputs
    /// given with a single value are broadcast to every lane.
    pub fn load(
        &self,
        grid: &mut ArrayGrid,
        inputs: &BTreeMap<String, Vec<u64>>,
    ) -> Result<(), CompileError> {
        for (f, vals) in &self.resident {
            self.load_field(grid, &f.cols, vals);
        }
        self.load_inputs(grid, inputs)
    }

    /// Write named inputs only, leaving resident constants alone.
    pub fn load_inputs(
        &self,
        grid: &mut ArrayGrid,
        inputs: &BTreeMap<String, Vec<u64>>,
    ) -> Result<(), CompileError> {
        for (name, vals) in inputs {
            let f = self.input(name)?;
            self.load_field(grid, &f.cols, vals);
        }
        Ok(())
    }

    fn load_field(&self, grid: &mut ArrayGrid, cols: &[u16], vals: &[u64]) {
        for lane in 0..self.layout.n {
            let v = if vals.len() == 1 { vals[0] } else { vals[lane] };
            let (ar, r) = self.layout.lane_position(lane);
            grid.load_bits(ar, r, cols, v);
        }
    }

    /// Read a designated output through the sense amplifiers.
    pub fn read_output(
        &self,
        grid: &ArrayGrid,
        name: &str,
    ) -> Result<(Vec<u64>, OpCounts), CompileError> {
        let f = self.output(name)?;
        let mut counts = OpCounts::default();
        let mut out = Vec::with_capacity(self.layout.n);
        for lane in 0..self.layout.n {
            let (ar, r) = self.layout.lane_position(lane);
            let (v, c) = grid.read_bits(ar, r, &f.cols)?;
            counts += c;
            out.push(v);
        }
        Ok((out, counts))
    }

    pub fn run(&self, grid: &mut ArrayGrid) -> Result<OpCounts, CompileError> {
        let mut total = OpCounts::default();
        for c in &self.cycles {
            total += grid.exec_cycle(c)?;
        }
        Ok(total)
    }

    /// Fresh grid, load, run.
    pub fn execute(
        &self,
        inputs: &BTreeMap<String, Vec<u64>>,
    ) -> Result<(ArrayGrid, OpCounts), CompileError> {
        let mut g = ArrayGrid::new();
        self.load(&mut g, inputs)?;
        let c = self.run(&mut g)?;
        Ok((g, c))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Divergence {
    pub field: String,
    pub lane: usize,
    pub bit: usize,
    pub got: u64,
    pub expected: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifyReport {
    pub program: String,
    pub cycles: usize,
    pub divergence: Option<Divergence>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.divergence.is_none()
    }
}

/// Run `prog` on a fresh grid and compare every expected output lane.
pub fn verify_program(
    prog: &Program,
    inputs: &BTreeMap<String, Vec<u64>>,
    expected: &BTreeMap<String, Vec<u64>>,
) -> Result<VerifyReport, CompileError> {
    let (grid, _) = prog.execute(inputs)?;
    let mut divergence = None;
    'outer: for (name, want) in expected {
        let (got, _) = prog.read_output(&grid, name)?;
        for (lane, (&g, &w)) in got.iter().zip(want).enumerate() {
            if g != w {
                let bit = (g ^ w).trailing_zeros() as usize;
                divergence = Some(Divergence {
                    field: name.clone(),
                    lane,
                    bit,
                    got: g,
                    expected: w,
                });
                break 'outer;
            }
        }
    }
    Ok(VerifyReport {
        program: prog.name.clone(),
        cycles: prog.cycles.len(),
        divergence,
    })
}

/// Reserved fields used for partner exchange; both live in array-column 1.
#[derive(Debug, Clone)]
struct Exchange {
    b: Vec<u16>,
    t: Vec<u16>,
}

pub struct Builder<'s> {
    sink: &'s mut dyn CycleSink,
    pub layout: Layout,
    free: [BTreeSet<u16>; GRID_COLS],
    refs: Vec<u32>,
    pending: Cycle,
    cycles: u64,
    rp: [bool; GRID_COLS],
    cp: [bool; GRID_COLS],
    col_mask_sel: Option<bool>,
    exchange: Option<Exchange>,
    inputs: Vec<NamedField>,
    resident: Vec<(NamedField, Vec<u64>)>,
    outputs: Vec<NamedField>,
    peak_cols: usize,
    /// Set once a temporary has been handed out; host-loaded fields must be
    /// declared before that or the program could clobber them.
    computing: bool,
}

impl<'s> Builder<'s> {
    /// Starts from a freshly reset grid (both parities 0) and enables the
    /// lane rows in every array-column.
    pub fn new(sink: &'s mut dyn CycleSink, layout: Layout) -> Result<Self, CompileError> {
        let free = std::array::from_fn(|k| {
            (0..MASK_BASE as u16)
                .map(|c| c + (k * ARRAY_DIM) as u16)
                .collect()
        });
        let mut b = Self {
            sink,
            layout,
            free,
            refs: vec![0; GRID_COLS * ARRAY_DIM],
            pending: [None; GRID_COLS],
            cycles: 0,
            rp: [false; GRID_COLS],
            cp: [false; GRID_COLS],
            col_mask_sel: None,
            exchange: None,
            inputs: vec![],
            resident: vec![],
            outputs: vec![],
            peak_cols: 0,
            computing: false,
        };
        b.setup_row_masks()?;
        Ok(b)
    }

    pub fn cycles(&self) -> u64 {
        self.cycles
    }

    pub fn peak_columns(&self) -> usize {
        self.peak_cols
    }

    fn in_use(&self) -> usize {
        GRID_COLS * MASK_BASE - self.free.iter().map(|f| f.len()).sum::<usize>()
    }

    fn emit(&mut self, slot: usize, ins: PimInstruction) -> Result<(), CompileError> {
        ins.validate(slot)?;
        if self.pending[slot].is_none() && self.pending.iter().any(|p| p.is_some()) {
            let mut c = self.pending;
            c[slot] = Some(ins);
            if validate_cycle(&c).is_ok() {
                self.pending = c;
                return Ok(());
            }
        }
        self.flush()?;
        self.pending[slot] = Some(ins);
        Ok(())
    }

    fn flush(&mut self) -> Result<(), CompileError> {
        if self.pending.iter().any(|p| p.is_some()) {
            self.sink.push(self.pending)?;
            self.cycles += 1;
            self.pending = [None; GRID_COLS];
        }
        Ok(())
    }

    /// Emit a standalone cycle (no packing).
    fn emit_alone(&mut self, cycle: Cycle) -> Result<(), CompileError> {
        self.flush()?;
        validate_cycle(&cycle)?;
        self.sink.push(cycle)?;
        self.cycles += 1;
        Ok(())
    }

    fn alloc_in(&mut self, k: usize) -> Result<u16, CompileError> {
        let c = self.free[k].pop_first().ok_or_else(|| {
            CompileError::Capacity(format!("array-column {k} has no free columns"))
        })?;
        self.refs[c as usize] = 1;
        self.peak_cols = self.peak_cols.max(self.in_use());
        Ok(c)
    }

    /// Allocate an output column reachable from every column in `near`,
    /// preferring the array-column holding most of them.
    fn alloc_near(&mut self, near: &[u16]) -> Result<u16, CompileError> {
        let ac: Vec<usize> = near.iter().map(|&c| c as usize / ARRAY_DIM).collect();
        let mut best: Option<(usize, usize, usize)> = None;
        for k in 0..GRID_COLS {
            if ac.iter().any(|&a| a.abs_diff(k) > 1) || self.free[k].is_empty() {
                continue;
            }
            let score = (ac.iter().filter(|&&a| a == k).count(), self.free[k].len());
            if best.is_none_or(|b| (score.0, score.1) > (b.1, b.2)) {
                best = Some((k, score.0, score.1));
            }
        }
        self.computing = true;
        match best {
            Some((k, _, _)) => self.alloc_in(k),
            None => Err(CompileError::Capacity(format!(
                "no free column adjacent to {near:?}"
            ))),
        }
    }

    fn retain(&mut self, b: Bit) -> Bit {
        if let Bit::Col(c) = b {
            self.refs[c as usize] += 1;
        }
        b
    }

    fn release(&mut self, b: Bit) {
        if let Bit::Col(c) = b {
            let r = &mut self.refs[c as usize];
            debug_assert!(*r > 0, "double release of column {c}");
            *r -= 1;
            if *r == 0 {
                self.free[c as usize / ARRAY_DIM].insert(c);
            }
        }
    }

    pub fn release_field(&mut self, f: &[Bit]) {
        for &b in f {
            self.release(b);
        }
    }

    fn retain_field(&mut self, f: &[Bit]) -> Field {
        f.iter().map(|&b| self.retain(b)).collect()
    }

    fn row_gate(&mut self, op: Opcode, a: u16, b: Option<u16>) -> Result<Bit, CompileError> {
        let near: Vec<u16> = std::iter::once(a).chain(b).collect();
        let out = self.alloc_near(&near)?;
        let ins = match b {
            Some(b) => PimInstruction::gate(op, a, b, out, Orientation::Row),
            None => PimInstruction::not(a, out, Orientation::Row),
        };
        self.emit(out as usize / ARRAY_DIM, ins)?;
        Ok(Bit::Col(out))
    }

    pub fn not(&mut self, a: Bit) -> Result<Bit, CompileError> {
        match a {
            Bit::Zero => Ok(Bit::One),
            Bit::One => Ok(Bit::Zero),
            Bit::Col(c) => self.row_gate(Opcode::Not, c, None),
        }
    }

    pub fn nand(&mut self, a: Bit, b: Bit) -> Result<Bit, CompileError> {
        match (a, b) {
            (Bit::Zero, _) | (_, Bit::Zero) => Ok(Bit::One),
            (Bit::One, x) | (x, Bit::One) => self.not(x),
            (Bit::Col(x), Bit::Col(y)) if x == y => self.not(a),
            (Bit::Col(x), Bit::Col(y)) => self.row_gate(Opcode::Nand, x, Some(y)),
        }
    }

    pub fn or(&mut self, a: Bit, b: Bit) -> Result<Bit, CompileError> {
        match (a, b) {
            (Bit::One, _) | (_, Bit::One) => Ok(Bit::One),
            (Bit::Zero, x) | (x, Bit::Zero) => Ok(self.retain(x)),
            (Bit::Col(x), Bit::Col(y)) if x == y => Ok(self.retain(a)),
            (Bit::Col(x), Bit::Col(y)) => self.row_gate(Opcode::Or, x, Some(y)),
        }
    }

    pub fn and(&mut self, a: Bit, b: Bit) -> Result<Bit, CompileError> {
        match (a, b) {
            (Bit::Zero, _) | (_, Bit::Zero) => Ok(Bit::Zero),
            (Bit::One, x) | (x, Bit::One) => Ok(self.retain(x)),
            (Bit::Col(x), Bit::Col(y)) if x == y => Ok(self.retain(a)),
            (Bit::Col(x), Bit::Col(y)) => self.row_gate(Opcode::And, x, Some(y)),
        }
    }

    /// `a ^ b` from four NANDs; also returns `nand(a, b)` for reuse.
    fn xor_nand(&mut self, a: Bit, b: Bit) -> Result<(Bit, Bit), CompileError> {
        let n1 = self.nand(a, b)?;
        let n2 = self.nand(a, n1)?;
        let n3 = self.nand(b, n1)?;
        let x = self.nand(n2, n3)?;
        self.release(n2);
        self.release(n3);
        Ok((x, n1))
    }

    /// Sum and carry of three bits; constants fold to half adders.
    fn full_add(
        &mut self,
        a: Bit,
        b: Bit,
        c: Bit,
        want_carry: bool,
    ) -> Result<(Bit, Bit), CompileError> {
        let ones = [a, b, c].iter().filter(|&&x| x == Bit::One).count();
        let vars: Vec<Bit> = [a, b, c]
            .into_iter()
            .filter(|x| matches!(x, Bit::Col(_)))
            .collect();
        match vars.len() {
            0 => Ok((Bit::konst(ones % 2 == 1), Bit::konst(ones >= 2))),
            1 => {
                let x = vars[0];
                Ok(match ones {
                    0 => (self.retain(x), Bit::Zero),
                    1 => {
                        let s = self.not(x)?;
                        (
                            s,
                            if want_carry {
                                self.retain(x)
                            } else {
                                Bit::Zero
                            },
                        )
                    }
                    _ => (self.retain(x), Bit::One),
                })
            }
            2 => {
                let (x, y) = (vars[0], vars[1]);
                let (s, n1) = self.xor_nand(x, y)?;
                if ones == 0 {
                    let carry = if want_carry { self.not(n1)? } else { Bit::Zero };
                    self.release(n1);
                    Ok((s, carry))
                } else {
                    let sum = self.not(s)?;
                    self.release(s);
                    self.release(n1);
                    let carry = if want_carry {
                        self.or(x, y)?
                    } else {
                        Bit::Zero
                    };
                    Ok((sum, carry))
                }
            }
            _ => {
                let (s1, n1) = self.xor_nand(a, b)?;
                let n4 = self.nand(s1, c)?;
                let n5 = self.nand(s1, n4)?;
                let n6 = self.nand(c, n4)?;
                let sum = self.nand(n5, n6)?;
                self.release(n5);
                self.release(n6);
                self.release(s1);
                let carry = if want_carry {
                    self.nand(n1, n4)?
                } else {
                    Bit::Zero
                };
                self.release(n1);
                self.release(n4);
                Ok((sum, carry))
            }
        }
    }

    /// `(a + b + cin) mod 2^width`.
    pub fn add(
        &mut self,
        a: &[Bit],
        b: &[Bit],
        cin: Bit,
        width: usize,
    ) -> Result<Field, CompileError> {
        let mut carry = self.retain(cin);
        let mut out = Vec::with_capacity(width);
        for i in 0..width {
            let (s, c) = self.full_add(get(a, i), get(b, i), carry, i + 1 < width)?;
            self.release(carry);
            carry = c;
            out.push(s);
        }
        self.release(carry);
        Ok(out)
    }

    /// `(a - b) mod 2^width`.
    pub fn sub(&mut self, a: &[Bit], b: &[Bit], width: usize) -> Result<Field, CompileError> {
        let mut nb = Vec::with_capacity(width);
        for i in 0..width {
            nb.push(self.not(get(b, i))?);
        }
        let r = self.add(a, &nb, Bit::One, width);
        self.release_field(&nb);
        r
    }

    fn shifted(&mut self, x: &[Bit], s: usize) -> Field {
        let mut f = vec![Bit::Zero; s];
        f.extend(self.retain_field(x));
        f
    }

    /// `(x * m) mod 2^width` by shift-and-add over the set bits of `m`.
    pub fn mul_const(&mut self, x: &[Bit], m: u128, width: usize) -> Result<Field, CompileError> {
        let mut acc: Option<Field> = None;
        for s in (0..128).filter(|&s| (m >> s) & 1 == 1) {
            if s >= width {
                break;
            }
            let mut term = self.shifted(x, s);
            let dropped = term.split_off(term.len().min(width));
            self.release_field(&dropped);
            acc = Some(match acc {
                None => term,
                Some(a) => {
                    let r = self.add(&a, &term, Bit::Zero, width)?;
                    self.release_field(&a);
                    self.release_field(&term);
                    r
                }
            });
        }
        Ok(acc.unwrap_or_default())
    }

    /// `(a * b) mod 2^width`, one partial product per bit of `b`.
    pub fn mul(&mut self, a: &[Bit], b: &[Bit], width: usize) -> Result<Field, CompileError> {
        let mut acc: Option<Field> = None;
        for (i, &bi) in b.iter().enumerate() {
            if i >= width || bi == Bit::Zero {
                continue;
            }
            let mut pp = vec![Bit::Zero; i];
            for &aj in a.iter().take(width - i) {
                pp.push(self.and(aj, bi)?);
            }
            acc = Some(match acc {
                None => pp,
                Some(prev) => {
                    let r = self.add(&prev, &pp, Bit::Zero, width)?;
                    self.release_field(&prev);
                    self.release_field(&pp);
                    r
                }
            });
        }
        Ok(acc.unwrap_or_default())
    }

    /// Per-bit `s ? x : y` over `width` bits.
    pub fn mux(
        &mut self,
        s: Bit,
        x: &[Bit],
        y: &[Bit],
        width: usize,
    ) -> Result<Field, CompileError> {
        match s {
            Bit::One => return Ok(self.retain_field(&x[..width.min(x.len())])),
            Bit::Zero => return Ok(self.retain_field(&y[..width.min(y.len())])),
            Bit::Col(_) => {}
        }
        let ns = self.not(s)?;
        let mut out = Vec::with_capacity(width);
        for i in 0..width {
            let (xi, yi) = (get(x, i), get(y, i));
            if xi == yi {
                out.push(self.retain(xi));
                continue;
            }
            let t1 = self.nand(s, xi)?;
            let t2 = self.nand(ns, yi)?;
            out.push(self.nand(t1, t2)?);
            self.release(t1);
            self.release(t2);
        }
        self.release(ns);
        Ok(out)
    }

    /// On-grid counterpart of [`ShiftAddSchedule::reduce`]: `x < q^2` to
    /// `x mod q` in `bits` columns.
    pub fn reduce(&mut self, x: &[Bit], s: &ShiftAddSchedule) -> Result<Field, CompileError> {
        let bits = s.bits as usize;
        let m_width = 64 - s.m.leading_zeros() as usize;
        let prod = self.mul_const(x, s.m as u128, x.len() + m_width)?;
        let qhat: Field = self.retain_field(prod.get(s.k as usize..).unwrap_or(&[]));
        self.release_field(&prod);
        let rw = bits + 2;
        let back = self.mul_const(&qhat, s.q as u128, rw)?;
        self.release_field(&qhat);
        let r = self.sub(x, &back, rw)?;
        self.release_field(&back);
        let d = self.sub(&r, &const_field(s.q, rw), rw)?;
        let out = self.mux(d[rw - 1], &r, &d, bits);
        self.release_field(&r);
        self.release_field(&d);
        out
    }

    /// `(a + b) mod q` for reduced operands.
    pub fn add_mod(&mut self, a: &[Bit], b: &[Bit], q: u64) -> Result<Field, CompileError> {
        let bits = 64 - q.leading_zeros() as usize;
        let s = self.add(a, b, Bit::Zero, bits + 1)?;
        let d = self.sub(&s, &const_field(q, bits + 2), bits + 2)?;
        let out = self.mux(d[bits + 1], &s, &d, bits);
        self.release_field(&s);
        self.release_field(&d);
        out
    }

    /// `(a - b) mod q` for reduced operands.
    pub fn sub_mod(&mut self, a: &[Bit], b: &[Bit], q: u64) -> Result<Field, CompileError> {
        let bits = 64 - q.leading_zeros() as usize;
        let d = self.sub(a, b, bits + 1)?;
        let e = self.add(&d, &const_field(q, bits), Bit::Zero, bits)?;
        let out = self.mux(d[bits], &e, &d, bits);
        self.release_field(&d);
        self.release_field(&e);
        out
    }

    /// Modular product of reduced operands.
    pub fn mul_mod(
        &mut self,
        a: &[Bit],
        b: &[Bit],
        s: &ShiftAddSchedule,
    ) -> Result<Field, CompileError> {
        let p = self.mul(a, b, 2 * s.bits as usize)?;
        let r = self.reduce(&p, s);
        self.release_field(&p);
        r
    }

    /// Copy a field into array-column 0 so it can be read out.
    pub fn to_readout(&mut self, f: &[Bit]) -> Result<Field, CompileError> {
        let mut out = Vec::with_capacity(f.len());
        for &b in f {
            let col = self.alloc_in(0)?;
            match b {
                Bit::Col(c) => {
                    // the temporary must be adjacent to both ends
                    let k = if (c as usize) < ARRAY_DIM && !self.free[0].is_empty() {
                        0
                    } else {
                        1
                    };
                    let t = self.alloc_in(k)?;
                    self.emit(k, PimInstruction::not(c, t, Orientation::Row))?;
                    self.emit(0, PimInstruction::not(t, col, Orientation::Row))?;
                    self.release(Bit::Col(t));
                }
                k => self.emit(
                    0,
                    PimInstruction::preset(k == Bit::One, col, Orientation::Row),
                )?,
            }
            out.push(Bit::Col(col));
        }
        Ok(out)
    }

    /// Host-written input field; `array_col` pins it (0 for encoder data).
    pub fn input(
        &mut self,
        name: &str,
        width: usize,
        array_col: Option<usize>,
    ) -> Result<Field, CompileError> {
        let cols = self.alloc_fixed(width, array_col)?;
        self.inputs.push(NamedField {
            name: name.into(),
            cols: cols.clone(),
        });
        Ok(cols.into_iter().map(Bit::Col).collect())
    }

    fn alloc_fixed(
        &mut self,
        width: usize,
        array_col: Option<usize>,
    ) -> Result<Vec<u16>, CompileError> {
        if self.computing {
            return Err(CompileError::Layout(
                "host-loaded fields must be declared before computation".into(),
            ));
        }
        let k = match array_col {
            Some(k) => k,
            None => (0..GRID_COLS)
                .max_by_key(|&k| (self.free[k].len(), GRID_COLS - k))
                .unwrap_or(0),
        };
        (0..width).map(|_| self.alloc_in(k)).collect()
    }

    /// Deployment-time constant field with one value per lane.
    pub fn resident(
        &mut self,
        name: &str,
        values: Vec<u64>,
        width: usize,
        array_col: Option<usize>,
    ) -> Result<Field, CompileError> {
        let cols = self.alloc_fixed(width, array_col)?;
        self.resident.push((
            NamedField {
                name: name.into(),
                cols: cols.clone(),
            },
            values,
        ));
        Ok(cols.into_iter().map(Bit::Col).collect())
    }

    pub fn output(&mut self, name: &str, f: &[Bit]) -> Result<(), CompileError> {
        let cols: Vec<u16> = f
            .iter()
            .map(|b| b.col().expect("readout fields are materialized"))
            .collect();
        if cols.iter().any(|&c| c as usize >= ARRAY_DIM) {
            return Err(CompileError::Layout(format!(
                "output {name} is not in array-column 0"
            )));
        }
        self.outputs.push(NamedField {
            name: name.into(),
            cols,
        });
        Ok(())
    }

    /// Write the row-activation masks (lane rows of used arrays) into the
    /// invalid copy of every array-column and switch to it.
    fn setup_row_masks(&mut self) -> Result<(), CompileError> {
        let lanes = self.layout.lanes_per_array as u16;
        let arrays: Vec<Option<u16>> = if self.layout.arrays_used() == GRID_ROWS {
            vec![None]
        } else {
            (0..self.layout.arrays_used() as u16).map(Some).collect()
        };
        let lines: [u16; GRID_COLS] =
            std::array::from_fn(|k| (k * ARRAY_DIM + MASK_BASE + !self.rp[k] as usize) as u16);
        self.emit_alone(lines.map(|l| {
            Some(PimInstruction::preset_line(
                false,
                l,
                None,
                Orientation::Row,
            ))
        }))?;
        for &a in &arrays {
            for r in 0..lanes {
                self.emit_alone(
                    lines.map(|l| {
                        Some(PimInstruction::preset_cell(true, l, r, a, Orientation::Row))
                    }),
                )?;
            }
        }
        let np: [bool; GRID_COLS] = std::array::from_fn(|k| !self.rp[k]);
        self.emit_alone(std::array::from_fn(|k| {
            Some(PimInstruction::activate(
                Orientation::Row,
                Some(np[k]),
                None,
            ))
        }))?;
        self.rp = np;
        Ok(())
    }

    /// Write one column-mask copy in array-column 1 (must be the invalid
    /// one) and make it valid.
    fn write_col_mask(&mut self, copy: bool, cols: &[u16]) -> Result<(), CompileError> {
        const K: usize = 1;
        debug_assert_ne!(self.cp[K], copy);
        let line = (MASK_BASE + copy as usize) as u16;
        let one = |i: PimInstruction| -> Cycle {
            let mut c: Cycle = [None; GRID_COLS];
            c[K] = Some(i);
            c
        };
        let c = one(PimInstruction::preset_line(
            false,
            line,
            None,
            Orientation::Col,
        ));
        self.emit_alone(c)?;
        for &col in cols {
            let local = col % ARRAY_DIM as u16;
            let c = one(PimInstruction::preset_cell(
                true,
                line,
                local,
                None,
                Orientation::Col,
            ));
            self.emit_alone(c)?;
        }
        let c = one(PimInstruction::activate(Orientation::Col, Some(copy), None));
        self.emit_alone(c)?;
        self.cp[K] = copy;
        self.col_mask_sel = Some(copy);
        Ok(())
    }

    /// Switch array-column 1's column latches to copy `copy`.
    fn select_col_mask(&mut self, copy: bool) -> Result<(), CompileError> {
        if self.col_mask_sel != Some(copy) {
            let mut c: Cycle = [None; GRID_COLS];
            c[1] = Some(PimInstruction::activate(Orientation::Col, Some(copy), None));
            self.emit_alone(c)?;
            self.cp[1] = copy;
            self.col_mask_sel = Some(copy);
        }
        Ok(())
    }

    /// Reserve the exchange fields for `width`-bit values and program the
    /// two column masks selecting them. Both are cleared in every array.
    fn ensure_exchange(&mut self, width: usize) -> Result<(), CompileError> {
        if let Some(e) = &self.exchange {
            if e.b.len() >= width {
                return Ok(());
            }
            return Err(CompileError::Layout(
                "exchange fields already reserved narrower".into(),
            ));
        }
        let b = (0..width)
            .map(|_| self.alloc_in(1))
            .collect::<Result<Vec<_>, _>>()?;
        let t = (0..width)
            .map(|_| self.alloc_in(1))
            .collect::<Result<Vec<_>, _>>()?;
        for &c in b.iter().chain(&t) {
            let mut cy: Cycle = [None; GRID_COLS];
            cy[1] = Some(PimInstruction::preset_line(
                false,
                c,
                None,
                Orientation::Row,
            ));
            self.emit_alone(cy)?;
        }
        // copy 1 first: copy 0 is valid on a fresh grid
        self.write_col_mask(true, &t)?;
        self.write_col_mask(false, &b)?;
        self.exchange = Some(Exchange { b, t });
        Ok(())
    }

    fn col_not(&mut self, src: u16, dst: u16) -> Result<(), CompileError> {
        let mut c: Cycle = [None; GRID_COLS];
        c[1] = Some(PimInstruction::not(src, dst, Orientation::Col));
        self.emit_alone(c)
    }

    /// Write `NOT x` into a reserved exchange field.
    fn fill_inverted(&mut self, x: &[Bit], dst: &[u16]) -> Result<(), CompileError> {
        for (i, &d) in dst.iter().enumerate().take(x.len()) {
            let ins = match x[i] {
                Bit::Col(c) => PimInstruction::not(c, d, Orientation::Row),
                k => PimInstruction::preset(k == Bit::Zero, d, Orientation::Row),
            };
            self.emit(1, ins)?;
        }
        Ok(())
    }

    /// Chain of inverting vertical hops moving row `r` by `dist` arrays
    /// (from below when `from_below`), landing back in row `r` with the
    /// original polarity.
    fn hop_chain(&mut self, r: u16, dist: usize, from_below: bool) -> Result<(), CompileError> {
        let flag = if from_below {
            NEIGHBOR_DOWN
        } else {
            NEIGHBOR_UP
        };
        let s = [self.layout.scratch_row(0), self.layout.scratch_row(1)];
        let odd = dist % 2 == 1;
        let mut src = r;
        for h in 1..=dist {
            let dst = if h == dist && !odd { r } else { s[(h - 1) % 2] };
            self.col_not(src | flag, dst)?;
            src = dst;
        }
        if odd {
            self.col_not(src, r)?;
        }
        Ok(())
    }

    /// Value of `x` at each lane's butterfly partner (`lane ^ stride`).
    pub fn partner(&mut self, x: &[Bit], stride: usize, top: Bit) -> Result<Field, CompileError> {
        let w = x.len();
        self.ensure_exchange(w)?;
        let ex = self.exchange.clone().expect("reserved");
        let lanes = self.layout.lanes_per_array;
        let pn: Field = if stride < lanes {
            self.select_col_mask(false)?;
            self.fill_inverted(x, &ex.b)?;
            self.flush()?;
            let (s0, s1) = (self.layout.scratch_row(0), self.layout.scratch_row(1));
            for r in (0..lanes).filter(|r| r & stride == 0) {
                let (r, p) = (r as u16, (r + stride) as u16);
                self.col_not(r, s0)?;
                self.col_not(p, s1)?;
                self.col_not(s1, r)?;
                self.col_not(s0, p)?;
            }
            ex.b[..w]
                .iter()
                .map(|&c| self.retain(Bit::Col(c)))
                .collect()
        } else {
            let dist = stride / lanes;
            self.fill_inverted(x, &ex.b)?;
            self.fill_inverted(x, &ex.t)?;
            self.flush()?;
            self.select_col_mask(false)?;
            for r in 0..lanes as u16 {
                self.hop_chain(r, dist, true)?;
            }
            self.select_col_mask(true)?;
            for r in 0..lanes as u16 {
                self.hop_chain(r, dist, false)?;
            }
            let b: Field = ex.b[..w].iter().map(|&c| Bit::Col(c)).collect();
            let t: Field = ex.t[..w].iter().map(|&c| Bit::Col(c)).collect();
            self.mux(top, &b, &t, w)?
        };
        let mut p = Vec::with_capacity(w);
        for &b in &pn {
            p.push(self.not(b)?);
        }
        // reserved columns keep their base reference and are never freed
        self.release_field(&pn);
        Ok(p)
    }

    pub fn finish(mut self, name: &str) -> Result<ProgramParts, CompileError> {
        self.flush()?;
        Ok(ProgramParts {
            name: name.into(),
            layout: self.layout,
            inputs: self.inputs,
            resident: self.resident,
            outputs: self.outputs,
            cycles: self.cycles,
            peak_columns: self.peak_cols,
        })
    }
}

/// Everything but the cycle stream, which went to the sink.
#[derive(Debug, Clone)]
pub struct ProgramParts {
    pub name: String,
    pub layout: Layout,
    pub inputs: Vec<NamedField>,
    pub resident: Vec<(NamedField, Vec<u64>)>,
    pub outputs: Vec<NamedField>,
    pub cycles: u64,
    pub peak_columns: usize,
}

impl ProgramParts {
    fn into_program(self, cycles: Vec<Cycle>) -> Program {
        Program {
            name: self.name,
            layout: self.layout,
            cycles,
            inputs: self.inputs,
            resident: self.resident,
            outputs: self.outputs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Inverse,
}

fn bit_width(q: u64) -> usize {
    64 - q.leading_zeros() as usize
}

/// Per-stage staged constants: multiplier and top flag for every lane.
fn stage_constants(tables: &NttTables, dir: Direction) -> Vec<(usize, Vec<u64>, Vec<u64>)> {
    let n = tables.len();
    let q = tables.modulus();
    let mut out = vec![];
    match dir {
        Direction::Forward => {
            let (mut t, mut m) = (n, 1);
            while m < n {
                t /= 2;
                let mut c = vec![0; n];
                let mut top = vec![0; n];
                for (j, (cj, tj)) in c.iter_mut().zip(top.iter_mut()).enumerate() {
                    let w = tables.twiddles()[m + j / (2 * t)];
                    let is_top = j & t == 0;
                    *tj = is_top as u64;
                    *cj = if is_top { w } else { (q - w) % q };
                }
                out.push((t, c, top));
                m *= 2;
            }
        }
        Direction::Inverse => {
            let (mut t, mut m) = (1, n);
            while m > 1 {
                let h = m / 2;
                let last = h == 1;
                let mut c = vec![0; n];
                let mut top = vec![0; n];
                for (j, (cj, tj)) in c.iter_mut().zip(top.iter_mut()).enumerate() {
                    let w = tables.inv_twiddles()[h + j / (2 * t)];
                    let is_top = j & t == 0;
                    *tj = is_top as u64;
                    let base = if is_top { 1 } else { w };
                    *cj = if last {
                        crate::modarith::mul_mod(base, tables.n_inv(), q)
                    } else {
                        base
                    };
                }
                out.push((t, c, top));
                t *= 2;
                m = h;
            }
        }
    }
    out
}

/// Staged NTT constants as resident fields.
pub struct StagedTwiddles {
    stages: Vec<(usize, Field, Bit)>,
}

impl StagedTwiddles {
    pub fn stage(
        b: &mut Builder,
        tables: &NttTables,
        dir: Direction,
        tag: &str,
    ) -> Result<Self, CompileError> {
        let bits = bit_width(tables.modulus());
        let mut stages = vec![];
        for (s, (t, c, top)) in stage_constants(tables, dir).into_iter().enumerate() {
            let cf = b.resident(&format!("{tag}.c{s}"), c, bits, None)?;
            let tf = b.resident(&format!("{tag}.top{s}"), top, 1, None)?;
            stages.push((t, cf, tf[0]));
        }
        Ok(Self { stages })
    }
}

/// Emit an NTT over the lane field `x`; the result follows the functional
/// engine's ordering exactly.
pub fn lower_ntt(
    b: &mut Builder,
    x: &[Bit],
    tables: &NttTables,
    sched: &ShiftAddSchedule,
    staged: &StagedTwiddles,
    dir: Direction,
) -> Result<Field, CompileError> {
    if tables.len() != b.layout.n {
        return Err(CompileError::Layout(format!(
            "NTT length {} on a {}-lane layout",
            tables.len(),
            b.layout.n
        )));
    }
    let q = tables.modulus();
    let mut cur = b.retain_field(x);
    for (t, c, top) in &staged.stages {
        let p = b.partner(&cur, *t, *top)?;
        let next = match dir {
            Direction::Forward => {
                let m = b.mux(*top, &p, &cur, cur.len())?;
                let a = b.mux(*top, &cur, &p, cur.len())?;
                let v = b.mul_mod(&m, c, sched)?;
                let r = b.add_mod(&a, &v, q)?;
                b.release_field(&m);
                b.release_field(&a);
                b.release_field(&v);
                r
            }
            Direction::Inverse => {
                let s = b.add_mod(&cur, &p, q)?;
                let d = b.sub_mod(&p, &cur, q)?;
                let dd = b.mux(*top, &s, &d, cur.len())?;
                let r = b.mul_mod(&dd, c, sched)?;
                b.release_field(&s);
                b.release_field(&d);
                b.release_field(&dd);
                r
            }
        };
        b.release_field(&p);
        b.release_field(&cur);
        cur = next;
    }
    Ok(cur)
}

/// Compile a program into memory (desk sizes).
pub fn build_program<F>(layout: Layout, name: &str, body: F) -> Result<Program, CompileError>
where
    F: FnOnce(&mut Builder) -> Result<(), CompileError>,
{
    let mut cycles: Vec<Cycle> = vec![];
    let parts = {
        let mut b = Builder::new(&mut cycles, layout)?;
        body(&mut b)?;
        b.finish(name)?
    };
    Ok(parts.into_program(cycles))
}

/// Compile straight into a counting sink (any size).
pub fn count_program<F>(
    layout: Layout,
    name: &str,
    body: F,
) -> Result<(ProgramParts, CostTrace), CompileError>
where
    F: FnOnce(&mut Builder) -> Result<(), CompileError>,
{
    let mut sink = CountingSink::default();
    let parts = {
        let mut b = Builder::new(&mut sink, layout)?;
        body(&mut b)?;
        b.finish(name)?
    };
    Ok((parts, sink.trace))
}

pub fn ntt_body(
    tables: &NttTables,
    dir: Direction,
) -> impl FnOnce(&mut Builder) -> Result<(), CompileError> + '_ {
    move |b| {
        let q = tables.modulus();
        let sched = ShiftAddSchedule::new(q)?;
        let bits = bit_width(q);
        let x = b.input("x", bits, None)?;
        let staged = StagedTwiddles::stage(b, tables, dir, "tw")?;
        let y = lower_ntt(b, &x, tables, &sched, &staged, dir)?;
        let out = b.to_readout(&y)?;
        b.release_field(&y);
        b.output("y", &out)
    }
}

pub fn compile_ntt(
    tables: &NttTables,
    layout: Layout,
    dir: Direction,
) -> Result<Program, CompileError> {
    build_program(layout, "ntt", ntt_body(tables, dir))
}

/// NTT, pointwise product, inverse NTT: negacyclic `a * b mod q`.
pub fn poly_mult_body(
    tables: &NttTables,
) -> impl FnOnce(&mut Builder) -> Result<(), CompileError> + '_ {
    move |b| {
        let q = tables.modulus();
        let sched = ShiftAddSchedule::new(q)?;
        let bits = bit_width(q);
        let x = b.input("a", bits, None)?;
        let y = b.input("b", bits, None)?;
        let fwd = StagedTwiddles::stage(b, tables, Direction::Forward, "fw")?;
        let inv = StagedTwiddles::stage(b, tables, Direction::Inverse, "iw")?;
        let fx = lower_ntt(b, &x, tables, &sched, &fwd, Direction::Forward)?;
        let fy = lower_ntt(b, &y, tables, &sched, &fwd, Direction::Forward)?;
        let prod = b.mul_mod(&fx, &fy, &sched)?;
        b.release_field(&fx);
        b.release_field(&fy);
        let c = lower_ntt(b, &prod, tables, &sched, &inv, Direction::Inverse)?;
        b.release_field(&prod);
        let out = b.to_readout(&c)?;
        b.release_field(&c);
        b.output("c", &out)
    }
}

pub fn compile_poly_mult(tables: &NttTables, layout: Layout) -> Result<Program, CompileError> {
    build_program(layout, "polymult", poly_mult_body(tables))
}

/// Shape of the linear SVM phase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SvmLinearSpec {
    pub classes: usize,
    pub dimension: usize,
    pub primes: Vec<u64>,
    /// Ciphertext parts per model entry.
    pub parts: usize,
    /// Give every class/dimension its own resident field. When false, all
    /// model and input data share one staging field per part and prime;
    /// only useful for counting.
    pub resident_model: bool,
}

pub fn svm_ct_name(c: usize, d: usize, p: usize, i: usize) -> String {
    format!("ct.c{c}.d{d}.p{p}.q{i}")
}

pub fn svm_x_name(d: usize) -> String {
    format!("x.d{d}")
}

pub fn svm_out_name(c: usize, p: usize, i: usize) -> String {
    format!("acc.c{c}.p{p}.q{i}")
}

/// Largest quantized input value.
const X_MAX: u64 = 7;
const X_BITS: usize = 3;

/// For every class: `acc = sum_d x_d * ct_{c,d}` per part and prime, with
/// lazy reduction, then a readout copy of `acc mod q`.
pub fn svm_linear_body(
    spec: &SvmLinearSpec,
) -> impl FnOnce(&mut Builder) -> Result<(), CompileError> + '_ {
    move |b| {
        let scheds: Vec<ShiftAddSchedule> = spec
            .primes
            .iter()
            .map(|&q| ShiftAddSchedule::new(q))
            .collect::<Result<_, _>>()?;
        let mut xs: Vec<Field> = vec![];
        for d in 0..spec.dimension {
            if spec.resident_model || d == 0 {
                xs.push(b.input(&svm_x_name(d), X_BITS, Some(0))?);
            }
        }
        let mut cts: BTreeMap<(usize, usize, usize, usize), Field> = BTreeMap::new();
        for c in 0..spec.classes {
            for d in 0..spec.dimension {
                for p in 0..spec.parts {
                    for (i, s) in scheds.iter().enumerate() {
                        if spec.resident_model || (c, d) == (0, 0) {
                            let f = b.input(&svm_ct_name(c, d, p, i), s.bits as usize, None)?;
                            cts.insert((c, d, p, i), f);
                        }
                    }
                }
            }
        }
        for c in 0..spec.classes {
            for p in 0..spec.parts {
                for (i, s) in scheds.iter().enumerate() {
                    let bits = s.bits as usize;
                    let q2 = (s.q as u128) * (s.q as u128);
                    let width = 2 * bits;
                    let mut acc: Field = vec![];
                    let mut bound: u128 = 0;
                    for d in 0..spec.dimension {
                        let key = if spec.resident_model {
                            (c, d, p, i)
                        } else {
                            (0, 0, p, i)
                        };
                        let ct = cts[&key].clone();
                        let x = xs[if spec.resident_model { d } else { 0 }].clone();
                        let term_max = X_MAX as u128 * (s.q as u128 - 1);
                        if bound + term_max >= q2 {
                            let r = b.reduce(&acc, s)?;
                            b.release_field(&acc);
                            acc = r;
                            bound = s.q as u128 - 1;
                        }
                        let prod = b.mul(&ct, &x, bits + X_BITS)?;
                        let next = b.add(&acc, &prod, Bit::Zero, width)?;
                        b.release_field(&prod);
                        b.release_field(&acc);
                        acc = next;
                        bound += term_max;
                    }
                    let r = b.reduce(&acc, s)?;
                    b.release_field(&acc);
                    let out = b.to_readout(&r)?;
                    b.release_field(&r);
                    b.output(&svm_out_name(c, p, i), &out)?;
                    if !spec.resident_model {
                        b.release_field(&out);
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn compile_svm_linear(spec: &SvmLinearSpec, layout: Layout) -> Result<Program, CompileError> {
    let bits = spec.primes.iter().map(|&q| bit_width(q)).max().unwrap_or(0);
    if spec.resident_model {
        plan_layout(
            layout,
            spec.primes.len(),
            bits,
            Workload::SvmLinear {
                classes: spec.classes,
                dimension: spec.dimension,
            },
        )?;
    }
    build_program(layout, "svm-linear", svm_linear_body(spec))
}

/// Shape of the linear phase for an encrypted model.
pub fn svm_spec_for(
    em: &EncryptedModel,
    resident_model: bool,
) -> Result<SvmLinearSpec, CompileError> {
    let first = em
        .classes
        .first()
        .and_then(|c| c.first())
        .ok_or(SvmError::Empty)?;
    Ok(SvmLinearSpec {
        classes: em.classes.len(),
        dimension: em.classes[0].len(),
        primes: first.params().rns_primes().to_vec(),
        parts: first.degree(),
        resident_model,
    })
}

/// Program inputs: model residues per lane and the broadcast features.
pub fn svm_inputs(em: &EncryptedModel, x: &[u8]) -> BTreeMap<String, Vec<u64>> {
    let mut m = BTreeMap::new();
    for (c, cts) in em.classes.iter().enumerate() {
        for (d, ct) in cts.iter().enumerate() {
            for (p, part) in ct.parts.iter().enumerate() {
                for (i, res) in part.residues.iter().enumerate() {
                    m.insert(svm_ct_name(c, d, p, i), res.clone());
                }
            }
        }
    }
    for (d, &xd) in x.iter().enumerate() {
        m.insert(svm_x_name(d), vec![xd as u64]);
    }
    m
}

/// Run the linear phase on the grid. Ciphertext data comes from the grid
/// readout; the noise bookkeeping follows the same operation sequence as
/// the functional path.
pub fn grid_linear_phase(
    prog: &Program,
    em: &EncryptedModel,
    x: &[u8],
) -> Result<(PartialResult, OpCounts), CompileError> {
    let mut pr = rodent_linear_phase(em, x)?;
    let (grid, mut counts) = prog.execute(&svm_inputs(em, x))?;
    for (c, ct) in pr.per_class.iter_mut().enumerate() {
        for (p, part) in ct.parts.iter_mut().enumerate() {
            for (i, res) in part.residues.iter_mut().enumerate() {
                let (v, rc) = prog.read_output(&grid, &svm_out_name(c, p, i))?;
                counts += rc;
                *res = v;
            }
        }
    }
    Ok((pr, counts))
}
