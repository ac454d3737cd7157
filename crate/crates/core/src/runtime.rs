//! Harvested-power execution: a capacitor model, the controller state
//! machine with parity-protected registers, packet buffers, atomic
//! encoding and per-instruction commits.
//!
//! Energy is debited per discrete action (packet, encode, instruction,
//! commit, register write, restore). An action that needs more than the
//! capacitor holds plus what is harvested during it fails part way; its
//! partial draw is charged as dead energy and the device powers off until
//! the capacitor is back at `v_on`.

use crate::compiler::{CompileError, Program};
use crate::pim::{ArrayGrid, DataMode, EnergyLedger, EnergyModel, OpCounts, PimError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};

#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error("{phase:?} step needs {need_j:.3e} J but a full charge holds {have_j:.3e} J: it can never complete")]
    Livelock {
        phase: Phase,
        need_j: f64,
        have_j: f64,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Pim(#[from] PimError),
    #[error(transparent)]
    Compile(#[from] CompileError),
}

/// Constant power source feeding a capacitor between two thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarvesterConfig {
    pub power: f64,
    #[serde(default = "default_capacitance")]
    pub capacitance: f64,
    pub v_on: f64,
    pub v_off: f64,
    pub clock_hz: f64,
    #[serde(default = "default_efficiency")]
    pub converter_efficiency: f64,
}

fn default_capacitance() -> f64 {
    1e-3
}

fn default_efficiency() -> f64 {
    1.0
}

impl HarvesterConfig {
    pub fn modern(power: f64) -> Self {
        Self {
            power,
            capacitance: 1e-3,
            v_on: 0.700,
            v_off: 0.400,
            clock_hz: 30.3e6,
            converter_efficiency: 1.0,
        }
    }

    pub fn projected(power: f64) -> Self {
        Self {
            power,
            capacitance: 1e-3,
            v_on: 0.575,
            v_off: 0.100,
            clock_hz: 90.9e6,
            converter_efficiency: 1.0,
        }
    }

    pub fn for_profile(name: &str, power: f64) -> Option<Self> {
        match name {
            "modern" => Some(Self::modern(power)),
            "projected" => Some(Self::projected(power)),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), RuntimeError> {
        let bad = |m: &str| Err(RuntimeError::Config(m.into()));
        if !(self.power > 0.0) {
            return bad("power must be positive");
        }
        if !(self.v_on > self.v_off && self.v_off > 0.0) {
            return bad("need v_on > v_off > 0");
        }
        if !(self.capacitance > 0.0 && self.clock_hz > 0.0) {
            return bad("capacitance and clock must be positive");
        }
        if !(self.converter_efficiency > 0.0 && self.converter_efficiency <= 1.0) {
            return bad("converter efficiency must be in (0, 1]");
        }
        Ok(())
    }

    /// Energy released between `v_on` and `v_off`.
    pub fn usable_energy(&self) -> f64 {
        0.5 * self.capacitance * (self.v_on * self.v_on - self.v_off * self.v_off)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Idle,
    Receive,
    Encode,
    Compute,
    Transmit,
}

/// How a register update was cut short.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WriteFault {
    /// Power failed while the spare copy was being written.
    Torn,
    /// The spare copy is complete but the parity bit was not flipped.
    BeforeFlip,
}

/// A non-volatile register kept as two copies and a parity bit that
/// selects the valid one. Updates go to the other copy; the parity flip
/// publishes them.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Duplicated<T> {
    copies: [Option<T>; 2],
    parity: bool,
}

impl<T: Copy> Duplicated<T> {
    fn new(v: T) -> Self {
        Self {
            copies: [Some(v), Some(v)],
            parity: false,
        }
    }

    fn get(&self) -> T {
        self.copies[self.parity as usize].expect("the valid copy is never torn")
    }

    fn readable(&self) -> bool {
        self.copies[self.parity as usize].is_some()
    }

    fn write(&mut self, v: T, fault: Option<WriteFault>) -> bool {
        let spare = !self.parity as usize;
        self.copies[spare] = None;
        if fault == Some(WriteFault::Torn) {
            return false;
        }
        self.copies[spare] = Some(v);
        if fault == Some(WriteFault::BeforeFlip) {
            return false;
        }
        self.parity = !self.parity;
        true
    }
}

/// Status register and program counter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControllerState {
    sr: Duplicated<Phase>,
    pc: Duplicated<u64>,
}

impl Default for ControllerState {
    fn default() -> Self {
        Self {
            sr: Duplicated::new(Phase::Idle),
            pc: Duplicated::new(0),
        }
    }
}

impl ControllerState {
    pub fn phase(&self) -> Phase {
        self.sr.get()
    }

    pub fn pc(&self) -> u64 {
        self.pc.get()
    }

    /// Both registers have a complete copy under their parity bit.
    pub fn readable(&self) -> bool {
        self.sr.readable() && self.pc.readable()
    }

    pub fn set_phase(&mut self, p: Phase, fault: Option<WriteFault>) -> bool {
        self.sr.write(p, fault)
    }

    pub fn set_pc(&mut self, pc: u64, fault: Option<WriteFault>) -> bool {
        self.pc.write(pc, fault)
    }

    /// Commit the instruction at the current PC.
    pub fn commit_instruction(&mut self, fault: Option<WriteFault>) -> bool {
        let next = self.pc() + 1;
        self.pc.write(next, fault)
    }
}

/// Per-packet storage with valid bits and a completed bit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketBuffer {
    data: Vec<u64>,
    valid: Vec<bool>,
    /// Every packet below this index is valid.
    first_missing: usize,
    completed: bool,
}

impl PacketBuffer {
    pub fn new(packets: usize) -> Self {
        Self {
            data: vec![0; packets],
            valid: vec![false; packets],
            first_missing: 0,
            completed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn next_missing(&self) -> Option<usize> {
        (self.first_missing < self.valid.len()).then_some(self.first_missing)
    }

    /// A packet that arrived whole: bytes first, then the valid bit.
    pub fn store(&mut self, i: usize, v: u64) {
        self.data[i] = v;
        self.valid[i] = true;
        while self.first_missing < self.valid.len() && self.valid[self.first_missing] {
            self.first_missing += 1;
        }
    }

    /// A packet cut off mid-way leaves junk and a clear valid bit.
    pub fn store_torn(&mut self, i: usize, junk: u64) {
        self.data[i] = junk;
        self.valid[i] = false;
        self.first_missing = self.first_missing.min(i);
    }

    /// Sets the completed bit if every packet is valid.
    pub fn mark_completed(&mut self) -> bool {
        self.completed = self.first_missing == self.valid.len();
        self.completed
    }

    pub fn is_completed(&self) -> bool {
        self.completed
    }

    pub fn is_valid(&self, i: usize) -> bool {
        self.valid[i]
    }

    /// Completed implies all valid.
    pub fn consistent(&self) -> bool {
        !self.completed || self.valid.iter().all(|&v| v)
    }

    pub fn values(&self) -> Option<&[u64]> {
        self.completed.then_some(&self.data[..])
    }
}

/// Radio link between the sensor and the accelerator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IoSpec {
    pub energy_per_bit: f64,
    pub bit_rate: f64,
    /// Bits per received element; one element per packet.
    pub rx_bits_per_element: u32,
}

impl Default for IoSpec {
    fn default() -> Self {
        Self {
            energy_per_bit: 158e-12,
            bit_rate: 1e6,
            rx_bits_per_element: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub energy_j: f64,
    pub latency_s: f64,
    /// Ciphertext-sized units encoded as one atomic step.
    pub units: u32,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        Self {
            energy_j: 60e-6,
            latency_s: 0.3e-3,
            units: 1,
        }
    }
}

/// Initial capacitor level when the request arrives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StartCharge {
    /// The device idled at `v_on` waiting for input.
    Full,
    /// Uniformly random level, drawn from the episode seed.
    Random,
}

/// Action indices at which power is forcibly cut, on top of natural
/// brown-outs. Every packet, register write, encode, restore, instruction
/// execution and commit is one action.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FaultPlan {
    points: VecDeque<u64>,
}

impl FaultPlan {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn at(mut points: Vec<u64>) -> Self {
        points.sort_unstable();
        points.dedup();
        Self {
            points: points.into(),
        }
    }

    /// `count` distinct random points below `actions`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, actions: u64, count: usize) -> Self {
        let pts = (0..count)
            .map(|_| rng.random_range(0..actions.max(1)))
            .collect();
        Self::at(pts)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Something the controller can drive through the compute phase.
pub trait Workload {
    fn name(&self) -> &str;
    fn instructions(&self) -> u64;
    /// Energy and cycle count of instruction `pc`, and how many instructions
    /// from `pc` on share them.
    fn cost(&self, pc: u64, em: &EnergyModel) -> (f64, u64);
    /// Execute `pc` in full, or cut short when `rng` is given.
    fn exec(&mut self, pc: u64, interrupt: Option<&mut ChaCha8Rng>) -> Result<(), RuntimeError>;
    fn power_loss(&mut self);
    fn restore(&mut self);
    /// Write the received elements into the arrays; cut short when `rng`
    /// is given.
    fn encode(
        &mut self,
        payload: &[u64],
        interrupt: Option<&mut ChaCha8Rng>,
    ) -> Result<(), RuntimeError>;
    /// Result words and their width in bits.
    fn output_shape(&self) -> (usize, u32);
    /// Sense one result word.
    fn read_output(&self, i: usize) -> Result<(u64, OpCounts), RuntimeError>;
}

/// Bit-level execution of a compiled program on a grid.
pub struct GridWorkload<'p> {
    prog: &'p Program,
    grid: ArrayGrid,
    costs: Vec<OpCounts>,
    x_names: Vec<String>,
    /// (output field index, lane) per result word.
    words: Vec<(usize, usize)>,
}

impl<'p> GridWorkload<'p> {
    /// Deploy `prog` with its model data preloaded; `x_names` are the inputs
    /// the encoder fills, in payload order.
    pub fn new(
        prog: &'p Program,
        preload: &BTreeMap<String, Vec<u64>>,
        x_names: Vec<String>,
    ) -> Result<Self, RuntimeError> {
        let mut grid = ArrayGrid::new();
        prog.load(&mut grid, preload)?;
        let mut counter = ArrayGrid::with_mode(DataMode::CountOnly);
        let costs = prog
            .cycles
            .iter()
            .map(|c| counter.exec_cycle(c))
            .collect::<Result<Vec<_>, _>>()?;
        for n in &x_names {
            prog.input(n)?;
        }
        let words = (0..prog.outputs.len())
            .flat_map(|f| (0..prog.layout.n).map(move |l| (f, l)))
            .collect();
        Ok(Self {
            prog,
            grid,
            costs,
            x_names,
            words,
        })
    }

    pub fn grid(&self) -> &ArrayGrid {
        &self.grid
    }

    pub fn program(&self) -> &Program {
        self.prog
    }
}

impl Workload for GridWorkload<'_> {
    fn name(&self) -> &str {
        &self.prog.name
    }

    fn instructions(&self) -> u64 {
        self.prog.cycles.len() as u64
    }

    fn cost(&self, pc: u64, em: &EnergyModel) -> (f64, u64) {
        (em.energy(&self.costs[pc as usize]), 1)
    }

    fn exec(&mut self, pc: u64, interrupt: Option<&mut ChaCha8Rng>) -> Result<(), RuntimeError> {
        let c = &self.prog.cycles[pc as usize];
        match interrupt {
            None => self.grid.exec_cycle(c)?,
            Some(rng) => self.grid.exec_cycle_interrupted(c, rng)?,
        };
        Ok(())
    }

    fn power_loss(&mut self) {
        self.grid.power_loss();
    }

    fn restore(&mut self) {
        self.grid.restore();
    }

    fn encode(
        &mut self,
        payload: &[u64],
        interrupt: Option<&mut ChaCha8Rng>,
    ) -> Result<(), RuntimeError> {
        if payload.len() != self.x_names.len() {
            return Err(RuntimeError::Config(format!(
                "payload has {} elements, program expects {}",
                payload.len(),
                self.x_names.len()
            )));
        }
        let mut m = BTreeMap::new();
        match interrupt {
            None => {
                for (n, &v) in self.x_names.iter().zip(payload) {
                    m.insert(n.clone(), vec![v]);
                }
            }
            Some(rng) => {
                // A prefix was written, then junk in the element in flight.
                let cut = rng.random_range(0..self.x_names.len());
                for (n, &v) in self.x_names.iter().zip(payload).take(cut) {
                    m.insert(n.clone(), vec![v]);
                }
                let lanes = self.prog.layout.n;
                m.insert(
                    self.x_names[cut].clone(),
                    (0..lanes).map(|_| rng.random()).collect(),
                );
            }
        }
        self.prog.load_inputs(&mut self.grid, &m)?;
        Ok(())
    }

    fn output_shape(&self) -> (usize, u32) {
        let bits = self
            .prog
            .outputs
            .iter()
            .map(|f| f.cols.len())
            .max()
            .unwrap_or(0);
        (self.words.len(), bits as u32)
    }

    fn read_output(&self, i: usize) -> Result<(u64, OpCounts), RuntimeError> {
        let (f, lane) = self.words[i];
        let cols = &self.prog.outputs[f].cols;
        let (ar, r) = self.prog.layout.lane_position(lane);
        Ok(self.grid.read_bits(ar, r, cols)?)
    }
}

/// Cost-only workload: a sequence of segments, each charging its average
/// instruction energy. No cell data is simulated.
#[derive(Debug, Clone)]
pub struct AnalyticWorkload {
    pub name: String,
    /// (first instruction, counts) per segment.
    segments: Vec<(u64, OpCounts)>,
    total: OpCounts,
    pub output_words: usize,
    pub output_bits: u32,
}

impl AnalyticWorkload {
    /// One segment over the whole program.
    pub fn uniform(name: &str, counts: OpCounts, output_words: usize, output_bits: u32) -> Self {
        Self::from_blocks(name, &[counts], 1, output_words, output_bits)
    }

    /// `blocks` (a per-block cost trace) played `repeat` times.
    pub fn from_blocks(
        name: &str,
        blocks: &[OpCounts],
        repeat: usize,
        output_words: usize,
        output_bits: u32,
    ) -> Self {
        let mut segments = Vec::with_capacity(blocks.len() * repeat);
        let mut total = OpCounts::default();
        for _ in 0..repeat {
            for b in blocks.iter().filter(|b| b.cycles > 0) {
                segments.push((total.cycles, *b));
                total += *b;
            }
        }
        Self {
            name: name.into(),
            segments,
            total,
            output_words,
            output_bits,
        }
    }

    pub fn counts(&self) -> OpCounts {
        self.total
    }
}

impl Workload for AnalyticWorkload {
    fn name(&self) -> &str {
        &self.name
    }

    fn instructions(&self) -> u64 {
        self.total.cycles
    }

    fn cost(&self, pc: u64, em: &EnergyModel) -> (f64, u64) {
        let i = self.segments.partition_point(|s| s.0 <= pc) - 1;
        let (start, c) = self.segments[i];
        (em.energy(&c) / c.cycles as f64, start + c.cycles - pc)
    }

    fn exec(&mut self, _: u64, _: Option<&mut ChaCha8Rng>) -> Result<(), RuntimeError> {
        Ok(())
    }

    fn power_loss(&mut self) {}

    fn restore(&mut self) {}

    fn encode(&mut self, _: &[u64], _: Option<&mut ChaCha8Rng>) -> Result<(), RuntimeError> {
        Ok(())
    }

    fn output_shape(&self) -> (usize, u32) {
        (self.output_words, self.output_bits)
    }

    fn read_output(&self, _: usize) -> Result<(u64, OpCounts), RuntimeError> {
        Ok((
            0,
            OpCounts {
                read_bits: self.output_bits as u64,
                ..OpCounts::default()
            },
        ))
    }
}

/// Everything an episode needs besides the workload.
#[derive(Debug, Clone)]
pub struct EpisodeConfig {
    pub energy: EnergyModel,
    pub harvester: HarvesterConfig,
    pub io: IoSpec,
    pub encoder: EncoderSpec,
    pub start: StartCharge,
    pub seed: u64,
}

impl EpisodeConfig {
    pub fn for_profile(name: &str, power: f64, seed: u64) -> Result<Self, RuntimeError> {
        let unknown = || RuntimeError::Config(format!("unknown profile {name:?}"));
        Ok(Self {
            energy: EnergyModel::by_name(name).ok_or_else(unknown)?,
            harvester: HarvesterConfig::for_profile(name, power).ok_or_else(unknown)?,
            io: IoSpec::default(),
            encoder: EncoderSpec::default(),
            start: StartCharge::Full,
            seed,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub workload: String,
    pub profile: String,
    pub power_w: f64,
    pub ledger: EnergyLedger,
    pub restarts: u64,
    /// Time spent off, recharging.
    pub charge_s: f64,
    /// Energy taken out of the capacitor.
    pub drawn_j: f64,
    /// Charge lost to forced power cuts.
    pub leaked_j: f64,
    /// Harvested energy refused by a full capacitor.
    pub spilled_j: f64,
    pub actions: u64,
    /// Instructions executed again after having completed before a restart.
    pub reexecuted: u64,
    pub max_reexec_per_restart: u64,
    pub rx_retries: u64,
    pub tx_retries: u64,
    pub encode_attempts: u64,
    /// Result words as delivered to the sensor, little-endian.
    #[serde(skip)]
    pub transmitted: Vec<u8>,
    /// The controller registers and packet buffers stayed readable and
    /// consistent at every fault.
    pub parity_safe: bool,
}

impl RunReport {
    pub fn total_latency_s(&self) -> f64 {
        self.ledger.total_latency() + self.charge_s
    }

    pub fn total_energy_j(&self) -> f64 {
        self.ledger.total_energy()
    }

    fn pct(x: f64, of: f64) -> f64 {
        if of > 0.0 {
            100.0 * x / of
        } else {
            0.0
        }
    }

    pub fn dead_pct(&self) -> f64 {
        Self::pct(self.ledger.dead_j, self.ledger.compute_j)
    }

    pub fn restore_pct(&self) -> f64 {
        Self::pct(self.ledger.restore_j, self.ledger.compute_j)
    }

    pub fn backup_pct(&self) -> f64 {
        Self::pct(self.ledger.backup_j, self.ledger.compute_j)
    }

    pub fn dead_lat_pct(&self) -> f64 {
        Self::pct(self.ledger.dead_s, self.ledger.compute_s)
    }

    pub fn restore_lat_pct(&self) -> f64 {
        Self::pct(self.ledger.restore_s, self.ledger.compute_s)
    }
}

enum Attempt {
    Done,
    Failed { energy: f64, time: f64, ratio: f64 },
}

struct Sim<'a, W: Workload> {
    w: &'a mut W,
    cfg: &'a EpisodeConfig,
    u: f64,
    u_max: f64,
    tau: f64,
    rng: ChaCha8Rng,
    faults: FaultPlan,
    ctl: ControllerState,
    rx: PacketBuffer,
    tx: PacketBuffer,
    delivered: Vec<Option<u64>>,
    highest_done: Option<u64>,
    reexec_this_cycle: u64,
    r: RunReport,
}

impl<W: Workload> Sim<'_, W> {
    fn eta(&self) -> f64 {
        self.cfg.harvester.converter_efficiency
    }

    fn power(&self) -> f64 {
        self.cfg.harvester.power
    }

    fn check_fits(&self, phase: Phase, e: f64, t: f64) -> Result<(), RuntimeError> {
        let need = e / self.eta() - self.power() * t;
        if need > self.u_max {
            return Err(RuntimeError::Livelock {
                phase,
                need_j: need,
                have_j: self.u_max,
            });
        }
        Ok(())
    }

    fn harvest(&mut self, to: f64) {
        if to > self.u_max {
            self.r.spilled_j += to - self.u_max;
            self.u = self.u_max;
        } else {
            self.u = to;
        }
    }

    /// One action of energy `e` (ledger units) and duration `t`.
    fn attempt(&mut self, phase: Phase, e: f64, t: f64) -> Result<Attempt, RuntimeError> {
        self.check_fits(phase, e, t)?;
        let idx = self.r.actions;
        self.r.actions += 1;
        let eta = self.eta();
        let p = self.power();
        if self.faults.points.front() == Some(&idx) {
            self.faults.points.pop_front();
            let ratio: f64 = self.rng.random();
            let avail = self.u + p * t * ratio;
            let draw = (ratio * e / eta).min(avail);
            self.r.drawn_j += draw;
            self.r.leaked_j += avail - draw;
            self.u = 0.0;
            return Ok(Attempt::Failed {
                energy: draw * eta,
                time: t * ratio,
                ratio,
            });
        }
        let avail = self.u + p * t;
        if avail >= e / eta {
            self.r.drawn_j += e / eta;
            self.harvest(avail - e / eta);
            Ok(Attempt::Done)
        } else {
            let ratio = avail * eta / e;
            self.r.drawn_j += avail;
            self.u = 0.0;
            Ok(Attempt::Failed {
                energy: avail * eta,
                time: t * ratio,
                ratio,
            })
        }
    }

    fn dead(&mut self, e: f64, t: f64) {
        self.r.ledger.dead_j += e;
        self.r.ledger.dead_s += t;
    }

    fn audit(&mut self) {
        if !(self.ctl.readable() && self.rx.consistent() && self.tx.consistent()) {
            self.r.parity_safe = false;
        }
    }

    /// Off until `v_on`, then reactivate the arrays.
    fn power_cycle(&mut self) -> Result<(), RuntimeError> {
        self.audit();
        loop {
            self.w.power_loss();
            self.r.charge_s += (self.u_max - self.u) / self.power();
            self.u = self.u_max;
            self.r.restarts += 1;
            self.r.ledger.restarts += 1;
            self.reexec_this_cycle = 0;
            let counts = EnergyModel::restore_counts();
            let (e, t) = (
                self.cfg.energy.energy(&counts),
                counts.cycles as f64 * self.tau,
            );
            match self.attempt(Phase::Idle, e, t)? {
                Attempt::Done => {
                    self.w.restore();
                    self.r.ledger.restore_j += e;
                    self.r.ledger.restore_s += t;
                    return Ok(());
                }
                Attempt::Failed { energy, time, .. } => {
                    self.r.ledger.restore_j += energy;
                    self.r.ledger.restore_s += time;
                }
            }
        }
    }

    fn fault_kind(&mut self, ratio: f64) -> WriteFault {
        if ratio < 0.5 {
            WriteFault::Torn
        } else {
            WriteFault::BeforeFlip
        }
    }

    /// Parity-protected register update; returns false after a power cycle.
    fn write_reg(
        &mut self,
        phase: Phase,
        f: impl Fn(&mut ControllerState, Option<WriteFault>) -> bool,
    ) -> Result<bool, RuntimeError> {
        let e = self.cfg.energy.backup_energy_per_commit();
        match self.attempt(phase, e, 0.0)? {
            Attempt::Done => {
                f(&mut self.ctl, None);
                self.r.ledger.backup_j += e;
                Ok(true)
            }
            Attempt::Failed { energy, ratio, .. } => {
                let k = self.fault_kind(ratio);
                f(&mut self.ctl, Some(k));
                self.dead(energy, 0.0);
                self.power_cycle()?;
                Ok(false)
            }
        }
    }

    fn receive(&mut self, payload: &[u64]) -> Result<bool, RuntimeError> {
        let bits = self.cfg.io.rx_bits_per_element as f64;
        let e = bits * self.cfg.io.energy_per_bit;
        let t = bits / self.cfg.io.bit_rate;
        while let Some(i) = self.rx.next_missing() {
            match self.attempt(Phase::Receive, e, t)? {
                Attempt::Done => {
                    self.rx.store(i, payload[i]);
                    self.r.ledger.io_j += e;
                    self.r.ledger.io_s += t;
                }
                Attempt::Failed { energy, time, .. } => {
                    let junk = self.rng.random();
                    self.rx.store_torn(i, junk);
                    self.r.rx_retries += 1;
                    self.dead(energy, time);
                    self.power_cycle()?;
                    return Ok(false);
                }
            }
        }
        self.rx.mark_completed();
        self.write_reg(Phase::Receive, |c, f| c.set_phase(Phase::Encode, f))
    }

    fn encode(&mut self) -> Result<bool, RuntimeError> {
        let units = self.cfg.encoder.units as f64;
        let (e, t) = (
            self.cfg.encoder.energy_j * units,
            self.cfg.encoder.latency_s * units,
        );
        let payload = self
            .rx
            .values()
            .expect("encoding starts after the completed bit")
            .to_vec();
        self.r.encode_attempts += 1;
        match self.attempt(Phase::Encode, e, t)? {
            Attempt::Done => {
                self.w.encode(&payload, None)?;
                self.r.ledger.encode_j += e;
                self.r.ledger.encode_s += t;
            }
            Attempt::Failed { energy, time, .. } => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.rng.random());
                self.w.encode(&payload, Some(&mut rng))?;
                self.dead(energy, time);
                self.power_cycle()?;
                return Ok(false);
            }
        }
        if !self.write_reg(Phase::Encode, |c, f| c.set_pc(0, f))? {
            return Ok(false);
        }
        self.write_reg(Phase::Encode, |c, f| c.set_phase(Phase::Compute, f))
    }

    fn note_exec(&mut self, pc: u64, e: f64) {
        let again = self.highest_done.is_some_and(|h| pc <= h);
        if again {
            self.r.reexecuted += 1;
            self.reexec_this_cycle += 1;
            self.r.max_reexec_per_restart =
                self.r.max_reexec_per_restart.max(self.reexec_this_cycle);
            self.dead(e, self.tau);
        } else {
            self.r.ledger.compute_j += e;
            self.r.ledger.compute_s += self.tau;
            self.highest_done = Some(pc);
        }
    }

    fn compute(&mut self) -> Result<bool, RuntimeError> {
        let len = self.w.instructions();
        let eb = self.cfg.energy.backup_energy_per_commit();
        loop {
            let pc = self.ctl.pc();
            if pc >= len {
                break;
            }
            let (ei, cycles) = self.w.cost(pc, &self.cfg.energy);
            let t = self.tau;
            debug_assert!(cycles >= 1);
            // Run of identical instructions that provably all complete.
            let d = (ei + eb) / self.eta() - self.power() * t;
            let mut k = cycles.min(len - pc);
            if d > 0.0 {
                k = k.min((self.u / d).floor() as u64);
            }
            if let Some(&f) = self.faults.points.front() {
                k = k.min(f.saturating_sub(self.r.actions) / 2);
            }
            // Leave the last instruction of the run to the checked path.
            k = k.saturating_sub(1);
            if k > 0 {
                self.batch(pc, k, ei, eb, d)?;
                continue;
            }
            self.check_fits(Phase::Compute, ei + eb, t)?;
            match self.attempt(Phase::Compute, ei, t)? {
                Attempt::Done => {
                    self.w.exec(pc, None)?;
                    self.note_exec(pc, ei);
                }
                Attempt::Failed { energy, time, .. } => {
                    let mut rng = ChaCha8Rng::seed_from_u64(self.rng.random());
                    self.w.exec(pc, Some(&mut rng))?;
                    self.dead(energy, time);
                    self.power_cycle()?;
                    continue;
                }
            }
            match self.attempt(Phase::Compute, eb, 0.0)? {
                Attempt::Done => {
                    self.ctl.commit_instruction(None);
                    self.r.ledger.backup_j += eb;
                }
                Attempt::Failed { energy, ratio, .. } => {
                    let k = self.fault_kind(ratio);
                    self.ctl.commit_instruction(Some(k));
                    self.dead(energy, 0.0);
                    self.power_cycle()?;
                }
            }
        }
        self.write_reg(Phase::Compute, |c, f| c.set_phase(Phase::Transmit, f))
    }

    /// `k` instructions that all complete with their commits. Only the
    /// first can be a re-execution.
    fn batch(&mut self, pc: u64, k: u64, ei: f64, eb: f64, d: f64) -> Result<(), RuntimeError> {
        for i in 0..k {
            self.w.exec(pc + i, None)?;
        }
        self.note_exec(pc, ei);
        let fresh = (k - 1) as f64;
        self.r.ledger.compute_j += fresh * ei;
        self.r.ledger.compute_s += fresh * self.tau;
        self.highest_done = Some(pc + k - 1);
        self.r.ledger.backup_j += k as f64 * eb;
        self.r.drawn_j += k as f64 * (ei + eb) / self.eta();
        let to = self.u - k as f64 * d;
        self.harvest(to.max(0.0));
        self.r.actions += 2 * k;
        self.ctl.set_pc(pc + k, None);
        Ok(())
    }

    fn transmit(&mut self) -> Result<bool, RuntimeError> {
        let (_, bits) = self.w.output_shape();
        let epb = self.cfg.io.energy_per_bit;
        let t = bits as f64 / self.cfg.io.bit_rate;
        while let Some(i) = self.tx.next_missing() {
            let (v, rc) = self.w.read_output(i)?;
            let e = bits as f64 * epb + self.cfg.energy.energy(&rc);
            match self.attempt(Phase::Transmit, e, t)? {
                Attempt::Done => {
                    self.delivered[i] = Some(v);
                    self.tx.store(i, v);
                    self.r.ledger.io_j += e;
                    self.r.ledger.io_s += t;
                }
                Attempt::Failed { energy, time, .. } => {
                    self.r.tx_retries += 1;
                    self.dead(energy, time);
                    self.power_cycle()?;
                    return Ok(false);
                }
            }
        }
        self.tx.mark_completed();
        self.write_reg(Phase::Transmit, |c, f| c.set_phase(Phase::Idle, f))
    }
}

/// Run one inference: receive `payload`, encode, compute, transmit.
pub fn run_episode<W: Workload>(
    w: &mut W,
    payload: &[u64],
    cfg: &EpisodeConfig,
    faults: FaultPlan,
) -> Result<RunReport, RuntimeError> {
    cfg.harvester.validate()?;
    let u_max = cfg.harvester.usable_energy();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let u = match cfg.start {
        StartCharge::Full => u_max,
        StartCharge::Random => u_max * rng.random::<f64>(),
    };
    let (words, bits) = w.output_shape();
    let report = RunReport {
        workload: w.name().to_string(),
        profile: cfg.energy.mtj.name.to_string(),
        power_w: cfg.harvester.power,
        ledger: EnergyLedger::default(),
        restarts: 0,
        charge_s: 0.0,
        drawn_j: 0.0,
        leaked_j: 0.0,
        spilled_j: 0.0,
        actions: 0,
        reexecuted: 0,
        max_reexec_per_restart: 0,
        rx_retries: 0,
        tx_retries: 0,
        encode_attempts: 0,
        transmitted: vec![],
        parity_safe: true,
    };
    let mut sim = Sim {
        w,
        cfg,
        u,
        u_max,
        tau: 1.0 / cfg.harvester.clock_hz,
        rng,
        faults,
        ctl: ControllerState::default(),
        rx: PacketBuffer::new(payload.len()),
        tx: PacketBuffer::new(words),
        delivered: vec![None; words],
        highest_done: None,
        reexec_this_cycle: 0,
        r: report,
    };
    // The request arrives while idle.
    while !sim.write_reg(Phase::Idle, |c, f| c.set_phase(Phase::Receive, f))? {}
    loop {
        match sim.ctl.phase() {
            Phase::Idle => break,
            Phase::Receive => sim.receive(payload)?,
            Phase::Encode => sim.encode()?,
            Phase::Compute => sim.compute()?,
            Phase::Transmit => sim.transmit()?,
        };
    }
    sim.audit();
    let nbytes = (bits as usize).div_ceil(8);
    let mut out = Vec::with_capacity(words * nbytes);
    for v in &sim.delivered {
        let v = v.expect("every result word is delivered before Idle");
        out.extend_from_slice(&v.to_le_bytes()[..nbytes]);
    }
    sim.r.transmitted = out;
    Ok(sim.r)
}

/// Result of replaying one deployment under many fault schedules.
#[derive(Debug, Clone, Serialize)]
pub struct FuzzOutcome {
    pub schedules: usize,
    /// Runs whose final grid snapshot and transmitted bytes equal the
    /// uninterrupted run.
    pub consistent: usize,
    pub restarts: u64,
    pub max_reexec_per_restart: u64,
    pub parity_safe: bool,
}

impl FuzzOutcome {
    pub fn passed(&self) -> bool {
        self.consistent == self.schedules && self.max_reexec_per_restart <= 1 && self.parity_safe
    }
}

/// Run `prog` once without faults, then under `schedules` random fault
/// plans (a few also hit the first and last actions), comparing every
/// final snapshot and transmission against the clean run.
pub fn interrupt_fuzz(
    prog: &Program,
    preload: &BTreeMap<String, Vec<u64>>,
    x_names: &[String],
    payload: &[u64],
    cfg: &EpisodeConfig,
    schedules: usize,
) -> Result<FuzzOutcome, RuntimeError> {
    let mut w = GridWorkload::new(prog, preload, x_names.to_vec())?;
    let clean = run_episode(&mut w, payload, cfg, FaultPlan::none())?;
    let want = w.grid().snapshot();
    let runs: Vec<(bool, RunReport)> = (0..schedules)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(
                cfg.seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
            );
            let faults = rng.random_range(1..=8);
            let mut plan = FaultPlan::random(&mut rng, clean.actions, faults);
            if i % 4 == 0 {
                let mut pts: Vec<u64> = plan.points.iter().copied().collect();
                pts.extend([0, 1, clean.actions - 1]);
                plan = FaultPlan::at(pts);
            }
            let mut c = cfg.clone();
            c.seed = rng.random();
            let mut w = GridWorkload::new(prog, preload, x_names.to_vec())?;
            let r = run_episode(&mut w, payload, &c, plan)?;
            let same = w.grid().snapshot() == want && r.transmitted == clean.transmitted;
            Ok((same, r))
        })
        .collect::<Result<_, RuntimeError>>()?;
    Ok(FuzzOutcome {
        schedules,
        consistent: runs.iter().filter(|r| r.0).count(),
        restarts: runs.iter().map(|r| r.1.restarts).sum(),
        max_reexec_per_restart: runs
            .iter()
            .map(|r| r.1.max_reexec_per_restart)
            .max()
            .unwrap_or(0),
        parity_safe: runs.iter().all(|r| r.1.parity_safe),
    })
}

/// One CSV row of a power sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub power_w: f64,
    pub profile: String,
    pub latency_s: f64,
    pub energy_j: f64,
    pub restarts: u64,
    pub dead_pct: f64,
    pub restore_pct: f64,
    pub backup_pct: f64,
    pub dead_lat_pct: f64,
    pub restore_lat_pct: f64,
}

impl From<&RunReport> for SweepRow {
    fn from(r: &RunReport) -> Self {
        Self {
            power_w: r.power_w,
            profile: r.profile.clone(),
            latency_s: r.total_latency_s(),
            energy_j: r.total_energy_j(),
            restarts: r.restarts,
            dead_pct: r.dead_pct(),
            restore_pct: r.restore_pct(),
            backup_pct: r.backup_pct(),
            dead_lat_pct: r.dead_lat_pct(),
            restore_lat_pct: r.restore_lat_pct(),
        }
    }
}

/// Cell seed: stable under reordering of the sweep grid.
pub fn cell_seed(seed: u64, profile: &str, power: f64) -> u64 {
    let mut h = seed ^ power.to_bits().rotate_left(17);
    for b in profile.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// Per-cell settings applied on top of a profile's defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct CellOverrides {
    pub io: IoSpec,
    pub encoder: EncoderSpec,
    pub start: StartCharge,
    pub capacitance: Option<f64>,
    pub converter_efficiency: Option<f64>,
}

impl Default for CellOverrides {
    fn default() -> Self {
        Self {
            io: IoSpec::default(),
            encoder: EncoderSpec::default(),
            start: StartCharge::Full,
            capacitance: None,
            converter_efficiency: None,
        }
    }
}

impl CellOverrides {
    pub fn episode(
        &self,
        profile: &str,
        power: f64,
        seed: u64,
    ) -> Result<EpisodeConfig, RuntimeError> {
        let mut cfg = EpisodeConfig::for_profile(profile, power, seed)?;
        cfg.io = self.io.clone();
        cfg.encoder = self.encoder.clone();
        cfg.start = self.start;
        if let Some(c) = self.capacitance {
            cfg.harvester.capacitance = c;
        }
        if let Some(e) = self.converter_efficiency {
            cfg.harvester.converter_efficiency = e;
        }
        cfg.harvester.validate()?;
        Ok(cfg)
    }
}

/// Episodes of an aggregate workload over every (profile, power) pair, in
/// parallel; rows come back in profile-major, power-minor order.
pub fn sweep(
    w: &AnalyticWorkload,
    payload_len: usize,
    profiles: &[String],
    powers: &[f64],
    seed: u64,
    opts: &CellOverrides,
) -> Result<Vec<RunReport>, RuntimeError> {
    let cells: Vec<(String, f64)> = profiles
        .iter()
        .flat_map(|p| powers.iter().map(move |&w| (p.clone(), w)))
        .collect();
    let payload = vec![0u64; payload_len];
    cells
        .par_iter()
        .map(|(p, power)| {
            let cfg = opts.episode(p, *power, cell_seed(seed, p, *power))?;
            let mut wl = w.clone();
            run_episode(&mut wl, &payload, &cfg, FaultPlan::none())
        })
        .collect()
}

pub const SWEEP_HEADER: &str =
    "power_w,profile,latency_s,energy_j,restarts,dead_pct,restore_pct,backup_pct,dead_lat_pct,restore_lat_pct";

/// Bit-level counterpart of [`sweep`]: the compiled program runs on a
/// simulated grid in every cell.
#[allow(clippy::too_many_arguments)]
pub fn grid_sweep(
    prog: &Program,
    preload: &BTreeMap<String, Vec<u64>>,
    x_names: &[String],
    payload: &[u64],
    profiles: &[String],
    powers: &[f64],
    seed: u64,
    opts: &CellOverrides,
) -> Result<Vec<RunReport>, RuntimeError> {
    let cells: Vec<(String, f64)> = profiles
        .iter()
        .flat_map(|p| powers.iter().map(move |&w| (p.clone(), w)))
        .collect();
    cells
        .par_iter()
        .map(|(p, power)| {
            let cfg = opts.episode(p, *power, cell_seed(seed, p, *power))?;
            let mut w = GridWorkload::new(prog, preload, x_names.to_vec())?;
            run_episode(&mut w, payload, &cfg, FaultPlan::none())
        })
        .collect()
}

/// Serialize rows as CSV with a header taken from the field names.
pub fn write_rows_csv<W: std::io::Write, R: Serialize>(
    out: W,
    rows: &[R],
) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(out);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn analytic(cycles: u64, e_per_cycle_lines: u64) -> AnalyticWorkload {
        let counts = OpCounts {
            cycles,
            slots: cycles,
            gate_lines: [0, 0, cycles * e_per_cycle_lines, 0, 0],
            ..OpCounts::default()
        };
        AnalyticWorkload::uniform("synthetic", counts, 4, 36)
    }

    #[test]
    fn segments_charge_their_own_energy() {
        let a = OpCounts {
            cycles: 10,
            slots: 10,
            gate_lines: [0, 0, 1000, 0, 0],
            ..OpCounts::default()
        };
        let b = OpCounts {
            cycles: 5,
            slots: 15,
            gate_lines: [0, 0, 5000, 0, 0],
            ..OpCounts::default()
        };
        let w = AnalyticWorkload::from_blocks("t", &[a, b], 2, 1, 8);
        let em = EnergyModel::modern();
        assert_eq!(w.instructions(), 30);
        assert_eq!(w.cost(0, &em).1, 10);
        assert_eq!(w.cost(12, &em).1, 3);
        assert_eq!(w.cost(15, &em).1, 10);
        assert!((w.cost(27, &em).0 - em.energy(&b) / 5.0).abs() < 1e-24);
        let cfg = EpisodeConfig::for_profile("modern", 1.0, 0).unwrap();
        let mut w = w;
        let r = run_episode(&mut w, &[0], &cfg, FaultPlan::none()).unwrap();
        assert!((r.ledger.compute_j / (2.0 * (em.energy(&a) + em.energy(&b))) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn usable_energy_per_charge() {
        assert!((HarvesterConfig::modern(1e-3).usable_energy() - 165e-6).abs() < 1e-12);
        assert!((HarvesterConfig::projected(1e-3).usable_energy() - 160.3125e-6).abs() < 1e-12);
    }

    #[test]
    fn invalid_harvester_rejected() {
        let mut h = HarvesterConfig::modern(1e-3);
        h.v_off = 0.8;
        assert!(h.validate().is_err());
        h = HarvesterConfig::modern(0.0);
        assert!(h.validate().is_err());
    }

    #[test]
    fn high_power_runs_without_restarts() {
        let mut w = analytic(10_000, 100);
        let cfg = EpisodeConfig::for_profile("modern", 10.0, 1).unwrap();
        let r = run_episode(&mut w, &[1, 2, 3], &cfg, FaultPlan::none()).unwrap();
        assert_eq!(r.restarts, 0);
        assert_eq!(r.ledger.dead_j, 0.0);
        assert_eq!(r.ledger.restore_j, 0.0);
        let want = cfg.energy.energy(&w.counts());
        assert!((r.ledger.compute_j / want - 1.0).abs() < 1e-9);
        assert!((r.ledger.encode_j - 60e-6).abs() < 1e-15);
    }

    #[test]
    fn drawn_energy_matches_ledger() {
        for eta in [1.0, 0.7] {
            let mut w = analytic(2_000_000, 2000);
            let mut cfg = EpisodeConfig::for_profile("modern", 2e-3, 3).unwrap();
            cfg.harvester.converter_efficiency = eta;
            cfg.start = StartCharge::Random;
            let r = run_episode(&mut w, &[0; 16], &cfg, FaultPlan::none()).unwrap();
            assert!(r.restarts > 0);
            assert!((r.drawn_j / (r.total_energy_j() / eta) - 1.0).abs() < 1e-9);
            assert_eq!(r.leaked_j, 0.0);
        }
    }

    #[test]
    fn backup_is_per_instruction_and_restart_independent() {
        let mut w = analytic(2_000_000, 2000);
        let a = run_episode(
            &mut w,
            &[0; 4],
            &EpisodeConfig::for_profile("modern", 2e-3, 1).unwrap(),
            FaultPlan::none(),
        )
        .unwrap();
        let b = run_episode(
            &mut w,
            &[0; 4],
            &EpisodeConfig::for_profile("modern", 1.0, 1).unwrap(),
            FaultPlan::none(),
        )
        .unwrap();
        assert!(a.restarts > b.restarts);
        let per = EnergyModel::modern().backup_energy_per_commit();
        // Commits plus five phase-register writes and the PC reset.
        let writes = w.counts().cycles as f64 + 6.0;
        for r in [&a, &b] {
            assert!((r.ledger.backup_j / (writes * per) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn restore_energy_is_linear_in_arrays() {
        let em = EnergyModel::modern();
        let e = |n| em.energy(&EnergyModel::restore_counts_for(n));
        let base = e(0);
        assert!(((e(48) - base) / (e(24) - base) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn encode_livelock_detected() {
        let mut w = analytic(100, 10);
        let mut cfg = EpisodeConfig::for_profile("modern", 1e-3, 0).unwrap();
        cfg.encoder.energy_j = 200e-6;
        let err = run_episode(&mut w, &[0], &cfg, FaultPlan::none()).unwrap_err();
        assert!(matches!(
            err,
            RuntimeError::Livelock {
                phase: Phase::Encode,
                ..
            }
        ));
    }

    #[test]
    fn interrupted_encode_is_retried_once_and_charged_dead() {
        let mut w = analytic(100, 10);
        let mut cfg = EpisodeConfig::for_profile("modern", 1e-3, 0).unwrap();
        cfg.start = StartCharge::Random;
        for seed in 0..200 {
            cfg.seed = seed;
            let r = run_episode(&mut w, &[0; 8], &cfg, FaultPlan::none()).unwrap();
            assert!(r.encode_attempts <= 2);
            assert!((r.ledger.encode_j - 60e-6).abs() < 1e-15);
            if r.encode_attempts == 2 {
                assert!(r.ledger.dead_j > 0.0);
            }
        }
    }

    #[test]
    fn commit_fuzz_gives_unit_pc_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut c = ControllerState::default();
        let mut seen = vec![c.pc()];
        for _ in 0..10_000 {
            let fault = match rng.random_range(0..3) {
                0 => None,
                1 => Some(WriteFault::Torn),
                _ => Some(WriteFault::BeforeFlip),
            };
            let before = c.pc();
            let ok = c.commit_instruction(fault);
            assert!(c.readable());
            assert_eq!(c.pc(), if ok { before + 1 } else { before });
            seen.push(c.pc());
        }
        assert!(seen.windows(2).all(|w| w[1] == w[0] || w[1] == w[0] + 1));
    }

    #[test]
    fn packet_buffer_protocol() {
        let mut b = PacketBuffer::new(3);
        b.store(0, 5);
        b.store_torn(1, 99);
        assert!(!b.mark_completed());
        assert_eq!(b.next_missing(), Some(1));
        b.store(1, 6);
        b.store(2, 7);
        assert!(b.mark_completed() && b.consistent());
        assert_eq!(b.values().unwrap(), &[5, 6, 7]);
    }

    #[test]
    fn forced_tx_fault_retransmits_one_packet() {
        let mut w = analytic(1000, 10);
        let cfg = EpisodeConfig::for_profile("projected", 1e-3, 0).unwrap();
        let clean = run_episode(&mut w, &[0; 2], &cfg, FaultPlan::none()).unwrap();
        // Last action before the final register write is the last packet.
        let last_packet = clean.actions - 2;
        let r = run_episode(&mut w, &[0; 2], &cfg, FaultPlan::at(vec![last_packet])).unwrap();
        assert_eq!(r.tx_retries, 1);
        assert_eq!(r.restarts, 1);
        assert!(r.ledger.io_j == clean.ledger.io_j);
    }

    #[test]
    fn latency_falls_with_power_and_projected_is_faster() {
        let w = analytic(5_000_000, 3000);
        let powers = [2e-3, 5e-3, 20e-3, 100e-3];
        let rows = sweep(
            &w,
            64,
            &["modern".into(), "projected".into()],
            &powers,
            4,
            &CellOverrides::default(),
        )
        .unwrap();
        let (m, p) = rows.split_at(powers.len());
        for pair in m.windows(2).chain(p.windows(2)) {
            assert!(pair[1].total_latency_s() <= pair[0].total_latency_s());
            assert!(pair[1].restarts <= pair[0].restarts);
        }
        for (a, b) in m.iter().zip(p) {
            assert!(b.total_latency_s() < a.total_latency_s());
        }
    }

    #[test]
    fn sweep_is_deterministic_and_csv_has_header() {
        let w = analytic(1_000_000, 3000);
        let run = || {
            sweep(
                &w,
                8,
                &["modern".into()],
                &[2e-3, 20e-3],
                11,
                &CellOverrides::default(),
            )
            .unwrap()
        };
        let a: Vec<SweepRow> = run().iter().map(SweepRow::from).collect();
        let b: Vec<SweepRow> = run().iter().map(SweepRow::from).collect();
        assert_eq!(a, b);
        let mut buf = vec![];
        write_rows_csv(&mut buf, &a).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), SWEEP_HEADER);
        assert_eq!(text.lines().count(), 3);
    }
}
